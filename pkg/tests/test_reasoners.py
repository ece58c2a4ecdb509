import json

import pytest

from netslice import agent as ag
from netslice import monitoring as mon
from netslice import policy as pol
from netslice import reasoners as rs
from netslice.config import AgentSection, ReasonerSection
from netslice.errors import ConfigurationError


class FakeTransport:
    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = []

    def __call__(self, url, body, headers, timeout):
        self.calls.append((url, body, headers, timeout))
        reply = self.replies.pop(0) if self.replies else OSError("down")
        if isinstance(reply, Exception):
            raise reply
        return reply


CFG = rs.ExternalReasonerConfig("http://reasoner.test/v1", max_retries=2, max_request_chars=4000)


def test_scripted_reasoner_replays_then_finishes():
    r = rs.ScriptedReasoner(["a", "b"])
    assert [r(""), r(""), r("")] == ["a", "b", rs.SCRIPT_EXHAUSTED]
    assert ag.parse_reasoner_output(rs.SCRIPT_EXHAUSTED)[1].kind == "Finish"
    assert ag.parse_reasoner_output(rs.UNAVAILABLE)[1].kind == "Finish"


def test_preamble_ships_with_package():
    text = rs.load_preamble()
    assert "Thought:" in text and "Action:" in text


# -- heuristic rule table --------------------------------------------------

RULES = rs.HeuristicRules()


def test_rules_no_action_under_watermarks():
    out = rs.heuristic_decide(
        {"prb_utilization": 0.5, "qos_violations": {"eMBB": 0.0}, "upf_processing_delay": 1.0}, set(), RULES
    )
    assert ag.parse_reasoner_output(out)[1].kind == "Finish"


def test_rules_prb_rule_targets_most_violated_slice():
    out = rs.heuristic_decide(
        {"prb_utilization": 0.95, "qos_violations": {"eMBB": 3.0, "URLLC": 5.0}, "upf_processing_delay": 1.0},
        set(), RULES,
    )
    act = ag.parse_reasoner_output(out)[1]
    assert act.payload == "ApplyPolicy[PRB_reservation.slice=URLLC += 10%]"


def test_rules_ties_break_by_slice_id():
    assert rs.most_violated_slice({"eMBB": 2.0, "URLLC": 2.0}) == "URLLC"


def test_rules_bandwidth_rule():
    out = rs.heuristic_decide(
        {"prb_utilization": 0.2, "qos_violations": {"eMBB": 0.0}, "upf_processing_delay": 4.5}, set(), RULES
    )
    assert ag.parse_reasoner_output(out)[1].payload == "ApplyPolicy[Core_Bandwidth += 1 Gbps]"
    out = rs.heuristic_decide(
        {"prb_utilization": 0.2, "qos_violations": {}, "upf_processing_delay": 4.5}, {"Core_Bandwidth"}, RULES
    )
    assert ag.parse_reasoner_output(out)[1].kind == "Finish"


def test_rules_from_config():
    rules = rs.HeuristicRules.from_config(AgentSection(prb_high_watermark=0.5, bandwidth_step_gbps=2.0))
    assert rules.prb_high_watermark == 0.5 and rules.bandwidth_step_gbps == 2.0


def hot_store(prb=0.95, upf=4.0, tick=0):
    store = mon.MetricStore()
    store.write(tick, "prb_utilization", prb, cell="c0")
    store.write(tick, "qos_violations", 2, slice="eMBB")
    store.write(tick, "qos_violations", 1, slice="URLLC")
    store.write(tick, "upf_processing_delay", upf)
    return store


def drive(store, budget=12, tick=0):
    reg = ag.ToolRegistry()
    reg.register(ag.ToolDescriptor("db.query", "perception", "", ""), lambda t: store.query(t).render())
    applied = []

    def apply(text):
        applied.append(text)
        return ag.ApplyOutcome(f"d{len(applied):04d}", True, f"d{len(applied):04d} accepted")

    reg.register(ag.ToolDescriptor("policy.apply", "control", "", ""), apply)
    trace = ag.run_episode(rs.HeuristicReasoner(), reg, ag.ShortTermMemory(8), kpis={"tick": tick}, budget=budget)
    return trace, applied


def test_heuristic_both_watermarks_ran_before_cn():
    trace, applied = drive(hot_store())
    kinds = [s.action_kind for s in trace.steps]
    assert kinds == ["Query", "Query", "Query", "Apply", "Apply", "Finish"]
    assert applied == [
        "ApplyPolicy[PRB_reservation.slice=eMBB += 10%]",
        "ApplyPolicy[Core_Bandwidth += 1 Gbps]",
    ]


def test_heuristic_healthy_finishes_without_apply():
    trace, applied = drive(hot_store(prb=0.4, upf=1.0))
    assert applied == [] and trace.outcome == "finished"


def test_heuristic_reads_the_current_tick_only():
    store = hot_store(prb=0.95, upf=4.0, tick=0)
    store.write(1, "prb_utilization", 0.3, cell="c0")
    store.write(1, "qos_violations", 0, slice="eMBB")
    store.write(1, "upf_processing_delay", 1.0)
    _, applied = drive(store, tick=1)
    assert applied == []
    assert rs.kpi_queries(1)["prb_utilization"] == "GET prb_utilization RANGE 1 1 AGG max"


def test_heuristic_self_heals_missing_kpi():
    trace, applied = drive(mon.MetricStore(), budget=6)
    # missing KPIs are treated as not exceeding any watermark
    assert [s.action_kind for s in trace.steps] == ["Query", "Query", "Query", "Finish"]
    assert applied == []
    _, kpis, _ = rs.observed_kpis("## RECENT STEPS\nStep 0\nThought: t\nAction: Query[GET prb_utilization AGG max]\n"
                                  "Observation: max=none over 0 rows\n")
    assert kpis == {"prb_utilization": None}


def test_heuristic_is_deterministic():
    a, _ = drive(hot_store())
    b, _ = drive(hot_store())
    assert a.to_jsonl() == b.to_jsonl()


# -- external --------------------------------------------------------------


def test_external_config_requires_endpoint():
    with pytest.raises(ConfigurationError) as info:
        rs.ExternalReasonerConfig.from_section(ReasonerSection(), env={})
    assert info.value.key == "reasoner.endpoint"
    cfg = rs.ExternalReasonerConfig.from_section(ReasonerSection(), env={rs.ENDPOINT_ENV: "http://x"})
    assert cfg.endpoint == "http://x"
    with pytest.raises(ConfigurationError):
        rs.ExternalReasonerConfig("http://x", timeout=0)


def test_external_passes_text_through():
    line = "Thought: ok\nAction: Finish[done]"
    for reply in (line, json.dumps({"text": line})):
        t = FakeTransport([reply])
        assert rs.call_external(CFG, "ctx", t, sleep=lambda s: None, preamble="p", env={}) == line
        body = json.loads(t.calls[0][1])
        assert body == {"model": "external-llm", "preamble": "p", "context": "ctx", "temperature": 0.0}


def test_external_bearer_token():
    t = FakeTransport(["x"])
    rs.call_external(CFG, "ctx", t, sleep=lambda s: None, preamble="p", env={rs.KEY_ENV: "sekret"})
    assert t.calls[0][2]["Authorization"] == "Bearer sekret"


def test_external_retries_then_sentinel():
    t = FakeTransport([OSError("down"), TimeoutError("slow"), OSError("down"), "never reached"])
    waits = []
    out = rs.call_external(CFG, "ctx", t, sleep=waits.append, preamble="p", env={})
    assert out == rs.UNAVAILABLE
    assert len(t.calls) == 3
    assert waits == [0.5, 1.0]


def test_external_recovers_on_retry():
    t = FakeTransport([OSError("blip"), "Thought: a\nAction: Finish[b]"])
    out = rs.call_external(CFG, "ctx", t, sleep=lambda s: None, preamble="p", env={})
    assert out.endswith("Finish[b]") and len(t.calls) == 2


def test_external_request_size_capped():
    big = "\n".join(f"line {i} with \"quotes\" and unicode é" for i in range(5000))
    body = rs.build_request(CFG, big, "preamble")
    assert len(body.decode()) <= CFG.max_request_chars
    ctx = json.loads(body)["context"]
    assert ctx.startswith("line 0 ") and ctx.rstrip().endswith("é") and "[truncated]" in ctx
    small = rs.build_request(CFG, "short", "preamble")
    assert json.loads(small)["context"] == "short"


def test_external_reasoner_in_episode_never_crashes():
    t = FakeTransport([])
    r = rs.ExternalReasoner(CFG, t, sleep=lambda s: None)
    reg = ag.standard_registry(mon.MetricStore())
    trace = ag.run_episode(r, reg, ag.ShortTermMemory(4), budget=3)
    assert trace.outcome == "finished" and r.unavailable
    assert trace.steps[-1].action_payload == "reasoner unavailable"


def test_make_reasoner():
    assert isinstance(rs.make_reasoner("scripted", script=["x"]), rs.ScriptedReasoner)
    assert isinstance(rs.make_reasoner("heuristic", AgentSection()), rs.HeuristicReasoner)
    ext = rs.make_reasoner("external", reasoner_section=ReasonerSection(endpoint="http://e"), transport=FakeTransport([]))
    assert isinstance(ext, rs.ExternalReasoner)
    with pytest.raises(ConfigurationError):
        rs.make_reasoner("oracle")


def test_heuristic_against_orchestrator():
    from conftest import scenario
    from netslice.controllers import E2EHeuristic

    state = E2EHeuristic().allocate(scenario(20, 1)).state
    store = hot_store()
    orch = pol.PolicyOrchestrator(state)
    reg = ag.standard_registry(store, orch)
    trace = ag.run_episode(rs.HeuristicReasoner(), reg, ag.ShortTermMemory(8), kpis={"tick": 0})
    assert trace.final_directives == ["d0001", "d0002"]
