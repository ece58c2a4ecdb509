import json
import random

import pytest

from netslice import policy as pol
from netslice.config import PolicySection
from netslice.controllers import E2EHeuristic
from netslice.errors import DirectiveParseError
from conftest import scenario
from oracles import simulate_and_check

# -- grammar ---------------------------------------------------------------


def random_directive(rng, wild=False):
    param = rng.choice(sorted(pol.PARAMS))
    unit = rng.choice(pol.PARAMS[param])
    scope = []
    choices = {
        "cell": ["c0", "c1", "c2", "c3"] + (["c9"] if wild else []),
        "slice": ["eMBB", "URLLC"] + (["mMTC"] if wild else []),
        "tier": ["core", "aggregation"] + (["edge"] if wild else []),
        "link": ["a000-c000", "a002-c001", "e000-s000"] + (["zzz"] if wild else []),
        "node": ["s000", "s005", "s015"] + (["e000", "s999"] if wild else []),
    }
    for key in pol.SCOPE_KEYS[param]:
        if rng.random() < 0.4:
            scope.append((key, rng.choice(choices[key])))
    rng.shuffle(scope)
    if param == "PRB_reservation":
        value = rng.choice([0, 5, 10, 12.5, 20, 25, 40, 95])
    elif param == "Core_Bandwidth":
        value = rng.choice([0, 0.5, 1, 2, 3, 12]) if unit == "Gbps" else rng.choice([0, 100, 250.5, 1500, 3000])
    elif param == "CN_Compute":
        value = rng.choice([0, 5, 10, 40, 60.5, 120, 300])
    else:
        value = rng.choice([0, 1, 3, 10, 2.5, 40, 20000])
    return pol.PolicyDirective(param, rng.choice(pol.OPERATORS), float(value), unit, tuple(scope))


def test_literal_directives():
    d = pol.parse_directive("ApplyPolicy[PRB_reservation += 10%]")
    assert (d.parameter, d.operator, d.value, d.unit, d.scope) == ("PRB_reservation", "+=", 10.0, "%", ())
    d = pol.parse_directive("ApplyPolicy[Core_Bandwidth += 1 Gbps]")
    assert (d.parameter, d.operator, d.value, d.unit) == ("Core_Bandwidth", "+=", 1.0, "Gbps")
    assert pol.format_directive(d) == "ApplyPolicy[Core_Bandwidth += 1 Gbps]"


def test_scoped_directive():
    d = pol.parse_directive("ApplyPolicy[PRB_reservation.cell=c1.slice=eMBB -= 2.5%]")
    assert d.scope == (("cell", "c1"), ("slice", "eMBB"))
    assert d.value == 2.5 and d.operator == "-="


def test_directive_round_trip():
    rng = random.Random(123)
    for _ in range(1500):
        d = random_directive(rng, wild=True)
        text = pol.format_directive(d)
        back = pol.parse_directive(text)
        assert back == d
        assert pol.format_directive(back) == text


MALFORMED = [
    ("", 0),
    ("Apply[PRB_reservation += 10%]", 0),
    ("ApplyPolicy[Foo += 1%]", 12),
    ("ApplyPolicy[ += 1%]", 13),
    ("ApplyPolicy[PRB_reservation ** 10%]", 28),
    ("ApplyPolicy[PRB_reservation += %]", 31),
    ("ApplyPolicy[PRB_reservation += 1.2.3%]", 31),
    ("ApplyPolicy[PRB_reservation += .5%]", 31),
    ("ApplyPolicy[PRB_reservation += 10]", 33),
    ("ApplyPolicy[PRB_reservation += 10 Gbps]", 34),
    ("ApplyPolicy[Core_Bandwidth += 1 kbps]", 32),
    ("ApplyPolicy[Core_Bandwidth += 1 Gbps", 36),
    ("ApplyPolicy[Core_Bandwidth += 1 Gbps]]", 37),
    ("ApplyPolicy[Core_Bandwidth += 1 Gbps] now", 37),
    ("ApplyPolicy[PRB_reservation.node=s000 += 1%]", 28),
    ("ApplyPolicy[PRB_reservation.cell += 1%]", 32),
    ("ApplyPolicy[PRB_reservation.cell==c0 += 1%]", 32),
    ("ApplyPolicy[PRB_reservation.cell=$ += 1%]", 33),
    ("ApplyPolicy[PRB_reservation. += 1%]", 28),
    ("ApplyPolicy[Admission_Cap += -3 count]", 29),
]


@pytest.mark.parametrize("text, pos", MALFORMED)
def test_malformed_directives_report_position(text, pos):
    with pytest.raises(DirectiveParseError) as info:
        pol.parse_directive(text)
    assert info.value.position == pos


def test_unit_must_match_parameter():
    with pytest.raises(ValueError):
        pol.PolicyDirective("CN_Compute", "+=", 1.0, "%")


# -- validation ------------------------------------------------------------


@pytest.fixture
def live():
    return E2EHeuristic().allocate(scenario(30, 5)).state


def test_zero_increment_accepted(live):
    for text in (
        "ApplyPolicy[PRB_reservation += 0%]", "ApplyPolicy[Core_Bandwidth += 0 Gbps]",
        "ApplyPolicy[CN_Compute += 0 units]", "ApplyPolicy[Admission_Cap += 0 count]",
    ):
        assert pol.validate(pol.parse_directive(text), pol.ConstraintTemplate(), live)


def test_range_rejection_at_ninety_five_percent(live):
    live.cells["c0"].prb_reservation = {"eMBB": 0.95}
    d = pol.parse_directive("ApplyPolicy[PRB_reservation.cell=c0.slice=eMBB += 10%]")
    assert pol.validate(d, pol.ConstraintTemplate(), live) == pol.Verdict(False, "range")


def test_reservation_sum_capped(live):
    live.cells["c0"].prb_reservation = {"eMBB": 0.9}
    d = pol.parse_directive("ApplyPolicy[PRB_reservation.cell=c0.slice=URLLC = 15%]")
    assert pol.validate(d, pol.ConstraintTemplate(), live).reason == "range"


def test_scope_and_capacity_rejections(live):
    t = pol.ConstraintTemplate()
    assert pol.validate(pol.parse_directive("ApplyPolicy[CN_Compute.node=e000 += 1 units]"), t, live).reason == "scope"
    assert pol.validate(pol.parse_directive("ApplyPolicy[Core_Bandwidth.tier=spine += 1 Gbps]"), t, live).reason == "scope"
    busy = max(live.topology.servers, key=lambda s: live.topology.nodes[s].compute_used)
    used = live.topology.nodes[busy].compute_used
    assert used > 10
    d = pol.parse_directive(f"ApplyPolicy[CN_Compute.node={busy} -= {int(used) - 9} units]")
    assert pol.validate(d, t, live).reason in ("capacity", "range")


def test_template_from_config():
    t = pol.ConstraintTemplate.from_config(PolicySection(core_bandwidth_max_delta_gbps=3.0))
    assert t.core_bandwidth_max_delta == 3e9
    with pytest.raises(ValueError):
        pol.ConstraintTemplate(prb_reservation_range=(50.0, 10.0))


def test_verdicts_match_simulate_and_check():
    rng = random.Random(2024)
    checked = 0
    for seed in range(40):
        state = E2EHeuristic().allocate(scenario(rng.choice([10, 30, 50]), seed)).state
        template = pol.ConstraintTemplate(max_directives=rng.choice([2, 5]))
        orch = pol.PolicyOrchestrator(state, template)
        for i in range(30):
            if i % 10 == 0:
                orch.begin_episode(f"ep{seed}-{i}")
            d = random_directive(rng, wild=True)
            want = simulate_and_check(d, template, state, dict(orch.episode.start), orch.episode.accepted)
            rec = orch.dispatch(d)
            assert rec.reason == want, (pol.format_directive(d), rec.reason, want)
            assert rec.accepted == (want is None)
            if not rec.accepted:
                assert rec.pre_digest == rec.post_digest
            checked += 1
    assert checked >= 1000


# -- enforcement -----------------------------------------------------------


def test_prb_increment_per_cell(live):
    orch = pol.PolicyOrchestrator(live)
    before = {cid: c.prb_reservation.get("eMBB", 0.0) for cid, c in live.cells.items()}
    rec, err = orch.submit("ApplyPolicy[PRB_reservation.slice=eMBB += 10%]")
    assert rec.accepted and err is None
    for cid, cell in live.cells.items():
        assert cell.prb_reservation["eMBB"] == pytest.approx(before[cid] + 0.10, abs=1e-12)


def test_core_bandwidth_increment(live):
    orch = pol.PolicyOrchestrator(live)
    before = {lid: link.bandwidth_capacity for lid, link in live.topology.links.items()}
    rec, _ = orch.submit("ApplyPolicy[Core_Bandwidth += 1 Gbps]")
    assert rec.accepted
    for lid, link in live.topology.links.items():
        bump = 1e9 if link.tier == "core" else 0.0
        assert link.bandwidth_capacity == before[lid] + bump


@pytest.mark.parametrize("text", [
    "ApplyPolicy[Core_Bandwidth += 1 Gbps]",
    "ApplyPolicy[CN_Compute += 10 units]",
    "ApplyPolicy[PRB_reservation += 5%]",
    "ApplyPolicy[Admission_Cap = 7 count]",
])
def test_injected_failure_rolls_back(live, text):
    orch = pol.PolicyOrchestrator(live)
    pre = live.digest()
    orch.fail_next = True
    rec, _ = orch.submit(text)
    assert rec.reason == "enforcement_failed" and not rec.accepted
    assert live.digest() == pre == rec.post_digest
    assert orch.episode.accepted == 0
    # the hook is one-shot
    rec, _ = orch.submit(text)
    assert rec.accepted


def test_assignment_is_idempotent(live):
    orch = pol.PolicyOrchestrator(live)
    orch.submit("ApplyPolicy[CN_Compute.node=s003 = 70 units]")
    once = live.digest()
    rec, _ = orch.submit("ApplyPolicy[CN_Compute.node=s003 = 70 units]")
    assert rec.accepted and live.digest() == once


def test_episode_delta_is_net_per_target(live):
    orch = pol.PolicyOrchestrator(live, pol.ConstraintTemplate(prb_reservation_max_delta=20.0))
    orch.begin_episode("e")
    ok = [orch.submit(f"ApplyPolicy[PRB_reservation.cell=c0.slice=eMBB {op}]")[0].reason for op in
          ("+= 15%", "+= 10%", "-= 5%", "+= 15%")]
    assert ok == [None, "delta", None, "delta"]
    # a fresh episode resets the baseline
    orch.begin_episode("f")
    assert orch.submit("ApplyPolicy[PRB_reservation.cell=c0.slice=eMBB += 10%]")[0].accepted


def test_audit_log(live, tmp_path):
    orch = pol.PolicyOrchestrator(live, scenario_id="scn")
    assert orch.audit_log() == ()
    orch.begin_episode("ep1")
    results = [orch.submit(t)[0] for t in (
        "ApplyPolicy[PRB_reservation += 10%]", "ApplyPolicy[Bogus += 1%]", "ApplyPolicy[Core_Bandwidth += 1 Gbps]",
    )]
    log = orch.audit_log()
    assert len(log) == 3
    assert [r.verdict for r in log] == ["accepted", "rejected", "accepted"]
    assert log[1].reason == "parse"
    assert [r.directive_id for r in log] == ["d0001", "d0002", "d0003"]
    assert [r.timestamp for r in log] == [0, 1, 2]
    assert all(r.episode_id == "ep1" and r.scenario_id == "scn" for r in log)
    assert results[0].post_digest == results[2].pre_digest
    lines = orch.export_audit(tmp_path / "audit.jsonl").read_text().splitlines()
    assert [json.loads(x)["verdict"] for x in lines] == ["accepted", "rejected", "accepted"]


def test_count_limit(live):
    orch = pol.PolicyOrchestrator(live, pol.ConstraintTemplate(max_directives=2))
    orch.begin_episode("e")
    reasons = [orch.submit("ApplyPolicy[CN_Compute += 1 units]")[0].reason for _ in range(3)]
    assert reasons == [None, None, "count"]


def test_adapters_translate_stub():
    d = pol.parse_directive("ApplyPolicy[Core_Bandwidth += 1 Gbps]")
    assert pol.CnAdapter().translate(d) == {"domain": "CN", "directive": "ApplyPolicy[Core_Bandwidth += 1 Gbps]"}
    assert pol.RanAdapter().translate(d)["domain"] == "RAN"
