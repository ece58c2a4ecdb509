"""Reasoners: context document in, protocol text out.

``ScriptedReasoner`` replays fixed texts, ``HeuristicReasoner`` applies a
small rule table to the KPIs it has already observed, and
``ExternalReasoner`` forwards the context to a language-model service
over HTTP.

External request (POST, ``application/json``)::

    {"model": str, "preamble": str, "context": str, "temperature": float}

The response body is either JSON with a ``"text"`` field or plain text.
The endpoint comes from the config or ``NETSLICE_REASONER_ENDPOINT``;
``NETSLICE_REASONER_KEY``, when set, is sent as a bearer token.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources

from .errors import ConfigurationError
from .policy import _fmt_number

log = logging.getLogger(__name__)

ENDPOINT_ENV = "NETSLICE_REASONER_ENDPOINT"
KEY_ENV = "NETSLICE_REASONER_KEY"
SCRIPT_EXHAUSTED = "Thought: script exhausted\nAction: Finish[script exhausted]"
UNAVAILABLE = "Thought: reasoner unavailable\nAction: Finish[reasoner unavailable]"


def load_preamble(version="v1"):
    return resources.files("netslice").joinpath(f"prompts/preamble_{version}.txt").read_text()


class ScriptedReasoner:
    """Returns ``script[i]`` on call ``i``; a fixed Finish once the script runs out."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = 0

    def __call__(self, context):
        i = self.calls
        self.calls += 1
        return self.script[i] if i < len(self.script) else SCRIPT_EXHAUSTED


# -- heuristic -------------------------------------------------------------

_STEP = re.compile(r"^Action: (Query|Apply|Retrieve|Finish|Invalid)(?:\[(.*)\])?\nObservation: (.*)$", re.M)
_AGG = re.compile(r"^(?:last|mean|max|min|sum)=(\S+) over")
_ROW = re.compile(r"slice=(\S+) value=(\S+)")
_TICK = re.compile(r"^tick: (\d+)$", re.M)


def kpi_queries(tick=None):
    rng = "" if tick is None else f" RANGE {tick} {tick}"
    return {
        "prb_utilization": f"GET prb_utilization{rng} AGG max",
        "qos_violations": f"GET qos_violations{rng}",
        "upf_processing_delay": f"GET upf_processing_delay{rng} AGG last",
    }


def observed_kpis(context):
    """KPIs and applied parameters recoverable from a context document's RECENT STEPS.

    Returns ``(tick, kpis, applied)``; a KPI whose query returned nothing
    usable maps to ``None``, one never queried is absent.
    """
    m = _TICK.search(context)
    tick = int(m.group(1)) if m else None
    queries = {q: name for name, q in kpi_queries(tick).items()}
    kpis, applied = {}, set()
    for verb, payload, obs in _STEP.findall(context):
        if verb == "Apply":
            pm = re.match(r"ApplyPolicy\[\s*([A-Za-z_]+)", payload or "")
            if pm:
                applied.add(pm.group(1))
        elif verb == "Query" and payload in queries:
            name = queries[payload]
            if name == "qos_violations":
                rows = {s: float(v) for s, v in _ROW.findall(obs)}
                kpis[name] = rows or None
            else:
                am = _AGG.match(obs)
                try:
                    kpis[name] = float(am.group(1)) if am and am.group(1) != "none" else None
                except ValueError:
                    kpis[name] = None
    return tick, kpis, applied


@dataclass(frozen=True)
class HeuristicRules:
    prb_high_watermark: float = 0.9
    latency_watermark_ms: float = 3.0
    prb_step_pct: float = 10.0
    bandwidth_step_gbps: float = 1.0

    @classmethod
    def from_config(cls, agent):
        return cls(agent.prb_high_watermark, agent.latency_watermark_ms, agent.prb_step_pct, agent.bandwidth_step_gbps)


def most_violated_slice(violations):
    return min(violations, key=lambda s: (-violations[s], s))


def heuristic_decide(kpis, applied, rules):
    """Rule table over observed KPIs; RAN rule before CN rule, then Finish."""
    prb = kpis.get("prb_utilization")
    viol = kpis.get("qos_violations")
    if prb is not None and prb > rules.prb_high_watermark and viol and "PRB_reservation" not in applied:
        sid = most_violated_slice(viol)
        return (
            f"Thought: PRB utilization {prb:.3g} above {rules.prb_high_watermark:g}; {sid} has the most violations\n"
            f"Action: Apply[ApplyPolicy[PRB_reservation.slice={sid} += {_fmt_number(rules.prb_step_pct)}%]]"
        )
    upf = kpis.get("upf_processing_delay")
    if upf is not None and upf > rules.latency_watermark_ms and "Core_Bandwidth" not in applied:
        return (
            f"Thought: UPF delay {upf:.3g} ms above {rules.latency_watermark_ms:g} ms; core links are the bottleneck\n"
            f"Action: Apply[ApplyPolicy[Core_Bandwidth += {_fmt_number(rules.bandwidth_step_gbps)} Gbps]]"
        )
    return "Thought: both domains within watermarks\nAction: Finish[no further action]"


class HeuristicReasoner:
    """Deterministic stand-in for a language model: observe RAN, observe CN, decide.

    The phase is recomputed from the context on every call, so the
    reasoner is a pure function of its rule table and the observation
    history in the document.
    """

    def __init__(self, rules=None):
        self.rules = rules or HeuristicRules()

    def phase(self, kpis):
        if "prb_utilization" not in kpis or "qos_violations" not in kpis:
            return "observe_ran"
        if "upf_processing_delay" not in kpis:
            return "observe_cn"
        return "decide"

    def __call__(self, context):
        tick, kpis, applied = observed_kpis(context)
        phase = self.phase(kpis)
        if phase != "decide":
            queries = kpi_queries(tick)
            name = next(k for k in queries if k not in kpis)
            return f"Thought: {phase}: need {name}\nAction: Query[{queries[name]}]"
        return heuristic_decide(kpis, applied, self.rules)


# -- external --------------------------------------------------------------


@dataclass(frozen=True)
class ExternalReasonerConfig:
    endpoint: str
    model: str = "external-llm"
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.0
    max_request_chars: int = 16000
    backoff_base: float = 0.5

    def __post_init__(self):
        if not self.timeout > 0:
            raise ConfigurationError("must be positive", "reasoner.timeout_s", self.timeout)
        if self.max_retries < 0:
            raise ConfigurationError("must be >= 0", "reasoner.max_retries", self.max_retries)

    @classmethod
    def from_section(cls, section, env=None):
        env = os.environ if env is None else env
        endpoint = section.endpoint or env.get(ENDPOINT_ENV, "")
        if not endpoint:
            raise ConfigurationError(f"no endpoint configured; set {ENDPOINT_ENV}", "reasoner.endpoint", "")
        return cls(
            endpoint, section.model, section.timeout_s, section.max_retries, section.temperature,
            section.max_request_chars,
        )


def urllib_transport(url, body, headers, timeout):
    req = urllib.request.Request(url, data=body, headers=headers, method="POST")
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.read().decode("utf-8")


def build_request(config, context, preamble):
    """JSON request body, with the context cut in the middle if it would exceed the size cap."""
    payload = {"model": config.model, "preamble": preamble, "context": context, "temperature": config.temperature}
    body = json.dumps(payload)
    if len(body) > config.max_request_chars:
        marker = "\n...[truncated]...\n"
        overhead = len(json.dumps({**payload, "context": marker}))
        room = max(0, config.max_request_chars - overhead)
        # JSON escaping can expand characters, so shrink until it fits
        while True:
            head, tail = context[: room // 2], context[len(context) - (room - room // 2):] if room else ""
            payload["context"] = head + marker + tail
            body = json.dumps(payload)
            if len(body) <= config.max_request_chars or room == 0:
                break
            room = max(0, room - (len(body) - config.max_request_chars) - 1)
    return body.encode("utf-8")


def _extract_text(raw):
    try:
        data = json.loads(raw)
    except ValueError:
        return raw
    if isinstance(data, dict) and isinstance(data.get("text"), str):
        return data["text"]
    return raw


def call_external(config, context, transport=None, sleep=time.sleep, preamble=None, env=None):
    """Send the context to the external service; retry with exponential backoff, then give up politely.

    Returns the service's text, or the ``reasoner unavailable`` Finish
    after ``max_retries + 1`` failed attempts.
    """
    transport = transport or urllib_transport
    env = os.environ if env is None else env
    body = build_request(config, context, preamble if preamble is not None else load_preamble())
    headers = {"Content-Type": "application/json"}
    if env.get(KEY_ENV):
        headers["Authorization"] = f"Bearer {env[KEY_ENV]}"
    for attempt in range(config.max_retries + 1):
        try:
            return _extract_text(transport(config.endpoint, body, headers, config.timeout))
        except (OSError, urllib.error.URLError, TimeoutError) as exc:
            log.warning("reasoner attempt %d failed: %s", attempt + 1, exc)
            if attempt < config.max_retries:
                sleep(config.backoff_base * 2**attempt)
    return UNAVAILABLE


class ExternalReasoner:
    def __init__(self, config, transport=None, sleep=time.sleep):
        self.config = config
        self.transport = transport
        self.sleep = sleep
        self.preamble = load_preamble()
        self.unavailable = False

    def __call__(self, context):
        text = call_external(self.config, context, self.transport, self.sleep, self.preamble)
        if text == UNAVAILABLE:
            self.unavailable = True
        return text


def make_reasoner(kind, agent_section=None, reasoner_section=None, script=None, transport=None):
    if kind == "scripted":
        return ScriptedReasoner(script or [])
    if kind == "heuristic":
        return HeuristicReasoner(HeuristicRules.from_config(agent_section) if agent_section else None)
    if kind == "external":
        from .config import ReasonerSection

        cfg = ExternalReasonerConfig.from_section(reasoner_section or ReasonerSection())
        return ExternalReasoner(cfg, transport)
    raise ConfigurationError("unknown reasoner", "reasoner", kind)
