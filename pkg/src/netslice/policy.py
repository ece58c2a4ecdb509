"""Directive parsing, validation against a constraint template, and atomic dispatch.

Directive grammar (case-sensitive)::

    ApplyPolicy[<param>(.<key>=<value>)* <op> <number> <unit>]

    param  PRB_reservation | Core_Bandwidth | CN_Compute | Admission_Cap
    op     += | -= | =
    unit   % (PRB_reservation), Gbps or Mbps (Core_Bandwidth),
           units (CN_Compute), count (Admission_Cap)

Scopes narrow the target: ``cell``/``slice`` for PRB reservations,
``tier``/``link`` for bandwidth, ``node`` for compute. An unscoped
directive applies network-wide (every cell and slice, or every core
link, or every server).

Per-episode deltas are measured per target element as the net change
from its value when the episode began.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field

from . import cn
from .errors import CapacityError, DirectiveParseError, EnforcementError

PARAMS = {
    "PRB_reservation": ("%",),
    "Core_Bandwidth": ("Gbps", "Mbps"),
    "CN_Compute": ("units",),
    "Admission_Cap": ("count",),
}
SCOPE_KEYS = {
    "PRB_reservation": ("cell", "slice"),
    "Core_Bandwidth": ("tier", "link"),
    "CN_Compute": ("node",),
    "Admission_Cap": (),
}
OPERATORS = ("+=", "-=", "=")
UNITS = ("%", "Gbps", "Mbps", "units", "count")
REJECT_REASONS = ("parse", "scope", "range", "delta", "count", "capacity", "enforcement_failed")

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_SCOPE_VALUE = re.compile(r"[A-Za-z0-9_\-]+")
_NUMBER = re.compile(r"[0-9]+(\.[0-9]+)?(?![0-9.])")
_EPS = 1e-9


@dataclass(frozen=True)
class PolicyDirective:
    parameter: str
    operator: str
    value: float
    unit: str
    scope: tuple = ()  # ((key, value), ...) in source order
    directive_id: str = None

    def __post_init__(self):
        if self.unit not in PARAMS.get(self.parameter, ()):
            raise ValueError(f"unit {self.unit!r} incompatible with {self.parameter}")

    @property
    def scope_dict(self):
        return dict(self.scope)


def _fmt_number(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def format_directive(d):
    scope = "".join(f".{k}={v}" for k, v in d.scope)
    unit = d.unit if d.unit == "%" else f" {d.unit}"
    return f"ApplyPolicy[{d.parameter}{scope} {d.operator} {_fmt_number(d.value)}{unit}]"


def parse_directive(text):
    """Parse ``ApplyPolicy[...]``; errors carry the offending character position."""
    pos = 0

    def fail(msg, at=None):
        raise DirectiveParseError(msg, text, pos if at is None else at)

    def skip_ws():
        nonlocal pos
        while pos < len(text) and text[pos] in " \t":
            pos += 1

    head = "ApplyPolicy["
    if not text.startswith(head):
        fail("expected 'ApplyPolicy['", 0)
    pos = len(head)
    skip_ws()
    m = _NAME.match(text, pos)
    if not m:
        fail("expected a parameter name")
    param = m.group()
    if param not in PARAMS:
        fail(f"unknown parameter {param!r}")
    pos = m.end()

    scope = []
    while pos < len(text) and text[pos] == ".":
        key_at = pos + 1
        km = _NAME.match(text, key_at)
        if not km:
            fail("expected a scope label after '.'", key_at)
        key = km.group()
        if key not in SCOPE_KEYS[param]:
            fail(f"scope label {key!r} not valid for {param}", key_at)
        pos = km.end()
        if pos >= len(text) or text[pos] != "=" or text.startswith("==", pos):
            fail("expected '=' in scope")
        pos += 1
        vm = _SCOPE_VALUE.match(text, pos)
        if not vm:
            fail("expected a scope value")
        scope.append((key, vm.group()))
        pos = vm.end()

    skip_ws()
    op = next((o for o in OPERATORS if text.startswith(o, pos)), None)
    if op is None:
        fail("expected operator '+=', '-=' or '='")
    pos += len(op)
    skip_ws()
    nm = _NUMBER.match(text, pos)
    if not nm:
        fail("malformed number")
    value = float(nm.group())
    pos = nm.end()
    skip_ws()
    unit = next((u for u in sorted(UNITS, key=len, reverse=True) if text.startswith(u, pos)), None)
    if unit is None:
        fail("unknown or missing unit")
    if unit not in PARAMS[param]:
        fail(f"unit {unit!r} not valid for {param}")
    pos += len(unit)
    skip_ws()
    if pos >= len(text) or text[pos] != "]":
        fail("expected ']'")
    if pos != len(text) - 1:
        fail("trailing characters after ']'", pos + 1)
    return PolicyDirective(param, op, value, unit, tuple(scope))


# -- template and validation -----------------------------------------------


@dataclass(frozen=True)
class ConstraintTemplate:
    prb_reservation_range: tuple = (0.0, 100.0)  # percent
    prb_reservation_max_delta: float = 20.0  # percent
    core_bandwidth_range: tuple = (0.1, 4.0)  # factor of initial capacity
    core_bandwidth_max_delta: float = 2e9  # bps
    cn_compute_range: tuple = (0.1, 4.0)  # factor of initial capacity
    cn_compute_max_delta: float = 100.0
    admission_cap_range: tuple = (0, 10000)
    admission_cap_max_delta: float = 10000
    max_directives: int = 5

    def __post_init__(self):
        for lo, hi in (
            self.prb_reservation_range, self.core_bandwidth_range, self.cn_compute_range, self.admission_cap_range,
        ):
            if lo > hi:
                raise ValueError("template range with min > max")
        deltas = (
            self.prb_reservation_max_delta, self.core_bandwidth_max_delta,
            self.cn_compute_max_delta, self.admission_cap_max_delta, self.max_directives,
        )
        if any(d < 0 for d in deltas):
            raise ValueError("template deltas must be >= 0")

    @classmethod
    def from_config(cls, section):
        s = section
        return cls(
            (s.prb_reservation_min_pct, s.prb_reservation_max_pct),
            s.prb_reservation_max_delta_pct,
            (s.core_bandwidth_min_factor, s.core_bandwidth_max_factor),
            s.core_bandwidth_max_delta_gbps * 1e9,
            (s.cn_compute_min_factor, s.cn_compute_max_factor),
            s.cn_compute_max_delta_units,
            (s.admission_cap_min, s.admission_cap_max),
            s.admission_cap_max_delta,
            s.max_directives,
        )


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str = None

    def __bool__(self):
        return self.accepted

    def __str__(self):
        return "accepted" if self.accepted else f"rejected({self.reason})"


@dataclass(frozen=True)
class Change:
    """One target element's value before and after a directive, in model units."""

    target: tuple  # ("prb", cell, slice) | ("link", id) | ("node", id) | ("cap",)
    old: float
    new: float


def _apply_op(op, cur, v):
    return cur + v if op == "+=" else cur - v if op == "-=" else v


def _magnitude(d):
    if d.parameter == "PRB_reservation":
        return d.value / 100.0
    if d.parameter == "Core_Bandwidth":
        return d.value * (1e9 if d.unit == "Gbps" else 1e6)
    return d.value


def plan_changes(directive, state):
    """Target elements and their new values; ``None`` when the scope names nothing."""
    d, sc = directive, directive.scope_dict
    v = _magnitude(d)
    changes = []
    if d.parameter == "PRB_reservation":
        cells = [sc["cell"]] if "cell" in sc else sorted(state.cells)
        slices = [sc["slice"]] if "slice" in sc else sorted(state.slices)
        if any(c not in state.cells for c in cells) or any(s not in state.slices for s in slices):
            return None
        for cid in cells:
            for sid in slices:
                cur = state.cells[cid].prb_reservation.get(sid, 0.0)
                changes.append(Change(("prb", cid, sid), cur, _apply_op(d.operator, cur, v)))
    elif d.parameter == "Core_Bandwidth":
        topo = state.topology
        if "link" in sc:
            ids = [sc["link"]] if sc["link"] in topo.links else []
            if "tier" in sc:
                ids = [i for i in ids if topo.links[i].tier == sc["tier"]]
        else:
            tier = sc.get("tier", "core")
            ids = sorted(i for i, link in topo.links.items() if link.tier == tier)
        if not ids:
            return None
        for lid in ids:
            cur = topo.links[lid].bandwidth_capacity
            changes.append(Change(("link", lid), cur, _apply_op(d.operator, cur, v)))
    elif d.parameter == "CN_Compute":
        topo = state.topology
        ids = [sc["node"]] if "node" in sc else list(topo.servers)
        if not ids or any(i not in topo.nodes or topo.nodes[i].tier != "server" for i in ids):
            return None
        for nid in ids:
            cur = topo.nodes[nid].compute_capacity
            changes.append(Change(("node", nid), cur, _apply_op(d.operator, cur, v)))
    else:
        cap = state.policy.get("admission_cap")
        cur = len(state.users) if cap is None else cap
        changes.append(Change(("cap",), cur, _apply_op(d.operator, cur, v)))
    return changes


def current_value(state, target):
    kind = target[0]
    if kind == "prb":
        return state.cells[target[1]].prb_reservation.get(target[2], 0.0)
    if kind == "link":
        return state.topology.links[target[1]].bandwidth_capacity
    if kind == "node":
        return state.topology.nodes[target[1]].compute_capacity
    cap = state.policy.get("admission_cap")
    return len(state.users) if cap is None else cap


def validate(directive, template, state, episode=None):
    """Total verdict function: accepted, or rejected with the first failing rule.

    Rules in order: scope, count, range, delta, capacity. ``episode``
    carries the episode's accepted count and start values per target.
    """
    episode = episode if episode is not None else EpisodeLedger()
    changes = plan_changes(directive, state)
    if changes is None:
        return Verdict(False, "scope")
    if episode.accepted >= template.max_directives:
        return Verdict(False, "count")
    p = directive.parameter
    for ch in changes:
        if p == "PRB_reservation":
            lo, hi = (x / 100.0 for x in template.prb_reservation_range)
            if not (lo - _EPS <= ch.new <= hi + _EPS):
                return Verdict(False, "range")
        elif p == "Core_Bandwidth":
            init = state.topology.links[ch.target[1]].initial_capacity
            lo, hi = template.core_bandwidth_range
            if not (lo * init * (1 - _EPS) <= ch.new <= hi * init * (1 + _EPS)) or ch.new <= 0:
                return Verdict(False, "range")
        elif p == "CN_Compute":
            init = state.topology.nodes[ch.target[1]].initial_capacity
            lo, hi = template.cn_compute_range
            if not (lo * init - _EPS <= ch.new <= hi * init + _EPS) or ch.new < 0:
                return Verdict(False, "range")
        else:
            lo, hi = template.admission_cap_range
            if not float(ch.new).is_integer() or not (lo <= ch.new <= hi):
                return Verdict(False, "range")
    if p == "PRB_reservation":
        # every touched cell must still have reservations summing to at most 100%
        for cid in {ch.target[1] for ch in changes}:
            res = dict(state.cells[cid].prb_reservation)
            for ch in changes:
                if ch.target[1] == cid:
                    res[ch.target[2]] = ch.new
            if sum(res.values()) > 1.0 + _EPS:
                return Verdict(False, "range")
    max_delta = {
        "PRB_reservation": template.prb_reservation_max_delta / 100.0,
        "Core_Bandwidth": template.core_bandwidth_max_delta,
        "CN_Compute": template.cn_compute_max_delta,
        "Admission_Cap": template.admission_cap_max_delta,
    }[p]
    for ch in changes:
        start = episode.start.get(ch.target, ch.old)
        if abs(ch.new - start) > max_delta * (1 + _EPS) + _EPS:
            return Verdict(False, "delta")
    for ch in changes:
        if ch.target[0] == "link" and ch.new < state.topology.links[ch.target[1]].bandwidth_used:
            return Verdict(False, "capacity")
        if ch.target[0] == "node" and ch.new < state.topology.nodes[ch.target[1]].compute_used - _EPS:
            return Verdict(False, "capacity")
    return Verdict(True)


@dataclass
class EpisodeLedger:
    episode_id: str = None
    accepted: int = 0
    start: dict = field(default_factory=dict)  # target -> value at episode start


# -- enforcement -----------------------------------------------------------


class RanAdapter:
    """Enforces PRB reservations and the admission cap on cells / policy."""

    handles = ("PRB_reservation", "Admission_Cap")

    def apply(self, state, changes, fail=False):
        for i, ch in enumerate(changes):
            if ch.target[0] == "prb":
                _, cid, sid = ch.target
                res = state.cells[cid].prb_reservation
                new = min(max(ch.new, 0.0), 1.0)
                if new == 0.0:
                    res.pop(sid, None)
                else:
                    res[sid] = new
            else:
                state.policy["admission_cap"] = int(ch.new)
            if fail and i == 0:
                raise EnforcementError("RAN adapter failure (injected)")

    def translate(self, directive):
        """Stub for a standardized control representation."""
        return {"domain": "RAN", "directive": format_directive(directive)}


class CnAdapter:
    """Enforces link bandwidth and server compute changes via the topology primitives."""

    handles = ("Core_Bandwidth", "CN_Compute")

    def apply(self, state, changes, fail=False):
        topo = state.topology
        for i, ch in enumerate(changes):
            delta = ch.new - current_value(state, ch.target)
            try:
                if ch.target[0] == "link":
                    cn.core_bandwidth_scale(topo, delta, link_ids=[ch.target[1]])
                else:
                    cn.node_compute_scale(topo, delta, node_ids=[ch.target[1]])
            except CapacityError as exc:
                raise EnforcementError(str(exc)) from exc
            if fail and i == 0:
                raise EnforcementError("CN adapter failure (injected)")

    def translate(self, directive):
        return {"domain": "CN", "directive": format_directive(directive)}


@dataclass(frozen=True)
class DispatchRecord:
    directive_id: str
    text: str
    verdict: str  # "accepted" | "rejected"
    reason: str
    pre_digest: str
    post_digest: str
    timestamp: int  # logical dispatch sequence number
    episode_id: str = None
    tick: int = 0
    scenario_id: str = None

    @property
    def accepted(self):
        return self.verdict == "accepted"

    def to_json_line(self):
        return json.dumps(asdict(self), sort_keys=False)


def _snapshot(state):
    return (
        {cid: dict(c.prb_reservation) for cid, c in state.cells.items()},
        {lid: link.bandwidth_capacity for lid, link in state.topology.links.items()},
        {nid: n.compute_capacity for nid, n in state.topology.nodes.items()},
        dict(state.policy),
    )


def _restore(state, snap):
    res, links, nodes, policy = snap
    for cid, r in res.items():
        state.cells[cid].prb_reservation = dict(r)
    for lid, cap in links.items():
        state.topology.links[lid].bandwidth_capacity = cap
    for nid, cap in nodes.items():
        state.topology.nodes[nid].compute_capacity = cap
    state.policy = dict(policy)


class PolicyOrchestrator:
    """Single dispatcher: parse, validate, enforce atomically, and log every submission.

    Set ``fail_next`` to make the next enforcement fail after a partial
    mutation (fault injection for the rollback path).
    """

    def __init__(self, state, template=None, scenario_id=None):
        self.state = state
        self.template = template or ConstraintTemplate()
        self.scenario_id = scenario_id
        self.adapters = {p: a for a in (RanAdapter(), CnAdapter()) for p in a.handles}
        self.fail_next = False
        self._log = []
        self._seq = 0
        self.episode = EpisodeLedger()

    def begin_episode(self, episode_id=None):
        self.episode = EpisodeLedger(episode_id)
        return self.episode

    def audit_log(self):
        return tuple(self._log)

    def _next_id(self):
        self._seq += 1
        return f"d{self._seq:04d}"

    def _record(self, did, text, verdict, reason, pre, post):
        rec = DispatchRecord(
            did, text, verdict, reason, pre, post, len(self._log), self.episode.episode_id,
            self.state.tick, self.scenario_id,
        )
        self._log.append(rec)
        return rec

    def submit(self, text):
        """Parse then dispatch a directive string; parse failures are logged as rejections."""
        try:
            directive = parse_directive(text)
        except DirectiveParseError as exc:
            digest = self.state.digest()
            rec = self._record(self._next_id(), text, "rejected", "parse", digest, digest)
            return rec, str(exc)
        return self.dispatch(directive), None

    def dispatch(self, directive):
        did = directive.directive_id or self._next_id()
        text = format_directive(directive)
        state = self.state
        pre = state.digest()
        verdict = validate(directive, self.template, state, self.episode)
        if not verdict:
            return self._record(did, text, "rejected", verdict.reason, pre, pre)
        changes = plan_changes(directive, state)
        snap = _snapshot(state)
        fail, self.fail_next = self.fail_next, False
        try:
            self.adapters[directive.parameter].apply(state, changes, fail=fail)
        except EnforcementError:
            _restore(state, snap)
            return self._record(did, text, "rejected", "enforcement_failed", pre, state.digest())
        for ch in changes:
            self.episode.start.setdefault(ch.target, ch.old)
        self.episode.accepted += 1
        return self._record(did, text, "accepted", None, pre, state.digest())

    def export_audit(self, path):
        with open(path, "w") as fh:
            for rec in self._log:
                fh.write(rec.to_json_line() + "\n")
        return path
