"""Slices, SLAs and the joint RAN/CN admission state.

Embeddings are always kept in *canonical order*: the live embeddings are
exactly what first-fit produces when the embedded users are processed in
ascending user id. Every controller commits through :func:`commit`, so the
set of satisfied users it reports is one the exhaustive oracle also
evaluates.
"""

from __future__ import annotations

import bisect
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import cn, ran
from .errors import ConfigurationError, NotFoundError
from .seeding import derive_seed

SLICE_KINDS = {"eMBB": (4, 6), "URLLC": (2, 3)}
REJECT_REASONS = ("ran_capacity", "cn_compute", "cn_bandwidth", "latency", "policy")


@dataclass(frozen=True)
class SliceSpec:
    slice_id: str
    kind: str
    rate_floor: float  # bps
    latency_budget: float  # ms
    chain_length_range: tuple
    flow_bandwidth: float  # bps

    def __post_init__(self):
        if self.kind not in SLICE_KINDS:
            raise ConfigurationError(f"unknown slice kind {self.kind!r}")
        lo, hi = self.chain_length_range
        allowed = SLICE_KINDS[self.kind]
        if not (allowed[0] <= lo <= hi <= allowed[1]):
            raise ConfigurationError(
                f"{self.kind} chain length range {lo}-{hi} outside {allowed[0]}-{allowed[1]}"
            )
        if not (self.rate_floor > 0 and self.latency_budget > 0 and self.flow_bandwidth > 0):
            raise ConfigurationError("slice rate floor, latency budget and flow bandwidth must be positive")
        object.__setattr__(self, "chain_length_range", (int(lo), int(hi)))


def default_slices():
    return {
        "eMBB": SliceSpec("eMBB", "eMBB", 50e6, 100.0, (4, 6), 50e6),
        "URLLC": SliceSpec("URLLC", "URLLC", 2e6, 5.0, (2, 3), 2e6),
    }


@dataclass(frozen=True)
class AdmissionDecision:
    user_id: str
    admitted: bool
    assigned_prbs: int = 0
    sfc_embedding: str = None
    reject_reason: str = None

    def __post_init__(self):
        if self.admitted and (self.assigned_prbs <= 0 or self.sfc_embedding is None):
            raise ValueError(f"admitted user {self.user_id} needs PRBs and an embedding")
        if not self.admitted and self.reject_reason not in REJECT_REASONS:
            raise ValueError(f"rejected user {self.user_id} needs a reject reason")


@dataclass(frozen=True)
class SlaVerdict:
    satisfied: bool
    reason: str = None

    def __bool__(self):
        return self.satisfied


@dataclass(frozen=True)
class SlaReport:
    tick: int
    satisfied_total: int
    satisfied_by_slice: dict
    satisfaction_ratio: float
    violations: tuple = ()

    def to_dict(self):
        return {
            "tick": self.tick,
            "satisfied_total": self.satisfied_total,
            "satisfied_by_slice": dict(sorted(self.satisfied_by_slice.items())),
            "ratio": self.satisfaction_ratio,
            "violations": [list(v) for v in self.violations],
        }

    def to_json_line(self):
        return json.dumps(self.to_dict(), sort_keys=False)


@dataclass(frozen=True)
class Feasibility:
    ran_feasible: bool
    cn_feasible: bool
    joint_feasible: bool
    cn_reason: str = None


@dataclass
class NetworkState:
    tick: int
    region: ran.RegionSpec
    cells: dict
    users: dict
    slices: dict
    topology: cn.FatTreeTopology
    requests: dict  # user_id -> SfcRequest
    pathloss: ran.PathLossParams
    radio: ran.RadioParams
    decisions: dict = field(default_factory=dict)
    policy: dict = field(default_factory=lambda: {"admission_cap": None})
    prb_need: dict = field(default_factory=dict)  # user_id -> min PRBs for the rate floor, or None
    usage: dict = field(default_factory=dict)  # cell_id -> {slice_id: prbs}

    def __post_init__(self):
        if not self.usage:
            self.usage = {cid: {} for cid in self.cells}
        if not self.prb_need:
            self.refresh_prb_need()

    def refresh_prb_need(self):
        for uid, u in self.users.items():
            cell = self.cells[u.serving_cell]
            floor = self.slices[u.slice_id].rate_floor
            self.prb_need[uid] = ran.min_prbs_for_rate(u, cell, self.pathloss, self.radio, floor)

    @property
    def user_ids(self):
        return sorted(self.users)

    def copy(self):
        new = NetworkState.__new__(NetworkState)
        new.tick = self.tick
        new.region = self.region
        new.cells = {
            cid: ran.Cell(c.id, c.position, c.tx_power, c.total_prbs, c.prb_bandwidth, dict(c.prb_reservation))
            for cid, c in self.cells.items()
        }
        new.users = {uid: ran.UserTerminal(**vars(u)) for uid, u in self.users.items()}
        new.slices = self.slices
        new.topology = self.topology.copy()
        new.requests = self.requests
        new.pathloss = self.pathloss
        new.radio = self.radio
        new.decisions = dict(self.decisions)
        new.policy = dict(self.policy)
        new.prb_need = self.prb_need
        new.usage = {cid: dict(s) for cid, s in self.usage.items()}
        return new

    def state_dict(self):
        return {
            "tick": self.tick,
            "cells": {
                cid: {"reservation": dict(sorted(c.prb_reservation.items())), "total_prbs": c.total_prbs}
                for cid, c in sorted(self.cells.items())
            },
            "users": {uid: [u.serving_cell, u.assigned_prbs] for uid, u in sorted(self.users.items())},
            "topology": self.topology.state_dict(),
            "decisions": {
                uid: [d.admitted, d.assigned_prbs, d.sfc_embedding, d.reject_reason]
                for uid, d in sorted(self.decisions.items())
            },
            "policy": dict(sorted(self.policy.items())),
        }

    def digest(self):
        blob = json.dumps(self.state_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()

    def request_for(self, uid):
        return self.requests[uid]

    def users_on(self, cell_id):
        return [u for u in self.users.values() if u.serving_cell == cell_id]


def request_id(uid):
    return f"sfc-{uid}"


# -- scenario generation ---------------------------------------------------


def generate_scenario(n_users, slice_mix, seed, config=None):
    """Fresh t=0 state: users placed, per-user SFC requests drawn, topology built, nothing admitted.

    Users of slice ``s`` are ``s-000, s-001, ...``; their positions and
    chains come from per-slice sub-seeds, so the scenario for a smaller
    mix is a prefix of the scenario for a larger one under the same seed.
    """
    from .config import ScenarioConfig

    config = config or ScenarioConfig()
    slices = config.slices
    unknown = [s for s in slice_mix if s not in slices]
    if unknown:
        raise ConfigurationError(f"unknown slice ids {unknown}", "scenario.slice_mix", dict(slice_mix))
    if sum(slice_mix.values()) != n_users:
        raise ConfigurationError(
            f"slice mix sums to {sum(slice_mix.values())}, expected {n_users}", "scenario.slice_mix", dict(slice_mix)
        )
    cells = ran.build_cells(config.region, config.tx_power, config.total_prbs, config.prb_bandwidth)
    topo = cn.build_fat_tree(
        config.fat_tree_k,
        config.server_compute,
        dict(config.link_caps),
        config.link_delay,
        config.packet_size_bytes,
    )
    for sid, cap in sorted(config.server_compute_overrides.items()):
        node = topo.nodes[sid]
        node.compute_capacity = node.initial_capacity = float(cap)
    users, requests = {}, {}
    for slice_id in sorted(slice_mix):
        spec = slices[slice_id]
        placed = ran.place_users(
            slice_mix[slice_id], config.region, derive_seed(seed, "place", slice_id), slice_id,
            poisson=config.poisson_users,
        )
        lo, hi = spec.chain_length_range
        for j, user in enumerate(placed):
            rng = np.random.default_rng(derive_seed(seed, "chain", slice_id, j))
            length = int(rng.integers(lo, hi + 1))
            if config.vnf_compute_mode == "per_request":
                demands = [rng.integers(config.vnf_compute_min, config.vnf_compute_max + 1)] * length
            else:
                demands = rng.integers(config.vnf_compute_min, config.vnf_compute_max + 1, size=length)
            chain = tuple(cn.VnfDemand(float(c), config.vnf_processing_ms) for c in demands)
            users[user.id] = user
            requests[user.id] = cn.SfcRequest(
                request_id(user.id), user.id, chain, spec.flow_bandwidth, spec.latency_budget
            )
    return NetworkState(
        tick=0,
        region=config.region,
        cells=cells,
        users=users,
        slices=slices,
        topology=topo,
        requests=requests,
        pathloss=config.pathloss,
        radio=config.radio,
    )


# -- SLA evaluation --------------------------------------------------------


def live_rate(state, uid):
    u = state.users[uid]
    return ran.user_rate(u, state.cells[u.serving_cell], state.pathloss, state.radio, u.assigned_prbs)


def evaluate_user_sla(state, uid):
    """Closed inequalities: rate >= floor and latency <= budget both count as met."""
    if uid not in state.users:
        raise NotFoundError(f"unknown user {uid}")
    d = state.decisions.get(uid)
    if d is None:
        return SlaVerdict(False, "policy")
    if not d.admitted:
        return SlaVerdict(False, d.reject_reason)
    spec = state.slices[state.users[uid].slice_id]
    if live_rate(state, uid) < spec.rate_floor:
        return SlaVerdict(False, "ran_capacity")
    emb = state.topology.embeddings.get(request_id(uid))
    if emb is None:
        return SlaVerdict(False, "cn_compute")
    if cn.sfc_latency(state.topology, emb) > spec.latency_budget:
        return SlaVerdict(False, "latency")
    return SlaVerdict(True)


def sla_report(state):
    by_slice = {s: 0 for s in state.slices}
    violations = []
    for uid in state.user_ids:
        verdict = evaluate_user_sla(state, uid)
        if verdict:
            by_slice[state.users[uid].slice_id] += 1
        else:
            violations.append((uid, verdict.reason))
    total = sum(by_slice.values())
    n = len(state.users)
    return SlaReport(state.tick, total, by_slice, total / n if n else 1.0, tuple(violations))


def admitted_ids(state):
    return sorted(uid for uid, d in state.decisions.items() if d.admitted)


# -- RAN booking -----------------------------------------------------------


def can_book(state, uid, n):
    u = state.users[uid]
    cell = state.cells[u.serving_cell]
    usage = dict(state.usage[cell.id])
    usage[u.slice_id] = usage.get(u.slice_id, 0) + n - u.assigned_prbs
    return ran_fits_total(cell, usage)


def ran_fits_total(cell, usage):
    return sum(usage.values()) <= cell.total_prbs and ran.ran_fits(cell, usage)


def book(state, uid, n):
    """Set a user's PRB allocation to ``n`` if the cell (and reservations) allow it."""
    if not can_book(state, uid, n):
        return False
    u = state.users[uid]
    slot = state.usage[u.serving_cell]
    slot[u.slice_id] = slot.get(u.slice_id, 0) + n - u.assigned_prbs
    u.assigned_prbs = n
    return True


def unbook(state, uid):
    book(state, uid, 0)


# -- canonical embedding ---------------------------------------------------


def _embedded_order(topology):
    # request ids are "sfc-<uid>", so sorting request ids sorts user ids
    return sorted(topology.embeddings)


def _reject_reason(infeasible):
    return {"compute": "cn_compute", "bandwidth": "cn_bandwidth", "latency": "latency"}[infeasible.constraint]


def insert_embedding(topology, requests_by_rid, rid):
    """Embed ``rid`` keeping canonical order; returns None on success or the Infeasible.

    Embeddings after ``rid`` in id order are released and replayed. On
    failure the original placements are restored exactly (first-fit is
    deterministic, so replaying the old suffix reproduces it).
    """
    order = _embedded_order(topology)
    pos = bisect.bisect_left(order, rid)
    suffix = order[pos:]
    for other in reversed(suffix):
        cn.release_embedding(topology, other)
    res = cn.embed_sfc(topology, requests_by_rid[rid])
    failure = res if isinstance(res, cn.Infeasible) else None
    replayed = []
    if failure is None:
        for other in suffix:
            r = cn.embed_sfc(topology, requests_by_rid[other])
            if isinstance(r, cn.Infeasible):
                failure = r
                break
            replayed.append(other)
        if failure is not None:
            for other in reversed(replayed):
                cn.release_embedding(topology, other)
            cn.release_embedding(topology, rid)
    if failure is not None:
        for other in suffix:
            cn.embed_sfc(topology, requests_by_rid[other])
    return failure


def remove_embedding(topology, requests_by_rid, rid):
    """Release ``rid`` and replay later embeddings; returns request ids that no longer fit."""
    order = _embedded_order(topology)
    pos = bisect.bisect_left(order, rid)
    suffix = order[pos + 1:]
    for other in reversed(suffix):
        cn.release_embedding(topology, other)
    cn.release_embedding(topology, rid)
    dropped = []
    for other in suffix:
        if isinstance(cn.embed_sfc(topology, requests_by_rid[other]), cn.Infeasible):
            dropped.append(other)
    return dropped


def requests_by_rid(state):
    return {r.request_id: r for r in state.requests.values()}


def cn_check(state, uid, rmap=None):
    """CN feasibility of adding ``uid`` to the live embedded set, without mutation."""
    rid = request_id(uid)
    topo = state.topology
    order = _embedded_order(topo)
    if not order or rid > order[-1]:
        plan = cn.plan_embedding(topo, state.requests[uid])
        return plan if isinstance(plan, cn.Infeasible) else None
    scratch = topo.copy()
    return insert_embedding(scratch, rmap or requests_by_rid(state), rid)


def feasibility_check(state, uid, rmap=None):
    """(ran, cn, joint) feasibility of admitting ``uid`` on top of current allocations."""
    need = state.prb_need.get(uid)
    ran_ok = need is not None and can_book(state, uid, need)
    cn_fail = cn_check(state, uid, rmap)
    return Feasibility(
        ran_ok, cn_fail is None, ran_ok and cn_fail is None, None if cn_fail is None else _reject_reason(cn_fail)
    )


def admit(state, uid, rmap=None):
    """Jointly admit a user: book its minimum PRBs and embed its chain, or change nothing."""
    need = state.prb_need.get(uid)
    if need is None or not can_book(state, uid, need):
        return False
    if insert_embedding(state.topology, rmap or requests_by_rid(state), request_id(uid)) is not None:
        return False
    book(state, uid, need)
    state.decisions[uid] = AdmissionDecision(uid, True, need, request_id(uid))
    return True


def reset_allocation(state):
    """Drop all admissions, PRB bookings and embeddings (capacities and policy kept)."""
    for rid in list(state.topology.embeddings):
        cn.release_embedding(state.topology, rid)
    for u in state.users.values():
        u.assigned_prbs = 0
    state.usage = {cid: {} for cid in state.cells}
    state.decisions = {}
    return state


def commit(state, prbs, reasons=None):
    """Install a final allocation on a reset state.

    ``prbs`` maps each admitted user to its PRB grant; users are embedded
    in ascending id. A user whose grant does not fit or whose chain does
    not embed is rejected and its PRBs returned. Every user not in
    ``prbs`` is rejected with ``reasons.get(uid, "policy")``.
    """
    reasons = reasons or {}
    reset_allocation(state)
    for uid in sorted(prbs):
        if not book(state, uid, prbs[uid]):
            state.decisions[uid] = AdmissionDecision(uid, False, 0, None, "ran_capacity")
            continue
        res = cn.embed_sfc(state.topology, state.requests[uid])
        if isinstance(res, cn.Infeasible):
            unbook(state, uid)
            state.decisions[uid] = AdmissionDecision(uid, False, 0, None, _reject_reason(res))
        else:
            state.decisions[uid] = AdmissionDecision(uid, True, prbs[uid], res.request_id)
    for uid in state.users:
        if uid not in state.decisions:
            state.decisions[uid] = AdmissionDecision(uid, False, 0, None, reasons.get(uid, "policy"))
    return state


def check_invariants(state):
    """Raise InvariantViolation if RAN or CN conservation fails."""
    from .errors import InvariantViolation

    for cid, cell in state.cells.items():
        used = sum(u.assigned_prbs for u in state.users.values() if u.serving_cell == cid)
        if used > cell.total_prbs:
            raise InvariantViolation(f"cell {cid} oversubscribed")
        per_slice = {}
        for u in state.users.values():
            if u.serving_cell == cid and u.assigned_prbs:
                per_slice[u.slice_id] = per_slice.get(u.slice_id, 0) + u.assigned_prbs
        if {k: v for k, v in state.usage[cid].items() if v} != per_slice:
            raise InvariantViolation(f"cell {cid} usage ledger out of sync")
        if not ran.ran_fits(cell, per_slice):
            raise InvariantViolation(f"cell {cid} violates reservations")
    topo = state.topology
    compute = {sid: 0.0 for sid in topo.servers}
    bandwidth = {lid: 0.0 for lid in topo.links}
    for emb in topo.embeddings.values():
        for idx, sid in emb.placements:
            compute[sid] += emb.request.chain[idx].compute_demand
        for seg in emb.path_segments:
            for lid in seg:
                bandwidth[lid] += emb.request.flow_bandwidth
    for sid, amt in compute.items():
        node = topo.nodes[sid]
        if abs(node.compute_used - amt) > 1e-6 or node.compute_used > node.compute_capacity + 1e-6:
            raise InvariantViolation(f"compute ledger broken on {sid}")
    for lid, amt in bandwidth.items():
        link = topo.links[lid]
        if abs(link.bandwidth_used - amt) > 1e-3 or link.bandwidth_used > link.bandwidth_capacity + 1e-3:
            raise InvariantViolation(f"bandwidth ledger broken on {lid}")
    for uid, d in state.decisions.items():
        if d.admitted:
            if request_id(uid) not in topo.embeddings:
                raise InvariantViolation(f"admitted user {uid} has no embedding")
            if state.users[uid].assigned_prbs != d.assigned_prbs:
                raise InvariantViolation(f"admitted user {uid} PRBs not booked")
    for rid, emb in topo.embeddings.items():
        owner = emb.request.owner_user
        if not (owner in state.decisions and state.decisions[owner].admitted):
            raise InvariantViolation(f"embedding {rid} owned by non-admitted user")
