"""Allocation strategies mapping a fresh scenario to admission decisions.

Each controller is a scikit-learn style estimator: hyper-parameters go
to ``__init__`` (so ``get_params``/``set_params``/``clone`` work),
``fit(state)`` runs the allocation on a private copy and stores
``result_``, ``predict(state)`` returns the admitted mask in user-id
order and ``score(state)`` the number of SLA-satisfied users.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import slicing
from .slicing import admit, commit, feasibility_check, request_id, requests_by_rid, sla_report
from .validation import check_is_fitted, check_oracle_size, check_state


@dataclass
class AllocationResult:
    controller: str
    decisions: tuple
    satisfied_total: int
    admitted_total: int
    runtime: float  # ms
    state: slicing.NetworkState = field(repr=False)
    report: slicing.SlaReport = field(repr=False)
    flagged: bool = False
    extras: dict = field(default_factory=dict, repr=False)

    def summary(self):
        return {
            "controller": self.controller,
            "satisfied_total": self.satisfied_total,
            "admitted_total": self.admitted_total,
            "runtime_ms": round(self.runtime, 3),
            "flagged": self.flagged,
        }


class BaseController(BaseEstimator):
    kind = "Base"

    def fit(self, state, y=None):
        check_state(state)
        t0 = time.perf_counter()
        work = state.copy()
        extras = self._allocate(work) or {}
        runtime = (time.perf_counter() - t0) * 1e3
        final = extras.pop("_state", work)
        report = sla_report(final)
        decisions = tuple(final.decisions[uid] for uid in final.user_ids)
        self.result_ = AllocationResult(
            controller=self.kind,
            decisions=decisions,
            satisfied_total=report.satisfied_total,
            admitted_total=sum(d.admitted for d in decisions),
            runtime=runtime,
            state=final,
            report=report,
            flagged=extras.pop("_flagged", False),
            extras=extras,
        )
        return self

    def allocate(self, state):
        return self.fit(state).result_

    def predict(self, state=None):
        if state is not None:
            self.fit(state)
        check_is_fitted(self)
        return np.array([d.admitted for d in self.result_.decisions], dtype=bool)

    def score(self, state, y=None):
        return self.allocate(state).satisfied_total

    def _allocate(self, state):
        raise NotImplementedError


def _cap(state):
    cap = state.policy.get("admission_cap")
    return float("inf") if cap is None else cap


class RoundRobin(BaseController):
    """Static equal PRB split per cell, first-fit chains; blind to what users need."""

    kind = "RoundRobin"

    def _allocate(self, state):
        share = {}
        for cid, cell in state.cells.items():
            n = len(state.users_on(cid))
            if n:
                share[cid] = max(1, cell.total_prbs // n)
        prbs, reasons = {}, {}
        for uid in state.user_ids:
            if len(prbs) >= _cap(state):
                reasons[uid] = "policy"
                continue
            grant = share[state.users[uid].serving_cell]
            if slicing.book(state, uid, grant):
                prbs[uid] = grant
            else:
                reasons[uid] = "ran_capacity"
        commit(state, prbs, reasons)


def _ran_selection(state):
    """Greedy by ascending PRB need, RAN feasibility only. Mutates ``state``'s bookings."""
    chosen = []
    order = sorted((n, uid) for uid, n in state.prb_need.items() if n is not None)
    for need, uid in order:
        if len(chosen) >= _cap(state):
            break
        if slicing.book(state, uid, need):
            chosen.append(uid)
    return chosen


def _cn_selection(state):
    """Greedy by ascending chain compute, CN feasibility only. Mutates ``state``'s embeddings."""
    rmap = requests_by_rid(state)
    chosen, reasons = [], {}
    order = sorted(state.user_ids, key=lambda uid: (state.requests[uid].total_compute, uid))
    for uid in order:
        if len(chosen) >= _cap(state):
            reasons[uid] = "policy"
            continue
        fail = slicing.insert_embedding(state.topology, rmap, request_id(uid))
        if fail is None:
            chosen.append(uid)
        else:
            reasons[uid] = slicing._reject_reason(fail)
    return chosen, reasons


class RanOnly(BaseController):
    """Radio-side optimizer: admits the most users the PRBs allow, embeds chains afterwards."""

    kind = "RanOnly"

    def _allocate(self, state):
        chosen = _ran_selection(state)
        reasons = {uid: "ran_capacity" for uid in state.user_ids if uid not in chosen}
        commit(state, {uid: state.prb_need[uid] for uid in chosen}, reasons)


class CnOnly(BaseController):
    """Core-side optimizer: packs the cheapest chains, grants PRBs afterwards."""

    kind = "CnOnly"

    def _allocate(self, state):
        order, reasons = _cn_selection(state)
        prbs = {}
        for uid in order:
            need = state.prb_need[uid]
            if need is not None and slicing.book(state, uid, need):
                prbs[uid] = need
            else:
                reasons[uid] = "ran_capacity"
        commit(state, prbs, reasons)


class DomainIsolatedPair(BaseController):
    """RanOnly picks the radio set, CnOnly the core set, independently; only users in both are served."""

    kind = "DomainIsolatedPair"

    def _allocate(self, state):
        ran_set = set(_ran_selection(state.copy()))
        cn_order, cn_reasons = _cn_selection(state.copy())
        cn_set = set(cn_order)
        prbs, reasons = {}, {}
        for uid in state.user_ids:
            if uid in ran_set and uid in cn_set:
                prbs[uid] = state.prb_need[uid]
            elif uid not in ran_set:
                reasons[uid] = "ran_capacity"
            else:
                reasons[uid] = cn_reasons.get(uid, "cn_compute")
        commit(state, prbs, reasons)


class E2EHeuristic(BaseController):
    """Joint admission by combined RAN+CN footprint, plus one swap-based local-search pass.

    footprint = PRB need / cell PRBs + chain compute / total server compute,
    both normalized by *total* capacity so the order is computed once.
    """

    kind = "E2EHeuristic"

    def __init__(self, local_search=True):
        self.local_search = local_search

    def _allocate(self, state):
        rmap = requests_by_rid(state)
        total_compute = state.topology.total_compute or 1.0
        fp = {}
        for uid in state.user_ids:
            need = state.prb_need[uid]
            if need is None:
                continue
            cell = state.cells[state.users[uid].serving_cell]
            fp[uid] = need / cell.total_prbs + state.requests[uid].total_compute / total_compute
        order = sorted(fp, key=lambda uid: (fp[uid], uid))
        reasons = {uid: "ran_capacity" for uid in state.user_ids if uid not in fp}

        for uid in order:
            if len(slicing.admitted_ids(state)) >= _cap(state):
                reasons[uid] = "policy"
                continue
            feas = feasibility_check(state, uid, rmap)
            if feas.joint_feasible:
                admit(state, uid, rmap)
            else:
                reasons[uid] = "ran_capacity" if not feas.ran_feasible else feas.cn_reason

        if self.local_search:
            state = self._local_search(state, order, fp, rmap)

        admitted = slicing.admitted_ids(state)
        commit(state, {uid: state.prb_need[uid] for uid in admitted}, reasons)
        return {"_state": state}

    def _local_search(self, state, order, fp, rmap):
        for r in order:
            admitted = slicing.admitted_ids(state)
            if r in admitted or not admitted:
                continue
            worst = max(admitted, key=lambda uid: (fp[uid], uid))
            trial = state.copy()
            _evict(trial, worst, rmap)
            if not admit(trial, r, rmap):
                continue
            for other in order:
                if other in trial.decisions and trial.decisions[other].admitted:
                    continue
                if len(slicing.admitted_ids(trial)) >= _cap(trial):
                    break
                admit(trial, other, rmap)
            if len(slicing.admitted_ids(trial)) > len(admitted):
                state = trial
        return state


def _evict(state, uid, rmap):
    dropped = slicing.remove_embedding(state.topology, rmap, request_id(uid))
    for rid in [request_id(uid)] + dropped:
        owner = rmap[rid].owner_user
        slicing.unbook(state, owner)
        state.decisions.pop(owner, None)


class ExactOracle(BaseController):
    """Maximum-cardinality SLA-satisfiable admission set by branch and bound.

    Subsets are explored include-first in ascending user id, so the first
    maximum-size set found is the lexicographically smallest one. Within a
    subset, users get their minimum PRBs and chains are embedded first-fit
    in id order: the oracle optimizes which users, not how they are packed.
    """

    kind = "ExactOracle"

    def __init__(self, cap=12):
        self.cap = cap

    def _allocate(self, state):
        check_oracle_size(state, self.cap)
        best = search_max_admission(state, _cap(state))
        commit(state, {uid: state.prb_need[uid] for uid in best}, {})
        return {"oracle_set": tuple(best)}


def search_max_admission(state, admission_cap=float("inf")):
    candidates = sorted(uid for uid, n in state.prb_need.items() if n is not None)
    topo = state.topology.emptied()
    cells = state.cells
    usage = {cid: {} for cid in cells}
    used_compute = [0.0]
    total_compute = topo.total_compute
    best = []
    chosen = []

    def fits_ran(uid):
        u = state.users[uid]
        slot = dict(usage[u.serving_cell])
        slot[u.slice_id] = slot.get(u.slice_id, 0) + state.prb_need[uid]
        return slicing.ran_fits_total(cells[u.serving_cell], slot)

    def optimistic(i):
        # users that could still fit individually into what is left
        n = 0
        for uid in candidates[i:]:
            if used_compute[0] + state.requests[uid].total_compute <= total_compute and fits_ran(uid):
                n += 1
        return n

    def dfs(i):
        nonlocal best
        if len(chosen) > len(best):
            best = list(chosen)
        if i == len(candidates) or len(chosen) >= admission_cap:
            return
        if len(chosen) + optimistic(i) <= len(best):
            return
        uid = candidates[i]
        if fits_ran(uid):
            res = slicing.cn.embed_sfc(topo, state.requests[uid])
            if not isinstance(res, slicing.cn.Infeasible):
                u = state.users[uid]
                slot = usage[u.serving_cell]
                slot[u.slice_id] = slot.get(u.slice_id, 0) + state.prb_need[uid]
                used_compute[0] += state.requests[uid].total_compute
                chosen.append(uid)
                dfs(i + 1)
                chosen.pop()
                used_compute[0] -= state.requests[uid].total_compute
                slot[u.slice_id] -= state.prb_need[uid]
                slicing.cn.release_embedding(topo, res.request_id)
        dfs(i + 1)

    dfs(0)
    return best


CONTROLLERS = {
    cls.kind: cls for cls in (RoundRobin, RanOnly, CnOnly, DomainIsolatedPair, E2EHeuristic, ExactOracle)
}


def make_controller(kind, **params):
    if kind == "AgentDriven":
        from .closed_loop import AgentDriven

        return AgentDriven(**params)
    try:
        return CONTROLLERS[kind](**params)
    except KeyError:
        raise ValueError(f"unknown controller kind {kind!r}") from None
