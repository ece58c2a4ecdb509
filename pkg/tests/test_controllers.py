import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from netslice import ran, slicing
from netslice.config import ScenarioConfig, config_from_dict
from netslice.controllers import (
    CnOnly, DomainIsolatedPair, E2EHeuristic, ExactOracle, RanOnly, RoundRobin, make_controller,
)
from netslice.errors import ConfigurationError, OracleCapError
from conftest import scenario
from oracles import unpruned_max_admission

HEURISTICS = (RoundRobin, RanOnly, CnOnly, DomainIsolatedPair, E2EHeuristic)
TIGHT = config_from_dict({"radio": {"total_prbs": 30}, "cn": {"server_compute": 20.0}})


def one_cell(total_prbs, rate_floor=1e5):
    slices = {"URLLC": slicing.SliceSpec("URLLC", "URLLC", rate_floor, 5.0, (2, 2), 1e5)}
    region = ran.RegionSpec(1000.0, 1000.0, ((500.0, 500.0),))
    return ScenarioConfig(region=region, total_prbs=total_prbs, slices=slices, server_compute=1000.0)


@pytest.mark.parametrize("cls", HEURISTICS + (ExactOracle,))
def test_decisions_cover_every_user_and_invariants_hold(cls):
    for seed in range(3):
        state = scenario(10, seed)
        res = cls().allocate(state)
        assert [d.user_id for d in res.decisions] == state.user_ids
        assert res.admitted_total >= res.satisfied_total
        slicing.check_invariants(res.state)
        # the caller's scenario is left untouched
        assert not state.decisions and not state.topology.embeddings


@pytest.mark.parametrize("cls", HEURISTICS)
def test_deterministic(cls):
    state = scenario(40, 11)
    a, b = cls().allocate(state), cls().allocate(state)
    assert a.decisions == b.decisions
    assert a.state.digest() == b.state.digest()


def test_round_robin_single_user_gets_whole_cell():
    state = slicing.generate_scenario(1, {"URLLC": 1}, 0, one_cell(100))
    res = RoundRobin().allocate(state)
    assert res.decisions[0].admitted and res.decisions[0].assigned_prbs == 100


def test_round_robin_min_one_share():
    state = slicing.generate_scenario(200, {"URLLC": 200}, 0, one_cell(100))
    res = RoundRobin().allocate(state)
    assert res.admitted_total == 100
    assert all(d.assigned_prbs == 1 for d in res.decisions if d.admitted)


def test_round_robin_not_better_than_e2e_mostly():
    wins = sum(
        RoundRobin().allocate(scenario(40, s)).satisfied_total <= E2EHeuristic().allocate(scenario(40, s)).satisfied_total
        for s in range(100)
    )
    assert wins >= 90


def test_ran_only_and_cn_only_diverge_when_radio_binds():
    cfg = config_from_dict({"radio": {"total_prbs": 60}, "cn": {"server_compute": 1000.0},
                            "scenario": {"slice_mix": {"eMBB": 1.0}}})
    diffs = [
        RanOnly().allocate(scenario(30, s, cfg)).satisfied_total - CnOnly().allocate(scenario(30, s, cfg)).satisfied_total
        for s in range(10)
    ]
    assert any(diffs) and min(diffs) >= 0


def test_unconstrained_everyone_matches_oracle():
    cfg = config_from_dict({"radio": {"total_prbs": 1000}, "cn": {"server_compute": 1000.0}})
    for s in range(5):
        state = scenario(8, s, cfg)
        best = ExactOracle().allocate(state).satisfied_total
        assert RanOnly().allocate(state).satisfied_total == best
        assert CnOnly().allocate(state).satisfied_total == best
        assert E2EHeuristic().allocate(state).satisfied_total == best == 8


def test_e2e_all_feasible_admits_all():
    state = scenario(6, 2)
    assert E2EHeuristic().allocate(state).satisfied_total == 6


@pytest.mark.parametrize("cfg", [None, TIGHT], ids=["default", "tight"])
def test_e2e_close_to_oracle(cfg):
    within, n_seeds = 0, 200
    for seed in range(n_seeds):
        state = scenario(6 + seed % 5, seed, cfg)
        best = ExactOracle().allocate(state).satisfied_total
        got = E2EHeuristic().allocate(state).satisfied_total
        assert got <= best
        within += best - got <= 1
    assert within >= 0.95 * n_seeds


def test_e2e_beats_isolated_pair_at_forty_users():
    seeds = range(1, 31)
    e2e = np.mean([E2EHeuristic().allocate(scenario(40, s)).satisfied_total for s in seeds])
    dip = np.mean([DomainIsolatedPair().allocate(scenario(40, s)).satisfied_total for s in seeds])
    assert e2e > dip


def test_local_search_never_hurts():
    for s in range(20):
        state = scenario(40, s, TIGHT)
        assert E2EHeuristic().allocate(state).satisfied_total >= E2EHeuristic(local_search=False).allocate(state).satisfied_total


def test_oracle_one_prb_two_users():
    state = slicing.generate_scenario(2, {"URLLC": 2}, 3, one_cell(1))
    assert all(n == 1 for n in state.prb_need.values())
    res = ExactOracle().allocate(state)
    assert [d.user_id for d in res.decisions if d.admitted] == ["URLLC-000"]


def test_oracle_two_users_ample():
    assert ExactOracle().allocate(scenario(2, 0)).satisfied_total == 2


@pytest.mark.parametrize("cfg", [None, TIGHT], ids=["default", "tight"])
def test_oracle_matches_unpruned_enumeration(cfg):
    for seed in range(30):
        state = scenario(8, seed, cfg)
        res = ExactOracle().allocate(state)
        assert list(res.extras["oracle_set"]) == unpruned_max_admission(state)
        assert res.satisfied_total == len(res.extras["oracle_set"])


def test_oracle_respects_admission_cap():
    state = scenario(8, 1)
    state.policy["admission_cap"] = 3
    res = ExactOracle().allocate(state)
    assert res.satisfied_total == 3
    assert list(res.extras["oracle_set"]) == unpruned_max_admission(state, 3)
    for cls in HEURISTICS:
        assert cls().allocate(state).admitted_total <= 3


def test_oracle_refuses_above_cap():
    with pytest.raises(OracleCapError):
        ExactOracle(cap=5).allocate(scenario(6, 0))


def test_soundness_small_sweep():
    for seed in range(40):
        state = scenario(10, seed, TIGHT)
        best = ExactOracle().allocate(state).satisfied_total
        for cls in HEURISTICS:
            assert cls().allocate(state).satisfied_total <= best


def test_estimator_protocol():
    est = E2EHeuristic(local_search=False)
    assert est.get_params() == {"local_search": False}
    twin = clone(est).set_params(local_search=True)
    assert twin.local_search and not est.local_search
    with pytest.raises(NotFittedError):
        est.predict()
    state = scenario(12, 4)
    mask = est.predict(state)
    assert mask.dtype == bool and len(mask) == 12
    assert mask.sum() == est.result_.admitted_total
    assert est.score(state) == est.result_.satisfied_total
    assert ExactOracle(cap=9).get_params() == {"cap": 9}


def test_fit_requires_fresh_state():
    res = E2EHeuristic().allocate(scenario(5, 0))
    with pytest.raises(ConfigurationError):
        E2EHeuristic().fit(res.state)
    with pytest.raises(TypeError):
        E2EHeuristic().fit("not a state")


def test_make_controller():
    assert isinstance(make_controller("RoundRobin"), RoundRobin)
    assert make_controller("ExactOracle", cap=4).cap == 4
    with pytest.raises(ValueError):
        make_controller("Nope")
