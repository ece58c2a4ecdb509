from pathlib import Path

import pytest

from netslice.config import ExperimentConfig, config_from_dict, load_config, split_counts
from netslice.errors import ConfigurationError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("name", ["default.toml", "cn_bottleneck.toml", "healthy.toml"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.digest() == load_config(CONFIGS / name).digest()


def test_default_toml_matches_builtin_defaults():
    cfg = load_config(CONFIGS / "default.toml")
    builtin = ExperimentConfig().validate()
    assert cfg.scenario_config().server_compute == builtin.scenario_config().server_compute
    assert cfg.cn == builtin.cn
    assert cfg.slices == builtin.slices


@pytest.mark.parametrize(
    "doc, key",
    [
        ({"cn": {"fat_tree_k": 3}}, "cn.fat_tree_k"),
        ({"cn": {"fat_tree_k": 0}}, "cn.fat_tree_k"),
        ({"cn": {"bogus": 1}}, "cn.bogus"),
        ({"nope": {}}, "nope"),
        ({"cn": {"server_compute": -1.0}}, "cn.server_compute"),
        ({"cn": {"vnf_compute_mode": "odd"}}, "cn.vnf_compute_mode"),
        ({"cn": {"server_compute_overrides": {"s099": 1.0}}}, "cn.server_compute_overrides"),
        ({"scenario": {"n_users": "forty"}}, "scenario.n_users"),
        ({"scenario": {"slice_mix": {"mMTC": 1.0}}}, "scenario.slice_mix"),
        ({"experiment": {"controllers": ["Magic"]}}, "experiment.controllers"),
        ({"experiment": {"seeds": [], "seed_count": 0}}, "experiment.seed_count"),
        ({"policy": {"core_bandwidth_min_factor": 5.0}}, "policy.core_bandwidth_max_factor"),
        ({"agent": {"prb_high_watermark": 1.5}}, "agent.prb_high_watermark"),
        ({"reasoner": {"max_retries": -1}}, "reasoner.max_retries"),
    ],
)
def test_invalid_documents_name_the_key(doc, key):
    with pytest.raises(ConfigurationError) as info:
        config_from_dict(doc)
    assert info.value.key == key
    assert key in str(info.value)


def test_int_promoted_to_float():
    cfg = config_from_dict({"cn": {"server_compute": 80}})
    assert cfg.cn.server_compute == 80.0


def test_missing_file_and_bad_toml(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[cn\nfat_tree_k = 4")
    with pytest.raises(ConfigurationError):
        load_config(bad)


def test_seed_list():
    cfg = ExperimentConfig()
    assert cfg.experiment.seed_list() == list(range(1, 31))
    cfg.experiment.seeds = [7, 3]
    assert cfg.experiment.seed_list() == [7, 3]


@pytest.mark.parametrize(
    "n, weights, want",
    [
        (40, {"eMBB": 1.0, "URLLC": 1.0}, {"eMBB": 20, "URLLC": 20}),
        (5, {"eMBB": 1.0, "URLLC": 1.0}, {"eMBB": 2, "URLLC": 3}),  # ties: "URLLC" sorts first
        (10, {"eMBB": 0.0, "URLLC": 1.0}, {"eMBB": 0, "URLLC": 10}),
        (7, {"a": 1.0, "b": 2.0}, {"a": 2, "b": 5}),
    ],
)
def test_split_counts(n, weights, want):
    assert split_counts(n, weights) == want


def test_digest_tracks_content():
    a = ExperimentConfig()
    b = ExperimentConfig()
    assert a.digest() == b.digest()
    b.cn.server_compute = 61.0
    assert a.digest() != b.digest()


def test_round_trip_through_dict():
    cfg = load_config(CONFIGS / "cn_bottleneck.toml")
    again = config_from_dict(cfg.to_dict())
    assert again.digest() == cfg.digest()


def test_digest_ignores_execution_knobs():
    a = ExperimentConfig()
    b = ExperimentConfig()
    b.experiment.workers = 8
    b.experiment.output_dir = "elsewhere"
    assert a.digest() == b.digest()
