"""Experiment configuration: TOML documents mapped onto dataclasses.

Unknown keys and out-of-range values raise :class:`ConfigurationError`
naming the dotted key path, e.g. ``cn.fat_tree_k``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import ran
from .errors import ConfigurationError
from .slicing import SliceSpec

CONTROLLER_KINDS = (
    "RoundRobin",
    "RanOnly",
    "CnOnly",
    "DomainIsolatedPair",
    "E2EHeuristic",
    "ExactOracle",
    "AgentDriven",
)


@dataclass
class ScenarioSection:
    n_users: int = 40
    sweep_users: list = field(default_factory=lambda: [10, 20, 30, 40, 50, 60, 70, 80])
    slice_mix: dict = field(default_factory=lambda: {"eMBB": 1.0, "URLLC": 1.0})
    poisson_users: bool = False

    def validate(self, path):
        _require(self.n_users >= 0, path, "n_users", self.n_users, "must be >= 0")
        _require(
            all(isinstance(n, int) and n >= 0 for n in self.sweep_users),
            path, "sweep_users", self.sweep_users, "must be non-negative integers",
        )
        _require(len(self.slice_mix) > 0, path, "slice_mix", self.slice_mix, "must name at least one slice")
        _require(
            all(w >= 0 for w in self.slice_mix.values()) and sum(self.slice_mix.values()) > 0,
            path, "slice_mix", self.slice_mix, "weights must be non-negative with a positive sum",
        )


@dataclass
class RegionSection:
    width_m: float = 1000.0
    height_m: float = 1000.0
    cells: list = field(default_factory=lambda: [[250.0, 250.0], [750.0, 250.0], [250.0, 750.0], [750.0, 750.0]])

    def validate(self, path):
        _require(self.width_m > 0, path, "width_m", self.width_m, "must be positive")
        _require(self.height_m > 0, path, "height_m", self.height_m, "must be positive")
        _require(len(self.cells) > 0, path, "cells", self.cells, "needs at least one cell")
        for c in self.cells:
            _require(
                len(c) == 2 and 0 <= c[0] <= self.width_m and 0 <= c[1] <= self.height_m,
                path, "cells", self.cells, "every cell must be an [x, y] pair inside the region",
            )


@dataclass
class RadioSection:
    tx_power_dbm: float = 43.0
    total_prbs: int = 100
    prb_bandwidth_hz: float = 180e3
    noise_density_dbm_hz: float = -174.0
    noise_figure_db: float = 7.0
    pl_d0_db: float = 40.0
    d0_m: float = 1.0
    exponent: float = 3.5
    shadowing_sigma_db: float = 0.0

    def validate(self, path):
        _require(math.isfinite(self.tx_power_dbm), path, "tx_power_dbm", self.tx_power_dbm, "must be finite")
        _require(self.total_prbs >= 1, path, "total_prbs", self.total_prbs, "must be >= 1")
        _require(self.prb_bandwidth_hz > 0, path, "prb_bandwidth_hz", self.prb_bandwidth_hz, "must be positive")
        _require(self.noise_density_dbm_hz < 0, path, "noise_density_dbm_hz", self.noise_density_dbm_hz, "must be < 0")
        _require(self.d0_m > 0, path, "d0_m", self.d0_m, "must be positive")
        _require(self.exponent > 0, path, "exponent", self.exponent, "must be positive")
        _require(self.shadowing_sigma_db >= 0, path, "shadowing_sigma_db", self.shadowing_sigma_db, "must be >= 0")


@dataclass
class CnSection:
    fat_tree_k: int = 4
    server_compute: float = 60.0
    link_capacity_core_bps: float = 10e9
    link_capacity_aggregation_bps: float = 5e9
    link_capacity_edge_bps: float = 1e9
    link_delay_ms: float = 0.1
    vnf_compute_min: int = 5
    vnf_compute_max: int = 15
    vnf_processing_ms: float = 0.5
    packet_size_bytes: int = 1500
    vnf_compute_mode: str = "per_request"
    server_compute_overrides: dict = field(default_factory=dict)  # server id -> compute

    def validate(self, path):
        n_servers = self.fat_tree_k ** 3 // 4 if isinstance(self.fat_tree_k, int) else 0
        for sid, cap in self.server_compute_overrides.items():
            ok = sid.startswith("s") and sid[1:].isdigit() and int(sid[1:]) < n_servers
            _require(ok, path, "server_compute_overrides", sid, "unknown server id")
            _require(
                isinstance(cap, (int, float)) and cap >= 0, path, f"server_compute_overrides.{sid}", cap,
                "must be a number >= 0",
            )
        _require(
            self.vnf_compute_mode in ("per_request", "per_vnf"), path, "vnf_compute_mode",
            self.vnf_compute_mode, "must be per_request or per_vnf",
        )
        k = self.fat_tree_k
        _require(isinstance(k, int) and k >= 2 and k % 2 == 0, path, "fat_tree_k", k, "must be an even integer >= 2")
        _require(self.server_compute >= 0, path, "server_compute", self.server_compute, "must be >= 0")
        for name in ("link_capacity_core_bps", "link_capacity_aggregation_bps", "link_capacity_edge_bps"):
            _require(getattr(self, name) > 0, path, name, getattr(self, name), "must be positive")
        _require(self.link_delay_ms >= 0, path, "link_delay_ms", self.link_delay_ms, "must be >= 0")
        _require(self.vnf_compute_min >= 1, path, "vnf_compute_min", self.vnf_compute_min, "must be >= 1")
        _require(
            self.vnf_compute_max >= self.vnf_compute_min, path, "vnf_compute_max", self.vnf_compute_max,
            "must be >= vnf_compute_min",
        )
        _require(self.vnf_processing_ms >= 0, path, "vnf_processing_ms", self.vnf_processing_ms, "must be >= 0")
        _require(self.packet_size_bytes > 0, path, "packet_size_bytes", self.packet_size_bytes, "must be positive")


@dataclass
class SliceSection:
    kind: str = "eMBB"
    rate_floor_bps: float = 50e6
    latency_budget_ms: float = 100.0
    chain_min: int = 4
    chain_max: int = 6
    flow_bandwidth_bps: float = 50e6

    def validate(self, path):
        try:
            self.to_spec("check")
        except ConfigurationError as exc:
            raise ConfigurationError(str(exc), path, dataclasses.asdict(self)) from None

    def to_spec(self, slice_id):
        return SliceSpec(
            slice_id, self.kind, self.rate_floor_bps, self.latency_budget_ms,
            (self.chain_min, self.chain_max), self.flow_bandwidth_bps,
        )


def _default_slices():
    return {
        "eMBB": SliceSection("eMBB", 50e6, 100.0, 4, 6, 50e6),
        "URLLC": SliceSection("URLLC", 2e6, 5.0, 2, 3, 2e6),
    }


@dataclass
class ExperimentSection:
    controllers: list = field(default_factory=lambda: ["RoundRobin", "DomainIsolatedPair", "E2EHeuristic"])
    seeds: list = field(default_factory=list)
    seed_base: int = 1
    seed_count: int = 30
    episode_budget: int = 12
    oracle_cap: int = 12
    output_dir: str = "runs"
    workers: int = 1

    def validate(self, path):
        for c in self.controllers:
            _require(c in CONTROLLER_KINDS, path, "controllers", self.controllers, f"unknown controller {c!r}")
        _require(
            len(self.seeds) > 0 or self.seed_count >= 1, path, "seed_count", self.seed_count,
            "seeds must be non-empty",
        )
        _require(self.episode_budget >= 1, path, "episode_budget", self.episode_budget, "must be >= 1")
        _require(self.oracle_cap >= 0, path, "oracle_cap", self.oracle_cap, "must be >= 0")
        _require(self.workers >= 1, path, "workers", self.workers, "must be >= 1")

    def seed_list(self):
        return list(self.seeds) if self.seeds else list(range(self.seed_base, self.seed_base + self.seed_count))


@dataclass
class PolicySection:
    prb_reservation_min_pct: float = 0.0
    prb_reservation_max_pct: float = 100.0
    prb_reservation_max_delta_pct: float = 20.0
    core_bandwidth_min_factor: float = 0.1
    core_bandwidth_max_factor: float = 4.0
    core_bandwidth_max_delta_gbps: float = 2.0
    cn_compute_min_factor: float = 0.1
    cn_compute_max_factor: float = 4.0
    cn_compute_max_delta_units: float = 100.0
    admission_cap_min: int = 0
    admission_cap_max: int = 10000
    admission_cap_max_delta: int = 10000
    max_directives: int = 5

    def validate(self, path):
        pairs = [
            ("prb_reservation_min_pct", "prb_reservation_max_pct"),
            ("core_bandwidth_min_factor", "core_bandwidth_max_factor"),
            ("cn_compute_min_factor", "cn_compute_max_factor"),
            ("admission_cap_min", "admission_cap_max"),
        ]
        for lo, hi in pairs:
            _require(getattr(self, lo) <= getattr(self, hi), path, hi, getattr(self, hi), f"must be >= {lo}")
        for name in (
            "prb_reservation_max_delta_pct", "core_bandwidth_max_delta_gbps",
            "cn_compute_max_delta_units", "admission_cap_max_delta", "max_directives",
        ):
            _require(getattr(self, name) >= 0, path, name, getattr(self, name), "must be >= 0")


@dataclass
class AgentSection:
    objective: str = (
        "Maximize the number of SLA-satisfied users across the eMBB and URLLC slices "
        "by coordinating RAN and CN resources."
    )
    memory_window: int = 8
    context_tokens: int = 1500
    retrieve_k: int = 3
    prb_high_watermark: float = 0.9
    latency_watermark_ms: float = 3.0
    prb_step_pct: float = 10.0
    bandwidth_step_gbps: float = 1.0

    def validate(self, path):
        _require(self.memory_window >= 1, path, "memory_window", self.memory_window, "must be >= 1")
        _require(self.context_tokens >= 50, path, "context_tokens", self.context_tokens, "must be >= 50")
        _require(self.retrieve_k >= 0, path, "retrieve_k", self.retrieve_k, "must be >= 0")
        _require(0 < self.prb_high_watermark <= 1, path, "prb_high_watermark", self.prb_high_watermark, "must be in (0, 1]")
        _require(self.latency_watermark_ms > 0, path, "latency_watermark_ms", self.latency_watermark_ms, "must be positive")


@dataclass
class ReasonerSection:
    endpoint: str = ""
    model: str = "external-llm"
    timeout_s: float = 30.0
    max_retries: int = 2
    temperature: float = 0.0
    max_request_chars: int = 16000

    def validate(self, path):
        _require(self.timeout_s > 0, path, "timeout_s", self.timeout_s, "must be positive")
        _require(self.max_retries >= 0, path, "max_retries", self.max_retries, "must be >= 0")
        _require(self.max_request_chars > 0, path, "max_request_chars", self.max_request_chars, "must be positive")


@dataclass
class ScenarioConfig:
    """Everything :func:`netslice.slicing.generate_scenario` needs, in model units."""

    region: ran.RegionSpec = None
    pathloss: ran.PathLossParams = field(default_factory=ran.PathLossParams)
    radio: ran.RadioParams = field(default_factory=ran.RadioParams)
    tx_power: float = 43.0
    total_prbs: int = 100
    prb_bandwidth: float = 180e3
    fat_tree_k: int = 4
    server_compute: float = 60.0
    link_caps: dict = field(default_factory=lambda: {"core": 10e9, "aggregation": 5e9, "edge": 1e9})
    link_delay: float = 0.1
    packet_size_bytes: int = 1500
    vnf_compute_min: int = 5
    vnf_compute_max: int = 15
    vnf_processing_ms: float = 0.5
    vnf_compute_mode: str = "per_request"
    server_compute_overrides: dict = field(default_factory=dict)
    slices: dict = None
    poisson_users: bool = False

    def __post_init__(self):
        if self.region is None:
            self.region = ExperimentConfig().scenario_config().region
        if self.slices is None:
            self.slices = {sid: s.to_spec(sid) for sid, s in _default_slices().items()}


SECTIONS = {
    "scenario": ScenarioSection,
    "region": RegionSection,
    "radio": RadioSection,
    "cn": CnSection,
    "experiment": ExperimentSection,
    "policy": PolicySection,
    "agent": AgentSection,
    "reasoner": ReasonerSection,
}


@dataclass
class ExperimentConfig:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    region: RegionSection = field(default_factory=RegionSection)
    radio: RadioSection = field(default_factory=RadioSection)
    cn: CnSection = field(default_factory=CnSection)
    slices: dict = field(default_factory=_default_slices)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    policy: PolicySection = field(default_factory=PolicySection)
    agent: AgentSection = field(default_factory=AgentSection)
    reasoner: ReasonerSection = field(default_factory=ReasonerSection)

    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate(name)
        _require(len(self.slices) > 0, "", "slices", self.slices, "at least one slice required")
        for sid, s in self.slices.items():
            s.validate(f"slices.{sid}")
        for sid in self.scenario.slice_mix:
            _require(sid in self.slices, "scenario", "slice_mix", self.scenario.slice_mix, f"unknown slice {sid!r}")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        # execution knobs do not change results, so they stay out of the identity
        data = self.to_dict()
        for key in ("workers", "output_dir"):
            data["experiment"].pop(key)
        blob = json.dumps(data, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def scenario_config(self):
        r, c = self.radio, self.cn
        return ScenarioConfig(
            region=ran.RegionSpec(self.region.width_m, self.region.height_m, tuple(map(tuple, self.region.cells))),
            pathloss=ran.PathLossParams(r.pl_d0_db, r.d0_m, r.exponent, r.shadowing_sigma_db),
            radio=ran.RadioParams(r.noise_density_dbm_hz, r.noise_figure_db),
            tx_power=r.tx_power_dbm,
            total_prbs=r.total_prbs,
            prb_bandwidth=r.prb_bandwidth_hz,
            fat_tree_k=c.fat_tree_k,
            server_compute=c.server_compute,
            link_caps={
                "core": c.link_capacity_core_bps,
                "aggregation": c.link_capacity_aggregation_bps,
                "edge": c.link_capacity_edge_bps,
            },
            link_delay=c.link_delay_ms,
            packet_size_bytes=c.packet_size_bytes,
            vnf_compute_min=c.vnf_compute_min,
            vnf_compute_max=c.vnf_compute_max,
            vnf_processing_ms=c.vnf_processing_ms,
            vnf_compute_mode=c.vnf_compute_mode,
            server_compute_overrides=dict(c.server_compute_overrides),
            slices={sid: s.to_spec(sid) for sid, s in self.slices.items()},
            poisson_users=self.scenario.poisson_users,
        )

    def slice_counts(self, n_users):
        return split_counts(n_users, self.scenario.slice_mix)


def split_counts(n, weights):
    """Largest-remainder split of ``n`` users by slice weight; ties go to the first slice id."""
    total = sum(weights.values())
    ids = sorted(weights)
    exact = {s: n * weights[s] / total for s in ids}
    counts = {s: int(math.floor(exact[s])) for s in ids}
    left = n - sum(counts.values())
    for s in sorted(ids, key=lambda s: (-(exact[s] - counts[s]), s))[:left]:
        counts[s] += 1
    return counts


def _require(ok, section, key, value, message):
    if not ok:
        path = f"{section}.{key}" if section else key
        raise ConfigurationError(message, path, value)


def _coerce(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigurationError("expected a table", path, data)
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigurationError("unknown key", f"{path}.{key}", value)
        default = cls()
        expected = type(getattr(default, key))
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if expected is not type(value) and not (expected is list and isinstance(value, list)):
            raise ConfigurationError(f"expected {expected.__name__}", f"{path}.{key}", value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data):
    cfg = ExperimentConfig()
    for key, value in data.items():
        if key == "slices":
            if not isinstance(value, dict):
                raise ConfigurationError("expected a table of slices", "slices", value)
            cfg.slices = {sid: _coerce(SliceSection, v, f"slices.{sid}") for sid, v in value.items()}
        elif key in SECTIONS:
            setattr(cfg, key, _coerce(SECTIONS[key], value, key))
        else:
            raise ConfigurationError("unknown section", key, value)
    return cfg.validate()


def load_config(path):
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError("config file not found", "config", str(path)) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"TOML syntax error: {exc}", "config", str(path)) from None
    return config_from_dict(data)
