"""Runs, sweeps and oracle checks, plus their on-disk artifacts.

Every scenario is generated from ``(config, n_users, seed)`` alone, so all
controllers in a sweep see the same users for a given seed (paired
comparison), and a run is reproduced by its config digest and seed.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .config import config_from_dict
from .controllers import make_controller
from .errors import NetsliceError
from .slicing import generate_scenario

log = logging.getLogger(__name__)

HEURISTICS = ("RoundRobin", "RanOnly", "CnOnly", "DomainIsolatedPair", "E2EHeuristic")
SUMMARY_COLUMNS = ("n_users", "controller", "seed", "satisfied_total", "ratio")


def scenario_id(config, n_users, seed):
    return f"{config.digest()[:8]}-n{n_users:03d}-s{seed}"


def build_scenario(config, n_users, seed):
    return generate_scenario(n_users, config.slice_counts(n_users), seed, config.scenario_config())


def controller_for(config, kind, sid=None, reasoner="heuristic", script=None, transport=None):
    if kind == "ExactOracle":
        return make_controller(kind, cap=config.experiment.oracle_cap)
    if kind == "AgentDriven":
        return make_controller(
            kind, reasoner=reasoner, episode_budget=config.experiment.episode_budget, script=script,
            agent=config.agent, policy=config.policy, reasoner_config=config.reasoner, transport=transport,
            scenario_id=sid,
        )
    return make_controller(kind)


@dataclass
class RunRecord:
    config_digest: str
    scenario_id: str
    controller: str
    seed: int
    n_users: int
    sla_report: dict = None
    summary: dict = None  # AllocationResult summary; runtime_ms is the only wall-clock field
    trace_file: str = None
    audit_file: str = None
    failed: bool = False
    error: str = None

    def to_json_line(self):
        return json.dumps(asdict(self), sort_keys=False)


@dataclass
class RunOutput:
    record: RunRecord
    result: object = field(default=None, repr=False)


def run_one(config, kind, n_users, seed, reasoner="heuristic", script=None, transport=None, output_dir=None):
    """One scenario x controller x seed. Failures are captured in the record, not raised."""
    sid = scenario_id(config, n_users, seed)
    rec = RunRecord(config.digest(), sid, kind, seed, n_users)
    try:
        state = build_scenario(config, n_users, seed)
        ctrl = controller_for(config, kind, sid, reasoner, script, transport)
        result = ctrl.allocate(state)
    except NetsliceError as exc:
        rec.failed, rec.error = True, f"{type(exc).__name__}: {exc}"
        log.warning("run %s/%s failed: %s", sid, kind, rec.error)
        return RunOutput(rec)
    rec.sla_report = result.report.to_dict()
    rec.summary = result.summary()
    if output_dir is not None and "trace" in result.extras:
        rec.trace_file, rec.audit_file = write_agent_artifacts(result, output_dir, sid, kind)
    return RunOutput(rec, result)


def write_agent_artifacts(result, output_dir, sid, kind):
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace_name = f"trace-{sid}-{kind}.jsonl"
    audit_name = f"audit-{sid}-{kind}.jsonl"
    (out / trace_name).write_text(result.extras["trace"].to_jsonl())
    (out / audit_name).write_text("".join(r.to_json_line() + "\n" for r in result.extras["audit"]))
    return trace_name, audit_name


def _sweep_task(args):
    cfg_dict, kind, n, seed, output_dir = args
    out = run_one(config_from_dict(cfg_dict), kind, n, seed, output_dir=output_dir)
    return out.record


def sweep(config, workers=1, output_dir=None, users=None, controllers=None, seeds=None):
    """Cartesian product users x controllers x seeds, in that nesting order; returns RunRecords."""
    users = list(config.scenario.sweep_users if users is None else users)
    controllers = list(config.experiment.controllers if controllers is None else controllers)
    seeds = list(config.experiment.seed_list() if seeds is None else seeds)
    tasks = [(n, k, s) for n in users for k in controllers for s in seeds]
    if workers <= 1:
        return [run_one(config, k, n, s, output_dir=output_dir).record for n, k, s in tasks]
    cfg_dict = config.to_dict()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_task, [(cfg_dict, k, n, s, output_dir) for n, k, s in tasks]))


def summary_rows(records):
    rows = []
    for r in records:
        if r.failed:
            continue
        rows.append({
            "n_users": r.n_users,
            "controller": r.controller,
            "seed": r.seed,
            "satisfied_total": r.sla_report["satisfied_total"],
            "ratio": r.sla_report["ratio"],
        })
    return rows


def write_summary_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in summary_rows(records):
            w.writerow(row)
    return path


def write_records(records, path):
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json_line() + "\n")
    return path


def mean_ratios(records):
    """{controller: {n_users: mean ratio}} over successful runs."""
    acc = {}
    for row in summary_rows(records):
        acc.setdefault(row["controller"], {}).setdefault(row["n_users"], []).append(row["ratio"])
    return {k: {n: sum(v) / len(v) for n, v in sorted(d.items())} for k, d in acc.items()}


# -- oracle check ----------------------------------------------------------


@dataclass
class OracleCheckRow:
    seed: int
    n_users: int
    controller: str
    satisfied_total: int
    oracle_total: int

    @property
    def gap(self):
        return self.oracle_total - self.satisfied_total


@dataclass
class OracleCheckReport:
    rows: list = field(default_factory=list)
    counterexamples: list = field(default_factory=list)

    @property
    def sound(self):
        return not self.counterexamples


def oracle_check(config, max_users, seeds=None, controllers=None):
    """Run every heuristic and the exact oracle per seed; collect soundness counterexamples.

    ``controllers`` maps names to zero-argument factories (defaults to the
    five heuristics), which lets tests plant a broken one.
    """
    from .controllers import ExactOracle

    seeds = list(config.experiment.seed_list() if seeds is None else seeds)
    factories = controllers or {k: (lambda k=k: make_controller(k)) for k in HEURISTICS}
    report = OracleCheckReport()
    for seed in seeds:
        state = build_scenario(config, max_users, seed)
        oracle = ExactOracle(cap=config.experiment.oracle_cap).allocate(state)
        for name, factory in factories.items():
            res = factory().allocate(state)
            report.rows.append(OracleCheckRow(seed, max_users, name, res.satisfied_total, oracle.satisfied_total))
            if res.satisfied_total > oracle.satisfied_total:
                report.counterexamples.append({
                    "scenario_id": scenario_id(config, max_users, seed),
                    "seed": seed,
                    "n_users": max_users,
                    "slice_mix": config.slice_counts(max_users),
                    "controller": name,
                    "satisfied_total": res.satisfied_total,
                    "oracle_total": oracle.satisfied_total,
                    "oracle_set": list(oracle.extras["oracle_set"]),
                    "controller_admitted": [d.user_id for d in res.decisions if d.admitted],
                    "config": config.to_dict(),
                })
    return report
