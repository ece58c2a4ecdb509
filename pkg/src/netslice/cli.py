"""Command-line entry point: ``netslice simulate|sweep|oracle-check|agent-run``.

Exit codes: 0 success, 1 configuration error, 2 soundness violation,
3 partial sweep failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment
from .config import CONTROLLER_KINDS, ExperimentConfig, load_config
from .errors import ConfigurationError, NetsliceError

EXIT_OK, EXIT_CONFIG, EXIT_UNSOUND, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("netslice")


def _common(p):
    p.add_argument("--config", help="TOML experiment config (defaults built in when omitted)")
    p.add_argument("--output-dir", help="where artifacts go (default: experiment.output_dir)")
    p.add_argument("--workers", type=int, default=None, help="worker processes for sweeps")
    p.add_argument("--verbose", "-v", action="store_true", help="debug logging")


def build_parser():
    parser = argparse.ArgumentParser(prog="netslice", description="RAN-CN network slicing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="one scenario x controller x seed")
    _common(sim)
    sim.add_argument("--controller", choices=CONTROLLER_KINDS, default="E2EHeuristic")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--n-users", type=int, default=None)

    sw = sub.add_parser("sweep", help="users x controllers x seeds, summary CSV")
    _common(sw)

    oc = sub.add_parser("oracle-check", help="heuristics vs the exact oracle on small scenarios")
    _common(oc)
    oc.add_argument("--max-users", type=int, default=8)

    ar = sub.add_parser("agent-run", help="one closed-loop agent episode")
    _common(ar)
    ar.add_argument("--reasoner", choices=("scripted", "heuristic", "external"), default="heuristic")
    ar.add_argument("--script", help="scripted reasoner outputs, one block per call, separated by '---' lines")
    ar.add_argument("--seed", type=int, default=None)
    ar.add_argument("--n-users", type=int, default=None)
    return parser


def _load(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigurationError("must be >= 1", "--workers", args.workers)
        cfg.experiment.workers = args.workers
    out = Path(args.output_dir or cfg.experiment.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _first_seed(cfg, seed):
    return cfg.experiment.seed_list()[0] if seed is None else seed


def cmd_simulate(args):
    cfg, out = _load(args)
    n = cfg.scenario.n_users if args.n_users is None else args.n_users
    seed = _first_seed(cfg, args.seed)
    run = experiment.run_one(cfg, args.controller, n, seed, output_dir=out)
    experiment.write_records([run.record], out / "runs.jsonl")
    if run.record.failed:
        if "OracleCapError" in run.record.error:
            raise ConfigurationError(run.record.error, "experiment.oracle_cap", cfg.experiment.oracle_cap)
        print(f"run failed: {run.record.error}", file=sys.stderr)
        return EXIT_PARTIAL
    (out / "sla_reports.jsonl").write_text(run.result.report.to_json_line() + "\n")
    print(f"{run.record.scenario_id} {args.controller}: satisfied {run.result.satisfied_total}/{n}")
    return EXIT_OK


def cmd_sweep(args):
    cfg, out = _load(args)
    if not cfg.scenario.sweep_users:
        raise ConfigurationError("sweep list is empty", "scenario.sweep_users", [])
    records = experiment.sweep(cfg, workers=cfg.experiment.workers, output_dir=out)
    experiment.write_records(records, out / "runs.jsonl")
    experiment.write_summary_csv(records, out / "summary.csv")
    failed = [r for r in records if r.failed]
    for kind, by_n in sorted(experiment.mean_ratios(records).items()):
        print(kind, " ".join(f"{n}:{v:.3f}" for n, v in by_n.items()))
    if failed:
        print(f"{len(failed)} of {len(records)} runs failed; see runs.jsonl", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_oracle_check(args, controllers=None):
    cfg, out = _load(args)
    cap = cfg.experiment.oracle_cap
    if not 0 <= args.max_users <= cap:
        raise ConfigurationError(f"exceeds the oracle cap {cap}", "--max-users", args.max_users)
    report = experiment.oracle_check(cfg, args.max_users, controllers=controllers)
    with open(out / "oracle_check.csv", "w") as fh:
        fh.write("n_users,seed,controller,satisfied_total,oracle_total,gap\n")
        for r in report.rows:
            fh.write(f"{r.n_users},{r.seed},{r.controller},{r.satisfied_total},{r.oracle_total},{r.gap}\n")
    gaps = {}
    for r in report.rows:
        gaps.setdefault(r.controller, []).append(r.gap)
    for kind, g in sorted(gaps.items()):
        print(f"{kind}: mean gap {sum(g) / len(g):.3f}, max gap {max(g)}")
    if not report.sound:
        for i, ce in enumerate(report.counterexamples):
            path = out / f"counterexample-{i:03d}.json"
            path.write_text(json.dumps(ce, indent=2, sort_keys=True))
            print(f"SOUNDNESS VIOLATION: {ce['controller']} {ce['satisfied_total']} > oracle "
                  f"{ce['oracle_total']} on {ce['scenario_id']} -> {path}", file=sys.stderr)
        return EXIT_UNSOUND
    print(f"sound over {len(set(r.seed for r in report.rows))} seeds")
    return EXIT_OK


def _read_script(path):
    if not path:
        raise ConfigurationError("scripted reasoner needs --script", "--script", None)
    text = Path(path).read_text()
    blocks, cur = [], []
    for line in text.splitlines():
        if line.strip() == "---":
            blocks.append("\n".join(cur).strip("\n"))
            cur = []
        else:
            cur.append(line)
    if any(line.strip() for line in cur):
        blocks.append("\n".join(cur).strip("\n"))
    return blocks


def cmd_agent_run(args):
    cfg, out = _load(args)
    script = _read_script(args.script) if args.reasoner == "scripted" else None
    if args.reasoner == "external":
        from .reasoners import ExternalReasonerConfig

        ExternalReasonerConfig.from_section(cfg.reasoner)  # fail fast without an endpoint
    n = cfg.scenario.n_users if args.n_users is None else args.n_users
    seed = _first_seed(cfg, args.seed)
    run = experiment.run_one(cfg, "AgentDriven", n, seed, args.reasoner, script, output_dir=out)
    experiment.write_records([run.record], out / "runs.jsonl")
    if run.record.failed:
        print(f"run failed: {run.record.error}", file=sys.stderr)
        return EXIT_PARTIAL
    ex = run.result.extras
    summary = {
        "scenario_id": run.record.scenario_id,
        "reasoner": args.reasoner,
        "before": ex["before"].to_dict(),
        "after": ex["after"].to_dict(),
        "trace": {**ex["trace"].summary(), "file": run.record.trace_file},
        "audit_file": run.record.audit_file,
        "flagged": run.result.flagged,
    }
    (out / "agent_run.json").write_text(json.dumps(summary, indent=2))
    ex["store"].export_csv(out / f"metrics-{run.record.scenario_id}.csv")
    print(
        f"{run.record.scenario_id}: satisfied {ex['before'].satisfied_total} -> {ex['after'].satisfied_total}, "
        f"episode {ex['trace'].outcome}, {len(ex['trace'].final_directives)} directives accepted"
        + (" [flagged]" if run.result.flagged else "")
    )
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "oracle-check": cmd_oracle_check,
    "agent-run": cmd_agent_run,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NetsliceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
