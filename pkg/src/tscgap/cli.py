"""Command-line entry point: ``tscgap <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import config_text, load_eval_settings
from .dynamics import CollisionError
from .env import InvariantError
from .learner.optim import NonFiniteLossError
from .randomize import sample_domain, table_from_overrides

log = logging.getLogger("tscgap")


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_train(args) -> int:
    overrides = {k: v for k, v in (("regime", args.regime), ("seed", args.seed), ("episodes", args.episodes))
                 if v is not None}
    exp = harness.load_experiment(args.config, **overrides)
    def report_episode(rec):
        log.info("episode %s return %.1f", rec.get("episode"), rec["true_ret"])

    res = harness.train(exp, args.out, resume=args.resume, progress=report_episode if args.verbose else None)
    print(f"{exp.regime}: {harness.training_steps(res.log)} steps -> {res.checkpoint_path}")
    return 0


def cmd_evaluate(args) -> int:
    exp = harness.load_experiment(args.config)
    ckpt = harness.Checkpoint.load(args.checkpoint)
    settings = load_eval_settings(args.settings_file, labels=args.setting)
    scenario = harness.Scenario.load(exp)
    out = Path(args.out)
    rows = []
    for label, setting in settings.items():
        res = harness.evaluate(ckpt, exp, setting, args.seeds, fine_tune=args.fine_tune,
                               algorithm=args.algorithm, out_dir=out / label, scenario=scenario)
        rows.append(res.row)
        print(f"{label}: cum_reward {res.row.cum_reward:.1f} over {res.row.seed_count} seeds")
    harness.write_metrics_csv(out / "metrics.csv", rows)
    return 0


def cmd_report(args) -> int:
    rows = [r for p in args.metrics for r in harness.read_metrics_csv(p)]
    rep = harness.report(rows, baseline=args.baseline)
    print(rep.to_text())
    if args.out:
        harness.write_metrics_csv(args.out, rep.rows)
    return 0


def cmd_emit_timeseries(args) -> int:
    traces = {}
    for spec in args.traces:
        name, _, directory = spec.partition("=")
        if not directory:
            raise SystemExit(f"--traces expects ALGORITHM=DIR, got {spec!r}")
        traces[name] = harness.load_traces(directory)
    path = harness.emit_timeseries(traces, args.metric, args.out)
    print(path)
    return 0


def cmd_sample_params(args) -> int:
    table = table_from_overrides(json.loads(Path(args.table).read_text()) if args.table else None)
    rng = np.random.default_rng(args.seed)
    samples = [sample_domain(rng, table).to_dict() for _ in range(args.count)]
    print(json.dumps(samples[0] if args.count == 1 else samples, indent=2))
    return 0


def cmd_show_signal_plan(args) -> int:
    sys.stdout.write(config_text(args.plan))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tscgap", description="Signal-control sim-to-real experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one agent")
    t.add_argument("--config", default="desk.json", help="experiment config file or packaged name")
    t.add_argument("--regime", choices=harness.REGIMES)
    t.add_argument("--seed", type=int)
    t.add_argument("--episodes", type=int)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on the target domain")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", default="desk.json")
    e.add_argument("--setting", action="append", help="A, B or C (repeatable; default all)")
    e.add_argument("--settings-file", default=None)
    e.add_argument("--seeds", type=_seed_list, default=None, help="comma-separated evaluation seeds")
    e.add_argument("--fine-tune", action="store_true", help="adapt on the target before evaluating")
    e.add_argument("--algorithm", default=None, help="label for the metrics rows")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="aggregate metrics CSVs into a comparison table")
    r.add_argument("metrics", nargs="+")
    r.add_argument("--baseline", default="ppo_fixed")
    r.add_argument("--out", default=None, help="write rows including averages to this CSV")
    r.set_defaults(func=cmd_report)

    ts = sub.add_parser("emit-timeseries", help="per-step averages of a metric across episodes")
    ts.add_argument("--traces", action="append", required=True, metavar="ALGORITHM=DIR")
    ts.add_argument("--metric", choices=harness.TIMESERIES_METRICS, default="queue")
    ts.add_argument("--out", required=True)
    ts.set_defaults(func=cmd_emit_timeseries)

    s = sub.add_parser("sample-params", help="print randomized simulation parameters")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--table", default=None, help="JSON file overriding distribution rows")
    s.set_defaults(func=cmd_sample_params)

    sp = sub.add_parser("show-signal-plan", help="print the signal plan file")
    sp.add_argument("--plan", default="signal_plan.json")
    sp.set_defaults(func=cmd_show_signal_plan)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (InvariantError, CollisionError, NonFiniteLossError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (harness.BudgetError, harness.IncompatibleCheckpointError, harness.MissingBaselineError,
            FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
