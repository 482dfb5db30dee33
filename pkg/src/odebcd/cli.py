"""Command line entry point ``odebcd``.

Subcommands: ``generate``, ``train``, ``evaluate``, ``bench`` and ``check``.
Exit status is 0 on success, 1 for a bad config or arguments, 2 when a
run failed or a check did not pass.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checks import run_checks
from .cucker_smale import PARAM_NAMES, CuckerSmale
from .errors import ConfigError, OdeBcdError
from .harness import (ExperimentConfig, evaluate_test, generate_dataset, load_dataset,
                      run_benchmark, save_dataset, train_one)

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def _common(p):
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--algorithms", type=_csv_list(str), help="comma separated")
    p.add_argument("--particles", type=_csv_list(int), help="comma separated particle counts")
    p.add_argument("--epochs", type=int)
    p.add_argument("--threads", type=int, help="worker pool width")


def build_parser():
    parser = argparse.ArgumentParser(prog="odebcd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write one dataset per particle count")
    _common(p)

    p = sub.add_parser("train", help="train one algorithm on one dataset")
    _common(p)
    p.add_argument("--dataset", type=Path, help="dataset stem (defaults to a fresh draw)")

    p = sub.add_parser("evaluate", help="test RSSE of saved parameters")
    _common(p)
    p.add_argument("--dataset", type=Path, required=True, help="dataset stem")
    p.add_argument("--theta", type=Path, required=True,
                   help="JSON file with a 'theta' list or a name -> value mapping")

    p = sub.add_parser("bench", help="full sweep over algorithms and particle counts")
    _common(p)
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("check", help="oracle and invariant self-checks")
    p.add_argument("--seed", type=int, default=0)
    return parser


def load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    for name in ("seed", "epochs", "threads", "algorithms"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    if getattr(args, "particles", None) is not None:
        changes["particle_counts"] = args.particles
    if getattr(args, "out_dir", None) is not None:
        changes["out_dir"] = str(args.out_dir)
    return cfg.replace(**changes) if changes else cfg


def _read_theta(path):
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict) and "theta" in data:
        data = data["theta"]
    if isinstance(data, dict):
        data = [data[k] for k in PARAM_NAMES]
    theta = np.asarray(data, dtype=float)
    if theta.shape != (len(PARAM_NAMES),):
        raise ConfigError(f"theta must have {len(PARAM_NAMES)} entries")
    return theta


def cmd_generate(cfg, args):
    out = Path(cfg.out_dir) / "data"
    for n in cfg.particle_counts:
        stem = out / f"cs_N{n}"
        save_dataset(generate_dataset(cfg, n), stem)
        print(f"wrote {stem}.json and {stem}.csv")
    return EXIT_OK


def cmd_train(cfg, args):
    if len(cfg.algorithms) != 1 or len(cfg.particle_counts) != 1:
        raise ConfigError("train needs exactly one algorithm and one particle count")
    alg, n = cfg.algorithms[0], cfg.particle_counts[0]
    ds = load_dataset(args.dataset) if args.dataset else generate_dataset(cfg, n)
    out = Path(cfg.out_dir)
    summary, _ = train_one(cfg, ds, alg, out / "runs" / f"{alg}_N{ds.num_particles}.csv")
    (out / f"theta_{alg}_N{ds.num_particles}.json").write_text(
        json.dumps(summary.to_dict(), indent=2))
    print(json.dumps(summary.to_dict(), indent=2))
    return EXIT_OK if summary.ok else EXIT_FAILED


def cmd_evaluate(cfg, args):
    ds = load_dataset(args.dataset)
    field = CuckerSmale(ds.num_particles)
    report = evaluate_test(field, _read_theta(args.theta), ds.test_x0s, ds.truth, ds.grid,
                           cfg.solver_config())
    print(json.dumps({"mean_rsse": report.mean_rsse, "failures": report.failures,
                      "count": len(report.per_trajectory)}, indent=2))
    return EXIT_OK if report.mean_rsse is not None else EXIT_FAILED


def cmd_bench(cfg, args):
    result = run_benchmark(cfg, plots=not args.no_plots)
    for alg, by_n in result.runs.items():
        for n, s in by_n.items():
            mean = "-" if s.mean_epoch_seconds is None else f"{s.mean_epoch_seconds:.4g}"
            test = "-" if s.test_mean_rsse is None else f"{s.test_mean_rsse:.3e}"
            print(f"{alg:<12} N={n:<4} {s.status:<14} epoch_s={mean:<10} test_rsse={test}")
    print(f"summary: {result.out_dir / 'summary.json'}")
    return EXIT_FAILED if result.failures else EXIT_OK


def cmd_check(args):
    results = run_checks(args.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "check":
        return cmd_check(args)
    try:
        cfg = load_config(args)
        handler = {"generate": cmd_generate, "train": cmd_train,
                   "evaluate": cmd_evaluate, "bench": cmd_bench}[args.command]
        return handler(cfg, args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OdeBcdError as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
