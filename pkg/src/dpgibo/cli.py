"""Command-line entry point: ``dpgibo run|preset|accept``.

Exit status is 0 when every run succeeds, 1 when at least one run failed
and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import subprocess
import sys
from pathlib import Path

from .harness import PRESETS, ConfigError, load_config, preset, run_experiment

EXIT_OK, EXIT_RUN_FAILURE, EXIT_CONFIG = 0, 1, 2


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpgibo", description="Differentially private gradient-informative Bayesian optimization")
    ap.add_argument("--jobs", type=int, default=1, help="parallel (method, seed) runs")
    ap.add_argument("--seed", type=int, default=None, help="run a single replication with this seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by an INI file")
    run.add_argument("config")
    run.add_argument("--out", default=None, help="output directory (overrides the config)")
    run.add_argument("--seeds", type=_seeds, default=None)

    pre = sub.add_parser("preset", help=f"run a named experiment: {', '.join(PRESETS)}")
    pre.add_argument("name")
    pre.add_argument("--out", default=None)
    pre.add_argument("--seeds", type=_seeds, default=None)
    pre.add_argument("--paper-scale", action="store_true", help="use the full data sizes")

    acc = sub.add_parser("accept", help="run the acceptance suite (needs the source checkout)")
    acc.add_argument("--tests", default=None, help="path to test_acceptance.py")
    return ap


def _find_acceptance(explicit: str | None) -> Path | None:
    if explicit:
        return Path(explicit)
    for base in (Path.cwd(), *Path(__file__).resolve().parents):
        cand = base / "tests" / "test_acceptance.py"
        if cand.is_file():
            return cand
    return None


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "accept":
        path = _find_acceptance(args.tests)
        if path is None:
            print("acceptance suite not found; pass --tests PATH", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK if subprocess.call([sys.executable, "-m", "pytest", "-s", "-q", str(path)]) == 0 else EXIT_RUN_FAILURE

    try:
        if args.command == "run":
            cfg = load_config(args.config)
        else:
            try:
                cfg = preset(args.name, paper_scale=args.paper_scale)
            except KeyError as exc:
                raise ConfigError(exc.args[0]) from None
        seeds = [args.seed] if args.seed is not None else args.seeds
        cfg = cfg.with_overrides(seeds=seeds, output=args.out)
        results, out_dir = run_experiment(cfg, jobs=max(1, args.jobs))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    failed = [r for r in results if r.status != "ok"]
    print(f"wrote {out_dir / 'summary.csv'} ({len(results)} runs, {len(failed)} failed)")
    return EXIT_RUN_FAILURE if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
