"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 solver error (at least one
sweep point failed, or a check did not pass).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .runner import ConfigError, check_config_convergence, load_config, recipe_names, rescaling_check, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _parser():
    parser = argparse.ArgumentParser(
        prog="cavityarrays",
        description="Steady states and entanglement witnesses of driven-dissipative cavity arrays.",
        epilog=f"Bundled recipes (usable in place of a path): {', '.join(recipe_names())}",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a parameter sweep and write CSV")
    sim.add_argument("config", help="experiment JSON file or bundled recipe name")
    sim.add_argument("--out", help="CSV output path (default: config 'output' or <name>.csv)")
    sim.add_argument("--solver", choices=["master", "wfmc", "both", "auto"])
    sim.add_argument("--nmax", type=int, help="photon-number cutoff")
    sim.add_argument("--seed", type=int, help="master seed of the Monte Carlo runs")
    sim.add_argument("--workers", type=int, help="sweep points solved concurrently")

    conv = sub.add_parser("check-convergence", help="compare results at n_max and n_max + 1")
    conv.add_argument("config")
    conv.add_argument("--nmax", type=int)

    resc = sub.add_parser("rescale-check", help="verify invariance under rescaling of all energies")
    resc.add_argument("config")
    resc.add_argument("--lambda", dest="factor", type=float, required=True, help="energy scale factor (> 0)")
    return parser


def _progress(row):
    status = "ok" if row.ok else f"FAILED ({row.error})"
    print(f"  point {row.index} {row.point}: {status}", file=sys.stderr, flush=True)


def _simulate(args):
    cfg = load_config(args.config).with_overrides(
        solver=args.solver, n_max=args.nmax, seed=args.seed, workers=args.workers, output=args.out)
    out = cfg.output or f"{cfg.name or 'experiment'}.csv"
    rows = run_experiment(cfg, out, progress=_progress if args.verbose else None)
    failed = [r for r in rows if not r.ok]
    print(f"wrote {len(rows)} rows to {out} (metadata: {out}.meta.json); {len(failed)} failed")
    return EXIT_SOLVER if failed else EXIT_OK


def _check_convergence(args):
    cfg = load_config(args.config).with_overrides(n_max=args.nmax)
    reports = check_config_convergence(cfg)
    for rep in reports:
        print(f"{rep.point}: {rep.summary()}")
        for name, (v0, v1, rel, ok) in rep.entries.items():
            if not ok:
                print(f"    {name}: {v0:.8g} -> {v1:.8g} (relative change {rel:.2e})")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_SOLVER


def _rescale_check(args):
    cfg = load_config(args.config)
    if not args.factor > 0:
        raise ConfigError("--lambda must be > 0")
    report = rescaling_check(cfg, args.factor)
    print(report.summary())
    for idx, name, v0, v1, dev, ok in report.entries:
        if not ok:
            print(f"    point {idx} {name}: {v0} vs {v1} (deviation {dev:.3e})")
    return EXIT_OK if report.passed else EXIT_SOLVER


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"simulate": _simulate, "check-convergence": _check_convergence, "rescale-check": _rescale_check}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report solver failures via the exit code
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
