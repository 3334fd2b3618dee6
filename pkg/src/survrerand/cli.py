"""Command line interface: ``simulate``, ``analyze``, ``geometry`` and ``kappa``.

Exit status: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .data import DesignMeta, load_dataset_csv
from .exceptions import SurvRerandError
from .harness import (
    SimulationConfig,
    analyze_dataset,
    export_geometry,
    kappa_tool,
    run_simulation,
    write_metrics_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _mapping(text):
    out = {}
    for part in _names(text):
        if "=" not in part:
            raise argparse.ArgumentTypeError(f"schema entries look like role=column, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _band(text):
    vals = _floats(text)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("band is lo,hi,points")
    return (vals[0], vals[1], int(vals[2]))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="survrerand", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="Monte Carlo metrics table")
    s.add_argument("--config", help="JSON file with SimulationConfig fields; flags override it")
    s.add_argument("--scenario", type=int, choices=(1, 2))
    s.add_argument("--n", type=int)
    s.add_argument("--reps", type=int, dest="replicates")
    s.add_argument("--design", choices=("srs", "rem", "srem"))
    s.add_argument("--methods", type=_names)
    s.add_argument("--times", type=_floats)
    s.add_argument("--band", type=_band)
    s.add_argument("--alpha", type=float)
    s.add_argument("--c", type=float)
    s.add_argument("--k", type=int, dest="K")
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int)
    s.add_argument("--paths", type=int, dest="n_paths")
    s.add_argument("--cache", dest="cache_path", help="truth cache CSV")
    s.add_argument("--out", required=True)

    a = sub.add_parser("analyze", help="estimates and hypothetical-design variance reductions")
    a.add_argument("--data", required=True)
    a.add_argument("--schema", type=_mapping, default={}, help="role=column pairs, e.g. arm=trt,time=t")
    a.add_argument("--rerand-cols", type=_names, default=[])
    a.add_argument("--log-cols", type=_names, default=[], help="covariates replaced by log(1 + x)")
    a.add_argument("--methods", type=_names, default=["km", "ipcw", "dml"])
    a.add_argument("--times", type=_floats, default=[500.0, 1000.0, 1500.0, 2000.0])
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--c", type=float, default=1.83)
    a.add_argument("--pi1", type=float, default=0.5)
    a.add_argument("--arm", type=int, choices=(0, 1), default=1)
    a.add_argument("--k", type=int, default=5)
    a.add_argument("--seed", type=int, default=2024)
    a.add_argument("--out", required=True)

    g = sub.add_parser("geometry", help="export projection/residual path ensembles")
    g.add_argument("--out", required=True)
    g.add_argument("--paths", type=int, default=250)
    g.add_argument("--superpop", type=int, default=100_000)
    g.add_argument("--seed", type=int, default=2024)

    k = sub.add_parser("kappa", help="variance multiplier and acceptance probability")
    k.add_argument("--p", type=int, required=True)
    k.add_argument("--c", type=float, required=True)
    return p


def _simulate(args) -> int:
    payload = {}
    if args.config:
        with open(args.config) as fh:
            payload = json.load(fh)
    for key in ("scenario", "n", "replicates", "design", "methods", "times", "band", "alpha",
                "c", "K", "seed", "jobs", "n_paths", "cache_path"):
        val = getattr(args, key)
        if val is not None:
            payload[key] = val
    config = SimulationConfig.from_dict(payload)
    result = run_simulation(config)
    write_metrics_csv(result.rows, args.out)
    return EXIT_OK


def _analyze(args) -> int:
    dataset = load_dataset_csv(args.data, args.schema, rerand_cols=args.rerand_cols, log_cols=args.log_cols)
    metas = []
    if dataset.rerand_cols:
        metas.append(DesignMeta("rerand", args.pi1, args.c, dataset.rerand_cols))
        if dataset.stratum is not None:
            metas.append(DesignMeta("stratified-rerand", args.pi1, args.c, dataset.rerand_cols, dataset.stratum_col))
    report = analyze_dataset(dataset, metas, args.methods, args.times, args.alpha, args.arm, args.pi1, args.k, args.seed)
    with open(args.out, "w") as fh:
        fh.write(report.to_json())
    for method, msg in report.errors.items():
        print(f"{method}: {msg}", file=sys.stderr)
    return EXIT_NUMERIC if report.errors and not report.results else EXIT_OK


def _geometry(args) -> int:
    export_geometry(args.out, n_paths=args.paths, superpop=args.superpop, seed=args.seed)
    return EXIT_OK


def _kappa(args) -> int:
    info = kappa_tool(args.p, args.c)
    print(f"kappa(c={info['c']:g}, p={info['p']}) = {info['kappa']:.10f}")
    print(f"acceptance probability = {info['acceptance']:.10f}")
    print(f"variance reduction ceiling (1 - kappa) = {info['max_reduction']:.10f}")
    return EXIT_OK


_COMMANDS = {"simulate": _simulate, "analyze": _analyze, "geometry": _geometry, "kappa": _kappa}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except SurvRerandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (json.JSONDecodeError, TypeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
