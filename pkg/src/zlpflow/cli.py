"""Command line interface: ``zlpflow {sample,logprob,grid,fit,check}``.

Exit codes: 0 success, 2 input error, 3 numerical divergence during
fitting, 4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import run_checks
from .fit import DivergenceError, FitConfig, KappaCapWarning, fit
from .grid import PROJECTIONS, density_grid, write_raster
from .io import SpecError, chain_to_spec, load_spec, preset_to_spec, read_samples, write_samples, write_spec
from .presets import FAMILIES

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIVERGENCE = 3
EXIT_VERIFY = 4

log = logging.getLogger("zlpflow")


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


def _lonlat(text: str) -> tuple[float, float]:
    try:
        lon, lat = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LON,LAT in degrees") from None
    return lon, lat


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("ZLP_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise InputError(f"ZLP_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise InputError("thread count must be >= 1")
    return n


# commands ---------------------------------------------------------------------


def cmd_sample(args) -> int:
    chain, _ = load_spec(args.spec)
    if args.n < 1:
        raise InputError("--n must be >= 1")
    rng = np.random.default_rng(args.seed)
    pts, logp = chain.sample(rng, args.n)
    write_samples(args.out, pts, logp)
    return EXIT_OK


def cmd_logprob(args) -> int:
    chain, _ = load_spec(args.spec)
    pts, _ = read_samples(args.points, chain.dim)
    write_samples(args.out, pts, chain.log_prob(pts))
    return EXIT_OK


def cmd_grid(args) -> int:
    chain, _ = load_spec(args.spec)
    if chain.dim != 3:
        raise InputError(f"grid export needs a D=3 spec, got D={chain.dim}")
    try:
        grid = density_grid(chain, args.res, args.projection, args.center, args.fov, _threads(args))
    except ValueError as err:
        raise InputError(str(err)) from err
    grid.write_csv(args.out)
    if args.png:
        write_raster(args.png, grid.values, heatmap=True if args.heatmap else None)
    return EXIT_OK


def _load_fit_config(path) -> tuple[FitConfig, dict]:
    if path is None:
        return FitConfig(), {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise InputError(f"{path}: not valid JSON ({err})") from err
    if not isinstance(doc, dict):
        raise InputError(f"{path}: fit config must be a JSON object")
    codec = doc.pop("codec", {})
    try:
        return FitConfig.from_dict(doc), codec
    except (TypeError, ValueError) as err:
        raise InputError(f"{path}: {err}") from err


def cmd_fit(args) -> int:
    cfg, codec = _load_fit_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    pts, _ = read_samples(args.data, args.dim)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", KappaCapWarning)
        try:
            res = fit(args.family, pts, cfg, **codec)
        except DivergenceError as err:
            print(f"error: fit diverged: {err}", file=sys.stderr)
            return EXIT_DIVERGENCE
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    doc = preset_to_spec(res.preset) if args.format == "preset" else chain_to_spec(res.chain)
    write_spec(args.out, doc)
    trace_path = args.trace or str(args.out) + ".trace.csv"
    with open(trace_path, "w") as fh:
        fh.write("iteration,nll,best_nll\n")
        for i, (v, b) in enumerate(zip(res.trace, res.best_trace), start=1):
            fh.write(f"{i},{v:.17g},{b:.17g}\n")
    print(f"nll {res.nll:.10g} after {len(res.trace)} iterations")
    return EXIT_OK


def cmd_check(args) -> int:
    # constraint violations are reported by the checks, not rejected at load
    chain, family = load_spec(args.spec, validate=False)
    family = args.family or family
    results = run_checks(chain, args.level, np.random.default_rng(args.seed), family)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


# parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zlpflow", description="Zoom/linear-project normalizing flows on the sphere.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw samples with their log densities")
    p.add_argument("--spec", required=True, help="chain spec (JSON)")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("logprob", help="evaluate log densities at points")
    p.add_argument("--spec", required=True)
    p.add_argument("--points", required=True, help="CSV with header x1,...,xD")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_logprob)

    p = sub.add_parser("grid", help="export a D=3 log-density grid and raster")
    p.add_argument("--spec", required=True)
    p.add_argument("--res", type=int, default=720, help="columns (even); equirect/mollweide use res/2 rows")
    p.add_argument("--projection", choices=PROJECTIONS, default="equirect")
    p.add_argument("--center", type=_lonlat, default=(0.0, 0.0), metavar="LON,LAT", help="view centre in degrees")
    p.add_argument("--fov", type=float, default=180.0, help="orthographic field of view in degrees")
    p.add_argument("--out", required=True, help="grid CSV")
    p.add_argument("--png", help="raster image; .pgm grayscale or .ppm heatmap")
    p.add_argument("--heatmap", action="store_true", help="force the colour heatmap")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $ZLP_THREADS or 1)")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("fit", help="maximum-likelihood fit of a family to data")
    p.add_argument("--family", required=True, choices=FAMILIES)
    p.add_argument("--data", required=True, help="sample CSV")
    p.add_argument("--config", help="fit config (JSON); optional 'codec' block for family options")
    p.add_argument("--out", required=True, help="fitted chain spec (JSON)")
    p.add_argument("--trace", help="loss trace CSV (default: OUT.trace.csv)")
    p.add_argument("--dim", type=int, help="expected data dimension")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--format", choices=("preset", "layers"), default="preset", help="spec style to write")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("check", help="run the verification suite on a spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--level", choices=("fast", "full"), default="fast")
    p.add_argument("--family", choices=FAMILIES, help="family tag for explicit-layer specs")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, SpecError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
