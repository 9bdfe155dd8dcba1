"""Command-line pipeline: phantom -> sample -> reconstruct -> cluster -> fit -> compare.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 solver
non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import ParameterError, ShapeError
from .cluster import cluster_pipeline, label_agreement, match_labels
from .hypercube import FormatError, band_image, load_cube, store_cube
from .lowrank import SolverConfig, SolverError, reconstruct
from .peakfit import FitDivergenceError, fit_amide_bands, nearest_component
from .phantom import CLASS_NAMES, PhantomSpec, make_phantom, relative_error
from .preprocess import DegenerateInputError, SGParams
from .reports import (
    label_gray_levels,
    minmax_gray,
    read_spectra_csv,
    write_json,
    write_pgm,
    write_spectra_csv,
)
from .sampling import acquisition_time, draw_mask, apply_mask, load_samples, sample_count, store_samples

logger = logging.getLogger("hsrecon")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3
AMIDE_II_TARGET = 1561.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _region(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"region must be lo:hi, got {text!r}") from None
    return (min(lo, hi), max(lo, hi))


def _with_suffix(path, suffix):
    p = Path(path)
    return p.with_name(p.stem + suffix)


def _write_factors(prefix, f):
    """Raw row-major float32 factor dumps with a one-line JSON header."""
    for name, M in (("U", f.U), ("V", f.V)):
        header = {"magic": "HSF1", "name": name, "rows": M.shape[0], "cols": M.shape[1],
                  "dtype": "f32le", "order": "row-major"}
        with open(f"{prefix}_{name}.hsf", "wb") as fh:
            fh.write((json.dumps(header, separators=(",", ":")) + "\n").encode())
            fh.write(np.ascontiguousarray(M, dtype="<f4").tobytes())


# --------------------------------------------------------------------------
# subcommands


def cmd_phantom(args):
    if args.config:
        spec = PhantomSpec.from_json(args.config)
    else:
        spec = PhantomSpec()
    overrides = {}
    if args.noise is not None:
        overrides["noise_sigma"] = args.noise
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        spec = PhantomSpec(**{**{k: getattr(spec, k) for k in spec.__dataclass_fields__}, **overrides})
    noisy, truth = make_phantom(spec)
    out = Path(args.output)
    store_cube(noisy, out)
    store_cube(truth.cube, _with_suffix(out, ".truth.hsc"))
    write_pgm(label_gray_levels(truth.labels, 3), spec.nx, spec.ny, _with_suffix(out, ".labels.pgm"))
    write_json(
        {
            "nx": spec.nx,
            "ny": spec.ny,
            "classes": list(CLASS_NAMES),
            "sizes": [int(v) for v in np.bincount(truth.labels, minlength=3)],
            "noise_sigma": spec.noise_sigma,
            "seed": spec.seed,
            "labels": [int(v) for v in truth.labels],
        },
        _with_suffix(out, ".labels.json"),
    )
    return EXIT_OK


def cmd_sample(args):
    cube = load_cube(args.input)
    mask = draw_mask(cube.nx, cube.ny, cube.nbands, args.fraction, args.seed)
    store_samples(apply_mask(cube, mask), args.output)
    logger.info("sampled %d of %d voxels", len(mask), mask.n_total)
    return EXIT_OK


def cmd_reconstruct(args):
    data = load_samples(args.input)
    cfg = SolverConfig(rank=args.rank, lam=args.lam, mu=args.mu, max_iter=args.max_iter, rel_tol=args.tol,
                       cg_tol=args.cg_tol, cg_max_iter=args.cg_max_iter, seed=args.seed)
    cfg = cfg.resolved(data)
    cube, factors, report = reconstruct(data, cfg)
    store_cube(cube, args.output)
    logger.info("reconstruction: %s after %d iterations, %.2f s", report.stop_reason, report.n_iter, report.wall_time)
    if args.report:
        rep = {"config": {"rank": cfg.rank, "lambda": cfg.lam, "mu": cfg.mu, "rel_tol": cfg.rel_tol,
                          "max_iter": cfg.max_iter, "cg_tol": cfg.cg_tol, "seed": cfg.seed},
               "n_observed": len(data),
               "time_model": "proxy: seconds_per_spectrum spread evenly over bands"}
        rep.update(report.to_dict(include_timing=args.timing))
        write_json(rep, args.report)
    if args.factors:
        _write_factors(args.factors, factors)
    return EXIT_OK


def _sg_from_args(args):
    return SGParams(args.sg_window, args.sg_order, args.sg_deriv)


def cmd_cluster(args):
    cube = load_cube(args.input)
    res = cluster_pipeline(cube, _sg_from_args(args), args.k, normalize=args.normalize)
    prefix = args.output
    out = {"k": res.k, "sg_window": args.sg_window, "sg_order": args.sg_order, "sg_deriv": args.sg_deriv,
           "normalized": bool(args.normalize), "nx": cube.nx, "ny": cube.ny}
    out.update(res.to_dict())
    write_json(out, f"{prefix}.json")
    write_spectra_csv(cube.axis.values, res.means, [f"cluster_{c}" for c in range(res.k)], f"{prefix}_means.csv")
    write_pgm(label_gray_levels(res.labels, res.k), cube.nx, cube.ny, f"{prefix}.pgm")
    return EXIT_OK


def cmd_fit(args):
    wn, spectra, names = read_spectra_csv(args.input)
    if not 0 <= args.cluster < spectra.shape[0]:
        raise ParameterError(f"--cluster {args.cluster} out of range; file has {spectra.shape[0]} spectra")
    res = fit_amide_bands(spectra[args.cluster], wn, args.region, args.components, rel_tol=args.tol,
                          max_iter=args.max_iter)
    out = {"cluster": args.cluster, "column": names[args.cluster]}
    out.update(res.to_dict())
    write_json(out, args.output)
    return EXIT_OK if res.converged else EXIT_SOLVER


def compare_cubes(full, recon, truth=None, k=3, sg=SGParams(), region=(1550.0, 1640.0), n_components=2,
                  n_observed=None, seconds_per_spectrum=8.0, target=AMIDE_II_TARGET, truth_labels=None):
    """Evaluation report comparing a reconstruction with the full cube."""
    report = {"relative_error_recon_vs_full": relative_error(recon, full)}
    if truth is not None:
        report["relative_error_recon_vs_truth"] = relative_error(recon, truth)
        report["relative_error_full_vs_truth"] = relative_error(full, truth)
    cf = cluster_pipeline(full, sg, k)
    cr = cluster_pipeline(recon, sg, k)
    report["label_agreement"] = label_agreement(cf.labels, cr.labels, k)
    if truth_labels is not None:
        report["label_agreement_full_vs_truth"] = label_agreement(truth_labels, cf.labels, k)
        report["label_agreement_recon_vs_truth"] = label_agreement(truth_labels, cr.labels, k)
    report["cluster_sizes_full"] = [int(s) for s in cf.sizes]
    report["cluster_sizes_recon"] = [int(s) for s in cr.sizes]
    pi, _ = match_labels(cf.labels, cr.labels, k)  # full label pi[j] <-> recon label j
    recon_of_full = np.argsort(pi)
    wn = full.axis.values
    bands = []
    for c in range(k):
        entry = {"cluster_full": c, "cluster_recon": int(recon_of_full[c])}
        try:
            a = fit_amide_bands(cf.means[c], wn, region, n_components)
            b = fit_amide_bands(cr.means[recon_of_full[c]], wn, region, n_components)
            xa, xb = nearest_component(a.model, target).center, nearest_component(b.model, target).center
            entry.update(x_c_full=xa, x_c_recon=xb, delta=xb - xa, converged=bool(a.converged and b.converged))
        except (FitDivergenceError, ParameterError) as exc:
            entry.update(error=str(exc))
        bands.append(entry)
    report["amide_II_fits"] = bands
    n_total = full.n_pixels * full.nbands
    report["acquisition_time_full_s"] = acquisition_time(n_total, full.nbands, seconds_per_spectrum)
    report["acquisition_time_recon_s"] = (
        acquisition_time(n_observed, full.nbands, seconds_per_spectrum) if n_observed is not None else None
    )
    report["acquisition_time_model"] = "proxy: seconds_per_spectrum spread evenly over bands"
    return report


def cmd_compare(args):
    full = load_cube(args.full)
    recon = load_cube(args.recon)
    truth = load_cube(args.truth) if args.truth else None
    truth_labels = None
    if args.truth_labels:
        with open(args.truth_labels, encoding="utf-8") as fh:
            truth_labels = np.asarray(json.load(fh)["labels"], dtype=np.int64)
    if args.samples:
        n_obs = len(load_samples(args.samples))
    else:
        n_obs = sample_count(args.fraction, full.n_pixels * full.nbands)
    report = compare_cubes(full, recon, truth, args.k, SGParams(args.sg_window, args.sg_order, 2), args.region,
                           args.components, n_obs, args.seconds_per_spectrum, truth_labels=truth_labels)
    write_json(report, args.output)
    return EXIT_OK


def cmd_render(args):
    cube = load_cube(args.input)
    img = band_image(cube, args.band)
    gray, vmin, vmax = minmax_gray(img.values)
    write_pgm(gray, cube.nx, cube.ny, args.output)
    write_json({"band": args.band, "wavenumber": cube.axis.value(args.band), "min": vmin, "max": vmax,
                "scaling": "gray = round((v - min) / (max - min) * 255)"}, f"{args.output}.json")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser():
    p = _Parser(prog="hsrecon", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="cap for BLAS/OpenMP worker threads")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="render a synthetic phantom cube")
    s.add_argument("--config")
    s.add_argument("--noise", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("sample", help="draw a random voxel subset")
    s.add_argument("--fraction", type=float, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("-i", "--input", required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("reconstruct", help="low-rank completion of a sample file")
    s.add_argument("--rank", type=int, default=6)
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.add_argument("--mu", type=float, default=None)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=200)
    s.add_argument("--cg-tol", type=float, default=1e-8)
    s.add_argument("--cg-max-iter", type=int, default=5000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-i", "--input", required=True)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--report")
    s.add_argument("--factors", help="prefix for U/V factor dumps")
    s.add_argument("--timing", action="store_true", help="include wall time in the report (not reproducible)")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("cluster", help="Ward clustering of SG second-derivative spectra")
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--sg-window", type=int, default=11)
    s.add_argument("--sg-order", type=int, default=2)
    s.add_argument("--sg-deriv", type=int, default=2)
    s.add_argument("--normalize", action="store_true", help="scale derivative spectra to unit max |value|")
    s.add_argument("-i", "--input", required=True)
    s.add_argument("-o", "--output", required=True, help="output prefix")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("fit", help="pseudo-Voigt fit of one cluster-mean spectrum")
    s.add_argument("--region", type=_region, default=(1550.0, 1640.0))
    s.add_argument("--components", type=int, default=2)
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--max-iter", type=int, default=1000)
    s.add_argument("-i", "--input", required=True)
    s.add_argument("--cluster", type=int, required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("compare", help="evaluate a reconstruction against the full cube")
    s.add_argument("--full", required=True)
    s.add_argument("--recon", required=True)
    s.add_argument("--truth")
    s.add_argument("--truth-labels", help="labels JSON written by the phantom command")
    s.add_argument("--samples", help="sample file, for the observed-voxel count")
    s.add_argument("--fraction", type=float, default=0.05, help="used when --samples is absent")
    s.add_argument("--seconds-per-spectrum", type=float, default=8.0)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--sg-window", type=int, default=11)
    s.add_argument("--sg-order", type=int, default=2)
    s.add_argument("--region", type=_region, default=(1550.0, 1640.0))
    s.add_argument("--components", type=int, default=2)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("render", help="8-bit PGM image of one band")
    s.add_argument("-i", "--input", required=True)
    s.add_argument("--band", type=int, required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=max(1, args.threads)):
                return args.func(args)
        return args.func(args)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        print(f"hsrecon: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"hsrecon: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (FormatError, ParameterError, ShapeError, DegenerateInputError, FitDivergenceError, IndexError,
            KeyError, ValueError, OSError) as exc:
        print(f"hsrecon: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
