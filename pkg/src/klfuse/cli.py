"""Command line interface: ``klfuse {synth,local-vi,fuse,eval,sweep}``."""

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import io
from .benchmark import METHODS, SweepRow, fused_means, run_cell, sweep_cells, vi_seed
from .fusion import INITS, MODES, SWEEPS, FusionConfig, fuse
from .localvi import fit_bayesian_gmm
from .metrics import point_set_hausdorff, polytope_hausdorff, size_estimation_error
from .synthgen import SynthConfig, generate_benchmark

def default_seed():
    value = os.environ.get("KLFUSE_SEED")
    if value is None:
        return 0
    try:
        return int(value)
    except ValueError:
        sys.exit(f"klfuse: error: KLFUSE_SEED must be an integer, got {value!r}")

def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value

def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value

def _nonneg_float(text):
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return value

def _float_list(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values

def cmd_synth(args):
    config = SynthConfig(G=args.G, D=args.D, J=args.J, separation=args.sep,
                         hetero_noise=args.noise, n_per_dataset=args.n, seed=args.seed,
                         wishart_df=args.wishart_df)
    truth, locals_, data = generate_benchmark(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for j, X in enumerate(data):
        path = out / f"dataset_{j:03d}.csv"
        io.write_data_file(path, X)
        files.append(path)
    io.write_truth_file(out / "truth.json", config, truth, locals_, files)
    print(f"wrote {len(files)} datasets and truth.json to {out}")

def cmd_local_vi(args):
    known_K = {}
    if args.truth:
        _, locals_, _ = io.read_truth_file(args.truth)
        known_K = {i: loc.n_components for i, loc in locals_}
    datasets = []
    for j, path in enumerate(args.data):
        X = io.read_data_file(path)
        ident = Path(path).stem
        K = known_K.get(ident, args.K)
        if K is None:
            raise ValueError(f"{path}: number of components unknown; pass --K or --truth")
        res = fit_bayesian_gmm(X, min(K, len(X)), max_iters=args.max_iters, tol=args.tol,
                               seed=vi_seed(args.seed, j))
        datasets.append(io.DatasetEntry(ident, res.components, res.weights.tolist()))
    bundle = io.BundleFile("normal_wishart", datasets[0].components[0].dim, datasets)
    io.write_bundle_file(args.out, bundle)
    print(f"wrote {len(datasets)} local posteriors to {args.out}")

def cmd_fuse(args):
    bundle = io.read_bundle_file(args.bundle)
    config = FusionConfig(lambda_base=args.lam, max_iters=args.max_iters, rel_tol=args.tol,
                          seed=args.seed, mode=args.mode, init=args.init, sweep=args.sweep,
                          merge_moves=not args.no_merge, n_jobs=args.jobs)
    start = time.perf_counter()
    result = fuse(bundle.bundles, config)
    wall = time.perf_counter() - start
    io.write_model_file(args.out, result, [d.id for d in bundle.datasets],
                        extra={"wall_seconds": wall, "mode": args.mode,
                               "lambda": args.lam})
    trace = result.objective_trace
    print(f"fused {len(bundle.datasets)} datasets into G={len(result.global_model)} "
          f"components in {result.iterations} iterations; objective {trace[-1]:.6g}")

def cmd_eval(args):
    result, raw = io.read_model_file(args.model)
    truth, _, config = io.read_truth_file(args.truth)
    est = fused_means(result.global_model.components)
    if est.shape[1] != truth.means.shape[1]:
        raise ValueError(f"dimension mismatch: model has D={est.shape[1]}, "
                         f"truth has D={truth.means.shape[1]}")
    metric = point_set_hausdorff if args.point_set else polytope_hausdorff
    row = SweepRow(
        seed=int(config.get("seed", 0)),
        separation=float(config.get("separation", float("nan"))),
        noise=float(config.get("hetero_noise", float("nan"))),
        method=args.method,
        hausdorff=metric(est, truth.means),
        size_error=size_estimation_error(len(est), truth.n_components),
        fused_G=len(est),
        wall_seconds=float(raw.get("wall_seconds", 0.0)),
    )
    print(f"hausdorff {row.hausdorff:.6g}")
    print(f"size_error {row.size_error}")
    print(f"fused_G {row.fused_G}")
    if args.csv:
        write_rows(args.csv, [row], append=True)

def write_rows(path, rows, append=False):
    path = Path(path)
    new = not (append and path.exists() and path.stat().st_size > 0)
    with path.open("a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SweepRow.FIELDS)
        if new:
            writer.writeheader()
        for r in rows:
            writer.writerow(r.as_dict())

def _run_cell(job):
    synth, method = job
    try:
        return run_cell(synth, method)
    except Exception as exc:
        raise RuntimeError(
            f"cell separation={synth.separation} noise={synth.hetero_noise} "
            f"seed={synth.seed} method={method}: {exc}"
        ) from exc

def cmd_sweep(args):
    separations = args.sep_grid or [args.sep]
    noises = args.noise_grid or [args.noise]
    seeds = [args.seed + i for i in range(args.seeds)]
    methods = args.methods.split(",")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    jobs = list(sweep_cells(separations, noises, seeds, methods, G=args.G, D=args.D, J=args.J,
                            n_per_dataset=args.n, wishart_df=args.wishart_df))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_run_cell, jobs))
    else:
        rows = [_run_cell(job) for job in jobs]
    write_rows(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")

class _Parser(argparse.ArgumentParser):
    """Reports usage errors on one line; ``--help`` still prints the full usage."""

    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message} (see --help)\n")


def build_parser():
    parser = _Parser(prog="klfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    seed = default_seed()

    p = sub.add_parser("synth", help="generate a synthetic heterogeneous GMM benchmark")
    p.add_argument("--G", type=_positive_int, default=5)
    p.add_argument("--D", type=_positive_int, default=10)
    p.add_argument("--J", type=_positive_int, default=50)
    p.add_argument("--n", type=_positive_int, default=500, help="points per dataset")
    p.add_argument("--sep", type=_positive_float, default=1.0, help="separation scale s")
    p.add_argument("--noise", type=_nonneg_float, default=0.5, help="mean noise std sigma")
    p.add_argument("--wishart-df", type=_positive_float, default=None,
                   help="covariance perturbation degrees of freedom (default 100*D)")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("local-vi", help="fit local variational GMM posteriors")
    p.add_argument("data", nargs="+", help="CSV data files")
    p.add_argument("--K", type=_positive_int, default=None, help="components per local fit")
    p.add_argument("--truth", default=None, help="truth.json giving per-dataset K")
    p.add_argument("--max-iters", type=_positive_int, default=2000)
    p.add_argument("--tol", type=_positive_float, default=1e-8)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", default="bundle.json")
    p.set_defaults(func=cmd_local_vi)

    p = sub.add_parser("fuse", help="fuse a bundle file into a global model")
    p.add_argument("bundle")
    p.add_argument("--mode", choices=MODES, default="heterogeneous")
    p.add_argument("--lambda", dest="lam", type=_nonneg_float, default=0.1)
    p.add_argument("--max-iters", type=_positive_int, default=100)
    p.add_argument("--tol", type=_positive_float, default=1e-6)
    p.add_argument("--init", choices=INITS, default="kl_kmeanspp")
    p.add_argument("--sweep", choices=SWEEPS, default="sequential")
    p.add_argument("--no-merge", action="store_true", help="disable pairwise merge moves")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", default="model.json")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="compare a fused model with the ground truth")
    p.add_argument("model")
    p.add_argument("truth")
    p.add_argument("--csv", default=None, help="append a result row to this CSV")
    p.add_argument("--method", default="kl_fusion")
    p.add_argument("--point-set", action="store_true",
                   help="diagnostic point-set Hausdorff instead of the polytope distance")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run synth, local-vi, fuse and eval over a grid")
    p.add_argument("--sep-grid", type=_float_list, default=None)
    p.add_argument("--sep", type=_positive_float, default=0.5)
    p.add_argument("--noise-grid", type=_float_list, default=None)
    p.add_argument("--noise", type=_nonneg_float, default=0.5)
    p.add_argument("--seeds", type=_positive_int, default=10, help="number of seeds")
    p.add_argument("--seed", type=int, default=seed, help="first seed")
    p.add_argument("--G", type=_positive_int, default=5)
    p.add_argument("--D", type=_positive_int, default=10)
    p.add_argument("--J", type=_positive_int, default=50)
    p.add_argument("--n", type=_positive_int, default=500)
    p.add_argument("--wishart-df", type=_positive_float, default=None)
    p.add_argument("--methods", default="kl_fusion", help=f"comma list from {METHODS}")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)
    return parser

def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code
    try:
        args.func(args)
    except (ValueError, OSError, KeyError, RuntimeError, json.JSONDecodeError) as exc:
        message = " ".join(str(exc).split())
        print(f"klfuse {args.command}: error: {message}", file=sys.stderr)
        return 1
    return 0

if __name__ == "__main__":
    sys.exit(main())
