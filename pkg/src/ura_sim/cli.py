"""Command line entry point: ``ura-sim {simulate,detect,optimize-lengths,fisher}``."""
import argparse
import json
import logging
import sys

import numpy as np

from .errors import (AnalysisError, ConfigError, EncodingError, InfeasibleError, NumericalError,
                     SizeError, UraSimError)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _overrides(pairs):
    out = {}
    for item in pairs or ():
        key, sep, val = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"expected key=value, got {item!r}")
        out[key.strip()] = val.strip()
    return out


def _load_array(path):
    try:
        return np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read array {path}: {exc}") from exc


def _emit(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_simulate(args):
    from .config import load_config
    from .harness import parse_sweep, run_experiment

    overrides = _overrides(args.set)
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_config(args.config, overrides)
    sweep = parse_sweep(args.sweep) if args.sweep else None
    reports = run_experiment(cfg, sweep=sweep, out_dir=args.out, inner=args.inner,
                             workers=args.workers)
    for r in reports:
        label = f"{r.axis}={r.value}" if r.axis else "point"
        print(f"{label}: p_e={r.p_e:.4g} (se {r.p_e_se:.2g}) p_md={r.p_md:.4g} p_fa={r.p_fa:.4g}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_detect(args):
    from .codebook import load_codebook
    from .inner_detector import DetectorOptions, EffectiveChannelModel, detect, select_support

    cb = load_codebook(args.codebook)
    Y = _load_array(args.y)
    if Y.ndim != 2 or Y.shape[0] != cb.n0:
        raise ConfigError(f"Y must be n0 x M with n0={cb.n0}, got shape {Y.shape}")
    eff = None
    if args.g_tilde:
        G = _load_array(args.g_tilde)
        if G.shape != (cb.size, Y.shape[1]):
            raise ConfigError(f"G_tilde must have shape {(cb.size, Y.shape[1])}, got {G.shape}")
        eff = EffectiveChannelModel(G_tilde=G, R=np.ones(cb.size))
    mode = args.mode or ("nonzero_mean" if eff is not None else "zero_mean_baseline")
    opts = DetectorOptions(max_outer_iters=args.max_iters, tol=args.tol, sigma2=args.sigma2,
                           mode=mode, seed=args.seed, update=args.update, order=args.order)
    res = detect(Y, cb, eff, opts)
    out = {
        "mode": mode,
        "gamma_hat": res.gamma_hat.tolist(),
        "objective_trace": [float(v) for v in res.trace],
        "likelihood_trace": [float(v) for v in res.likelihood_trace],
        "iterations": res.iterations,
        "converged": res.converged,
    }
    if args.top is not None:
        out["support"] = select_support(res.gamma_hat, args.top, 0).tolist()
    _emit(out, args.out)
    return EXIT_OK


def cmd_optimize(args):
    from .length_optimizer import optimize_lengths

    try:
        alloc = optimize_lengths(args.K, args.L, args.J, args.b, args.p_th, relax=args.relax)
    except InfeasibleError as exc:
        _emit({"feasible": False, "error": str(exc), "min_survivors": exc.min_survivors}, args.out)
        return EXIT_CONFIG
    _emit(alloc.to_dict(), args.out)
    return EXIT_OK


def cmd_fisher(args):
    from .codebook import generate_codebook, load_codebook
    from .fisher import GAMMA_FLOOR, fisher_matrix, predicted_error_distribution

    if args.codebook:
        cb = load_codebook(args.codebook)
    else:
        if args.n0 is None or args.J is None:
            raise ConfigError("give --codebook or both --n0 and --J")
        cb = generate_codebook(args.n0, args.J, args.power, seed=args.seed)
    if args.gamma.endswith(".npy"):
        gamma = np.asarray(_load_array(args.gamma), dtype=float)
    else:
        try:
            gamma = np.array([float(v) for v in args.gamma.split(",")])
        except ValueError as exc:
            raise ConfigError(f"bad --gamma list: {exc}") from exc
    if gamma.size == 1:
        gamma = np.full(cb.size, gamma[0])
    # the asymptotic theory needs an interior point
    gamma = np.maximum(gamma, GAMMA_FLOOR)
    G = _load_array(args.g_tilde) if args.g_tilde else None
    if G is None and args.M is None:
        raise ConfigError("give --M or --g-tilde")
    fm = fisher_matrix(gamma, cb, G, sigma2=args.sigma2, M=args.M, form=args.form)
    pred = predicted_error_distribution(fm)
    _emit({
        "form": fm.form,
        "M": fm.M,
        "gamma_tilde": fm.gamma_tilde.tolist(),
        "F": fm.F.tolist(),
        "predicted_variance": pred.variance.tolist(),
        "regularized": pred.regularized.tolist(),
        "ridge": pred.ridge,
    }, args.out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="ura-sim", description="Unsourced random access simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte Carlo run, optionally over a sweep axis")
    s.add_argument("--config", help="flat key = value config file")
    s.add_argument("--sweep", help="axis=a,b,c")
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="results")
    s.add_argument("--inner", choices=("detector", "oracle"), default="detector")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("detect", help="estimate gamma_tilde from a saved received block")
    d.add_argument("--y", required=True, help=".npy complex array, n0 x M")
    d.add_argument("--codebook", required=True)
    d.add_argument("--g-tilde", help=".npy complex array, 2^J x M (enables the mean term)")
    d.add_argument("--mode", choices=("nonzero_mean", "zero_mean_baseline"))
    d.add_argument("--update", choices=("exact", "linearized"), default="exact")
    d.add_argument("--order", choices=("uniform", "permutation"), default="uniform")
    d.add_argument("--sigma2", type=float, default=1.0)
    d.add_argument("--max-iters", type=int, default=20)
    d.add_argument("--tol", type=float, default=0.01)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--top", type=int, help="also report the indices of the TOP largest entries")
    d.add_argument("--out")
    d.set_defaults(func=cmd_detect)

    o = sub.add_parser("optimize-lengths", help="parity allocation minimizing decoding work")
    o.add_argument("--K", type=int, required=True)
    o.add_argument("--L", type=int, required=True)
    o.add_argument("--J", type=int, required=True)
    o.add_argument("--b", type=int, required=True)
    o.add_argument("--p-th", type=float, required=True)
    o.add_argument("--relax", action="store_true", help="fall back to the best effort allocation")
    o.add_argument("--out")
    o.set_defaults(func=cmd_optimize)

    f = sub.add_parser("fisher", help="Fisher information and predicted error variances")
    f.add_argument("--codebook")
    f.add_argument("--n0", type=int)
    f.add_argument("--J", type=int)
    f.add_argument("--power", type=float, default=1.0)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--gamma", required=True, help="comma list, single value or .npy")
    f.add_argument("--g-tilde")
    f.add_argument("--M", type=int)
    f.add_argument("--sigma2", type=float, default=1.0)
    f.add_argument("--form", choices=("exact", "expanded"), default="exact")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fisher)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, EncodingError, SizeError, InfeasibleError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, AnalysisError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except UraSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
