"""Command-line entry point: ``rayleigh-moments <subcommand> ...``.

Exit codes: 0 success, 2 validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import _kernels
from .basis import gram_schmidt_basis, hermite_gauss
from .errors import RayleighError, ValidationError
from .fisher import appf_counterexample, appf_expectations_mc, centroid_scheme, qfim_angle, qfim_rho2
from .harness import (DEFAULT_SHAPE, ExperimentConfig, build_povm, build_psf, emit_results, load_config,
                      parse_scene_file, run_convergence_check, run_scaling_experiment, validate_config)
from .prob import mc_gaussian_oracle, weak_exact_probs, weak_series
from .psf import Psf2D, delta_k, inner_product
from .scene import Scene, moments, scaled_family
from .sim import centroid_two_stage, replicate_estimates

THREADS_ENV = "RAYLEIGH_MOMENTS_THREADS"


def _emit(args, rows, default_format="csv"):
    fmt = args.format or default_format
    text = emit_results(rows, fmt, args.out)
    if args.out is None:
        sys.stdout.write(text)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _psf(args, cfg):
    kind = getattr(args, "psf", None) or cfg.psf_kind
    sigma = getattr(args, "sigma", None) or cfg.sigma
    return build_psf(kind, sigma, getattr(args, "psf_file", None) or cfg.psf_file)


def _scene(args, cfg, epsilon=None) -> Scene:
    if getattr(args, "scene", None):
        sc = parse_scene_file(args.scene)
        return sc if epsilon is None else sc.with_epsilon(epsilon)
    return cfg.scene(epsilon=epsilon)


# ---------------------------------------------------------------- commands

def cmd_basis_check(args, cfg):
    psf = _psf(args, cfg)
    B = gram_schmidt_basis(psf, args.lmax)
    G = B.gram_matrix()
    rows = []
    for i in range(B.lmax + 1):
        row = {"l": i, "q": float(B.q[i])}
        if psf.kind == "gaussian":
            hg = hermite_gauss(i, psf.grid.nodes, psf.sigma)
            row["q_hermite_gauss"] = (2 * psf.sigma) ** (-i) / math.sqrt(math.factorial(i))
            row["hg_overlap"] = float(abs(inner_product(hg, B.modes[i], psf.grid)))
        for j in range(B.lmax + 1):
            row[f"gram_{j}"] = float(G[i, j].real)
        rows.append(row)
    _emit(args, rows)


def cmd_moments(args, cfg):
    sc = _scene(args, cfg)
    mv = moments(sc, args.kmax)
    out = {"dimension": sc.dimension, "epsilon": sc.epsilon, "centroid": np.atleast_1d(mv.centroid),
           "size": mv.size, "radicand": mv.rad, "M": mv.M}
    _emit(args, out, "json")


def cmd_fi_sweep(args, cfg):
    psf = _psf(args, cfg)
    shape = parse_scene_file(args.scene) if args.scene else Scene.from_weights(
        cfg.shape_points, cfg.shape_weights, 0.01)
    s_grid = np.logspace(math.log10(args.s_min), math.log10(args.s_max), args.points)
    rows, fits = [], []
    for eps in args.epsilon or cfg.epsilon:
        for k in args.k or cfg.moments:
            fit = run_scaling_experiment(psf, shape, args.povm or cfg.povm, k, s_grid, eps, lmax=args.lmax)
            rows += [{"s": r["s"], "epsilon": eps, "k": k, "F": r["F"], "regime": r["regime"]}
                     for r in fit.rows]
            fits.append({"k": k, "epsilon": eps, "slope": fit.slope, "stderr": fit.stderr,
                         "expected": fit.expected, "pass": fit.passed})
    _emit(args, rows)
    for f in fits:
        print(f"# k={f['k']} eps={f['epsilon']:g} slope={f['slope']:.4f}+-{f['stderr']:.1e} "
              f"expected={f['expected']} {'PASS' if f['pass'] else 'FAIL'}", file=sys.stderr)


def cmd_qfim(args, cfg):
    if args.sigma_y is not None or args.sigma_x is not None:
        sx = args.sigma_x or 1.0
        dk = delta_k(Psf2D.gaussian(sx, args.sigma_y or sx))
    else:
        dk = (args.dkx, args.dky if args.dky is not None else args.dkx, args.r)
    out = {}
    if args.L1 is not None:
        res = qfim_angle(args.L1, args.L2, args.theta, dk, args.epsilon)
        out["angle"] = {"params": list(res.report.params), "matrix": res.report.matrix,
                        "theta_prime": res.theta_prime, "radii_pair": list(res.radii_pair),
                        "angle_pair": list(res.angle_pair)}
    if args.X is not None:
        rep = qfim_rho2(dk, args.X, args.Y, args.beta, args.epsilon)
        out["xy_beta"] = {"params": list(rep.params), "matrix": rep.matrix,
                          "singular": rep.meta["singular"]}
    if not out:
        raise ValidationError("qfim needs --X/--Y/--beta or --L1/--L2/--theta")
    _emit(args, out, "json")


def cmd_simulate(args, cfg):
    psf = _psf(args, cfg)
    if args.scene or cfg.scene_file:
        sc = _scene(args, cfg)
    else:
        # two equal sources 0.1 sigma apart
        sc = Scene.from_weights([-0.05, 0.05], [0.5, 0.5], cfg.epsilon[0])
    povm = build_povm(args.povm or cfg.povm, psf, args.lmax, sc.epsilon)
    kmax = max(args.moment + 2, 4)
    model = weak_series(povm, kmax, scene=sc)
    probs = weak_exact_probs(sc, povm)
    if args.dump_probs:
        rows = [{"outcome": lab, "P": float(p), "SE": ""} for lab, p in zip(probs.labels, probs.values)]
        if args.mc:
            mc = mc_gaussian_oracle(sc, povm, args.mc, seed=cfg.seed)
            rows = [{"outcome": lab, "P": float(p), "SE": float(e)}
                    for lab, p, e in zip(mc.labels, mc.values, mc.se)]
        emit_results(rows, "csv", args.dump_probs)
    mv = moments(sc, kmax)
    N = int(args.shots or cfg.shots)
    reps = args.reps or cfg.replications
    study = replicate_estimates(probs, model, [args.moment], mv, N, reps, cfg.seed, args.method)
    rows = [{"replication": i, f"M{args.moment}": float(v)} for i, v in enumerate(study.estimates[:, 0])]
    summary = {"moment": args.moment, "truth": mv.magnitude(args.moment), "mean": float(study.mean[0]),
               "var": float(study.var[0]), "crb": float(study.crb[0]), "ratio": float(study.ratio[0]),
               "replications": reps, "shots": N, "seed": cfg.seed, "failures": study.failures,
               "config": cfg.echo()}
    if args.out:
        base, _ = os.path.splitext(args.out)
        emit_results(rows, "csv", base + ".csv")
        emit_results(summary, "json", base + ".json")
    else:
        sys.stdout.write(emit_results(summary, "json"))


def cmd_convergence(args, cfg):
    psf = _psf(args, cfg)
    shape = parse_scene_file(args.scene) if args.scene else DEFAULT_SHAPE
    rows = run_convergence_check(psf, shape, args.size or cfg.s_grid, args.epsilon, args.kmax)
    _emit(args, rows)


def cmd_centroid(args, cfg):
    psf = _psf(args, cfg)
    res = centroid_scheme(psf, args.epsilon, args.mode)
    out = {"fi_centroid": res.fi_centroid, "split_fim": res.split_fim, "qfim": res.qfim,
           "bound_trace": res.bound_trace, "split_trace": res.split_trace,
           "efficiency": res.efficiency, "max_tail_ratio": res.max_tail_ratio}
    if args.reps:
        shape = Scene.from_weights([-0.5, 0.5], [0.5, 0.5], args.epsilon)
        sc = scaled_family(shape, args.size).translated(args.offset)
        xs, ms = [], []
        ss = np.random.SeedSequence(cfg.seed)
        for child in ss.spawn(args.reps):
            r = centroid_two_stage(sc, psf, args.shots, args.split, rng=np.random.default_rng(child))
            xs.append(r.xbar)
            ms.append(r.m2)
        vx, vm = np.var(xs, ddof=1), np.var(ms, ddof=1)
        out["empirical_fim_per_shot"] = [1 / (vx * args.shots), 1 / (vm * args.shots)]
    _emit(args, out, "json")


def cmd_counterexample(args, cfg):
    psf = _psf(args, cfg)
    sc = _scene(args, cfg, args.epsilon) if args.scene else Scene.from_weights(
        [-0.3, -0.1, 0.1, 0.3], [0.25] * 4, args.epsilon)
    B = gram_schmidt_basis(psf, 6)
    res = appf_counterexample(sc, B)
    out = dict(res.__dict__)
    if args.mc:
        mean, se = appf_expectations_mc(sc, args.mc, cfg.seed)
        out["mc_expectations"] = mean
        out["mc_se"] = se
    _emit(args, out, "json")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool):
        # subcommands repeat the global flags without overriding values given earlier
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=d(None))
        g.add_argument("--out", default=d(None), help="output path (default stdout)")
        g.add_argument("--format", choices=("csv", "json"), default=d(None))
        g.add_argument("--config", default=d(None), help="key-value config file with sections")
        g.add_argument("--psf", default=d(None), help="gaussian | sinc | sampled")
        g.add_argument("--psf-file", default=d(None))
        g.add_argument("--sigma", type=float, default=d(None))
        return g

    common = global_flags(True)
    p = argparse.ArgumentParser(prog="rayleigh-moments", parents=[global_flags(False)],
                                description="Moment estimation limits for incoherent sources")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("basis-check", parents=[common], help="Gram matrix and q-vector")
    s.add_argument("--lmax", type=int, default=8)
    s.set_defaults(func=cmd_basis_check)

    s = sub.add_parser("moments", parents=[common], help="moment vector of a scene file")
    s.add_argument("--scene", required=False)
    s.add_argument("--kmax", type=int, default=6)
    s.set_defaults(func=cmd_moments)

    s = sub.add_parser("fi-sweep", parents=[common], help="F_kk against s with slope fits")
    s.add_argument("--povm", default=None)
    s.add_argument("--k", type=int, action="append")
    s.add_argument("--epsilon", type=float, action="append")
    s.add_argument("--scene", default=None, help="shape to rescale")
    s.add_argument("--s-min", type=float, default=1e-3)
    s.add_argument("--s-max", type=float, default=10**-1.5)
    s.add_argument("--points", type=int, default=10)
    s.add_argument("--lmax", type=int, default=10)
    s.set_defaults(func=cmd_fi_sweep)

    s = sub.add_parser("qfim", parents=[common], help="QFIM of the 2D second-moment block")
    s.add_argument("--X", type=float)
    s.add_argument("--Y", type=float)
    s.add_argument("--beta", type=float, default=0.0)
    s.add_argument("--L1", type=float)
    s.add_argument("--L2", type=float)
    s.add_argument("--theta", type=float, default=0.0)
    s.add_argument("--dkx", type=float, default=0.5)
    s.add_argument("--dky", type=float, default=None)
    s.add_argument("--r", type=float, default=0.0)
    s.add_argument("--sigma-x", type=float, default=None)
    s.add_argument("--sigma-y", type=float, default=None)
    s.add_argument("--epsilon", type=float, default=0.01)
    s.set_defaults(func=cmd_qfim)

    s = sub.add_parser("simulate", parents=[common], help="replicated estimation against the CRB")
    s.add_argument("--scene", default=None)
    s.add_argument("--povm", default=None)
    s.add_argument("--moment", type=int, default=2)
    s.add_argument("--shots", type=float, default=None)
    s.add_argument("--reps", type=int, default=None)
    s.add_argument("--method", choices=("moment-inversion", "max-likelihood"), default="moment-inversion")
    s.add_argument("--lmax", type=int, default=8)
    s.add_argument("--dump-probs", default=None, help="write per-outcome probabilities as CSV")
    s.add_argument("--mc", type=int, default=0, help="use the Monte Carlo oracle with this many samples")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("convergence", parents=[common], help="series against exact probabilities")
    s.add_argument("--scene", default=None)
    s.add_argument("--size", type=float, action="append", help="scene size s (repeatable)")
    s.add_argument("--epsilon", type=float, default=0.01)
    s.add_argument("--kmax", type=int, default=8)
    s.set_defaults(func=cmd_convergence)

    s = sub.add_parser("centroid", parents=[common], help="centroid pre-estimation scheme")
    s.add_argument("--epsilon", type=float, default=0.01)
    s.add_argument("--mode", choices=("weak", "strong"), default="weak")
    s.add_argument("--reps", type=int, default=0)
    s.add_argument("--shots", type=int, default=10**7)
    s.add_argument("--split", type=float, default=0.5)
    s.add_argument("--size", type=float, default=0.1)
    s.add_argument("--offset", type=float, default=0.002)
    s.set_defaults(func=cmd_centroid)

    s = sub.add_parser("counterexample", parents=[common], help="two-photon subspace gain for M8")
    s.add_argument("--scene", default=None)
    s.add_argument("--epsilon", type=float, default=1.0)
    s.add_argument("--mc", type=int, default=0)
    s.set_defaults(func=cmd_counterexample)
    return p


def _set_threads():
    n = os.environ.get(THREADS_ENV)
    if n and _kernels.HAVE_NUMBA:
        import numba
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _set_threads()
        cfg = _config(args)
        if args.config:
            validate_config(cfg)
        args.func(args, cfg)
    except RayleighError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
