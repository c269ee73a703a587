"""Experiment recipes, config loading and result emission."""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import gram_schmidt_basis, separable_basis_2d
from .errors import InsufficientGrid, IoError, OutsideConvergenceRadius, ValidationError
from .fisher import fi_from_series
from .povm import (Povm, direct_imaging_povm, dressed_povm, interleaved_povm, sliver_povm,
                   spade_povm, table2d_povm)
from .prob import weak_exact_probs, weak_series
from .psf import Psf2D, convergence_radius_lower_bound, gaussian, load_sampled, sinc
from .scene import Scene, moments, scaled_family

MIN_GRID = 8
DEFAULT_SHAPE = Scene.from_weights([-1.0, 0.25, 1.0], [0.3, 0.5, 0.2], 0.01)


# ==========================================================================
# builders
# ==========================================================================

def build_psf(kind: str = "gaussian", sigma: float = 1.0, path: str | None = None,
              sigma_y: float | None = None, lmax: int | None = None):
    kind = kind.lower()
    if kind == "gaussian":
        if sigma_y is not None:
            return Psf2D.gaussian(sigma, sigma_y)
        return gaussian(sigma)
    if kind == "gaussian2d":
        return Psf2D.gaussian(sigma, sigma_y)
    if kind == "sinc":
        return sinc(sigma)
    if kind == "sampled":
        if not path:
            raise ValidationError("a sampled PSF needs a file path")
        if not os.path.exists(path):
            raise IoError(f"PSF file {path} not found")
        return load_sampled(path, lmax=lmax or 6)
    raise ValidationError(f"unknown PSF kind {kind!r}")


def build_povm(name: str, psf, lmax: int = 8, epsilon: float | None = None) -> Povm:
    """POVM from a CLI name: spade, interleaved-even/odd, sliver, direct:<w>, b0w..b6w, dressed:<base>."""
    name = name.strip()
    if name.startswith("dressed:"):
        base = build_povm(name[len("dressed:"):], psf, lmax, epsilon)
        return dressed_povm(base, "summed", epsilon)
    if name.startswith("direct"):
        width = float(name.split(":", 1)[1]) if ":" in name else 0.1 * getattr(psf, "sigma", 1.0)
        return direct_imaging_povm(psf, width)
    if name == "sliver":
        return sliver_povm(psf)
    if isinstance(psf, Psf2D):
        if name.lower() in ("b0w", "b1w", "b2w", "b3w", "b4w", "b5w", "b6w"):
            b2 = separable_basis_2d(gram_schmidt_basis(psf.fx, lmax), gram_schmidt_basis(psf.fy, lmax))
            return table2d_povm(b2, name)
        raise ValidationError(f"POVM {name!r} is not available in 2D")
    basis = gram_schmidt_basis(psf, lmax)
    if name == "spade":
        return spade_povm(basis)
    if name in ("interleaved-even", "interleaved-odd"):
        return interleaved_povm(basis, name.split("-")[1])
    raise ValidationError(f"unknown POVM {name!r}")


def parse_scene_file(path) -> Scene:
    """Structured text: 'dimension = d', 'epsilon = e', then rows 'x [y] gamma'.

    Blank lines and '#' comments are ignored; weights are renormalized.
    """
    if not os.path.exists(path):
        raise IoError(f"scene file {path} not found")
    header, rows = {}, []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                k, v = (t.strip() for t in line.split("=", 1))
                header[k.lower()] = v
            else:
                rows.append([float(t) for t in line.replace(",", " ").split()])
    if "epsilon" not in header:
        raise ValidationError("scene file needs an 'epsilon = ...' line")
    dim = int(header.get("dimension", len(rows[0]) - 1 if rows else 1))
    if not rows or any(len(r) != dim + 1 for r in rows):
        raise ValidationError(f"scene rows must have {dim + 1} columns")
    data = np.array(rows)
    pts = data[:, 0] if dim == 1 else data[:, :2]
    return Scene.from_weights(pts, data[:, -1], float(header["epsilon"]))


# ==========================================================================
# config
# ==========================================================================

def _floats(text):
    return [float(t) for t in str(text).replace(",", " ").split()] if text else []


@dataclass
class ExperimentConfig:
    psf_kind: str = "gaussian"
    sigma: float = 1.0
    sigma_y: float | None = None
    psf_file: str | None = None
    scene_file: str | None = None
    shape_points: list = field(default_factory=lambda: list(DEFAULT_SHAPE.points))
    shape_weights: list = field(default_factory=lambda: list(DEFAULT_SHAPE.gamma))
    s_grid: list = field(default_factory=lambda: list(np.logspace(-3, -1.5, 10)))
    povm: str = "spade"
    lmax: int = 10
    epsilon: list = field(default_factory=lambda: [0.01])
    moments: list = field(default_factory=lambda: [2])
    kmax: int = 10
    shots: int = 10**7
    replications: int = 200
    seed: int = 0
    out: str | None = None
    format: str = "csv"
    length_unit: float = 1.0

    def scene(self, s: float | None = None, epsilon: float | None = None) -> Scene:
        eps = self.epsilon[0] if epsilon is None else epsilon
        if self.scene_file:
            sc = parse_scene_file(self.scene_file)
            sc = sc.with_epsilon(eps) if epsilon is not None else sc
        else:
            sc = Scene.from_weights(np.array(self.shape_points) / self.length_unit, self.shape_weights, eps)
        if s is not None:
            sc = scaled_family(sc, s)
        return sc.translated(-sc.centroid)

    def echo(self) -> dict:
        d = asdict(self)
        d["shape_points"] = [float(x) for x in d["shape_points"]]
        d["shape_weights"] = [float(x) for x in d["shape_weights"]]
        d["s_grid"] = [float(x) for x in d["s_grid"]]
        return d


def load_config(path) -> ExperimentConfig:
    """Sections [psf], [scene], [sweep], [povm], [sim], [output]; lengths in units of sigma."""
    if not os.path.exists(path):
        raise IoError(f"config file {path} not found")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ValidationError(f"cannot parse {path}: {exc}") from exc
    cfg = ExperimentConfig()
    g = lambda sec, key, default=None: cp.get(sec, key, fallback=default)  # noqa: E731
    cfg.psf_kind = g("psf", "kind", cfg.psf_kind)
    cfg.sigma = float(g("psf", "sigma", cfg.sigma))
    sy = g("psf", "sigma_y")
    cfg.sigma_y = float(sy) if sy else None
    cfg.psf_file = g("psf", "file")
    cfg.length_unit = float(g("scene", "length_unit", cfg.length_unit))
    cfg.scene_file = g("scene", "file")
    if g("scene", "points"):
        cfg.shape_points = _floats(g("scene", "points"))
        cfg.shape_weights = _floats(g("scene", "weights")) or [1.0] * len(cfg.shape_points)
    if g("sweep", "s"):
        cfg.s_grid = [x / cfg.length_unit for x in _floats(g("sweep", "s"))]
    elif g("sweep", "s_min"):
        cfg.s_grid = list(np.logspace(math.log10(float(g("sweep", "s_min")) / cfg.length_unit),
                                      math.log10(float(g("sweep", "s_max")) / cfg.length_unit),
                                      int(g("sweep", "points", 10))))
    if g("sweep", "epsilon"):
        cfg.epsilon = _floats(g("sweep", "epsilon"))
    if g("sweep", "moments"):
        cfg.moments = [int(x) for x in _floats(g("sweep", "moments"))]
    cfg.kmax = int(g("sweep", "kmax", cfg.kmax))
    cfg.povm = g("povm", "name", cfg.povm)
    cfg.lmax = int(g("povm", "lmax", cfg.lmax))
    cfg.shots = int(float(g("sim", "shots", cfg.shots)))
    cfg.replications = int(g("sim", "replications", cfg.replications))
    cfg.seed = int(g("sim", "seed", cfg.seed))
    cfg.out = g("output", "path", cfg.out)
    cfg.format = g("output", "format", cfg.format)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    for f in (cfg.psf_file, cfg.scene_file):
        if f and not os.path.exists(f):
            raise IoError(f"referenced file {f} not found")
    if not cfg.s_grid or not cfg.epsilon or not cfg.moments:
        raise ValidationError("s, epsilon and moment grids must be non-empty")
    if cfg.format not in ("csv", "json"):
        raise ValidationError("format must be csv or json")
    psf = build_psf(cfg.psf_kind, cfg.sigma, cfg.psf_file, cfg.sigma_y)
    factors = (psf.fx, psf.fy) if isinstance(psf, Psf2D) else (psf,)
    r0 = min(convergence_radius_lower_bound(f, min(f.lmax, 12)) for f in factors)
    bad = [s for s in cfg.s_grid if s >= r0]
    if bad:
        raise OutsideConvergenceRadius(f"s = {bad[0]:g} is not below the convergence radius {r0:g}")


# ==========================================================================
# experiments
# ==========================================================================

EXPECTED_SLOPE = {
    "spade": lambda k: k - 2,
    "interleaved": lambda k: k - 1,
    "direct": lambda k: 2 * k - 2,
}


def expected_slope(povm_name: str, k: int) -> float:
    if povm_name.startswith("direct"):
        return EXPECTED_SLOPE["direct"](k)
    if povm_name.startswith("interleaved"):
        return EXPECTED_SLOPE["interleaved"](k) if k % 2 else EXPECTED_SLOPE["spade"](k)
    return EXPECTED_SLOPE["spade"](k)


@dataclass(frozen=True)
class SlopeFit:
    moment: int
    povm: str
    slope: float
    stderr: float
    expected: float
    used: int
    rows: tuple

    @property
    def passed(self) -> bool:
        return abs(self.slope - self.expected) <= 0.1


def fit_loglog(s, F):
    x, y = np.log(np.asarray(s)), np.log(np.asarray(F))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    n = len(x)
    resid = y - A @ coef
    s2 = float(resid @ resid) / max(n - 2, 1)
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[0]), float(math.sqrt(cov[0, 0]))


def run_scaling_experiment(psf, shape: Scene, povm_name: str, k: int, s_grid, epsilon: float = 0.01,
                           kmax: int | None = None, lmax: int = 10) -> SlopeFit:
    """Fit the exponent of F_kk against s for one moment and POVM.

    Points where the series remainder bound exceeds 1% of the smallest
    probability among the outcomes carrying the information are dropped
    before fitting.
    """
    s_grid = sorted(float(s) for s in s_grid)
    if len(s_grid) < MIN_GRID:
        raise InsufficientGrid(f"need at least {MIN_GRID} s values, got {len(s_grid)}")
    kmax = kmax or max(k + 2, 4)
    povm = build_povm(povm_name, psf, lmax, epsilon)
    ser = weak_series(povm, kmax, epsilon)
    rows = []
    for s in s_grid:
        sc = scaled_family(shape.with_epsilon(epsilon), s)
        sc = sc.translated(-sc.centroid)
        mv = moments(sc, kmax)
        rep = fi_from_series(ser, [k], mv)
        P = ser.evaluate(mv)
        g = ser.gradient(mv, k)
        # outcomes carrying at least 1e-6 of the information
        contrib = np.where(P > 0, g * g / np.where(P > 0, P, 1.0), 0.0)
        inf = contrib >= 1e-6 * contrib.sum()
        pmin = float(P[inf].min()) if np.any(inf) else math.nan
        bound = ser.remainder_bound(mv)
        ok = bool(np.isfinite(pmin) and bound <= 0.01 * pmin and rep.matrix[0, 0] > 0)
        rows.append({"s": s, "epsilon": epsilon, "k": k, "F": float(rep.matrix[0, 0]),
                     "regime": "series", "remainder": bound, "p_min": pmin, "used": ok})
    used = [r for r in rows if r["used"]]
    if len(used) < MIN_GRID:
        raise InsufficientGrid(f"only {len(used)} s values pass the remainder check")
    slope, se = fit_loglog([r["s"] for r in used], [r["F"] for r in used])
    return SlopeFit(k, povm_name, slope, se, expected_slope(povm_name, k), len(used), tuple(rows))


def run_convergence_check(psf, shape: Scene, s_grid, epsilon: float = 0.01, kmax: int = 8,
                          povm_name: str = "spade", lmax: int = 10, floor: float = 1e-12) -> list[dict]:
    """Series against exact weak probabilities for each s; s >= R0 is flagged and skipped."""
    povm = build_povm(povm_name, psf, lmax, epsilon)
    ser = weak_series(povm, kmax, epsilon)
    out = []
    for s in s_grid:
        sc = scaled_family(shape.with_epsilon(epsilon), float(s))
        sc = sc.translated(-sc.centroid)
        if sc.size >= ser.r0:
            out.append({"s": float(s), "r0": ser.r0, "remainder": math.inf, "error": math.nan,
                        "status": "rejected"})
            continue
        mv = moments(sc, kmax)
        err = float(np.max(np.abs(ser.evaluate(mv) - weak_exact_probs(sc, povm).values)))
        bound = ser.remainder_bound(mv)
        out.append({"s": float(s), "r0": ser.r0, "remainder": bound, "error": err,
                    "status": "pass" if err <= bound + floor * epsilon else "fail"})
    return out


# ==========================================================================
# emission
# ==========================================================================

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def emit_results(rows, format: str = "csv", path=None) -> str:
    """Write rows (list of dicts, or one dict for JSON) and return the text.

    CSV floats use 17 significant digits; JSON uses shortest round-trip
    floats. ``path=None`` only returns the text.
    """
    if format == "csv":
        rows = list(rows)
        if not rows:
            raise ValidationError("nothing to emit")
        header = list(rows[0].keys())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(h, "")) for h in header])
        text = buf.getvalue()
    elif format == "json":
        text = json.dumps(_jsonable(rows), indent=2, allow_nan=True) + "\n"
    else:
        raise ValidationError(f"unknown format {format!r}")
    if path is not None:
        try:
            with open(path, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
    return text


def _parse_cell(t: str):
    if t in ("true", "false"):
        return t == "true"
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def read_results(path, format: str | None = None):
    format = format or ("json" if str(path).endswith(".json") else "csv")
    try:
        with open(path) as fh:
            if format == "json":
                return json.load(fh)
            return [{k: _parse_cell(v) for k, v in r.items()} for r in csv.DictReader(fh)]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
