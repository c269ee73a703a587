"""Point-source scenes and their normalized moments.

A moment is stored as its signed radicand rad_k = sum_j gamma_j (x_j - X0)^k
plus the magnitude M_k = |rad_k|^(1/k) and the sign of rad_k. Moments are
taken about the centroid unless an explicit frame origin X0 is given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCovariance, EmptyScene, ValidationError, ZeroSizeShape


@dataclass(frozen=True, eq=False)
class Scene:
    points: np.ndarray   # (J,) in 1D, (J, 2) in 2D
    gamma: np.ndarray    # (J,), sums to 1
    epsilon: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        gam = np.asarray(self.gamma, dtype=float).ravel()
        if pts.size == 0 or gam.size == 0:
            raise EmptyScene("scene has no points")
        if pts.ndim == 2 and pts.shape[1] == 1:
            pts = pts[:, 0]
        if pts.ndim not in (1, 2) or (pts.ndim == 2 and pts.shape[1] != 2):
            raise ValidationError("points must be shaped (J,) or (J, 2)")
        if pts.shape[0] != gam.size:
            raise ValidationError("one weight per point is required")
        if np.any(gam < 0) or abs(gam.sum() - 1.0) > 1e-12:
            raise ValidationError("weights must be non-negative and sum to 1")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValidationError("epsilon must be positive")
        pts.setflags(write=False)
        gam.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "gamma", gam)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @classmethod
    def from_weights(cls, points, weights, epsilon: float) -> Scene:
        w = np.asarray(weights, dtype=float)
        return cls(points, w / w.sum(), epsilon)

    @property
    def dimension(self) -> int:
        return self.points.ndim

    @property
    def n_points(self) -> int:
        return self.gamma.size

    @property
    def centroid(self):
        c = self.gamma @ self.points
        return float(c) if self.dimension == 1 else c

    @property
    def size(self) -> float:
        p = self.points if self.dimension == 2 else self.points[:, None]
        d = np.sqrt(((p[:, None, :] - p[None, :, :]) ** 2).sum(-1))
        return float(d.max())

    def with_epsilon(self, epsilon: float) -> Scene:
        return Scene(self.points, self.gamma, epsilon)

    def translated(self, offset) -> Scene:
        return Scene(self.points + np.asarray(offset, dtype=float), self.gamma, self.epsilon)


@dataclass(frozen=True, eq=False)
class MomentVector:
    """Radicands of the scene moments about ``origin``.

    1D: ``rad[k]`` for k = 0..kmax. 2D: ``rad[k, l]`` for k + l <= kmax
    (other entries are nan).
    """

    centroid: object
    origin: object
    rad: np.ndarray
    size: float
    reach: float = 0.0     # largest distance of a point from the origin

    @property
    def kmax(self) -> int:
        return self.rad.shape[0] - 1

    @property
    def dimension(self) -> int:
        return self.rad.ndim

    def radicand(self, k) -> float:
        return float(self.rad[k])

    def magnitude(self, k) -> float:
        order = k if np.ndim(k) == 0 else sum(k)
        r = self.rad[k]
        return 0.0 if order == 0 else float(abs(r) ** (1.0 / order))

    def sign(self, k) -> float:
        return 1.0 if self.rad[k] >= 0 else -1.0

    @property
    def M(self) -> np.ndarray:
        """Magnitudes M_k (1D) or M_kl (2D), same layout as ``rad``."""
        out = np.zeros_like(self.rad)
        it = np.ndindex(self.rad.shape)
        for idx in it:
            order = idx[0] if self.dimension == 1 else idx[0] + idx[1]
            out[idx] = np.nan if np.isnan(self.rad[idx]) else (
                1.0 if order == 0 else abs(self.rad[idx]) ** (1.0 / order))
        return out


def moments(scene: Scene, kmax: int, origin=None) -> MomentVector:
    if kmax < 1:
        raise ValidationError("kmax must be at least 1")
    c = scene.centroid
    o = c if origin is None else origin
    if scene.dimension == 1:
        d = scene.points - float(o)
        rad = np.array([scene.gamma @ d**k for k in range(kmax + 1)])
    else:
        o = np.asarray(o, dtype=float)
        dx = scene.points[:, 0] - o[0]
        dy = scene.points[:, 1] - o[1]
        rad = np.full((kmax + 1, kmax + 1), np.nan)
        for k in range(kmax + 1):
            for l in range(kmax + 1 - k):
                rad[k, l] = scene.gamma @ (dx**k * dy**l)
    if origin is None:
        # exact zero for the first central moment
        if scene.dimension == 1:
            rad[1] = 0.0
        else:
            rad[1, 0] = rad[0, 1] = 0.0
    rad.setflags(write=False)
    off = scene.points - o
    reach = float(np.max(np.abs(off)) if scene.dimension == 1 else np.max(np.hypot(off[:, 0], off[:, 1])))
    return MomentVector(c, o, rad, scene.size, reach)


@dataclass(frozen=True)
class SecondMoments:
    X: float
    Y: float
    beta: float
    lam1: float
    lam2: float
    theta: float          # nan when lam1 == lam2
    theta_defined: bool

    @property
    def covariance(self) -> np.ndarray:
        xy = self.beta * self.X * self.Y
        return np.array([[self.X**2, xy], [xy, self.Y**2]])


def second_moment_params_2d(scene: Scene, tol: float = 1e-12) -> SecondMoments:
    if scene.dimension != 2:
        raise ValidationError("second_moment_params_2d needs a 2D scene")
    mv = moments(scene, 2)
    c20, c11, c02 = mv.rad[2, 0], mv.rad[1, 1], mv.rad[0, 2]
    scale = max(c20, c02, 0.0)
    if c20 <= tol * scale or c02 <= tol * scale or scale == 0:
        raise DegenerateCovariance("M20 or M02 vanishes; beta is undefined")
    X, Y = math.sqrt(c20), math.sqrt(c02)
    beta = float(np.clip(c11 / (X * Y), -1.0, 1.0))
    w, v = np.linalg.eigh(np.array([[c20, c11], [c11, c02]]))
    lam2, lam1 = (math.sqrt(max(x, 0.0)) for x in w)
    defined = (w[1] - w[0]) > tol * w[1]
    theta = math.nan
    if defined:
        vx, vy = v[:, 1]
        theta = math.atan2(vy, vx)
        # direction, not orientation: fold into (-pi/2, pi/2]
        if theta <= -math.pi / 2:
            theta += math.pi
        elif theta > math.pi / 2:
            theta -= math.pi
    return SecondMoments(X, Y, beta, lam1, lam2, theta, bool(defined))


def scaled_family(shape: Scene, s: float) -> Scene:
    """Rescale positions about the centroid so the scene size becomes ``s``."""
    s0 = shape.size
    if s0 <= 0:
        raise ZeroSizeShape("shape has zero size and cannot be rescaled")
    if not s > 0:
        raise ValidationError("target size must be positive")
    c = shape.centroid
    return Scene(c + (shape.points - c) * (s / s0), shape.gamma, shape.epsilon)
