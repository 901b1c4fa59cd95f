"""Space-time points, cubes and cylinders, and the anisotropic distances.

Points live in R^n x R with coordinates ``(x', x_n, t)``; ``x_n`` is the
direction normal to the fixed boundary ``{x_n = 0}``.  Two distances are
provided:

    d((x,t),(y,s))   = min{|x'-y'| + |x_n-y_n| + |t-s|^(1/2),
                           |x'-y'| + |x_n| + |y_n| + |t-s|}
    d_lam(p, q)      = d(lam*p, lam*q) / lam

The first branch is parabolic, the second hyperbolic; the hyperbolic branch
wins close to the boundary hyperplane.

All time intervals are half-open ``(lo, hi]``; spatial faces of cubes are
closed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "SpaceTimePoint",
    "RegionKind",
    "Region",
    "AnisotropicBall",
    "distance_d",
    "distance_d_lambda",
    "pairwise_d_lambda",
    "ball_membership",
    "DimensionError",
]

_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when points of different spatial dimension are mixed."""


@dataclass(frozen=True)
class SpaceTimePoint:
    x_prime: tuple[float, ...]
    x_n: float
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x_prime", tuple(float(v) for v in np.atleast_1d(self.x_prime)))
        object.__setattr__(self, "x_n", float(self.x_n))
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return len(self.x_prime) + 1

    @property
    def x(self) -> np.ndarray:
        return np.array(self.x_prime + (self.x_n,))

    @classmethod
    def from_array(cls, x, t) -> "SpaceTimePoint":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(tuple(x[:-1]), x[-1], t)

    def scaled(self, lam: float) -> "SpaceTimePoint":
        """The point ``lam * (x, t)`` (same factor on every coordinate)."""
        return SpaceTimePoint(tuple(lam * v for v in self.x_prime), lam * self.x_n, lam * self.t)

    def to_list(self) -> list:
        return [list(self.x_prime), self.x_n, self.t]


def _check_pair(p: SpaceTimePoint, q: SpaceTimePoint):
    if p.n != q.n:
        raise DimensionError(f"dimension mismatch: n={p.n} vs n={q.n}")


def _d_parts(p: SpaceTimePoint, q: SpaceTimePoint):
    _check_pair(p, q)
    tang = float(np.sum(np.abs(np.subtract(p.x_prime, q.x_prime))))
    dt = abs(p.t - q.t)
    return tang, abs(p.x_n - q.x_n), abs(p.x_n) + abs(q.x_n), dt


def distance_d(p: SpaceTimePoint, q: SpaceTimePoint) -> float:
    """Parabolic/hyperbolic distance ``d`` between two space-time points."""
    tang, dn, sn, dt = _d_parts(p, q)
    return min(tang + dn + dt ** 0.5, tang + sn + dt)


def distance_d_lambda(p: SpaceTimePoint, q: SpaceTimePoint, lam: float) -> float:
    """Rescaled distance ``d_lam``; equals :func:`distance_d` at ``lam = 1``."""
    if not (0.0 < lam <= 1.0):
        raise ValueError(f"lambda must lie in (0, 1], got {lam}")
    tang, dn, sn, dt = _d_parts(p, q)
    return min(tang + dn + (dt / lam) ** 0.5, tang + sn + dt)


def pairwise_d_lambda(xa, ta, xb, tb, lam: float = 1.0) -> np.ndarray:
    """Vectorised ``d_lam`` between rows of two point sets.

    ``xa``/``xb`` have shape ``(m, n)`` (last column is ``x_n``) and ``ta``/``tb``
    shape ``(m,)``.  Returns an array of shape ``(m,)``.
    """
    if not (0.0 < lam <= 1.0):
        raise ValueError(f"lambda must lie in (0, 1], got {lam}")
    xa = np.atleast_2d(xa)
    xb = np.atleast_2d(xb)
    if xa.shape[-1] != xb.shape[-1]:
        raise DimensionError("dimension mismatch")
    tang = np.sum(np.abs(xa[..., :-1] - xb[..., :-1]), axis=-1)
    dn = np.abs(xa[..., -1] - xb[..., -1])
    sn = np.abs(xa[..., -1]) + np.abs(xb[..., -1])
    dt = np.abs(np.asarray(ta) - np.asarray(tb))
    return np.minimum(tang + dn + np.sqrt(dt / lam), tang + sn + dt)


class RegionKind(str, Enum):
    CUBE = "cube"                  # Q_r(x0) x (t0 - r, t0]
    HALF_CUBE = "half_cube"        # Q_r^+(x0) x (t0 - r, t0]
    CYLINDER = "cylinder"          # C_r = (Q_r n {x_n > 0}) x (-r, 0], shifted by center
    LATERAL = "lateral"            # F_r = (Q_r n {x_n = 0}) x (-r, 0]
    PARABOLIC = "parabolic"        # P_r(x0, t0) = Q_r(x0) x (t0 - r^2, t0]
    DIRICHLET = "dirichlet"        # d_D C_r: closure of C_r on {t = -r} u {x_n = r} u {|x_i| = r}


@dataclass(frozen=True)
class Region:
    """A space-time region described by kind, center and radius.

    ``contains`` is vectorised over coordinate arrays so that it can be used
    directly as a grid mask.
    """

    kind: RegionKind
    radius: float
    center: SpaceTimePoint
    lam: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", RegionKind(self.kind))
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @classmethod
    def cylinder(cls, r: float, n: int = 2) -> "Region":
        return cls(RegionKind.CYLINDER, r, SpaceTimePoint((0.0,) * (n - 1), 0.0, 0.0))

    @classmethod
    def lateral(cls, r: float, n: int = 2) -> "Region":
        return cls(RegionKind.LATERAL, r, SpaceTimePoint((0.0,) * (n - 1), 0.0, 0.0))

    @classmethod
    def dirichlet(cls, r: float, n: int = 2) -> "Region":
        return cls(RegionKind.DIRICHLET, r, SpaceTimePoint((0.0,) * (n - 1), 0.0, 0.0))

    def contains(self, x, t) -> np.ndarray:
        """Membership of points; ``x[..., i]`` is the i-th coordinate."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        c = self.center
        r = self.radius
        off = x - c.x
        tang_in = np.all(np.abs(off[..., :-1]) <= r + _TOL, axis=-1)
        xn = off[..., -1]
        s = t - c.t
        k = self.kind
        if k is RegionKind.CUBE:
            return tang_in & (np.abs(xn) <= r + _TOL) & (s > -r + _TOL) & (s <= _TOL)
        if k is RegionKind.HALF_CUBE:
            return tang_in & (np.abs(xn) <= r + _TOL) & (x[..., -1] >= -_TOL) & (s > -r + _TOL) & (s <= _TOL)
        if k is RegionKind.PARABOLIC:
            return tang_in & (np.abs(xn) <= r + _TOL) & (s > -r * r + _TOL) & (s <= _TOL)
        if k is RegionKind.CYLINDER:
            return tang_in & (xn > _TOL) & (xn <= r + _TOL) & (s > -r + _TOL) & (s <= _TOL)
        if k is RegionKind.LATERAL:
            return tang_in & (np.abs(xn) <= _TOL) & (s > -r + _TOL) & (s <= _TOL)
        if k is RegionKind.DIRICHLET:
            closure = tang_in & (xn >= -_TOL) & (xn <= r + _TOL) & (s >= -r - _TOL) & (s <= _TOL)
            on_face = (
                (np.abs(s + r) <= _TOL)
                | (np.abs(xn - r) <= _TOL)
                | np.any(np.abs(np.abs(off[..., :-1]) - r) <= _TOL, axis=-1)
            )
            # points of F_r (x_n = 0) are excluded unless they lie on another face
            return closure & on_face
        raise ValueError(k)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "center": self.center.to_list(), "radius": self.radius, "lambda": self.lam}

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        xp, xn, t = d["center"]
        return cls(RegionKind(d["kind"]), float(d["radius"]), SpaceTimePoint(tuple(xp), xn, t), float(d.get("lambda", 1.0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "Region":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class AnisotropicBall:
    """The ball ``B_{lam,r}(y, s)``.

    Parabolic branch ``Q_r(y) x (s - lam r^2, s]`` when ``r < |y_n|``, boundary
    branch ``Q_r^+(y) x (s - r, s]`` when ``1/lam >= r >= |y_n|``.
    """

    center: SpaceTimePoint
    radius: float
    lam: float = 1.0
    _parabolic: bool = field(init=False, repr=False, default=False)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not (0.0 < self.lam <= 1.0):
            raise ValueError(f"lambda must lie in (0, 1], got {self.lam}")
        yn = abs(self.center.x_n)
        if self.radius >= yn and self.radius > 1.0 / self.lam + _TOL:
            raise ValueError("radius exceeds 1/lambda in the boundary branch")
        object.__setattr__(self, "_parabolic", self.radius < yn)

    @property
    def parabolic(self) -> bool:
        return self._parabolic

    def time_interval(self) -> tuple[float, float]:
        s = self.center.t
        depth = self.lam * self.radius ** 2 if self._parabolic else self.radius
        return s - depth, s

    def contains(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        off = x - self.center.x
        r = self.radius
        inside = np.all(np.abs(off) < r, axis=-1)
        if not self._parabolic:
            inside &= x[..., -1] >= 0.0
        lo, hi = self.time_interval()
        return inside & (t > lo + _TOL) & (t <= hi + _TOL)


def ball_membership(b: AnisotropicBall, p: SpaceTimePoint) -> bool:
    if p.n != b.center.n:
        raise DimensionError("dimension mismatch")
    return bool(b.contains(p.x, p.t))
