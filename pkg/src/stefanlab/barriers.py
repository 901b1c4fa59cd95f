"""Closed-form sub/supersolutions and sampled verifiers.

Every barrier exposes a smooth *level* function ``phi`` (the barrier itself is
``phi^+`` on the relevant sheet) together with analytic derivatives of
``phi``.  Verifiers sample interior points of ``{phi > 0}`` on a grid and
free-boundary points ``{phi = 0}`` found by column-wise root bracketing, and
report the worst residual rather than assuming any constant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erf

from .fields import ScalarField
from .geometry import Region, RegionKind, SpaceTimePoint
from .oblique_linear import pucci_minus, pucci_plus

__all__ = [
    "SampleDomain",
    "TravelingWave",
    "RadialSupersolution",
    "PerturbedPlaneSubsolution",
    "TouchingPolynomial",
    "QuadraticField",
    "DistanceBarrier",
    "HeatKernelBarrier1D",
    "GBarrier",
    "BarrierValue",
    "BarrierReport",
    "DegenerateTouchingError",
    "evaluate",
    "verify_strict_supersolution_stefan",
    "verify_strict_subsolution_stefan",
    "verify_subsolution_linear",
    "verify_strict_supersolution_linear",
    "sup_convolution",
]

ATOL = 1e-12
GRAD_FLOOR = 1e-10


class DegenerateTouchingError(ValueError):
    """Gradient vanishes on the candidate free boundary."""


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True)
class SampleDomain:
    """Bounding box in space-time, an optional membership predicate and an
    optional moving frame ``shift(t)`` added to every spatial sample."""

    name: str
    lo: tuple
    hi: tuple
    t_range: tuple
    predicate: Callable | None = None
    shift: Callable | None = None

    @property
    def n(self) -> int:
        return len(self.lo)

    @classmethod
    def from_region(cls, region: Region) -> "SampleDomain":
        c = region.center.x
        r = region.radius
        lo = c - r
        hi = c + r
        k = region.kind
        if k in (RegionKind.CYLINDER, RegionKind.HALF_CUBE, RegionKind.DIRICHLET):
            lo = lo.copy()
            lo[-1] = c[-1] if k is not RegionKind.HALF_CUBE else max(lo[-1], 0.0)
        if k is RegionKind.LATERAL:
            lo = lo.copy()
            hi = hi.copy()
            lo[-1] = hi[-1] = c[-1]
        depth = r * r if k is RegionKind.PARABOLIC else r
        return cls(k.value, tuple(lo), tuple(hi), (region.center.t - depth, region.center.t), region.contains)

    def _keep(self, x, t):
        if self.predicate is None:
            return np.ones(len(t), bool)
        return np.asarray(self.predicate(x, t), bool)

    def _offset(self, t):
        if self.shift is None:
            return 0.0
        return np.asarray(self.shift(t), float).reshape(len(t), self.n)

    def grid(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Tensor grid with ``m`` points per axis, filtered by the predicate."""
        axes = [np.linspace(a, b, m) if b > a else np.array([a]) for a, b in zip(self.lo, self.hi)]
        axes.append(np.linspace(*self.t_range, m))
        g = np.meshgrid(*axes, indexing="ij")
        x = np.stack([gi.ravel() for gi in g[:-1]], axis=-1)
        t = g[-1].ravel()
        x = x + self._offset(t)
        keep = self._keep(x, t)
        return x[keep], t[keep]

    def boundary_grid(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Samples on the flat boundary ``{x_n = 0}`` inside the domain."""
        axes = [np.linspace(a, b, m) if b > a else np.array([a]) for a, b in zip(self.lo[:-1], self.hi[:-1])]
        axes.append(np.linspace(*self.t_range, m))
        g = np.meshgrid(*axes, indexing="ij")
        t = g[-1].ravel()
        x = np.stack([gi.ravel() for gi in g[:-1]] + [np.zeros_like(t)], axis=-1)
        keep = self._keep(x, t)
        return x[keep], t[keep]

    def columns(self, m: int, fine: int):
        """Columns along ``x_n``: base points ``(x', t)`` and the ``x_n`` samples."""
        axes = [np.linspace(a, b, m) if b > a else np.array([a]) for a, b in zip(self.lo[:-1], self.hi[:-1])]
        axes.append(np.linspace(*self.t_range, m))
        g = np.meshgrid(*axes, indexing="ij")
        t = g[-1].ravel()
        xp = np.stack([gi.ravel() for gi in g[:-1]], axis=-1) if self.n > 1 else np.zeros((len(t), 0))
        off = self._offset(t) if self.shift is not None else np.zeros((len(t), self.n))
        xp = xp + off[:, :-1]
        xn = np.linspace(self.lo[-1], self.hi[-1], fine)[None, :] + off[:, -1:]
        return xp, t, xn

    def to_dict(self) -> dict:
        return {"name": self.name, "lo": list(self.lo), "hi": list(self.hi), "t_range": list(self.t_range)}


def _as_domain(region) -> SampleDomain:
    if isinstance(region, SampleDomain):
        return region
    if isinstance(region, Region):
        return SampleDomain.from_region(region)
    raise TypeError("region must be a Region or SampleDomain")


def _front_points(phi, dom: SampleDomain, m: int, fine: int = 0, iters: int = 80):
    """Zeros of ``phi.level`` along ``x_n`` columns by vectorised bisection."""
    if hasattr(phi, "front_points"):
        pts = phi.front_points(dom, m)
        if pts is not None:
            return pts
    fine = fine or 4 * m
    xp, t, xn = dom.columns(m, fine)
    ncol = len(t)
    X = np.concatenate([np.repeat(xp[:, None, :], fine, axis=1), xn[:, :, None]], axis=-1)
    T = np.repeat(t[:, None], fine, axis=1)
    lev = phi.level(X.reshape(-1, dom.n), T.ravel()).reshape(ncol, fine)
    s = np.sign(lev)
    ci, ki = np.nonzero(s[:, :-1] * s[:, 1:] < 0)
    exact_c, exact_k = np.nonzero(lev == 0.0)
    a = xn[ci, ki].copy()
    b = xn[ci, ki + 1].copy()
    fa = lev[ci, ki]
    base = xp[ci]
    tt = t[ci]
    for _ in range(iters):
        mid = 0.5 * (a + b)
        fm = phi.level(np.concatenate([base, mid[:, None]], axis=1), tt)
        left = np.sign(fm) == np.sign(fa)
        a = np.where(left, mid, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, mid)
    x = np.concatenate([base, (0.5 * (a + b))[:, None]], axis=1)
    if len(exact_c):
        xe = np.concatenate([xp[exact_c], xn[exact_c, exact_k][:, None]], axis=1)
        x = np.concatenate([x, xe])
        tt = np.concatenate([tt, t[exact_c]])
    keep = dom._keep(x, tt)
    return x[keep], tt[keep]


# ---------------------------------------------------------------- barriers


@dataclass(frozen=True)
class BarrierValue:
    value: float
    grad: np.ndarray
    hess: np.ndarray
    dt: float


@dataclass(frozen=True)
class TravelingWave:
    """Exact planar solution of ``u_t = D Lap u``, ``u_t = s |grad u|^2``.

    ``u = (D/s) (exp(k (x_n + s a t)) - 1)^+`` with ``k = s a / D``: the slope at
    the front is ``a`` and the front is ``x_n = -s a t``.  With ``D = s = 1``
    this is ``(exp(a x_n + a^2 t) - 1)^+``.
    """

    a: float
    n: int = 2
    K: float | None = None
    D: float = 1.0
    s: float = 1.0

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("slope a must be positive")
        if self.K is not None and not (1.0 / self.K - 1e-15 <= self.a <= self.K + 1e-15):
            raise ValueError(f"a={self.a} outside [1/K, K] for K={self.K}")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.D <= 0 or self.s <= 0:
            raise ValueError("coefficients must be positive")

    name = "traveling_wave"

    @property
    def k(self) -> float:
        return self.s * self.a / self.D

    @property
    def front_speed(self) -> float:
        return self.s * self.a

    def _e(self, x, t):
        x = np.asarray(x, float)
        return np.exp(self.k * (x[..., -1] + self.front_speed * np.asarray(t, float)))

    def level(self, x, t):
        return (self.D / self.s) * (self._e(x, t) - 1.0)

    def value(self, x, t):
        return np.maximum(self.level(x, t), 0.0)

    def derivatives(self, x, t):
        e = self._e(x, t)
        k = self.k
        amp = self.D / self.s
        shape = e.shape
        grad = np.zeros(shape + (self.n,))
        grad[..., -1] = amp * k * e
        hess = np.zeros(shape + (self.n, self.n))
        hess[..., -1, -1] = amp * k * k * e
        return self.D * k * self.a * e, grad, hess

    def front(self, x_prime, t):
        return -self.front_speed * np.asarray(t, float) + 0.0 * np.sum(np.atleast_1d(x_prime))

    def front_points(self, dom: SampleDomain, m: int):
        xp, t, _ = dom.columns(m, 2)
        x = np.concatenate([xp, (-self.front_speed * t)[:, None]], axis=1)
        keep = dom._keep(x, t) & (x[:, -1] >= dom.lo[-1]) & (x[:, -1] <= dom.hi[-1])
        return x[keep], t[keep]

    def params(self) -> dict:
        return {"a": self.a, "n": self.n, "D": self.D, "s": self.s}


def radial_profile(s, n: int):
    """``g`` with ``g'' + 2n g' = 0``, ``g(0)=0``, ``g'(0)=1``, extended smoothly to ``s<0``.

    Returns ``(g, g', g'')``.
    """
    s = np.asarray(s, float)
    e = np.exp(-2 * n * s)
    return (1.0 - e) / (2 * n), e, -2 * n * e


@dataclass(frozen=True)
class RadialSupersolution:
    """``w = C0 g(|x| - r(t))^+`` with ``r(t) = 1 - C0 lam t``.

    A supersolution of ``u_t = Lap u`` in ``{w > 0}``, ``u_t = lam |grad u|^2``
    on the free boundary, while ``r(t) >= 1/2``.
    """

    C0: float
    lam: float
    n: int = 2

    name = "radial_supersolution"

    def __post_init__(self):
        if self.C0 <= 0 or self.lam <= 0:
            raise ValueError("C0 and lambda must be positive")
        if self.n < 2:
            raise ValueError("n must be at least 2")

    def radius(self, t):
        return 1.0 - self.C0 * self.lam * np.asarray(t, float)

    def g(self, s):
        """Profile with ``g = 0`` for ``s <= 0``."""
        g, _, _ = radial_profile(s, self.n)
        return np.where(np.asarray(s) > 0, g, 0.0)

    def g_prime(self, s):
        _, g1, _ = radial_profile(s, self.n)
        return np.where(np.asarray(s) > 0, g1, 0.0)

    def t_max(self) -> float:
        """Last time with ``r(t) >= 1/2``."""
        return 0.5 / (self.C0 * self.lam)

    def level(self, x, t):
        x = np.asarray(x, float)
        s = np.linalg.norm(x, axis=-1) - self.radius(t)
        return self.C0 * radial_profile(s, self.n)[0]

    def value(self, x, t):
        return np.maximum(self.level(x, t), 0.0)

    def derivatives(self, x, t):
        x = np.asarray(x, float)
        rho = np.linalg.norm(x, axis=-1)
        s = rho - self.radius(t)
        _, g1, g2 = radial_profile(s, self.n)
        xh = x / rho[..., None]
        grad = self.C0 * g1[..., None] * xh
        eye = np.eye(self.n)
        outer = xh[..., :, None] * xh[..., None, :]
        hess = self.C0 * (g2[..., None, None] * outer + (g1 / rho)[..., None, None] * (eye - outer))
        wt = self.C0 * g1 * self.C0 * self.lam
        return wt, grad, hess

    def domain(self, outer: float = 2.0) -> SampleDomain:
        """``{|x| <= outer} x [0, t_max]`` (the working regime ``r(t) >= 1/2``)."""
        n = self.n
        return SampleDomain(
            "radial_annulus",
            (-outer,) * n,
            (outer,) * n,
            (0.0, self.t_max()),
            lambda x, t: np.linalg.norm(x, axis=-1) <= outer,
        )

    def params(self) -> dict:
        return {"C0": self.C0, "lambda": self.lam, "n": self.n}


@dataclass(frozen=True)
class PerturbedPlaneSubsolution:
    """``v = (1 - C2 eta^beta) a_n(t) h(x - d(t) e_n)^+`` with
    ``h(z) = z_n - eta^(beta-1) (|z'|^2 - 2n z_n^2)``.

    The slope path is ``a_n(t) = a0 + amp sin(omega t)``, ``b~' = -lam a_n``,
    ``b~(0) = 0`` and ``d(t) = b~(t) + C1 eta^beta lam t``.  ``{h > 0}`` has a
    second sheet below ``z_n = -1/(2 n kappa)``; ``v`` is restricted to the
    half-space ``z_n > -1/(4 n kappa)``, where ``h < 0`` on the cut, so ``v``
    stays continuous.
    """

    eta: float
    lam: float
    C1: float
    C2: float
    a0: float = 1.0
    amp: float = 0.0
    omega: float = 1.0
    beta: float = 1.0 / 20.0
    n: int = 2

    name = "perturbed_plane_subsolution"

    def __post_init__(self):
        if not (0 < self.eta <= 0.05):
            raise ValueError("eta must lie in (0, 0.05]")
        if self.a0 - abs(self.amp) <= 0:
            raise ValueError("slope path must stay positive")
        c = 1.0 - self.C2 * self.eta ** self.beta
        if c <= 0:
            raise ValueError("C2 eta^beta must be below 1")

    @property
    def kappa(self) -> float:
        return self.eta ** (self.beta - 1.0)

    @property
    def scale(self) -> float:
        return 1.0 - self.C2 * self.eta ** self.beta

    @property
    def cut(self) -> float:
        return -1.0 / (4 * self.n * self.kappa)

    @staticmethod
    def admissible_C2(n: int, eta: float, a_min: float, beta: float = 1.0 / 20.0) -> float:
        """Smallest ``C2`` giving a gap of ``eta^(1+beta)`` on the sphere along the axis.

        Along the axis the gap ``a(z_n - v)`` at ``z_n = 2 eta`` equals
        ``2 a eta^(1+beta) (C2 (1 + 4 n eta^beta) - 4n)``.  Where the positivity
        set meets the sphere the gap is ``a z_n`` independently of ``C2``, so
        small slopes can still fail :meth:`envelope_report`.
        """
        eb = eta ** beta
        c2 = (4 * n + 1.0 / a_min) / (1 + 4 * n * eb)
        if c2 * eb >= 1:
            raise ValueError("no admissible C2: slope too small for this eta")
        return c2

    def a_n(self, t):
        return self.a0 + self.amp * np.sin(self.omega * np.asarray(t, float))

    def a_n_prime(self, t):
        return self.amp * self.omega * np.cos(self.omega * np.asarray(t, float))

    def b_tilde(self, t):
        t = np.asarray(t, float)
        return -self.lam * (self.a0 * t + self.amp * (1.0 - np.cos(self.omega * t)) / self.omega)

    def d(self, t):
        return self.b_tilde(t) + self.C1 * self.eta ** self.beta * self.lam * np.asarray(t, float)

    def d_prime(self, t):
        return -self.lam * self.a_n(t) + self.C1 * self.eta ** self.beta * self.lam

    def _z(self, x, t):
        z = np.array(x, float, copy=True)
        z[..., -1] -= self.d(t)
        return z

    def h(self, z):
        z = np.asarray(z, float)
        k = self.kappa
        return z[..., -1] - k * (np.sum(z[..., :-1] ** 2, axis=-1) - 2 * self.n * z[..., -1] ** 2)

    def grad_h(self, z):
        z = np.asarray(z, float)
        k = self.kappa
        g = np.empty(z.shape)
        g[..., :-1] = -2 * k * z[..., :-1]
        g[..., -1] = 1.0 + 4 * self.n * k * z[..., -1]
        return g

    def level(self, x, t):
        z = self._z(x, t)
        hv = self.h(z)
        # any negative value below the cut keeps the lower sheet out of {v > 0}
        return np.where(z[..., -1] > self.cut, self.scale * self.a_n(t) * hv, -1.0)

    def value(self, x, t):
        return np.maximum(self.level(x, t), 0.0)

    def derivatives(self, x, t):
        z = self._z(x, t)
        an = self.a_n(t)
        c = self.scale
        gh = self.grad_h(z)
        grad = (c * an)[..., None] * gh
        n = self.n
        dh = np.full(n, -2 * self.kappa)
        dh[-1] = 4 * n * self.kappa
        hess = (c * an)[..., None, None] * np.diag(dh)
        vt = c * (self.a_n_prime(t) * self.h(z) - an * self.d_prime(t) * gh[..., -1])
        return vt, grad, hess

    def domain(self) -> SampleDomain:
        """The moving ball ``B_{2 eta}(d(t) e_n)`` for ``t`` in ``[-eta/lam, 0]``."""
        r = 2 * self.eta
        n = self.n

        def shift(t):
            s = np.zeros((len(t), n))
            s[:, -1] = self.d(t)
            return s

        def inside(x, t):
            return np.linalg.norm(self._z(x, t), axis=-1) < r

        return SampleDomain("moving_ball", (-r,) * n, (r,) * n, (-self.eta / self.lam, 0.0), inside, shift)

    def envelope_report(self, m: int = 41) -> dict:
        """Check ``v <= a_n (x_n - d)^+`` in the ball and the gap on its sphere."""
        dom = self.domain()
        x, t = dom.grid(m)
        env = self.a_n(t) * np.maximum(self._z(x, t)[:, -1], 0.0)
        v = self.value(x, t)
        inner = float(np.min(env - v))
        # sphere points of the positivity set
        rng = np.random.default_rng(0)
        k = m * m * 4
        dirs = rng.normal(size=(k, self.n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        ts = np.linspace(-self.eta / self.lam, 0.0, m)
        zs = 2 * self.eta * np.repeat(dirs[None], m, axis=0).reshape(-1, self.n)
        tt = np.repeat(ts, k)
        xs = zs.copy()
        xs[:, -1] += self.d(tt)
        vs = self.value(xs, tt)
        pos = vs > 0
        gap = self.a_n(tt) * np.maximum(zs[:, -1], 0.0) - vs
        sphere_gap = float(np.min(gap[pos])) if np.any(pos) else math.inf
        target = self.eta ** (1 + self.beta)
        return {
            "envelope_margin": inner,
            "sphere_gap": sphere_gap,
            "required_gap": target,
            "pass": bool(inner >= -ATOL and sphere_gap >= target),
        }

    def gradient_excess(self, m: int = 41) -> float:
        """Measured ``max | |grad h| - 1 | / eta^beta`` over ``B_{2 eta}``."""
        r = 2 * self.eta
        ax = np.linspace(-r, r, m)
        g = np.meshgrid(*([ax] * self.n), indexing="ij")
        z = np.stack([gi.ravel() for gi in g], axis=-1)
        z = z[np.linalg.norm(z, axis=1) < r]
        dev = np.abs(np.linalg.norm(self.grad_h(z), axis=1) - 1.0)
        return float(dev.max() / self.eta ** self.beta)

    def params(self) -> dict:
        return {k: getattr(self, k) for k in ("eta", "lam", "C1", "C2", "a0", "amp", "omega", "beta", "n")}


@dataclass(frozen=True)
class QuadraticField:
    """``v = c0 + ct t + b . x + x^T Q x`` (analytic test field)."""

    c0: float
    ct: float
    b: tuple
    Q: tuple

    name = "quadratic"

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        Q = np.asarray(self.Q, float)
        if Q.shape != (len(self.b), len(self.b)):
            raise ValueError("Q must be n x n")
        object.__setattr__(self, "Q", tuple(map(tuple, 0.5 * (Q + Q.T))))

    @property
    def n(self) -> int:
        return len(self.b)

    @classmethod
    def corrector(cls, C: float, delta: float, n: int = 2) -> "QuadraticField":
        """``C delta (x_n^2 - t - 2)``."""
        Q = np.zeros((n, n))
        Q[-1, -1] = C * delta
        return cls(-2 * C * delta, -C * delta, (0.0,) * n, Q)

    def level(self, x, t):
        x = np.asarray(x, float)
        Q = np.asarray(self.Q)
        return self.c0 + self.ct * np.asarray(t, float) + x @ np.asarray(self.b) + np.einsum("...i,ij,...j->...", x, Q, x)

    value = level

    def derivatives(self, x, t):
        x = np.asarray(x, float)
        Q = np.asarray(self.Q)
        grad = np.asarray(self.b) + 2 * x @ Q
        hess = np.broadcast_to(2 * Q, x.shape[:-1] + Q.shape)
        return np.full(x.shape[:-1], self.ct), grad, hess

    def params(self) -> dict:
        return {"c0": self.c0, "ct": self.ct, "b": list(self.b), "Q": [list(r) for r in self.Q]}


@dataclass(frozen=True)
class TouchingPolynomial:
    """``w0 + (wt0 - eps) t + (grad_w0 + eps e_n) . x + M (|x'|^2 - n K^2 x_n^2)``."""

    w0: float
    wt0: float
    grad_w0: tuple
    eps: float
    M: float
    K: float

    name = "touching_polynomial"

    def __post_init__(self):
        object.__setattr__(self, "grad_w0", tuple(float(v) for v in self.grad_w0))
        if self.eps <= 0 or self.M <= 0 or self.K < 1:
            raise ValueError("need eps > 0, M > 0, K >= 1")

    @property
    def n(self) -> int:
        return len(self.grad_w0)

    def as_quadratic(self) -> QuadraticField:
        n = self.n
        b = np.array(self.grad_w0)
        b[-1] += self.eps
        Q = self.M * np.eye(n)
        Q[-1, -1] = -self.M * n * self.K ** 2
        return QuadraticField(self.w0, self.wt0 - self.eps, tuple(b), Q)

    def level(self, x, t):
        return self.as_quadratic().level(x, t)

    value = level

    def derivatives(self, x, t):
        return self.as_quadratic().derivatives(x, t)

    def strictness(self, lam: float) -> float:
        """``lam P_t - M+_K(D^2 P)``; equals ``lam (wt0 - eps) + 2 M K``."""
        return lam * (self.wt0 - self.eps) + 2 * self.M * self.K

    def params(self) -> dict:
        return {"w0": self.w0, "wt0": self.wt0, "grad_w0": list(self.grad_w0), "eps": self.eps, "M": self.M, "K": self.K}


@dataclass(frozen=True)
class DistanceBarrier:
    """``psi = d + C d^2 + slope * t`` with ``d = R - |x|`` (distance to the sphere)."""

    R: float
    C: float
    n: int = 2
    slope: float = 0.0

    name = "distance_polynomial"

    def level(self, x, t):
        d = self.R - np.linalg.norm(np.asarray(x, float), axis=-1)
        return d + self.C * d * d + self.slope * np.asarray(t, float)

    value = level

    def derivatives(self, x, t):
        x = np.asarray(x, float)
        rho = np.linalg.norm(x, axis=-1)
        d = self.R - rho
        xh = x / rho[..., None]
        dd = -xh
        outer = xh[..., :, None] * xh[..., None, :]
        d2d = -(np.eye(self.n) - outer) / rho[..., None, None]
        grad = (1 + 2 * self.C * d)[..., None] * dd
        hess = (1 + 2 * self.C * d)[..., None, None] * d2d + 2 * self.C * outer
        return np.full(rho.shape, self.slope), grad, hess

    def shell(self, c: float) -> SampleDomain:
        """``{R - c <= |x| <= R}`` (the set where ``d <= c``), one unit of time."""
        R, n = self.R, self.n
        return SampleDomain(
            "shell",
            (-R,) * n,
            (R,) * n,
            (-1.0, 0.0),
            lambda x, t: (np.linalg.norm(x, axis=-1) <= R) & (np.linalg.norm(x, axis=-1) >= R - c),
        )

    def params(self) -> dict:
        return {"R": self.R, "C": self.C, "n": self.n, "slope": self.slope}


@dataclass(frozen=True)
class HeatKernelBarrier1D:
    """``g(x, t) = erf(x sqrt(K / (4 t)))``: solves ``g_t = g_xx / K`` with sign initial data."""

    K: float = 2.0

    name = "heat_kernel_1d"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")

    def _check(self, t):
        t = np.asarray(t, float)
        if np.any(t <= 0):
            raise ValueError("heat kernel barrier needs t > 0")
        return t

    def g(self, x, t):
        t = self._check(t)
        return erf(np.asarray(x, float) * np.sqrt(self.K / (4 * t)))

    def g_x(self, x, t):
        t = self._check(t)
        x = np.asarray(x, float)
        return np.sqrt(self.K / (np.pi * t)) * np.exp(-self.K * x * x / (4 * t))

    def g_xx(self, x, t):
        x = np.asarray(x, float)
        t = self._check(t)
        return self.g_x(x, t) * (-self.K * x / (2 * t))

    def g_t(self, x, t):
        return self.g_xx(x, t) / self.K


@dataclass(frozen=True)
class GBarrier:
    """``G = C1 g(x, t+1) + (t+1)^(1/2) / 4 - C2 x^(1+alpha)`` on ``[0,1] x (-1, 0]``.

    Supersolution of ``v_t = A v_xx + h`` (``|h| <= K x^(alpha-1)``,
    ``A`` in ``[1/K, K]``) with ``v_t = lam gamma v_x`` on ``x = 0``.
    """

    K: float
    alpha: float
    C1: float
    C2: float

    name = "g_barrier_1d"
    n = 1

    @classmethod
    def construct(cls, K: float, alpha: float, lam: float) -> "GBarrier":
        """Smallest constants of the construction; raises when ``lam`` is too large."""
        C2 = K * K / (alpha * (1 + alpha))
        C1 = (1.0 + C2) / erf(math.sqrt(K) / 2)
        if lam * K * C1 * math.sqrt(K / math.pi) > 0.125:
            raise ValueError(f"lambda={lam} too large for the 1D barrier (needs lam <= {cls.lambda_max(K, alpha):.3g})")
        return cls(K, alpha, C1, C2)

    @staticmethod
    def lambda_max(K: float, alpha: float) -> float:
        C2 = K * K / (alpha * (1 + alpha))
        C1 = (1.0 + C2) / erf(math.sqrt(K) / 2)
        return 0.125 / (K * C1 * math.sqrt(K / math.pi))

    @property
    def kernel(self) -> HeatKernelBarrier1D:
        return HeatKernelBarrier1D(self.K)

    def level(self, x, t):
        x = np.asarray(x, float)[..., 0]
        s = np.asarray(t, float) + 1
        return self.C1 * self.kernel.g(x, s) + 0.25 * np.sqrt(s) - self.C2 * x ** (1 + self.alpha)

    value = level

    def derivatives(self, x, t):
        x = np.asarray(x, float)[..., 0]
        s = np.asarray(t, float) + 1
        k = self.kernel
        a = self.alpha
        gt = self.C1 * k.g_t(x, s) + 0.125 / np.sqrt(s)
        gx = self.C1 * k.g_x(x, s) - self.C2 * (1 + a) * x ** a
        with np.errstate(divide="ignore"):
            xpow = np.where(x > 0, x ** (a - 1), np.inf)
        gxx = self.C1 * k.g_xx(x, s) - self.C2 * (1 + a) * a * xpow
        return gt, gx[..., None], gxx[..., None, None]

    def domain(self, t_floor: float = 1e-3) -> SampleDomain:
        return SampleDomain("P1_1d", (0.0,), (1.0,), (-1.0 + t_floor, 0.0))

    def boundary_values(self, m: int = 201) -> dict:
        """Minimum of ``G`` on ``{t=-1}`` and ``{x=1}``, and ``G(0,0)``."""
        x = np.linspace(0, 1, m)[1:]
        bottom = self.C1 - self.C2 * x ** (1 + self.alpha)  # g(x, 0) = 1 for x > 0
        t = np.linspace(-1, 0, m)[1:]
        side = self.level(np.ones((len(t), 1)), t)
        return {
            "min_bottom": float(bottom.min()),
            "min_side": float(min(side.min(), self.C1 - self.C2)),
            "origin": float(self.level(np.zeros((1, 1)), np.zeros(1))[0]),
        }

    def params(self) -> dict:
        return {"K": self.K, "alpha": self.alpha, "C1": self.C1, "C2": self.C2}


def evaluate(barrier, p: SpaceTimePoint) -> BarrierValue:
    """Value ``phi^+`` and its derivatives at ``p``.

    On the free boundary the derivatives are the limits from the positive side;
    outside the support everything vanishes.
    """
    x = p.x[None, :]
    t = np.array([p.t])
    lev = float(barrier.level(x, t)[0])
    n = len(p.x)
    if lev < 0:
        return BarrierValue(0.0, np.zeros(n), np.zeros((n, n)), 0.0)
    dt, grad, hess = barrier.derivatives(x, t)
    return BarrierValue(lev, np.asarray(grad)[0], np.asarray(hess)[0], float(np.asarray(dt)[0]))


# ---------------------------------------------------------------- reports


@dataclass
class BarrierReport:
    candidate: str
    region: dict
    interior_margin: float | None
    boundary_margin: float | None
    passed: bool
    margin: float = 0.0
    n_interior: int = 0
    n_boundary: int = 0
    kind: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate,
            "region": self.region,
            "interior_margin": self.interior_margin,
            "boundary_margin": self.boundary_margin,
            "pass": self.passed,
            "margin": self.margin,
            "kind": self.kind,
            "n_interior": self.n_interior,
            "n_boundary": self.n_boundary,
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=float)


def _min_or_none(r):
    return float(np.min(r)) if np.size(r) else None


def _decide(interior, boundary, margin):
    vals = [v for v in (interior, boundary) if v is not None]
    return bool(vals) and all(v >= margin - ATOL for v in vals)


def _stefan_residuals(phi, dom, density, diffusion, speed):
    x, t = dom.grid(density)
    lev = phi.level(x, t)
    pos = lev > 0
    xi, ti = x[pos], t[pos]
    pt, _, hess = phi.derivatives(xi, ti)
    lap = np.trace(hess, axis1=-2, axis2=-1)
    xb, tb = _front_points(phi, dom, density)
    if len(tb):
        bt, bgrad, _ = phi.derivatives(xb, tb)
        gn = np.sum(bgrad * bgrad, axis=-1)
        if np.any(np.sqrt(gn) < GRAD_FLOOR):
            raise DegenerateTouchingError("gradient vanishes on the candidate free boundary")
    else:
        bt = gn = np.zeros(0)
    return pt, diffusion * lap, bt, speed * gn, len(ti), len(tb)


def verify_strict_supersolution_stefan(
    phi,
    region,
    margin: float = 0.0,
    diffusion: float = 1.0,
    speed: float = 1.0,
    density: int = 41,
) -> BarrierReport:
    """Check ``phi_t - D Lap phi`` in ``{phi > 0}`` and ``phi_t - s |grad phi|^2`` on its boundary.

    Args:
        phi: barrier with ``level`` and ``derivatives``.
        region: a :class:`Region` or :class:`SampleDomain`.
        margin: PASS iff both minima are at least ``margin``.
        diffusion: coefficient ``D`` of the heat equation.
        speed: coefficient ``s`` of the free-boundary law.
        density: samples per axis.
    """
    dom = _as_domain(region)
    pt, lap, bt, gn, ni, nb = _stefan_residuals(phi, dom, density, diffusion, speed)
    interior = _min_or_none(pt - lap)
    boundary = _min_or_none(bt - gn)
    return BarrierReport(
        getattr(phi, "name", type(phi).__name__), dom.to_dict(), interior, boundary,
        _decide(interior, boundary, margin), margin, ni, nb, "stefan_supersolution",
    )


def verify_strict_subsolution_stefan(
    phi,
    region,
    margin: float = 0.0,
    diffusion: float = 1.0,
    speed: float = 1.0,
    density: int = 41,
) -> BarrierReport:
    """Sub-solution variant: residuals ``D Lap phi - phi_t`` and ``s |grad phi|^2 - phi_t``."""
    dom = _as_domain(region)
    pt, lap, bt, gn, ni, nb = _stefan_residuals(phi, dom, density, diffusion, speed)
    interior = _min_or_none(lap - pt)
    boundary = _min_or_none(gn - bt)
    return BarrierReport(
        getattr(phi, "name", type(phi).__name__), dom.to_dict(), interior, boundary,
        _decide(interior, boundary, margin), margin, ni, nb, "stefan_subsolution",
    )


def _coeff(c, t, shape):
    if callable(c):
        return np.stack([np.asarray(c(ti), float) for ti in np.atleast_1d(t)])
    return np.broadcast_to(np.asarray(c, float), (len(np.atleast_1d(t)),) + shape)


def _check_bounds(M, grad, hess):
    if M is None or not np.isfinite(M):
        raise ValueError("derivative bound M must be finite")
    gmax = float(np.max(np.linalg.norm(grad, axis=-1), initial=0.0))
    hmax = float(np.max(np.abs(hess), initial=0.0))
    if gmax > M or hmax > M:
        raise ValueError(f"sampled derivatives exceed the declared bound M={M} (|grad|={gmax:.3g}, |D2|={hmax:.3g})")


def verify_subsolution_linear(
    v,
    A,
    gamma,
    lam: float,
    delta: float,
    region,
    slack: float = 1.0,
    M: float = 1e6,
    margin: float = 0.0,
    density: int = 21,
    K: float | None = None,
) -> BarrierReport:
    """Check ``lam v_t <= tr(A D^2 v) - slack delta`` inside and
    ``v_t <= gamma . grad v - delta`` on ``{x_n = 0}``.

    Args:
        v: analytic field with ``derivatives``.
        A: matrix, callable ``t -> matrix``, or ``"pucci"`` for the worst case
            over ``K^-1 I <= A <= K I`` (uses ``M-_K``).
        gamma: vector or callable ``t -> vector``; ``None`` skips the boundary.
        lam: time coefficient.
        delta: slack scale.
        region: :class:`Region` or :class:`SampleDomain`.
        slack: interior slack constant multiplying ``delta``.
        M: declared bound on ``|grad v|`` and ``|D^2 v|``.
    """
    dom = _as_domain(region)
    n = dom.n
    x, t = dom.grid(density)
    vt, grad, hess = v.derivatives(x, t)
    _check_bounds(M, grad, hess)
    if isinstance(A, str):
        if A != "pucci" or K is None:
            raise ValueError("A='pucci' requires K")
        tr = pucci_minus(hess, K)
    else:
        Am = _coeff(A, t, (n, n))
        tr = np.einsum("kij,kij->k", Am, hess)
    interior = _min_or_none(tr - slack * delta - lam * vt)
    boundary = None
    nb = 0
    if gamma is not None:
        xb, tb = dom.boundary_grid(density)
        if len(tb):
            bt, bgrad, bhess = v.derivatives(xb, tb)
            _check_bounds(M, bgrad, bhess)
            g = _coeff(gamma, tb, (n,))
            boundary = _min_or_none(np.sum(g * bgrad, axis=-1) - delta - bt)
            nb = len(tb)
    return BarrierReport(
        getattr(v, "name", type(v).__name__), dom.to_dict(), interior, boundary,
        _decide(interior, boundary, margin), margin, len(t), nb, "linear_subsolution",
        {"delta": delta, "slack": slack, "lambda": lam},
    )


def verify_strict_supersolution_linear(
    v,
    K: float,
    lam: float,
    region,
    gamma=None,
    margin: float = 0.0,
    density: int = 21,
    time_coeff: float | None = None,
    source_bound: Callable | None = None,
    boundary_speed: float = 1.0,
) -> BarrierReport:
    """Worst-case supersolution check for every admissible coefficient.

    Interior residual ``c v_t - M+_K(D^2 v) - H`` with ``c = time_coeff``
    (default ``lam``) and ``H = source_bound(x, t)`` (default 0).  Boundary
    residual ``v_t - s gamma . grad v`` on ``{x_n = 0}`` with
    ``s = boundary_speed``; when ``gamma`` is ``None`` in one dimension the
    worst case over ``gamma`` in ``[1/K, K]`` is taken.
    """
    dom = _as_domain(region)
    n = dom.n
    c = lam if time_coeff is None else time_coeff
    x, t = dom.grid(density)
    if source_bound is not None:
        keep = x[:, -1] > 0
        x, t = x[keep], t[keep]
    vt, grad, hess = v.derivatives(x, t)
    H = 0.0 if source_bound is None else source_bound(x, t)
    res = c * vt - pucci_plus(hess, K) - H
    interior = _min_or_none(res)
    xb, tb = dom.boundary_grid(density)
    boundary = None
    if len(tb):
        bt, bgrad, _ = v.derivatives(xb, tb)
        if gamma is None:
            if n != 1:
                raise ValueError("worst-case gamma only supported in one dimension")
            gx = bgrad[:, 0]
            flux = np.where(gx > 0, K * gx, gx / K)
        else:
            flux = np.sum(_coeff(gamma, tb, (n,)) * bgrad, axis=-1)
        boundary = _min_or_none(bt - boundary_speed * flux)
    return BarrierReport(
        getattr(v, "name", type(v).__name__), dom.to_dict(), interior, boundary,
        _decide(interior, boundary, margin), margin, len(t), len(tb), "linear_supersolution",
        {"K": K, "lambda": lam},
    )


# ---------------------------------------------------------------- sup-convolution


def sup_convolution(f: ScalarField, eps: float) -> ScalarField:
    """``max_y { f(y', x_n, t) - |y' - x'|^2 / (2 eps) }`` over tangential grid nodes.

    Masked nodes never act as maximisers; output nodes without any admissible
    ``y'`` stay masked.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    s = f.spec
    nt = s.n - 1
    vals = np.where(f.live, f.values, -np.inf)
    out = vals.copy()
    shape = s.spatial_shape[:nt]
    h = s.h
    for off in np.ndindex(*[2 * m - 1 for m in shape]):
        k = [o - (m - 1) for o, m in zip(off, shape)]
        if not any(k):
            continue
        pen = h * h * sum(ki * ki for ki in k) / (2 * eps)
        # out[x] vs vals[x + k]
        src = []
        dst = []
        for ki, m in zip(k, shape):
            if ki >= 0:
                src.append(slice(ki, m))
                dst.append(slice(0, m - ki))
            else:
                src.append(slice(0, m + ki))
                dst.append(slice(-ki, m))
        src = tuple(src) + (Ellipsis,)
        dst = tuple(dst) + (Ellipsis,)
        np.maximum(out[dst], vals[src] - pen, out=out[dst])
    mask = ~np.isfinite(out)
    return ScalarField(s, np.where(mask, 0.0, out), mask if mask.any() else None)
