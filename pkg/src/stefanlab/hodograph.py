"""Partial hodograph transform.

For ``u`` strictly increasing in ``x_n`` the graph ``{x_{n+1} = u(x, t)}`` is
rewritten as ``{x_n = ubar(x', x_{n+1}, t)}``.  The free boundary ``{u = 0}``
becomes the fixed hyperplane ``{y_n = 0}`` and the front is the trace
``ubar(y', 0, t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import newton

from .fields import GridSpec, ScalarField, StencilDerivatives, derivatives_at

__all__ = [
    "MonotonicityError",
    "DegenerateSlopeError",
    "HodographPair",
    "forward_transform",
    "inverse_transform",
    "derivative_map",
    "abar",
    "g_induced",
    "verify_transformed_pde",
    "interpolation_tolerance",
    "round_trip",
    "WaveHodograph",
    "SmoothHodograph",
    "invert_analytic",
    "inverse_derivatives_fd",
]


class MonotonicityError(ValueError):
    """``u`` is not strictly increasing in ``x_n``."""


class DegenerateSlopeError(ValueError):
    """``ubar_n`` vanishes."""


@dataclass
class HodographPair:
    u_side: ScalarField
    ubar_side: ScalarField
    direction: int = +1
    min_slope: float = float("nan")
    info: dict = field(default_factory=dict)

    def consistency(self, method: str = "linear") -> float:
        """Max of ``|x_n - ubar(x', u(x,t), t)|`` over matched unmasked nodes."""
        u = self.u_side
        x, t = u.spec.mesh()
        yn_lo, yn_hi = self.ubar_side.spec.spatial_extent[-1]
        sel = u.live & (u.values >= yn_lo) & (u.values <= yn_hi)
        y = x[sel].copy()
        y[:, -1] = u.values[sel]
        xn = self.ubar_side.sample(y, t[sel], method=method)
        return float(np.max(np.abs(xn - x[sel][:, -1])))


def _columns(shape):
    """Iterate over (x', t) columns of a field with shape (N_1..N_n, N_t)."""
    tang = shape[:-2]
    for idx in np.ndindex(*tang, shape[-1]):
        yield idx[:-1], idx[-1]


def forward_transform(
    u: ScalarField,
    y_range: tuple[float, float],
    front: np.ndarray | None = None,
    min_slope: float = 0.0,
) -> HodographPair:
    """Invert ``u`` column by column with monotone cubic (PCHIP) interpolation.

    Args:
        u: field on ``(x', x_n, t)``; masked nodes are ignored.
        y_range: ``(lo, hi)`` of the ``y_n`` (= value) grid; its length must be
            a multiple of ``u.spec.h``, which is reused as the ``y_n`` step.
        front: optional array of front heights ``f(x', t)`` with shape
            ``(N_1, ..., N_{n-1}, N_t)``; adds the point ``(f, 0)`` to each column.
        min_slope: required lower bound ``m`` on the discrete ``du/dx_n``.

    Returns:
        HodographPair with ``ubar`` and the measured slope bound.
    """
    s = u.spec
    n = s.n
    out_spec = GridSpec(n, s.h, s.dt, s.spatial_extent[:-1] + (tuple(y_range),), s.time_extent)
    yn = out_spec.axis(n - 1)
    xn = s.axis(n - 1)
    vals = np.empty(out_spec.shape)
    live = u.live
    m_obs = np.inf
    for tang, k in _columns(s.shape):
        sl = tang + (slice(None), k)
        col = u.values[sl]
        ok = live[sl]
        xs = xn[ok]
        us = col[ok]
        if front is not None:
            fr = float(front[tang + (k,)])
            keep = xs > fr + 1e-12 * max(1.0, abs(fr))
            xs = np.concatenate([[fr], xs[keep]])
            us = np.concatenate([[0.0], us[keep]])
        if len(xs) < 2:
            raise MonotonicityError(f"column {tang}, t-index {k} has fewer than two live nodes")
        slope = np.diff(us) / np.diff(xs)
        m_col = float(slope.min())
        m_obs = min(m_obs, m_col)
        if m_col <= min_slope:
            raise MonotonicityError(f"du/dx_n = {m_col:.3g} <= {min_slope} in column {tang}, t-index {k}")
        if yn[0] < us[0] - 1e-12 or yn[-1] > us[-1] + 1e-12:
            raise ValueError(
                f"requested y_n range [{yn[0]}, {yn[-1]}] outside attained values [{us[0]:.6g}, {us[-1]:.6g}]"
            )
        vals[tang + (slice(None), k)] = PchipInterpolator(us, xs)(np.clip(yn, us[0], us[-1]))
    ub = ScalarField(out_spec, vals)
    return HodographPair(u, ub, +1, float(m_obs))


def inverse_transform(ubar: ScalarField, x_spec: GridSpec, below_front: str = "mask") -> ScalarField:
    """Recover ``u`` on ``x_spec`` from ``ubar`` by inverting each ``(y', t)`` column.

    Nodes with ``x_n`` outside ``[ubar(y_lo), ubar(y_hi)]`` are masked; when
    ``below_front == "zero"`` and the ``y_n`` grid starts at 0, nodes below the
    front get the value 0 and are masked as ice.
    """
    s = ubar.spec
    if x_spec.spatial_extent[:-1] != s.spatial_extent[:-1] or x_spec.time_extent != s.time_extent:
        raise ValueError("x grid must share tangential axes and times with ubar")
    yn = s.axis(s.n - 1)
    xn = x_spec.axis(x_spec.n - 1)
    vals = np.zeros(x_spec.shape)
    mask = np.zeros(x_spec.shape, bool)
    for tang, k in _columns(s.shape):
        col = ubar.values[tang + (slice(None), k)]
        d = np.diff(col)
        if np.any(d <= 0):
            raise MonotonicityError(f"ubar not increasing in y_n at column {tang}, t-index {k}")
        inside = (xn >= col[0] - 1e-13) & (xn <= col[-1] + 1e-13)
        out = np.zeros(len(xn))
        out[inside] = PchipInterpolator(col, yn)(np.clip(xn[inside], col[0], col[-1]))
        vals[tang + (slice(None), k)] = out
        mask[tang + (slice(None), k)] = ~inside
    return ScalarField(x_spec, vals, mask if mask.any() else None)


def interpolation_tolerance(u: ScalarField, front: np.ndarray | None = None) -> float:
    """Data-driven tolerance of the column inversion.

    PCHIP is rebuilt through every other node of each column and evaluated at
    the skipped nodes; the worst deviation (an error estimate at step ``2h``,
    so an over-estimate at step ``h``) is returned.
    """
    s = u.spec
    xn = s.axis(s.n - 1)
    worst = 0.0
    live = u.live
    for tang, k in _columns(s.shape):
        sl = tang + (slice(None), k)
        ok = live[sl]
        xs, us = xn[ok], u.values[sl][ok]
        if front is not None:
            fr = float(front[tang + (k,)])
            keep = xs > fr
            xs = np.concatenate([[fr], xs[keep]])
            us = np.concatenate([[0.0], us[keep]])
        if len(xs) < 5:
            continue
        ip = PchipInterpolator(us[::2], xs[::2])
        mid = us[1:-1:2]
        inside = (mid >= us[0]) & (mid <= us[::2][-1])
        if np.any(inside):
            worst = max(worst, float(np.max(np.abs(ip(mid[inside]) - xs[1:-1:2][inside]))))
    return worst


def round_trip(u: ScalarField, y_range: tuple[float, float] | None = None, front: np.ndarray | None = None) -> dict:
    """Forward then inverse transform; sup error against ``u`` and the interpolation tolerance.

    ``y_range`` defaults to the widest grid-aligned value range attained by
    every column.
    """
    s = u.spec
    if y_range is None:
        vals = np.where(u.live, u.values, np.nan)
        lo = float(np.nanmax(vals.take(0, axis=s.n - 1)))
        hi = float(np.nanmin(vals.take(-1, axis=s.n - 1)))
        y_range = (math.ceil(lo / s.h - 1e-9) * s.h, math.floor(hi / s.h + 1e-9) * s.h)
    pair = forward_transform(u, y_range, front)
    back = inverse_transform(pair.ubar_side, s)
    sel = back.live & u.live
    err = float(np.max(np.abs(back.values - u.values)[sel]))
    tol = interpolation_tolerance(u, front)
    return {
        "y_range": list(y_range),
        "round_trip_error": err,
        "interpolation_tolerance": tol,
        "nodes": int(sel.sum()),
        "min_slope": pair.min_slope,
        "pass": bool(err <= 2 * tol),
    }


# ---------------------------------------------------------------- derivative map


def _unpack(ubar_derivs):
    if isinstance(ubar_derivs, StencilDerivatives):
        return np.asarray(ubar_derivs.grad), np.asarray(ubar_derivs.hess), np.asarray(ubar_derivs.dt)
    dt, grad, hess = ubar_derivs
    return np.asarray(grad, float), np.asarray(hess, float), np.asarray(dt, float)


def derivative_map(ubar_derivs):
    """Map derivatives of ``ubar`` at ``(y, t)`` to those of ``u`` at ``(x, t)``.

    Accepts :class:`StencilDerivatives` or a tuple ``(ubar_t, grad, hess)``
    (vectorised over leading axes).  Returns ``(Du, u_t, D2u)`` with

        Du   = -(ubar', -1) / ubar_n
        u_t  = -ubar_t / ubar_n
        D2u  = -(1/ubar_n) A^T D2ubar A,  A = I with its last row replaced by Du.
    """
    grad, hess, dt = _unpack(ubar_derivs)
    un = grad[..., -1]
    if np.any(np.abs(un) < 1e-300) or np.any(un == 0):
        raise DegenerateSlopeError("ubar_n vanishes")
    Du = -grad / un[..., None]
    Du[..., -1] = 1.0 / un
    ut = -dt / un
    n = grad.shape[-1]
    A = np.broadcast_to(np.eye(n), grad.shape[:-1] + (n, n)).copy()
    A[..., -1, :] = Du
    D2u = -np.swapaxes(A, -1, -2) @ hess @ A / un[..., None, None]
    D2u = 0.5 * (D2u + np.swapaxes(D2u, -1, -2))
    return Du, ut, D2u


def _linear_map(p):
    """``A(p)``: identity with last row ``Du`` where ``Du`` comes from :func:`derivative_map`."""
    p = np.asarray(p, float)
    n = p.shape[-1]
    zeros = np.zeros(p.shape[:-1] + (n, n))
    Du, _, _ = derivative_map((np.zeros(p.shape[:-1]), p, zeros))
    A = np.broadcast_to(np.eye(n), p.shape[:-1] + (n, n)).copy()
    A[..., -1, :] = Du
    return A


def abar(p, diffusion: float = 1.0):
    """Coefficient ``Abar(p)`` with ``ubar_t = tr(Abar(grad ubar) D2ubar)``.

    Obtained by composing :func:`derivative_map` with ``u_t = D tr(D2u)``;
    equals ``D A(p) A(p)^T``.
    """
    A = _linear_map(p)
    return diffusion * A @ np.swapaxes(A, -1, -2)


def g_induced(p, speed: float = 1.0):
    """Boundary speed ``g(p)`` with ``ubar_t = g(grad ubar)`` induced by ``u_t = s |Du|^2``."""
    p = np.asarray(p, float)
    n = p.shape[-1]
    Du, _, _ = derivative_map((np.zeros(p.shape[:-1]), p, np.zeros(p.shape[:-1] + (n, n))))
    # u_t = -ubar_t / ubar_n  =>  ubar_t = -ubar_n u_t
    return -p[..., -1] * speed * np.sum(Du * Du, axis=-1)


# ---------------------------------------------------------------- verification


@dataclass
class TransformedPDEReport:
    interior_residual: float
    boundary_residual: float
    n_interior: int
    n_boundary: int
    abar_min_eig: float
    g_n_min: float

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def verify_transformed_pde(ubar, samples=None, diffusion: float = 1.0, speed: float = 1.0, fd_eps: float = 1e-6):
    """Residuals of ``ubar_t = tr(Abar D2ubar)`` (``y_n > 0``) and ``ubar_t = g(grad ubar)`` (``y_n = 0``).

    ``ubar`` is an analytic object with ``derivatives(y, t)`` (then ``samples``
    gives ``(y, t)`` arrays) or a :class:`ScalarField` (then every interior node
    and every ``y_n = 0`` node away from the tangential faces is used with
    finite differences).  Also reports the smallest eigenvalue of ``Abar`` and
    the smallest ``g_n`` (by central differences) met along the samples.
    """
    if isinstance(ubar, ScalarField):
        ints, bnds = [], []
        s = ubar.spec
        shape = s.spatial_shape
        for idx in np.ndindex(*shape):
            if any(i == 0 or i == m - 1 for i, m in zip(idx[:-1], shape[:-1])) or idx[-1] == shape[-1] - 1:
                continue
            for k in range(1, s.nt):
                d = derivatives_at(ubar, idx + (k,))
                (bnds if idx[-1] == 0 else ints).append((d.dt, d.grad, d.hess))
        di = [np.array(v) for v in zip(*ints)] if ints else None
        db = [np.array(v) for v in zip(*bnds)] if bnds else None
    else:
        y, t = samples
        y = np.asarray(y, float)
        t = np.asarray(t, float)
        on_b = np.abs(y[:, -1]) < 1e-14
        di = ubar.derivatives(y[~on_b], t[~on_b]) if np.any(~on_b) else None
        db = ubar.derivatives(y[on_b], t[on_b]) if np.any(on_b) else None
    ir = br = 0.0
    emin = np.inf
    gmin = np.inf
    ni = nb = 0
    if di is not None:
        dt, grad, hess = di
        Ab = abar(grad, diffusion)
        ir = float(np.max(np.abs(dt - np.einsum("...ij,...ij->...", Ab, hess))))
        emin = float(np.min(np.linalg.eigvalsh(Ab)))
        ni = len(dt)
    if db is not None:
        dt, grad, _ = db
        br = float(np.max(np.abs(dt - g_induced(grad, speed))))
        e = np.zeros(grad.shape[-1])
        e[-1] = fd_eps
        gn = (g_induced(grad + e, speed) - g_induced(grad - e, speed)) / (2 * fd_eps)
        gmin = float(np.min(gn))
        nb = len(dt)
    return TransformedPDEReport(ir, br, ni, nb, emin, gmin)


# ---------------------------------------------------------------- fixtures


@dataclass(frozen=True)
class WaveHodograph:
    """``ubar(y, t) = log(1 + y_n)/a - a t``: the transform of the traveling wave."""

    a: float
    n: int = 2

    def value(self, y, t):
        y = np.asarray(y, float)
        return np.log1p(y[..., -1]) / self.a - self.a * np.asarray(t, float)

    def derivatives(self, y, t):
        y = np.asarray(y, float)
        s = 1.0 + y[..., -1]
        grad = np.zeros(y.shape)
        grad[..., -1] = 1.0 / (self.a * s)
        hess = np.zeros(y.shape + (self.n,))
        hess[..., -1, -1] = -1.0 / (self.a * s * s)
        return np.full(y.shape[:-1], -self.a) + 0 * s, grad, hess


@dataclass(frozen=True)
class SmoothHodograph:
    """``ubar(y, t) = y_n / a + q y_n^2 + w sin(k y_1) + v t`` (``q >= 0`` keeps it increasing for ``y_n >= 0``)."""

    a: float = 1.0
    q: float = 0.2
    w: float = 0.1
    k: float = 2.0
    v: float = -0.5
    n: int = 2

    def __post_init__(self):
        if self.a <= 0 or self.q < 0:
            raise ValueError("need a > 0 and q >= 0")

    def value(self, y, t):
        y = np.asarray(y, float)
        yn = y[..., -1]
        return yn / self.a + self.q * yn * yn + self.w * np.sin(self.k * y[..., 0]) + self.v * np.asarray(t, float)

    def derivatives(self, y, t):
        y = np.asarray(y, float)
        grad = np.zeros(y.shape)
        grad[..., 0] = self.w * self.k * np.cos(self.k * y[..., 0])
        grad[..., -1] = 1.0 / self.a + 2 * self.q * y[..., -1]
        hess = np.zeros(y.shape + (self.n,))
        hess[..., 0, 0] = -self.w * self.k ** 2 * np.sin(self.k * y[..., 0])
        hess[..., -1, -1] = 2 * self.q
        return np.full(y.shape[:-1], self.v) + 0 * y[..., 0], grad, hess


def invert_analytic(ubar, x, t, y0=None, tol: float = 1e-14):
    """Solve ``ubar(x', y_n, t) = x_n`` for ``y_n`` (vectorised Newton).

    ``ubar`` must provide ``value`` and ``derivatives``.
    """
    x = np.asarray(x, float)
    t = np.broadcast_to(np.asarray(t, float), x.shape[:-1])
    yn0 = np.zeros(x.shape[:-1]) if y0 is None else np.asarray(y0, float)

    def F(yn):
        y = x.copy()
        y[..., -1] = yn
        return ubar.value(y, t) - x[..., -1]

    def dF(yn):
        y = x.copy()
        y[..., -1] = yn
        return ubar.derivatives(y, t)[1][..., -1]

    return newton(F, yn0, fprime=dF, tol=tol, maxiter=100)


def inverse_derivatives_fd(ubar, x, t, step: float):
    """Central finite differences of ``u = ubar^{-1}`` at ``(x, t)``.

    ``u`` is evaluated by :func:`invert_analytic`, so the result is independent
    of :func:`derivative_map` and serves as its oracle.  Errors are
    ``O(step^2)``.  Returns ``(Du, u_t, D2u)`` for one point ``x`` of shape ``(n,)``.
    """
    x = np.asarray(x, float)
    n = len(x)
    E = step * np.eye(n)

    def u(pts, ts):
        pts = np.atleast_2d(pts)
        return invert_analytic(ubar, pts, np.full(len(pts), ts), y0=np.full(len(pts), 0.5))

    Du = np.array([(u(x + E[i], t) - u(x - E[i], t))[0] / (2 * step) for i in range(n)])
    ut = float((u(x, t + step) - u(x, t - step))[0] / (2 * step))
    c = float(u(x, t)[0])
    H = np.empty((n, n))
    for i in range(n):
        H[i, i] = (u(x + E[i], t)[0] - 2 * c + u(x - E[i], t)[0]) / step ** 2
        for j in range(i + 1, n):
            H[i, j] = H[j, i] = (
                u(x + E[i] + E[j], t)[0] - u(x + E[i] - E[j], t)[0]
                - u(x - E[i] + E[j], t)[0] + u(x - E[i] - E[j], t)[0]
            ) / (4 * step ** 2)
    return Du, ut, H
