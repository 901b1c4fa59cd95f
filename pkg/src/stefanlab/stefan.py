"""Front-tracking simulator for the one-phase Stefan problem.

The problem is written with a diffusion coefficient ``D`` and a front
coefficient ``s``::

    u_t = D Lap u      in {u > 0}
    u_t = s |grad u|^2 on the free boundary

``(D, s) = (1, 1)`` is the original problem, ``(1/lam, 1)`` the hyperbolic
rescaling and ``(1, lam)`` the parabolic one.  The liquid region is the
supergraph ``{x_n > f(x', t)}``; a front that folds or leaves the box is a
hard error.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import minimize, minimize_scalar
from scipy.sparse.linalg import spsolve

from .fields import GridSpec, ScalarField

__all__ = [
    "Scaling",
    "FrontGraph",
    "StefanState",
    "StepError",
    "CFLError",
    "FrontExitError",
    "GraphicalityError",
    "EmptyGridError",
    "BoundaryOrderingError",
    "SimulationResult",
    "RadialRun",
    "wave_state",
    "step",
    "simulate",
    "rescale",
    "resample",
    "enthalpy",
    "boundary_flux",
    "ComparisonReport",
    "compare_with_barrier",
    "check_nondegeneracy",
    "radial_front_fixing",
    "radial_containment",
    "flatness_extension_experiment",
]


class StepError(RuntimeError):
    pass


class CFLError(StepError):
    pass


class FrontExitError(StepError):
    pass


class GraphicalityError(StepError):
    pass


class EmptyGridError(ValueError):
    pass


class BoundaryOrderingError(RuntimeError):
    """Comparison hypothesis fails on the region's parabolic boundary."""


class Scaling(str, Enum):
    ORIGINAL = "original"
    DIFFUSION_SCALED = "diffusion_scaled"
    SPEED_SCALED = "speed_scaled"
    GENERAL = "general"

    def coefficients(self, lam: float = 1.0) -> tuple[float, float]:
        """``(D, s)`` for this scaling at parameter ``lam``."""
        if self is Scaling.ORIGINAL:
            return 1.0, 1.0
        if self is Scaling.DIFFUSION_SCALED:
            return 1.0 / lam, 1.0
        if self is Scaling.SPEED_SCALED:
            return 1.0, lam
        raise ValueError("general scaling has no canonical coefficients")

    @staticmethod
    def classify(D: float, s: float, rtol: float = 1e-12) -> tuple["Scaling", float]:
        close = lambda a, b: abs(a - b) <= rtol * max(1.0, abs(b))  # noqa: E731
        if close(D, 1.0) and close(s, 1.0):
            return Scaling.ORIGINAL, 1.0
        if close(s, 1.0) and D > 1.0:
            return Scaling.DIFFUSION_SCALED, 1.0 / D
        if close(D, 1.0) and s < 1.0:
            return Scaling.SPEED_SCALED, s
        return Scaling.GENERAL, float("nan")


@dataclass(frozen=True)
class FrontGraph:
    """Front ``x_n = f(x')`` on the tangential nodes of the box at time ``t``."""

    f: np.ndarray
    t: float
    h: float
    tangential_extent: tuple

    def __post_init__(self):
        object.__setattr__(self, "f", np.asarray(self.f, float))
        if not np.all(np.isfinite(self.f)):
            raise ValueError("front has non-finite entries")

    def slope(self) -> np.ndarray:
        """``grad' f`` with central differences, one-sided at the edges."""
        if self.f.ndim == 0:
            return np.zeros((0,))
        parts = [np.gradient(self.f, self.h, axis=i) if self.f.shape[i] > 1 else np.zeros_like(self.f)
                 for i in range(self.f.ndim)]
        return np.stack(parts, axis=-1)

    def max_slope(self) -> float:
        g = self.slope()
        return float(np.sqrt((g ** 2).sum(-1)).max()) if g.size else 0.0

    def points(self) -> np.ndarray:
        """``(x', f)`` rows."""
        axes = [a + self.h * np.arange(m) for (a, _), m in zip(self.tangential_extent, self.f.shape)]
        if not axes:
            return np.array([[float(self.f)]])
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack([gi.ravel() for gi in g] + [self.f.ravel()], axis=-1)


@dataclass(frozen=True)
class StefanState:
    """Immutable snapshot of the temperature on the box and the front."""

    u: np.ndarray
    front: FrontGraph
    grid: GridSpec
    t: float
    D: float = 1.0
    s: float = 1.0

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def scaling(self) -> Scaling:
        return Scaling.classify(self.D, self.s)[0]

    @property
    def lam(self) -> float:
        return Scaling.classify(self.D, self.s)[1]

    @property
    def latent_heat(self) -> float:
        # with this value the enthalpy balance closes for any (D, s); it is 1 for the original problem
        return self.D / self.s

    def coordinates(self) -> np.ndarray:
        x, _ = self.grid.mesh()
        return x[..., 0, :]

    def liquid(self) -> np.ndarray:
        return _liquid_mask(self.grid, self.front.f)

    @property
    def temperature(self) -> ScalarField:
        spec = replace(self.grid, time_extent=(self.t, self.t))
        ice = ~self.liquid()
        return ScalarField(spec, self.u[..., None], ice[..., None])

    @classmethod
    def from_function(cls, u0: Callable, front0: Callable, extent, h: float, t0: float = 0.0,
                      D: float = 1.0, s: float = 1.0) -> "StefanState":
        """Build a state from ``u0(x)`` and ``front0(x')`` (``x'`` shape ``(..., n-1)``)."""
        n = len(extent)
        grid = GridSpec(n, h, 1.0, extent, (t0, t0))
        x = grid.mesh()[0][..., 0, :]
        tang = x[..., 0, :-1]
        f = np.asarray(front0(tang), float).reshape(grid.spatial_shape[:-1])
        u = np.asarray(u0(x), float)
        u = np.where(_liquid_mask(grid, f), np.maximum(u, 0.0), 0.0)
        return cls(u, FrontGraph(f, t0, h, tuple(extent[:-1])), grid, t0, D, s)


def wave_state(a: float, h: float, extent, t0: float = 0.0, D: float = 1.0, s: float = 1.0) -> StefanState:
    """Planar traveling-wave data at time ``t0``."""
    from .barriers import TravelingWave

    w = TravelingWave(a, n=len(extent), D=D, s=s)
    return StefanState.from_function(
        lambda x: w.value(x, t0),
        lambda xp: np.full(xp.shape[:-1], -w.front_speed * t0),
        extent, h, t0, D, s,
    )


# ------------------------------------------------------------------ stepping

_ICE_GAP = 1e-3  # nodes closer than this fraction of h above the front count as ice


def _liquid_mask(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    xn = grid.axis(grid.n - 1)
    return xn > f[..., None] + _ICE_GAP * grid.h


def _dirichlet_mask(shape) -> np.ndarray:
    m = np.zeros(shape, bool)
    m[..., -1] = True
    for i in range(len(shape) - 1):
        sl = [slice(None)] * len(shape)
        sl[i] = 0
        m[tuple(sl)] = True
        sl[i] = -1
        m[tuple(sl)] = True
    return m


def _laplacian(grid: GridSpec, f: np.ndarray, unknown: np.ndarray, liquid: np.ndarray, theta_min: float = 0.0):
    """Shortley-Weller Laplacian rows for the unknown nodes.

    Returns flat unknown indices, a list of ``(row, col, coeff)`` triples for
    liquid neighbours and the diagonal.  Ice neighbours contribute the value
    0 at the sub-grid crossing point.
    """
    shape = grid.spatial_shape
    n = grid.n
    h = grid.h
    xn = grid.axis(n - 1)
    idx = np.nonzero(unknown)
    flat = np.ravel_multi_index(idx, shape)
    diag = np.zeros(len(flat))
    rows, cols, vals = [], [], []
    x_here = xn[idx[-1]]
    f_here = f[idx[:-1]] if n > 1 else np.full(len(flat), float(f))
    for ax in range(n):
        dist = {}
        nb = {}
        for sgn in (-1, 1):
            j = list(idx)
            j[ax] = j[ax] + sgn
            j = tuple(j)
            is_ice = ~liquid[j]
            d = np.full(len(flat), h)
            if ax == n - 1:
                if sgn < 0:
                    d = np.where(is_ice, x_here - f_here, h)
            else:
                f_nb = f[j[:-1]]
                denom = np.where(is_ice, f_nb - f_here, 1.0)
                frac = np.where(is_ice, (x_here - f_here) / denom, 1.0)
                d = np.where(is_ice, np.clip(frac, 0.0, 1.0) * h, h)
            if theta_min > 0:
                d = np.where(is_ice, np.maximum(d, theta_min * h), d)
            d = np.maximum(d, 1e-12 * h)
            dist[sgn] = d
            nb[sgn] = (np.ravel_multi_index(j, shape), is_ice)
        hl, hr = dist[-1], dist[1]
        for sgn, hh in ((-1, hl), (1, hr)):
            c = 2.0 / (hh * (hl + hr))
            col, is_ice = nb[sgn]
            keep = ~is_ice
            rows.append(flat[keep])
            cols.append(col[keep])
            vals.append(c[keep])
        diag -= 2.0 / (hl * hr)
    return flat, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), diag


def _front_gradient(grid: GridSpec, u: np.ndarray, f: np.ndarray, liquid: np.ndarray) -> np.ndarray:
    """``u_n`` at the front from the quadratic through the front and two liquid nodes.

    A node closer than ``h/2`` to the front is skipped: its value carries the
    splitting error and dividing by its distance would amplify it.
    """
    xn = grid.axis(grid.n - 1)
    m0 = np.argmax(liquid, axis=-1)
    has = liquid.any(axis=-1)
    d1 = xn[m0] - f
    m0 = np.where(d1 < 0.5 * grid.h, m0 + 1, m0)
    if np.any(~has) or np.any(m0 + 1 >= len(xn)):
        raise FrontExitError("front reached the top of the box")
    u1 = np.take_along_axis(u, m0[..., None], -1)[..., 0]
    u2 = np.take_along_axis(u, (m0 + 1)[..., None], -1)[..., 0]
    d1 = xn[m0] - f
    d2 = d1 + grid.h
    return (u1 * d2 * d2 - u2 * d1 * d1) / (d1 * d2 * (d2 - d1))


def _boundary_values(state: StefanState, boundary, t: float, mask: np.ndarray) -> np.ndarray:
    if boundary is None:
        return state.u[mask]
    x = state.coordinates()[mask]
    return np.asarray(boundary(x, t), float)


def step(state: StefanState, dt: float, boundary: Callable | None = None, mode: str = "implicit",
         max_slope: float = 10.0, heat_cfl: float = 1.0, front_cfl: float = 0.5) -> StefanState:
    """Advance one step: move the front, then solve the heat equation on the new liquid set.

    The front moves with the gradient of the current temperature (explicit
    Euler).  Nodes that become liquid are seeded by linear interpolation
    between the front and the nearest old liquid node; the heat step then
    runs with the front frozen at its new position.  ``boundary(x, t)`` gives
    Dirichlet data on the top and lateral faces of the box; by default the
    current face values are held.
    """
    grid = state.grid
    h = grid.h
    shape = grid.spatial_shape
    f_old = state.front.f
    liquid_old = _liquid_mask(grid, f_old)
    t_new = state.t + dt
    D = state.D
    u = np.where(liquid_old, state.u, 0.0)

    g = state.front.slope()
    g2 = (g ** 2).sum(-1) if g.size else np.zeros_like(f_old)
    if np.sqrt(g2).max(initial=0.0) > max_slope:
        raise GraphicalityError(f"front slope {np.sqrt(g2).max():.3g} exceeds {max_slope}: front is folding")
    un = _front_gradient(grid, u, f_old, liquid_old)
    speed = state.s * un * (1.0 + g2)
    if dt * np.abs(speed).max(initial=0.0) > front_cfl * h:
        raise CFLError(f"front step moves {dt * np.abs(speed).max():.3e} > {front_cfl} h")
    f_new = np.minimum(f_old - dt * speed, f_old)
    if np.any(f_new <= grid.spatial_extent[-1][0]):
        raise FrontExitError("front left the bottom of the box")

    liquid = _liquid_mask(grid, f_new)
    fresh = liquid & ~liquid_old
    if fresh.any():
        xn = grid.axis(grid.n - 1)
        m0 = np.argmax(liquid_old, axis=-1)
        u_up = np.take_along_axis(u, m0[..., None], -1)
        x_up = xn[m0][..., None]
        ramp = u_up * (xn - f_new[..., None]) / (x_up - f_new[..., None])
        u = np.where(fresh, np.maximum(ramp, 0.0), u)

    dirichlet = _dirichlet_mask(shape)
    unknown = liquid & ~dirichlet
    bmask = liquid & dirichlet
    u_bnd = u.copy()
    u_bnd[bmask] = _boundary_values(state, boundary, t_new, bmask)

    if mode == "implicit":
        flat, r, c, v, diag = _laplacian(grid, f_new, unknown, liquid)
        N = int(np.prod(shape))
        pos = -np.ones(N, int)
        pos[flat] = np.arange(len(flat))
        inner = pos[c] >= 0
        A = sp.csr_matrix(
            (np.concatenate([-dt * D * v[inner], 1.0 - dt * D * diag]),
             (np.concatenate([pos[r[inner]], np.arange(len(flat))]),
              np.concatenate([pos[c[inner]], np.arange(len(flat))]))),
            shape=(len(flat), len(flat)),
        )
        rhs = u.ravel()[flat].copy()
        np.add.at(rhs, pos[r[~inner]], dt * D * v[~inner] * u_bnd.ravel()[c[~inner]])
        new = u_bnd.ravel().copy()
        if len(flat):
            new[flat] = spsolve(A.tocsc(), rhs)
        u_new = new.reshape(shape)
    elif mode == "explicit":
        flat, r, c, v, diag = _laplacian(grid, f_new, unknown, liquid, theta_min=0.25)
        if len(flat) and dt * D * np.max(-diag) > heat_cfl:
            raise CFLError(f"explicit heat step unstable: dt={dt} exceeds {heat_cfl / (D * np.max(-diag)):.3e}")
        uf = u.ravel()
        lap = np.zeros(uf.size)
        np.add.at(lap, r, v * uf[c])
        lap[flat] += diag * uf[flat]
        new = u_bnd.ravel().copy()
        new[flat] = uf[flat] + dt * D * lap[flat]
        u_new = new.reshape(shape)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    u_new = np.where(liquid, np.maximum(u_new, 0.0), 0.0)
    return StefanState(u_new, FrontGraph(f_new, t_new, h, state.front.tangential_extent), grid, t_new, state.D, state.s)


# ------------------------------------------------------------------ bookkeeping


def _trapz_weights(m: int, h: float) -> np.ndarray:
    w = np.full(m, h)
    if m > 1:
        w[0] = w[-1] = h / 2
    else:
        w[:] = 1.0
    return w


def _tangential_integral(vals: np.ndarray, h: float) -> float:
    out = vals
    for ax in range(vals.ndim - 1, -1, -1):
        out = np.tensordot(out, _trapz_weights(vals.shape[ax], h), axes=([ax], [0]))
    return float(out)


def enthalpy(state: StefanState) -> float:
    """``int u + L |{u > 0}|`` over the box (trapezoid rule, front included)."""
    grid = state.grid
    h = grid.h
    xn = grid.axis(grid.n - 1)
    liquid = state.liquid()
    f = state.front.f
    m0 = np.argmax(liquid, axis=-1)
    u = np.where(liquid, state.u, 0.0)
    u0 = np.take_along_axis(u, m0[..., None], -1)[..., 0]
    col = h * (u.sum(-1) - 0.5 * u0 - 0.5 * u[..., -1]) + 0.5 * (xn[m0] - f) * u0
    vol = xn[-1] - f
    return _tangential_integral(col + state.latent_heat * vol, h)


def boundary_flux(state: StefanState) -> float:
    """``D * int dU/dnu`` over the top and lateral faces (inflow positive)."""
    grid = state.grid
    h = grid.h
    u = np.where(state.liquid(), state.u, 0.0)
    top = (3 * u[..., -1] - 4 * u[..., -2] + u[..., -3]) / (2 * h)
    total = _tangential_integral(top, h)
    for ax in range(grid.n - 1):
        for side in (0, -1):
            a = np.take(u, [side, side + 1 if side == 0 else side - 1, side + 2 if side == 0 else side - 2], axis=ax)
            a0, a1, a2 = (np.take(a, k, axis=ax) for k in range(3))
            dn = (3 * a0 - 4 * a1 + a2) / (2 * h)
            # face integral over the remaining axes, x_n last
            total += _tangential_integral(dn, h)
    return state.D * total


@dataclass
class SimulationResult:
    times: list = field(default_factory=list)
    fronts: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    enthalpy: list = field(default_factory=list)
    flux: list = field(default_factory=list)
    balance_times: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    @property
    def final(self) -> StefanState:
        return self.snapshots[-1]

    def enthalpy_drift(self) -> float:
        """``|E(T) - E(0) - int flux dt|`` per unit time."""
        t = np.asarray(self.balance_times)
        if len(t) < 2:
            return 0.0
        inflow = float(np.trapezoid(self.flux, t))
        return abs(self.enthalpy[-1] - self.enthalpy[0] - inflow) / (t[-1] - t[0])

    def field(self) -> ScalarField:
        """Recorded snapshots as a space-time field (uniform cadence required)."""
        t = np.asarray(self.times)
        g = self.snapshots[0].grid
        dt = t[1] - t[0] if len(t) > 1 else 1.0
        if len(t) > 2 and np.max(np.abs(np.diff(t) - dt)) > 1e-9 * dt:
            raise ValueError("snapshots are not uniformly spaced")
        spec = GridSpec(g.n, g.h, dt, g.spatial_extent, (t[0], t[0] + dt * (len(t) - 1)))
        vals = np.stack([s.u for s in self.snapshots], axis=-1)
        mask = np.stack([~s.liquid() for s in self.snapshots], axis=-1)
        return ScalarField(spec, vals, mask)

    def front_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        n = self.snapshots[0].n
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n - 1)] + ["f"])
        for s in self.snapshots:
            for row in s.front.points():
                w.writerow([repr(float(s.t))] + [repr(float(v)) for v in row])
        return buf.getvalue()

    def summary(self) -> dict:
        fin = self.final
        return {
            "t_final": fin.t,
            "steps": len(self.times) - 1,
            "front_min": float(fin.front.f.min()),
            "front_max": float(fin.front.f.max()),
            "enthalpy_drift": self.enthalpy_drift(),
            "flags": self.flags,
        }


def check_nondegeneracy(state: StefanState, K: float, lam: float | None = None) -> bool:
    """Whether ``max u >= lam / K`` over ``B_{3 lam / 4}``."""
    lam = state.lam if lam is None else lam
    if not np.isfinite(lam):
        lam = 1.0
    x = state.coordinates()
    inside = np.linalg.norm(x, axis=-1) < 0.75 * lam
    if not inside.any():
        return False
    return bool(state.u[inside].max() >= lam / K)


def simulate(state: StefanState, T: float, dt: float, boundary: Callable | None = None,
             mode: str = "implicit", record_every: int = 1, nondegeneracy: str = "flag",
             K: float | None = None, **step_kw) -> SimulationResult:
    """Run ``step`` to time ``state.t + T`` and record snapshots and enthalpy.

    ``nondegeneracy`` is ``"flag"``, ``"reject"`` or ``"off"``; it needs ``K``.
    """
    res = SimulationResult()
    if nondegeneracy != "off" and K is not None:
        ok = check_nondegeneracy(state, K)
        res.flags["nondegenerate"] = ok
        if not ok and nondegeneracy == "reject":
            raise ValueError("initial data fails the nondegeneracy check")
    if T < 0 or dt <= 0:
        raise ValueError("need T >= 0 and dt > 0")
    nsteps = int(math.ceil(T / dt - 1e-9))
    t_end = state.t + T

    def record(s):
        res.times.append(s.t)
        res.fronts.append(s.front.f.copy())
        res.snapshots.append(s)

    record(state)
    res.enthalpy.append(enthalpy(state))
    res.flux.append(boundary_flux(state))
    res.balance_times.append(state.t)
    cur = state
    for k in range(1, nsteps + 1):
        # the last step is shortened to land on the final time
        dtk = min(dt, t_end - cur.t) if k == nsteps else dt
        nxt = step(cur, dtk, boundary, mode, **step_kw)
        if np.any(nxt.front.f > cur.front.f):
            raise AssertionError("front retreated")
        cur = nxt
        res.enthalpy.append(enthalpy(cur))
        res.flux.append(boundary_flux(cur))
        res.balance_times.append(cur.t)
        if k % record_every == 0 or k == nsteps:
            record(cur)
    return res


# ------------------------------------------------------------------ rescaling


def rescale(state: StefanState, target: Scaling | str, lam_new: float, extent=None) -> StefanState:
    """Apply ``u -> u(mu x, nu t) / mu``.

    ``target`` selects the map: ``DIFFUSION_SCALED`` is the hyperbolic map
    ``mu = nu = lam_new`` and ``SPEED_SCALED`` the parabolic map
    ``mu = lam_new``, ``nu = lam_new^2``.  The lattice maps exactly onto the
    scaled lattice; ``extent`` optionally resamples onto a sub-box by
    interpolation.  Coefficients transform as ``D -> nu D / mu^2`` and
    ``s -> nu s / mu``.
    """
    target = Scaling(target)
    if lam_new <= 0:
        raise ValueError("lam_new must be positive")
    if target is Scaling.DIFFUSION_SCALED:
        mu, nu = lam_new, lam_new
    elif target is Scaling.SPEED_SCALED:
        mu, nu = lam_new, lam_new ** 2
    elif target is Scaling.ORIGINAL:
        if abs(lam_new - 1.0) > 1e-15:
            raise ValueError("the original scaling is reached by composing maps; use lam_new=1")
        mu = nu = 1.0
    else:
        raise ValueError("target must be a named scaling")
    g = state.grid
    ext = tuple((a / mu, b / mu) for a, b in g.spatial_extent)
    grid = GridSpec(g.n, g.h / mu, g.dt, ext, (state.t / nu, state.t / nu))
    front = FrontGraph(state.front.f / mu, state.t / nu, g.h / mu, ext[:-1])
    out = StefanState(state.u / mu, front, grid, state.t / nu, nu * state.D / mu ** 2, nu * state.s / mu)
    if extent is not None:
        out = resample(out, extent)
    return out


def resample(state: StefanState, extent, h: float | None = None) -> StefanState:
    """Interpolate the state onto a sub-box (and optionally a new step)."""
    g = state.grid
    h = g.h if h is None else h
    ext = tuple((float(a), float(b)) for a, b in extent)
    for (a, b), (A, B) in zip(ext, g.spatial_extent):
        if b - a < h or a < A - 1e-12 or b > B + 1e-12:
            raise EmptyGridError(f"target box {ext} is empty or outside {g.spatial_extent}")
    grid = GridSpec(g.n, h, g.dt, ext, (state.t, state.t))
    x = grid.mesh()[0][..., 0, :]
    ui = RegularGridInterpolator([g.axis(i) for i in range(g.n)], state.u)
    u = ui(x.reshape(-1, g.n)).reshape(grid.spatial_shape)
    if g.n > 1:
        fi = RegularGridInterpolator([g.axis(i) for i in range(g.n - 1)], state.front.f)
        f = fi(x[..., 0, :-1].reshape(-1, g.n - 1)).reshape(grid.spatial_shape[:-1])
    else:
        f = state.front.f.copy()
    front = FrontGraph(f, state.t, h, ext[:-1])
    u = np.where(_liquid_mask(grid, f), np.maximum(u, 0.0), 0.0)
    return StefanState(u, front, grid, state.t, state.D, state.s)


# ------------------------------------------------------------------ comparison


@dataclass
class ComparisonReport:
    status: str
    max_excess: float
    boundary_excess: float
    first_violation: dict | None
    nodes_checked: int

    @property
    def passed(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "pass": self.passed,
            "max_excess": self.max_excess,
            "boundary_excess": self.boundary_excess,
            "first_violation": self.first_violation,
            "nodes_checked": self.nodes_checked,
        }


def compare_with_barrier(history, barrier, region=None, sub: bool = False, tol: float = 1e-9,
                         raise_on_boundary: bool = False) -> ComparisonReport:
    """Check ``u <= barrier`` (``>=`` when ``sub``) on every recorded snapshot.

    ``history`` is a :class:`SimulationResult`, a :class:`RadialRun` or a
    list of ``(x, t, u)`` node samples per time.  ``region(x, t)`` restricts
    the check.  The initial slice and the outer faces of the box form the
    parabolic boundary; ordering there is a hypothesis and a failure is
    reported as ``boundary_ordering_failed``.
    """
    samples = _samples(history)
    sign = -1.0 if sub else 1.0
    worst_b = -np.inf
    worst_i = -np.inf
    first = None
    count = 0
    for k, (x, t, u, on_bnd) in enumerate(samples):
        tt = np.full(len(x), t)
        keep = np.ones(len(x), bool) if region is None else np.asarray(region(x, tt), bool)
        if not keep.any():
            continue
        x, u, on_bnd, tt = x[keep], u[keep], on_bnd[keep], tt[keep]
        w = np.asarray(barrier.value(x, tt), float) if hasattr(barrier, "value") else np.asarray(barrier(x, tt), float)
        excess = sign * (u - w)
        count += len(x)
        bnd = on_bnd | (k == 0)
        if bnd.any():
            worst_b = max(worst_b, float(excess[bnd].max()))
        if (~bnd).any():
            e = excess[~bnd]
            worst_i = max(worst_i, float(e.max()))
            if first is None and e.max() > tol:
                j = int(np.argmax(e > tol))
                first = {"x": x[~bnd][j].tolist(), "t": float(t), "excess": float(e[j])}
    if worst_b > tol:
        if raise_on_boundary:
            raise BoundaryOrderingError(f"ordering fails on the boundary by {worst_b:.3e}")
        status = "boundary_ordering_failed"
    elif first is not None:
        status = "interior_violation"
    else:
        status = "ok"
    return ComparisonReport(status, float(worst_i), float(worst_b), first, count)


def _samples(history):
    if isinstance(history, SimulationResult):
        out = []
        for s in history.snapshots:
            x = s.coordinates()
            bnd = _dirichlet_mask(s.grid.spatial_shape)
            bnd[..., 0] = True
            out.append((x.reshape(-1, s.n), s.t, s.u.ravel(), bnd.ravel()))
        return out
    if isinstance(history, RadialRun):
        return history.node_samples()
    return list(history)


# ------------------------------------------------------------------ radial runs


@dataclass
class RadialRun:
    """Radially symmetric solution on ``R(t) <= |x| <= R_out``."""

    t: np.ndarray
    R: np.ndarray
    xi: np.ndarray
    u: np.ndarray  # shape (len(t), len(xi))
    lam: float
    n: int
    R_out: float

    def radii(self, k: int) -> np.ndarray:
        return self.R[k] + self.xi * (self.R_out - self.R[k])

    def containment_constant(self) -> float:
        """``sup_t (1 - R(t)) / (lam t)``."""
        m = self.t > 0
        return float(np.max((1.0 - self.R[m]) / (self.lam * self.t[m])))

    def node_samples(self, rays: int = 1):
        out = []
        for k in range(len(self.t)):
            r = self.radii(k)
            x = np.zeros((len(r), self.n))
            x[:, 0] = r
            bnd = np.zeros(len(r), bool)
            bnd[-1] = True
            out.append((x, float(self.t[k]), self.u[k], bnd))
        return out


def radial_front_fixing(u0: Callable, lam: float, T: float, N: int = 100, n: int = 2, R0: float = 1.0,
                        R_out: float = 2.0, R_min: float = 0.5, rtol: float = 1e-8, n_out: int = 201) -> RadialRun:
    """Solve ``u_t = Lap u`` for ``|x| > R(t)``, ``R' = -lam u_r(R)``, ``u(R) = 0``.

    Uses the front-fixing variable ``xi = (r - R)/(R_out - R)`` and a BDF
    method of lines with ``N`` intervals; ``u(R_out)`` is held at its
    initial value.  Stops when ``R`` reaches ``R_min``.
    """
    xi = np.linspace(0.0, 1.0, N + 1)
    dx = xi[1] - xi[0]
    r0 = R0 + xi * (R_out - R0)
    U0 = np.asarray(u0(r0), float)
    U0[0] = 0.0
    top = U0[-1]

    def rhs(_t, y):
        U = np.empty(N + 1)
        U[0] = 0.0
        U[1:N] = y[:-1]
        U[N] = top
        R = y[-1]
        L = R_out - R
        uxi0 = (-3 * U[0] + 4 * U[1] - U[2]) / (2 * dx)
        dR = -lam * uxi0 / L
        Ux = (U[2:] - U[:-2]) / (2 * dx)
        Uxx = (U[2:] - 2 * U[1:-1] + U[:-2]) / dx ** 2
        r = R + xi[1:-1] * L
        dU = Uxx / L ** 2 + (n - 1) / r * Ux / L + dR * (1 - xi[1:-1]) * Ux / L
        return np.concatenate([dU, [dR]])

    def hit(_t, y):
        return y[-1] - R_min

    hit.terminal = True
    y0 = np.concatenate([U0[1:N], [R0]])
    t_eval = np.linspace(0.0, T, n_out)
    sol = solve_ivp(rhs, (0.0, T), y0, method="BDF", t_eval=t_eval, events=hit, rtol=rtol, atol=rtol * 1e-2)
    if not sol.success:
        raise StepError(sol.message)
    U = np.zeros((len(sol.t), N + 1))
    U[:, 1:N] = sol.y[:-1].T
    U[:, N] = top
    return RadialRun(sol.t, sol.y[-1], xi, U, lam, n, R_out)


def radial_containment(lam: float, K: float = 1.0, n: int = 2, N: int = 100, T: float = 1.0,
                       ell: float | None = None, safety: float = 1.05) -> dict:
    """Containment experiment: ``u = 0`` in ``B_1`` at ``t = 0`` and ``0 <= u <= K``.

    Initial data ``K (1 - exp(-(r - 1)/ell))`` with ``ell = 1/(2n)`` by default.
    Returns the measured constant, the fitted barrier constant ``C0`` and
    the comparison against the radial supersolution while its radius stays
    above 1/2.
    """
    from .barriers import RadialSupersolution, radial_profile

    ell = 1.0 / (2 * n) if ell is None else ell
    u0 = lambda r: K * (1.0 - np.exp(-(np.asarray(r) - 1.0) / ell))  # noqa: E731
    run = radial_front_fixing(u0, lam, T, N=N, n=n)
    # smallest C0 with C0 g(r - 1) >= u0 on [1, 2] and at r = 2 later on
    r = np.linspace(1.0, 2.0, 2001)[1:]
    g = radial_profile(r - 1.0, n)[0]
    C0 = safety * float(np.max(u0(r) / g))
    w = RadialSupersolution(C0, lam, n)
    tmax = w.t_max()
    rep = compare_with_barrier(run, w, region=lambda x, t: t <= tmax)
    Cm = run.containment_constant()
    return {
        "lambda": lam,
        "K": K,
        "N": N,
        "C_meas": Cm,
        "C0": C0,
        "R_final": float(run.R[-1]),
        "t_final": float(run.t[-1]),
        "comparison": rep.to_dict(),
        "bounded_by_barrier": bool(Cm <= C0 + 1e-9),
    }


# ------------------------------------------------------------------ flatness extension


def _envelope(us, xn, a, I, lam):
    """Best offset and width for ``a_n(t) (x_n - b(t))^+`` with ``b = b0 - lam I``.

    Both envelope constraints are linear in ``b0``, so the optimal offset is
    the midpoint of the two extreme constraint values.
    """
    c = xn - lam * I - us / a          # lower envelope: c - b0 <= w
    pos = us > 0
    hi = np.max(c)
    lo = np.min(c[pos]) if pos.any() else hi  # upper envelope: b0 - c <= w on u > 0
    return 0.5 * (hi + lo), 0.5 * (hi - lo)


def flatness_extension_experiment(u: ScalarField, lam: float, eta: float, eps0: float,
                                  beta: float = 1.0 / 20, knots: int = 3, flatness_exponent: float = 1.2) -> dict:
    """Fit ``a_n(t) (x_n - b(t))^+`` with ``b' = -lam a_n`` on ``B_eta x [-eta/lam, 0]``.

    The field is in units where the front law is ``u_t = lam |grad u|^2``.
    The hypothesis check requires the front to lie in a strip of width
    ``eps0`` at every time and ``eps0 <= eta^flatness_exponent``; the
    conclusion requires the two-sided envelope width to be at most
    ``eta^(1 + beta)``.  ``a_n`` is piecewise linear in time with ``knots``
    nodes.
    """
    x, t = u.spec.mesh()
    vals = np.where(u.mask, 0.0, u.values) if u.mask is not None else u.values
    t0 = -eta / lam
    sel = (np.linalg.norm(x, axis=-1) < eta) & (t >= t0 - 1e-12) & (t <= 1e-12)
    if not sel.any():
        raise ValueError("no grid nodes in the fitting cylinder")
    xs, ts, us = x[sel], t[sel], vals[sel]
    xn = xs[:, -1]
    pos = us > 0
    if not pos.any() or pos.all():
        raise ValueError("fit infeasible: no free boundary inside the cylinder")
    front_band = _front_band(xs, ts, us, u.spec.h)
    hypothesis = bool(front_band <= eps0 and eps0 <= eta ** flatness_exponent)

    tk = np.linspace(t0, 0.0, knots)
    fine = np.linspace(t0, 0.0, 64 * max(knots - 1, 1) + 1)

    def profile(logs):
        a_k = np.exp(logs)
        af = np.interp(fine, tk, a_k)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (af[1:] + af[:-1]) * np.diff(fine))])
        # I(t) = int_t^0 a_n, so that b(t) = b0 + lam I(t) and b' = -lam a_n
        I = cum[-1] - np.interp(ts, fine, cum)
        return np.interp(ts, tk, a_k), I

    def width(logs):
        a, I = profile(logs)
        return _envelope(us, xn, a, I, lam)[1]

    one = minimize_scalar(lambda la: width(np.full(knots, la)), bounds=(-12.0, 12.0), method="bounded",
                          options={"xatol": 1e-10})
    best = minimize(width, np.full(knots, one.x), method="Nelder-Mead",
                    options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
    logs = best.x if best.fun <= one.fun else np.full(knots, one.x)
    a, I = profile(logs)
    b0, w = _envelope(us, xn, a, I, lam)
    a_k = np.exp(logs)
    a_prime = float(np.max(np.abs(np.diff(a_k) / np.diff(tk)))) if knots > 1 else 0.0
    bound = eta ** (1 + beta)
    return {
        "eta": eta,
        "eps0": eps0,
        "lambda": lam,
        "beta": beta,
        "front_band": front_band,
        "hypothesis_ok": hypothesis,
        "envelope_width": float(w),
        "envelope_bound": bound,
        "a_n": a_k.tolist(),
        "b_final": float(b0),
        "a_n_prime_max": a_prime,
        "a_n_prime_bound": eta ** (beta - 2),
        "pass": bool(hypothesis and w <= bound and a_prime <= eta ** (beta - 2)),
    }


def _front_band(xs, ts, us, h):
    """Largest over time of the width of the horizontal strip holding the front.

    Only columns containing both phases count.  Raises when a column has
    liquid below ice (the front is not a graph over ``x'``).
    """
    pos = us > 0
    band = 0.0
    for tk in np.unique(ts):
        m = ts == tk
        xm, pm = xs[m], pos[m]
        keys = np.round(xm[:, :-1] / h).astype(int) if xm.shape[1] > 1 else np.zeros((len(xm), 1), int)
        _, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        k = inv.max() + 1
        top_ice = np.full(k, -np.inf)
        low_liq = np.full(k, np.inf)
        np.maximum.at(top_ice, inv[~pm], xm[~pm, -1])
        np.minimum.at(low_liq, inv[pm], xm[pm, -1])
        both = np.isfinite(top_ice) & np.isfinite(low_liq)
        if np.any(low_liq[both] < top_ice[both]):
            raise ValueError("fit infeasible: free boundary is not a graph over x'")
        if both.any():
            mid = 0.5 * (top_ice[both] + low_liq[both])
            band = max(band, float(mid.max() - mid.min() + h))
    return band
