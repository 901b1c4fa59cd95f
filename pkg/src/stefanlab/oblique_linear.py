"""Linear parabolic problem with an oblique dynamic boundary condition.

n-dimensional problem on ``C_1 = (Q_1 n {x_n > 0}) x (-1, 0]``::

    lam v_t = tr(A(t) D^2 v)       in C_1
    v_t     = gamma(t) . grad v    on F_1 = {x_n = 0}
    v       = phi                  on the Dirichlet boundary

and the one-dimensional problem::

    w_t = (A(t) w_xx + h(x, t)) / lam    for x in (0, 1)
    w_t = gamma(t) w_x + f(t)            at x = 0

Both are discretised with implicit Euler.  The default boundary stencil is
first-order upwind (forward in ``x_n``; along ``x_i`` towards ``sign(gamma_i)``)
so that every step matrix is an M-matrix and the discrete comparison principle
holds exactly.  Mixed derivatives use the sign-adapted seven-point stencil,
which is monotone for diagonally dominant ``A``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.optimize import linprog
from scipy.sparse.linalg import splu

from .fields import GridSpec, ScalarField, derivatives_at, oscillation
from .geometry import AnisotropicBall, Region, SpaceTimePoint

__all__ = [
    "pucci_plus",
    "pucci_minus",
    "PucciBounds",
    "CoefficientPath",
    "ObliqueProblem1D",
    "ObliqueSolution",
    "solve_dirichlet",
    "solve_1d",
    "random_boundary_data",
    "ComparisonStats",
    "check_comparison",
    "OscillationStats",
    "check_oscillation_decay",
    "C1AlphaFit",
    "fit_c1alpha_at_boundary",
    "boundary_remainder_exponent",
    "observed_order",
]

SYM_TOL = 1e-10


# ---------------------------------------------------------------- Pucci


def _eig(N) -> np.ndarray:
    N = np.asarray(N, float)
    if N.shape[-1] != N.shape[-2]:
        raise ValueError("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(N), initial=0.0)))
    if np.max(np.abs(N - np.swapaxes(N, -1, -2)), initial=0.0) > SYM_TOL * scale:
        raise ValueError("matrix is not symmetric")
    return np.linalg.eigvalsh(N)


def pucci_plus(N, K: float):
    """``M+_K(N) = max tr(A N)`` over ``K^-1 I <= A <= K I``; vectorised over leading axes."""
    ev = _eig(N)
    return K * np.sum(np.clip(ev, 0, None), axis=-1) + np.sum(np.clip(ev, None, 0), axis=-1) / K


def pucci_minus(N, K: float):
    """``M-_K(N) = min tr(A N)`` over ``K^-1 I <= A <= K I``."""
    ev = _eig(N)
    return np.sum(np.clip(ev, 0, None), axis=-1) / K + K * np.sum(np.clip(ev, None, 0), axis=-1)


@dataclass(frozen=True)
class PucciBounds:
    K: float

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")

    def plus(self, N):
        return pucci_plus(N, self.K)

    def minus(self, N):
        return pucci_minus(N, self.K)


# ---------------------------------------------------------------- coefficients


def _walk(rng, knots: int, lo: float, hi: float, max_step: float, size: int = 1) -> np.ndarray:
    """Reflected random walk in ``[lo, hi]`` with increments bounded by ``max_step``."""
    out = np.empty((knots, size))
    out[0] = rng.uniform(lo, hi, size)
    for k in range(1, knots):
        v = out[k - 1] + rng.uniform(-max_step, max_step, size)
        v = np.where(v > hi, 2 * hi - v, v)
        v = np.where(v < lo, 2 * lo - v, v)
        out[k] = np.clip(v, lo, hi)
    return out


@dataclass
class CoefficientPath:
    """Time-dependent coefficients ``A(t)``, ``gamma(t)`` with bound ``K``.

    Construction samples the path on ``t_range`` and rejects it unless
    ``K^-1 I <= A <= K I``, ``K^-1 <= gamma_n <= K``, ``|gamma| <= K``,
    ``|A'|, |gamma'| <= 1/lam``.
    """

    A: Callable
    gamma: Callable
    K: float
    lam: float
    n: int = 2
    t_range: tuple = (-1.0, 0.0)
    check_samples: int = 257
    measured: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not (0 < self.lam <= 1):
            raise ValueError("lambda must lie in (0, 1]")
        self.validate()

    @classmethod
    def constant(cls, A, gamma, K: float, lam: float, t_range=(-1.0, 0.0)) -> "CoefficientPath":
        A = np.asarray(A, float)
        g = np.asarray(gamma, float)
        return cls(lambda t: A, lambda t: g, K, lam, len(g), t_range)

    @classmethod
    def random(
        cls,
        n: int,
        K: float,
        lam: float,
        rng: np.random.Generator,
        t_range=(-1.0, 0.0),
        knots: int = 9,
        theta: float | None = None,
    ) -> "CoefficientPath":
        """Piecewise-linear random walks projected onto the admissible set.

        ``A`` is diagonally dominant: off-diagonal row sums are at most
        ``theta`` times the diagonal, which keeps the mixed-derivative stencil
        monotone.  Gershgorin then places the spectrum in ``[1/K, K]``.
        """
        if theta is None:
            theta = min(0.3, 0.9 * (K * K - 1) / (K * K + 1))
        t0, t1 = t_range
        ts = np.linspace(t0, t1, knots)
        dtk = ts[1] - ts[0]
        # entry rates kept below 1/(2 n lam) so the spectral-norm rate stays below 1/lam
        rate = 0.5 / (n * lam)
        dlo = 1.0 / (K * (1 - theta))
        dhi = K / (1 + theta)
        if dhi < dlo:
            dlo = dhi = 1.0
        diag = _walk(rng, knots, dlo, dhi, rate * dtk, n)
        noff = n * (n - 1) // 2
        off = _walk(rng, knots, -1.0, 1.0, rate * dtk / max(dhi, 1.0), noff) if noff else np.zeros((knots, 0))
        gn = _walk(rng, knots, 1.0 / K, min(K, 1.0) if K > 1 else 1.0, rate * dtk, 1)
        gmax_t = math.sqrt(max(K * K - 1.0, 0.0)) / math.sqrt(max(n - 1, 1))
        gt = _walk(rng, knots, -min(gmax_t, 1.0), min(gmax_t, 1.0), rate * dtk, n - 1) if n > 1 else np.zeros((knots, 0))
        iu = np.triu_indices(n, 1)

        def interp(vals, t):
            return np.array([np.interp(t, ts, vals[:, j]) for j in range(vals.shape[1])])

        def A(t):
            d = interp(diag, t)
            M = np.diag(d)
            if noff:
                o = interp(off, t)
                lim = theta * np.min(d) / max(n - 1, 1)
                M[iu] = o * lim
                M[(iu[1], iu[0])] = o * lim
            return M

        def gamma(t):
            return np.concatenate([interp(gt, t), interp(gn, t)])

        return cls(A, gamma, K, lam, n, t_range)

    def validate(self):
        ts = np.linspace(*self.t_range, self.check_samples)
        As = np.array([self.A(t) for t in ts])
        gs = np.array([self.gamma(t) for t in ts])
        if As.shape[1:] != (self.n, self.n) or gs.shape[1:] != (self.n,):
            raise ValueError("coefficient shapes do not match n")
        ev = _eig(As)
        tol = 1e-12
        if ev.min() < 1 / self.K - tol or ev.max() > self.K + tol:
            raise ValueError(f"A(t) leaves [1/K, K]: eigenvalues in [{ev.min():.4g}, {ev.max():.4g}]")
        if gs[:, -1].min() < 1 / self.K - tol or gs[:, -1].max() > self.K + tol:
            raise ValueError("gamma_n leaves [1/K, K]")
        if np.linalg.norm(gs, axis=1).max() > self.K + tol:
            raise ValueError("|gamma| exceeds K")
        dt = ts[1] - ts[0]
        dA = np.linalg.norm(np.diff(As, axis=0), ord=2, axis=(1, 2)).max() / dt
        dg = np.linalg.norm(np.diff(gs, axis=0), axis=1).max() / dt
        if dA > 1 / self.lam * (1 + 1e-9) or dg > 1 / self.lam * (1 + 1e-9):
            raise ValueError(f"coefficient rate too large: |A'|={dA:.4g}, |gamma'|={dg:.4g}, 1/lam={1 / self.lam:.4g}")
        dom = np.abs(As).sum(axis=2) - 2 * np.abs(np.diagonal(As, axis1=1, axis2=2))
        self.measured = {
            "eig_min": float(ev.min()),
            "eig_max": float(ev.max()),
            "rate_A": float(dA),
            "rate_gamma": float(dg),
            "diagonally_dominant": bool(dom.max() <= 1e-12),
        }


# ---------------------------------------------------------------- n-D solver


@dataclass
class ObliqueSolution:
    field: ScalarField
    max_residual: float
    monotone: bool
    dirichlet_mask: np.ndarray
    info: dict = field(default_factory=dict)

    def max_principle_gap(self) -> float:
        """How far interior values exceed the Dirichlet range (<= 0 when it holds)."""
        v = self.field.values
        d = v[self.dirichlet_mask]
        return float(max(v.max() - d.max(), d.min() - v.min()))


def _cylinder_spec(n: int, h: float, dt: float, t_range=(-1.0, 0.0)) -> GridSpec:
    return GridSpec(n, h, dt, ((-1.0, 1.0),) * (n - 1) + ((0.0, 1.0),), t_range)


def dirichlet_nodes(spec: GridSpec) -> np.ndarray:
    """Boolean mask over the space-time grid of ``d_D C_1`` nodes (incl. the initial slice)."""
    shape = spec.spatial_shape
    sp_mask = np.zeros(shape, bool)
    for i in range(spec.n - 1):
        idx = [slice(None)] * spec.n
        idx[i] = 0
        sp_mask[tuple(idx)] = True
        idx[i] = shape[i] - 1
        sp_mask[tuple(idx)] = True
    idx = [slice(None)] * spec.n
    idx[-1] = shape[-1] - 1
    sp_mask[tuple(idx)] = True
    full = np.repeat(sp_mask[..., None], spec.nt, axis=-1)
    full[..., 0] = True
    return full


def _data_array(phi, spec: GridSpec) -> np.ndarray:
    if callable(phi):
        x, t = spec.mesh()
        return np.asarray(phi(x, t), float) * np.ones(spec.shape)
    if isinstance(phi, ScalarField):
        return phi.values
    arr = np.asarray(phi, float)
    if arr.shape != spec.shape:
        raise ValueError("boundary data array must match the grid")
    return arr


def solve_dirichlet(
    coeffs: CoefficientPath,
    phi,
    h: float = 1.0 / 16,
    dt: float | None = None,
    c: float = 0.25,
    boundary_stencil: str = "upwind",
    dt_rule: str = "hyperbolic",
) -> ObliqueSolution:
    """Implicit Euler for the oblique problem on ``C_1`` with Dirichlet data ``phi``.

    Args:
        coeffs: admissible coefficient path on ``[-1, 0]``.
        phi: callable ``phi(x, t)``, array or field; read on ``d_D C_1`` only.
        h: spatial step (``1/h`` must be an integer).
        dt: time step; defaults to ``c h`` (``dt_rule="hyperbolic"``) or
            ``min(c lam h^2, c h)`` (``dt_rule="min"``).
        boundary_stencil: ``"upwind"`` (monotone) or ``"second"``
            (second-order one-sided normal, central tangential).

    Returns:
        ObliqueSolution with the field, the largest algebraic residual and
        whether every step matrix was an M-matrix.
    """
    n = coeffs.n
    if h > 0.25 + 1e-12:
        raise ValueError("grid too coarse: need at least 3 interior layers in x_n")
    lam = coeffs.lam
    if dt is None:
        dt = c * h if dt_rule == "hyperbolic" else min(c * lam * h * h, c * h)
        dt = 1.0 / math.ceil(1.0 / dt)
    spec = _cylinder_spec(n, h, dt)
    shape = spec.spatial_shape
    N = int(np.prod(shape))
    data = _data_array(phi, spec)
    dmask = dirichlet_nodes(spec)
    sdir = dmask[..., 1]
    idx = np.arange(N).reshape(shape)
    bnd = np.zeros(shape, bool)
    sl = [slice(None)] * n
    sl[-1] = 0
    bnd[tuple(sl)] = True
    bnd &= ~sdir
    inner = ~sdir & ~bnd
    I_in = idx[inner]
    I_bd = idx[bnd]
    I_dir = idx[sdir]
    strides = [int(np.prod(shape[i + 1:])) for i in range(n)]

    times = spec.times
    v = np.empty(spec.shape)
    v[..., 0] = data[..., 0]
    cur = data[..., 0].ravel().copy()
    max_res = 0.0
    monotone = True
    for k in range(1, spec.nt):
        t = times[k]
        A = np.asarray(coeffs.A(t), float)
        g = np.asarray(coeffs.gamma(t), float)
        rows, cols, vals = [], [], []

        def add(r, cidx, w):
            rows.append(r)
            cols.append(cidx)
            vals.append(np.broadcast_to(w, r.shape).astype(float))

        # interior: lam/dt v - tr(A D2 v) = lam/dt v_old
        diag_w = lam / dt + 2 * np.trace(A) / h ** 2
        for i in range(n):
            for j in range(i + 1, n):
                diag_w -= 2 * abs(A[i, j]) / h ** 2
        add(I_in, I_in, diag_w)
        for i in range(n):
            axial = A[i, i]
            for j in range(n):
                if j != i:
                    axial -= abs(A[i, j])
            for s in (1, -1):
                add(I_in, I_in + s * strides[i], -axial / h ** 2)
        for i in range(n):
            for j in range(i + 1, n):
                b = A[i, j]
                if b == 0:
                    continue
                sg = 1 if b > 0 else -1
                for s in (1, -1):
                    add(I_in, I_in + s * strides[i] + s * sg * strides[j], -abs(b) / h ** 2)
        # boundary row: 1/dt v - gamma . grad v = 1/dt v_old
        if boundary_stencil == "upwind":
            diag_b = 1.0 / dt + np.sum(np.abs(g)) / h
            add(I_bd, I_bd, diag_b)
            add(I_bd, I_bd + strides[-1], -g[-1] / h)
            for i in range(n - 1):
                if g[i] != 0:
                    s = 1 if g[i] > 0 else -1
                    add(I_bd, I_bd + s * strides[i], -abs(g[i]) / h)
        elif boundary_stencil == "second":
            add(I_bd, I_bd, 1.0 / dt + 1.5 * g[-1] / h)
            add(I_bd, I_bd + strides[-1], -2.0 * g[-1] / h)
            add(I_bd, I_bd + 2 * strides[-1], 0.5 * g[-1] / h)
            for i in range(n - 1):
                add(I_bd, I_bd + strides[i], -g[i] / (2 * h))
                add(I_bd, I_bd - strides[i], g[i] / (2 * h))
        else:
            raise ValueError(f"unknown boundary stencil {boundary_stencil!r}")
        add(I_dir, I_dir, 1.0)
        M = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
        )
        off = M - sp.diags(M.diagonal())
        if off.nnz and off.data.max() > 1e-14:
            monotone = False
        rhs = np.empty(N)
        rhs[I_in] = lam / dt * cur[I_in]
        rhs[I_bd] = cur[I_bd] / dt
        rhs[I_dir] = data[..., k].ravel()[I_dir]
        nxt = splu(M.tocsc()).solve(rhs)
        max_res = max(max_res, float(np.max(np.abs(M @ nxt - rhs)) / max(1.0, np.max(np.abs(rhs)))))
        v[..., k] = nxt.reshape(shape)
        cur = nxt
    if not monotone and boundary_stencil == "upwind":
        warnings.warn("step matrix is not an M-matrix; A(t) is probably not diagonally dominant", RuntimeWarning)
    return ObliqueSolution(ScalarField(spec, v), max_res, monotone, dmask, {"h": h, "dt": dt, "lambda": lam})


def random_boundary_data(spec: GridSpec, rng: np.random.Generator, modes: int = 4, normalize: bool = True) -> np.ndarray:
    """Smooth random trigonometric data on the grid, rescaled to ``[0, 1]`` on ``d_D C_1``."""
    x, t = spec.mesh()
    out = np.zeros(spec.shape)
    for _ in range(modes):
        k = rng.normal(0.0, 2.0, spec.n)
        w = rng.normal(0.0, 2.0)
        out += rng.normal() * np.cos(np.pi * (x @ k + w * t) + rng.uniform(0, 2 * np.pi))
    if normalize:
        d = out[dirichlet_nodes(spec)]
        lo, hi = d.min(), d.max()
        out = (out - lo) / (hi - lo) if hi > lo else np.zeros_like(out)
    return out


# ---------------------------------------------------------------- comparison


@dataclass
class ComparisonStats:
    trials: int
    violations: int
    worst_gap: float  # min over trials and nodes of v_upper - v_lower
    tol: float
    per_trial: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "violations": self.violations,
            "worst_gap": self.worst_gap,
            "tol": self.tol,
            "pass": self.passed,
        }


def check_comparison(
    trials: int = 50,
    lams=(1.0, 0.1, 0.01),
    n: int = 2,
    K: float = 2.0,
    h: float = 1.0 / 16,
    seed: int = 0,
    tol: float = 1e-9,
) -> ComparisonStats:
    """Solve ordered data pairs ``phi_lo <= phi_hi`` on random coefficient paths.

    ``phi_hi = phi_lo + (psi - 1/2)^+`` with independent random ``psi``, so the
    pair touches on part of the Dirichlet boundary.  A violation is any node
    where ``v_hi < v_lo - tol``.  ``lams`` is cycled over the trials.
    """
    rng = np.random.default_rng(seed)
    lams = list(lams)
    violations = 0
    worst = math.inf
    rows = []
    for trial in range(trials):
        lam = lams[trial % len(lams)]
        cp = CoefficientPath.random(n, K, lam, rng)
        spec = _cylinder_spec(n, h, 1.0 / math.ceil(1.0 / (0.25 * h)))
        lo = random_boundary_data(spec, rng)
        hi = lo + np.maximum(random_boundary_data(spec, rng) - 0.5, 0.0)
        v_lo = solve_dirichlet(cp, lo, h=h, dt=spec.dt).field.values
        v_hi = solve_dirichlet(cp, hi, h=h, dt=spec.dt).field.values
        gap = float(np.min(v_hi - v_lo))
        bad = int(np.count_nonzero(v_hi < v_lo - tol))
        violations += bad
        worst = min(worst, gap)
        rows.append({"trial": trial, "lambda": lam, "min_gap": gap, "violations": bad})
    return ComparisonStats(trials, violations, worst, tol, rows)


# ---------------------------------------------------------------- oscillation decay


@dataclass
class OscillationStats:
    lam: float
    ratios: list
    chain: list  # (r, worst osc ratio B_{r/2} / B_r)
    excluded: int
    threshold: float
    info: dict = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return float(max(self.ratios)) if self.ratios else float("nan")

    @property
    def worst_chain(self) -> float:
        return float(max(r for _, r in self.chain)) if self.chain else float("nan")

    @property
    def passed(self) -> bool:
        return bool(self.ratios) and self.worst <= self.threshold and (not self.chain or self.worst_chain <= self.threshold)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "trials": len(self.ratios),
            "excluded": self.excluded,
            "worst_ratio": self.worst,
            "mean_ratio": float(np.mean(self.ratios)) if self.ratios else None,
            "chain": [{"r": r, "worst_ratio": q} for r, q in self.chain],
            "threshold": self.threshold,
            "pass": self.passed,
        }


def _ball_osc(f: ScalarField, ball: AnisotropicBall) -> float:
    x, t = f.spec.mesh()
    # closed spatial box of the ball on the grid (nodes on its faces included)
    off = np.abs(x - ball.center.x)
    inside = np.all(off <= ball.radius + 1e-12, axis=-1)
    if not ball.parabolic:
        inside &= x[..., -1] >= 0
    lo, hi = ball.time_interval()
    inside &= (t > lo + 1e-12) & (t <= hi + 1e-12)
    vals = f.values[inside]
    if vals.size == 0:
        raise ValueError("ball contains no grid nodes")
    return float(vals.max() - vals.min())


def check_oscillation_decay(
    lam: float,
    trials: int = 50,
    n: int = 2,
    K: float = 2.0,
    h: float = 1.0 / 16,
    c_cfg: float = 0.01,
    seed: int = 0,
    chain_radii=(0.5, 0.25),
    chain_h: float | None = None,
    coeffs: CoefficientPath | None = None,
) -> OscillationStats:
    """Random-data trials of ``osc_{C_1/2} v / osc_{C_1} v`` and a dyadic chain at the origin.

    The denominator is the oscillation over the closed grid, which equals the
    data oscillation by the discrete maximum principle.  Each trial draws a
    fresh admissible coefficient path unless ``coeffs`` is given.
    """
    rng = np.random.default_rng(seed)
    half = Region.cylinder(0.5, n)
    ratios = []
    excluded = 0
    chain_worst = {r: 0.0 for r in chain_radii}
    origin = SpaceTimePoint((0.0,) * (n - 1), 0.0, 0.0)
    for trial in range(trials):
        cp = coeffs or CoefficientPath.random(n, K, lam, rng)
        hh = h
        spec = _cylinder_spec(n, hh, 1.0 / math.ceil(1.0 / (0.25 * hh)))
        data = random_boundary_data(spec, rng)
        sol = solve_dirichlet(cp, data, h=hh, dt=spec.dt)
        f = sol.field
        full = float(f.values.max() - f.values.min())
        if full < 1e-12:
            excluded += 1
            continue
        ratios.append(oscillation(f, half) / full)
        if chain_radii and trial < max(1, trials // 5):
            ch = chain_h or 1.0 / 32
            spec2 = _cylinder_spec(n, ch, 1.0 / math.ceil(1.0 / (0.25 * ch)))
            data2 = random_boundary_data(spec2, np.random.default_rng(seed * 100003 + trial))
            f2 = solve_dirichlet(cp, data2, h=ch, dt=spec2.dt).field
            for r in chain_radii:
                big = _ball_osc(f2, AnisotropicBall(origin, r, lam))
                small = _ball_osc(f2, AnisotropicBall(origin, r / 2, lam))
                if big > 1e-12:
                    chain_worst[r] = max(chain_worst[r], small / big)
    return OscillationStats(
        lam, ratios, [(r, q) for r, q in chain_worst.items()], excluded, 1.0 - c_cfg, {"h": h, "K": K, "n": n}
    )


# ---------------------------------------------------------------- 1D problem


@dataclass
class ObliqueProblem1D:
    """``w_t = (A(t) w_xx + h(x,t))/lam`` in ``(0,1)``, ``w_t = gamma(t) w_x + f(t)`` at ``x = 0``."""

    A: Callable
    gamma: Callable
    lam: float
    K: float = 2.0
    h: Callable | None = None
    f: Callable | None = None
    t_range: tuple = (-1.0, 0.0)

    def __post_init__(self):
        if not (0 < self.lam <= 1):
            raise ValueError("lambda must lie in (0, 1]")
        ts = np.linspace(*self.t_range, 257)
        a = np.array([float(self.A(t)) for t in ts])
        g = np.array([float(self.gamma(t)) for t in ts])
        tol = 1e-12
        if a.min() < 1 / self.K - tol or a.max() > self.K + tol:
            raise ValueError("A(t) outside [1/K, K]")
        if g.min() < 1 / self.K - tol or g.max() > self.K + tol:
            raise ValueError("gamma(t) outside [1/K, K]")
        rate = np.abs(np.diff(a)).max() / (ts[1] - ts[0])
        if rate > self.K / self.lam * (1 + 1e-9):
            raise ValueError("|A'| exceeds K/lam")

    @classmethod
    def random(cls, K: float, lam: float, rng: np.random.Generator, **kw) -> "ObliqueProblem1D":
        t_range = kw.pop("t_range", (-1.0, 0.0))
        ts = np.linspace(*t_range, 9)
        dtk = ts[1] - ts[0]
        a = _walk(rng, 9, 1 / K, K, 0.5 * K / lam * dtk)[:, 0]
        g = _walk(rng, 9, 1 / K, K, 0.5 * K / lam * dtk)[:, 0]
        return cls(lambda t: np.interp(t, ts, a), lambda t: np.interp(t, ts, g), lam, K, t_range=t_range, **kw)


def solve_1d(
    prob: ObliqueProblem1D,
    data,
    h: float = 1.0 / 64,
    dt: float | None = None,
    c: float = 0.25,
    boundary_stencil: str = "second",
) -> ScalarField:
    """Implicit Euler with a banded direct solve per step.

    ``data`` is a callable ``data(x, t)`` (vectorised, ``x`` of shape ``(..., 1)``)
    or an array on the grid, read at ``t = t0`` and at ``x = 1``.  The boundary
    derivative is second-order one-sided by default (``"upwind"`` gives the
    first-order monotone variant).
    """
    t0, t1 = prob.t_range
    if dt is None:
        dt = c * h
        dt = (t1 - t0) / math.ceil((t1 - t0) / dt)
    spec = GridSpec(1, h, dt, ((0.0, 1.0),), (t0, t1))
    nx = spec.spatial_shape[0]
    if nx < 4:
        raise ValueError("grid too coarse for the boundary stencil")
    d = _data_array(data, spec)
    x = spec.axis(0)
    lam = prob.lam
    out = np.empty(spec.shape)
    out[:, 0] = d[:, 0]
    cur = d[:, 0].copy()
    # banded storage with 1 sub- and 2 super-diagonals
    for k in range(1, spec.nt):
        t = spec.times[k]
        A = float(prob.A(t))
        g = float(prob.gamma(t))
        ab = np.zeros((4, nx))
        rhs = np.empty(nx)
        # interior rows 1..nx-2 : lam/dt w - A w_xx = lam/dt w_old + h
        r = A / h ** 2
        ab[2, 1:nx - 1] = lam / dt + 2 * r  # main diagonal
        ab[1, 2:nx] = -r  # super diagonal (row i, col i+1)
        ab[3, 0:nx - 2] = -r  # sub diagonal (row i, col i-1)
        src = prob.h(x[1:-1], t) if prob.h is not None else 0.0
        rhs[1:-1] = lam / dt * cur[1:-1] + src
        # Dirichlet at x = 1
        ab[2, nx - 1] = 1.0
        ab[3, nx - 2] = 0.0
        rhs[-1] = d[-1, k]
        fb = float(prob.f(t)) if prob.f is not None else 0.0
        if boundary_stencil == "second":
            ab[2, 0] = 1 / dt + 1.5 * g / h
            ab[1, 1] = -2 * g / h
            ab[0, 2] = 0.5 * g / h
        elif boundary_stencil == "upwind":
            ab[2, 0] = 1 / dt + g / h
            ab[1, 1] = -g / h
            ab[0, 2] = 0.0
        else:
            raise ValueError(f"unknown boundary stencil {boundary_stencil!r}")
        rhs[0] = cur[0] / dt + fb
        cur = solve_banded((1, 2), ab, rhs)
        out[:, k] = cur
    return ScalarField(spec, out)


def observed_order(hs, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``."""
    hs = np.asarray(hs, float)
    e = np.asarray(errors, float)
    return float(np.polyfit(np.log(hs), np.log(e), 1)[0])


def boundary_remainder_exponent(w: ScalarField, x_lo: float, x_hi: float, k: int = -1, points: int = 12) -> dict:
    """Fit ``|w(x,t) - w(0,t) - x w_x(0,t)| ~ C x^p`` at time level ``k``.

    ``w_x(0,t)`` uses the second-order one-sided difference.  Samples are
    log-spaced grid nodes in ``[x_lo, x_hi]``.
    """
    h = w.spec.h
    col = w.values[:, k]
    wx0 = (-3 * col[0] + 4 * col[1] - col[2]) / (2 * h)
    targets = np.geomspace(x_lo, x_hi, points)
    idx = np.unique(np.clip(np.round(targets / h).astype(int), 1, len(col) - 1))
    xs = idx * h
    rem = np.abs(col[idx] - col[0] - xs * wx0)
    keep = rem > 0
    if keep.sum() < 2:
        return {"exponent": float("inf"), "x": xs.tolist(), "remainder": rem.tolist(), "C": 0.0}
    p, logc = np.polyfit(np.log(xs[keep]), np.log(rem[keep]), 1)
    return {"exponent": float(p), "C": float(np.exp(logc)), "x": xs.tolist(), "remainder": rem.tolist()}


# ---------------------------------------------------------------- C^{1,alpha} fitting


@dataclass
class C1AlphaFit:
    a: np.ndarray  # slope fitted on the smallest cylinder
    b0: float
    table: list  # (rho, sup error, a)
    exponent: float | None
    exact: bool
    a_n_rates: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "a": self.a.tolist(),
            "b0": self.b0,
            "table": [{"rho": r, "error": e, "a": list(map(float, a))} for r, e, a in self.table],
            "exponent": self.exponent,
            "exact": self.exact,
            "a_n_rates": self.a_n_rates,
        }


def _gamma_integral(gamma, times, n):
    """``Gamma(t) = int_0^t gamma`` at the grid times (trapezoid, exact for piecewise-linear)."""
    fine = np.asarray(times, float)
    g = np.array([np.atleast_1d(gamma(t)) for t in fine]).reshape(len(fine), -1)
    # integrate from 0 backwards to each time
    order = np.argsort(fine)
    ts = fine[order]
    gs = g[order]
    cum = np.concatenate([[np.zeros(g.shape[1])], np.cumsum(0.5 * (gs[1:] + gs[:-1]) * np.diff(ts)[:, None], axis=0)])
    zero = np.array([np.interp(0.0, ts, cum[:, j]) for j in range(g.shape[1])])
    out = np.empty_like(cum)
    out[order] = cum - zero
    return out


def _minimax_linear(Phi: np.ndarray, y: np.ndarray):
    """``min_c max |Phi c - y|`` by linear programming."""
    m, p = Phi.shape
    cost = np.zeros(p + 1)
    cost[-1] = 1.0
    ones = np.ones((m, 1))
    A_ub = np.vstack([np.hstack([Phi, -ones]), np.hstack([-Phi, -ones])])
    b_ub = np.concatenate([y, -y])
    bounds = [(None, None)] * p + [(0, None)]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"minimax fit failed: {res.message}")
    return res.x[:-1], float(res.x[-1])


def fit_c1alpha_at_boundary(
    v: ScalarField,
    gamma,
    rhos=None,
    f=None,
    tol: float = 1e-11,
) -> C1AlphaFit:
    """Best sup-norm profile ``a . x + b(t)``, ``b' = gamma(t) . a (+ f)``, on ``C_rho``.

    ``C_rho`` here is the closed cylinder ``|x'| <= rho``, ``0 <= x_n <= rho``,
    ``-rho < t <= 0``.  The profile is linear in ``(a, b(0))`` so each fit is an
    exact linear program.  Returns the error table and the log-log exponent
    of error against ``rho``.
    """
    s = v.spec
    n = s.n
    if float(np.max(np.abs(v.values))) < tol:
        raise ValueError("field is below solver tolerance; fit is degenerate")
    if rhos is None:
        rhos = []
        r = 0.5
        while r >= 4 * s.h - 1e-12:
            rhos.append(r)
            r /= 2
    x, t = s.mesh()
    G = _gamma_integral(gamma, s.times, n)  # (nt, n)
    F = np.zeros(s.nt) if f is None else _gamma_integral(lambda tt: np.atleast_1d(f(tt)), s.times, 1)[:, 0]
    table = []
    a = np.zeros(n)
    b0 = 0.0
    for rho in rhos:
        sel = np.all(np.abs(x[..., :-1]) <= rho + 1e-12, axis=-1) & (x[..., -1] <= rho + 1e-12)
        sel &= (t > -rho + 1e-12) & (t <= 1e-12)
        sel &= v.live
        kidx = np.nonzero(sel)[-1]
        xs = x[sel]
        Phi = np.hstack([xs + G[kidx], np.ones((len(xs), 1))])
        y = v.values[sel] - F[kidx]
        coef, err = _minimax_linear(Phi, y)
        a, b0 = coef[:-1], float(coef[-1])
        table.append((float(rho), err, a.copy()))
    errs = np.array([e for _, e, _ in table])
    exact = bool(np.all(errs <= tol * max(1.0, float(np.max(np.abs(v.values))))))
    exponent = None
    if not exact and np.sum(errs > 0) >= 2:
        pos = errs > 0
        exponent = float(np.polyfit(np.log([r for r, _, _ in table])[pos], np.log(errs[pos]), 1)[0])
    rates = []
    for (r1, _, a1), (r2, _, a2) in zip(table[:-1], table[1:]):
        rates.append({"rho": r2, "delta_a_n": float(abs(a1[-1] - a2[-1]))})
    return C1AlphaFit(a, b0, table, exponent, exact, rates)


def pucci_sandwich_gap(sol: ObliqueSolution, K: float, lam: float, stride: int = 1) -> dict:
    """Worst violations of ``M-_K(D^2 v) <= lam v_t <= M+_K(D^2 v)`` at interior nodes."""
    f = sol.field
    s = f.spec
    shape = s.spatial_shape
    lo_gap = hi_gap = -np.inf
    for idx in np.ndindex(*shape):
        if any(i < 2 or i > m - 3 for i, m in zip(idx, shape)):
            continue
        if sum(idx) % stride:
            continue
        for k in range(2, s.nt):
            d = derivatives_at(f, idx + (k,))
            lt = lam * d.dt
            lo_gap = max(lo_gap, float(pucci_minus(d.hess, K)) - lt)
            hi_gap = max(hi_gap, lt - float(pucci_plus(d.hess, K)))
    return {"lower_violation": lo_gap, "upper_violation": hi_gap}
