"""Space-time grid functions on uniform tensor grids.

A :class:`ScalarField` stores values with shape ``(N_1, ..., N_n, N_t)``:
spatial axes first (the last spatial axis is the normal direction ``x_n``),
time last.  Nodes can be masked (e.g. the ice region ``{u = 0}``); masked
nodes are never read by stencils.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .geometry import Region

__all__ = [
    "GridSpec",
    "ScalarField",
    "StencilDerivatives",
    "StencilError",
    "derivatives_at",
    "oscillation",
    "restrict",
    "dump_field",
    "load_field",
    "export_time_slice_csv",
]

_MAGIC = b"SFLD0001"


class StencilError(ValueError):
    """Derivative requested at a masked node or without enough neighbours."""


def _count(lo: float, hi: float, step: float) -> int:
    m = (hi - lo) / step
    k = int(round(m))
    if abs(m - k) > 1e-9 * max(1.0, abs(m)):
        raise ValueError(f"extent [{lo}, {hi}] is not a multiple of step {step}")
    return k + 1


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid: spatial step ``h`` on every axis, time step ``dt``."""

    n: int
    h: float
    dt: float
    spatial_extent: tuple[tuple[float, float], ...]
    time_extent: tuple[float, float]

    def __post_init__(self):
        ext = tuple((float(a), float(b)) for a, b in self.spatial_extent)
        object.__setattr__(self, "spatial_extent", ext)
        object.__setattr__(self, "time_extent", (float(self.time_extent[0]), float(self.time_extent[1])))
        if len(ext) != self.n:
            raise ValueError("spatial_extent must have one interval per axis")
        if self.h <= 0 or self.dt <= 0:
            raise ValueError("h and dt must be positive")
        # validates integrality of node counts
        self.shape  # noqa: B018

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return tuple(_count(a, b, self.h) for a, b in self.spatial_extent)

    @property
    def nt(self) -> int:
        return _count(*self.time_extent, self.dt)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.spatial_shape + (self.nt,)

    def axis(self, i: int) -> np.ndarray:
        a, _ = self.spatial_extent[i]
        return a + self.h * np.arange(self.spatial_shape[i])

    @property
    def times(self) -> np.ndarray:
        return self.time_extent[0] + self.dt * np.arange(self.nt)

    def axes(self) -> list[np.ndarray]:
        return [self.axis(i) for i in range(self.n)] + [self.times]

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates of every node: ``x`` with shape ``shape + (n,)`` and ``t``."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(grids[:-1], axis=-1), grids[-1]

    def node(self, idx) -> tuple[np.ndarray, float]:
        idx = tuple(idx)
        x = np.array([self.spatial_extent[i][0] + self.h * idx[i] for i in range(self.n)])
        return x, self.time_extent[0] + self.dt * idx[-1]

    def index_of(self, x, t) -> tuple[int, ...]:
        """Nearest node index for a physical point."""
        idx = [int(round((x[i] - self.spatial_extent[i][0]) / self.h)) for i in range(self.n)]
        idx.append(int(round((t - self.time_extent[0]) / self.dt)))
        return tuple(idx)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "h": self.h,
            "dt": self.dt,
            "spatial_extent": [list(e) for e in self.spatial_extent],
            "time_extent": list(self.time_extent),
        }


@dataclass
class ScalarField:
    spec: GridSpec
    values: np.ndarray
    mask: np.ndarray | None = None  # True marks nodes outside the field's support

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.spec.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.spec.shape}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise ValueError("mask shape mismatch")
        live = self.values if self.mask is None else self.values[~self.mask]
        if not np.all(np.isfinite(live)):
            raise ValueError("non-finite values at unmasked nodes")

    @classmethod
    def from_function(cls, spec: GridSpec, func, mask_func=None) -> "ScalarField":
        """Sample ``func(x, t)``; ``x`` has trailing axis of length n."""
        x, t = spec.mesh()
        vals = np.asarray(func(x, t), dtype=float) * np.ones(spec.shape)
        mask = None if mask_func is None else np.asarray(mask_func(x, t), dtype=bool)
        if mask is not None:
            vals = np.where(mask, 0.0, vals)
        return cls(spec, vals, mask)

    @property
    def live(self) -> np.ndarray:
        return np.ones(self.values.shape, bool) if self.mask is None else ~self.mask

    def copy(self) -> "ScalarField":
        return ScalarField(self.spec, self.values.copy(), None if self.mask is None else self.mask.copy())

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.spec, self.values + other.values, _merge_masks(self.mask, other.mask))

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.spec, self.values - other.values, _merge_masks(self.mask, other.mask))

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.spec, c * self.values, self.mask)

    __rmul__ = __mul__

    def interpolator(self, method: str = "linear") -> RegularGridInterpolator:
        axes = self.spec.axes()
        keep = [i for i, a in enumerate(axes) if len(a) > 1]
        vals = self.values.squeeze(axis=tuple(i for i in range(len(axes)) if len(axes[i]) == 1))
        interp = RegularGridInterpolator([axes[i] for i in keep], vals, method=method, bounds_error=True)
        if len(keep) == len(axes):
            return interp

        def reduced(pts):
            pts = np.asarray(pts, dtype=float)
            return interp(pts[..., keep])

        return reduced

    def sample(self, x, t, method: str = "linear") -> np.ndarray:
        """Interpolate at physical points ``x`` (trailing axis n) and times ``t``."""
        x = np.asarray(x, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
        pts = np.concatenate([x, t[..., None]], axis=-1)
        return self.interpolator(method)(pts)

    def time_slice(self, k: int) -> np.ndarray:
        return self.values[..., k]


def _merge_masks(a, b):
    if a is None:
        return None if b is None else b.copy()
    if b is None:
        return a.copy()
    return a | b


@dataclass
class StencilDerivatives:
    grad: np.ndarray
    hess: np.ndarray
    dt: float
    # per spatial axis: "central" (second order) or "one-sided" (first order)
    modes: tuple[str, ...] = field(default_factory=tuple)
    time_mode: str = "backward"

    @property
    def accuracy(self) -> str:
        return "second-order" if all(m == "central" for m in self.modes) else "first-order"


def _usable(f: ScalarField, idx) -> bool:
    if any(i < 0 or i >= s for i, s in zip(idx, f.values.shape)):
        return False
    return f.mask is None or not f.mask[idx]


def derivatives_at(f: ScalarField, idx, time_stencil: str = "backward") -> StencilDerivatives:
    """Finite-difference gradient, Hessian and time derivative at a node.

    Central differences where both neighbours are usable, first-order one
    sided otherwise.  The time derivative is a backward difference (forward
    at the first time level).
    """
    idx = tuple(int(i) for i in idx)
    if not _usable(f, idx):
        raise StencilError(f"node {idx} is masked or outside the grid")
    n = f.spec.n
    h = f.spec.h
    v = f.values

    def shifted(base, axis, k):
        j = list(base)
        j[axis] += k
        return tuple(j)

    grad = np.zeros(n)
    hess = np.zeros((n, n))
    modes = []
    dirs = []  # sign of the usable neighbour for one-sided stencils
    for a in range(n):
        p, m = shifted(idx, a, 1), shifted(idx, a, -1)
        if _usable(f, p) and _usable(f, m):
            grad[a] = (v[p] - v[m]) / (2 * h)
            hess[a, a] = (v[p] - 2 * v[idx] + v[m]) / h ** 2
            modes.append("central")
            dirs.append(0)
        else:
            s = 1 if _usable(f, p) else -1
            p1, p2 = shifted(idx, a, s), shifted(idx, a, 2 * s)
            if not (_usable(f, p1) and _usable(f, p2)):
                raise StencilError(f"insufficient neighbours along axis {a} at {idx}")
            grad[a] = s * (v[p1] - v[idx]) / h
            hess[a, a] = (v[p2] - 2 * v[p1] + v[idx]) / h ** 2
            modes.append("one-sided")
            dirs.append(s)
    for a in range(n):
        for b in range(a + 1, n):
            sa = [1, -1] if dirs[a] == 0 else [dirs[a]]
            sb = [1, -1] if dirs[b] == 0 else [dirs[b]]
            if dirs[a] == 0 and dirs[b] == 0:
                corners = [shifted(shifted(idx, a, i), b, j) for i in (1, -1) for j in (1, -1)]
                if all(_usable(f, c) for c in corners):
                    pp, pm, mp, mm = (v[c] for c in corners)
                    hess[a, b] = hess[b, a] = (pp - pm - mp + mm) / (4 * h * h)
                    continue
            # one-sided cross difference from the first usable quadrant
            done = False
            for i in sa:
                for j in sb:
                    c1, c2, c3 = shifted(idx, a, i), shifted(idx, b, j), shifted(shifted(idx, a, i), b, j)
                    if _usable(f, c1) and _usable(f, c2) and _usable(f, c3):
                        hess[a, b] = hess[b, a] = i * j * (v[c3] - v[c1] - v[c2] + v[idx]) / (h * h)
                        modes[a] = modes[b] = "one-sided"
                        done = True
                        break
                if done:
                    break
            if not done:
                raise StencilError(f"no usable cross stencil for axes {a},{b} at {idx}")
    k = idx[-1]
    back, fwd = shifted(idx, n, -1), shifted(idx, n, 1)
    mode = time_stencil
    if time_stencil == "backward" and not _usable(f, back):
        mode = "forward"
    if time_stencil == "central" and not (_usable(f, back) and _usable(f, fwd)):
        mode = "forward" if _usable(f, fwd) else "backward"
    dtf = f.spec.dt
    if mode == "backward":
        if not _usable(f, back):
            raise StencilError("no previous time level")
        dt_val = (v[idx] - v[back]) / dtf
    elif mode == "forward":
        if not _usable(f, fwd):
            raise StencilError(f"no usable time neighbour at level {k}")
        dt_val = (v[fwd] - v[idx]) / dtf
    else:
        dt_val = (v[fwd] - v[back]) / (2 * dtf)
    return StencilDerivatives(grad, hess, float(dt_val), tuple(modes), mode)


def region_mask(f: ScalarField, r: Region) -> np.ndarray:
    x, t = f.spec.mesh()
    return r.contains(x, t) & f.live


def oscillation(f: ScalarField, r: Region | None = None) -> float:
    """``max - min`` of the field over the unmasked grid nodes inside ``r``."""
    sel = f.live if r is None else region_mask(f, r)
    if not np.any(sel):
        raise ValueError("region does not intersect the grid")
    vals = f.values[sel]
    return float(vals.max() - vals.min())


def restrict(f: ScalarField, r: Region) -> ScalarField:
    """Copy of ``f`` on the smallest sub-lattice box holding ``r``'s nodes.

    Nodes of the box that are not in ``r`` come back masked.
    """
    sel = region_mask(f, r)
    if not np.any(sel):
        raise ValueError("region contains no lattice nodes")
    lo = [int(np.min(ix)) for ix in np.nonzero(sel)]
    hi = [int(np.max(ix)) for ix in np.nonzero(sel)]
    sl = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
    s = f.spec
    ext = tuple((s.spatial_extent[i][0] + s.h * lo[i], s.spatial_extent[i][0] + s.h * hi[i]) for i in range(s.n))
    text = (s.time_extent[0] + s.dt * lo[-1], s.time_extent[0] + s.dt * hi[-1])
    # degenerate (single-node) axes keep a nominal one-step extent of zero length
    sub = GridSpec(s.n, s.h, s.dt, ext, text)
    mask = ~sel[sl]
    return ScalarField(sub, np.where(mask, 0.0, f.values[sl]), mask if mask.any() else None)


# ---------------------------------------------------------------- I/O


def dump_field(f: ScalarField, path_or_buf) -> None:
    """Binary dump: little-endian header then row-major float64 payload.

    Header: magic, int64 n, int64 ndim (= n + 1), int64 dims[ndim],
    float64 h, float64 dt, float64 extents (lo, hi per spatial axis, then time).
    Masked nodes are stored as NaN.
    """
    s = f.spec
    dims = s.shape
    head = _MAGIC + struct.pack("<qq", s.n, len(dims)) + struct.pack(f"<{len(dims)}q", *dims)
    head += struct.pack("<dd", s.h, s.dt)
    flat_ext = [v for e in s.spatial_extent for v in e] + list(s.time_extent)
    head += struct.pack(f"<{len(flat_ext)}d", *flat_ext)
    payload = np.where(f.live, f.values, np.nan).astype("<f8", copy=False)
    data = head + np.ascontiguousarray(payload).tobytes(order="C")
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf, "wb") as fh:
            fh.write(data)
    else:
        path_or_buf.write(data)


def load_field(path_or_buf) -> ScalarField:
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf, "rb") as fh:
            raw = fh.read()
    else:
        raw = path_or_buf.read()
    if raw[:8] != _MAGIC:
        raise ValueError("not a field dump")
    off = 8
    n, ndim = struct.unpack_from("<qq", raw, off)
    off += 16
    dims = struct.unpack_from(f"<{ndim}q", raw, off)
    off += 8 * ndim
    h, dt = struct.unpack_from("<dd", raw, off)
    off += 16
    ext = struct.unpack_from(f"<{2 * n + 2}d", raw, off)
    off += 8 * (2 * n + 2)
    spec = GridSpec(n, h, dt, tuple((ext[2 * i], ext[2 * i + 1]) for i in range(n)), (ext[-2], ext[-1]))
    if spec.shape != tuple(dims):
        raise ValueError("header dims inconsistent with extents")
    vals = np.frombuffer(raw, dtype="<f8", offset=off).reshape(dims).astype(float)
    mask = np.isnan(vals)
    return ScalarField(spec, np.where(mask, 0.0, vals), mask if mask.any() else None)


def export_time_slice_csv(f: ScalarField, k: int, path_or_buf=None) -> str:
    """CSV rows ``x_1, ..., x_n, t, value`` of time level ``k`` (masked rows skipped)."""
    s = f.spec
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i + 1}" for i in range(s.n)] + ["t", "value"])
    t = s.times[k]
    grids = np.meshgrid(*[s.axis(i) for i in range(s.n)], indexing="ij")
    vals = f.values[..., k]
    live = f.live[..., k]
    for idx in np.ndindex(*s.spatial_shape):
        if live[idx]:
            w.writerow([f"{g[idx]:.12g}" for g in grids] + [f"{t:.12g}", f"{vals[idx]:.17g}"])
    text = buf.getvalue()
    if path_or_buf is not None:
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w") as fh:
                fh.write(text)
    return text
