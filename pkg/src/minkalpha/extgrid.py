"""Extended-real grid functions on uniform grids in one or two dimensions.

Values are finite floats or ``+inf`` (outside the effective domain).
Arrays are stored row-major with axis 0 slowest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

INF = np.inf
NONDIFFERENTIABLE = "nondifferentiable"
KINK_FACTOR = 10.0
CONVEXITY_RTOL = 1e-9


class GridError(ValueError):
    """Invalid grid or grid-function data."""


def ext_add(a, b):
    """Extended addition with ``inf + x = inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = a + b
    # inf + (-inf) never arises since -inf is not admitted
    return np.where(np.isinf(a) | np.isinf(b), INF, out)


def ext_min(a, b):
    """Extended minimum, ``min(inf, x) = x``."""
    return np.minimum(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid.

    Parameters
    ----------
    mins, maxs : tuple of float
        Axis bounds.
    counts : tuple of int
        Nodes per axis, each at least 2.
    """

    mins: tuple
    maxs: tuple
    counts: tuple

    def __post_init__(self):
        if not (len(self.mins) == len(self.maxs) == len(self.counts)):
            raise GridError("axis specifications have inconsistent lengths")
        if len(self.mins) not in (1, 2):
            raise GridError("only dimensions 1 and 2 are supported")
        for lo, hi, c in zip(self.mins, self.maxs, self.counts):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise GridError("axis bounds must be finite")
            if not lo < hi:
                raise GridError(f"axis needs min < max, got [{lo}, {hi}]")
            if int(c) != c or c < 2:
                raise GridError(f"axis needs at least 2 nodes, got {c}")
        object.__setattr__(self, "mins", tuple(float(v) for v in self.mins))
        object.__setattr__(self, "maxs", tuple(float(v) for v in self.maxs))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> tuple:
        return tuple((hi - lo) / (c - 1) for lo, hi, c in zip(self.mins, self.maxs, self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis(self, k: int) -> np.ndarray:
        """Node coordinates ``min + spacing*index`` along axis ``k``."""
        return self.mins[k] + self.spacing[k] * np.arange(self.counts[k], dtype=np.float64)

    def axes(self) -> list:
        return [self.axis(k) for k in range(self.dim)]

    def mesh(self) -> list:
        """Coordinate arrays with ``indexing='ij'``."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape ``(size, dim)``, row-major."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def diameter(self) -> float:
        return float(np.hypot.reduce(np.subtract(self.maxs, self.mins)))

    def refine(self) -> "Grid":
        """Grid with halved spacing on the same box."""
        return Grid(self.mins, self.maxs, tuple(2 * c - 1 for c in self.counts))

    def translate(self, shift) -> "Grid":
        shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), (self.dim,))
        return Grid(
            tuple(lo + s for lo, s in zip(self.mins, shift)),
            tuple(hi + s for hi, s in zip(self.maxs, shift)),
            self.counts,
        )

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "axes": [
                {"min": lo, "max": hi, "count": c}
                for lo, hi, c in zip(self.mins, self.maxs, self.counts)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        axes = d["axes"]
        grid = cls(
            tuple(a["min"] for a in axes),
            tuple(a["max"] for a in axes),
            tuple(a["count"] for a in axes),
        )
        if "dim" in d and int(d["dim"]) != grid.dim:
            raise GridError("dim does not match the number of axes")
        return grid


def make_grid(dim: int, axes: Sequence) -> Grid:
    """Build a uniform grid.

    Parameters
    ----------
    dim : int
        1 or 2.
    axes : sequence of (min, max, count)
        One triple per axis. A single triple is reused for every axis.

    Examples
    --------
    >>> make_grid(1, [(-5, 5, 11)]).spacing
    (1.0,)
    """
    axes = list(axes)
    if len(axes) == 3 and np.isscalar(axes[0]):
        axes = [tuple(axes)]
    if len(axes) == 1 and dim > 1:
        axes = axes * dim
    if len(axes) != dim:
        raise GridError(f"expected {dim} axis specs, got {len(axes)}")
    return Grid(tuple(a[0] for a in axes), tuple(a[1] for a in axes), tuple(a[2] for a in axes))


def _finite_runs_contiguous(mask: np.ndarray) -> bool:
    for ax in range(mask.ndim):
        m = np.moveaxis(mask, ax, -1).reshape(-1, mask.shape[ax]).astype(np.int8)
        # count 0 -> 1 transitions per line, at most one run allowed
        starts = (np.diff(m, axis=1) == 1).sum(axis=1) + m[:, 0]
        if np.any(starts > 1):
            return False
    return True


def _second_differences(v: np.ndarray):
    """Yield (left, mid, right) triples along axes and diagonals."""
    if v.ndim == 1:
        yield v[:-2], v[1:-1], v[2:]
        return
    yield v[:-2, :], v[1:-1, :], v[2:, :]
    yield v[:, :-2], v[:, 1:-1], v[:, 2:]
    yield v[:-2, :-2], v[1:-1, 1:-1], v[2:, 2:]
    yield v[:-2, 2:], v[1:-1, 1:-1], v[2:, :-2]


def convexity_violation(values: np.ndarray, rtol: float = CONVEXITY_RTOL) -> float:
    """Largest discrete midpoint-convexity violation (0 when convex).

    An infinite midpoint with two finite neighbours counts as an
    infinite violation.
    """
    worst = 0.0
    for left, mid, right in _second_differences(values):
        both = np.isfinite(left) & np.isfinite(right)
        if np.any(both & ~np.isfinite(mid)):
            return INF
        ok = both & np.isfinite(mid)
        if not ok.any():
            continue
        gap = 2.0 * mid[ok] - left[ok] - right[ok] - rtol * (1.0 + np.abs(mid[ok]))
        worst = max(worst, float(gap.max(initial=0.0)))
    return worst


def _boundary_ring(shape) -> np.ndarray:
    ring = np.zeros(shape, dtype=bool)
    if len(shape) == 1:
        ring[[0, -1]] = True
    else:
        ring[[0, -1], :] = True
        ring[:, [0, -1]] = True
    return ring


@dataclass(frozen=True)
class ExtendedGridFunction:
    """Grid samples of an extended-real function.

    Parameters
    ----------
    grid : Grid
    values : array_like
        Shape ``grid.shape``; ``inf`` outside the domain. NaN and ``-inf``
        are rejected.
    claimed_convex, claimed_coercive : bool
        Validated against the discrete criteria on construction.
    """

    grid: Grid
    values: np.ndarray
    claimed_convex: bool = False
    claimed_coercive: bool = False
    coercivity: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).reshape(self.grid.shape)
        if np.isnan(vals).any():
            raise GridError("grid function contains NaN")
        if np.any(vals == -INF):
            raise GridError("grid function contains -inf")
        mask = np.isfinite(vals)
        if not _finite_runs_contiguous(mask):
            raise GridError("finite domain is not contiguous along a grid line")
        if self.claimed_convex:
            viol = convexity_violation(vals)
            if viol > 0:
                raise GridError(f"claimed convex but midpoint convexity fails by {viol:g}")
        fit = None
        if self.claimed_coercive:
            fit = coercivity_fit(self.grid, vals)
            if fit is None:
                raise GridError("claimed coercive but boundary values do not grow")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "coercivity", fit)

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.values)

    def is_proper(self) -> bool:
        return bool(self.finite.any())

    def with_values(self, values, **flags) -> "ExtendedGridFunction":
        return ExtendedGridFunction(self.grid, values, **flags)

    def to_dict(self) -> dict:
        d = self.grid.to_dict()
        d["values"] = [None if not np.isfinite(v) else float(v) for v in self.values.ravel()]
        d["claimed_convex"] = bool(self.claimed_convex)
        d["claimed_coercive"] = bool(self.claimed_coercive)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExtendedGridFunction":
        grid = Grid.from_dict(d)
        raw = d["values"]
        if len(raw) != grid.size:
            raise GridError(f"expected {grid.size} values, got {len(raw)}")
        vals = np.array([INF if v is None else float(v) for v in raw], dtype=np.float64)
        return cls(
            grid,
            vals.reshape(grid.shape),
            claimed_convex=bool(d.get("claimed_convex", False)),
            claimed_coercive=bool(d.get("claimed_coercive", False)),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ExtendedGridFunction":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def coercivity_fit(grid: Grid, values: np.ndarray):
    """Fit ``v(x) >= a|x| + b`` on the boundary ring.

    ``b`` is the global minimum and ``a`` the largest slope compatible with
    the finite ring values. Returns ``(a, b)`` or None when ``a <= 0``. A
    ring that is entirely infinite (bounded domain) gives ``a = inf``.
    """
    fin = np.isfinite(values)
    if not fin.any():
        return None
    b = float(values[fin].min())
    ring = _boundary_ring(values.shape) & fin
    if not ring.any():
        return (INF, b)
    r = np.sqrt(sum(m**2 for m in grid.mesh()))[ring]
    gap = values[ring] - b
    with np.errstate(divide="ignore", invalid="ignore"):
        slopes = np.where(r > 0, gap / r, np.where(gap > 0, INF, 0.0))
    a = float(slopes.min())
    return (a, b) if a > 0 else None


def from_function(grid: Grid, fn: Callable, **flags) -> ExtendedGridFunction:
    """Sample ``fn`` on the grid; ``fn`` receives ij-indexed coordinate arrays."""
    vals = np.asarray(fn(*grid.mesh()), dtype=np.float64)
    vals = np.broadcast_to(vals, grid.shape)
    return ExtendedGridFunction(grid, vals, **flags)


@dataclass(frozen=True)
class QuadratureReport:
    """Quadrature value with a Richardson error estimate."""

    value: float
    error: float
    cell_count: int

    def __post_init__(self):
        if not self.error >= 0:
            raise ValueError("estimated error must be nonnegative")


def quadrature_weights(grid: Grid, rule: str = "trapezoid") -> np.ndarray:
    """Nodal weights of the tensor trapezoid or rectangle rule."""
    ws = []
    for k in range(grid.dim):
        h = grid.spacing[k]
        w = np.full(grid.counts[k], h)
        if rule == "trapezoid":
            w[[0, -1]] = 0.5 * h
        elif rule not in ("rectangle", "midpoint"):
            raise ValueError(f"unknown quadrature rule {rule!r}")
        ws.append(w)
    if grid.dim == 1:
        return ws[0]
    return np.outer(ws[0], ws[1])


def _integrand(g, weight) -> tuple:
    if isinstance(g, ExtendedGridFunction):
        grid, vals = g.grid, g.values
    else:
        grid, vals = g
        vals = np.asarray(vals, dtype=np.float64).reshape(grid.shape)
    if weight is None:
        data = vals.copy()
    else:
        w = np.broadcast_to(np.asarray(weight, dtype=np.float64), grid.shape)
        with np.errstate(invalid="ignore"):
            data = np.where(w == 0, 0.0, vals * w)
    if not np.all(np.isfinite(data)):
        raise GridError("non-finite integrand at a contributing node")
    return grid, data


def _trapezoid(grid: Grid, data: np.ndarray, step: int = 1) -> float:
    sl = tuple(slice(0, None, step) for _ in range(grid.dim))
    sub = data[sl]
    ws = []
    for k in range(grid.dim):
        h = grid.spacing[k] * step
        w = np.full(sub.shape[k], h)
        w[[0, -1]] = 0.5 * h
        ws.append(w)
    if grid.dim == 1:
        return float(ws[0] @ sub)
    return float(ws[0] @ sub @ ws[1])


def integrate(g, weight=None) -> QuadratureReport:
    """Tensor trapezoid integral with a one-level Richardson error estimate.

    Parameters
    ----------
    g : ExtendedGridFunction or (Grid, ndarray)
        Integrand samples.
    weight : array_like, optional
        Nodewise multiplier. Nodes where it vanishes contribute 0 even if
        the integrand is infinite there.

    Returns
    -------
    QuadratureReport
    """
    grid, data = _integrand(g, weight)
    value = _trapezoid(grid, data)
    # compare h and 2h on the largest even-indexed sub-box
    if all(c >= 3 for c in grid.counts):
        ends = tuple(slice(0, c - ((c - 1) % 2)) for c in grid.counts)
        box = data[ends]
        sub = Grid(
            grid.mins,
            tuple(lo + h * (n - 1) for lo, h, n in zip(grid.mins, grid.spacing, box.shape)),
            box.shape,
        )
        err = abs(_trapezoid(sub, box) - _trapezoid(sub, box, step=2)) / 3.0
    else:
        err = 0.0
    cells = int(np.prod([c - 1 for c in grid.counts]))
    return QuadratureReport(value, float(err), cells)


def _index(grid: Grid, node) -> tuple:
    idx = (node,) if np.isscalar(node) else tuple(node)
    if len(idx) != grid.dim:
        raise GridError("node index has wrong dimension")
    return tuple(int(i) for i in idx)


def finite_gradient(g: ExtendedGridFunction, node, kink_tol=None):
    """Central-difference gradient at an interior node of the finite domain.

    Parameters
    ----------
    g : ExtendedGridFunction
    node : int or tuple of int
        Grid index.
    kink_tol : float or sequence, optional
        Allowed forward/backward slope mismatch; ``10*h`` per axis by default.

    Returns
    -------
    ndarray or str
        The gradient, or ``NONDIFFERENTIABLE`` at a detected kink.
    """
    idx = _index(g.grid, node)
    h = g.grid.spacing
    tols = [KINK_FACTOR * hk for hk in h] if kink_tol is None else np.broadcast_to(kink_tol, (g.dim,))
    v = g.values
    if not np.isfinite(v[idx]):
        raise GridError("node outside the finite domain")
    grad = np.empty(g.dim)
    for k in range(g.dim):
        if idx[k] == 0 or idx[k] == g.grid.counts[k] - 1:
            raise GridError("node on the grid boundary")
        lo = list(idx)
        hi = list(idx)
        lo[k] -= 1
        hi[k] += 1
        vl, vh = v[tuple(lo)], v[tuple(hi)]
        if not (np.isfinite(vl) and np.isfinite(vh)):
            raise GridError("node on the boundary of the finite domain")
        fwd = (vh - v[idx]) / h[k]
        bwd = (v[idx] - vl) / h[k]
        if abs(fwd - bwd) > tols[k]:
            return NONDIFFERENTIABLE
        grad[k] = (vh - vl) / (2.0 * h[k])
    return grad


def gradient_field(g: ExtendedGridFunction, kink_tol=None):
    """Vectorized :func:`finite_gradient` over all nodes.

    Returns
    -------
    grad : ndarray, shape ``grid.shape + (dim,)``
        NaN where undefined.
    valid : ndarray of bool
        Interior differentiable nodes.
    kink : ndarray of bool
        Interior nodes flagged nondifferentiable.
    """
    v = g.values
    h = g.grid.spacing
    grad = np.full(v.shape + (g.dim,), np.nan)
    interior = np.isfinite(v)
    kink = np.zeros(v.shape, dtype=bool)
    comps = []
    for k in range(g.dim):
        vm = np.full(v.shape, INF)
        vp = np.full(v.shape, INF)
        src = [slice(None)] * g.dim
        dst = [slice(None)] * g.dim
        src[k], dst[k] = slice(0, -1), slice(1, None)
        vm[tuple(dst)] = v[tuple(src)]
        vp[tuple(src)] = v[tuple(dst)]
        ok = np.isfinite(vm) & np.isfinite(vp) & np.isfinite(v)
        interior &= ok
        with np.errstate(invalid="ignore"):
            fwd = np.where(ok, vp - v, 0.0) / h[k]
            bwd = np.where(ok, v - vm, 0.0) / h[k]
            comps.append(np.where(ok, vp - vm, 0.0) / (2.0 * h[k]))
        tol = KINK_FACTOR * h[k] if kink_tol is None else np.broadcast_to(kink_tol, (g.dim,))[k]
        kink |= ok & (np.abs(fwd - bwd) > tol)
    kink &= interior
    valid = interior & ~kink
    for k in range(g.dim):
        grad[..., k] = np.where(valid, comps[k], np.nan)
    return grad, valid, kink


def interpolate(g, points) -> np.ndarray:
    """Multilinear interpolation, linearly extrapolated outside the grid.

    Any corner with nonzero weight that is infinite makes the result
    infinite.

    Parameters
    ----------
    g : ExtendedGridFunction
    points : array_like, shape ``(m, dim)`` or ``(m,)`` in 1D
    """
    grid = g.grid
    pts = np.asarray(points, dtype=np.float64).reshape(-1, grid.dim)
    v = g.values
    lo_idx = []
    frac = []
    for k in range(grid.dim):
        t = (pts[:, k] - grid.mins[k]) / grid.spacing[k]
        i0 = np.clip(np.floor(t).astype(np.intp), 0, grid.counts[k] - 2)
        lo_idx.append(i0)
        frac.append(t - i0)
    out = np.zeros(pts.shape[0])
    inf_hit = np.zeros(pts.shape[0], dtype=bool)
    for corner in np.ndindex(*(2,) * grid.dim):
        w = np.ones(pts.shape[0])
        idx = []
        for k, c in enumerate(corner):
            w = w * (frac[k] if c else 1.0 - frac[k])
            idx.append(lo_idx[k] + c)
        val = v[tuple(idx)]
        bad = ~np.isfinite(val) & (w != 0)
        inf_hit |= bad
        out += np.where(np.isfinite(val), w * np.where(np.isfinite(val), val, 0.0), 0.0)
    out[inf_hit] = INF
    return out


def richardson(coarse: float, fine: float, order: int = 2) -> float:
    """Richardson extrapolation from spacings ``2h`` and ``h``."""
    r = 2.0**order
    return (r * fine - coarse) / (r - 1.0)
