"""Discrete Legendre-Fenchel transforms on uniform grids.

The 2D transform is factorized into 1D sweeps, each done in linear time
by a lower-hull walk (see :mod:`minkalpha._kernels`).
"""

from __future__ import annotations

import numpy as np

from minkalpha import _kernels
from minkalpha.extgrid import (
    INF,
    NONDIFFERENTIABLE,
    ExtendedGridFunction,
    Grid,
    GridError,
    finite_gradient,
    interpolate,
)

DUAL_PAD = 0.10


def slope_range(phi: ExtendedGridFunction) -> list:
    """Per-axis ``(min, max)`` of finite forward-difference slopes."""
    v = phi.values
    out = []
    for k in range(phi.dim):
        with np.errstate(invalid="ignore"):
            d = np.diff(v, axis=k) / phi.grid.spacing[k]
        d = d[np.isfinite(d)]
        if d.size == 0:
            out.append((0.0, 0.0))
        else:
            out.append((float(d.min()), float(d.max())))
    return out


def default_dual_grid(phi: ExtendedGridFunction, pad: float = DUAL_PAD, counts=None) -> Grid:
    """Slope range of the data padded by ``pad`` of its width on each side.

    A degenerate range (constant data) is widened to unit width.
    """
    mins, maxs = [], []
    for lo, hi in slope_range(phi):
        width = hi - lo
        if width <= 0:
            lo, hi, width = lo - 0.5, hi + 0.5, 1.0
        mins.append(lo - pad * width)
        maxs.append(hi + pad * width)
    counts = phi.grid.counts if counts is None else tuple(counts)
    return Grid(tuple(mins), tuple(maxs), counts)


def _sweep(x: np.ndarray, vals: np.ndarray, s: np.ndarray, axis: int):
    """Apply the 1D transform along ``axis`` of a 2D array."""
    moved = np.moveaxis(vals, axis, -1)
    lead = moved.shape[:-1]
    flat = moved.reshape(-1, moved.shape[-1])
    out = np.empty((flat.shape[0], s.shape[0]))
    arg = np.empty((flat.shape[0], s.shape[0]), dtype=np.intp)
    for r in range(flat.shape[0]):
        out[r], arg[r] = _kernels.llt_conjugate_1d(x, flat[r], s)
    out = np.moveaxis(out.reshape(lead + (s.shape[0],)), -1, axis)
    arg = np.moveaxis(arg.reshape(lead + (s.shape[0],)), -1, axis)
    return out, arg


def conjugate(
    phi: ExtendedGridFunction,
    dual_grid: Grid | None = None,
    order=(0, 1),
    return_argmax: bool = False,
):
    """Discrete convex conjugate ``phi*(y) = max_x <x, y> - phi(x)``.

    Parameters
    ----------
    phi : ExtendedGridFunction
        Proper grid function.
    dual_grid : Grid, optional
        Where to evaluate; defaults to :func:`default_dual_grid`.
    order : tuple
        Sweep order in 2D. The value does not depend on it.
    return_argmax : bool
        Also return the maximizing primal index per dual node, shape
        ``dual.shape + (dim,)``. Ties go to the smallest index along the
        last swept axis, then the first.

    Returns
    -------
    ExtendedGridFunction or (ExtendedGridFunction, ndarray)
    """
    if not phi.is_proper():
        raise GridError("conjugate of the constant +inf function")
    dual = default_dual_grid(phi) if dual_grid is None else dual_grid
    if dual.dim != phi.dim:
        raise GridError("dual grid dimension differs from primal")
    xs = phi.grid.axes()
    ss = dual.axes()
    if phi.dim == 1:
        vals, arg = _kernels.llt_conjugate_1d(xs[0], phi.values, ss[0])
        argmax = arg[:, None]
    else:
        a0, a1 = order
        if sorted(order) != [0, 1]:
            raise ValueError("order must be a permutation of (0, 1)")
        g, arg_first = _sweep(xs[a0], phi.values, ss[a0], a0)
        # rows with no finite value come back as -inf; negate to +inf
        vals, arg_second = _sweep(xs[a1], -g, ss[a1], a1)
        argmax = np.empty(dual.shape + (2,), dtype=np.intp)
        argmax[..., a1] = arg_second
        if a1 == 1:
            argmax[..., a0] = np.take_along_axis(arg_first, arg_second, axis=1)
        else:
            argmax[..., a0] = np.take_along_axis(arg_first, arg_second, axis=0)
    out = ExtendedGridFunction(dual, vals, claimed_convex=True)
    if return_argmax:
        return out, argmax
    return out


def biconjugate(
    phi: ExtendedGridFunction,
    primal_grid: Grid | None = None,
    dual_grid: Grid | None = None,
    keep_domain: bool = True,
) -> ExtendedGridFunction:
    """Closed convex envelope of grid data, ``phi**``.

    Parameters
    ----------
    phi : ExtendedGridFunction
    primal_grid : Grid, optional
        Output grid, ``phi.grid`` by default.
    dual_grid : Grid, optional
        Intermediate dual grid. Exactness at a node needs a subgradient
        there to be a dual node; the default slope range covers all chord
        slopes.
    keep_domain : bool
        Keep ``+inf`` where ``phi`` is infinite (when output and input
        grids coincide). Without it the envelope is extended affinely.
    """
    grid = phi.grid if primal_grid is None else primal_grid
    star = conjugate(phi, dual_grid)
    vals = conjugate(star, grid).values.copy()
    if keep_domain and grid == phi.grid:
        vals[~phi.finite] = INF
    return ExtendedGridFunction(grid, vals, claimed_convex=True)


def conjugate_at(phi: ExtendedGridFunction, points) -> np.ndarray:
    """Exact discrete conjugate at arbitrary dual points.

    In 2D the inner maximization over axis 1 is done by one linear sweep
    per primal row at the sorted second coordinates, then the outer max
    over axis 0 is explicit.

    Parameters
    ----------
    phi : ExtendedGridFunction
    points : array_like, shape ``(m, dim)``
    """
    if not phi.is_proper():
        raise GridError("conjugate of the constant +inf function")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, phi.dim)
    xs = phi.grid.axes()
    if phi.dim == 1:
        order = np.argsort(pts[:, 0], kind="stable")
        vals, _ = _kernels.llt_conjugate_1d(xs[0], phi.values, pts[order, 0])
        out = np.empty(pts.shape[0])
        out[order] = vals
        return out
    s1, inv = np.unique(pts[:, 1], return_inverse=True)
    inner = np.empty((phi.grid.counts[0], s1.shape[0]))
    for i in range(phi.grid.counts[0]):
        inner[i], _ = _kernels.llt_conjugate_1d(xs[1], phi.values[i], s1)
    out = np.full(pts.shape[0], -np.inf)
    cols = inner[:, inv.ravel()]
    for i in range(phi.grid.counts[0]):
        out = np.maximum(out, xs[0][i] * pts[:, 0] + cols[i])
    return out


def fenchel_young_residual(phi: ExtendedGridFunction, phi_star: ExtendedGridFunction, node) -> float:
    """``|phi*(grad phi(x)) + phi(x) - <x, grad phi(x)>|`` at a grid node.

    ``phi*`` is multilinearly interpolated from its grid.
    """
    grad = finite_gradient(phi, node)
    if isinstance(grad, str) and grad == NONDIFFERENTIABLE:
        raise GridError("node is a nondifferentiability point")
    idx = (node,) if np.isscalar(node) else tuple(node)
    x = np.array([phi.grid.axis(k)[i] for k, i in enumerate(idx)])
    fs = interpolate(phi_star, grad[None, :])[0]
    return float(abs(fs + phi.values[idx] - x @ grad))


def subgradient_contains(phi: ExtendedGridFunction, x0, y, tol: float = 1e-9) -> bool:
    """Whether ``y`` is a subgradient of ``phi`` at node ``x0``.

    Tests ``phi(x) >= phi(x0) + <y, x - x0> - tol*(1 + |phi(x)|)`` at every
    finite node.
    """
    idx = (x0,) if np.isscalar(x0) else tuple(x0)
    v0 = phi.values[idx]
    if not np.isfinite(v0):
        raise GridError("phi(x0) is infinite")
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    nodes = phi.grid.nodes()
    xv = nodes[np.ravel_multi_index(idx, phi.grid.shape)]
    v = phi.values.ravel()
    fin = np.isfinite(v)
    rhs = v0 + (nodes[fin] - xv) @ y
    return bool(np.all(v[fin] >= rhs - tol * (1.0 + np.abs(v[fin]))))
