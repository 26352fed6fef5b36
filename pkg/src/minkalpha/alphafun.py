"""Calculus of alpha-concave functions ``f = (1 - alpha*phi)**(1/alpha)``.

Covers the generator, alpha-combinations, total mass, first variations
(difference quotients and the closed-form variational formula) and the
Euclidean and spherical surface-area measures.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from minkalpha.extgrid import (
    INF,
    ExtendedGridFunction,
    Grid,
    GridError,
    QuadratureReport,
    coercivity_fit,
    gradient_field,
    integrate,
)
from minkalpha.legendre import conjugate, conjugate_at, default_dual_grid

BASE_FLOOR = 1e-12
KINK_FACTOR = 10.0
MAX_KINK_FRACTION = 0.25


class AlphaError(ValueError):
    """Invalid alpha or base for the alpha-concave class."""


class IntegrabilityError(ValueError):
    """Moment parameters outside the range where the integral is finite."""


class CertificationError(ValueError):
    """No (beta1, beta2) pair certifies the weak comparison condition."""


def psi_alpha(t, alpha: float):
    """Generator ``(1 - alpha*t)**(1/alpha)`` with ``psi(inf) = 0``.

    Parameters
    ----------
    t : float or array_like
        Must exceed ``1/alpha`` (or be ``inf``).
    alpha : float
        Negative exponent parameter.
    """
    t = np.asarray(t, dtype=np.float64)
    if alpha >= 0:
        raise AlphaError("alpha must be negative")
    fin = np.isfinite(t)
    if np.any(t[fin] <= 1.0 / alpha):
        raise AlphaError("psi_alpha needs t > 1/alpha")
    out = np.zeros_like(t)
    out[fin] = (1.0 - alpha * t[fin]) ** (1.0 / alpha)
    return out if out.ndim else float(out)


def _power_of_base(base: np.ndarray, alpha: float, expo: float) -> np.ndarray:
    """``(1 - alpha*base)**expo`` with 0 where the base is infinite (expo < 0)."""
    out = np.zeros_like(base)
    fin = np.isfinite(base)
    out[fin] = (1.0 - alpha * base[fin]) ** expo
    return out


@dataclass(frozen=True)
class AlphaConcaveFunction:
    """An alpha-concave function given by alpha and a convex grid base.

    Parameters
    ----------
    alpha : float
        In ``(-1/n, 0)``.
    base : ExtendedGridFunction
        Convex base. Must stay above ``1/alpha``.
    class_plus : bool
        Also require ``base >= 0`` (the nonnegative, coercive class).
    check_coercive : bool
        Require the discrete coercivity fit to succeed.
    """

    alpha: float
    base: ExtendedGridFunction
    class_plus: bool = False
    check_coercive: bool = True

    def __post_init__(self):
        n = self.base.dim
        if not (-1.0 / n < self.alpha < 0.0):
            raise AlphaError(f"alpha must lie in (-1/{n}, 0), got {self.alpha}")
        if not self.base.is_proper():
            raise AlphaError("base is identically +inf")
        v = self.base.values[self.base.finite]
        if np.any(v < 1.0 / self.alpha + BASE_FLOOR):
            raise AlphaError("base must exceed 1/alpha")
        if self.class_plus and np.any(v < -BASE_FLOOR):
            raise AlphaError("class C+ needs a nonnegative base")
        if self.check_coercive and coercivity_fit(self.base.grid, self.base.values) is None:
            raise AlphaError("base is not coercive on its grid")

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def grid(self) -> Grid:
        return self.base.grid

    @property
    def values(self) -> np.ndarray:
        """Samples of ``f``; zero outside the support."""
        return _power_of_base(self.base.values, self.alpha, 1.0 / self.alpha)

    def power(self, p: float) -> np.ndarray:
        """Samples of ``f**p`` for ``p > 0``."""
        return _power_of_base(self.base.values, self.alpha, p / self.alpha)

    @property
    def support(self) -> np.ndarray:
        return self.base.finite

    def bounded_support(self) -> bool:
        """Whether the finite domain stays off the grid boundary."""
        return _domain_bounded(self.base)


def _domain_bounded(phi: ExtendedGridFunction) -> bool:
    fin = phi.finite
    if phi.dim == 1:
        return not (fin[0] or fin[-1])
    return not (fin[0, :].any() or fin[-1, :].any() or fin[:, 0].any() or fin[:, -1].any())


def make_alpha_function(grid: Grid, fn, alpha: float, **kw) -> AlphaConcaveFunction:
    """Sample a convex base ``fn`` on ``grid`` and wrap it."""
    vals = np.broadcast_to(np.asarray(fn(*grid.mesh()), dtype=np.float64), grid.shape)
    base = ExtendedGridFunction(grid, vals, claimed_convex=True)
    return AlphaConcaveFunction(alpha, base, **kw)


# ---------------------------------------------------------------------------
# discrete measures


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud in R^n, or on the unit sphere when ``spherical``.

    Parameters
    ----------
    points : array_like, shape (k, n)
    weights : array_like, shape (k,)
    spherical : bool
    meta : dict
        Free-form diagnostics (kink mass, truncation flags).
    """

    points: np.ndarray
    weights: np.ndarray
    spherical: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        p = np.array(self.points, dtype=np.float64)
        if p.ndim == 1:
            p = p[:, None]
        if p.shape[0] != w.shape[0]:
            raise ValueError("points and weights have different lengths")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if not np.all(np.isfinite(p)):
            raise ValueError("points must be finite")
        if self.spherical and p.size and np.any(np.abs(np.linalg.norm(p, axis=1) - 1.0) > 1e-12):
            raise ValueError("spherical points must have unit norm")
        p.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return self.weights.shape[0]

    def normalized(self) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights / self.total, self.spherical, dict(self.meta))

    def barycenter(self) -> np.ndarray:
        return self.weights @ self.points / self.total

    def second_moment(self, centered: bool = True) -> np.ndarray:
        p = self.points - (self.barycenter() if centered else 0.0)
        return (p * self.weights[:, None]).T @ p / self.total

    def diameter(self) -> float:
        if len(self) < 2:
            return 0.0
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def first_moment(self) -> float:
        return float(self.weights @ np.linalg.norm(self.points, axis=1))

    def merged(self, decimals: int = 9) -> "DiscreteMeasure":
        """Combine atoms whose coordinates agree after rounding."""
        if not len(self):
            return self
        key = np.round(self.points, decimals)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        w = np.bincount(inv, weights=self.weights, minlength=uniq.shape[0])
        # mass-weighted mean position keeps the first moment
        pts = np.zeros_like(uniq)
        for k in range(self.dim):
            pts[:, k] = np.bincount(inv, weights=self.weights * self.points[:, k], minlength=uniq.shape[0])
        nz = w > 0
        pts[nz] /= w[nz, None]
        pts[~nz] = uniq[~nz]
        if self.spherical:
            pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        return DiscreteMeasure(pts, w, self.spherical, dict(self.meta))

    def save_csv(self, path) -> None:
        path = Path(path)
        header = [f"x{k + 1}" for k in range(self.dim)] + ["weight"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for p, w in zip(self.points, self.weights):
                wr.writerow([repr(float(c)) for c in p] + [repr(float(w))])
        if self.spherical:
            with open(str(path) + ".json", "w") as fh:
                json.dump({"unit": True}, fh)
                fh.write("\n")

    @classmethod
    def load_csv(cls, path) -> "DiscreteMeasure":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][-1].strip() != "weight":
            raise ValueError(f"{path}: expected a header ending in 'weight'")
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=np.float64)
        dim = len(rows[0]) - 1
        data = data.reshape(-1, dim + 1)
        side = Path(str(path) + ".json")
        spherical = False
        if side.exists():
            spherical = bool(json.loads(side.read_text()).get("unit", False))
        return cls(data[:, :dim], data[:, dim], spherical)


def bin_measure(mu: DiscreteMeasure, grid: Grid) -> DiscreteMeasure:
    """Cloud-in-cell binning onto grid nodes.

    Mass and first moment are preserved for atoms inside the grid box.
    """
    pts = mu.points
    acc = np.zeros(grid.shape)
    lo_idx = []
    frac = []
    for k in range(grid.dim):
        t = (pts[:, k] - grid.mins[k]) / grid.spacing[k]
        t = np.clip(t, 0.0, grid.counts[k] - 1.0)
        i0 = np.minimum(np.floor(t).astype(np.intp), grid.counts[k] - 2)
        lo_idx.append(i0)
        frac.append(t - i0)
    for corner in np.ndindex(*(2,) * grid.dim):
        w = mu.weights.copy()
        idx = []
        for k, c in enumerate(corner):
            w = w * (frac[k] if c else 1.0 - frac[k])
            idx.append(lo_idx[k] + c)
        # fixed reduction order keeps the result bit-stable
        np.add.at(acc, tuple(idx), w)
    nodes = grid.nodes()
    flat = acc.ravel()
    keep = flat > 0
    return DiscreteMeasure(nodes[keep], flat[keep], meta=dict(mu.meta, binned=True))


# ---------------------------------------------------------------------------
# total mass and moments


def domain_fraction(finite: np.ndarray) -> np.ndarray:
    """Share of each node's adjacent grid cells that lie inside the finite domain.

    Multiplying the trapezoid weights by this restricts the rule to cells
    with every corner finite. Integrands that jump to zero at the domain
    edge then carry no half-cell bias, and a domain without a full cell
    integrates to zero.
    """
    fin = np.asarray(finite, dtype=bool)
    cells = fin[:-1] & fin[1:] if fin.ndim == 1 else fin[:-1, :-1] & fin[1:, :-1] & fin[:-1, 1:] & fin[1:, 1:]
    full = np.zeros(fin.shape)
    adj = np.zeros(fin.shape)
    c = cells.astype(np.float64)
    for corner in np.ndindex(*(2,) * fin.ndim):
        sl = tuple(slice(k, k + n) for k, n in zip(corner, cells.shape))
        full[sl] += c
        adj[sl] += 1.0
    return full / adj


def domain_integral(f: AlphaConcaveFunction, values=None) -> QuadratureReport:
    """Trapezoid integral over the cells of the finite domain of ``f``.

    ``values`` defaults to the samples of ``f``.
    """
    vals = f.values if values is None else values
    return integrate((f.grid, vals), weight=domain_fraction(f.support))


def total_mass(f: AlphaConcaveFunction) -> float:
    """``J(f)``, the trapezoid integral of ``f`` over its finite domain."""
    return domain_integral(f).value


def weighted_moment(f: AlphaConcaveFunction, p: float = 0.0, l: int = 0) -> float:
    """``int |x|**p (1 - alpha*phi)**(1/alpha - l) dx``.

    Raises
    ------
    IntegrabilityError
        Unless ``-1/(n - l + p) < alpha``, read as ``-inf < alpha`` when
        ``n - l + p = 0``.
    """
    n = f.dim
    if l not in (0, 1, 2) or p < 0:
        raise IntegrabilityError("need p >= 0 and l in {0, 1, 2}")
    denom = n - l + p
    if denom < 0 or (denom > 0 and not (-1.0 / denom < f.alpha)):
        raise IntegrabilityError(
            f"moment p={p}, l={l} diverges for alpha={f.alpha} in dimension {n}"
        )
    vals = _power_of_base(f.base.values, f.alpha, 1.0 / f.alpha - l)
    if p:
        r = np.sqrt(sum(m**2 for m in f.grid.mesh()))
        vals = vals * r**p
    return domain_integral(f, vals).value


def self_variation_formula(f: AlphaConcaveFunction) -> float:
    """``n J(f) - int phi f**(1-alpha) dx`` (integrand 0 off the support)."""
    phi = f.base.values
    w = np.where(np.isfinite(phi), phi, 0.0) * f.power(1.0 - f.alpha)
    return f.dim * total_mass(f) - domain_integral(f, w).value


# ---------------------------------------------------------------------------
# alpha-combinations


def _combined_dual_grid(f, g, factor: int = 1) -> Grid:
    df = default_dual_grid(f.base)
    dg = default_dual_grid(g.base)
    mins = tuple(min(a, b) for a, b in zip(df.mins, dg.mins))
    maxs = tuple(max(a, b) for a, b in zip(df.maxs, dg.maxs))
    counts = tuple(factor * (max(a, b) - 1) + 1 for a, b in zip(f.grid.counts, g.grid.counts))
    return Grid(mins, maxs, counts)


def _sum_domain_mask(f, g, t, grid: Grid) -> np.ndarray | None:
    """Nodes of ``grid`` inside ``K_f + t K_g``; None when unbounded."""
    if not (f.bounded_support() and g.bounded_support()):
        return None
    pf = f.grid.nodes()[f.support.ravel()]
    pg = g.grid.nodes()[g.support.ravel()]
    nodes = grid.nodes()
    scale = max(1.0, float(np.abs(nodes).max()))
    tol = 1e-9 * scale
    if grid.dim == 1:
        lo = pf.min() + t * pg.min()
        hi = pf.max() + t * pg.max()
        inside = (nodes[:, 0] >= lo - tol) & (nodes[:, 0] <= hi + tol)
        return inside.reshape(grid.shape)
    vf = pf[ConvexHull(pf).vertices] if len(pf) >= 3 else pf
    vg = pg[ConvexHull(pg).vertices] if len(pg) >= 3 else pg
    pts = (vf[:, None, :] + t * vg[None, :, :]).reshape(-1, 2)
    hull = ConvexHull(pts)
    lhs = nodes @ hull.equations[:, :2].T + hull.equations[:, 2]
    return np.all(lhs <= tol, axis=1).reshape(grid.shape)


def combine_base(f, g, t: float, grid: Grid | None = None, dual_grid: Grid | None = None):
    """Base ``(phi* + t psi*)*`` sampled on ``grid`` (no shortcut at t = 0)."""
    if f.alpha != g.alpha:
        raise AlphaError("alpha-combination needs a common alpha")
    if f.dim != g.dim:
        raise AlphaError("dimension mismatch")
    if t < 0:
        raise ValueError("t must be nonnegative")
    grid = f.grid if grid is None else grid
    dual = _combined_dual_grid(f, g) if dual_grid is None else dual_grid
    fs = conjugate(f.base, dual).values
    gs = conjugate(g.base, dual).values
    h = ExtendedGridFunction(dual, fs + t * gs)
    vals = conjugate(h, grid).values.copy()
    mask = _sum_domain_mask(f, g, t, grid)
    if mask is not None:
        vals[~mask] = INF
    return ExtendedGridFunction(grid, vals, claimed_convex=True)


def alpha_combination(f, g, t: float, grid: Grid | None = None, dual_grid: Grid | None = None):
    """``f (+)_alpha t (.)_alpha g``, base ``(phi* + t psi*)*``.

    ``t = 0`` returns ``f`` itself.
    """
    if f.alpha != g.alpha:
        raise AlphaError("alpha-combination needs a common alpha")
    if t == 0:
        return f
    base = combine_base(f, g, t, grid, dual_grid)
    return AlphaConcaveFunction(f.alpha, base, check_coercive=False)


def alpha_scalar(beta: float, f, grid: Grid | None = None, dual_grid: Grid | None = None):
    """``beta (.)_alpha f`` with base ``(beta phi*)* = beta phi(x / beta)``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    grid = f.grid if grid is None else grid
    dual = default_dual_grid(f.base) if dual_grid is None else dual_grid
    fs = conjugate(f.base, dual).values
    vals = conjugate(ExtendedGridFunction(dual, beta * fs), grid).values.copy()
    if f.bounded_support():
        pts = f.grid.nodes()[f.support.ravel()] * beta
        if grid.dim == 1:
            nodes = grid.axis(0)
            mask = (nodes >= pts.min() - 1e-9) & (nodes <= pts.max() + 1e-9)
        else:
            hull = ConvexHull(pts)
            lhs = grid.nodes() @ hull.equations[:, :2].T + hull.equations[:, 2]
            mask = np.all(lhs <= 1e-9, axis=1).reshape(grid.shape)
        vals[~mask] = INF
    base = ExtendedGridFunction(grid, vals, claimed_convex=True)
    return AlphaConcaveFunction(f.alpha, base, check_coercive=False)


@dataclass(frozen=True)
class VariationResult:
    """Extrapolated first variation with the raw difference quotients."""

    value: float
    quotients: tuple
    ts: tuple


DEFAULT_TS = (0.1, 0.05, 0.025)


def first_variation_numeric(f, g, ts=DEFAULT_TS, grid=None, dual_grid=None) -> VariationResult:
    """Difference quotients ``(J(f + t g) - J(f)) / t`` and their t -> 0 limit.

    The reference value is recomputed through the same discrete pipeline at
    ``t = 0`` so the discretization bias cancels. The last two quotients
    are Richardson-extrapolated (first order in t).
    """
    ts = tuple(float(t) for t in ts)
    if not ts or any(t <= 0 for t in ts) or any(b >= a for a, b in zip(ts, ts[1:])):
        raise ValueError("ts must be positive and strictly decreasing")
    grid = f.grid if grid is None else grid
    dual = _combined_dual_grid(f, g) if dual_grid is None else dual_grid

    def mass(t):
        base = combine_base(f, g, t, grid, dual)
        vals = _power_of_base(base.values, f.alpha, 1.0 / f.alpha)
        return integrate((grid, vals), weight=domain_fraction(base.finite)).value

    j0 = mass(0.0)
    qs = tuple((mass(t) - j0) / t for t in ts)
    if len(qs) >= 2:
        r = ts[-2] / ts[-1]
        value = (r * qs[-1] - qs[-2]) / (r - 1.0)
    else:
        value = qs[-1]
    return VariationResult(float(value), qs, ts)


# ---------------------------------------------------------------------------
# surface-area measures


def _sam_cells_1d(f: AlphaConcaveFunction):
    x = f.grid.axis(0)
    h = f.grid.spacing[0]
    phi = f.base.values
    fv = f.values
    a = f.alpha
    ok = np.isfinite(phi[:-1]) & np.isfinite(phi[1:])
    idx = np.flatnonzero(ok)
    with np.errstate(invalid="ignore"):
        s = (phi[1:] - phi[:-1]) / h

    def seg_mass(f_lo, f_hi, phi_lo, phi_hi, width):
        # exact integral of f**(1-alpha) along an affine piece
        dphi = phi_hi - phi_lo
        small = np.abs(dphi) <= 1e-12 * (1.0 + np.abs(phi_lo))
        with np.errstate(divide="ignore", invalid="ignore"):
            m = width * (f_lo - f_hi) / dphi
        mid = (1.0 - a * 0.5 * (phi_lo + phi_hi)) ** (1.0 / a - 1.0)
        return np.where(small, width * mid, m)

    points, masses, kinks = [], [], []
    kink_mass = 0.0
    for i in idx:
        sl = s[i - 1] if i >= 1 and ok[i - 1] else None
        sr = s[i + 1] if i + 1 < len(ok) and ok[i + 1] else None
        if sl is not None and sr is not None and sr - sl > KINK_FACTOR * h:
            # model the cell by the larger of the neighbouring secant lines
            den = sl - sr
            z = (phi[i + 1] - phi[i] - sr * x[i + 1] + sl * x[i]) / den
            z = min(max(z, x[i]), x[i + 1])
            pz = phi[i] + sl * (z - x[i])
            fz = (1.0 - a * pz) ** (1.0 / a)
            m_l = float(seg_mass(fv[i], fz, phi[i], pz, z - x[i]))
            m_r = float(seg_mass(fz, fv[i + 1], pz, phi[i + 1], x[i + 1] - z))
            if z > x[i]:
                points.append(sl)
                masses.append(m_l)
            if z < x[i + 1]:
                points.append(sr)
                masses.append(m_r)
            kink_mass += m_l + m_r
            kinks.append(i)
        else:
            points.append(s[i])
            masses.append(float(seg_mass(fv[i], fv[i + 1], phi[i], phi[i + 1], h)))
    return np.array(points).reshape(-1, 1), np.array(masses), kink_mass, len(kinks)


def _sam_cells_2d(f: AlphaConcaveFunction):
    h0, h1 = f.grid.spacing
    phi = f.base.values
    fv = f.values
    fp = f.power(1.0 - f.alpha)
    ok = (
        np.isfinite(phi[:-1, :-1])
        & np.isfinite(phi[1:, :-1])
        & np.isfinite(phi[:-1, 1:])
        & np.isfinite(phi[1:, 1:])
    )
    avg = 0.25 * (fp[:-1, :-1] + fp[1:, :-1] + fp[:-1, 1:] + fp[1:, 1:])
    df0 = 0.5 * ((fv[1:, :-1] - fv[:-1, :-1]) + (fv[1:, 1:] - fv[:-1, 1:])) / h0
    df1 = 0.5 * ((fv[:-1, 1:] - fv[:-1, :-1]) + (fv[1:, 1:] - fv[1:, :-1])) / h1
    # grad phi = -grad f / f**(1-alpha); flux form keeps the barycenter exact
    m = h0 * h1 * avg[ok]
    y0 = -df0[ok] / avg[ok]
    y1 = -df1[ok] / avg[ok]
    # cells straddling a kink: slope jumps between neighbouring cells
    jump = np.zeros(ok.shape, dtype=bool)
    with np.errstate(invalid="ignore"):
        g0 = np.diff(phi, axis=0) / h0
        g1 = np.diff(phi, axis=1) / h1
        j0 = np.abs(np.diff(g0, axis=0)) > KINK_FACTOR * h0
        j1 = np.abs(np.diff(g1, axis=1)) > KINK_FACTOR * h1
    jump[1:, :] |= np.nan_to_num(j0[:, :-1], nan=0).astype(bool)
    jump[:, 1:] |= np.nan_to_num(j1[:-1, :], nan=0).astype(bool)
    kink_mass = float((h0 * h1 * avg)[ok & jump].sum())
    return np.stack([y0, y1], axis=1), m, kink_mass, int((ok & jump).sum())


def euclidean_sam(f: AlphaConcaveFunction, binning: Grid | None = None, merge: bool = False) -> DiscreteMeasure:
    """Pushforward of ``f**(1-alpha) dx`` under the cell gradients of the base.

    Parameters
    ----------
    f : AlphaConcaveFunction
    binning : Grid, optional
        Cloud-in-cell binning of the atoms onto this grid.
    merge : bool
        Merge atoms with equal gradients.

    Returns
    -------
    DiscreteMeasure
        ``meta`` holds ``kink_mass`` and ``kink_cells``.

    Notes
    -----
    1D cells use the exact integral along the affine interpolant and the
    secant slope, so ``sum m*y`` telescopes to ``f(left) - f(right)``. A
    cell whose neighbours' slopes jump is split at the crossing of the
    neighbouring secant lines, each part going to its neighbour's slope.
    2D cells use the corner average of ``f**(1-alpha)`` and the flux form
    ``-grad f / f**(1-alpha)`` of the gradient.
    """
    if f.dim == 1:
        pts, m, kmass, kcount = _sam_cells_1d(f)
    else:
        pts, m, kmass, kcount = _sam_cells_2d(f)
    mu = DiscreteMeasure(pts, m, meta={"kink_mass": kmass, "kink_cells": kcount})
    if merge:
        mu = mu.merged()
    if binning is not None:
        mu = bin_measure(mu, binning)
    return mu


def _boundary_facets(phi: ExtendedGridFunction):
    """Facets of the support polygon (2D) or its end nodes (1D).

    Yields ``(normal, node_indices, lengths_weights, on_grid_edge)``; the
    weights integrate a nodal function along the facet by the trapezoid
    rule.
    """
    grid = phi.grid
    fin = phi.finite
    if grid.dim == 1:
        idx = np.flatnonzero(fin)
        lo, hi = int(idx[0]), int(idx[-1])
        yield np.array([-1.0]), np.array([lo]), np.array([1.0]), lo == 0
        yield np.array([1.0]), np.array([hi]), np.array([1.0]), hi == grid.counts[0] - 1
        return
    nodes = grid.nodes()
    flat = np.flatnonzero(fin.ravel())
    pts = nodes[flat]
    if len(pts) < 3:
        raise GridError("support polygon is degenerate")
    hull = ConvexHull(pts)
    scale = max(grid.spacing)
    seen = set()
    for eq in hull.equations:
        nrm = eq[:2]
        off = -eq[2]
        key = tuple(np.round(np.r_[nrm, off], 9))
        if key in seen:
            continue
        seen.add(key)
        on = np.abs(pts @ nrm - off) <= 1e-9 * (1.0 + abs(off)) + 1e-12 * scale
        sel = flat[on]
        p = nodes[sel]
        tangent = np.array([-nrm[1], nrm[0]])
        order = np.argsort(p @ tangent, kind="stable")
        sel = sel[order]
        p = p[order]
        seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
        w = np.zeros(len(sel))
        w[:-1] += 0.5 * seg
        w[1:] += 0.5 * seg
        ii = np.unravel_index(sel, grid.shape)
        edge = bool(
            np.all(ii[0] == 0)
            or np.all(ii[0] == grid.counts[0] - 1)
            or np.all(ii[1] == 0)
            or np.all(ii[1] == grid.counts[1] - 1)
        )
        yield nrm / np.linalg.norm(nrm), sel, w, edge


def spherical_sam(f: AlphaConcaveFunction, rtol: float = 1e-9) -> DiscreteMeasure:
    """Boundary measure of ``f`` against the outer normals of its support.

    Facets lying on the grid boundary are truncations of an unbounded
    support. Their mass is kept (not zeroed) and reported through
    ``meta['truncated']`` and ``meta['truncation_mass']``.
    """
    fv = f.values.ravel()
    normals, weights = [], []
    trunc_mass = 0.0
    truncated = False
    for nrm, sel, w, edge in _boundary_facets(f.base):
        mass = float(w @ fv[sel])
        if edge:
            trunc_mass += mass
            if mass > rtol * max(1.0, float(fv.max())):
                truncated = True
        normals.append(nrm)
        weights.append(mass)
    mu = DiscreteMeasure(
        np.array(normals),
        np.array(weights),
        spherical=True,
        meta={"truncated": truncated, "truncation_mass": trunc_mass},
    )
    return mu.merged()


def support_function(phi: ExtendedGridFunction, u) -> float:
    """``h_K(u)`` of the finite domain; ``inf`` if it reaches the grid edge along ``u``."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    nodes = phi.grid.nodes()
    fin = phi.finite.ravel()
    vals = nodes[fin] @ u
    best = vals.max()
    if not _domain_bounded(phi):
        # a maximizer on the grid boundary means the true support is cut off
        ring = np.zeros(phi.grid.shape, dtype=bool)
        if phi.dim == 1:
            ring[[0, -1]] = True
        else:
            ring[[0, -1], :] = True
            ring[:, [0, -1]] = True
        on_ring = ring.ravel()[fin]
        if np.any(on_ring & (vals >= best - 1e-12 * (1.0 + abs(best)))):
            return INF
    return float(best)


# ---------------------------------------------------------------------------
# variational formula


def certify_weak_condition(f, g, dual_grid: Grid | None = None):
    """Search ``beta1 = 2**k`` (k = -6..6) for the weak comparison condition.

    Checks that ``dom psi`` sits inside ``beta1 dom phi`` and meets its
    interior, then sets ``beta2 = max(psi* - beta1 phi*)`` over the dual
    nodes. The first certifying pair is returned.

    Raises
    ------
    CertificationError
    """
    dual = _combined_dual_grid(f, g) if dual_grid is None else dual_grid
    fs = conjugate(f.base, dual).values
    gs = conjugate(g.base, dual).values
    bf = f.bounded_support()
    bg = g.bounded_support()
    pg = g.grid.nodes()[g.support.ravel()]
    if bf:
        pf = f.grid.nodes()[f.support.ravel()]
        if f.dim == 1:
            lo, hi = pf.min(), pf.max()
        else:
            hull = ConvexHull(pf)
    for k in range(-6, 7):
        beta1 = 2.0**k
        if bf and not bg:
            break
        if bf:
            tol = 1e-9 * max(1.0, float(np.abs(pf).max()) * beta1)
            if f.dim == 1:
                contained = np.all((pg[:, 0] >= beta1 * lo - tol) & (pg[:, 0] <= beta1 * hi + tol))
                interior = np.any((pg[:, 0] > beta1 * lo + tol) & (pg[:, 0] < beta1 * hi - tol))
            else:
                eq = hull.equations
                lhs = pg @ eq[:, :2].T + beta1 * eq[:, 2]
                contained = np.all(lhs <= tol)
                interior = np.any(np.all(lhs < -tol, axis=1))
            if not (contained and interior):
                continue
        beta2 = float(np.max(gs - beta1 * fs))
        return beta1, beta2
    raise CertificationError("no (beta1, beta2) pair certifies the weak condition")


@dataclass(frozen=True)
class FormulaResult:
    """Interior and boundary parts of the variational formula."""

    interior: float
    boundary: float
    beta1: float
    beta2: float
    kink_fraction: float

    @property
    def value(self) -> float:
        return self.interior + self.boundary


def first_variation_formula(f, g, dual_grid: Grid | None = None, max_kink_fraction: float = MAX_KINK_FRACTION):
    """``int psi*(grad phi) f**(1-alpha) dx + int h_{K_g}(nu) f dH``.

    Parameters
    ----------
    f, g : AlphaConcaveFunction
        Common alpha; the pair must pass :func:`certify_weak_condition`.
    dual_grid : Grid, optional
        Dual grid for the certification search. ``psi*`` itself is
        evaluated exactly at the cell gradients.
    max_kink_fraction : float
        Reject when more than this fraction of interior nodes are kinks.

    Returns
    -------
    FormulaResult
    """
    if f.alpha != g.alpha:
        raise AlphaError("pair needs a common alpha")
    beta1, beta2 = certify_weak_condition(f, g, dual_grid)
    _, valid, kink = gradient_field(f.base)
    interior_nodes = valid | kink
    frac = float(kink.sum() / max(1, interior_nodes.sum()))
    if frac > max_kink_fraction:
        raise GridError(f"kink fraction {frac:.3f} exceeds {max_kink_fraction}")

    sam = euclidean_sam(f)
    interior = float(sam.weights @ conjugate_at(g.base, sam.points))

    boundary = 0.0
    if f.bounded_support():
        fv = f.values.ravel()
        for nrm, sel, w, _ in _boundary_facets(f.base):
            mass = float(w @ fv[sel])
            if mass == 0.0:
                continue
            boundary += support_function(g.base, nrm) * mass
    return FormulaResult(interior, boundary, beta1, beta2, frac)
