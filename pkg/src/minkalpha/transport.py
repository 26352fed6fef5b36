"""Discrete optimal transport for the maximal correlation functional.

``T(rho, mu) = max sum_ij pi_ij <x_i, y_j>`` over couplings, solved exactly
by a network simplex or approximately by log-domain Sinkhorn.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import wasserstein_distance

from minkalpha import _kernels
from minkalpha.alphafun import DiscreteMeasure
from minkalpha.extgrid import ExtendedGridFunction, GridError
from minkalpha.legendre import conjugate_at, subgradient_contains

TOTAL_RTOL = 1e-9
CHECK_EVERY = 10
EXACT_MAX_SIZE = 500 * 500


class TransportError(ValueError):
    """Invalid transport input."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling between two discrete measures.

    ``rows``/``cols`` index the supports of the source and target measures.
    """

    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    source: DiscreteMeasure
    target: DiscreteMeasure

    @property
    def row_marginal(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.weights, minlength=len(self.source))

    @property
    def col_marginal(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.weights, minlength=len(self.target))

    def dense(self) -> np.ndarray:
        out = np.zeros((len(self.source), len(self.target)))
        np.add.at(out, (self.rows, self.cols), self.weights)
        return out

    def correlation(self) -> float:
        x = self.source.points[self.rows]
        y = self.target.points[self.cols]
        return float(self.weights @ np.einsum("ij,ij->i", x, y))

    def marginal_violation(self) -> float:
        return float(
            max(
                np.abs(self.row_marginal - self.source.weights).max(),
                np.abs(self.col_marginal - self.target.weights).max(),
            )
        )

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["i", "j", "weight"])
            for i, j, w in zip(self.rows, self.cols, self.weights):
                wr.writerow([int(i), int(j), repr(float(w))])


@dataclass(frozen=True)
class PotentialPair:
    """Kantorovich potentials on the two supports with the duality gap."""

    phi: np.ndarray
    phi_star: np.ndarray
    duality_gap: float

    def dual_value(self, rho: DiscreteMeasure, mu: DiscreteMeasure) -> float:
        return float(rho.weights @ self.phi + mu.weights @ self.phi_star)

    def save_csv(self, path_phi, path_phi_star) -> None:
        for path, vals in ((path_phi, self.phi), (path_phi_star, self.phi_star)):
            with open(path, "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(["value"])
                for v in vals:
                    wr.writerow([repr(float(v))])


def _check_pair(rho: DiscreteMeasure, mu: DiscreteMeasure):
    if len(rho) == 0 or len(mu) == 0:
        raise TransportError("empty support")
    if rho.dim != mu.dim:
        raise TransportError("measures live in different dimensions")
    ta, tb = rho.total, mu.total
    if ta <= 0 or tb <= 0:
        raise TransportError("measures must have positive mass")
    if abs(ta - tb) > TOTAL_RTOL * max(ta, tb):
        raise TransportError(f"unequal totals {ta!r} and {tb!r}")
    a = rho.weights
    # absorb rounding so the transportation problem is balanced exactly
    b = mu.weights * (ta / tb) if ta != tb else mu.weights
    return a, b


def c_transform(rho: DiscreteMeasure, phi: np.ndarray, points) -> np.ndarray:
    """``max_i <x_i, y> - phi_i`` at each row of ``points``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, rho.dim)
    out = np.empty(pts.shape[0])
    step = max(1, 2_000_000 // max(1, len(rho)))
    for s in range(0, pts.shape[0], step):
        out[s : s + step] = np.max(pts[s : s + step] @ rho.points.T - phi[None, :], axis=1)
    return out


def _lexmin_index(points: np.ndarray) -> int:
    return int(np.lexsort(points.T[::-1])[0])


def max_correlation_exact(rho: DiscreteMeasure, mu: DiscreteMeasure):
    """Exact maximal correlation by the transportation network simplex.

    Returns
    -------
    value : float
    plan : TransportPlan
    potentials : PotentialPair
        ``phi`` normalized to 0 at the lexicographically smallest support
        point of ``rho``; ``phi_star`` is its c-transform.
    """
    a, b = _check_pair(rho, mu)
    S = rho.points @ mu.points.T
    if rho.dim == 1:
        # sorted supports make the north-west corner start optimal
        pr = np.argsort(rho.points[:, 0], kind="stable")
        pm = np.argsort(mu.points[:, 0], kind="stable")
        brow, bcol, flow, us, _, n_iter, status = _kernels.network_simplex(a[pr], b[pm], -S[np.ix_(pr, pm)])
        brow, bcol = pr[brow], pm[bcol]
        u = np.empty_like(us)
        u[pr] = us
    else:
        brow, bcol, flow, u, _, n_iter, status = _kernels.network_simplex(a, b, -S)
    if status != 0:
        raise ConvergenceError(f"network simplex stopped after {n_iter} pivots")
    flow = np.where(flow < 0, 0.0, flow)
    keep = flow > 0
    order = np.lexsort((bcol[keep], brow[keep]))
    rows = brow[keep][order]
    cols = bcol[keep][order]
    w = flow[keep][order]
    plan = TransportPlan(rows, cols, w, rho, mu)

    phi = -u
    phi = phi - phi[_lexmin_index(rho.points)]
    phi_star = np.max(S - phi[:, None], axis=0)
    primal = float(w @ S[rows, cols])
    dual = float(a @ phi + b @ phi_star)
    gap = abs(primal - dual)
    return primal, plan, PotentialPair(phi, phi_star, gap)


@dataclass(frozen=True)
class EntropicResult:
    """Sinkhorn output with the a-priori bound ``eps*log(N*M)``."""

    value: float
    plan: TransportPlan
    epsilon: float
    iterations: int
    marginal_violation: float
    bound: float
    potentials: PotentialPair | None = None


def _round_plan(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project a positive matrix onto the transport polytope (Altschuler rounding)."""
    r = P.sum(axis=1)
    x = np.minimum(1.0, np.divide(a, r, out=np.ones_like(a), where=r > 0))
    P = P * x[:, None]
    c = P.sum(axis=0)
    y = np.minimum(1.0, np.divide(b, c, out=np.ones_like(b), where=c > 0))
    P = P * y[None, :]
    ea = a - P.sum(axis=1)
    eb = b - P.sum(axis=0)
    if ea.sum() > 0:
        P = P + np.outer(ea, eb) / ea.sum()
    return P


def max_correlation_entropic(
    rho: DiscreteMeasure,
    mu: DiscreteMeasure,
    epsilon: float = 1e-2,
    max_iter: int = 10_000,
    tol: float = 1e-8,
) -> EntropicResult:
    """Entropy-regularized maximal correlation by log-domain Sinkhorn.

    The regularization is lowered geometrically from the cost scale to
    ``epsilon``; iterations at each level are warm started.

    Raises
    ------
    ConvergenceError
        When the marginal error at the final level is still above ``tol``
        after ``max_iter`` total iterations.
    """
    if epsilon <= 0:
        raise TransportError("epsilon must be positive")
    a, b = _check_pair(rho, mu)
    S = rho.points @ mu.points.T
    la = np.log(np.where(a > 0, a, 1e-300))
    lb = np.log(np.where(b > 0, b, 1e-300))
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    scale = max(float(np.abs(S).max()), epsilon)
    levels = [epsilon]
    while levels[-1] < scale:
        levels.append(levels[-1] * 4.0)
    levels = levels[::-1]
    it = 0
    err = np.inf
    for k, eps in enumerate(levels):
        last = k == len(levels) - 1
        level_tol = tol if last else max(tol, 1e-4)
        while it < max_iter:
            f = eps * (la - logsumexp((S + g[None, :]) / eps, axis=1))
            g = eps * (lb - logsumexp((S + f[:, None]) / eps, axis=0))
            it += 1
            if it % CHECK_EVERY:
                continue
            # columns are exact after the g-update; measure the rows
            rows = np.exp(logsumexp((S + f[:, None] + g[None, :]) / eps, axis=1))
            err = float(np.abs(rows - a).sum())
            if err <= level_tol:
                break
        if it >= max_iter and err > level_tol:
            raise ConvergenceError(f"Sinkhorn marginal error {err:.3g} after {it} iterations")
    P = np.exp((S + f[:, None] + g[None, :]) / epsilon)
    P = _round_plan(P, a, b)
    rows, cols = np.nonzero(P > 0)
    plan = TransportPlan(rows, cols, P[rows, cols], rho, mu)
    value = float((P * S).sum())
    viol = plan.marginal_violation()
    # scaling potentials give phi = -f; phi* is its c-transform
    phi = -f
    phi = phi - phi[_lexmin_index(rho.points)]
    phi_star = np.max(S - phi[:, None], axis=0)
    gap = abs(float(a @ phi + b @ phi_star) - value)
    pot = PotentialPair(phi, phi_star, gap)
    return EntropicResult(value, plan, epsilon, it, viol, epsilon * np.log(len(a) * len(b)), pot)


def max_correlation(rho, mu, backend: str = "auto", epsilon: float = 1e-2, max_iter: int = 10_000):
    """Dispatch to the exact solver for moderate sizes, Sinkhorn otherwise.

    Returns ``(value, plan, potentials)``. Entropic potentials come from the
    scaling vectors, so their ``duality_gap`` is of order ``epsilon``.
    """
    if backend == "auto":
        backend = "exact" if len(rho) * len(mu) <= EXACT_MAX_SIZE else "entropic"
    if backend == "exact":
        return max_correlation_exact(rho, mu)
    if backend == "entropic":
        res = max_correlation_entropic(rho, mu, epsilon, max_iter)
        return res.value, res.plan, res.potentials
    raise TransportError(f"unknown backend {backend!r}")


@dataclass(frozen=True)
class KnottSmithReport:
    """Plan entries whose target is not a subgradient of the potential."""

    violations: tuple
    checked: int
    tol: float

    @property
    def count(self) -> int:
        return len(self.violations)

    @property
    def passed(self) -> bool:
        return not self.violations


def knott_smith_check(plan: TransportPlan, phi, tol: float = 1e-6, min_weight: float = 0.0) -> KnottSmithReport:
    """Test ``y_j`` in the subdifferential of ``phi`` at ``x_i`` on the plan support.

    Parameters
    ----------
    plan : TransportPlan
    phi : PotentialPair or ExtendedGridFunction
        With a potential pair the Fenchel equality
        ``phi_i + phi*_j = <x_i, y_j>`` is tested to ``tol``. With a grid
        function, source points must be grid nodes; the subgradient test
        runs at tolerance ``tol`` and the reported slack is the discrete
        Fenchel gap.
    min_weight : float
        Skip plan entries at or below this weight.

    Returns
    -------
    KnottSmithReport
        ``violations`` lists ``(i, j, slack)``.
    """
    x = plan.source.points
    y = plan.target.points
    sel = plan.weights > min_weight
    rows = plan.rows[sel]
    cols = plan.cols[sel]
    out = []
    if isinstance(phi, PotentialPair):
        slack = phi.phi[rows] + phi.phi_star[cols] - np.einsum("ij,ij->i", x[rows], y[cols])
        for i, j, s in zip(rows, cols, slack):
            if s > tol:
                out.append((int(i), int(j), float(s)))
        return KnottSmithReport(tuple(out), int(sel.sum()), tol)
    if not isinstance(phi, ExtendedGridFunction):
        raise TypeError("phi must be a PotentialPair or an ExtendedGridFunction")
    grid = phi.grid
    idx = []
    for k in range(grid.dim):
        t = (x[:, k] - grid.mins[k]) / grid.spacing[k]
        r = np.rint(t)
        if np.any(np.abs(t - r) > 1e-6) or np.any(r < 0) or np.any(r > grid.counts[k] - 1):
            raise GridError("source points must be grid nodes")
        idx.append(r.astype(np.intp))
    idx = np.stack(idx, axis=1)
    vals = phi.values[tuple(idx.T)]
    if not np.all(np.isfinite(vals[rows])):
        raise GridError("phi is infinite at a supported point")
    star = conjugate_at(phi, y)
    for i, j in zip(rows, cols):
        node = tuple(idx[i])
        if not subgradient_contains(phi, node, y[j], tol):
            s = float(vals[i] + star[j] - x[i] @ y[j])
            out.append((int(i), int(j), s))
    return KnottSmithReport(tuple(out), int(sel.sum()), tol)


def fibonacci_directions(n: int, count: int) -> np.ndarray:
    """Unit directions: ``{+1}`` in 1D, golden-angle points on the half circle in 2D.

    Opposite directions give the same median deviation, so half the
    sphere suffices.
    """
    if n == 1:
        return np.array([[1.0]])
    if n != 2:
        raise ValueError("directions are only provided for n = 1, 2")
    golden = (3.0 - np.sqrt(5.0)) / 2.0
    theta = np.pi * np.mod(np.arange(count) * golden, 1.0)
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Lower weighted median (minimizer of ``sum w |v - l|``)."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    k = int(np.searchsorted(cw, 0.5 * cw[-1]))
    return float(v[min(k, len(v) - 1)])


@dataclass(frozen=True)
class FirstMomentBound:
    """Sampled constant ``c`` and a margin making ``c - margin`` a lower bound."""

    constant: float
    margin: float
    direction: np.ndarray
    offset: float

    @property
    def lower(self) -> float:
        return max(0.0, self.constant - self.margin)


def first_moment_bound_constant(mu: DiscreteMeasure, directions: int = 256) -> FirstMomentBound:
    """``(1/2n) min_{e,l} int |<y,e> - l| dmu`` over sampled directions.

    ``l`` is the weighted median, the exact minimizer for fixed ``e``. The
    sampled minimum can only overestimate the true infimum. The margin is
    ``M1 * gap / (2n)`` with ``M1`` the first moment and ``gap`` the largest
    chordal distance from any unit vector to the sample (zero in 1D), so
    ``constant - margin`` is a certified lower bound.
    """
    if len(mu) == 0 or mu.total <= 0:
        raise TransportError("empty measure")
    n = mu.dim
    pts = mu.points
    if np.all(np.abs(pts - pts[0]).max(axis=0) == 0):
        raise TransportError("single-atom measure: the constant degenerates to 0")
    dirs = fibonacci_directions(n, directions)
    best = np.inf
    best_e = dirs[0]
    best_l = 0.0
    for e in dirs:
        proj = pts @ e
        l = weighted_median(proj, mu.weights)
        val = float(mu.weights @ np.abs(proj - l))
        if val < best:
            best, best_e, best_l = val, e, l
    margin = 0.0
    if n == 2:
        ang = np.sort(np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), np.pi))
        gaps = np.diff(np.r_[ang, ang[0] + np.pi])
        chord = 2.0 * np.sin(gaps.max() / 4.0)
        margin = mu.first_moment() * chord / (2 * n)
    return FirstMomentBound(best / (2 * n), margin, best_e, best_l)


@dataclass(frozen=True)
class BermanResult:
    """Extrapolated derivative of ``(phi + t g)*(y)`` against ``-g(grad phi*(y))``."""

    derivative: float
    predicted: float
    residual: float
    quotients: tuple


def berman_derivative_check(phi: ExtendedGridFunction, g: ExtendedGridFunction, y, ts=(0.1, 0.05)) -> BermanResult:
    """Check ``d/dt (phi + t g)*(y) = -g(grad phi*(y))`` at ``t = 0+``.

    The conjugates are exact discrete conjugates at ``y``; ``grad phi*`` is
    the maximizing node, found from one-sided differences.

    Raises
    ------
    GridError
        When ``phi*`` is not differentiable at ``y`` (tied maximizers).
    """
    if phi.grid != g.grid:
        raise GridError("phi and g must share a grid")
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    n = phi.dim
    delta = 1e-6 * (1.0 + np.abs(y).max())
    pts = [y]
    for k in range(n):
        e = np.zeros(n)
        e[k] = delta
        pts += [y + e, y - e]
    vals = conjugate_at(phi, np.array(pts))
    grad = np.empty(n)
    for k in range(n):
        fwd = (vals[1 + 2 * k] - vals[0]) / delta
        bwd = (vals[0] - vals[2 + 2 * k]) / delta
        if abs(fwd - bwd) > 1e-6 * (1.0 + abs(fwd)):
            raise GridError("phi* is not differentiable at y")
        grad[k] = 0.5 * (fwd + bwd)
    # snap to the maximizing node and read g there
    idx = tuple(
        int(np.clip(np.rint((grad[k] - phi.grid.mins[k]) / phi.grid.spacing[k]), 0, phi.grid.counts[k] - 1))
        for k in range(n)
    )
    predicted = -float(g.values[idx])
    base = vals[0]
    qs = []
    for t in ts:
        pert = ExtendedGridFunction(phi.grid, phi.values + t * g.values)
        qs.append((conjugate_at(pert, y[None, :])[0] - base) / t)
    if len(qs) >= 2:
        r = ts[-2] / ts[-1]
        deriv = (r * qs[-1] - qs[-2]) / (r - 1.0)
    else:
        deriv = qs[-1]
    return BermanResult(float(deriv), predicted, float(abs(deriv - predicted)), tuple(qs))


def wasserstein1(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Earth mover's distance between two measures of equal mass."""
    a, b = _check_pair(mu, nu)
    if mu.dim == 1:
        return float(wasserstein_distance(mu.points[:, 0], nu.points[:, 0], a, b) * mu.total)
    C = np.linalg.norm(mu.points[:, None, :] - nu.points[None, :, :], axis=2)
    brow, bcol, flow, _, _, n_iter, status = _kernels.network_simplex(a, b, C)
    if status != 0:
        raise ConvergenceError(f"network simplex stopped after {n_iter} pivots")
    return float(np.clip(flow, 0.0, None) @ C[brow, bcol])
