"""Solver for the extended Minkowski problem of alpha-concave measures.

Minimizes ``G(rho) = (1 - alpha) F(rho) - alpha T(rho, mu)`` over
probability measures on a grid, with ``F(rho) = -int rho**(1/(1-alpha))``.
Each outer step majorizes ``-alpha T`` by its tangent dual bound, minimizes
the resulting convex model in closed form and takes a damped step.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import gamma

from minkalpha.alphafun import (
    AlphaConcaveFunction,
    AlphaError,
    DiscreteMeasure,
    euclidean_sam,
    spherical_sam,
)
from minkalpha.extgrid import INF, ExtendedGridFunction, Grid, GridError, quadrature_weights
from minkalpha.transport import (
    ConvergenceError,
    knott_smith_check,
    max_correlation,
    wasserstein1,
)
from minkalpha.verify import check_necessary_conditions

MASS_TOL = 1e-8
CUT_TOL = 1e-6


class PreconditionError(ValueError):
    """The target measure fails the necessary conditions."""


def ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n."""
    return math.pi ** (n / 2) / gamma(n / 2 + 1)


@dataclass(frozen=True)
class AlphaConcaveMeasure:
    """Density ``(1 - alpha*base)**(1/alpha - 1)`` plus singular atoms.

    Nodes with ``base <= 1/alpha + atom_tol`` carry no density. Masses use
    node-centred cells of volume ``h**n``.
    """

    alpha: float
    base: ExtendedGridFunction
    atoms: DiscreteMeasure
    atom_tol: float

    def __post_init__(self):
        fin = self.base.finite
        if np.any(self.base.values[fin] < 1.0 / self.alpha - 1e-12):
            raise AlphaError("base must be at least 1/alpha")
        if len(self.atoms):
            vals = _values_at(self.base, self.atoms.points)
            if np.any(vals > 1.0 / self.alpha + self.atom_tol):
                raise AlphaError("atoms must sit where base is 1/alpha")

    @property
    def grid(self) -> Grid:
        return self.base.grid

    @property
    def density(self) -> np.ndarray:
        b = self.base.values
        out = np.zeros_like(b)
        ok = np.isfinite(b) & (b > 1.0 / self.alpha + self.atom_tol)
        out[ok] = (1.0 - self.alpha * b[ok]) ** (1.0 / self.alpha - 1.0)
        return out

    def cell_masses(self) -> np.ndarray:
        return self.density * self.grid.cell_volume

    @property
    def density_mass(self) -> float:
        return float(self.cell_masses().sum())

    @property
    def singular_mass(self) -> float:
        return self.atoms.total

    @property
    def total(self) -> float:
        return self.density_mass + self.singular_mass

    def node_weights(self) -> np.ndarray:
        """Density cell masses plus atoms, on grid nodes."""
        w = self.cell_masses().ravel().copy()
        if len(self.atoms):
            idx = _node_index(self.grid, self.atoms.points)
            np.add.at(w, idx, self.atoms.weights)
        return w.reshape(self.grid.shape)

    def as_discrete(self) -> DiscreteMeasure:
        w = self.node_weights().ravel()
        keep = w > 0
        return DiscreteMeasure(self.grid.nodes()[keep], w[keep])

    def alpha_function(self) -> AlphaConcaveFunction:
        """The alpha-concave function ``(1 - alpha*base)**(1/alpha)``."""
        vals = np.maximum(self.base.values, 1.0 / self.alpha + 1e-12)
        vals = np.where(self.base.finite, vals, INF)
        base = ExtendedGridFunction(self.grid, vals)
        return AlphaConcaveFunction(self.alpha, base, check_coercive=False)


def _node_index(grid: Grid, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, grid.dim)
    idx = []
    for k in range(grid.dim):
        t = (pts[:, k] - grid.mins[k]) / grid.spacing[k]
        r = np.rint(t)
        if np.any(np.abs(t - r) > 1e-6) or np.any(r < 0) or np.any(r > grid.counts[k] - 1):
            raise GridError("atoms must sit on grid nodes")
        idx.append(r.astype(np.intp))
    return np.ravel_multi_index(tuple(idx), grid.shape)


def _values_at(g: ExtendedGridFunction, points) -> np.ndarray:
    return g.values.ravel()[_node_index(g.grid, points)]


# ---------------------------------------------------------------------------
# functionals


def f_alpha(rho, alpha: float, grid: Grid | None = None) -> float:
    """``F_alpha = -int rho**(1/(1-alpha)) dx`` (atoms contribute 0).

    Parameters
    ----------
    rho : AlphaConcaveMeasure or ndarray
        A measure, or nodal density values (then ``grid`` is required).
    alpha : float
    grid : Grid, optional
    """
    if isinstance(rho, AlphaConcaveMeasure):
        dens, grid = rho.density, rho.grid
    else:
        if grid is None:
            raise ValueError("a grid is needed for raw density values")
        dens = np.asarray(rho, dtype=np.float64).reshape(grid.shape)
    if np.any(dens < 0) or not np.all(np.isfinite(dens)):
        raise ValueError("density must be finite and nonnegative")
    w = quadrature_weights(grid, "rectangle")
    return -float((w * dens ** (1.0 / (1.0 - alpha))).sum())


def f_alpha_lower_bound(alpha: float, n: int, first_moment: float, a1: float, a2: float) -> float:
    """Lower bound ``C - M1**a1 - M1**a2`` on ``F_alpha`` for a probability measure.

    ``C = -beta * n * omega_n * (1/(n + a1/alpha) - 1/(n + a2/alpha))`` with
    ``beta = -alpha * (1 - alpha)**(1/alpha - 1)``, valid for
    ``0 < a1 < -alpha*n < a2 < 1``.
    """
    if not (0 < a1 < -alpha * n < a2 < 1):
        raise ValueError("need 0 < a1 < -alpha*n < a2 < 1")
    beta = -alpha * (1.0 - alpha) ** (1.0 / alpha - 1.0)
    om = ball_volume(n)
    c1 = n * om / (n + a1 / alpha)
    c2 = -n * om / (n + a2 / alpha)
    C = -beta * (c1 + c2)
    return C - first_moment**a1 - first_moment**a2


def objective(rho, mu: DiscreteMeasure, alpha: float, backend: str = "exact", epsilon: float = 1e-2) -> float:
    """``(1 - alpha) F_alpha(rho) - alpha T(rho, mu)``.

    ``rho`` is an :class:`AlphaConcaveMeasure`, or a pair
    ``(grid, density, atoms)`` of nodal density values and a
    :class:`DiscreteMeasure` of singular atoms.
    """
    if isinstance(rho, AlphaConcaveMeasure):
        F = f_alpha(rho, alpha)
        disc = rho.as_discrete()
    else:
        grid, dens, atoms = rho
        F = f_alpha(dens, alpha, grid)
        w = np.asarray(dens, dtype=np.float64).ravel() * grid.cell_volume
        pts = grid.nodes()
        keep = w > 0
        P = [pts[keep]]
        W = [w[keep]]
        if atoms is not None and len(atoms):
            P.append(atoms.points)
            W.append(atoms.weights)
        disc = DiscreteMeasure(np.concatenate(P), np.concatenate(W))
    T, _, _ = max_correlation(disc, mu, backend, epsilon)
    return (1.0 - alpha) * F - alpha * T


def uniform_ball_tau(mu: DiscreteMeasure, alpha: float, fraction: float = 0.5) -> float:
    """A radius strictly inside the range where the uniform ball has negative objective.

    The range is ``tau**(1 + alpha n/(1-alpha)) <
    (1-alpha) omega_n**(-alpha/(1-alpha)) / (-alpha M1)``.
    """
    n = mu.dim
    om = ball_volume(n)
    expo = 1.0 + alpha * n / (1.0 - alpha)
    bound = (1.0 - alpha) * om ** (-alpha / (1.0 - alpha)) / (-alpha * mu.first_moment() / mu.total)
    return fraction * bound ** (1.0 / expo)


def uniform_ball_bound(mu: DiscreteMeasure, alpha: float, tau: float) -> float:
    """Upper bound on the objective of the uniform ball of radius ``tau``."""
    n = mu.dim
    om = ball_volume(n)
    a = -(1.0 - alpha) * om ** (-alpha / (1.0 - alpha)) * tau ** (-n * alpha / (1.0 - alpha))
    return a - alpha * tau * mu.first_moment() / mu.total


# ---------------------------------------------------------------------------
# solver


@dataclass
class SolveConfig:
    """Solver settings; serialized as the solve config JSON."""

    alpha: float
    grid: Grid | None = None
    theta: float = 0.5
    tol: float = 1e-13
    max_iter: int = 200
    ot_backend: str = "exact"
    epsilon: float = 1e-2
    seed: int = 0
    cut_tol: float = CUT_TOL
    center_tol: float = 1e-3
    min_theta: float = 1.0 / 1024
    initial_shift: tuple | None = None

    def __post_init__(self):
        if self.ot_backend not in ("exact", "entropic"):
            raise ValueError(f"unknown otBackend {self.ot_backend!r}")
        if not (0.0 < self.theta <= 1.0):
            raise ValueError("theta must lie in (0, 1]")
        if self.tol <= 0 or self.max_iter < 1 or self.epsilon <= 0:
            raise ValueError("tol, maxIter and epsilon must be positive")
        if self.grid is not None and not isinstance(self.grid, Grid):
            self.grid = Grid.from_dict(self.grid)

    @property
    def atom_tol(self) -> float:
        return self.cut_tol / abs(self.alpha)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = None if self.grid is None else self.grid.to_dict()
        for py, js in (
            ("max_iter", "maxIter"),
            ("ot_backend", "otBackend"),
            ("cut_tol", "cutTol"),
            ("center_tol", "centerTol"),
            ("min_theta", "minTheta"),
            ("initial_shift", "initialShift"),
        ):
            d[js] = d.pop(py)
        if d["initialShift"] is not None:
            d["initialShift"] = [float(v) for v in d["initialShift"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolveConfig":
        d = dict(d)
        aliases = {
            "maxIter": "max_iter",
            "otBackend": "ot_backend",
            "cutTol": "cut_tol",
            "centerTol": "center_tol",
            "minTheta": "min_theta",
            "initialShift": "initial_shift",
        }
        for k, v in aliases.items():
            if k in d:
                d[v] = d.pop(k)
        if d.get("grid") is not None and not isinstance(d["grid"], Grid):
            d["grid"] = Grid.from_dict(d["grid"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SolveReport:
    """Diagnostics of one solve."""

    objective_trace: list = field(default_factory=list)
    c0_trace: list = field(default_factory=list)
    sam_residual_w1: float = float("nan")
    knott_smith_violations: int = -1
    singular_mass: float = 0.0
    iterations: int = 0
    converged: bool = False
    final_objective: float = float("nan")
    reference_objective: float = float("nan")
    spherical_mass: float = float("nan")
    boundary_ratio: float = float("nan")
    stop_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "objectiveTrace": [float(v) for v in self.objective_trace],
            "c0Trace": [float(v) for v in self.c0_trace],
            "samResidualW1": float(self.sam_residual_w1),
            "knottSmithViolations": int(self.knott_smith_violations),
            "singularMass": float(self.singular_mass),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "finalObjective": float(self.final_objective),
            "referenceObjective": float(self.reference_objective),
            "sphericalMass": float(self.spherical_mass),
            "boundaryRatio": float(self.boundary_ratio),
            "stopReason": self.stop_reason,
        }


def default_grid(mu: DiscreteMeasure, alpha: float) -> Grid:
    """Box of half-width ``8 tau`` around the origin (``tau`` from the ball rule)."""
    r = 8.0 * uniform_ball_tau(mu, alpha)
    count = 401 if mu.dim == 1 else 41
    return Grid((-r,) * mu.dim, (r,) * mu.dim, (count,) * mu.dim)


class _State:
    """Nodal density and singular weights on a grid."""

    def __init__(self, grid: Grid, dens: np.ndarray, sing: np.ndarray):
        self.grid = grid
        self.dens = dens
        self.sing = sing

    def weights(self) -> np.ndarray:
        return self.dens * self.grid.cell_volume + self.sing

    def mix(self, other: "_State", theta: float) -> "_State":
        return _State(
            self.grid,
            (1.0 - theta) * self.dens + theta * other.dens,
            (1.0 - theta) * self.sing + theta * other.sing,
        )


def _evaluate(state: _State, mu: DiscreteMeasure, alpha: float, cfg: SolveConfig):
    grid = state.grid
    F = -float((grid.cell_volume * state.dens ** (1.0 / (1.0 - alpha))).sum())
    w = state.weights().ravel()
    keep = np.flatnonzero(w > 0)
    pts = grid.nodes()[keep]
    rho = DiscreteMeasure(pts, w[keep] / w[keep].sum())
    T, plan, pot = max_correlation(rho, mu, cfg.ot_backend, cfg.epsilon)
    G = (1.0 - alpha) * F - alpha * T
    return G, pot.phi_star, plan, keep


def _potential_on_grid(grid: Grid, mu: DiscreteMeasure, phi_star: np.ndarray) -> np.ndarray:
    """``phi_1(x) = max_j <x, y_j> - phi*_j`` on every node, shifted to min 0."""
    nodes = grid.nodes()
    out = np.empty(nodes.shape[0])
    step = max(1, 4_000_000 // max(1, len(mu)))
    for s in range(0, nodes.shape[0], step):
        out[s : s + step] = np.max(nodes[s : s + step] @ mu.points.T - phi_star[None, :], axis=1)
    return (out - out.min()).reshape(grid.shape)


def _density_for(c: float, phi1: np.ndarray, alpha: float, cut: float) -> np.ndarray:
    b = -c - alpha * phi1
    out = np.zeros_like(phi1)
    ok = b > cut
    out[ok] = b[ok] ** ((1.0 - alpha) / alpha)
    return out


def _candidate(phi1: np.ndarray, grid: Grid, alpha: float, cfg: SolveConfig):
    """Minimizer of the majorized objective: density, atoms and c."""
    v = grid.cell_volume

    def mass(c):
        return float(_density_for(c, phi1, alpha, cfg.cut_tol).sum() * v)

    m0 = mass(0.0)
    sing = np.zeros_like(phi1)
    if m0 < 1.0:
        c = 0.0
        dens = _density_for(0.0, phi1, alpha, cfg.cut_tol)
        at = phi1 <= cfg.cut_tol / abs(alpha)
        sing[at] = (1.0 - m0) / at.sum()
        return dens, sing, c
    lo = -1.0
    while mass(lo) >= 1.0:
        lo *= 2.0
        if lo < -1e12:
            raise ConvergenceError("could not bracket the normalization constant")
    hi = 0.0
    c = 0.5 * (lo + hi)
    # run to machine precision; MASS_TOL is the acceptance bound
    for _ in range(200):
        c = 0.5 * (lo + hi)
        if c in (lo, hi):
            break
        m = mass(c)
        if m > 1.0:
            hi = c
        else:
            lo = c
    dens = _density_for(c, phi1, alpha, cfg.cut_tol)
    if abs(dens.sum() * v - 1.0) > MASS_TOL:
        raise ConvergenceError("normalization bisection did not reach tolerance")
    return dens, sing, c


def _initial_state(mu: DiscreteMeasure, grid: Grid, alpha: float, shift=None):
    tau = uniform_ball_tau(mu, alpha)
    half = min((hi - lo) / 2 for lo, hi in zip(grid.mins, grid.maxs))
    tau = min(tau, 0.45 * half)
    tau = max(tau, 2.0 * max(grid.spacing))
    shift = np.zeros(grid.dim) if shift is None else np.asarray(shift, dtype=np.float64)
    r = np.sqrt(sum((m - s) ** 2 for m, s in zip(grid.mesh(), shift)))
    inside = r <= tau
    dens = np.where(inside, 1.0, 0.0)
    dens /= dens.sum() * grid.cell_volume
    return _State(grid, dens, np.zeros(grid.shape)), tau


def _recenter(state: _State) -> _State:
    w = state.weights()
    bary = np.array([(w * m).sum() for m in state.grid.mesh()]) / w.sum()
    shift = [int(np.rint(-b / h)) for b, h in zip(bary, state.grid.spacing)]
    if max(abs(s) for s in shift) < 2:
        return state

    def roll(a):
        out = a
        for ax, s in enumerate(shift):
            out = np.roll(out, s, axis=ax)
            sl = [slice(None)] * a.ndim
            sl[ax] = slice(0, s) if s > 0 else slice(s, None)
            if s:
                out[tuple(sl)] = 0.0
        return out

    dens = roll(state.dens)
    sing = roll(state.sing)
    tot = dens.sum() * state.grid.cell_volume + sing.sum()
    return _State(state.grid, dens / tot, sing / tot)


def solve(mu: DiscreteMeasure, alpha: float, config: SolveConfig | None = None):
    """Solve the extended Minkowski problem for ``mu``.

    Parameters
    ----------
    mu : DiscreteMeasure
        Centered probability measure, not supported in a hyperplane.
    alpha : float
        In ``(-1/n, 0)``.
    config : SolveConfig, optional

    Returns
    -------
    AlphaConcaveMeasure
        Base ``phi_0 = phi_1 + (c + 1)/alpha`` with density
        ``(1 - alpha phi_0)**(1/alpha - 1)`` and atoms where
        ``phi_0 = 1/alpha``.
    SolveReport

    Raises
    ------
    PreconditionError
        If ``mu`` fails the necessary conditions.
    """
    cfg = config if config is not None else SolveConfig(alpha=alpha)
    n = mu.dim
    if not (-1.0 / n < alpha < 0):
        raise AlphaError(f"alpha must lie in (-1/{n}, 0)")
    if abs(mu.total - 1.0) > 1e-9:
        raise PreconditionError("mu must be a probability measure")
    nec = check_necessary_conditions(mu, tol=cfg.center_tol)
    if not nec["pass"]:
        raise PreconditionError(nec["reason"])
    grid = cfg.grid if cfg.grid is not None else default_grid(mu, alpha)
    if grid.dim != n:
        raise PreconditionError("grid dimension differs from mu")

    report = SolveReport()
    state, tau = _initial_state(mu, grid, alpha, cfg.initial_shift)
    G, phi_star, _, _ = _evaluate(state, mu, alpha, cfg)
    report.reference_objective = G
    report.objective_trace.append(G)
    for it in range(cfg.max_iter):
        phi1 = _potential_on_grid(grid, mu, phi_star)
        dens, sing, c = _candidate(phi1, grid, alpha, cfg)
        cand = _State(grid, dens, sing)
        theta = cfg.theta
        accepted = False
        while theta >= cfg.min_theta:
            trial = _recenter(state.mix(cand, theta))
            Gt, ps_t, _, _ = _evaluate(trial, mu, alpha, cfg)
            if Gt <= G:
                accepted = True
                break
            theta *= 0.5
        report.iterations = it + 1
        if not accepted:
            report.converged = True
            report.stop_reason = "no descent step"
            break
        drop = G - Gt
        state, G, phi_star = trial, Gt, ps_t
        report.objective_trace.append(G)
        report.c0_trace.append(c)
        if drop <= cfg.tol * (1.0 + abs(G)):
            report.converged = True
            report.stop_reason = "objective decrease below tol"
            break
    else:
        report.stop_reason = "iteration cap"

    # output: the structured minimizer of the final majorant
    phi1 = _potential_on_grid(grid, mu, phi_star)
    dens, sing, c = _candidate(phi1, grid, alpha, cfg)
    base_vals = phi1 + (c + 1.0) / alpha
    base = ExtendedGridFunction(grid, base_vals, claimed_convex=True)
    at = sing.ravel() > 0
    atoms = DiscreteMeasure(grid.nodes()[at], sing.ravel()[at])
    out = AlphaConcaveMeasure(alpha, base, atoms, cfg.atom_tol)
    _certify(out, mu, report, cfg)
    return out, report


def output_sam(measure: AlphaConcaveMeasure, plan=None) -> DiscreteMeasure:
    """Euclidean SAM of the output: cell gradients of the density plus routed atoms.

    Atom mass follows the rows of ``plan`` at the atom nodes.
    """
    sam = euclidean_sam(measure.alpha_function())
    pts = [sam.points]
    wts = [sam.weights]
    if len(measure.atoms) and plan is not None:
        atom_idx = set(_node_index(measure.grid, measure.atoms.points).tolist())
        src = plan.source.points
        src_idx = _node_index(measure.grid, src)
        node_w = measure.node_weights().ravel()
        for r, cidx, w in zip(plan.rows, plan.cols, plan.weights):
            node = src_idx[r]
            if node in atom_idx:
                share = measure.atoms.weights.sum() and w * (
                    measure.atoms.weights[_node_index(measure.grid, measure.atoms.points) == node].sum()
                    / node_w[node]
                )
                pts.append(plan.target.points[cidx][None, :])
                wts.append(np.array([share]))
    return DiscreteMeasure(np.concatenate(pts), np.concatenate(wts))


def _certify(out: AlphaConcaveMeasure, mu: DiscreteMeasure, report: SolveReport, cfg: SolveConfig):
    report.singular_mass = out.singular_mass
    # the certificate always uses the exact plan; entropic plans are blurred
    exact = replace(cfg, ot_backend="exact")
    G_out, _, plan, _ = _evaluate(_State(out.grid, out.density, _atoms_on_grid(out)), mu, out.alpha, exact)
    report.final_objective = G_out
    ks = knott_smith_check(plan, out.base, tol=1e-4)
    report.knott_smith_violations = ks.count
    sam = output_sam(out, plan)
    if sam.total > 0:
        report.sam_residual_w1 = wasserstein1(sam.normalized(), mu)
    sph = spherical_sam(out.alpha_function())
    report.spherical_mass = sph.total
    dens = out.density
    dmax = float(dens.max())
    edge = _domain_boundary(out.base.finite)
    report.boundary_ratio = float(dens[edge].max()) / dmax if dmax > 0 else float("nan")


def _domain_boundary(finite: np.ndarray) -> np.ndarray:
    """Finite nodes on the grid ring or next to an infinite node."""
    pad = np.pad(finite, 1, constant_values=False)
    inner = finite.copy()
    for ax in range(finite.ndim):
        for s in (-1, 1):
            inner &= np.roll(pad, s, axis=ax)[(slice(1, -1),) * finite.ndim]
    return finite & ~inner


def _atoms_on_grid(m: AlphaConcaveMeasure) -> np.ndarray:
    s = np.zeros(m.grid.size)
    if len(m.atoms):
        np.add.at(s, _node_index(m.grid, m.atoms.points), m.atoms.weights)
    return s.reshape(m.grid.shape)


# ---------------------------------------------------------------------------
# Monge-Ampere residual


@dataclass(frozen=True)
class MongeAmpereResidual:
    """Nodewise residual field with its max and mean over the region."""

    field: np.ndarray
    max: float
    mean: float


def _discrete_hessian_det(v: np.ndarray, h) -> np.ndarray:
    if v.ndim == 1:
        out = np.full(v.shape, np.nan)
        out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / h[0] ** 2
        return out
    out = np.full(v.shape, np.nan)
    c = v[1:-1, 1:-1]
    dxx = (v[2:, 1:-1] - 2 * c + v[:-2, 1:-1]) / h[0] ** 2
    dyy = (v[1:-1, 2:] - 2 * c + v[1:-1, :-2]) / h[1] ** 2
    dxy = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4 * h[0] * h[1])
    out[1:-1, 1:-1] = dxx * dyy - dxy**2
    return out


def monge_ampere_residual(phi: ExtendedGridFunction, h, alpha: float, region=None) -> MongeAmpereResidual:
    """``|h(grad phi) det D^2 phi - (1 - alpha phi)**((1-alpha)/alpha)|`` nodewise.

    Parameters
    ----------
    phi : ExtendedGridFunction
    h : callable or ExtendedGridFunction
        Density of the target measure; a callable takes an ``(m, n)``
        array, a grid function is multilinearly interpolated.
    alpha : float
    region : ndarray of bool, optional
        Nodes to evaluate; all interior nodes by default.

    Raises
    ------
    GridError
        If a stencil touches an infinite value.
    """
    from minkalpha.extgrid import interpolate

    grid = phi.grid
    v = phi.values
    interior = np.zeros(grid.shape, dtype=bool)
    interior[(slice(1, -1),) * grid.dim] = True
    region = interior if region is None else (np.asarray(region, dtype=bool) & interior)
    if grid.dim == 1:
        nb = [v[:-2], v[2:]]
        stencil_ok = np.zeros(grid.shape, dtype=bool)
        stencil_ok[1:-1] = np.isfinite(v[1:-1]) & np.isfinite(nb[0]) & np.isfinite(nb[1])
    else:
        stencil_ok = np.zeros(grid.shape, dtype=bool)
        blk = np.ones((grid.counts[0] - 2, grid.counts[1] - 2), dtype=bool)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                blk &= np.isfinite(v[1 + di : grid.counts[0] - 1 + di, 1 + dj : grid.counts[1] - 1 + dj])
        stencil_ok[1:-1, 1:-1] = blk
    if np.any(region & ~stencil_ok):
        raise GridError("Hessian stencil leaves the finite domain")
    hs = grid.spacing
    grads = []
    for k in range(grid.dim):
        g = np.full(grid.shape, np.nan)
        sl_c = [slice(None)] * grid.dim
        sl_p = [slice(None)] * grid.dim
        sl_m = [slice(None)] * grid.dim
        sl_c[k], sl_p[k], sl_m[k] = slice(1, -1), slice(2, None), slice(0, -2)
        with np.errstate(invalid="ignore"):
            g[tuple(sl_c)] = (v[tuple(sl_p)] - v[tuple(sl_m)]) / (2 * hs[k])
        grads.append(g)
    with np.errstate(invalid="ignore"):
        det = _discrete_hessian_det(v, hs)
    pts = np.stack([g[region] for g in grads], axis=1)
    if callable(h):
        hv = np.asarray(h(pts), dtype=np.float64).ravel()
    else:
        hv = interpolate(h, pts)
    if np.any(v[region] <= 1.0 / alpha):
        raise GridError("phi must exceed 1/alpha on the region")
    rhs = (1.0 - alpha * v[region]) ** ((1.0 - alpha) / alpha)
    res = np.abs(hv * det[region] - rhs)
    field_ = np.full(grid.shape, np.nan)
    field_[region] = res
    return MongeAmpereResidual(field_, float(res.max()), float(res.mean()))


def save_solution(out: AlphaConcaveMeasure, report: SolveReport, directory) -> None:
    """Write base, density, atoms and report into ``directory``."""
    from pathlib import Path

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out.base.save(d / "base.json")
    ExtendedGridFunction(out.grid, out.density).save(d / "density.json")
    out.atoms.save_csv(d / "atoms.csv")
    with open(d / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
