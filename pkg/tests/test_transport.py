import csv
import itertools

import numpy as np
import pytest
from scipy.stats import norm

from minkalpha.alphafun import DiscreteMeasure, bin_measure
from minkalpha.extgrid import INF, GridError, from_function
from minkalpha.transport import (
    ConvergenceError,
    TransportError,
    berman_derivative_check,
    first_moment_bound_constant,
    knott_smith_check,
    max_correlation,
    max_correlation_entropic,
    max_correlation_exact,
    wasserstein1,
)

from corpus import line, square

TWO = DiscreteMeasure([[-1.0], [1.0]], [0.5, 0.5])


def random_measure(rng, k, n, centered=False):
    p = rng.normal(size=(k, n))
    w = rng.uniform(0.1, 1.0, size=k)
    w /= w.sum()
    if centered:
        p -= w @ p
    return DiscreteMeasure(p, w)


def test_single_atoms():
    v, plan, pot = max_correlation_exact(DiscreteMeasure([[1.0, 2.0]], [1.0]), DiscreteMeasure([[3.0, 4.0]], [1.0]))
    assert v == 11.0
    assert plan.dense().tolist() == [[1.0]]
    assert pot.duality_gap <= 1e-8


def test_two_atoms_identity_plan(backend):
    v, plan, pot = max_correlation_exact(TWO, TWO)
    # oracle: the two extreme couplings of a 2x2 problem with 1/2 marginals
    x = TWO.points[:, 0]
    extreme = [0.5 * sum(x[i] * x[s[i]] for i in range(2)) for s in itertools.permutations(range(2))]
    assert v == pytest.approx(max(extreme)) == 1.0
    assert np.array_equal(plan.dense(), 0.5 * np.eye(2))
    assert pot.duality_gap <= 1e-8


@pytest.mark.parametrize("n", [1, 2])
def test_translation_invariance(n, backend):
    rng = np.random.default_rng(n)
    for _ in range(10):
        rho = random_measure(rng, 9, n)
        mu = random_measure(rng, 7, n, centered=True)
        z = rng.normal(size=n) * 3
        moved = DiscreteMeasure(rho.points + z, rho.weights)
        assert max_correlation_exact(moved, mu)[0] == pytest.approx(max_correlation_exact(rho, mu)[0], abs=1e-9)


@pytest.mark.parametrize("n", [1, 2])
def test_potentials_dual_feasible_and_tight(n, backend):
    rng = np.random.default_rng(10 + n)
    rho = random_measure(rng, 15, n)
    mu = random_measure(rng, 12, n)
    v, plan, pot = max_correlation_exact(rho, mu)
    S = rho.points @ mu.points.T
    slack = pot.phi[:, None] + pot.phi_star[None, :] - S
    assert slack.min() >= -1e-9
    assert np.abs(slack[plan.rows, plan.cols]).max() <= 1e-7
    assert plan.marginal_violation() <= 1e-9 and np.all(plan.weights >= 0)
    assert abs(pot.dual_value(rho, mu) - v) <= 1e-8 * (1 + abs(v))
    assert pot.phi[np.lexsort(rho.points.T[::-1])[0]] == 0.0


def test_nonnegative_for_centered_target():
    rng = np.random.default_rng(3)
    for n in (1, 2):
        for _ in range(20):
            rho = random_measure(rng, 8, n)
            mu = random_measure(rng, 8, n, centered=True)
            assert max_correlation_exact(rho, mu)[0] >= -1e-9


def test_rejects_bad_inputs():
    with pytest.raises(TransportError):
        max_correlation_exact(TWO, DiscreteMeasure([[0.0]], [2.0]))
    with pytest.raises(TransportError):
        max_correlation_exact(DiscreteMeasure(np.zeros((0, 1)), []), TWO)
    with pytest.raises(TransportError):
        max_correlation_exact(TWO, DiscreteMeasure([[0.0, 0.0]], [1.0]))
    with pytest.raises(TransportError):
        max_correlation(TWO, TWO, backend="bogus")
    with pytest.raises(TransportError):
        max_correlation_entropic(TWO, TWO, epsilon=0.0)


def test_entropic_two_atoms():
    res = max_correlation_entropic(TWO, TWO, epsilon=1e-3)
    assert res.value == pytest.approx(1.0, abs=5e-3)
    assert res.marginal_violation <= 1e-6
    assert res.bound == pytest.approx(1e-3 * np.log(4))


def test_entropic_large_epsilon_is_product():
    rng = np.random.default_rng(4)
    rho = random_measure(rng, 6, 2)
    mu = random_measure(rng, 5, 2)
    res = max_correlation_entropic(rho, mu, epsilon=1e6)
    assert np.allclose(res.plan.dense(), np.outer(rho.weights, mu.weights), atol=1e-5)
    assert res.value == pytest.approx(rho.barycenter() @ mu.barycenter(), abs=1e-4)


def test_entropic_iteration_cap():
    rng = np.random.default_rng(5)
    rho = random_measure(rng, 20, 2)
    mu = random_measure(rng, 20, 2)
    with pytest.raises(ConvergenceError):
        max_correlation_entropic(rho, mu, epsilon=1e-4, max_iter=3)


def test_auto_backend_uses_exact():
    v, plan, pot = max_correlation(TWO, TWO)
    assert v == 1.0 and pot.duality_gap == 0.0


def test_knott_smith_grid_examples():
    g = line(-2.0, 2.0, 41)
    phi = from_function(g, lambda x: 0.5 * x * x)
    x = g.axis(0)[::4]
    m = DiscreteMeasure(x, np.full(x.size, 1.0 / x.size))
    _, diag, _ = max_correlation_exact(m, m)
    assert knott_smith_check(diag, phi).count == 0

    a = DiscreteMeasure([[1.0]], [1.0])
    b = DiscreteMeasure([[-1.0]], [1.0])
    _, plan, _ = max_correlation_exact(a, b)
    rep = knott_smith_check(plan, phi)
    assert rep.count == 1
    assert rep.violations[0][2] == pytest.approx(2.0, abs=1e-12)


def test_knott_smith_potentials_always_pass():
    rng = np.random.default_rng(6)
    for n in (1, 2):
        for _ in range(10):
            rho, mu = random_measure(rng, 10, n), random_measure(rng, 13, n)
            _, plan, pot = max_correlation_exact(rho, mu)
            assert knott_smith_check(plan, pot, tol=1e-6).passed


def test_knott_smith_rejects_infinite_potential():
    g = line(-2.0, 2.0, 5)
    phi = from_function(g, lambda x: np.where(x > 0.5, INF, 0.0))
    a = DiscreteMeasure([[1.0]], [1.0])
    _, plan, _ = max_correlation_exact(a, a)
    with pytest.raises(GridError):
        knott_smith_check(plan, phi)


def test_first_moment_constant_two_atoms():
    c = first_moment_bound_constant(TWO)
    assert c.constant == 0.5 and c.margin == 0.0


def test_first_moment_constant_hyperplane():
    mu = DiscreteMeasure([[0.0, -1.0], [0.0, 0.0], [0.0, 2.0]], [0.3, 0.3, 0.4])
    assert first_moment_bound_constant(mu).constant == 0.0


def test_first_moment_constant_single_atom():
    with pytest.raises(TransportError):
        first_moment_bound_constant(DiscreteMeasure([[1.0, 1.0]], [1.0]))


def test_first_moment_inequality():
    rng = np.random.default_rng(7)
    mu = random_measure(rng, 12, 2, centered=True)
    c = first_moment_bound_constant(mu).lower
    assert c > 0
    for _ in range(100):
        rho = random_measure(rng, 10, 2, centered=True)
        assert max_correlation_exact(rho, mu)[0] >= c * rho.first_moment() - 1e-12


def test_weak_lower_semicontinuity_proxy():
    # a fine discretization of the standard normal stands in for rho
    x = np.linspace(-6, 6, 4001)
    w = norm.pdf(x)
    rho = DiscreteMeasure(x, w / w.sum())
    mu = DiscreteMeasure([[-2.0], [0.5], [1.0]], [0.2, 0.4, 0.4])
    target = max_correlation_exact(rho, mu)[0]
    tail = [max_correlation_exact(bin_measure(rho, line(-6.0, 6.0, k)), mu)[0] for k in (101, 201, 401, 801)]
    assert min(tail) >= target - 1e-3


def test_berman_constant_perturbation():
    g = line(-3.0, 3.0, 61)
    phi = from_function(g, lambda x: 0.5 * x * x)
    one = from_function(g, lambda x: 0 * x + 1.0)
    res = berman_derivative_check(phi, one, [0.37])
    assert res.derivative == pytest.approx(-1.0, abs=1e-12)
    assert res.predicted == -1.0


def test_berman_quadratic_perturbation():
    g = line(-3.0, 3.0, 601)
    h = g.spacing[0]
    phi = from_function(g, lambda x: 0.5 * x * x)
    q = from_function(g, lambda x: 0.5 * x * x)
    ts = (0.02, 0.01)
    for y in (-1.23, 0.41, 1.57):
        # ((1+t) x^2/2)* = y^2 / (2(1+t)), derivative -y^2/2
        res = berman_derivative_check(phi, q, [y], ts)
        assert abs(res.derivative + 0.5 * y * y) <= 5 * (h + ts[-1])


def test_berman_linear_perturbation():
    g = square(-3.0, 3.0, 121)
    phi = from_function(g, lambda x, y: 0.5 * (x * x + y * y))
    c = np.array([0.5, -1.0])
    lin = from_function(g, lambda x, y: c[0] * x + c[1] * y)
    y = np.array([0.52, -0.33])
    res = berman_derivative_check(phi, lin, y, (0.02, 0.01))
    assert abs(res.derivative + c @ y) <= 5 * (g.spacing[0] + 0.01)


def test_berman_rejects_kink():
    g = line(-2.0, 2.0, 41)
    phi = from_function(g, lambda x: 0.5 * x * x)
    with pytest.raises(GridError):
        # phi* is piecewise linear; for x^2/2 its kinks sit at the chord slopes, the cell midpoints
        berman_derivative_check(phi, phi, [g.axis(0)[25] + 0.5 * g.spacing[0]])


def test_wasserstein1():
    rng = np.random.default_rng(8)
    for n in (1, 2):
        mu = random_measure(rng, 10, n)
        z = np.full(n, 0.75)
        moved = DiscreteMeasure(mu.points + z, mu.weights)
        assert wasserstein1(mu, moved) == pytest.approx(np.linalg.norm(z), abs=1e-12)
        assert wasserstein1(mu, mu) == pytest.approx(0.0, abs=1e-15)


def test_plan_and_potential_csv(tmp_path):
    rng = np.random.default_rng(9)
    rho, mu = random_measure(rng, 5, 2), random_measure(rng, 4, 2)
    _, plan, pot = max_correlation_exact(rho, mu)
    plan.save_csv(tmp_path / "plan.csv")
    rows = list(csv.reader(open(tmp_path / "plan.csv")))
    assert rows[0] == ["i", "j", "weight"]
    assert [float(r[2]) for r in rows[1:]] == plan.weights.tolist()
    pot.save_csv(tmp_path / "phi.csv", tmp_path / "phis.csv")
    back = [float(r[0]) for r in list(csv.reader(open(tmp_path / "phi.csv")))[1:]]
    assert back == pot.phi.tolist()
