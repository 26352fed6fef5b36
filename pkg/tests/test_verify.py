import numpy as np
import pytest

from minkalpha.alphafun import DiscreteMeasure, IntegrabilityError, euclidean_sam
from minkalpha.verify import check_gradient_balance, check_integrability_trend, check_necessary_conditions

from corpus import alpha_fn, corpus, interval, line


def test_necessary_two_atoms_pass():
    rep = check_necessary_conditions(DiscreteMeasure([[-1.0], [1.0]], [0.5, 0.5]))
    assert rep["pass"] and rep["affineHullDim"] == 1 and rep["reason"] == ""


def test_necessary_point_mass_fails():
    rep = check_necessary_conditions(DiscreteMeasure([[0.0]], [1.0]))
    assert not rep["pass"] and rep["affineHullDim"] == 0
    assert rep["reason"] == "support in hyperplane"


def test_necessary_segment_fails():
    pts = np.array([[-1.5, 0.75], [-0.5, 0.25], [0.5, -0.25], [1.5, -0.75]])
    rep = check_necessary_conditions(DiscreteMeasure(pts, [0.25] * 4))
    assert not rep["pass"] and rep["affineHullDim"] == 1


def test_necessary_off_centre_fails():
    rep = check_necessary_conditions(DiscreteMeasure([[-1.0], [2.0]], [0.5, 0.5]))
    assert not rep["pass"] and rep["reason"] == "barycenter not at origin"
    assert rep["barycenterNorm"] == pytest.approx(0.5)


def test_necessary_rank_ignores_weight_scale():
    # weights spanning many magnitudes still give full rank
    pts = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    rep = check_necessary_conditions(DiscreteMeasure(pts, [0.5, 0.5, 1e-6, 1e-6]))
    assert rep["affineHullDim"] == 2 and rep["pass"]


def test_necessary_empty():
    with pytest.raises(ValueError):
        check_necessary_conditions(DiscreteMeasure(np.zeros((0, 1)), []))


@pytest.mark.parametrize("fx", [fx for fx in corpus() if fx.continuous], ids=lambda fx: fx.name)
def test_necessary_on_corpus_sam(fx):
    assert check_necessary_conditions(euclidean_sam(fx.f))["pass"]


def abs_fn():
    return alpha_fn(line(-400.0, 400.0, 16001), np.abs, -0.5)


def test_integrability_abs_passes():
    rep = check_integrability_trend(abs_fn())
    assert rep["pass"]
    # tail of (1 + r/2)**-2 over doubling boxes: increments halve
    assert rep["ratios"][-1] == pytest.approx(0.5, abs=0.05)


def test_integrability_l1_passes():
    rep = check_integrability_trend(abs_fn(), l=1)
    assert rep["pass"]
    assert rep["ratios"][-1] == pytest.approx(0.25, abs=0.05)


def test_integrability_rejects_boundary_case():
    with pytest.raises(IntegrabilityError):
        check_integrability_trend(abs_fn(), p=1.0)


def test_integrability_flags_slow_tail():
    # alpha close to -1 makes the tail decay like 1/r**1.11, too slowly for the test range
    f = alpha_fn(line(-400.0, 400.0, 16001), np.abs, -0.9)
    assert not check_integrability_trend(f, p=0.0)["pass"]


def test_gradient_balance_flat_interval():
    f = alpha_fn(line(-2.0, 2.0, 401), lambda x: 0 * x, -0.5, interval(-1, 1))
    rep = check_gradient_balance(f)
    assert rep["maxResidual"] <= 1e-12
    assert rep["interior"] == [0.0]
    assert rep["pass"]


def test_gradient_balance_asymmetric():
    f = alpha_fn(line(-2.0, 3.0, 501), lambda x: np.maximum(0, x), -0.5, interval(-1, 2))
    rep = check_gradient_balance(f)
    # interior: int_0^2 (1 + x/2)**-3 dx = 3/4; boundary f(2) - f(-1) = 1/4 - 1
    assert rep["interior"][0] == pytest.approx(0.75, abs=1e-3)
    assert rep["boundary"][0] == pytest.approx(-0.75, abs=1e-3)
    assert rep["maxResidual"] <= 1e-3 * rep["massScale"] and rep["pass"]


@pytest.mark.parametrize("fx", corpus(), ids=lambda fx: fx.name)
def test_gradient_balance_on_corpus(fx):
    rep = check_gradient_balance(fx.f)
    assert rep["pass"]
    if fx.continuous:
        assert np.abs(rep["boundary"]).max() <= 1e-3 * rep["massScale"]


def test_reports_deterministic():
    fx = corpus()[7]
    assert check_gradient_balance(fx.f, seed=3) == check_gradient_balance(fx.f, seed=3)
