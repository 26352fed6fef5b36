"""Executable diagnostics that return JSON-ready report dicts."""

from __future__ import annotations

import numpy as np

from minkalpha.alphafun import (
    AlphaConcaveFunction,
    DiscreteMeasure,
    IntegrabilityError,
    _power_of_base,
    euclidean_sam,
    spherical_sam,
)
from minkalpha.extgrid import quadrature_weights

RANK_RTOL = 1e-10
RATIO_MAX = 0.95


def check_necessary_conditions(mu: DiscreteMeasure, tol: float = 1e-6) -> dict:
    """Finite first moment, barycenter at the origin, full-dimensional support.

    The affine hull dimension is the rank of the centered second-moment
    matrix (singular values above ``1e-10`` of the largest).

    Returns
    -------
    dict
        ``firstMomentFinite``, ``barycenterNorm``, ``affineHullDim``,
        ``pass`` and ``reason`` (empty when passing).
    """
    if len(mu) == 0 or mu.total <= 0:
        raise ValueError("empty measure")
    n = mu.dim
    m1 = mu.first_moment() / mu.total
    bary = float(np.linalg.norm(mu.barycenter()))
    sv = np.linalg.svd(mu.second_moment(), compute_uv=False)
    rank = int(np.sum(sv > RANK_RTOL * sv.max())) if sv.max() > 0 else 0
    diam = mu.diameter()
    reasons = []
    if not np.isfinite(m1):
        reasons.append("first moment not finite")
    if rank < n:
        reasons.append("support in hyperplane")
    elif bary > tol * diam:
        reasons.append("barycenter not at origin")
    return {
        "firstMomentFinite": bool(np.isfinite(m1)),
        "firstMoment": float(m1),
        "barycenterNorm": bary,
        "affineHullDim": rank,
        "diameter": float(diam),
        "tol": float(tol),
        "pass": not reasons,
        "reason": "; ".join(reasons),
    }


def default_boxes(f: AlphaConcaveFunction, count: int = 6) -> list:
    """Half-widths halving down from the largest centred box inside the grid."""
    half = min(min(-lo, hi) for lo, hi in zip(f.grid.mins, f.grid.maxs))
    return [half / 2.0 ** (count - 1 - k) for k in range(count)]


def check_integrability_trend(f: AlphaConcaveFunction, p: float = 0.0, l: int = 0, boxes=None) -> dict:
    """Partial integrals of ``|x|**p (1 - alpha phi)**(1/alpha - l)`` over growing boxes.

    Passes when successive increments shrink by a ratio of at most 0.95
    throughout, the signature of a convergent tail.

    Raises
    ------
    IntegrabilityError
        When ``n + p - l + 1/alpha >= 0``, where the moment may diverge.
    """
    n = f.dim
    if n + p - l + 1.0 / f.alpha >= 0:
        raise IntegrabilityError(f"hypothesis fails: n + p - l + 1/alpha = {n + p - l + 1.0 / f.alpha:g} >= 0")
    boxes = default_boxes(f) if boxes is None else [float(b) for b in boxes]
    if len(boxes) < 3:
        raise ValueError("need at least three boxes")
    vals = _power_of_base(f.base.values, f.alpha, 1.0 / f.alpha - l)
    mesh = f.grid.mesh()
    if p:
        vals = vals * np.sqrt(sum(m**2 for m in mesh)) ** p
    w = quadrature_weights(f.grid, "rectangle")
    sup = np.max(np.abs(np.stack(mesh)), axis=0)
    partial = [float((w * vals)[sup <= r + 1e-12].sum()) for r in boxes]
    inc = np.diff(partial)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = inc[1:] / inc[:-1]
    ok = bool(np.all(inc > 0) and np.all(ratios <= RATIO_MAX))
    return {
        "p": float(p),
        "l": int(l),
        "alpha": float(f.alpha),
        "boxes": [float(b) for b in boxes],
        "partialIntegrals": partial,
        "increments": [float(v) for v in inc],
        "ratios": [float(v) for v in ratios],
        "pass": ok,
    }


def _directions(n: int, n_random: int, seed: int) -> np.ndarray:
    axes = np.concatenate([np.eye(n), -np.eye(n)])
    rng = np.random.default_rng(seed)
    r = rng.standard_normal((n_random, n))
    r /= np.linalg.norm(r, axis=1, keepdims=True)
    return np.concatenate([axes, r])


def check_gradient_balance(f: AlphaConcaveFunction, tol: float = 1e-3, n_random: int = 8, seed: int = 0) -> dict:
    """Balance of the interior gradient term against the boundary normal term.

    For each direction ``u`` the residual is
    ``<u, int grad(phi) f**(1-alpha) dx + int_boundary nu f dH>``,
    taken from the two surface-area measures. Passes when the largest
    residual is at most ``tol`` times the combined mass.
    """
    if f.dim not in (1, 2):
        raise ValueError("dimension must be 1 or 2")
    euc = euclidean_sam(f)
    sph = spherical_sam(f)
    interior = euc.weights @ euc.points if len(euc) else np.zeros(f.dim)
    boundary = sph.weights @ sph.points if len(sph) else np.zeros(f.dim)
    dirs = _directions(f.dim, n_random, seed)
    res = np.abs(dirs @ (interior + boundary))
    scale = euc.total + sph.total
    worst = float(res.max())
    return {
        "interior": [float(v) for v in interior],
        "boundary": [float(v) for v in boundary],
        "residuals": [float(v) for v in res],
        "maxResidual": worst,
        "massScale": float(scale),
        "truncated": bool(sph.meta.get("truncated", False)),
        "pass": bool(worst <= tol * max(scale, 1e-300)),
    }
