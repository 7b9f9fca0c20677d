"""Best linear unbiased prediction of mixed effects mu = l'b + m'v.

At known sigma the BLUP is t(sigma) = l' beta_tilde + s(sigma)'(y - X beta_tilde)
with weights s(sigma) = Sigma^-1 Z G m and random-effect predictor
v_tilde = G Z' Sigma^-1 (y - X beta_tilde).  The EBLUP plugs in a fitted
sigma-hat.  The gradient of s in sigma is analytic: each family's G is linear
in sigma with known derivative, so

    ds/dsigma_i = -Sigma^-1 V_i Sigma^-1 Z G m + Sigma^-1 Z (dG/dsigma_i) m.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ._linalg import SigmaPoint
from .estimation import FitResult
from .model import MixedModel, PredictionTarget

WARN_BOUNDARY = "boundary"


@dataclass(frozen=True, eq=False)
class BlupResult:
    """Predictor value with its parts: t = l'beta + s'(y - X beta)."""

    value: float
    s_weights: np.ndarray
    beta_used: np.ndarray
    v_tilde: np.ndarray
    warnings: tuple[str, ...] = ()


def _check_target(model: MixedModel, target: PredictionTarget) -> None:
    if target.l.shape != (model.p,):
        raise ValueError(f"target l has shape {target.l.shape}, expected ({model.p},)")
    if target.m.shape != (model.r,):
        raise ValueError(f"target m has shape {target.m.shape}, expected ({model.r},)")


def blup_weights(model: MixedModel, sigma, target: PredictionTarget) -> np.ndarray:
    """The weight vector s(sigma) = Sigma^-1 Z G m."""
    _check_target(model, target)
    sp = SigmaPoint(model, sigma)
    gm = model.family.g_matrix(sp.sigma) @ target.m
    return sp.solve(model.Z @ gm)


def blup(model: MixedModel, sigma, y, target: PredictionTarget) -> BlupResult:
    """BLUP of the target at known sigma, with beta from GLS."""
    _check_target(model, target)
    y = np.asarray(y, dtype=float)
    sp = SigmaPoint(model, sigma)
    beta = sp.gls(y)
    resid = y - model.X @ beta
    gm = model.family.g_matrix(sp.sigma) @ target.m
    s_w = sp.solve(model.Z @ gm)
    v_tilde = model.family.g_matrix(sp.sigma) @ (model.Z.T @ sp.solve(resid))
    value = float(target.l @ beta + s_w @ resid)
    return BlupResult(value=value, s_weights=s_w, beta_used=beta, v_tilde=v_tilde)


def grad_s(model: MixedModel, sigma, target: PredictionTarget) -> np.ndarray:
    """n x s gradient of the BLUP weights in sigma, column per component."""
    _check_target(model, target)
    sp = SigmaPoint(model, sigma)
    fam = model.family
    gm = fam.g_matrix(sp.sigma) @ target.m
    sc = sp.solve(model.Z @ gm)
    cols = []
    for i in range(model.s):
        rhs = model.Z @ (fam.dg_matrix(i) @ target.m) - model.v_mats[i] @ sc
        cols.append(sp.solve(rhs))
    return np.column_stack(cols)


def observation_weights(model: MixedModel, sigma, target: PredictionTarget) -> np.ndarray:
    """The full weight vector w with t(sigma) = w'y.

    Folding the GLS step into the weights gives
    w = Sigma^-1 X (X'Sigma^-1 X)^-1 (l - X's) + s; useful for comparing the
    predictor against direct minimum-MSE solutions.
    """
    _check_target(model, target)
    sp = SigmaPoint(model, sigma)
    gm = model.family.g_matrix(sp.sigma) @ target.m
    s_w = sp.solve(model.Z @ gm)
    return sp.six @ sp.gram_solve(target.l - model.X.T @ s_w) + s_w


def eblup(model: MixedModel, fit: FitResult, y, target: PredictionTarget) -> BlupResult:
    """BLUP evaluated at the fitted sigma-hat.

    A fit that clamped some component to the boundary yields a valid
    predictor; the result then carries the "boundary" warning marker.
    """
    res = blup(model, fit.sigma_hat, y, target)
    if fit.boundary_hit:
        res = dataclasses.replace(res, warnings=res.warnings + (WARN_BOUNDARY,))
    return res
