"""Restricted and profile loglikelihoods with exact derivative formulas.

For Sigma(sigma) linear in sigma with constant derivatives V_i, the projection

    P = Sigma^-1 - Sigma^-1 X (X' Sigma^-1 X)^-1 X' Sigma^-1

drives everything: the REML score is (1/2)[y'PV_iPy - tr(PV_i)], the profile
(ML) score replaces tr(PV_i) by tr(Sigma^-1 V_i), and the second and third
derivatives are trace polynomials in P (REML) or Sigma^-1 (ML) against the
V_i, with quadratic forms in Py.  Since PX = 0, the quadratic forms written
in the residual u = y - X beta can all be evaluated with y itself.

The REML criterion is the X-based form

    l_R = -(1/2) [log|Sigma| + log|X' Sigma^-1 X| + y'Py]

which differs from the error-contrast likelihood only by a constant free of
sigma; the profile criterion drops the Gram log-determinant.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import permutations

import numpy as np
from scipy import linalg as sla

from ._linalg import SigmaPoint
from .exceptions import SingularInformation
from .model import MixedModel

METHODS = ("REML", "ML")


def as_method(method: str) -> str:
    """Normalize a method name to 'REML' or 'ML'."""
    m = str(method).upper()
    if m not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    return m


# --------------------------------------------------------------------------
# result types
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DerivativeBundle:
    """Score vector, Hessian, and optional third-derivative array at sigma."""

    score: np.ndarray
    hessian: np.ndarray
    third: np.ndarray | None
    method: str


@dataclass(frozen=True, eq=False)
class InformationMatrix:
    """Expected Hessian A of the chosen criterion; -A is the Fisher information."""

    A: np.ndarray
    method: str

    @cached_property
    def fisher(self) -> np.ndarray:
        return -self.A

    @cached_property
    def _fisher_cho(self):
        try:
            return sla.cho_factor(self.fisher, lower=True)
        except np.linalg.LinAlgError as err:
            raise SingularInformation(
                f"{self.method} information matrix is not positive definite"
            ) from err

    def fisher_solve(self, b: np.ndarray) -> np.ndarray:
        """(-A)^-1 b; raises SingularInformation when -A has no Cholesky factor."""
        return sla.cho_solve(self._fisher_cho, b)

    @cached_property
    def fisher_inv(self) -> np.ndarray:
        inv = self.fisher_solve(np.eye(self.A.shape[0]))
        return 0.5 * (inv + inv.T)


# --------------------------------------------------------------------------
# workspace-level implementations
# --------------------------------------------------------------------------
# These *_at helpers operate on a prebuilt SigmaPoint so the estimation loop
# can reuse one factorization per iterate.  Public wrappers below build the
# point from (model, sigma).


def apply_p(sp: SigmaPoint, v: np.ndarray) -> np.ndarray:
    """P v through solves, without materializing P."""
    siv = sp.solve(v)
    return siv - sp.six @ sp.gram_solve(sp.model.X.T @ siv)


def restricted_loglik_at(sp: SigmaPoint, y: np.ndarray) -> float:
    quad = float(y @ apply_p(sp, y))
    return -0.5 * (sp.logdet_sigma + sp.logdet_gram + quad)


def profile_loglik_at(sp: SigmaPoint, y: np.ndarray) -> float:
    quad = float(y @ apply_p(sp, y))
    return -0.5 * (sp.logdet_sigma + quad)


def loglik_at(sp: SigmaPoint, y: np.ndarray, method: str) -> float:
    if method == "REML":
        return restricted_loglik_at(sp, y)
    return profile_loglik_at(sp, y)


def _trace_mats(sp: SigmaPoint, method: str) -> list[np.ndarray]:
    """P V_i for REML, Sigma^-1 V_i for ML (the trace building blocks)."""
    base = sp.proj if method == "REML" else sp.sigma_inv
    return [base @ v for v in sp.model.v_mats]


def score_at(sp: SigmaPoint, y: np.ndarray, method: str) -> np.ndarray:
    py = apply_p(sp, y)
    base = sp.proj if method == "REML" else sp.sigma_inv
    out = np.empty(sp.model.s)
    for i, v in enumerate(sp.model.v_mats):
        # tr(B V_i) = sum(B * V_i) for symmetric B, V_i
        out[i] = 0.5 * (py @ v @ py - np.sum(base * v))
    return out


def hessian_at(sp: SigmaPoint, y: np.ndarray, method: str) -> np.ndarray:
    model = sp.model
    s = model.s
    py = apply_p(sp, y)
    w = [v @ py for v in model.v_mats]
    pw = [apply_p(sp, wi) for wi in w]
    bmats = _trace_mats(sp, method)
    H = np.empty((s, s))
    for i in range(s):
        for j in range(i, s):
            tr = np.sum(bmats[i] * bmats[j].T)
            quad = w[i] @ pw[j]
            H[i, j] = H[j, i] = 0.5 * tr - quad
    return 0.5 * (H + H.T)


def third_derivatives_at(sp: SigmaPoint, y: np.ndarray, method: str) -> np.ndarray:
    model = sp.model
    s = model.s
    py = apply_p(sp, y)
    h = [apply_p(sp, v @ py) for v in model.v_mats]
    vh = [[model.v_mats[j] @ h[k] for k in range(s)] for j in range(s)]
    bmats = _trace_mats(sp, method)
    prod = [[bmats[i] @ bmats[j] for j in range(s)] for i in range(s)]

    def quad(i, j, k):
        return h[i] @ vh[j][k]

    def tr3(i, j, k):
        return np.sum(prod[i][j] * bmats[k].T)

    out = np.empty((s, s, s))
    for i in range(s):
        for j in range(s):
            for k in range(s):
                cyc = quad(i, j, k) + quad(j, k, i) + quad(k, i, j)
                out[i, j, k] = cyc - 0.5 * (tr3(i, j, k) + tr3(i, k, j))
    # exact formula is permutation symmetric; average out rounding asymmetry
    sym = np.zeros_like(out)
    for perm in permutations(range(3)):
        sym += np.transpose(out, perm)
    return sym / 6.0


def information_at(sp: SigmaPoint, method: str) -> np.ndarray:
    """Expected Hessian A without the invertibility check."""
    model = sp.model
    s = model.s
    pv = [sp.proj @ v for v in model.v_mats]
    A = np.empty((s, s))
    if method == "REML":
        for i in range(s):
            for j in range(i, s):
                A[i, j] = A[j, i] = -0.5 * np.sum(pv[i] * pv[j].T)
    else:
        siv = [sp.sigma_inv @ v for v in model.v_mats]
        ps = sp.proj @ sp.sigma_mat
        for i in range(s):
            for j in range(i, s):
                t1 = 0.5 * np.sum(siv[i] * siv[j].T)
                t2 = np.sum((pv[i] @ pv[j]) * ps.T)
                A[i, j] = A[j, i] = t1 - t2
    return 0.5 * (A + A.T)


def ml_score_bias_at(sp: SigmaPoint) -> np.ndarray:
    diff = sp.sigma_inv - sp.proj
    return np.array([0.5 * np.sum(diff * v) for v in sp.model.v_mats])


def effective_dims_at(sp: SigmaPoint) -> np.ndarray:
    """d_i = Frobenius norm of Z_i' P Z_i, with Z_0 = I for residual terms."""
    model = sp.model
    fam = model.family
    P = sp.proj
    out = np.empty(model.s)
    for i in range(model.s):
        if np.any(fam.dr_matrix(i)):
            out[i] = np.linalg.norm(P)
        else:
            cols = np.diag(fam.dg_matrix(i)) > 0
            zi = model.Z[:, cols]
            out[i] = np.linalg.norm(zi.T @ P @ zi)
    return out


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------


def projection_p(model: MixedModel, sigma) -> np.ndarray:
    """The symmetric projection matrix P; satisfies PX = 0 and P Sigma P = P."""
    return SigmaPoint(model, sigma).proj


def restricted_loglik(model: MixedModel, sigma, y) -> float:
    """REML criterion -(1/2)[log|Sigma| + log|X'Sigma^-1 X| + y'Py]."""
    return restricted_loglik_at(SigmaPoint(model, sigma), np.asarray(y, dtype=float))


def profile_loglik(model: MixedModel, sigma, y) -> float:
    """Profile criterion -(1/2)[log|Sigma| + y'Py] with beta profiled out."""
    return profile_loglik_at(SigmaPoint(model, sigma), np.asarray(y, dtype=float))


def score_reml(model: MixedModel, sigma, y) -> np.ndarray:
    """REML score: component i is (1/2)[y'PV_iPy - tr(PV_i)]."""
    return score_at(SigmaPoint(model, sigma), np.asarray(y, dtype=float), "REML")


def score_ml(model: MixedModel, sigma, y) -> np.ndarray:
    """ML score: component i is (1/2)[y'PV_iPy - tr(Sigma^-1 V_i)]."""
    return score_at(SigmaPoint(model, sigma), np.asarray(y, dtype=float), "ML")


def hessian(model: MixedModel, sigma, y, method: str = "REML") -> np.ndarray:
    """Second-derivative matrix of the chosen criterion.

    Entry (i,j) is (1/2)tr(PV_iPV_j) - y'PV_iPV_jPy for REML; ML replaces
    the trace by (1/2)tr(Sigma^-1 V_i Sigma^-1 V_j).  The returned matrix is
    symmetrized (the two index orders of the quadratic form are averaged).
    """
    m = as_method(method)
    return hessian_at(SigmaPoint(model, sigma), np.asarray(y, dtype=float), m)


def third_derivatives(model: MixedModel, sigma, y, method: str = "REML") -> np.ndarray:
    """Third-derivative array: cyclic quadratic forms minus two trace orders.

    Entry (i,j,k) is

        y'PV_iPV_jPV_kPy + y'PV_jPV_kPV_iPy + y'PV_kPV_iPV_jPy
        - (1/2)[tr(BV_iBV_jBV_k) + tr(BV_iBV_kBV_j)]

    with B = P for REML and B = Sigma^-1 for ML (quadratic forms keep P).
    """
    m = as_method(method)
    return third_derivatives_at(SigmaPoint(model, sigma), np.asarray(y, dtype=float), m)


def derivative_bundle(
    model: MixedModel, sigma, y, method: str = "REML", include_third: bool = False
) -> DerivativeBundle:
    """Score, Hessian, and optionally the third derivatives in one pass."""
    m = as_method(method)
    sp = SigmaPoint(model, sigma)
    y = np.asarray(y, dtype=float)
    third = third_derivatives_at(sp, y, m) if include_third else None
    return DerivativeBundle(
        score=score_at(sp, y, m), hessian=hessian_at(sp, y, m), third=third, method=m
    )


def expected_information(model: MixedModel, sigma, method: str = "REML") -> InformationMatrix:
    """Expected Hessian A; -A must be invertible (positive definite).

    REML: A(i,j) = -(1/2) tr(PV_iPV_j).  ML: the exact expectation of the
    profile Hessian, A(i,j) = (1/2)tr(S^-1 V_i S^-1 V_j) - tr(PV_iPV_jPS),
    using E[u'Qu] = tr(Q Sigma).  Raises SingularInformation on degenerate
    designs where -A has no Cholesky factor.
    """
    m = as_method(method)
    info = InformationMatrix(A=information_at(SigmaPoint(model, sigma), m), method=m)
    info._fisher_cho  # noqa: B018 - force the invertibility check
    return info


def ml_score_bias(model: MixedModel, sigma) -> np.ndarray:
    """g_M0 with components (1/2)tr[(Sigma^-1 - P)V_i]; E(ML score) = -g_M0."""
    return ml_score_bias_at(SigmaPoint(model, sigma))


def effective_dims(model: MixedModel, sigma) -> np.ndarray:
    """Per-component effective dimensions d_i = ||Z_i' P Z_i||_F (Z_0 = I)."""
    return effective_dims_at(SigmaPoint(model, sigma))
