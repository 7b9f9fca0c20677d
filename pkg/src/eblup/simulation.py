"""Monte Carlo engine for EBLUP and MSE-estimator studies.

Replicate r draws y from the true model with seed base_seed + r, fits each
configured method, evaluates the EBLUP and every configured MSE estimator,
and the report aggregates across replicates.  Reproducibility contract:
per-replicate counter-based seeding plus an index-ordered compensated
reduction, so the report is bit-identical for any worker count.
"""

from __future__ import annotations

import math
import os
import warnings as _warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._linalg import SigmaPoint
from .estimation import fit
from .exceptions import NotPositiveDefinite, SimulationError
from .likelihood import as_method, information_at, ml_score_bias_at, score_at
from .model import BOUNDARY_TOL, MixedModel, PredictionTarget, sigma_as_array
from .mse import _g1_at, _g2_at, mse_estimators, mse_true_approx
from .prediction import blup

ESTIMATORS = ("naive", "prasad_rao", "second_order", "data_specific")

MAX_FAILURE_RATE = 0.01


# --------------------------------------------------------------------------
# data generation
# --------------------------------------------------------------------------


def _cov_factor(mat: np.ndarray, what: str) -> np.ndarray:
    """A matrix L with L L' = mat; diagonal shortcut, Cholesky otherwise."""
    diag = np.diagonal(mat)
    if np.count_nonzero(mat - np.diag(diag)) == 0:
        if np.any(diag < 0):
            raise NotPositiveDefinite(f"{what} has negative diagonal entries")
        return np.diag(np.sqrt(diag))
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefinite(f"{what} is not positive semidefinite") from err


def _draw(model: MixedModel, sigma, beta, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """One (y, v) draw. v is needed by the study to score predictors."""
    values = sigma_as_array(model, sigma)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (model.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({model.p},)")
    rng = np.random.Generator(np.random.Philox(seed))
    lg = _cov_factor(model.family.g_matrix(values), "G")
    lr = _cov_factor(model.family.r_matrix(values), "R")
    v = lg @ rng.standard_normal(model.r)
    e = lr @ rng.standard_normal(model.n)
    return model.X @ beta + model.Z @ v + e, v


def simulate_dataset(model: MixedModel, sigma_true, beta_true, seed: int) -> np.ndarray:
    """Draw y = X beta + Z v + e with v ~ N(0,G), e ~ N(0,R).

    The stream is counter-based (Philox) and keyed by seed alone: the same
    seed always reproduces the same vector, bit for bit.
    """
    return _draw(model, sigma_true, beta_true, seed)[0]


# --------------------------------------------------------------------------
# study configuration and report
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class McConfig:
    """Study description: truth, targets, methods, estimators, seeding."""

    model: MixedModel
    sigma_true: np.ndarray
    beta_true: np.ndarray
    targets: tuple[PredictionTarget, ...]
    methods: tuple[str, ...] = ("REML",)
    replicates: int = 1000
    base_seed: int = 0
    estimators: tuple[str, ...] = ("naive", "prasad_rao", "second_order")

    def __post_init__(self):
        object.__setattr__(self, "sigma_true", sigma_as_array(self.model, self.sigma_true))
        beta = np.array(self.beta_true, dtype=float)
        beta.setflags(write=False)
        object.__setattr__(self, "beta_true", beta)
        if beta.shape != (self.model.p,):
            raise ValueError(f"beta_true has shape {beta.shape}, expected ({self.model.p},)")
        if not self.targets:
            raise ValueError("at least one prediction target is required")
        object.__setattr__(self, "methods", tuple(as_method(m) for m in self.methods))
        if self.replicates < 2:
            raise ValueError("replicates must be at least 2")
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise ValueError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
        if np.any(self.sigma_true <= BOUNDARY_TOL):
            _warnings.warn(
                "sigma_true has boundary components; the MSE theory assumes an "
                "interior truth", RuntimeWarning, stacklevel=2,
            )


@dataclass(frozen=True, eq=False)
class McCell:
    """Aggregates for one target under one method."""

    target: str
    method: str
    emp_mse_eblup: float
    emp_mse_eblup_se: float
    emp_mse_blup: float
    emp_mse_blup_se: float
    estimator_mean: dict[str, float]
    estimator_se: dict[str, float]
    relative_bias: dict[str, float]
    g3_data_mean: float | None
    g3_data_se: float | None
    analytic_naive: float
    analytic_mse_approx: float | None


@dataclass(frozen=True, eq=False)
class MethodDiagnostics:
    """Score moments at the true sigma plus boundary/failure bookkeeping."""

    method: str
    score_mean: np.ndarray
    score_se: np.ndarray
    score_target: np.ndarray
    score_z: np.ndarray
    n_boundary: int
    boundary_rate: float


@dataclass(frozen=True, eq=False)
class McReport:
    replicates: int
    n_used: int
    n_failed: int
    failure_rate: float
    base_seed: int
    cells: tuple[McCell, ...]
    diagnostics: tuple[MethodDiagnostics, ...]


@dataclass
class _Replicate:
    ok: bool
    error: str = ""
    blup_sq_err: list[float] = field(default_factory=list)
    mu: list[float] = field(default_factory=list)
    per_method: dict[str, dict] = field(default_factory=dict)


# --------------------------------------------------------------------------
# aggregation helpers (index-ordered, compensated)
# --------------------------------------------------------------------------


def _mean(xs: list[float]) -> float:
    return math.fsum(xs) / len(xs)


def _mean_se(xs: list[float]) -> tuple[float, float]:
    n = len(xs)
    m = _mean(xs)
    var = math.fsum((x - m) ** 2 for x in xs) / (n - 1)
    return m, math.sqrt(var / n)


def _safe_z(diff: np.ndarray, se: np.ndarray) -> np.ndarray:
    """diff/se with exact hits at zero spread (e.g. A = 0) counted as z = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where((se == 0.0) & (diff == 0.0), 0.0, diff / se)


def _thread_count(n_jobs: int) -> int:
    env = os.environ.get("EBLUP_THREADS", "").strip()
    if env:
        cap = max(1, int(env))
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_jobs))


# --------------------------------------------------------------------------
# the study driver
# --------------------------------------------------------------------------


def _run_replicate(config: McConfig, r: int) -> _Replicate:
    model = config.model
    rec = _Replicate(ok=True)
    try:
        y, v = _draw(model, config.sigma_true, config.beta_true, config.base_seed + r)
        rec.mu = [float(t.l @ config.beta_true + t.m @ v) for t in config.targets]
        for k, t in enumerate(config.targets):
            b = blup(model, config.sigma_true, y, t)
            rec.blup_sq_err.append((b.value - rec.mu[k]) ** 2)
        want_data = "data_specific" in config.estimators
        for method in config.methods:
            res = fit(model, y, method=method)
            entry = {
                "boundary": bool(res.boundary_hit),
                "score_true": score_at(SigmaPoint(model, config.sigma_true), y, method),
                "targets": [],
            }
            for k, t in enumerate(config.targets):
                rep = mse_estimators(model, res, y, t, data_specific=want_data)
                pred = blup(model, res.sigma_hat, y, t)
                values = {"naive": rep.naive}
                if rep.prasad_rao is not None:
                    values["prasad_rao"] = rep.prasad_rao
                    values["second_order"] = rep.second_order
                if rep.g3_data is not None:
                    values["data_specific"] = rep.naive + 2.0 * rep.g3_data
                entry["targets"].append(
                    {
                        "sq_err": (pred.value - rec.mu[k]) ** 2,
                        "estimators": values,
                        "g3_data": rep.g3_data,
                    }
                )
            rec.per_method[method] = entry
    except Exception as err:  # noqa: BLE001 - replicate failures are data
        return _Replicate(ok=False, error=f"{type(err).__name__}: {err}")
    return rec


def run_study(config: McConfig) -> McReport:
    """Run the full study and aggregate into an McReport.

    Replicates run in parallel (capped by EBLUP_THREADS); failures are
    recorded and excluded, and a failure rate above 1% aborts with
    SimulationError.  Aggregation is ordered by replicate index, so the
    report does not depend on scheduling.
    """
    n_rep = config.replicates
    workers = _thread_count(n_rep)
    if workers == 1:
        records = [_run_replicate(config, r) for r in range(n_rep)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda r: _run_replicate(config, r), range(n_rep)))

    used = [rec for rec in records if rec.ok]
    n_failed = n_rep - len(used)
    failure_rate = n_failed / n_rep
    if failure_rate > MAX_FAILURE_RATE:
        examples = [rec.error for rec in records if not rec.ok][:3]
        raise SimulationError(
            f"{n_failed}/{n_rep} replicates failed (first errors: {examples})"
        )
    if not used:
        raise SimulationError("no replicate succeeded")

    model = config.model
    sp_true = SigmaPoint(model, config.sigma_true)
    cells = []
    diagnostics = []
    for method in config.methods:
        mean_score = []
        se_score = []
        per_rep_scores = [rec.per_method[method]["score_true"] for rec in used]
        for i in range(model.s):
            m, se = _mean_se([float(s[i]) for s in per_rep_scores])
            mean_score.append(m)
            se_score.append(se)
        if method == "ML":
            target_vec = -ml_score_bias_at(sp_true)
        else:
            target_vec = np.zeros(model.s)
        mean_arr = np.array(mean_score)
        se_arr = np.array(se_score)
        z = _safe_z(mean_arr - target_vec, se_arr)
        n_boundary = sum(1 for rec in used if rec.per_method[method]["boundary"])
        diagnostics.append(
            MethodDiagnostics(
                method=method,
                score_mean=mean_arr,
                score_se=se_arr,
                score_target=target_vec,
                score_z=z,
                n_boundary=n_boundary,
                boundary_rate=n_boundary / len(used),
            )
        )
        for k, t in enumerate(config.targets):
            emp, emp_se = _mean_se(
                [rec.per_method[method]["targets"][k]["sq_err"] for rec in used]
            )
            emp_blup, emp_blup_se = _mean_se([rec.blup_sq_err[k] for rec in used])
            est_mean: dict[str, float] = {}
            est_se: dict[str, float] = {}
            rel_bias: dict[str, float] = {}
            for name in config.estimators:
                vals = [
                    rec.per_method[method]["targets"][k]["estimators"][name]
                    for rec in used
                    if name in rec.per_method[method]["targets"][k]["estimators"]
                ]
                if not vals:
                    continue
                m, se = _mean_se(vals)
                est_mean[name] = m
                est_se[name] = se
                rel_bias[name] = (m - emp) / emp if emp > 0 else math.nan
            g3d = [
                rec.per_method[method]["targets"][k]["g3_data"]
                for rec in used
                if rec.per_method[method]["targets"][k]["g3_data"] is not None
            ]
            g3_mean, g3_se = _mean_se(g3d) if len(g3d) >= 2 else (None, None)
            try:
                approx = mse_true_approx(model, config.sigma_true, t, method)
            except ArithmeticError:
                approx = None
            cells.append(
                McCell(
                    target=t.name or f"target{k}",
                    method=method,
                    emp_mse_eblup=emp,
                    emp_mse_eblup_se=emp_se,
                    emp_mse_blup=emp_blup,
                    emp_mse_blup_se=emp_blup_se,
                    estimator_mean=est_mean,
                    estimator_se=est_se,
                    relative_bias=rel_bias,
                    g3_data_mean=g3_mean,
                    g3_data_se=g3_se,
                    analytic_naive=_g1_at(sp_true, t) + _g2_at(sp_true, t),
                    analytic_mse_approx=approx,
                )
            )
    return McReport(
        replicates=n_rep,
        n_used=len(used),
        n_failed=n_failed,
        failure_rate=failure_rate,
        base_seed=config.base_seed,
        cells=tuple(cells),
        diagnostics=tuple(diagnostics),
    )


# --------------------------------------------------------------------------
# moment diagnostics
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScoreMomentRecord:
    """Monte Carlo score moments against their analytic targets."""

    method: str
    replicates: int
    mean: np.ndarray
    se: np.ndarray
    mean_target: np.ndarray
    mean_z: np.ndarray
    cov: np.ndarray
    cov_se: np.ndarray
    cov_target: np.ndarray
    cov_z: np.ndarray


def score_moment_check(
    model: MixedModel, sigma_true, beta_true, replicates: int, seed: int,
    method: str = "REML",
) -> ScoreMomentRecord:
    """Check E(score) and cov(score) at the true sigma by simulation.

    The REML score has mean 0; the ML score has mean -g_M0.  Both share the
    same quadratic part, so the covariance target is the REML Fisher
    information either way.
    """
    method = as_method(method)
    sp = SigmaPoint(model, sigma_true)
    scores = np.empty((replicates, model.s))
    for r in range(replicates):
        y = simulate_dataset(model, sigma_true, beta_true, seed + r)
        scores[r] = score_at(sp, y, method)
    mean = scores.mean(axis=0)
    se = scores.std(axis=0, ddof=1) / math.sqrt(replicates)
    target = -ml_score_bias_at(sp) if method == "ML" else np.zeros(model.s)
    centered = scores - mean
    cov = centered.T @ centered / (replicates - 1)
    prods = centered[:, :, None] * centered[:, None, :]
    cov_se = prods.std(axis=0, ddof=1) / math.sqrt(replicates)
    cov_target = -information_at(sp, "REML")
    return ScoreMomentRecord(
        method=method,
        replicates=replicates,
        mean=mean,
        se=se,
        mean_target=target,
        mean_z=_safe_z(mean - target, se),
        cov=cov,
        cov_se=cov_se,
        cov_target=cov_target,
        cov_z=_safe_z(cov - cov_target, cov_se),
    )


@dataclass(frozen=True, eq=False)
class QuadraticMomentRecord:
    """Monte Carlo check of the three Gaussian quadratic-form identities.

    For u ~ N(0, S) and symmetric A1, A2, with q_j = u'A_j u - tr(A_j S):
    (i)  E[u q_1 u']  = 2 S A1 S
    (ii) E[q_1 q_2]   = 2 tr(A1 S A2 S)
    (iii) E[u q_1 q_2 u'] = 2 tr(A1 S A2 S) S + 4 S A1 S A2 S + 4 S A2 S A1 S
    """

    replicates: int
    vec_mc: np.ndarray
    vec_target: np.ndarray
    vec_z: np.ndarray
    scalar_mc: float
    scalar_target: float
    scalar_z: float
    matrix_mc: np.ndarray
    matrix_target: np.ndarray
    matrix_z: np.ndarray
    max_abs_z: float


def quadratic_moment_check(
    sigma_matrix, A1, A2, replicates: int, seed: int
) -> QuadraticMomentRecord:
    """Simulate the Gaussian fourth/sixth-moment identities behind the MSE algebra."""
    S = np.asarray(sigma_matrix, dtype=float)
    A1 = np.asarray(A1, dtype=float)
    A2 = np.asarray(A2, dtype=float)
    k = S.shape[0]
    for name, mat in (("sigma_matrix", S), ("A1", A1), ("A2", A2)):
        if mat.shape != (k, k):
            raise ValueError(f"{name} has shape {mat.shape}, expected ({k}, {k})")
        if not np.allclose(mat, mat.T, atol=1e-12):
            raise ValueError(f"{name} must be symmetric")
    L = np.linalg.cholesky(S)
    rng = np.random.Generator(np.random.Philox(seed))
    U = rng.standard_normal((replicates, k)) @ L.T
    q1 = np.einsum("ri,ij,rj->r", U, A1, U) - np.trace(A1 @ S)
    q2 = np.einsum("ri,ij,rj->r", U, A2, U) - np.trace(A2 @ S)

    def _matrix_stats(weights: np.ndarray, target: np.ndarray):
        terms = weights[:, None, None] * (U[:, :, None] * U[:, None, :])
        mc = terms.mean(axis=0)
        se = terms.std(axis=0, ddof=1) / math.sqrt(replicates)
        return mc, _safe_z(mc - target, se)

    vec_target = 2.0 * S @ A1 @ S
    vec_mc, vec_z = _matrix_stats(q1, vec_target)

    scalar_target = 2.0 * float(np.trace(A1 @ S @ A2 @ S))
    scalar_terms = q1 * q2
    scalar_mc = float(scalar_terms.mean())
    scalar_se = float(scalar_terms.std(ddof=1)) / math.sqrt(replicates)
    scalar_z = float(_safe_z(np.array(scalar_mc - scalar_target), np.array(scalar_se)))

    matrix_target = (
        scalar_target * S + 4.0 * S @ A1 @ S @ A2 @ S + 4.0 * S @ A2 @ S @ A1 @ S
    )
    matrix_mc, matrix_z = _matrix_stats(q1 * q2, matrix_target)

    max_abs_z = max(
        float(np.max(np.abs(vec_z))), abs(scalar_z), float(np.max(np.abs(matrix_z)))
    )
    return QuadraticMomentRecord(
        replicates=replicates,
        vec_mc=vec_mc,
        vec_target=vec_target,
        vec_z=vec_z,
        scalar_mc=scalar_mc,
        scalar_target=scalar_target,
        scalar_z=scalar_z,
        matrix_mc=matrix_mc,
        matrix_target=matrix_target,
        matrix_z=matrix_z,
        max_abs_z=max_abs_z,
    )
