"""Shared test fixtures: random model instances with independently built
dense ingredients, plus finite-difference helpers.

Each maker returns (model, y, aux) where aux reconstructs Sigma and its
derivative matrices straight from the raw design quantities, bypassing the
library's covariance assembly, so tests compare two genuinely different
routes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from eblup import build_anova, build_fay_herriot, build_nested_error


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class DenseAux:
    sigma_of: callable
    v_mats: list
    X: np.ndarray


def make_fay_herriot(gen, t=10, p=2):
    phi = gen.uniform(0.5, 2.0, size=t)
    cols = [np.ones(t)] + [gen.normal(size=t) for _ in range(p - 1)]
    X = np.column_stack(cols)
    y = gen.normal(size=t)
    model = build_fay_herriot(y, phi, X)
    aux = DenseAux(
        sigma_of=lambda s: s[0] * np.eye(t) + np.diag(phi),
        v_mats=[np.eye(t)],
        X=X,
    )
    return model, y, aux


def make_nested_error(gen, t=7, p=2, max_size=4):
    sizes = gen.integers(1, max_size + 1, size=t)
    groups = np.repeat(np.arange(t), sizes)
    n = int(sizes.sum())
    X = np.column_stack([np.ones(n)] + [gen.normal(size=n) for _ in range(p - 1)])
    y = gen.normal(size=n)
    model = build_nested_error(y, groups, X)
    blocks = [np.ones((k, k)) for k in sizes]
    V1 = block_diag(*blocks)
    aux = DenseAux(
        sigma_of=lambda s: s[0] * np.eye(n) + s[1] * V1,
        v_mats=[np.eye(n), V1],
        X=X,
    )
    return model, y, aux


def make_anova(gen, n=12, r1=3, r2=4):
    # two crossed one-hot blocks over random level assignments
    Z1 = np.zeros((n, r1))
    Z1[np.arange(n), gen.integers(0, r1, size=n)] = 1.0
    Z2 = np.zeros((n, r2))
    Z2[np.arange(n), gen.integers(0, r2, size=n)] = 1.0
    X = np.column_stack([np.ones(n), gen.normal(size=n)])
    y = gen.normal(size=n)
    model = build_anova(X, [Z1, Z2])
    V1 = Z1 @ Z1.T
    V2 = Z2 @ Z2.T
    aux = DenseAux(
        sigma_of=lambda s: s[0] * np.eye(n) + s[1] * V1 + s[2] * V2,
        v_mats=[np.eye(n), V1, V2],
        X=X,
    )
    return model, y, aux


MAKERS = {
    "fay-herriot": make_fay_herriot,
    "nested-error": make_nested_error,
    "anova": make_anova,
}


def dense_proj(X, Sigma):
    Si = np.linalg.inv(Sigma)
    G = X.T @ Si @ X
    return Si - Si @ X @ np.linalg.inv(G) @ X.T @ Si


def loglik_dense(X, Sigma, y, method):
    """Direct-formula loglikelihood, all inverses explicit."""
    Si = np.linalg.inv(Sigma)
    G = X.T @ Si @ X
    P = dense_proj(X, Sigma)
    _, ld_s = np.linalg.slogdet(Sigma)
    q = float(y @ P @ y)
    if method == "REML":
        _, ld_g = np.linalg.slogdet(G)
        return -0.5 * (ld_s + ld_g + q)
    return -0.5 * (ld_s + q)


def fd_grad(f, x, h_rel=1e-5):
    x = np.asarray(x, dtype=float)
    out = np.empty(x.size)
    for i in range(x.size):
        h = h_rel * (1.0 + abs(x[i]))
        hi = x.copy()
        lo = x.copy()
        hi[i] += h
        lo[i] -= h
        out[i] = (f(hi) - f(lo)) / (2.0 * h)
    return out


def fd_jacobian(f, x, h_rel=1e-5):
    """Columns are central differences of the vector-valued f."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        h = h_rel * (1.0 + abs(x[j]))
        hi = x.copy()
        lo = x.copy()
        hi[j] += h
        lo[j] -= h
        cols.append((np.asarray(f(hi)) - np.asarray(f(lo))) / (2.0 * h))
    return np.column_stack(cols)
