"""Kronecker algebra for balanced ANOVA designs.

A balanced design with w factors and within-cell repetition has every design
matrix of the form kron(1_{n_1}^{b_1}, ..., 1_{n_{w+1}}^{b_{w+1}}) for a bit
tuple b, where 1^0 = I and 1^1 = the all-ones column.  Sigma is then a sum of
Kronecker products of I's and J's (J = all-ones square), and so is its
inverse, with closed-form coefficients.  That structure also yields the
projection shortcut P = {I - (p/n) X X'} Sigma^-1 and a BLUP evaluation that
touches y only through O(2^w) structured sums.

Everything here is cross-checked against the dense model-core path; the
coefficient bookkeeping (componentwise partial order, alternating signs) is
exactly the kind of thing a second route catches.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from itertools import product

import numpy as np

from .exceptions import OutsideParameterSpace
from .likelihood import projection_p
from .model import BOUNDARY_TOL, MixedModel, build_anova

Bits = tuple[int, ...]


# --------------------------------------------------------------------------
# design description
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BalancedDesign:
    """A balanced w-factor layout with repetition as factor w+1.

    levels: cell counts (n_1, ..., n_{w+1}); the total size is their product.
    effects: the random-effect index set, one bit tuple per effect; bit l = 1
        means the effect is constant across factor l.  The residual (all-zero
        tuple) is implicit and always present.
    s_index: the bit tuple generating X; (1, ..., 1) gives the intercept-only
        design.  Both s_index and every effect must have last bit 1 (nothing
        varies within a cell).

    sigma arguments are arrays (sigma_0, then one entry per effect, in the
    order given here).
    """

    levels: tuple[int, ...]
    effects: tuple[Bits, ...]
    s_index: Bits

    def __post_init__(self):
        if len(self.levels) < 2:
            raise ValueError("need at least one factor plus the repetition level")
        if any(not isinstance(n, int) or n < 1 for n in self.levels):
            raise ValueError(f"levels must be positive integers, got {self.levels}")
        if not self.effects:
            raise ValueError("at least one random effect is required")
        if len(set(self.effects)) != len(self.effects):
            raise ValueError("duplicate effect index tuples")
        for bits in self.effects + (self.s_index,):
            self._check_bits(bits)
            if bits[-1] != 1:
                raise ValueError(f"last bit must be 1 (within-cell repetition): {bits}")

    def _check_bits(self, bits: Bits) -> None:
        if len(bits) != len(self.levels) or any(b not in (0, 1) for b in bits):
            raise ValueError(
                f"index tuple {bits} is not a 0/1 tuple of length {len(self.levels)}"
            )

    @property
    def w(self) -> int:
        return len(self.levels) - 1

    @property
    def n(self) -> int:
        return int(np.prod(self.levels))

    def r(self, bits: Bits) -> int:
        """Number of columns of the design matrix for ``bits``."""
        self._check_bits(bits)
        return int(np.prod([n for n, b in zip(self.levels, bits) if b == 0]))

    @property
    def p(self) -> int:
        return self.r(self.s_index)

    def cube(self):
        """All bit tuples of length w+1, in a fixed lexicographic order."""
        return [t for t in product((0, 1), repeat=len(self.levels))]


@dataclass(frozen=True, eq=False)
class KronCoefficients:
    """Coefficients of Sigma or Sigma^-1 over the Kronecker basis.

    coeff maps every bit tuple of the cube to a real; expand() turns the map
    into the dense matrix sum(coeff[i] * kron_l J^{i_l}).
    """

    coeff: dict[Bits, float]


def _check_sigma(design: BalancedDesign, sigma) -> np.ndarray:
    values = np.asarray(sigma, dtype=float)
    if values.shape != (1 + len(design.effects),):
        raise ValueError(
            f"sigma has shape {values.shape}, expected ({1 + len(design.effects)},)"
        )
    values = values.copy()
    for i, v in enumerate(values):
        if i == 0:
            if v <= BOUNDARY_TOL:
                raise OutsideParameterSpace(0, "sigma[0] must be strictly positive")
        elif v < -BOUNDARY_TOL:
            raise OutsideParameterSpace(i)
        elif v < 0.0:
            values[i] = 0.0
    return values


# --------------------------------------------------------------------------
# coefficient maps
# --------------------------------------------------------------------------


def sigma_coefficients(design: BalancedDesign, sigma) -> KronCoefficients:
    """Coefficients of Sigma itself: sigma_0 at the zero tuple, sigma_i at effect i."""
    values = _check_sigma(design, sigma)
    zero = (0,) * len(design.levels)
    coeff = {bits: 0.0 for bits in design.cube()}
    coeff[zero] = float(values[0])
    for k, bits in enumerate(design.effects):
        coeff[bits] += float(values[1 + k])
    return KronCoefficients(coeff)


def _leq(a: Bits, b: Bits) -> bool:
    return all(x <= y for x, y in zip(a, b))


def tau_coefficients(design: BalancedDesign, sigma) -> KronCoefficients:
    """Coefficients of Sigma^-1 over the same basis.

    tau_i = (r_i/n) sum over j <= i (componentwise) of
    (-1)^(number of l with i_l=1, j_l=0) / D(j), where D(j) accumulates
    sigma_0 plus sigma_k * (n/r_k) over effects k <= j.
    """
    values = _check_sigma(design, sigma)
    n = design.n
    cube = design.cube()
    d = {}
    for j in cube:
        dj = values[0]
        for k, bits in enumerate(design.effects):
            if _leq(bits, j):
                dj += values[1 + k] * (n / design.r(bits))
        d[j] = dj
    coeff = {}
    for i in cube:
        total = 0.0
        for j in cube:
            if _leq(j, i):
                flips = sum(1 for a, b in zip(i, j) if a == 1 and b == 0)
                total += (-1.0) ** flips / d[j]
        coeff[i] = design.r(i) / n * total
    return KronCoefficients(coeff)


def expand(design: BalancedDesign, coeffs: KronCoefficients) -> np.ndarray:
    """Dense n x n expansion of a coefficient map (the test-oracle bridge)."""
    n = design.n
    out = np.zeros((n, n))
    for bits, c in coeffs.coeff.items():
        design._check_bits(bits)
        if c == 0.0:
            continue
        mats = [np.ones((m, m)) if b else np.eye(m) for m, b in zip(design.levels, bits)]
        out += c * reduce(np.kron, mats)
    return out


# --------------------------------------------------------------------------
# design matrices and the model-core bridge
# --------------------------------------------------------------------------


def _ones_kron(levels: tuple[int, ...], bits: Bits) -> np.ndarray:
    mats = [np.ones((m, 1)) if b else np.eye(m) for m, b in zip(levels, bits)]
    return reduce(np.kron, mats)


def design_matrices(design: BalancedDesign) -> tuple[np.ndarray, list[np.ndarray]]:
    """Dense (X, [Z_i per effect]) for the design."""
    X = _ones_kron(design.levels, design.s_index)
    Z = [_ones_kron(design.levels, bits) for bits in design.effects]
    return X, Z


def to_model(design: BalancedDesign) -> MixedModel:
    """The equivalent dense variance-component model (same sigma ordering)."""
    X, Z = design_matrices(design)
    return build_anova(X, Z)


def apply_j_product(levels: tuple[int, ...], bits: Bits, vec) -> np.ndarray:
    """Apply kron_l J^{b_l} to a vector by axis sums, never forming the matrix."""
    t = np.asarray(vec, dtype=float).reshape(levels)
    for ax, b in enumerate(bits):
        if b:
            t = t.sum(axis=ax, keepdims=True)
    return np.array(np.broadcast_to(t, levels)).reshape(-1)


# --------------------------------------------------------------------------
# the balanced-design shortcuts
# --------------------------------------------------------------------------


def projection_identity_check(design: BalancedDesign, sigma) -> tuple[bool, float]:
    """Residual of P = {I - (p/n) X X'} Sigma^-1 on this design.

    The left side is the generic projection from the likelihood module, the
    right side uses the closed-form inverse coefficients; returns
    (residual < 1e-10, residual).
    """
    model = to_model(design)
    P = projection_p(model, sigma)
    X, _ = design_matrices(design)
    sigma_inv = expand(design, tau_coefficients(design, sigma))
    rhs = sigma_inv - (design.p / design.n) * (X @ (X.T @ sigma_inv))
    residual = float(np.max(np.abs(P - rhs)))
    return residual < 1e-10, residual


def blup_kron(design: BalancedDesign, sigma, y, effect) -> np.ndarray:
    """Random-effect BLUP for one effect via the structured evaluation.

    effect is an index into design.effects or the bit tuple itself.  The
    predictor is sigma_i Z_i'{I - (p/n) X X'} Sigma^-1 y, with Sigma^-1 y
    assembled from the tau coefficients through axis sums.
    """
    values = _check_sigma(design, sigma)
    if isinstance(effect, int):
        idx = effect
        if not 0 <= idx < len(design.effects):
            raise ValueError(f"effect index {effect} outside 0..{len(design.effects) - 1}")
    else:
        bits = tuple(effect)
        if bits not in design.effects:
            raise ValueError(f"{bits} is not an effect of this design")
        idx = design.effects.index(bits)
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n,):
        raise ValueError(f"y has shape {y.shape}, expected ({design.n},)")

    tau = tau_coefficients(design, values)
    u = np.zeros(design.n)
    for bits, c in tau.coeff.items():
        if c != 0.0:
            u += c * apply_j_product(design.levels, bits, y)
    X, Z = design_matrices(design)
    mu = u - (design.p / design.n) * (X @ (X.T @ u))
    return values[1 + idx] * (Z[idx].T @ mu)
