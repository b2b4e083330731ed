"""Closed-form optimal privacy-utility tradeoffs for known models.

All leakages are mutual informations in nats.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .autodiff import ContractError, DomainError

__all__ = [
    "ScalarGaussParams", "VectorGaussParams", "SymmetricPairParams",
    "scalar_ud_optimum", "scalar_fd_optimum", "vector_ud_optimum",
    "vector_params_from_covariances", "rate_distortion", "binary_entropy",
    "symmetric_pair_mi", "symmetric_pair_curves",
]

BISECTION_ITERS = 200
LEVEL_TOL = 1e-10


@dataclass(frozen=True)
class ScalarGaussParams:
    var_x: float = 1.0
    var_y: float = 1.0
    rho: float = 0.85

    def __post_init__(self):
        if self.var_x <= 0 or self.var_y <= 0:
            raise ValueError("variances must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")


@dataclass(frozen=True)
class VectorGaussParams:
    """Whitened description: singular values of the normalized cross-covariance and scale ``c``."""

    rhos: tuple[float, ...]
    c: float = 1.0
    m: int | None = None
    n: int | None = None

    def __post_init__(self):
        rhos = tuple(float(r) for r in self.rhos)
        object.__setattr__(self, "rhos", rhos)
        if not rhos or any(not 0.0 < r <= 1.0 for r in rhos):
            raise ValueError("singular values must lie in (0, 1]")
        if self.c <= 0:
            raise ValueError("c must be positive")


@dataclass(frozen=True)
class SymmetricPairParams:
    m: int = 4
    p: float = 0.25

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("alphabet size must be at least 2")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    def joint(self) -> np.ndarray:
        """P[x, y] with a uniform marginal on x."""
        m, p = self.m, self.p
        table = np.full((m, m), p / (m - 1) / m)
        np.fill_diagonal(table, (1.0 - p) / m)
        return table


class ScalarSolution(NamedTuple):
    leakage: float
    gain: float
    noise_var: float


class FullDataSolution(NamedTuple):
    """Optimal release ``Z = coef_x * X + coef_y * Y`` (no added noise)."""

    leakage: float
    coef_x: float
    coef_y: float


class WaterfillSolution(NamedTuple):
    leakage: float
    allocation: np.ndarray
    level: float


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if delta < 0 or np.isnan(delta):
        raise ContractError(f"distortion budget must be nonnegative, got {delta}")
    return delta


def scalar_ud_optimum(params: ScalarGaussParams, delta: float) -> ScalarSolution:
    """Least leakage when only ``Y`` is observed and ``E(Y-Z)^2 <= delta``.

    The optimal release is ``gain * Y + N(0, noise_var)``, or ``Z = 0`` once
    ``delta`` reaches ``var_y``.
    """
    delta = _check_delta(delta)
    if delta >= params.var_y:
        return ScalarSolution(0.0, 0.0, 0.0)
    ratio = delta / params.var_y
    r2 = params.rho ** 2
    with np.errstate(divide="ignore"):
        leakage = max(0.0, -0.5 * np.log(1.0 - r2 + r2 * ratio))
    return ScalarSolution(float(leakage), 1.0 - ratio, delta * (1.0 - ratio))


def scalar_fd_optimum(rho: float, delta: float) -> FullDataSolution:
    """Least leakage when both unit-variance attributes are observed."""
    delta = _check_delta(delta)
    if not 0.0 <= rho <= 1.0:
        raise ContractError("the full-data optimum is stated for rho in [0, 1]")
    r2 = rho * rho
    if delta >= r2:
        return FullDataSolution(0.0, -rho, 1.0)
    if r2 >= 1.0:
        raise DomainError("rho = 1 with delta < 1 has no finite full-data optimum")
    s = np.sqrt(delta * (1.0 - delta) / (1.0 - r2))
    corr = np.sqrt(r2 * (1.0 - delta)) - np.sqrt((1.0 - r2) * delta)
    leakage = -0.5 * np.log(1.0 - corr * corr)
    return FullDataSolution(float(leakage), float(-s), float(1.0 - delta + s * rho))


def _bisect_level(fill, target: float, hi: float) -> float:
    """Smallest-error level ``t`` in [0, hi] with nondecreasing ``fill(t) = target``."""
    lo = 0.0
    for _ in range(BISECTION_ITERS):
        mid = 0.5 * (lo + hi)
        total = fill(mid)
        if abs(total - target) < LEVEL_TOL:
            return mid
        if total < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def vector_ud_optimum(params: VectorGaussParams, delta: float) -> WaterfillSolution:
    """Modified waterfilling over whitened components.

    Component ``i`` receives normalized distortion
    ``clip(t - (rho_i^-2 - 1), 0, 1)``, the level ``t`` chosen so the
    allocations sum to ``delta / c``.
    """
    delta = _check_delta(delta)
    rhos = np.asarray(params.rhos)
    floors = rhos ** -2 - 1.0
    budget = delta / params.c
    if budget >= len(rhos):
        return WaterfillSolution(0.0, np.ones_like(rhos), float(floors.max() + 1.0))

    def fill(t):
        return np.clip(t - floors, 0.0, 1.0).sum()

    level = 0.0 if budget == 0 else _bisect_level(fill, budget, float(floors.max() + 1.0))
    alloc = np.clip(level - floors, 0.0, 1.0)
    r2 = rhos ** 2
    with np.errstate(divide="ignore"):
        leakage = np.maximum(0.0, -0.5 * np.log(1.0 - r2 + r2 * alloc)).sum()
    return WaterfillSolution(float(leakage), alloc, float(level))


def _inv_sqrt(S: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(S)
    if np.any(vals <= 0):
        raise ValueError("covariance must be positive definite")
    return (vecs / np.sqrt(vals)) @ vecs.T


def vector_params_from_covariances(cov_x, cov_y, cov_xy, atol: float = 1e-8) -> VectorGaussParams:
    """Whiten a jointly Gaussian ``(X, Y)`` and extract ``rho'_i`` and ``c``.

    Raises ``ValueError`` unless ``V^T cov_y V = c I`` for the right singular
    vectors ``V`` of the normalized cross-covariance, the case with a closed form.
    """
    cov_x, cov_y, cov_xy = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (cov_x, cov_y, cov_xy))
    normalized_cross = _inv_sqrt(cov_x) @ cov_xy @ _inv_sqrt(cov_y)
    _, singular_values, right_t = np.linalg.svd(normalized_cross)
    m, n = cov_x.shape[0], cov_y.shape[0]
    projected = right_t @ cov_y @ right_t.T
    c = float(np.trace(projected) / n)
    if np.max(np.abs(projected - c * np.eye(n))) > atol:
        raise ValueError("V^T cov_y V is not a multiple of the identity; no closed form")
    return VectorGaussParams(tuple(np.minimum(singular_values[: min(m, n)], 1.0)), c, m, n)


def rate_distortion(variances, distortion: float) -> WaterfillSolution:
    """Gaussian reverse waterfilling: ``D_j = min(var_j, w)`` with ``sum D_j = distortion``.

    The returned ``leakage`` is the rate ``R(distortion)`` in nats.
    """
    distortion = _check_delta(distortion)
    var = np.asarray(variances, dtype=np.float64)
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    if distortion >= var.sum():
        return WaterfillSolution(0.0, var.copy(), float(var.max()))
    level = _bisect_level(lambda w: np.minimum(var, w).sum(), distortion, float(var.max()))
    alloc = np.minimum(var, level)
    with np.errstate(divide="ignore"):
        rate = np.maximum(0.0, 0.5 * np.log(var / alloc)).sum()
    return WaterfillSolution(float(rate), alloc, float(level))


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * np.log(p) - (1.0 - p) * np.log(1.0 - p))


def symmetric_pair_mi(m: int, p: float) -> float:
    """``I(X;Y) = log m - p log(m-1) - h2(p)`` for the symmetric pair."""
    return float(max(0.0, np.log(m) - p * np.log(m - 1) - binary_entropy(p)))


def symmetric_pair_curves(params: SymmetricPairParams, delta: float, observation: str = "useful") -> float:
    """Optimal leakage under a probability-of-error budget.

    ``observation`` is ``"full"`` (the mechanism sees X and Y) or ``"useful"``
    (it sees Y only).
    """
    delta = _check_delta(delta)
    if delta > 1.0:
        raise ContractError("a probability-of-error budget lies in [0, 1]")
    m, p = params.m, params.p
    if observation in ("full", "full_data", "FullData"):
        if delta <= 1.0 - 1.0 / m - p:
            return symmetric_pair_mi(m, p + delta)
        if delta <= p - (1.0 - 1.0 / m):
            return symmetric_pair_mi(m, p - delta)
        return 0.0
    if observation in ("useful", "useful_only", "UsefulOnly"):
        if delta < 1.0 - 1.0 / m:
            return symmetric_pair_mi(m, p + delta * (1.0 - p * m / (m - 1)))
        return 0.0
    raise ValueError(f"unknown observation model {observation!r}")
