"""Training objectives and distortion measures.

Every objective is written so that the release mechanism *minimizes* and the
adversary (and discriminator) *maximizes* the same scalar. All objectives
return the mean over the batch.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .nets import one_hot

__all__ = [
    "DistortionFn", "Lagrangian", "Penalty", "squared_error", "zero_one",
    "pixel_bernoulli_ce", "zero_one_matrix", "distortion_cost", "ppan_loss",
    "finite_loss", "gauss_loss", "mnist_loss", "gmm_loss", "mi_utility_loss",
]


def squared_error(y, z: Tensor) -> Tensor:
    """Per-row ``||y - z||^2``."""
    z = ad.as_tensor(z)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64).reshape(z.shape)
    return ad.square(z - y).sum(axis=1)


def zero_one(y, z) -> Tensor:
    """Per-row ``1[y != z]`` for symbol arrays (not differentiable)."""
    y = np.asarray(y).reshape(-1)
    z = np.asarray(z.data if isinstance(z, Tensor) else z).reshape(-1)
    return Tensor((y != z).astype(np.float64))


def pixel_bernoulli_ce(y, z: Tensor, eps: float = ad.PROB_EPS) -> Tensor:
    """Mean per-pixel Bernoulli cross-entropy of released pixels ``z`` against ``y``."""
    z = ad.clip(ad.as_tensor(z), eps, 1.0 - eps)
    y = np.asarray(y, dtype=np.float64).reshape(z.shape)
    ll = ad.log(z) * y + ad.log(1.0 - z) * (1.0 - y)
    return ll.sum(axis=1) * (-1.0 / z.shape[1])


def zero_one_matrix(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)


class DistortionFn(str, enum.Enum):
    SQUARED_ERROR = "squared_error"
    ZERO_ONE = "zero_one"
    PIXEL_BERNOULLI_CE = "pixel_bernoulli_ce"

    def __call__(self, y, z) -> Tensor:
        return _DISTORTIONS[self](y, z)


_DISTORTIONS = {
    DistortionFn.SQUARED_ERROR: squared_error,
    DistortionFn.ZERO_ONE: zero_one,
    DistortionFn.PIXEL_BERNOULLI_CE: pixel_bernoulli_ce,
}


@dataclass(frozen=True)
class Lagrangian:
    """Distortion enters linearly as ``lam * d``."""

    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")


@dataclass(frozen=True)
class Penalty:
    """Squared hinge ``lam * max(0, d - delta)^2`` on the budget excess.

    With ``on_expectation`` the hinge is applied to the batch-mean distortion
    rather than to each release separately.
    """

    lam: float
    delta: float
    on_expectation: bool = False

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")


def _budget(budget) -> Lagrangian | Penalty:
    if isinstance(budget, (Lagrangian, Penalty)):
        return budget
    return Lagrangian(float(budget))


def distortion_cost(d: Tensor, budget, weights: Tensor | None = None) -> Tensor:
    """Mean budget cost of per-release distortions ``d`` (any shape, batch first).

    ``weights`` (same shape as ``d``) turns the mean over releases into an
    expectation, as for a categorical or mixture release.
    """
    budget = _budget(budget)
    n = d.shape[0]
    if isinstance(budget, Penalty) and budget.on_expectation:
        expected = (d * weights if weights is not None else d).sum() * (1.0 / n)
        if weights is None and d.ndim > 1:
            expected = expected * (1.0 / np.prod(d.shape[1:]))
        return ad.square(ad.relu(expected - budget.delta)) * budget.lam
    if isinstance(budget, Penalty):
        cost = ad.square(ad.relu(d - budget.delta)) * budget.lam
    else:
        cost = d * budget.lam
    if weights is not None:
        return (cost * weights).sum() * (1.0 / n)
    return cost.mean()


def ppan_loss(x, y, releases, adversary, distortion=DistortionFn.SQUARED_ERROR, budget=1.0) -> Tensor:
    """Sampled objective: mean over k releases of ``log Q(x|z) + cost(d(y, z))``."""
    if isinstance(releases, Tensor):
        releases = [releases]
    if len(releases) < 1:
        raise ContractError("ppan_loss needs at least one release")
    log_q = ad.concat([adversary.log_prob(x, z).reshape(-1, 1) for z in releases], axis=1)
    d = ad.concat([distortion(y, z).reshape(-1, 1) for z in releases], axis=1)
    return log_q.mean() + distortion_cost(d, budget)


def finite_loss(x, y, probs: Tensor, adversary, distortion_matrix, budget=1.0, atol: float = 1e-9) -> Tensor:
    """Exact expectation over a finite release alphabet.

    ``probs[i, z]`` is the mechanism pmf for row ``i``; ``distortion_matrix[y, z]``
    gives ``d(y, z)``. No releases are sampled.
    """
    probs = ad.as_tensor(probs)
    if np.any(np.abs(probs.data.sum(axis=1) - 1.0) > atol) or np.any(probs.data < 0):
        raise ContractError("mechanism output rows must be probability vectors")
    table = adversary.log_prob_table()  # (n_z, n_x)
    x_hot = one_hot(x, table.shape[1])
    log_q = ad.matmul(Tensor(x_hot), table.T)  # (batch, n_z)
    costs = Tensor(np.asarray(distortion_matrix, dtype=np.float64)[np.asarray(y, dtype=np.int64)])
    privacy = (probs * log_q).sum() * (1.0 / probs.shape[0])
    return privacy + distortion_cost(costs, budget, weights=probs)


def gauss_loss(x, y, z, adversary, delta: float, lam: float) -> Tensor:
    """``log Q(x|z) + lam * max(0, ||y - z||^2 - delta)^2`` with one release per row."""
    return ppan_loss(x, y, [z], adversary, DistortionFn.SQUARED_ERROR, Penalty(lam, delta))


def mnist_loss(x, y, z, adversary, discriminator=None, lam: float = 1.0, gamma: float = 0.0,
               distortion=DistortionFn.PIXEL_BERNOULLI_CE) -> Tensor:
    """Privacy + distortion + ``gamma`` times the discriminator's log-likelihood terms."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    loss = ppan_loss(x, y, [z], adversary, distortion, Lagrangian(lam))
    if gamma == 0:
        return loss
    if discriminator is None:
        raise ContractError("gamma > 0 needs a discriminator")
    d_fake = ad.clip(discriminator(z), ad.PROB_EPS, 1.0)
    d_real = ad.clip(1.0 - discriminator(np.asarray(y, dtype=np.float64)), ad.PROB_EPS, 1.0)
    return loss + (ad.log(d_fake).mean() + ad.log(d_real).mean()) * gamma


def gmm_loss(x, y, components, adversary, distortion=DistortionFn.SQUARED_ERROR, budget=1.0) -> Tensor:
    """Mixture-weighted objective ``sum_l pi_l (log Q(x|z_l) + cost(d(y, z_l)))``."""
    weights = ad.concat([pi.reshape(-1, 1) for pi, _ in components], axis=1)
    if np.any(np.abs(weights.data.sum(axis=1) - 1.0) > 1e-9):
        raise ContractError("mixture weights must sum to one")
    log_q = ad.concat([adversary.log_prob(x, z).reshape(-1, 1) for _, z in components], axis=1)
    d = ad.concat([distortion(y, z).reshape(-1, 1) for _, z in components], axis=1)
    n = weights.shape[0]
    return (weights * log_q).sum() * (1.0 / n) + distortion_cost(d, budget, weights=weights)


def mi_utility_loss(x, y, z, adversary, decoder, lam: float) -> Tensor:
    """``log Q_X(x|z) - lam * log Q_Y(y|z)``: privacy funnel with a learned utility decoder."""
    loss = adversary.log_prob(x, z).mean()
    if lam == 0:
        return loss
    return loss - decoder.log_prob(y, z).mean() * lam
