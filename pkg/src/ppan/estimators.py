"""Post-training evaluation: leakage estimates, distortion and adversary accuracy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError

__all__ = [
    "TradeoffPoint", "MI_CAP", "gaussian_mi_estimate", "exact_discrete_mi",
    "variational_mi_lower_bound", "empirical_distortion", "adversary_accuracy",
]

MI_CAP = 50.0
PINV_RCOND = 1e-10
LOG_DET_FLOOR = np.log(1e-300)


@dataclass
class TradeoffPoint:
    """One trained operating point: achieved distortion against estimated leakage."""

    delta_target: float
    empirical_distortion: float
    leakage_nats: float
    estimator: str
    adversary_accuracy: float | None = None
    oracle_leakage_nats: float | None = None
    lam: float | None = None
    seed: int | None = None
    model_id: str = ""
    status: str = "ok"
    history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if np.isfinite(self.leakage_nats):
            self.leakage_nats = max(0.0, float(self.leakage_nats))

    @property
    def capped(self) -> bool:
        return self.leakage_nats >= MI_CAP


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a.data if isinstance(a, ad.Tensor) else a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def gaussian_mi_estimate(x, z) -> float:
    """Mutual information of the Gaussian fit to paired samples.

    ``0.5 log(det S_x / det S_x|z)`` with ``S_x|z = S_x - S_xz pinv(S_z) S_xz^T``.
    Clamped to ``[0, MI_CAP]``; ``MI_CAP`` flags a numerically singular residual
    (determinant below 1e-300, or an eigenvalue below ``PINV_RCOND`` times the
    largest eigenvalue of ``S_x``).
    """
    x, z = _as_2d(x), _as_2d(z)
    if len(x) < 2 or len(x) != len(z):
        raise ContractError("need at least two paired samples")
    dx = x.shape[1]
    cov = np.cov(np.concatenate([x, z], axis=1), rowvar=False).reshape(dx + z.shape[1], -1)
    s_x, s_xz, s_z = cov[:dx, :dx], cov[:dx, dx:], cov[dx:, dx:]
    s_cond = s_x - s_xz @ np.linalg.pinv(s_z, rcond=PINV_RCOND, hermitian=True) @ s_xz.T
    sign_x, logdet_x = np.linalg.slogdet(s_x)
    sign_c, logdet_c = np.linalg.slogdet(s_cond)
    if sign_x <= 0:
        raise ContractError("sensitive samples have a singular covariance")
    residual_floor = PINV_RCOND * np.linalg.eigvalsh(s_x).max()
    if sign_c <= 0 or logdet_c < LOG_DET_FLOOR or np.linalg.eigvalsh(s_cond).min() < residual_floor:
        return MI_CAP
    return float(np.clip(0.5 * (logdet_x - logdet_c), 0.0, MI_CAP))


def exact_discrete_mi(table) -> float:
    """``I(X;Z)`` in nats of a joint pmf or count table ``table[x, z]``."""
    p = np.asarray(table, dtype=np.float64)
    if np.any(p < 0):
        raise ContractError("joint table has negative entries")
    total = p.sum()
    if total <= 0:
        raise ContractError("joint table is all zeros")
    p = p / total
    px = p.sum(axis=1, keepdims=True)
    pz = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(max(0.0, np.sum(p[nz] * np.log(p[nz] / (px * pz)[nz]))))


def variational_mi_lower_bound(adversary, x, z, entropy_x: float) -> float:
    """``h(X) + mean log Q(x|z)``; reported raw, so it can be negative."""
    with ad.no_grad():
        return float(entropy_x + adversary.log_prob(x, z).data.mean())


def empirical_distortion(y, z, distortion) -> float:
    if len(y) == 0:
        raise ContractError("cannot average distortion over an empty set")
    with ad.no_grad():
        return float(distortion(y, z).data.mean())


def adversary_accuracy(adversary, x, z) -> float:
    """Fraction of releases whose most likely class is the true one."""
    x = np.asarray(x).reshape(-1)
    if x.size == 0:
        raise ContractError("cannot score an empty set")
    return float(np.mean(adversary.predict(z) == x))
