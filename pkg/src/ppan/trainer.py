"""Alternating gradient ascent/descent for the mechanism-versus-adversary game.

Per minibatch:

1. draw the seed noise and form releases (skipped for finite alphabets,
   where the exact expectation over releases is used instead);
2. evaluate the batch objective with the mechanism frozen;
3. ascend it in the adversary parameters ``adversary_steps`` times;
4. if a discriminator is present, ascend it once in the discriminator;
5. recompute the objective with the same noise and descend it in the
   mechanism (and utility decoder) parameters.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import AdamState, adam_step, zero_grad
from .datagen import Dataset, JointModel, rng_streams, sample
from .estimators import (
    TradeoffPoint, adversary_accuracy, exact_discrete_mi, gaussian_mi_estimate,
)
from .losses import DistortionFn, Lagrangian, Penalty
from .nets import AdversaryNet, CategoricalMechanism, GmmMechanism, UniversalMechanism

__all__ = [
    "TrainConfig", "TrainResult", "TrainingDivergedError", "Architecture", "train",
    "default_architecture", "build_networks", "evaluate", "sweep", "point_seed",
]

BUDGETS = ("penalty", "lagrangian", "penalty_expectation")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    minibatch_size: int = 200
    adversary_steps: int = 5
    k: int = 1
    lam: float = 10.0
    delta: float | None = None
    gamma: float = 0.0
    seed: int = 0
    budget: str = "penalty"
    distortion: DistortionFn = DistortionFn.SQUARED_ERROR

    def __post_init__(self):
        if self.epochs < 1 or self.minibatch_size < 1 or self.adversary_steps < 1 or self.k < 1:
            raise ValueError("epochs, minibatch_size, adversary_steps and k must all be >= 1")
        if self.budget not in BUDGETS:
            raise ValueError(f"budget must be one of {BUDGETS}, got {self.budget!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        object.__setattr__(self, "distortion", DistortionFn(self.distortion))

    @classmethod
    def mnist(cls, **overrides) -> "TrainConfig":
        base = dict(epochs=50, minibatch_size=100, adversary_steps=1, budget="lagrangian",
                    distortion=DistortionFn.PIXEL_BERNOULLI_CE)
        return cls(**{**base, **overrides})

    def budget_mode(self) -> Lagrangian | Penalty:
        if self.budget == "lagrangian":
            return Lagrangian(self.lam)
        if self.delta is None:
            raise ValueError("penalty budgets need a target delta")
        return Penalty(self.lam, self.delta, on_expectation=self.budget == "penalty_expectation")


class TrainingDivergedError(RuntimeError):
    """The objective became NaN or infinite."""


@dataclass
class TrainResult:
    history: list[float]
    iterations: int


def _releases(mechanism, w, noise):
    if isinstance(mechanism, CategoricalMechanism):
        return mechanism.distribution(w)
    if isinstance(mechanism, GmmMechanism):
        return mechanism.components_of(w, noise)
    return mechanism.release(w, noise)


def _objective(releases, batch: Dataset, adversary, cfg: TrainConfig, budget,
               discriminator=None, decoder=None, n_z: int | None = None) -> ad.Tensor:
    if n_z is not None:
        return losses.finite_loss(batch.x, batch.y, releases, adversary,
                                  losses.zero_one_matrix(n_z), budget)
    if isinstance(releases[0], tuple):
        return losses.gmm_loss(batch.x, batch.y, releases, adversary, cfg.distortion, budget)
    if decoder is not None:
        return losses.mi_utility_loss(batch.x, batch.y, releases[0], adversary, decoder, cfg.lam)
    if discriminator is not None:
        return losses.mnist_loss(batch.x, batch.y, releases[0], adversary, discriminator,
                                 cfg.lam, cfg.gamma, cfg.distortion)
    return losses.ppan_loss(batch.x, batch.y, releases, adversary, cfg.distortion, budget)


def _check_finite(loss: ad.Tensor, releases, batch, adversary, where: str) -> float:
    value = loss.item()
    if np.isfinite(value):
        return value
    detail = ""
    if isinstance(releases, list) and not isinstance(releases[0], tuple):
        with ad.no_grad():
            privacy = np.mean([adversary.log_prob(batch.x, z).data.mean() for z in releases])
        detail = f", privacy term {privacy:.6g}, distortion term {value - privacy:.6g}"
    raise TrainingDivergedError(f"non-finite objective at {where}: total {value}{detail}")


def train(mechanism, adversary, data: Dataset, cfg: TrainConfig,
          discriminator=None, decoder=None) -> TrainResult:
    """Run the alternating minimax updates; networks are modified in place."""
    if len(data) == 0:
        raise ValueError("training set is empty")
    if cfg.gamma > 0 and discriminator is None:
        raise ValueError("gamma > 0 needs a discriminator")
    _, _, rng = rng_streams(cfg.seed)
    budget = cfg.budget_mode()
    finite = isinstance(mechanism, CategoricalMechanism)
    n_z = mechanism.n_z if finite else None
    use_disc = discriminator if cfg.gamma > 0 else None

    adv_params = adversary.parameters()
    mech_params = mechanism.parameters() + (decoder.parameters() if decoder is not None else [])
    disc_params = use_disc.parameters() if use_disc is not None else []
    adv_state, mech_state, disc_state = AdamState(), AdamState(), AdamState()

    n = len(data)
    size = min(cfg.minibatch_size, n)
    history: list[float] = []
    iteration = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, size):
            batch = data.subset(order[start:start + size])
            noise = None if finite else mechanism.draw_noise(len(batch), rng, cfg.k)
            with ad.no_grad():
                frozen = _releases(mechanism, batch.w, noise)
            where = f"epoch {epoch}, iteration {iteration}"

            for _ in range(cfg.adversary_steps):
                loss = _objective(frozen, batch, adversary, cfg, budget, use_disc, decoder, n_z)
                _check_finite(loss, frozen, batch, adversary, where + " (adversary step)")
                zero_grad(adv_params)
                loss.backward()
                adam_step(adv_params, adv_state, maximize=True)

            if use_disc is not None:
                loss = _objective(frozen, batch, adversary, cfg, budget, use_disc, decoder, n_z)
                _check_finite(loss, frozen, batch, adversary, where + " (discriminator step)")
                zero_grad(disc_params)
                loss.backward()
                adam_step(disc_params, disc_state, maximize=True)

            live = _releases(mechanism, batch.w, noise)
            loss = _objective(live, batch, adversary, cfg, budget, use_disc, decoder, n_z)
            epoch_losses.append(_check_finite(loss, live, batch, adversary, where + " (mechanism step)"))
            zero_grad(mech_params)
            loss.backward()
            adam_step(mech_params, mech_state)
            iteration += 1
        history.append(float(np.mean(epoch_losses)))
    return TrainResult(history, iteration)


# -------------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class Architecture:
    hidden: tuple[int, ...] = (5, 5)
    seed_dim: int = 1
    activation: str = "relu"
    init: str = "lecun_normal"


def default_architecture(model: JointModel) -> Architecture:
    if model.is_finite:
        return Architecture(hidden=(), seed_dim=0)
    if model.kind == "scalar_gauss":
        return Architecture((5, 5), 1)
    return Architecture((20, 20), 8)


def build_networks(model: JointModel, arch: Architecture, rng: np.random.Generator):
    """Mechanism and adversary sized for the model's observation and attributes."""
    dw, dx, dy = model.dims
    if model.is_finite:
        return (CategoricalMechanism(dw, dy, arch.hidden, arch.activation, rng, arch.init),
                AdversaryNet(dy, dx, arch.hidden, "categorical", arch.activation, rng, arch.init))
    mech = UniversalMechanism(dw, dy, arch.hidden, arch.seed_dim, arch.activation, rng=rng, init=arch.init)
    adv = AdversaryNet(dy, dx, arch.hidden, "diag_gaussian", arch.activation, rng, arch.init)
    return mech, adv


def evaluate(model: JointModel, mechanism, adversary, test: Dataset, rng: np.random.Generator) -> dict:
    """Leakage, distortion and (finite models) adversary accuracy on held-out data.

    Gaussian models use the Gaussian-fit estimate on test releases; finite
    models are scored exactly against the true joint pmf.
    """
    if model.is_finite:
        channel = mechanism.matrix()
        joint = model.joint_table()
        leakage = exact_discrete_mi(np.einsum("wxy,wz->xz", joint, channel))
        mismatch = losses.zero_one_matrix(channel.shape[1])
        distortion = float(np.einsum("wxy,wz,yz->", joint, channel, mismatch))
        z = mechanism.draw_symbols(test.w, rng)
        accuracy = adversary_accuracy(adversary, test.x, z)
        return dict(empirical_distortion=distortion, leakage_nats=leakage,
                    estimator="exact", adversary_accuracy=accuracy)
    with ad.no_grad():
        z = mechanism.release(test.w, mechanism.draw_noise(len(test), rng, 1))[0].data
    distortion = float(np.mean(np.sum((test.y - z) ** 2, axis=1)))
    return dict(empirical_distortion=distortion, leakage_nats=gaussian_mi_estimate(test.x, z),
                estimator="gaussian")


def point_seed(seed: int, index: int) -> int:
    """Deterministic per-grid-point seed."""
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1)[0])


@dataclass(frozen=True)
class _PointJob:
    model: JointModel
    value: float
    index: int
    cfg: TrainConfig
    grid_kind: str
    n_train: int
    n_test: int
    arch: Architecture


def _run_point(job: _PointJob) -> TradeoffPoint:
    seed = point_seed(job.cfg.seed, job.index)
    data_rng, init_rng, eval_rng = rng_streams(seed)
    if job.grid_kind == "delta":
        cfg = dataclasses.replace(job.cfg, delta=job.value, seed=seed)
        delta_target = job.value
    else:
        cfg = dataclasses.replace(job.cfg, lam=job.value, seed=seed)
        delta_target = float("nan") if cfg.delta is None else cfg.delta
    data = sample(job.model, job.n_train + job.n_test, data_rng)
    train_set, test_set = data.split(job.n_train)
    mechanism, adversary = build_networks(job.model, job.arch, init_rng)
    meta = dict(delta_target=delta_target, lam=cfg.lam, seed=seed, model_id=job.model.kind)
    try:
        result = train(mechanism, adversary, train_set, cfg)
    except TrainingDivergedError as exc:
        return TradeoffPoint(empirical_distortion=float("nan"), leakage_nats=float("nan"),
                             estimator="none", status=f"failed: {exc}", **meta)
    scores = evaluate(job.model, mechanism, adversary, test_set, eval_rng)
    return TradeoffPoint(history=result.history, **scores, **meta)


def sweep(model: JointModel, grid, cfg: TrainConfig, grid_kind: str = "delta",
          n_train: int = 8000, n_test: int = 4000, arch: Architecture | None = None,
          workers: int = 1, oracle=None) -> list[TradeoffPoint]:
    """Train one fresh dataset and network pair per grid value, in grid order.

    ``oracle``, if given, maps an achieved distortion to the optimal leakage
    and fills ``oracle_leakage_nats``.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("grid is empty")
    if grid_kind not in ("delta", "lambda"):
        raise ValueError("grid_kind must be 'delta' or 'lambda'")
    arch = default_architecture(model) if arch is None else arch
    jobs = [_PointJob(model, g, i, cfg, grid_kind, n_train, n_test, arch) for i, g in enumerate(grid)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_run_point, jobs))
    else:
        points = [_run_point(job) for job in jobs]
    if oracle is not None:
        for p in points:
            if p.status == "ok" and np.isfinite(p.empirical_distortion):
                p.oracle_leakage_nats = float(oracle(max(0.0, p.empirical_distortion)))
    return points
