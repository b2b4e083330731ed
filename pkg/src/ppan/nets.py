"""Release mechanisms, adversaries and the image discriminator.

Mechanisms come in four flavours, one per way of drawing releases:

* :class:`UniversalMechanism` -- ``z = f(w, u)`` with uniform seed noise ``u``
* :class:`GaussianMechanism` -- ``z = A u + mu`` with ``(mu, A) = f(w)``
* :class:`GmmMechanism` -- one reparameterized draw per mixture component
* :class:`CategoricalMechanism` -- the full conditional pmf, no sampling
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor

__all__ = [
    "MLP", "SeedNoise", "UniversalMechanism", "GaussianMechanism", "GmmMechanism",
    "CategoricalMechanism", "AdversaryNet", "DiscriminatorNet", "mechanism_sample",
    "adversary_log_prob", "gmm_component_samples", "one_hot",
    "save_checkpoint", "load_checkpoint",
]

LOG_2PI = float(np.log(2.0 * np.pi))
CHECKPOINT_FORMAT = "ppan-checkpoint"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    None: lambda t: t,
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
}


def one_hot(labels, n: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n))
    out[np.arange(labels.size), labels.reshape(-1)] = 1.0
    return out


class MLP:
    """Fully-connected stack.

    ``init="uniform"`` draws weights and biases uniform on +-1/sqrt(fan_in);
    ``init="lecun_normal"`` draws weights N(0, 1/fan_in) with zero biases.
    """

    def __init__(self, sizes, activation="relu", output_activation=None, rng=None, init="uniform"):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        if activation not in _ACTIVATIONS or output_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}/{output_activation!r}")
        if init not in ("uniform", "lecun_normal"):
            raise ValueError(f"unknown init {init!r}")
        rng = np.random.default_rng() if rng is None else rng
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        self.output_activation = output_activation
        self.layers: list[tuple[Tensor, Tensor]] = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            if init == "uniform":
                w0 = rng.uniform(-bound, bound, (fan_in, fan_out))
                b0 = rng.uniform(-bound, bound, (fan_out,))
            else:
                w0, b0 = rng.normal(0.0, bound, (fan_in, fan_out)), np.zeros(fan_out)
            W = Tensor(w0, requires_grad=True, name=f"W{i}")
            b = Tensor(b0, requires_grad=True, name=f"b{i}")
            self.layers.append((W, b))

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer]

    def __call__(self, x) -> Tensor:
        h = ad.as_tensor(x)
        if h.ndim != 2 or h.shape[1] != self.sizes[0]:
            raise DimensionError(f"MLP expects (batch, {self.sizes[0]}) input, got {h.shape}")
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            h = h @ W + b
            act = self.output_activation if i == last else self.activation
            h = _ACTIVATIONS[act](h)
        return h


@dataclass(frozen=True)
class SeedNoise:
    """i.i.d. Uniform[-1, 1] seed noise of a fixed dimension."""

    dim: int

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=(n, self.dim))


class _Net:
    body: MLP

    def parameters(self) -> list[Tensor]:
        return self.body.parameters()


class _Mechanism(_Net):
    input_dim: int

    def _check_input(self, w) -> np.ndarray:
        w = np.asarray(w.data if isinstance(w, Tensor) else w, dtype=np.float64)
        if w.ndim == 1:
            w = w[:, None]
        if w.shape[1] != self.input_dim:
            raise DimensionError(f"observation has dim {w.shape[1]}, mechanism expects {self.input_dim}")
        return w

    def sample(self, w, rng: np.random.Generator, k: int = 1) -> list[Tensor]:
        w = self._check_input(w)
        return self.release(w, self.draw_noise(len(w), rng, k))


class UniversalMechanism(_Mechanism):
    """Release ``z = f_theta(w, u)`` with ``u`` seed noise appended to the input."""

    def __init__(self, input_dim, output_dim, hidden=(5, 5), seed_dim=1,
                 activation="relu", output_activation=None, rng=None, init="uniform"):
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.noise = SeedNoise(int(seed_dim))
        self.body = MLP([self.input_dim + self.noise.dim, *hidden, self.output_dim],
                        activation, output_activation, rng, init)

    def draw_noise(self, n: int, rng: np.random.Generator, k: int = 1) -> np.ndarray:
        if k < 1:
            raise ContractError("need at least one release per observation")
        return np.stack([self.noise.sample(rng, n) for _ in range(k)])

    def release(self, w, noise: np.ndarray) -> list[Tensor]:
        w = self._check_input(w)
        return [self.body(np.concatenate([w, u], axis=1)) for u in noise]


def _tril_maps(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Constant matrices turning a flattened lower triangle into ``A @ u``."""
    entries = [(i, j) for i in range(d) for j in range(i + 1)]
    spread = np.zeros((d, len(entries)))
    gather = np.zeros((len(entries), d))
    for e, (i, j) in enumerate(entries):
        spread[j, e] = 1.0
        gather[e, i] = 1.0
    return spread, gather


def _tril_to_matrix(flat: np.ndarray, d: int) -> np.ndarray:
    rows, cols = np.tril_indices(d)
    order = np.lexsort((cols, rows))
    factor = np.zeros(flat.shape[:-1] + (d, d))
    factor[..., rows[order], cols[order]] = flat
    return factor


class GaussianMechanism(_Mechanism):
    """Conditional Gaussian release sampled by reparameterization.

    The network emits the mean and a flattened lower-triangular factor ``A``
    (row-major over ``j <= i``), so the covariance ``A A^T`` is always valid.
    """

    def __init__(self, input_dim, output_dim, hidden=(20, 20), activation="relu", rng=None, init="uniform"):
        self.input_dim = int(input_dim)
        self.output_dim = d = int(output_dim)
        self.n_tril = d * (d + 1) // 2
        self._spread, self._gather = _tril_maps(d)
        self.body = MLP([self.input_dim, *hidden, d + self.n_tril], activation, None, rng, init)

    def draw_noise(self, n, rng, k=1):
        if k < 1:
            raise ContractError("need at least one release per observation")
        return rng.standard_normal((k, n, self.output_dim))

    def moments(self, w) -> tuple[Tensor, Tensor]:
        out = self.body(self._check_input(w))
        d = self.output_dim
        return out[:, :d], out[:, d:]

    def covariance(self, w) -> np.ndarray:
        with ad.no_grad():
            _, a_flat = self.moments(w)
        factor = _tril_to_matrix(a_flat.data, self.output_dim)
        return factor @ np.swapaxes(factor, -1, -2)

    def reparameterize(self, mu: Tensor, a_flat: Tensor, u: np.ndarray) -> Tensor:
        return mu + (a_flat * (u @ self._spread)) @ self._gather

    def release(self, w, noise):
        mu, a_flat = self.moments(w)
        return [self.reparameterize(mu, a_flat, u) for u in noise]


class GmmMechanism(GaussianMechanism):
    """Gaussian-mixture release; each component yields one reparameterized draw."""

    def __init__(self, input_dim, output_dim, components=2, hidden=(20, 20), activation="relu", rng=None,
                 init="uniform"):
        self.input_dim = int(input_dim)
        self.output_dim = d = int(output_dim)
        self.components = m = int(components)
        self.n_tril = d * (d + 1) // 2
        self._spread, self._gather = _tril_maps(d)
        self.body = MLP([self.input_dim, *hidden, m * (1 + d + self.n_tril)], activation, None, rng, init)

    def draw_noise(self, n, rng, k=1):
        return rng.standard_normal((self.components, n, self.output_dim))

    def components_of(self, w, noise) -> list[tuple[Tensor, Tensor]]:
        out = self.body(self._check_input(w))
        m, d, nt = self.components, self.output_dim, self.n_tril
        weights = ad.softmax(out[:, :m])
        mus = out[:, m:m + m * d]
        factors = out[:, m + m * d:]
        result = []
        for l in range(m):
            mu = mus[:, l * d:(l + 1) * d]
            a_flat = factors[:, l * nt:(l + 1) * nt]
            result.append((weights[:, l], self.reparameterize(mu, a_flat, noise[l])))
        return result

    def release(self, w, noise):
        return [z for _, z in self.components_of(w, noise)]


class CategoricalMechanism(_Mechanism):
    """Finite-alphabet mechanism: softmax over release symbols given a one-hot ``w``."""

    def __init__(self, n_w, n_z, hidden=(), activation="relu", rng=None, init="uniform"):
        self.n_w = self.input_dim = int(n_w)
        self.n_z = int(n_z)
        self.body = MLP([self.n_w, *hidden, self.n_z], activation, None, rng, init)

    def _check_input(self, w):
        w = np.asarray(w)
        if w.ndim == 1:
            w = one_hot(w, self.n_w)
        return super()._check_input(w)

    def distribution(self, w) -> Tensor:
        return ad.softmax(self.body(self._check_input(w)))

    def matrix(self) -> np.ndarray:
        """``P[w, z]``; each row is the release pmf for one observation symbol."""
        with ad.no_grad():
            return self.distribution(np.arange(self.n_w)).data

    def draw_noise(self, n, rng, k=1):
        return None

    def sample(self, w, rng=None, k=1):
        if k < 1:
            raise ContractError("need at least one release per observation")
        return self.distribution(w)

    def draw_symbols(self, w, rng: np.random.Generator) -> np.ndarray:
        with ad.no_grad():
            probs = self.distribution(w).data
        u = rng.random((len(probs), 1))
        return np.minimum((u > np.cumsum(probs, axis=1)).sum(axis=1), self.n_z - 1)


def mechanism_sample(net, w, rng: np.random.Generator, k: int = 1):
    """Draw ``k`` releases per row of ``w`` (or the pmf for a categorical net)."""
    if k < 1:
        raise ContractError("k must be at least 1")
    return net.sample(w, rng, k)


def gmm_component_samples(net: GmmMechanism, w, rng: np.random.Generator):
    if not isinstance(net, GmmMechanism):
        raise ContractError("gmm_component_samples needs a GmmMechanism")
    w = net._check_input(w)
    return net.components_of(w, net.draw_noise(len(w), rng))


class AdversaryNet(_Net):
    """Variational posterior over the sensitive attribute given a release.

    ``head="categorical"`` outputs a pmf over ``output_dim`` classes;
    ``head="diag_gaussian"`` outputs ``(mu, log sigma^2)`` per coordinate.
    """

    def __init__(self, input_dim, output_dim, hidden=(5, 5), head="diag_gaussian",
                 activation="relu", rng=None, init="uniform"):
        if head not in ("categorical", "diag_gaussian"):
            raise ValueError(f"unknown adversary head {head!r}")
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.head = head
        width = self.output_dim * (2 if head == "diag_gaussian" else 1)
        self.body = MLP([self.input_dim, *hidden, width], activation, None, rng, init)

    def _inputs(self, z):
        z = ad.as_tensor(z)
        if z.ndim == 1:
            z = z.reshape(-1, 1) if self.input_dim == 1 else Tensor(one_hot(z.data, self.input_dim))
        return z

    def log_probs(self, z) -> Tensor:
        """Log pmf over all classes, one row per release (categorical head)."""
        if self.head != "categorical":
            raise ContractError("log_probs is only defined for a categorical head")
        probs = ad.softmax(self.body(self._inputs(z)))
        return ad.log(ad.clip(probs, ad.PROB_EPS, 1.0))

    def gaussian_params(self, z) -> tuple[Tensor, Tensor]:
        out = self.body(self._inputs(z))
        d = self.output_dim
        return out[:, :d], out[:, d:]

    def log_prob(self, x, z) -> Tensor:
        """Per-row ``log Q(x|z)``, differentiable in the parameters and in ``z``."""
        if self.head == "categorical":
            x = np.asarray(x, dtype=np.int64).reshape(-1)
            return (self.log_probs(z) * one_hot(x, self.output_dim)).sum(axis=1)
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        mu, logvar = self.gaussian_params(z)
        if x.shape != mu.shape:
            raise DimensionError(f"sensitive values {x.shape} vs adversary output {mu.shape}")
        resid = ad.square(x - mu) * ad.exp(-logvar)
        return ((logvar + LOG_2PI + resid) * -0.5).sum(axis=1)

    def log_prob_table(self) -> Tensor:
        """``log Q(x|z)`` for every one-hot release symbol: shape (n_z, n_x)."""
        return self.log_probs(np.eye(self.input_dim))

    def predict(self, z) -> np.ndarray:
        """Most likely class per release; ties go to the lowest index."""
        with ad.no_grad():
            return np.argmax(self.log_probs(z).data, axis=1)


def adversary_log_prob(net: AdversaryNet, x, z) -> Tensor:
    return net.log_prob(x, z)


class DiscriminatorNet(_Net):
    """Single-hidden-layer real-vs-released classifier; output is P(released)."""

    def __init__(self, input_dim, hidden=500, activation="tanh", rng=None, init="uniform"):
        self.input_dim = int(input_dim)
        self.body = MLP([self.input_dim, int(hidden), 1], activation, "sigmoid", rng, init)

    def __call__(self, z) -> Tensor:
        return self.body(z).reshape(-1)


# --------------------------------------------------------------- checkpoints

def save_checkpoint(net, path) -> None:
    """Write parameter shapes and values as JSON (floats round-trip exactly)."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": type(net).__name__,
        "parameters": [
            {"shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
            for p in net.parameters()
        ],
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(net, path):
    """Load values saved by :func:`save_checkpoint` into a net of the same layout."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    if payload["kind"] != type(net).__name__:
        raise ValueError(f"{path}: checkpoint holds a {payload['kind']}, not a {type(net).__name__}")
    params = net.parameters()
    stored = payload["parameters"]
    if len(stored) != len(params):
        raise ValueError(f"{path}: {len(stored)} parameters stored, net has {len(params)}")
    for p, entry in zip(params, stored):
        if tuple(entry["shape"]) != p.shape:
            raise ValueError(f"{path}: shape {entry['shape']} does not match {list(p.shape)}")
        p.data = np.array(entry["values"], dtype=np.float64).reshape(p.shape)
    return net
