"""Seeded synthetic data models, observation maps and IDX image files."""
from __future__ import annotations

import csv
import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .oracle import ScalarGaussParams, SymmetricPairParams

__all__ = [
    "Observation", "JointModel", "Dataset", "sample", "rng_streams",
    "IdxFormatError", "read_idx", "write_idx", "load_idx_images", "load_idx_labels",
    "dump_csv",
]

CHOLESKY_JITTER = 1e-12


class Observation(str, enum.Enum):
    USEFUL_ONLY = "useful"   # W = Y
    FULL_DATA = "full"       # W = (X, Y)
    IDENTITY = "identity"    # W = X = Y


@dataclass(frozen=True)
class JointModel:
    """Generative description of ``(W, X, Y)``.

    Build one with :meth:`scalar_gauss`, :meth:`vector_gauss` or
    :meth:`symmetric_pair` rather than calling the constructor.
    """

    kind: str
    observation: Observation
    scalar: ScalarGaussParams | None = None
    pair: SymmetricPairParams | None = None
    cov_x: np.ndarray | None = field(default=None, repr=False)
    cov_y: np.ndarray | None = field(default=None, repr=False)
    cov_xy: np.ndarray | None = field(default=None, repr=False)
    _factor: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def scalar_gauss(cls, var_x=1.0, var_y=1.0, rho=0.85, observation="useful") -> "JointModel":
        return cls("scalar_gauss", Observation(observation), scalar=ScalarGaussParams(var_x, var_y, rho))

    @classmethod
    def vector_gauss(cls, cov_x, cov_y, cov_xy, observation="useful") -> "JointModel":
        cov_x, cov_y, cov_xy = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (cov_x, cov_y, cov_xy))
        m, n = cov_x.shape[0], cov_y.shape[0]
        if cov_x.shape != (m, m) or cov_y.shape != (n, n) or cov_xy.shape != (m, n):
            raise ValueError("covariance blocks have inconsistent shapes")
        observation = Observation(observation)
        if observation is Observation.IDENTITY:
            if not (np.array_equal(cov_x, cov_y) and np.array_equal(cov_x, cov_xy)):
                raise ValueError("identity observation needs cov_x == cov_y == cov_xy")
            factor = _factor(cov_x)
        else:
            factor = _factor(np.block([[cov_x, cov_xy], [cov_xy.T, cov_y]]))
        return cls("vector_gauss", observation, cov_x=cov_x, cov_y=cov_y, cov_xy=cov_xy, _factor=factor)

    @classmethod
    def symmetric_pair(cls, m=4, p=0.25, observation="useful") -> "JointModel":
        observation = Observation(observation)
        if observation is Observation.IDENTITY:
            raise ValueError("the symmetric pair has no identity observation")
        return cls("symmetric_pair", observation, pair=SymmetricPairParams(m, p))

    @classmethod
    def gaussian_source(cls, variances) -> "JointModel":
        """Rate-distortion setting: ``W = X = Y`` with independent components."""
        cov = np.diag(np.asarray(variances, dtype=np.float64))
        return cls.vector_gauss(cov, cov, cov, Observation.IDENTITY)

    @property
    def is_finite(self) -> bool:
        return self.kind == "symmetric_pair"

    @property
    def dims(self) -> tuple[int, int, int]:
        """(dim W, dim X, dim Y); alphabet sizes for the finite model."""
        if self.kind == "symmetric_pair":
            m = self.pair.m
            return (m * m if self.observation is Observation.FULL_DATA else m), m, m
        if self.kind == "scalar_gauss":
            dx = dy = 1
        else:
            dx, dy = self.cov_x.shape[0], self.cov_y.shape[0]
        dw = {Observation.USEFUL_ONLY: dy, Observation.FULL_DATA: dx + dy, Observation.IDENTITY: dx}
        return dw[self.observation], dx, dy

    def joint_table(self) -> np.ndarray:
        """For the finite model: ``P[w, x, y]`` over observation, sensitive and useful symbols."""
        if not self.is_finite:
            raise ValueError("joint_table is only defined for finite models")
        m = self.pair.m
        pxy = self.pair.joint()
        if self.observation is Observation.USEFUL_ONLY:
            table = np.zeros((m, m, m))
            for y in range(m):
                table[y, :, y] = pxy[:, y]
            return table
        table = np.zeros((m * m, m, m))
        for x in range(m):
            for y in range(m):
                table[x * m + y, x, y] = pxy[x, y]
        return table


def _factor(cov: np.ndarray) -> np.ndarray:
    if np.min(np.linalg.eigvalsh(cov)) < -1e-10:
        raise ValueError("covariance is not positive semidefinite")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(cov + CHOLESKY_JITTER * np.eye(len(cov)))


@dataclass
class Dataset:
    w: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def subset(self, index) -> "Dataset":
        return Dataset(self.w[index], self.x[index], self.y[index])

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return self.subset(slice(0, n_first)), self.subset(slice(n_first, None))


def rng_streams(seed) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent (data, init, noise) generators derived from one seed."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return tuple(np.random.default_rng(s) for s in ss.spawn(3))


def sample(model: JointModel, n: int, rng: np.random.Generator) -> Dataset:
    """Draw ``n`` i.i.d. triples and apply the observation map."""
    if n < 1:
        raise ValueError("need at least one sample")
    if model.kind == "scalar_gauss":
        p = model.scalar
        u = rng.standard_normal((n, 2))
        x = np.sqrt(p.var_x) * u[:, :1]
        y = np.sqrt(p.var_y) * (p.rho * u[:, :1] + np.sqrt(1.0 - p.rho ** 2) * u[:, 1:])
    elif model.kind == "vector_gauss":
        m = model.cov_x.shape[0]
        u = rng.standard_normal((n, model._factor.shape[0]))
        v = u @ model._factor.T
        if model.observation is Observation.IDENTITY:
            x = y = v
        else:
            x, y = v[:, :m], v[:, m:]
    elif model.kind == "symmetric_pair":
        m, p = model.pair.m, model.pair.p
        x = rng.integers(0, m, size=n)
        flip = rng.random(n) < p
        y = np.where(flip, (x + rng.integers(1, m, size=n)) % m, x)
        w = x * m + y if model.observation is Observation.FULL_DATA else y.copy()
        return Dataset(w, x, y)
    else:
        raise ValueError(f"unknown model kind {model.kind!r}")
    if model.observation is Observation.FULL_DATA:
        w = np.concatenate([x, y], axis=1)
    else:
        w = y.copy()
    return Dataset(w, x.copy(), y.copy())


def dump_csv(data: Dataset, path) -> None:
    """Write one row per sample with columns ``w0.., x0.., y0..``."""
    cols = {"w": np.atleast_2d(data.w.T).T, "x": np.atleast_2d(data.x.T).T, "y": np.atleast_2d(data.y.T).T}
    header = [f"{k}{j}" for k, a in cols.items() for j in range(a.shape[1])]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in np.concatenate(list(cols.values()), axis=1):
            writer.writerow([repr(v.item()) for v in row])


# ----------------------------------------------------------------- IDX files

class IdxFormatError(ValueError):
    """Malformed IDX content; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


_IDX_TYPES = {
    0x08: np.dtype(">u1"), 0x09: np.dtype(">i1"), 0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8"),
}


def read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError("file too short for the magic number", len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise IdxFormatError("magic number must start with two zero bytes", 0)
    if raw[2] not in _IDX_TYPES:
        raise IdxFormatError(f"unknown element type 0x{raw[2]:02x}", 2)
    dtype, ndim = _IDX_TYPES[raw[2]], raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError("truncated dimension header", len(raw))
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(raw) < expected:
        raise IdxFormatError(f"truncated data: expected {expected} bytes, found {len(raw)}", len(raw))
    return np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=header).reshape(shape)


def write_idx(path, array) -> None:
    array = np.asarray(array)
    code = {np.dtype(v).newbyteorder("="): k for k, v in _IDX_TYPES.items()}.get(array.dtype.newbyteorder("="))
    if code is None:
        raise ValueError(f"dtype {array.dtype} has no IDX encoding")
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(_IDX_TYPES[code]).tobytes())


def load_idx_images(path) -> np.ndarray:
    """Images as rows of pixels scaled into [0, 1]."""
    images = read_idx(path)
    if images.ndim != 3 or images.dtype != np.dtype(">u1"):
        raise IdxFormatError(f"expected a 3-d unsigned-byte image array, got {images.ndim}-d {images.dtype}", 2)
    return images.reshape(len(images), -1).astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    labels = read_idx(path)
    if labels.ndim != 1:
        raise IdxFormatError(f"expected a 1-d label array, got {labels.ndim}-d", 3)
    return labels.astype(np.int64)
