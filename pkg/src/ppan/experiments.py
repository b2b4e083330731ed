"""Experiment configurations, runners and CSV artifacts.

A configuration is an INI file with a single ``[experiment]`` section::

    [experiment]
    experiment = scalar-ud
    seed = 7
    grid = 0.1, 0.3, 0.5

Every key has a per-experiment default (see ``DEFAULTS``); unknown keys are
rejected with the offending line number.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import oracle
from .autodiff import no_grad
from .datagen import Dataset, JointModel, load_idx_images, load_idx_labels, rng_streams, write_idx
from .estimators import TradeoffPoint, adversary_accuracy, variational_mi_lower_bound
from .losses import DistortionFn
from .nets import AdversaryNet, DiscriminatorNet, UniversalMechanism
from .trainer import Architecture, TrainConfig, TrainingDivergedError, point_seed, sweep, train

__all__ = [
    "EXPERIMENTS", "DEFAULTS", "ConfigError", "CsvFormatError", "ExperimentConfig",
    "load_config", "build_model", "oracle_curve", "run_experiment", "write_tradeoff_csv",
    "write_history_csv", "read_tradeoff_csv", "CompareReport", "compare", "default_output_dir",
    "MnistResult", "run_mnist",
]

EXPERIMENTS = ("scalar-ud", "scalar-fd", "vector-ud", "rate-distortion", "symmetric-pair",
               "mnist-toy", "oracle-only")
TRADEOFF_COLUMNS = ("delta_target", "lam", "empirical_distortion", "leakage_nats",
                    "oracle_leakage_nats", "adversary_accuracy", "seed", "status")
HISTORY_COLUMNS = ("point", "delta_target", "lam", "epoch", "loss")
OUTPUT_ROOT_ENV = "PPAN_OUTPUT_ROOT"
RHOS = "0.47, 0.24, 0.85, 0.07, 0.66"
INIT = "lecun_normal"

_COMMON = dict(seed="0", epochs="250", batch_size="200", adversary_steps="5", k="1", gamma="0",
               n_train="8000", n_test="4000", grid_kind="delta", budget="penalty", workers="1",
               tolerance="0.1")
DEFAULTS: dict[str, dict[str, str]] = {
    "scalar-ud": dict(_COMMON, rho="0.85", var_x="1", var_y="1", lam="10", grid_linspace="0, 1, 20",
                      hidden="5, 5", seed_dim="1"),
    "scalar-fd": dict(_COMMON, rho="0.85", lam="50", grid_linspace="0, 0.8, 20",
                      hidden="5, 5", seed_dim="1"),
    "vector-ud": dict(_COMMON, rhos=RHOS, lam="10", grid_linspace="0, 4.5, 20",
                      hidden="20, 20", seed_dim="8"),
    "rate-distortion": dict(_COMMON, variances=RHOS, lam="500", grid_linspace="0, 2.5, 20",
                            hidden="20, 20", seed_dim="8"),
    "symmetric-pair": dict(_COMMON, m="4", p="0.25", observation="useful", lam="100",
                           grid_linspace="0, 0.75, 20", budget="penalty_expectation",
                           hidden="", seed_dim="0"),
    "mnist-toy": dict(_COMMON, images="", labels="", n_images="2000", n_test="1000",
                      grid_kind="lambda", grid="35, 8", gamma="0", epochs="5", batch_size="100",
                      adversary_steps="1", budget="lagrangian", hidden="1000, 1000", seed_dim="20",
                      discriminator_hidden="500", preview="10"),
    "oracle-only": dict(curve="scalar-ud", rho="0.85", var_x="1", var_y="1", rhos=RHOS,
                        variances=RHOS, m="4", p="0.25", observation="useful",
                        grid_linspace="0, 1, 20", seed="0", tolerance="0.1", workers="1"),
}


_OPTIONAL_KEYS = ("grid", "grid_linspace", "delta")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the line and field."""


class CsvFormatError(ValueError):
    """A tradeoff CSV lacks a required column or has an unparsable value."""


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


@dataclass
class ExperimentConfig:
    """Resolved settings for one experiment. ``values`` holds the raw key/value strings."""

    experiment: str
    values: dict[str, str]
    lines: dict[str, int] = field(default_factory=dict)
    source: str = "<config>"

    @classmethod
    def from_mapping(cls, experiment: str, overrides: dict[str, str] | None = None,
                     lines: dict[str, int] | None = None, source: str = "<config>") -> "ExperimentConfig":
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"{source}: field 'experiment': unknown id {experiment!r}; "
                              f"expected one of {', '.join(EXPERIMENTS)}")
        values = dict(DEFAULTS[experiment])
        lines = lines or {}
        for key, value in (overrides or {}).items():
            if key not in values and key not in _OPTIONAL_KEYS:
                where = f"line {lines[key]}, " if key in lines else ""
                raise ConfigError(f"{source}: {where}field {key!r}: unknown key for experiment {experiment!r}")
            values[key] = str(value)
        if "grid" in (overrides or {}):
            values.pop("grid_linspace", None)
        elif "grid_linspace" in (overrides or {}):
            values.pop("grid", None)
        cfg = cls(experiment, values, lines, source)
        cfg.validate()
        return cfg

    # -- typed access with diagnostics
    def _fail(self, key: str, message: str):
        where = f"line {self.lines[key]}, " if key in self.lines else ""
        raise ConfigError(f"{self.source}: {where}field {key!r}: {message}")

    def get(self, key: str, kind=str):
        text = self.values.get(key)
        if text is None:
            self._fail(key, "missing")
        try:
            return kind(text)
        except (TypeError, ValueError) as exc:
            self._fail(key, f"cannot parse {text!r} ({exc})")

    @property
    def seed(self) -> int:
        return self.get("seed", int)

    @property
    def curve(self) -> str:
        return self.values["curve"] if self.experiment == "oracle-only" else self.experiment

    def grid(self) -> tuple[float, ...]:
        if "grid" in self.values:
            grid = self.get("grid", _floats)
            key = "grid"
        else:
            parts = self.get("grid_linspace", _floats)
            if len(parts) != 3:
                self._fail("grid_linspace", f"expected 'start, stop, count', got {len(parts)} values")
            start, stop, num = parts
            if num < 1 or num != int(num):
                self._fail("grid_linspace", "the point count must be a positive integer")
            grid = tuple(float(v) for v in np.linspace(start, stop, int(num)))
            key = "grid_linspace"
        if not grid:
            self._fail(key, "grid is empty")
        if any(not math.isfinite(g) for g in grid):
            self._fail(key, "grid values must be finite")
        return grid

    def validate(self) -> None:
        if self.experiment == "oracle-only":
            if self.values["curve"] not in EXPERIMENTS[:5]:
                self._fail("curve", f"must be one of {', '.join(EXPERIMENTS[:5])}")
        self.grid()
        if self.values.get("grid_kind", "delta") not in ("delta", "lambda"):
            self._fail("grid_kind", "must be 'delta' or 'lambda'")
        if self.get("workers", int) < 1:
            self._fail("workers", "must be at least 1")
        if self.values.get("grid_kind", "delta") == "delta" and any(g < 0 for g in self.grid()):
            self._fail("grid" if "grid" in self.values else "grid_linspace", "distortion targets must be nonnegative")
        if self.experiment not in ("oracle-only", "mnist-toy"):
            self.train_config()
            self.architecture()
        try:
            if self.experiment != "mnist-toy":
                build_model(self)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{self.source}: model parameters: {exc}") from exc
        if self.experiment == "mnist-toy":
            self.train_config()
            for key in ("images", "labels"):
                if not self.values[key]:
                    self._fail(key, "path to an IDX file is required")

    def train_config(self) -> TrainConfig:
        fields = dict(epochs=self.get("epochs", int), minibatch_size=self.get("batch_size", int),
                      adversary_steps=self.get("adversary_steps", int), k=self.get("k", int),
                      lam=self.get("lam", float) if "lam" in self.values else 1.0,
                      gamma=self.get("gamma", float), seed=self.seed, budget=self.get("budget"))
        if self.values.get("delta"):
            fields["delta"] = self.get("delta", float)
        if self.experiment == "symmetric-pair":
            fields["distortion"] = DistortionFn.ZERO_ONE
        if self.experiment == "mnist-toy":
            fields["distortion"] = DistortionFn.PIXEL_BERNOULLI_CE
        try:
            return TrainConfig(**fields)
        except ValueError as exc:
            raise ConfigError(f"{self.source}: training settings: {exc}") from exc

    def architecture(self) -> Architecture:
        return Architecture(self.get("hidden", _ints), self.get("seed_dim", int), init=INIT)


def _line_numbers(text: str) -> dict[str, int]:
    lines = {}
    for number, line in enumerate(text.splitlines(), start=1):
        match = re.match(r"\s*([^#;\[\s=:][^=:]*?)\s*[=:]", line)
        if match:
            lines.setdefault(match.group(1).strip().lower(), number)
    return lines


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse and validate an INI experiment file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    sections = parser.sections()
    if sections != ["experiment"]:
        raise ConfigError(f"{path}: expected exactly one [experiment] section, found {sections or 'none'}")
    values = dict(parser["experiment"])
    values.update(overrides or {})
    lines = _line_numbers(text)
    if "experiment" not in values:
        raise ConfigError(f"{path}: field 'experiment': missing")
    experiment = values.pop("experiment")
    return ExperimentConfig.from_mapping(experiment, values, lines, str(path))


# ------------------------------------------------------------------ models

def build_model(cfg: ExperimentConfig) -> JointModel:
    curve = cfg.curve
    if curve == "scalar-ud":
        return JointModel.scalar_gauss(cfg.get("var_x", float), cfg.get("var_y", float), cfg.get("rho", float))
    if curve == "scalar-fd":
        return JointModel.scalar_gauss(1.0, 1.0, cfg.get("rho", float), "full")
    if curve == "vector-ud":
        rhos = np.asarray(cfg.get("rhos", _floats))
        eye = np.eye(len(rhos))
        return JointModel.vector_gauss(eye, eye, np.diag(rhos))
    if curve == "rate-distortion":
        return JointModel.gaussian_source(cfg.get("variances", _floats))
    if curve == "symmetric-pair":
        return JointModel.symmetric_pair(cfg.get("m", int), cfg.get("p", float), cfg.get("observation"))
    raise ConfigError(f"{cfg.source}: experiment {curve!r} has no synthetic data model")


def oracle_curve(cfg: ExperimentConfig):
    """Map from a distortion value to the optimal leakage for the configured model."""
    curve = cfg.curve
    if curve == "scalar-ud":
        params = oracle.ScalarGaussParams(cfg.get("var_x", float), cfg.get("var_y", float), cfg.get("rho", float))
        return lambda d: oracle.scalar_ud_optimum(params, d).leakage
    if curve == "scalar-fd":
        rho = cfg.get("rho", float)
        return lambda d: oracle.scalar_fd_optimum(rho, d).leakage
    if curve == "vector-ud":
        params = oracle.VectorGaussParams(cfg.get("rhos", _floats))
        return lambda d: oracle.vector_ud_optimum(params, d).leakage
    if curve == "rate-distortion":
        variances = cfg.get("variances", _floats)
        return lambda d: oracle.rate_distortion(variances, d).leakage
    if curve == "symmetric-pair":
        params = oracle.SymmetricPairParams(cfg.get("m", int), cfg.get("p", float))
        observation = cfg.get("observation")
        return lambda d: oracle.symmetric_pair_curves(params, min(d, 1.0), observation)
    return None


# ------------------------------------------------------------------- MNIST

@dataclass
class MnistResult:
    points: list[TradeoffPoint]
    originals: np.ndarray
    releases: list[np.ndarray]


def run_mnist(cfg: ExperimentConfig) -> MnistResult:
    images = load_idx_images(cfg.get("images"))
    labels = load_idx_labels(cfg.get("labels"))
    if len(images) != len(labels):
        raise ConfigError(f"{cfg.source}: images and labels have different counts ({len(images)} vs {len(labels)})")
    n_train, n_test = cfg.get("n_images", int), cfg.get("n_test", int)
    if n_train + n_test > len(images):
        raise ConfigError(f"{cfg.source}: field 'n_images': {n_train} + {n_test} exceeds the {len(images)} available images")
    data_rng, _, _ = rng_streams(cfg.seed)
    order = data_rng.permutation(len(images))
    data = Dataset(images[order], labels[order], images[order])
    train_set = data.subset(slice(0, n_train))
    test_set = data.subset(slice(n_train, n_train + n_test))
    counts = np.bincount(test_set.x, minlength=10) / len(test_set)
    entropy_x = float(-np.sum(counts[counts > 0] * np.log(counts[counts > 0])))

    base = cfg.train_config()
    hidden, seed_dim = cfg.get("hidden", _ints), cfg.get("seed_dim", int)
    preview = min(cfg.get("preview", int), n_test)
    points, releases = [], []
    lambda_grid = cfg.values["grid_kind"] == "lambda"
    for index, value in enumerate(cfg.grid()):
        seed = point_seed(cfg.seed, index)
        run_cfg = dataclasses.replace(base, seed=seed, **({"lam": value} if lambda_grid else {"delta": value}))
        _, init_rng, eval_rng = rng_streams(seed)
        dim = images.shape[1]
        mechanism = UniversalMechanism(dim, dim, hidden, seed_dim, "tanh", "sigmoid", init_rng, INIT)
        adversary = AdversaryNet(dim, 10, hidden, "categorical", "tanh", init_rng, INIT)
        discriminator = DiscriminatorNet(dim, cfg.get("discriminator_hidden", int), "tanh", init_rng, INIT)
        meta = dict(delta_target=float("nan"), lam=run_cfg.lam, seed=seed, model_id="mnist")
        try:
            result = train(mechanism, adversary, train_set, run_cfg,
                           discriminator=discriminator if run_cfg.gamma > 0 else None)
        except TrainingDivergedError as exc:
            points.append(TradeoffPoint(empirical_distortion=float("nan"), leakage_nats=float("nan"),
                                        estimator="none", status=f"failed: {exc}", **meta))
            releases.append(np.empty((0, dim)))
            continue
        with no_grad():
            z = mechanism.release(test_set.w, mechanism.draw_noise(len(test_set), eval_rng))[0]
            distortion = float(run_cfg.distortion(test_set.y, z).data.mean())
        points.append(TradeoffPoint(
            empirical_distortion=distortion,
            leakage_nats=variational_mi_lower_bound(adversary, test_set.x, z, entropy_x),
            estimator="variational", adversary_accuracy=adversary_accuracy(adversary, test_set.x, z.data),
            history=result.history, **meta))
        releases.append(z.data[:preview].copy())
    return MnistResult(points, test_set.y[:preview].copy(), releases)


# -------------------------------------------------------------- CSV output

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_tradeoff_csv(points: list[TradeoffPoint], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRADEOFF_COLUMNS)
        for p in points:
            writer.writerow([_fmt(getattr(p, c)) for c in TRADEOFF_COLUMNS])


def write_history_csv(points: list[TradeoffPoint], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for index, p in enumerate(points):
            for epoch, loss in enumerate(p.history):
                writer.writerow([index, _fmt(p.delta_target), _fmt(p.lam), epoch, _fmt(loss)])


def default_output_dir(cfg: ExperimentConfig) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV) or "ppan-output"
    return Path(root) / cfg.experiment


def run_experiment(cfg: ExperimentConfig, output_dir=None, workers: int | None = None) -> list[TradeoffPoint]:
    """Run one configured experiment and write ``tradeoff.csv`` and ``history.csv``.

    ``oracle-only`` evaluates the reference curve on the grid without training.
    Points whose training diverged are kept with a ``failed`` status.
    """
    out = Path(output_dir) if output_dir is not None else default_output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    workers = cfg.get("workers", int) if workers is None else workers
    if cfg.experiment == "oracle-only":
        curve = oracle_curve(cfg)
        points = []
        for g in cfg.grid():
            value = float(curve(g))
            points.append(TradeoffPoint(delta_target=g, empirical_distortion=g, leakage_nats=value,
                                        estimator="oracle", oracle_leakage_nats=value, seed=cfg.seed,
                                        model_id=cfg.curve))
    elif cfg.experiment == "mnist-toy":
        result = run_mnist(cfg)
        points = result.points
        _write_previews(result, out)
    else:
        points = sweep(build_model(cfg), cfg.grid(), cfg.train_config(), cfg.values["grid_kind"],
                       cfg.get("n_train", int), cfg.get("n_test", int), cfg.architecture(),
                       workers, oracle_curve(cfg))
    write_tradeoff_csv(points, out / "tradeoff.csv")
    write_history_csv(points, out / "history.csv")
    return points


def _write_previews(result: MnistResult, out: Path) -> None:
    side = int(round(math.sqrt(result.originals.shape[1])))
    shape = (-1, side, side) if side * side == result.originals.shape[1] else (len(result.originals), -1)
    write_idx(out / "originals.idx", np.round(result.originals * 255).astype(np.uint8).reshape(shape))
    for index, images in enumerate(result.releases):
        if len(images):
            write_idx(out / f"releases_{index}.idx", np.round(images * 255).astype(np.uint8).reshape(shape))


def read_tradeoff_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in ("delta_target", "leakage_nats", "oracle_leakage_nats") if c not in (reader.fieldnames or [])]
        if missing:
            raise CsvFormatError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


# ---------------------------------------------------------------- compare

@dataclass
class CompareReport:
    deltas: list[float]
    gaps: list[float]
    tolerance: float
    max_gap: float
    mean_gap: float
    failures: list[float]

    @property
    def passed(self) -> bool:
        return bool(self.gaps) and not self.failures

    def render(self) -> str:
        lines = [f"{'delta_target':>14} {'gap_nats':>12}"]
        lines += [f"{d:>14.6g} {g:>12.6g}" for d, g in zip(self.deltas, self.gaps)]
        lines.append(f"max |gap| {self.max_gap:.6g} nats, mean |gap| {self.mean_gap:.6g} nats, "
                     f"tolerance {self.tolerance:.6g}")
        if not self.gaps:
            lines.append("FAIL: no rows with an oracle value and status ok")
        elif self.failures:
            lines.append("FAIL at delta_target " + ", ".join(f"{d:.6g}" for d in self.failures))
        else:
            lines.append("PASS")
        return "\n".join(lines)


def compare(path, tolerance: float = 0.1) -> CompareReport:
    """Gap ``leakage - oracle`` per point; fails where ``|gap| > tolerance``.

    Rows without an oracle value or with a non-ok status are skipped.
    """
    deltas, gaps = [], []
    for number, row in enumerate(read_tradeoff_csv(path), start=2):
        if not row["oracle_leakage_nats"] or row.get("status", "ok") != "ok":
            continue
        try:
            delta = float(row["delta_target"]) if row["delta_target"] else float("nan")
            gap = float(row["leakage_nats"]) - float(row["oracle_leakage_nats"])
        except ValueError as exc:
            raise CsvFormatError(f"{path}: line {number}: {exc}") from exc
        deltas.append(delta)
        gaps.append(gap)
    abs_gaps = np.abs(gaps) if gaps else np.zeros(0)
    failures = [d for d, g in zip(deltas, abs_gaps) if g > tolerance]
    return CompareReport(deltas, gaps, tolerance, float(abs_gaps.max()) if gaps else 0.0,
                         float(abs_gaps.mean()) if gaps else 0.0, failures)
