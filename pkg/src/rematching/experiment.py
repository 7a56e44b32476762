"""Desk-scale experiments: scene, noisy sparse observations, training, metrics.

An experiment directory holds

``config.json``        the validated configuration
``scene.json``         the generated scene
``observations.csv``   ``time, particle, x0..x{d-1}``
``history.csv``        ``iteration, rec, rematch, entropy, total``
``trajectories.csv``   ``time, split, particle, x*, true_x*``
``model.json``         trained model parameters
``metrics.json``       :class:`MetricsReport` without runtimes
``timing.json``        wall-clock seconds per phase

Timings live in their own file so that ``metrics.json`` is reproducible byte
for byte.
"""

from __future__ import annotations

import csv
import itertools
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Optional

import jsonschema
import numpy as np

from .errors import ConfigError, DivergenceError
from .flow import Scene, make_scene, trajectory_sample
from .losses import LossConfig, rematching_loss
from .model import Observation, ReconModel, TimeBasis, eval_trajectories, eval_weights
from .priors import PriorClass
from .train import AdamRates, initialize, train, write_history

DEFAULT_OBSERVATION_TIMES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_HOLDOUT_TIMES = (0.1, 0.3, 0.5, 0.7, 0.9)
# times at which rematch_final is evaluated
REMATCH_EVAL_TIMES = tuple(np.linspace(0.0, 1.0, 11))
TIME_TOL = 1e-12


def load_schema(name):
    return json.loads(resources.files("rematching").joinpath("schemas", f"{name}.json").read_text())


@dataclass(frozen=True)
class SceneSpec:
    kind: str
    n: int
    seed: int
    dim: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneSpec
    prior: dict
    output_dir: str
    loss: LossConfig = LossConfig()
    rates: AdamRates = AdamRates()
    iterations: int = 2000
    basis_order: int = 5
    observation_times: tuple = DEFAULT_OBSERVATION_TIMES
    holdout_times: tuple = DEFAULT_HOLDOUT_TIMES
    noise_scale: float = 0.002
    init_trials: int = 8

    def __post_init__(self):
        obs = tuple(float(t) for t in self.observation_times)
        hold = tuple(float(t) for t in self.holdout_times)
        object.__setattr__(self, "observation_times", obs)
        object.__setattr__(self, "holdout_times", hold)
        if any(not 0.0 <= t <= 1.0 for t in obs + hold):
            raise ConfigError("all times must lie in [0, 1]")
        if any(b <= a for a, b in zip(obs, obs[1:])):
            raise ConfigError("observation times must be strictly increasing")
        if any(abs(a - b) <= TIME_TOL for a in obs for b in hold):
            raise ConfigError("holdout times must not coincide with observation times")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        try:
            prior = PriorClass.from_dict(self.prior)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid prior: {exc}") from exc
        if prior.frequencies and any(len(f) != self.scene.dim for f in prior.frequencies):
            raise ConfigError(f"frequency tuples must have length {self.scene.dim}")
        if prior.directions is not None and prior.directions.shape[0] != self.scene.dim:
            raise ConfigError(f"directions must have {self.scene.dim} rows")

    @property
    def prior_class(self):
        return PriorClass.from_dict(self.prior)

    def to_dict(self):
        return {
            "scene": asdict(self.scene),
            "prior": self.prior,
            "loss": self.loss.to_dict(),
            "rates": asdict(self.rates),
            "iterations": self.iterations,
            "basis_order": self.basis_order,
            "observation_times": list(self.observation_times),
            "holdout_times": list(self.holdout_times),
            "noise_scale": self.noise_scale,
            "init_trials": self.init_trials,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, data):
        """Validate ``data`` against the published schema and build a config."""
        try:
            jsonschema.validate(data, load_schema("experiment_config"))
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config does not match schema: {exc.message}") from exc
        try:
            return cls(
                scene=SceneSpec(**data["scene"]),
                prior=dict(data["prior"]),
                output_dir=data["output_dir"],
                loss=LossConfig(**data.get("loss", {})),
                rates=AdamRates(**data.get("rates", {})),
                **{k: data[k] for k in _SCALAR_KEYS if k in data},
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


_SCALAR_KEYS = ("iterations", "basis_order", "observation_times", "holdout_times", "noise_scale", "init_trials")


@dataclass
class MetricsReport:
    """Scores of one trained model.

    ``holdout_mse`` averages the squared distance to the clean trajectories
    over particles and holdout times; ``train_mse`` does the same against the
    noisy observations. ``part_accuracy`` is ``None`` for single-part priors.
    """

    holdout_mse: float
    train_mse: float
    rematch_final: float
    part_accuracy: Optional[float] = None
    runtimes: dict = field(default_factory=dict)

    def metrics_dict(self):
        return {
            "holdout_mse": self.holdout_mse,
            "train_mse": self.train_mse,
            "rematch_final": self.rematch_final,
            "part_accuracy": self.part_accuracy,
        }


def observe(scene: Scene, times, noise_scale: float, seed: int):
    """Noisy observations; noise is ``N(0, (noise_scale * diameter)^2)`` per coordinate."""
    rng = np.random.default_rng([seed, 1])
    sigma = noise_scale * scene.diameter()
    out = []
    for t in times:
        pos = trajectory_sample(scene, t).positions
        out.append(Observation(t, pos + sigma * rng.normal(size=pos.shape)))
    return out


def trajectory_mse(model: ReconModel, scene: Scene, times) -> float:
    errs = []
    for t in times:
        diff = eval_trajectories(model, t).positions - trajectory_sample(scene, t).positions
        errs.append(np.mean(np.sum(diff * diff, axis=1)))
    return float(np.mean(errs))


def part_accuracy(labels_pred, labels_true) -> float:
    """Fraction of matching labels, maximized over relabelings of the prediction."""
    labels_pred = np.asarray(labels_pred, dtype=int)
    labels_true = np.asarray(labels_true, dtype=int)
    k = int(max(labels_pred.max(), labels_true.max())) + 1
    best = 0.0
    for perm in itertools.permutations(range(k)):
        best = max(best, float(np.mean(np.asarray(perm)[labels_pred] == labels_true)))
    return best


def predicted_labels(model: ReconModel, times) -> np.ndarray:
    w = np.mean([eval_weights(model, t).w for t in times], axis=0)
    return np.argmax(w, axis=1)


def evaluate(model: ReconModel, scene: Scene, prior: PriorClass, cfg: ExperimentConfig, obs) -> MetricsReport:
    train_err = [
        np.mean(np.sum((eval_trajectories(model, o.time).positions - o.positions) ** 2, axis=1)) for o in obs
    ]
    accuracy = None
    if prior.adaptive:
        accuracy = part_accuracy(predicted_labels(model, cfg.holdout_times), scene.part_labels)
    return MetricsReport(
        holdout_mse=trajectory_mse(model, scene, cfg.holdout_times),
        train_mse=float(np.mean(train_err)),
        rematch_final=rematching_loss(model, prior, REMATCH_EVAL_TIMES, cfg.loss),
        part_accuracy=accuracy,
    )


def write_observations(path, obs):
    d = obs[0].positions.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "particle"] + [f"x{c}" for c in range(d)])
        for o in obs:
            for i, p in enumerate(o.positions):
                writer.writerow([repr(o.time), i] + [repr(float(v)) for v in p])


def write_trajectories(path, model, scene, cfg):
    d = scene.dim
    rows = [(t, "observed") for t in cfg.observation_times] + [(t, "holdout") for t in cfg.holdout_times]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "split", "particle"] + [f"x{c}" for c in range(d)] + [f"true_x{c}" for c in range(d)])
        for t, split in sorted(rows):
            pred = eval_trajectories(model, t).positions
            true = trajectory_sample(scene, t).positions
            for i in range(scene.n):
                writer.writerow([repr(t), split, i] + [repr(float(v)) for v in pred[i]] + [repr(float(v)) for v in true[i]])


def _write_json(path, data, schema=None):
    if schema is not None:
        jsonschema.validate(data, load_schema(schema))
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def prepare(cfg: ExperimentConfig):
    """Scene, observations and initial model shared by every run of ``cfg``."""
    spec = cfg.scene
    scene = make_scene(spec.kind, spec.n, spec.seed, spec.dim, cfg.observation_times)
    obs = observe(scene, cfg.observation_times, cfg.noise_scale, spec.seed)
    model = initialize(obs, cfg.prior_class, TimeBasis(order=cfg.basis_order), trials=cfg.init_trials, seed=spec.seed)
    return scene, obs, model


def run_experiment(cfg: ExperimentConfig, prepared=None) -> MetricsReport:
    """Train on ``cfg`` and write every artifact to ``cfg.output_dir``."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    out = lambda name: os.path.join(cfg.output_dir, name)  # noqa: E731
    timings = {}
    start = time.perf_counter()
    scene, obs, model = prepared if prepared is not None else prepare(cfg)
    timings["prepare"] = time.perf_counter() - start
    prior = cfg.prior_class
    cfg.save(out("config.json"))
    scene.save(out("scene.json"))
    write_observations(out("observations.csv"), obs)

    start = time.perf_counter()
    try:
        trained, history = train(model, obs, prior, cfg.loss, cfg.iterations, cfg.rates)
    except DivergenceError as exc:
        write_history(out("history.csv"), exc.history or [])
        raise
    timings["train"] = time.perf_counter() - start
    write_history(out("history.csv"), history)
    trained.save(out("model.json"))

    start = time.perf_counter()
    report = evaluate(trained, scene, prior, cfg, obs)
    write_trajectories(out("trajectories.csv"), trained, scene, cfg)
    timings["evaluate"] = time.perf_counter() - start
    report.runtimes = timings
    _write_json(out("metrics.json"), report.metrics_dict(), "metrics")
    _write_json(out("timing.json"), timings, "timing")
    return report


@dataclass
class PairedReport:
    regularized: MetricsReport
    baseline: MetricsReport
    delta: dict


def compare(cfg: ExperimentConfig) -> PairedReport:
    """Run ``cfg`` and its ``lam = 0`` twin on the same scene, observations and initialization.

    Results go to ``output_dir/regularized`` and ``output_dir/baseline``;
    ``output_dir/delta.json`` holds regularized minus baseline.
    """
    os.makedirs(cfg.output_dir, exist_ok=True)
    prepared = prepare(cfg)
    reg_cfg = replace(cfg, output_dir=os.path.join(cfg.output_dir, "regularized"))
    base_cfg = replace(
        cfg, output_dir=os.path.join(cfg.output_dir, "baseline"), loss=replace(cfg.loss, lam=0.0)
    )
    reg = run_experiment(reg_cfg, prepared)
    base = run_experiment(base_cfg, prepared)
    delta = {"lam": cfg.loss.lam}
    a, b = reg.metrics_dict(), base.metrics_dict()
    for key in a:
        delta[key] = None if a[key] is None or b[key] is None else a[key] - b[key]
    delta["holdout_mse_ratio"] = a["holdout_mse"] / b["holdout_mse"] if b["holdout_mse"] > 0 else None
    _write_json(os.path.join(cfg.output_dir, "delta.json"), delta, "delta")
    return PairedReport(reg, base, delta)
