"""Adam training loop for the reconstruction model."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, SingularSystemError
from .flow import Scene, trajectory_sample
from .losses import LossBreakdown, LossConfig, loss_and_grad, rematching_loss
from .model import Observation, ReconModel, TimeBasis
from .priors import PriorClass


@dataclass(frozen=True)
class AdamRates:
    """Learning rates and schedule.

    Trajectory parameters (base positions and coefficients) use ``trajectory``
    and drop by ``decay`` once ``decay_at`` of the iterations are done; weight
    logits keep ``logits``. The first ``warmup`` fraction runs without the
    matching and entropy terms.
    """

    trajectory: float = 1e-2
    logits: float = 1e-2
    decay: float = 0.1
    decay_at: float = 0.6
    warmup: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    def __init__(self, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads, lrs):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v, lr in zip(params, grads, self.m, self.v, lrs):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def observations_from_scene(scene: Scene, steps=100):
    return [Observation(t, trajectory_sample(scene, t, steps).positions) for t in scene.observation_times]


def fit_observations(obs, basis: TimeBasis = TimeBasis()):
    """Least-squares base positions and coefficients interpolating ``obs``.

    Returns ``(base, theta)``; with more basis functions than observations the
    minimum-norm fit is used.
    """
    design = np.array([np.concatenate([[1.0], basis.values(o.time)]) for o in obs])
    target = np.stack([o.positions for o in obs])
    n_obs, n, d = target.shape
    coef, *_ = np.linalg.lstsq(design, target.reshape(n_obs, n * d), rcond=None)
    coef = coef.reshape(design.shape[1], n, d)
    return coef[0].copy(), np.transpose(coef[1:], (1, 0, 2)).copy()


def hyperplane_logits(model: ReconModel, prior: PriorClass, trials=8, seed=0, probe_times=None):
    """Seed part logits from random hyperplane splits of the base positions.

    Each trial projects the centred base positions on a random direction and
    spreads the standardized projection over the parts; the split with the
    lowest matching loss at ``probe_times`` is kept. Returns a new model.
    """
    if probe_times is None:
        probe_times = np.linspace(0.05, 0.95, 10)
    rng = np.random.default_rng([seed, 3])
    centred = model.base_positions - model.base_positions.mean(axis=0)
    offsets = np.linspace(1.0, -1.0, model.k) if model.k > 1 else np.zeros(1)
    best, best_val = model, None
    for _ in range(trials):
        direction = rng.normal(size=model.dim)
        proj = centred @ (direction / np.linalg.norm(direction))
        proj = proj / max(proj.std(), 1e-12)
        cand = model.copy()
        cand.weight_logits[:] = 0.0
        cand.weight_logits[:, :, 0] = proj[:, None] * offsets[None, :]
        val = rematching_loss(cand, prior, probe_times)
        if best_val is None or val < best_val:
            best, best_val = cand, val
    return best


def initialize(obs, prior: PriorClass, basis: TimeBasis = TimeBasis(), weight_basis=None, trials=8, seed=0):
    """Model fitted to ``obs``; adaptive priors also get hyperplane-split logits."""
    base, theta = fit_observations(obs, basis)
    k = prior.parts
    model = ReconModel.initial(base, k=k, basis=basis, weight_basis=weight_basis)
    model.theta = theta
    if k > 1:
        model = hyperplane_logits(model, prior, trials, seed)
    return model


def train(model: ReconModel, data, prior: PriorClass, cfg: LossConfig, iterations: int, rates: AdamRates = AdamRates()):
    """Optimize ``model`` in place of a copy; returns ``(model, history)``.

    ``data`` is a list of :class:`Observation` or a :class:`Scene`, in which
    case clean observations at the scene's observation times are used. Time
    draws come from ``np.random.default_rng(cfg.seed)``, so runs are
    deterministic.
    """
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    obs = observations_from_scene(data) if isinstance(data, Scene) else list(data)
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    params = [model.base_positions, model.theta, model.weight_logits]
    opt = Adam([p.shape for p in params], rates.beta1, rates.beta2, rates.eps)
    warmup_end = int(np.ceil(rates.warmup * iterations))
    decay_start = int(rates.decay_at * iterations)
    history = []
    for it in range(iterations):
        times = cfg.sample_times(rng)
        warm = it < warmup_end
        if not all(np.all(np.isfinite(p)) for p in params):
            raise DivergenceError("non-finite parameters", step=it, history=history)
        try:
            loss, grad = loss_and_grad(
                model, prior, obs, cfg, times, lam=0.0 if warm else None, entropy_weight=0.0 if warm else None
            )
        except SingularSystemError as exc:
            # only non-finite states make the projection fail
            raise DivergenceError(f"projection failed: {exc}", step=it, history=history) from exc
        if warm:
            total = cfg.rec_weight * loss.rec + cfg.lam * loss.rematch + cfg.entropy_weight * loss.entropy
            loss = LossBreakdown(loss.rec, loss.rematch, loss.entropy, total)
        if not np.isfinite(loss.total) or not np.all(np.isfinite(grad.flat())):
            raise DivergenceError("non-finite loss", step=it, history=history)
        history.append(loss)
        lr_traj = rates.trajectory * (rates.decay if it >= decay_start else 1.0)
        opt.step(params, [grad.base, grad.theta, grad.logits], [lr_traj, lr_traj, rates.logits])
    return model, history


HISTORY_HEADER = ("iteration", "rec", "rematch", "entropy", "total")


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_HEADER)
        for i, h in enumerate(history):
            writer.writerow([i, repr(h.rec), repr(h.rematch), repr(h.entropy), repr(h.total)])
