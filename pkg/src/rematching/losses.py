"""Training objective: reconstruction + matching loss + part-weight entropy.

The matching term at time ``t`` is ``min_{u in P} rho(u, psi_t)``. Its gradient
with respect to the model parameters is the partial gradient of ``rho`` with
the minimizer held fixed (Danskin), so the projection solvers are never
differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import SingularMatrixError, SingularSystemError
from .model import ReconModel, eval_trajectories, eval_weights
from .priors import (
    GRAD_EPS,
    FieldSample,
    PriorClass,
    PriorTag,
    basis_jacobians,
    basis_values,
    project,
)

BOX = (0.1, 0.9)


@dataclass(frozen=True)
class LossConfig:
    """Loss weights and time sampling.

    ``form`` selects the particle residual or the field residual of a
    Gaussian-splat density built from the particles (non-adaptive priors only).
    """

    lam: float = 0.001
    entropy_weight: float = 0.0001
    times_per_step: int = 4
    rec_weight: float = 1.0
    seed: int = 0
    form: str = "particles"
    field_points: int = 64
    field_width: float = 0.08

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.times_per_step < 1:
            raise ValueError("times_per_step must be >= 1")
        if self.form not in ("particles", "field"):
            raise ValueError(f"unknown residual form {self.form!r}")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def sample_times(self, rng=None):
        rng = np.random.default_rng(self.seed) if rng is None else rng
        return rng.uniform(0.0, 1.0, size=self.times_per_step)


@dataclass(frozen=True)
class LossBreakdown:
    rec: float
    rematch: float
    entropy: float
    total: float


@dataclass
class ModelGrad:
    base: np.ndarray
    theta: np.ndarray
    logits: np.ndarray

    @classmethod
    def zeros_like(cls, model):
        return cls(
            np.zeros_like(model.base_positions), np.zeros_like(model.theta), np.zeros_like(model.weight_logits)
        )

    def scaled(self, alpha):
        return ModelGrad(alpha * self.base, alpha * self.theta, alpha * self.logits)

    def __add__(self, other):
        return ModelGrad(self.base + other.base, self.theta + other.theta, self.logits + other.logits)

    def flat(self):
        return np.concatenate([self.base.ravel(), self.theta.ravel(), self.logits.ravel()])


# ---------------------------------------------------------------------------
# reconstruction and entropy


def _check_observations(model, obs):
    if not obs:
        raise ValueError("need at least one observation")
    for o in obs:
        if o.positions.shape != model.base_positions.shape:
            raise ValueError(f"observation shape {o.positions.shape} does not match model {model.base_positions.shape}")


def reconstruction_loss(model: ReconModel, obs) -> float:
    """Mean squared position error over particles and observations."""
    _check_observations(model, obs)
    total = 0.0
    for o in obs:
        diff = eval_trajectories(model, o.time).positions - o.positions
        total += float(np.sum(diff * diff))
    return total / (model.n * len(obs))


def _reconstruction_grad(model, obs, grad):
    scale = 2.0 / (model.n * len(obs))
    for o in obs:
        diff = eval_trajectories(model, o.time).positions - o.positions
        grad.base += scale * diff
        grad.theta += scale * np.einsum("m,nd->nmd", model.basis.values(o.time), diff)


def entropy_loss(w_means) -> float:
    """``(1/k) sum_j m_j log m_j`` with ``0 log 0 = 0``."""
    m = np.asarray(w_means, dtype=float)
    safe = np.where(m > 0, m, 1.0)
    return float(np.sum(np.where(m > 0, m * np.log(safe), 0.0)) / m.size)


# ---------------------------------------------------------------------------
# per-time matching residual and its partial gradients


def _particle_partials(prior, sample, weights, sol):
    """Partials of the minimized particle residual at a fixed minimizer.

    Returns ``(d/d positions, d/d velocities, d/d weights or None)``.
    """
    x, v = sample.positions, sample.velocities
    dpos = np.zeros_like(x)
    dvel = np.zeros_like(v)
    tag = prior.tag
    if tag == PriorTag.DIVFREE:
        basis = prior.basis(sample.dim)
        r = basis_values(basis, x) @ sol.beta - v
        jac = basis_jacobians(basis, x) @ sol.beta
        return 2.0 * np.einsum("nkp,nk->np", jac, r), -2.0 * r, None
    if tag == PriorTag.DIRECTIONAL:
        vv = prior.directions
        return dpos, 2.0 * (v @ vv) @ vv.T, None
    w = weights.w if weights is not None else np.ones((sample.n, 1))
    dw = np.zeros_like(w)
    for j, params in enumerate(sol.rigid):
        wj = w[:, j : j + 1]
        if params is None:
            proj = v @ prior.directions
            dvel += 2.0 * wj * (proj @ prior.directions.T)
            dw[:, j] = np.sum(proj * proj, axis=1)
        else:
            r = params(x) - v
            dpos += 2.0 * wj * (r @ params.a)
            dvel -= 2.0 * wj * r
            dw[:, j] = np.sum(r * r, axis=1)
    return dpos, dvel, (dw if prior.adaptive else None)


def probe_points(dim, count, seed):
    """Fixed probe locations for the field residual."""
    return np.random.default_rng([seed, 7]).uniform(*BOX, size=(count, dim))


def splat_field(positions, velocities, points, width, t=0.0):
    """Field sample of ``psi_t(x) = sum_k exp(-|x - x_k(t)|^2 / (2 width^2))``.

    Also returns the per-pair kernel values and offsets for backpropagation.
    """
    delta = points[:, None, :] - positions[None, :, :]
    ker = np.exp(-np.sum(delta * delta, axis=2) / (2.0 * width**2))
    inv = 1.0 / width**2
    grads = -inv * np.einsum("pk,pkd->pd", ker, delta)
    dpsidt = inv * np.einsum("pk,pkd,kd->p", ker, delta, velocities)
    return FieldSample(t, points, grads, dpsidt), ker, delta


def _field_partials(prior, fs, sol):
    """Partials of the field residual with respect to ``g`` and ``s``."""
    g, s = fs.grads, fs.dpsidt
    if prior.tag == PriorTag.DIRECTIONAL:
        vv = prior.directions
        g2 = np.sum(g * g, axis=1)
        ok = g2 > GRAD_EPS**2
        g2s = np.where(ok, g2, 1.0)
        vg = g @ vv
        q = np.where(ok, np.sum(vg * vg, axis=1) / g2s, 1.0)
        dq = np.where(ok[:, None], 2.0 * (vg @ vv.T) / g2s[:, None] - 2.0 * (q / g2s)[:, None] * g, 0.0)
        return 2.0 * (s * s * q)[:, None] * dq, 2.0 * s * q * q
    u = sol.evaluate(fs.points)
    e = s + np.einsum("nd,nd->n", g, u)
    return 2.0 * e[:, None] * u, 2.0 * e


def _splat_backprop(dg, ds, ker, delta, velocities, width):
    inv = 1.0 / width**2
    # d g_p / d x_k = inv * ker (I - delta delta^T * inv)
    proj = np.einsum("pkd,pd->pk", delta, dg)
    dpos = inv * (np.einsum("pk,pd->kd", ker, dg) - inv * np.einsum("pk,pk,pkd->kd", ker, proj, delta))
    dv = np.einsum("pkd,kd->pk", delta, velocities)
    dpos += inv * (inv * np.einsum("pk,pk,p,pkd->kd", ker, dv, ds, delta) - np.einsum("pk,p->k", ker, ds)[:, None] * velocities)
    dvel = inv * np.einsum("pk,p,pkd->kd", ker, ds, delta)
    return dpos, dvel


def _solve_at(prior, sample, weights, t):
    try:
        return project(prior, sample, weights)
    except SingularMatrixError as exc:
        raise SingularSystemError(
            f"projection failed at t={t:.6g}: {exc.detail}", part=getattr(exc, "part", None), cond=exc.cond
        ) from exc


def _matching_terms(model, prior, t, cfg, need_grad):
    """Residual at ``t`` plus partial gradients w.r.t. positions, velocities and weights."""
    traj = eval_trajectories(model, t)
    weights = eval_weights(model, t) if prior.adaptive else None
    if cfg.form == "field":
        if prior.adaptive:
            raise ValueError("the field residual supports non-adaptive priors only")
        pts = probe_points(model.dim, cfg.field_points, cfg.seed)
        fs, ker, delta = splat_field(traj.positions, traj.velocities, pts, cfg.field_width, t)
        sol = _solve_at(prior, fs, None, t)
        if not need_grad:
            return sol.residual, None, None, None, weights
        dg, ds = _field_partials(prior, fs, sol)
        dpos, dvel = _splat_backprop(dg, ds, ker, delta, traj.velocities, cfg.field_width)
        return sol.residual, dpos, dvel, None, weights
    sol = _solve_at(prior, traj, weights, t)
    if not need_grad:
        return sol.residual, None, None, None, weights
    dpos, dvel, dw = _particle_partials(prior, traj, weights, sol)
    return sol.residual, dpos, dvel, dw, weights


def _chain_positions(model, t, dpos, dvel, grad, scale):
    grad.base += scale * dpos
    grad.theta += scale * (
        np.einsum("m,nd->nmd", model.basis.values(t), dpos) + np.einsum("m,nd->nmd", model.basis.derivatives(t), dvel)
    )


def _chain_weights(model, t, w, dw, grad, scale):
    dz = w * (dw - np.sum(w * dw, axis=1, keepdims=True))
    grad.logits += scale * np.einsum("nk,m->nkm", dz, model.weight_basis.values(t))


def rematching_loss(model: ReconModel, prior: PriorClass, times, cfg: LossConfig = None) -> float:
    """Mean over ``times`` of the minimized matching residual."""
    cfg = cfg or LossConfig()
    times = list(times)
    if not times:
        raise ValueError("need at least one time")
    if any(not 0.0 <= t <= 1.0 for t in times):
        raise ValueError("times must lie in [0, 1]")
    return float(np.mean([_matching_terms(model, prior, t, cfg, False)[0] for t in times]))


def _evaluate(model, prior, obs, cfg, times, need_grad, lam=None, entropy_weight=None):
    lam = cfg.lam if lam is None else lam
    ew = cfg.entropy_weight if entropy_weight is None else entropy_weight
    times = np.asarray(times, dtype=float)
    grad = ModelGrad.zeros_like(model) if need_grad else None

    rec = reconstruction_loss(model, obs)
    if need_grad and cfg.rec_weight:
        rec_grad = ModelGrad.zeros_like(model)
        _reconstruction_grad(model, obs, rec_grad)
        grad = grad + rec_grad.scaled(cfg.rec_weight)

    rm_total = 0.0
    weights_by_time = []
    for t in times:
        res, dpos, dvel, dw, weights = _matching_terms(model, prior, t, cfg, need_grad and lam > 0)
        rm_total += res
        weights_by_time.append(weights)
        if need_grad and lam > 0:
            scale = lam / len(times)
            _chain_positions(model, t, dpos, dvel, grad, scale)
            if dw is not None:
                _chain_weights(model, t, weights.w, dw, grad, scale)
    rematch = rm_total / len(times)

    entropy = 0.0
    if prior.adaptive:
        stacked = np.stack([w.w for w in weights_by_time])
        means = stacked.mean(axis=(0, 1))
        entropy = entropy_loss(means)
        if need_grad and ew > 0:
            k = means.size
            dmean = (np.log(np.where(means > 0, means, 1.0)) + 1.0) / k
            dw = np.broadcast_to(dmean / (model.n * len(times)), (model.n, k))
            for t, w in zip(times, weights_by_time):
                _chain_weights(model, t, w.w, dw, grad, ew)

    total = cfg.rec_weight * rec + lam * rematch + ew * entropy
    return LossBreakdown(rec, rematch, entropy, total), grad


def total_loss(model, prior, obs, cfg: LossConfig, times=None) -> LossBreakdown:
    """Loss breakdown; ``times`` default to ``cfg.times_per_step`` draws seeded by ``cfg.seed``."""
    times = cfg.sample_times() if times is None else times
    return _evaluate(model, prior, obs, cfg, times, False)[0]


def grad_total_loss(model, prior, obs, cfg: LossConfig, times=None) -> ModelGrad:
    """Analytic gradient of :func:`total_loss` at the same sampled times."""
    times = cfg.sample_times() if times is None else times
    return _evaluate(model, prior, obs, cfg, times, True)[1]


def loss_and_grad(model, prior, obs, cfg: LossConfig, times, lam=None, entropy_weight=None):
    return _evaluate(model, prior, obs, cfg, times, True, lam, entropy_weight)
