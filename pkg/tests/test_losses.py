import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rematching.flow import make_scene
from rematching.losses import (
    LossConfig,
    ModelGrad,
    entropy_loss,
    grad_total_loss,
    reconstruction_loss,
    rematching_loss,
    total_loss,
)
from rematching.model import Observation, ReconModel, TimeBasis, eval_trajectories
from rematching.oracle import finite_diff_grad
from rematching.priors import PriorClass
from rematching.train import fit_observations, observations_from_scene

seeds = st.integers(0, 2**32 - 1)
TIMES = [0.15, 0.4, 0.85]


def random_model(rng, n=5, d=2, k=1, order=3):
    basis = TimeBasis(order=order)
    wb = TimeBasis(order=1, constant=True)
    return ReconModel(
        rng.uniform(size=(n, d)),
        0.3 * rng.normal(size=(n, basis.size, d)),
        rng.normal(size=(n, k, wb.size)),
        basis,
        wb,
    )


def random_obs(rng, model, times=(0.0, 0.5, 1.0)):
    return [Observation(t, rng.uniform(size=model.base_positions.shape)) for t in times]


def with_flat(model, p):
    out = model.copy()
    sizes = [model.base_positions.size, model.theta.size, model.weight_logits.size]
    a, b, c = np.split(p, np.cumsum(sizes)[:2])
    out.base_positions = a.reshape(model.base_positions.shape)
    out.theta = b.reshape(model.theta.shape)
    out.weight_logits = c.reshape(model.weight_logits.shape)
    return out


def flat(model):
    return np.concatenate([model.base_positions.ravel(), model.theta.ravel(), model.weight_logits.ravel()])


def danskin_error(model, prior, obs, cfg, times=TIMES):
    analytic = grad_total_loss(model, prior, obs, cfg, times).flat()
    fd = finite_diff_grad(lambda p: total_loss(with_flat(model, p), prior, obs, cfg, times).total, flat(model), 1e-6)
    return np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)


def test_reconstruction_examples(rng):
    model = random_model(rng)
    obs = [Observation(t, eval_trajectories(model, t).positions) for t in (0.0, 0.3)]
    assert reconstruction_loss(model, obs) == 0.0
    one = ReconModel.initial(np.zeros((1, 3)))
    assert reconstruction_loss(one, [Observation(0.2, [[1.0, 0.0, 0.0]])]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        reconstruction_loss(one, [Observation(0.2, np.zeros((2, 3)))])
    with pytest.raises(ValueError):
        reconstruction_loss(one, [])


def test_reconstruction_matches_direct_sum(rng):
    model = random_model(rng, n=4, d=3)
    obs = random_obs(rng, model)
    ref = 0.0
    for o in obs:
        for i in range(model.n):
            x = model.base_positions[i] + model.basis.values(o.time) @ model.theta[i]
            ref += np.sum((x - o.positions[i]) ** 2)
    assert reconstruction_loss(model, obs) == pytest.approx(ref / (4 * 3), rel=1e-12)


def test_entropy_examples():
    assert entropy_loss([0.5, 0.5]) == pytest.approx(-0.34657, abs=1e-5)
    assert entropy_loss([1.0, 0.0]) == 0.0
    assert entropy_loss([0.25, 0.75]) == pytest.approx((0.25 * np.log(0.25) + 0.75 * np.log(0.75)) / 2, rel=1e-14)
    assert entropy_loss([0.25, 0.75]) == pytest.approx(-0.28117, abs=1e-5)


def test_breakdown_identity_and_lambda_zero(rng):
    model = random_model(rng, k=2)
    obs = random_obs(rng, model)
    prior = PriorClass.piecewise_rigid(2)
    cfg = LossConfig(lam=0.3, entropy_weight=0.05)
    b = total_loss(model, prior, obs, cfg, TIMES)
    assert b.total == pytest.approx(b.rec + 0.3 * b.rematch + 0.05 * b.entropy, rel=1e-14)
    zero = LossConfig(lam=0.0, entropy_weight=0.0)
    assert total_loss(model, prior, obs, zero, TIMES).total == b.rec
    g = grad_total_loss(model, prior, obs, zero, TIMES)
    rec_only = finite_diff_grad(lambda p: reconstruction_loss(with_flat(model, p), obs), flat(model))
    assert np.allclose(g.flat(), rec_only, atol=1e-8)
    assert np.all(g.logits == 0)


def test_default_times_are_seeded(rng):
    model = random_model(rng)
    obs = random_obs(rng, model)
    cfg = LossConfig(seed=4)
    assert total_loss(model, PriorClass.rigid(), obs, cfg) == total_loss(model, PriorClass.rigid(), obs, cfg)
    times = cfg.sample_times()
    assert total_loss(model, PriorClass.rigid(), obs, cfg) == total_loss(model, PriorClass.rigid(), obs, cfg, times)


def test_static_model_has_zero_gradient(rng):
    model = ReconModel.initial(rng.uniform(size=(6, 3)))
    obs = [Observation(t, model.base_positions) for t in (0.0, 0.5, 1.0)]
    cfg = LossConfig(lam=1.0)
    assert total_loss(model, PriorClass.rigid(), obs, cfg, TIMES).total <= 1e-20
    g = grad_total_loss(model, PriorClass.rigid(), obs, cfg, TIMES)
    assert np.max(np.abs(g.flat())) <= 1e-12


def test_perfect_model_on_prior_motion(rng):
    scene = make_scene("two-rigid", 24, seed=3, dim=3)
    obs = observations_from_scene(scene)
    base, theta = fit_observations(obs, TimeBasis(order=5))
    model = ReconModel.initial(base, k=2, basis=TimeBasis(order=5))
    model.theta = theta
    model.weight_logits[:, :, 0] = 40.0 * (2 * np.eye(2)[scene.part_labels] - 1)
    rm = rematching_loss(model, PriorClass.piecewise_rigid(2), np.linspace(0, 1, 11))
    # the order-5 polynomial only approximates the rotation; the residual is interpolation error
    assert rm <= 1e-6


@pytest.mark.parametrize(
    "prior,k,d",
    [
        (PriorClass.rigid(), 1, 2),
        (PriorClass.rigid(), 1, 3),
        (PriorClass.divfree([(1, 1), (1, 2)]), 1, 2),
        (PriorClass.directional([[0.0], [0.0], [1.0]]), 1, 3),
        (PriorClass.piecewise_rigid(2), 2, 2),
        (PriorClass.directional_plus_rigid([[0.0], [1.0]], 2), 2, 2),
    ],
    ids=["rigid2", "rigid3", "divfree", "directional", "piecewise", "dir+rigid"],
)
def test_danskin_gradient_particles(prior, k, d):
    r = np.random.default_rng(11)
    for _ in range(3):
        model = random_model(r, n=5, d=d, k=k)
        obs = random_obs(r, model)
        cfg = LossConfig(lam=0.7, entropy_weight=0.1)
        assert danskin_error(model, prior, obs, cfg) <= 1e-5


@pytest.mark.parametrize(
    "prior", [PriorClass.rigid(), PriorClass.divfree([(1, 1), (2, 1)]), PriorClass.directional([[1.0], [0.0]])]
)
def test_danskin_gradient_field_form(prior):
    r = np.random.default_rng(5)
    model = random_model(r, n=4, d=2)
    obs = random_obs(r, model)
    cfg = LossConfig(lam=0.5, form="field", field_points=12, field_width=0.2)
    assert danskin_error(model, prior, obs, cfg) <= 1e-5


def test_field_form_rejects_adaptive(rng):
    model = random_model(rng, k=2)
    with pytest.raises(ValueError):
        total_loss(model, PriorClass.piecewise_rigid(2), random_obs(rng, model), LossConfig(form="field"), TIMES)


@settings(max_examples=20)
@given(seeds, st.floats(0.1, 10.0))
def test_rematch_gradient_scales_with_lambda(seed, alpha):
    r = np.random.default_rng(seed)
    model = random_model(r, k=2)
    obs = random_obs(r, model)
    prior = PriorClass.piecewise_rigid(2)
    rec = grad_total_loss(model, prior, obs, LossConfig(lam=0.0, entropy_weight=0.0), TIMES).flat()
    g1 = grad_total_loss(model, prior, obs, LossConfig(lam=0.2, entropy_weight=0.0), TIMES).flat() - rec
    g2 = grad_total_loss(model, prior, obs, LossConfig(lam=0.2 * alpha, entropy_weight=0.0), TIMES).flat() - rec
    assert np.allclose(g2, alpha * g1, rtol=1e-9, atol=1e-12)


@settings(max_examples=20)
@given(seeds, st.lists(st.floats(0, 1), min_size=1, max_size=5))
def test_rematching_is_mean_of_single_times(seed, times):
    r = np.random.default_rng(seed)
    model = random_model(r, k=2)
    prior = PriorClass.piecewise_rigid(2)
    whole = rematching_loss(model, prior, times)
    parts = np.mean([rematching_loss(model, prior, [t]) for t in times])
    assert whole == pytest.approx(parts, rel=1e-12, abs=1e-300)


def test_rematching_time_validation(rng):
    model = random_model(rng)
    with pytest.raises(ValueError):
        rematching_loss(model, PriorClass.rigid(), [])
    with pytest.raises(ValueError):
        rematching_loss(model, PriorClass.rigid(), [1.2])
    with pytest.raises(ValueError):
        LossConfig(lam=-1.0)


def test_model_grad_arithmetic(rng):
    model = random_model(rng, k=2)
    g = ModelGrad.zeros_like(model)
    assert g.flat().size == flat(model).size
    h = ModelGrad(np.ones_like(g.base), np.ones_like(g.theta), np.ones_like(g.logits))
    assert np.all((h + h.scaled(2.0)).flat() == 3.0)
