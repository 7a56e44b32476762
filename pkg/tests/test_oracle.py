import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rematching.oracle import (
    DesignSystem,
    assemble_design,
    finite_diff_grad,
    oracle_objective,
    oracle_solve,
    skew_basis,
)
from rematching.priors import FieldSample, PriorClass, TrajectorySample, project
from rematching.tensor_kit import vech_skew

seeds = st.integers(0, 2**32 - 1)


def test_design_shapes(rng):
    s = TrajectorySample(0.0, rng.normal(size=(1, 2)), rng.normal(size=(1, 2)))
    assert assemble_design(PriorClass.rigid(), s).design.shape == (2, 3)
    prior = PriorClass.divfree([(1, 1, 1)])
    s3 = TrajectorySample(0.0, rng.uniform(size=(5, 3)), rng.normal(size=(5, 3)))
    assert assemble_design(prior, s3).design.shape == (15, 3)


def test_design_validation(rng):
    with pytest.raises(ValueError):
        DesignSystem(np.eye(2), [1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        DesignSystem(np.eye(2), [1.0, 2.0], [1.0, -1.0])
    s = TrajectorySample(0.0, rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
    with pytest.raises(ValueError):
        assemble_design(PriorClass.piecewise_rigid(2), s)
    with pytest.raises(ValueError):
        assemble_design(PriorClass.piecewise_rigid(2), s, part=2)
    f = FieldSample(0.0, rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.normal(size=3))
    with pytest.raises(ValueError):
        assemble_design(PriorClass.directional([[1.0], [0.0]]), f)
    with pytest.raises(ValueError):
        assemble_design(PriorClass.rigid(), "not a sample")


def test_field_row_expands_to_residual(rng):
    x, g, s = rng.normal(size=(1, 3)), rng.normal(size=(1, 3)), rng.normal(size=1)
    sys = assemble_design(PriorClass.rigid(), FieldSample(0.0, x, g, s))
    m = rng.normal(size=(3, 3))
    a, b = m - m.T, rng.normal(size=3)
    p = np.concatenate([vech_skew(a), b])
    assert sys.design[0] @ p - sys.target[0] == pytest.approx(s[0] + g[0] @ (a @ x[0] + b), rel=1e-12)


def test_skew_basis_matches_vech(rng):
    m = rng.normal(size=(4, 4))
    a = m - m.T
    coef = vech_skew(a)
    assert np.allclose(sum(c * e for c, e in zip(coef, skew_basis(4))), a)


def test_oracle_solve_examples(rng):
    y = rng.normal(size=4)
    p, r = oracle_solve(DesignSystem(np.eye(4), y, np.ones(4)))
    assert np.allclose(p, y) and r == pytest.approx(0.0, abs=1e-28)
    p, r = oracle_solve(DesignSystem(np.ones((3, 1)), [0.0, 1.0, 2.0], np.ones(3)))
    assert p[0] == pytest.approx(1.0) and r == pytest.approx(2.0)


@given(seeds)
def test_oracle_normal_equations(seed):
    r = np.random.default_rng(seed)
    a, y, w = r.normal(size=(12, 4)), r.normal(size=12), r.uniform(size=12)
    p, _ = oracle_solve(DesignSystem(a, y, w))
    assert np.max(np.abs(a.T @ (w * (a @ p - y)))) <= 1e-9


def test_oracle_beats_random_probes(rng):
    a, y, w = rng.normal(size=(20, 5)), rng.normal(size=20), rng.uniform(size=20)
    sys = DesignSystem(a, y, w)
    p, best = oracle_solve(sys)
    probes = p + rng.normal(size=(1000, 5)) * rng.uniform(1e-6, 1.0, size=(1000, 1))
    assert all(best <= sys.objective(q) for q in probes)


@pytest.mark.parametrize(
    "prior",
    [
        PriorClass.directional([[1.0], [0.0]]),
        PriorClass.rigid(),
        PriorClass.divfree([(1, 1), (2, 1), (1, 3)]),
    ],
    ids=["directional", "rigid", "divfree"],
)
def test_closed_forms_match_oracle(prior, rng):
    for _ in range(20):
        x = rng.uniform(size=(7, 2))
        for sample in (
            TrajectorySample(0.0, x, rng.normal(size=(7, 2))),
            FieldSample(0.0, x, rng.normal(size=(7, 2)), rng.normal(size=7)),
        ):
            ref = oracle_objective(prior, sample)
            assert project(prior, sample).residual == pytest.approx(ref, rel=1e-8, abs=1e-12)


def test_finite_diff_examples():
    assert np.allclose(finite_diff_grad(lambda p: p @ p, np.array([1.0, 2.0])), [2.0, 4.0], atol=1e-6)
    assert np.all(finite_diff_grad(lambda p: 3.0, np.zeros(3)) == 0.0)
    with pytest.raises(ValueError):
        finite_diff_grad(lambda p: 0.0, np.zeros(2), h=0.0)
    with pytest.raises(FloatingPointError):
        finite_diff_grad(lambda p: np.inf, np.zeros(2))
