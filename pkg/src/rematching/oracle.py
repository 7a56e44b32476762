"""Brute-force references for the closed-form solvers.

Every non-directional projection is rewritten as an explicit weighted linear
least-squares problem ``min_p sum_r w_r (design[r] @ p - target[r])^2`` and
solved with a pivoted QR factorization. Nothing here is fast; everything here
is meant to be easy to check by hand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .priors import (
    FieldSample,
    PartWeights,
    PriorClass,
    PriorTag,
    TrajectorySample,
    basis_values,
)


@dataclass(frozen=True)
class DesignSystem:
    design: np.ndarray
    target: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        design = np.atleast_2d(np.asarray(self.design, dtype=float))
        target = np.asarray(self.target, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if design.shape[0] != target.size or weights.size != target.size:
            raise ValueError(f"inconsistent shapes: design {design.shape}, target {target.size}, weights {weights.size}")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "weights", weights)

    def objective(self, p):
        r = self.design @ np.asarray(p, dtype=float) - self.target
        return float(np.sum(self.weights * r * r))


def skew_basis(d):
    """Matrices ``E_c`` with ``A = sum_c a_c E_c`` for the strictly-lower ordering."""
    mats = []
    for j in range(d):
        for i in range(j + 1, d):
            e = np.zeros((d, d))
            e[i, j] = 1.0
            e[j, i] = -1.0
            mats.append(e)
    return mats


def _rigid_columns(x):
    """Per-point blocks ``n x d x p`` mapping ``(vech A, b)`` to ``A x + b``."""
    n, d = x.shape
    mats = skew_basis(d)
    cols = np.zeros((n, d, len(mats) + d))
    for c, e in enumerate(mats):
        for i in range(n):
            cols[i, :, c] = e @ x[i]
    for k in range(d):
        cols[:, k, len(mats) + k] = 1.0
    return cols


def _part_weights(sample, part, w):
    if w is None:
        return np.ones(sample.n)
    w = w.w if isinstance(w, PartWeights) else np.asarray(w, dtype=float)
    if w.ndim == 1:
        return w
    return w[:, 0 if part is None else part]


def assemble_design(prior: PriorClass, sample, part: Optional[int] = None, w=None) -> DesignSystem:
    """Explicit least-squares system for one part of ``prior`` on ``sample``.

    Columns are ``vech(A)`` then ``b`` for rigid parts and the curl-basis
    coefficients for ``DivFree``. A directional part in the particle form gets
    one free coefficient per point and unrestricted direction. The directional
    field form has no least-squares formulation; see :func:`oracle_objective`.
    """
    tag = prior.tag
    if prior.adaptive and part is None:
        raise ValueError("adaptive priors need a part index")
    if part is not None and not 0 <= part < prior.parts:
        raise ValueError(f"part {part} out of range for {prior.parts} parts")
    particles = isinstance(sample, TrajectorySample)
    if not particles and not isinstance(sample, FieldSample):
        raise ValueError(f"unsupported sample type {type(sample).__name__}")
    weights = _part_weights(sample, part, w)
    directional = tag == PriorTag.DIRECTIONAL or (tag == PriorTag.DIRECTIONAL_PLUS_RIGID and part == 0)
    n, d = sample.n, sample.dim

    if directional:
        if not particles:
            raise ValueError("directional field projections are not a linear least-squares problem")
        free = scipy.linalg.null_space(prior.directions.T)
        m = free.shape[1]
        design = np.zeros((n * d, n * m))
        for i in range(n):
            design[i * d : (i + 1) * d, i * m : (i + 1) * m] = free
        return DesignSystem(design, sample.velocities.ravel(), np.repeat(weights, d))

    x = sample.positions if particles else sample.points
    if tag == PriorTag.DIVFREE:
        cols = basis_values(prior.basis(d), x)
    else:
        cols = _rigid_columns(x)
    if particles:
        return DesignSystem(cols.reshape(n * d, -1), sample.velocities.ravel(), np.repeat(weights, d))
    rows = np.array([sample.grads[i] @ cols[i] for i in range(n)])
    return DesignSystem(rows, -sample.dpsidt, weights)


def oracle_solve(system: DesignSystem):
    """Minimum-norm minimizer of the weighted system and its objective value."""
    root = np.sqrt(system.weights)
    if system.design.shape[1] == 0:
        return np.zeros(0), system.objective(np.zeros(0))
    params, *_ = scipy.linalg.lstsq(
        root[:, None] * system.design, root * system.target, lapack_driver="gelsy"
    )
    return params, system.objective(params)


def directional_field_oracle(directions, sample: FieldSample, weights=None) -> float:
    """Two-stage reference for the directional field form.

    Each point gets the minimum-norm velocity solving ``s + <g, u> = 0``; the
    restricted directions are then removed and the field residual evaluated.
    """
    v = np.atleast_2d(np.asarray(directions, dtype=float).T).T
    weights = np.ones(sample.n) if weights is None else np.asarray(weights, dtype=float)
    total = 0.0
    for i in range(sample.n):
        g, s = sample.grads[i], sample.dpsidt[i]
        if np.linalg.norm(g) <= 1e-12:
            total += weights[i] * s * s
            continue
        u, *_ = np.linalg.lstsq(g[None, :], np.array([-s]), rcond=None)
        u = u - v @ (v.T @ u)
        r = s + g @ u
        total += weights[i] * r * r
    return float(total)


def oracle_objective(prior: PriorClass, sample, w=None) -> float:
    """Minimized objective summed over parts, computed without the closed forms."""
    total = 0.0
    for j in range(prior.parts):
        directional = prior.tag == PriorTag.DIRECTIONAL or (
            prior.tag == PriorTag.DIRECTIONAL_PLUS_RIGID and j == 0
        )
        if directional and isinstance(sample, FieldSample):
            total += directional_field_oracle(prior.directions, sample, _part_weights(sample, j, w))
        else:
            total += oracle_solve(assemble_design(prior, sample, j if prior.adaptive else None, w))[1]
    return total


def finite_diff_grad(f: Callable, p, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if not h > 0:
        raise ValueError("step must be positive")
    p = np.asarray(p, dtype=float)
    grad = np.zeros_like(p)
    flat = grad.reshape(-1)
    for idx in range(p.size):
        step = np.zeros(p.size)
        step[idx] = h
        step = step.reshape(p.shape)
        hi, lo = f(p + step), f(p - step)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"non-finite function value at component {idx}")
        flat[idx] = (hi - lo) / (2.0 * h)
    return grad
