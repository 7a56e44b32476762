"""Simulation-free dynamic reconstruction model at desk scale.

Particle ``i`` follows ``x_i(t) = base_i + sum_r theta[i, r] B_r(t)`` for a
fixed time basis with ``B_r(0) = 0``, so ``t = 0`` is the canonical state and
positions and velocities are a single evaluation away. Part weights are a
row-wise softmax of per-particle logit curves over a second basis that also
contains the constant function.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import scipy.linalg
from numpy.polynomial import legendre

from .flow import VelocityFieldSpec
from .priors import FieldSample, PartWeights, TrajectorySample


@dataclass(frozen=True)
class TimeBasis:
    """Functions on ``[0, 1]`` vanishing at ``t = 0``.

    ``polynomial`` uses shifted Legendre polynomials ``P_r(2t - 1) - P_r(-1)``
    for ``r = 1..order`` (same span as ``t, ..., t^order`` but far better
    conditioned); ``fourier`` alternates ``sin(pi q t)`` and
    ``1 - cos(pi q t)``. With ``constant=True`` the function ``1`` is prepended.
    """

    kind: str = "polynomial"
    order: int = 5
    constant: bool = False

    def __post_init__(self):
        if self.kind not in ("polynomial", "fourier"):
            raise ValueError(f"unknown time basis kind {self.kind!r}")
        if self.order < 0 or (self.order == 0 and not self.constant):
            raise ValueError("time basis needs at least one function")

    @property
    def size(self):
        return self.order + int(self.constant)

    @cached_property
    def _poly_coefs(self):
        # power-series coefficients of each basis polynomial, one row per function
        rows = []
        for r in range(1, self.order + 1):
            coef = np.zeros(r + 1)
            coef[r] = 1.0
            power = legendre.leg2poly(coef)
            # substitute x = 2t - 1 and subtract the value at t = 0
            shifted = np.polynomial.Polynomial(power)(np.polynomial.Polynomial([-1.0, 2.0])).coef
            shifted[0] -= (-1.0) ** r
            rows.append(np.pad(shifted, (0, self.order + 1 - shifted.size)))
        return np.array(rows).reshape(self.order, self.order + 1)

    def _raw(self, t, derivative):
        t = float(t)
        if self.kind == "polynomial":
            powers = t ** np.arange(self.order + 1)
            if derivative:
                coefs = self._poly_coefs[:, 1:] * np.arange(1, self.order + 1)
                out = coefs @ powers[:-1]
            else:
                out = self._poly_coefs @ powers
        else:
            r = np.arange(1, self.order + 1)
            w = np.pi * ((r + 1) // 2)
            odd = r % 2 == 1
            if derivative:
                out = np.where(odd, w * np.cos(w * t), w * np.sin(w * t))
            else:
                out = np.where(odd, np.sin(w * t), 1.0 - np.cos(w * t))
        if self.constant:
            out = np.concatenate([[0.0 if derivative else 1.0], out])
        return out

    def values(self, t):
        return self._raw(t, False)

    def derivatives(self, t):
        return self._raw(t, True)

    def to_dict(self):
        return {"kind": self.kind, "order": self.order, "constant": self.constant}


@dataclass(frozen=True)
class Observation:
    time: float
    positions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))


@dataclass
class ReconModel:
    base_positions: np.ndarray
    theta: np.ndarray
    weight_logits: np.ndarray
    basis: TimeBasis = TimeBasis()
    weight_basis: TimeBasis = TimeBasis(order=2, constant=True)

    def __post_init__(self):
        self.base_positions = np.asarray(self.base_positions, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        self.weight_logits = np.asarray(self.weight_logits, dtype=float)
        n, d = self.base_positions.shape
        if self.theta.shape != (n, self.basis.size, d):
            raise ValueError(f"theta must have shape {(n, self.basis.size, d)}, got {self.theta.shape}")
        if self.weight_logits.ndim != 3 or self.weight_logits.shape[0] != n:
            raise ValueError("weight logits must have shape (n, k, m_w)")
        if self.weight_logits.shape[2] != self.weight_basis.size or self.weight_logits.shape[1] < 1:
            raise ValueError("weight logits do not match the weight basis")

    @property
    def n(self):
        return self.base_positions.shape[0]

    @property
    def dim(self):
        return self.base_positions.shape[1]

    @property
    def k(self):
        return self.weight_logits.shape[1]

    @classmethod
    def initial(cls, base_positions, k=1, basis=None, weight_basis=None, logit_scale=0.0, seed=0):
        """Static model at ``base_positions``; logits get seeded noise of size ``logit_scale``."""
        base = np.asarray(base_positions, dtype=float)
        basis = basis or TimeBasis()
        weight_basis = weight_basis or TimeBasis(order=2, constant=True)
        n, d = base.shape
        logits = np.zeros((n, k, weight_basis.size))
        if logit_scale > 0:
            logits[:, :, 0] = logit_scale * np.random.default_rng(seed).normal(size=(n, k))
        return cls(base.copy(), np.zeros((n, basis.size, d)), logits, basis, weight_basis)

    def copy(self):
        return replace(
            self,
            base_positions=self.base_positions.copy(),
            theta=self.theta.copy(),
            weight_logits=self.weight_logits.copy(),
        )

    def to_dict(self):
        return {
            "base_positions": self.base_positions.tolist(),
            "theta": self.theta.tolist(),
            "weight_logits": self.weight_logits.tolist(),
            "basis": self.basis.to_dict(),
            "weight_basis": self.weight_basis.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            np.asarray(data["base_positions"], dtype=float),
            np.asarray(data["theta"], dtype=float),
            np.asarray(data["weight_logits"], dtype=float),
            TimeBasis(**data["basis"]),
            TimeBasis(**data["weight_basis"]),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def eval_trajectories(model: ReconModel, t: float) -> TrajectorySample:
    b = model.basis.values(t)
    db = model.basis.derivatives(t)
    pos = model.base_positions + np.einsum("nmd,m->nd", model.theta, b)
    vel = np.einsum("nmd,m->nd", model.theta, db)
    return TrajectorySample(t, pos, vel)


def softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def eval_weights(model: ReconModel, t: float) -> PartWeights:
    z = np.einsum("nkm,m->nk", model.weight_logits, model.weight_basis.values(t))
    return PartWeights(softmax_rows(z))


# ---------------------------------------------------------------------------
# analytic transported fields


@dataclass(frozen=True)
class AdvectedBump:
    """Gaussian bump ``psi_0`` pushed forward by a constant or rigid flow.

    ``width`` is a scalar or one standard deviation per axis.

    ``psi_t(x) = psi_0(y)`` with ``y = phi_t^{-1}(x)`` in closed form. The time
    derivative uses ``d y / dt = -v(y)``, which holds for autonomous fields.
    """

    generator: VelocityFieldSpec
    center: np.ndarray
    width: float = 0.15

    def __post_init__(self):
        if self.generator.kind not in ("constant", "rigid"):
            raise ValueError(f"analytic fields support constant and rigid generators, not {self.generator.kind}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        # a scalar width gives an isotropic bump; per-axis widths break its rotational symmetry
        width = np.broadcast_to(np.asarray(self.width, dtype=float), self.center.shape).copy()
        if np.any(width <= 0):
            raise ValueError("widths must be positive")
        object.__setattr__(self, "width", width)

    def _augmented(self, t):
        d = self.generator.dim
        m = np.zeros((d + 1, d + 1))
        if self.generator.kind == "constant":
            m[:d, d] = self.generator.c
        else:
            m[:d, :d] = self.generator.rigid.a
            m[:d, d] = self.generator.rigid.b
        return scipy.linalg.expm(-t * m)

    def _pullback(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inv = self._augmented(t)
        d = x.shape[1]
        y = x @ inv[:d, :d].T + inv[:d, d]
        return y, inv[:d, :d]

    def _psi0(self, y):
        diff = y - self.center
        scaled = diff / self.width**2
        val = np.exp(-0.5 * np.sum(diff * scaled, axis=1))
        return val, -val[:, None] * scaled

    def value(self, x, t):
        y, _ = self._pullback(x, t)
        return self._psi0(y)[0]

    def grad(self, x, t):
        y, jac = self._pullback(x, t)
        return self._psi0(y)[1] @ jac

    def dt(self, x, t):
        y, _ = self._pullback(x, t)
        return -np.einsum("nd,nd->n", self._psi0(y)[1], self.generator.velocity(y, t))


def analytic_field(kind, generator: VelocityFieldSpec, t: float, points, center=None, width=0.15) -> FieldSample:
    """Field sample of a transported Gaussian bump at ``points``."""
    if kind != "gaussian-bump-advect":
        raise ValueError(f"unknown analytic field kind {kind!r}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if center is None:
        center = np.full(points.shape[1], 0.5)
    bump = AdvectedBump(generator, center, width)
    return FieldSample(t, points, bump.grad(points, t), bump.dt(points, t))


def image_transform(values):
    """``f(x) = -0.1 ln(1 - |x|) sign(x)`` applied elementwise."""
    values = np.asarray(values, dtype=float)
    if np.any(np.abs(values) >= 1.0):
        raise ValueError("values must lie strictly inside (-1, 1)")
    return -0.1 * np.log1p(-np.abs(values)) * np.sign(values)


def select_field_points(values, threshold: float) -> np.ndarray:
    """Indices whose transformed value is within ``threshold`` of zero."""
    return np.flatnonzero(np.abs(image_transform(values)) <= threshold)
