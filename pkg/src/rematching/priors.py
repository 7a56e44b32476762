"""Velocity-field prior classes and their closed-form projections.

Five prior classes are supported:

``Directional``
    fields with no component along the orthonormal columns of ``V``.
``Rigid``
    ``u(x) = A x + b`` with ``A`` antisymmetric.
``DivFree``
    linear combinations of curl fields of products of sines.
``PiecewiseRigid``
    ``k`` rigid fields blended by per-point part weights.
``DirectionalPlusRigid``
    part 0 is directional, parts ``1..k-1`` rigid.

Each projection comes in a particle form (positions and velocities of tracked
points) and a field form (gradient and time derivative of a scalar field that
is transported by the flow). The adaptive classes minimize the weighted
upper bound ``sum_ij w_ij r_ij^2`` instead of the residual of the blended field.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .errors import SingularMatrixError, SingularSystemError, UnsupportedDimensionError
from .tensor_kit import (
    COND_LIMIT,
    SkewParams,
    block_inverse,
    duplication_skew,
    kron,
    left_inverse_dup,
    skew_size,
    vec,
)

GRAD_EPS = 1e-12
ORTHONORMAL_TOL = 1e-10
WEIGHT_TOL = 1e-8
# relative singular-value cutoff for rank-deficient rigid systems
RANK_TOL = 1e-12


def _as_matrix(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    return x


# ---------------------------------------------------------------------------
# samples and weights


@dataclass(frozen=True)
class TrajectorySample:
    """Positions and velocities of ``n`` particles at time ``t``."""

    t: float
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        pos = _as_matrix(self.positions, "positions")
        vel = _as_matrix(self.velocities, "velocities")
        if pos.shape != vel.shape or pos.shape[0] < 1:
            raise ValueError(f"shape mismatch: positions {pos.shape}, velocities {vel.shape}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]


@dataclass(frozen=True)
class FieldSample:
    """Values of a transported scalar field at probe points.

    ``grads[i]`` is the spatial gradient and ``dpsidt[i]`` the time derivative
    at ``points[i]``.
    """

    t: float
    points: np.ndarray
    grads: np.ndarray
    dpsidt: np.ndarray

    def __post_init__(self):
        pts = _as_matrix(self.points, "points")
        grads = _as_matrix(self.grads, "grads")
        s = np.asarray(self.dpsidt, dtype=float).ravel()
        if pts.shape != grads.shape or s.shape != (pts.shape[0],):
            raise ValueError("inconsistent field sample shapes")
        if not np.all(np.isfinite(s)):
            raise ValueError("dpsidt has non-finite entries")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "grads", grads)
        object.__setattr__(self, "dpsidt", s)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


Sample = Union[TrajectorySample, FieldSample]


def _sample_points(sample):
    return sample.positions if isinstance(sample, TrajectorySample) else sample.points


@dataclass(frozen=True)
class PartWeights:
    """Row-stochastic ``n x k`` matrix of part memberships."""

    w: np.ndarray

    def __post_init__(self):
        w = _as_matrix(self.w, "weights")
        if np.any(w < -WEIGHT_TOL) or np.any(w > 1 + WEIGHT_TOL):
            raise ValueError("weights must lie in [0, 1]")
        if np.any(np.abs(w.sum(axis=1) - 1.0) > WEIGHT_TOL):
            raise ValueError("weight rows must sum to 1")
        object.__setattr__(self, "w", w)

    @property
    def k(self):
        return self.w.shape[1]

    @classmethod
    def uniform(cls, n, k=1):
        return cls(np.full((n, k), 1.0 / k))

    @classmethod
    def hard(cls, labels, k):
        labels = np.asarray(labels, dtype=int)
        w = np.zeros((labels.size, k))
        w[np.arange(labels.size), labels] = 1.0
        return cls(w)


# ---------------------------------------------------------------------------
# curl basis


@dataclass(frozen=True)
class CurlField:
    """Divergence-free field built from ``phi(x) = prod_l sin(j_l pi x_l)``.

    In 3-d the field is ``curl(phi e_axis) = grad(phi) x e_axis``; in 2-d it is
    the rotated gradient ``(-d phi/dx2, d phi/dx1)``.
    """

    freq: tuple
    axis: Optional[int] = None

    @property
    def dim(self):
        return len(self.freq)

    def _potential_derivatives(self, x, hessian=True):
        return _potential_derivatives(self.freq, x, hessian)

    def _mixing(self):
        return _curl_mixing(self.dim, self.axis)

    def __call__(self, x):
        grad, _ = self._potential_derivatives(x, hessian=False)
        return grad @ self._mixing()

    def jacobian(self, x):
        """``J[n, k, p] = d u_k / d x_p``."""
        _, hess = self._potential_derivatives(x)
        return np.einsum("lk,nlp->nkp", self._mixing(), hess)


def _potential_derivatives(freq, x, hessian=True):
    """Gradient and Hessian of ``prod_l sin(a_l x_l)`` with ``a = pi * freq``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    a = np.pi * np.asarray(freq, dtype=float)
    sin = np.sin(a * x)
    dsin = a * np.cos(a * x)
    diag = np.eye(d, dtype=bool)
    # factors[n, p, l]: sin_l with the p-th factor differentiated
    factors = np.where(diag, dsin[:, None, :], sin[:, None, :])
    grad = factors.prod(axis=2)
    if not hessian:
        return grad, None
    f2 = np.broadcast_to(sin[:, None, None, :], (n, d, d, d)).copy()
    p_idx, q_idx = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    off = p_idx != q_idx
    f2[:, p_idx[off], q_idx[off], p_idx[off]] = dsin[:, p_idx[off]]
    f2[:, p_idx[off], q_idx[off], q_idx[off]] = dsin[:, q_idx[off]]
    r = np.arange(d)
    f2[:, r, r, r] = -(a**2) * sin
    return grad, f2.prod(axis=3)


@lru_cache(maxsize=8)
def _curl_mixing(d, axis):
    """Matrix ``M`` with ``u = grad(phi) @ M`` for the curl field."""
    if d == 2:
        return np.array([[0.0, 1.0], [-1.0, 0.0]])
    m = np.zeros((3, 3))
    for k in range(3):
        for l in range(3):
            # (g x e_axis)_k = eps_{k l axis} g_l
            m[l, k] = np.linalg.det(np.eye(3)[[k, l, axis]])
    return m


def build_curl_basis(frequencies: Sequence[Sequence[int]], d: int) -> list:
    if d not in (2, 3):
        raise UnsupportedDimensionError(f"curl basis needs d in (2, 3), got {d}")
    return list(_curl_basis(tuple(tuple(int(j) for j in f) for f in frequencies), d))


@lru_cache(maxsize=64)
def _curl_basis(frequencies, d):
    basis = []
    for freq in frequencies:
        if len(freq) != d or min(freq) < 1:
            raise ValueError(f"frequency tuple {freq} must have {d} positive entries")
        if d == 2:
            basis.append(CurlField(freq))
        else:
            basis.extend(CurlField(freq, axis) for axis in range(3))
    return tuple(basis)


def basis_values(basis, x):
    """Stack basis evaluations into an ``n x d x K`` array."""
    grads = {}
    cols = []
    for b in basis:
        if b.freq not in grads:
            grads[b.freq] = _potential_derivatives(b.freq, x, hessian=False)[0]
        cols.append(grads[b.freq] @ b._mixing())
    return np.stack(cols, axis=2)


def basis_jacobians(basis, x):
    """Stack basis Jacobians into an ``n x d x d x K`` array."""
    hess = {}
    cols = []
    for b in basis:
        if b.freq not in hess:
            hess[b.freq] = _potential_derivatives(b.freq, x)[1]
        cols.append(np.einsum("lk,nlp->nkp", b._mixing(), hess[b.freq]))
    return np.stack(cols, axis=3)


# ---------------------------------------------------------------------------
# prior classes


class PriorTag(str, enum.Enum):
    DIRECTIONAL = "Directional"
    RIGID = "Rigid"
    DIVFREE = "DivFree"
    PIECEWISE_RIGID = "PiecewiseRigid"
    DIRECTIONAL_PLUS_RIGID = "DirectionalPlusRigid"


ADAPTIVE_TAGS = (PriorTag.PIECEWISE_RIGID, PriorTag.DIRECTIONAL_PLUS_RIGID)


@dataclass(frozen=True)
class PriorClass:
    tag: PriorTag
    directions: Optional[np.ndarray] = None
    frequencies: Optional[tuple] = None
    parts: int = 1

    def __post_init__(self):
        tag = PriorTag(self.tag)
        object.__setattr__(self, "tag", tag)
        if tag in (PriorTag.DIRECTIONAL, PriorTag.DIRECTIONAL_PLUS_RIGID):
            if self.directions is None:
                raise ValueError(f"{tag.value} prior needs directions")
            v = np.asarray(self.directions, dtype=float)
            if v.ndim == 1:
                v = v[:, None]
            if np.max(np.abs(v.T @ v - np.eye(v.shape[1]))) > ORTHONORMAL_TOL:
                raise ValueError("direction columns must be orthonormal")
            object.__setattr__(self, "directions", v)
        if tag == PriorTag.DIVFREE:
            if not self.frequencies:
                raise ValueError("DivFree prior needs at least one frequency tuple")
            object.__setattr__(
                self, "frequencies", tuple(tuple(int(j) for j in f) for f in self.frequencies)
            )
        if tag in ADAPTIVE_TAGS:
            if self.parts < 2:
                raise ValueError(f"{tag.value} prior needs parts >= 2")
        else:
            object.__setattr__(self, "parts", 1)

    @property
    def adaptive(self):
        return self.tag in ADAPTIVE_TAGS

    def basis(self, d):
        return build_curl_basis(self.frequencies, d)

    def to_dict(self):
        out = {"tag": self.tag.value}
        if self.directions is not None:
            out["directions"] = self.directions.tolist()
        if self.frequencies is not None:
            out["frequencies"] = [list(f) for f in self.frequencies]
        if self.adaptive:
            out["parts"] = self.parts
        return out

    @classmethod
    def from_dict(cls, data):
        directions = data.get("directions")
        return cls(
            tag=data["tag"],
            directions=None if directions is None else np.asarray(directions, dtype=float),
            frequencies=data.get("frequencies"),
            parts=int(data.get("parts", 1)),
        )

    # convenience constructors
    @classmethod
    def directional(cls, directions):
        return cls(PriorTag.DIRECTIONAL, directions=directions)

    @classmethod
    def rigid(cls):
        return cls(PriorTag.RIGID)

    @classmethod
    def divfree(cls, frequencies):
        return cls(PriorTag.DIVFREE, frequencies=frequencies)

    @classmethod
    def piecewise_rigid(cls, parts):
        return cls(PriorTag.PIECEWISE_RIGID, parts=parts)

    @classmethod
    def directional_plus_rigid(cls, directions, parts):
        return cls(PriorTag.DIRECTIONAL_PLUS_RIGID, directions=directions, parts=parts)


# ---------------------------------------------------------------------------
# residuals


def rho_particles(u: Callable, s: TrajectorySample) -> float:
    """``sum_i ||u(x_i) - v_i||^2``."""
    r = u(s.positions) - s.velocities
    return float(np.sum(r * r))


def rho_field(u: Callable, s: FieldSample) -> float:
    """``sum_i (s_i + <g_i, u(x_i)>)^2``; valid for divergence-free ``u``."""
    r = s.dpsidt + np.einsum("nd,nd->n", s.grads, u(s.points))
    return float(np.sum(r * r))


# ---------------------------------------------------------------------------
# solutions


def _nearest(points, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d2 = np.sum((x[:, None, :] - points[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def _directional_particle_velocity(v, velocities):
    return velocities - (velocities @ v) @ v.T


def _directional_field_velocity(v, grads, s):
    """Projected normal-flow velocity ``-s V_* g / ||g||^2`` (zero where ``g`` vanishes)."""
    g2 = np.sum(grads * grads, axis=1)
    proj = grads - (grads @ v) @ v.T
    scale = np.where(g2 > GRAD_EPS**2, -s / np.where(g2 > GRAD_EPS**2, g2, 1.0), 0.0)
    return proj * scale[:, None]


@dataclass
class ProjectionSolution:
    """Result of projecting a sample onto a prior class.

    ``rigid`` has one entry per part (``None`` for a directional slot) and is
    empty for ``DivFree``; ``beta`` holds the curl-basis coefficients.
    ``residual`` is the minimized objective, which for adaptive classes is the
    weighted upper bound rather than the residual of the blended field.
    """

    prior: PriorClass
    sample: Sample
    residual: float
    rigid: tuple = ()
    beta: Optional[np.ndarray] = None
    weights: Optional[PartWeights] = None
    part_residuals: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def tag(self):
        return self.prior.tag

    def _part_velocity(self, j, x, idx):
        params = self.rigid[j] if self.rigid else None
        if params is not None:
            return params(x)
        s = self.sample
        v = self.prior.directions
        if isinstance(s, TrajectorySample):
            return _directional_particle_velocity(v, s.velocities)[idx]
        return _directional_field_velocity(v, s.grads, s.dpsidt)[idx]

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        tag = self.prior.tag
        if tag == PriorTag.DIVFREE:
            return basis_values(self.prior.basis(x.shape[1]), x) @ self.beta
        idx = _nearest(_sample_points(self.sample), x)
        if not self.prior.adaptive:
            return self._part_velocity(0, x, idx)
        w = self.weights.w[idx]
        return sum(w[:, j : j + 1] * self._part_velocity(j, x, idx) for j in range(self.prior.parts))

    def exact_rho(self):
        """Residual of the evaluated field itself (the blended field for adaptive classes)."""
        if isinstance(self.sample, TrajectorySample):
            return rho_particles(self.evaluate, self.sample)
        return rho_field(self.evaluate, self.sample)

    def objective(self):
        """Recompute the minimized objective at the stored parameters."""
        return float(np.sum(part_residual_terms(self.prior, self.sample, self.rigid, self.beta, self.weights)))


def part_residual_terms(prior, sample, rigid, beta, weights):
    """Per-point, per-part weighted squared residuals as an ``n x k`` array."""
    tag = prior.tag
    if isinstance(sample, TrajectorySample):
        x, vel = sample.positions, sample.velocities
        if tag == PriorTag.DIVFREE:
            r = basis_values(prior.basis(sample.dim), x) @ beta - vel
            return np.sum(r * r, axis=1)[:, None]
        if tag == PriorTag.DIRECTIONAL:
            return np.sum((vel @ prior.directions) ** 2, axis=1)[:, None]
        w = weights.w if weights is not None else np.ones((sample.n, 1))
        cols = []
        for j, params in enumerate(rigid):
            if params is None:
                cols.append(np.sum((vel @ prior.directions) ** 2, axis=1))
            else:
                r = params(x) - vel
                cols.append(np.sum(r * r, axis=1))
        return w * np.stack(cols, axis=1)
    g, s = sample.grads, sample.dpsidt
    if tag == PriorTag.DIVFREE:
        r = s + np.einsum("nd,nd->n", g, basis_values(prior.basis(sample.dim), sample.points) @ beta)
        return (r * r)[:, None]
    if tag == PriorTag.DIRECTIONAL:
        return _directional_field_terms(prior.directions, g, s)[:, None]
    w = weights.w if weights is not None else np.ones((sample.n, 1))
    cols = []
    for params in rigid:
        if params is None:
            cols.append(_directional_field_terms(prior.directions, g, s))
        else:
            r = s + np.einsum("nd,nd->n", g, params(sample.points))
            cols.append(r * r)
    return w * np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# directional class


def _directional_field_terms(v, g, s):
    g2 = np.sum(g * g, axis=1)
    ok = g2 > GRAD_EPS**2
    vg2 = np.sum((g @ v) ** 2, axis=1)
    # 1 - <g, V_* g>/|g|^2 == |V^T g|^2 / |g|^2
    ratio = np.where(ok, vg2 / np.where(ok, g2, 1.0), 1.0)
    return s * s * ratio * ratio


def project_directional_particles(v, s: TrajectorySample) -> ProjectionSolution:
    prior = v if isinstance(v, PriorClass) else PriorClass.directional(v)
    residual = float(np.sum((s.velocities @ prior.directions) ** 2))
    return ProjectionSolution(prior, s, residual, rigid=(None,))


def project_directional_field(v, s: FieldSample) -> ProjectionSolution:
    """Residual of the projected normal-flow velocity ``-s V_* g / ||g||^2``.

    This is not the pointwise minimum over the class (which vanishes whenever
    ``V_* g != 0``); it is the residual left after removing the restricted
    directions from the minimum-norm velocity that explains ``s``.
    """
    prior = v if isinstance(v, PriorClass) else PriorClass.directional(v)
    residual = float(np.sum(_directional_field_terms(prior.directions, s.grads, s.dpsidt)))
    return ProjectionSolution(prior, s, residual, rigid=(None,))


# ---------------------------------------------------------------------------
# rigid family


@lru_cache(maxsize=4)
def _dup_pair(d):
    dup = duplication_skew(d)
    return dup, left_inverse_dup(dup)


def _check_part_weight(w, part):
    total = float(np.sum(w))
    if not np.isfinite(total):
        raise SingularSystemError("part weights are not finite", part=part)
    return total


def _solve_blocks(q, r, s, t, rhs, part):
    full = np.block([[q, r], [s, t]])
    if not np.all(np.isfinite(full)) or not np.all(np.isfinite(rhs)):
        raise SingularSystemError("rigid normal equations are not finite", part=part, cond=np.inf)
    if np.linalg.cond(full) <= COND_LIMIT:
        try:
            return block_inverse(q, r, s, t) @ rhs
        except SingularMatrixError:
            pass
    # rank-deficient but consistent: any exact solution is a minimizer
    sol, *_ = scipy.linalg.lstsq(full, rhs, cond=RANK_TOL, lapack_driver="gelsy", check_finite=False)
    return sol


def rigid_particles_part(pos, vel, w, part=0) -> SkewParams:
    """Weighted rigid fit ``min sum_i w_i ||A x_i + b - v_i||^2`` with ``A = -A^T``."""
    d = pos.shape[1]
    dup, left = _dup_pair(d)
    eye = np.eye(d)
    total = _check_part_weight(w, part)
    if total == 0.0:
        # an unused part: every parameter fits, the ridge tie-break picks zero
        return SkewParams(d, np.zeros(skew_size(d)), np.zeros(d))
    wpos = w[:, None] * pos
    scatter = pos.T @ wpos
    centroid_sum = wpos.sum(axis=0)[:, None]
    q_full = kron(eye, scatter) + kron(scatter, eye)
    r = kron(centroid_sum, eye) - kron(eye, centroid_sum)
    s_full = -kron(eye, centroid_sum.T) / total
    rhs_top = vec(vel.T @ wpos - wpos.T @ vel)
    rhs_bottom = vel.T @ w / total
    sol = _solve_blocks(
        left @ q_full @ dup, left @ r, s_full @ dup, eye, np.concatenate([left @ rhs_top, rhs_bottom]), part
    )
    return SkewParams.from_flat(d, sol)


def rigid_field_part(x, g, s, w, part=0) -> SkewParams:
    """Weighted rigid fit ``min sum_i w_i (s_i + <g_i, A x_i + b>)^2`` with ``A = -A^T``."""
    d = x.shape[1]
    dup, left = _dup_pair(d)
    if _check_part_weight(w, part) == 0.0:
        return SkewParams(d, np.zeros(skew_size(d)), np.zeros(d))
    xx = np.einsum("ni,nj->nij", x, x)
    gg = np.einsum("ni,nj->nij", g, g)
    q_full = (np.einsum("n,nij,nkl->ikjl", w, xx, gg) + np.einsum("n,nij,nkl->ikjl", w, gg, xx)).reshape(d * d, d * d)
    r = (np.einsum("n,ni,nkl->ikl", w, x, gg) - np.einsum("n,nij,nk->ikj", w, gg, x)).reshape(d * d, d)
    y = np.einsum("ni,nk->nik", x, g).reshape(-1, d * d)
    s_full = np.einsum("n,na,nb->ab", w, g, y)
    t = g.T @ (w[:, None] * g)
    ws = w * s
    rhs_top = vec(np.einsum("n,ni,nj->ij", ws, x, g) - np.einsum("n,ni,nj->ij", ws, g, x))
    rhs_bottom = -g.T @ ws
    sol = _solve_blocks(left @ q_full @ dup, left @ r, s_full @ dup, t, np.concatenate([left @ rhs_top, rhs_bottom]), part)
    return SkewParams.from_flat(d, sol)


def _weights_or_ones(w, n, k=1):
    if w is None:
        return PartWeights(np.ones((n, 1))) if k == 1 else None
    if not isinstance(w, PartWeights):
        w = PartWeights(w)
    if w.w.shape[0] != n:
        raise ValueError(f"weights have {w.w.shape[0]} rows for {n} samples")
    return w


def _finish(prior, sample, rigid, beta, weights):
    terms = part_residual_terms(prior, sample, rigid, beta, weights)
    return ProjectionSolution(
        prior, sample, float(np.sum(terms)), rigid=tuple(rigid), beta=beta, weights=weights, part_residuals=terms
    )


def project_rigid_particles(s: TrajectorySample, w: Optional[PartWeights] = None) -> ProjectionSolution:
    w = _weights_or_ones(w, s.n)
    prior = PriorClass.rigid() if w.k == 1 else PriorClass.piecewise_rigid(w.k)
    rigid = [rigid_particles_part(s.positions, s.velocities, w.w[:, j], j) for j in range(w.k)]
    return _finish(prior, s, rigid, None, w if w.k > 1 else None)


def project_rigid_field(s: FieldSample, w: Optional[PartWeights] = None) -> ProjectionSolution:
    w = _weights_or_ones(w, s.n)
    prior = PriorClass.rigid() if w.k == 1 else PriorClass.piecewise_rigid(w.k)
    rigid = [rigid_field_part(s.points, s.grads, s.dpsidt, w.w[:, j], j) for j in range(w.k)]
    return _finish(prior, s, rigid, None, w if w.k > 1 else None)


def project_combined_particles(prior: PriorClass, s: TrajectorySample, w: PartWeights) -> ProjectionSolution:
    w = _weights_or_ones(w, s.n)
    if w.k != prior.parts:
        raise ValueError(f"weights have {w.k} parts, prior expects {prior.parts}")
    rigid = [None] + [rigid_particles_part(s.positions, s.velocities, w.w[:, j], j) for j in range(1, w.k)]
    return _finish(prior, s, rigid, None, w)


def project_combined_field(prior: PriorClass, s: FieldSample, w: PartWeights) -> ProjectionSolution:
    w = _weights_or_ones(w, s.n)
    if w.k != prior.parts:
        raise ValueError(f"weights have {w.k} parts, prior expects {prior.parts}")
    rigid = [None] + [rigid_field_part(s.points, s.grads, s.dpsidt, w.w[:, j], j) for j in range(1, w.k)]
    return _finish(prior, s, rigid, None, w)


# ---------------------------------------------------------------------------
# divergence-free class


def _divfree_prior(basis_or_prior):
    if isinstance(basis_or_prior, PriorClass):
        return basis_or_prior
    return PriorClass.divfree(list(dict.fromkeys(b.freq for b in basis_or_prior)))


def project_divfree_particles(basis, s: TrajectorySample) -> ProjectionSolution:
    """Least-squares fit of curl-basis coefficients to the particle velocities."""
    prior = _divfree_prior(basis)
    phi = basis_values(prior.basis(s.dim), s.positions)
    beta = _lstsq(phi.reshape(-1, phi.shape[2]), s.velocities.ravel())
    return _finish(prior, s, (), beta, None)


def project_divfree_field(basis, s: FieldSample) -> ProjectionSolution:
    prior = _divfree_prior(basis)
    rows = np.einsum("nd,ndk->nk", s.grads, basis_values(prior.basis(s.dim), s.points))
    beta = _lstsq(rows, -s.dpsidt)
    return _finish(prior, s, (), beta, None)


def _lstsq(design, target):
    # curl designs can reach condition 1e8, so the normal equations would lose
    # every digit; pivoted QR on the design keeps the fit exact
    beta, *_ = scipy.linalg.lstsq(design, target, lapack_driver="gelsy", check_finite=False)
    return beta


# ---------------------------------------------------------------------------
# dispatch


def project(prior: PriorClass, sample: Sample, w: Optional[PartWeights] = None) -> ProjectionSolution:
    """Project ``sample`` onto ``prior`` with the matching closed-form solver."""
    particles = isinstance(sample, TrajectorySample)
    tag = prior.tag
    if prior.adaptive and w is None:
        raise ValueError(f"{tag.value} prior requires part weights")
    if tag == PriorTag.DIRECTIONAL:
        return (project_directional_particles if particles else project_directional_field)(prior, sample)
    if tag == PriorTag.RIGID:
        return (project_rigid_particles if particles else project_rigid_field)(sample)
    if tag == PriorTag.DIVFREE:
        return (project_divfree_particles if particles else project_divfree_field)(prior, sample)
    if tag == PriorTag.PIECEWISE_RIGID:
        w = _weights_or_ones(w, sample.n)
        if w.k != prior.parts:
            raise ValueError(f"weights have {w.k} parts, prior expects {prior.parts}")
        return (project_rigid_particles if particles else project_rigid_field)(sample, w)
    return (project_combined_particles if particles else project_combined_field)(prior, sample, w)
