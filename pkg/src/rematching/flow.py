"""Ground-truth flows: velocity fields, RK4 integration and synthetic scenes.

Scenes are generated from numpy's ``PCG64`` bit generator
(``np.random.default_rng(seed)``), so a ``(kind, n, seed, dim)`` tuple
identifies a scene exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError
from .priors import TrajectorySample, basis_jacobians, basis_values, build_curl_basis
from .tensor_kit import SkewParams, vech_skew

BOX = (0.1, 0.9)
SCENE_KINDS = ("translation-xy", "single-rigid", "two-rigid", "swirl", "restricted-floor")

# generating frequencies of the "swirl" scene; 3 curl fields in either dimension
SWIRL_FREQUENCIES = {2: ((1, 1), (2, 1), (1, 2)), 3: ((1, 1, 1),)}


@dataclass(frozen=True)
class VelocityFieldSpec:
    """A velocity field ``v(x, t)`` of one of four kinds.

    ``constant``: ``v = c``; ``rigid``: ``v = A x + b``; ``divfree``:
    ``v = sum_j beta_j b_j(x)`` over a curl basis; ``custom``: user callables.
    """

    kind: str
    dim: int
    c: Optional[np.ndarray] = None
    rigid: Optional[SkewParams] = None
    frequencies: Optional[tuple] = None
    beta: Optional[np.ndarray] = None
    func: Optional[Callable] = field(default=None, compare=False)
    jac: Optional[Callable] = field(default=None, compare=False)

    @classmethod
    def constant(cls, c):
        c = np.asarray(c, dtype=float)
        return cls("constant", c.size, c=c)

    @classmethod
    def rigid_motion(cls, a, b):
        a = np.asarray(a, dtype=float)
        d = a.shape[0]
        return cls("rigid", d, rigid=SkewParams(d, vech_skew(a), b))

    @classmethod
    def divfree(cls, frequencies, beta, dim):
        freqs = tuple(tuple(int(j) for j in f) for f in frequencies)
        beta = np.asarray(beta, dtype=float)
        if beta.size != len(build_curl_basis(freqs, dim)):
            raise ValueError("beta length does not match the curl basis size")
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        return cls("divfree", dim, frequencies=freqs, beta=beta)

    @classmethod
    def custom(cls, func, jac, dim):
        """``func(x, t) -> (n, d)`` and ``jac(x, t) -> (n, d, d)``."""
        return cls("custom", dim, func=func, jac=jac)

    @property
    def basis(self):
        return build_curl_basis(self.frequencies, self.dim)

    def velocity(self, x, t=0.0):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "constant":
            return np.broadcast_to(self.c, x.shape).copy()
        if self.kind == "rigid":
            return self.rigid(x)
        if self.kind == "divfree":
            return basis_values(self.basis, x) @ self.beta
        return np.asarray(self.func(x, t), dtype=float)

    def jacobian(self, x, t=0.0):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        if self.kind == "constant":
            return np.zeros((n, d, d))
        if self.kind == "rigid":
            return np.broadcast_to(self.rigid.a, (n, d, d)).copy()
        if self.kind == "divfree":
            return basis_jacobians(self.basis, x) @ self.beta
        return np.asarray(self.jac(x, t), dtype=float)

    def divergence(self, x, t=0.0):
        return np.trace(self.jacobian(x, t), axis1=1, axis2=2)

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "dim": self.dim, "c": self.c.tolist()}
        if self.kind == "rigid":
            return {"kind": "rigid", "dim": self.dim, "a": self.rigid.a.tolist(), "b": self.rigid.b.tolist()}
        if self.kind == "divfree":
            return {
                "kind": "divfree",
                "dim": self.dim,
                "frequencies": [list(f) for f in self.frequencies],
                "beta": self.beta.tolist(),
            }
        raise ValueError("custom velocity fields cannot be serialized")

    @classmethod
    def from_dict(cls, data):
        kind = data["kind"]
        if kind == "constant":
            return cls.constant(data["c"])
        if kind == "rigid":
            return cls.rigid_motion(data["a"], data["b"])
        if kind == "divfree":
            return cls.divfree(data["frequencies"], data["beta"], data["dim"])
        raise ValueError(f"unknown velocity field kind {kind!r}")


def integrate_flow(v: VelocityFieldSpec, x0, t: float, steps: int = 100) -> np.ndarray:
    """Classical RK4 for ``d phi/dt = v(phi, t)``, ``phi_0 = x0``, from 0 to ``t``.

    ``x0`` may be a single point or an ``n x d`` array of points.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    x0 = np.asarray(x0, dtype=float)
    x = np.atleast_2d(x0).copy()
    h = t / steps
    tau = 0.0
    for step in range(steps):
        k1 = v.velocity(x, tau)
        k2 = v.velocity(x + 0.5 * h * k1, tau + 0.5 * h)
        k3 = v.velocity(x + 0.5 * h * k2, tau + 0.5 * h)
        k4 = v.velocity(x + h * k3, tau + h)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        tau = (step + 1) * h
        if not np.all(np.isfinite(x)):
            raise DivergenceError("non-finite state in flow integration", step=step)
    return x.reshape(x0.shape)


@dataclass(frozen=True)
class Scene:
    name: str
    initial_positions: np.ndarray
    generators: tuple
    part_labels: np.ndarray
    observation_times: tuple

    def __post_init__(self):
        pos = np.asarray(self.initial_positions, dtype=float)
        labels = np.asarray(self.part_labels, dtype=int)
        times = tuple(float(t) for t in self.observation_times)
        if pos.ndim != 2 or labels.shape != (pos.shape[0],):
            raise ValueError("labels must have one entry per particle")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.generators)):
            raise ValueError("part labels out of range")
        if any(b <= a for a, b in zip(times, times[1:])) or any(not 0 <= t <= 1 for t in times):
            raise ValueError("observation times must be strictly increasing within [0, 1]")
        object.__setattr__(self, "initial_positions", pos)
        object.__setattr__(self, "part_labels", labels)
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "observation_times", times)

    @property
    def n(self):
        return self.initial_positions.shape[0]

    @property
    def dim(self):
        return self.initial_positions.shape[1]

    @property
    def parts(self):
        return len(self.generators)

    def diameter(self):
        pos = self.initial_positions
        return float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0)))

    def to_dict(self):
        return {
            "name": self.name,
            "d": self.dim,
            "n": self.n,
            "labels": self.part_labels.tolist(),
            "initial_positions": self.initial_positions.tolist(),
            "generators": [g.to_dict() for g in self.generators],
            "observation_times": list(self.observation_times),
        }

    @classmethod
    def from_dict(cls, data):
        scene = cls(
            name=data["name"],
            initial_positions=np.asarray(data["initial_positions"], dtype=float).reshape(data["n"], data["d"]),
            generators=tuple(VelocityFieldSpec.from_dict(g) for g in data["generators"]),
            part_labels=np.asarray(data["labels"], dtype=int),
            observation_times=data["observation_times"],
        )
        return scene

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def trajectory_sample(scene: Scene, t: float, steps: int = 100) -> TrajectorySample:
    """Ground-truth positions and velocities of every particle at time ``t``."""
    pos = np.empty_like(scene.initial_positions)
    vel = np.empty_like(pos)
    for j, gen in enumerate(scene.generators):
        mask = scene.part_labels == j
        if not mask.any():
            continue
        x = integrate_flow(gen, scene.initial_positions[mask], t, steps) if t > 0 else scene.initial_positions[mask]
        pos[mask] = x
        vel[mask] = gen.velocity(x, t)
    return TrajectorySample(t, pos, vel)


def continuity_residual(psi, v: VelocityFieldSpec, x, t: float) -> np.ndarray:
    """``d psi/dt + div(psi v)`` at the points ``x``.

    ``psi`` needs ``value(x, t)``, ``grad(x, t)`` and ``dt(x, t)`` methods.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    transport = np.einsum("nd,nd->n", psi.grad(x, t), v.velocity(x, t))
    return psi.dt(x, t) + transport + psi.value(x, t) * v.divergence(x, t)


# ---------------------------------------------------------------------------
# scene generation


def _random_rotation_generator(rng, d, omega_range):
    omega = rng.uniform(*omega_range) * rng.choice([-1.0, 1.0])
    if d == 2:
        return np.array([[0.0, -omega], [omega, 0.0]])
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    wx, wy, wz = omega * axis
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def _about_center(a, center, drift):
    """Rigid field rotating about ``center`` while drifting with velocity ``drift``."""
    return VelocityFieldSpec.rigid_motion(a, drift - a @ center)


def _ball_cluster(rng, n, center, std, radius):
    pts = center + std * rng.normal(size=(n, center.size))
    offset = pts - center
    norm = np.linalg.norm(offset, axis=1, keepdims=True)
    scale = np.minimum(1.0, radius / np.maximum(norm, 1e-300))
    return center + offset * scale


def make_scene(kind: str, n: int, seed: int, dim: int = 3, observation_times=None) -> Scene:
    """Deterministic desk-scale scene inside ``[0.1, 0.9]^dim``.

    ``translation-xy``
        one rigid body translating in the first two coordinates.
    ``single-rigid``
        one Gaussian cluster under a rotation about its centre plus drift.
    ``two-rigid``
        two Gaussian clusters with independent rigid motions.
    ``swirl``
        uniform points advected by a combination of 3 curl-basis fields.
    ``restricted-floor``
        a static floor slab and an object sliding and spinning parallel to it,
        so no velocity has a component along the last axis.
    """
    if kind not in SCENE_KINDS:
        raise ValueError(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")
    if n < 4:
        raise ValueError("scenes need at least 4 particles")
    if dim not in (2, 3):
        raise ValueError("scene dimension must be 2 or 3")
    rng = np.random.default_rng(seed)
    times = tuple(np.linspace(0.0, 1.0, 6)) if observation_times is None else tuple(observation_times)
    labels = np.zeros(n, dtype=int)

    if kind == "translation-xy":
        pos = rng.uniform(0.2, 0.5, size=(n, dim))
        c = np.zeros(dim)
        c[:2] = rng.uniform(0.1, 0.3, size=2) if dim == 3 else [rng.uniform(0.1, 0.3), 0.0]
        generators = (VelocityFieldSpec.constant(c),)
    elif kind == "single-rigid":
        center = rng.uniform(0.45, 0.55, size=dim)
        pos = _ball_cluster(rng, n, center, 0.1, 0.22)
        a = _random_rotation_generator(rng, dim, (0.5, 1.0))
        drift = rng.uniform(-0.08, 0.08, size=dim)
        generators = (_about_center(a, center, drift),)
    elif kind == "two-rigid":
        n0 = n // 2
        centers = [np.full(dim, 0.5), np.full(dim, 0.5)]
        centers[0][0], centers[1][0] = 0.3, 0.7
        centers = [c + rng.uniform(-0.03, 0.03, size=dim) for c in centers]
        pos = np.vstack([
            _ball_cluster(rng, n0, centers[0], 0.06, 0.12),
            _ball_cluster(rng, n - n0, centers[1], 0.06, 0.12),
        ])
        labels[n0:] = 1
        a0 = _random_rotation_generator(rng, dim, (1.0, 1.5))
        a1 = _random_rotation_generator(rng, dim, (1.0, 1.5))
        drift0 = rng.uniform(-0.06, 0.06, size=dim)
        drift1 = rng.uniform(-0.06, 0.06, size=dim)
        generators = (_about_center(a0, centers[0], drift0), _about_center(a1, centers[1], drift1))
    elif kind == "swirl":
        pos = rng.uniform(0.2, 0.8, size=(n, dim))
        freqs = SWIRL_FREQUENCIES[dim]
        beta = rng.uniform(0.06, 0.12, size=3) * rng.choice([-1.0, 1.0], size=3)
        generators = (VelocityFieldSpec.divfree(freqs, beta, dim),)
    else:  # restricted-floor
        n_floor = n // 2
        floor = rng.uniform(0.15, 0.85, size=(n_floor, dim))
        floor[:, -1] = rng.uniform(0.12, 0.18, size=n_floor)
        center = np.full(dim, 0.5)
        center[:-1] = rng.uniform(0.4, 0.5, size=dim - 1)
        center[-1] = 0.4
        obj = _ball_cluster(rng, n - n_floor, center, 0.06, 0.12)
        pos = np.vstack([floor, obj])
        labels[n_floor:] = 1
        omega = rng.uniform(0.8, 1.2) * rng.choice([-1.0, 1.0])
        a = np.zeros((dim, dim))
        if dim == 3:
            a[0, 1], a[1, 0] = -omega, omega
        drift = np.zeros(dim)
        drift[:-1] = rng.uniform(0.05, 0.12, size=dim - 1)
        generators = (VelocityFieldSpec.constant(np.zeros(dim)), _about_center(a, center, drift))
    return Scene(kind, pos, generators, labels, times)
