"""Euler-Maruyama simulation of parametric SDEs with pathwise Jacobians.

Models are dX_t = b(X_t, t; theta) dt + sigma(X_t, t) dW_t with a scalar
parameter theta entering the drift only.  Alongside the states the simulator
can carry the first-variation process Y_k (sensitivity of X_k to its
starting point) and its inverse Z_k, from which Malliavin derivatives of
smooth path functionals are assembled downstream.

All model callables must broadcast over leading axes: states arrive either
as (n,) for a single path or (N, n) for a block of paths.  Constant
coefficients may simply return (n,), (n, n) or (n, n, d) arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteState, SingularJacobian
from .streams import TAG_NOISE, _StreamPool, stream

_COND_LIMIT = 1e12


def fsum(values) -> float:
    """Exactly rounded sum of an array; immune to accumulation order."""
    return math.fsum(np.asarray(values, dtype=float).ravel())


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_M = horizon."""

    horizon: float
    steps: int

    def __post_init__(self) -> None:
        if self.horizon <= 0.0 or not math.isfinite(self.horizon):
            raise ValueError("horizon must be positive and finite")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


@dataclass(frozen=True)
class NoisePath:
    """Brownian increments of one path, regenerable from (master_seed, path_index)."""

    increments: np.ndarray  # (M, d), N(0, dt) entries
    master_seed: int
    path_index: int


@dataclass(frozen=True)
class SdeModel:
    """Drift/diffusion coefficients and their derivatives for one SDE family.

    drift(x, t, theta) -> (..., n);  drift_dtheta the same shape;
    drift_dx(x, t, theta) -> (..., n, n) with [i, m] = d b_i / d x_m;
    diffusion(x, t) -> (..., n, d);
    diffusion_dx(x, t) -> (..., n, n, d) with [i, m, j] = d sigma_ij / d x_m.
    """

    drift: Callable
    drift_dtheta: Callable
    drift_dx: Callable
    diffusion: Callable
    diffusion_dx: Callable
    state_dim: int
    noise_dim: int
    name: str = "custom"


@dataclass(frozen=True)
class JacobianPath:
    """First-variation matrices Y_k and inverses Z_k along one path (or a block)."""

    y: np.ndarray  # (..., M+1, n, n)
    z: np.ndarray  # (..., M+1, n, n)


@dataclass(frozen=True)
class PathBundle:
    """One simulated path: states on the grid plus the noise that produced them."""

    model: SdeModel
    grid: TimeGrid
    theta: float
    states: np.ndarray  # (M+1, n)
    noise: NoisePath
    jacobians: JacobianPath | None = None

    @property
    def increments(self) -> np.ndarray:
        return self.noise.increments


@dataclass(frozen=True)
class PathBatch:
    """A block of paths simulated together; row i is bit-identical to the
    single path generated from (master_seed, path_indices[i])."""

    model: SdeModel
    grid: TimeGrid
    theta: float
    states: np.ndarray       # (N, M+1, n)
    increments: np.ndarray   # (N, M, d)
    master_seed: int
    path_indices: np.ndarray  # (N,)
    jacobians: JacobianPath | None = None

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    def path(self, i: int) -> PathBundle:
        noise = NoisePath(self.increments[i], self.master_seed, int(self.path_indices[i]))
        jac = None
        if self.jacobians is not None:
            jac = JacobianPath(self.jacobians.y[i], self.jacobians.z[i])
        return PathBundle(self.model, self.grid, self.theta, self.states[i], noise, jac)


# ---------------------------------------------------------------------------
# noise generation


def generate_noise(master_seed: int, path_index: int, grid: TimeGrid, noise_dim: int) -> NoisePath:
    """Draw the (M, d) Brownian increments of one path from its own stream."""
    rng = stream(master_seed, path_index, tag=TAG_NOISE)
    increments = rng.standard_normal((grid.steps, noise_dim)) * math.sqrt(grid.dt)
    return NoisePath(increments, master_seed, path_index)


def _noise_block(master_seed: int, path_indices, grid: TimeGrid, noise_dim: int) -> np.ndarray:
    """(N, M, d) increments; row i bit-identical to generate_noise(seed, indices[i])."""
    pool = _StreamPool()
    out = np.empty((len(path_indices), grid.steps, noise_dim))
    for row, idx in enumerate(path_indices):
        rng = pool.rekey(master_seed, int(idx), tag=TAG_NOISE)
        out[row] = rng.standard_normal((grid.steps, noise_dim))
    out *= math.sqrt(grid.dt)
    return out


# ---------------------------------------------------------------------------
# Euler engine, shared by single-path and block simulation


def _apply_diffusion(sig: np.ndarray, dw: np.ndarray) -> np.ndarray:
    # sig (n, d) constant or (..., n, d) state-dependent; dw (..., d)
    if sig.ndim == 2:
        return dw @ sig.T
    return np.einsum("...ij,...j->...i", sig, dw)


def _euler_continue(model: SdeModel, theta: float, grid: TimeGrid, states: np.ndarray,
                    increments: np.ndarray, from_step: int) -> np.ndarray:
    """Fill states beyond from_step by Euler, given the state at from_step."""
    times = grid.times
    dt = grid.dt
    x = states[..., from_step, :]
    for k in range(from_step, grid.steps):
        b = np.asarray(model.drift(x, times[k], theta))
        sig = np.asarray(model.diffusion(x, times[k]))
        x = x + dt * b + _apply_diffusion(sig, increments[..., k, :])
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(k + 1)
        states[..., k + 1, :] = x
    return states


def _euler_states(model: SdeModel, theta: float, x0: np.ndarray, grid: TimeGrid,
                  increments: np.ndarray) -> np.ndarray:
    lead = increments.shape[:-2]
    states = np.empty(lead + (grid.steps + 1, model.state_dim))
    states[..., 0, :] = x0
    return _euler_continue(model, theta, grid, states, increments, 0)


def _euler_jacobians(model: SdeModel, theta: float, grid: TimeGrid, states: np.ndarray,
                     increments: np.ndarray) -> JacobianPath:
    times = grid.times
    dt = grid.dt
    n = model.state_dim
    lead = states.shape[:-2]
    eye = np.eye(n)
    y = np.empty(lead + (grid.steps + 1, n, n))
    yk = np.empty(lead + (n, n))
    yk[...] = eye
    y[..., 0, :, :] = yk
    for k in range(grid.steps):
        x = states[..., k, :]
        jb = np.asarray(model.drift_dx(x, times[k], theta))
        js = np.asarray(model.diffusion_dx(x, times[k]))
        amat = dt * jb + np.einsum("...imj,...j->...im", js, increments[..., k, :])
        amat = amat + eye
        yk = amat @ yk
        y[..., k + 1, :, :] = yk
    if not np.all(np.isfinite(y)):
        raise SingularJacobian("non-finite first-variation matrix")
    if n == 1:
        if np.any(y == 0.0):
            raise SingularJacobian("first-variation matrix hit zero")
        z = 1.0 / y
    else:
        try:
            z = np.linalg.inv(y)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"first-variation matrix not invertible: {exc}") from exc
        cond = np.linalg.norm(y, axis=(-2, -1)) * np.linalg.norm(z, axis=(-2, -1))
        if np.any(cond > _COND_LIMIT):
            raise SingularJacobian(f"first-variation condition number exceeds {_COND_LIMIT:g}")
    if not np.all(np.isfinite(z)):
        raise SingularJacobian("first-variation inverse overflowed")
    return JacobianPath(y, z)


def simulate_path(model: SdeModel, theta: float, x0, grid: TimeGrid, noise: NoisePath,
                  with_jacobian: bool = False) -> PathBundle:
    """Run the Euler recursion along one noise path.

    With with_jacobian=True the first-variation process and its inverse are
    propagated alongside the states.
    """
    increments = np.asarray(noise.increments, dtype=float)
    if increments.shape != (grid.steps, model.noise_dim):
        raise ValueError("noise increments do not match grid/model dimensions")
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (model.state_dim,))
    states = _euler_states(model, theta, x0, grid, increments)
    jac = _euler_jacobians(model, theta, grid, states, increments) if with_jacobian else None
    return PathBundle(model, grid, float(theta), states, noise, jac)


def simulate_paths(model: SdeModel, theta: float, x0, grid: TimeGrid, n_paths: int,
                   master_seed: int, first_index: int = 0,
                   with_jacobian: bool = False) -> PathBatch:
    """Simulate a block of paths with indices first_index .. first_index+n_paths-1."""
    indices = np.arange(first_index, first_index + n_paths)
    increments = _noise_block(master_seed, indices, grid, model.noise_dim)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (model.state_dim,))
    states = _euler_states(model, theta, x0, grid, increments)
    jac = _euler_jacobians(model, theta, grid, states, increments) if with_jacobian else None
    return PathBatch(model, grid, float(theta), states, increments, master_seed, indices, jac)


def resume_path(bundle: PathBundle, from_step: int, new_state_at_step, noise: NoisePath) -> PathBundle:
    """Restart a path at a given step from a new state, reusing supplied noise.

    The result keeps the input states strictly before from_step, places
    new_state_at_step at from_step, and evolves by Euler with the supplied
    increments from from_step on.  Jacobians are recomputed when the input
    bundle carried them (they depend on the altered states).
    """
    model = bundle.model
    grid = bundle.grid
    if not 0 <= from_step <= grid.steps:
        raise ValueError("from_step outside the grid")
    increments = np.asarray(noise.increments, dtype=float)
    if increments.shape != (grid.steps, model.noise_dim):
        raise ValueError("noise increments do not match the bundle's grid")
    states = np.array(bundle.states, dtype=float)
    states[from_step] = np.broadcast_to(np.asarray(new_state_at_step, dtype=float),
                                        (model.state_dim,))
    _euler_continue(model, bundle.theta, grid, states, increments, from_step)
    jac = None
    if bundle.jacobians is not None:
        jac = _euler_jacobians(model, bundle.theta, grid, states, increments)
    return PathBundle(model, grid, bundle.theta, states, noise, jac)


# ---------------------------------------------------------------------------
# built-in model library


def _constant_diffusion_matrix(sigma, n: int, d: int) -> np.ndarray:
    sig = np.zeros((n, d))
    np.fill_diagonal(sig, sigma)
    return sig


def ou_model(sigma: float = 1.0, dim: int = 1) -> SdeModel:
    """Ornstein-Uhlenbeck family dX = -theta X dt + sigma dW (diagonal, any dim)."""
    n = int(dim)
    sig = _constant_diffusion_matrix(sigma, n, n)
    zeros3 = np.zeros((n, n, n))
    eye = np.eye(n)
    return SdeModel(
        drift=lambda x, t, theta: -theta * x,
        drift_dtheta=lambda x, t, theta: -x,
        drift_dx=lambda x, t, theta: -theta * eye,
        diffusion=lambda x, t: sig,
        diffusion_dx=lambda x, t: zeros3,
        state_dim=n,
        noise_dim=n,
        name="ou",
    )


def mean_reverting_model(mean: float = 1.0, sigma: float = 1.0, dim: int = 1) -> SdeModel:
    """Mean-reverting family dX = theta (mean - X) dt + sigma dW."""
    n = int(dim)
    sig = _constant_diffusion_matrix(sigma, n, n)
    zeros3 = np.zeros((n, n, n))
    eye = np.eye(n)
    return SdeModel(
        drift=lambda x, t, theta: theta * (mean - x),
        drift_dtheta=lambda x, t, theta: mean - x,
        drift_dx=lambda x, t, theta: -theta * eye,
        diffusion=lambda x, t: sig,
        diffusion_dx=lambda x, t: zeros3,
        state_dim=n,
        noise_dim=n,
        name="mean-reverting",
    )


def validate_drift_gradient(model: SdeModel, theta: float, rng: np.random.Generator,
                            n_probes: int = 20, h: float = 1e-6) -> float:
    """Max relative gap between drift_dtheta and a central difference of drift.

    Probes randomized states/times; used as a model self-check in tests.
    """
    worst = 0.0
    for _ in range(n_probes):
        x = rng.standard_normal(model.state_dim) * 2.0
        t = float(rng.uniform(0.0, 1.0))
        fd = (np.asarray(model.drift(x, t, theta + h)) - np.asarray(model.drift(x, t, theta - h))) / (2.0 * h)
        an = np.asarray(model.drift_dtheta(x, t, theta))
        scale = max(float(np.max(np.abs(an))), 1.0)
        worst = max(worst, float(np.max(np.abs(fd - an))) / scale)
    return worst


# ---------------------------------------------------------------------------
# closed-form reference moments for the OU family (test oracles / CLI reference)


def ou_terminal_variance(theta: float, sigma: float, t: float) -> float:
    """Var(X_t) for dX = -theta X dt + sigma dW started at a point."""
    if theta == 0.0:
        return sigma * sigma * t
    return -sigma * sigma * math.expm1(-2.0 * theta * t) / (2.0 * theta)


def ou_conditional_second_moment(theta: float, sigma: float, t_cond: float, horizon: float) -> float:
    """E[X_T^2 | X_{t*} = 0] for the OU model: variance accumulated over T - t*."""
    if not 0.0 <= t_cond <= horizon:
        raise ValueError("conditioning time must lie in [0, horizon]")
    return ou_terminal_variance(theta, sigma, horizon - t_cond)
