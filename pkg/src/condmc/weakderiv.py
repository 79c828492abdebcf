"""Measure-splitting (weak-derivative) gradient estimation for Euler chains.

The theta-derivative of the one-step Gaussian transition kernel is a signed
measure; splitting it into its positive and negative parts expresses the
derivative as the difference of two proper transition kernels.  Per
coordinate the parts place the next state at the Gaussian mean shifted up or
down by a Rayleigh-distributed radius, weighted by the drift sensitivity.  A
gradient estimate follows by branching a simulated path at one step (or at
every step), propagating the coupled branch pair to the horizon with common
random numbers, and averaging the weighted difference of the functional
values.  The variance of this branch estimator stays bounded as the horizon
grows, unlike the score-function (likelihood-ratio) baseline, which is also
provided for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonDiagonalDiffusion, SingularDiffusion, ZeroSensitivity
from .functionals import PathFunctional
from .reports import GradientReport
from .sde import (
    NoisePath,
    PathBatch,
    SdeModel,
    TimeGrid,
    _euler_continue,
    _euler_jacobians,
    fsum,
    generate_noise,
    resume_path,
    simulate_path,
    simulate_paths,
)
from .streams import TAG_BRANCH, TAG_CHOICE, _StreamPool, stream

_SQRT_2PI = math.sqrt(2.0 * math.pi)

DEFAULT_BLOCK_SIZE = 25_000


@dataclass(frozen=True)
class HjComponent:
    """One coordinate's share of the split transition-kernel derivative."""

    index: int
    weight: float
    sign: float
    rayleigh_scale: float
    mean: float


@dataclass(frozen=True)
class HjDecomposition:
    """Split of the theta-derivative of one Euler transition kernel.

    scale is the total mass of either part (the positive and negative parts
    carry equal mass by construction); per_dimension lists the coordinates
    with nonzero drift sensitivity; mean is the nominal Gaussian mean
    x + dt*b; rayleigh_scales and dtheta_mean keep the per-coordinate
    sigma_i*sqrt(dt) and dt*(db/dtheta)_i for all coordinates.
    """

    scale: float
    per_dimension: tuple[HjComponent, ...]
    mean: np.ndarray
    rayleigh_scales: np.ndarray
    dtheta_mean: np.ndarray


def _diagonal_sigma(model: SdeModel, x: np.ndarray, t: float) -> np.ndarray:
    """Signed diagonal of the diffusion matrix; rejects non-diagonal models."""
    sig = np.asarray(model.diffusion(x, t), dtype=float)
    if sig.shape[-2] != sig.shape[-1]:
        raise NonDiagonalDiffusion("kernel splitting needs a square diffusion matrix")
    if np.any((sig - sig * np.eye(sig.shape[-1])) != 0.0):
        raise NonDiagonalDiffusion("kernel splitting implemented for diagonal diffusion only")
    return np.diagonal(sig, axis1=-2, axis2=-1)


def hj_decompose(model: SdeModel, x, t: float, theta: float, dt: float) -> HjDecomposition:
    """Split d/dtheta of the Euler kernel N(x + dt*b, dt*sigma*sigma^T) at (x, t).

    Coordinates with zero drift sensitivity contribute nothing; when all are
    zero the decomposition is returned with scale 0 (the derivative measure
    is null there, so a branch contributes exactly zero and sampling it is an
    error).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    diag = _diagonal_sigma(model, x, t)
    b = np.asarray(model.drift(x, t, theta), dtype=float)
    db = np.broadcast_to(np.asarray(model.drift_dtheta(x, t, theta), dtype=float), x.shape)
    mean = x + dt * b
    dtheta_mean = dt * db
    scales = np.abs(diag) * math.sqrt(dt)
    if np.any((scales == 0.0) & (dtheta_mean != 0.0)):
        raise SingularDiffusion("drift sensitivity in a coordinate with zero diffusion")
    components = []
    total = 0.0
    for i in range(model.state_dim):
        if dtheta_mean[i] == 0.0:
            continue
        weight = abs(dtheta_mean[i]) / (scales[i] * _SQRT_2PI)
        components.append(HjComponent(i, weight, math.copysign(1.0, dtheta_mean[i]),
                                      scales[i], mean[i]))
        total += weight
    return HjDecomposition(total, tuple(components), mean, scales, dtheta_mean.copy())


def sample_branch_pair(decomp: HjDecomposition, rng: np.random.Generator):
    """Draw the coupled (positive, negative) branch states.

    One shared Rayleigh radius places the pair at mean +- sign*R in the
    branching coordinate (antithetic placement); the remaining coordinates
    share one set of nominal Gaussian draws.  Returns (x_plus, x_minus).
    """
    if decomp.scale == 0.0:
        raise ZeroSensitivity("no coordinate has drift sensitivity; nothing to branch")
    n = decomp.mean.size
    if n > 1:
        target = rng.random() * decomp.scale
        acc = 0.0
        comp = decomp.per_dimension[-1]
        for cand in decomp.per_dimension:
            acc += cand.weight
            if target < acc:
                comp = cand
                break
    else:
        comp = decomp.per_dimension[0]
    radius = rng.rayleigh(1.0) * comp.rayleigh_scale
    if n > 1:
        z = rng.standard_normal(n)
        base = decomp.mean + decomp.rayleigh_scales * z
    else:
        base = decomp.mean.copy()
    x_plus = base.copy()
    x_minus = base
    x_plus[comp.index] = comp.mean + comp.sign * radius
    x_minus[comp.index] = comp.mean - comp.sign * radius
    return x_plus, x_minus


def branch_densities(decomp: HjDecomposition, y):
    """Densities of the positive and negative branch states at points y.

    y has shape (..., n).  Each part is a mixture over the sensitive
    coordinates: the chosen coordinate carries the one-sided Rayleigh-shifted
    density, the others the nominal Gaussian.  Returns (rho_plus, rho_minus),
    each integrating to one when scale > 0.
    """
    y = np.asarray(y, dtype=float)
    lead = y.shape[:-1]
    if decomp.scale == 0.0:
        return np.zeros(lead), np.zeros(lead)
    mu = decomp.mean
    s = decomp.rayleigh_scales
    gauss = np.exp(-((y - mu) ** 2) / (2.0 * s ** 2)) / (s * _SQRT_2PI)
    rho_plus = np.zeros(lead)
    rho_minus = np.zeros(lead)
    for comp in decomp.per_dimension:
        i = comp.index
        dev = comp.sign * (y[..., i] - mu[i])
        lobe = np.abs(dev) / comp.rayleigh_scale ** 2 * np.exp(
            -(dev ** 2) / (2.0 * comp.rayleigh_scale ** 2))
        others = np.prod(np.delete(gauss, i, axis=-1), axis=-1)
        frac = comp.weight / decomp.scale
        rho_plus = rho_plus + frac * np.where(dev >= 0.0, lobe, 0.0) * others
        rho_minus = rho_minus + frac * np.where(dev <= 0.0, lobe, 0.0) * others
    return rho_plus, rho_minus


def signed_density(decomp: HjDecomposition, y) -> np.ndarray:
    """Evaluate scale * (rho_plus - rho_minus) at points y of shape (..., n).

    Reconstructs d/dtheta of the Gaussian Euler transition density at y from
    the two branch densities.
    """
    rho_plus, rho_minus = branch_densities(decomp, y)
    return decomp.scale * (rho_plus - rho_minus)


# ---------------------------------------------------------------------------
# batched decomposition and branch draws (shared by the gradient engines)


def _hj_terms_batch(model: SdeModel, x: np.ndarray, t: float, theta: float, dt: float):
    """Vectorized decomposition pieces at a block of states x of shape (N, n)."""
    sig = np.asarray(model.diffusion(x, t), dtype=float)
    if sig.shape[-2] != sig.shape[-1]:
        raise NonDiagonalDiffusion("kernel splitting needs a square diffusion matrix")
    if np.any((sig - sig * np.eye(sig.shape[-1])) != 0.0):
        raise NonDiagonalDiffusion("kernel splitting implemented for diagonal diffusion only")
    diag = np.abs(np.diagonal(sig, axis1=-2, axis2=-1))
    scales = np.broadcast_to(diag * math.sqrt(dt), x.shape)
    b = np.asarray(model.drift(x, t, theta), dtype=float)
    db = np.asarray(model.drift_dtheta(x, t, theta), dtype=float)
    mean = x + dt * b
    dtheta_mean = np.broadcast_to(dt * db, x.shape)
    if np.any((scales == 0.0) & (dtheta_mean != 0.0)):
        raise SingularDiffusion("drift sensitivity in a coordinate with zero diffusion")
    with np.errstate(invalid="ignore", divide="ignore"):
        weights = np.where(dtheta_mean != 0.0,
                           np.abs(dtheta_mean) / np.where(scales == 0.0, 1.0, scales)
                           / _SQRT_2PI, 0.0)
    total = np.sum(weights, axis=-1)
    signs = np.sign(dtheta_mean)
    return mean, scales, weights, total, signs


def _branch_draw_block(master_seed: int, path_indices: np.ndarray, step: int, n_dim: int,
                       pool: _StreamPool):
    """Per-path branch randomness at one step: (choice draw, unit radius, normals)."""
    count = len(path_indices)
    u = np.empty(count) if n_dim > 1 else None
    r = np.empty(count)
    z = np.empty((count, n_dim)) if n_dim > 1 else None
    for row, idx in enumerate(path_indices):
        rng = pool.rekey(master_seed, int(idx), step=step, tag=TAG_BRANCH)
        if n_dim > 1:
            u[row] = rng.random()
        r[row] = rng.rayleigh(1.0)
        if n_dim > 1:
            z[row] = rng.standard_normal(n_dim)
    return u, r, z


def _assemble_branch_states(mean, scales, weights, total, signs, u, r, z):
    """Vectorized analogue of sample_branch_pair over a block of paths."""
    n_dim = mean.shape[-1]
    if n_dim == 1:
        chosen = np.zeros(mean.shape[:-1], dtype=np.intp)
        base_plus = mean.copy()
        base_minus = mean.copy()
    else:
        cum = np.cumsum(weights, axis=-1)
        target = (u * total)[..., None]
        chosen = np.minimum(np.sum(cum <= target, axis=-1), n_dim - 1)
        base = mean + scales * z
        base_plus = base.copy()
        base_minus = base
    rows = np.arange(mean.shape[0])
    sign = signs[rows, chosen]
    radius = r * scales[rows, chosen]
    center = mean[rows, chosen]
    base_plus[rows, chosen] = center + sign * radius
    base_minus[rows, chosen] = center - sign * radius
    return base_plus, base_minus


# ---------------------------------------------------------------------------
# single-branch reference estimator


def hj_single_branch(model: SdeModel, theta: float, x0, grid: TimeGrid, branch_step: int,
                     functional: PathFunctional, master_seed: int, path_index: int) -> float:
    """Branch one simulated path at one step and return the weighted gap.

    Simulates the base path, splits the transition kernel at the branch step,
    propagates the coupled pair to the horizon with the path's own remaining
    increments, and returns scale * (C(plus path) - C(minus path)).
    """
    if not 0 <= branch_step < grid.steps:
        raise ValueError("branch_step must lie in [0, steps)")
    noise = generate_noise(master_seed, path_index, grid, model.noise_dim)
    bundle = simulate_path(model, theta, x0, grid, noise,
                           with_jacobian=functional.value_requires_jacobian)
    decomp = hj_decompose(model, bundle.states[branch_step], grid.times[branch_step],
                          theta, grid.dt)
    if decomp.scale == 0.0:
        return 0.0
    rng = stream(master_seed, path_index, step=branch_step, tag=TAG_BRANCH)
    x_plus, x_minus = sample_branch_pair(decomp, rng)
    diag = _diagonal_sigma(model, bundle.states[branch_step], grid.times[branch_step])
    values = []
    for x_new in (x_plus, x_minus):
        # record the increment the Euler step would have needed to reach the
        # branch state, keeping the branch bundle a consistent state/noise pair
        resid = x_new - decomp.mean
        with np.errstate(invalid="ignore", divide="ignore"):
            implied = np.where(diag != 0.0, resid / np.where(diag == 0.0, 1.0, diag), 0.0)
        increments = noise.increments.copy()
        increments[branch_step] = implied
        branch = resume_path(bundle, branch_step + 1, x_new,
                             NoisePath(increments, master_seed, path_index))
        values.append(float(np.asarray(functional.value(branch))))
    return decomp.scale * (values[0] - values[1])


# ---------------------------------------------------------------------------
# aggregated gradient estimators


def _apply(sig, dw):
    if sig.ndim == 2:
        return dw @ sig.T
    return np.einsum("...ij,...j->...i", sig, dw)


def _terminal_sum_over_k(model, theta, x0, grid, functional, n_paths, master_seed,
                         block_size):
    """All-steps engine for terminal-state functionals.

    Branches at every step and advances all live branch copies together under
    the base path's increments, so one (N, M, n) array per side carries every
    branch's current state to the horizon.
    """
    steps = grid.steps
    dt = grid.dt
    times = grid.times
    n_dim = model.state_dim
    pool = _StreamPool()
    vals = np.empty(n_paths)
    gap_sum = 0.0
    gap_count = 0
    done = 0
    while done < n_paths:
        count = min(block_size, n_paths - done)
        batch = simulate_paths(model, theta, x0, grid, count, master_seed,
                               first_index=done)
        plus = np.zeros((count, steps, n_dim))
        minus = np.zeros((count, steps, n_dim))
        scale_k = np.empty((count, steps))
        for j in range(steps):
            if j > 0:
                dw = batch.increments[:, None, j, :]
                for side in (plus, minus):
                    x = side[:, :j]
                    b = np.asarray(model.drift(x, times[j], theta))
                    sig = np.asarray(model.diffusion(x, times[j]))
                    side[:, :j] = x + dt * b + _apply(sig, dw)
            mean, scales, weights, total, signs = _hj_terms_batch(
                model, batch.states[:, j], times[j], theta, dt)
            u, r, z = _branch_draw_block(master_seed, batch.path_indices, j, n_dim, pool)
            bp, bm = _assemble_branch_states(mean, scales, weights, total, signs, u, r, z)
            plus[:, j] = bp
            minus[:, j] = bm
            scale_k[:, j] = total
        gaps = (np.asarray(functional.terminal_value(plus))
                - np.asarray(functional.terminal_value(minus)))
        vals[done:done + count] = np.sum(scale_k * gaps, axis=-1)
        gap_sum += float(np.sum(np.abs(gaps)))
        gap_count += gaps.size
        done += count
    return vals, gap_sum / max(gap_count, 1)


def _integral_sum_over_k(model, theta, x0, grid, functional, n_paths, master_seed,
                         block_size):
    """All-steps engine for left-point step-sum functionals.

    Like the terminal engine, but the shared prefix of each branch pair
    cancels in the value gap, so only per-step differences of step_value
    accumulate while the branch copies advance.
    """
    steps = grid.steps
    dt = grid.dt
    times = grid.times
    n_dim = model.state_dim
    h = functional.step_value
    pool = _StreamPool()
    vals = np.empty(n_paths)
    gap_sum = 0.0
    gap_count = 0
    done = 0
    while done < n_paths:
        count = min(block_size, n_paths - done)
        batch = simulate_paths(model, theta, x0, grid, count, master_seed,
                               first_index=done)
        plus = np.zeros((count, steps, n_dim))
        minus = np.zeros((count, steps, n_dim))
        gap_acc = np.zeros((count, steps))
        scale_k = np.empty((count, steps))
        for j in range(steps):
            if j > 0:
                live_p = plus[:, :j]
                live_m = minus[:, :j]
                gap_acc[:, :j] += dt * (np.asarray(h(live_p)) - np.asarray(h(live_m)))
                dw = batch.increments[:, None, j, :]
                for side, live in ((plus, live_p), (minus, live_m)):
                    b = np.asarray(model.drift(live, times[j], theta))
                    sig = np.asarray(model.diffusion(live, times[j]))
                    side[:, :j] = live + dt * b + _apply(sig, dw)
            mean, scales, weights, total, signs = _hj_terms_batch(
                model, batch.states[:, j], times[j], theta, dt)
            u, r, z = _branch_draw_block(master_seed, batch.path_indices, j, n_dim, pool)
            bp, bm = _assemble_branch_states(mean, scales, weights, total, signs, u, r, z)
            plus[:, j] = bp
            minus[:, j] = bm
            scale_k[:, j] = total
        vals[done:done + count] = np.sum(scale_k * gap_acc, axis=-1)
        gap_sum += float(np.sum(np.abs(gap_acc)))
        gap_count += gap_acc.size
        done += count
    return vals, gap_sum / max(gap_count, 1)


def _branch_batch(base: PathBatch, rows: np.ndarray, step: int, new_states: np.ndarray,
                  with_jacobian: bool) -> PathBatch:
    """Continuation bundle for branch states of a subset of a simulated block."""
    model, grid = base.model, base.grid
    states = base.states[rows].copy()
    increments = base.increments[rows].copy()
    sig = np.asarray(model.diffusion(states[:, step, :], grid.times[step]))
    diag = np.diagonal(sig, axis1=-2, axis2=-1)
    drift = np.asarray(model.drift(states[:, step, :], grid.times[step], base.theta))
    resid = new_states - states[:, step, :] - grid.dt * drift
    with np.errstate(invalid="ignore", divide="ignore"):
        increments[:, step, :] = np.where(
            diag != 0.0, resid / np.where(diag == 0.0, 1.0, diag), 0.0)
    states[:, step + 1, :] = new_states
    _euler_continue(model, base.theta, grid, states, increments, step + 1)
    jac = _euler_jacobians(model, base.theta, grid, states, increments) if with_jacobian else None
    return PathBatch(model, grid, base.theta, states, increments, base.master_seed,
                     base.path_indices[rows], jac)


def _grouped_random_k(model, theta, x0, grid, functional, n_paths, master_seed,
                      block_size):
    """One branch per path at a uniformly drawn step, grouped by step."""
    steps = grid.steps
    n_dim = model.state_dim
    pool = _StreamPool()
    need_jac = functional.value_requires_jacobian
    vals = np.empty(n_paths)
    gap_sum = 0.0
    done = 0
    while done < n_paths:
        count = min(block_size, n_paths - done)
        batch = simulate_paths(model, theta, x0, grid, count, master_seed,
                               first_index=done, with_jacobian=need_jac)
        indices = batch.path_indices
        ks = np.empty(count, dtype=np.intp)
        for row, idx in enumerate(indices):
            rng = pool.rekey(master_seed, int(idx), step=0, tag=TAG_CHOICE)
            ks[row] = rng.integers(0, steps)
        block_vals = np.zeros(count)
        for k in np.unique(ks):
            rows = np.nonzero(ks == k)[0]
            mean, scales, weights, total, signs = _hj_terms_batch(
                model, batch.states[rows, k], grid.times[k], theta, grid.dt)
            if not np.any(total != 0.0):
                continue
            u, r, z = _branch_draw_block(master_seed, indices[rows], int(k), n_dim, pool)
            bp, bm = _assemble_branch_states(mean, scales, weights, total, signs, u, r, z)
            plus = _branch_batch(batch, rows, int(k), bp, need_jac)
            minus = _branch_batch(batch, rows, int(k), bm, need_jac)
            gaps = np.asarray(functional.value(plus)) - np.asarray(functional.value(minus))
            block_vals[rows] = steps * total * gaps
            gap_sum += float(np.sum(np.abs(gaps)))
        vals[done:done + count] = block_vals
        done += count
    return vals, gap_sum / n_paths


def _generic_sum_over_k(model, theta, x0, grid, functional, n_paths, master_seed,
                        block_size):
    """Branch at every step with full branch re-propagation (any functional)."""
    steps = grid.steps
    n_dim = model.state_dim
    pool = _StreamPool()
    need_jac = functional.value_requires_jacobian
    vals = np.zeros(n_paths)
    gap_sum = 0.0
    gap_count = 0
    done = 0
    while done < n_paths:
        count = min(block_size, n_paths - done)
        batch = simulate_paths(model, theta, x0, grid, count, master_seed,
                               first_index=done, with_jacobian=need_jac)
        rows = np.arange(count)
        block_vals = np.zeros(count)
        for k in range(steps):
            mean, scales, weights, total, signs = _hj_terms_batch(
                model, batch.states[:, k], grid.times[k], theta, grid.dt)
            u, r, z = _branch_draw_block(master_seed, batch.path_indices, k, n_dim, pool)
            bp, bm = _assemble_branch_states(mean, scales, weights, total, signs, u, r, z)
            plus = _branch_batch(batch, rows, k, bp, need_jac)
            minus = _branch_batch(batch, rows, k, bm, need_jac)
            gaps = np.asarray(functional.value(plus)) - np.asarray(functional.value(minus))
            block_vals += total * gaps
            gap_sum += float(np.sum(np.abs(gaps)))
            gap_count += count
        vals[done:done + count] = block_vals
        done += count
    return vals, gap_sum / max(gap_count, 1)


def _hj_values(model, theta, x0, grid, functional, n_paths, mode, master_seed,
               block_size):
    """Per-path branch estimates (mean-one-unbiased for d/dtheta E[C])."""
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    if mode not in ("random-k", "sum-over-k"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "random-k":
        return _grouped_random_k(model, theta, x0, grid, functional,
                                 n_paths, master_seed, block_size)
    if functional.terminal_value is not None:
        return _terminal_sum_over_k(model, theta, x0, grid, functional,
                                    n_paths, master_seed, block_size)
    if functional.step_value is not None:
        return _integral_sum_over_k(model, theta, x0, grid, functional,
                                    n_paths, master_seed, block_size)
    return _generic_sum_over_k(model, theta, x0, grid, functional,
                               n_paths, master_seed, block_size)


def hj_gradient(model: SdeModel, theta: float, x0, grid: TimeGrid,
                functional: PathFunctional, n_paths: int, mode: str = "random-k",
                master_seed: int = 0, block_size: int = DEFAULT_BLOCK_SIZE) -> GradientReport:
    """Estimate d/dtheta E[C(X)] by kernel splitting with coupled branches.

    mode 'random-k' branches each path once at a uniform step and scales the
    gap by the number of steps; 'sum-over-k' branches at every step of every
    path and sums, which costs more per path but its variance stays bounded
    as the horizon grows.
    """
    vals, mean_gap = _hj_values(model, theta, x0, grid, functional, n_paths,
                                mode, master_seed, block_size)
    estimate = fsum(vals) / n_paths
    variance = float(vals.var(ddof=1))
    return GradientReport(
        estimate=estimate,
        std_error=math.sqrt(variance / n_paths),
        n_paths=n_paths,
        master_seed=master_seed,
        variance=variance,
        mode=mode,
        branch_stats=mean_gap,
    )


# ---------------------------------------------------------------------------
# score-function (likelihood-ratio) baseline


def score_function_gradient(model: SdeModel, theta: float, x0, grid: TimeGrid,
                            functional: PathFunctional, n_paths: int,
                            master_seed: int = 0,
                            block_size: int = DEFAULT_BLOCK_SIZE) -> GradientReport:
    """Likelihood-ratio gradient: mean of C(path) times the path's score.

    The score accumulates (dt db/dtheta)^T (dt Sigma)^{-1} (X_{k+1}-X_k-dt b)
    over the steps; its variance grows with the horizon.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    steps = grid.steps
    dt = grid.dt
    times = grid.times[:steps]
    vals = np.empty(n_paths)
    done = 0
    while done < n_paths:
        count = min(block_size, n_paths - done)
        batch = simulate_paths(model, theta, x0, grid, count, master_seed,
                               first_index=done,
                               with_jacobian=functional.value_requires_jacobian)
        x_left = batch.states[:, :steps, :]
        b = np.asarray(model.drift(x_left, times[:, None], theta))
        db = np.broadcast_to(
            np.asarray(model.drift_dtheta(x_left, times[:, None], theta)), x_left.shape)
        resid = batch.states[:, 1:, :] - x_left - dt * b
        sig = np.asarray(model.diffusion(x_left, times[:, None]))
        if sig.ndim == 2:
            sig = np.broadcast_to(sig, x_left.shape[:-1] + sig.shape)
        if model.state_dim == 1 and model.noise_dim == 1:
            var = dt * sig[..., 0, 0] ** 2
            if np.any(var == 0.0):
                raise SingularDiffusion("zero diffusion makes the transition degenerate")
            score = np.sum(dt * db[..., 0] * resid[..., 0] / var, axis=-1)
        else:
            cov = dt * (sig @ np.swapaxes(sig, -2, -1))
            try:
                solved = np.linalg.solve(cov, resid[..., None])[..., 0]
            except np.linalg.LinAlgError as exc:
                raise SingularDiffusion(f"transition covariance not invertible: {exc}") from exc
            score = np.sum(dt * db * solved, axis=(-2, -1))
        vals[done:done + count] = np.asarray(functional.value(batch)) * score
        done += count
    estimate = fsum(vals) / n_paths
    variance = float(vals.var(ddof=1))
    return GradientReport(
        estimate=estimate,
        std_error=math.sqrt(variance / n_paths),
        n_paths=n_paths,
        master_seed=master_seed,
        variance=variance,
        mode="score-function",
        branch_stats=None,
    )
