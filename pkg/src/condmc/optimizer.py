"""Gradient of the conditional loss by the quotient rule, and a projected
stochastic-gradient loop driven by it.

The conditional loss is a quotient of two expectations (a weighted numerator
over a weight normalizer).  Its theta-derivative combines four Monte-Carlo
ingredients: the two means and their two gradients.  Each gradient in turn
splits into a measure term (the branch estimator applied to the integrand as
a black box) and an integrand term (the integrand's own explicit theta
dependence at a frozen path, which enters through the weight process and the
derivative profiles).  All four ingredients are estimated on the same base
paths, so the quotient's standard error comes from one joint delta method.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import CondMcError, DegenerateDenominator, SingularDiffusion
from .functionals import PathFunctional
from .malliavin import conditional_loss_estimate, conditional_quotient_terms
from .sde import PathBatch, SdeModel, TimeGrid, _euler_jacobians, fsum, simulate_paths
from .streams import child_seed
from .weakderiv import DEFAULT_BLOCK_SIZE, _hj_values

_DENOMINATOR_FLOOR = 1e-12
# central-difference width for the integrand's explicit theta dependence;
# the O(h^2) truncation error sits far below any Monte-Carlo band
_THETA_BUMP = 1e-4

_GRADIENT_MODES = ("random-k", "sum-over-k")


def quotient_gradient(e1: float, e2: float, grad_e1: float, grad_e2: float) -> float:
    """Derivative of the ratio e1/e2 from the four ingredients."""
    if abs(e2) < _DENOMINATOR_FLOOR:
        raise DegenerateDenominator(
            f"|e2| = {abs(e2):.3e} is too small to divide by")
    return (e2 * grad_e1 - e1 * grad_e2) / (e2 * e2)


# ---------------------------------------------------------------------------
# counterfactual gradient


def _integrand_functional(ell: PathFunctional, g: PathFunctional, weight_rule,
                          part: str) -> PathFunctional:
    """The numerator or denominator integrand of the loss quotient, packaged
    as a plain path functional so the branch estimator can treat it as a
    black box."""
    index = 0 if part == "numerator" else 1
    needs = ell.requires_jacobian or g.requires_jacobian

    def value(bundle):
        return conditional_quotient_terms(ell, g, weight_rule, bundle)[index]

    return PathFunctional(
        value=value,
        malliavin_derivative=lambda bundle, s: None,
        kind=f"loss-{part}",
        value_requires_jacobian=needs,
    )


def _increments_at(model, grid, batch, b_base, bumped):
    """Brownian increments that reproduce the frozen states at parameter
    `bumped`: the Euler identity gives dW' = dW + dt * sigma^{-1} (b - b')."""
    steps = grid.steps
    x_left = batch.states[:, :steps, :]
    t_col = grid.times[:steps, None]
    shift = grid.dt * (b_base - np.asarray(model.drift(x_left, t_col, bumped)))
    if not np.any(shift):
        return batch.increments
    sig = np.asarray(model.diffusion(x_left, t_col))
    if sig.ndim == 2:
        sig = np.broadcast_to(sig, x_left.shape[:-1] + sig.shape)
    if sig.shape[-2] != sig.shape[-1]:
        raise ValueError(
            "reconstructing increments from states needs a square diffusion")
    if model.state_dim == 1:
        diag = sig[..., 0, 0]
        if np.any((diag == 0.0) & (shift[..., 0] != 0.0)):
            raise SingularDiffusion("zero diffusion cannot absorb a drift change")
        with np.errstate(invalid="ignore", divide="ignore"):
            solved = np.where(diag == 0.0, 0.0,
                              shift[..., 0] / np.where(diag == 0.0, 1.0, diag))
        return batch.increments + solved[..., None]
    try:
        solved = np.linalg.solve(sig, shift[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularDiffusion(f"diffusion not invertible: {exc}") from exc
    return batch.increments + solved


def _integrand_theta_terms(model, theta, ell, g, weight_rule, grid, x0,
                           n_paths, master_seed, block_size):
    """Per-path d/dtheta of the two integrands along a frozen state path.

    Viewed as functions of the state path, the integrands carry theta in the
    derivative profiles (through the jacobians), in the weight process, and
    in the increments the Skorohod sum reads, since a frozen state path
    implies theta-dependent increments.  All three slots are moved together
    by central differences; the {g > 0} gate depends on the states alone, so
    it cannot flip between the two evaluations.
    """
    h = _THETA_BUMP
    need_jac = ell.requires_jacobian or g.requires_jacobian
    d_num = np.empty(n_paths)
    d_den = np.empty(n_paths)
    done = 0
    while done < n_paths:
        count = min(block_size, n_paths - done)
        batch = simulate_paths(model, theta, x0, grid, count, master_seed,
                               first_index=done)
        b_base = np.asarray(model.drift(batch.states[:, :grid.steps, :],
                                        grid.times[:grid.steps, None], theta))
        sides = []
        for bumped in (theta + h, theta - h):
            increments = _increments_at(model, grid, batch, b_base, bumped)
            jac = None
            if need_jac:
                jac = _euler_jacobians(model, bumped, grid, batch.states,
                                       increments)
            shifted = PathBatch(model, grid, bumped, batch.states,
                                increments, master_seed,
                                batch.path_indices, jac)
            a, b, _ = conditional_quotient_terms(ell, g, weight_rule, shifted)
            sides.append((np.asarray(a), np.asarray(b)))
        (a_up, b_up), (a_dn, b_dn) = sides
        d_num[done:done + count] = (a_up - a_dn) / (2.0 * h)
        d_den[done:done + count] = (b_up - b_dn) / (2.0 * h)
        done += count
    return d_num, d_den


def _quotient_gradient_std_error(a, b, g1, g2, n_paths):
    """Delta-method standard error of the quotient-rule gradient from the
    joint spread of the four per-path ingredient arrays."""
    means = [fsum(v) / n_paths for v in (a, b, g1, g2)]
    ma, mb, m1, m2 = means
    grad = np.array([
        -m2 / mb ** 2,                       # d/d mean(a)
        (2.0 * ma * m2 - m1 * mb) / mb ** 3,  # d/d mean(b)
        1.0 / mb,                            # d/d mean(g1)
        -ma / mb ** 2,                       # d/d mean(g2)
    ])
    cov = np.cov(np.vstack([a, b, g1, g2]), ddof=1)
    var = float(grad @ cov @ grad) / n_paths
    return math.sqrt(max(var, 0.0))


def counterfactual_gradient(model: SdeModel, theta: float, ell: PathFunctional,
                            g: PathFunctional, weight_rule, grid: TimeGrid, x0,
                            n_paths: int, gradient_mode: str = "random-k",
                            master_seed: int = 0,
                            block_size: int = DEFAULT_BLOCK_SIZE):
    """Loss and its theta-gradient at one parameter point.

    Returns (loss, gradient, diagnostics).  The loss is the quotient of
    Skorohod-weighted means; the gradient applies the quotient rule to the
    branch (measure) gradients of the two integrands plus their explicit
    theta derivatives, all on common base paths.
    """
    if gradient_mode not in _GRADIENT_MODES:
        raise ValueError(f"unknown gradient mode {gradient_mode!r}")
    report = conditional_loss_estimate(model, theta, ell, g, weight_rule,
                                       n_paths, master_seed, grid, x0,
                                       block_size)
    num_fun = _integrand_functional(ell, g, weight_rule, "numerator")
    den_fun = _integrand_functional(ell, g, weight_rule, "denominator")
    measure_num, _ = _hj_values(model, theta, x0, grid, num_fun, n_paths,
                                gradient_mode, master_seed, block_size)
    measure_den, _ = _hj_values(model, theta, x0, grid, den_fun, n_paths,
                                gradient_mode, master_seed, block_size)
    explicit_num, explicit_den = _integrand_theta_terms(
        model, theta, ell, g, weight_rule, grid, x0, n_paths, master_seed,
        block_size)
    g1_terms = measure_num + explicit_num
    g2_terms = measure_den + explicit_den
    grad_e1 = fsum(g1_terms) / n_paths
    grad_e2 = fsum(g2_terms) / n_paths
    gradient = quotient_gradient(report.e1_hat, report.e2_hat, grad_e1, grad_e2)
    se_gradient = _quotient_gradient_std_error(report.a_terms, report.b_terms,
                                               g1_terms, g2_terms, n_paths)
    diagnostics = {
        "e1": report.e1_hat,
        "e2": report.e2_hat,
        "grad_e1": grad_e1,
        "grad_e2": grad_e2,
        "grad_e1_measure": fsum(measure_num) / n_paths,
        "grad_e1_integrand": fsum(explicit_num) / n_paths,
        "grad_e2_measure": fsum(measure_den) / n_paths,
        "grad_e2_integrand": fsum(explicit_den) / n_paths,
        "se_loss": report.std_error,
        "se_gradient": se_gradient,
        "acceptance_fraction": report.acceptance_fraction,
        "n_paths": n_paths,
        "gradient_mode": gradient_mode,
    }
    return report.estimate, gradient, diagnostics


# ---------------------------------------------------------------------------
# projected stochastic gradient descent


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs of the projected SGD loop.

    step_size 0 is allowed (the loop then only evaluates along a constant
    iterate); theta_bounds is the closed interval the iterates are projected
    onto.
    """

    theta0: float
    step_size: float
    n_iterations: int
    paths_per_iteration: int
    theta_bounds: tuple[float, float] = (0.2, 3.0)
    gradient_mode: str = "random-k"
    master_seed: int = 0

    def __post_init__(self):
        if self.step_size < 0.0:
            raise ValueError("step_size must be nonnegative")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be at least 1")
        if self.paths_per_iteration < 2:
            raise ValueError("paths_per_iteration must be at least 2")
        lo, hi = self.theta_bounds
        if not lo < hi:
            raise ValueError("theta_bounds must satisfy lo < hi")
        if self.gradient_mode not in _GRADIENT_MODES:
            raise ValueError(f"unknown gradient mode {self.gradient_mode!r}")


@dataclass(frozen=True)
class IterationRecord:
    """One SGD step: the iterate and everything estimated at it."""

    iteration: int
    theta: float
    loss: float
    gradient: float
    e1: float
    e2: float
    se_loss: float
    se_gradient: float


@dataclass(frozen=True)
class OptimizationTrace:
    """Per-iteration records, the final iterate, and the wall time.

    error is None on a clean run; on an estimator failure it carries the
    structured error name and message, and records holds the iterations
    completed before the failure.
    """

    records: tuple[IterationRecord, ...]
    final_theta: float
    wall_time: float
    error: str | None = None

    @property
    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.records])

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])


def run_sgd(model: SdeModel, ell: PathFunctional, g: PathFunctional,
            config: OptimizerConfig, grid: TimeGrid, x0,
            weight_rule="canonical") -> OptimizationTrace:
    """Projected SGD on the conditional loss.

    theta_{n+1} = clip(theta_n - step_size * gradient, bounds); every
    iteration draws fresh paths from a child seed of the master seed.  On an
    estimator failure the trace collected so far is returned with the error
    recorded instead of raising.
    """
    lo, hi = config.theta_bounds
    theta = min(max(config.theta0, lo), hi)
    records = []
    start = time.perf_counter()
    for n in range(config.n_iterations):
        seed = child_seed(config.master_seed, n)
        try:
            loss, gradient, diag = counterfactual_gradient(
                model, theta, ell, g, weight_rule, grid, x0,
                config.paths_per_iteration, config.gradient_mode, seed)
        except CondMcError as exc:
            return OptimizationTrace(
                records=tuple(records),
                final_theta=theta,
                wall_time=time.perf_counter() - start,
                error=f"{type(exc).__name__}: {exc}",
            )
        records.append(IterationRecord(
            iteration=n,
            theta=theta,
            loss=loss,
            gradient=gradient,
            e1=diag["e1"],
            e2=diag["e2"],
            se_loss=diag["se_loss"],
            se_gradient=diag["se_gradient"],
        ))
        theta = min(max(theta - config.step_size * gradient, lo), hi)
    return OptimizationTrace(
        records=tuple(records),
        final_theta=theta,
        wall_time=time.perf_counter() - start,
        error=None,
    )
