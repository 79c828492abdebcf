"""Admissible weight processes, Skorohod integrals, and the conditional-loss
quotient estimator (with its kernel-smoothing baseline).

The conditioning event {g(X) = 0} has probability zero, so the conditional
loss E[l(X) | g(X) = 0] is rewritten as a quotient of two unconditional
expectations built from an integration-by-parts weight u normalized so that
the time integral of <D_t g, u_t> equals one on every path.  Both the
numerator and denominator are plain Monte-Carlo means, so no bandwidth is
involved; the Gaussian-kernel baseline is provided for comparison.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateConstraint,
    DegenerateDenominator,
    EmptyKernelMass,
    NearZeroDerivativeWarning,
    NonAdaptedWithoutFactorization,
)
from .functionals import PathFunctional, derivative_profile
from .reports import ConditionalLossReport, EstimatorReport
from .sde import PathBatch, PathBundle, SdeModel, TimeGrid, fsum, simulate_paths

_ENERGY_FLOOR = 1e-14
_DERIVATIVE_RATIO_FLOOR = 1e-8

DEFAULT_BLOCK_SIZE = 25_000


@dataclass(frozen=True)
class WeightProcess:
    """Weight u on the grid; (..., M+1, d) values plus the construction tag.

    support_measure is the Lebesgue measure (left-point count times dt) of
    {t : D_t g != 0}; adapted marks whether the Ito-sum evaluation of the
    Skorohod integral is valid as-is.
    """

    values: np.ndarray
    rule: str
    support_measure: float | np.ndarray
    adapted: bool = True


def _left_count_nonzero(profile: np.ndarray, steps: int):
    rows_nonzero = np.any(profile[..., :steps, :] != 0.0, axis=-1)
    return np.count_nonzero(rows_nonzero, axis=-1)


def make_weight_canonical(g: PathFunctional, bundle: PathBundle | PathBatch) -> WeightProcess:
    """u = D g / (left-point energy of D g); normalization holds by construction."""
    profile = derivative_profile(g, bundle)
    steps = bundle.grid.steps
    dt = bundle.grid.dt
    energy = np.sum(profile[..., :steps, :] ** 2, axis=(-2, -1)) * dt
    if np.any(energy < _ENERGY_FLOOR):
        raise DegenerateConstraint("constraint derivative has (near-)zero energy on the grid")
    values = profile / energy[..., None, None]
    support = _left_count_nonzero(profile, steps) * dt
    return WeightProcess(values, "canonical", support, adapted=True)


def make_weight_reciprocal(g: PathFunctional, bundle: PathBundle | PathBatch) -> WeightProcess:
    """u = 1 / (support_measure * D g) on the support of D g, 1 elsewhere.

    Dividing by the support measure (rather than the horizon) keeps the
    normalization sum exactly one even when D g vanishes on part of [0, T].
    Scalar-noise constraints only.
    """
    profile = derivative_profile(g, bundle)
    if profile.shape[-1] != 1:
        raise ValueError("reciprocal rule needs a scalar (d = 1) constraint derivative")
    steps = bundle.grid.steps
    dt = bundle.grid.dt
    energy = np.sum(profile[..., :steps, :] ** 2, axis=(-2, -1)) * dt
    if np.any(energy < _ENERGY_FLOOR):
        raise DegenerateConstraint("constraint derivative has (near-)zero energy on the grid")
    support = _left_count_nonzero(profile, steps) * dt

    mask = profile != 0.0
    absd = np.abs(np.where(mask, profile, np.nan))
    with np.errstate(invalid="ignore"):
        dmin = np.nanmin(absd, axis=(-2, -1))
        dmax = np.nanmax(absd, axis=(-2, -1))
        # steepest per-step change of D inside its support (diffs that cross
        # the support boundary are indicator structure, not decay), to catch
        # derivatives that run into zero at the edge of their support
        inside = mask[..., 1:, :] & mask[..., :-1, :]
        diffs = np.where(inside, np.diff(profile, axis=-2), 0.0)
        slope = np.max(np.abs(diffs), axis=(-2, -1)) / dt
    near_zero = dmin < _DERIVATIVE_RATIO_FLOOR * dmax
    near_edge = dmin <= 4.0 * dt * slope
    if np.any(near_zero | near_edge):
        warnings.warn(
            "constraint derivative nearly vanishes on its support; reciprocal "
            "weights may have unbounded variance",
            NearZeroDerivativeWarning,
            stacklevel=2,
        )

    denom = np.asarray(support)[..., None, None] * np.where(mask, profile, 1.0)
    values = np.where(mask, 1.0 / denom, 1.0)
    return WeightProcess(values, "reciprocal", support, adapted=True)


def weight_from_rule(rule, g: PathFunctional, bundle) -> WeightProcess:
    """Resolve a weight rule given as a tag or a callable (g, bundle) -> WeightProcess."""
    if callable(rule):
        return rule(g, bundle)
    if rule == "canonical":
        return make_weight_canonical(g, bundle)
    if rule == "reciprocal":
        return make_weight_reciprocal(g, bundle)
    raise ValueError(f"unknown weight rule {rule!r}")


def skorohod_integral(u: WeightProcess, bundle: PathBundle | PathBatch,
                      anticipative_factor: tuple[float, Callable] | None = None):
    """Skorohod integral of u along the bundle's noise.

    Adapted u: the left-point Ito sum sum_k <u_k, dW_k>.  A non-adapted
    integrand F*u_hat must be supplied in factored form via
    anticipative_factor=(F, DF) with u the adapted factor u_hat, giving
    F*S(u_hat) - sum_k <DF(k), u_hat_k> dt.
    """
    if not u.adapted and anticipative_factor is None:
        raise NonAdaptedWithoutFactorization(
            "non-adapted weight: supply anticipative_factor=(F, DF) in factored form")
    steps = bundle.grid.steps
    ito = np.sum(u.values[..., :steps, :] * bundle.increments, axis=(-2, -1))
    if anticipative_factor is None:
        return ito if ito.ndim else float(ito)
    factor, factor_derivative = anticipative_factor
    corr = sum(
        np.sum(np.asarray(factor_derivative(k)) * u.values[..., k, :], axis=-1)
        for k in range(steps)
    )
    out = np.asarray(factor) * ito - corr * bundle.grid.dt
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# conditional-loss quotient estimator


def _quotient_std_error(a: np.ndarray, b: np.ndarray, q: float, b_mean: float) -> float:
    n = a.size
    var_a = a.var(ddof=1)
    var_b = b.var(ddof=1)
    cov = np.cov(a, b, ddof=1)[0, 1]
    var_q = (var_a - 2.0 * q * cov + q * q * var_b) / (b_mean * b_mean * n)
    return math.sqrt(max(var_q, 0.0))


def conditional_quotient_terms(ell: PathFunctional, g: PathFunctional, weight_rule,
                               batch: PathBatch):
    """Per-path numerator terms A_i, denominator terms B_i, and the {g > 0} mask."""
    steps = batch.grid.steps
    dt = batch.grid.dt
    g_val = np.asarray(g.value(batch))
    indicator = g_val > 0.0  # ties count as not-exceeded
    u = weight_from_rule(weight_rule, g, batch)
    s_u = skorohod_integral(u, batch)
    l_val = np.asarray(ell.value(batch))
    d_ell = derivative_profile(ell, batch)
    correction = np.sum(d_ell[..., :steps, :] * u.values[..., :steps, :], axis=(-2, -1)) * dt
    a = np.where(indicator, l_val * s_u - correction, 0.0)
    b = np.where(indicator, s_u, 0.0)
    return a, b, indicator


def conditional_loss_estimate(model: SdeModel, theta: float, ell: PathFunctional,
                              g: PathFunctional, weight_rule, n_paths: int,
                              master_seed: int, grid: TimeGrid, x0,
                              block_size: int = DEFAULT_BLOCK_SIZE) -> ConditionalLossReport:
    """Estimate E[ell(X) | g(X) = 0] as a quotient of Skorohod-weighted means.

    Per path: A_i = 1_{g>0} (ell * S(u) - sum_k <D_k ell, u_k> dt) and
    B_i = 1_{g>0} S(u); the estimate is mean(A)/mean(B) with a delta-method
    standard error.  Paths are simulated in blocks; results are independent
    of the block size because every path owns its own noise stream.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    need_jac = ell.requires_jacobian or g.requires_jacobian
    a_parts, b_parts = [], []
    accepted = 0
    done = 0
    while done < n_paths:
        count = min(block_size, n_paths - done)
        batch = simulate_paths(model, theta, x0, grid, count, master_seed,
                               first_index=done, with_jacobian=need_jac)
        a, b, indicator = conditional_quotient_terms(ell, g, weight_rule, batch)
        a_parts.append(a)
        b_parts.append(b)
        accepted += int(np.count_nonzero(indicator))
        done += count
    a = np.concatenate(a_parts)
    b = np.concatenate(b_parts)
    e1 = fsum(a) / n_paths
    e2 = fsum(b) / n_paths
    se_b = b.std(ddof=1) / math.sqrt(n_paths)
    if e2 == 0.0 or abs(e2) < 5.0 * se_b:
        raise DegenerateDenominator(
            f"|mean B| = {abs(e2):.3e} is below 5 standard errors ({5 * se_b:.3e})")
    quotient = e1 / e2
    std_error = _quotient_std_error(a, b, quotient, e2)
    return ConditionalLossReport(
        estimate=quotient,
        std_error=std_error,
        n_paths=n_paths,
        master_seed=master_seed,
        e1_hat=e1,
        e2_hat=e2,
        quotient=quotient,
        a_terms=a,
        b_terms=b,
        acceptance_fraction=accepted / n_paths,
    )


# ---------------------------------------------------------------------------
# kernel-smoothing baseline


def kernel_loss_estimate(paths, ell: PathFunctional, g: PathFunctional,
                         bandwidth: float) -> EstimatorReport:
    """Nadaraya-Watson style baseline: Gaussian kernel weights around g = 0."""
    if bandwidth <= 0.0:
        raise ValueError("bandwidth must be positive")
    if isinstance(paths, (PathBundle, PathBatch)):
        g_val = np.atleast_1d(np.asarray(g.value(paths), dtype=float))
        l_val = np.atleast_1d(np.asarray(ell.value(paths), dtype=float))
        seed = paths.master_seed if isinstance(paths, PathBatch) else paths.noise.master_seed
    else:
        g_val = np.array([float(g.value(p)) for p in paths])
        l_val = np.array([float(ell.value(p)) for p in paths])
        seed = paths[0].noise.master_seed if paths else 0
    weights = np.exp(-(g_val * g_val) / (2.0 * bandwidth * bandwidth)) / (
        bandwidth * math.sqrt(2.0 * math.pi))
    mass = fsum(weights)
    if mass < 1e-300:
        raise EmptyKernelMass("all kernel weights underflowed; increase the bandwidth")
    weighted = l_val * weights
    estimate = fsum(weighted) / mass
    n = g_val.size
    std_error = _quotient_std_error(weighted, weights, estimate, mass / n) if n > 1 else math.inf
    return EstimatorReport(estimate=estimate, std_error=std_error, n_paths=n, master_seed=seed)
