"""Two independent samplers of the Gaussian limit process.

The path method drives a d-dimensional increment process with per-step
covariance dt * Sigma and assembles the limit value by the integration-by-
parts form: Z_t equals the endpoint-weighted increment process minus a
Riemann integral of the weight derivative against the process, discretized
by the trapezoid rule.  The exact-grid method draws the joint Gaussian
vector at the output times directly from the closed-form covariance.
Agreement of the two validates both the covariance polynomial and the
Monte-Carlo harness.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError
from .limitlaw import (
    cross_z1_covariance,
    limit_covariance,
    limit_covariance_coeffs,
    projection_weight,
    projection_weight_derivative,
)


def psd_sqrt(matrix: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square root with eigenvalue clipping at zero.

    Semidefinite inputs (degenerate kernels) are fine; an eigenvalue below
    -tol * scale is a configuration error, not round-off.
    """
    m = np.asarray(matrix, dtype=float)
    m = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(m)
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < -tol * scale:
        raise ConfigError(f"matrix is not PSD (min eigenvalue {vals.min():.3g})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _grid_indices(times, steps: int, horizon: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(times < 0) or np.any(times > horizon + 1e-12):
        raise ConfigError("output times must lie in [0, horizon]")
    idx = np.rint(times / horizon * steps).astype(int)
    return np.clip(idx, 0, steps)


def simulate_limit_paths(
    sigma,
    arity: int,
    times,
    draws: int,
    rng: np.random.Generator,
    steps: int = 2048,
    horizon: float | None = None,
    chunk: int = 2048,
) -> np.ndarray:
    """Sample Z at ``times`` by discretizing the driving increment process.

    Returns an array (draws, len(times)).  Output times are snapped to the
    uniform step grid; with the default 2048 steps the dyadic checkpoints
    are exact.
    """
    times = np.asarray(times, dtype=float)
    if horizon is None:
        horizon = float(times.max(initial=1.0)) or 1.0
    d = arity
    root = psd_sqrt(sigma)
    h = horizon / steps
    tidx = _grid_indices(times, steps, horizon)
    grid = np.arange(steps + 1) * h
    # per output time: endpoint weights (d,) and integrand table (k+1, d)
    endpoint: list[np.ndarray] = []
    integrand: list[np.ndarray] = []
    for k, t in zip(tidx, grid[tidx]):
        endpoint.append(
            np.array([float(projection_weight(j, d, t, t)) for j in range(1, d + 1)])
        )
        if k == 0:
            integrand.append(np.zeros((1, d)))
            continue
        u = grid[: k + 1]
        tab = np.empty((k + 1, d))
        for j in range(1, d + 1):
            with np.errstate(invalid="ignore"):
                tab[:, j - 1] = projection_weight_derivative(j, d, u, t)
        tab[np.isnan(tab)] = 0.0  # 0 * 0^(negative) edge at u = 0 or u = t
        tab[0] *= 0.5
        tab[-1] *= 0.5
        integrand.append(tab * h)
    out = np.empty((draws, len(times)))
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        incr = rng.standard_normal((m, steps, d)) @ root.T * math.sqrt(h)
        w = np.concatenate([np.zeros((m, 1, d)), np.cumsum(incr, axis=1)], axis=1)
        for col, k in enumerate(tidx):
            ends = w[:, k, :] @ endpoint[col]
            riemann = np.einsum("cid,id->c", w[:, : k + 1, :], integrand[col])
            out[done : done + m, col] = ends - riemann
        done += m
    return out


def simulate_limit_exact_grid(
    sigma,
    arity: int,
    times,
    draws: int,
    rng: np.random.Generator,
    max_points: int = 512,
) -> np.ndarray:
    """Sample (Z_{t_1}, ..., Z_{t_m}) exactly in law from the closed-form
    covariance polynomial; independent of any discretization."""
    times = np.asarray(times, dtype=float)
    if len(times) > max_points:
        raise ConfigError(f"exact-grid sampler capped at {max_points} points")
    coeffs = limit_covariance_coeffs(sigma, arity)
    m = len(times)
    cov = np.empty((m, m))
    for a in range(m):
        for b in range(a, m):
            val = float(limit_covariance(times[a], times[b], None, arity, coeffs=coeffs))
            cov[a, b] = val
            cov[b, a] = val
    root = psd_sqrt(cov)
    return rng.standard_normal((draws, m)) @ root.T


def simulate_joint_z1(
    sigma_threshold,
    arity_threshold: int,
    sigma_companion,
    arity_companion: int,
    cross_cov,
    draws: int,
    rng: np.random.Generator,
    steps: int = 2048,
    chunk: int = 2048,
):
    """Joint draws of (Z_1, companion Z_1) driven by common increments.

    The stacked increment covariance has the threshold block, the companion
    block, and Cov(companion_i, threshold_j) off-diagonal.  Used to
    Monte-Carlo-validate the stopped-variance formula.
    """
    d, dc = arity_threshold, arity_companion
    stacked = np.zeros((d + dc, d + dc))
    stacked[:d, :d] = np.array([[float(v) for v in row] for row in sigma_threshold])
    stacked[d:, d:] = np.array([[float(v) for v in row] for row in sigma_companion])
    cross = np.array([[float(v) for v in row] for row in cross_cov])
    if cross.shape != (dc, d):
        raise ConfigError(f"cross covariance must be {dc}x{d}, got {cross.shape}")
    stacked[d:, :d] = cross
    stacked[:d, d:] = cross.T
    root = psd_sqrt(stacked)
    h = 1.0 / steps
    grid = np.arange(steps + 1) * h

    def weights(ar, offset):
        endpoint = np.zeros(d + dc)
        for j in range(1, ar + 1):
            endpoint[offset + j - 1] = float(projection_weight(j, ar, 1.0, 1.0))
        tab = np.zeros((steps + 1, d + dc))
        for j in range(1, ar + 1):
            with np.errstate(invalid="ignore"):
                tab[:, offset + j - 1] = projection_weight_derivative(j, ar, grid, 1.0)
        tab[np.isnan(tab)] = 0.0
        tab[0] *= 0.5
        tab[-1] *= 0.5
        return endpoint, tab * h

    end_t, tab_t = weights(d, 0)
    end_c, tab_c = weights(dc, d)
    z_t = np.empty(draws)
    z_c = np.empty(draws)
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        incr = rng.standard_normal((m, steps, d + dc)) @ root.T * math.sqrt(h)
        w = np.concatenate([np.zeros((m, 1, d + dc)), np.cumsum(incr, axis=1)], axis=1)
        z_t[done : done + m] = w[:, -1, :] @ end_t - np.einsum("cid,id->c", w, tab_t)
        z_c[done : done + m] = w[:, -1, :] @ end_c - np.einsum("cid,id->c", w, tab_c)
        done += m
    return z_t, z_c


def predicted_joint_spread(threshold_model, companion_model, cross_cov) -> float:
    """Var(companion Z_1 - c * threshold Z_1) predicted from projections."""
    from .limitlaw import limit_variance

    d, dc = threshold_model.d, companion_model.d
    c = (
        math.factorial(d - 1)
        * float(companion_model.mu)
        / (math.factorial(dc - 1) * float(threshold_model.mu))
    )
    var_t = float(limit_variance(threshold_model.sigma, d))
    var_c = float(limit_variance(companion_model.sigma, dc))
    cov = float(cross_z1_covariance(cross_cov, dc, d))
    return var_c - 2 * c * cov + c * c * var_t
