"""Shared test utilities: brute-force oracles and fit helpers.

The oracles here are deliberately independent of the library's own numerics:
projections are checked against dense grid search and solver optimality
against grid enumeration of the max-min objective.
"""

from __future__ import annotations

import numpy as np

from fairsched import FeasibleRegion


def grid_project(x, region: FeasibleRegion, resolution: float = 1e-3) -> np.ndarray:
    """Brute-force projection oracle: grid-minimize ||x - r|| over the polytope (2-d only)."""
    assert region.n == 2, "grid oracle implemented for two dimensions"
    g0 = np.arange(region.lower[0], region.upper[0] + resolution / 2, resolution)
    g1 = np.arange(region.lower[1], region.upper[1] + resolution / 2, resolution)
    r0, r1 = np.meshgrid(g0, g1, indexing="ij")
    feasible = r0 + r1 <= region.total + 1e-12
    dist = (r0 - x[0]) ** 2 + (r1 - x[1]) ** 2
    dist[~feasible] = np.inf
    i, j = np.unravel_index(np.argmin(dist), dist.shape)
    return np.array([g0[i], g1[j]])


def grid_maxmin_value(costs, region: FeasibleRegion, resolution: float = 1e-3) -> float:
    """Brute-force optimum of max_i J_i over the region for 2 or 3 agents.

    Exploits monotonicity only in the last coordinate: for fixed leading
    rates, the best last rate is the largest feasible one.
    """
    lb, ub = region.lower, region.upper
    if region.n == 2:
        g0 = np.arange(lb[0], ub[0] + resolution / 2, resolution)
        r1 = np.minimum(ub[1], region.total - g0)
        ok = r1 >= lb[1] - 1e-12
        g0, r1 = g0[ok], np.clip(r1[ok], lb[1], ub[1])
        worst = np.maximum(costs.intercepts[0] - costs.slopes[0] * g0,
                           costs.intercepts[1] - costs.slopes[1] * r1)
        return float(worst.min())
    if region.n == 3:
        g0 = np.arange(lb[0], ub[0] + resolution / 2, resolution)
        g1 = np.arange(lb[1], ub[1] + resolution / 2, resolution)
        r0, r1 = np.meshgrid(g0, g1, indexing="ij")
        r2 = np.minimum(ub[2], region.total - r0 - r1)
        ok = r2 >= lb[2] - 1e-12
        r2 = np.clip(r2, lb[2], ub[2])
        worst = np.maximum.reduce([
            costs.intercepts[0] - costs.slopes[0] * r0,
            costs.intercepts[1] - costs.slopes[1] * r1,
            costs.intercepts[2] - costs.slopes[2] * r2,
        ])
        worst[~ok] = np.inf
        return float(worst.min())
    raise NotImplementedError


def log_linear_fit(ts, values):
    """Least-squares fit of log(values) against ts; returns (slope, r_squared)."""
    ts = np.asarray(ts, dtype=float)
    logs = np.log(np.asarray(values, dtype=float))
    slope, intercept = np.polyfit(ts, logs, 1)
    pred = slope * ts + intercept
    ss_res = float(((logs - pred) ** 2).sum())
    ss_tot = float(((logs - logs.mean()) ** 2).sum())
    return float(slope), 1.0 - ss_res / ss_tot


def random_feasible_point(region: FeasibleRegion, rng) -> np.ndarray:
    """A random point of the region: uniform in the box, then projected."""
    from fairsched import project_feasible

    x = rng.uniform(region.lower, region.upper)
    return project_feasible(x, region)


def random_feasible_cloud(region: FeasibleRegion, rng, count: int) -> np.ndarray:
    """``count`` feasible points, rows of a (count, n) array, no projection needed.

    Box-uniform draws are pulled toward the lower bounds just enough to meet
    the budget: ``r = lb + t (u - lb)`` stays in the box for t in [0, 1] and
    its sum is affine in t.
    """
    u = rng.uniform(region.lower, region.upper, size=(count, region.n))
    lb = region.lower
    excess = u.sum(axis=1) - lb.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(excess > 0, (region.total - lb.sum()) / excess, 1.0)
    t = np.minimum(1.0, 0.999 * t)
    return lb + t[:, None] * (u - lb)
