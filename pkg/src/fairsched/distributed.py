"""Distributed computation of the max-min fair allocation.

The centralized projected iteration is gradient descent on the separable
objective ``sum_i I_i(r_i)`` with ``I_i(r) = integral of -J_i`` subject to the
budget. Dualizing the budget with one multiplier copy per node turns the
problem into a consensus-constrained dual ascent that needs only neighbor
communication: each node updates its own rate from its own cost and its own
multiplier copy, and the copies are driven toward agreement over the graph.

Updates follow the perturbed primal-dual scheme: a lookahead ("hat") step
produces one-step predictions of both variables, and the main step evaluates
each player's gradient at the opponent's prediction.

Three couplings for the dual copies are provided:

* ``mixing`` (default) - each dual step averages the copies with fixed
  Metropolis weights before adding the step-size-scaled budget gradient.
  Disagreement between copies then contracts geometrically, so the copies
  reach consensus and the scheme recovers the centralized solution.
* ``penalty`` - literal gradient of the quadratic coupling ``-lam' L lam``
  symmetrized, i.e. the dual step adds ``-eps * (L + L') lam``. With
  diminishing steps the coupling force fades at the same rate as the budget
  gradient, so the copies stall short of consensus on asymmetric instances;
  kept for comparison.
* ``penalty-asym`` - same but with the unsymmetrized ``-eps * L lam``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .allocation import (
    CONVERGED,
    MAX_INNER_ITERS,
    CostDomainError,
    CostModel,
    FeasibleRegion,
    SolverConfig,
    initial_allocation,
    project_feasible,
    solve_maxmin,
)
from .sensors import CostCurve, NumericalError, _xi_of

__all__ = [
    "GraphError",
    "CommGraph",
    "StepSchedule",
    "DualState",
    "DistributedTrace",
    "ComparisonReport",
    "consensus_matrix",
    "metropolis_matrix",
    "tilde_cost",
    "solve_distributed",
    "compare_with_centralized",
]

DUAL_MODES = ("mixing", "penalty", "penalty-asym")


class GraphError(ValueError):
    """The communication graph cannot support consensus."""


@dataclass(frozen=True, eq=False)
class CommGraph:
    """Undirected connected graph over ``n`` nodes, no self-loops."""

    n: int
    edges: frozenset

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("graph needs at least one node")
        norm = set()
        for e in self.edges:
            i, j = e
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphError(f"edge {e} references a node outside 0..{self.n - 1}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        if not self._connected():
            raise GraphError("graph is disconnected; consensus is unattainable")

    def _connected(self) -> bool:
        seen = {0}
        queue = deque([0])
        adj = self.neighbor_lists()
        while queue:
            i = queue.popleft()
            for j in adj[i]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return len(seen) == self.n

    def neighbor_lists(self) -> list[list[int]]:
        adj = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return [sorted(a) for a in adj]

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.neighbor_lists()])

    @classmethod
    def from_adjacency(cls, adjacency) -> "CommGraph":
        n = len(adjacency)
        edges = {(i, int(j)) for i, neigh in enumerate(adjacency) for j in neigh}
        return cls(n, frozenset(edges))

    @classmethod
    def ring(cls, n: int) -> "CommGraph":
        if n == 1:
            return cls(1, frozenset())
        if n == 2:
            return cls.path(2)
        return cls(n, frozenset((i, (i + 1) % n) for i in range(n)))

    @classmethod
    def path(cls, n: int) -> "CommGraph":
        return cls(n, frozenset((i, i + 1) for i in range(n - 1)))

    @classmethod
    def complete(cls, n: int) -> "CommGraph":
        return cls(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))

    @classmethod
    def star(cls, n: int) -> "CommGraph":
        return cls(n, frozenset((0, i) for i in range(1, n)))


def consensus_matrix(g: CommGraph) -> np.ndarray:
    """Disagreement matrix: unit diagonal, ``-1/deg(i)`` toward each neighbor.

    Every row sums to zero, so consensus vectors are in its kernel. The
    single-node graph degenerates to ``[[0]]``.
    """
    if g.n == 1:
        return np.zeros((1, 1))
    L = np.eye(g.n)
    deg = g.degrees()
    for i, j in g.edges:
        L[i, j] = -1.0 / deg[i]
        L[j, i] = -1.0 / deg[j]
    return L


def metropolis_matrix(g: CommGraph) -> np.ndarray:
    """Symmetric doubly stochastic averaging weights: ``1/(1 + max(deg_i, deg_j))`` per edge."""
    W = np.zeros((g.n, g.n))
    deg = g.degrees()
    for i, j in g.edges:
        w = 1.0 / (1.0 + max(deg[i], deg[j]))
        W[i, j] = w
        W[j, i] = w
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return W


def tilde_cost(curve: CostCurve, r: float, base: float) -> float:
    """Integral of ``-J`` from ``base`` to ``r`` along the piecewise-linear curve.

    Each linear piece ``J(t) = c + m t`` contributes ``-(c t + m t^2 / 2)``
    evaluated between the piece's overlap with [base, r]. The lower limit is
    a caller-chosen anchor (typically the region's lower bound) because the
    integral from zero diverges for unstable curves; shifting the anchor only
    offsets the objective by a constant and leaves all gradients unchanged.
    """
    r, base = float(r), float(base)
    if base > r:
        raise CostDomainError(f"integration limits are reversed: base {base} > r {r}")
    for limit in (base, r):
        if limit != 0.0:
            if limit < 0 or limit > 1 + 1e-12:
                raise CostDomainError(f"integration limit {limit} outside [0, 1]")
            if limit < curve.domain_floor * (1.0 - 1e-9):
                raise CostDomainError(f"integration limit {limit} below the domain floor")
        elif curve.stable_limit is None:
            raise CostDomainError("integral from 0 diverges for an unstable curve")
    if base == r:
        return 0.0

    def segment_piece(slope: float, intercept: float, lo: float, hi: float) -> float:
        antideriv = lambda t: -(intercept * t + 0.5 * slope * t * t)
        return antideriv(hi) - antideriv(lo)

    total = 0.0
    upper = r
    k = _xi_of(min(r, 1.0))  # segment containing the upper limit
    size = curve.traces.size
    while upper > base:
        if k + 1 >= size and curve.stable_limit is not None:
            # every segment beyond the stored range shares one affine tail,
            # so the rest of [base, upper] is a single piece (valid at base 0)
            total += segment_piece(curve.segment_slope(k), curve.stable_limit, base, upper)
            break
        seg_lo = 1.0 / (k + 2.0)
        lower = max(base, seg_lo)
        total += segment_piece(curve.segment_slope(k), float(curve.traces[k + 1]), lower, upper)
        upper = lower
        k += 1
        if k > 10**7:
            raise NumericalError("tilde_cost segment walk did not terminate")
    return total


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing steps ``eps(k) = a / (k + c)``."""

    a: float = 0.5
    c: float = 10.0

    def __post_init__(self):
        if self.a <= 0 or self.c <= 0:
            raise ValueError("schedule parameters must be positive")

    def __call__(self, k: int) -> float:
        return self.a / (k + self.c)


@dataclass
class DualState:
    """Per-node multiplier copies and the primal iterate they pair with."""

    lambdas: np.ndarray
    rates: np.ndarray


@dataclass
class DistributedTrace:
    residuals: np.ndarray
    lambda_spreads: np.ndarray
    lambda_mins: np.ndarray
    status: str

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def __len__(self) -> int:
        return len(self.residuals)


def solve_distributed(
    costs: CostModel,
    region: FeasibleRegion,
    graph: CommGraph,
    schedule: StepSchedule | None = None,
    max_iters: int = 200_000,
    eps_r: float = 1e-6,
    dual_mode: str = "mixing",
    hat_schedule: StepSchedule | None = None,
    init_rates=None,
    init_lambdas=None,
):
    """Perturbed primal-dual iteration over the communication graph.

    Per round, with local budget share ``R/n`` at every node:

        r_hat   = P_box(r + eps_hat * (J(r) - lam))
        lam_hat = dual step from (lam, r) with eps_hat
        r'      = P_box(r + eps * (J(r) - lam_hat))
        lam'    = dual step from (lam, r_hat) with eps

    where the dual step is mode-dependent (see module docstring) and always
    ends with projection onto the nonnegative orthant. Stops once
    ``||dr|| + ||dlam|| <= eps_r``. The returned allocation is the final
    primal iterate projected onto the full region, so it is always feasible;
    the raw iterate is available through the dual state.

    Returns ``(rates, DualState, DistributedTrace)``.
    """
    if dual_mode not in DUAL_MODES:
        raise ValueError(f"dual_mode must be one of {DUAL_MODES}")
    if graph.n != region.n:
        raise GraphError(f"graph has {graph.n} nodes but the region has {region.n} agents")
    schedule = schedule or StepSchedule()
    hat_schedule = hat_schedule or schedule

    share = region.total / region.n
    L = consensus_matrix(graph)
    G = L + L.T
    W = metropolis_matrix(graph)
    lb, ub = region.lower, region.upper

    r = initial_allocation(region) if init_rates is None else np.array(init_rates, dtype=float)
    # warm-start the multiplier copies at the local costs: each node can
    # evaluate its own cost, and the dual settles near the common cost level
    lam = costs.values(r).copy() if init_lambdas is None else np.array(init_lambdas, dtype=float)
    lam = np.maximum(lam, 0.0)

    def dual_step(lam_cur, r_partner, eps):
        drift = r_partner - share
        if dual_mode == "mixing":
            out = W @ lam_cur + eps * drift
        elif dual_mode == "penalty":
            out = lam_cur + eps * (drift - G @ lam_cur)
        else:
            out = lam_cur + eps * (drift - L @ lam_cur)
        return np.maximum(out, 0.0)

    residuals = np.empty(max_iters)
    spreads = np.empty(max_iters)
    mins = np.empty(max_iters)
    status = MAX_INNER_ITERS
    used = 0
    for k in range(max_iters):
        eps = schedule(k)
        eps_hat = hat_schedule(k)
        values = costs.values(r)

        r_hat = np.clip(r + eps_hat * (values - lam), lb, ub)
        lam_hat = dual_step(lam, r, eps_hat)

        r_new = np.clip(r + eps * (values - lam_hat), lb, ub)
        lam_new = dual_step(lam, r_hat, eps)

        residual = float(np.linalg.norm(r_new - r) + np.linalg.norm(lam_new - lam))
        r, lam = r_new, lam_new
        residuals[k] = residual
        spreads[k] = float(lam.max() - lam.min())
        mins[k] = float(lam.min())
        used = k + 1
        if not (np.isfinite(lam).all() and np.linalg.norm(lam) < 1e6):
            raise NumericalError("distributed iteration diverged (multiplier norm exceeded 1e6)")
        if residual <= eps_r:
            status = CONVERGED
            break

    rates = project_feasible(r, region)
    trace = DistributedTrace(
        residuals=residuals[:used], lambda_spreads=spreads[:used], lambda_mins=mins[:used], status=status
    )
    return rates, DualState(lambdas=lam, rates=r), trace


@dataclass
class ComparisonReport:
    rates_centralized: np.ndarray
    rates_distributed: np.ndarray
    linf_gap: float
    game_value_gap: float
    lambda_spread: float
    centralized_status: str
    distributed_status: str
    dual_state: DualState = None
    distributed_trace: DistributedTrace = None


def compare_with_centralized(
    costs: CostModel,
    region: FeasibleRegion,
    graph: CommGraph,
    unstable_mask=None,
    solver_cfg: SolverConfig | None = None,
    **distributed_kwargs,
) -> ComparisonReport:
    """Solve the same instance both ways and report the allocation and value gaps.

    Agents flagged unstable get the positive rate floor ``cfg.eta`` in the
    distributed solve's box (their cost is unbounded at rate zero); the
    centralized solver manages the same floors through its outer loop.
    """
    cfg = solver_cfg or SolverConfig()
    mask = np.zeros(region.n, dtype=bool) if unstable_mask is None else np.asarray(unstable_mask, dtype=bool)

    r_c, trace_c = solve_maxmin(costs, region, cfg, mask)

    dist_region = region
    if mask.any():
        floored = np.where(mask, np.maximum(cfg.eta, region.lower), region.lower)
        dist_region = FeasibleRegion(region.total, floored, region.upper)
    r_d, dual, trace_d = solve_distributed(costs, dist_region, graph, **distributed_kwargs)

    worst_c = float(costs.values(r_c).max())
    worst_d = float(costs.values(r_d).max())
    return ComparisonReport(
        rates_centralized=r_c,
        rates_distributed=r_d,
        linf_gap=float(np.max(np.abs(r_d - r_c))),
        game_value_gap=abs(worst_d - worst_c),
        lambda_spread=float(dual.lambdas.max() - dual.lambdas.min()),
        centralized_status=trace_c.status,
        distributed_status=trace_d.status,
        dual_state=dual,
        distributed_trace=trace_d,
    )
