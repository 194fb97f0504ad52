"""Sensor-side cost construction for remote state estimation.

A sensor watches one LTI process, runs a local Kalman filter, and occasionally
ships its estimate to a fusion center. Between transmissions the center
predicts, so its error covariance ``P`` follows

    P(k+1) = Pbar           after a received update,
    P(k+1) = A P(k) A' + Q  otherwise,

with ``Pbar`` the filter's steady-state covariance. Under a randomized
threshold transmission policy the long-run average of ``Tr(P)`` as a function
of the average transmission rate ``r`` is piecewise linear, convex, continuous
and strictly decreasing; this module builds that curve and evaluates it in
closed form. The closed form is independently validated against the Monte
Carlo simulator in ``fairsched.simulate``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from .allocation import CostDomainError, CostModel

__all__ = [
    "NumericalError",
    "ProcessModel",
    "ThresholdPolicy",
    "CostCurve",
    "CurveCostModel",
    "classify_stability",
    "steady_state_filter_cov",
    "no_comm_limit",
    "threshold_from_rate",
    "build_cost_curve",
    "cost_eval",
    "lipschitz_bounds",
]

# the rate is nudged down by this relative amount before taking floor(1/r - 1),
# so the threshold is stable when 1/r lands exactly on an integer
_XI_NUDGE = 1e-12

_STABILITY_TOL = 1e-10


class NumericalError(RuntimeError):
    """A fixed-point iteration failed to converge or overflowed."""


@dataclass(frozen=True, eq=False)
class ProcessModel:
    """One LTI process: ``x(k+1) = A x + w``, ``y(k) = C x + v``.

    ``Q`` (process noise covariance) must be symmetric PSD, ``R_meas``
    (measurement noise covariance) symmetric PD. ``C`` and ``R_meas`` default
    to identities of the state dimension. Shape and definiteness are checked
    at construction; the observability / controllability rank tests live in
    :meth:`validate` so degenerate fixtures (for instance ``Q = 0``) can still
    be built for targeted tests.
    """

    A: np.ndarray
    Q: np.ndarray
    C: np.ndarray = None
    R_meas: np.ndarray = None
    Pi0: np.ndarray = None

    def __post_init__(self):
        # copies: fields are frozen read-only and must not alias caller data
        A = np.atleast_2d(np.array(self.A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        Q = np.atleast_2d(np.array(self.Q, dtype=float))
        C = np.eye(n) if self.C is None else np.atleast_2d(np.array(self.C, dtype=float))
        R = np.eye(C.shape[0]) if self.R_meas is None else np.atleast_2d(np.array(self.R_meas, dtype=float))
        Pi0 = None if self.Pi0 is None else np.atleast_2d(np.array(self.Pi0, dtype=float))

        if Q.shape != (n, n):
            raise ValueError(f"Q must be {n}x{n}, got {Q.shape}")
        if C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {C.shape}")
        if R.shape != (C.shape[0], C.shape[0]):
            raise ValueError(f"R_meas must be {C.shape[0]}x{C.shape[0]}, got {R.shape}")
        _check_symmetric_psd(Q, "Q", definite=False)
        _check_symmetric_psd(R, "R_meas", definite=True)
        if Pi0 is not None:
            if Pi0.shape != (n, n):
                raise ValueError(f"Pi0 must be {n}x{n}, got {Pi0.shape}")
            _check_symmetric_psd(Pi0, "Pi0", definite=False)

        for name, arr in (("A", A), ("Q", Q), ("C", C), ("R_meas", R)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if Pi0 is not None:
            Pi0.setflags(write=False)
        object.__setattr__(self, "Pi0", Pi0)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def validate(self) -> None:
        """Rank tests: (A, C) observable and (A, sqrt(Q)) controllable."""
        n = self.dim
        obs = np.vstack([self.C @ np.linalg.matrix_power(self.A, k) for k in range(n)])
        if np.linalg.matrix_rank(obs) < n:
            raise ValueError("(A, C) is not observable")
        sq = _matrix_sqrt_psd(self.Q)
        ctr = np.hstack([np.linalg.matrix_power(self.A, k) @ sq for k in range(n)])
        if np.linalg.matrix_rank(ctr) < n:
            raise ValueError("(A, sqrt(Q)) is not controllable")


def _check_symmetric_psd(M, name, definite):
    if not np.allclose(M, M.T, atol=1e-9):
        raise ValueError(f"{name} must be symmetric")
    eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
    if definite and eigs.min() <= 0:
        raise ValueError(f"{name} must be positive definite (min eigenvalue {eigs.min():.3g})")
    if not definite and eigs.min() < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite (min eigenvalue {eigs.min():.3g})")


def _matrix_sqrt_psd(M):
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    return vecs @ np.diag(np.sqrt(np.maximum(vals, 0.0))) @ vecs.T


def classify_stability(A) -> bool:
    """True iff the spectral radius of ``A`` is below 1; the boundary counts as unstable."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    return rho < 1.0 - _STABILITY_TOL


def steady_state_filter_cov(p: ProcessModel, tol: float = 1e-12, max_iters: int = 10**6) -> np.ndarray:
    """Steady state of the predict-then-update error covariance recursion.

    Iterates ``X- = A X A' + Q`` followed by the measurement update
    ``X = X- - X- C' (C X- C' + R)^-1 C X-`` from ``Pi0`` (zero by default)
    until the Frobenius change drops below ``tol``.
    """
    X = np.zeros((p.dim, p.dim)) if p.Pi0 is None else np.array(p.Pi0)
    A, Q, C, R = p.A, p.Q, p.C, p.R_meas
    for _ in range(max_iters):
        Xp = A @ X @ A.T + Q
        G = Xp @ C.T
        X_new = Xp - G @ np.linalg.solve(C @ Xp @ C.T + R, G.T)
        X_new = 0.5 * (X_new + X_new.T)
        if np.linalg.norm(X_new - X) <= tol:
            return X_new
        X = X_new
    raise NumericalError("filter covariance iteration did not converge; the model is ill posed")


def no_comm_limit(p: ProcessModel, tol: float = 1e-12, max_iters: int = 10**6) -> float:
    """``Tr(P_inf)`` where ``P_inf = A P_inf A' + Q``: the never-transmit average error.

    Only defined for stable ``A``; the prediction-only covariance has no
    bounded fixed point otherwise.
    """
    if not classify_stability(p.A):
        raise CostDomainError("no_comm_limit requires a stable process")
    X = np.zeros((p.dim, p.dim))
    for _ in range(max_iters):
        X_new = p.A @ X @ p.A.T + p.Q
        X_new = 0.5 * (X_new + X_new.T)
        if np.linalg.norm(X_new - X) <= tol:
            return float(np.trace(X_new))
        X = X_new
    raise NumericalError("prediction covariance iteration did not converge")


@dataclass(frozen=True)
class ThresholdPolicy:
    """Randomized threshold transmission rule.

    Never transmit while the age ``tau`` (steps since the last transmission)
    is below ``xi``; transmit with probability ``b`` at ``tau == xi``; always
    transmit beyond. The induced average rate is ``1 / (xi + 2 - b)``.
    """

    xi: int
    b: float

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError("threshold must be a nonnegative integer")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("randomization probability must lie in [0, 1]")
        if not 0.0 < self.rate <= 1.0:
            raise ValueError("policy implies an average rate outside (0, 1]")

    @property
    def rate(self) -> float:
        return 1.0 / (self.xi + 2.0 - self.b)


def _xi_of(r: float) -> int:
    """Threshold index of the segment containing rate ``r``; no validation."""
    return max(0, math.floor((1.0 + _XI_NUDGE) / r - 1.0))


def threshold_from_rate(r: float) -> ThresholdPolicy:
    """Policy parameters hitting the average rate ``r`` exactly.

    ``xi = floor(1/r - 1)`` and ``b = xi + 1 + (r - 1)/r``. At rates whose
    reciprocal is an exact integer the nudge picks the representation with
    ``b = 1`` (sure transmission at the threshold), which by continuity
    evaluates identically to the ``b = 0`` form one threshold lower.
    """
    r = float(r)
    if not 0.0 < r <= 1.0 + 1e-12:
        raise CostDomainError(f"rate must lie in (0, 1], got {r}")
    r = min(r, 1.0)
    xi = _xi_of(r)
    b = xi + 1.0 + (r - 1.0) / r
    return ThresholdPolicy(xi=xi, b=min(max(b, 0.0), 1.0))


@dataclass(frozen=True, eq=False)
class CostCurve:
    """Piecewise-linear optimal average error of one sensor.

    ``traces[t] = Tr(h^t(Pbar))`` with ``h(X) = A X A' + Q``, precomputed far
    enough to cover rates down to ``domain_floor``. ``cumsums[k]`` holds
    ``traces[0] + ... + traces[k]``. Stable processes carry ``stable_limit``,
    the bounded limit of the trace sequence; beyond the stored entries the
    curve continues as a single affine tail and is defined down to rate 0.
    """

    traces: np.ndarray
    cumsums: np.ndarray
    stable_limit: float | None
    domain_floor: float

    def segment_slope(self, k: int) -> float:
        """Slope of the segment on (1/(k+2), 1/(k+1)]; constant for k past the stored range."""
        if k + 1 < self.traces.size:
            return float(self.cumsums[k] - (k + 1) * self.traces[k + 1])
        if self.stable_limit is None:
            raise CostDomainError(f"segment {k} is below the curve's domain floor")
        return float(self.cumsums[-1] - self.traces.size * self.stable_limit)


def build_cost_curve(p: ProcessModel, domain_floor: float, tail_tol: float = 1e-10) -> CostCurve:
    """Precompute the trace sequence needed to evaluate costs on [domain_floor, 1].

    For unstable processes ``domain_floor`` must be positive (the curve is
    unbounded at rate zero) and the sequence is computed up to the segment
    containing the floor. For stable processes the sequence is additionally
    truncated once it is within ``tail_tol`` (relative) of the bounded limit.
    """
    domain_floor = float(domain_floor)
    stable = classify_stability(p.A)
    if domain_floor < 0 or domain_floor > 1:
        raise CostDomainError(f"domain floor must lie in [0, 1], got {domain_floor}")
    if not stable and domain_floor == 0:
        raise CostDomainError("an unstable process needs a positive rate floor; its cost is unbounded at 0")

    limit = no_comm_limit(p) if stable else None
    xi_cap = None
    if domain_floor > 0:
        xi_cap = threshold_from_rate(domain_floor).xi

    pbar = steady_state_filter_cov(p)
    M = np.array(pbar)
    traces = [float(np.trace(M))]
    tail_cut = None if limit is None else tail_tol * max(limit, 1e-300)
    t = 0
    while True:
        if xi_cap is not None and t >= xi_cap + 1:
            break
        if tail_cut is not None and abs(traces[-1] - limit) <= tail_cut and t >= 1:
            break
        if xi_cap is None and tail_cut is None:  # unreachable by the guards above
            raise CostDomainError("unbounded curve requires a rate floor")
        M = p.A @ M @ p.A.T + p.Q
        M = 0.5 * (M + M.T)
        t += 1
        tr = float(np.trace(M))
        if not math.isfinite(tr):
            raise NumericalError(
                f"trace sequence overflowed at step {t}; the rate floor {domain_floor} is too small"
            )
        traces.append(tr)

    traces = np.array(traces)
    return CostCurve(
        traces=traces,
        cumsums=np.cumsum(traces),
        stable_limit=limit,
        domain_floor=domain_floor,
    )


def cost_eval(curve: CostCurve, r: float) -> float:
    """Average error at rate ``r`` under the optimal randomized threshold policy.

    Renewal argument: a transmission cycle visits ages ``0..xi`` (probability
    ``b``) or ``0..xi+1``, so the long-run average is

        traces[xi+1] + r * (S_xi - (xi+1) * traces[xi+1])

    with ``S_xi`` the cycle cost of the short cycle. ``r = 1`` gives
    ``Tr(Pbar)``; for stable curves ``r = 0`` gives the never-transmit limit.
    """
    r = float(r)
    if r == 0.0:
        if curve.stable_limit is None:
            raise CostDomainError("rate 0 is outside the domain of an unstable cost curve")
        return curve.stable_limit
    if r < 0 or r > 1 + 1e-12:
        raise CostDomainError(f"rate must lie in [0, 1], got {r}")
    if r < curve.domain_floor * (1.0 - 1e-9):
        raise CostDomainError(f"rate {r} lies below the curve's domain floor {curve.domain_floor}")

    xi = _xi_of(min(r, 1.0))
    if xi + 1 < curve.traces.size:
        anchor = curve.traces[xi + 1]
        return float(anchor + r * (curve.cumsums[xi] - (xi + 1) * anchor))
    if curve.stable_limit is None:
        raise CostDomainError(f"rate {r} lies below the curve's domain floor {curve.domain_floor}")
    return float(curve.stable_limit + r * curve.segment_slope(xi))


def lipschitz_bounds(curve: CostCurve, lb: float) -> tuple[float, float]:
    """(alpha, beta): smallest and largest slope magnitude over segments meeting [lb, 1].

    Slopes are nonpositive and their magnitude grows as the rate shrinks, so
    alpha comes from the segment at rate 1 and beta from the segment holding
    ``lb`` (or the affine tail of a stable curve when ``lb == 0``).
    """
    lb = float(lb)
    if lb < 0 or lb > 1:
        raise CostDomainError(f"lower bound must lie in [0, 1], got {lb}")
    if lb == 0 and curve.stable_limit is None:
        raise CostDomainError("an unstable curve has no slope bound down to rate 0")
    if lb > 0 and lb < curve.domain_floor * (1.0 - 1e-9):
        raise CostDomainError(f"lower bound {lb} lies below the curve's domain floor {curve.domain_floor}")

    size = curve.traces.size
    stored = curve.cumsums[: size - 1] - np.arange(1, size) * curve.traces[1:]
    if lb > 0:
        xi_lb = _xi_of(lb)
        slopes = list(stored[: xi_lb + 1])
        if xi_lb + 1 >= size:
            slopes.append(curve.segment_slope(xi_lb))
    else:
        slopes = list(stored)
        slopes.append(curve.segment_slope(size))
    mags = np.abs(np.array(slopes))
    alpha, beta = float(mags.min()), float(mags.max())
    if alpha <= 1e-14:
        raise CostDomainError("cost curve has a flat segment; strict monotonicity is violated")
    return alpha, beta


class CurveCostModel(CostModel):
    """Cost model backed by per-process cost curves.

    When constructed from process models the curves extend themselves on
    demand: evaluating an unstable agent below its current floor rebuilds
    that curve with a smaller floor (under a lock, so concurrent readers only
    ever see a complete curve). Curves handed in directly are fixed and
    evaluating below their floor raises.
    """

    def __init__(self, curves, processes=None, tail_tol: float = 1e-10):
        self._curves = list(curves)
        self._processes = list(processes) if processes is not None else None
        self._tail_tol = tail_tol
        self._lock = threading.Lock()
        self.n = len(self._curves)
        if self._processes is not None and len(self._processes) != self.n:
            raise ValueError("need one process per curve")

    @classmethod
    def from_processes(cls, processes, unstable_floor: float = 1e-3, tail_tol: float = 1e-10):
        curves = [
            build_cost_curve(p, 0.0 if classify_stability(p.A) else unstable_floor, tail_tol)
            for p in processes
        ]
        return cls(curves, processes=processes, tail_tol=tail_tol)

    @property
    def curves(self) -> list[CostCurve]:
        return list(self._curves)

    def _extend(self, i: int, r: float) -> CostCurve:
        with self._lock:
            curve = self._curves[i]
            if r < curve.domain_floor:
                curve = build_cost_curve(self._processes[i], 0.5 * r, self._tail_tol)
                self._curves[i] = curve
            return curve

    def eval(self, i: int, r: float) -> float:
        try:
            return cost_eval(self._curves[i], r)
        except CostDomainError:
            if self._processes is None or r <= 0:
                raise
            return cost_eval(self._extend(i, r), r)

    def slope_bounds(self, lower) -> tuple[np.ndarray, np.ndarray]:
        lower = np.asarray(lower, dtype=float)
        alphas, betas = [], []
        for i in range(self.n):
            lb = float(lower[i])
            curve = self._curves[i]
            if 0 < lb < curve.domain_floor and self._processes is not None:
                curve = self._extend(i, lb)
            a, b = lipschitz_bounds(curve, lb)
            alphas.append(a)
            betas.append(b)
        return np.array(alphas), np.array(betas)
