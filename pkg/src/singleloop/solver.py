"""Approximated hypergradient, the single-loop iteration, a double-loop
baseline, and empirical rate fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CapabilityError, DivergenceDetected, InnerStall, InputError, InsufficientDecay
from .numerics import finite_diff_grad, spd_solve
from .problem_model import BilevelOracle

# Rate-fit window: from the first error <= e_0 * FIT_UPPER_FRAC down to FIT_FLOOR.
FIT_UPPER_FRAC = 0.1
FIT_FLOOR = 1e-10
FIT_MIN_POINTS = 10
FIT_MIN_LOGGED = 50


@dataclass
class EvalCounters:
    upper: int = 0  # (grad_f_omega, grad_f_v) pairs
    lower: int = 0  # grad_g_v evaluations
    hessian_solves: int = 0
    inner: int = 0  # double-loop inner gradient steps


@dataclass(frozen=True)
class SolverConfig:
    alpha: float
    beta: float
    max_iters: int = 10_000
    stop_grad_tol: float = 0.0
    log_stride: int = 1
    # Only honoured when the oracle carries ground truth.
    target_omega_err: Optional[float] = None

    def __post_init__(self):
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InputError(f"{name} must be finite and positive, got {value}")
        if self.max_iters < 0:
            raise InputError("max_iters must be nonnegative")
        if self.stop_grad_tol < 0:
            raise InputError("stop_grad_tol must be nonnegative")
        if self.log_stride < 1:
            raise InputError("log_stride must be at least 1")


@dataclass
class Trajectory:
    """Logged iterates of one run plus evaluation counters.

    Row ``i`` describes iterate ``steps[i]``; the gradient norms are those
    evaluated at that iterate and the ``*_evals`` columns are cumulative
    counts up to and including that evaluation.
    """

    steps: np.ndarray
    omega: np.ndarray
    v: np.ndarray
    approx_grad_norm: np.ndarray
    lower_grad_norm: np.ndarray
    upper_evals: np.ndarray
    lower_evals: np.ndarray
    omega_err: Optional[np.ndarray] = None
    v_err: Optional[np.ndarray] = None
    inner_iters: Optional[np.ndarray] = None
    counters: EvalCounters = field(default_factory=EvalCounters)
    stop_reason: str = ""
    config: Optional[SolverConfig] = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def has_errors(self) -> bool:
        return self.omega_err is not None

    @property
    def total_error(self) -> np.ndarray:
        if not self.has_errors:
            raise CapabilityError("trajectory has no ground-truth errors")
        return self.omega_err + self.v_err

    @property
    def last_step(self) -> int:
        return int(self.steps[-1]) if len(self.steps) else 0


class _Log:
    def __init__(self, gt):
        self.gt = gt
        self.rows: list[tuple] = []
        self.omega: list[np.ndarray] = []
        self.v: list[np.ndarray] = []
        self.inner: list[int] = []

    def add(self, k, omega, v, gnorm, lnorm, counters, inner=None):
        if self.gt is not None:
            we = _norm(omega - self.gt.omega_star)
            ve = _norm(v - self.gt.v_star(omega))
        else:
            we = ve = math.nan
        self.rows.append((k, gnorm, lnorm, counters.upper, counters.lower, we, ve))
        self.omega.append(omega.copy())
        self.v.append(v.copy())
        if inner is not None:
            self.inner.append(inner)

    def build(self, counters, stop_reason, config, m, n) -> Trajectory:
        cols = list(zip(*self.rows)) if self.rows else [()] * 7
        has_gt = self.gt is not None
        return Trajectory(
            steps=np.asarray(cols[0], dtype=int),
            omega=np.asarray(self.omega).reshape(-1, m),
            v=np.asarray(self.v).reshape(-1, n),
            approx_grad_norm=np.asarray(cols[1], dtype=float),
            lower_grad_norm=np.asarray(cols[2], dtype=float),
            upper_evals=np.asarray(cols[3], dtype=int),
            lower_evals=np.asarray(cols[4], dtype=int),
            omega_err=np.asarray(cols[5], dtype=float) if has_gt else None,
            v_err=np.asarray(cols[6], dtype=float) if has_gt else None,
            inner_iters=np.asarray(self.inner, dtype=int) if self.inner else None,
            counters=EvalCounters(counters.upper, counters.lower, counters.hessian_solves, counters.inner),
            stop_reason=stop_reason,
            config=config,
        )


def _norm(x: np.ndarray) -> float:
    return math.sqrt(x.dot(x))


def approx_gradient(oracle: BilevelOracle, omega, v, counters: EvalCounters | None = None) -> np.ndarray:
    """``grad_w f - (d2_wv g) (d2_vv g)^{-1} grad_v f`` at ``(omega, v)``.

    One Hessian solve per call; a non-SPD lower Hessian raises
    ``SingularHessian``.
    """
    correction = spd_solve(oracle.hess_g_vv(omega, v), oracle.grad_f_v(omega, v))
    grad = oracle.grad_f_omega(omega, v) - oracle.hess_g_omega_v(omega, v) @ correction
    if counters is not None:
        counters.upper += 1
        counters.hessian_solves += 1
    return grad


def hypergradient_consistency(oracle: BilevelOracle, omega, h: float = 1e-6) -> float:
    """Discrepancy between the approximated gradient at ``v*(omega)`` and
    central differences of the reduced objective, scaled by ``1 + |fd|``."""
    gt = oracle.ground_truth
    if gt is None or gt.f_star is None:
        raise CapabilityError("hypergradient consistency needs v_star and f_star")
    omega = np.asarray(omega, dtype=float).reshape(oracle.m)
    analytic = approx_gradient(oracle, omega, gt.v_star(omega))
    numeric = finite_diff_grad(gt.f_star, omega, h)
    return _norm(analytic - numeric) / (1.0 + _norm(numeric))


def _check_target(gt, target, omega) -> bool:
    return target is not None and gt is not None and _norm(omega - gt.omega_star) <= target


def single_loop_run(oracle: BilevelOracle, config: SolverConfig, omega0, v0) -> Trajectory:
    """Simultaneous updates

        w_{k+1} = w_k - alpha * approx_grad(w_k, v_k)
        v_{k+1} = v_k - beta  * grad_v g(w_k, v_k)

    Both right-hand sides read the same iterate. Stops after ``max_iters``
    updates, when both gradient norms drop to ``stop_grad_tol``, or (with
    ground truth) when the upper error reaches ``target_omega_err``.
    """
    omega, v = oracle.check_point(omega0, v0)
    omega, v = omega.copy(), v.copy()
    alpha, beta = config.alpha, config.beta
    stride, tol, target = config.log_stride, config.stop_grad_tol, config.target_omega_err
    gt = oracle.ground_truth
    counters = EvalCounters()
    log = _Log(gt)
    grad_g = oracle.grad_g_v
    stop_reason = "max_iters"

    with np.errstate(over="ignore", invalid="ignore"):
        k = 0
        while True:
            if _check_target(gt, target, omega):
                log.add(k, omega, v, math.nan, math.nan, counters)
                stop_reason = "target"
                break
            u1 = approx_gradient(oracle, omega, v, counters)
            u2 = grad_g(omega, v)
            counters.lower += 1
            gnorm, lnorm = _norm(u1), _norm(u2)
            if not (math.isfinite(gnorm) and math.isfinite(lnorm)):
                traj = log.build(counters, "diverged", config, oracle.m, oracle.n)
                raise DivergenceDetected(f"non-finite gradient at step {k}", max(k - 1, 0), traj)
            converged = gnorm <= tol and lnorm <= tol
            last = converged or k >= config.max_iters
            if last or k % stride == 0:
                log.add(k, omega, v, gnorm, lnorm, counters)
            if last:
                stop_reason = "grad_tol" if converged else "max_iters"
                break
            omega = omega - alpha * u1
            v = v - beta * u2
            k += 1
            # Squared norms overflow only far past any meaningful iterate.
            if not math.isfinite(omega.dot(omega) + v.dot(v)):
                traj = log.build(counters, "diverged", config, oracle.m, oracle.n)
                raise DivergenceDetected(f"non-finite iterate at step {k}", k - 1, traj)
    return log.build(counters, stop_reason, config, oracle.m, oracle.n)


def double_loop_run(
    oracle: BilevelOracle,
    outer_config: SolverConfig,
    inner_tol: float,
    omega0,
    v0,
    inner_max_iters: int = 1_000_000,
) -> Trajectory:
    """Baseline: drive ``|grad_v g(w_k, .)|`` below ``inner_tol`` by gradient
    descent with step ``beta`` (warm-started), then take one upper step."""
    if not inner_tol > 0:
        raise InputError("inner_tol must be positive")
    omega, v = oracle.check_point(omega0, v0)
    omega, v = omega.copy(), v.copy()
    alpha, beta = outer_config.alpha, outer_config.beta
    stride, tol, target = outer_config.log_stride, outer_config.stop_grad_tol, outer_config.target_omega_err
    tol_sq = inner_tol * inner_tol
    gt = oracle.ground_truth
    counters = EvalCounters()
    log = _Log(gt)
    grad_g = oracle.grad_g_v
    stop_reason = "max_iters"

    with np.errstate(over="ignore", invalid="ignore"):
        k = 0
        while True:
            if _check_target(gt, target, omega):
                log.add(k, omega, v, math.nan, math.nan, counters, inner=0)
                stop_reason = "target"
                break
            u2 = grad_g(omega, v)
            sq = u2.dot(u2)
            inner = 0
            # Squared norms keep this hot loop free of extra calls.
            while sq > tol_sq:
                if inner >= inner_max_iters or not math.isfinite(sq):
                    counters.lower += inner + 1
                    counters.inner += inner
                    traj = log.build(counters, "inner_stall", outer_config, oracle.m, oracle.n)
                    raise InnerStall(f"inner loop did not reach {inner_tol:g} at outer step {k}", k, traj)
                v = v - beta * u2
                u2 = grad_g(omega, v)
                sq = u2.dot(u2)
                inner += 1
            counters.lower += inner + 1
            counters.inner += inner
            lnorm = math.sqrt(sq)
            u1 = approx_gradient(oracle, omega, v, counters)
            gnorm = _norm(u1)
            if not math.isfinite(gnorm):
                traj = log.build(counters, "diverged", outer_config, oracle.m, oracle.n)
                raise DivergenceDetected(f"non-finite gradient at step {k}", max(k - 1, 0), traj)
            converged = gnorm <= tol and lnorm <= tol
            last = converged or k >= outer_config.max_iters
            if last or k % stride == 0:
                log.add(k, omega, v, gnorm, lnorm, counters, inner=inner)
            if last:
                stop_reason = "grad_tol" if converged else "max_iters"
                break
            omega = omega - alpha * u1
            k += 1
            if not math.isfinite(omega.dot(omega)):
                traj = log.build(counters, "diverged", outer_config, oracle.m, oracle.n)
                raise DivergenceDetected(f"non-finite iterate at step {k}", k - 1, traj)
    return log.build(counters, stop_reason, outer_config, oracle.m, oracle.n)


def fit_rate_errors(
    steps,
    errors,
    floor: float = FIT_FLOOR,
    upper_frac: float = FIT_UPPER_FRAC,
    min_points: int = FIT_MIN_POINTS,
) -> tuple[float, tuple[int, int]]:
    """Least-squares fit of ``log e_k = c + k log(rho)`` on the decay window."""
    steps = np.asarray(steps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if steps.shape != errors.shape or steps.ndim != 1:
        raise InputError("steps and errors must be 1-D arrays of equal length")
    if len(errors) == 0 or not errors[0] > 0:
        raise InsufficientDecay("initial error is zero; nothing to fit")
    below = np.nonzero(errors <= upper_frac * errors[0])[0]
    above = np.nonzero(errors >= floor)[0]
    if len(below) == 0 or len(above) == 0:
        raise InsufficientDecay("error never entered the fitting window")
    start, end = below[0], above[-1]
    if end - start + 1 < min_points:
        raise InsufficientDecay(f"only {max(end - start + 1, 0)} points in the fitting window")
    k = steps[start:end + 1]
    y = np.log(errors[start:end + 1])
    kc = k - k.mean()
    slope = float(kc @ (y - y.mean()) / (kc @ kc))
    return math.exp(slope), (int(steps[start]), int(steps[end]))


def fit_rate(traj: Trajectory, floor: float = FIT_FLOOR, upper_frac: float = FIT_UPPER_FRAC) -> tuple[float, tuple[int, int]]:
    """Empirical linear rate of ``omega_err + v_err`` along a trajectory."""
    if not traj.has_errors:
        raise CapabilityError("rate fitting needs ground-truth errors")
    if len(traj) < FIT_MIN_LOGGED:
        raise InsufficientDecay(f"need at least {FIT_MIN_LOGGED} logged steps, got {len(traj)}")
    return fit_rate_errors(traj.steps, traj.total_error, floor=floor, upper_frac=upper_frac)
