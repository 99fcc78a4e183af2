"""Pointwise audit of the sector inequalities along a solver trajectory.

Iterates are shifted to ``x = (w - w*, v - v*(w))`` with inputs
``u1 = approx_grad(w, v)`` and ``u2 = grad_v g(w, v) + (v*(w - alpha u1) - v*(w)) / beta``,
so that the run obeys ``x_{k+1} = x_k - diag(alpha I, beta I) u_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .certificate import Multipliers, construct_multipliers, transform_blocks
from .errors import CapabilityError, InputError, MultiplierInfeasible
from .problem_model import BilevelOracle, ProblemConstants
from .solver import SolverConfig, Trajectory, approx_gradient

AUDIT_TOL = 1e-10
DYNAMICS_TOL = 1e-10

# (i)-(iv): the two upper and two lower sector bounds; (v) their multiplier
# combination; (vi) the same statement after the change of variables.
CHECKS = (
    "upper_descent",
    "upper_growth",
    "lower_descent",
    "lower_growth",
    "sector_form",
    "transformed_gain",
)


@dataclass(frozen=True)
class SystemState:
    x1: np.ndarray
    x2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    dynamics_residual: float = 0.0

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.x1, self.x2])

    @property
    def u(self) -> np.ndarray:
        return np.concatenate([self.u1, self.u2])


def _require_truth(oracle: BilevelOracle):
    if oracle.ground_truth is None:
        raise CapabilityError("the audit needs w* and v*(.)")
    return oracle.ground_truth


def state_transform(oracle: BilevelOracle, config: SolverConfig, omega_k, v_k) -> SystemState:
    """Shifted state and inputs at one iterate.

    ``dynamics_residual`` compares ``x - diag(alpha, beta) u`` with the shifted
    coordinates of the next iterate produced by the update rule.
    """
    gt = _require_truth(oracle)
    omega, v = oracle.check_point(omega_k, v_k)
    alpha, beta = config.alpha, config.beta
    v_at = gt.v_star(omega)
    x1 = omega - gt.omega_star
    x2 = v - v_at
    u1 = approx_gradient(oracle, omega, v)
    grad_g = oracle.grad_g_v(omega, v)
    omega_next = omega - alpha * u1
    u2 = grad_g + (gt.v_star(omega_next) - v_at) / beta

    v_next = v - beta * grad_g
    predicted = np.concatenate([x1 - alpha * u1, x2 - beta * u2])
    actual = np.concatenate([omega_next - gt.omega_star, v_next - gt.v_star(omega_next)])
    residual = float(np.max(np.abs(predicted - actual))) if predicted.size else 0.0
    return SystemState(x1=x1, x2=x2, u1=u1, u2=u2, dynamics_residual=residual)


@dataclass
class CheckResult:
    name: str
    min_margin: float = math.inf
    argmin_step: Optional[int] = None
    first_violation: Optional[int] = None
    passed: bool = True

    def update(self, k: int, margin: float, tol: float):
        if margin < self.min_margin or self.argmin_step is None:
            self.min_margin = margin
            self.argmin_step = k
        if margin < -tol and self.first_violation is None:
            self.first_violation = k
            self.passed = False

    def to_dict(self) -> dict:
        return {
            "min_margin": self.min_margin,
            "argmin_step": self.argmin_step,
            "first_violation": self.first_violation,
            "pass": self.passed,
        }


@dataclass
class AuditReport:
    checks: dict[str, CheckResult]
    steps_audited: int = 0
    tolerance: float = AUDIT_TOL
    max_weighted_sum_error: float = 0.0
    max_transform_error: float = 0.0
    implication_failures: int = 0
    max_dynamics_residual: float = 0.0
    multipliers: Optional[Multipliers] = None
    margins: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failed(self) -> list[str]:
        return [name for name, c in self.checks.items() if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "steps_audited": self.steps_audited,
            "tolerance": self.tolerance,
            "checks": {name: c.to_dict() for name, c in self.checks.items()},
            "max_weighted_sum_error": self.max_weighted_sum_error,
            "max_transform_error": self.max_transform_error,
            "implication_failures": self.implication_failures,
            "max_dynamics_residual": self.max_dynamics_residual,
            "multipliers": self.multipliers.to_dict() if self.multipliers else None,
        }


def state_margins(
    state: SystemState,
    constants: ProblemConstants,
    config: SolverConfig,
    mult: Multipliers,
    blocks=None,
) -> dict[str, float]:
    """Margins of the six inequalities at one state (nonnegative when they hold)."""
    c = constants
    x1, x2, u1, u2 = state.x1, state.x2, state.u1, state.u2
    nx1, nx2 = float(x1 @ x1), float(x2 @ x2)
    nu1, nu2 = float(u1 @ u1), float(u2 @ u2)
    ip1, ip2 = float(u1 @ x1), float(u2 @ x2)
    c3, c4 = mult.coupling_coefficients(c, config.alpha, config.beta)

    margins = {
        "upper_descent": ip1 - 0.375 * c.mu_f * nx1 + 2.0 * c.H_v**2 / c.mu_f * nx2,
        "upper_growth": 2.0 * c.upper_lipschitz_sq * nx1 + 4.0 * c.H_v**2 * nx2 - nu1,
        "lower_descent": ip2 - 0.375 * c.mu_g * nx2 + c3 * nu1,
        "lower_growth": 2.0 * c.L_g**2 * nx2 + c4 * nu1 - nu2,
        "sector_form": -(
            mult.a * nx1 + mult.b * nx2 - mult.lambda1 * ip1 - mult.lambda2 * ip2
            + mult.lambda3 / 3.0 * nu1 + mult.lambda4 * nu2
        ),
    }
    blocks = blocks or transform_blocks(mult)
    xi, sigma = blocks.recover(x1, x2, u1, u2)
    margins["transformed_gain"] = math.sqrt(float(xi @ xi)) - math.sqrt(float(sigma @ sigma))
    margins["_xi_sq_minus_sigma_sq"] = float(xi @ xi) - float(sigma @ sigma)
    # (v) = weighted (i)-(iv) plus the slack of the coupling condition on |u1|^2.
    slack = 2.0 * mult.lambda3 / 3.0 - c3 * mult.lambda2 - c4 * mult.lambda4
    margins["_weighted_sum"] = (
        mult.lambda1 * margins["upper_descent"]
        + mult.lambda2 * margins["lower_descent"]
        + mult.lambda3 * margins["upper_growth"]
        + mult.lambda4 * margins["lower_growth"]
        + slack * nu1
    )
    margins["_scale"] = 1.0 + nx1 + nx2 + nu1 + nu2
    return margins


def sector_audit(
    oracle: BilevelOracle,
    constants: ProblemConstants,
    config: SolverConfig,
    traj: Trajectory,
    multipliers: Optional[Multipliers] = None,
    tol: float = AUDIT_TOL,
) -> AuditReport:
    """Evaluate every inequality at every logged step of a stride-1 trajectory.

    Violations are recorded, not raised: they falsify either the constants or
    the implementation.
    """
    _require_truth(oracle)
    steps = np.asarray(traj.steps)
    if len(steps) > 1 and np.any(np.diff(steps) != 1):
        raise InputError("the audit needs a trajectory logged with stride 1")
    if multipliers is None:
        try:
            multipliers = construct_multipliers(constants, config.alpha, config.beta)
        except MultiplierInfeasible as exc:
            raise CapabilityError(f"no feasible multipliers for these step sizes: {exc}") from None
    blocks = transform_blocks(multipliers)
    report = AuditReport({name: CheckResult(name) for name in CHECKS}, tolerance=tol, multipliers=multipliers)
    history = {name: np.empty(len(steps)) for name in CHECKS}
    gt = oracle.ground_truth

    for i, k in enumerate(steps):
        state = state_transform(oracle, config, traj.omega[i], traj.v[i])
        margins = state_margins(state, constants, config, multipliers, blocks)
        for name in CHECKS:
            report.checks[name].update(int(k), margins[name], tol)
            history[name][i] = margins[name]
        scale = margins["_scale"]
        report.max_weighted_sum_error = max(
            report.max_weighted_sum_error, abs(margins["sector_form"] - margins["_weighted_sum"]) / scale
        )
        report.max_transform_error = max(
            report.max_transform_error, abs(margins["sector_form"] - margins["_xi_sq_minus_sigma_sq"]) / scale
        )
        if margins["sector_form"] >= -tol and margins["transformed_gain"] < -tol:
            report.implication_failures += 1

        dyn = state.dynamics_residual
        if i + 1 < len(steps):
            # The logged successor must match the shifted compact dynamics.
            w_next, v_next = traj.omega[i + 1], traj.v[i + 1]
            logged = np.concatenate([w_next - gt.omega_star, v_next - gt.v_star(w_next)])
            predicted = np.concatenate([state.x1 - config.alpha * state.u1, state.x2 - config.beta * state.u2])
            dyn = max(dyn, float(np.max(np.abs(logged - predicted))))
        report.max_dynamics_residual = max(report.max_dynamics_residual, dyn)
    report.steps_audited = len(steps)
    report.margins = history
    return report
