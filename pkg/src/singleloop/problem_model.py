"""Bilevel problem oracles, assumption constants and sampled validation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputError
from .numerics import as_vector, spectral_norm

Vector = np.ndarray
GradFn = Callable[[Vector, Vector], Vector]
HessFn = Callable[[Vector, Vector], np.ndarray]


@dataclass(frozen=True)
class GroundTruth:
    v_star: Callable[[Vector], Vector]
    omega_star: Vector
    f_star: Optional[Callable[[Vector], float]] = None


@dataclass(frozen=True)
class BilevelOracle:
    """Derivative callbacks for ``min_w f(w, v*(w))`` with ``v*(w) = argmin_v g(w, v)``.

    ``hess_g_omega_v`` returns the ``m x n`` block of mixed second derivatives.
    Callbacks must be pure so that several runs can share one oracle.
    """

    m: int
    n: int
    grad_f_omega: GradFn
    grad_f_v: GradFn
    grad_g_v: GradFn
    hess_g_vv: HessFn
    hess_g_omega_v: HessFn
    ground_truth: Optional[GroundTruth] = None

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise InputError(f"dimensions must be positive, got m={self.m}, n={self.n}")

    @property
    def has_ground_truth(self) -> bool:
        return self.ground_truth is not None

    def check_point(self, omega, v) -> tuple[Vector, Vector]:
        return as_vector(omega, self.m, "omega"), as_vector(v, self.n, "v")


@dataclass(frozen=True)
class ProblemConstants:
    """Constants of the standing assumptions.

    ``mu_f``: strong convexity of the reduced upper objective; ``mu_g``/``L_g``:
    strong convexity and smoothness of the lower objective in ``v``;
    ``H_omega``/``H_v``: Lipschitz constants of the approximated gradient;
    ``H``: bound on the mixed Hessian.
    """

    mu_f: float
    mu_g: float
    L_g: float
    H_omega: float
    H_v: float
    H: float

    def __post_init__(self):
        for name in ("mu_f", "mu_g", "L_g", "H_omega"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InputError(f"{name} must be finite and positive, got {value}")
        for name in ("H_v", "H"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InputError(f"{name} must be finite and nonnegative, got {value}")
        if self.mu_g > self.L_g * (1 + 1e-12):
            raise InputError(f"mu_g={self.mu_g} exceeds L_g={self.L_g}")

    @property
    def upper_lipschitz_sq(self) -> float:
        """``H_omega^2 + 2 H_v^2 H^2 / mu_g^2``, which recurs in the rate analysis."""
        return self.H_omega**2 + 2.0 * self.H_v**2 * self.H**2 / self.mu_g**2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemConstants":
        return cls(**{k: float(data[k]) for k in ("mu_f", "mu_g", "L_g", "H_omega", "H_v", "H")})


ASSUMPTIONS = (
    "strong_convexity_g",
    "smoothness_g",
    "lipschitz_omega",
    "lipschitz_v",
    "cross_hessian_bound",
    "strong_convexity_f_star",
)


@dataclass
class AssumptionCheck:
    name: str
    passed: bool = True
    worst_ratio: float = math.inf
    worst_sample: Optional[int] = None
    checked: int = 0
    skipped: bool = False

    def record(self, index: int, ratio: float, rtol: float):
        self.checked += 1
        if ratio < self.worst_ratio:
            self.worst_ratio = ratio
            self.worst_sample = index
        if ratio < 1.0 - rtol:
            self.passed = False


@dataclass
class ValidationReport:
    """Outcome of :func:`validate_constants`.

    ``worst_ratio`` is normalised so that values below one falsify the claimed
    constant (observed/claimed for lower bounds, claimed/observed for upper
    bounds); pairs with no displacement are vacuous and leave it at ``inf``.
    """

    checks: dict[str, AssumptionCheck]
    per_sample: list[dict[str, bool]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failed(self) -> list[str]:
        return [name for name, c in self.checks.items() if not c.passed]


def _lower_ratio(observed: float, claimed: float) -> float:
    if claimed <= 0:
        return math.inf
    return observed / claimed


def _upper_ratio(observed: float, claimed: float) -> float:
    if observed <= 0:
        return math.inf
    return claimed / observed


def validate_constants(
    oracle: BilevelOracle,
    constants: ProblemConstants,
    samples: Sequence[tuple],
    approx_grad: Callable[[Vector, Vector], Vector],
    rtol: float = 1e-9,
) -> ValidationReport:
    """Falsification test of the assumption constants on sampled point pairs.

    Each sample is ``(omega, v, omega2, v2)``. Strong convexity of ``g`` is
    tested in gradient-monotone form, the Lipschitz bounds of the approximated
    gradient move one argument at a time, and the mixed-Hessian bound is
    evaluated at both points of the pair. ``mu_f`` is only tested when the
    oracle carries ground truth, using ``approx_grad(w, v*(w))`` as the
    reduced gradient.
    """
    if len(samples) == 0:
        raise InputError("at least one sample pair is required")
    checks = {name: AssumptionCheck(name) for name in ASSUMPTIONS}
    gt = oracle.ground_truth
    if gt is None or gt.f_star is None:
        checks["strong_convexity_f_star"].skipped = True
    report = ValidationReport(checks)

    for idx, sample in enumerate(samples):
        if len(sample) != 4:
            raise InputError(f"sample {idx} must be (omega, v, omega2, v2)")
        w, v = oracle.check_point(sample[0], sample[1])
        w2, v2 = oracle.check_point(sample[2], sample[3])
        row: dict[str, bool] = {}

        def record(name: str, ratio: float):
            checks[name].record(idx, ratio, rtol)
            row[name] = ratio >= 1.0 - rtol

        dv = v - v2
        dv_sq = float(dv @ dv)
        if dv_sq > 0:
            dg = oracle.grad_g_v(w, v) - oracle.grad_g_v(w, v2)
            record("strong_convexity_g", _lower_ratio(float(dg @ dv) / dv_sq, constants.mu_g))
            record("smoothness_g", _upper_ratio(float(np.linalg.norm(dg)) / math.sqrt(dv_sq), constants.L_g))
            diff = approx_grad(w, v) - approx_grad(w, v2)
            record("lipschitz_v", _upper_ratio(float(np.linalg.norm(diff)) / math.sqrt(dv_sq), constants.H_v))

        dw = w - w2
        dw_sq = float(dw @ dw)
        if dw_sq > 0:
            diff = approx_grad(w, v) - approx_grad(w2, v)
            record("lipschitz_omega", _upper_ratio(float(np.linalg.norm(diff)) / math.sqrt(dw_sq), constants.H_omega))
            if not checks["strong_convexity_f_star"].skipped:
                gf = approx_grad(w, gt.v_star(w)) - approx_grad(w2, gt.v_star(w2))
                record("strong_convexity_f_star", _lower_ratio(float(gf @ dw) / dw_sq, constants.mu_f))

        cross = max(
            spectral_norm(oracle.hess_g_omega_v(w, v)),
            spectral_norm(oracle.hess_g_omega_v(w2, v2)),
        )
        record("cross_hessian_bound", _upper_ratio(cross, constants.H))
        report.per_sample.append(row)
    return report
