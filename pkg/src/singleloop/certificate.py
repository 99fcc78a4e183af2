"""Step-size bounds, certified linear rate and the small-gain verdict.

The loop ``x_{k+1} = x_k - diag(alpha I, beta I) u_k`` is split into a
linear plant and a memoryless gradient nonlinearity. Four multipliers weight
the sector inequalities of the nonlinearity into one quadratic form ``N0``;
the block-triangular map ``M`` normalises it to ``diag(-I, I)`` so that the
transformed nonlinearity has gain at most one. The transformed plant is
diagonal with first-order channels whose rho-scaled H-infinity norms decide
the verdict.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    MultiplierInfeasible,
    StepSizeInfeasible,
    TransformInfeasible,
    UnstableScaledSystem,
)
from .problem_model import ProblemConstants

# "Strictly inside" the step-size region means at most (1 - STRICT_MARGIN) * bound.
STRICT_MARGIN = 1e-12
TRANSFORM_TOL = 1e-9
BISECT_TOL = 1e-6
BISECT_MAX_ITERS = 60

ALPHA_BOUND = "alpha_bound"
BETA_BOUND = "beta_bound"
RATIO_BOUND = "ratio_bound"
A_POSITIVE = "a_positive"
B_POSITIVE = "b_positive"
COND_OMEGA = "cond_omega_sector"
COND_V = "cond_v_sector"
COND_COUPLING = "cond_coupling"
RHO_RANGE = "rho_range"
TRANSFORM = "transform"
SCALED_STABILITY = "scaled_stability"
SMALL_GAIN = "small_gain"


def max_step_sizes(constants: ProblemConstants) -> tuple[float, float, float]:
    """Return ``(alpha_max, beta_max, ratio_max)``; ratio_max is ``inf`` when ``H_v * H == 0``."""
    c = constants
    alpha_max = min(c.mu_f / (8.0 * c.upper_lipschitz_sq), 1.0 / (24.0 * c.mu_f))
    beta_max = min(c.mu_g / (8.0 * c.L_g**2), 1.0 / (4.0 * c.mu_g))
    coupling = c.H_v**2 * c.H**2
    ratio_max = math.inf if coupling == 0 else 2.0 * c.mu_f * c.mu_g**4 / (81.0 * coupling)
    return alpha_max, beta_max, ratio_max


def step_size_violations(constants: ProblemConstants, alpha: float, beta: float) -> list[str]:
    alpha_max, beta_max, ratio_max = max_step_sizes(constants)
    keep = 1.0 - STRICT_MARGIN
    violated = []
    if not (0 < alpha <= keep * alpha_max):
        violated.append(ALPHA_BOUND)
    if not (0 < beta <= keep * beta_max):
        violated.append(BETA_BOUND)
    if beta > 0 and not (alpha / beta**2 <= keep * ratio_max):
        violated.append(RATIO_BOUND)
    return violated


def rate_terms(constants: ProblemConstants, alpha: float, beta: float) -> tuple[float, float]:
    """Upper and lower channel rates ``sqrt(1 - 4 l3 a / (3 l1^2))`` and
    ``sqrt(1 - 4 l4 b / l2^2)`` in closed form.

    The lower factor is ``1 - 4 L_g^2 beta / mu_g``, which the beta bound keeps
    above one half, so both terms lie in (0, 1) inside the admissible region.
    """
    c = constants
    upper = 1.0 - 0.75 * c.mu_f * alpha * (1.0 - 8.0 * c.upper_lipschitz_sq * alpha / c.mu_f)
    lower = 1.0 - 0.5 * c.mu_g * beta * (1.0 - 4.0 * c.L_g**2 * beta / c.mu_g)
    return math.sqrt(upper), math.sqrt(lower)


def certified_rate(constants: ProblemConstants, alpha: float, beta: float) -> float:
    """Linear rate guaranteed for step sizes strictly inside the admissible region."""
    violated = step_size_violations(constants, alpha, beta)
    if violated:
        raise StepSizeInfeasible(violated)
    return max(rate_terms(constants, alpha, beta))


@dataclass(frozen=True)
class Multipliers:
    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float
    a: float
    b: float

    @staticmethod
    def weights(constants: ProblemConstants, lambda1, lambda2, lambda3, lambda4) -> tuple[float, float]:
        c = constants
        a = 0.375 * c.mu_f * lambda1 - 2.0 * c.upper_lipschitz_sq * lambda3
        b = (
            -2.0 * c.H_v**2 / c.mu_f * lambda1
            + 0.375 * c.mu_g * lambda2
            - 4.0 * c.H_v**2 * lambda3
            - 2.0 * c.L_g**2 * lambda4
        )
        return a, b

    @classmethod
    def from_lambdas(cls, constants: ProblemConstants, lambda1, lambda2, lambda3, lambda4) -> "Multipliers":
        a, b = cls.weights(constants, lambda1, lambda2, lambda3, lambda4)
        return cls(lambda1, lambda2, lambda3, lambda4, a, b)

    def consistent_with(self, constants: ProblemConstants, rtol: float = 1e-12) -> bool:
        a, b = self.weights(constants, self.lambda1, self.lambda2, self.lambda3, self.lambda4)
        scale = max(abs(self.lambda1), abs(self.lambda2), 1e-300)
        return abs(a - self.a) <= rtol * scale * 10 and abs(b - self.b) <= rtol * scale * 10

    def scaled(self, factor: float) -> "Multipliers":
        return Multipliers(*(factor * x for x in (self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.a, self.b)))

    def coupling_coefficients(self, constants: ProblemConstants, alpha: float, beta: float) -> tuple[float, float]:
        """Coefficients of ``|u1|^2`` in the two lower-level sector bounds."""
        c = constants
        base = 2.0 * alpha**2 * c.H**2 / (beta**2 * c.mu_g**2)
        return base / c.mu_g, base

    def violations(self, constants: ProblemConstants, alpha: float, beta: float) -> list[str]:
        l1, l2, l3, l4, a, b = self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.a, self.b
        c3, c4 = self.coupling_coefficients(constants, alpha, beta)
        violated = []
        if not a > 0:
            violated.append(A_POSITIVE)
        if not b > 0:
            violated.append(B_POSITIVE)
        if not 3.0 * l1**2 / (4.0 * l3) > a:
            violated.append(COND_OMEGA)
        if not l2**2 / (4.0 * l4) > b:
            violated.append(COND_V)
        if not 2.0 * l3 / 3.0 >= c3 * l2 + c4 * l4:
            violated.append(COND_COUPLING)
        return violated

    def to_dict(self) -> dict:
        return asdict(self)


def construct_multipliers(constants: ProblemConstants, alpha: float, beta: float, scale: float = 1.0) -> Multipliers:
    """Multipliers tied to the step sizes by ``alpha = 2 l3 / (3 l1)`` and
    ``beta = 2 l4 / l2``, with ``l2 = scale``.

    ``l1 / l2 = (mu_g / 8) / (2 H_v^2 / mu_f + 6 H_v^2 alpha)`` makes
    ``b / l2 = mu_g / 4 - L_g^2 beta``; without coupling (``H_v = 0``) the
    ratio is unconstrained and set to one.
    """
    c = constants
    lambda2 = float(scale)
    lambda4 = beta * lambda2 / 2.0
    if c.H_v > 0:
        lambda1 = lambda2 * (c.mu_g / 8.0) / (2.0 * c.H_v**2 / c.mu_f + 6.0 * c.H_v**2 * alpha)
    else:
        lambda1 = lambda2
    lambda3 = 1.5 * alpha * lambda1
    mult = Multipliers.from_lambdas(c, lambda1, lambda2, lambda3, lambda4)
    violated = mult.violations(c, alpha, beta)
    if violated:
        raise MultiplierInfeasible(violated)
    return mult


@dataclass(frozen=True)
class TransformBlocks:
    """Scalar coefficients of the diagonal blocks of ``M = [[M1, 0], [M2, M3]]``
    for the upper (``w``) and lower (``v``) channels."""

    m1_w: float
    m1_v: float
    m2_w: float
    m2_v: float
    m3_w: float
    m3_v: float

    def recover(self, x1, x2, u1, u2):
        """Return ``(xi, sigma)`` with ``(x, u) = M (xi, sigma)``."""
        xi1 = x1 / self.m1_w
        xi2 = x2 / self.m1_v
        sigma1 = (u1 - self.m2_w * xi1) / self.m3_w
        sigma2 = (u2 - self.m2_v * xi2) / self.m3_v
        return np.concatenate([xi1, xi2]), np.concatenate([sigma1, sigma2])


def transform_blocks(mult: Multipliers) -> TransformBlocks:
    l1, l2, l3, l4 = mult.lambda1, mult.lambda2, mult.lambda3, mult.lambda4
    if not (l3 > 0 and l4 > 0):
        raise TransformInfeasible("lambda3 and lambda4 must be positive")
    gap_w = 3.0 * l1**2 / (4.0 * l3) - mult.a
    gap_v = l2**2 / (4.0 * l4) - mult.b
    if not (gap_w > 0 and gap_v > 0):
        raise TransformInfeasible(f"square roots of nonpositive values ({gap_w:g}, {gap_v:g})")
    m1_w = 1.0 / math.sqrt(gap_w)
    m1_v = 1.0 / math.sqrt(gap_v)
    return TransformBlocks(
        m1_w=m1_w,
        m1_v=m1_v,
        m2_w=1.5 * l1 / l3 * m1_w,
        m2_v=0.5 * l2 / l4 * m1_v,
        m3_w=math.sqrt(3.0 / l3),
        m3_v=1.0 / math.sqrt(l4),
    )


def sector_matrix(mult: Multipliers, m: int, n: int) -> np.ndarray:
    """``N0`` in the ordering ``(x1, x2, u1, u2)``."""
    diag = np.concatenate([
        np.full(m, mult.a), np.full(n, mult.b), np.full(m, mult.lambda3 / 3.0), np.full(n, mult.lambda4)
    ])
    off = np.concatenate([np.full(m, -mult.lambda1 / 2.0), np.full(n, -mult.lambda2 / 2.0)])
    N0 = np.diag(diag)
    k = m + n
    N0[np.arange(k), k + np.arange(k)] = off
    N0[k + np.arange(k), np.arange(k)] = off
    return N0


def transform_residual(N0: np.ndarray, M: np.ndarray, m: int, n: int) -> float:
    target = np.diag(np.concatenate([-np.ones(m + n), np.ones(m + n)]))
    return float(np.max(np.abs(M.T @ N0 @ M - target)))


def build_transform(mult: Multipliers, m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Assemble ``N0`` and ``M`` and verify ``M' N0 M = diag(-I, I)``."""
    blk = transform_blocks(mult)
    k = m + n
    M = np.zeros((2 * k, 2 * k))
    idx = np.arange(k)
    M[idx, idx] = np.concatenate([np.full(m, blk.m1_w), np.full(n, blk.m1_v)])
    M[k + idx, idx] = np.concatenate([np.full(m, blk.m2_w), np.full(n, blk.m2_v)])
    M[k + idx, k + idx] = np.concatenate([np.full(m, blk.m3_w), np.full(n, blk.m3_v)])
    N0 = sector_matrix(mult, m, n)
    residual = transform_residual(N0, M, m, n)
    if residual > TRANSFORM_TOL:
        raise TransformInfeasible(f"M'N0M deviates from diag(-I, I) by {residual:.3e}")
    return N0, M


def hinf_first_order(gain_c: float, pole_p: float, rho: float) -> float:
    """H-infinity norm of ``c / (rho z - p)``: ``|c| / (rho - |p|)``."""
    if not (0 < rho <= 1):
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if abs(pole_p) >= rho:
        raise UnstableScaledSystem(f"|pole| = {abs(pole_p):g} >= rho = {rho:g}")
    return abs(gain_c) / (rho - abs(pole_p))


def plant_channels(mult: Multipliers, alpha: float, beta: float) -> dict[str, tuple[float, float]]:
    """``(gain, pole)`` of the transformed plant's upper and lower channels."""
    l1, l2, l3, l4, a, b = mult.lambda1, mult.lambda2, mult.lambda3, mult.lambda4, mult.a, mult.b
    rad_w = 9.0 * l1**2 / (4.0 * l3**2) - 3.0 * a / l3
    rad_v = l2**2 / (4.0 * l4**2) - b / l4
    if not (rad_w > 0 and rad_v > 0):
        raise TransformInfeasible("transformed plant gains are not real")
    return {
        "omega": (alpha * math.sqrt(rad_w), 1.0 - 1.5 * l1 * alpha / l3),
        "v": (beta * math.sqrt(rad_v), 1.0 - 0.5 * l2 * beta / l4),
    }


@dataclass
class RateCertificate:
    alpha: float
    beta: float
    rho: Optional[float]
    feasible: bool
    violated_conditions: list[str] = field(default_factory=list)
    multipliers: Optional[Multipliers] = None
    gain_P: Optional[float] = None
    gain_K_bound: float = 1.0
    channel_norms: dict[str, float] = field(default_factory=dict)
    rate_bound: Optional[float] = None
    step_bounds: Optional[dict[str, float]] = None
    constants: Optional[ProblemConstants] = None

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "rho": self.rho,
            "rate_bound": self.rate_bound,
            "feasible": self.feasible,
            "violated_conditions": list(self.violated_conditions),
            "multipliers": self.multipliers.to_dict() if self.multipliers else None,
            "gain_P": self.gain_P,
            "gain_K_bound": self.gain_K_bound,
            "channel_norms": dict(self.channel_norms),
            "step_bounds": dict(self.step_bounds) if self.step_bounds else None,
            "constants": self.constants.to_dict() if self.constants else None,
        }


def small_gain_verdict(
    constants: ProblemConstants, alpha: float, beta: float, rho: float, scale: float = 1.0
) -> RateCertificate:
    """Check ``||P'_rho|| * ||K'|| < 1`` for the constructed multipliers.

    Never raises for finite inputs; failures are listed in
    ``violated_conditions`` of an infeasible certificate.
    """
    alpha_max, beta_max, ratio_max = max_step_sizes(constants)
    cert = RateCertificate(
        alpha=alpha,
        beta=beta,
        rho=rho,
        feasible=False,
        step_bounds={"alpha_max": alpha_max, "beta_max": beta_max, "ratio_max": ratio_max},
        constants=constants,
    )
    violated = cert.violated_conditions
    if not (0 < rho < 1):
        violated.append(RHO_RANGE)
    violated.extend(step_size_violations(constants, alpha, beta))
    if violated:
        return cert
    try:
        mult = construct_multipliers(constants, alpha, beta, scale=scale)
    except MultiplierInfeasible as exc:
        violated.extend(exc.violated)
        return cert
    cert.multipliers = mult
    try:
        build_transform(mult, 1, 1)
        channels = plant_channels(mult, alpha, beta)
    except TransformInfeasible:
        violated.append(TRANSFORM)
        return cert
    try:
        for name, (gain, pole) in channels.items():
            cert.channel_norms[name] = hinf_first_order(gain, pole, rho)
    except UnstableScaledSystem:
        violated.append(SCALED_STABILITY)
        return cert
    cert.gain_P = max(cert.channel_norms.values())
    if cert.gain_P * cert.gain_K_bound < 1.0:
        cert.feasible = True
    else:
        violated.append(SMALL_GAIN)
    return cert


def certify(constants: ProblemConstants, alpha: float, beta: float) -> RateCertificate:
    """Certificate at a rate just above the closed-form bound.

    At exactly the bound the dominant channel norm equals one, so the verdict
    is evaluated at ``bound + 1e-6 * (1 - bound)``.
    """
    try:
        bound = certified_rate(constants, alpha, beta)
    except StepSizeInfeasible as exc:
        cert = small_gain_verdict(constants, alpha, beta, rho=0.5)
        cert.rho = None
        cert.violated_conditions = list(exc.violated)
        return cert
    rho = min(bound + max(1e-6 * (1.0 - bound), 1e-15), math.nextafter(1.0, 0.0))
    cert = small_gain_verdict(constants, alpha, beta, rho)
    cert.rate_bound = bound
    return cert


def bisect_min_rho(
    constants: ProblemConstants,
    alpha: float,
    beta: float,
    tol: float = BISECT_TOL,
    max_iters: int = BISECT_MAX_ITERS,
    scale: float = 1.0,
) -> Optional[float]:
    """Smallest rho (within ``tol``, from above) at which the verdict is feasible.

    Returns ``None`` when even ``rho`` just below one is not certifiable.
    """
    hi = math.nextafter(1.0, 0.0)
    if not small_gain_verdict(constants, alpha, beta, hi, scale).feasible:
        return None
    lo = 0.0
    for _ in range(max_iters):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if small_gain_verdict(constants, alpha, beta, mid, scale).feasible:
            hi = mid
        else:
            lo = mid
    return hi


def auto_step_sizes(constants: ProblemConstants, max_halvings: int = 200) -> tuple[float, float]:
    """Half of each bound, then halve ``alpha`` until the ratio bound holds strictly."""
    alpha_max, beta_max, ratio_max = max_step_sizes(constants)
    alpha, beta = alpha_max / 2.0, beta_max / 2.0
    for _ in range(max_halvings):
        if alpha / beta**2 <= (1.0 - STRICT_MARGIN) * ratio_max:
            return alpha, beta
        alpha /= 2.0
    raise StepSizeInfeasible([RATIO_BOUND], "could not satisfy the ratio bound by halving alpha")


def with_constants(constants: ProblemConstants, **overrides) -> ProblemConstants:
    return replace(constants, **overrides)
