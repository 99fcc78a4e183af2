"""Coupled-quadratic bilevel instances with closed-form ground truth.

    f(w, v) = 1/2 w'Aw + 1/2 (v - d)'B(v - d)
    g(w, v) = 1/2 (v - Cw)'Q(v - Cw)

so ``v*(w) = Cw`` and every assumption constant is an eigenvalue or a
spectral norm of the data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .numerics import as_matrix, as_vector, spd_solve, spectral_norm, sym_eig_extremes
from .problem_model import BilevelOracle, GroundTruth, ProblemConstants

# The cross-Hessian bound is strict and the mixed Hessian is constant here.
H_SLACK = 1e-9


@dataclass(frozen=True)
class QuadraticInstance:
    A: np.ndarray  # m x m, SPD
    B: np.ndarray  # n x n, SPD
    C: np.ndarray  # n x m
    Q: np.ndarray  # n x n, SPD
    d: np.ndarray  # n

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.A, dtype=float)).shape[0]
        n = np.atleast_2d(np.asarray(self.B, dtype=float)).shape[0]
        object.__setattr__(self, "A", as_matrix(self.A, m, m, "A"))
        object.__setattr__(self, "B", as_matrix(self.B, n, n, "B"))
        object.__setattr__(self, "C", as_matrix(self.C, n, m, "C"))
        object.__setattr__(self, "Q", as_matrix(self.Q, n, n, "Q"))
        object.__setattr__(self, "d", as_vector(self.d, n, "d"))
        for arr in (self.A, self.B, self.C, self.Q, self.d):
            arr.setflags(write=False)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def f(self, omega, v) -> float:
        r = v - self.d
        return 0.5 * float(omega @ self.A @ omega) + 0.5 * float(r @ self.B @ r)

    def g(self, omega, v) -> float:
        r = v - self.C @ omega
        return 0.5 * float(r @ self.Q @ r)

    def f_star(self, omega) -> float:
        omega = np.asarray(omega, dtype=float)
        return self.f(omega, self.C @ omega)

    def reduced_hessian(self) -> np.ndarray:
        return self.A + self.C.T @ self.B @ self.C

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "Q": self.Q.tolist(),
            "d": self.d.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuadraticInstance":
        try:
            m, n = int(data["m"]), int(data["n"])
            inst = cls(
                A=as_matrix(data["A"], m, m, "A"),
                B=as_matrix(data["B"], n, n, "B"),
                C=as_matrix(data["C"], n, m, "C"),
                Q=as_matrix(data["Q"], n, n, "Q"),
                d=as_vector(data["d"], n, "d"),
            )
        except KeyError as exc:
            raise InputError(f"instance is missing field {exc.args[0]!r}") from None
        return inst


def load_instance(path) -> QuadraticInstance:
    with open(path) as fh:
        return QuadraticInstance.from_dict(json.load(fh))


def save_instance(inst: QuadraticInstance, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(inst.to_dict(), indent=2))
    return path


def ref1() -> QuadraticInstance:
    """Scalar coupled instance: ``w* = 2``, ``v*(w) = w``."""
    return QuadraticInstance(A=[[1.0]], B=[[1.0]], C=[[1.0]], Q=[[2.0]], d=[4.0])


def ref0() -> QuadraticInstance:
    """Scalar decoupled instance (``C = 0``)."""
    return QuadraticInstance(A=[[1.0]], B=[[1.0]], C=[[0.0]], Q=[[1.0]], d=[0.0])


NAMED_INSTANCES = {"REF0": ref0, "REF1": ref1}


def _rotated_spd(rng: np.random.Generator, size: int, cond: float) -> np.ndarray:
    eigs = np.geomspace(1.0, cond, size) if size > 1 else np.ones(1)
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    q = q * np.sign(np.diag(r))
    mat = (q * eigs) @ q.T
    return 0.5 * (mat + mat.T)


def make_instance(m: int, n: int, seed: int, cond_target: float = 10.0, coupling: float | None = None) -> QuadraticInstance:
    """Seeded random instance.

    ``A``, ``B`` and ``Q`` are rotated diagonal matrices whose eigenvalues are
    spaced geometrically in ``[1, cond_target]``; ``C`` and ``d`` are uniform
    in ``[-1, 1]``. When ``coupling`` is given, ``C`` is rescaled to that
    spectral norm, which keeps the certified step sizes usable at desk scale.
    """
    if m < 1 or n < 1:
        raise InputError("m and n must be at least 1")
    if not cond_target >= 1:
        raise InputError("cond_target must be >= 1")
    rng = np.random.default_rng(seed)
    A = _rotated_spd(rng, m, cond_target)
    B = _rotated_spd(rng, n, cond_target)
    Q = _rotated_spd(rng, n, cond_target)
    C = rng.uniform(-1.0, 1.0, size=(n, m))
    d = rng.uniform(-1.0, 1.0, size=n)
    if coupling is not None:
        if coupling < 0:
            raise InputError("coupling must be nonnegative")
        norm = spectral_norm(C)
        C = C * (coupling / norm) if norm > 0 else C
    return QuadraticInstance(A=A, B=B, C=C, Q=Q, d=d)


def derive_constants(inst: QuadraticInstance) -> ProblemConstants:
    mu_g, L_g = sym_eig_extremes(inst.Q)
    if mu_g <= 0:
        raise InputError("Q is not positive definite")
    mu_f, _ = sym_eig_extremes(inst.reduced_hessian())
    return ProblemConstants(
        mu_f=mu_f,
        mu_g=mu_g,
        L_g=L_g,
        H_omega=spectral_norm(inst.A),
        H_v=spectral_norm(inst.C.T @ inst.B),
        H=spectral_norm(inst.C.T @ inst.Q) * (1.0 + H_SLACK),
    )


def ground_truth(inst: QuadraticInstance) -> GroundTruth:
    C = inst.C
    omega_star = spd_solve(inst.reduced_hessian(), C.T @ inst.B @ inst.d)
    omega_star.setflags(write=False)

    def v_star(omega):
        return C @ omega

    return GroundTruth(v_star=v_star, omega_star=omega_star, f_star=inst.f_star)


def as_oracle(inst: QuadraticInstance) -> BilevelOracle:
    A, B, C, Q, d = inst.A, inst.B, inst.C, inst.Q, inst.d
    cross = -C.T @ Q
    cross.setflags(write=False)

    return BilevelOracle(
        m=inst.m,
        n=inst.n,
        grad_f_omega=lambda w, v: A @ w,
        grad_f_v=lambda w, v: B @ (v - d),
        grad_g_v=lambda w, v: Q @ (v - C @ w),
        hess_g_vv=lambda w, v: Q,
        hess_g_omega_v=lambda w, v: cross,
        ground_truth=ground_truth(inst),
    )
