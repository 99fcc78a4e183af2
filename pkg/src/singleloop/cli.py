"""Command-line front end.

    singleloop certify --instance REF1 --alpha 0.0007 --beta 0.06
    singleloop solve   --gen 5,3,42,10 --auto --iters 20000 --out runs/a
    singleloop compare --instance inst.json --target 1e-6
    singleloop audit   --instance REF1 --alpha 0.0007 --beta 0.06
    singleloop gen     --gen 5,3,42,10 --out runs/a

Exit status: 0 success, 1 bad input or I/O, 2 infeasible step sizes or
refused, 3 diverged, 4 audit found a violated inequality.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import certificate as cert_mod
from .audit import sector_audit
from .errors import DivergenceDetected, InnerStall, InsufficientDecay, SingleLoopError, StepSizeInfeasible
from .problem_model import ProblemConstants
from .reports import write_json, write_trajectory_csv
from .solver import SolverConfig, double_loop_run, fit_rate, single_loop_run
from .testbed import NAMED_INSTANCES, QuadraticInstance, as_oracle, derive_constants, load_instance, make_instance, save_instance

log = logging.getLogger("singleloop")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_DIVERGED = 3
EXIT_VIOLATION = 4

AUDIT_MAX_STEPS = 5000
DEFAULT_PASS_TOL = 1e-3


@dataclass
class ExperimentConfig:
    instance: Optional[str] = None
    gen: Optional[tuple] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    auto: bool = False
    iters: int = 20_000
    target: float = 1e-6
    out: Path = Path("out")
    force: bool = False
    seed: Optional[int] = None
    start: str = "zero"
    stride: int = 1
    pass_tol: float = DEFAULT_PASS_TOL
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.alpha is None) != (self.beta is None):
            raise SingleLoopError("give both --alpha and --beta, or neither (auto)")
        if self.alpha is not None and not (self.alpha > 0 and self.beta > 0):
            raise SingleLoopError("explicit step sizes must be positive")
        if self.alpha is None:
            self.auto = True
        if self.iters < 1:
            raise SingleLoopError("--iters must be at least 1")
        self.out = Path(self.out)


def parse_gen(text: str) -> tuple:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) not in (4, 5):
        raise argparse.ArgumentTypeError("--gen expects m,n,seed,cond[,coupling]")
    try:
        m, n, seed = int(parts[0]), int(parts[1]), int(parts[2])
        cond = float(parts[3])
        coupling = float(parts[4]) if len(parts) == 5 else None
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return (m, n, seed, cond, coupling)


def parse_override(text: str) -> tuple[str, float]:
    name, _, value = text.partition("=")
    if name not in ProblemConstants.__dataclass_fields__ or not value:
        raise argparse.ArgumentTypeError(f"expected CONSTANT=VALUE with a known constant, got {text!r}")
    return name, float(value)


def load_problem(cfg: ExperimentConfig) -> tuple[QuadraticInstance, dict]:
    if cfg.gen is not None:
        m, n, seed, cond, coupling = cfg.gen
        return make_instance(m, n, seed, cond, coupling), {"gen": [m, n, seed, cond, coupling]}
    if cfg.instance is None:
        raise SingleLoopError("an instance is required: --instance PATH|REF0|REF1 or --gen m,n,seed,cond")
    path = Path(cfg.instance)
    if not path.exists() and cfg.instance.upper() in NAMED_INSTANCES:
        return NAMED_INSTANCES[cfg.instance.upper()](), {"named": cfg.instance.upper()}
    try:
        return load_instance(path), {"path": str(path)}
    except OSError as exc:
        raise SingleLoopError(f"cannot read instance file {path}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise SingleLoopError(f"invalid instance file {path}: {exc}") from None


def problem_constants(inst: QuadraticInstance, cfg: ExperimentConfig) -> ProblemConstants:
    constants = derive_constants(inst)
    if cfg.overrides:
        constants = cert_mod.with_constants(constants, **cfg.overrides)
    return constants


def step_sizes(constants: ProblemConstants, cfg: ExperimentConfig) -> tuple[float, float]:
    if cfg.auto:
        return cert_mod.auto_step_sizes(constants)
    return cfg.alpha, cfg.beta


def start_point(inst: QuadraticInstance, cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    if cfg.start == "optimum":
        gt = as_oracle(inst).ground_truth
        return gt.omega_star.copy(), gt.v_star(gt.omega_star)
    if cfg.start == "random":
        rng = np.random.default_rng(cfg.seed)
        return rng.uniform(-1, 1, inst.m), rng.uniform(-1, 1, inst.n)
    return np.zeros(inst.m), np.zeros(inst.n)


def _summary(cert) -> str:
    if cert.feasible:
        return (
            f"feasible: rho {cert.rate_bound:.6f} (alpha={cert.alpha:.6g}, beta={cert.beta:.6g}, "
            f"||P'||={cert.gain_P:.9f}, ||K'||<={cert.gain_K_bound:g})"
        )
    return f"infeasible: violated {', '.join(cert.violated_conditions)} (alpha={cert.alpha:.6g}, beta={cert.beta:.6g})"


def cmd_certify(cfg: ExperimentConfig) -> tuple[int, dict]:
    inst, source = load_problem(cfg)
    constants = problem_constants(inst, cfg)
    alpha, beta = step_sizes(constants, cfg)
    cert = cert_mod.certify(constants, alpha, beta)
    payload = {"instance": source, "step_mode": "auto" if cfg.auto else "explicit", **cert.to_dict()}
    write_json(cfg.out / "certificate.json", payload)
    print(_summary(cert))
    return (EXIT_OK if cert.feasible else EXIT_INFEASIBLE), payload


def cmd_solve(cfg: ExperimentConfig) -> tuple[int, dict]:
    inst, source = load_problem(cfg)
    constants = problem_constants(inst, cfg)
    alpha, beta = step_sizes(constants, cfg)
    cert = cert_mod.certify(constants, alpha, beta)
    if not cert.feasible and not cfg.force:
        print(_summary(cert) + "; use --force to run anyway", file=sys.stderr)
        return EXIT_INFEASIBLE, {"refused": True, "violated_conditions": cert.violated_conditions}
    oracle = as_oracle(inst)
    omega0, v0 = start_point(inst, cfg)
    config = SolverConfig(alpha=alpha, beta=beta, max_iters=cfg.iters, log_stride=cfg.stride)
    report = {
        "instance": source,
        "alpha": alpha,
        "beta": beta,
        "certified_rho": cert.rate_bound if cert.feasible else None,
        "diverged": False,
    }
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        traj = single_loop_run(oracle, config, omega0, v0)
    except DivergenceDetected as exc:
        traj = exc.trajectory
        report["diverged"] = True
        report["last_finite_step"] = exc.last_finite_step
        status = EXIT_DIVERGED
    report["wall_time"] = time.perf_counter() - t0
    report["stop_reason"] = traj.stop_reason
    report["iterations"] = traj.last_step
    report["upper_evals"] = traj.counters.upper
    report["lower_evals"] = traj.counters.lower
    report["hessian_solves"] = traj.counters.hessian_solves
    write_trajectory_csv(cfg.out / "trajectory.csv", traj)

    report["rho_hat"] = None
    report["pass"] = "n/a"
    if not report["diverged"]:
        try:
            rho_hat, window = fit_rate(traj)
        except InsufficientDecay as exc:
            report["fit_note"] = f"InsufficientDecay: {exc}"
        else:
            report["rho_hat"] = rho_hat
            report["fit_window"] = list(window)
            if report["certified_rho"] is not None:
                report["pass"] = rho_hat <= report["certified_rho"] + cfg.pass_tol
    report["pass_tol"] = cfg.pass_tol
    write_json(cfg.out / "report.json", report)
    rho_hat, rho = report["rho_hat"], report["certified_rho"]
    outcome = "diverged" if report["diverged"] else traj.stop_reason
    rho_hat_text = "n/a" if rho_hat is None else f"{rho_hat:.6f}"
    rho_text = "n/a" if rho is None else f"{rho:.6f}"
    print(f"{outcome} after {traj.last_step} steps; rho_hat={rho_hat_text} certified={rho_text} pass={report['pass']}")
    return status, report


def _method_summary(traj, target: float) -> dict:
    final_err = float(traj.omega_err[-1]) if traj.has_errors and len(traj) else math.nan
    summary = {
        "converged": bool(final_err <= target),
        "iterations": traj.last_step,
        "final_omega_err": final_err,
        "stop_reason": traj.stop_reason,
        "upper_evals": traj.counters.upper,
        "lower_evals": traj.counters.lower,
        "hessian_solves": traj.counters.hessian_solves,
    }
    if traj.inner_iters is not None:
        summary["inner_iterations"] = traj.counters.inner
    return summary


def cmd_compare(cfg: ExperimentConfig) -> tuple[int, dict]:
    inst, source = load_problem(cfg)
    constants = derive_constants(inst)
    alpha, beta = cert_mod.auto_step_sizes(constants)
    oracle = as_oracle(inst)
    omega0, v0 = start_point(inst, cfg)
    config = SolverConfig(
        alpha=alpha, beta=beta, max_iters=cfg.iters, log_stride=cfg.iters + 1, target_omega_err=cfg.target
    )
    report = {"instance": source, "target": cfg.target, "alpha": alpha, "beta": beta, "budget": cfg.iters, "partial": False}
    for name, run in (
        ("single_loop", lambda: single_loop_run(oracle, config, omega0, v0)),
        ("double_loop", lambda: double_loop_run(oracle, config, cfg.target / 10.0, omega0, v0)),
    ):
        try:
            traj = run()
            summary = _method_summary(traj, cfg.target)
        except (DivergenceDetected, InnerStall) as exc:
            summary = _method_summary(exc.trajectory, cfg.target) if exc.trajectory is not None and len(exc.trajectory) else {}
            summary.update({"converged": False, "error": f"{type(exc).__name__}: {exc}"})
        if not summary.get("converged"):
            report["partial"] = True
        report[name] = summary
    single, double = report["single_loop"], report["double_loop"]
    if single.get("lower_evals") and double.get("lower_evals") is not None:
        report["lower_eval_ratio"] = double["lower_evals"] / single["lower_evals"]
    write_json(cfg.out / "comparison.json", report)
    print(
        f"single-loop: {single.get('lower_evals')} lower evals, {single.get('hessian_solves')} Hessian solves; "
        f"double-loop: {double.get('lower_evals')} lower evals, {double.get('hessian_solves')} Hessian solves"
        + (" (partial)" if report["partial"] else "")
    )
    return (EXIT_OK if not report["partial"] else EXIT_DIVERGED), report


def cmd_audit(cfg: ExperimentConfig) -> tuple[int, dict]:
    inst, source = load_problem(cfg)
    constants = problem_constants(inst, cfg)
    alpha, beta = step_sizes(constants, cfg)
    cert = cert_mod.certify(constants, alpha, beta)
    if not cert.feasible:
        print(f"refusing to audit: {_summary(cert)}", file=sys.stderr)
        return EXIT_INFEASIBLE, {"refused": True, "violated_conditions": cert.violated_conditions}
    oracle = as_oracle(inst)
    omega0, v0 = start_point(inst, cfg)
    steps = min(cfg.iters, AUDIT_MAX_STEPS)
    config = SolverConfig(alpha=alpha, beta=beta, max_iters=steps - 1, log_stride=1)
    traj = single_loop_run(oracle, config, omega0, v0)
    report = sector_audit(oracle, constants, config, traj, multipliers=cert.multipliers)
    payload = {"instance": source, "alpha": alpha, "beta": beta, "constants": constants.to_dict(), **report.to_dict()}
    write_json(cfg.out / "audit.json", payload)
    for name, check in report.checks.items():
        where = "" if check.passed else f" (first violation at k={check.first_violation})"
        print(f"{name:18s} {'pass' if check.passed else 'FAIL'}  min margin {check.min_margin:.3e}{where}")
    return (EXIT_OK if report.passed else EXIT_VIOLATION), payload


def cmd_gen(cfg: ExperimentConfig) -> tuple[int, dict]:
    inst, source = load_problem(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = save_instance(inst, cfg.out / "instance.json")
    constants = derive_constants(inst)
    print(f"wrote {path} (m={inst.m}, n={inst.n})")
    return EXIT_OK, {"path": str(path), "constants": constants.to_dict(), **source}


COMMANDS = {
    "certify": cmd_certify,
    "solve": cmd_solve,
    "compare": cmd_compare,
    "audit": cmd_audit,
    "gen": cmd_gen,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="singleloop", description="Single-loop bilevel solver with small-gain rate certificates.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    src = parser.add_mutually_exclusive_group()
    src.add_argument("--instance", help="instance JSON file, or REF0/REF1")
    src.add_argument("--gen", type=parse_gen, metavar="m,n,seed,cond[,coupling]")
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--auto", action="store_true", help="derive step sizes from the certified bounds (default)")
    parser.add_argument("--iters", type=int, default=20_000)
    parser.add_argument("--target", type=float, default=1e-6)
    parser.add_argument("--out", type=Path, default=Path("out"))
    parser.add_argument("--force", action="store_true", help="run even if the step sizes are not certified")
    parser.add_argument("--seed", type=int, default=None, help="seed for --start random")
    parser.add_argument("--start", choices=("zero", "optimum", "random"), default="zero")
    parser.add_argument("--stride", type=int, default=1, help="trajectory log stride")
    parser.add_argument("--pass-tol", type=float, default=DEFAULT_PASS_TOL)
    parser.add_argument("--override", type=parse_override, action="append", default=[], metavar="CONST=VALUE")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.auto and (args.alpha is not None or args.beta is not None):
        print("error: --auto cannot be combined with --alpha/--beta", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg = ExperimentConfig(
            instance=args.instance,
            gen=args.gen,
            alpha=args.alpha,
            beta=args.beta,
            auto=args.auto,
            iters=args.iters,
            target=args.target,
            out=args.out,
            force=args.force,
            seed=args.seed,
            start=args.start,
            stride=args.stride,
            pass_tol=args.pass_tol,
            overrides=dict(args.override),
        )
        status, _ = COMMANDS[args.command](cfg)
    except StepSizeInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SingleLoopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return status


if __name__ == "__main__":
    sys.exit(main())
