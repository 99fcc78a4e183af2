"""Acceptance criteria, one test each. Every test prints a single verdict line."""

import json
import math
import time

import numpy as np
import pytest

from singleloop import certificate as cert
from singleloop import cli, testbed
from singleloop.audit import sector_audit
from singleloop.errors import DivergenceDetected, StepSizeInfeasible
from singleloop.numerics import finite_diff_grad
from singleloop.solver import SolverConfig, approx_gradient, fit_rate, single_loop_run

REF1_ALPHA, REF1_BETA = 7e-4, 0.06


@pytest.fixture
def verdict(capsys):
    def report(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {criterion:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return report


def test_01_ref1_rate_vs_certificate(ref1, ref1_constants, verdict):
    oracle = testbed.as_oracle(ref1)
    config = SolverConfig(alpha=REF1_ALPHA, beta=REF1_BETA, max_iters=20_000)
    single_loop_run(oracle, SolverConfig(alpha=REF1_ALPHA, beta=REF1_BETA, max_iters=100), np.zeros(1), np.zeros(1))
    t0 = time.perf_counter()
    traj = single_loop_run(oracle, config, np.zeros(1), np.zeros(1))
    elapsed = time.perf_counter() - t0
    rho = cert.certified_rate(ref1_constants, REF1_ALPHA, REF1_BETA)
    rho_hat, _ = fit_rate(traj)
    ok = abs(rho - 0.999479) < 5e-7 and abs(rho_hat - 0.9986) <= 1e-3 and rho_hat <= rho + 1e-3 and elapsed < 1.0
    verdict(1, ok, f"rho={rho:.6f} rho_hat={rho_hat:.6f} runtime={elapsed:.3f}s for 20000 steps")


def sweep_instance(s):
    rng = np.random.default_rng(1000 + s)
    m, n = (int(x) for x in rng.integers(1, 11, 2))
    return testbed.make_instance(m, n, s, 2.0, 0.1)


def test_02_soundness_sweep(verdict):
    t0 = time.perf_counter()
    worst = -math.inf
    failures = []
    for s in range(20):
        inst = sweep_instance(s)
        constants = testbed.derive_constants(inst)
        alpha, beta = cert.auto_step_sizes(constants)
        rho = cert.certified_rate(constants, alpha, beta)
        traj = single_loop_run(
            testbed.as_oracle(inst), SolverConfig(alpha=alpha, beta=beta, max_iters=20_000, log_stride=10),
            np.zeros(inst.m), np.zeros(inst.n),
        )
        rho_hat, _ = fit_rate(traj)
        worst = max(worst, rho_hat - rho)
        if rho_hat > rho + 1e-3:
            failures.append(s)
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 30.0
    verdict(2, ok, f"20 instances, max(rho_hat - rho)={worst:.3e}, failures={failures}, runtime={elapsed:.1f}s")


def test_03_convergence_to_ground_truth(ref1, verdict):
    traj = single_loop_run(
        testbed.as_oracle(ref1), SolverConfig(alpha=REF1_ALPHA, beta=REF1_BETA, max_iters=20_000), np.zeros(1), np.zeros(1)
    )
    w_err = np.abs(traj.omega[:, 0] - 2.0)
    v_err = np.abs(traj.v[:, 0] - 2.0)
    hit = np.nonzero((w_err <= 1e-8) & (v_err <= 1e-8))[0]
    ok = len(hit) > 0
    verdict(3, ok, f"|w-2|,|v-2| <= 1e-8 first at step {int(traj.steps[hit[0]]) if ok else 'never'}")


def test_04_hypergradient_equivalence(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for s in range(50):
        m, n = (int(x) for x in rng.integers(1, 9, 2))
        inst = testbed.make_instance(m, n, 500 + s, float(rng.uniform(1, 20)))
        oracle = testbed.as_oracle(inst)
        w = rng.uniform(-3, 3, m)
        a = approx_gradient(oracle, w, inst.C @ w)
        fd = finite_diff_grad(inst.f_star, w, 1e-5)
        worst = max(worst, np.linalg.norm(a - fd) / max(np.linalg.norm(fd), 1e-300))
    verdict(4, worst <= 1e-5, f"50 instances, max relative error {worst:.3e}")


def audit_case(inst, alpha=None, beta=None):
    constants = testbed.derive_constants(inst)
    if alpha is None:
        alpha, beta = cert.auto_step_sizes(constants)
    config = SolverConfig(alpha=alpha, beta=beta, max_iters=4999)
    oracle = testbed.as_oracle(inst)
    traj = single_loop_run(oracle, config, np.zeros(inst.m), np.zeros(inst.n))
    return sector_audit(oracle, constants, config, traj)


def test_05_sector_audits(ref1, verdict):
    reports = [audit_case(ref1, REF1_ALPHA, REF1_BETA)]
    rng = np.random.default_rng(5)
    for s in range(10):
        m, n = (int(x) for x in rng.integers(1, 7, 2))
        reports.append(audit_case(testbed.make_instance(m, n, 700 + s, float(rng.uniform(1, 10)))))
    worst = min(c.min_margin for r in reports for c in r.checks.values())
    ok = all(r.passed and r.steps_audited == 5000 for r in reports)
    verdict(5, ok, f"11 runs x 5000 steps x 6 checks, smallest margin {worst:.3e}")


def test_06_transform_identity(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        l1, l2, l3, l4 = rng.uniform(0.01, 10, 4)
        a = rng.uniform(0, 0.99) * 3 * l1**2 / (4 * l3)
        b = rng.uniform(0, 0.99) * l2**2 / (4 * l4)
        m, n = (int(x) for x in rng.integers(1, 6, 2))
        N0, M = cert.build_transform(cert.Multipliers(l1, l2, l3, l4, a, b), m, n)
        worst = max(worst, cert.transform_residual(N0, M, m, n))
    verdict(6, worst <= 1e-9, f"100 multiplier sets, max |M'N0M - diag(-I, I)| = {worst:.3e}")


def test_07_hinf_vs_grid(verdict):
    rng = np.random.default_rng(7)
    # real c, p: the modulus is symmetric in theta, and the grid hits both 0 and pi
    theta = np.linspace(0.0, np.pi, 10_000)
    z = np.exp(1j * theta)
    worst = 0.0
    for _ in range(100):
        rho = rng.uniform(0.05, 1.0)
        p = rng.uniform(-0.999, 0.999) * rho
        c = rng.uniform(-5, 5)
        grid = float(np.max(np.abs(c / (rho * z - p))))
        closed = cert.hinf_first_order(c, p, rho)
        worst = max(worst, abs(closed - grid) / max(abs(closed), 1e-300))
    verdict(7, worst <= 1e-6, f"100 triples, max relative gap {worst:.3e}")


def test_08_bisection_consistency(ref1_constants, verdict):
    rho_min = cert.bisect_min_rho(ref1_constants, REF1_ALPHA, REF1_BETA)
    half = cert.small_gain_verdict(ref1_constants, REF1_ALPHA, REF1_BETA, 0.5)
    ok = rho_min is not None and 0.5 < rho_min <= 0.999479 + 1e-6 and not half.feasible
    verdict(8, ok, f"bisected rho {rho_min:.7f}, verdict at 0.5 feasible={half.feasible}")


def test_09_step_size_gate(ref0_constants, ref1_constants, verdict):
    cases = [
        (ref0_constants, 0.05, 0.1, cert.ALPHA_BOUND),
        (ref0_constants, 0.01, 0.2, cert.BETA_BOUND),
        (ref1_constants, 7e-4, 0.058, cert.RATIO_BOUND),
    ]
    seen = []
    for constants, alpha, beta, expected in cases:
        try:
            cert.certified_rate(constants, alpha, beta)
            seen.append(None)
        except StepSizeInfeasible as exc:
            seen.append(exc.violated)
    ok = all(v == [case[3]] for v, case in zip(seen, cases))
    verdict(9, ok, f"violations reported {seen}")


def test_10_divergence_detection(ref1, verdict):
    oracle = testbed.as_oracle(ref1)
    try:
        traj = single_loop_run(oracle, SolverConfig(alpha=10.0, beta=REF1_BETA, max_iters=1000), np.zeros(1), np.zeros(1))
    except DivergenceDetected as exc:
        verdict(10, True, f"DivergenceDetected after last finite step {exc.last_finite_step}")
        return
    err = traj.total_error
    ok = bool(np.all(np.diff(err) >= 0))
    verdict(10, ok, f"no exception; error non-decreasing over 1000 steps: {ok}")


def test_11_baseline_cost_report(tmp_path, verdict):
    payloads = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = cli.main(["compare", "--instance", "REF1", "--target", "1e-6", "--iters", "100000", "--out", str(out)])
        assert code == cli.EXIT_OK
        payloads.append(json.loads((out / "comparison.json").read_text()))
    data = payloads[0]
    keys = {"converged", "iterations", "final_omega_err", "stop_reason", "upper_evals", "lower_evals", "hessian_solves"}
    schema_ok = all(keys <= set(data[m]) for m in ("single_loop", "double_loop")) and "inner_iterations" in data["double_loop"]
    single, double = data["single_loop"]["lower_evals"], data["double_loop"]["lower_evals"]
    ok = (
        schema_ok
        and payloads[0] == payloads[1]
        and data["single_loop"]["converged"]
        and data["double_loop"]["converged"]
        and isinstance(single, int)
        and isinstance(double, int)
    )
    verdict(11, ok, f"lower evals single={single} double={double} (deterministic: {payloads[0] == payloads[1]})")
