import numpy as np
import pytest

from singleloop import testbed
from singleloop.errors import InputError
from singleloop.problem_model import BilevelOracle, ProblemConstants, validate_constants
from singleloop.solver import approx_gradient


def random_pairs(rng, m, n, count, box=10.0):
    return [
        (rng.uniform(-box, box, m), rng.uniform(-box, box, n), rng.uniform(-box, box, m), rng.uniform(-box, box, n))
        for _ in range(count)
    ]


def bound_hypergrad(oracle):
    return lambda w, v: approx_gradient(oracle, w, v)


def test_ref1_nominal_constants_pass(ref1_oracle, ref1_exact_constants, rng):
    samples = random_pairs(rng, 1, 1, 100)
    report = validate_constants(ref1_oracle, ref1_exact_constants, samples, bound_hypergrad(ref1_oracle))
    assert report.passed, report.failed()
    assert len(report.per_sample) == 100
    assert all(all(row.values()) for row in report.per_sample)
    # every one of the REF1 bounds is attained exactly by the quadratic
    assert report.checks["strong_convexity_g"].worst_ratio == pytest.approx(1.0, rel=1e-12)
    assert report.checks["lipschitz_v"].worst_ratio == pytest.approx(1.0, rel=1e-12)


def test_overclaimed_strong_convexity_fails(ref1_oracle, rng):
    # L_g raised with mu_g so that the constants stay well-formed
    claimed = ProblemConstants(mu_f=2.0, mu_g=5.0, L_g=5.0, H_omega=1.0, H_v=1.0, H=2.0)
    report = validate_constants(ref1_oracle, claimed, random_pairs(rng, 1, 1, 100), bound_hypergrad(ref1_oracle))
    assert not report.checks["strong_convexity_g"].passed
    assert report.checks["strong_convexity_g"].worst_ratio == pytest.approx(2.0 / 5.0, rel=1e-12)
    assert report.checks["smoothness_g"].passed


def test_overclaimed_mu_f_fails_with_ground_truth(ref1_oracle, rng):
    claimed = ProblemConstants(mu_f=3.0, mu_g=2.0, L_g=2.0, H_omega=1.0, H_v=1.0, H=2.0)
    report = validate_constants(ref1_oracle, claimed, random_pairs(rng, 1, 1, 20), bound_hypergrad(ref1_oracle))
    assert report.failed() == ["strong_convexity_f_star"]
    assert report.checks["strong_convexity_f_star"].worst_ratio == pytest.approx(2.0 / 3.0, rel=1e-12)


def zero_oracle():
    z = lambda w, v: np.zeros(1)
    return BilevelOracle(
        m=1, n=1, grad_f_omega=z, grad_f_v=z, grad_g_v=z,
        hess_g_vv=lambda w, v: np.zeros((1, 1)), hess_g_omega_v=lambda w, v: np.zeros((1, 1)),
    )


def test_vacuous_zero_pair():
    oracle = zero_oracle()
    constants = ProblemConstants(mu_f=1.0, mu_g=1.0, L_g=1.0, H_omega=1.0, H_v=1.0, H=1.0)
    zero = np.zeros(1)
    report = validate_constants(oracle, constants, [(zero, zero, zero, zero)], lambda w, v: np.zeros(1))
    assert report.passed
    assert report.checks["strong_convexity_f_star"].skipped


def test_dimension_mismatch(ref1_oracle, ref1_exact_constants):
    bad = [(np.zeros(2), np.zeros(1), np.zeros(1), np.zeros(1))]
    with pytest.raises(InputError):
        validate_constants(ref1_oracle, ref1_exact_constants, bad, bound_hypergrad(ref1_oracle))
    with pytest.raises(InputError):
        validate_constants(ref1_oracle, ref1_exact_constants, [], bound_hypergrad(ref1_oracle))


def test_report_deterministic(ref1_oracle, ref1_exact_constants):
    samples = random_pairs(np.random.default_rng(3), 1, 1, 30)
    a = validate_constants(ref1_oracle, ref1_exact_constants, samples, bound_hypergrad(ref1_oracle))
    b = validate_constants(ref1_oracle, ref1_exact_constants, samples, bound_hypergrad(ref1_oracle))
    assert a == b


@pytest.mark.parametrize("seed", range(8))
def test_testbed_constants_always_validate(seed):
    rng = np.random.default_rng(seed)
    m, n = (int(x) for x in rng.integers(1, 7, 2))
    inst = testbed.make_instance(m, n, seed, cond_target=float(rng.uniform(1, 20)))
    oracle = testbed.as_oracle(inst)
    report = validate_constants(oracle, testbed.derive_constants(inst), random_pairs(rng, m, n, 40), bound_hypergrad(oracle))
    assert report.passed, report.failed()


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(mu_f=0.0, mu_g=1, L_g=1, H_omega=1, H_v=0, H=0),
        dict(mu_f=1, mu_g=-1, L_g=1, H_omega=1, H_v=0, H=0),
        dict(mu_f=1, mu_g=1, L_g=1, H_omega=1, H_v=-1, H=0),
        dict(mu_f=1, mu_g=3, L_g=2, H_omega=1, H_v=0, H=0),
    ],
)
def test_constants_validation(kwargs):
    with pytest.raises(InputError):
        ProblemConstants(**kwargs)
