"""Acceptance criteria; each test adds one PASS/FAIL line to the terminal summary."""
import math
import time

import numpy as np
import pytest

from sphkam.evolution import conjugacy_defect, norm_band_check, evolve_original, evolve_reduced
from sphkam.invariants import (inequality_suite, dense_oracle_suite, homological_suite,
                               regularization_suite)
from sphkam.kam import KamConfig, unitarity_defect
from sphkam.measure import estimate_excised_measure, measure_exponent
from sphkam.pipeline import assemble_system
from sphkam.report import eigenvalue_decay
from sphkam.spectral import laplace_eigenvalue

pytestmark = pytest.mark.acceptance


def test_criterion_01_homological_residual(record):
    cfg = KamConfig(n=2, d=2, K_max=6, L_max=3, gamma=0.05)
    t0 = time.perf_counter()
    checks = homological_suite(np.random.default_rng(1), instances=50, K_max=6, L_max=3,
                               gamma=cfg.gamma, tau=cfg.tau, K=cfg.L_max)
    elapsed = time.perf_counter() - t0
    residual = checks[0].value
    ok = residual <= 1e-10 and elapsed < 30 and all(c.passed for c in checks)
    record(1, ok, f"worst residual/(1+|M|) = {residual:.2e} (limit 1e-10), tau = {cfg.tau:.3g}, "
                  f"runtime {elapsed:.1f} s (limit 30 s)")
    assert ok


def test_criterion_02_generator_identity(record):
    (check,) = regularization_suite(np.random.default_rng(2), instances=50)
    ok = check.value <= 1e-12
    record(2, ok, f"worst relative residual = {check.value:.2e} over 50 instances (limit 1e-12)")
    assert ok


@pytest.mark.slow
def test_criterion_03_quadratic_convergence(record, golden_run, golden_run_half):
    _, _, full = golden_run
    _, _, half = golden_run_half
    eps = full.history.eps_sequence
    eps_half = half.history.eps_sequence
    steps = len(full.history.records)
    slope = full.history.convergence_slope()
    target = math.log(1.5)
    slope_ok = abs(slope - target) <= 0.2 * target
    factor = (eps[2] / eps[1]) / (eps_half[2] / eps_half[1])
    ok = steps >= 4 and slope_ok and 2 <= factor <= 8
    record(3, ok, f"steps = {steps} (need >= 4), slope = {slope:.3f} vs log 1.5 = {target:.3f} "
                  f"(20% band), step-2 ratio factor under halving = {factor:.2f} (need [2, 8]); "
                  f"eps_k = {', '.join(f'{e:.2e}' for e in eps)}")
    assert ok


@pytest.mark.slow
def test_criterion_04_unitarity(record, golden_run):
    _, _, result = golden_run
    defect = unitarity_defect(result.Phi)
    ok = result.status == "converged" and defect <= 1e-8
    record(4, ok, f"max ||Phi* Phi - Id||_op = {defect:.2e} (limit 1e-8), status {result.status}")
    assert ok


@pytest.mark.slow
def test_criterion_05_dynamic_conjugacy(record, golden, golden_run):
    kam, system, result = golden_run
    omega = golden.omegas[0]
    u0 = golden.initial_state()
    orig = evolve_original(u0, omega, system.V_op, system.W_op, kam.epsilon, 10.0, n_out=101, tol=1e-9)
    v0 = result.Phi.evaluate(np.zeros(kam.d)) @ u0
    red = evolve_reduced(v0, result.Z, 10.0, n_out=101, sphere=result.Phi.sphere)
    defect = float(conjugacy_defect(orig, red, result.Phi, omega).max())
    ok = orig.error_estimate <= 1e-9 and defect <= 1e-6
    record(5, ok, f"max_t ||Phi u - v|| = {defect:.2e} on [0, 10] (limit 1e-6), "
                  f"integrator error estimate {orig.error_estimate:.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_06_norm_band(record, golden, golden_run):
    kam, system, _ = golden_run
    run = evolve_original(golden.initial_state(), golden.omegas[0], system.V_op, system.W_op,
                          kam.epsilon, 100.0, n_out=401, tol=1e-8)
    c50, ok50 = norm_band_check(run, kam.epsilon, s=1.0, upto=50.0)
    c100, ok100 = norm_band_check(run, kam.epsilon, s=1.0)
    ratio = c100 / c50
    ok = ok50 and ok100 and 0.5 <= ratio <= 2.0
    record(6, ok, f"C_fit(T=50) = {c50:.3g}, C_fit(T=100) = {c100:.3g}, ratio {ratio:.3f} (need within 2x)")
    assert ok


def test_criterion_07_parity(record, golden):
    system = assemble_system(golden.V, golden.W, golden.kam)
    worst = 0.0
    for op in (system.V_op, system.W_op):
        even = (op.sphere.block_of[:, None] + op.sphere.block_of[None, :]) % 2 == 0
        worst = max(worst, float(np.max(np.abs(op.coef[:, even]))))
    ok = worst <= 1e-10
    record(7, ok, f"max |entry| in k + k' even blocks = {worst:.2e} (limit 1e-10)")
    assert ok


def test_criterion_08_separation(record):
    worst = math.inf
    for k in range(65):
        for kp in range(65):
            if k != kp:
                gap = abs(laplace_eigenvalue(k, 2) - laplace_eigenvalue(kp, 2))
                worst = min(worst, gap - (k + kp))
    ok = worst >= 0
    record(8, ok, f"min over k != k' <= 64 of |lambda_k - lambda_k'| - (k + k') = {worst}")
    assert ok


def test_criterion_09_measure_scaling(record):
    # one frequency, unperturbed levels on S^1: the exponent is -tau + d + 1
    gamma, tau, d, n = 0.05, 3.5, 1, 1
    t0 = time.perf_counter()
    f4 = estimate_excised_measure(None, gamma, tau, 4, d, n=n, N_samples=20000, seed=0).excised_fraction
    f8 = estimate_excised_measure(None, gamma, tau, 8, d, n=n, N_samples=20000, seed=1).excised_fraction
    elapsed = time.perf_counter() - t0
    exponent = measure_exponent(tau, d, n, beta=1.0)
    required = 2.0 ** (-exponent) / 4
    ratio = f4 / f8 if f8 > 0 else math.inf
    ok = ratio >= required and elapsed < 120
    record(9, ok, f"f(4) = {f4:.2e}, f(8) = {f8:.2e}, decrease {ratio:.2f} >= 2^{-exponent:g}/4 = "
                  f"{required:.3f}; runtime {elapsed:.1f} s (limit 120 s)")
    assert ok


@pytest.mark.slow
def test_criterion_10_eigenvalue_decay(record, golden_run):
    kam, _, result = golden_run
    decay = eigenvalue_decay(result, kam)
    C = decay["C_fit"]
    scaled = np.array(decay["weighted"]) / (kam.epsilon * kam.gamma)
    ok = decay["bound_holds"] and C <= 1.0 and np.all(scaled <= C * (1 + 1e-12))
    record(10, ok, f"single C = max_k <k>^beta |mu_k| / (eps gamma) = {C:.3g} over k <= {kam.K_max}; "
                   f"beta-norm bound {'holds' if decay['bound_holds'] else 'violated'}")
    assert ok


@pytest.mark.slow
def test_criterion_11_inequality_suite(record):
    first = {c.name: c for c in inequality_suite(0, instances=100)}
    second = {c.name: c for c in inequality_suite(1, instances=100)}
    hold = all(c.passed for c in first.values()) and all(c.passed for c in second.values())
    spread = max(max(first[k].value, second[k].value) / min(first[k].value, second[k].value)
                 for k in first if min(first[k].value, second[k].value) > 0)
    ok = hold and spread <= 2.0
    record(11, ok, f"{len(first)} inequalities hold on both seeds: {hold}; "
                   f"worst seed-to-seed constant ratio {spread:.3f} (limit 2)")
    assert ok


def test_criterion_12_dense_oracle(record):
    checks = dense_oracle_suite(np.random.default_rng(3), K_max=3, L_max=2)
    worst = max(c.value for c in checks)
    ok = all(c.passed for c in checks) and worst <= 1e-10
    record(12, ok, "; ".join(f"{c.name} {c.value:.1e}" for c in checks) + " (limit 1e-10)")
    assert ok
