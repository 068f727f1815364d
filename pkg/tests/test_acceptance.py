"""Acceptance suite: every exit criterion at its stated tolerance.

Each test prints one [PASS]/[FAIL] line with the measured numbers before
asserting.  Criteria 5-7 are marked slow (scaling benchmark and the paired
optimizer study); deselect with `-m "not slow"` for a quick pass.
"""
import itertools
import os

import numpy as np
import pytest

from conftest import random_hermitian, taylor_expm
from qocadjoint import (
    MaximalModel,
    QuantumSystem,
    SensitivityBlock,
    costate_sweep,
    decompose,
    evaluate_gradient,
    evaluate_hessian,
    fd_gradient,
    frechet_first,
    frechet_second,
    hessian,
    mu_sweep,
    propagate,
    sensitivity_sweep,
)
from qocadjoint.workbench import (
    RunConfig,
    SystemFile,
    assemble_system,
    generate_synthetic,
    grad_check,
    load_system,
    save_system,
)
from qocadjoint.workbench.bench import bench_scaling
from qocadjoint.workbench.study import WORKERS_ENV, study


def report(number, label, passed, detail):
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {number} ({label}): {detail}")


def rel_inf(a, b):
    return float(np.max(np.abs(a - b))) / max(float(np.max(np.abs(b))), 1e-300)


def instance_grid():
    """20 deterministic instances covering N x K x J x rho as specified."""
    combos = list(itertools.product((2, 4, 8), (1, 3), (4, 16), (0.0, 1.0, 1e6)))
    order = np.random.default_rng(20240).permutation(len(combos))
    chosen = [combos[i] for i in order[:20]]
    for axis in range(4):
        seen = {c[axis] for c in chosen}
        full = {c[axis] for c in combos}
        assert seen == full, "instance selection must cover every axis value"
    instances = []
    for i, (dim, channels, steps, rho) in enumerate(chosen):
        base = generate_synthetic(dim, channels, seed=1000 + i)
        system = QuantumSystem(
            h0=base.h0,
            dipoles=base.dipoles,
            alpha=base.alpha,
            beta=base.beta,
            rho=rho,
            num_steps=steps,
            dt=0.1,
        )
        model = MaximalModel(steps, channels)
        theta = np.random.default_rng(5000 + i).standard_normal(model.num_params)
        instances.append((system, model, theta))
    return instances


def test_criterion_1_gradient_agreement():
    worst = 0.0
    for system, model, theta in instance_grid():
        _, adjoint_grad = evaluate_gradient(system, model, theta)
        oracle = fd_gradient(system, model, theta)
        worst = max(worst, rel_inf(adjoint_grad, oracle))
    passed = worst < 1e-6
    report(1, "gradient agreement", passed,
           f"max relative inf-norm error {worst:.3e} over 20 instances (tol 1e-6)")
    assert passed


def test_criterion_2_hessian_agreement():
    worst = 0.0
    worst_sym = 0.0
    for system, model, theta in instance_grid():
        cache = propagate(system, model, theta)
        costates = costate_sweep(system, cache)
        da = sensitivity_sweep(system, model, theta, cache)
        mu = mu_sweep(system, model, theta, cache, costates, da)
        raw = hessian(system, model, theta, cache, costates,
                      SensitivityBlock(da=da, mu=mu), symmetrize=False)
        worst_sym = max(
            worst_sym,
            float(np.max(np.abs(raw - raw.T))) / max(float(np.max(np.abs(raw))), 1e-300),
        )
        sym = 0.5 * (raw + raw.T)

        oracle = np.empty_like(sym)
        for m in range(model.num_params):
            h = 1e-4 * (1.0 + abs(theta[m]))
            bump = np.zeros_like(theta)
            bump[m] = h
            _, g_plus = evaluate_gradient(system, model, theta + bump)
            _, g_minus = evaluate_gradient(system, model, theta - bump)
            oracle[:, m] = (g_plus - g_minus) / (2 * h)
        oracle = 0.5 * (oracle + oracle.T)
        worst = max(worst, rel_inf(sym, oracle))
    passed = worst < 1e-5 and worst_sym < 1e-8
    report(2, "hessian agreement", passed,
           f"max relative error {worst:.3e} (tol 1e-5), "
           f"max symmetry defect {worst_sym:.3e} (tol 1e-8)")
    assert passed


def test_criterion_3_exp_derivative_kernels():
    rng = np.random.default_rng(777)
    worst_first = 0.0
    worst_second = 0.0
    for i in range(50):
        dim = 4 if i % 2 == 0 else 8
        if i == 0:
            # clustered spectrum: two eigenvalues 1e-12 apart
            vals = np.arange(dim, dtype=float)
            vals[1] = vals[0] + 1e-12
            basis = np.linalg.qr(
                rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
            )[0]
            herm = (basis * vals) @ basis.conj().T
            herm = 0.5 * (herm + herm.conj().T)
        else:
            herm = random_hermitian(rng, dim)
        dt = float(rng.uniform(0.2, 1.0))
        factor = decompose(herm, dt)
        z = -1j * dt * herm
        w1 = -1j * random_hermitian(rng, dim)
        w2 = -1j * random_hermitian(rng, dim)

        h1 = 1e-5
        oracle1 = (taylor_expm(z + h1 * w1) - taylor_expm(z - h1 * w1)) / (2 * h1)
        got1 = frechet_first(factor, w1)
        worst_first = max(
            worst_first, np.linalg.norm(got1 - oracle1) / np.linalg.norm(oracle1)
        )

        h2 = 1e-4
        oracle2 = (
            taylor_expm(z + h2 * (w1 + w2))
            - taylor_expm(z + h2 * (w1 - w2))
            - taylor_expm(z - h2 * (w1 - w2))
            + taylor_expm(z - h2 * (w1 + w2))
        ) / (4 * h2 * h2)
        got2 = frechet_second(factor, w1, w2)
        worst_second = max(
            worst_second, np.linalg.norm(got2 - oracle2) / np.linalg.norm(oracle2)
        )
    passed = worst_first < 1e-7 and worst_second < 1e-5
    report(3, "exp-derivative kernels", passed,
           f"first derivative max rel {worst_first:.3e} (tol 1e-7), "
           f"second derivative max rel {worst_second:.3e} (tol 1e-5), 50 matrices")
    assert passed


def test_criterion_4_unitarity_long_horizon():
    base = generate_synthetic(4, 1, seed=99)
    system = QuantumSystem(
        h0=base.h0, dipoles=base.dipoles, alpha=base.alpha, beta=base.beta,
        rho=1.0, num_steps=1000, dt=0.1,
    )
    model = MaximalModel(1000, 1)
    theta = np.random.default_rng(98).standard_normal(1000)
    cache = propagate(system, model, theta)
    drift = float(np.max(np.abs(np.linalg.norm(cache.states, axis=1) - 1.0)))
    passed = drift < 1e-10
    report(4, "unitarity over 1000 steps", passed,
           f"max | ||a_j|| - 1 | = {drift:.3e} (tol 1e-10)")
    assert passed


@pytest.mark.slow
def test_criterion_5_first_order_scaling():
    steps = [4, 8, 16, 32, 64, 128, 256, 512, 1024]
    records, slopes = bench_scaling([4, 16], steps, trials=7, seed=7)
    gated = {dim: slopes[(dim, "first_order")] for dim in (4, 16)}
    measured = {dim: slopes[(dim, "second_order")] for dim in (4, 16)}
    passed = all(0.8 <= s <= 1.2 for s in gated.values())
    report(5, "first-order pass scaling", passed,
           f"first-order log-log slopes N=4: {gated[4]:.4f}, N=16: {gated[16]:.4f} "
           f"(gate [0.8, 1.2]); second-order slopes measured, not gated: "
           f"N=4: {measured[4]:.4f}, N=16: {measured[16]:.4f}")
    assert passed


@pytest.fixture(scope="module")
def comparison_study():
    system_file = generate_synthetic(4, 1, seed=2024)
    config = RunConfig(rho=1e6, dt=0.1, num_steps=200, seed=71)
    workers = int(os.environ.get(WORKERS_ENV, str(min(2, os.cpu_count() or 1))))
    return study(system_file, config, num_trials=20, workers=workers)


@pytest.mark.slow
def test_criterion_6_optimizer_comparison(comparison_study):
    pairs = comparison_study["pairs"]
    cap = RunConfig().criteria.max_iters
    within_cap = [
        first.iterations < cap and second.iterations < cap for first, second in pairs
    ]
    newton_fewer = [second.iterations < first.iterations for first, second in pairs]
    cost_close = [
        max(first.final_cost / second.final_cost, second.final_cost / first.final_cost) <= 1.5
        for first, second in pairs
    ]
    newton_small_grad = [second.grad_norm < 1e-3 for first, second in pairs]

    frac_cap = np.mean(within_cap)
    frac_fewer = np.mean(newton_fewer)
    frac_cost = np.mean(cost_close)
    frac_grad = np.mean(newton_small_grad)
    ratio_mean = comparison_study["ratio_mean"]["iterations"]
    passed = (
        frac_cap >= 0.95 and frac_fewer >= 0.80 and frac_cost >= 0.90 and frac_grad >= 0.90
    )
    report(6, "optimizer comparison", passed,
           f"20 trials at N=4, J=200, rho=1e6: within-cap {frac_cap:.0%} (need >=95%), "
           f"Newton fewer iterations {frac_fewer:.0%} (need >=80%), "
           f"costs within 1.5x {frac_cost:.0%} (need >=90%), "
           f"Newton |grad| < 1e-3 {frac_grad:.0%} (need >=90%); "
           f"mean iteration ratio {ratio_mean:.2f}")
    assert passed


@pytest.mark.slow
def test_criterion_7_converged_hessian_positivity(comparison_study):
    eigs = [
        second.hessian_min_eig
        for _, second in comparison_study["pairs"]
        if second.termination_reason in {"step_tol", "grad_tol"}
    ]
    smallest = min(eigs)
    passed = smallest > -1e-8 and len(eigs) > 0
    report(7, "converged-Hessian positivity", passed,
           f"smallest final Hessian eigenvalue over {len(eigs)} convergent Newton runs: "
           f"{smallest:.3e} (gate > -1e-8)")
    assert passed


def test_criterion_8_external_matrix_ingestion(tmp_path):
    # absolute published results for molecular systems need externally built
    # matrices; this checks only that such matrices flow through the file
    # format and the derivative machinery unchanged.
    rng = np.random.default_rng(31415)
    h0 = np.diag([-1.8310, -0.2537, 0.1784, 0.9063]).astype(complex)
    raw = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    z_dipole = 0.5 * (raw + raw.conj().T)
    system_file = SystemFile(
        name="external-molecular-style",
        h0=h0,
        dipoles=z_dipole[None],
        alpha=np.eye(4, dtype=complex)[0],
        beta=np.eye(4, dtype=complex)[3],
    )
    path = tmp_path / "molecular.json"
    save_system(system_file, path)
    loaded = load_system(path)
    assert np.array_equal(loaded.h0, system_file.h0)
    assert np.array_equal(loaded.dipoles, system_file.dipoles)

    config = RunConfig(rho=10.0, dt=0.1, num_steps=12, seed=3)
    system = assemble_system(loaded, config)
    model = MaximalModel(12, 1)
    theta = np.random.default_rng(4).standard_normal(12)
    check = grad_check(system, model, theta)
    passed = check.passed
    report(8, "external matrix ingestion", passed,
           "externally supplied Hermitian matrices round-trip bit-exactly and "
           f"pass the derivative check (max rel err {check.max_relative_error:.3e}); "
           "published molecular table values remain out of desk-scale reach by design")
    assert passed
