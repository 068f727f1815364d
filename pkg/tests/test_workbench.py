"""File formats, synthetic generation, run drivers, study, bench, CLI."""
import json

import numpy as np
import pytest

import qocadjoint.adjoint as adjoint_module
from qocadjoint import MaximalModel, TerminationCriteria
from qocadjoint.workbench import (
    RunConfig,
    SystemFile,
    assemble_system,
    bench_scaling,
    generate_synthetic,
    grad_check,
    hess_check,
    load_config,
    load_system,
    run_optimization,
    save_config,
    save_system,
    study,
    write_bench_csv,
)
from qocadjoint.workbench.cli import main as cli_main
from qocadjoint.workbench.runner import draw_theta, run_derivative_check


@pytest.fixture
def small_config():
    return RunConfig(
        rho=100.0,
        dt=0.1,
        num_steps=10,
        optimizer="newton",
        seed=5,
        criteria=TerminationCriteria(step_tol=1e-8, grad_tol=1e-8, max_iters=500),
    )


class TestSystemFile:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        system = generate_synthetic(5, 2, seed=9)
        path = tmp_path / "system.json"
        save_system(system, path)
        loaded = load_system(path)
        assert loaded.name == system.name
        assert np.array_equal(loaded.h0, system.h0)
        assert np.array_equal(loaded.dipoles, system.dipoles)
        assert np.array_equal(loaded.alpha, system.alpha)
        assert np.array_equal(loaded.beta, system.beta)
        # a second save emits identical bytes
        path2 = tmp_path / "again.json"
        save_system(loaded, path2)
        assert path.read_text() == path2.read_text()

    def test_rejects_wrong_version(self, tmp_path):
        system = generate_synthetic(3, 1, seed=1)
        path = tmp_path / "system.json"
        save_system(system, path)
        payload = json.loads(path.read_text())
        payload["format_version"] = 99
        path.write_text(json.dumps(payload))
        with pytest.raises(ValueError, match="format_version"):
            load_system(path)

    def test_rejects_corrupted_matrices(self, tmp_path):
        system = generate_synthetic(3, 1, seed=2)
        path = tmp_path / "system.json"
        save_system(system, path)
        payload = json.loads(path.read_text())
        payload["h0"][0][1] = [99.0, 0.0]  # breaks Hermiticity
        path.write_text(json.dumps(payload))
        with pytest.raises(ValueError, match="Hermitian"):
            load_system(path)

    def test_rejects_non_unit_alpha(self):
        with pytest.raises(ValueError, match="unit norm"):
            SystemFile(
                name="bad",
                h0=np.zeros((2, 2), dtype=complex),
                dipoles=np.zeros((1, 2, 2), dtype=complex),
                alpha=np.array([2.0, 0.0]),
                beta=np.array([0.0, 1.0]),
            )


class TestRunConfig:
    def test_round_trip_bit_exact(self, tmp_path):
        config = RunConfig(
            rho=1e6, dt=0.1, num_steps=200, optimizer="bfgs", seed=123,
            batch_width=32, memory_budget=2**31,
        )
        path = tmp_path / "config.json"
        save_config(config, path)
        loaded = load_config(path)
        assert loaded == config
        path2 = tmp_path / "config2.json"
        save_config(loaded, path2)
        assert path.read_text() == path2.read_text()

    def test_defaults_match_reference_protocol(self):
        config = RunConfig()
        assert config.rho == 1e6
        assert config.dt == 0.1
        assert config.num_steps == 200
        assert config.criteria.step_tol == 1e-10
        assert config.criteria.grad_tol == 1e-10
        assert config.criteria.max_iters == 10_000

    def test_rejects_invalid_values(self):
        with pytest.raises(ValueError):
            RunConfig(num_steps=0)
        with pytest.raises(ValueError):
            RunConfig(rho=0.0)
        with pytest.raises(ValueError):
            RunConfig(model="mystery")
        with pytest.raises(ValueError):
            RunConfig(optimizer="adam")


class TestSynthetic:
    def test_deterministic_per_seed(self):
        a = generate_synthetic(4, 2, seed=7)
        b = generate_synthetic(4, 2, seed=7)
        assert np.array_equal(a.h0, b.h0)
        assert np.array_equal(a.dipoles, b.dipoles)

    def test_structure(self):
        system = generate_synthetic(6, 3, seed=8)
        diag = np.real(np.diag(system.h0))
        assert np.array_equal(np.sort(diag), diag)
        assert not np.any(system.h0 - np.diag(np.diag(system.h0)))
        for k in range(3):
            assert np.max(np.abs(system.dipoles[k] - system.dipoles[k].conj().T)) < 1e-12
        np.testing.assert_array_equal(system.alpha, np.eye(6)[0])
        np.testing.assert_array_equal(system.beta, np.eye(6)[5])


class TestDerivativeChecks:
    def test_both_checks_pass(self, small_config):
        system_file = generate_synthetic(4, 1, seed=21)
        system = assemble_system(system_file, small_config)
        model = MaximalModel(small_config.num_steps, 1)
        theta = draw_theta(model, 3)
        check = grad_check(system, model, theta)
        assert check.passed and check.max_relative_error < 1e-6
        check = hess_check(system, model, theta)
        assert check.passed and check.max_relative_error < 1e-5

    def test_corrupted_gradient_fails(self, small_config, monkeypatch):
        # harness self-check: a sign flip in the adjoint gradient must trip it
        system_file = generate_synthetic(4, 1, seed=22)
        system = assemble_system(system_file, small_config)
        model = MaximalModel(small_config.num_steps, 1)
        theta = draw_theta(model, 4)

        true_eval = adjoint_module.evaluate_gradient

        def corrupted(sys_, model_, theta_):
            value, grad = true_eval(sys_, model_, theta_)
            return value, -grad

        import qocadjoint.workbench.runner as runner_module

        monkeypatch.setattr(runner_module, "evaluate_gradient", corrupted)
        check = runner_module.grad_check(system, model, theta)
        assert not check.passed

    def test_cli_report_files(self, tmp_path, small_config):
        system_file = generate_synthetic(4, 1, seed=23)
        check = run_derivative_check(
            "gradient", system_file, small_config, tmp_path / "out", seed=1
        )
        assert check.passed
        report = json.loads((tmp_path / "out" / "gradient_check.json").read_text())
        assert report["passed"] is True


class TestRunOptimization:
    def test_emits_artifacts_with_exact_row_counts(self, tmp_path, small_config):
        system_file = generate_synthetic(3, 1, seed=31)
        report = run_optimization(system_file, small_config, tmp_path / "run")
        assert report.termination_reason in {"step_tol", "grad_tol"}
        assert report.final_target_violation is not None

        results = json.loads((tmp_path / "run" / "results.json").read_text())
        assert results["termination_reason"] == report.termination_reason
        assert results["config"]["num_steps"] == small_config.num_steps
        assert len(results["trace"]["cost"]) == report.iterations

        controls = (tmp_path / "run" / "controls.csv").read_text().strip().splitlines()
        assert controls[0] == "j,t,f1"
        assert len(controls) == 1 + small_config.num_steps
        states = (tmp_path / "run" / "states.csv").read_text().strip().splitlines()
        assert states[0] == "j,t,mag1,mag2,mag3"
        assert len(states) == 1 + small_config.num_steps + 1

    def test_bfgs_variant_same_format(self, tmp_path, small_config):
        system_file = generate_synthetic(3, 1, seed=32)
        config = RunConfig.from_dict({**small_config.to_dict(), "optimizer": "bfgs"})
        report = run_optimization(system_file, config, tmp_path / "run")
        results = json.loads((tmp_path / "run" / "results.json").read_text())
        assert results["optimizer"] == "bfgs"
        assert results["final_hessian_min_eig"] is None
        assert report.iterations >= 1


class TestStudy:
    def test_single_trial_quantiles_equal_ratio(self, tmp_path, small_config):
        system_file = generate_synthetic(3, 1, seed=41)
        summary = study(system_file, small_config, num_trials=1, out_dir=tmp_path / "study")
        for name in ("iterations", "final_cost"):
            assert summary["ratio_q05"][name] == summary["ratio_mean"][name]
            assert summary["ratio_q95"][name] == summary["ratio_mean"][name]
        rows = (tmp_path / "study" / "trials.csv").read_text().strip().splitlines()
        assert rows[0] == "trial,algorithm,iterations,wall_s,final_cost,grad_norm,target_viol"
        assert len(rows) == 1 + 2  # one trial, both algorithms

    def test_reproducible_modulo_timing(self, tmp_path, small_config):
        system_file = generate_synthetic(3, 1, seed=42)
        one = study(system_file, small_config, num_trials=3, out_dir=tmp_path / "a")
        two = study(system_file, small_config, num_trials=3, out_dir=tmp_path / "b")
        for name in ("iterations", "final_cost", "grad_norm", "target_viol"):
            assert one["ratio_mean"][name] == two["ratio_mean"][name]

        def strip_wall(path):
            rows = [line.split(",") for line in path.read_text().strip().splitlines()]
            return [[c for i, c in enumerate(row) if i != 3] for row in rows]

        assert strip_wall(tmp_path / "a" / "trials.csv") == strip_wall(
            tmp_path / "b" / "trials.csv"
        )

    def test_identical_initial_guess_across_optimizers(self, small_config):
        # both optimizers of a trial share theta0: with one Newton iteration
        # allowed, final costs must still refer to the same starting point
        system_file = generate_synthetic(3, 1, seed=43)
        summary = study(system_file, small_config, num_trials=2)
        for first_order, second_order in summary["pairs"]:
            assert first_order.trial == second_order.trial
            assert first_order.algorithm == "bfgs"
            assert second_order.algorithm == "newton"

    def test_parallel_workers_match_sequential(self, small_config):
        system_file = generate_synthetic(3, 1, seed=44)
        seq = study(system_file, small_config, num_trials=2, workers=1)
        par = study(system_file, small_config, num_trials=2, workers=2)
        for name in ("iterations", "final_cost"):
            assert seq["ratio_mean"][name] == par["ratio_mean"][name]


class TestBench:
    def test_record_structure_and_csv(self, tmp_path):
        records, slopes = bench_scaling([2], [4, 8, 16], trials=3, seed=0)
        assert len(records) == 6  # 3 step counts x 2 algorithms
        assert all(r.trials == 3 for r in records)
        assert all(r.mean_seconds > 0 for r in records)
        assert all(np.isfinite(slope) for slope in slopes.values())
        assert set(slopes) == {(2, "first_order"), (2, "second_order")}
        write_bench_csv(records, tmp_path / "bench.csv")
        rows = (tmp_path / "bench.csv").read_text().strip().splitlines()
        assert rows[0] == "N,J,algorithm,trials,mean_seconds,std_seconds"
        assert len(rows) == 7

    def test_means_stable_under_more_trials(self):
        # loose statistical sanity: more repetitions should not move the mean
        # beyond a few spreads on a quiet machine
        a, _ = bench_scaling([2], [64], trials=5, seed=1)
        b, _ = bench_scaling([2], [64], trials=10, seed=1)
        for r_a, r_b in zip(a, b):
            spread = 2 * (r_a.std_seconds + r_b.std_seconds) + 0.5 * max(
                r_a.mean_seconds, r_b.mean_seconds
            )
            assert abs(r_a.mean_seconds - r_b.mean_seconds) <= spread

    def test_requires_three_trials(self):
        with pytest.raises(ValueError):
            bench_scaling([2], [4], trials=2, seed=0)

    def test_one_warmup_plus_timed_trials(self):
        from qocadjoint.workbench.bench import _time_pass

        calls = []
        _time_pass(lambda: calls.append(1), repeats=3)
        assert len(calls) == 4  # one untimed warm-up, then the timed runs


class TestCli:
    def test_gen_run_and_checks(self, tmp_path, capsys):
        out = tmp_path / "ws"
        assert cli_main(["gen-system", "--dim", "3", "--channels", "1", "--seed", "6",
                         "--out", str(out)]) == 0
        assert (out / "system.json").exists()

        config = RunConfig(
            rho=10.0, dt=0.1, num_steps=8, seed=2,
            criteria=TerminationCriteria(step_tol=1e-8, grad_tol=1e-8, max_iters=300),
        )
        save_config(config, out / "config.json")

        assert cli_main(["propagate", "--system", str(out / "system.json"),
                         "--config", str(out / "config.json"), "--out", str(out / "prop")]) == 0
        assert (out / "prop" / "states.csv").exists()

        assert cli_main(["grad-check", "--system", str(out / "system.json"),
                         "--config", str(out / "config.json"), "--out", str(out / "gc")]) == 0
        assert cli_main(["hess-check", "--system", str(out / "system.json"),
                         "--config", str(out / "config.json"), "--out", str(out / "hc")]) == 0

        assert cli_main(["run", "--system", str(out / "system.json"),
                         "--config", str(out / "config.json"), "--out", str(out / "run")]) == 0
        assert (out / "run" / "results.json").exists()
        captured = capsys.readouterr()
        assert "newton" in captured.out

    def test_bench_subcommand(self, tmp_path):
        out = tmp_path / "bench"
        assert cli_main(["bench-scaling", "--dims", "2", "--steps", "4,8",
                         "--trials", "3", "--out", str(out)]) == 0
        assert (out / "bench.csv").exists()
        assert (out / "bench_summary.json").exists()

    def test_study_subcommand(self, tmp_path):
        out = tmp_path / "ws"
        out.mkdir()
        save_system(generate_synthetic(3, 1, seed=5), out / "system.json")
        save_config(
            RunConfig(rho=10.0, dt=0.1, num_steps=6, seed=2,
                      criteria=TerminationCriteria(step_tol=1e-8, grad_tol=1e-8, max_iters=200)),
            out / "config.json",
        )
        assert cli_main(["study", "--system", str(out / "system.json"),
                         "--config", str(out / "config.json"), "--trials", "2",
                         "--out", str(out / "study")]) == 0
        assert (out / "study" / "trials.csv").exists()
        assert (out / "study" / "results.json").exists()
