import json
import math
import subprocess
import sys

import numpy as np
import pytest

from aggrate import BITS_PER_NAT
from aggrate.cli import main

LN2 = math.log(2.0)


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    envelope = json.loads(captured.out) if captured.out else None
    return code, envelope, captured.err


class TestSumRate:
    def test_homogeneous_reference(self, capsys):
        code, env, _ = run_cli(capsys, "sumrate", "--sigma-x2", "1",
                               "--sigma-n2", "1", "--workers", "10",
                               "--distortion", "0.2")
        assert code == 0
        assert env["command"] == "sumrate"
        assert env["units"] == "bits"
        np.testing.assert_allclose(env["results"]["sum_rate"],
                                   6.292481250360578, rtol=1e-14)
        np.testing.assert_allclose(env["results"]["min_distortion"], 0.1,
                                   rtol=0)

    def test_infeasible_exits_2_and_names_bound(self, capsys):
        code, env, err = run_cli(capsys, "sumrate", "--sigma-x2", "1",
                                 "--sigma-n2", "1", "--workers", "10",
                                 "--distortion", "0.05")
        assert code == 2
        assert env is None
        assert "0.1" in err

    def test_heterogeneous_water_filling(self, capsys):
        code, env, _ = run_cli(capsys, "sumrate", "--sigma-x2", "1",
                               "--sigma-n2", "1,2", "--distortion", "1",
                               "--units", "nats")
        assert code == 0
        np.testing.assert_allclose(env["results"]["sum_rate"], 2.0 * LN2,
                                   rtol=1e-14)
        np.testing.assert_allclose(env["results"]["z"], [0.75, 0.25],
                                   rtol=1e-14)
        np.testing.assert_allclose(env["results"]["water_level"], 0.25,
                                   rtol=1e-14)

    def test_scalar_noise_needs_workers(self, capsys):
        code, env, err = run_cli(capsys, "sumrate", "--sigma-x2", "1",
                                 "--sigma-n2", "1", "--distortion", "0.5")
        assert code == 1
        assert env is None

    def test_workers_contradicting_noise_list(self, capsys):
        code, _, _ = run_cli(capsys, "sumrate", "--sigma-x2", "1",
                             "--sigma-n2", "1,2", "--workers", "3",
                             "--distortion", "1")
        assert code == 1


class TestUnitsContract:
    def test_bits_equal_nats_times_factor(self, capsys):
        base = ["sumrate", "--sigma-x2", "1", "--sigma-n2", "1",
                "--workers", "10", "--distortion", "0.2"]
        _, bits_env, _ = run_cli(capsys, *base)
        _, nats_env, _ = run_cli(capsys, *base, "--units", "nats")
        for key in ("sum_rate", "independent_sum_rate", "correlation_gain"):
            assert bits_env["results"][key] == \
                nats_env["results"][key] * BITS_PER_NAT
        # distortion is not a rate and must not be scaled
        assert bits_env["results"]["min_distortion"] == \
            nats_env["results"]["min_distortion"]

    def test_rate_inputs_read_in_units(self, capsys):
        bits = ["corner", "--sigma-x2", "1", "--noise-var", "1,1",
                "--rates", "0.5,0.5"]
        nats = ["corner", "--sigma-x2", "1", "--noise-var", "1,1",
                "--rates", f"{0.5 * LN2!r},{0.5 * LN2!r}", "--units", "nats"]
        _, bits_env, _ = run_cli(capsys, *bits)
        _, nats_env, _ = run_cli(capsys, *nats)
        np.testing.assert_allclose(
            bits_env["results"]["total_rate"],
            np.array(nats_env["results"]["total_rate"]) * BITS_PER_NAT,
            rtol=1e-14)


class TestCorner:
    def test_reference_point(self, capsys):
        code, env, _ = run_cli(capsys, "corner", "--sigma-x2", "1",
                               "--noise-var", "1,1", "--rates", "0.5,0.5",
                               "--distortion", "1")
        assert code == 0
        np.testing.assert_allclose(env["results"]["total_rate"], 1.5,
                                   rtol=1e-14)
        assert env["results"]["on_surface"] is True
        assert env["results"]["order"] == [0, 1]

    def test_weights_reorder_service(self, capsys):
        _, env, _ = run_cli(capsys, "corner", "--sigma-x2", "1",
                            "--noise-var", "1,1", "--rates", "0.5,0.5",
                            "--weights", "1,2")
        assert env["results"]["order"] == [1, 0]
        per = env["results"]["per_worker_rates"]
        assert per[1] < per[0]

    def test_weight_length_check(self, capsys):
        code, _, _ = run_cli(capsys, "corner", "--sigma-x2", "1",
                             "--noise-var", "1,1", "--rates", "0.5,0.5",
                             "--weights", "1,2,3")
        assert code == 1


class TestBoundary:
    def test_equal_weights_single_layer(self, capsys):
        code, env, _ = run_cli(capsys, "boundary", "--sigma-x2", "1",
                               "--noise-var", "1,1", "--distortion", "1")
        assert code == 0
        np.testing.assert_allclose(env["results"]["objective"], 1.5,
                                   rtol=1e-9)
        assert env["results"]["kkt_residual"] <= 1e-9

    def test_two_layers_with_fixed_split(self, capsys):
        code, env, _ = run_cli(capsys, "boundary",
                               "--sigma-x2", "1,4",
                               "--noise-var", "1,1.5,0.7;2,1,3",
                               "--weights", "1,2,1.5",
                               "--distortion", "0.9",
                               "--layer-distortions", "0.34,0.56",
                               "--units", "nats")
        assert code == 0
        np.testing.assert_allclose(env["results"]["layer_distortions"],
                                   [0.34, 0.56], rtol=0)
        assert "per_worker_layer_rates" in env["results"]

    def test_infeasible_budget(self, capsys):
        code, _, err = run_cli(capsys, "boundary", "--sigma-x2", "1",
                               "--noise-var", "1,1", "--distortion", "0.4")
        assert code == 2
        assert "0.5" in err


class TestAllocate:
    def test_total_cost_is_unit_free(self, capsys):
        base = ["allocate", "--sigma-x2", "1", "--noise-var", "1,1",
                "--costs", "1,3", "--distortion", "1"]
        _, bits_env, _ = run_cli(capsys, *base)
        _, nats_env, _ = run_cli(capsys, *base, "--units", "nats")
        # money per symbol does not change with the rate display unit
        assert bits_env["results"]["total_cost"] == \
            nats_env["results"]["total_cost"]
        np.testing.assert_allclose(
            np.array(bits_env["results"]["per_worker_rates"]),
            np.array(nats_env["results"]["per_worker_rates"]) * BITS_PER_NAT,
            rtol=1e-14)

    def test_pricey_worker_gets_less(self, capsys):
        _, env, _ = run_cli(capsys, "allocate", "--sigma-x2", "1",
                            "--noise-var", "1,1", "--costs", "1,5",
                            "--distortion", "1")
        per = env["results"]["per_worker_rates"]
        assert per[1] < per[0]


class TestPlan:
    def test_static_plan_consistency(self, capsys):
        code, env, _ = run_cli(capsys, "plan", "--radius-sq", "1",
                               "--smoothness", "1", "--target-gap", "0.1",
                               "--model-dim", "100", "--workers", "10",
                               "--sigma-x2", "1", "--sigma-n2", "1",
                               "--distortion", "0.2")
        assert code == 0
        res = env["results"]
        assert res["iterations"] >= 1
        np.testing.assert_allclose(
            res["per_iteration"],
            100 * 6.292481250360578, rtol=1e-12)
        np.testing.assert_allclose(res["total"],
                                   res["iterations"] * res["per_iteration"],
                                   rtol=1e-12)

    def test_grid_scan_with_csv(self, capsys, tmp_path):
        out = tmp_path / "grid.csv"
        code, env, _ = run_cli(capsys, "plan", "--radius-sq", "100",
                               "--smoothness", "1", "--target-gap", "1",
                               "--workers", "10", "--sigma-x2", "1",
                               "--sigma-n2", "1",
                               "--distortion-grid", "log:0.101:100:50",
                               "--output", str(out))
        assert code == 0
        res = env["results"]
        assert len(res["grid"]) == 50
        assert res["best_total"] <= min(res["grid_totals"]) + 1e-9
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "distortion,total_cost"
        assert len(lines) == 51
        first = lines[1].split(",")
        np.testing.assert_allclose(float(first[0]), res["grid"][0], rtol=0)
        np.testing.assert_allclose(float(first[1]), res["grid_totals"][0],
                                   rtol=0)

    def test_trace_plan(self, capsys, tmp_path):
        trace = tmp_path / "trace.csv"
        trace.write_text("iteration,sigma_x2,sigma_n2\n"
                         "0,2.0,1.0\n10,1.5,0.8\n20,1.0,0.5\n")
        code, env, _ = run_cli(capsys, "plan", "--radius-sq", "1",
                               "--smoothness", "1", "--target-gap", "0.1",
                               "--workers", "4", "--trace", str(trace),
                               "--rho", "1")
        assert code == 0
        res = env["results"]
        assert res["iterations"] == 3
        assert res["unbounded"] is False
        np.testing.assert_allclose(res["distortion"],
                                   [0.5, 0.4, 0.25], rtol=1e-12)

    def test_trace_requires_rho(self, capsys, tmp_path):
        trace = tmp_path / "trace.csv"
        trace.write_text("iteration,sigma_x2,sigma_n2\n0,1.0,1.0\n")
        code, _, _ = run_cli(capsys, "plan", "--radius-sq", "1",
                             "--smoothness", "1", "--target-gap", "0.1",
                             "--workers", "4", "--trace", str(trace))
        assert code == 1

    def test_static_needs_statistics(self, capsys):
        code, _, _ = run_cli(capsys, "plan", "--radius-sq", "1",
                             "--smoothness", "1", "--target-gap", "0.1",
                             "--workers", "4")
        assert code == 1


class TestSignSgd:
    def test_reference_numbers(self, capsys):
        code, env, _ = run_cli(capsys, "signsgd", "--sigma-x2", "1",
                               "--sigma-n2", "1", "--workers", "10")
        assert code == 0
        res = env["results"]
        np.testing.assert_allclose(res["signsgd_distortion"],
                                   0.17267604552648372, rtol=1e-12)
        np.testing.assert_allclose(res["ideal_quant"], 9.538180696345915,
                                   rtol=1e-12)
        np.testing.assert_allclose(res["sum_rate_at_signsgd_distortion"],
                                   7.624412991030472, rtol=1e-12)
        np.testing.assert_allclose(res["signsgd_per_dim"], 10.0, rtol=1e-14)


class TestSimulateCeo:
    args = ("simulate-ceo", "--sigma-x2", "1", "--noise-var", "1,1",
            "--rates", "0.5,0.5", "--samples", "20000")

    def test_report(self, capsys):
        code, env, _ = run_cli(capsys, *self.args, "--seed", "11")
        assert code == 0
        res = env["results"]
        np.testing.assert_allclose(res["predicted_distortion"], [1.0],
                                   rtol=1e-12)
        assert abs(res["empirical_mse"][0] - 1.0) <= 3 * res["mse_std_err"][0]
        assert env["seed"] == 11

    def test_deterministic_per_seed(self, capsys):
        main(list(self.args) + ["--seed", "11"])
        first = capsys.readouterr().out
        main(list(self.args) + ["--seed", "11"])
        second = capsys.readouterr().out
        assert first == second

    def test_seed_generated_when_missing(self, capsys):
        code, env, _ = run_cli(capsys, *self.args)
        assert code == 0
        assert isinstance(env["seed"], int)

    def test_rates_shape_check(self, capsys):
        code, _, _ = run_cli(capsys, "simulate-ceo", "--sigma-x2", "1",
                             "--noise-var", "1,1", "--rates", "0.5,0.5,0.5",
                             "--samples", "1000")
        assert code == 1


class TestSimulateSgd:
    args = ("simulate-sgd", "--dim", "5", "--data-points", "40",
            "--condition-number", "5", "--problem-seed", "3",
            "--workers", "3", "--batch-size", "10",
            "--learning-rate", "0.2", "--rho", "1", "--target-gap", "1e-3",
            "--max-iters", "4000", "--seed", "9")

    def test_run_and_loss_csv(self, capsys, tmp_path):
        out = tmp_path / "loss.csv"
        code, env, _ = run_cli(capsys, *self.args, "--output", str(out))
        assert code == 0
        res = env["results"]
        assert res["converged"] is True
        assert res["iterations_to_target"] >= 1
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "iteration,loss"
        assert len(lines) == res["iterations_to_target"] + 2
        assert float(lines[-1].split(",")[1]) == res["final_loss"]

    def test_deterministic_per_seed(self, capsys):
        main(list(self.args))
        first = capsys.readouterr().out
        main(list(self.args))
        second = capsys.readouterr().out
        assert first == second


class TestSweepRho:
    args = ("sweep-rho", "--dim", "5", "--data-points", "40",
            "--condition-number", "5", "--problem-seed", "3",
            "--workers", "3", "--batch-size", "10",
            "--learning-rate", "0.2", "--rho", "0,2", "--replicates", "2",
            "--target-gap", "1e-3", "--max-iters", "4000", "--seed", "7")

    def test_repeat_run_is_bit_identical(self, capsys, tmp_path):
        out_a = tmp_path / "a.csv"
        out_b = tmp_path / "b.csv"
        main(list(self.args) + ["--output", str(out_a)])
        first = capsys.readouterr().out
        main(list(self.args) + ["--output", str(out_b)])
        second = capsys.readouterr().out
        assert first == second
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_envelope_fields(self, capsys):
        code, env, _ = run_cli(capsys, *self.args)
        assert code == 0
        res = env["results"]
        assert res["rho"] == [0.0, 2.0]
        assert len(res["median_iterations"]) == 2
        assert env["seed"] == 7


class TestStats:
    def test_trace_echo(self, capsys, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("iteration,sigma_x2,sigma_n2\n0,2.0,1.0\n5,1.0,0.5\n")
        code, env, _ = run_cli(capsys, "stats", "--trace", str(path))
        assert code == 0
        assert env["results"]["entries"] == 2
        np.testing.assert_allclose(env["results"]["sigma_x2"], [2.0, 1.0],
                                   rtol=0)

    def test_samples_with_pearson(self, capsys, tmp_path):
        rng = np.random.default_rng(3)
        g = rng.standard_normal((200, 3))
        w0 = g + rng.standard_normal((200, 3))
        np.savetxt(tmp_path / "g.csv", g, delimiter=",")
        np.savetxt(tmp_path / "w0.csv", w0, delimiter=",")
        (tmp_path / "h.json").write_text(json.dumps(
            {"global": "g.csv", "workers": ["w0.csv"]}))
        code, env, _ = run_cli(capsys, "stats", "--samples",
                               str(tmp_path / "h.json"),
                               "--pearson-dims", "0,1", "--bins", "10")
        assert code == 0
        res = env["results"]
        assert res["num_samples"] == 200
        assert res["workers"] == 1
        assert -1.0 <= res["pearson"] <= 1.0
        assert 0.0 <= res["fit_r_squared"] <= 1.0

    def test_exactly_one_source(self, capsys, tmp_path):
        code, _, _ = run_cli(capsys, "stats")
        assert code == 1
        path = tmp_path / "trace.csv"
        path.write_text("iteration,sigma_x2,sigma_n2\n0,1.0,1.0\n")
        code, _, _ = run_cli(capsys, "stats", "--trace", str(path),
                             "--samples", "whatever.json")
        assert code == 1

    def test_missing_file_is_input_error(self, capsys, tmp_path):
        code, _, _ = run_cli(capsys, "stats", "--trace",
                             str(tmp_path / "absent.csv"))
        assert code == 1


class TestOutputHandling:
    def test_env_var_resolves_relative_paths(self, capsys, tmp_path,
                                             monkeypatch):
        monkeypatch.setenv("AGGRATE_OUTPUT_DIR", str(tmp_path))
        code, env, _ = run_cli(capsys, "sumrate", "--sigma-x2", "1",
                               "--sigma-n2", "1", "--workers", "10",
                               "--distortion", "0.2", "--output", "out.csv")
        assert code == 0
        text = (tmp_path / "out.csv").read_text()
        assert text.startswith("key,value")
        assert "sum_rate" in text

    def test_absolute_path_wins_over_env_var(self, capsys, tmp_path,
                                             monkeypatch):
        monkeypatch.setenv("AGGRATE_OUTPUT_DIR", str(tmp_path / "elsewhere"))
        target = tmp_path / "direct.csv"
        code, _, _ = run_cli(capsys, "signsgd", "--sigma-x2", "1",
                             "--sigma-n2", "1", "--workers", "10",
                             "--output", str(target))
        assert code == 0
        assert target.exists()

    def test_unwritable_output_fails_without_json(self, capsys, tmp_path):
        code, env, err = run_cli(capsys, "signsgd", "--sigma-x2", "1",
                                 "--sigma-n2", "1", "--workers", "10",
                                 "--output", str(tmp_path / "no" / "dir.csv"))
        assert code == 1
        assert env is None
        assert err

    def test_key_value_csv_round_trips_json(self, capsys, tmp_path):
        out = tmp_path / "res.csv"
        code, env, _ = run_cli(capsys, "sumrate", "--sigma-x2", "1",
                               "--sigma-n2", "1,2", "--distortion", "1",
                               "--output", str(out))
        assert code == 0
        rows = out.read_text().strip().split("\n")
        assert rows[0] == "key,value"
        parsed = {}
        import csv as csv_mod
        for row in csv_mod.reader(rows[1:]):
            parsed[row[0]] = json.loads(row[1])
        assert parsed == env["results"]


class TestUsageErrors:
    def test_missing_required_flag(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["sumrate", "--sigma-x2", "1"])
        assert info.value.code == 1

    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == 1

    def test_bad_float_list(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["sumrate", "--sigma-x2", "1", "--sigma-n2", "1,x",
                  "--workers", "2", "--distortion", "1"])
        assert info.value.code == 1

    def test_ragged_matrix(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["boundary", "--sigma-x2", "1,1", "--noise-var", "1,1;1",
                  "--distortion", "1"])
        assert info.value.code == 1


class TestModuleEntryPoint:
    def test_python_dash_m(self):
        proc = subprocess.run(
            [sys.executable, "-m", "aggrate", "sumrate", "--sigma-x2", "1",
             "--sigma-n2", "1", "--workers", "10", "--distortion", "0.2"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        env = json.loads(proc.stdout)
        np.testing.assert_allclose(env["results"]["sum_rate"],
                                   6.292481250360578, rtol=1e-14)
