"""CLI surface: each subcommand end to end, exit codes, determinism."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from apranking.tensorio import write_tensors

CLI = [sys.executable, "-m", "apranking.cli"]


def run_cli(args, cwd):
    env = dict(os.environ, PYTHONPATH=os.pathsep.join(sys.path))
    return subprocess.run(CLI + args, capture_output=True, text=True, cwd=cwd, env=env)


@pytest.fixture
def out_dir(tmp_path):
    return str(tmp_path / "out")


class TestBenchLoss:
    def test_quadlinear_curve_contains_anchor_row(self, tmp_path, out_dir):
        res = run_cli(["bench-loss", "--losses", "quadlinear", "--delta", "0.05", "--out", out_dir], tmp_path)
        assert res.returncode == 0, res.stderr
        rows = open(os.path.join(out_dir, "loss_curve_quadlinear.csv")).read().splitlines()
        header, data = rows[0], rows[1:]
        assert header == "x,value,grad"
        anchor = [r for r in data if abs(float(r.split(",")[0]) - 0.1) < 1e-9]
        assert anchor, "gap sweep must include x = 0.1"
        _, value, grad = anchor[0].split(",")
        assert float(value) == pytest.approx(5.0, abs=1e-9)
        assert float(grad) == pytest.approx(40.0, abs=1e-9)

    def test_smooth_tail_gradient(self, tmp_path, out_dir):
        res = run_cli(["bench-loss", "--losses", "smooth", "--tau", "0.01", "--out", out_dir], tmp_path)
        assert res.returncode == 0, res.stderr
        rows = open(os.path.join(out_dir, "loss_curve_smooth.csv")).read().splitlines()[1:]
        tail = [r for r in rows if abs(float(r.split(",")[0]) - 0.5) < 1e-9]
        assert float(tail[0].split(",")[2]) < 1e-18

    def test_contrast_check_in_report(self, tmp_path, out_dir):
        res = run_cli(["bench-loss", "--out", out_dir], tmp_path)
        assert res.returncode == 0
        report = json.load(open(os.path.join(out_dir, "bench_loss_report.json")))
        assert report["gradient_contrast"]["pass"] is True
        assert report["gradient_contrast"]["ratio"] > 1e15
        for name, err in report["fd_max_rel_err"].items():
            assert err < 1e-6

    def test_unknown_loss_usage_error(self, tmp_path, out_dir):
        res = run_cli(["bench-loss", "--losses", "nonsense", "--out", out_dir], tmp_path)
        assert res.returncode == 2


def tiny_config(tmp_path, **overrides):
    from apranking.trainer import TrainConfig, config_to_dict
    from apranking.synthetic import SyntheticConfig
    from apranking.trainer import HeldoutConfig

    from dataclasses import replace

    cfg = TrainConfig(
        synthetic=SyntheticConfig(
            num_clips=12, num_groups=4, frames=5, patches=2, dim=8, teacher_dim=4,
            signal_dim=6, noise=0.1, nuisance_scale=3.0, seed=0,
        ),
        heldout=HeldoutConfig(num_clips=12, num_groups=4),
        groups_per_batch=2,
        clips_per_group=3,
        iterations=8,
        eval_every=0,
        seed=0,
    )
    cfg = replace(cfg, **overrides) if overrides else cfg
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config_to_dict(cfg)))
    return str(path)


class TestTrain:
    def test_zero_iterations_checkpoint_is_initialization(self, tmp_path, out_dir):
        config = tiny_config(tmp_path)
        res = run_cli(["train", "--config", config, "--iterations", "0", "--out", out_dir], tmp_path)
        assert res.returncode == 0, res.stderr
        from apranking.model import init_model
        from apranking.tensorio import read_checkpoint

        tensors, _ = read_checkpoint(os.path.join(out_dir, "checkpoint.bin"))
        fresh = init_model(8, seed=0, init_noise=0.02)
        np.testing.assert_array_equal(tensors["weight"], fresh.weight.value)

    def test_deterministic_reruns_byte_identical(self, tmp_path):
        config = tiny_config(tmp_path)
        outs = []
        for name in ("run1", "run2"):
            out = str(tmp_path / name)
            res = run_cli(
                ["train", "--config", config, "--seed", "7", "--deterministic", "--out", out],
                tmp_path,
            )
            assert res.returncode == 0, res.stderr
            outs.append(out)
        for fname in ("train_report.json", "history.csv", "checkpoint.bin"):
            a = open(os.path.join(outs[0], fname), "rb").read()
            b = open(os.path.join(outs[1], fname), "rb").read()
            assert a == b, f"{fname} differs between identical runs"

    def test_comparative_mode(self, tmp_path, out_dir):
        config = tiny_config(tmp_path)
        res = run_cli(
            ["train", "--config", config, "--losses", "quadlinear,triplet", "--out", out_dir],
            tmp_path,
        )
        assert res.returncode == 0, res.stderr
        report = json.load(open(os.path.join(out_dir, "train_report.json")))
        assert report["comparative"] is True
        assert set(report["results"]) == {"quadlinear", "triplet"}
        for res_block in report["results"].values():
            assert "micro_ap" in res_block["metrics"]

    def test_bad_config_exits_2(self, tmp_path, out_dir):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"synthetic": {"bogus_key": 3}}))
        res = run_cli(["train", "--config", str(bad), "--out", out_dir], tmp_path)
        assert res.returncode == 2
        assert "bogus_key" in res.stderr


class TestEval:
    def test_tensor_file_micro_ap_anchor(self, tmp_path, out_dir):
        scores = np.array([[0.9, 0.1], [0.8, 0.7]])
        labels = np.array([[1.0, 0.0], [0.0, 1.0]])
        path = tmp_path / "scores.tensors"
        write_tensors(path, {"scores": scores, "labels": labels})
        res = run_cli(["eval", "--scores", str(path), "--verify", "--out", out_dir], tmp_path)
        assert res.returncode == 0, res.stderr
        report = json.load(open(os.path.join(out_dir, "eval_report.json")))
        assert report["micro_ap"] == pytest.approx(5 / 6, abs=1e-9)
        assert report["verify"]["oracle_mismatches"] == 0

    def test_csv_perfect_ranking(self, tmp_path, out_dir):
        csv = tmp_path / "scores.csv"
        csv.write_text("query,score,label\nq1,0.9,1\nq1,0.1,0\nq2,0.8,1\nq2,0.2,0\n")
        res = run_cli(["eval", "--csv", str(csv), "--out", out_dir], tmp_path)
        assert res.returncode == 0, res.stderr
        report = json.load(open(os.path.join(out_dir, "eval_report.json")))
        assert report["map"] == 1.0 and report["micro_ap"] == 1.0

    def test_verify_over_random_files(self, tmp_path, out_dir):
        rng = np.random.default_rng(0)
        scores = rng.standard_normal((100, 16))
        labels = (rng.uniform(size=(100, 16)) < 0.3).astype(np.float64)
        labels[:, 0] = 1.0  # every query needs a positive
        path = tmp_path / "r.tensors"
        write_tensors(path, {"scores": scores, "labels": labels})
        res = run_cli(["eval", "--scores", str(path), "--verify", "--out", out_dir], tmp_path)
        assert res.returncode == 0, res.stderr
        report = json.load(open(os.path.join(out_dir, "eval_report.json")))
        assert report["verify"]["pass"] is True

    def test_no_positives_exits_2(self, tmp_path, out_dir):
        csv = tmp_path / "scores.csv"
        csv.write_text("query,score,label\nq1,0.9,0\n")
        res = run_cli(["eval", "--csv", str(csv), "--out", out_dir], tmp_path)
        assert res.returncode == 2

    def test_shape_mismatch_exits_2(self, tmp_path, out_dir):
        path = tmp_path / "bad.tensors"
        write_tensors(path, {"scores": np.zeros((2, 3)), "labels": np.zeros((2, 2))})
        res = run_cli(["eval", "--scores", str(path), "--out", out_dir], tmp_path)
        assert res.returncode == 2


class TestAblate:
    def test_k_t_sweep_with_avgpool_cross_check(self, tmp_path, out_dir):
        config = tiny_config(tmp_path)
        res = run_cli(
            ["ablate", "--axis", "k_t", "--grid", "0.0,0.03,0.1,1.0", "--config", config, "--out", out_dir],
            tmp_path,
        )
        assert res.returncode == 0, res.stderr
        report = json.load(open(os.path.join(out_dir, "ablate_k_t.json")))
        assert len(report["rows"]) == 4
        full = next(r for r in report["rows"] if r["value"] == 1.0)
        assert full["map"] == report["avgpool"]["map"]
        assert full["micro_ap"] == report["avgpool"]["micro_ap"]

    def test_delta_v_sweep_trains_per_value(self, tmp_path, out_dir):
        config = tiny_config(tmp_path)
        res = run_cli(
            ["ablate", "--axis", "delta_v", "--grid", "0.01,0.05", "--config", config,
             "--iterations", "4", "--out", out_dir],
            tmp_path,
        )
        assert res.returncode == 0, res.stderr
        report = json.load(open(os.path.join(out_dir, "ablate_delta_v.json")))
        assert [r["value"] for r in report["rows"]] == [0.01, 0.05]

    def test_rates_axis(self, tmp_path, out_dir):
        config = tiny_config(tmp_path)
        res = run_cli(
            ["ablate", "--axis", "rates", "--grid", "0.3:0.3,0.4:0.4", "--config", config,
             "--iterations", "4", "--out", out_dir],
            tmp_path,
        )
        assert res.returncode == 0, res.stderr

    def test_empty_grid_exits_2(self, tmp_path, out_dir):
        res = run_cli(["ablate", "--axis", "k_t", "--grid", ",", "--out", out_dir], tmp_path)
        assert res.returncode == 2

    def test_unknown_axis_exits_2(self, tmp_path, out_dir):
        res = run_cli(["ablate", "--axis", "bogus", "--grid", "1", "--out", out_dir], tmp_path)
        assert res.returncode == 2
