import json
import os

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from softrod import cli, elasticity

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "goldens")


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, args):
    return runner.invoke(cli.main, args, catch_exceptions=False)


class TestValidate:
    def test_all_checks_pass(self, runner):
        result = invoke(runner, ["validate"])
        assert result.exit_code == 0
        lines = [l for l in result.output.splitlines() if l]
        check_lines = [l for l in lines if l.startswith(("PASS", "FAIL"))]
        assert len(check_lines) == 9
        assert all(l.startswith("PASS") for l in check_lines)
        assert "max_error=" in check_lines[0]
        assert lines[-1].endswith("9/9 checks passed")

    def test_tight_tolerance_fails_nonzero_exit(self, runner):
        result = runner.invoke(cli.main, ["validate", "--tol-scale", "1e-9"])
        assert result.exit_code == 1
        assert "FAIL" in result.output

    def test_broken_gradient_is_caught_by_name(self, runner, monkeypatch):
        # sabotage one family's gradient; exactly its check must fail
        real = elasticity.bend_energy

        def flipped(state, frames, rest, with_hessian=False):
            out = real(state, frames, rest, with_hessian)
            return (out[0], -out[1]) + tuple(out[2:])

        monkeypatch.setattr(elasticity, "bend_energy", flipped)
        result = runner.invoke(cli.main, ["validate"])
        assert result.exit_code == 1
        failed = [l for l in result.output.splitlines()
                  if l.startswith("FAIL")]
        assert len(failed) == 1
        assert "bend_energy_gradient_fd" in failed[0]


class TestRollout:
    def args(self, out, extra=()):
        return ["rollout", "--task", "follow_target", "--seed", "5",
                "--episodes", "2", "--envs", "1", "--policy", "random",
                "--out", out, *extra]

    def read(self, out):
        with open(os.path.join(out, "trajectory.jsonl"), "rb") as fh:
            traj = fh.read()
        with open(os.path.join(out, "summary.json")) as fh:
            summary = json.load(fh)
        return traj, summary

    def test_rollout_writes_complete_records(self, runner, tmp_path):
        out = str(tmp_path / "run")
        result = invoke(runner, self.args(out))
        assert result.exit_code == 0
        traj, summary = self.read(out)
        records = [json.loads(l) for l in traj.splitlines()]
        episodes = {r["info"]["episode"] for r in records}
        assert episodes == {0, 1}
        for r in records:
            assert set(r) == {"t", "node_positions", "kappa_bar", "action",
                              "reward", "info"}
        per_ep = {s["episode"]: s["steps"] for s in summary["episodes"]}
        assert sum(per_ep.values()) == len(records)
        assert summary["gamma"] == 0.99
        assert "episode 0:" in result.output
        assert "episode 1:" in result.output

    def test_rerun_is_byte_identical(self, runner, tmp_path):
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        invoke(runner, self.args(out_a))
        invoke(runner, self.args(out_b))
        assert self.read(out_a)[0] == self.read(out_b)[0]

    def test_saved_config_reproduces_run(self, runner, tmp_path):
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        invoke(runner, self.args(out_a))
        result = invoke(runner, ["rollout", "--config",
                                 os.path.join(out_a, "config.yaml"),
                                 "--out", out_b])
        assert result.exit_code == 0
        assert self.read(out_a)[0] == self.read(out_b)[0]

    def test_flags_override_config_file(self, runner, tmp_path):
        out_a = str(tmp_path / "a")
        invoke(runner, self.args(out_a))
        cfg_path = os.path.join(out_a, "config.yaml")
        out_c = str(tmp_path / "c")
        invoke(runner, ["rollout", "--config", cfg_path, "--seed", "6",
                        "--out", out_c])
        with open(os.path.join(out_c, "config.yaml")) as fh:
            assert yaml.safe_load(fh)["seed"] == 6
        assert self.read(out_a)[0] != self.read(out_c)[0]

    def test_unknown_config_key_rejected(self, runner, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("task: follow_target\nrod_flavor: mint\n")
        result = runner.invoke(cli.main, ["rollout", "--config", str(bad)])
        assert result.exit_code != 0
        assert "rod_flavor" in result.output

    def test_missing_policy_file_rejected(self, runner, tmp_path):
        result = runner.invoke(cli.main, [
            "rollout", "--task", "follow_target", "--episodes", "1",
            "--policy", str(tmp_path / "nope.json")])
        assert result.exit_code != 0

    def test_malformed_policy_file_rejected(self, runner, tmp_path):
        bad = tmp_path / "actions.json"
        bad.write_text('{"steps": 3}')
        result = runner.invoke(cli.main, [
            "rollout", "--task", "follow_target", "--episodes", "1",
            "--policy", str(bad)])
        assert result.exit_code != 0


class TestBench:
    def test_single_task_csv(self, runner, tmp_path):
        out = str(tmp_path / "bench")
        result = invoke(runner, ["bench", "--task", "follow_target",
                                 "--envs", "1", "--seed", "0",
                                 "--out", out])
        assert result.exit_code == 0
        with open(os.path.join(out, "bench.csv")) as fh:
            lines = fh.read().strip().splitlines()
        assert lines[0] == \
            "scheme,task,envs,ms_per_vector_step,speedup_vs_explicit"
        rows = [l.split(",") for l in lines[1:]]
        assert [r[0] for r in rows] == ["explicit", "implicit"]
        assert all(r[1] == "follow_target" and r[2] == "1" for r in rows)
        assert float(rows[0][4]) == 1.0
        assert float(rows[0][3]) > 0 and float(rows[1][3]) > 0
        # speedup column is the ratio of the two timing columns
        assert float(rows[1][4]) == pytest.approx(
            float(rows[0][3]) / float(rows[1][3]), rel=1e-3)


class TestCompare:
    def test_compare_reports_both_schemes(self, runner, tmp_path):
        out = str(tmp_path / "cmp")
        result = invoke(runner, ["compare", "--task", "follow_target",
                                 "--seed", "3", "--episodes", "1",
                                 "--policy", "zero", "--out", out])
        assert result.exit_code == 0
        with open(os.path.join(out, "compare.json")) as fh:
            report = json.load(fh)
        assert report["task"] == "follow_target"
        episode = report["episodes"][0]
        for key in ("tip_rms", "return_implicit", "return_explicit",
                    "return_rel_diff", "max_penetration_implicit",
                    "max_penetration_explicit"):
            assert key in episode
        assert np.isfinite(episode["tip_rms"])


class TestGoldenReplays:
    def test_tight_gap_script_succeeds(self, runner, tmp_path):
        golden = os.path.join(GOLDEN_DIR, "obstacles2d_tight.json")
        out = str(tmp_path / "gold2d")
        result = invoke(runner, [
            "rollout", "--task", "obstacles2d_tight", "--seed", "0",
            "--episodes", "1", "--policy", golden, "--out", out])
        assert result.exit_code == 0
        with open(os.path.join(out, "summary.json")) as fh:
            summary = json.load(fh)
        assert summary["episodes"][0]["success"] is True

    def test_follow_script_reaches_target(self, runner, tmp_path):
        golden = os.path.join(GOLDEN_DIR, "follow_target.json")
        out = str(tmp_path / "goldft")
        result = invoke(runner, [
            "rollout", "--task", "follow_target", "--seed", "0",
            "--episodes", "1", "--policy", golden, "--out", out])
        assert result.exit_code == 0
        with open(os.path.join(out, "trajectory.jsonl")) as fh:
            dists = [json.loads(l)["info"]["distance"] for l in fh]
        assert min(dists) <= 0.02
