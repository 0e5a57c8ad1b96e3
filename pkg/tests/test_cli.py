"""CLI subcommands end to end on the small env: artifacts, exit codes,
reproducibility, and the self-describing run directory."""

import csv
import json
import os

import pytest

from coproq.cli import main

GRID_TRAINER = {"total_iters": 3, "rollout_len": 64, "queries_per_iter": 2,
                "segment_len": 8, "eval_episodes": 2,
                "align_max_epochs": 10}


def write_config(tmp_path, name="run.json", **over):
    doc = {"method": "icopro", "seed": 0,
           "env": {"kind": "gridworld"},
           "labeler": {"type": "oracle"},
           "trainer": dict(GRID_TRAINER)}
    doc.update(over)
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def masked_metrics(path):
    """metrics.csv content with the wall-clock column dropped."""
    rows = []
    with open(path) as f:
        for row in csv.reader(f):
            assert row[-1] == "wall_s" or row[-1] != ""
            rows.append(row[:-1])
    return rows


class TestTrain:
    def test_full_run_artifacts(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "run1")
        assert main(["train", "--config", cfg, "--out", out]) == 0
        printed = capsys.readouterr().out
        assert f"run complete: {out}" in printed

        snap = json.load(open(os.path.join(out, "config.json")))
        assert snap["method"] == "icopro" and snap["seed"] == 0
        rows = list(csv.DictReader(open(os.path.join(out, "metrics.csv"))))
        assert len(rows) == 3
        assert int(rows[-1]["env_steps"]) == 192
        assert os.path.exists(os.path.join(out, "labels.jsonl"))
        assert os.path.exists(os.path.join(out, "align.jsonl"))
        assert os.path.exists(
            os.path.join(out, "checkpoints", "final.ckpt"))

    def test_seed_override_lands_in_snapshot(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "run-seeded")
        assert main(["train", "--config", cfg, "--out", out,
                     "--seed", "5"]) == 0
        snap = json.load(open(os.path.join(out, "config.json")))
        assert snap["seed"] == 5

    def test_identical_runs_are_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        d1, d2 = str(tmp_path / "d1"), str(tmp_path / "d2")
        assert main(["train", "--config", cfg, "--out", d1]) == 0
        assert main(["train", "--config", cfg, "--out", d2]) == 0
        assert (masked_metrics(os.path.join(d1, "metrics.csv"))
                == masked_metrics(os.path.join(d2, "metrics.csv")))
        for name in ("labels.jsonl", "align.jsonl", "config.json",
                     os.path.join("checkpoints", "final.ckpt")):
            a = open(os.path.join(d1, name), "rb").read()
            b = open(os.path.join(d2, name), "rb").read()
            assert a == b, f"{name} differs between identical runs"

    def test_refuses_nonempty_out_dir(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "busy")
        os.makedirs(out)
        open(os.path.join(out, "leftover.txt"), "w").write("x")
        assert main(["train", "--config", cfg, "--out", out]) == 1
        assert "--force" in capsys.readouterr().err

    def test_force_overwrites(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "busy2")
        os.makedirs(out)
        open(os.path.join(out, "leftover.txt"), "w").write("x")
        assert main(["train", "--config", cfg, "--out", out,
                     "--force"]) == 0

    def test_bad_config_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, trainer={"nope": 1})
        assert main(["train", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == 2
        err = capsys.readouterr().err
        assert "config error" in err and "config.trainer.nope" in err

    def test_missing_config_file_exits_2(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "gone.json"),
                     "--out", str(tmp_path / "x")]) == 2

    def test_human_labeler_redirected_to_label_serve(self, tmp_path,
                                                     capsys):
        cfg = write_config(tmp_path, labeler={"type": "human"})
        assert main(["train", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == 2
        assert "label-serve" in capsys.readouterr().err

    def test_rainbow_lite_budget(self, tmp_path):
        cfg = write_config(
            tmp_path, method="rainbow_lite",
            trainer={"total_iters": 2, "rollout_len": 100,
                     "rl_eval_every": 100, "rl_warmup": 50,
                     "rl_batch_size": 8, "eval_episodes": 2})
        out = str(tmp_path / "rl")
        assert main(["train", "--config", cfg, "--out", out]) == 0
        rows = list(csv.DictReader(open(os.path.join(out, "metrics.csv"))))
        assert [int(r["env_steps"]) for r in rows] == [100, 200]

    def test_bc_needs_labels(self, tmp_path, capsys):
        cfg = write_config(tmp_path, method="bc")
        assert main(["train", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == 2
        assert "--labels" in capsys.readouterr().err

    def test_bc_from_parent_labels(self, tmp_path):
        cfg = write_config(tmp_path)
        parent = str(tmp_path / "parent")
        assert main(["train", "--config", cfg, "--out", parent]) == 0
        bc_cfg = write_config(tmp_path, name="bc.json", method="bc")
        out = str(tmp_path / "bc")
        assert main(["train", "--config", bc_cfg, "--out", out,
                     "--labels", os.path.join(parent, "labels.jsonl"),
                     "--parent-env-steps", "192"]) == 0
        rows = list(csv.DictReader(open(os.path.join(out, "metrics.csv"))))
        assert len(rows) == 1
        assert int(rows[0]["env_steps"]) == 192


class TestEval:
    @pytest.fixture()
    def run_dir(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "run")
        assert main(["train", "--config", cfg, "--out", out]) == 0
        return out

    def test_run_dir_reproduces_final_row(self, run_dir, capsys):
        capsys.readouterr()
        assert main(["eval", "--run-dir", run_dir]) == 0
        printed = dict(line.split(" ", 1) for line in
                       capsys.readouterr().out.strip().split("\n"))
        final = list(csv.DictReader(
            open(os.path.join(run_dir, "metrics.csv"))))[-1]
        for k in ("crash_rate", "distance_avg", "speed_avg",
                  "lane_change_ratio", "lane_pos_avg", "steps_avg"):
            assert printed[k] == final[k], k

    def test_checkpoint_against_wrong_env_exits_2(self, run_dir, capsys):
        ckpt = os.path.join(run_dir, "checkpoints", "final.ckpt")
        # default env is the driving one; the checkpoint is the grid net
        assert main(["eval", "--checkpoint", ckpt]) == 2
        assert "does not match the env" in capsys.readouterr().err

    def test_checkpoint_with_explicit_config(self, run_dir, tmp_path,
                                             capsys):
        ckpt = os.path.join(run_dir, "checkpoints", "final.ckpt")
        cfg = write_config(tmp_path, name="eval-env.json",
                           method="rainbow_lite")
        capsys.readouterr()
        assert main(["eval", "--checkpoint", ckpt, "--config", cfg,
                     "--episodes", "2", "--seed", "11"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("crash_rate ")

    def test_needs_some_target(self, capsys):
        assert main(["eval"]) == 2
        assert "--run-dir or --checkpoint" in capsys.readouterr().err


class TestReplayLabels:
    def test_digest_stable_and_rewrite_identical(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "run")
        assert main(["train", "--config", cfg, "--out", out]) == 0
        labels = os.path.join(out, "labels.jsonl")
        capsys.readouterr()

        rewritten = str(tmp_path / "replayed.jsonl")
        assert main(["replay-labels", "--labels", labels,
                     "--out", rewritten]) == 0
        first = capsys.readouterr().out
        assert main(["replay-labels", "--labels", labels]) == 0
        second = capsys.readouterr().out

        d1 = [l for l in first.splitlines() if l.startswith("digest ")]
        d2 = [l for l in second.splitlines() if l.startswith("digest ")]
        assert d1 == d2 and len(d1) == 1
        assert open(rewritten, "rb").read() == open(labels, "rb").read()

        final = list(csv.DictReader(
            open(os.path.join(out, "metrics.csv"))))[-1]
        count = [l for l in first.splitlines()
                 if l.startswith("labels ")][0]
        assert count == f"labels {final['labels_total']}"
        assert any(l.strip().startswith("simulated ")
                   for l in first.splitlines())

    def test_missing_file_exits_2(self, tmp_path):
        assert main(["replay-labels",
                     "--labels", str(tmp_path / "gone.jsonl")]) == 1


class TestCompare:
    def test_groups_by_method(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        dirs = []
        for s in (0, 1):
            d = str(tmp_path / f"icopro-{s}")
            assert main(["train", "--config", cfg, "--out", d,
                         "--seed", str(s)]) == 0
            dirs.append(d)
        csv_out = str(tmp_path / "summary.csv")
        capsys.readouterr()
        assert main(["compare", "--runs", *dirs, "--out", csv_out]) == 0
        table = capsys.readouterr().out
        assert "icopro" in table and "crash_rate" in table

        rows = open(csv_out).read().strip().split("\n")
        assert rows[0].startswith("method,seeds,env_steps,labels_total,"
                                  "crash_rate")
        cells = rows[1].split(",")
        assert cells[0] == "icopro" and cells[1] == "2"
        assert cells[2] == "192"  # mean final env_steps

    def test_empty_metrics_exits_1(self, tmp_path):
        d = tmp_path / "hollow"
        d.mkdir()
        (d / "config.json").write_text("{}")
        (d / "metrics.csv").write_text("iter,env_steps\n")
        assert main(["compare", "--runs", str(d)]) == 1


class TestTrainLabeler:
    def test_writes_checkpoint_and_metrics(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path, method="rainbow_lite",
            trainer={"rl_eval_every": 100, "rl_warmup": 20,
                     "rl_batch_size": 8, "eval_episodes": 2})
        out = str(tmp_path / "labeler")
        assert main(["train-labeler", "--config", cfg, "--out", out,
                     "--steps", "200", "--snapshot", "100"]) == 0
        info = json.load(open(os.path.join(out, "labeler.json")))
        assert os.path.exists(info["checkpoint"])
        assert info["steps"] == 200
        assert os.path.exists(info["snapshots"]["100"])
        assert "crash_rate" in info["metrics"]
        assert "labeler checkpoint:" in capsys.readouterr().out


class TestLabelServe:
    def test_needs_human_labeler(self, tmp_path, capsys):
        cfg = write_config(tmp_path)  # oracle labeler, not human
        assert main(["label-serve", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == 2
        assert "human" in capsys.readouterr().err
