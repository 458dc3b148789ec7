import json

import numpy as np
import pytest

from l2e import harness
from l2e.cli import main
from l2e.config import ExperimentConfig
from l2e.plots import band, emit_plots
from l2e.sac import SAC, NonFiniteLoss

SMOKE = """
experiment.method = l2e
experiment.env = push
experiment.total_steps = 2500
experiment.eval_interval = 1000
experiment.eval_rollouts = 3
experiment.warmup = 500
experiment.update_ratio = 0.02
replay.strategy = bias
replay.n = 3
replay.m = 10
learner.hidden = 16,16
learner.batch = 32
"""


def smoke(**overrides):
    return ExperimentConfig.loads(SMOKE, {k.replace("__", "."): v for k, v in overrides.items()})


# -- configuration -----------------------------------------------------------


def test_config_roundtrip_and_hash():
    cfg = smoke()
    again = ExperimentConfig.loads(cfg.dumps())
    assert again == cfg and again.hash() == cfg.hash()
    assert cfg.learner.hidden == (16, 16)
    assert ExperimentConfig().learner.hidden == (256, 161, 102, 64)
    assert smoke(learner__lr="1e-3").hash() != cfg.hash()


def test_config_defaults_from_protocol():
    cfg = ExperimentConfig()
    assert cfg.experiment.agents == 10 and cfg.experiment.eval_rollouts == 30
    assert (cfg.replay.strategy, cfg.replay.n, cfg.replay.m) == ("bias", 10, 1000)


def test_config_errors():
    with pytest.raises(KeyError):
        ExperimentConfig.loads("experiment.colour = red")
    with pytest.raises(ValueError):
        ExperimentConfig.loads("experiment.method = plan_im\nexperiment.env = maze")
    with pytest.raises(ValueError):
        ExperimentConfig.loads("replay.n = 20\nreplay.m = 10")
    with pytest.raises(ValueError):
        ExperimentConfig.loads("replay.her = final")
    with pytest.raises(ValueError):
        ExperimentConfig.loads("just a line")
    with pytest.raises(ValueError):
        ExperimentConfig.loads("env.noise = maybe")


def test_config_parses_comments_and_none():
    cfg = ExperimentConfig.loads("shaping.density = 12  # ablation\nshaping.density = none\n"
                                 "experiment.total_steps = 1e6")
    assert cfg.shaping.density is None and cfg.experiment.total_steps == 1_000_000


# -- training ----------------------------------------------------------------


def test_smoke_run_buffer_arithmetic():
    cfg = smoke()
    res = harness.train(cfg, seed=0)
    assert res.episodes == 10 and res.steps == 2500
    # each episode is stored once plus once per replay plan it was relabeled with
    expected = sum(T * (1 + c) for T, c in zip(res.episode_lengths, res.replay_counts))
    assert res.buffer.total_added == expected
    assert res.buffer.size == min(expected, cfg.experiment.buffer_capacity)
    # replay plans are drawn from the buffer: after the first episode n are always available
    assert res.replay_counts[0] == 1 and all(c == 3 for c in res.replay_counts[3:])


def test_full_episodes_give_stated_buffer_size():
    # a vanishing goal tolerance keeps every episode at the full 250 steps
    cfg = smoke(replay__strategy="uniform", replay__n="2", experiment__eval_rollouts="1",
                env__goal_tolerance="1e-9")
    res = harness.train(cfg, seed=3)
    assert res.episode_lengths == [250] * 10
    assert res.replay_counts == [1] + [2] * 9
    # the first episode finds only its own plan in the buffer
    assert res.buffer.total_added == 250 * (1 + 1) + 9 * 250 * (1 + 2)


def test_identical_seed_identical_metrics(tmp_path):
    cfg = smoke()
    harness.train(cfg, 4, tmp_path / "a")
    harness.train(cfg, 4, tmp_path / "b")
    a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    harness.train(cfg, 5, tmp_path / "c")
    assert a != (tmp_path / "c" / "metrics.jsonl").read_bytes()


def test_metrics_header_and_records(tmp_path):
    cfg = smoke()
    harness.train(cfg, 0, tmp_path)
    recs = harness.read_metrics(tmp_path / "metrics.jsonl")
    assert recs[0]["type"] == "header" and recs[0]["config_hash"] == cfg.hash()
    evals = [r for r in recs if r["type"] == "eval"]
    assert [r["step"] for r in evals] == [0, 1000, 2000, 2500]
    for r in evals:
        assert len(r["successes"]) == 3
        assert r["success_rate"] == sum(r["successes"]) / 3
    assert evals[-1]["losses"]
    timings = (tmp_path / "timings.jsonl").read_text().splitlines()
    assert len(timings) == len(evals)


@pytest.mark.parametrize("method,env", [("her", "push"), ("subgoal_rl", "push"),
                                        ("plan", "obstacle"), ("plan_im", "push"),
                                        ("l2e", "maze"), ("her", "maze"), ("l2e", "obstacle")])
def test_every_method_runs(tmp_path, method, env):
    cfg = smoke(experiment__method=method, experiment__env=env, baseline__im_episodes="3",
                baseline__im_max_epochs="2", experiment__total_steps="1000")
    res = harness.train(cfg, 0, tmp_path)
    assert res.metrics[-1]["type"] == "eval"
    rec = harness.evaluate(tmp_path / "checkpoint.npz", rollouts=2)
    assert len(rec["successes"]) == 2


def test_nonfinite_loss_checkpoints_and_halts(tmp_path, monkeypatch):
    def boom(self, batch):
        raise NonFiniteLoss("critic1", {"target": float("nan")})

    monkeypatch.setattr(SAC, "update", boom)
    with pytest.raises(NonFiniteLoss):
        harness.train(smoke(), 0, tmp_path)
    recs = harness.read_metrics(tmp_path / "metrics.jsonl")
    assert recs[-1]["type"] == "error" and recs[-1]["loss"] == "critic1"
    assert (tmp_path / "checkpoint.npz").exists()


def test_evaluate_recount_and_config_mismatch(tmp_path):
    cfg = smoke(experiment__method="plan", experiment__total_steps="0")
    harness.train(cfg, 0, tmp_path)
    rec = harness.evaluate(tmp_path / "checkpoint.npz", cfg, rollouts=10)
    assert rec["success_rate"] == np.mean(rec["successes"])
    with pytest.raises(ValueError):
        harness.evaluate(tmp_path / "checkpoint.npz", smoke(), rollouts=1)


def test_aggregate_identical_agents():
    agg = harness.aggregate([1.0, 1.0, 1.0])
    assert agg == {"mean": 1.0, "sem": 0.0, "agents": 3}
    rates = [0.2, 0.5, 0.9, 0.4]
    agg = harness.aggregate(rates)
    m = sum(rates) / 4
    sd = (sum((r - m) ** 2 for r in rates) / 3) ** 0.5
    assert agg["mean"] == pytest.approx(m) and agg["sem"] == pytest.approx(sd / 2)


def test_train_agents_dirs(tmp_path, monkeypatch):
    monkeypatch.setenv("L2E_THREADS", "1")
    cfg = smoke(experiment__method="plan", experiment__total_steps="0", experiment__agents="2")
    out = harness.train_agents(cfg, tmp_path)
    assert len(out) == 2
    heads = [harness.read_metrics(tmp_path / f"agent_{i}" / "metrics.jsonl")[0] for i in range(2)]
    assert [h["seed"] for h in heads] == [0, 1]


# -- plot data -----------------------------------------------------------------


def fake_run(path, method, rates_by_step, seed=0):
    path.mkdir(parents=True)
    lines = [{"type": "header", "config_hash": "x", "method": method, "env": "push", "seed": seed}]
    for step, rate in rates_by_step.items():
        lines.append({"type": "eval", "step": step, "success_rate": rate, "successes": []})
    (path / "metrics.jsonl").write_text("\n".join(json.dumps(r) for r in lines) + "\n")


def test_emit_plots_band_recount(tmp_path):
    per_agent = [0.2, 0.6, 0.7]
    for i, r in enumerate(per_agent):
        fake_run(tmp_path / "runs" / f"l2e_{i}", "l2e", {0: 0.0, 100: r}, seed=i)
    fake_run(tmp_path / "runs" / "her_0", "her", {0: 0.0, 100: 0.1})
    written = emit_plots([tmp_path / "runs"], tmp_path / "out")
    names = sorted(p.name for p in written)
    assert names == ["her_push.tsv", "l2e_push.tsv", "render.py"]
    rows = (tmp_path / "out" / "l2e_push.tsv").read_text().splitlines()
    step, mean, half, agents = rows[2].split("\t")
    m = sum(per_agent) / 3
    sd = (sum((x - m) ** 2 for x in per_agent) / 2) ** 0.5
    assert int(step) == 100 and int(agents) == 3
    assert float(mean) == pytest.approx(m) and float(half) == pytest.approx(sd / 3 ** 0.5)
    assert band([0.5]) == (0.5, 0.0)


def test_emit_plots_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError):
        emit_plots([tmp_path / "empty"], tmp_path / "out")


# -- command line ----------------------------------------------------------------


def test_cli_commands(tmp_path, capsys):
    cfg_path = tmp_path / "smoke.cfg"
    cfg_path.write_text(SMOKE)
    assert main(["train", "--config", str(cfg_path), "--seed", "0", "--out",
                 str(tmp_path / "run"), "--set", "experiment.total_steps=1000"]) == 0
    capsys.readouterr()
    assert main(["eval", "--ckpt", str(tmp_path / "run" / "checkpoint.npz"),
                 "--episodes", "2"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert len(rec["successes"]) == 2
    assert main(["inspect-plan", "--env", "push", "--seed", "0"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split()[:2] == ["50", "6"] and len(lines) == 51
    assert main(["plot", "--runs", str(tmp_path / "run"), "--out", str(tmp_path / "plots")]) == 0
    assert (tmp_path / "plots" / "l2e_push.tsv").exists()
    (tmp_path / "nothing").mkdir()
    assert main(["plot", "--runs", str(tmp_path / "nothing"), "--out", str(tmp_path / "p")]) == 2
