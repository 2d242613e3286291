"""CLI surface: exit codes, error reporting, partial logs, sweep layout."""

import os

import pytest

from tdmpclab import harness
from tdmpclab.cli import main
from tdmpclab.exceptions import NumericsError
from tdmpclab.metrics import read_metrics

MICRO_CFG = """
env.name = point-mass-chain
env.dim = 2
run.seed = 5
run.total_steps = {total}
run.pretrain_steps = 16
run.pretrain_updates = 1
run.batch_size = 8
run.log_interval = {log}
run.eval_episodes = 1
run.eval_value_samples = 2
run.out_dir = {out}
model.latent_dim = 10
model.encoder_hidden = 16
model.head_hidden = 16
model.ensemble = 2
planner.horizon = 2
planner.iterations = 2
planner.samples = 12
planner.elites = 4
planner.policy_rollouts = 3
buffer.capacity = 2000
"""


def write_cfg(tmp_path, total=8, log=4, out=None):
    out = out or str(tmp_path / "run")
    path = tmp_path / "run.cfg"
    path.write_text(MICRO_CFG.format(total=total, log=log, out=out))
    return str(path), out


def test_train_then_eval_roundtrip(tmp_path, capsys):
    cfg_path, out = write_cfg(tmp_path)
    assert main(["train", "--config", cfg_path]) == 0
    assert os.path.exists(os.path.join(out, "metrics.csv"))
    assert main(["eval", "--checkpoint", os.path.join(out, "checkpoint.npz"),
                 "--episodes", "2"]) == 0
    text = capsys.readouterr().out
    assert "overestimation ratio" in text


def test_train_variant_and_seed_flags_override(tmp_path):
    cfg_path, out = write_cfg(tmp_path)
    assert main(["train", "--config", cfg_path, "--variant", "bc",
                 "--seed", "9", "--out", str(tmp_path / "bc9")]) == 0
    with open(tmp_path / "bc9" / "config.txt") as fh:
        echo = fh.read()
    assert "run.variant = bc" in echo
    assert "run.seed = 9" in echo


def test_unknown_config_key_exits_nonzero(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("run.seed = 1\nplanner.warp_factor = 9\n")
    assert main(["train", "--config", str(path)]) == 2
    assert "warp_factor" in capsys.readouterr().err


def test_config_without_equals_names_line(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("run.seed = 1\nthis is not a pair\n")
    assert main(["train", "--config", str(path)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_missing_checkpoint_exits_nonzero(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "no.npz"),
                 "--episodes", "1"]) == 2
    assert "error:" in capsys.readouterr().err


def test_mid_run_failure_leaves_partial_log(tmp_path, monkeypatch, capsys):
    cfg_path, out = write_cfg(tmp_path, total=12, log=2)
    real = harness.train_step
    calls = {"n": 0}

    def wrapped(agent):
        calls["n"] += 1
        if calls["n"] > 5:
            raise NumericsError("injected blow-up")
        return real(agent)

    monkeypatch.setattr(harness, "train_step", wrapped)
    assert main(["train", "--config", cfg_path]) == 2
    assert "injected blow-up" in capsys.readouterr().err
    rows = read_metrics(os.path.join(out, "metrics.csv"))
    assert [r.env_step for r in rows] == [2, 4]


def test_theory_check_all_small(capsys):
    assert main(["theory-check", "--mdps", "4"]) == 0
    out = capsys.readouterr().out
    assert out.count("[ok]") == 4


def test_toy_graph_reports_residual(capsys):
    assert main(["toy-graph", "--delta", "0.25", "--episodes", "3"]) == 0
    out = capsys.readouterr().out
    assert "residual error at poor terminal: 0.25" in out
    assert "visited poor terminal: False" in out


def test_toy_graph_rejects_negative_delta(capsys):
    assert main(["toy-graph", "--delta", "-1"]) == 2


def test_ablate_requires_exactly_one_axis(tmp_path, capsys):
    cfg_path, _ = write_cfg(tmp_path)
    assert main(["ablate", "--config", cfg_path]) == 2
    assert main(["ablate", "--config", cfg_path, "--betas", "0",
                 "--horizons", "1"]) == 2


def test_ablate_rejects_bad_beta_token(tmp_path, capsys):
    cfg_path, _ = write_cfg(tmp_path)
    assert main(["ablate", "--config", cfg_path, "--betas", "0,fast"]) == 2
    assert "fast" in capsys.readouterr().err


def test_ablate_betas_layout_one_csv_per_variant(tmp_path):
    cfg_path, _ = write_cfg(tmp_path, total=4, log=4)
    root = str(tmp_path / "sweep")
    assert main(["ablate", "--config", cfg_path, "--betas", "0,1,bc",
                 "--seeds", "0", "--out", root]) == 0
    for label in ("beta-0", "beta-1", "bc"):
        csv = os.path.join(root, f"{label}-seed0", "metrics.csv")
        assert os.path.exists(csv), label
        with open(os.path.join(root, f"{label}-seed0", "config.txt")) as fh:
            echo = fh.read()
        if label == "bc":
            assert "run.variant = bc" in echo
        elif label == "beta-0":
            assert "run.variant = baseline-b0" in echo
        else:
            assert "run.variant = constrained" in echo
            assert "policy.beta = 1.0" in echo
    for name in ("return_vs_step.svg", "value_vs_step.svg",
                 "ratio_vs_step.svg"):
        assert os.path.exists(os.path.join(root, "plots", name))


def test_ablate_horizons_layout(tmp_path):
    cfg_path, _ = write_cfg(tmp_path, total=4, log=4)
    root = str(tmp_path / "hsweep")
    assert main(["ablate", "--config", cfg_path, "--horizons", "1,3",
                 "--seeds", "0", "--out", root]) == 0
    for label in ("h-1", "h-3"):
        echo_path = os.path.join(root, f"{label}-seed0", "config.txt")
        with open(echo_path) as fh:
            echo = fh.read()
        assert f"planner.horizon = {label[-1]}" in echo


def test_plot_command_renders(tmp_path):
    cfg_path, out = write_cfg(tmp_path)
    assert main(["train", "--config", cfg_path]) == 0
    dest = str(tmp_path / "charts")
    assert main(["plot", "--in", os.path.join(out, "metrics.csv"),
                 "--out", dest]) == 0
    assert os.path.exists(os.path.join(dest, "ratio_vs_step.svg"))


def test_plot_malformed_csv_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "m.csv"
    bad.write_text("not a metrics file\n")
    assert main(["plot", "--in", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 1" in capsys.readouterr().err
