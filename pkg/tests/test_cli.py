import csv
import io

import numpy as np
import pytest
from helpers import constant_learners

from cacc_marl import cli
from cacc_marl.trainer import EVAL_COLUMNS, save_learners

TINY = ["--set", "train.total_steps=120", "--set", "train.eval_episodes=1"]


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_train_artifact_tree(tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = run(["train", *TINY, "--seed", 5, "--out", out], capsys)
    assert code == 0 and "seed 5" in stdout
    for name in ["config.resolved", "train_seed5.jsonl", "eval_seed5.csv", "summary.csv"]:
        assert (out / name).is_file(), name
    assert len(list((out / "checkpoints" / "seed5").glob("agent*_actor.ckpt"))) == 4
    rows = read_csv((out / "summary.csv").read_text())
    assert [r["phase"] for r in rows] == ["initial", "final"]
    assert list(rows[0]) == cli.SUMMARY_COLUMNS
    resolved = (out / "config.resolved").read_text()
    assert "consensus.epsilon = 0.001" in resolved and "train.seeds = 5" in resolved


def test_resolved_config_reproduces_run(tmp_path, capsys):
    a = tmp_path / "a"
    assert run(["train", *TINY, "--seed", 2, "--out", a], capsys)[0] == 0
    b = tmp_path / "b"
    assert run(["train", "--config", a / "config.resolved", "--out", b], capsys)[0] == 0
    assert (a / "train_seed2.jsonl").read_bytes() == (b / "train_seed2.jsonl").read_bytes()
    for p in (a / "checkpoints" / "seed2").iterdir():
        assert p.read_bytes() == (b / "checkpoints" / "seed2" / p.name).read_bytes()


def test_missing_config_exit_1(tmp_path, capsys):
    code, _, err = run(["train", "--config", tmp_path / "nowhere.cfg"], capsys)
    assert code == 1 and "nowhere.cfg" in err


def test_unknown_key_exit_1(capsys):
    code, _, err = run(["config", "--set", "train.speed=3"], capsys)
    assert code == 1 and "train.speed" in err


def test_bad_subcommand_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["fly"])
    assert exc.value.code == 1


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "consensus.lambda = 0.00025" in out and "train.total_steps = 100000" in out


def test_config_prints_resolved(capsys):
    code, out, _ = run(["config", "--set", "scenario.kind=slowdown"], capsys)
    assert code == 0 and "consensus.epsilon = 0.0001" in out


def test_eval_equilibrium_checkpoint(tmp_path, capsys):
    ck = tmp_path / "ck"
    save_learners(ck, constant_learners(3))
    args = ["eval", ck, "--episodes", 2, "--set", "scenario.catchup_gap_factor_range=1,1"]
    code, out, _ = run(args, capsys)
    assert code == 0
    rows = read_csv(out)
    assert list(rows[0]) == EVAL_COLUMNS
    assert float(rows[0]["avg_headway"]) == 20.0 and rows[0]["collision_count"] == "0"
    assert run(args, capsys)[1] == out


def test_eval_corrupt_checkpoint(tmp_path, capsys):
    ck = tmp_path / "ck"
    save_learners(ck, constant_learners(3))
    p = ck / "agent2_critic.ckpt"
    p.write_bytes(p.read_bytes()[:-5])
    code, _, err = run(["eval", ck, "--episodes", 1], capsys)
    assert code == 2 and "agent2_critic" in err


def test_eval_agent_count_mismatch(tmp_path, capsys):
    ck = tmp_path / "ck"
    save_learners(ck, constant_learners(3, 3))
    code, _, err = run(["eval", ck, "--episodes", 1], capsys)
    assert code == 1 and "platoon_size" in err


def test_quantbench_n1(tmp_path, capsys):
    dest = tmp_path / "q.csv"
    code, _, _ = run(["quantbench", "--n", "1,2", "--trials", 400, "--out", dest], capsys)
    assert code == 0
    rows = read_csv(dest.read_text())
    n1 = rows[0]
    assert int(n1["dense_bits_per_param"]) == 2 and int(n1["dense_message_bits"]) == 120 + 128
    assert float(n1["max_abs_error"]) <= float(n1["error_bound"])
    assert float(n1["max_bias_z"]) < 5.0
    assert int(rows[1]["dense_bits_per_param"]) == 3


def test_quantbench_unquantized_is_exact():
    row = cli.quantbench(16, [0], 5)[0]
    assert row["max_abs_error"] == 0.0 and row["dense_bits_per_param"] == 64


def test_consensus_demo_cli(tmp_path, capsys):
    dest = tmp_path / "demo.csv"
    code, _, err = run(["consensus-demo", "--iters", 200, "--n", 2, "--out", dest], capsys)
    assert code == 0 and "distance to mean" in err
    rows = read_csv(dest.read_text())
    assert len(rows) == 200 and list(rows[0]) == ["iter", "disagreement", "mean_drift"]


def test_consensus_demo_pure_averaging_reaches_mean():
    res = cli.consensus_demo(agents=6, lam=0.0, iters=3000, n=0)
    assert res.disagreement[-1] < 1e-8
    assert res.mean_drift[-1] < 1e-12


def test_consensus_demo_matches_regularised_fixed_point():
    # with gradient steps the iteration settles at (I + (eps/lam) L)^-1 c, not at mean(c)
    eps, lam, agents = 0.1, 0.01, 5
    res = cli.consensus_demo(agents=agents, epsilon=eps, lam=lam, iters=20000, n=0)
    lap = np.diag([1.0] + [2.0] * (agents - 2) + [1.0])
    lap -= np.eye(agents, k=1) + np.eye(agents, k=-1)
    fixed = np.linalg.solve(np.eye(agents) + (eps / lam) * lap, res.centers)
    np.testing.assert_allclose(res.xs, fixed, atol=1e-9)
