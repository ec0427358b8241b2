import csv
import subprocess
import sys

import pytest

from cadws.cli import EvalSuite, main, summarize
from cadws.policy import PolicyArch, init_params, load_checkpoint, save_checkpoint


def write_config(path, generations=1, population=2, workflows=2, seed=0):
    path.write_text(
        f"profile: desk\nes:\n  population: {population}\n  generations: {generations}\n  seed: {seed}\n"
        f"scenario:\n  workflow_count: {workflows}\n  gamma: 5.0\n"
    )
    return path


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture
def checkpoint(tmp_path):
    path = tmp_path / "init.ckpt"
    save_checkpoint(path, init_params(PolicyArch(), 0))
    return path


# -- train -------------------------------------------------------------------


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "none.yaml")]) == 2
    assert "not found" in capsys.readouterr().err


def test_bad_es_field_exits_2(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("es:\n  population: 1\n")
    assert main(["train", "--config", str(cfg)]) == 2
    cfg.write_text("es:\n  popsize: 4\n")
    assert main(["train", "--config", str(cfg)]) == 2


def test_bad_worker_env_exits_2(tmp_path, monkeypatch):
    monkeypatch.setenv("CADWS_WORKERS", "many")
    assert main(["train", "--config", str(write_config(tmp_path / "c.yaml"))]) == 2


def test_train_smoke(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(write_config(tmp_path / "c.yaml")), "--out-dir", str(out)]) == 0
    rows = read_rows(out / "training.csv")
    assert rows[0][0] == "generation" and len(rows) == 2
    assert len(load_checkpoint(out / "policy.ckpt", PolicyArch())) == 57617


def test_train_csv_identical_across_runs(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", generations=2)
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "training.csv").read_bytes() == (tmp_path / "b" / "training.csv").read_bytes()
    assert (tmp_path / "a" / "policy.ckpt").read_bytes() == (tmp_path / "b" / "policy.ckpt").read_bytes()


# -- eval --------------------------------------------------------------------


def test_eval_rows(tmp_path, checkpoint):
    out = tmp_path / "eval.csv"
    args = ["eval", "--checkpoint", str(checkpoint), "--gammas", "1.0,2.0", "--scales", "S", "--runs", "1",
            "--workflows", "2", "--out", str(out)]
    assert main(args) == 0
    rows = read_rows(out)
    assert rows[0] == ["gamma", "scale", "instance_seed", "vm_fee", "sla_penalty", "total"]
    assert [r[0] for r in rows[1:]] == ["1.0", "2.0"]
    for r in rows[1:]:
        assert float(r[5]) == float(r[3]) + float(r[4])
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first


def test_eval_does_not_touch_checkpoint(tmp_path, checkpoint):
    before = checkpoint.read_bytes()
    main(["eval", "--checkpoint", str(checkpoint), "--gammas", "1.5", "--runs", "1", "--workflows", "1",
          "--out", str(tmp_path / "e.csv")])
    assert checkpoint.read_bytes() == before


def test_eval_bad_checkpoint_exits_4(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    for path in (bad, tmp_path / "missing.ckpt"):
        assert main(["eval", "--checkpoint", str(path), "--runs", "1", "--out", str(tmp_path / "e.csv")]) == 4


def test_eval_bad_grid_exits_2(tmp_path, checkpoint):
    assert main(["eval", "--checkpoint", str(checkpoint), "--scales", "XXL", "--out", str(tmp_path / "e.csv")]) == 2


# -- bench -------------------------------------------------------------------


def test_bench_baselines_without_checkpoint(tmp_path):
    out, bars = tmp_path / "bench.csv", tmp_path / "bars.csv"
    assert main(["bench", "--gammas", "1.0,2.25", "--runs", "2", "--workflows", "2", "--out", str(out),
                 "--breakdown", str(bars)]) == 0
    rows = read_rows(out)[1:]
    keys = [(r[0], r[1], r[2]) for r in rows]
    assert len(keys) == len(set(keys)) == 6
    assert all(r[3] == "2" for r in rows)
    assert len(read_rows(bars)) == 1 + 12


def test_bench_gates_needs_checkpoint(tmp_path):
    assert main(["bench", "--policies", "GATES", "--out", str(tmp_path / "b.csv")]) == 2
    assert main(["bench", "--policies", "HEFT", "--out", str(tmp_path / "b.csv")]) == 2


def test_bench_with_checkpoint(tmp_path, checkpoint):
    out = tmp_path / "b.csv"
    assert main(["bench", "--policies", "GATES,Random", "--checkpoint", str(checkpoint), "--gammas", "2.0",
                 "--runs", "1", "--workflows", "1", "--out", str(out)]) == 0
    assert [r[0] for r in read_rows(out)[1:]] == ["GATES", "Random"]


def test_bench_cheapest_not_worse_than_fastest_when_loose(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "--policies", "CheapestFeasible,FastestVm", "--gammas", "2.25", "--runs", "10",
                 "--workflows", "4", "--out", str(out)]) == 0
    total = {r[0]: float(r[8]) for r in read_rows(out)[1:]}
    assert total["CheapestFeasible"] <= total["FastestVm"]


# -- helpers -----------------------------------------------------------------


def test_summarize_sample_std():
    rows = [(1.0, "S", 0, 1.0, 0.0, 1.0), (1.0, "S", 1, 3.0, 2.0, 5.0)]
    assert summarize(rows) == pytest.approx([2.0, 2 ** 0.5, 1.0, 2 ** 0.5, 3.0, 8 ** 0.5])
    assert summarize(rows[:1])[1] == 0.0


def test_suite_seeds_shared_across_cells():
    suite = EvalSuite(gamma_grid=(1.0, 2.0), instances_per_cell=3)
    assert suite.instance_seeds == [10000, 10001, 10002]
    assert suite.cells() == [(1.0, suite.scales[0]), (2.0, suite.scales[0])]
    with pytest.raises(ValueError):
        EvalSuite(gamma_grid=())


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "cadws", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "bench" in res.stdout
