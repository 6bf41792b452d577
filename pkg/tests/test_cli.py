import json
import subprocess
import sys

import pytest

from semiweak.cli import main

GEN_TOML = """\
[dataset]
distribution = "poisson"
bag_size = 8
lam = 1.2
n_train_bags = 40
n_test_bags = 15
n_classes = 5
feature_dim = 4
cluster_separation = 6.0
seed = 0
dataset_id = "t"
"""

TRAIN_TOML = """\
[train]
lr0 = 0.05
epochs = 2
lr_milestones = [1]
batch_bags = 8
beta = 0.01
reg_kind = "poisson"
seed = 0
hidden = []
"""

BENCH_TOML = """\
[bench]
n_seeds = 2

[[scenario]]
id = "a"
[scenario.dataset]
distribution = "uniform"
bag_size = 4
n_train_bags = 24
n_test_bags = 8
n_classes = 4
feature_dim = 3
cluster_separation = 5.0
seed = 0
dataset_id = "a"
[scenario.train]
lr0 = 0.05
epochs = 2
lr_milestones = []
batch_bags = 8
hidden = []
seed = 0
"""


def run_cli(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture()
def workspace(tmp_path):
    (tmp_path / "gen.toml").write_text(GEN_TOML)
    (tmp_path / "train.toml").write_text(TRAIN_TOML)
    (tmp_path / "bench.toml").write_text(BENCH_TOML)
    return tmp_path


def test_gen_writes_dataset_and_echoes_config(workspace, capsys):
    out_dir = workspace / "data"
    code, out, _ = run_cli(["gen", "--config", str(workspace / "gen.toml"), "--out", str(out_dir)], capsys)
    assert code == 0
    echo = json.loads(out.strip().splitlines()[-1])
    assert echo["command"] == "gen"
    assert echo["config"]["dataset"]["bag_size"] == 8
    assert "avg_sparsity" in echo["stats"]
    assert (out_dir / "train.jsonl").exists()
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["config"]["n_train_bags"] == 40


def test_gen_missing_config_exits_2(workspace, capsys):
    code, _, err = run_cli(["gen", "--config", str(workspace / "nope.toml"), "--out", str(workspace / "d")], capsys)
    assert code == 2
    assert "config error" in err


def test_gen_unknown_key_exits_2(workspace, capsys):
    bad = workspace / "bad.toml"
    bad.write_text("[dataset]\ndistribution = 'uniform'\nbag_size = 4\nn_clases = 3\n")
    code, _, err = run_cli(["gen", "--config", str(bad), "--out", str(workspace / "d")], capsys)
    assert code == 2
    assert "n_clases" in err


def test_gen_is_byte_deterministic(workspace, capsys):
    for name in ("d1", "d2"):
        code, _, _ = run_cli(["gen", "--config", str(workspace / "gen.toml"), "--out", str(workspace / name)], capsys)
        assert code == 0
    for f in ("train.jsonl", "test.jsonl", "manifest.json"):
        assert (workspace / "d1" / f).read_bytes() == (workspace / "d2" / f).read_bytes()


def test_gen_accepts_echoed_json_config(workspace, capsys):
    code, out, _ = run_cli(["gen", "--config", str(workspace / "gen.toml"), "--out", str(workspace / "d1")], capsys)
    echo = json.loads(out.strip().splitlines()[-1])
    cfg = {"dataset": {k: v for k, v in echo["config"]["dataset"].items() if v is not None}}
    (workspace / "echo.json").write_text(json.dumps(cfg))
    code, _, _ = run_cli(["gen", "--config", str(workspace / "echo.json"), "--out", str(workspace / "d2")], capsys)
    assert code == 0
    assert (workspace / "d1" / "train.jsonl").read_bytes() == (workspace / "d2" / "train.jsonl").read_bytes()


def train_pipeline(workspace, capsys, extra=()):
    run_cli(["gen", "--config", str(workspace / "gen.toml"), "--out", str(workspace / "data")], capsys)
    return run_cli(
        ["train", "--dataset", str(workspace / "data"), "--config", str(workspace / "train.toml"),
         "--out", str(workspace / "run"), *extra],
        capsys,
    )


def test_train_eval_roundtrip(workspace, capsys):
    code, out, _ = train_pipeline(workspace, capsys)
    assert code == 0
    echo = json.loads(out.strip().splitlines()[-1])
    assert echo["config"]["train"]["lr0"] == 0.05
    assert (workspace / "run" / "checkpoint.json").exists()
    assert (workspace / "run" / "metrics.jsonl").exists()

    code, out, _ = run_cli(
        ["eval", "--checkpoint", str(workspace / "run" / "checkpoint.json"),
         "--dataset", str(workspace / "data"), "--split", "test",
         "--out", str(workspace / "metrics.json")],
        capsys,
    )
    assert code == 0
    doc = json.loads(out.strip().splitlines()[-1])
    assert doc["metrics"]["n_bags"] == 15
    assert 0.0 <= doc["metrics"]["instance_precision_macro"] <= 1.0
    saved = json.loads((workspace / "metrics.json").read_text())
    assert saved == doc


def test_eval_on_train_split(workspace, capsys):
    train_pipeline(workspace, capsys)
    code, out, _ = run_cli(
        ["eval", "--checkpoint", str(workspace / "run" / "checkpoint.json"),
         "--dataset", str(workspace / "data"), "--split", "train"],
        capsys,
    )
    assert code == 0
    assert json.loads(out.strip().splitlines()[-1])["metrics"]["n_bags"] == 40


def test_eval_no_decoder_differs(workspace, capsys):
    train_pipeline(workspace, capsys)
    outputs = {}
    for flag, name in (([], "dec"), (["--no-decoder"], "arg")):
        code, out, _ = run_cli(
            ["eval", "--checkpoint", str(workspace / "run" / "checkpoint.json"),
             "--dataset", str(workspace / "data"), *flag],
            capsys,
        )
        assert code == 0
        outputs[name] = json.loads(out.strip().splitlines()[-1])
    assert outputs["dec"]["decoder"] is True
    assert outputs["arg"]["decoder"] is False


def test_train_flag_overrides(workspace, capsys):
    code, out, _ = train_pipeline(workspace, capsys, extra=["--no-reg", "--beta", "0.0", "--reg-kind", "l1"])
    assert code == 0
    cfg = json.loads(out.strip().splitlines()[-1])["config"]["train"]
    assert cfg["use_reg"] is False
    assert cfg["beta"] == 0.0
    assert cfg["reg_kind"] == "l1_distance"


def test_eval_shape_mismatch_exits_5(workspace, capsys, tmp_path):
    train_pipeline(workspace, capsys)
    other = tmp_path / "other.toml"
    other.write_text(GEN_TOML.replace("n_classes = 5", "n_classes = 7"))
    run_cli(["gen", "--config", str(other), "--out", str(tmp_path / "data7")], capsys)
    code, _, err = run_cli(
        ["eval", "--checkpoint", str(workspace / "run" / "checkpoint.json"),
         "--dataset", str(tmp_path / "data7")],
        capsys,
    )
    assert code == 5
    assert "classes" in err


def test_decode_and_assign_records(workspace, capsys):
    rec = workspace / "rec.json"
    rec.write_text(json.dumps({"lambdas": [2.0, 1.0, 1.0], "bag_size": 4}))
    code, out, _ = run_cli(["decode", "--in", str(rec)], capsys)
    assert code == 0
    doc = json.loads(out.strip().splitlines()[-1])
    assert doc["counts"] == [2, 1, 1]

    rec2 = workspace / "rec2.json"
    rec2.write_text(json.dumps({"probs": [[0.6, 0.4], [0.55, 0.45]], "counts": [1, 1]}))
    code, out, _ = run_cli(["assign", "--in", str(rec2)], capsys)
    assert code == 0
    assert json.loads(out.strip().splitlines()[-1])["labels"] == [0, 1]


def test_decode_missing_key_exits_2(workspace, capsys):
    rec = workspace / "rec.json"
    rec.write_text(json.dumps({"lambdas": [1.0]}))
    code, _, err = run_cli(["decode", "--in", str(rec)], capsys)
    assert code == 2


def test_bench_runs_and_is_deterministic(workspace, capsys):
    for out_name in ("b1", "b2"):
        code, _, _ = run_cli(
            ["bench", "--config", str(workspace / "bench.toml"), "--out", str(workspace / out_name), "--jobs", "1"],
            capsys,
        )
        assert code == 0
    assert (workspace / "b1" / "results.json").read_bytes() == (workspace / "b2" / "results.json").read_bytes()
    doc = json.loads((workspace / "b1" / "results.json").read_text())
    assert doc["scenarios"][0]["result"]["scenario_id"] == "a"
    assert len(doc["scenarios"][0]["result"]["per_seed"]) == 2
    csv = (workspace / "b1" / "results.csv").read_text().splitlines()
    assert csv[0].startswith("scenario_id,dataset_id")
    assert len(csv) == 2


def test_bench_seed_override_changes_results(workspace, capsys):
    run_cli(["bench", "--config", str(workspace / "bench.toml"), "--out", str(workspace / "b1"), "--jobs", "1"], capsys)
    run_cli(
        ["bench", "--config", str(workspace / "bench.toml"), "--out", str(workspace / "b3"),
         "--jobs", "1", "--seed", "100"],
        capsys,
    )
    a = json.loads((workspace / "b1" / "results.json").read_text())
    b = json.loads((workspace / "b3" / "results.json").read_text())
    assert a["scenarios"][0]["result"]["seeds"] == [0, 1]
    assert b["scenarios"][0]["result"]["seeds"] == [100, 101]


def test_bundled_configs_parse(capsys, tmp_path):
    from semiweak.cli import _load_config_file, _parse_scenarios

    for name in ("paper_grid", "beta_sweep", "loss_sweep"):
        doc = _load_config_file(name)
        scenarios = _parse_scenarios(doc)
        assert len(scenarios) >= 3
    doc = _load_config_file("p2")
    assert doc["dataset"]["n_train_bags"] == 10000


def test_cli_version_via_subprocess():
    proc = subprocess.run(
        [sys.executable, "-m", "semiweak.cli", "--version"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "semiweak" in proc.stdout


def test_bad_log_env_exits_2():
    proc = subprocess.run(
        [sys.executable, "-m", "semiweak.cli", "decode", "--in", "x.json"],
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "SEMIWEAK_LOG": "shout"},
    )
    assert proc.returncode == 2
