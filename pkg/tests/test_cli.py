import json

import pytest
import yaml

from robust_cofc import cli
from robust_cofc.config import RunConfig
from robust_cofc.crl.trainer import TrainingDiverged
from robust_cofc.report import read_csv

TINY = {
    "method": "PPOL-vanilla",
    "seeds": [0, 1],
    "cycle": {"start_s": 900, "duration_s": 40},
    "network": {"hidden": [8, 8]},
    "train": {"epochs": 2, "episodes_per_epoch": 2, "minibatch_size": 32},
    "eval": {"episodes": 2},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def _run(*argv):
    return cli.main([str(a) for a in argv])


def test_train_two_seeds(tmp_path, config):
    out = tmp_path / "runs"
    assert _run("train", "--config", config, "--out", out) == 0
    method_dir = out / "ppol_vanilla"
    for seed in (0, 1):
        run = method_dir / f"seed_{seed}"
        assert (run / "checkpoint.ckpt").is_file()
        prov, rows = read_csv(run / "history.csv")
        assert len(rows) == 2 and prov["config_sha256"] == RunConfig.load(config).digest()
        assert (run / "learning_curve.png").is_file()
    manifest = json.loads((method_dir / "manifest_train.json").read_text())
    assert {r["status"] for r in manifest["runs"]} == {"ok"}
    assert len(manifest["artifacts"]) == 7

    assert _run("train", "--config", config, "--out", out) == 1
    assert _run("train", "--config", config, "--out", out, "--force", "--seed", 3) == 0
    assert sorted(p.name for p in method_dir.glob("seed_*")) == ["seed_3"]


def test_invalid_config_exit_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  epochz: 3\n")
    assert _run("train", "--config", bad, "--out", tmp_path) == 2
    assert _run("train", "--config", tmp_path / "missing.yaml", "--out", tmp_path) == 2
    assert _run("train", "--method", "PPO-nope", "--out", tmp_path) == 2


def test_divergence_exit_code(tmp_path, config, monkeypatch):
    real = cli.train

    def blow_up(method, cfg, *args, **kw):
        result = real(method, cfg, *args, **kw)
        raise TrainingDiverged("loss went non-finite", result)

    monkeypatch.setattr(cli, "train", blow_up)
    assert _run("train", "--config", config, "--out", tmp_path, "--seed", 0) == 3
    assert (tmp_path / "ppol_vanilla" / "seed_0" / "diverged.ckpt").is_file()


def test_evaluate_single_checkpoint_natural_only(tmp_path, config):
    _run("train", "--config", config, "--out", tmp_path / "runs", "--seed", 0)
    data = dict(TINY, eval={"episodes": 2, "conditions": ["natural"]})
    cfg = tmp_path / "nat.yaml"
    cfg.write_text(yaml.safe_dump(data))
    ckpt = tmp_path / "runs" / "ppol_vanilla" / "seed_0" / "checkpoint.ckpt"
    assert _run("evaluate", "--config", cfg, "--checkpoints", ckpt, "--out", tmp_path / "ev") == 0
    _, rows = read_csv(tmp_path / "ev" / "eval.csv")
    assert len(rows) == 1 and rows[0]["condition"] == "natural" and rows[0]["n_episodes"] == "2"
    summary = json.loads((tmp_path / "ev" / "eval_summary.json").read_text())
    assert list(summary["results"]) == ["PPOL-vanilla|natural"]
    assert _run("evaluate", "--config", cfg, "--checkpoints", tmp_path / "nope.ckpt", "--out", tmp_path) == 1
    assert _run("evaluate", "--config", cfg, "--runs", tmp_path / "empty", "--out", tmp_path) == 1


def test_reruns_are_byte_identical(tmp_path, config):
    outputs = []
    for k in range(2):
        runs, ev = tmp_path / f"runs{k}", tmp_path / f"ev{k}"
        assert _run("train", "--config", config, "--out", runs, "--jobs", 1 + k) == 0
        assert _run("evaluate", "--config", config, "--runs", runs, "--out", ev) == 0
        files = sorted(runs.glob("**/*.csv")) + sorted(runs.glob("**/*.ckpt")) + sorted(ev.glob("*.csv"))
        outputs.append([f.read_bytes() for f in files])
    assert len(outputs[0]) == 2 + 2 + 1
    assert outputs[0] == outputs[1]
    _, rows = read_csv(tmp_path / "ev0" / "eval.csv")
    assert [r["condition"] for r in rows] == ["natural", "uniform", "mc", "mr", "mad", "amad"]
    table = (tmp_path / "ev0" / "eval_table.txt").read_text()
    assert "PPOL-vanilla" in table and "Reward" in table and (tmp_path / "ev0" / "eval.png").is_file()


def test_verify_quick_and_forced_failure(tmp_path, capsys):
    assert _run("verify", "--seeds", 1, "--out", tmp_path) == 0
    text = capsys.readouterr().out
    assert text.count("PASS") == 4
    _, rows = read_csv(tmp_path / "verify.csv")
    assert [r["instances"] for r in rows] == ["1"] * 4
    assert _run("verify", "--fixture", "tight", "--lipschitz-scale", 0.25, "--no-figures") == 1
    text = capsys.readouterr().out
    assert "one-step-bound" in text and "FAIL" in text


def test_print_defaults_roundtrip(capsys):
    assert _run("print-defaults", "--smoke") == 0
    data = yaml.safe_load(capsys.readouterr().out)
    assert RunConfig.from_dict(data).train["epochs"] == 150
