import pytest

from robust_cofc.config import ConfigError, RunConfig, smoke_config


def test_defaults_are_valid_and_roundtrip(tmp_path):
    cfg = RunConfig()
    path = tmp_path / "c.yaml"
    path.write_text(cfg.to_yaml())
    again = RunConfig.load(path)
    assert again == cfg and again.digest() == cfg.digest()


def test_smoke_overrides():
    cfg = smoke_config(method="ADV-PPOL(MC)", train={"epochs": 5})
    assert cfg.method == "ADV-PPOL(MC)"
    assert cfg.train["epochs"] == 5 and cfg.train["kappa"] == 2.0
    assert cfg.problem().cycle.n_steps == 200
    assert cfg.train_config().hidden == (64, 64)


@pytest.mark.parametrize(
    "data, match",
    [
        ({"methd": "PPOL-vanilla"}, "top-level"),
        ({"train": {"epoch": 3}}, "train"),
        ({"attack": {"kind": "mc"}}, "attack"),
        ({"method": "PPO"}, "method"),
        ({"seeds": [1, 1]}, "distinct"),
        ({"seeds": []}, "seeds"),
        ({"eval": {"conditions": ["natural", "fgsm"]}}, "conditions"),
        ({"train": {"gamma": 1.5}}, "gamma"),
        ({"vehicle": {"mass_kg": -3}}, "mass"),
        ({"envelope": {"H": 0.5}}, "L < B < H"),
        ({"cycle": {"source": "/no/such.csv"}}, "not found"),
        ({"attack": {"norm_order": "1"}}, "norm_order"),
        ({"network": "wide"}, "mapping"),
    ],
)
def test_rejections(data, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_dict(data)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("method: [unclosed\n")
    with pytest.raises(ConfigError, match="YAML"):
        RunConfig.load(bad)
    bad.write_text("- a\n- b\n")
    with pytest.raises(ConfigError, match="mapping"):
        RunConfig.load(bad)


def test_digest_tracks_content():
    assert RunConfig().digest() != smoke_config().digest()
    assert RunConfig.from_dict({"seeds": [0]}).digest() == RunConfig().digest()


def test_eval_epsilon_falls_back_to_train():
    assert RunConfig().budget().epsilon == RunConfig().train["epsilon"]
    assert RunConfig.from_dict({"eval": {"epsilon": 0.03}}).budget().epsilon == 0.03
