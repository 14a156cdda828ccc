import json

import pytest
import yaml

from snse2d import cli
from snse2d.errors import ConfigError
from snse2d.harness import load_config, run_experiment, validate_config

TG = {
    "experiment": "simulate",
    "params": {"nu": 0.01, "sigma": 0.0, "n": 16, "dt": 0.01},
    "noise": {"seeds": [0], "t_min": -1, "t_max": 2, "dt": 0.01},
    "options": {"t_end": 1.0, "initial": {"kind": "taylor-green", "radius": None}},
}

STAB = {
    "experiment": "stability",
    "params": {"nu": 0.01, "sigma": 1.0, "n": 16, "dt": 0.01},
    "noise": {"seeds": [0, 1], "t_min": 0, "t_max": 10, "dt": 0.01},
    "options": {"t_end": 10, "observe_every": 10},
}


def write(tmp_path, cfg, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def test_error_names_key():
    bad = {**TG, "noise": {**TG["noise"], "dt": 0}}
    with pytest.raises(ConfigError, match=r"noise\.dt"):
        validate_config(bad, "simulate", output_dir="/tmp/x")


def test_unknown_keys_rejected():
    bad = {**TG, "params": {**TG["params"], "bogus": 1}, "extra": 2}
    with pytest.raises(ConfigError) as exc:
        validate_config(bad, "simulate", output_dir="/tmp/x")
    assert "params.bogus" in str(exc.value) and "extra" in str(exc.value)


def test_experiment_mismatch():
    with pytest.raises(ConfigError):
        validate_config(TG, "stability", output_dir="/tmp/x")


def test_dt_must_be_noise_multiple():
    bad = {**TG, "params": {**TG["params"], "dt": 0.015}}
    with pytest.raises(ConfigError, match=r"params\.dt"):
        validate_config(bad, "simulate", output_dir="/tmp/x")


def test_stability_needs_zero_forcing():
    bad = {**STAB, "forcing": {"kind": "fixed-field"}}
    with pytest.raises(ConfigError):
        validate_config(bad, "stability", output_dir="/tmp/x")


def test_simulate_taylor_green(tmp_path):
    cfg = load_config(write(tmp_path, TG), "simulate", output_dir=str(tmp_path / "out"))
    rep = run_experiment(cfg)
    assert rep.error is None and rep.exit_code == 0
    anchors = {v.anchor: v.status for v in rep.verdicts}
    assert anchors["Taylor-Green e^{-2 nu t} decay (closed form)"] == "pass"
    assert anchors["Lemma 3.6 (ei1) discrete energy budget"] == "pass"
    saved = json.loads((tmp_path / "out" / "report.json").read_text())
    assert saved["config_hash"] == rep.config_hash


def test_rerun_is_byte_identical(tmp_path):
    path = write(tmp_path, STAB)
    a = run_experiment(load_config(path, "stability", output_dir=str(tmp_path / "a")))
    b = run_experiment(load_config(path, "stability", output_dir=str(tmp_path / "b")))
    assert a.config_hash == b.config_hash
    assert (tmp_path / "a" / "stability.csv").read_bytes() == (tmp_path / "b" / "stability.csv").read_bytes()


def test_seed_offset_changes_seeds(tmp_path):
    path = write(tmp_path, STAB)
    a = load_config(path, "stability", seed_offset=0, output_dir=str(tmp_path / "a"))
    b = load_config(path, "stability", seed_offset=5, output_dir=str(tmp_path / "b"))
    assert b.noise["seeds"] == [s + 5 for s in a.noise["seeds"]]
    assert a.config_hash != b.config_hash


def test_cli_exit_codes(tmp_path, capsys):
    ok = write(tmp_path, TG, "ok.yaml")
    assert cli.main(["simulate", "--config", ok, "--out", str(tmp_path / "o")]) == 0
    assert "Taylor-Green" in capsys.readouterr().out
    bad = write(tmp_path, {**TG, "params": {"bogus": 1}}, "bad.yaml")
    assert cli.main(["simulate", "--config", bad, "--out", str(tmp_path / "o2")]) == 2
    assert "params.bogus" in capsys.readouterr().err
    # a measure run at t = 2 cannot reach the Dirac-at-zero threshold
    meas = {"experiment": "measure", "params": STAB["params"],
            "noise": {"seeds": [0, 1, 2, 3], "dt": 0.01}, "options": {"t": 2}}
    assert cli.main(["measure", "--config", write(tmp_path, meas, "m.yaml"),
                     "--out", str(tmp_path / "o3")]) == 1


def test_cli_missing_config(tmp_path):
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 2
