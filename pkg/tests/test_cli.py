import csv
import json
import math

import numpy as np
import pytest

from kwidth.cli import (OUTCOME_COLUMNS, RATE_COLUMNS, SWEEP_COLUMNS, WIDTHS_COLUMNS, ConfigError,
                        ExperimentConfig, load_config, main, parse_config, run_experiment)

BALL = """
[experiment]
N = 60
sigma = 1.0
epsilon = 0.05
alpha = 0.05
trials = 25
seed = 3

[constraint]
kind = "ball"
dim = 3

[adversary]
strategy = "large_norm"
"""

ELLIPSOID = """
[experiment]
N = 200
epsilon = 0.05
alpha = 0.05
trials = 150
seed = 17

[constraint]
kind = "ellipsoid"
dim = 20
power = -0.5

[adversary]
strategy = "mean_shift"

[mu]
mode = "radial"
boundary_multiples = [3.0]

[solver]
method = "water_filling"
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_minimal_ball_run(tmp_path):
    out = tmp_path / "run"
    assert run_experiment(write(tmp_path, BALL), out) == 0
    for name in ("widths.csv", "outcomes.csv", "rates.csv", "manifest.json"):
        assert (out / name).exists()
    widths = read_csv(out / "widths.csv")
    assert len(widths) - 1 == 3 + 1


def test_golden_headers(tmp_path):
    out = tmp_path / "run"
    run_experiment(write(tmp_path, BALL), out)
    assert read_csv(out / "widths.csv")[0] == WIDTHS_COLUMNS == ["k", "width", "value", "raw_width"]
    assert read_csv(out / "outcomes.csv")[0] == OUTCOME_COLUMNS == [
        "seed", "group", "trial", "mu_norm", "adversary", "decision", "stage", "statistic", "threshold",
        "chosen_k", "chosen_branch", "weight_mass"]
    assert read_csv(out / "rates.csv")[0] == RATE_COLUMNS == [
        "mu_norm", "adversary", "kind", "rate", "ci_lo", "ci_hi", "trials", "failures"]
    assert SWEEP_COLUMNS == ["axis", "value"] + RATE_COLUMNS


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, BALL)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b", threads=3)
    run_experiment(tmp_path / "a" / "manifest.json", tmp_path / "c")
    for name in ("widths.csv", "outcomes.csv", "rates.csv"):
        ref = (tmp_path / "a" / name).read_bytes()
        assert (tmp_path / "b" / name).read_bytes() == ref
        assert (tmp_path / "c" / name).read_bytes() == ref


def test_epsilon_out_of_range(tmp_path, capsys):
    bad = write(tmp_path, BALL.replace("epsilon = 0.05", "epsilon = 0.6"))
    assert main(["detect", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "experiment.epsilon" in capsys.readouterr().err


@pytest.mark.parametrize("section,line", [("experiment", "colour = 1"), ("constraint", "radiu = 2.0"),
                                          ("adversary", "sclae = 3")])
def test_unknown_key_is_named(tmp_path, section, line):
    text = BALL.replace(f"[{section}]", f"[{section}]\n{line}")
    with pytest.raises(ConfigError, match=line.split()[0]):
        load_config(write(tmp_path, text))


def test_malformed_toml(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[experiment\nN = 3"))


def test_missing_required_key():
    with pytest.raises(ConfigError, match="experiment.alpha"):
        parse_config({"experiment": {"N": 10, "epsilon": 0.1}, "constraint": {"kind": "ball", "dim": 2}})


def test_hash_tracks_semantic_fields(tmp_path):
    cfg = load_config(write(tmp_path, BALL))
    h = cfg.config_hash()
    same = load_config(write(tmp_path, BALL.replace("seed = 3", "seed = 3\nout = \"elsewhere\""), "b.toml"))
    assert same.config_hash() == h
    for field, value in [("N", 61), ("sigma", 1.5), ("epsilon", 0.04), ("alpha", 0.1), ("trials", 26),
                         ("seed", 4), ("constraint", {"kind": "ball", "dim": 4}),
                         ("adversary", {"strategy": "replay", "epsilon": 0.05}),
                         ("mu", {"mode": "vector", "vector": [0.1, 0, 0]}), ("solver", {"eps_tol": 0.01}),
                         ("constants", {"c2": 1.0})]:
        changed = ExperimentConfig(**{**cfg.__dict__, field: value})
        assert changed.config_hash() != h, field


def test_widths_verb(tmp_path):
    out = tmp_path / "w"
    assert main(["widths", "--config", str(write(tmp_path, BALL)), "--out", str(out)]) == 0
    rows = read_csv(out / "widths.csv")[1:]
    assert [int(r[0]) for r in rows] == [0, 1, 2, 3]
    assert float(rows[1][1]) == pytest.approx(math.sqrt(2 / 3), rel=0.02)


def test_single_value_sweep_matches_run(tmp_path):
    cfg = write(tmp_path, BALL)
    run_experiment(cfg, tmp_path / "run")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "sw"), "--axis", "epsilon",
                 "--values", "0.05"]) == 0
    rates = read_csv(tmp_path / "run" / "rates.csv")
    sweep = read_csv(tmp_path / "sw" / "sweep.csv")
    assert [r[2:] for r in sweep[1:]] == rates[1:]


def test_sweep_values_must_be_sorted(tmp_path):
    cfg = write(tmp_path, BALL)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s"), "--axis", "N",
                 "--values", "80", "40"]) == 2


@pytest.mark.slow
def test_epsilon_sweep_type_two_isotonic(tmp_path):
    cfg = write(tmp_path, ELLIPSOID)
    main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s"), "--axis", "epsilon",
          "--values", "0", "0.02", "0.05", "0.1"])
    rows = read_csv(tmp_path / "s" / "sweep.csv")[1:]
    rates = np.array([float(r[5]) for r in rows])
    iso = np.maximum.accumulate(rates)
    assert np.max(iso - rates) <= 3 * math.sqrt(0.25 / 150)


@pytest.mark.slow
def test_rho_sweep_crosses_half(tmp_path):
    cfg = write(tmp_path, ELLIPSOID)
    main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s"), "--axis", "rho",
          "--values", "0.3", "1", "3"])
    rows = read_csv(tmp_path / "s" / "sweep.csv")[1:]
    rates = [float(r[5]) for r in rows]
    assert rates[0] > 0.5 > rates[-1]


def test_check_regularity_and_tail_verbs(tmp_path):
    cfg = write(tmp_path, BALL)
    assert main(["check-regularity", "--config", str(cfg), "--out", str(tmp_path / "r"), "--trials", "3"]) == 0
    assert len(read_csv(tmp_path / "r" / "regularity.csv")) == 4
    assert main(["tail-check", "--out", str(tmp_path / "t"), "--lemma", "hanson_wright", "--d", "10",
                 "--trials", "400"]) == 0
    assert read_csv(tmp_path / "t" / "tail.csv")[0] == ["lemma", "row", "key", "value"]


def test_calibrate_verb(tmp_path):
    cfg = write(tmp_path, BALL.replace("trials = 25", "trials = 60"))
    assert main(["calibrate", "--config", str(cfg), "--out", str(tmp_path / "c"), "--target", "c2"]) == 0
    res = json.loads((tmp_path / "c" / "calibration.json").read_text())
    assert res["target"] == "c2" and res["constant"] > 0


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("KWIDTH_THREADS", "2")
    cfg = write(tmp_path, BALL)
    assert main(["detect", "--config", str(cfg), "--out", str(tmp_path / "e")]) == 0
    run_experiment(cfg, tmp_path / "f")
    assert (tmp_path / "e" / "outcomes.csv").read_bytes() == (tmp_path / "f" / "outcomes.csv").read_bytes()


def test_seed_override_changes_outcomes(tmp_path):
    cfg = write(tmp_path, BALL)
    main(["detect", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["detect", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a" / "outcomes.csv").read_bytes() != (tmp_path / "b" / "outcomes.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 4
