import csv
import json

import pytest

import run_experiment
from run_experiment import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main

BISTABLE = {"type": "griffith", "alphas": [0.4, 1.0], "m": 2}
OU = {"type": "ou", "lambda": 1.0, "sigma": 1.0, "dim": 1}


@pytest.fixture
def write_config(tmp_path):
    def write(payload, name="cfg.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload))
        return str(path)

    return write


def _run(command, cfg, out, *extra):
    return main([command, "--config", cfg, "--out", str(out), *extra])


def test_equilibria_griffith(write_config, tmp_path):
    out = tmp_path / "eq"
    assert _run("equilibria", write_config({"model": BISTABLE}), out) == EXIT_OK
    payload = json.loads((out / "equilibria.json").read_text())
    assert len(payload["griffith"]["equilibria"]) == 5
    assert payload["griffith"]["agreement"] is True
    assert len(payload["arcs"]) == 5


def test_equilibria_newton_seeds(write_config, tmp_path):
    cfg = write_config({"model": {**OU, "dim": 2}, "equilibria": {"seeds": [[1.0, 1.0], [-2.0, 0.5]]}})
    out = tmp_path / "eq"
    assert _run("equilibria", cfg, out) == EXIT_OK
    payload = json.loads((out / "equilibria.json").read_text())
    assert len(payload["newton"]["equilibria"]) == 1
    assert payload["newton"]["failures"] == []


def test_equilibria_needs_seeds_for_other_models(write_config, tmp_path, capsys):
    assert _run("equilibria", write_config({"model": OU}), tmp_path) == EXIT_CONFIG
    assert "seeds" in capsys.readouterr().err


def test_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run("equilibria", str(bad), tmp_path) == EXIT_CONFIG
    assert "malformed JSON" in capsys.readouterr().err


@pytest.mark.parametrize(
    "payload",
    [
        {"model": BISTABLE, "colour": "blue"},
        {"model": {**BISTABLE, "alphas": [0.4, -1.0]}},
        {"model": OU, "simulate": {"x0": {"v0": 1.0}, "eps": 0.1, "T": 1.0}},
        {"model": BISTABLE, "sweep": {"eps_list": [0.1, 0.2]}},
        {"model": BISTABLE, "master_seed": -1},
    ],
)
def test_invalid_configs(write_config, tmp_path, payload):
    assert _run("equilibria", write_config(payload), tmp_path) == EXIT_CONFIG


def test_missing_block_and_missing_config(write_config, tmp_path):
    assert _run("simulate", write_config({"model": OU}), tmp_path) == EXIT_CONFIG
    assert main(["simulate", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_dimension_mismatch(write_config, tmp_path, capsys):
    cfg = write_config({"model": OU, "simulate": {"x0": [1.0, 2.0], "eps": 0.1, "T": 1.0}})
    assert _run("simulate", cfg, tmp_path) == EXIT_CONFIG
    assert "dimension mismatch" in capsys.readouterr().err


def test_simulate_single_path(write_config, tmp_path):
    cfg = write_config({"model": BISTABLE, "simulate": {"x0": {"v0": 0.7}, "eps": 0.1, "T": 1.0, "step": 1e-2}})
    out = tmp_path / "sim"
    assert _run("simulate", cfg, out) == EXIT_OK
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,x1,x2"
    assert len(lines) == 102
    assert lines[1].split(",")[1:] == ["0.69999999999999996", "0.69999999999999996"]
    summary = json.loads((out / "simulate.json").read_text())
    assert summary["partial"] is False


def test_simulate_blow_up_writes_partial(write_config, tmp_path, monkeypatch):
    monkeypatch.setenv("STABILITY_X_MAX", "1")
    cfg = write_config({"model": OU, "simulate": {"x0": [0.9], "eps": 5.0, "T": 10.0, "step": 1e-2}})
    out = tmp_path / "sim"
    assert _run("simulate", cfg, out) == EXIT_NUMERICAL
    assert (out / "trajectory.partial.csv").exists()
    assert not (out / "trajectory.csv").exists()
    summary = json.loads((out / "simulate.json").read_text())
    assert summary["partial"] is True and summary["blew_up"] is True


def test_ensemble_files_independent_of_threads(write_config, tmp_path):
    cfg = write_config({"model": BISTABLE, "master_seed": 17, "simulate": {"x0": [0.5, 0.5], "eps": 0.3, "T": 1.0, "step": 1e-2, "n_paths": 6}})
    one, three = tmp_path / "one", tmp_path / "three"
    assert _run("simulate", cfg, one, "--threads", "1") == EXIT_OK
    assert _run("simulate", cfg, three, "--threads", "3") == EXIT_OK
    for name in ("ensemble.json", "ensemble_final.csv"):
        assert (one / name).read_bytes() == (three / name).read_bytes()


def test_seed_override_changes_results(write_config, tmp_path):
    cfg = write_config({"model": OU, "simulate": {"x0": [0.0], "eps": 0.5, "T": 1.0, "step": 1e-2}})
    assert _run("simulate", cfg, tmp_path / "a", "--seed", "1") == EXIT_OK
    assert _run("simulate", cfg, tmp_path / "b", "--seed", "2") == EXIT_OK
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() != (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_stationary(write_config, tmp_path):
    cfg = write_config({"model": OU, "stationary": {"eps": 0.3, "T_total": 20.0, "step": 1e-2, "equilibria": [[0.0]]}})
    out = tmp_path / "st"
    assert _run("stationary", cfg, out) == EXIT_OK
    payload = json.loads((out / "stationary.json").read_text())
    assert payload["partial"] is False
    assert payload["ball_masses"][0]["point"] == [0.0]
    assert (out / "histogram.csv").read_text().startswith("bin_center_1,weight")


def test_sweep_files_independent_of_threads(write_config, tmp_path):
    cfg = write_config({"model": OU, "sweep": {"eps_list": [0.3, 0.1], "T_base": 5.0, "step": 1e-2, "stable": [[0.0]]}})
    one, two = tmp_path / "one", tmp_path / "two"
    assert _run("sweep", cfg, one, "--threads", "1") == EXIT_OK
    assert _run("sweep", cfg, two, "--threads", "2") == EXIT_OK
    assert (one / "sweep.json").read_bytes() == (two / "sweep.json").read_bytes()
    assert (one / "histogram_0.csv").exists() and (one / "histogram_1.csv").exists()


def test_quasipotential_ou(write_config, tmp_path):
    cfg = write_config({"model": OU, "quasipotential": {"x": [0.0], "y": [1.0], "T_grid": [10.0, 20.0], "n_nodes": 200}})
    out = tmp_path / "qp"
    assert _run("quasipotential", cfg, out, "--threads", "2") == EXIT_OK
    payload = json.loads((out / "quasipotential.json").read_text())
    assert payload["value"] == pytest.approx(1.0, rel=0.02)
    assert len(payload["candidates"]) == 2
    assert (out / "path.csv").read_text().splitlines()[0] == "t,x1"


def test_zero_threads_rejected(write_config, tmp_path, capsys):
    cfg = write_config({"model": OU, "simulate": {"x0": [0.0], "eps": 0.1, "T": 1.0, "step": 1e-2}})
    assert _run("simulate", cfg, tmp_path, "--threads", "0") == EXIT_CONFIG
    assert "--threads must be >= 1" in capsys.readouterr().err


def test_quasipotential_to_an_eta_ball(write_config, tmp_path):
    block = {"x": [0.0], "y": [1.0], "T_grid": [20.0], "n_nodes": 200}
    out = tmp_path / "qp"
    assert _run("quasipotential", write_config({"model": OU, "quasipotential": {**block, "target_eta": 0.1}}), out) == EXIT_OK
    payload = json.loads((out / "quasipotential.json").read_text())
    assert payload["value"] < 0.95
    assert abs(payload["end"][0] - 1.0) <= 0.1
    bad = write_config({"model": OU, "quasipotential": {**block, "target_eta": 0.0}}, name="bad.json")
    assert _run("quasipotential", bad, tmp_path / "bad") == EXIT_CONFIG


def test_quasipotential_with_escape_seed(write_config, tmp_path):
    cfg = write_config(
        {
            "model": BISTABLE,
            "quasipotential": {
                "x": {"v0": 0.5},
                "y": {"v0": 2.0},
                "T_grid": [5.0],
                "n_nodes": 50,
                "max_iters": 200,
                "escape": {"delta": 0.01},
            },
        }
    )
    out = tmp_path / "qp"
    assert _run("quasipotential", cfg, out) == EXIT_OK
    payload = json.loads((out / "quasipotential.json").read_text())
    assert payload["value"] < 0.05
    assert payload["escape"]["action"] <= payload["escape"]["bound"]["bound"]


def test_verify_griffith(write_config, tmp_path):
    cfg = write_config({"model": {"type": "griffith", "alphas": [1.0, 1.0], "m": 1}})
    out = tmp_path / "verify"
    assert _run("verify", cfg, out) == EXIT_OK
    payload = json.loads((out / "verify.json").read_text())
    assert [rep["check"] for rep in payload["reports"]][:2] == ["cooperative", "irreducible"]
    assert len(payload["reports"]) == 5
    assert payload["notes"] == []
    assert payload["all_passed"] is True


def test_verify_without_recipe_constants(write_config, tmp_path):
    cfg = write_config({"model": {**OU, "dim": 2}})
    out = tmp_path / "verify"
    assert _run("verify", cfg, out) == EXIT_OK
    payload = json.loads((out / "verify.json").read_text())
    assert "dissipativity and H2 skipped: no R" in payload["notes"]


def test_table1_small(write_config, tmp_path):
    cfg = write_config({"table1": {"rows": [[2, 0.5], [1, 1.2]], "eps": 0.2, "T_base": 20.0, "step": 1e-2}})
    out = tmp_path / "t1"
    assert _run("table1", cfg, out) == EXIT_OK
    payload = json.loads((out / "table1.json").read_text())
    marginal, single = payload["rows"]
    assert marginal["marginal"] is True and marginal["stable_mass"] is None
    assert marginal["note"] == "marginal boundary: no Monte-Carlo claim"
    assert single["classification_match"] is True
    assert single["predicted_multipliers"] == [0.0]
    with open(out / "table1.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["m", "phi", "regime", "marginal"]
    assert len(rows) == 3


@pytest.mark.slow
def test_table1_reproduction(tmp_path):
    report = run_experiment.reproduce_table1(tmp_path, seed=0, threads=2)
    assert report["all_agree"] is True
    assert [row["predicted_multipliers"] for row in report["rows"]] == [
        [0.0],
        pytest.approx([-1.0, 1.0]),
        [0.0],
        pytest.approx([-2.0, 0.0, 2.0]),
    ]


def test_schema_command(capsys):
    assert main(["schema"]) == EXIT_OK
    schema = json.loads(capsys.readouterr().out)
    assert "model" in schema["properties"]
