import numpy as np
import pytest

from action import action, flow_path, lif_path, minimize_action, quasipotential, resample_path
from errors import ConfigError
from models import GriffithParams, griffith_model, ou_model
from oracles import OracleSpec, gradient_quasipotential, ou_quasipotential, potential_spline, random_path_probe

BISTABLE = GriffithParams((0.4, 1.0), 2)


def test_ou_closed_form():
    assert ou_quasipotential(1.0, 0.0, 1.0) == pytest.approx(1.0)
    assert ou_quasipotential(1.0, 1.0, 2.0) == pytest.approx(3.0)
    assert ou_quasipotential(1.0, 2.0, 1.0) == 0.0
    assert ou_quasipotential(1.0, -1.0, 1.0) == pytest.approx(1.0)
    assert ou_quasipotential(1.0, 0.0, 1.0, sigma=2.0) == pytest.approx(0.25)
    with pytest.raises(ConfigError):
        ou_quasipotential(0.0, 0.0, 1.0)


def test_oracle_spec():
    model = OracleSpec("ou", {"lam": 2.0}).model()
    assert model.b([1.0]) == pytest.approx([-2.0])
    with pytest.raises(ConfigError):
        OracleSpec("heat")
    with pytest.raises(ConfigError):
        OracleSpec("gradient_1d").model()


def test_probe_never_beats_ou_quasipotential():
    model = ou_model(1.0)
    best = random_path_probe(model, [0.0], [1.0], T=20.0, n_trials=10_000, seed=1)
    assert best >= 0.95 * ou_quasipotential(1.0, 0.0, 1.0)


def test_optimizer_beats_probe():
    model = ou_model(1.0)
    probe = random_path_probe(model, [0.0], [1.0], T=20.0, n_trials=300, seed=2)
    est = minimize_action(model, [0.0], [1.0], T=20.0, n_nodes=100)
    assert est.value <= probe + 1e-9


def test_probe_finds_flow_connection():
    model = griffith_model(BISTABLE)
    y = flow_path(model, [3.0, 3.0], 2.0, 100).end
    assert random_path_probe(model, [3.0, 3.0], y, T=2.0, n_trials=2) <= 1e-2


def test_single_trial_is_the_lif():
    model = griffith_model(BISTABLE)
    x, y = np.array([0.1, 0.2]), np.array([1.0, 1.5])
    expected = action(model, resample_path(lif_path(x, y, 50), 4.0, 50))
    assert random_path_probe(model, x, y, T=4.0, n_trials=1, n_nodes=50) == pytest.approx(expected)
    with pytest.raises(ConfigError):
        random_path_probe(model, x, y, T=4.0, n_trials=0)


def test_uphill_probe_floor():
    model = griffith_model(BISTABLE)
    best = random_path_probe(model, 2.0 * BISTABLE.v0, 0.5 * BISTABLE.v0, T=20.0, n_trials=300, seed=3)
    assert best > 0.01


def _double_well() -> OracleSpec:
    grid = np.linspace(-2.5, 2.5, 201)
    return OracleSpec("gradient_1d", {"grid": grid, "potential": 0.25 * grid**4 - 0.5 * grid**2})


def test_gradient_oracle_closed_form():
    spec = _double_well()
    assert spec.quasipotential(-1.0, 0.0) == pytest.approx(0.5, abs=1e-6)
    assert spec.quasipotential(0.0, -1.0) == pytest.approx(0.0, abs=1e-7)
    # over the barrier and down into the other well
    assert spec.quasipotential(-1.0, 1.0) == pytest.approx(0.5, abs=1e-6)
    assert spec.quasipotential(-1.0, 1.5) == pytest.approx(0.5 + 2 * (0.25 * 1.5**4 - 0.5 * 1.5**2 + 0.25), abs=1e-5)

    model = spec.model()
    assert model.b([[-1.0], [0.0], [1.0]])[:, 0] == pytest.approx([0.0, 0.0, 0.0], abs=1e-6)
    assert model.b([0.5])[0] == pytest.approx(0.5 - 0.125, abs=1e-5)
    assert model.jac([0.0])[0, 0] == pytest.approx(1.0, abs=1e-4)


def test_gradient_oracle_matches_ou_oracle():
    grid = np.linspace(-3.0, 3.0, 61)
    U = potential_spline(grid, 0.5 * grid**2)
    for x, y in [(0.0, 1.0), (-1.0, 1.0), (2.0, 1.0), (-0.5, -2.0)]:
        assert gradient_quasipotential(U, x, y) == pytest.approx(ou_quasipotential(1.0, x, y), abs=1e-9)


def test_minimize_action_over_double_well_barrier():
    spec = _double_well()
    est = quasipotential(spec.model(), [-1.0], [0.0], T_grid=(10.0, 20.0), n_nodes=200)
    assert est.value == pytest.approx(spec.quasipotential(-1.0, 0.0), rel=0.03)


def test_gradient_oracle_rejects_bad_samples():
    with pytest.raises(ConfigError):
        OracleSpec("gradient_1d", {"grid": [0.0, 1.0, 1.0, 2.0], "potential": [0.0, 1.0, 2.0, 3.0]}).model()
    with pytest.raises(ConfigError):
        OracleSpec("gradient_1d", {"grid": [0.0, 1.0], "potential": [0.0, 1.0]}).model()
    with pytest.raises(ConfigError):
        OracleSpec("gradient_1d", {**_double_well().params, "sigma": 0.0}).model()
