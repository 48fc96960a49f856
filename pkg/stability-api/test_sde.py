import math

import numpy as np
import pytest

from errors import BlowUpError, ConfigError
from flow import integrate
from models import GriffithParams, Model, constant_diffusion, griffith_model, ou_model
from sde import em_step, ensemble, ensemble_summary, simulate, split_seed

BISTABLE = GriffithParams((0.4, 1.0), 2)


def _growth() -> Model:
    return Model(dim=1, drift=lambda x: np.asarray(x), diffusion=constant_diffusion(1))


def test_em_step_examples():
    model = griffith_model(BISTABLE)
    x = np.array([0.3, -0.2])
    assert np.array_equal(em_step(model, x, 0.0, 0.1, [5.0, 5.0]), x + 0.1 * model.b(x))
    still = Model(dim=2, drift=lambda x: np.zeros_like(x), diffusion=constant_diffusion(2))
    assert np.allclose(em_step(still, [0.0, 0.0], 1.0, 0.01, [0.3, -0.1]), [0.3, -0.1])
    assert np.allclose(em_step(model, [2.0, 2.0], 0.0, 0.1, [0.0, 0.0]), [2.0, 2.0], atol=1e-15)


def test_em_step_blow_up():
    square = Model(dim=1, drift=lambda x: np.asarray(x) ** 2, diffusion=constant_diffusion(1))
    with np.errstate(over="ignore"):
        with pytest.raises(BlowUpError, match="numerical blow-up"):
            em_step(square, [1e200], 0.0, 1.0, [0.0])


def test_zero_noise_ou_matches_exponential():
    run = simulate(ou_model(1.0), [1.0], 0.0, 1.0, 1e-3, seed=0)
    assert abs(run.trajectory.final[0] - math.exp(-1.0)) < 1e-2


def test_zero_noise_tracks_rk4():
    model = griffith_model(BISTABLE)
    euler = simulate(model, [1.5, 0.2], 0.0, 1.0, 1e-3, seed=0).trajectory.final
    rk4 = integrate(model, [1.5, 0.2], 1.0, 1e-2).final
    assert np.max(np.abs(euler - rk4)) < 1e-2


def test_fixed_seed_is_reproducible():
    model = griffith_model(BISTABLE)
    a = simulate(model, [0.5, 0.5], 0.3, 2.0, 1e-2, seed=123)
    b = simulate(model, [0.5, 0.5], 0.3, 2.0, 1e-2, seed=123)
    c = simulate(model, [0.5, 0.5], 0.3, 2.0, 1e-2, seed=124)
    assert np.array_equal(a.trajectory.states, b.trajectory.states)
    assert not np.array_equal(a.trajectory.states, c.trajectory.states)


def test_record_every_thins_the_path():
    run = simulate(ou_model(1.0), [1.0], 0.1, 1.0, 1e-2, seed=3, record_every=10)
    assert run.trajectory.times.size == 11
    assert run.trajectory.times[-1] == 1.0
    full = simulate(ou_model(1.0), [1.0], 0.1, 1.0, 1e-2, seed=3)
    assert np.array_equal(full.trajectory.states[::10], run.trajectory.states)


def test_split_seed_streams():
    assert split_seed(7, 0) == split_seed(7, 0)
    assert len({split_seed(7, i) for i in range(100)}) == 100
    assert split_seed(7, 0) != split_seed(8, 0)


def test_single_path_ensemble_equals_simulate():
    model = griffith_model(BISTABLE)
    runs = ensemble(model, [0.5, 0.5], 0.2, 1.0, 1e-2, n_paths=1, master_seed=5)
    alone = simulate(model, [0.5, 0.5], 0.2, 1.0, 1e-2, seed=split_seed(5, 0))
    assert runs[0].seed == alone.seed
    assert np.array_equal(runs[0].trajectory.final, alone.trajectory.final)


def test_ensemble_independent_of_threads():
    model = griffith_model(BISTABLE)
    one = ensemble(model, [0.5, 0.5], 0.3, 2.0, 1e-2, n_paths=7, master_seed=9, threads=1)
    three = ensemble(model, [0.5, 0.5], 0.3, 2.0, 1e-2, n_paths=7, master_seed=9, threads=3)
    assert [r.seed for r in one] == [r.seed for r in three]
    assert np.array_equal(np.array([r.trajectory.final for r in one]), np.array([r.trajectory.final for r in three]))


def test_ou_ensemble_mean_decays():
    runs = ensemble(ou_model(1.0), [1.0], 0.1, 5.0, 1e-2, n_paths=10_000, master_seed=1, threads=2)
    summary = ensemble_summary(runs)
    m = summary["moments"]
    assert summary["n_paths"] == 10_000 and summary["blowups"] == 0
    # exact Euler-Maruyama mean (1 - h)^n; it sits 1.7e-4 below exp(-5)
    em_mean = (1.0 - 1e-2) ** 500
    assert abs(m["mean"][0] - em_mean) < 3 * m["mean_se"][0]
    assert abs(m["mean"][0] - math.exp(-5.0)) < 3 * m["mean_se"][0] + 2e-4


def test_ou_second_moment_near_stationary_variance():
    runs = ensemble(ou_model(1.0), [0.0], 0.2, 5.0, 1e-2, n_paths=2000, master_seed=2, threads=2)
    second = ensemble_summary(runs)["moments"]["second"][0]
    se = 0.02 * math.sqrt(2.0 / 2000)
    assert abs(second - 0.02) < 4 * se + 2e-4


def test_small_noise_paths_follow_the_flow():
    model = griffith_model(BISTABLE)
    x0 = [1.5, 1.5]
    flow = simulate(model, x0, 0.0, 10.0, 1e-2, seed=0, record_every=10).trajectory.states
    runs = ensemble(model, x0, 1e-3, 10.0, 1e-2, n_paths=50, master_seed=4, record_every=10)
    close = [np.max(np.linalg.norm(r.trajectory.states - flow, axis=-1)) < 0.05 for r in runs]
    assert np.mean(close) >= 0.95


def test_blow_up_returns_partial_run():
    with pytest.raises(BlowUpError, match="non-dissipative escape") as info:
        simulate(_growth(), [1.0], 0.1, 20.0, 1e-2, seed=0, x_max=1e3)
    partial = info.value.partial
    assert partial.blew_up
    assert np.all(partial.trajectory.times < partial.blowup_time)
    assert np.all(np.abs(partial.trajectory.states) <= 1e3)


def test_ensemble_blow_ups_are_recorded():
    runs = ensemble(_growth(), [1.0], 0.1, 20.0, 1e-2, n_paths=3, master_seed=0, x_max=1e3)
    assert all(r.blew_up for r in runs)
    summary = ensemble_summary(runs)
    assert summary["blowups"] == 3
    assert summary["moments"] == {"n": 0}


def test_invalid_arguments():
    with pytest.raises(ConfigError):
        simulate(ou_model(1.0), [1.0], -0.1, 1.0, 1e-2, seed=0)
    with pytest.raises(ConfigError):
        ensemble(ou_model(1.0), [1.0], 0.1, 1.0, 1e-2, n_paths=0, master_seed=0)
    with pytest.raises(ConfigError):
        ensemble_summary([])


def test_run_summary_keys():
    run = simulate(ou_model(1.0), [1.0], 0.1, 1.0, 1e-2, seed=3)
    d = run.to_dict()
    assert set(d) == {"eps", "step", "seed", "T", "n_states", "final", "blew_up", "blowup_time"}
    assert d["T"] == 1.0 and d["n_states"] == 101
