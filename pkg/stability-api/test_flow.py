import math

import numpy as np
import pytest

from errors import BlowUpError, ConfigError, InconclusiveProbeError
from flow import (
    check_monotonicity,
    dual_attractor,
    integrate,
    integrate_batch,
    n_steps,
    omega_limit_probe,
    unstable_direction,
)
from models import GriffithParams, Model, constant_diffusion, griffith_model, ou_model
from order import strongly_less

BISTABLE = GriffithParams((0.4, 1.0), 2)  # v0 = (1, 1); equilibria at 0, +-0.5 v0, +-2 v0


def test_equilibrium_gives_constant_trajectory():
    traj = integrate(griffith_model(BISTABLE), [2.0, 2.0], 5.0, 1e-2)
    assert np.allclose(traj.states, [2.0, 2.0], atol=1e-12)
    assert np.all(np.diff(traj.times) > 0)
    assert traj.times[-1] == 5.0


def test_ou_matches_exponential():
    traj = integrate(ou_model(1.0), [1.0], 1.0, 1e-3)
    assert abs(traj.final[0] - math.exp(-1.0)) < 1e-8


def test_griffith_norm_decreases_toward_attractor():
    traj = integrate(griffith_model(GriffithParams((1.0, 1.0), 1)), [5.0, 5.0], 20.0, 1e-2)
    norms = np.linalg.norm(traj.states, axis=1)
    assert np.all(np.diff(norms) <= 1e-9)
    assert norms[-1] < 0.5 * norms[0]


def test_flow_property():
    model = griffith_model(BISTABLE)
    rng = np.random.default_rng(2)
    for _ in range(5):
        s, t = rng.uniform(0.1, 1.0, size=2)
        x0 = rng.uniform(-2, 2, size=2)
        direct = integrate(model, x0, s + t, 1e-3).final
        composed = integrate(model, integrate(model, x0, s, 1e-3).final, t, 1e-3).final
        assert np.max(np.abs(direct - composed)) < 1e-6


def test_blow_up_guard():
    growth = Model(dim=1, drift=lambda x: x, diffusion=constant_diffusion(1))
    with pytest.raises(BlowUpError, match="non-dissipative escape") as info:
        integrate(growth, [1.0], 20.0, 1e-2)
    partial = info.value.partial
    assert partial.states.shape[0] == partial.times.shape[0]
    assert np.all(np.abs(partial.states) <= 1e6)


def test_step_validation():
    assert n_steps(1.0, 0.3) == 4
    assert n_steps(1.0, 1e-3) == 1000
    with pytest.raises(ConfigError):
        n_steps(0.0, 0.1)


def test_integrate_batch_matches_single_runs():
    model = griffith_model(BISTABLE)
    X0 = np.array([[0.3, -0.2], [1.5, 2.5]])
    batch = integrate_batch(model, X0, 2.0, 1e-2)
    for i in range(2):
        assert np.allclose(batch[i], integrate(model, X0[i], 2.0, 1e-2).final, atol=1e-13)


def test_trajectory_csv(tmp_path):
    traj = integrate(ou_model(1.0, dim=2), [1.0, -1.0], 0.1, 0.05)
    path = tmp_path / "trajectory.csv"
    traj.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,x2"
    assert len(lines) == 1 + traj.times.size


# ----------------------------
# Omega limits and dual attractors
# ----------------------------
def test_probe_near_stable_equilibrium():
    probe = omega_limit_probe(griffith_model(BISTABLE), [2.001, 1.999])
    assert probe.converged
    assert np.allclose(probe.point, [2.0, 2.0], atol=1e-6)
    assert probe.residual < 1e-8


def test_probe_on_either_side_of_saddle():
    model = griffith_model(BISTABLE)
    above = omega_limit_probe(model, [0.51, 0.51])
    below = omega_limit_probe(model, [0.49, 0.49])
    assert np.allclose(above.point, [2.0, 2.0], atol=1e-6)
    assert np.allclose(below.point, [0.0, 0.0], atol=1e-6)


def test_probe_reports_not_settled():
    probe = omega_limit_probe(griffith_model(BISTABLE), [0.51, 0.51], T_max=1.0)
    assert not probe.converged
    assert probe.time == 1.0


def test_unstable_direction():
    model = griffith_model(BISTABLE)
    v = unstable_direction(model, [0.5, 0.5])
    assert v is not None
    assert np.all(v > 0)
    assert v[0] / v[1] == pytest.approx(1.1544, abs=1e-3)
    assert unstable_direction(model, [2.0, 2.0]) is None


def test_dual_attractors_of_saddle():
    model = griffith_model(BISTABLE)
    v = BISTABLE.v0 / np.linalg.norm(BISTABLE.v0)
    upper = dual_attractor(model, [0.5, 0.5], 1e-2, v)
    lower = dual_attractor(model, [0.5, 0.5], 1e-2, v, lower=True)
    assert np.allclose(upper.point, [2.0, 2.0], atol=1e-6)
    assert np.allclose(lower.point, [0.0, 0.0], atol=1e-6)
    assert strongly_less([0.5, 0.5], upper.point)
    assert np.allclose(upper.start, [0.5, 0.5] + 1e-2 * v)


def test_dual_attractor_zero_delta_is_omega_limit():
    model = griffith_model(BISTABLE)
    probe = dual_attractor(model, [1.8, 1.9], 0.0, [1.0, 1.0])
    assert np.allclose(probe.point, [2.0, 2.0], atol=1e-6)


def test_dual_attractor_errors():
    model = griffith_model(BISTABLE)
    with pytest.raises(ConfigError):
        dual_attractor(model, [0.5, 0.5], 1e-2, [1.0, -1.0])
    with pytest.raises(InconclusiveProbeError, match="inconclusive"):
        dual_attractor(model, [0.5, 0.5], 1e-2, [1.0, 1.0], T_max=1.0)


# ----------------------------
# Monotonicity
# ----------------------------
def test_monotone_griffith_m1():
    report = check_monotonicity(griffith_model(GriffithParams((0.5, 1.0), 1)), n_pairs=1000, T=1.0)
    assert report.passed
    assert report.strong_checked > 0
    assert report.equal_pairs > 0


def test_monotone_griffith_m2_away_from_zero():
    report = check_monotonicity(griffith_model(BISTABLE), n_pairs=1000, T=1.0, exclude_axis=1)
    assert report.weak_violations == 0
    assert report.strong_violations == 0


def test_monotonicity_flags_non_cooperative_model():
    A = np.array([[-1.0, -2.0], [-2.0, -1.0]])
    competitive = Model(dim=2, drift=lambda x: x @ A.T, diffusion=constant_diffusion(2))
    report = check_monotonicity(competitive, n_pairs=50, T=1.0)
    assert not report.passed
    assert report.to_dict()["violating_pairs"]
