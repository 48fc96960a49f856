"""Independent reference values for the tests.

Nothing in the service or the CLI imports this module.

    ou_quasipotential        closed form for dX = -lam X dt + eps sigma dW
    gradient_quasipotential  2/sigma^2 times the uphill variation of U on [x, y]
    OracleSpec               oracle model + closed form by kind ("ou", "gradient_1d")
    random_path_probe        brute-force action floor over perturbed candidates
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from action import _path_action, flow_path, lif_path, resample_path
from errors import ConfigError
from models import Model, _zero_covariance_grad, constant_diffusion, ou_model
from order import as_point

PROBE_BATCH = 256
ORACLE_KINDS = ("ou", "gradient_1d")


def potential_spline(grid, potential) -> CubicSpline:
    """Cubic spline through samples of U on a strictly increasing grid."""
    grid = np.asarray(grid, dtype=float)
    potential = np.asarray(potential, dtype=float)
    if grid.ndim != 1 or grid.size < 4 or grid.shape != potential.shape:
        raise ConfigError("gradient oracle needs matching 1-d grid and potential samples (at least 4)")
    if not np.all(np.diff(grid) > 0):
        raise ConfigError("potential grid must be strictly increasing")
    return CubicSpline(grid, potential)


def gradient_model(U: CubicSpline, sigma: float = 1.0) -> Model:
    """dX = -U'(X) dt + eps sigma dW in one dimension."""
    if not sigma > 0:
        raise ConfigError("gradient oracle sigma must be positive")
    dU, d2U = U.derivative(1), U.derivative(2)
    return Model(
        dim=1,
        drift=lambda x: -dU(np.asarray(x, dtype=float)),
        diffusion=constant_diffusion(1, sigma),
        jacobian=lambda x: -d2U(np.asarray(x, dtype=float))[..., None],
        covariance_grad=_zero_covariance_grad(1),
        name="gradient_1d",
        params={"sigma": sigma},
    )


def gradient_quasipotential(U: CubicSpline, x: float, y: float, sigma: float = 1.0) -> float:
    """V(x, y) = 2/sigma^2 * integral over [x, y] of the uphill part of U'.

    A 1-d path has to cross every point between x and y; downhill stretches
    are ridden along the flow for free.
    """
    if x == y:
        return 0.0
    direction = 1.0 if y > x else -1.0
    dU = U.derivative(1)
    lo, hi = sorted((x, y))
    uphill, _ = quad(lambda s: max(direction * float(dU(s)), 0.0), lo, hi, limit=200)
    return 2.0 * uphill / sigma**2


@dataclass(frozen=True)
class OracleSpec:
    kind: str
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ORACLE_KINDS:
            raise ConfigError(f"unknown oracle kind {self.kind!r}")

    def _spline(self) -> CubicSpline:
        if "grid" not in self.params or "potential" not in self.params:
            raise ConfigError("gradient_1d oracle needs 'grid' and 'potential' samples")
        return potential_spline(self.params["grid"], self.params["potential"])

    def model(self) -> Model:
        sigma = self.params.get("sigma", 1.0)
        if self.kind == "ou":
            return ou_model(self.params.get("lam", 1.0), sigma)
        return gradient_model(self._spline(), sigma)

    def quasipotential(self, x: float, y: float) -> float:
        sigma = self.params.get("sigma", 1.0)
        if self.kind == "ou":
            return ou_quasipotential(self.params.get("lam", 1.0), x, y, sigma)
        return gradient_quasipotential(self._spline(), x, y, sigma)


def ou_potential(lam: float, z: float) -> float:
    return 0.5 * lam * z * z


def ou_quasipotential(lam: float, x: float, y: float, sigma: float = 1.0) -> float:
    """2 (U(y) - U(x))^+ / sigma^2 on a common half-line, else 2 U(y) / sigma^2.

    Paths crossing the origin ride the flow down to 0 at no cost first.
    """
    if not lam > 0:
        raise ConfigError("OU oracle needs lam > 0")
    if x * y > 0 or x == 0:
        return 2.0 * max(ou_potential(lam, y) - ou_potential(lam, x), 0.0) / sigma**2
    return 2.0 * ou_potential(lam, y) / sigma**2


def random_path_probe(
    model: Model,
    x,
    y,
    T: float,
    n_trials: int,
    seed: int = 0,
    n_nodes: int = 100,
    amplitude: float = 0.5,
    n_modes: int = 4,
) -> float:
    """Minimum action over n_trials candidates on [0, T].

    Trial 0 is the LIF stretched onto [0, T], trial 1 the flow from x with a
    linear endpoint correction, and the rest random sine-mode perturbations
    of those two.
    """
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    x, y = as_point(x), as_point(y)
    lif = resample_path(lif_path(x, y, n_nodes), T, n_nodes)
    times = lif.times
    s = (times / T)[:, None]
    flow = flow_path(model, x, T, n_nodes)
    spliced = flow.nodes + s * (y - flow.nodes[-1])
    bases = np.stack([lif.nodes, spliced])

    best = float(_path_action(model, times, lif.nodes))
    if n_trials == 1:
        return best
    best = min(best, float(_path_action(model, times, spliced)))

    rng = np.random.default_rng(seed)
    modes = np.sin(np.pi * np.arange(1, n_modes + 1)[None, :] * (times / T)[:, None])
    remaining = n_trials - 2
    while remaining > 0:
        k = min(PROBE_BATCH, remaining)
        coeff = rng.normal(0.0, amplitude, size=(k, n_modes, x.size)) / np.arange(1, n_modes + 1)[None, :, None]
        which = rng.integers(0, 2, size=k)
        candidates = bases[which] + np.einsum("tm,kmd->ktd", modes, coeff)
        best = min(best, float(np.min(_path_action(model, times, candidates))))
        remaining -= k
    return best
