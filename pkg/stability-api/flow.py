"""Deterministic flow of dx/dt = b(x).

Fixed-step classical RK4 only, so trajectories are reproducible bit for bit.
The number of steps is ceil(T / step) and the actual step is T / n.

Notes
-----
* ``omega_limit_probe`` calls a point settled once |b(x)| < settle_tol for
  SETTLE_STEPS consecutive steps.
* The upper dual attractor of an unordered set K (or of an unstable arc end p)
  is probed by integrating from sup K + delta * v with v >> 0; the lower one by
  the mirrored start sup K - delta * v.
* Only equilibria are detected as attractors. Periodic or other recurrent
  attractors show up as "not settled".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from errors import BlowUpError, ConfigError, InconclusiveProbeError
from models import Model
from order import as_point, strongly_less
from settings import DEFAULT_X_MAX, get_logger

logger = get_logger("flow")

SETTLE_TOL = 1e-8
SETTLE_STEPS = 10
PROBE_STEP = 1e-2
PROBE_T_MAX = 500.0
MONOTONE_TOL = 1e-7


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    step: float
    method: str = "rk4"

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def to_csv(self, path: str | Path) -> None:
        header = ",".join(["t"] + [f"x{i + 1}" for i in range(self.dim)])
        np.savetxt(path, np.column_stack([self.times, self.states]), delimiter=",", header=header, comments="", fmt="%.17g")


@dataclass
class AttractorProbe:
    seed: np.ndarray
    point: np.ndarray
    converged: bool
    time: float
    residual: float
    start: Optional[np.ndarray] = None

    def to_dict(self) -> Dict:
        return {
            "seed": self.seed.tolist(),
            "start": None if self.start is None else self.start.tolist(),
            "point": self.point.tolist(),
            "converged": self.converged,
            "time": self.time,
            "residual": self.residual,
        }


def n_steps(T: float, step: float) -> int:
    if not T > 0 or not step > 0:
        raise ConfigError(f"integration needs T > 0 and step > 0, got T={T}, step={step}")
    return max(1, math.ceil(T / step - 1e-9))


def rk4_step(model: Model, x: np.ndarray, h: float) -> np.ndarray:
    k1 = model.b(x)
    k2 = model.b(x + 0.5 * h * k1)
    k3 = model.b(x + 0.5 * h * k2)
    k4 = model.b(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _escaped(x: np.ndarray, x_max: float) -> bool:
    return not np.all(np.isfinite(x)) or float(np.max(np.linalg.norm(np.atleast_2d(x), axis=-1))) > x_max


def integrate(model: Model, x0, T: float, step: float, x_max: float = DEFAULT_X_MAX) -> Trajectory:
    x = as_point(x0)
    n = n_steps(T, step)
    h = T / n
    times = h * np.arange(n + 1)
    times[-1] = T
    states = np.empty((n + 1, x.size))
    states[0] = x
    for k in range(n):
        x = rk4_step(model, x, h)
        if _escaped(x, x_max):
            partial = Trajectory(times[: k + 1], states[: k + 1], h)
            raise BlowUpError(f"non-dissipative escape: |x| exceeded {x_max:g} at t={times[k + 1]:.6g}", partial, float(times[k + 1]))
        states[k + 1] = x
    return Trajectory(times, states, h)


def integrate_batch(model: Model, X0, T: float, step: float, x_max: float = DEFAULT_X_MAX) -> np.ndarray:
    """Terminal states of RK4 runs from every row of X0."""
    X = np.atleast_2d(np.asarray(X0, dtype=float)).copy()
    n = n_steps(T, step)
    h = T / n
    for k in range(n):
        X = rk4_step(model, X, h)
        if _escaped(X, x_max):
            raise BlowUpError(f"non-dissipative escape: |x| exceeded {x_max:g} at t={(k + 1) * h:.6g}")
    return X


def omega_limit_probe(
    model: Model,
    x0,
    T_max: float = PROBE_T_MAX,
    settle_tol: float = SETTLE_TOL,
    step: float = PROBE_STEP,
    x_max: float = DEFAULT_X_MAX,
) -> AttractorProbe:
    x = as_point(x0)
    seed = x.copy()
    n = n_steps(T_max, step)
    h = T_max / n
    streak = 0
    residual = float(np.linalg.norm(model.b(x)))
    for k in range(n):
        x = rk4_step(model, x, h)
        if _escaped(x, x_max):
            raise BlowUpError(f"non-dissipative escape: |x| exceeded {x_max:g} at t={(k + 1) * h:.6g}")
        residual = float(np.linalg.norm(model.b(x)))
        streak = streak + 1 if residual < settle_tol else 0
        if streak >= SETTLE_STEPS:
            logger.debug("probe from %s settled at %s after t=%.4g", seed, x, (k + 1) * h)
            return AttractorProbe(seed, x, True, (k + 1) * h, residual)
    logger.info("probe from %s not settled by T_max=%g (residual %.3g)", seed, T_max, residual)
    return AttractorProbe(seed, x, False, T_max, residual)


# ----------------------------
# Monotonicity
# ----------------------------
@dataclass
class MonotonicityReport:
    n_pairs: int
    T: float
    tol: float
    weak_violations: int
    strong_checked: int
    strong_violations: int
    equal_pairs: int
    violating_pairs: List[Dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.weak_violations == 0 and self.strong_violations == 0

    def to_dict(self) -> Dict:
        return {
            "n_pairs": self.n_pairs,
            "T": self.T,
            "tol": self.tol,
            "weak_violations": self.weak_violations,
            "strong_checked": self.strong_checked,
            "strong_violations": self.strong_violations,
            "equal_pairs": self.equal_pairs,
            "passed": self.passed,
            "violating_pairs": self.violating_pairs[:20],
        }


def check_monotonicity(
    model: Model,
    n_pairs: int = 100,
    T: float = 1.0,
    rng_seed: int = 0,
    box: tuple[float, float] = (-3.0, 3.0),
    step: float = PROBE_STEP,
    tol: float = MONOTONE_TOL,
    exclude_axis: Optional[int] = None,
    exclude_radius: float = 0.1,
) -> MonotonicityReport:
    """Sample ordered pairs x <= y, integrate both and compare at time T.

    Increments use a random support, so some pairs are equal and some differ
    in a subset of coordinates. For x < y and T >= 1 the strong order
    Phi_T(x) << Phi_T(y) is also checked. ``exclude_axis`` rejects starting
    points whose coordinate on that axis lies within ``exclude_radius`` of 0.
    """
    rng = np.random.default_rng(rng_seed)
    r = model.dim
    x = rng.uniform(box[0], box[1], size=(n_pairs, r))
    if exclude_axis is not None:
        near = np.abs(x[:, exclude_axis]) < exclude_radius
        x[near, exclude_axis] += np.where(x[near, exclude_axis] >= 0, exclude_radius, -exclude_radius)
    support = rng.random((n_pairs, r)) < 0.5
    d = np.where(support, rng.uniform(0.1, 1.0, size=(n_pairs, r)), 0.0)
    y = x + d

    fx = integrate_batch(model, x, T, step)
    fy = integrate_batch(model, y, T, step)
    weak_bad = np.any(fx > fy + tol, axis=-1)
    equal = ~np.any(support, axis=-1)
    weak_bad |= equal & np.any(np.abs(fx - fy) > tol, axis=-1)

    strict = ~equal if T >= 1.0 else np.zeros(n_pairs, dtype=bool)
    strong_bad = strict & ~np.all(fy - fx > 0, axis=-1)

    bad = np.flatnonzero(weak_bad | strong_bad)
    report = MonotonicityReport(
        n_pairs=n_pairs,
        T=T,
        tol=tol,
        weak_violations=int(weak_bad.sum()),
        strong_checked=int(strict.sum()),
        strong_violations=int(strong_bad.sum()),
        equal_pairs=int(equal.sum()),
        violating_pairs=[{"x": x[i].tolist(), "y": y[i].tolist()} for i in bad],
    )
    logger.info(
        "monotonicity: %d pairs, %d weak / %d strong violations", n_pairs, report.weak_violations, report.strong_violations
    )
    return report


# ----------------------------
# Unstable directions and dual attractors
# ----------------------------
def unstable_direction(model: Model, p, threshold: float = 1e-8) -> Optional[np.ndarray]:
    """Unit eigenvector of Db(p) for the eigenvalue with the largest positive
    real part, oriented toward the positive cone; None if p is not unstable."""
    J = model.jac(as_point(p))
    eigvals, eigvecs = np.linalg.eig(J)
    i = int(np.argmax(eigvals.real))
    if eigvals[i].real <= threshold:
        return None
    v = eigvecs[:, i].real
    v /= np.linalg.norm(v)
    return -v if v.sum() < 0 else v


def dual_attractor(
    model: Model,
    K_sup,
    delta: float,
    v=None,
    lower: bool = False,
    T_max: float = PROBE_T_MAX,
    settle_tol: float = SETTLE_TOL,
    step: float = PROBE_STEP,
    x_max: float = DEFAULT_X_MAX,
) -> AttractorProbe:
    """Settle from K_sup + delta * v (or K_sup - delta * v when ``lower``)."""
    p = as_point(K_sup)
    if v is None:
        u = unstable_direction(model, p)
        v = u if u is not None and np.all(u > 0) else np.ones_like(p)
    v = as_point(v)
    if not np.all(v > 0):
        raise ConfigError("dual attractor direction must satisfy v >> 0")
    v = v / np.linalg.norm(v)
    start = p - delta * v if lower else p + delta * v
    probe = omega_limit_probe(model, start, T_max=T_max, settle_tol=settle_tol, step=step, x_max=x_max)
    probe.seed = p
    probe.start = start
    if not probe.converged:
        raise InconclusiveProbeError(f"no settlement from {start.tolist()} within T_max={T_max:g}", probe)
    if delta > 0:
        ordered = strongly_less(probe.point, p) if lower else strongly_less(p, probe.point)
        if not ordered:
            logger.warning("dual attractor point %s is not strongly ordered against %s", probe.point, p)
    return probe
