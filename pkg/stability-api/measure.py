"""Stationary measures and their zero-noise concentration.

The stationary measure for one eps is estimated from the occupation measure
of a single long Euler-Maruyama path after a burn-in prefix. Ball masses are
measured in the metric |(x - E) / scale| (scale = v0 for Griffith runs).

Predicted supports of the zero-noise limit for the Griffith circuit:

    m = 1:  phi >= 1        -> {O}
            0 < phi < 1     -> {+-h^{-1}(phi) v0}
    m > 1:  phi >= phi_m    -> {O}
            0 < phi < phi_m -> {O, +-z2 v0}
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from equilibria import ASYMPTOTICALLY_STABLE, classify_griffith, table1_multipliers
from errors import BlowUpError, ConfigError, NumericalFailure, StabilityError
from flow import omega_limit_probe
from models import GriffithParams, Model
from order import as_point
from sde import ensemble, simulate, split_seed
from settings import DEFAULT_X_MAX, get_logger

logger = get_logger("measure")

DEFAULT_BURN_IN = 0.2
DEFAULT_DELTA = 0.2
DEFAULT_STEP = 1e-3
MONOTONE_SLACK = 0.05
STABLE_MASS_MIN = 0.95
UNSTABLE_MASS_MAX = 0.02
OCCUPIED_MASS = 0.01


@dataclass(frozen=True)
class HistogramGrid:
    lo: tuple
    hi: tuple
    bins: int = 40

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
            raise ConfigError("histogram window needs lo < hi in every coordinate")
        if self.bins < 1:
            raise ConfigError("histogram needs at least one bin")

    @property
    def edges(self) -> List[np.ndarray]:
        return [np.linspace(a, b, self.bins + 1) for a, b in zip(self.lo, self.hi)]

    @classmethod
    def around(cls, points: Sequence, margin: float = 1.0, bins: int = 40) -> "HistogramGrid":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(tuple(pts.min(axis=0) - margin), tuple(pts.max(axis=0) + margin), bins)


def ball_mass(samples: np.ndarray, center, delta: float, scale=None) -> float:
    samples = np.atleast_2d(samples)
    if samples.shape[0] == 0:
        return 0.0
    c = as_point(center)
    s = np.ones_like(c) if scale is None else as_point(scale)
    return float(np.mean(np.linalg.norm((samples - c) / s, axis=-1) <= delta))


@dataclass
class StationaryEstimate:
    eps: float
    edges: List[np.ndarray]
    counts: np.ndarray
    weights: np.ndarray
    ball_masses: List[Dict[str, Any]]
    burn_in: float
    n_samples: int
    outside_mass: float
    mean: List[float]
    second_moment: List[float]
    valid: bool = True
    note: Optional[str] = None
    samples: Optional[np.ndarray] = field(default=None, repr=False)

    def mass_at(self, point, tol: float = 1e-9) -> float:
        p = as_point(point)
        for entry in self.ball_masses:
            if np.max(np.abs(np.asarray(entry["point"]) - p)) <= tol:
                return entry["mass"]
        raise KeyError(f"no ball recorded at {p.tolist()}")

    def histogram_rows(self) -> np.ndarray:
        """Rows (bin_center_1, ..., bin_center_r, weight) for nonzero bins."""
        centers = [0.5 * (e[1:] + e[:-1]) for e in self.edges]
        mesh = np.meshgrid(*centers, indexing="ij")
        cols = [g.ravel() for g in mesh] + [self.weights.ravel()]
        rows = np.column_stack(cols)
        return rows[rows[:, -1] > 0]

    def histogram_to_csv(self, path) -> None:
        r = len(self.edges)
        header = ",".join([f"bin_center_{i + 1}" for i in range(r)] + ["weight"])
        np.savetxt(path, self.histogram_rows(), delimiter=",", header=header, comments="", fmt="%.17g")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "burn_in": self.burn_in,
            "n_samples": self.n_samples,
            "outside_mass": self.outside_mass,
            "ball_masses": self.ball_masses,
            "mean": self.mean,
            "second_moment": self.second_moment,
            "bins": int(self.counts.shape[0]),
            "valid": self.valid,
            "note": self.note,
        }


def _estimate_from_samples(
    eps: float,
    samples: np.ndarray,
    grid: HistogramGrid,
    equilibria: Sequence,
    delta: float,
    scale,
    burn_in: float,
    valid: bool = True,
    note: Optional[str] = None,
) -> StationaryEstimate:
    counts, edges = np.histogramdd(samples, bins=grid.edges)
    inside = counts.sum()
    if inside > 0:
        weights = counts / inside
    else:
        weights = counts
        valid = False
        note = "; ".join(filter(None, [note, "no samples inside the histogram window"]))
        logger.warning("stationary estimate at eps=%g: %s", eps, note)
    n = samples.shape[0]
    masses = [{"point": as_point(E).tolist(), "mass": ball_mass(samples, E, delta, scale)} for E in equilibria]
    return StationaryEstimate(
        eps=eps,
        edges=list(edges),
        counts=counts,
        weights=weights,
        ball_masses=masses,
        burn_in=burn_in,
        n_samples=int(n),
        outside_mass=float(1.0 - inside / n) if n else 1.0,
        mean=samples.mean(axis=0).tolist() if n else [],
        second_moment=(samples**2).mean(axis=0).tolist() if n else [],
        valid=valid,
        note=note,
        samples=samples,
    )


def estimate_stationary(
    model: Model,
    eps: float,
    T_total: Optional[float] = None,
    step: float = DEFAULT_STEP,
    burn_in: float = DEFAULT_BURN_IN,
    seed: int = 0,
    grid: Optional[HistogramGrid] = None,
    equilibria: Sequence = (),
    x0=None,
    delta: float = DEFAULT_DELTA,
    scale=None,
    record_every: int = 1,
    x_max: float = DEFAULT_X_MAX,
) -> StationaryEstimate:
    """Occupation measure of one path after discarding the burn-in fraction.

    T_total defaults to 1e5 steps. With eps = 0 the whole mass sits at the
    omega-limit of x0. A blow-up returns the estimate of the partial path
    flagged ``valid=False``.
    """
    if not 0 <= burn_in < 1:
        raise ConfigError("burn_in must lie in [0, 1)")
    if eps < 0:
        raise ConfigError("eps must be >= 0")
    x0 = np.zeros(model.dim) if x0 is None else as_point(x0)
    T_total = 1e5 * step if T_total is None else T_total
    eq = [as_point(E) for E in equilibria]
    if grid is None:
        grid = HistogramGrid.around(eq + [x0] if eq else [x0])

    if eps == 0:
        probe = omega_limit_probe(model, x0, x_max=x_max)
        note = None if probe.converged else "omega-limit probe did not settle"
        return _estimate_from_samples(0.0, probe.point[None, :], grid, eq, delta, scale, burn_in, probe.converged, note)

    try:
        run = simulate(model, x0, eps, T_total, step, seed, record_every, x_max)
        states, valid, note = run.trajectory.states, True, None
    except BlowUpError as e:
        states = e.partial.trajectory.states if e.partial is not None else x0[None, :]
        valid, note = False, str(e)
        logger.warning("stationary estimate eps=%g aborted: %s", eps, e)
    start = int(math.ceil(burn_in * states.shape[0]))
    samples = states[start:] if start < states.shape[0] else states[-1:]
    est = _estimate_from_samples(eps, samples, grid, eq, delta, scale, burn_in, valid, note)
    logger.info("stationary eps=%g: %d samples, outside mass %.3g", eps, est.n_samples, est.outside_mass)
    return est


@dataclass
class SymmetricMasses:
    eps: float
    point: List[float]
    n_paths: int
    blowups: int
    plus_mass: float
    minus_mass: float
    se: float

    @property
    def agree(self) -> bool:
        return abs(self.plus_mass - self.minus_mass) <= 3.0 * self.se

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "point": self.point,
            "n_paths": self.n_paths,
            "blowups": self.blowups,
            "plus_mass": self.plus_mass,
            "minus_mass": self.minus_mass,
            "se": self.se,
            "agree": self.agree,
        }


def symmetric_ball_masses(
    model: Model,
    eps: float,
    x0,
    point,
    T: float,
    step: float,
    n_paths: int,
    master_seed: int,
    delta: float = DEFAULT_DELTA,
    scale=None,
    threads: int = 1,
    x_max: float = DEFAULT_X_MAX,
) -> SymmetricMasses:
    """Terminal masses of the balls at +point and -point for an ensemble
    started half at +x0 and half at -x0.

    ``se`` is the standard error of the mass difference, taken from the
    per-path indicator difference 1{+ball} - 1{-ball}.
    """
    if n_paths < 2 or n_paths % 2:
        raise ConfigError("symmetric ensemble needs an even n_paths >= 2")
    x0, c = as_point(x0), as_point(point)
    half = n_paths // 2
    runs = ensemble(model, x0, eps, T, step, half, split_seed(master_seed, 0), threads, x_max=x_max)
    runs += ensemble(model, -x0, eps, T, step, half, split_seed(master_seed, 1), threads, x_max=x_max)
    finals = np.array([run.trajectory.final for run in runs if not run.blew_up])
    if finals.size == 0:
        raise NumericalFailure(f"every path of the symmetric ensemble blew up (eps={eps:g})")
    s = np.ones_like(c) if scale is None else as_point(scale)
    plus = np.linalg.norm((finals - c) / s, axis=-1) <= delta
    minus = np.linalg.norm((finals + c) / s, axis=-1) <= delta
    diff = plus.astype(float) - minus.astype(float)
    k = finals.shape[0]
    se = float(diff.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0
    result = SymmetricMasses(eps, c.tolist(), n_paths, n_paths - k, float(plus.mean()), float(minus.mean()), se)
    logger.info("symmetric masses eps=%g at +-%s: %.4f / %.4f (se %.2g)", eps, c.tolist(), result.plus_mass, result.minus_mass, se)
    return result


# ----------------------------
# Zero-noise concentration
# ----------------------------
def scaled_total_time(eps: float, base_T: float, eps_ref: float = 0.05, cap: float = 2e4) -> float:
    """T_total proportional to 1/eps^2 below eps_ref, capped."""
    return min(base_T * max(1.0, (eps_ref / eps) ** 2), cap)


@dataclass(frozen=True)
class PredictedSupport:
    m: float
    phi: float
    multipliers: tuple
    regime: str
    marginal: bool

    def points(self, v0) -> List[np.ndarray]:
        v = as_point(v0)
        return [z * v for z in self.multipliers]

    def to_dict(self) -> Dict[str, Any]:
        return {"m": self.m, "phi": self.phi, "multipliers": list(self.multipliers), "regime": self.regime, "marginal": self.marginal}


def table1_predict(m: float, phi: float) -> PredictedSupport:
    multipliers, regime, marginal = table1_multipliers(m, phi)
    return PredictedSupport(m, phi, tuple(multipliers), regime, marginal)


@dataclass
class SweepTargets:
    stable: List[np.ndarray]
    unstable: List[np.ndarray]
    predicted: List[np.ndarray]
    scale: np.ndarray
    marginal: bool


def griffith_sweep_targets(p: GriffithParams) -> SweepTargets:
    summary = classify_griffith(p)
    prediction = table1_predict(p.m, p.phi)
    stable = [rec.point for rec in summary.records if (rec.verdict or rec.classification) == ASYMPTOTICALLY_STABLE]
    unstable = [rec.point for rec in summary.records if (rec.verdict or rec.classification) != ASYMPTOTICALLY_STABLE]
    return SweepTargets(stable, unstable, prediction.points(p.v0), p.v0, prediction.marginal)


@dataclass
class SweepSettings:
    T_base: float = 100.0
    step: float = DEFAULT_STEP
    burn_in: float = DEFAULT_BURN_IN
    delta: float = DEFAULT_DELTA
    eps_ref: float = 0.05
    T_cap: float = 2e4
    master_seed: int = 0
    x0: Optional[Sequence[float]] = None
    bins: int = 40
    threads: int = 1
    x_max: float = DEFAULT_X_MAX


@dataclass
class ConcentrationRow:
    eps: float
    T_total: float
    seed: int
    stable_mass: float
    unstable_mass: float
    leftover_mass: float
    estimate: Optional[StationaryEstimate]
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "T_total": self.T_total,
            "seed": self.seed,
            "stable_mass": self.stable_mass,
            "unstable_mass": self.unstable_mass,
            "leftover_mass": self.leftover_mass,
            "estimate": None if self.estimate is None else self.estimate.to_dict(),
            "error": self.error,
        }


@dataclass
class ConcentrationReport:
    rows: List[ConcentrationRow]
    monotone: bool
    predicted_support: List[np.ndarray]
    agreement: bool
    marginal: bool
    occupied: List[List[float]]

    @property
    def eps(self) -> List[float]:
        return [row.eps for row in self.rows]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "rows": [row.to_dict() for row in self.rows],
            "monotone": self.monotone,
            "predicted_support": [p.tolist() for p in self.predicted_support],
            "occupied": self.occupied,
            "agreement": self.agreement,
            "marginal": self.marginal,
        }


def _set_masses(samples: np.ndarray, stable, unstable, delta: float, scale) -> tuple[float, float]:
    if samples.shape[0] == 0:
        return 0.0, 0.0
    s = np.ones(samples.shape[1]) if scale is None else as_point(scale)

    def member(points) -> np.ndarray:
        if not points:
            return np.zeros(samples.shape[0], dtype=bool)
        P = np.array(points)
        d = np.linalg.norm((samples[:, None, :] - P[None, :, :]) / s, axis=-1)
        return np.any(d <= delta, axis=-1)

    in_stable = member(stable)
    in_unstable = member(unstable) & ~in_stable
    return float(in_stable.mean()), float(in_unstable.mean())


def concentration_sweep(
    model: Model,
    eps_list: Sequence[float],
    settings: SweepSettings,
    stable: Sequence,
    unstable: Sequence = (),
    predicted: Optional[Sequence] = None,
    scale=None,
    marginal: bool = False,
) -> ConcentrationReport:
    """estimate_stationary per eps (strictly decreasing) and compare the
    terminal support with the predicted one.

    ``agreement`` requires, at the smallest eps, that every occupied ball
    (mass > 1%) is a predicted point, stable mass >= 0.95 and unstable mass
    <= 0.02. Marginal cases never claim agreement.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ConfigError("eps list must not be empty")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("eps list must be strictly decreasing")
    if any(e <= 0 for e in eps_list):
        raise ConfigError("sweep eps values must be positive")
    stable = [as_point(p) for p in stable]
    unstable = [as_point(p) for p in unstable]
    predicted = stable if predicted is None else [as_point(p) for p in predicted]
    x0 = np.zeros(model.dim) if settings.x0 is None else as_point(settings.x0)
    grid = HistogramGrid.around(stable + unstable + [x0], bins=settings.bins)

    def run(i: int) -> ConcentrationRow:
        eps = eps_list[i]
        T = scaled_total_time(eps, settings.T_base, settings.eps_ref, settings.T_cap)
        seed = split_seed(settings.master_seed, i)
        try:
            est = estimate_stationary(
                model, eps, T, settings.step, settings.burn_in, seed, grid, stable + unstable, x0,
                settings.delta, scale, x_max=settings.x_max,
            )
        except StabilityError as e:
            logger.warning("sweep eps=%g failed: %s", eps, e)
            return ConcentrationRow(eps, T, seed, 0.0, 0.0, 1.0, None, str(e))
        s_mass, u_mass = _set_masses(est.samples, stable, unstable, settings.delta, scale)
        error = None if est.valid else est.note
        logger.info("sweep eps=%g: stable %.4f unstable %.4f", eps, s_mass, u_mass)
        return ConcentrationRow(eps, T, seed, s_mass, u_mass, max(0.0, 1.0 - s_mass - u_mass), est, error)

    if settings.threads > 1:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            rows = list(pool.map(run, range(len(eps_list))))
    else:
        rows = [run(i) for i in range(len(eps_list))]

    valid = [row for row in rows if row.error is None]
    monotone = all(b.stable_mass >= a.stable_mass - MONOTONE_SLACK for a, b in zip(valid, valid[1:]))

    occupied: List[List[float]] = []
    agreement = False
    last = rows[-1]
    if last.estimate is not None and last.error is None:
        occupied = [entry["point"] for entry in last.estimate.ball_masses if entry["mass"] > OCCUPIED_MASS]
        in_prediction = all(any(np.allclose(o, p, atol=1e-6) for p in predicted) for o in occupied)
        agreement = (
            not marginal
            and in_prediction
            and last.stable_mass >= STABLE_MASS_MIN
            and last.unstable_mass <= UNSTABLE_MASS_MAX
        )
    for row in rows:
        if row.estimate is not None:
            row.estimate.samples = None
    return ConcentrationReport(rows, monotone, predicted, agreement, marginal, occupied)
