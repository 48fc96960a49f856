"""Equilibria: location, spectral classification and the Griffith reduction.

For the Griffith circuit every equilibrium has the form z * v0 where z solves

    h(z) = f(z) / z = phi,       phi = alpha_1 * ... * alpha_r

h is even, equals 1/(1+|z|) for m = 1 and is unimodal on z > 0 for m > 1 with
maximum phi_m = h(z_m), z_m = (m-1)^(1/m). A positive root is asymptotically
stable when h'(z) < 0 and unstable when h'(z) > 0 (mirrored for -z).

Generic models go through damped Newton from user seeds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.optimize import bisect
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from errors import ConfigError
from models import GriffithParams, Model, griffith_model, hill, hill_prime
from order import as_point, strongly_less
from settings import DEFAULT_X_MAX, get_logger

logger = get_logger("equilibria")

STABILITY_THRESHOLD = 1e-8
H_PRIME_TOL = 1e-9
ROOT_XTOL = 1e-12
BRACKET_LIMIT = 1e6

ASYMPTOTICALLY_STABLE = "asymptotically_stable"
UNSTABLE = "unstable"
MARGINAL = "marginal"


@dataclass
class EquilibriumRecord:
    point: np.ndarray
    eigenvalues: np.ndarray
    classification: str
    residual: float
    griffith_root: Optional[float] = None
    h_prime: Optional[float] = None
    reduction_classification: Optional[str] = None
    verdict: Optional[str] = None
    notes: List[str] = field(default_factory=list)

    @property
    def agrees(self) -> bool:
        if self.reduction_classification is None:
            return True
        if MARGINAL in (self.classification, self.reduction_classification):
            return True
        return self.classification == self.reduction_classification

    def to_dict(self) -> Dict[str, Any]:
        return {
            "point": self.point.tolist(),
            "eigs": [[float(e.real), float(e.imag)] for e in self.eigenvalues],
            "class": self.classification,
            "verdict": self.verdict or self.classification,
            "residual": self.residual,
            "root": self.griffith_root,
            "h_prime": self.h_prime,
            "reduction_class": self.reduction_classification,
            "notes": list(self.notes),
        }


def classify_eigenvalues(eigs: Sequence[complex], threshold: float = STABILITY_THRESHOLD) -> str:
    top = float(np.max(np.real(eigs)))
    if top < -threshold:
        return ASYMPTOTICALLY_STABLE
    if top > threshold:
        return UNSTABLE
    return MARGINAL


def make_record(model: Model, point, **extra) -> EquilibriumRecord:
    x = as_point(point)
    eigs = np.linalg.eigvals(model.jac(x))
    eigs = eigs[np.lexsort((eigs.imag, eigs.real))]
    residual = float(np.max(np.abs(model.b(x))))
    return EquilibriumRecord(point=x, eigenvalues=eigs, classification=classify_eigenvalues(eigs), residual=residual, **extra)


# ----------------------------
# Griffith reduction
# ----------------------------
def griffith_phi(p: GriffithParams) -> float:
    return p.phi


def h(z, m: float) -> np.ndarray:
    z = np.abs(np.asarray(z, dtype=float))
    return z ** (m - 1.0) / (1.0 + z**m)


def h_prime(m: float, z: float) -> float:
    """h'(z) = (z f'(z) - f(z)) / z^2, defined for z != 0 (odd in z)."""
    if z == 0:
        raise ConfigError("h' is evaluated only at nonzero roots")
    return float((z * hill_prime(z, m) - hill(z, m)) / z**2)


def z_max(m: float) -> float:
    return (m - 1.0) ** (1.0 / m)


def phi_max(m: float) -> Optional[float]:
    """phi_m = max of h over z > 0 (None for m = 1, where sup h = 1 at z -> 0)."""
    if m == 1:
        return None
    return float(h(z_max(m), m))


def solve_h_roots(m: float, phi: float) -> List[float]:
    """Positive roots of h(z) = phi, ascending."""
    if not m >= 1:
        raise ConfigError(f"m must be >= 1, got {m}")
    if not phi > 0:
        raise ConfigError(f"phi must be positive, got {phi}")
    if m == 1:
        return [1.0 / phi - 1.0] if phi < 1 else []

    zm = z_max(m)
    pm = phi_max(m)
    if math.isclose(phi, pm, rel_tol=1e-12, abs_tol=0.0):
        return [zm]
    if phi > pm:
        return []

    def g(z: float) -> float:
        return float(h(z, m)) - phi

    roots: List[float] = []
    lo = 1e-12
    if g(lo) < 0:
        roots.append(bisect(g, lo, zm, xtol=ROOT_XTOL))
    else:
        logger.warning("left root of h(z)=%.6g lies below %.0e for m=%g; skipped", phi, lo, m)
    hi = 2.0 * max(zm, 1.0)
    while g(hi) >= 0 and hi < BRACKET_LIMIT:
        hi *= 2.0
    if g(hi) < 0:
        roots.append(bisect(g, zm, hi, xtol=ROOT_XTOL))
    else:
        logger.warning("right root of h(z)=%.6g lies beyond %.0e for m=%g; skipped", phi, BRACKET_LIMIT, m)
    return roots


def table1_multipliers(m: float, phi: float) -> tuple[List[float], str, bool]:
    """Support of the zero-noise limit as multiples of v0: (multipliers, regime, marginal)."""
    roots = solve_h_roots(m, phi)
    if m == 1:
        if phi >= 1:
            return [0.0], "phi>=1", math.isclose(phi, 1.0, rel_tol=1e-12)
        z = roots[0]
        return [-z, z], "0<phi<1", False
    pm = phi_max(m)
    if math.isclose(phi, pm, rel_tol=1e-12) or phi > pm:
        return [0.0], "phi>=phi_m", math.isclose(phi, pm, rel_tol=1e-12)
    z2 = roots[-1]
    return [-z2, 0.0, z2], "0<phi<phi_m", False


@dataclass
class GriffithSpectrumSummary:
    phi: float
    m: float
    phi_m: Optional[float]
    z_m: Optional[float]
    roots: List[float]
    v0: np.ndarray
    records: List[EquilibriumRecord]
    predicted_multipliers: List[float]
    regime: str
    marginal: bool

    def stable_set(self) -> List[np.ndarray]:
        return [rec.point for rec in self.records if rec.classification == ASYMPTOTICALLY_STABLE]

    def unstable_set(self) -> List[np.ndarray]:
        return [rec.point for rec in self.records if rec.classification != ASYMPTOTICALLY_STABLE]

    def predicted_support(self) -> List[np.ndarray]:
        return [z * self.v0 for z in self.predicted_multipliers]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "phi": self.phi,
            "m": self.m,
            "phi_m": self.phi_m,
            "z_m": self.z_m,
            "roots": list(self.roots),
            "v0": self.v0.tolist(),
            "equilibria": [rec.to_dict() for rec in self.records],
            "stable_set": [x.tolist() for x in self.stable_set()],
            "predicted_support": [x.tolist() for x in self.predicted_support()],
            "regime": self.regime,
            "marginal": self.marginal,
            "agreement": all(rec.agrees for rec in self.records),
        }


def _reduction_label(m: float, z: float) -> tuple[float, str]:
    hp = h_prime(m, z)
    slope = hp if z > 0 else -hp
    if abs(hp) < H_PRIME_TOL:
        return hp, MARGINAL
    return hp, ASYMPTOTICALLY_STABLE if slope < 0 else UNSTABLE


def classify_griffith(p: GriffithParams) -> GriffithSpectrumSummary:
    """O and +-z v0 for every positive root, each labelled by its spectrum and
    cross-checked against the sign of h'."""
    model = griffith_model(p)
    phi, m = p.phi, p.m
    roots = solve_h_roots(m, phi)
    v0 = p.v0

    records: List[EquilibriumRecord] = []
    for z in sorted([-z for z in roots] + [0.0] + list(roots)):
        if z == 0.0:
            rec = make_record(model, np.zeros(p.r), griffith_root=0.0)
            if rec.classification == MARGINAL:
                rec.notes.append("eigenvalue test inconclusive")
                if m == 1 and math.isclose(phi, 1.0, rel_tol=1e-12):
                    rec.verdict = ASYMPTOTICALLY_STABLE
                    rec.notes.append("unique equilibrium of a dissipative system: global attractor")
        else:
            hp, label = _reduction_label(m, z)
            rec = make_record(model, z * v0, griffith_root=z, h_prime=hp, reduction_classification=label)
            if rec.classification == MARGINAL:
                rec.notes.append("eigenvalue test inconclusive")
            if label == MARGINAL:
                rec.verdict = UNSTABLE
                rec.notes.append("tangent root at phi_m: trajectories from z_m v0 converge monotonically away")
            if not rec.agrees:
                rec.notes.append("spectral and reduction tests disagree")
                logger.warning("classification disagreement at z=%.6g: %s vs %s", z, rec.classification, label)
        records.append(rec)

    multipliers, regime, marginal = table1_multipliers(m, phi)
    summary = GriffithSpectrumSummary(
        phi=phi,
        m=m,
        phi_m=phi_max(m),
        z_m=None if m == 1 else z_max(m),
        roots=list(roots),
        v0=v0,
        records=records,
        predicted_multipliers=multipliers,
        regime=regime,
        marginal=marginal,
    )
    logger.info("griffith m=%g phi=%.6g: %d equilibria, %d stable", m, phi, len(records), len(summary.stable_set()))
    return summary


# ----------------------------
# Generic equilibria (damped Newton)
# ----------------------------
@dataclass
class NewtonSearch:
    records: List[EquilibriumRecord]
    failures: List[Dict[str, Any]]


def _newton(
    model: Model, seed: np.ndarray, tol: float, max_iter: int, cond_max: float, x_max: float
) -> tuple[Optional[np.ndarray], str, int]:
    x = seed.copy()
    res = float(np.linalg.norm(model.b(x)))
    for it in range(max_iter):
        bx = model.b(x)
        if float(np.max(np.abs(bx))) < tol:
            return x, "converged", it
        J = model.jac(x)
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > cond_max:
            return None, "singular Jacobian", it
        try:
            dx = np.linalg.solve(J, -bx)
        except np.linalg.LinAlgError:
            return None, "singular Jacobian", it
        lam = 1.0
        while lam >= 1e-4:
            trial = x + lam * dx
            trial_res = float(np.linalg.norm(model.b(trial)))
            if trial_res < res:
                break
            lam *= 0.5
        else:
            return None, "no convergence", it
        x, res = trial, trial_res
        if float(np.linalg.norm(x)) > x_max:
            return None, "no convergence", it
    if float(np.max(np.abs(model.b(x)))) < tol:
        return x, "converged", max_iter
    return None, "no convergence", max_iter


def newton_equilibria(
    model: Model,
    seeds: Iterable,
    tol: float = 1e-12,
    max_iter: int = 100,
    dedup_tol: float = 1e-8,
    cond_max: float = 1e14,
    x_max: float = DEFAULT_X_MAX,
) -> NewtonSearch:
    records: List[EquilibriumRecord] = []
    failures: List[Dict[str, Any]] = []
    for seed in seeds:
        s = as_point(seed)
        x, status, iters = _newton(model, s, tol, max_iter, cond_max, x_max)
        if x is None:
            failures.append({"seed": s.tolist(), "reason": status, "iterations": iters})
            logger.info("newton from %s failed: %s", s.tolist(), status)
            continue
        if any(np.max(np.abs(x - rec.point)) < dedup_tol for rec in records):
            continue
        records.append(make_record(model, x))
    records.sort(key=lambda rec: tuple(rec.point))
    return NewtonSearch(records=records, failures=failures)


# ----------------------------
# Stationary arcs
# ----------------------------
@dataclass
class StationaryArc:
    points: np.ndarray

    @property
    def degenerate(self) -> bool:
        return self.points.shape[0] == 1

    @property
    def lower_end(self) -> np.ndarray:
        return self.points[0]

    @property
    def upper_end(self) -> np.ndarray:
        return self.points[-1]

    def to_dict(self) -> Dict[str, Any]:
        return {"points": self.points.tolist(), "degenerate": self.degenerate}


def detect_stationary_arc(records: Sequence, tol: float) -> List[StationaryArc]:
    """Maximal chains of equilibria ordered by << with consecutive gaps < tol."""
    pts = [as_point(getattr(rec, "point", rec)) for rec in records]
    if not pts:
        return []
    n = len(pts)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(pts[i] - pts[j]) < tol and (strongly_less(pts[i], pts[j]) or strongly_less(pts[j], pts[i])):
                adj[i, j] = adj[j, i] = True
    _, labels = connected_components(csr_matrix(adj), directed=False)

    arcs: List[StationaryArc] = []
    for label in np.unique(labels):
        members = sorted((pts[i] for i in np.flatnonzero(labels == label)), key=lambda x: float(x.sum()))
        chain = [members[0]]
        for x in members[1:]:
            if strongly_less(chain[-1], x) and np.linalg.norm(x - chain[-1]) < tol:
                chain.append(x)
            else:
                arcs.append(StationaryArc(np.array(chain)))
                chain = [x]
        arcs.append(StationaryArc(np.array(chain)))
    arcs.sort(key=lambda arc: tuple(arc.lower_end))
    return arcs
