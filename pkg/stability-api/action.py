"""Rate functional of small-noise paths and quasipotential estimates.

    L(u, beta) = 1/2 (beta - b(u))^T a(u)^{-1} (beta - b(u)),   a = sigma sigma^T
    S_T(phi)   = integral_0^T L(phi, phi') dt

Paths are discretized on a time grid t_0 = 0 < ... < t_N = T and S_T is
evaluated with the midpoint rule. The quasipotential V(x, y) is estimated as
the smallest minimized action over a grid of horizons T plus any extra seed
paths (escape paths) optimized on their own grids.

Usage
-----
    est = quasipotential(model, x, y, T_grid=(5.0, 20.0), n_nodes=200)
    est.value, est.path.to_csv("path.csv")
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from errors import ConfigError, DegenerateDiffusionError, DegeneratePathError, EscapePathError
from flow import dual_attractor, integrate, rk4_step, unstable_direction
from models import Model, box_grid
from order import as_point
from settings import get_logger

logger = get_logger("action")

DEFAULT_T_GRID = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
COND_MAX = 1e12
GRAD_TOL = 1e-6
MAX_ITERS = 50_000
ARMIJO_C = 1e-4
SHRINK = 0.5
MAX_HALVINGS = 60
MAX_STEP = 1e8
METRICS = ("sobolev", "euclidean")


@dataclass
class DiscretePath:
    times: np.ndarray
    nodes: np.ndarray
    action: Optional[float] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        if self.times.ndim != 1 or self.times.size < 2:
            raise ConfigError("a path needs at least one time interval")
        if self.nodes.shape[0] != self.times.size:
            raise ConfigError(f"{self.nodes.shape[0]} nodes for {self.times.size} times")
        if not np.all(np.diff(self.times) > 0):
            raise ConfigError("path times must be strictly increasing")

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def n_intervals(self) -> int:
        return self.times.size - 1

    @property
    def start(self) -> np.ndarray:
        return self.nodes[0]

    @property
    def end(self) -> np.ndarray:
        return self.nodes[-1]

    def to_csv(self, path: str | Path) -> None:
        header = ",".join(["t"] + [f"x{i + 1}" for i in range(self.nodes.shape[1])])
        np.savetxt(path, np.column_stack([self.times, self.nodes]), delimiter=",", header=header, comments="", fmt="%.17g")


@dataclass
class QuasipotentialEstimate:
    value: float
    path: DiscretePath
    T: float
    iterations: int = 0
    grad_norm: float = 0.0
    converged: bool = True
    line_search_failed: bool = False
    source: str = "lif"
    history: Optional[List[float]] = None
    candidates: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "T": self.T,
            "n_intervals": self.path.n_intervals,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "converged": self.converged,
            "line_search_failed": self.line_search_failed,
            "source": self.source,
            "start": self.path.start.tolist(),
            "end": self.path.end.tolist(),
            "candidates": self.candidates,
        }


# ----------------------------
# Lagrangian and action
# ----------------------------
def _solve_covariance(model: Model, u: np.ndarray, w: np.ndarray, cond_max: float) -> np.ndarray:
    a = model.a(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.linalg.cond(a)
    worst = float(np.max(cond)) if np.size(cond) else 0.0
    if not math.isfinite(worst) or worst > cond_max:
        raise DegenerateDiffusionError(worst)
    return np.linalg.solve(a, w[..., None])[..., 0]


def lagrangian(model: Model, u, beta, cond_max: float = COND_MAX):
    u = np.asarray(u, dtype=float)
    w = np.asarray(beta, dtype=float) - model.b(u)
    p = _solve_covariance(model, u, w, cond_max)
    L = 0.5 * np.sum(w * p, axis=-1)
    return float(L) if np.ndim(L) == 0 else L


def _path_action(model: Model, times: np.ndarray, nodes: np.ndarray, cond_max: float = COND_MAX):
    """Midpoint-rule action; ``nodes`` may carry leading batch axes."""
    dt = np.diff(times)
    u = 0.5 * (nodes[..., 1:, :] + nodes[..., :-1, :])
    beta = np.diff(nodes, axis=-2) / dt[:, None]
    return np.sum(dt * lagrangian(model, u, beta, cond_max), axis=-1)


def action(model: Model, path: DiscretePath, cond_max: float = COND_MAX) -> float:
    value = float(_path_action(model, path.times, path.nodes, cond_max))
    path.action = value
    return value


def _gradient(model: Model, times: np.ndarray, nodes: np.ndarray, cond_max: float = COND_MAX) -> np.ndarray:
    dt = np.diff(times)
    u = 0.5 * (nodes[1:] + nodes[:-1])
    beta = np.diff(nodes, axis=0) / dt[:, None]
    p = _solve_covariance(model, u, beta - model.b(u), cond_max)
    g_u = -np.einsum("nij,ni->nj", model.jac(u), p) - 0.5 * np.einsum("ni,nkij,nj->nk", p, model.a_grad(u), p)
    half = 0.5 * dt[:, None] * g_u
    grad = np.zeros_like(nodes)
    grad[1:] += half + p
    grad[:-1] += half - p
    grad[0] = 0.0
    grad[-1] = 0.0
    return grad


def action_gradient(model: Model, path: DiscretePath, cond_max: float = COND_MAX) -> np.ndarray:
    """d S / d phi_i for every node (zero rows at the fixed endpoints)."""
    return _gradient(model, path.times, path.nodes, cond_max)


def level_set_member(model: Model, path: DiscretePath, x, s: float) -> bool:
    if not np.allclose(path.start, as_point(x), atol=1e-12):
        raise ConfigError("path does not start at x")
    if math.isinf(s) and s > 0:
        return True
    return action(model, path) <= s


# ----------------------------
# Path constructions
# ----------------------------
def lif_path(x, y, n_nodes: int = 100) -> DiscretePath:
    """Unit-speed segment x + t (y - x) / |y - x| on [0, |y - x|]."""
    x, y = as_point(x), as_point(y)
    length = float(np.linalg.norm(y - x))
    if length == 0.0:
        raise DegeneratePathError()
    times = np.linspace(0.0, length, n_nodes + 1)
    nodes = x + (times / length)[:, None] * (y - x)
    nodes[-1] = y
    return DiscretePath(times, nodes)


def constant_path(x, T: float, n_nodes: int = 1) -> DiscretePath:
    x = as_point(x)
    return DiscretePath(np.linspace(0.0, T, n_nodes + 1), np.tile(x, (n_nodes + 1, 1)))


def resample_path(path: DiscretePath, T: float, n_nodes: int) -> DiscretePath:
    """Linear resampling of ``path`` onto a uniform grid of [0, T]."""
    s = np.linspace(0.0, 1.0, n_nodes + 1)
    src = (path.times - path.times[0]) / path.T
    nodes = np.column_stack([np.interp(s, src, path.nodes[:, k]) for k in range(path.nodes.shape[1])])
    return DiscretePath(T * s, nodes)


def initial_path(x, y, T: float, n_nodes: int) -> DiscretePath:
    """LIF from x to y stretched onto [0, T]; constant path when x = y."""
    x, y = as_point(x), as_point(y)
    if np.array_equal(x, y):
        return constant_path(x, T, n_nodes)
    return resample_path(lif_path(x, y, n_nodes), T, n_nodes)


def flow_path(model: Model, x0, T: float, n_nodes: int = 100) -> DiscretePath:
    traj = integrate(model, x0, T, T / n_nodes)
    return DiscretePath(traj.times, traj.states)


def concat_paths(parts: Sequence[DiscretePath]) -> DiscretePath:
    times = [parts[0].times - parts[0].times[0]]
    nodes = [parts[0].nodes]
    for part in parts[1:]:
        times.append(times[-1][-1] + part.times[1:] - part.times[0])
        nodes.append(part.nodes[1:])
    return DiscretePath(np.concatenate(times), np.concatenate(nodes))


def lif_constant(model: Model, lo, hi, n: int = 5) -> float:
    """max over a box of 1/2 (1 + |b|)^2 ||a^{-1}||: bounds the action of any
    unit-speed segment inside the box by this constant times its length."""
    grid = box_grid(lo, hi, n)
    b_norm = np.linalg.norm(model.b(grid), axis=-1)
    lam_min = np.linalg.eigvalsh(model.a(grid))[:, 0]
    if np.any(lam_min <= 0):
        raise DegenerateDiffusionError(math.inf)
    return float(np.max(0.5 * (1.0 + b_norm) ** 2 / lam_min))


def escape_action_bound(model: Model, y, z, delta: float, n: int = 5) -> Dict[str, float]:
    """(L1 + L2) * delta with L1, L2 the LIF constants of delta-boxes around y and z."""
    y, z = as_point(y), as_point(z)
    L1 = lif_constant(model, y - delta, y + delta, n)
    L2 = lif_constant(model, z - delta, z + delta, n)
    return {"L1": L1, "L2": L2, "bound": (L1 + L2) * delta}


def arc_crawl_path(model: Model, arc_points, eta: float = 1e-2) -> DiscretePath:
    """Traverse a sampled stationary arc at speed tau = lambda0 M^-2 eta.

    lambda0 is the smallest eigenvalue of a along the samples and M the
    largest speed of the arc parametrized over [0, 1]; the action stays below eta / 2.
    """
    pts = np.atleast_2d(np.asarray(arc_points, dtype=float))
    k = pts.shape[0]
    if k < 2:
        raise ConfigError("an arc crawl needs at least two arc samples")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=-1)
    M = (k - 1) * float(seg.max())
    if M == 0:
        raise DegeneratePathError()
    lam0 = float(np.min(np.linalg.eigvalsh(model.a(pts))[:, 0]))
    tau = lam0 * eta / M**2
    times = np.linspace(0.0, 1.0, k) / tau
    return DiscretePath(times, pts)


def escape_path(
    model: Model,
    y,
    delta: float,
    v=None,
    z=None,
    arc=None,
    eta: float = 1e-2,
    n_lif: int = 10,
    flow_step: float = 1e-2,
    T_max: float = 500.0,
) -> DiscretePath:
    """Composite low-action path from y into the attractor point z.

    [arc crawl] + LIF(y -> y + delta v) + flow until within delta of z
    (1e-4 when delta = 0) + LIF(-> z). Without ``z`` the endpoint is the
    upper dual attractor reached from y + delta v.
    """
    y = as_point(y)
    parts: List[DiscretePath] = []
    if arc is not None:
        crawl = arc_crawl_path(model, arc, eta)
        if not np.allclose(crawl.end, y, atol=1e-12):
            raise ConfigError("the stationary arc must end at the escape start y")
        parts.append(crawl)
    if v is None:
        u = unstable_direction(model, y)
        v = u if u is not None and np.all(u > 0) else np.ones_like(y)
    v = as_point(v)
    if not np.all(v > 0):
        raise ConfigError("escape direction must satisfy v >> 0")
    v = v / np.linalg.norm(v)
    if z is None:
        z = dual_attractor(model, y, delta, v, T_max=T_max).point
    z = as_point(z)
    tol = delta if delta > 0 else 1e-4

    w = y + delta * v
    if delta > 0:
        parts.append(lif_path(y, w, n_lif))

    t, states = 0.0, [w.copy()]
    while np.linalg.norm(w - z) > tol:
        if t >= T_max:
            raise EscapePathError(f"flow from {states[0].tolist()} did not reach the {tol:g}-ball of {z.tolist()} by T_max={T_max:g}")
        w = rk4_step(model, w, flow_step)
        t += flow_step
        states.append(w.copy())
    if len(states) > 1:
        parts.append(DiscretePath(flow_step * np.arange(len(states)), np.array(states)))
    if np.linalg.norm(z - w) > 0:
        parts.append(lif_path(w, z, n_lif))
    if not parts:
        return constant_path(y, 1.0)

    path = concat_paths(parts)
    value = action(model, path)
    logger.info("escape path from %s: T=%.4g, %d intervals, action %.4g", y.tolist(), path.T, path.n_intervals, value)
    return path


# ----------------------------
# Minimization
# ----------------------------
def _sobolev_bands(times: np.ndarray) -> np.ndarray:
    """Banded form of the discrete H1 inner product on interior nodes."""
    dt = np.diff(times)
    inv = 1.0 / dt
    n = dt.size - 1
    ab = np.zeros((3, n))
    ab[1] = 0.5 * (dt[:-1] + dt[1:]) + inv[:-1] + inv[1:]
    ab[0, 1:] = -inv[1:-1]
    ab[2, :-1] = -inv[1:-1]
    return ab


def minimize_action(
    model: Model,
    x,
    y,
    T: Optional[float] = None,
    n_nodes: int = 200,
    init: Optional[DiscretePath] = None,
    max_iters: int = MAX_ITERS,
    grad_tol: float = GRAD_TOL,
    metric: str = "sobolev",
    armijo_c: float = ARMIJO_C,
    shrink: float = SHRINK,
    record_history: bool = False,
    cond_max: float = COND_MAX,
) -> QuasipotentialEstimate:
    """Steepest descent with Armijo backtracking on the interior nodes.

    ``metric="sobolev"`` preconditions the gradient with the discrete H1
    operator of the time grid; ``"euclidean"`` uses the raw gradient.
    Endpoints and times stay fixed. Every accepted iterate lowers the action.
    """
    if metric not in METRICS:
        raise ConfigError(f"metric must be one of {METRICS}")
    x, y = as_point(x), as_point(y)
    if init is None:
        if T is None:
            raise ConfigError("minimize_action needs T or an initial path")
        init = initial_path(x, y, T, n_nodes)
    if not (np.allclose(init.start, x, atol=1e-9) and np.allclose(init.end, y, atol=1e-9)):
        raise ConfigError("initial path endpoints differ from x and y")

    times = init.times
    nodes = init.nodes.copy()
    nodes[0], nodes[-1] = x, y
    S = float(_path_action(model, times, nodes, cond_max))
    history = [S] if record_history else None

    def finish(it: int, gnorm: float, converged: bool, failed: bool) -> QuasipotentialEstimate:
        path = DiscretePath(times, nodes, action=S)
        logger.info(
            "minimize_action T=%.4g: S=%.6g after %d iterations (|g|=%.2e, converged=%s, line search failed=%s)",
            path.T, S, it, gnorm, converged, failed,
        )
        return QuasipotentialEstimate(S, path, path.T, it, gnorm, converged, failed, history=history)

    if nodes.shape[0] < 3:
        return finish(0, 0.0, True, False)

    bands = _sobolev_bands(times) if metric == "sobolev" else None
    step = 1.0
    gnorm = math.inf
    for it in range(max_iters):
        g = _gradient(model, times, nodes, cond_max)[1:-1]
        gnorm = float(np.max(np.abs(g)))
        if gnorm < grad_tol:
            return finish(it, gnorm, True, False)
        d = -solve_banded((1, 1), bands, g) if bands is not None else -g
        slope = float(np.sum(g * d))
        step = min(2.0 * step, MAX_STEP)
        for _ in range(MAX_HALVINGS):
            trial = nodes.copy()
            trial[1:-1] += step * d
            try:
                S_trial = float(_path_action(model, times, trial, cond_max))
            except DegenerateDiffusionError:
                S_trial = math.inf
            if S_trial <= S + armijo_c * step * slope:
                break
            step *= shrink
        else:
            logger.warning("line search failed at iteration %d (S=%.6g, |g|=%.2e)", it, S, gnorm)
            return finish(it, gnorm, False, True)
        nodes, S = trial, S_trial
        if history is not None:
            history.append(S)
    g = _gradient(model, times, nodes, cond_max)[1:-1]
    gnorm = float(np.max(np.abs(g)))
    return finish(max_iters, gnorm, gnorm < grad_tol, False)


def truncate_at_ball(model: Model, path: DiscretePath, y, eta: float) -> DiscretePath:
    """Prefix of ``path`` ending at its first node inside the closed eta-ball
    of y, with its action. A path starting inside the ball costs nothing."""
    if not eta > 0:
        raise ConfigError("eta must be > 0")
    dist = np.linalg.norm(path.nodes - as_point(y), axis=-1)
    hit = np.flatnonzero(dist <= eta)
    if hit.size == 0:
        k = path.n_intervals
    elif hit[0] == 0:
        return DiscretePath(path.times[:2], np.stack([path.start, path.start]), action=0.0)
    else:
        k = int(hit[0])
    times, nodes = path.times[: k + 1], path.nodes[: k + 1]
    return DiscretePath(times, nodes, action=float(_path_action(model, times, nodes)))


def quasipotential(
    model: Model,
    x,
    y,
    T_grid: Sequence[float] = DEFAULT_T_GRID,
    n_nodes: int = 200,
    seeds: Optional[Sequence[DiscretePath]] = None,
    threads: int = 1,
    target_eta: Optional[float] = None,
    **opts,
) -> QuasipotentialEstimate:
    """Best minimized action over LIF seeds on every T in T_grid and the
    extra ``seeds`` (each optimized on its own grid).

    With ``target_eta`` the target is the closed eta-ball of y: each optimized
    path is cut at its first node inside the ball and scored by that prefix.
    """
    if not T_grid:
        raise ConfigError("T_grid must not be empty")
    if target_eta is not None and not target_eta > 0:
        raise ConfigError("target_eta must be > 0")
    x, y = as_point(x), as_point(y)
    tasks: List[tuple[str, DiscretePath]] = [("lif", initial_path(x, y, T, n_nodes)) for T in T_grid]
    tasks += [("seed", seed) for seed in (seeds or [])]

    def run(task: tuple[str, DiscretePath]) -> QuasipotentialEstimate:
        source, init = task
        est = minimize_action(model, x, y, init=init, **opts)
        est.source = source
        if target_eta is not None:
            prefix = truncate_at_ball(model, est.path, y, target_eta)
            if prefix.action < est.value:
                est.value, est.path = prefix.action, prefix
        return est

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(task) for task in tasks]

    best = min(results, key=lambda est: est.value)
    best.candidates = [
        {"source": est.source, "T": est.T, "value": est.value, "iterations": est.iterations, "converged": est.converged}
        for est in results
    ]
    logger.info("quasipotential %s -> %s: %.6g (T=%.4g, %s)", x.tolist(), y.tolist(), best.value, best.T, best.source)
    return best
