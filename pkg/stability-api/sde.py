"""Euler-Maruyama simulation of dX = b(X) dt + eps sigma(X) dW.

Randomness contract
-------------------
* Path i of an ensemble with master seed s draws from
  Generator(Philox(split_seed(s, i))), a counter-based stream.
* Increments are consumed in step order in blocks of DRAW_CHUNK steps, so the
  increment of step k is fixed by (s, i, k) alone.
* Every per-path operation is elementwise along the batch axis, so a path
  computed in a batch of any size is bit-identical to the same path computed
  alone. Ensembles are therefore independent of the thread count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from errors import BlowUpError, ConfigError
from flow import Trajectory, n_steps
from models import Model
from order import as_point
from settings import DEFAULT_X_MAX, get_logger

logger = get_logger("sde")

DRAW_CHUNK = 4096


@dataclass
class SdeRun:
    eps: float
    step: float
    seed: int
    trajectory: Trajectory
    blew_up: bool = False
    blowup_time: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "step": self.step,
            "seed": self.seed,
            "T": float(self.trajectory.times[-1]),
            "n_states": int(self.trajectory.times.size),
            "final": self.trajectory.final.tolist(),
            "blew_up": self.blew_up,
            "blowup_time": self.blowup_time,
        }


def split_seed(master_seed: int, index: int) -> int:
    """64-bit child seed for stream ``index`` of ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def path_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _noise_term(sigma: np.ndarray, w: np.ndarray) -> np.ndarray:
    # sigma @ w written as an explicit sum so each row is computed the same
    # way whatever the batch size
    acc = sigma[..., :, 0] * w[..., None, 0]
    for j in range(1, w.shape[-1]):
        acc = acc + sigma[..., :, j] * w[..., None, j]
    return acc


def em_step(model: Model, x, eps: float, dt: float, w) -> np.ndarray:
    """x + b(x) dt + eps sigma(x) w, with w ~ N(0, dt I)."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    out = x + model.b(x) * dt
    if eps != 0:
        out = out + eps * _noise_term(model.sigma(x), w)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("numerical blow-up: non-finite state in Euler-Maruyama step")
    return out


def _em_batch(
    model: Model,
    X0: np.ndarray,
    eps: float,
    T: float,
    step: float,
    seeds: Sequence[int],
    record_every: int,
    x_max: float,
):
    """Run len(seeds) paths together. Returns (times, states[n_rec, n, r], blowup_times)."""
    X = np.array(X0, dtype=float)
    n_paths, r = X.shape
    n = n_steps(T, step)
    h = T / n
    sqrt_h = math.sqrt(h)
    gens = [path_generator(s) for s in seeds]
    rec_idx = np.arange(0, n + 1, record_every)
    if rec_idx[-1] != n:
        rec_idx = np.append(rec_idx, n)
    states = np.empty((rec_idx.size, n_paths, r))
    states[0] = X
    blowup = np.full(n_paths, np.nan)
    alive = np.ones(n_paths, dtype=bool)
    next_rec = 1

    k = 0
    while k < n:
        chunk = min(DRAW_CHUNK, n - k)
        Z = np.stack([g.standard_normal((chunk, r)) for g in gens], axis=1) if eps != 0 else None
        for c in range(chunk):
            with np.errstate(all="ignore"):
                Xn = X + model.b(X) * h
                if Z is not None:
                    Xn = Xn + eps * _noise_term(model.sigma(X), sqrt_h * Z[c])
            bad = alive & (~np.all(np.isfinite(Xn), axis=-1) | (np.linalg.norm(np.where(np.isfinite(Xn), Xn, np.inf), axis=-1) > x_max))
            if np.any(bad):
                blowup[bad] = (k + c + 1) * h
                alive &= ~bad
            X = np.where(alive[:, None], Xn, X)
            if next_rec < rec_idx.size and rec_idx[next_rec] == k + c + 1:
                states[next_rec] = X
                next_rec += 1
        k += chunk
    times = rec_idx * h
    times[-1] = T
    return times, states, blowup


def simulate(
    model: Model,
    x0,
    eps: float,
    T: float,
    step: float,
    seed: int,
    record_every: int = 1,
    x_max: float = DEFAULT_X_MAX,
) -> SdeRun:
    """Single path. Raises BlowUpError (with the partial SdeRun) on blow-up."""
    if eps < 0:
        raise ConfigError("noise level eps must be >= 0")
    x = as_point(x0)
    h = T / n_steps(T, step)
    times, states, blowup = _em_batch(model, x[None, :], eps, T, step, [seed], record_every, x_max)
    if np.isnan(blowup[0]):
        return SdeRun(eps, h, int(seed), Trajectory(times, states[:, 0, :], h, "euler-maruyama"))
    t_bad = float(blowup[0])
    keep = times < t_bad
    partial = SdeRun(eps, h, int(seed), Trajectory(times[keep], states[keep, 0, :], h, "euler-maruyama"), True, t_bad)
    raise BlowUpError(f"non-dissipative escape: |x| exceeded {x_max:g} or became non-finite at t={t_bad:.6g}", partial, t_bad)


def ensemble(
    model: Model,
    x0,
    eps: float,
    T: float,
    step: float,
    n_paths: int,
    master_seed: int,
    threads: int = 1,
    record_every: Optional[int] = None,
    x_max: float = DEFAULT_X_MAX,
) -> List[SdeRun]:
    """n_paths independent paths; path i uses split_seed(master_seed, i).

    Blown-up paths are kept with ``blew_up=True`` and their last finite state.
    ``record_every`` defaults to storing only the start and end states.
    """
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    if eps < 0:
        raise ConfigError("noise level eps must be >= 0")
    x = as_point(x0)
    n = n_steps(T, step)
    h = T / n
    every = record_every or n
    seeds = [split_seed(master_seed, i) for i in range(n_paths)]
    workers = max(1, min(int(threads), n_paths))
    bounds = np.linspace(0, n_paths, workers + 1).astype(int)
    blocks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def run_block(block: tuple[int, int]):
        a, b = block
        return _em_batch(model, np.tile(x, (b - a, 1)), eps, T, step, seeds[a:b], every, x_max)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(run_block, blocks))
    else:
        outputs = [run_block(block) for block in blocks]

    runs: List[SdeRun] = []
    for (a, b), (times, states, blowup) in zip(blocks, outputs):
        for j in range(b - a):
            bad = not np.isnan(blowup[j])
            traj = Trajectory(times, states[:, j, :], h, "euler-maruyama")
            runs.append(SdeRun(eps, h, seeds[a + j], traj, bad, float(blowup[j]) if bad else None))
    n_bad = sum(run.blew_up for run in runs)
    if n_bad:
        logger.warning("ensemble eps=%g: %d of %d paths blew up", eps, n_bad, n_paths)
    logger.info("ensemble eps=%g: %d paths to T=%g", eps, n_paths, T)
    return runs


def ensemble_summary(runs: Sequence[SdeRun]) -> Dict[str, Any]:
    """{eps, n_paths, blowups, moments} over terminal states of surviving paths."""
    if not runs:
        raise ConfigError("empty ensemble")
    finals = np.array([run.trajectory.final for run in runs if not run.blew_up])
    k = finals.shape[0]
    moments: Dict[str, Any] = {"n": k}
    if k:
        mean = finals.mean(axis=0)
        second = (finals**2).mean(axis=0)
        std = finals.std(axis=0, ddof=1) if k > 1 else np.zeros_like(mean)
        moments.update(
            {
                "mean": mean.tolist(),
                "mean_se": (std / math.sqrt(k)).tolist(),
                "second": second.tolist(),
                "std": std.tolist(),
            }
        )
    return {
        "eps": runs[0].eps,
        "n_paths": len(runs),
        "blowups": sum(run.blew_up for run in runs),
        "moments": moments,
    }
