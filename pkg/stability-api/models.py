"""Drift/diffusion models, the Griffith positive-feedback circuit and the
hypothesis checks (cooperative, irreducible, dissipative, H2, H3).

A ``Model`` bundles vectorized callables acting on the last axis, so a batch
of points with shape (n, r) is evaluated in a single call:

    drift(x)            -> (..., r)
    diffusion(x)        -> (..., r, r)      perturbation is eps * sigma(x)
    jacobian(x)         -> (..., r, r)      J[..., i, j] = d b_i / d x_j
    covariance_grad(x)  -> (..., r, r, r)   G[..., k, i, j] = d a_ij / d x_k

Griffith circuit (r >= 1, alphas > 0, m >= 1):

    x1' = f(x_r) - alpha_1 x1
    xj' = x_{j-1} - alpha_j xj          (2 <= j <= r)
    f(z) = sgn(z) |z|^m / (1 + |z|^m)

Equilibria lie on the ray z * v0 with v0 = (alpha_2...alpha_r, ..., alpha_r, 1).

All structural checks are evaluated on finite grids; a passing report means
PASS-on-grid, not a proof.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from errors import ConfigError, NoHopfPointError, NumericalFailure, SingularSystemError, UnstableMatrixError
from settings import get_logger

logger = get_logger("models")

ArrayFn = Callable[[np.ndarray], np.ndarray]

# Tolerances
IRREDUCIBLE_THRESHOLD = 1e-12
LYAPUNOV_TOL = 1e-10
H3_EXCLUDED_RADIUS = 1e-3


# ----------------------------
# Model container
# ----------------------------
def _fd_derivative(fn: ArrayFn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences along the last axis; result[..., *, k] = d fn / d x_k."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.shape[-1]):
        step = h * np.maximum(1.0, np.abs(x[..., k]))
        e = np.zeros_like(x)
        e[..., k] = step
        diff = np.asarray(fn(x + e)) - np.asarray(fn(x - e))
        cols.append(diff / (2.0 * step.reshape(step.shape + (1,) * (diff.ndim - step.ndim))))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class Model:
    dim: int
    drift: ArrayFn
    diffusion: ArrayFn
    jacobian: Optional[ArrayFn] = None
    covariance_grad: Optional[ArrayFn] = None
    name: str = "model"
    params: Any = None

    def b(self, x) -> np.ndarray:
        return np.asarray(self.drift(np.asarray(x, dtype=float)), dtype=float)

    def jac(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x), dtype=float)
        return _fd_derivative(self.drift, x)

    def sigma(self, x) -> np.ndarray:
        return np.asarray(self.diffusion(np.asarray(x, dtype=float)), dtype=float)

    def a(self, x) -> np.ndarray:
        s = self.sigma(x)
        return s @ np.swapaxes(s, -1, -2)

    def a_grad(self, x) -> np.ndarray:
        """d a / d x_k stacked on axis -3."""
        x = np.asarray(x, dtype=float)
        if self.covariance_grad is not None:
            return np.asarray(self.covariance_grad(x), dtype=float)
        g = _fd_derivative(self.a, x)  # (..., r, r, k)
        return np.moveaxis(g, -1, -3)


def constant_diffusion(dim: int, scale: float = 1.0) -> ArrayFn:
    eye = scale * np.eye(dim)

    def sigma(x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(eye, np.shape(x)[:-1] + (dim, dim)).copy()

    return sigma


def _zero_covariance_grad(dim: int) -> ArrayFn:
    def grad(x: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(x)[:-1] + (dim, dim, dim))

    return grad


def lipschitz_probe(model: Model, grid: np.ndarray, h: float = 1e-6) -> Dict[str, float]:
    """Largest finite-difference slope of b and sigma over the grid (heuristic)."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    rng = np.random.default_rng(0)
    d = rng.standard_normal(grid.shape)
    d *= h / np.linalg.norm(d, axis=-1, keepdims=True)
    lb = np.linalg.norm(model.b(grid + d) - model.b(grid), axis=-1) / h
    ls = np.linalg.norm(model.sigma(grid + d) - model.sigma(grid), axis=(-2, -1)) / h
    return {"drift": float(np.max(lb)), "diffusion": float(np.max(ls))}


# ----------------------------
# Griffith circuit
# ----------------------------
SIGMA_KINDS = ("const", "linear")


@dataclass(frozen=True)
class GriffithParams:
    alphas: tuple
    m: float = 1.0
    sigma_kind: str = "const"
    sigma_c: float = 1.0

    def __post_init__(self):
        alphas = tuple(float(a) for a in np.atleast_1d(self.alphas))
        object.__setattr__(self, "alphas", alphas)
        if not alphas:
            raise ConfigError("Griffith model needs at least one decay rate")
        if any(not math.isfinite(a) or a <= 0 for a in alphas):
            raise ConfigError(f"decay rates must be positive, got {alphas}")
        if not self.m >= 1:
            raise ConfigError(f"Hill exponent m must be >= 1, got {self.m}")
        if self.sigma_kind not in SIGMA_KINDS:
            raise ConfigError(f"sigma kind must be one of {SIGMA_KINDS}, got {self.sigma_kind!r}")
        if not self.sigma_c > 0:
            raise ConfigError("sigma scale c must be positive")

    @property
    def r(self) -> int:
        return len(self.alphas)

    @property
    def phi(self) -> float:
        return float(np.prod(self.alphas))

    @property
    def v0(self) -> np.ndarray:
        a = np.asarray(self.alphas)
        return np.array([np.prod(a[j + 1 :]) for j in range(self.r)])

    @property
    def growth_bound(self) -> float:
        """c in sigma_j^2(z) <= c (z^2 + 1)."""
        return self.sigma_c**2

    def sigma_values(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.sigma_kind == "const":
            return np.full_like(z, self.sigma_c)
        return self.sigma_c * np.sqrt(1.0 + z * z)


def hill(z, m: float) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    zm = np.abs(z) ** m
    return np.sign(z) * zm / (1.0 + zm)


def hill_prime(z, m: float) -> np.ndarray:
    # |z|^(m-1) is 1 at z=0 for m=1 and 0 for m>1
    z = np.abs(np.asarray(z, dtype=float))
    return m * z ** (m - 1.0) / (1.0 + z**m) ** 2


def griffith_drift(p: GriffithParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    alphas = np.asarray(p.alphas)
    out = np.empty_like(x)
    out[..., 0] = hill(x[..., -1], p.m) - alphas[0] * x[..., 0]
    out[..., 1:] = x[..., :-1] - alphas[1:] * x[..., 1:]
    return out


def griffith_linear_part(p: GriffithParams) -> np.ndarray:
    return -np.diag(p.alphas) + np.eye(p.r, k=-1)


def griffith_jacobian(p: GriffithParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = p.r
    J = np.broadcast_to(griffith_linear_part(p), x.shape[:-1] + (r, r)).copy()
    J[..., 0, r - 1] += hill_prime(x[..., -1], p.m)
    return J


def griffith_model(p: GriffithParams) -> Model:
    r = p.r

    def sigma(x: np.ndarray) -> np.ndarray:
        vals = p.sigma_values(x)
        return vals[..., :, None] * np.eye(r)

    def cov_grad(x: np.ndarray) -> np.ndarray:
        g = np.zeros(np.shape(x)[:-1] + (r, r, r))
        if p.sigma_kind == "linear":
            idx = np.arange(r)
            g[..., idx, idx, idx] = 2.0 * p.sigma_c**2 * np.asarray(x)
        return g

    return Model(
        dim=r,
        drift=lambda x: griffith_drift(p, x),
        diffusion=sigma,
        jacobian=lambda x: griffith_jacobian(p, x),
        covariance_grad=cov_grad,
        name=f"griffith(r={r}, m={p.m:g}, phi={p.phi:g})",
        params=p,
    )


def ou_model(lam: float, sigma: float = 1.0, dim: int = 1) -> Model:
    """dX = -lam X dt + eps sigma dW."""
    if not lam > 0:
        raise ConfigError("OU rate lambda must be positive")
    if not sigma > 0:
        raise ConfigError("OU sigma must be positive")
    return Model(
        dim=dim,
        drift=lambda x: -lam * np.asarray(x, dtype=float),
        diffusion=constant_diffusion(dim, sigma),
        jacobian=lambda x: np.broadcast_to(-lam * np.eye(dim), np.shape(x)[:-1] + (dim, dim)).copy(),
        covariance_grad=_zero_covariance_grad(dim),
        name=f"ou(lambda={lam:g})",
        params={"lambda": lam, "sigma": sigma},
    )


def build_model(spec: Mapping[str, Any] | Any) -> Model:
    """Model from a JSON-style spec ({"type": "griffith", ...} or {"type": "ou", ...})."""
    if hasattr(spec, "model_dump"):
        spec = spec.model_dump(by_alias=True)
    kind = spec.get("type")
    if kind == "griffith":
        sig = spec.get("sigma") or {}
        p = GriffithParams(
            alphas=tuple(spec["alphas"]),
            m=float(spec.get("m", 1.0)),
            sigma_kind=sig.get("type", "const"),
            sigma_c=float(sig.get("c", 1.0)),
        )
        return griffith_model(p)
    if kind == "ou":
        return ou_model(float(spec["lambda"]), float(spec.get("sigma", 1.0)), int(spec.get("dim", 1)))
    raise ConfigError(f"unknown model type {kind!r}")


# ----------------------------
# Grids
# ----------------------------
def box_grid(lo: Sequence[float], hi: Sequence[float], n: int) -> np.ndarray:
    lo, hi = np.atleast_1d(np.asarray(lo, float)), np.atleast_1d(np.asarray(hi, float))
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def annulus_grid(dim: int, R: float, R_max: float, n_radii: int = 20, n_directions: int = 64, seed: int = 0) -> np.ndarray:
    """Points on spheres of radii linspace(R, R_max) along fixed directions.

    In 2-D the directions are equally spaced angles; otherwise random unit
    vectors plus the coordinate axes and the diagonal, all with both signs.
    """
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif dim == 2:
        ang = 2 * np.pi * np.arange(n_directions) / n_directions
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    else:
        rng = np.random.default_rng(seed)
        d = rng.standard_normal((n_directions, dim))
        d = np.vstack([d, np.eye(dim), np.ones((1, dim))])
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        dirs = np.vstack([d, -d])
    radii = np.linspace(R, R_max, n_radii)
    return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, dim)


# ----------------------------
# Hypothesis reports
# ----------------------------
@dataclass
class HypothesisReport:
    check: str
    which: str
    grid: str
    margin: float
    margins: np.ndarray
    passed: bool
    params: Dict[str, float] = field(default_factory=dict)
    parts: Dict[str, float] = field(default_factory=dict)
    failing_points: List[List[float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        def clean(v: float):
            return None if not math.isfinite(v) else float(v)

        return {
            "check": self.check,
            "which": self.which,
            "grid": self.grid,
            "margin": clean(self.margin),
            "passed": bool(self.passed),
            "params": {k: float(v) for k, v in self.params.items()},
            "parts": {k: clean(v) for k, v in self.parts.items()},
            "n_points": int(np.size(self.margins)),
            "n_failing": len(self.failing_points),
            "failing_points": self.failing_points[:20],
        }


def _grid_label(grid: np.ndarray) -> str:
    norms = np.linalg.norm(grid, axis=-1)
    return f"{grid.shape[0]} points in R^{grid.shape[1]}, |x| in [{norms.min():.4g}, {norms.max():.4g}]"


def _report(check: str, which: str, grid: np.ndarray, margins: np.ndarray, ok: np.ndarray, **extra) -> HypothesisReport:
    margin = float(np.min(margins)) if margins.size else math.inf
    report = HypothesisReport(
        check=check,
        which=which,
        grid=_grid_label(grid) if grid.size else "empty",
        margin=margin,
        margins=margins,
        passed=bool(np.all(ok)),
        failing_points=grid[~ok].tolist(),
        **extra,
    )
    logger.info("%s on grid: %s (margin %.4g)", check, "PASS" if report.passed else "FAIL", margin)
    return report


def check_cooperative(model: Model, grid, tol: float = 1e-12) -> HypothesisReport:
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    r = model.dim
    if r == 1:
        margins = np.full(grid.shape[0], math.inf)
    else:
        J = model.jac(grid)
        off = ~np.eye(r, dtype=bool)
        margins = J[:, off].min(axis=-1)
    return _report("cooperative", "H1", grid, margins, margins >= -tol, params={"tol": tol})


def is_irreducible(J: np.ndarray, threshold: float = IRREDUCIBLE_THRESHOLD) -> bool:
    adj = np.abs(J) > threshold
    np.fill_diagonal(adj, False)
    n_comp, _ = connected_components(csr_matrix(adj), directed=True, connection="strong")
    return n_comp == 1


def check_irreducible(model: Model, grid, threshold: float = IRREDUCIBLE_THRESHOLD) -> HypothesisReport:
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    J = model.jac(grid)
    ok = np.array([is_irreducible(Jx, threshold) for Jx in J], dtype=bool)
    margins = np.where(ok, 1.0, -1.0)
    return _report("irreducible", "H1", grid, margins, ok, params={"threshold": threshold})


# ----------------------------
# Quadratic Lyapunov functions
# ----------------------------
@dataclass(frozen=True)
class LyapunovQuadratic:
    """V(x) = x^T B x."""

    B: np.ndarray
    residual: float = 0.0
    tol: float = LYAPUNOV_TOL

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.B, x)

    def gradient(self, x) -> np.ndarray:
        return 2.0 * np.asarray(x, dtype=float) @ self.B

    def hessian(self) -> np.ndarray:
        return 2.0 * self.B

    @property
    def min_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.B)[0])

    @property
    def max_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.B)[-1])


def solve_lyapunov(A, tol: float = LYAPUNOV_TOL) -> LyapunovQuadratic:
    """Solve A^T B + B A = -I over symmetric B (r(r+1)/2 unknowns)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    r = A.shape[0]
    if A.shape != (r, r):
        raise ConfigError(f"Lyapunov equation needs a square matrix, got {A.shape}")
    max_real = float(np.max(np.linalg.eigvals(A).real))
    if max_real >= 0:
        raise UnstableMatrixError(max_real)

    iu = np.triu_indices(r)
    n = iu[0].size
    M = np.empty((n, n))
    for col, (i, j) in enumerate(zip(*iu)):
        E = np.zeros((r, r))
        E[i, j] = E[j, i] = 1.0
        M[:, col] = (A.T @ E + E @ A)[iu]
    rhs = -np.eye(r)[iu]
    try:
        sol = linalg.solve(M, rhs)
    except linalg.LinAlgError as e:
        raise SingularSystemError(f"Lyapunov system is singular: {e}") from e

    B = np.zeros((r, r))
    B[iu] = sol
    B = np.triu(B) + np.triu(B, 1).T
    residual = float(np.linalg.norm(A.T @ B + B @ A + np.eye(r), np.inf))
    if residual > tol:
        raise NumericalFailure(f"Lyapunov residual {residual:.3g} exceeds {tol:.1g}")
    if np.linalg.eigvalsh(B)[0] <= 0:
        raise NumericalFailure("Lyapunov solution is not positive definite")
    return LyapunovQuadratic(B=B, residual=residual, tol=tol)


def _trace_term(model: Model, V: LyapunovQuadratic, grid: np.ndarray) -> np.ndarray:
    """Tr(sigma^T D^2V sigma) per grid point."""
    s = model.sigma(grid)
    return np.einsum("nji,jk,nki->n", s, V.hessian(), s)


def check_dissipative(model: Model, V: LyapunovQuadratic, R: float, grid) -> HypothesisReport:
    """<b, grad V> < 0 outside radius R."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    grid = grid[np.linalg.norm(grid, axis=-1) >= R]
    margins = -np.einsum("ni,ni->n", model.b(grid), V.gradient(grid))
    return _report("dissipative", "H1", grid, margins, margins > 0, params={"R": R})


def verify_h2(model: Model, V: LyapunovQuadratic, gamma: float, eps0: float, R: float, grid) -> HypothesisReport:
    """<b, grad V> + eps^2/2 Tr(sigma^T D^2V sigma) <= -gamma on |x| >= R, eps in {0, eps0}."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    grid = grid[np.linalg.norm(grid, axis=-1) >= R]
    flow = np.einsum("ni,ni->n", model.b(grid), V.gradient(grid))
    trace = _trace_term(model, V, grid)
    worst = np.maximum(flow, flow + 0.5 * eps0**2 * trace)
    margins = -gamma - worst
    return _report("H2", "H2", grid, margins, margins >= 0, params={"gamma": gamma, "eps0": eps0, "R": R})


def verify_h3(
    model: Model,
    V: LyapunovQuadratic,
    theta: float,
    eta: float,
    C: float,
    M: float,
    grid,
    excluded_radius: float = H3_EXCLUDED_RADIUS,
) -> HypothesisReport:
    """Drift bound and trace floor of H3.

    drift_bound:  <b,grad V> + theta/2 Tr(s^T D^2V s) + |s^T grad V|^2 / (eta V) <= C (1 + V)
    trace_floor:  Tr(s^T D^2V s) >= -M - C V
    """
    if theta <= 0 or eta <= 0 or C < 0 or M < 0:
        raise ConfigError("H3 needs theta, eta > 0 and C, M >= 0")
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    grid = grid[np.linalg.norm(grid, axis=-1) >= excluded_radius]
    v = V.value(grid)
    g = V.gradient(grid)
    trace = _trace_term(model, V, grid)
    st_g = np.einsum("nji,nj->ni", model.sigma(grid), g)
    lhs = np.einsum("ni,ni->n", model.b(grid), g) + 0.5 * theta * trace + np.sum(st_g**2, axis=-1) / (eta * v)
    drift_bound = C * (1.0 + v) - lhs
    trace_floor = trace + M + C * v
    margins = np.minimum(drift_bound, trace_floor)
    return _report(
        "H3",
        "H3",
        grid,
        margins,
        margins >= 0,
        params={"theta": theta, "eta": eta, "C": C, "M": M},
        parts={
            "drift_bound": float(drift_bound.min()) if drift_bound.size else math.inf,
            "trace_floor": float(trace_floor.min()) if trace_floor.size else math.inf,
        },
    )


# ----------------------------
# Griffith constants (proof recipe)
# ----------------------------
def griffith_h2_constants(p: GriffithParams, V: LyapunovQuadratic, eps0: float = 0.1) -> Dict[str, float]:
    """(gamma, eps0, R) such that the H2 inequality holds for the Griffith field.

    With A the linear part, <b, grad V> <= -|x|^2 + 2 beta |x| where beta is the
    norm of the first row of B (|f| <= 1). eps0 is reduced until
    eps0^2 c Tr(B) <= 1/4, then gamma = 1 and R solves 3/4 R^2 - 2 beta R - 5/4 = 0.
    """
    c = p.growth_bound
    k = c * float(np.trace(V.B))
    eps0 = min(eps0, 0.5 / math.sqrt(k))
    beta = float(np.linalg.norm(V.B[0]))
    R = (2 * beta + math.sqrt(4 * beta**2 + 15.0 / 4.0)) / 1.5
    return {"gamma": 1.0, "eps0": eps0, "R": R}


def griffith_h3_constants(p: GriffithParams, V: LyapunovQuadratic) -> Dict[str, float]:
    """(theta, eta, C, M) such that H3 holds for the Griffith field.

    theta and eta are chosen so the |x|^2 terms of the drift bound sum to
    -1/4 |x|^2; the leftover constant is 2 beta^2 + 1/4.
    """
    c = p.growth_bound
    theta = 1.0 / (8.0 * c * float(np.trace(V.B)))
    eta = 32.0 * c * V.max_eig**2 / V.min_eig
    beta = float(np.linalg.norm(V.B[0]))
    C = max(2 * beta**2 + 0.25, 1.0)
    return {"theta": theta, "eta": eta, "C": C, "M": 1.0}


# ----------------------------
# Hopf constants (r = 5)
# ----------------------------
def hopf_threshold() -> float:
    return 1.0 / math.cos(2 * math.pi / 5) ** 5


def hopf_constants(m: float, r: int = 5) -> tuple[float, float]:
    """(eta, beta) of the Hopf bifurcating point of the 5-dimensional circuit."""
    if r != 5:
        raise ConfigError("Hopf constants are only defined for r = 5")
    threshold = hopf_threshold()
    base = m * math.cos(2 * math.pi / 5) ** 5 - 1.0
    if abs(base) < 1e-12:
        base = 0.0
    if base < 0:
        raise NoHopfPointError(m, threshold)
    eta = base ** (1.0 / m)
    beta = (eta ** (m - 1.0) / (1.0 + eta**m)) ** 0.2
    return eta, beta
