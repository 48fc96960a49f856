"""Experiment config schema for run_experiment.py.

A config names one model and any number of command blocks; the subcommand
picks the block it runs. Unknown keys are rejected at every level.

    {
      "model": {"type": "griffith", "alphas": [0.4, 1.0], "m": 2,
                "sigma": {"type": "const", "c": 1.0}},
      "master_seed": 7,
      "sweep": {"eps_list": [0.3, 0.2, 0.1, 0.05]}
    }

Points are coordinate lists, or {"v0": z} for z * v0 of a Griffith model.
"""
from __future__ import annotations

from typing import Annotated, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ----------------------------
# Models
# ----------------------------
class SigmaSpec(_Strict):
    type: Literal["const", "linear"] = "const"
    c: float = Field(1.0, gt=0)


class GriffithModelSpec(_Strict):
    type: Literal["griffith"]
    alphas: List[Annotated[float, Field(gt=0)]] = Field(min_length=1)
    m: float = Field(1.0, ge=1)
    sigma: SigmaSpec = SigmaSpec()


class OuModelSpec(_Strict):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    type: Literal["ou"]
    lam: float = Field(1.0, gt=0, alias="lambda")
    sigma: float = Field(1.0, gt=0)
    dim: int = Field(1, ge=1)


ModelSpec = Annotated[Union[GriffithModelSpec, OuModelSpec], Field(discriminator="type")]


class V0Point(_Strict):
    v0: float


Point = Union[List[float], V0Point]


# ----------------------------
# Command blocks
# ----------------------------
class EquilibriaBlock(_Strict):
    seeds: List[Point] = []
    arc_tol: float = Field(1e-3, gt=0)
    newton_tol: float = Field(1e-12, gt=0)


class SimulateBlock(_Strict):
    x0: Point
    eps: float = Field(ge=0)
    T: float = Field(gt=0)
    step: float = Field(1e-3, gt=0)
    n_paths: int = Field(1, ge=1)
    record_every: Optional[int] = Field(None, ge=1)


class StationaryBlock(_Strict):
    eps: float = Field(ge=0)
    T_total: Optional[float] = Field(None, gt=0)
    step: float = Field(1e-3, gt=0)
    burn_in: float = Field(0.2, ge=0, lt=1)
    x0: Optional[Point] = None
    delta: float = Field(0.2, gt=0)
    bins: int = Field(40, ge=1)
    equilibria: Optional[List[Point]] = None


class SweepBlock(_Strict):
    eps_list: List[Annotated[float, Field(gt=0)]] = Field(min_length=1)
    T_base: float = Field(100.0, gt=0)
    T_cap: float = Field(2e4, gt=0)
    eps_ref: float = Field(0.05, gt=0)
    step: float = Field(1e-3, gt=0)
    burn_in: float = Field(0.2, ge=0, lt=1)
    x0: Optional[Point] = None
    delta: float = Field(0.2, gt=0)
    bins: int = Field(40, ge=1)
    stable: Optional[List[Point]] = None
    unstable: List[Point] = []

    @field_validator("eps_list")
    @classmethod
    def _decreasing(cls, v: List[float]) -> List[float]:
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        return v


class EscapeSpec(_Strict):
    delta: float = Field(1e-2, ge=0)
    v: Optional[List[float]] = None
    eta: float = Field(1e-2, gt=0)
    arc: Optional[List[Point]] = None


class QuasipotentialBlock(_Strict):
    x: Point
    y: Point
    T_grid: List[Annotated[float, Field(gt=0)]] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0]
    n_nodes: int = Field(200, ge=2)
    metric: Literal["sobolev", "euclidean"] = "sobolev"
    max_iters: int = Field(50_000, ge=1)
    grad_tol: float = Field(1e-6, gt=0)
    escape: Optional[EscapeSpec] = None
    target_eta: Optional[float] = Field(None, gt=0)


class VerifyBlock(_Strict):
    box: float = Field(3.0, gt=0)
    grid_n: int = Field(10, ge=2)
    R_max: float = Field(50.0, gt=0)
    n_pairs: int = Field(100, ge=1)
    monotone_T: float = Field(1.0, gt=0)
    eps0: float = Field(0.1, gt=0)
    gamma: Optional[float] = Field(None, gt=0)
    R: Optional[float] = Field(None, gt=0)
    theta: Optional[float] = Field(None, gt=0)
    eta: Optional[float] = Field(None, gt=0)
    C: Optional[float] = Field(None, ge=0)
    M: Optional[float] = Field(None, ge=0)


class Table1Block(_Strict):
    rows: List[Tuple[Annotated[float, Field(ge=1)], Annotated[float, Field(gt=0)]]] = [
        (1.0, 1.2),
        (1.0, 0.5),
        (2.0, 0.6),
        (2.0, 0.4),
    ]
    eps: float = Field(0.05, gt=0)
    T_base: float = Field(1000.0, gt=0)
    T_cap: float = Field(2e4, gt=0)
    step: float = Field(1e-3, gt=0)
    burn_in: float = Field(0.2, ge=0, lt=1)
    delta: float = Field(0.3, gt=0)
    x0_multiplier: float = 0.7


class ExperimentConfig(_Strict):
    model: Optional[ModelSpec] = None
    output_dir: Optional[str] = None
    master_seed: int = Field(0, ge=0, lt=2**64)
    threads: Optional[int] = Field(None, ge=1)
    equilibria: Optional[EquilibriaBlock] = None
    simulate: Optional[SimulateBlock] = None
    stationary: Optional[StationaryBlock] = None
    sweep: Optional[SweepBlock] = None
    quasipotential: Optional[QuasipotentialBlock] = None
    verify: Optional[VerifyBlock] = None
    table1: Optional[Table1Block] = None

    @model_validator(mode="after")
    def _v0_points_need_griffith(self) -> "ExperimentConfig":
        if self.model is not None and self.model.type == "griffith":
            return self
        for name in ("equilibria", "simulate", "stationary", "sweep", "quasipotential"):
            block = getattr(self, name)
            if block is not None and _has_v0_point(block):
                raise ValueError(f"{name}: {{'v0': z}} points need a griffith model")
        return self


def _has_v0_point(value) -> bool:
    if isinstance(value, V0Point):
        return True
    if isinstance(value, BaseModel):
        return any(_has_v0_point(getattr(value, k)) for k in type(value).model_fields)
    if isinstance(value, (list, tuple)):
        return any(_has_v0_point(v) for v in value)
    return False
