"""Stability Analysis API
=======================

FastAPI service for the deterministic analyses: equilibrium classification,
zero-noise support prediction, Hopf constants, Lyapunov solves and the
hypothesis checks. Monte-Carlo and path optimization stay in the batch CLI
(run_experiment.py).

Endpoints
---------
GET  /health                    -> { status: "ok" }
POST /equilibria                -> Griffith equilibria, spectra, h' cross-check
GET  /table1/predict?m=&phi=    -> predicted zero-noise support
GET  /hopf?m=                   -> (eta, beta) of the 5-dimensional circuit
POST /lyapunov                  -> B with A^T B + B A = -I
POST /verify                    -> H1-H3 grid reports with recipe constants

Models (request bodies)
-----------------------
GriffithRequest:
    alphas: List[float]          decay rates (all > 0)
    m: float = 1.0               Hill exponent (>= 1)
    sigma: {type, c}             "const" or "linear", c > 0

VerifyRequest (GriffithRequest plus):
    box: float = 3.0             half-width of the cooperative/irreducible grid
    grid_n: int = 10             points per axis
    R_max: float = 50.0          outer radius of the H2/H3 annulus
    eps0: float = 0.1

LyapunovRequest:
    A: List[List[float]]         Hurwitz matrix

Notes
-----
* ConfigError -> 400, NumericalFailure -> 422 (detail carries the message).
* Results are deterministic; nothing is cached or stored.
"""
from __future__ import annotations

from typing import Any, Dict, List

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from equilibria import classify_griffith, phi_max
from errors import ConfigError, NumericalFailure, StabilityError
from experiment_models import SigmaSpec
from measure import table1_predict
from models import (
    GriffithParams,
    annulus_grid,
    box_grid,
    check_cooperative,
    check_dissipative,
    check_irreducible,
    griffith_h2_constants,
    griffith_h3_constants,
    griffith_linear_part,
    griffith_model,
    hopf_constants,
    hopf_threshold,
    solve_lyapunov,
    verify_h2,
    verify_h3,
)
from settings import configure_logging, get_logger, get_settings

configure_logging(get_settings().log_level)
logger = get_logger("app")

app = FastAPI(title="Stability Analysis API")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# --- models ---
class GriffithRequest(BaseModel):
    alphas: List[float] = Field(min_length=1)
    m: float = 1.0
    sigma: SigmaSpec = SigmaSpec()

    def params(self) -> GriffithParams:
        return GriffithParams(tuple(self.alphas), self.m, self.sigma.type, self.sigma.c)


class VerifyRequest(GriffithRequest):
    box: float = Field(3.0, gt=0)
    grid_n: int = Field(10, ge=2, le=60)
    R_max: float = Field(50.0, gt=0)
    eps0: float = Field(0.1, gt=0)


class LyapunovRequest(BaseModel):
    A: List[List[float]]


# --- helpers ---
def _raise_http(e: StabilityError):
    if isinstance(e, NumericalFailure):
        raise HTTPException(422, str(e))
    raise HTTPException(400, str(e))


# --- endpoints ---
@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/equilibria")
def equilibria(req: GriffithRequest) -> Dict[str, Any]:
    try:
        return classify_griffith(req.params()).to_dict()
    except StabilityError as e:
        _raise_http(e)


@app.get("/table1/predict")
def predict(m: float, phi: float) -> Dict[str, Any]:
    try:
        prediction = table1_predict(m, phi)
    except StabilityError as e:
        _raise_http(e)
    return {**prediction.to_dict(), "phi_m": phi_max(m)}


@app.get("/hopf")
def hopf(m: float) -> Dict[str, Any]:
    try:
        eta, beta = hopf_constants(m)
    except StabilityError as e:
        _raise_http(e)
    return {"m": m, "eta": eta, "beta": beta, "threshold": hopf_threshold()}


@app.post("/lyapunov")
def lyapunov(req: LyapunovRequest) -> Dict[str, Any]:
    try:
        A = np.asarray(req.A, dtype=float)
        if A.ndim != 2:
            raise ConfigError("A must be a square matrix")
        V = solve_lyapunov(A)
    except StabilityError as e:
        _raise_http(e)
    return {"B": V.B.tolist(), "residual": V.residual, "min_eig": V.min_eig, "max_eig": V.max_eig}


@app.post("/verify")
def verify(req: VerifyRequest) -> Dict[str, Any]:
    try:
        p = req.params()
        model = griffith_model(p)
        V = solve_lyapunov(griffith_linear_part(p))
        h2 = griffith_h2_constants(p, V, req.eps0)
        h3 = griffith_h3_constants(p, V)
        r = p.r
        box = box_grid([-req.box] * r, [req.box] * r, req.grid_n)
        annulus = annulus_grid(r, h2["R"], max(req.R_max, 2 * h2["R"]))
        reports = [
            check_cooperative(model, box),
            check_irreducible(model, box),
            check_dissipative(model, V, h2["R"], annulus),
            verify_h2(model, V, h2["gamma"], h2["eps0"], h2["R"], annulus),
            verify_h3(model, V, h3["theta"], h3["eta"], h3["C"], h3["M"], np.vstack([box, annulus])),
        ]
    except StabilityError as e:
        _raise_http(e)
    logger.info("verify %s: %s", model.name, [rep.passed for rep in reports])
    return {
        "model": model.name,
        "constants": {**h2, **h3},
        "reports": [rep.to_dict() for rep in reports],
        "all_passed": all(rep.passed for rep in reports),
    }
