import logging

import numpy as np
from fastapi import APIRouter, HTTPException

from app.models.params import FitOptions
from app.models.requests import (DistanceRequest, DistanceResponse, FitRequest, FitResponse,
                                 SimulateRequest, SimulateResponse)
from app.services.model_engines import build_engine, describe_engine
from app.utils.data_loader import Dataset
from app.utils.errors import ZeroCountError
from app.utils.metrics import GoodnessOfFitMetrics

logger = logging.getLogger(__name__)

router = APIRouter()


def _fit(request: FitRequest):
    data = Dataset.from_array(np.asarray(request.counts), request.variable_names, source="request")
    engine = build_engine(request.model.value, FitOptions(), tol=request.bridge_tol)
    return data, engine.fit(data.values)


@router.post("/fit", response_model=FitResponse)
def fit_model(request: FitRequest):
    try:
        data, engine = _fit(request)
        summary = describe_engine(engine, list(data.variable_names))
    except ZeroCountError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    except Exception as exc:
        logger.exception("fit failed")
        raise HTTPException(status_code=500, detail=str(exc)) from exc
    return FitResponse(model=request.model, n=data.n, p=data.p, summary=summary)


@router.post("/simulate", response_model=SimulateResponse)
def simulate(request: SimulateRequest):
    try:
        data, engine = _fit(request)
        rows = engine.simulate(request.n, seed=request.seed)
    except ZeroCountError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    except Exception as exc:
        logger.exception("simulation failed")
        raise HTTPException(status_code=500, detail=str(exc)) from exc
    return SimulateResponse(model=request.model, variable_names=list(data.variable_names),
                            rows=rows.tolist())


@router.post("/distance", response_model=DistanceResponse)
def distance(request: DistanceRequest):
    try:
        x, y = np.asarray(request.x), np.asarray(request.y)
        value = GoodnessOfFitMetrics.wasserstein_pd(x, y, request.order)
        marginal = GoodnessOfFitMetrics.marginal_distances(x, y, request.order)
        amc = None
        if request.omega_hnb is not None and request.omega_tlnpn is not None:
            amc = GoodnessOfFitMetrics.amc(request.omega_hnb, request.omega_tlnpn)
    except ZeroCountError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return DistanceResponse(order=request.order, distance=value, marginal=marginal.tolist(), amc=amc)
