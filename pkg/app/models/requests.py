from enum import Enum
from typing import Annotated, Dict, List, Optional

from pydantic import AfterValidator, BaseModel, Field


class ModelTag(str, Enum):
    HNB = "hnb"
    ZINB = "zinb"
    TLNPN = "tlnpn"


def _rectangular(rows: List[List[float]]) -> List[List[float]]:
    if not rows or len({len(row) for row in rows}) != 1 or not rows[0]:
        raise ValueError("counts must be a nonempty rectangular matrix")
    return rows


CountMatrix = Annotated[List[List[float]], AfterValidator(_rectangular)]


class FitRequest(BaseModel):
    counts: CountMatrix
    model: ModelTag = ModelTag.TLNPN
    variable_names: Optional[List[str]] = None
    bridge_tol: float = Field(default=1e-6, gt=0)


class SimulateRequest(FitRequest):
    n: int = Field(ge=1, le=100_000)
    seed: int = 0


class DistanceRequest(BaseModel):
    x: CountMatrix
    y: CountMatrix
    order: int = Field(default=2, ge=1, le=2)
    omega_hnb: Optional[float] = Field(default=None, ge=0)
    omega_tlnpn: Optional[float] = Field(default=None, ge=0)


class FitResponse(BaseModel):
    model: ModelTag
    n: int
    p: int
    summary: Dict


class SimulateResponse(BaseModel):
    model: ModelTag
    variable_names: List[str]
    rows: List[List[float]]


class DistanceResponse(BaseModel):
    order: int
    distance: float
    marginal: List[float]
    amc: Optional[float] = None
