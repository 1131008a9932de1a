from datetime import datetime, timezone
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class TileScore(BaseModel):
    """Tile quality record: score = num_nuclei * clarity - blank_space"""

    num_nuclei: int = Field(..., ge=0)
    clarity: float = Field(..., ge=0)
    blank_fraction: float = Field(..., ge=0, le=1)
    blank_space: float = Field(..., ge=0)          # blank_fraction * blank_weight
    score: float


class BestSlice(BaseModel):
    slide_id: str
    row: int
    col: int
    origin_x: int
    origin_y: int
    width: int
    height: int
    source: str                                  # path of the file the tile came from
    image: str                                   # saved copy, relative to the output dir
    score: TileScore


class ClinicalRecord(BaseModel):
    case_id: str
    time: float = Field(..., ge=0)               # days
    event: bool                                  # True = death observed, False = censored
    label: Optional[str] = None


class RiskLevel(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"


class SurvivalStep(BaseModel):
    time: float
    survival: float = Field(..., ge=0, le=1)
    at_risk: int = Field(..., ge=0)


class SurvivalCurve(BaseModel):
    group: str
    steps: List[SurvivalStep]

    @model_validator(mode="after")
    def check_monotone(self):
        for previous, current in zip(self.steps, self.steps[1:]):
            if current.time <= previous.time:
                raise ValueError("survival curve times must be strictly increasing")
            if current.survival > previous.survival + 1e-15:
                raise ValueError("survival curve must be non-increasing")
        return self


class LogRankResult(BaseModel):
    group_a: str
    group_b: str
    observed_a: float
    observed_b: float
    expected_a: float
    expected_b: float
    variance: float
    statistic: float = Field(..., ge=0)
    p_value: float = Field(..., gt=0, le=1)
    degenerate: bool = False

    @property
    def comparison(self) -> str:
        return f"({self.group_a} vs {self.group_b})"


class ClusterAssignment(BaseModel):
    k: int
    clusters: Dict[str, int]                     # case_id -> cluster index
    risk: Dict[int, str] = Field(default_factory=dict)   # cluster index -> risk name

    def clusters_by_risk(self) -> List[int]:
        """Cluster indices ordered from lowest to highest risk"""
        order = list(risk_names(self.k))
        return sorted(self.risk, key=lambda cluster: order.index(self.risk[cluster]))


def risk_names(k: int) -> List[str]:
    if k == 1:
        return [RiskLevel.LOW.value]
    if k == 2:
        return [RiskLevel.LOW.value, RiskLevel.HIGH.value]
    if k == 3:
        return [RiskLevel.LOW.value, RiskLevel.MEDIUM.value, RiskLevel.HIGH.value]
    return [f"R{i + 1}" for i in range(k)]


class ClassMetrics(BaseModel):
    label: str
    precision: float
    recall: float
    f1: float
    support: int


class MetricsReport(BaseModel):
    accuracy: float = Field(..., ge=0, le=1)
    macro_f1: float = Field(..., ge=0, le=1)
    weighted_f1: float = Field(..., ge=0, le=1)
    per_class: List[ClassMetrics]
    labels: List[str]
    confusion_matrix: List[List[int]]            # rows = truth, cols = prediction


class MethodReport(BaseModel):
    method: str
    metrics: MetricsReport


class StageRecord(BaseModel):
    name: str
    inputs: Dict[str, str] = Field(default_factory=dict)     # relative path -> sha256
    outputs: Dict[str, str] = Field(default_factory=dict)
    seconds: float = 0.0
    status: str = "ok"


class RunManifest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    tool: str = "pathx"
    version: str
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    config: dict
    stages: List[StageRecord] = Field(default_factory=list)
