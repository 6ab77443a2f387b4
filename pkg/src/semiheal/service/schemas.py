"""Request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class TableObj(BaseModel):
    n: int = Field(ge=1)
    entries: list[list[int]]


class PairObj(BaseModel):
    n: int = Field(ge=2)
    p: float = Field(gt=0.0, lt=1.0)
    seed: int
    clean: list[list[int]]
    corrupt: list[list[int]]
    corrupted_cells: list[list[int]]


class GenRequest(BaseModel):
    n: int = Field(ge=1)
    count: int = Field(ge=1)
    seed: int = 0
    seed_cells: list[list[int]] = Field(default_factory=list)
    distinct_classes: bool = False


class GenResponse(BaseModel):
    requested: int
    generated: int
    tables: list[TableObj]


class CorruptRequest(BaseModel):
    tables: list[TableObj]
    p: float = Field(gt=0.0, lt=1.0)
    seed: int = 0


class CorruptResponse(BaseModel):
    pairs: list[PairObj]


class TrustRequest(BaseModel):
    table: TableObj
    symmetric: bool = False


class TrustResponse(BaseModel):
    trust: dict


class ForestHyperObj(BaseModel):
    n_trees: int = Field(default=100, ge=1)
    max_depth: int | None = Field(default=12, ge=1)
    min_leaf: int = Field(default=2, ge=1)
    features_per_split: int = Field(default=4, ge=1, le=12)
    seed: int = 0
    criterion: str = "gini"


class TrainRequest(BaseModel):
    pairs: list[PairObj]
    hyper: ForestHyperObj = Field(default_factory=ForestHyperObj)
    bilateral_votes: bool = False
    symmetric_trust: bool = False


class TrainResponse(BaseModel):
    model: dict
    rows: int


class HealRequest(BaseModel):
    pairs: list[PairObj]
    mode: str = "hybrid"
    model: dict | None = None
    tau: float = Field(default=0.5, gt=0.0, lt=1.0)
    bilateral_votes: bool = False
    symmetric_trust: bool = False
    size_penalty_exponent: int = Field(default=1, ge=1, le=2)
    backtrack_budget: int | None = Field(default=None, ge=0)


class HealResponse(BaseModel):
    reports: list[dict]


class ExperimentRequest(BaseModel):
    config: dict


class ExperimentResponse(BaseModel):
    record: dict


class ExceedsCRequest(BaseModel):
    n: int = Field(ge=2)
    p: float = Field(gt=0.0, lt=1.0)


class ExceedsCResponse(BaseModel):
    n: int
    p: float
    probability: float


class FrequencyRequest(BaseModel):
    table: TableObj


class FrequencyResponse(BaseModel):
    report: dict


class ExportRequest(BaseModel):
    records: list[dict]


class ExportResponse(BaseModel):
    metrics_csv: str
    passes_csv: str


class HealthResponse(BaseModel):
    status: str
    version: str
