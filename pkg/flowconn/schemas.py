from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from flowconn import settings

Mode = Literal["oracle", "monte-carlo"]
QSource = Literal["analytic", "monte-carlo"]


class ExperimentConfig(BaseModel):
    """
    Fully resolved experiment definition. Built from a key=value file merged
    with command-line flags and embedded in every report.
    """

    model_config = ConfigDict(extra="forbid")

    manifold: str = Field(default="sphere:n=3", examples=["torus:R=2,r=1"])
    curve: str = Field(default="quarter-great-circle", examples=["loop:center=1;0;0,radius=0.1"])
    nodes: int = Field(default=200, ge=2)
    scheme: Literal["stratonovich-heun", "ito-euler"] = "stratonovich-heun"
    retract_every_step: bool = True
    h: float | None = Field(default=None, gt=0)
    dt: float = Field(default=1e-3, gt=0)
    paths: int = Field(default=200_000, ge=2)
    seed: int = Field(default=42, ge=0, lt=2**64)
    antithetic: bool = True
    richardson: bool = False
    mode: Mode = "oracle"
    q_source: QSource = "analytic"
    derivative: Literal["analytic", "fd"] | None = None

    bias_constant: float = Field(default_factory=lambda: settings.bias_constant, ge=0)
    oracle_tol: float = Field(default_factory=lambda: settings.oracle_tol, gt=0)
    identity_tol: float | None = Field(default=None, gt=0)

    point: str | None = Field(default=None, examples=["1,0,0"])
    direction: str | None = Field(default=None, examples=["0,1,0"])
    recover: Literal["segment", "loop"] = "segment"
    ladder: str = Field(default="0.04,0.02,0.01")
    sample_points: int = Field(default=1000, ge=1)
    field_case: Literal["specialization", "constant", "exact"] = "specialization"
    i: int = Field(default=1, ge=1)
    j: int = Field(default=2, ge=1)

    out: str | None = Field(default=None, exclude=True)
    format: Literal["json", "csv"] = "json"

    @model_validator(mode="after")
    def resolve_step(self):
        if self.h is None:
            self.h = min(1e-4, self.dt / 10)
        return self


class TheoremComponents(BaseModel):
    dpsi_ij: float
    dpsi_ji: float
    q_circulation: float
    boundary_ij: float
    boundary_ji: float


class TheoremEntry(BaseModel):
    """One ordered index pair; i and j are 1-based."""

    model_config = ConfigDict(populate_by_name=True)

    i: int
    j: int
    lhs: float
    rhs: float
    rhs_se: float = Field(ge=0)
    components: TheoremComponents
    residual: float
    passed: bool = Field(alias="pass")


class TheoremReport(BaseModel):
    manifold: str
    curve: str
    mode: Mode
    q_source: QSource
    paths: int | None
    dt: float | None
    h: float | None
    N: int
    seed: int | None
    scheme: str | None
    entries: list[TheoremEntry]
    config: ExperimentConfig | None = None

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries)

    def entry(self, i: int, j: int) -> TheoremEntry:
        """Entry for 0-based ambient indices (i, j)."""
        for entry in self.entries:
            if entry.i == i + 1 and entry.j == j + 1:
                return entry
        raise KeyError((i, j))


class IdentityCheck(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    name: str
    max_violation: float
    worst_point: list[float]
    passed: bool = Field(alias="pass")


class IdentityReport(BaseModel):
    manifold: str
    derivative: str
    points: int
    tolerance: float
    checks: list[IdentityCheck]
    config: ExperimentConfig | None = None

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


class RecoveryRow(BaseModel):
    """Recovered entry at one loop radius or segment length; i and j are 1-based."""

    size: float
    i: int
    j: int
    estimate: float
    std_error: float
    reference: float | None = None


class RecoveryReport(BaseModel):
    manifold: str
    kind: Literal["segment", "loop"]
    point: list[float]
    direction: list[float] | None
    mode: Mode
    rows: list[RecoveryRow]
    config: ExperimentConfig | None = None


class ContourDriftReport(BaseModel):
    manifold: str
    curve: str
    field_case: str
    i: int
    j: int
    value: float
    oracle: float | None = None
    difference: float | None = None
    config: ExperimentConfig | None = None


class ChristoffelEntry(BaseModel):
    """Gamma^i_{jk} with 1-based indices."""

    i: int
    j: int
    k: int
    value: float


class ChristoffelReport(BaseModel):
    manifold: str
    point: list[float]
    entries: list[ChristoffelEntry]
    config: ExperimentConfig | None = None
