"""
Schemas for field laws, experiment configurations, manifests and reports.
"""

from __future__ import annotations

from datetime import datetime
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, RootModel, model_validator


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# --- field laws -----------------------------------------------------------


class UniformLaw(StrictModel):
    kind: Literal["iid_uniform"] = "iid_uniform"
    lo: float = Field(0.0, ge=0.0, examples=[0.0])
    hi: float = Field(1.0, ge=0.0, examples=[1.0])

    @model_validator(mode="after")
    def _ordered(self) -> "UniformLaw":
        if self.lo > self.hi:
            raise ValueError(f"lo={self.lo} exceeds hi={self.hi}")
        return self

    def bounds(self) -> List[float]:
        return [self.lo, self.hi]


class BernoulliLaw(StrictModel):
    kind: Literal["bernoulli"] = "bernoulli"
    p: float = Field(..., ge=0.0, le=1.0, description="Probability of an open bond")
    value: float = Field(1.0, ge=0.0, description="Conductance of an open bond")

    def bounds(self) -> List[float]:
        return [0.0, self.value]


class ConstantLaw(StrictModel):
    kind: Literal["constant"] = "constant"
    c: float = Field(1.0, ge=0.0)

    def bounds(self) -> List[float]:
        return [self.c]


PositiveLaw = Annotated[Union[UniformLaw, ConstantLaw], Field(discriminator="kind")]


class MixtureLaw(StrictModel):
    kind: Literal["iid_mixture"] = "iid_mixture"
    p_zero: float = Field(..., ge=0.0, le=1.0, description="Probability of ω(b) = 0")
    positive: PositiveLaw

    def bounds(self) -> List[float]:
        return [0.0, *self.positive.bounds()]


class AxisLayers(StrictModel):
    """Bonds along one axis take ``values[x[along] % len(values)]``."""

    along: int = Field(..., ge=0, description="Coordinate the value depends on")
    values: List[float] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _nonnegative(self) -> "AxisLayers":
        if any(v < 0 for v in self.values):
            raise ValueError("layer values must be nonnegative")
        return self


class LayeredLaw(StrictModel):
    kind: Literal["layered"] = "layered"
    axis_rules: List[AxisLayers] = Field(
        ..., min_length=2, description="One rule per bond axis, in axis order"
    )

    def bounds(self) -> List[float]:
        return [v for rule in self.axis_rules for v in rule.values]


FieldLaw = Annotated[
    Union[UniformLaw, BernoulliLaw, ConstantLaw, MixtureLaw, LayeredLaw],
    Field(discriminator="kind"),
]


# --- test functions -------------------------------------------------------


class FourierTerm(StrictModel):
    amplitude: float
    wavevector: List[int] = Field(..., min_length=1, examples=[[1, 0]])
    phase: Literal["cos", "sin"] = "cos"


class FourierSpec(StrictModel):
    """Constant plus a finite sum of periodic modes on the unit torus."""

    name: Optional[str] = None
    constant: float = 0.0
    terms: List[FourierTerm] = Field(default_factory=list)

    def label(self) -> str:
        if self.name:
            return self.name
        parts = [f"{self.constant:g}"] if self.constant or not self.terms else []
        for term in self.terms:
            k = ",".join(str(n) for n in term.wavevector)
            parts.append(f"{term.amplitude:g}{term.phase}({k})")
        return "+".join(parts)


def _default_battery() -> List[FourierSpec]:
    return [
        FourierSpec(name="one", constant=1.0),
        FourierSpec(
            name="cos_x1", terms=[FourierTerm(amplitude=1.0, wavevector=[1, 0])]
        ),
        FourierSpec(
            name="sin_x1",
            terms=[FourierTerm(amplitude=1.0, wavevector=[1, 0], phase="sin")],
        ),
    ]


# --- experiment configurations --------------------------------------------


def _power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


class ExperimentBase(StrictModel):
    law: FieldLaw
    dim: int = Field(2, ge=2)
    cap: float = Field(1.0, gt=0.0)
    seed: int = Field(0, ge=0)
    output_dir: Optional[str] = None
    tol: Optional[float] = Field(None, gt=0.0)
    workers: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _law_within_cap(self) -> "ExperimentBase":
        bad = [v for v in self.law.bounds() if v < 0 or v > self.cap]
        if bad:
            raise ValueError(f"law parameters {bad} outside [0, cap={self.cap}]")
        if isinstance(self.law, LayeredLaw):
            if len(self.law.axis_rules) != self.dim:
                raise ValueError("layered law needs one rule per axis")
            if any(rule.along >= self.dim for rule in self.law.axis_rules):
                raise ValueError("layered rule refers to a missing coordinate")
        return self


class DiffusionOverride(StrictModel):
    matrix: List[List[float]]


class GenEnvConfig(ExperimentBase):
    kind: Literal["gen-env"] = "gen-env"
    side: int = Field(..., ge=2)
    threshold: Optional[float] = Field(None, ge=0.0)


class ClusterStatsConfig(ExperimentBase):
    kind: Literal["cluster-stats"] = "cluster-stats"
    sides: List[int] = Field(..., min_length=1)
    n_samples: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _sides(self) -> "ClusterStatsConfig":
        if any(s < 2 for s in self.sides):
            raise ValueError("every side must be at least 2")
        return self


class CorrectorConfig(ExperimentBase):
    kind: Literal["corrector"] = "corrector"
    sides: List[int] = Field(..., min_length=1)
    n_seeds: int = Field(1, ge=1)
    domination_threshold: Optional[float] = Field(None, ge=0.0)

    @model_validator(mode="after")
    def _sides_increasing(self) -> "CorrectorConfig":
        if any(s < 2 for s in self.sides):
            raise ValueError("every side must be at least 2")
        if any(b <= a for a, b in zip(self.sides, self.sides[1:])):
            raise ValueError("sides must be strictly increasing")
        return self


class ResolventConfig(ExperimentBase):
    kind: Literal["resolvent"] = "resolvent"
    sides: List[int] = Field(..., min_length=1, description="Lattice sides, ε = 1/L")
    lambdas: List[float] = Field(default_factory=lambda: [1.0], min_length=1)
    f: FourierSpec
    diffusion: Optional[DiffusionOverride] = None

    @model_validator(mode="after")
    def _check(self) -> "ResolventConfig":
        if any(lam <= 0 for lam in self.lambdas):
            raise ValueError("the resolvent needs λ > 0")
        if not all(_power_of_two(s) and s >= 2 for s in self.sides):
            raise ValueError("sides must be powers of two")
        return self


class WalkConfig(ExperimentBase):
    kind: Literal["walk"] = "walk"
    side: int = Field(..., ge=2)
    t: float = Field(..., gt=0.0)
    n_walkers: int = Field(1000, ge=1)
    n_probes: int = Field(64, ge=1)
    f: FourierSpec
    diffusion: Optional[DiffusionOverride] = None

    @model_validator(mode="after")
    def _check(self) -> "WalkConfig":
        if not _power_of_two(self.side):
            raise ValueError("side must be a power of two")
        return self


class ExclusionConfig(ExperimentBase):
    kind: Literal["exclusion"] = "exclusion"
    side: int = Field(..., ge=2)
    rho0: FourierSpec = Field(
        default_factory=lambda: FourierSpec(name="half", constant=0.5)
    )
    relative_to_m: bool = Field(
        True, description="Scale rho0 by the measured giant density m_hat"
    )
    t_macro: float = Field(..., ge=0.0)
    n_runs: int = Field(20, ge=1)
    phi: FourierSpec = Field(
        default_factory=lambda: FourierSpec(
            name="cos_x1", terms=[FourierTerm(amplitude=1.0, wavevector=[1, 0])]
        )
    )

    @model_validator(mode="after")
    def _check(self) -> "ExclusionConfig":
        if not _power_of_two(self.side):
            raise ValueError("side must be a power of two")
        return self


class HydroConfig(ExperimentBase):
    kind: Literal["hydro"] = "hydro"
    side: int = Field(..., ge=2)
    rho0: FourierSpec
    relative_to_m: bool = False
    t_macro: float = Field(..., ge=0.0)
    n_runs: int = Field(20, ge=1)
    battery: List[FourierSpec] = Field(default_factory=_default_battery)
    cells_per_axis: int = Field(8, ge=1)
    diffusion: Optional[DiffusionOverride] = None

    @model_validator(mode="after")
    def _check(self) -> "HydroConfig":
        if not _power_of_two(self.side):
            raise ValueError("side must be a power of two")
        if not _power_of_two(self.cells_per_axis) or self.side % self.cells_per_axis:
            raise ValueError("cells_per_axis must be a power of two dividing side")
        return self


AnyExperiment = Annotated[
    Union[
        GenEnvConfig,
        ClusterStatsConfig,
        CorrectorConfig,
        ResolventConfig,
        WalkConfig,
        ExclusionConfig,
        HydroConfig,
    ],
    Field(discriminator="kind"),
]


class ExperimentConfig(RootModel[AnyExperiment]):
    root: AnyExperiment

    @property
    def kind(self) -> str:
        return self.root.kind


# --- run bookkeeping -------------------------------------------------------


class RunOptions(StrictModel):
    out_dir: str
    seed: Optional[int] = Field(None, ge=0, description="Overrides the config seed")
    workers: int = Field(1, ge=1)
    tol: float = Field(1e-10, gt=0.0)


class FieldManifest(StrictModel):
    law: Optional[FieldLaw] = None
    origin: Optional[str] = None
    seed: int
    dim: int
    side: int
    cap: float
    checksum: int = Field(..., description="Sum of raw weight bits mod 2^64")


class ArtifactRecord(StrictModel):
    path: str = Field(..., description="Relative to the manifest directory")
    kind: Literal["field", "field_manifest", "csv", "json", "grid"]
    sha256: str
    checksum: Optional[int] = None


class InvariantRecord(StrictModel):
    name: str
    passed: bool
    value: Optional[float] = None
    detail: Optional[str] = None


class RunManifest(StrictModel):
    tool: str = "pchm"
    version: str
    created_at: datetime
    config: Dict[str, Any]
    options: RunOptions
    artifacts: List[ArtifactRecord] = Field(default_factory=list)
    invariants: List[InvariantRecord] = Field(default_factory=list)


# --- reports ---------------------------------------------------------------


class PairingStat(StrictModel):
    test_function: str
    mean: float
    reference: float
    stderr: float
    bias: float = Field(..., description="mean - reference")
    passed: bool


class HydroReport(StrictModel):
    eps: float
    t_macro: float
    n_runs: int
    m_hat: float
    diffusion: List[List[float]]
    pairings: List[PairingStat]
    per_run_pairings: List[List[float]] = Field(
        ..., description="Rows are runs, columns follow the battery order"
    )
    profile_l1: List[float]
    reference_profile: List[float]
    mean_profile: List[float]
    particle_counts: List[int]
    conservation_ok: bool
    clamped_sites: int = 0


class PairingCheckReport(StrictModel):
    eps: float
    t_macro: float
    n_runs: int
    method: Literal["exact", "dense", "mc"]
    lattice_pairings: List[float]
    semigroup_pairings: List[float]
    differences: List[float]
    mean: float
    stderr: float
    passed: bool
    conservation_ok: bool


class DominationReport(StrictModel):
    threshold: float
    nested: bool = Field(..., description="Threshold giant lies inside the ω giant")
    diagonal: List[float]
    threshold_diagonal: List[float]
    passed: bool
