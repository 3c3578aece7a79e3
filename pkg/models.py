from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import PARTICLE_CAP, PRESETS, VERIFY_SUITES

# A per-type rate: one value for every type, or one value per allele
FieldValue = Union[float, List[float]]


class Section(BaseModel):
    """Base for every run-config block: unknown keys are rejected"""
    model_config = ConfigDict(extra="forbid")


# Domain and initial state
class DomainBlock(Section):
    """Torus and allele alphabet"""
    dim: int = Field(0, ge=0, le=3, description="Spatial dimension, 0 for a single site")
    side: float = Field(1.0, gt=0, description="Torus side length")
    n_alleles: int = Field(2, ge=1, description="Size of the allele alphabet")
    lattice: bool = Field(False, description="Restrict locations to lattice sites")
    spacing: float = Field(1.0, gt=0, description="Lattice spacing")


class TypeCount(Section):
    location: List[float] = Field(default_factory=list)
    allele: int = Field(0, ge=0)
    count: int = Field(1, ge=0, description="Number of particles at this type point")


class TypeRate(Section):
    location: List[float] = Field(default_factory=list)
    allele: int = Field(0, ge=0)
    rate: float = Field(..., ge=0, description="Poisson intensity per unit level")


class InitialBlock(Section):
    """Uniform levels over explicit types, or a conditionally Poisson state"""
    kind: Literal["uniform-levels", "conditionally-poisson"] = "uniform-levels"
    types: List[TypeCount] = Field(default_factory=list)
    intensity: List[TypeRate] = Field(default_factory=list)
    density: Optional[float] = Field(None, ge=0, description="Spatial density (torus domains)")
    allele_weights: List[float] = Field(default_factory=lambda: [1.0])

    @model_validator(mode="after")
    def check_source(self):
        if self.kind == "uniform-levels" and not self.types:
            raise ValueError("uniform-levels needs a 'types' list")
        if self.kind == "conditionally-poisson" and not self.intensity and self.density is None:
            raise ValueError("conditionally-poisson needs 'intensity' or 'density'")
        return self


# Mechanism blocks, discriminated by `kind`
class PureDeathBlock(Section):
    kind: Literal["pure-death", "instant-death"]
    d0: FieldValue = Field(..., description="Death rate d0(x)")


class MultipleDeathItem(Section):
    k: int = Field(..., ge=1)
    d1: FieldValue
    rate: float = Field(..., ge=0)


class MultipleDeathBlock(Section):
    kind: Literal["multiple-death"]
    events: List[MultipleDeathItem] = Field(..., min_length=1)


class OffspringBlock(Section):
    law: Literal["fixed", "poisson", "geometric"] = "fixed"
    k: Optional[int] = Field(None, ge=0)
    mean: Optional[float] = Field(None, ge=0)

    @model_validator(mode="after")
    def check_parameter(self):
        if self.law == "fixed" and self.k is None:
            raise ValueError("fixed offspring law needs 'k'")
        if self.law != "fixed" and self.mean is None:
            raise ValueError(f"{self.law} offspring law needs 'mean'")
        return self


class DiscreteBirthItem(Section):
    offspring: OffspringBlock
    r: FieldValue = 1.0
    rate: float = Field(1.0, ge=0)
    mutation: Optional[float] = Field(None, ge=0, le=1, description="Allele mutation probability per offspring")


class DiscreteBirthBlock(Section):
    kind: Literal["discrete-birth"]
    events: List[DiscreteBirthItem] = Field(..., min_length=1)


class ContinuousBirthBlock(Section):
    kind: Literal["continuous-birth"]
    k: int = Field(..., ge=1, description="Offspring per birth")
    r: FieldValue


class ReplacementItem(Section):
    variant: Literal["fixed-k", "bernoulli", "subset-rate"] = "fixed-k"
    rate: float = Field(1.0, ge=0)
    k: int = Field(2, ge=1)
    r: Optional[FieldValue] = None
    subsets: List[List[Any]] = Field(default_factory=list, description="[[ids...], rate] pairs")
    mutation: Optional[float] = Field(None, ge=0, le=1, description="Allele mutation probability per copy")


class ReplacementBlock(Section):
    kind: Literal["replacement"]
    events: List[ReplacementItem] = Field(..., min_length=1)


class PairwiseBlock(Section):
    kind: Literal["pairwise-replacement"]
    gamma: float = Field(..., ge=0)
    same_site: bool = False
    mutation: Optional[float] = Field(None, ge=0, le=1)


class ThinningItem(Section):
    p: FieldValue
    rate: float = Field(..., ge=0)


class ThinningBlock(Section):
    kind: Literal["thinning"]
    events: List[ThinningItem] = Field(..., min_length=1)


class ImmigrationItem(Section):
    rate: float = Field(..., ge=0)
    types: List[TypeCount] = Field(..., min_length=1, description="Arrival types, count is the weight")


class ImmigrationBlock(Section):
    kind: Literal["immigration"]
    sources: List[ImmigrationItem] = Field(..., min_length=1)


class MotionBlock(Section):
    kind: Literal["motion"]
    motion: Literal["none", "random-walk", "brownian", "mutation"]
    rate: float = Field(0.0, ge=0)
    sigma: float = Field(0.0, ge=0)
    mutation_rates: List[List[float]] = Field(default_factory=list)


MechanismBlock = Annotated[
    Union[PureDeathBlock, MultipleDeathBlock, DiscreteBirthBlock, ContinuousBirthBlock, ReplacementBlock,
          PairwiseBlock, ThinningBlock, ImmigrationBlock, MotionBlock],
    Field(discriminator="kind"),
]


# Top-level sections
class ModelSection(Section):
    """A named preset with its parameters, or an explicit mechanism list"""
    name: Optional[str] = Field(None, description="Run name used in outputs")
    preset: Optional[str] = Field(None, description="Preset name")
    params: Dict[str, Any] = Field(default_factory=dict, description="Preset parameters")
    lam: Optional[float] = Field(None, gt=0, description="Level cap (truncation level for infinite models)")
    domain: Optional[DomainBlock] = None
    initial: Optional[InitialBlock] = None
    mechanisms: List[MechanismBlock] = Field(default_factory=list)

    @field_validator("preset")
    @classmethod
    def validate_preset(cls, v):
        if v is not None and v not in PRESETS:
            raise ValueError(f"Preset must be one of: {', '.join(PRESETS)}")
        return v

    @model_validator(mode="after")
    def check_exclusive(self):
        if self.preset is not None:
            if self.mechanisms or self.initial is not None:
                raise ValueError("give either 'preset' or 'mechanisms'/'initial', not both")
        else:
            if self.initial is None or self.lam is None:
                raise ValueError("an explicit model needs 'initial' and 'lam'")
        return self


class EngineSection(Section):
    t_end: float = Field(1.0, ge=0, description="Final simulation time")
    snapshots: List[float] = Field(default_factory=list, description="Snapshot times in [0, t_end]")
    seed: int = Field(0, ge=0, description="Master seed")
    replicates: int = Field(1, ge=1)
    particle_cap: int = Field(PARTICLE_CAP, ge=1)
    workers: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def check_snapshots(self):
        bad = [t for t in self.snapshots if t < 0 or t > self.t_end]
        if bad:
            raise ValueError(f"snapshot times {bad} fall outside [0, {self.t_end}]")
        return self


class OutputsSection(Section):
    directory: Optional[str] = Field(None, description="Run directory; defaults under LOOKDOWN_OUTPUT_ROOT")
    snapshots: bool = True
    events: bool = True
    lineage: bool = True
    counts: bool = True


class VerifySection(Section):
    suite: str = "all"
    reps: Optional[int] = Field(None, ge=1)
    adversarial: bool = Field(False, description="Swap in broken mechanisms; the suite must then fail")
    tolerance: float = Field(0.05, gt=0, description="Relative tolerance of rate fits")
    delta: float = Field(1e-3, gt=0, description="Forward-difference step")
    times: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0])
    lams: List[float] = Field(default_factory=lambda: [10.0, 20.0, 40.0, 80.0])

    @field_validator("suite")
    @classmethod
    def validate_suite(cls, v):
        if v not in VERIFY_SUITES:
            raise ValueError(f"Suite must be one of: {', '.join(VERIFY_SUITES)}")
        return v


class RunConfig(Section):
    """Run configuration file"""
    model: Optional[ModelSection] = None
    engine: EngineSection = Field(default_factory=EngineSection)
    outputs: OutputsSection = Field(default_factory=OutputsSection)
    verify: VerifySection = Field(default_factory=VerifySection)

    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "model": {"preset": "moran", "params": {"N": 50, "gamma": 1.0}},
                "engine": {"t_end": 1.0, "snapshots": [0.5], "seed": 7, "replicates": 10},
                "outputs": {"directory": "runs/moran"},
            }
        },
    )
