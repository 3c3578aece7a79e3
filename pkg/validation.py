"""
Run configuration loading and validation
Turns a JSON run configuration into a validated RunConfig and a ModelSpec,
with every error anchored to a file and line
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from models import (ContinuousBirthBlock, DiscreteBirthBlock, DomainBlock, FieldValue, ImmigrationBlock,
                    InitialBlock, MotionBlock, MultipleDeathBlock, OffspringBlock, PairwiseBlock,
                    PureDeathBlock, ReplacementBlock, RunConfig, ThinningBlock, TypeCount)
from observability import log_config_error
from utils.core import (AlleleField, ConstantField, ConstantPairRate, Domain, LookdownError, SameSitePairRate,
                        SpatialIntensity, TypeField, TypePoint)
from utils.engine import InitialState, ModelSpec
from utils.mechanisms import (ContinuousBirth, ContinuousBirthParams, CopyParent, DiscreteBirth,
                              DiscreteBirthEvent, FiniteTypeLaw, FixedCount, GeometricCount, Immigration,
                              ImmigrationSource, InstantDeath, Mechanism, Motion, MotionKernel, MotionKind,
                              MultipleDeath, MultipleDeathEvent, MutateAllele, PairwiseReplacement,
                              PoissonCount, PureDeath, PureDeathParams, Replacement, ReplacementEvent,
                              ReplacementVariant, Thinning, ThinningEvent)
from utils.presets import build_preset

logger = logging.getLogger(__name__)

# Presets whose builders take a `domain` parameter block
DOMAIN_PRESETS = {"moran", "slfv-first", "slfv-second"}


class ConfigurationError(LookdownError):
    """Invalid run configuration, located at path:line when the source is known."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        self.detail = message
        location = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
        super().__init__(f"{location}{message}")


def locate_key(text: str, loc: Sequence[Any]) -> int:
    """
    Line of the key an error location points at.

    Each string component of `loc` is searched after the previous match, so
    nested keys resolve to the right block; numeric components are skipped.
    """
    position = 0
    for part in loc:
        if not isinstance(part, str):
            continue
        found = text.find(f'"{part}"', position)
        if found >= 0:
            position = found
    return text.count("\n", 0, position) + 1


def _format_error(error: Dict[str, Any]) -> str:
    loc = ".".join(str(part) for part in error["loc"])
    if error["type"] == "extra_forbidden":
        return f"unknown key '{loc}'"
    return f"{loc or 'config'}: {error['msg']}"


def parse_run_config(text: str, path: Optional[str] = None) -> RunConfig:
    """Parse and validate the text of a run configuration."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"invalid JSON: {e.msg}", path, e.lineno) from e
    if not isinstance(data, dict):
        raise ConfigurationError("the run configuration must be a JSON object", path, 1)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        line = locate_key(text, first["loc"])
        messages = "; ".join(_format_error(err) for err in e.errors())
        raise ConfigurationError(messages, path, line) from e


def load_run_config(path: str) -> RunConfig:
    """
    Load a run configuration file

    Args:
        path: Path of a JSON run configuration

    Returns:
        Validated RunConfig

    Raises:
        ConfigurationError: unreadable file, JSON syntax or schema violation
    """
    if not os.path.isfile(path):
        raise ConfigurationError("configuration file not found", path)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as e:
        raise ConfigurationError(f"cannot read configuration: {e}", path) from e
    try:
        config = parse_run_config(text, path)
    except ConfigurationError as e:
        log_config_error(path, str(e))
        raise
    logger.info(f"Loaded run configuration from {path}")
    return config


def validate_run_config(data: Dict[str, Any]) -> Tuple[bool, Optional[str]]:
    """
    Validate a run configuration mapping

    Returns:
        tuple: (is_valid, error_message)
    """
    try:
        RunConfig.model_validate(data)
        return True, None
    except ValidationError as e:
        return False, "; ".join(_format_error(err) for err in e.errors())


def apply_overrides(config: RunConfig, seed: Optional[int] = None, reps: Optional[int] = None,
                    workers: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    """Apply command-line overrides; --reps sets both the replicate count and the suite size."""
    engine: Dict[str, Any] = {}
    verify: Dict[str, Any] = {}
    outputs: Dict[str, Any] = {}
    if seed is not None:
        if seed < 0:
            raise ConfigurationError("--seed must be nonnegative")
        engine["seed"] = seed
    if reps is not None:
        if reps < 1:
            raise ConfigurationError("--reps must be at least 1")
        engine["replicates"] = reps
        verify["reps"] = reps
    if workers is not None:
        if workers < 1:
            raise ConfigurationError("--workers must be at least 1")
        engine["workers"] = workers
    if out is not None:
        outputs["directory"] = out
    return config.model_copy(update={
        "engine": config.engine.model_copy(update=engine),
        "verify": config.verify.model_copy(update=verify),
        "outputs": config.outputs.model_copy(update=outputs),
    })


# ---------------------------------------------------------------------------
# Building model specs
# ---------------------------------------------------------------------------

def build_domain(block: Optional[DomainBlock]) -> Domain:
    if block is None:
        return Domain(n_alleles=2)
    return Domain(dim=block.dim, side=block.side, n_alleles=block.n_alleles,
                  lattice=block.lattice, spacing=block.spacing)


def build_field(value: FieldValue) -> TypeField:
    """A single number is constant over types, a list gives one value per allele."""
    if isinstance(value, list):
        return AlleleField(tuple(float(v) for v in value))
    return ConstantField(float(value))


def _point(block, domain: Domain) -> TypePoint:
    point = TypePoint(tuple(float(c) for c in block.location), int(block.allele))
    domain.validate_point(point)
    return point


def _expand(types: List[TypeCount], domain: Domain) -> List[TypePoint]:
    points: List[TypePoint] = []
    for block in types:
        points.extend([_point(block, domain)] * block.count)
    return points


def build_initial(block: InitialBlock, domain: Domain) -> InitialState:
    if block.kind == "uniform-levels":
        return InitialState.uniform_levels(_expand(block.types, domain))
    if block.intensity:
        return InitialState.conditionally_poisson({_point(item, domain): item.rate for item in block.intensity})
    return InitialState.conditionally_poisson(
        SpatialIntensity(domain, float(block.density), tuple(block.allele_weights)))


def _offspring(block: OffspringBlock):
    if block.law == "fixed":
        return FixedCount(block.k)
    if block.law == "poisson":
        return PoissonCount(block.mean)
    return GeometricCount(block.mean)


def _kernel(mutation: Optional[float], domain: Domain):
    return MutateAllele(mutation, domain.n_alleles) if mutation else CopyParent()


def build_mechanism(block, domain: Domain) -> Mechanism:
    """Mechanism for one configuration block."""
    if isinstance(block, PureDeathBlock):
        params = PureDeathParams(build_field(block.d0))
        return InstantDeath(params) if block.kind == "instant-death" else PureDeath(params)
    if isinstance(block, MultipleDeathBlock):
        return MultipleDeath([MultipleDeathEvent(item.k, build_field(item.d1), item.rate)
                              for item in block.events])
    if isinstance(block, DiscreteBirthBlock):
        return DiscreteBirth([DiscreteBirthEvent(_offspring(item.offspring), build_field(item.r),
                                                 _kernel(item.mutation, domain), item.rate)
                              for item in block.events])
    if isinstance(block, ContinuousBirthBlock):
        return ContinuousBirth(ContinuousBirthParams(block.k, build_field(block.r)))
    if isinstance(block, ReplacementBlock):
        events = []
        for item in block.events:
            subsets = tuple((tuple(int(i) for i in ids), float(rate)) for ids, rate in item.subsets)
            events.append(ReplacementEvent(ReplacementVariant(item.variant), rate=item.rate, k=item.k,
                                           r=build_field(item.r) if item.r is not None else None,
                                           subsets=subsets, q=_kernel(item.mutation, domain)))
        return Replacement(events)
    if isinstance(block, PairwiseBlock):
        rate = SameSitePairRate(block.gamma) if block.same_site else ConstantPairRate(block.gamma)
        return PairwiseReplacement(rate, _kernel(block.mutation, domain))
    if isinstance(block, ThinningBlock):
        return Thinning([ThinningEvent(build_field(item.p), item.rate) for item in block.events])
    if isinstance(block, ImmigrationBlock):
        sources = []
        for item in block.sources:
            points = tuple(_point(t, domain) for t in item.types)
            sources.append(ImmigrationSource(item.rate, FiniteTypeLaw(points, tuple(float(t.count)
                                                                                    for t in item.types))))
        return Immigration(sources)
    if isinstance(block, MotionBlock):
        return Motion(MotionKernel(kind=MotionKind(block.motion), domain=domain, rate=block.rate,
                                   sigma=block.sigma,
                                   mutation_rates=tuple(tuple(row) for row in block.mutation_rates)))
    raise ConfigurationError(f"unsupported mechanism block {type(block).__name__}")


def engine_keywords(config: RunConfig) -> Dict[str, Any]:
    return {
        "t_end": config.engine.t_end,
        "snapshot_times": tuple(config.engine.snapshots),
        "seed": config.engine.seed,
        "particle_cap": config.engine.particle_cap,
        "record_events": config.outputs.events,
        "record_lineage": config.outputs.lineage,
    }


def build_model_spec(config: RunConfig, path: Optional[str] = None) -> ModelSpec:
    """
    ModelSpec described by the model and engine sections

    Raises:
        ConfigurationError: no model section, or parameters the builders reject
    """
    model = config.model
    if model is None:
        raise ConfigurationError("the run configuration has no 'model' section", path)
    engine = engine_keywords(config)
    try:
        if model.preset is not None:
            params = dict(model.params)
            if model.lam is not None:
                params.setdefault("u_max" if model.preset == "slfv-first" else "lam", model.lam)
            if model.domain is not None and model.preset in DOMAIN_PRESETS:
                params.setdefault("domain", model.domain.model_dump())
            spec = build_preset(model.preset, params, **engine)
        else:
            domain = build_domain(model.domain)
            spec = ModelSpec(initial=build_initial(model.initial, domain), lam=model.lam,
                             mechanisms=[build_mechanism(block, domain) for block in model.mechanisms],
                             domain=domain, name=model.name or "custom", **engine)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"invalid model: {e}", path) from e
    if model.name:
        spec.name = model.name
    return spec
