"""
Model Presets

Ready-made ModelSpec builders: Moran and spatial Moran, branching (with the
critical compensating death), the two spatial Lambda-Fleming-Viot
constructions, the lattice voter model and plain pure death. Presets are
selectable by name through PRESET_BUILDERS.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import PARTICLE_CAP
from utils.core import (AlleleField, ConstantField, ConstantPairRate, DistancePairRate,
                        Domain, SameSitePairRate, SpatialIntensity, TypePoint)
from utils.engine import InitialState, ModelSpec
from utils.mechanisms import (ContinuousBirth, ContinuousBirthParams, CopyAllele, CopyParent,
                              GeometricCount, Kernel, Mechanism, Motion, MotionKernel, MotionKind, MutateAllele,
                              PairwiseReplacement, PureDeath, PureDeathParams, rescale_and_truncate,
                              discrete_birth_transform)

logger = logging.getLogger(__name__)

MEAN_TOLERANCE = 1e-12


class OffspringRule(str, Enum):
    ONE_FOR_ONE = "one-for-one"
    POISSON = "poisson"
    FIXED = "fixed"
    GEOMETRIC = "geometric"


@dataclass(frozen=True)
class SLFVAtom:
    """Radius w with event weight nu2({w}) and impact law nu1(w, .) as (zeta, probability) pairs."""
    radius: float
    weight: float
    impacts: Tuple[Tuple[float, float], ...] = ((0.5, 1.0),)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")
        if not self.impacts:
            raise ValueError("an atom needs at least one impact")
        if any(not 0.0 < zeta < 1.0 for zeta, _ in self.impacts):
            raise ValueError("impacts must lie in (0, 1)")
        total = sum(p for _, p in self.impacts)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"impact probabilities sum to {total}, expected 1")


@dataclass(frozen=True)
class SLFVEventLaw:
    """
    Finitely supported SLFV event law. Centres fall as a Poisson process in
    space-time with intensity total_weight per unit volume.
    """
    atoms: Tuple[SLFVAtom, ...]
    offspring: OffspringRule = OffspringRule.ONE_FOR_ONE
    fixed_count: Optional[int] = None

    @property
    def total_weight(self) -> float:
        return float(sum(atom.weight for atom in self.atoms))

    def sample_event(self, rng: np.random.Generator) -> Tuple[float, float]:
        """(radius, impact) of one event."""
        weights = np.array([atom.weight for atom in self.atoms], dtype=float)
        atom = self.atoms[int(rng.choice(len(self.atoms), p=weights / weights.sum()))]
        probs = np.array([p for _, p in atom.impacts], dtype=float)
        zeta = atom.impacts[int(rng.choice(len(atom.impacts), p=probs / probs.sum()))][0]
        return atom.radius, float(zeta)


@dataclass
class SLFVDiagnostics:
    flreq1: float
    flreq1b: float
    flreq2: float
    finite: Dict[str, bool] = field(default_factory=dict)


def validate_slfv_law(law: SLFVEventLaw, dim: int) -> SLFVDiagnostics:
    """
    The finiteness integrals over the law: large-event mass (w >= 1), the
    small-event second moment (w < 1, exponent 2 in d = 1 and 2 + d above)
    and the full first moment.
    """
    if dim < 1:
        raise ValueError("SLFV laws live on a spatial torus")
    large = small = full = 0.0
    for atom in law.atoms:
        mean_zeta = sum(zeta * p for zeta, p in atom.impacts)
        w = atom.radius
        full += atom.weight * mean_zeta * w ** dim
        if w >= 1.0:
            large += atom.weight * mean_zeta * w ** dim
        else:
            exponent = 2 if dim == 1 else 2 + dim
            small += atom.weight * mean_zeta * w ** exponent
    values = {"flreq1": large, "flreq1b": small, "flreq2": full}
    diagnostics = SLFVDiagnostics(**values, finite={k: math.isfinite(v) for k, v in values.items()})
    logger.info(f"SLFV law diagnostics: {values}")
    return diagnostics


def slfv_density_jump(density: float, zeta: float, offspring_mass: float, ball_volume: float) -> float:
    """Density change inside the ball of one second-construction event."""
    return (1.0 - zeta) * offspring_mass / ball_volume - zeta * density


@dataclass(frozen=True)
class EventBall(Kernel):
    """Children uniform in the event ball, parent's allele."""
    domain: Domain
    center: Tuple[float, ...]
    radius: float

    def sample(self, parent_loc, parent_allele, child_locs, rng):
        k = len(child_locs)
        locs = self.domain.uniform_in_ball(self.center, self.radius, k, rng)
        return locs, np.full(k, int(parent_allele), dtype=np.int64)


class SLFVFirstEvents(Mechanism):
    """
    First construction: levels fixed; in-ball particles join with probability
    zeta, relocate uniformly in the ball and take the allele of the lowest
    joiner. Involvement and relocation use per-event streams consumed in
    level order.
    """
    kind = "slfv-first"
    preserves_levels = True

    def __init__(self, domain: Domain, law: SLFVEventLaw, label: Optional[str] = None):
        super().__init__(label)
        if domain.dim < 1:
            raise ValueError("SLFV needs a spatial torus")
        self.domain = domain
        self.law = law
        self._events = 0
        self.in_ball_total = 0
        self.involved_total = 0

    def bind(self, config, streams, static_levels=False):
        super().bind(config, streams, static_levels)
        self._events = 0
        self.in_ball_total = 0
        self.involved_total = 0

    def rate(self, config):
        return self.law.total_weight * self.domain.volume

    def _apply(self, config, now, sink):
        self._events += 1
        center = self.rng.uniform(0.0, self.domain.side, size=self.domain.dim)
        radius, zeta = self.law.sample_event(self.rng)
        inside = np.flatnonzero(self.domain.in_ball(config.locations, center, radius))
        if inside.size == 0:
            return False
        inside = inside[np.argsort(config.levels[inside], kind="stable")]
        involvement = self.streams.keyed(self._events, 0)
        involved = inside[involvement.random(inside.size) < zeta]
        self.in_ball_total += int(inside.size)
        self.involved_total += int(involved.size)
        if involved.size == 0:
            return False
        placement = self.streams.keyed(self._events, 1)
        parent = int(involved[0])
        parent_id = int(config.ids[parent])
        allele = int(config.alleles[parent])
        for row in involved.tolist():
            config.set_type(row, self.domain.uniform_in_ball(center, radius, 1, placement)[0], allele)
        sink.event(now, self.label, config.ids[involved].tolist())
        for row in involved[1:].tolist():
            sink.lineage_record(now, config.ids[row], parent_id, config.levels[row],
                                config.levels[parent], self.label)
        return True

    def params(self):
        return {"domain": self.domain, "law": self.law}


class SLFVSecondEvents(Mechanism):
    """
    Second construction: a discrete birth restricted to the ball (offspring
    uniform in the ball), followed at once by thinning of the ball with
    rho = 1/(1 - zeta).
    """
    kind = "slfv-second"
    jumps_levels = True

    def __init__(self, domain: Domain, law: SLFVEventLaw, lam: float, label: Optional[str] = None):
        super().__init__(label)
        if domain.dim < 1:
            raise ValueError("SLFV needs a spatial torus")
        if law.offspring == OffspringRule.ONE_FOR_ONE:
            raise ValueError("the second construction needs a poisson, fixed or geometric offspring law")
        self.domain = domain
        self.law = law
        self.lam = lam
        if law.offspring == OffspringRule.FIXED:
            for atom in law.atoms:
                for zeta, _ in atom.impacts:
                    mean = self.offspring_mean(atom.radius, zeta)
                    if law.fixed_count is None or abs(law.fixed_count - mean) > MEAN_TOLERANCE * mean:
                        raise ValueError(
                            f"fixed offspring count {law.fixed_count} does not match "
                            f"lambda*alpha = {mean!r} (radius {atom.radius}, impact {zeta})")

    def offspring_mean(self, radius: float, zeta: float) -> float:
        return self.lam * zeta / (1.0 - zeta) * self.domain.ball_volume(radius)

    def _offspring(self, mean: float, rng: np.random.Generator) -> int:
        if self.law.offspring == OffspringRule.POISSON:
            return int(rng.poisson(mean))
        if self.law.offspring == OffspringRule.FIXED:
            return int(self.law.fixed_count)
        return GeometricCount(mean).sample(rng)

    def rate(self, config):
        return self.law.total_weight * self.domain.volume

    def _apply(self, config, now, sink):
        center = self.rng.uniform(0.0, self.domain.side, size=self.domain.dim)
        radius, zeta = self.law.sample_event(self.rng)
        k = self._offspring(self.offspring_mean(radius, zeta), self.rng)
        if k > 0 and len(config):
            r = self.domain.in_ball(config.locations, center, radius).astype(float)
            new_levels = self.rng.uniform(0.0, config.lam, size=k)
            kernel = EventBall(self.domain, tuple(center.tolist()), radius)
            discrete_birth_transform(config, r, new_levels, kernel, self.rng, now, sink, self.label)
        inside = self.domain.in_ball(config.locations, center, radius)
        removed = rescale_and_truncate(config, np.where(inside, 1.0 / (1.0 - zeta), 1.0))
        if removed.size:
            sink.event(now, f"{self.label}:thinning", removed.tolist())
        return True

    def params(self):
        return {"domain": self.domain, "law": self.law, "lam": self.lam}


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def _split_alleles(n: int, n_alleles: int) -> List[int]:
    """Even split, first block allele 0."""
    return [min(i * n_alleles // n, n_alleles - 1) for i in range(n)]


def preset_moran(N: int = 50, gamma: float = 1.0, lam: float = 1.0, n_alleles: int = 2,
                 same_site: bool = False, domain: Optional[Domain] = None,
                 types: Optional[Sequence[TypePoint]] = None,
                 intensity: Optional[Dict[TypePoint, float]] = None,
                 motion: Optional[MotionKernel] = None, q: Optional[Kernel] = None,
                 t_end: float = 1.0,
                 snapshot_times: Sequence[float] = (), seed: int = 0,
                 particle_cap: int = PARTICLE_CAP, record_events: bool = True,
                 record_lineage: bool = True) -> ModelSpec:
    """
    Pairwise replacement at rate gamma (gamma on equal sites when same_site)
    with kernel q (copy the parent by default). With `intensity` the state is conditionally
    Poisson and lam is the truncation level.
    """
    domain = domain or Domain(n_alleles=n_alleles)
    if intensity is not None:
        initial = InitialState.conditionally_poisson(intensity)
    else:
        if types is None:
            if N < 2:
                raise ValueError("the Moran model needs N >= 2")
            if domain.dim:
                rng = np.random.default_rng(seed)
                locations = domain.uniform_locations(N, rng)
                types = [TypePoint(tuple(loc.tolist()), a)
                         for loc, a in zip(locations, _split_alleles(N, n_alleles))]
            else:
                types = [TypePoint((), a) for a in _split_alleles(N, n_alleles)]
        elif len(types) < 2:
            raise ValueError("the Moran model needs N >= 2")
        initial = InitialState.uniform_levels(types)
    rate = SameSitePairRate(gamma) if same_site else ConstantPairRate(gamma)
    mechanisms: List[Mechanism] = [PairwiseReplacement(rate, q or CopyParent(), label="moran")]
    if motion is not None and motion.kind != MotionKind.NONE:
        mechanisms.append(Motion(motion))
    return ModelSpec(initial=initial, lam=lam, mechanisms=mechanisms, t_end=t_end,
                     snapshot_times=tuple(snapshot_times), seed=seed, domain=domain,
                     particle_cap=particle_cap, record_events=record_events,
                     record_lineage=record_lineage, name="moran",
                     params={"N": N, "gamma": gamma, "same_site": same_site})


def preset_branching(N0: int = 200, r: float = 0.5, k: int = 2, critical: bool = False,
                     lam: float = 10.0, scale: float = 1.0, t_end: float = 0.5,
                     snapshot_times: Sequence[float] = (), seed: int = 0,
                     particle_cap: int = PARTICLE_CAP, record_events: bool = True,
                     record_lineage: bool = True) -> ModelSpec:
    """
    Continuous birth of k offspring at rate r; with `critical` a level flow
    with d0 = r*k balances the mean. `scale` multiplies both rates.
    """
    if k < 1:
        raise ValueError("branching needs k >= 1 offspring per birth")
    if N0 < 1:
        raise ValueError("branching needs N0 >= 1")
    mechanisms: List[Mechanism] = [ContinuousBirth(ContinuousBirthParams(k, ConstantField(scale * r)))]
    if critical:
        mechanisms.append(PureDeath(PureDeathParams(ConstantField(scale * r * k))))
    return ModelSpec(initial=InitialState.uniform_levels([TypePoint()] * N0), lam=lam,
                     mechanisms=mechanisms, t_end=t_end, snapshot_times=tuple(snapshot_times),
                     seed=seed, particle_cap=particle_cap, record_events=record_events,
                     record_lineage=record_lineage, name="branching",
                     params={"N0": N0, "r": r, "k": k, "critical": critical, "scale": scale})


def preset_slfv_first(domain: Domain, law: SLFVEventLaw, u_max: float = 50.0,
                      allele_weights: Tuple[float, ...] = (1.0, 1.0), t_end: float = 1.0,
                      snapshot_times: Sequence[float] = (), seed: int = 0,
                      particle_cap: int = PARTICLE_CAP, record_events: bool = True,
                      record_lineage: bool = True) -> ModelSpec:
    """Conditionally Poisson start with unit spatial density, truncated at u_max."""
    intensity = SpatialIntensity(domain, 1.0, allele_weights)
    return ModelSpec(initial=InitialState.conditionally_poisson(intensity), lam=u_max,
                     mechanisms=[SLFVFirstEvents(domain, law)], t_end=t_end,
                     snapshot_times=tuple(snapshot_times), seed=seed, domain=domain,
                     particle_cap=particle_cap, record_events=record_events,
                     record_lineage=record_lineage, name="slfv-first",
                     params={"law": law, "u_max": u_max})


def preset_slfv_second(domain: Domain, law: SLFVEventLaw, lam: float = 50.0,
                       allele_weights: Tuple[float, ...] = (1.0, 1.0), t_end: float = 1.0,
                       snapshot_times: Sequence[float] = (), seed: int = 0,
                       particle_cap: int = PARTICLE_CAP, record_events: bool = True,
                       record_lineage: bool = True) -> ModelSpec:
    """Poisson start with unit spatial density over [0, lam)."""
    intensity = SpatialIntensity(domain, 1.0, allele_weights)
    return ModelSpec(initial=InitialState.conditionally_poisson(intensity), lam=lam,
                     mechanisms=[SLFVSecondEvents(domain, law, lam)], t_end=t_end,
                     snapshot_times=tuple(snapshot_times), seed=seed, domain=domain,
                     particle_cap=particle_cap, record_events=record_events,
                     record_lineage=record_lineage, name="slfv-second",
                     params={"law": law, "lam": lam})


def preset_voter(lattice_size: int = 16, rates: Sequence[float] = (1.0,), dim: int = 1,
                 n_alleles: int = 2, alleles: Optional[Sequence[int]] = None, lam: float = 1.0,
                 t_end: float = 1.0, snapshot_times: Sequence[float] = (), seed: int = 0,
                 particle_cap: int = PARTICLE_CAP, record_events: bool = True,
                 record_lineage: bool = True) -> ModelSpec:
    """
    One particle per site of a periodic lattice; pairs at lattice distance k
    interact at rates[k-1]. The lower particle's allele is copied and the two
    locations are then exchanged with probability 1/2.
    """
    if lattice_size < 2:
        raise ValueError("the voter model needs at least two sites")
    domain = Domain(dim=dim, side=float(lattice_size), n_alleles=n_alleles, lattice=True, spacing=1.0)
    sites = np.array(np.meshgrid(*[np.arange(lattice_size)] * dim, indexing="ij")).reshape(dim, -1).T
    if alleles is None:
        alleles = [i % n_alleles for i in range(len(sites))]
    if len(alleles) != len(sites):
        raise ValueError(f"need one allele per site ({len(sites)}), got {len(alleles)}")
    types = [TypePoint(tuple(float(c) for c in site), int(a)) for site, a in zip(sites, alleles)]
    rate = DistancePairRate(tuple(rates), side=float(lattice_size), spacing=1.0)
    return ModelSpec(initial=InitialState.uniform_levels(types), lam=lam,
                     mechanisms=[PairwiseReplacement(rate, CopyAllele(), swap_locations=True, label="voter")],
                     t_end=t_end, snapshot_times=tuple(snapshot_times), seed=seed, domain=domain,
                     particle_cap=particle_cap, record_events=record_events,
                     record_lineage=record_lineage, name="voter",
                     params={"lattice_size": lattice_size, "rates": tuple(rates), "dim": dim})


def preset_pure_death(N0: int = 1000, d0: float = 1.0, lam: float = 1.0, n_alleles: int = 1,
                      allele_rates: Optional[Sequence[float]] = None, t_end: float = 1.0,
                      snapshot_times: Sequence[float] = (), seed: int = 0,
                      particle_cap: int = PARTICLE_CAP, record_events: bool = True,
                      record_lineage: bool = True) -> ModelSpec:
    """Level flow u' = d0 u; allele_rates gives a per-allele d0."""
    if N0 < 1:
        raise ValueError("pure death needs N0 >= 1")
    field_ = AlleleField(tuple(allele_rates)) if allele_rates else ConstantField(d0)
    types = [TypePoint((), a) for a in _split_alleles(N0, n_alleles)]
    return ModelSpec(initial=InitialState.uniform_levels(types), lam=lam,
                     mechanisms=[PureDeath(PureDeathParams(field_))], t_end=t_end,
                     snapshot_times=tuple(snapshot_times), seed=seed,
                     domain=Domain(n_alleles=n_alleles), particle_cap=particle_cap,
                     record_events=record_events, record_lineage=record_lineage,
                     name="pure-death", params={"N0": N0, "d0": d0})


def continuum_death_spec(density: float, d0: float, u_max: float, t_end: float, seed: int = 0,
                         particle_cap: int = PARTICLE_CAP) -> ModelSpec:
    """Infinite-intensity pure death on one site: Poisson levels of intensity `density`, truncated at u_max."""
    return ModelSpec(initial=InitialState.conditionally_poisson({TypePoint(): density}), lam=u_max,
                     mechanisms=[PureDeath(PureDeathParams(ConstantField(d0)))], t_end=t_end, seed=seed,
                     particle_cap=particle_cap, record_events=False, record_lineage=False,
                     name="continuum-death", params={"density": density, "d0": d0, "u_max": u_max})


def _law_from_params(params: Dict) -> SLFVEventLaw:
    atoms = tuple(SLFVAtom(radius=a["radius"], weight=a["weight"],
                           impacts=tuple((float(z), float(p)) for z, p in a.get("impacts", [[0.5, 1.0]])))
                  for a in params.get("atoms", [{"radius": 0.1, "weight": 1.0}]))
    return SLFVEventLaw(atoms=atoms, offspring=OffspringRule(params.get("offspring", "one-for-one")),
                        fixed_count=params.get("fixed_count"))


def _domain_from_params(params: Dict) -> Domain:
    block = params.get("domain", {})
    return Domain(dim=block.get("dim", 1), side=block.get("side", 1.0),
                  n_alleles=block.get("n_alleles", 2))


def _build_moran(params: Dict, **engine) -> ModelSpec:
    params = dict(params)
    motion = params.pop("motion", None)
    domain = None
    if "domain" in params:
        block = params.pop("domain")
        domain = Domain(dim=block.get("dim", 0), side=block.get("side", 1.0),
                        n_alleles=block.get("n_alleles", params.get("n_alleles", 2)),
                        lattice=block.get("lattice", False), spacing=block.get("spacing", 1.0))
    mutation = params.pop("mutation", None)
    q = MutateAllele(mutation, params.get("n_alleles", 2)) if mutation else None
    kernel = None
    if motion:
        kernel = MotionKernel(kind=MotionKind(motion.get("kind", "none")), domain=domain or Domain(),
                              rate=motion.get("rate", 0.0), sigma=motion.get("sigma", 0.0),
                              mutation_rates=tuple(tuple(row) for row in motion.get("mutation_rates", ())))
    return preset_moran(domain=domain, motion=kernel, q=q, **params, **engine)


def _build_slfv_first(params: Dict, **engine) -> ModelSpec:
    return preset_slfv_first(_domain_from_params(params), _law_from_params(params),
                             u_max=params.get("u_max", 50.0), **engine)


def _build_slfv_second(params: Dict, **engine) -> ModelSpec:
    return preset_slfv_second(_domain_from_params(params), _law_from_params(params),
                              lam=params.get("lam", 50.0), **engine)


PRESET_BUILDERS: Dict[str, Callable[..., ModelSpec]] = {
    "moran": _build_moran,
    "branching": lambda params, **engine: preset_branching(**params, **engine),
    "slfv-first": _build_slfv_first,
    "slfv-second": _build_slfv_second,
    "voter": lambda params, **engine: preset_voter(**params, **engine),
    "pure-death": lambda params, **engine: preset_pure_death(**params, **engine),
}


def build_preset(name: str, params: Dict, **engine) -> ModelSpec:
    """Build a named preset; engine keywords are t_end, snapshot_times, seed, particle_cap, record_*."""
    if name not in PRESET_BUILDERS:
        raise ValueError(f"unknown preset '{name}'; choose from {sorted(PRESET_BUILDERS)}")
    return PRESET_BUILDERS[name](params, **engine)
