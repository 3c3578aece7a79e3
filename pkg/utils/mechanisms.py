"""
Lookdown Mechanisms

Each generator component is a Mechanism: an optional deterministic level
drift between events plus a stochastic event transform. Mechanisms draw from
their own seeded streams, report the generator value A f(eta) for product
test functions, and the projected (level-averaged) generator where it has a
closed form.

The module-level apply_* / flow functions are the pure (copying) forms of
the same transforms; the engine uses the in-place versions.
"""
import heapq
import itertools
import logging
import math
from abc import ABC
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, linalg

from config import FLOW_RTOL, MC_DRAWS, QUAD_TOL
from observability import log_tie_break
from utils.core import (Configuration, ConstantPairRate, Domain, LookdownError, PairRate,
                        TestFunction, TypeField, TypePoint, eval_alpha_f_discrete, eval_f,
                        types_to_arrays)
from utils.genealogy import LineageRecord

logger = logging.getLogger(__name__)


class UnsupportedGenerator(LookdownError):
    """Raised when a generator value has no supported evaluation."""


class GeneratorValue(NamedTuple):
    value: float
    method: str
    std_err: float = 0.0


class EventRecord(NamedTuple):
    time: float
    mechanism: str
    event_id: int
    affected_ids: Tuple[int, ...]


class EventSink:
    """Collects event and lineage records of one trajectory."""

    def __init__(self, record_events: bool = True, record_lineage: bool = True):
        self.record_events = record_events
        self.record_lineage = record_lineage
        self.events: List[EventRecord] = []
        self.lineage: List[LineageRecord] = []
        self.counts: Counter = Counter()
        self.next_event_id = 0

    def event(self, time: float, mechanism: str, affected: Sequence[int]) -> int:
        event_id = self.next_event_id
        self.next_event_id += 1
        self.counts[mechanism] += 1
        if self.record_events:
            self.events.append(EventRecord(time, mechanism, event_id, tuple(int(i) for i in affected)))
        return event_id

    def lineage_record(self, time: float, child_id: int, parent_id: Optional[int],
                       child_level: float, parent_level: float, tag: str) -> None:
        if self.record_lineage:
            self.lineage.append(LineageRecord(time, int(child_id),
                                              None if parent_id is None else int(parent_id),
                                              float(child_level), float(parent_level), tag))


INITIAL_STREAM_TAG = 1
MECHANISM_STREAM_TAG = 2


def stream(seed: int, replicate: int, *key: int) -> np.random.Generator:
    """Philox generator keyed by (seed, replicate, tag, ...)."""
    entropy = [int(seed), int(replicate), *[int(k) for k in key]]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


class MechanismStreams:
    """
    Counter-based streams of one mechanism within one replicate. Keys have a
    fixed layout since SeedSequence pads short entropy with zeros.
    """

    def __init__(self, seed: int, replicate: int, index: int):
        self.seed = int(seed)
        self.replicate = int(replicate)
        self.index = int(index)
        self.main = self._make([0])

    def _make(self, key: List[int]) -> np.random.Generator:
        return stream(self.seed, self.replicate, MECHANISM_STREAM_TAG, self.index, *key)

    def keyed(self, *key: int) -> np.random.Generator:
        """Independent stream for (particle id, event index, ...)."""
        return self._make([1, *[int(k) for k in key]])


# ---------------------------------------------------------------------------
# Products with one or two factors left out (zero-safe)
# ---------------------------------------------------------------------------

def loo_products(values: np.ndarray) -> np.ndarray:
    """prod_{j != i} values_j for every i."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n == 0:
        return np.empty(0)
    prefix = np.concatenate([[1.0], np.cumprod(values[:-1])])
    suffix = np.concatenate([np.cumprod(values[::-1][:-1])[::-1], [1.0]])
    return prefix * suffix


def loo2_products(values: np.ndarray) -> np.ndarray:
    """prod_{k != i,j} values_k for every pair (diagonal unused)."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    zeros = np.flatnonzero(values == 0.0)
    out = np.zeros((n, n))
    if len(zeros) == 0:
        out = np.prod(values) / np.outer(values, values)
    elif len(zeros) == 1:
        z = zeros[0]
        rest = np.prod(np.delete(values, z))
        others = np.delete(np.arange(n), z)
        out[z, others] = rest / values[others]
        out[others, z] = out[z, others]
    elif len(zeros) == 2:
        a, b = zeros
        out[a, b] = out[b, a] = np.prod(np.delete(values, zeros))
    return out


# ---------------------------------------------------------------------------
# Level drifts
# ---------------------------------------------------------------------------

def continuous_birth_drift(u, k: int, lam: float):
    """G_k^lam(u) = lam^-k (lam - u)^(k+1) - (lam - u)."""
    v = lam - np.asarray(u, dtype=float)
    return lam ** (-k) * v ** (k + 1) - v


class LevelDrift(ABC):
    """Autonomous per-particle level ODE u' = F(x, u)."""

    def velocity(self, locations, alleles, levels, lam: float) -> np.ndarray:
        raise NotImplementedError

    def flow(self, locations, alleles, levels, lam: float, dt: float) -> np.ndarray:
        raise NotImplementedError

    def exit_times(self, locations, alleles, levels, lam: float) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ExponentialDrift(LevelDrift):
    """u' = d0(x) u."""
    rate: TypeField

    def velocity(self, locations, alleles, levels, lam):
        return self.rate(locations, alleles) * levels

    def flow(self, locations, alleles, levels, lam, dt):
        return levels * np.exp(self.rate(locations, alleles) * dt)

    def exit_times(self, locations, alleles, levels, lam):
        rate = self.rate(locations, alleles)
        out = np.full(len(levels), math.inf)
        moving = (rate > 0) & (levels > 0)
        out[moving] = np.log(lam / levels[moving]) / rate[moving]
        return out


@dataclass(frozen=True)
class BernoulliDrift(LevelDrift):
    """u' = r(x) G_k^lam(u); v = lam - u solves a Bernoulli equation."""
    rate: TypeField
    k: int

    def velocity(self, locations, alleles, levels, lam):
        return self.rate(locations, alleles) * continuous_birth_drift(levels, self.k, lam)

    def flow(self, locations, alleles, levels, lam, dt):
        r = self.rate(locations, alleles)
        v0 = lam - levels
        base = lam ** (-self.k)
        w = base + (v0 ** (-self.k) - base) * np.exp(-self.k * r * dt)
        return lam - w ** (-1.0 / self.k)

    def exit_times(self, locations, alleles, levels, lam):
        return np.full(len(levels), math.inf)


@dataclass(frozen=True)
class CompositeDrift(LevelDrift):
    """Sum of several drifts, integrated numerically."""
    parts: Tuple[LevelDrift, ...]

    def velocity(self, locations, alleles, levels, lam):
        total = np.zeros(len(levels))
        for part in self.parts:
            total = total + part.velocity(locations, alleles, levels, lam)
        return total

    def flow(self, locations, alleles, levels, lam, dt):
        if dt <= 0 or len(levels) == 0:
            return np.array(levels, dtype=float)
        solution = integrate.solve_ivp(
            lambda _, u: self.velocity(locations, alleles, u, lam),
            (0.0, dt), np.asarray(levels, dtype=float), method="DOP853",
            rtol=FLOW_RTOL, atol=1e-12,
        )
        return solution.y[:, -1]

    def exit_times(self, locations, alleles, levels, lam):
        out = np.full(len(levels), math.inf)
        current = self.velocity(locations, alleles, levels, lam)
        for i in np.flatnonzero(current > 0):
            loc, al = locations[i:i + 1], alleles[i:i + 1]
            speed = lambda u: float(self.velocity(loc, al, np.array([u]), lam)[0])
            grid = np.linspace(levels[i], lam, 257)
            if np.any(self.velocity(np.repeat(loc, len(grid), axis=0), np.repeat(al, len(grid)),
                                    grid, lam) <= 0):
                continue
            out[i], _ = integrate.quad(lambda u: 1.0 / speed(u), levels[i], lam,
                                       epsabs=QUAD_TOL, limit=200)
        return out


def combine_drifts(drifts: Sequence[Optional[LevelDrift]]) -> Optional[LevelDrift]:
    parts = tuple(d for d in drifts if d is not None)
    if not parts:
        return None
    if len(parts) == 1:
        return parts[0]
    return CompositeDrift(parts)


# ---------------------------------------------------------------------------
# Offspring laws and placement kernels
# ---------------------------------------------------------------------------

class OffspringLaw:
    def sample(self, rng: np.random.Generator) -> int:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def p0(self) -> float:
        return 0.0

    def pgf(self, s: float) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class FixedCount(OffspringLaw):
    k: int

    def sample(self, rng):
        return self.k

    @property
    def mean(self):
        return float(self.k)

    @property
    def p0(self):
        return 1.0 if self.k == 0 else 0.0

    def pgf(self, s):
        return s ** self.k


@dataclass(frozen=True)
class PoissonCount(OffspringLaw):
    mean_value: float

    def sample(self, rng):
        return int(rng.poisson(self.mean_value))

    @property
    def mean(self):
        return float(self.mean_value)

    @property
    def p0(self):
        return math.exp(-self.mean_value)

    def pgf(self, s):
        return math.exp(self.mean_value * (s - 1.0))


@dataclass(frozen=True)
class GeometricCount(OffspringLaw):
    """Number of failures before the first success, success probability 1/(1+mean)."""
    mean_value: float

    def sample(self, rng):
        return int(rng.geometric(1.0 / (1.0 + self.mean_value))) - 1

    @property
    def mean(self):
        return float(self.mean_value)

    @property
    def p0(self):
        return 1.0 / (1.0 + self.mean_value)

    def pgf(self, s):
        p = 1.0 / (1.0 + self.mean_value)
        return p / (1.0 - (1.0 - p) * s)


class Kernel:
    """Offspring / replacement type kernel q(x*, dy)."""

    iid = True

    def sample(self, parent_loc, parent_allele, child_locs, rng) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def expected_product(self, parent_loc, parent_allele, child_locs, fn: Callable,
                         rng: Optional[np.random.Generator] = None, draws: int = MC_DRAWS) -> float:
        """E prod_i fn(Y)_i, by Monte Carlo unless overridden."""
        rng = rng or np.random.default_rng(0)
        total = 0.0
        for _ in range(draws):
            locs, alleles = self.sample(parent_loc, parent_allele, child_locs, rng)
            total += float(np.prod(fn(locs, alleles)))
        return total / draws


def _tile(parent_loc, parent_allele, k: int) -> Tuple[np.ndarray, np.ndarray]:
    loc = np.asarray(parent_loc, dtype=float)
    return np.tile(loc, (k, 1)).reshape(k, loc.size), np.full(k, int(parent_allele), dtype=np.int64)


@dataclass(frozen=True)
class CopyParent(Kernel):
    def sample(self, parent_loc, parent_allele, child_locs, rng):
        return _tile(parent_loc, parent_allele, len(child_locs))

    def expected_product(self, parent_loc, parent_allele, child_locs, fn, rng=None, draws=MC_DRAWS):
        return float(np.prod(fn(*_tile(parent_loc, parent_allele, len(child_locs)))))


@dataclass(frozen=True)
class CopyAllele(Kernel):
    """Children keep their location and take the parent's allele."""

    def sample(self, parent_loc, parent_allele, child_locs, rng):
        child_locs = np.asarray(child_locs, dtype=float)
        return child_locs.copy(), np.full(len(child_locs), int(parent_allele), dtype=np.int64)

    def expected_product(self, parent_loc, parent_allele, child_locs, fn, rng=None, draws=MC_DRAWS):
        return float(np.prod(fn(*self.sample(parent_loc, parent_allele, child_locs, None))))


@dataclass(frozen=True)
class MutateAllele(Kernel):
    """Copy the parent; each child switches to a uniformly chosen other allele with probability prob."""
    prob: float
    n_alleles: int

    def sample(self, parent_loc, parent_allele, child_locs, rng):
        locs, alleles = _tile(parent_loc, parent_allele, len(child_locs))
        if self.n_alleles < 2:
            return locs, alleles
        flip = rng.random(len(alleles)) < self.prob
        shift = rng.integers(1, self.n_alleles, size=len(alleles))
        alleles = np.where(flip, (alleles + shift) % self.n_alleles, alleles)
        return locs, alleles

    def expected_product(self, parent_loc, parent_allele, child_locs, fn, rng=None, draws=MC_DRAWS):
        k = len(child_locs)
        locs, alleles = _tile(parent_loc, parent_allele, k)
        if self.n_alleles < 2:
            return float(np.prod(fn(locs, alleles)))
        expected = (1.0 - self.prob) * fn(locs, alleles)
        weight = self.prob / (self.n_alleles - 1)
        for other in range(self.n_alleles):
            if other == int(parent_allele):
                continue
            expected = expected + weight * fn(locs, np.full(k, other, dtype=np.int64))
        return float(np.prod(expected))


@dataclass(frozen=True)
class UniformInBall(Kernel):
    """Each child placed independently, uniform in the ball around the parent."""
    domain: Domain
    radius: float

    def sample(self, parent_loc, parent_allele, child_locs, rng):
        k = len(child_locs)
        locs = self.domain.uniform_in_ball(parent_loc, self.radius, k, rng)
        return locs, np.full(k, int(parent_allele), dtype=np.int64)


@dataclass(frozen=True)
class SharedPoint(Kernel):
    """All children at one point drawn uniform in the ball around the parent."""
    domain: Domain
    radius: float
    iid = False

    def sample(self, parent_loc, parent_allele, child_locs, rng):
        k = len(child_locs)
        point = self.domain.uniform_in_ball(parent_loc, self.radius, 1, rng)
        return np.repeat(point, k, axis=0), np.full(k, int(parent_allele), dtype=np.int64)


# ---------------------------------------------------------------------------
# Type laws and motion kernels
# ---------------------------------------------------------------------------

class TypeLaw:
    def sample(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def expectation(self, fn: Callable) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class FiniteTypeLaw(TypeLaw):
    points: Tuple[TypePoint, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        if len(self.points) != len(self.weights) or not self.points:
            raise ValueError("a finite type law needs matching, nonempty points and weights")

    def probabilities(self) -> np.ndarray:
        weights = np.asarray(self.weights, dtype=float)
        return weights / weights.sum()

    def sample(self, n, rng):
        locations, alleles = types_to_arrays(self.points)
        picks = rng.choice(len(self.points), size=n, p=self.probabilities())
        return locations[picks], alleles[picks]

    def expectation(self, fn):
        locations, alleles = types_to_arrays(self.points)
        return float(np.dot(self.probabilities(), fn(locations, alleles)))


@dataclass(frozen=True)
class UniformTypeLaw(TypeLaw):
    domain: Domain
    allele_weights: Tuple[float, ...] = (1.0,)

    def probabilities(self) -> np.ndarray:
        weights = np.asarray(self.allele_weights, dtype=float)
        return weights / weights.sum()

    def sample(self, n, rng):
        locations = self.domain.uniform_locations(n, rng)
        alleles = rng.choice(len(self.allele_weights), size=n, p=self.probabilities())
        return locations, alleles.astype(np.int64)

    def expectation(self, fn):
        total = 0.0
        for allele, weight in enumerate(self.probabilities()):
            if self.domain.dim == 0:
                value = float(fn(np.empty((1, 0)), np.array([allele]))[0])
            else:
                value, _ = integrate.nquad(
                    lambda *c, a=allele: float(fn(np.asarray(c).reshape(1, -1), np.array([a]))[0]),
                    [[0.0, self.domain.side]] * self.domain.dim,
                    opts={"epsabs": QUAD_TOL})
                value /= self.domain.volume
            total += weight * value
        return total


class MotionKind(str, Enum):
    NONE = "none"
    RANDOM_WALK = "random-walk"
    BROWNIAN = "brownian"
    MUTATION = "mutation"


@dataclass(frozen=True)
class MotionKernel:
    """
    Independent type motion. rate is the jump rate per direction and
    coordinate of the lattice walk; sigma the Brownian diffusion
    coefficient; mutation_rates the off-diagonal allele rate matrix.
    """
    kind: MotionKind = MotionKind.NONE
    domain: Domain = field(default_factory=Domain)
    rate: float = 0.0
    sigma: float = 0.0
    mutation_rates: Tuple[Tuple[float, ...], ...] = ()

    def rate_matrix(self) -> np.ndarray:
        q = np.array(self.mutation_rates, dtype=float)
        np.fill_diagonal(q, 0.0)
        np.fill_diagonal(q, -q.sum(axis=1))
        return q

    def apply(self, locations: np.ndarray, alleles: np.ndarray, dt: float,
              rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        n = len(alleles)
        if self.kind == MotionKind.NONE or dt <= 0 or n == 0:
            return locations, alleles
        if self.kind == MotionKind.RANDOM_WALK:
            up = rng.poisson(self.rate * dt, size=locations.shape)
            down = rng.poisson(self.rate * dt, size=locations.shape)
            return self.domain.wrap(locations + (up - down) * self.domain.spacing), alleles
        if self.kind == MotionKind.BROWNIAN:
            steps = rng.normal(0.0, self.sigma * math.sqrt(dt), size=locations.shape)
            return self.domain.wrap(locations + steps), alleles
        transition = linalg.expm(self.rate_matrix() * dt)
        cumulative = np.cumsum(transition, axis=1)
        draws = rng.random(n)
        new = (draws[:, None] > cumulative[alleles]).sum(axis=1)
        return locations, np.minimum(new, len(transition) - 1).astype(np.int64)

    def generator_of(self, phi: Callable, locations: np.ndarray, alleles: np.ndarray) -> np.ndarray:
        """B phi evaluated at each particle type; phi maps (locations, alleles) to an array."""
        n = len(alleles)
        base = phi(locations, alleles)
        if self.kind == MotionKind.NONE or n == 0:
            return np.zeros(n)
        if self.kind == MotionKind.MUTATION:
            q = self.rate_matrix()
            out = np.zeros(n)
            for b in range(len(q)):
                out += q[alleles, b] * (phi(locations, np.full(n, b, dtype=np.int64)) - base)
            return out
        if self.kind == MotionKind.RANDOM_WALK:
            step, scale = self.domain.spacing, self.rate
        else:
            step, scale = 1e-4, 0.5 * self.sigma ** 2
        out = np.zeros(n)
        for axis in range(locations.shape[1]):
            shift = np.zeros(locations.shape[1])
            shift[axis] = step
            plus = phi(self.domain.wrap(locations + shift), alleles)
            minus = phi(self.domain.wrap(locations - shift), alleles)
            if self.kind == MotionKind.RANDOM_WALK:
                out += scale * (plus + minus - 2.0 * base)
            else:
                out += scale * (plus + minus - 2.0 * base) / step ** 2
        return out


# ---------------------------------------------------------------------------
# Parameter blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PureDeathParams:
    d0: TypeField


@dataclass(frozen=True)
class MultipleDeathEvent:
    k_d: int
    d1: TypeField
    rate: float

    def __post_init__(self):
        if self.k_d < 1:
            raise ValueError("k_d must be at least 1")


@dataclass(frozen=True)
class DiscreteBirthEvent:
    offspring: OffspringLaw
    r: TypeField
    q: Kernel = field(default_factory=CopyParent)
    rate: float = 1.0


@dataclass(frozen=True)
class ContinuousBirthParams:
    k: int
    r: TypeField

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("continuous birth needs k >= 1")


class ReplacementVariant(str, Enum):
    FIXED_K = "fixed-k"
    BERNOULLI = "bernoulli"
    SUBSET_RATE = "subset-rate"


@dataclass(frozen=True)
class ReplacementEvent:
    """
    fixed-k: uniform k-subset; bernoulli: member i joins with probability r(x_i);
    subset-rate: explicit (particle ids, rate) list.
    """
    variant: ReplacementVariant
    rate: float = 1.0
    k: int = 2
    r: Optional[TypeField] = None
    subsets: Tuple[Tuple[Tuple[int, ...], float], ...] = ()
    q: Kernel = field(default_factory=CopyParent)

    def __post_init__(self):
        if self.variant == ReplacementVariant.BERNOULLI:
            if self.r is None or not 0.0 <= self.r.sup() <= 1.0:
                raise ValueError("bernoulli replacement needs 0 <= r(x) <= 1")

    @property
    def total_rate(self) -> float:
        if self.variant == ReplacementVariant.SUBSET_RATE:
            return float(sum(rate for _, rate in self.subsets))
        return float(self.rate)


@dataclass(frozen=True)
class ThinningEvent:
    p: TypeField
    rate: float

    def __post_init__(self):
        if self.p.sup() >= 1.0:
            raise ValueError("thinning probability must stay below 1")


@dataclass(frozen=True)
class ImmigrationSource:
    arrival_rate: float
    type_law: TypeLaw

    def __post_init__(self):
        if not 0.0 <= self.arrival_rate < math.inf:
            raise ValueError("arrival rate must be finite and nonnegative")


# ---------------------------------------------------------------------------
# In-place transforms
# ---------------------------------------------------------------------------

def rescale_and_truncate(config: Configuration, factors: np.ndarray) -> np.ndarray:
    """Multiply levels by factors, drop particles at or above lambda; returns removed ids."""
    new = config.levels * factors
    config.levels[:] = new
    config.mark_levels_changed()
    return config.remove_rows(np.flatnonzero(new >= config.lam))


def multiple_death_transform(config: Configuration, k: int, d1: np.ndarray) -> Tuple[np.ndarray, float]:
    """theta_{k,d1}: returns (removed ids, tau)."""
    levels = config.levels
    lam = config.lam
    exposed = d1 > 0
    if not np.any(exposed):
        return np.empty(0, dtype=np.int64), math.inf
    taus = np.full(len(levels), math.inf)
    finite = exposed & (levels > 0)
    taus[finite] = np.log(lam / levels[finite]) / d1[finite]
    exposed_taus = taus[exposed]
    if exposed_taus.size <= k:
        tau = math.inf
    else:
        tau = float(np.partition(exposed_taus, k - 1)[k - 1])
    if not math.isfinite(tau):
        return config.remove_rows(np.flatnonzero(exposed)), math.inf
    dead = exposed & (taus <= tau)
    survivors = exposed & ~dead
    levels[survivors] = np.minimum(levels[survivors] * np.exp(tau * d1[survivors]), np.nextafter(lam, 0.0))
    config.mark_levels_changed()
    return config.remove_rows(np.flatnonzero(dead)), tau


def race_times(levels: np.ndarray, r: np.ndarray, v_star: float, lam: float) -> np.ndarray:
    """Coupled exponential race times of the parent selection."""
    taus = np.full(len(levels), math.inf)
    above = (r > 0) & (levels >= v_star)
    below = (r > 0) & (levels < v_star) & (levels > 0)
    taus[above] = np.log((lam - v_star) / (lam - levels[above])) / r[above]
    taus[below] = np.log(v_star / levels[below]) / r[below]
    return taus


def discrete_birth_level_map(u, v_star: float, r, tau_star: float, lam: float):
    """h_r^lam(x, u, eta, v*)."""
    u = np.asarray(u, dtype=float)
    growth = np.exp(np.asarray(r, dtype=float) * tau_star)
    return np.where(u > v_star, lam - (lam - u) * growth, u * growth)


def discrete_birth_level_limit(u, u_star: float, v_star: float, r, r_star: float):
    """Large-lambda limit u - (u* - v*) r / r* of the level map above v*."""
    return np.asarray(u, dtype=float) - (u_star - v_star) * np.asarray(r, dtype=float) / r_star


def discrete_birth_transform(config: Configuration, r: np.ndarray, new_levels: np.ndarray,
                             kernel: Kernel, rng: np.random.Generator, now: float,
                             sink: Optional[EventSink], label: str) -> Optional[int]:
    """
    Parent race, level map and offspring placement. The parent keeps its id,
    moves to the lowest new level and takes the first offspring type; the
    other offspring get fresh ids. Returns the parent id or None.
    """
    k = len(new_levels)
    if k == 0 or len(config) == 0 or not np.any(r > 0):
        return None
    new_levels = np.sort(np.asarray(new_levels, dtype=float))
    v_star = float(new_levels[0])
    lam = config.lam
    levels = config.levels
    taus = race_times(levels, r, v_star, lam)
    tau_star = float(taus.min())
    if not math.isfinite(tau_star):
        return None
    tied = np.flatnonzero(taus == tau_star)
    row = int(tied[0])
    parent_id = int(config.ids[row])
    if len(tied) > 1:
        log_tie_break(label, now, config.ids[tied].tolist(), parent_id)

    parent_loc = config.locations[row].copy()
    parent_allele = int(config.alleles[row])
    parent_level = float(levels[row])
    child_locs, child_alleles = kernel.sample(parent_loc, parent_allele, np.tile(parent_loc, (k, 1)), rng)

    mapped = discrete_birth_level_map(levels, v_star, r, tau_star, lam)
    mapped[row] = v_star
    levels[:] = np.clip(mapped, 0.0, np.nextafter(lam, 0.0))
    config.mark_levels_changed()
    config.set_type(row, child_locs[0], child_alleles[0])
    new_ids = config.add_many(child_locs[1:], child_alleles[1:], new_levels[1:], birth_time=now)
    if sink is not None:
        sink.event(now, label, [parent_id, *new_ids.tolist()])
        for cid, level in zip(new_ids.tolist(), new_levels[1:].tolist()):
            sink.lineage_record(now, cid, parent_id, level, v_star, label)
    logger.debug(f"{label}: parent {parent_id} (u*={parent_level:.6g}) -> {k} offspring")
    return parent_id


def replace_subset(config: Configuration, rows: np.ndarray, kernel: Kernel,
                   rng: np.random.Generator, now: float, sink: Optional[EventSink], label: str) -> None:
    """Lowest member of `rows` is the parent; every member gets a type from q(x*)."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        return
    levels = config.levels
    rows = rows[np.argsort(levels[rows], kind="stable")]
    parent_row = int(rows[0])
    parent_id = int(config.ids[parent_row])
    parent_level = float(levels[parent_row])
    parent_loc = config.locations[parent_row].copy()
    parent_allele = int(config.alleles[parent_row])
    locs, alleles = kernel.sample(parent_loc, parent_allele, config.locations[rows], rng)
    for member, loc, allele in zip(rows.tolist(), locs, alleles.tolist()):
        config.set_type(member, loc, allele)
    if sink is not None:
        sink.event(now, label, config.ids[rows].tolist())
        for member in rows[1:].tolist():
            sink.lineage_record(now, config.ids[member], parent_id, levels[member], parent_level, label)


# ---------------------------------------------------------------------------
# Mechanism base
# ---------------------------------------------------------------------------

class Mechanism(ABC):
    """
    One generator component.

    preserves_levels: events never move existing levels nor change the count.
    jumps_levels: events rescale levels of surviving particles.
    """
    kind = "mechanism"
    preserves_levels = False
    jumps_levels = False
    moves_types = False

    def __init__(self, label: Optional[str] = None):
        self.label = label or self.kind
        self.streams: Optional[MechanismStreams] = None
        self.rng: Optional[np.random.Generator] = None
        self._rate: Optional[float] = None
        self._next: Optional[float] = None

    def bind(self, config: Configuration, streams: MechanismStreams, static_levels: bool = False) -> None:
        self.streams = streams
        self.rng = streams.main
        self._rate = None
        self._next = None

    def rate(self, config: Configuration) -> float:
        """Event-rate bound; constant while the configuration's count and types are."""
        return 0.0

    def next_time(self, config: Configuration, now: float) -> float:
        rate = self.rate(config)
        if self._next is None or rate != self._rate:
            self._rate = rate
            self._next = now + float(self.rng.exponential(1.0 / rate)) if rate > 0 else math.inf
        return self._next

    def fire(self, config: Configuration, now: float, sink: EventSink) -> bool:
        self._next = None
        return self._apply(config, now, sink)

    def _apply(self, config: Configuration, now: float, sink: EventSink) -> bool:
        raise NotImplementedError

    def drift(self) -> Optional[LevelDrift]:
        return None

    def advance(self, config: Configuration, dt: float) -> None:
        """Type motion between events."""

    def generator(self, config: Configuration, g: TestFunction) -> GeneratorValue:
        raise UnsupportedGenerator(f"{self.kind} has no generator evaluation")

    def projected_generator(self, types, g: TestFunction, lam: float) -> float:
        raise UnsupportedGenerator(f"{self.kind} has no projected generator")

    def params(self) -> Dict:
        return {}

    def describe(self) -> Dict:
        return {"kind": self.kind, "label": self.label,
                "params": {key: repr(value) for key, value in self.params().items()}}


def _g_arrays(config: Configuration, g: TestFunction) -> np.ndarray:
    return g.values(config.locations, config.alleles, config.levels)


def _mc_generator(config: Configuration, g: TestFunction, apply: Callable,
                  rate: float, draws: int, seed: int = 0) -> GeneratorValue:
    """rate * E[f(after) - f(before)] by Monte Carlo over the event randomness."""
    base = eval_f(config, g)
    rng = np.random.default_rng(seed)
    diffs = np.empty(draws)
    for i in range(draws):
        copy = config.copy()
        apply(copy, rng)
        diffs[i] = eval_f(copy, g) - base
    std_err = float(diffs.std(ddof=1) / math.sqrt(draws)) if draws > 1 else 0.0
    return GeneratorValue(rate * float(diffs.mean()), "mc", rate * std_err)


# ---------------------------------------------------------------------------
# Death mechanisms
# ---------------------------------------------------------------------------

class PureDeath(Mechanism):
    """Levels grow as u' = d0(x) u; a particle dies when its level reaches lambda."""
    kind = "pure-death"

    def __init__(self, params: PureDeathParams, label: Optional[str] = None):
        super().__init__(label)
        self.params_block = params

    def drift(self):
        return ExponentialDrift(self.params_block.d0)

    def next_time(self, config, now):
        return math.inf

    def generator(self, config, g):
        if len(config) == 0:
            return GeneratorValue(0.0, "analytic")
        d0 = self.params_block.d0(config.locations, config.alleles)
        terms = d0 * config.levels * g.du(config.locations, config.alleles, config.levels)
        return GeneratorValue(float(np.sum(terms * loo_products(_g_arrays(config, g)))), "analytic")

    def projected_generator(self, types, g, lam):
        locations, alleles = types_to_arrays(types)
        if len(alleles) == 0:
            return 0.0
        gbar = g.gbar(locations, alleles, lam)
        d0 = self.params_block.d0(locations, alleles)
        return float(np.sum(d0 * (1.0 - gbar) * loo_products(gbar)))

    def params(self):
        return {"d0": self.params_block.d0}


class InstantDeath(Mechanism):
    """Fixed levels; each particle disappears at rate d0(x)."""
    kind = "instant-death"

    def __init__(self, params: PureDeathParams, label: Optional[str] = None):
        super().__init__(label)
        self.params_block = params
        self.d_sup = params.d0.sup()

    def rate(self, config):
        return self.d_sup * len(config)

    def _apply(self, config, now, sink):
        row = int(self.rng.integers(len(config)))
        d0 = self.params_block.d0(config.locations[row:row + 1], config.alleles[row:row + 1])[0]
        if self.rng.random() * self.d_sup >= d0:
            return False
        removed = config.remove_rows([row])
        sink.event(now, self.label, removed.tolist())
        return True

    def generator(self, config, g):
        if len(config) == 0:
            return GeneratorValue(0.0, "analytic")
        gv = _g_arrays(config, g)
        d0 = self.params_block.d0(config.locations, config.alleles)
        return GeneratorValue(float(np.sum(d0 * (1.0 - gv) * loo_products(gv))), "analytic")

    def projected_generator(self, types, g, lam):
        return PureDeath(self.params_block).projected_generator(types, g, lam)

    def params(self):
        return {"d0": self.params_block.d0}


class MultipleDeath(Mechanism):
    """Finite list of multiple-death events, each killing the k_d particles that reach lambda first."""
    kind = "multiple-death"
    jumps_levels = True

    def __init__(self, events: Sequence[MultipleDeathEvent], label: Optional[str] = None):
        super().__init__(label)
        self.events = tuple(events)
        self.weights = np.array([event.rate for event in self.events], dtype=float)

    def rate(self, config):
        return float(self.weights.sum()) if len(config) else 0.0

    def _pick(self) -> MultipleDeathEvent:
        return self.events[int(self.rng.choice(len(self.events), p=self.weights / self.weights.sum()))]

    def _apply(self, config, now, sink):
        event = self._pick()
        d1 = event.d1(config.locations, config.alleles)
        removed, _ = multiple_death_transform(config, event.k_d, d1)
        if removed.size == 0:
            return False
        sink.event(now, self.label, removed.tolist())
        return True

    def generator(self, config, g):
        base = eval_f(config, g)
        value = 0.0
        for event in self.events:
            copy = config.copy()
            multiple_death_transform(copy, event.k_d, event.d1(copy.locations, copy.alleles))
            value += event.rate * (eval_f(copy, g) - base)
        return GeneratorValue(value, "analytic")

    def params(self):
        return {"events": self.events}


# ---------------------------------------------------------------------------
# Birth mechanisms
# ---------------------------------------------------------------------------

class DiscreteBirth(Mechanism):
    """Discrete births: k new uniform levels, a coupled parent race, levels mapped by h_r^lam."""
    kind = "discrete-birth"
    jumps_levels = True

    def __init__(self, events: Sequence[DiscreteBirthEvent], label: Optional[str] = None,
                 mc_draws: int = MC_DRAWS):
        super().__init__(label)
        self.events = tuple(events)
        self.weights = np.array([event.rate for event in self.events], dtype=float)
        self.mc_draws = mc_draws

    def rate(self, config):
        return float(self.weights.sum()) if len(config) else 0.0

    def _transform(self, config, event, rng, now, sink) -> bool:
        k = event.offspring.sample(rng)
        if k <= 0:
            return False
        new_levels = rng.uniform(0.0, config.lam, size=k)
        r = event.r(config.locations, config.alleles)
        return discrete_birth_transform(config, r, new_levels, event.q, rng, now, sink, self.label) is not None

    def _apply(self, config, now, sink):
        event = self.events[int(self.rng.choice(len(self.events), p=self.weights / self.weights.sum()))]
        return self._transform(config, event, self.rng, now, sink)

    def generator(self, config, g):
        parts = [_mc_generator(config, g, lambda c, rng, e=event: self._transform(c, e, rng, c.time, None),
                               event.rate, self.mc_draws, seed=idx)
                 for idx, event in enumerate(self.events)]
        return GeneratorValue(sum(part.value for part in parts), "mc",
                              math.sqrt(sum(part.std_err ** 2 for part in parts)))

    def projected_generator(self, types, g, lam):
        locations, alleles = types_to_arrays(types)
        n = len(alleles)
        if n == 0:
            return 0.0
        gbar = g.gbar(locations, alleles, lam)
        loo = loo_products(gbar)
        value = 0.0
        for event in self.events:
            if not event.q.iid:
                raise UnsupportedGenerator("projected discrete birth needs an i.i.d. placement kernel")
            r = event.r(locations, alleles)
            if r.sum() <= 0:
                continue
            law = event.offspring
            for i in range(n):
                mean_child = event.q.expected_product(
                    locations[i], alleles[i], locations[i:i + 1],
                    lambda L, A: g.gbar(L, A, lam))
                gain = (law.pgf(mean_child) - law.p0) - gbar[i] * (1.0 - law.p0)
                value += event.rate * r[i] / r.sum() * gain * loo[i]
        return float(value)

    def params(self):
        return {"events": self.events}


class ContinuousBirth(Mechanism):
    """
    Births of k offspring at rate (k+1)(lam-u)^k lam^-k r(x), offspring levels
    uniform on (u, lam); levels drift down by r(x) G_k^lam(u).
    """
    kind = "continuous-birth"

    def __init__(self, params: ContinuousBirthParams, label: Optional[str] = None):
        super().__init__(label)
        self.params_block = params
        self.r_sup = params.r.sup()

    def drift(self):
        return BernoulliDrift(self.params_block.r, self.params_block.k)

    def rate(self, config):
        return (self.params_block.k + 1) * self.r_sup * len(config)

    def _apply(self, config, now, sink):
        k = self.params_block.k
        lam = config.lam
        row = int(self.rng.integers(len(config)))
        u = float(config.levels[row])
        r = self.params_block.r(config.locations[row:row + 1], config.alleles[row:row + 1])[0]
        accept = ((lam - u) / lam) ** k * r / self.r_sup
        if self.rng.random() >= accept:
            return False
        parent_id = int(config.ids[row])
        levels = self.rng.uniform(u, lam, size=k)
        levels = np.minimum(levels, np.nextafter(lam, 0.0))
        locs, alleles = _tile(config.locations[row], config.alleles[row], k)
        new_ids = config.add_many(locs, alleles, levels, birth_time=now)
        sink.event(now, self.label, [parent_id, *new_ids.tolist()])
        for cid, level in zip(new_ids.tolist(), levels.tolist()):
            sink.lineage_record(now, cid, parent_id, level, u, self.label)
        return True

    def generator(self, config, g):
        if len(config) == 0:
            return GeneratorValue(0.0, "analytic")
        k = self.params_block.k
        lam = config.lam
        locs, alleles, levels = config.locations, config.alleles, config.levels
        r = self.params_block.r(locs, alleles)
        gv = g.values(locs, alleles, levels)
        f = float(np.prod(gv))
        upper = g.integral_above(locs, alleles, levels, lam)
        births = np.sum(r * (k + 1) * lam ** (-k) * (upper ** k - (lam - levels) ** k))
        drift = np.sum(r * continuous_birth_drift(levels, k, lam) * g.du(locs, alleles, levels)
                       * loo_products(gv))
        return GeneratorValue(float(f * births + drift), "analytic")

    def projected_generator(self, types, g, lam):
        locations, alleles = types_to_arrays(types)
        if len(alleles) == 0:
            return 0.0
        gbar = g.gbar(locations, alleles, lam)
        r = self.params_block.r(locations, alleles)
        k = self.params_block.k
        return float(np.sum(r * (gbar ** (k + 1) - gbar) * loo_products(gbar)))

    def params(self):
        return {"k": self.params_block.k, "r": self.params_block.r}


# ---------------------------------------------------------------------------
# Replacement
# ---------------------------------------------------------------------------

class Replacement(Mechanism):
    """One-for-one replacement of a selected set by offspring of its lowest member; levels fixed."""
    kind = "replacement"
    preserves_levels = True

    def __init__(self, events: Sequence[ReplacementEvent], label: Optional[str] = None,
                 enumeration_limit: int = 20_000, mc_draws: int = MC_DRAWS):
        super().__init__(label)
        self.events = tuple(events)
        self.weights = np.array([event.total_rate for event in self.events], dtype=float)
        self.enumeration_limit = enumeration_limit
        self.mc_draws = mc_draws
        self._event_counter = 0

    def bind(self, config, streams, static_levels=False):
        super().bind(config, streams, static_levels)
        self._event_counter = 0

    def active_weights(self, n: int) -> np.ndarray:
        """Event weights at population n; a fixed-k event needs at least k particles."""
        return np.array([0.0 if event.variant == ReplacementVariant.FIXED_K and event.k > n else weight
                         for event, weight in zip(self.events, self.weights)])

    def rate(self, config):
        return float(self.active_weights(len(config)).sum()) if len(config) else 0.0

    def pick(self, config: Configuration) -> ReplacementEvent:
        weights = self.active_weights(len(config))
        return self.events[int(self.rng.choice(len(self.events), p=weights / weights.sum()))]

    def select(self, config: Configuration, event: ReplacementEvent,
               rng: np.random.Generator) -> np.ndarray:
        n = len(config)
        if event.variant == ReplacementVariant.FIXED_K:
            if event.k > n:
                raise ValueError(f"fixed-k replacement with k={event.k} > population {n}")
            return np.sort(rng.choice(n, size=event.k, replace=False))
        if event.variant == ReplacementVariant.BERNOULLI:
            # involvement drawn in level order
            order = np.argsort(config.levels, kind="stable")
            draws = rng.random(n)
            joined = draws < event.r(config.locations[order], config.alleles[order])
            return np.sort(order[joined])
        weights = np.array([rate for _, rate in event.subsets], dtype=float)
        ids, _ = event.subsets[int(rng.choice(len(weights), p=weights / weights.sum()))]
        present = [pid for pid in ids if config.has_id(pid)]
        return config.rows_of(present) if present else np.empty(0, dtype=np.int64)

    def _apply(self, config, now, sink):
        event = self.pick(config)
        self._event_counter += 1
        involvement = self.streams.keyed(self._event_counter, 0)
        placement = self.streams.keyed(self._event_counter, 1)
        rows = self.select(config, event, involvement)
        if rows.size == 0:
            return False
        replace_subset(config, rows, event.q, placement, now, sink, self.label)
        return True

    def _subset_gain(self, config, g, gv, rows, kernel: Kernel) -> float:
        """f(after) expectation minus f for one selected set."""
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == 0:
            return 0.0
        levels = config.levels
        rows = rows[np.argsort(levels[rows], kind="stable")]
        parent = rows[0]
        mask = np.ones(len(config), dtype=bool)
        mask[rows] = False
        rest = float(np.prod(gv[mask]))
        member_levels = levels[rows]
        after = kernel.expected_product(
            config.locations[parent], config.alleles[parent], config.locations[rows],
            lambda L, A: g.values(L, A, member_levels))
        return rest * (after - float(np.prod(gv[rows])))

    def generator(self, config, g):
        n = len(config)
        if n == 0:
            return GeneratorValue(0.0, "analytic")
        gv = _g_arrays(config, g)
        value, variance, method = 0.0, 0.0, "analytic"
        rng = np.random.default_rng(0)
        for event in self.events:
            if event.variant == ReplacementVariant.SUBSET_RATE:
                for ids, rate in event.subsets:
                    present = [pid for pid in ids if config.has_id(pid)]
                    if present:
                        value += rate * self._subset_gain(config, g, gv, config.rows_of(present), event.q)
                continue
            if event.variant == ReplacementVariant.FIXED_K:
                if event.k > n:
                    continue
                if math.comb(n, event.k) <= self.enumeration_limit:
                    gains = [self._subset_gain(config, g, gv, np.array(rows), event.q)
                             for rows in itertools.combinations(range(n), event.k)]
                    value += event.rate * float(np.mean(gains))
                    continue
            elif 2 ** n <= self.enumeration_limit:
                p = event.r(config.locations, config.alleles)
                for bits in itertools.product((False, True), repeat=n):
                    chosen = np.array(bits)
                    weight = float(np.prod(np.where(chosen, p, 1.0 - p)))
                    if weight > 0 and chosen.any():
                        value += event.rate * weight * self._subset_gain(config, g, gv, np.flatnonzero(chosen), event.q)
                continue
            method = "mc"
            gains = np.array([self._subset_gain(config, g, gv, self.select(config, event, rng), event.q)
                              for _ in range(self.mc_draws)])
            value += event.rate * float(gains.mean())
            variance += (event.rate * gains.std(ddof=1)) ** 2 / self.mc_draws
        return GeneratorValue(value, method, math.sqrt(variance))

    def params(self):
        return {"events": self.events}


class _Clock:
    """Buffered draws of one particle's lookdown clock."""
    __slots__ = ("rng", "size", "_exp", "_uni", "_ie", "_iu")

    def __init__(self, rng: np.random.Generator, size: int):
        self.rng = rng
        self.size = size
        self._exp: List[float] = []
        self._uni: List[float] = []
        self._ie = size
        self._iu = size

    def exponential(self) -> float:
        if self._ie >= self.size:
            self._exp = self.rng.standard_exponential(self.size).tolist()
            self._ie = 0
        value = self._exp[self._ie]
        self._ie += 1
        return value

    def uniform(self) -> float:
        if self._iu >= self.size:
            self._uni = self.rng.random(self.size).tolist()
            self._iu = 0
        value = self._uni[self._iu]
        self._iu += 1
        return value


class PairwiseReplacement(Mechanism):
    """
    Subset-rate replacement on pairs: at rate r(x, x') the higher-level member
    of the pair takes a type from q(lower). Optionally the two locations are
    then exchanged with probability 1/2.

    With static levels every particle carries its own clock keyed by its id:
    it looks down at rate r_sup * rank, picks a partner uniformly among the
    lower levels and accepts with probability r / r_sup. Otherwise a single
    clock runs over all unordered pairs.
    """
    kind = "pairwise-replacement"
    preserves_levels = True

    def __init__(self, rate: PairRate, kernel: Kernel = None, swap_locations: bool = False,
                 label: Optional[str] = None, buffer: int = 128):
        super().__init__(label)
        self.pair_rate = rate
        self.kernel = kernel or CopyParent()
        self.swap_locations = swap_locations
        self.buffer = buffer
        self.r_sup = rate.sup()
        self._constant = isinstance(rate, ConstantPairRate)
        self._copy_parent = isinstance(self.kernel, CopyParent)
        self.static = False
        self._heap: List[Tuple[float, int]] = []
        self._clocks: Dict[int, Tuple[_Clock, int, int]] = {}
        self._order_rows = np.empty(0, dtype=np.int64)

    def bind(self, config, streams, static_levels=False):
        super().bind(config, streams, static_levels)
        self.static = static_levels
        self._heap = []
        self._clocks = {}
        if self.static and self.r_sup > 0 and len(config) > 1:
            order = config.lowest(len(config))
            self._order_rows = config.rows_of(order)
            now = config.time
            for rank, pid in enumerate(order):
                if rank == 0:
                    continue
                clock = _Clock(streams.keyed(pid), self.buffer)
                self._clocks[pid] = (clock, rank, int(self._order_rows[rank]))
                self._heap.append((now + clock.exponential() / (self.r_sup * rank), pid))
            heapq.heapify(self._heap)

    def rate(self, config):
        n = len(config)
        return self.r_sup * n * (n - 1) / 2.0

    def next_time(self, config, now):
        if self.static:
            return self._heap[0][0] if self._heap else math.inf
        return super().next_time(config, now)

    def fire(self, config, now, sink):
        if not self.static:
            return super().fire(config, now, sink)
        _, pid = heapq.heappop(self._heap)
        clock, rank, row = self._clocks[pid]
        partner_row = int(self._order_rows[int(clock.uniform() * rank)])
        accepted = True
        if not self._constant:
            rate = self.pair_rate(config.locations[partner_row:partner_row + 1],
                                  config.alleles[partner_row:partner_row + 1],
                                  config.locations[row:row + 1], config.alleles[row:row + 1])[0]
            accepted = clock.uniform() * self.r_sup < rate
        heapq.heappush(self._heap, (now + clock.exponential() / (self.r_sup * rank), pid))
        if accepted:
            self._replace(config, partner_row, row, now, sink, clock.uniform, clock.rng)
        return accepted

    def run_until(self, config: Configuration, t_stop: float, sink: EventSink) -> int:
        """Fire every static-clock event up to t_stop; returns the number of accepted events."""
        fired = 0
        heap = self._heap
        while heap and heap[0][0] <= t_stop:
            fired += self.fire(config, heap[0][0], sink)
        return fired

    def _apply(self, config, now, sink):
        n = len(config)
        i = int(self.rng.integers(n))
        j = int(self.rng.integers(n - 1))
        j += j >= i
        rate = self.pair_rate(config.locations[i:i + 1], config.alleles[i:i + 1],
                              config.locations[j:j + 1], config.alleles[j:j + 1])[0]
        if self.rng.random() * self.r_sup >= rate:
            return False
        lower, upper = (i, j) if config.levels[i] < config.levels[j] else (j, i)
        self._replace(config, lower, upper, now, sink, self.rng.random, self.rng)
        return True

    def _replace(self, config, lower, upper, now, sink, uniform, rng) -> None:
        if self._copy_parent:
            config.set_type(upper, config.locations[lower], int(config.alleles[lower]))
        else:
            locs, alleles = self.kernel.sample(config.locations[lower], int(config.alleles[lower]),
                                               config.locations[upper:upper + 1], rng)
            config.set_type(upper, locs[0], int(alleles[0]))
        if self.swap_locations and uniform() < 0.5:
            lower_loc = config.locations[lower].copy()
            config.set_type(lower, config.locations[upper], int(config.alleles[lower]))
            config.set_type(upper, lower_loc, int(config.alleles[upper]))
        lower_id = int(config.ids[lower])
        upper_id = int(config.ids[upper])
        sink.event(now, self.label, (lower_id, upper_id))
        sink.lineage_record(now, upper_id, lower_id, config.levels[upper], config.levels[lower], self.label)

    def _pair_after(self, config, g, lower, upper) -> np.ndarray:
        locs, alleles, levels = config.locations, config.alleles, config.levels
        if self._copy_parent:
            return g.values(locs[lower], alleles[lower], levels[lower]) * \
                g.values(locs[lower], alleles[lower], levels[upper])
        if isinstance(self.kernel, CopyAllele):
            stay = g.values(locs[lower], alleles[lower], levels[lower]) * \
                g.values(locs[upper], alleles[lower], levels[upper])
            if not self.swap_locations:
                return stay
            swapped = g.values(locs[upper], alleles[lower], levels[lower]) * \
                g.values(locs[lower], alleles[lower], levels[upper])
            return 0.5 * (stay + swapped)
        if self.swap_locations:
            raise UnsupportedGenerator("location swap is only evaluated with the allele-copy kernel")
        out = np.empty(len(lower))
        for idx, (lo, up) in enumerate(zip(lower.tolist(), upper.tolist())):
            own = g.values(locs[lo:lo + 1], alleles[lo:lo + 1], levels[lo:lo + 1])[0]
            out[idx] = own * self.kernel.expected_product(
                locs[lo], alleles[lo], locs[up:up + 1],
                lambda L, A, u=levels[up]: g.values(L, A, np.array([u])))
        return out

    def generator(self, config, g):
        n = len(config)
        if n < 2:
            return GeneratorValue(0.0, "analytic")
        locs, alleles, levels = config.locations, config.alleles, config.levels
        gv = g.values(locs, alleles, levels)
        iu, ju = np.triu_indices(n, 1)
        rates = self.pair_rate(locs[iu], alleles[iu], locs[ju], alleles[ju])
        lower = np.where(levels[iu] < levels[ju], iu, ju)
        upper = np.where(levels[iu] < levels[ju], ju, iu)
        after = self._pair_after(config, g, lower, upper)
        others = loo2_products(gv)[iu, ju]
        return GeneratorValue(float(np.sum(rates * (after - gv[iu] * gv[ju]) * others)), "analytic")

    def projected_generator(self, types, g, lam):
        locations, alleles = types_to_arrays(types)
        n = len(alleles)
        if n < 2:
            return 0.0
        gbar = g.gbar(locations, alleles, lam)
        iu, ju = np.triu_indices(n, 1)
        rates = self.pair_rate(locations[iu], alleles[iu], locations[ju], alleles[ju])
        if self._copy_parent:
            after = 0.5 * gbar[iu] ** 2 + 0.5 * gbar[ju] ** 2
        elif isinstance(self.kernel, CopyAllele):
            after = 0.5 * gbar[iu] * g.gbar(locations[ju], alleles[iu], lam) + \
                0.5 * gbar[ju] * g.gbar(locations[iu], alleles[ju], lam)
        else:
            raise UnsupportedGenerator("projected pairwise replacement needs a copy kernel")
        others = loo2_products(gbar)[iu, ju]
        return float(np.sum(rates * (after - gbar[iu] * gbar[ju]) * others))

    def params(self):
        return {"rate": self.pair_rate, "kernel": self.kernel, "swap_locations": self.swap_locations}


# ---------------------------------------------------------------------------
# Thinning, immigration, motion
# ---------------------------------------------------------------------------

class Thinning(Mechanism):
    """Levels scaled by 1/(1-p(x)); particles pushed to lambda or beyond are removed."""
    kind = "thinning"
    jumps_levels = True

    def __init__(self, events: Sequence[ThinningEvent], label: Optional[str] = None):
        super().__init__(label)
        self.events = tuple(events)
        self.weights = np.array([event.rate for event in self.events], dtype=float)

    def rate(self, config):
        return float(self.weights.sum()) if len(config) else 0.0

    def _apply(self, config, now, sink):
        event = self.events[int(self.rng.choice(len(self.events), p=self.weights / self.weights.sum()))]
        p = event.p(config.locations, config.alleles)
        removed = rescale_and_truncate(config, 1.0 / (1.0 - p))
        sink.event(now, self.label, removed.tolist())
        return True

    def generator(self, config, g):
        if len(config) == 0:
            return GeneratorValue(0.0, "analytic")
        locs, alleles, levels = config.locations, config.alleles, config.levels
        f = float(np.prod(g.values(locs, alleles, levels)))
        value = 0.0
        for event in self.events:
            rho = 1.0 / (1.0 - event.p(locs, alleles))
            value += event.rate * (float(np.prod(g.values(locs, alleles, levels * rho))) - f)
        return GeneratorValue(value, "analytic")

    def projected_generator(self, types, g, lam):
        locations, alleles = types_to_arrays(types)
        if len(alleles) == 0:
            return 0.0
        gbar = g.gbar(locations, alleles, lam)
        value = 0.0
        for event in self.events:
            p = event.p(locations, alleles)
            value += event.rate * (float(np.prod(p + (1.0 - p) * gbar)) - float(np.prod(gbar)))
        return value

    def params(self):
        return {"events": self.events}


class Immigration(Mechanism):
    """Arrivals with a type from the source law and a uniform level."""
    kind = "immigration"

    def __init__(self, sources: Sequence[ImmigrationSource], label: Optional[str] = None):
        super().__init__(label)
        self.sources = tuple(sources)
        self.weights = np.array([source.arrival_rate for source in self.sources], dtype=float)

    def rate(self, config):
        return float(self.weights.sum())

    def _apply(self, config, now, sink):
        source = self.sources[int(self.rng.choice(len(self.sources), p=self.weights / self.weights.sum()))]
        locations, alleles = source.type_law.sample(1, self.rng)
        level = float(self.rng.uniform(0.0, config.lam))
        pid = config.add(locations[0], int(alleles[0]), level, birth_time=now)
        sink.event(now, self.label, [pid])
        sink.lineage_record(now, pid, None, level, math.nan, self.label)
        return True

    def _gain(self, g: TestFunction, lam: float) -> float:
        return float(sum(source.arrival_rate * (source.type_law.expectation(
            lambda L, A: g.gbar(L, A, lam)) - 1.0) for source in self.sources))

    def generator(self, config, g):
        return GeneratorValue(eval_f(config, g) * self._gain(g, config.lam), "analytic")

    def projected_generator(self, types, g, lam):
        return eval_alpha_f_discrete(types, g, lam) * self._gain(g, lam)

    def params(self):
        return {"sources": self.sources}


class Motion(Mechanism):
    """Independent motion or mutation of types between events; levels untouched."""
    kind = "motion"
    preserves_levels = True
    moves_types = True

    def __init__(self, kernel: MotionKernel, label: Optional[str] = None):
        super().__init__(label)
        self.kernel = kernel

    def next_time(self, config, now):
        return math.inf

    def advance(self, config, dt):
        if self.kernel.kind == MotionKind.NONE or dt <= 0 or len(config) == 0:
            return
        locations, alleles = self.kernel.apply(config.locations, config.alleles, dt, self.rng)
        if config.dim:
            config.locations[:] = locations
        config.alleles[:] = alleles
        config.mark_types_changed()

    def generator(self, config, g):
        if len(config) == 0:
            return GeneratorValue(0.0, "analytic")
        levels = config.levels
        gv = _g_arrays(config, g)
        bg = self.kernel.generator_of(lambda L, A: g.values(L, A, levels), config.locations, config.alleles)
        return GeneratorValue(float(np.sum(bg * loo_products(gv))), "analytic")

    def projected_generator(self, types, g, lam):
        locations, alleles = types_to_arrays(types)
        if len(alleles) == 0:
            return 0.0
        gbar = g.gbar(locations, alleles, lam)
        bg = self.kernel.generator_of(lambda L, A: g.gbar(L, A, lam), locations, alleles)
        return float(np.sum(bg * loo_products(gbar)))

    def params(self):
        return {"kernel": self.kernel}


# ---------------------------------------------------------------------------
# Pure (copying) operations
# ---------------------------------------------------------------------------

def flow_levels_pure_death(config: Configuration, params: PureDeathParams, dt: float) -> Configuration:
    """Levels grow by e^{d0 dt}; particles reaching lambda within dt are removed."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    out = config.copy()
    factors = np.exp(params.d0(out.locations, out.alleles) * dt)
    rescale_and_truncate(out, factors)
    out.time += dt
    return out


def pure_death_exit_times(config: Configuration, params: PureDeathParams) -> np.ndarray:
    """Time until each particle's level reaches lambda, (1/d0) log(lam/u)."""
    return ExponentialDrift(params.d0).exit_times(config.locations, config.alleles, config.levels, config.lam)


def apply_multiple_death(config: Configuration, event: MultipleDeathEvent) -> Configuration:
    out = config.copy()
    multiple_death_transform(out, event.k_d, event.d1(out.locations, out.alleles))
    return out


def apply_discrete_birth(config: Configuration, event: DiscreteBirthEvent, rng: np.random.Generator,
                         sink: Optional[EventSink] = None) -> Configuration:
    out = config.copy()
    k = event.offspring.sample(rng)
    if k > 0:
        new_levels = rng.uniform(0.0, out.lam, size=k)
        discrete_birth_transform(out, event.r(out.locations, out.alleles), new_levels, event.q,
                                 rng, out.time, sink, DiscreteBirth.kind)
    return out


def continuous_birth_flow(config: Configuration, params: ContinuousBirthParams, dt: float) -> Configuration:
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    out = config.copy()
    if len(out):
        flowed = BernoulliDrift(params.r, params.k).flow(out.locations, out.alleles, out.levels, out.lam, dt)
        out.levels[:] = np.clip(flowed, 0.0, np.nextafter(out.lam, 0.0))
        out.mark_levels_changed()
    out.time += dt
    return out


def continuous_birth_events(config: Configuration, params: ContinuousBirthParams, dt: float,
                            rng: np.random.Generator, sink: Optional[EventSink] = None) -> Configuration:
    """Births over dt by Ogata thinning with levels held where they are."""
    out = config.copy()
    mechanism = ContinuousBirth(params)
    mechanism.rng = rng
    sink = sink or EventSink(record_events=False, record_lineage=False)
    t = out.time
    stop = out.time + dt
    while True:
        bound = mechanism.rate(out)
        if bound <= 0:
            break
        t += float(rng.exponential(1.0 / bound))
        if t > stop:
            break
        mechanism._apply(out, t, sink)
    out.time = stop
    return out


def apply_replacement(config: Configuration, event: ReplacementEvent, rng: np.random.Generator,
                      sink: Optional[EventSink] = None) -> Configuration:
    out = config.copy()
    mechanism = Replacement([event])
    rows = mechanism.select(out, event, rng)
    replace_subset(out, rows, event.q, rng, out.time, sink, Replacement.kind)
    return out


def apply_thinning(config: Configuration, event: ThinningEvent) -> Configuration:
    out = config.copy()
    rescale_and_truncate(out, 1.0 / (1.0 - event.p(out.locations, out.alleles)))
    return out


def apply_immigration(config: Configuration, source: ImmigrationSource, rng: np.random.Generator,
                      sink: Optional[EventSink] = None) -> Configuration:
    out = config.copy()
    locations, alleles = source.type_law.sample(1, rng)
    level = float(rng.uniform(0.0, out.lam))
    pid = out.add(locations[0], int(alleles[0]), level, birth_time=out.time)
    if sink is not None:
        sink.lineage_record(out.time, pid, None, level, math.nan, Immigration.kind)
    return out


def apply_motion(config: Configuration, kernel: MotionKernel, dt: float,
                 rng: np.random.Generator) -> Configuration:
    out = config.copy()
    locations, alleles = kernel.apply(out.locations.copy(), out.alleles.copy(), dt, rng)
    if out.dim:
        out.locations[:] = locations
    out.alleles[:] = alleles
    out.mark_types_changed()
    return out


def generator_apply(mechanism: Mechanism, config: Configuration, g: TestFunction) -> GeneratorValue:
    """A f(eta) for f = prod g."""
    if g.is_identity:
        return GeneratorValue(0.0, "analytic")
    return mechanism.generator(config, g)


def projected_generator(mechanism: Mechanism, types, g: TestFunction, lam: float) -> float:
    """Level-averaged generator alpha-bar A f at the type multiset."""
    if g.is_identity:
        return 0.0
    return mechanism.projected_generator(types, g, lam)
