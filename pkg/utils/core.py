"""
Lookdown State Space

Typed points, levelled particles and configurations, the product-form test
functions g(x,u) with their closed-form level integrals, and the two
conditional samplers (uniform levels for finite populations, conditionally
Poisson levels for the truncated infinite-intensity state).
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, special
from sortedcontainers import SortedList

from config import LEVEL_SLAB, QUAD_TOL

logger = logging.getLogger(__name__)


class LookdownError(Exception):
    """Base class for every error raised by the simulator."""


class UnsupportedShapeError(LookdownError):
    """Raised when an operation needs a derivative the ramp shape does not have."""


# ---------------------------------------------------------------------------
# Type space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TypePoint:
    """Spatial location (empty tuple for a single abstract site) and allele."""
    location: Tuple[float, ...] = ()
    allele: int = 0


@dataclass(frozen=True)
class Domain:
    """Flat torus of side `side` in `dim` dimensions with a finite allele alphabet."""
    dim: int = 0
    side: float = 1.0
    n_alleles: int = 1
    lattice: bool = False
    spacing: float = 1.0

    def __post_init__(self):
        if self.dim < 0:
            raise ValueError("dim must be nonnegative")
        if self.side <= 0:
            raise ValueError("side must be positive")
        if self.n_alleles < 1:
            raise ValueError("the allele alphabet needs at least one element")

    @property
    def volume(self) -> float:
        return float(self.side ** self.dim)

    def validate_point(self, x: TypePoint) -> None:
        if len(x.location) != self.dim:
            raise ValueError(f"location {x.location} does not have dimension {self.dim}")
        if not 0 <= x.allele < self.n_alleles:
            raise ValueError(f"allele {x.allele} outside alphabet of size {self.n_alleles}")
        for coord in x.location:
            if not 0.0 <= coord < self.side:
                raise ValueError(f"location {x.location} outside torus of side {self.side}")

    def wrap(self, coords: np.ndarray) -> np.ndarray:
        wrapped = np.mod(coords, self.side)
        # mod can return side itself for tiny negative inputs
        wrapped[wrapped >= self.side] = 0.0
        return wrapped

    def displacement(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Minimal-image displacement b - a on the torus."""
        half = 0.5 * self.side
        return np.mod(np.asarray(b) - np.asarray(a) + half, self.side) - half

    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.displacement(a, b), axis=-1)

    def ball_volume(self, radius: float) -> float:
        if self.dim == 0:
            return 1.0
        d = self.dim
        return float(math.pi ** (d / 2) / special.gamma(d / 2 + 1) * radius ** d)

    def ball_intersection_volume(self, radius: float, separation) -> np.ndarray:
        """Volume of the intersection of two balls of equal radius at the given separation."""
        delta = np.asarray(separation, dtype=float)
        if self.dim == 1:
            return np.clip(2.0 * radius - delta, 0.0, None)
        if self.dim == 2:
            inside = delta < 2.0 * radius
            ratio = np.clip(delta / (2.0 * radius), 0.0, 1.0)
            lens = (2.0 * radius ** 2 * np.arccos(ratio)
                    - 0.5 * delta * np.sqrt(np.clip(4.0 * radius ** 2 - delta ** 2, 0.0, None)))
            return np.where(inside, lens, 0.0)
        raise ValueError(f"ball intersection volume not available for dim={self.dim}")

    def uniform_locations(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.lattice:
            sites = int(round(self.side / self.spacing))
            return rng.integers(0, sites, size=(n, self.dim)).astype(float) * self.spacing
        return rng.uniform(0.0, self.side, size=(n, self.dim))

    def uniform_in_ball(self, center: Sequence[float], radius: float, n: int,
                        rng: np.random.Generator) -> np.ndarray:
        if self.dim == 0:
            return np.empty((n, 0))
        center = np.asarray(center, dtype=float)
        if self.dim == 1:
            offsets = rng.uniform(-radius, radius, size=(n, 1))
        else:
            directions = rng.standard_normal((n, self.dim))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
            radii = radius * rng.random(n) ** (1.0 / self.dim)
            offsets = directions * radii[:, None]
        return self.wrap(center + offsets)

    def in_ball(self, locations: np.ndarray, center: Sequence[float], radius: float) -> np.ndarray:
        if self.dim == 0:
            return np.ones(len(locations), dtype=bool)
        return self.distance(locations, np.asarray(center, dtype=float)) <= radius


# ---------------------------------------------------------------------------
# Type functions (vectorised, picklable)
# ---------------------------------------------------------------------------

class TypeField:
    """Bounded nonnegative function of the type point evaluated on particle arrays."""

    def __call__(self, locations: np.ndarray, alleles: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sup(self) -> float:
        raise NotImplementedError

    def at(self, x: TypePoint) -> float:
        locations = np.asarray(x.location, dtype=float).reshape(1, len(x.location))
        return float(self(locations, np.array([x.allele]))[0])


@dataclass(frozen=True)
class ConstantField(TypeField):
    value: float

    def __call__(self, locations, alleles):
        return np.full(len(alleles), float(self.value))

    def sup(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class AlleleField(TypeField):
    values: Tuple[float, ...]

    def __call__(self, locations, alleles):
        return np.asarray(self.values, dtype=float)[np.asarray(alleles, dtype=np.int64)]

    def sup(self) -> float:
        return float(max(self.values)) if self.values else 0.0


@dataclass(frozen=True)
class BallField(TypeField):
    """value on the torus ball around `center`, zero outside."""
    center: Tuple[float, ...]
    radius: float
    value: float
    side: float

    def __call__(self, locations, alleles):
        half = 0.5 * self.side
        delta = np.mod(np.asarray(locations) - np.asarray(self.center) + half, self.side) - half
        inside = np.linalg.norm(delta, axis=-1) <= self.radius
        return np.where(inside, float(self.value), 0.0)

    def sup(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class CosineField(TypeField):
    """Smooth bump value * prod_i (1 + cos(2 pi (x_i - c_i) / L)) / 2."""
    value: float
    side: float
    center: Tuple[float, ...] = ()

    def __call__(self, locations, alleles):
        locations = np.asarray(locations, dtype=float)
        if locations.shape[1] == 0:
            return np.full(len(alleles), float(self.value))
        center = np.asarray(self.center or (0.0,) * locations.shape[1])
        bumps = 0.5 * (1.0 + np.cos(2.0 * np.pi * (locations - center) / self.side))
        return float(self.value) * np.prod(bumps, axis=1)

    def sup(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class ProductField(TypeField):
    fields: Tuple[TypeField, ...]

    def __call__(self, locations, alleles):
        out = np.ones(len(alleles))
        for item in self.fields:
            out = out * item(locations, alleles)
        return out

    def sup(self) -> float:
        return float(np.prod([item.sup() for item in self.fields])) if self.fields else 1.0


class PairRate:
    """Symmetric pair rate r(x, x') evaluated on aligned particle arrays."""

    def __call__(self, loc_a, allele_a, loc_b, allele_b) -> np.ndarray:
        raise NotImplementedError

    def sup(self) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantPairRate(PairRate):
    gamma: float

    def __call__(self, loc_a, allele_a, loc_b, allele_b):
        return np.full(np.shape(allele_a), float(self.gamma))

    def sup(self) -> float:
        return float(self.gamma)


@dataclass(frozen=True)
class SameSitePairRate(PairRate):
    """gamma when both particles sit at the same location, zero otherwise."""
    gamma: float

    def __call__(self, loc_a, allele_a, loc_b, allele_b):
        loc_a = np.asarray(loc_a)
        loc_b = np.asarray(loc_b)
        if loc_a.shape[-1] == 0:
            return np.full(np.shape(allele_a), float(self.gamma))
        same = np.all(np.isclose(loc_a, loc_b, rtol=0.0, atol=1e-12), axis=-1)
        return np.where(same, float(self.gamma), 0.0)

    def sup(self) -> float:
        return float(self.gamma)


@dataclass(frozen=True)
class DistancePairRate(PairRate):
    """r(|x - x'|) on a lattice torus; rates[k - 1] applies at lattice distance k."""
    rates: Tuple[float, ...]
    side: float
    spacing: float = 1.0

    def __call__(self, loc_a, allele_a, loc_b, allele_b):
        half = 0.5 * self.side
        delta = np.mod(np.asarray(loc_b) - np.asarray(loc_a) + half, self.side) - half
        steps = np.rint(np.abs(delta).sum(axis=-1) / self.spacing).astype(np.int64)
        table = np.concatenate([[0.0], np.asarray(self.rates, dtype=float)])
        valid = (steps >= 1) & (steps <= len(self.rates))
        return np.where(valid, table[np.clip(steps, 0, len(self.rates))], 0.0)

    def sup(self) -> float:
        return float(max(self.rates)) if self.rates else 0.0


# ---------------------------------------------------------------------------
# Particles and configurations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Particle:
    id: int
    x: TypePoint
    u: float
    birth_time: float = 0.0


class Configuration:
    """
    Finite counting measure on E x [0, lambda).

    Particles are stored column-wise. Rows are always sorted by id (ids are
    handed out by a monotone counter and removal keeps the order), so id
    lookup is a binary search. A level-sorted index is built on demand.
    """

    def __init__(self, lam: float, dim: int = 0, time: float = 0.0, capacity: int = 16):
        if not lam > 0:
            raise ValueError(f"lambda must be positive, got {lam}")
        self.lam = float(lam)
        self.dim = int(dim)
        self.time = float(time)
        self.next_id = 0
        self.version = 0
        self.type_version = 0
        capacity = max(int(capacity), 1)
        self._ids = np.empty(capacity, dtype=np.int64)
        self._locations = np.empty((capacity, self.dim))
        self._alleles = np.empty(capacity, dtype=np.int64)
        self._levels = np.empty(capacity)
        self._births = np.empty(capacity)
        self._n = 0
        self._index: Optional[SortedList] = None

    # -- construction -----------------------------------------------------

    @classmethod
    def from_arrays(cls, lam: float, locations, alleles, levels, birth_times=None,
                    ids=None, time: float = 0.0, next_id: Optional[int] = None) -> "Configuration":
        levels = np.asarray(levels, dtype=float)
        n = len(levels)
        locations = np.asarray(locations, dtype=float)
        if locations.ndim != 2 or locations.shape[0] != n:
            locations = locations.reshape(n, locations.size // n if n else 0)
        dim = locations.shape[1]
        config = cls(lam, dim=dim, time=time, capacity=n + 16)
        if n == 0:
            config.next_id = int(next_id or 0)
            return config
        if ids is None:
            ids = np.arange(n, dtype=np.int64)
        ids = np.asarray(ids, dtype=np.int64)
        if np.any(np.diff(ids) <= 0):
            order = np.argsort(ids, kind="stable")
            ids, locations, levels = ids[order], locations[order], levels[order]
            alleles = np.asarray(alleles)[order]
            birth_times = None if birth_times is None else np.asarray(birth_times)[order]
            if np.any(np.diff(ids) == 0):
                raise ValueError("particle ids must be unique")
        if np.any(levels < 0) or np.any(levels >= config.lam):
            raise ValueError("levels must lie in [0, lambda)")
        config._ids[:n] = ids
        config._locations[:n] = locations
        config._alleles[:n] = np.asarray(alleles, dtype=np.int64)
        config._levels[:n] = levels
        config._births[:n] = time if birth_times is None else np.asarray(birth_times, dtype=float)
        config._n = n
        config.next_id = int(next_id if next_id is not None else ids[-1] + 1)
        return config

    # -- array views --------------------------------------------------------

    @property
    def ids(self) -> np.ndarray:
        return self._ids[:self._n]

    @property
    def locations(self) -> np.ndarray:
        return self._locations[:self._n]

    @property
    def alleles(self) -> np.ndarray:
        return self._alleles[:self._n]

    @property
    def levels(self) -> np.ndarray:
        return self._levels[:self._n]

    @property
    def birth_times(self) -> np.ndarray:
        return self._births[:self._n]

    def __len__(self) -> int:
        return self._n

    def __iter__(self) -> Iterator[Particle]:
        for row in range(self._n):
            yield self.particle(row)

    def __repr__(self) -> str:
        return f"Configuration(lam={self.lam}, n={self._n}, time={self.time})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return (self.lam == other.lam and self.time == other.time and self._n == other._n
                and self.dim == other.dim
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.locations, other.locations)
                and np.array_equal(self.alleles, other.alleles)
                and np.array_equal(self.levels, other.levels)
                and np.array_equal(self.birth_times, other.birth_times))

    __hash__ = None

    # -- access -------------------------------------------------------------

    def type_point(self, row: int) -> TypePoint:
        return TypePoint(tuple(float(c) for c in self._locations[row]), int(self._alleles[row]))

    def particle(self, row: int) -> Particle:
        return Particle(int(self._ids[row]), self.type_point(row),
                        float(self._levels[row]), float(self._births[row]))

    def types(self) -> List[TypePoint]:
        return [self.type_point(row) for row in range(self._n)]

    def rows_of(self, ids) -> np.ndarray:
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        rows = np.searchsorted(self.ids, ids)
        ok = rows < self._n
        ok[ok] = self.ids[rows[ok]] == ids[ok]
        if not np.all(ok):
            missing = ids[~ok].tolist()
            raise KeyError(f"particles not present: {missing}")
        return rows

    def row_of(self, pid: int) -> int:
        return int(self.rows_of([pid])[0])

    def has_id(self, pid: int) -> bool:
        row = int(np.searchsorted(self.ids, pid))
        return row < self._n and int(self._ids[row]) == pid

    # -- mutation -----------------------------------------------------------

    def _reserve(self, extra: int) -> None:
        needed = self._n + extra
        capacity = len(self._levels)
        if needed <= capacity:
            return
        capacity = max(needed, 2 * capacity)
        for name in ("_ids", "_alleles", "_levels", "_births"):
            old = getattr(self, name)
            new = np.empty(capacity, dtype=old.dtype)
            new[:self._n] = old[:self._n]
            setattr(self, name, new)
        locations = np.empty((capacity, self.dim))
        locations[:self._n] = self._locations[:self._n]
        self._locations = locations

    def add(self, location, allele: int, level: float, birth_time: Optional[float] = None) -> int:
        if not 0.0 <= level < self.lam:
            raise ValueError(f"level {level} outside [0, {self.lam})")
        ids = self.add_many(np.asarray(location, dtype=float).reshape(1, self.dim),
                            np.array([allele]), np.array([level]), birth_time)
        return int(ids[0])

    def add_many(self, locations, alleles, levels, birth_time: Optional[float] = None) -> np.ndarray:
        levels = np.asarray(levels, dtype=float)
        k = len(levels)
        if k == 0:
            return np.empty(0, dtype=np.int64)
        self._reserve(k)
        new_ids = np.arange(self.next_id, self.next_id + k, dtype=np.int64)
        rows = slice(self._n, self._n + k)
        self._ids[rows] = new_ids
        self._locations[rows] = np.asarray(locations, dtype=float).reshape(k, self.dim)
        self._alleles[rows] = np.asarray(alleles, dtype=np.int64)
        self._levels[rows] = levels
        self._births[rows] = self.time if birth_time is None else birth_time
        self._n += k
        self.next_id += k
        self.version += 1
        if self._index is not None:
            self._index.update(zip(levels.tolist(), new_ids.tolist()))
        return new_ids

    def remove_rows(self, rows) -> np.ndarray:
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        if rows.size == 0:
            return np.empty(0, dtype=np.int64)
        keep = np.ones(self._n, dtype=bool)
        keep[rows] = False
        removed = self.ids[~keep].copy()
        if self._index is not None:
            for level, pid in zip(self.levels[~keep].tolist(), removed.tolist()):
                self._index.remove((level, pid))
        m = int(keep.sum())
        self._ids[:m] = self.ids[keep]
        self._locations[:m] = self.locations[keep]
        self._alleles[:m] = self.alleles[keep]
        self._levels[:m] = self.levels[keep]
        self._births[:m] = self.birth_times[keep]
        self._n = m
        self.version += 1
        return removed

    def remove_ids(self, ids) -> np.ndarray:
        return self.remove_rows(self.rows_of(ids))

    def set_type(self, row: int, location, allele: int) -> None:
        if self.dim:
            self._locations[row] = location
        self._alleles[row] = allele
        self.mark_types_changed()

    def mark_types_changed(self) -> None:
        """Record that locations or alleles were written in place."""
        self.type_version += 1
        self.version += 1

    def mark_levels_changed(self) -> None:
        """Drop the level index after levels were written in place."""
        self._index = None

    # -- level order ----------------------------------------------------------

    def level_index(self) -> SortedList:
        if self._index is None:
            self._index = SortedList(zip(self.levels.tolist(), self.ids.tolist()))
        return self._index

    def lowest(self, n: int) -> List[int]:
        """Ids of the n lowest-level particles, lowest first."""
        if n > self._n:
            raise ValueError(f"cannot take {n} particles from a population of {self._n}")
        return [pid for _, pid in self.level_index()[:n]]

    def rank(self, pid: int) -> int:
        """Number of particles with a strictly lower level."""
        row = self.row_of(pid)
        return self.level_index().bisect_left((float(self._levels[row]), pid))

    # -- copies and views -----------------------------------------------------

    def copy(self) -> "Configuration":
        clone = Configuration(self.lam, dim=self.dim, time=self.time, capacity=self._n + 16)
        n = self._n
        clone._ids[:n] = self.ids
        clone._locations[:n] = self.locations
        clone._alleles[:n] = self.alleles
        clone._levels[:n] = self.levels
        clone._births[:n] = self.birth_times
        clone._n = n
        clone.next_id = self.next_id
        clone.version = self.version
        clone.type_version = self.type_version
        return clone

    def restrict(self, cap: float) -> "Configuration":
        """Sub-configuration of the particles with level below `cap` (ids kept)."""
        if cap > self.lam:
            raise ValueError(f"cap {cap} exceeds lambda {self.lam}")
        keep = self.levels < cap
        return Configuration.from_arrays(
            cap, self.locations[keep], self.alleles[keep], self.levels[keep],
            self.birth_times[keep], ids=self.ids[keep], time=self.time, next_id=self.next_id,
        )

    def assert_valid(self) -> None:
        if self._n and (np.any(self.levels < 0) or np.any(self.levels >= self.lam)):
            raise ValueError("a particle carries a level outside [0, lambda)")
        if np.any(np.diff(self.ids) <= 0):
            raise ValueError("particle ids are not unique and increasing")


def types_to_arrays(types: Iterable[TypePoint]) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(types, Counter):
        types = list(types.elements())
    types = list(types)
    if not types:
        return np.empty((0, 0)), np.empty(0, dtype=np.int64)
    dim = len(types[0].location)
    if any(len(x.location) != dim for x in types):
        raise ValueError("type points must share one dimension")
    locations = np.array([x.location for x in types], dtype=float).reshape(len(types), dim)
    alleles = np.array([x.allele for x in types], dtype=np.int64)
    return locations, alleles


# ---------------------------------------------------------------------------
# Projection and samplers
# ---------------------------------------------------------------------------

def project(config: Configuration) -> Counter:
    """Multiset of type points with levels discarded."""
    return Counter(config.types())


def sample_uniform_levels(types: Iterable[TypePoint], lam: float, rng: np.random.Generator,
                          time: float = 0.0) -> Configuration:
    """One particle per type point, levels i.i.d. uniform on [0, lam), fresh ids."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    locations, alleles = types_to_arrays(types)
    levels = rng.uniform(0.0, lam, size=len(alleles))
    return Configuration.from_arrays(lam, locations, alleles, levels, time=time)


@dataclass(frozen=True)
class SpatialIntensity:
    """Lebesgue-type intensity on the torus: density per unit volume and allele weights."""
    domain: Domain
    density: float = 1.0
    allele_weights: Tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.density < 0:
            raise ValueError("density must be nonnegative")
        if len(self.allele_weights) > self.domain.n_alleles:
            raise ValueError("more allele weights than alleles")

    @property
    def total(self) -> float:
        return self.density * self.domain.volume

    def allele_probabilities(self) -> np.ndarray:
        weights = np.asarray(self.allele_weights, dtype=float)
        return weights / weights.sum()


Intensity = Union[Mapping[TypePoint, float], SpatialIntensity]


def sample_conditionally_poisson(intensity: Intensity, u_max: float, rng: np.random.Generator,
                                 slab: float = LEVEL_SLAB, time: float = 0.0) -> Configuration:
    """
    Conditionally Poisson state truncated at u_max.

    Levels are generated slab by slab, [j*slab, (j+1)*slab), each slab from its
    own stream keyed by one draw of `rng`. Two calls with the same rng state and
    different caps therefore agree on every particle below the smaller cap, and
    ids are handed out in level order so those particles also share ids.
    """
    if not u_max > 0:
        raise ValueError(f"u_max must be positive, got {u_max}")
    base = int(rng.integers(0, 2 ** 63 - 1))
    n_slabs = int(math.ceil(u_max / slab))

    if isinstance(intensity, SpatialIntensity):
        dim = intensity.domain.dim
    else:
        keys = list(intensity.keys())
        dim = len(keys[0].location) if keys else 0
        if any(value < 0 for value in intensity.values()):
            raise ValueError("intensity must be nonnegative")

    loc_parts, allele_parts, level_parts = [], [], []
    for j in range(n_slabs):
        slab_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([base, j])))
        lo = j * slab
        if isinstance(intensity, SpatialIntensity):
            count = slab_rng.poisson(intensity.total * slab)
            locations = intensity.domain.uniform_locations(count, slab_rng)
            alleles = slab_rng.choice(len(intensity.allele_weights), size=count,
                                      p=intensity.allele_probabilities())
            levels = slab_rng.uniform(lo, lo + slab, size=count)
            loc_parts.append(locations)
            allele_parts.append(alleles)
            level_parts.append(levels)
        else:
            for x, rate in intensity.items():
                count = slab_rng.poisson(rate * slab)
                loc_parts.append(np.tile(np.asarray(x.location, dtype=float), (count, 1)).reshape(count, dim))
                allele_parts.append(np.full(count, x.allele, dtype=np.int64))
                level_parts.append(slab_rng.uniform(lo, lo + slab, size=count))

    if not level_parts:
        return Configuration(u_max, dim=dim, time=time)
    levels = np.concatenate(level_parts)
    locations = np.concatenate(loc_parts).reshape(len(levels), dim)
    alleles = np.concatenate(allele_parts)
    keep = levels < u_max
    levels, locations, alleles = levels[keep], locations[keep], alleles[keep]
    order = np.argsort(levels, kind="stable")
    return Configuration.from_arrays(u_max, locations[order], alleles[order], levels[order], time=time)


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------

class RampShape(str, Enum):
    QUADRATIC = "quadratic-ramp"
    INDICATOR = "indicator-ramp"


@dataclass(frozen=True)
class RampTerm:
    beta: TypeField
    shape: RampShape = RampShape.QUADRATIC


@dataclass(frozen=True)
class TestFunction:
    """
    g(x,u) = prod_terms (1 - beta(x) w(u)) with w the quadratic ramp
    (1 - u/u_g)_+^2 or the indicator ramp 1{u < u_g}.

    On [0, u_g) the indicator terms contribute the constant C(x) and the
    quadratic terms a polynomial P(w) = sum_j c_j(x) w^j, which gives the
    level integrals in closed form since int_a^{u_g} w^j du =
    u_g (1 - a/u_g)^{2j+1} / (2j+1).
    """
    __test__ = False

    u_g: float
    terms: Tuple[RampTerm, ...] = ()
    name: str = "g"

    def __post_init__(self):
        if not self.u_g > 0:
            raise ValueError("u_g must be positive")

    @classmethod
    def identity(cls, u_g: float = 1.0) -> "TestFunction":
        return cls(u_g, (), name="identity")

    @classmethod
    def single(cls, beta: TypeField, u_g: float, shape: RampShape = RampShape.QUADRATIC,
               name: str = "g") -> "TestFunction":
        return cls(u_g, (RampTerm(beta, RampShape(shape)),), name=name)

    @property
    def is_identity(self) -> bool:
        return not self.terms

    @property
    def has_indicator(self) -> bool:
        return any(term.shape == RampShape.INDICATOR for term in self.terms)

    def _structure(self, locations, alleles) -> Tuple[np.ndarray, np.ndarray]:
        n = len(alleles)
        constant = np.ones(n)
        coeffs = np.ones((n, 1))
        for term in self.terms:
            beta = np.clip(term.beta(locations, alleles), 0.0, 1.0)
            if term.shape == RampShape.INDICATOR:
                constant = constant * (1.0 - beta)
            else:
                shifted = np.zeros((n, coeffs.shape[1] + 1))
                shifted[:, :-1] += coeffs
                shifted[:, 1:] -= beta[:, None] * coeffs
                coeffs = shifted
        return constant, coeffs

    def _ramp(self, levels) -> np.ndarray:
        return np.clip(1.0 - np.asarray(levels, dtype=float) / self.u_g, 0.0, None)

    @staticmethod
    def _horner(coeffs: np.ndarray, w: np.ndarray) -> np.ndarray:
        out = np.zeros_like(w)
        for j in range(coeffs.shape[1] - 1, -1, -1):
            out = out * w + coeffs[:, j]
        return out

    def values(self, locations, alleles, levels) -> np.ndarray:
        levels = np.asarray(levels, dtype=float)
        if self.is_identity:
            return np.ones(len(levels))
        constant, coeffs = self._structure(locations, alleles)
        s = self._ramp(levels)
        below = levels < self.u_g
        return np.where(below, constant * self._horner(coeffs, s * s), 1.0)

    def du(self, locations, alleles, levels) -> np.ndarray:
        """Level derivative; only the quadratic ramp has one."""
        if self.has_indicator:
            raise UnsupportedShapeError("the indicator ramp has no level derivative")
        levels = np.asarray(levels, dtype=float)
        if self.is_identity:
            return np.zeros(len(levels))
        constant, coeffs = self._structure(locations, alleles)
        m = coeffs.shape[1]
        deriv = coeffs[:, 1:] * np.arange(1, m)[None, :] if m > 1 else np.zeros((len(levels), 1))
        s = self._ramp(levels)
        dp_dw = self._horner(deriv, s * s) if m > 1 else np.zeros(len(levels))
        dw_du = -2.0 * s / self.u_g
        return np.where(levels < self.u_g, constant * dp_dw * dw_du, 0.0)

    def tail_deficit(self, locations, alleles, a) -> np.ndarray:
        """int_a^inf (1 - g(x,u)) du."""
        a = np.broadcast_to(np.asarray(a, dtype=float), (len(alleles),))
        if self.is_identity:
            return np.zeros(len(alleles))
        constant, coeffs = self._structure(locations, alleles)
        s = np.clip(1.0 - a / self.u_g, 0.0, None)
        j = np.arange(coeffs.shape[1])
        weighted = coeffs * (s[:, None] ** (2 * j + 1)[None, :]) / (2 * j + 1)[None, :]
        return self.u_g * s - constant * self.u_g * weighted.sum(axis=1)

    def h(self, locations, alleles) -> np.ndarray:
        return self.tail_deficit(locations, alleles, 0.0)

    def gbar(self, locations, alleles, lam: float) -> np.ndarray:
        if lam < self.u_g:
            raise ValueError(f"lambda {lam} is below u_g {self.u_g}")
        return 1.0 - self.h(locations, alleles) / lam

    def integral_above(self, locations, alleles, a, lam: float) -> np.ndarray:
        """int_a^lam g(x,u) du for a <= lam."""
        a = np.asarray(a, dtype=float)
        return (lam - a) - self.tail_deficit(locations, alleles, a)

    # scalar helpers

    def g_at(self, x: TypePoint, u: float) -> float:
        locations, alleles = types_to_arrays([x])
        return float(self.values(locations, alleles, [u])[0])

    def gbar_at(self, x: TypePoint, lam: float) -> float:
        locations, alleles = types_to_arrays([x])
        return float(self.gbar(locations, alleles, lam)[0])

    def h_at(self, x: TypePoint) -> float:
        locations, alleles = types_to_arrays([x])
        return float(self.h(locations, alleles)[0])


def eval_f(config: Configuration, g: TestFunction) -> float:
    """f(eta) = product of g over particles; 1 for the empty configuration."""
    if len(config) == 0:
        return 1.0
    return float(np.prod(g.values(config.locations, config.alleles, config.levels)))


def eval_alpha_f_discrete(types: Iterable[TypePoint], g: TestFunction, lam: float) -> float:
    """Level average of f: product of gbar over the type multiset."""
    if lam < g.u_g:
        raise ValueError(f"lambda {lam} is below u_g {g.u_g}")
    locations, alleles = types_to_arrays(types)
    if len(alleles) == 0:
        return 1.0
    return float(np.prod(g.gbar(locations, alleles, lam)))


def eval_alpha_f_continuum(intensity: Intensity, g: TestFunction) -> float:
    """exp(-int h dXi) for a discrete or Lebesgue-type intensity."""
    if isinstance(intensity, SpatialIntensity):
        domain = intensity.domain
        probs = intensity.allele_probabilities()
        total = 0.0
        for allele, weight in enumerate(probs):
            if weight == 0:
                continue
            if domain.dim == 0:
                value = g.h(np.empty((1, 0)), np.array([allele]))[0]
            else:
                def integrand(*coords, allele=allele):
                    loc = np.asarray(coords, dtype=float).reshape(1, -1)
                    return float(g.h(loc, np.array([allele]))[0])
                value, _ = integrate.nquad(integrand, [[0.0, domain.side]] * domain.dim,
                                           opts={"epsabs": QUAD_TOL, "epsrel": QUAD_TOL})
            total += weight * value
        return float(math.exp(-intensity.density * total))
    items = list(intensity.items())
    if not items:
        return 1.0
    locations, alleles = types_to_arrays([x for x, _ in items])
    rates = np.array([rate for _, rate in items], dtype=float)
    return float(math.exp(-np.sum(rates * g.h(locations, alleles))))
