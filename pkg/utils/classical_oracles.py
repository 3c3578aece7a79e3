"""
Classical Oracles

Minimal direct simulators of the projected population models, used as the
reference side of the projection tests. Each one runs exponential clocks on
counts or on explicit individuals and shares no code with the lookdown
mechanisms. States are reported as Counters of TypePoint so they compare
directly with the projection of a lookdown configuration.
"""
import logging
import math
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from utils.core import LookdownError, TypePoint

logger = logging.getLogger(__name__)


class OracleMissingError(LookdownError):
    """Raised when no classical simulator is registered for a model."""


def _counts_state(counts: Dict[int, int]) -> Counter:
    return Counter({TypePoint((), allele): n for allele, n in counts.items() if n > 0})


class ClassicalOracle(ABC):
    name = "oracle"

    @abstractmethod
    def simulate(self, times: Sequence[float], rng: np.random.Generator) -> List[Counter]:
        """Type multisets at each of the (sorted) observation times."""


@dataclass
class DeathChainOracle(ClassicalOracle):
    """Independent exponential lifetimes with per-allele rates."""
    initial: Dict[int, int]
    rates: Dict[int, float]
    name = "death-chain"

    def lifetimes(self, rng: np.random.Generator) -> Dict[int, np.ndarray]:
        return {allele: rng.exponential(1.0 / self.rates[allele], size=n) if self.rates[allele] > 0
                else np.full(n, math.inf)
                for allele, n in sorted(self.initial.items())}

    def simulate(self, times, rng):
        lives = self.lifetimes(rng)
        return [_counts_state({allele: int(np.sum(life > t)) for allele, life in lives.items()})
                for t in times]


@dataclass
class MoranOracle(ClassicalOracle):
    """
    Classical Moran chain on allele counts: every unordered pair meets at
    rate gamma and one of the two, chosen with probability 1/2, copies the
    other. Only pairs of different alleles change the state.
    """
    initial: Dict[int, int]
    gamma: float
    name = "moran"

    def simulate(self, times, rng):
        alleles = sorted(self.initial)
        counts = np.array([self.initial[a] for a in alleles], dtype=np.int64)
        out = []
        t = 0.0
        for target in times:
            while True:
                pairs = np.outer(counts, counts).astype(float)
                np.fill_diagonal(pairs, 0.0)
                total = self.gamma * pairs.sum() / 2.0
                if total <= 0:
                    break
                wait = rng.exponential(1.0 / total)
                if t + wait > target:
                    break
                t += wait
                # ordered (copier, source) pair of distinct alleles
                flat = int(rng.choice(pairs.size, p=(pairs / pairs.sum()).ravel()))
                copier, source = divmod(flat, len(alleles))
                counts[copier] -= 1
                counts[source] += 1
            # memoryless clocks: restarting the wait at the target is exact
            t = target
            out.append(_counts_state(dict(zip(alleles, counts.tolist()))))
        return out


@dataclass
class BranchingOracle(ClassicalOracle):
    """Each individual splits into 1 + k at rate r and dies at rate d."""
    initial: Dict[int, int]
    r: float
    k: int
    d: float = 0.0
    name = "branching"

    def simulate(self, times, rng):
        alleles = sorted(self.initial)
        counts = np.array([self.initial[a] for a in alleles], dtype=np.int64)
        out = []
        t = 0.0
        per_capita = self.r + self.d
        for target in times:
            while counts.sum() > 0 and per_capita > 0:
                total = per_capita * counts.sum()
                wait = rng.exponential(1.0 / total)
                if t + wait > target:
                    break
                t += wait
                who = int(rng.choice(len(alleles), p=counts / counts.sum()))
                if rng.random() * per_capita < self.r:
                    counts[who] += self.k
                else:
                    counts[who] -= 1
            t = target
            out.append(_counts_state(dict(zip(alleles, counts.tolist()))))
        return out

    def mean(self, n0: int, t: float) -> float:
        return n0 * math.exp((self.r * self.k - self.d) * t)


@dataclass
class ArrivalOracle(ClassicalOracle):
    """Poisson arrival counter with i.i.d. arrival types on top of a fixed start."""
    initial: Dict[int, int]
    rate: float
    alleles: Tuple[int, ...] = (0,)
    weights: Tuple[float, ...] = (1.0,)
    name = "arrivals"

    def simulate(self, times, rng):
        counts = Counter(self.initial)
        probs = np.asarray(self.weights, dtype=float)
        probs = probs / probs.sum()
        out = []
        t = 0.0
        for target in times:
            while self.rate > 0:
                wait = rng.exponential(1.0 / self.rate)
                if t + wait > target:
                    break
                t += wait
                counts[self.alleles[int(rng.choice(len(probs), p=probs))]] += 1
            t = target
            out.append(_counts_state(counts))
        return out


@dataclass
class CullingOracle(ClassicalOracle):
    """At rate `rate` every individual is killed independently with probability p."""
    initial: Dict[int, int]
    rate: float
    p: float
    name = "culling"

    def simulate(self, times, rng):
        counts = dict(self.initial)
        out = []
        t = 0.0
        for target in times:
            while self.rate > 0:
                wait = rng.exponential(1.0 / self.rate)
                if t + wait > target:
                    break
                t += wait
                counts = {a: int(rng.binomial(n, 1.0 - self.p)) for a, n in counts.items()}
            t = target
            out.append(_counts_state(counts))
        return out


@dataclass
class VoterOracle(ClassicalOracle):
    """
    Voter model on a periodic lattice: each unordered pair of sites at
    lattice distance k meets at rates[k-1]; one site, chosen with probability
    1/2, adopts the other's allele.
    """
    sites: Tuple[Tuple[float, ...], ...]
    alleles: Tuple[int, ...]
    rates: Tuple[float, ...]
    side: float

    name = "voter"

    def pair_table(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        points = np.asarray(self.sites, dtype=float)
        n = len(points)
        iu, ju = np.triu_indices(n, 1)
        half = 0.5 * self.side
        delta = np.mod(points[ju] - points[iu] + half, self.side) - half
        steps = np.rint(np.abs(delta).sum(axis=1)).astype(np.int64)
        table = np.concatenate([[0.0], np.asarray(self.rates, dtype=float)])
        rates = np.where((steps >= 1) & (steps <= len(self.rates)),
                         table[np.clip(steps, 0, len(self.rates))], 0.0)
        keep = rates > 0
        return iu[keep], ju[keep], rates[keep]

    def simulate(self, times, rng):
        iu, ju, rates = self.pair_table()
        total = float(rates.sum())
        state = np.asarray(self.alleles, dtype=np.int64).copy()
        out = []
        t = 0.0
        for target in times:
            while total > 0:
                wait = rng.exponential(1.0 / total)
                if t + wait > target:
                    break
                t += wait
                pick = int(rng.choice(len(rates), p=rates / total))
                a, b = int(iu[pick]), int(ju[pick])
                if rng.random() < 0.5:
                    state[b] = state[a]
                else:
                    state[a] = state[b]
            t = target
            out.append(Counter(TypePoint(tuple(site), int(allele))
                               for site, allele in zip(self.sites, state.tolist())))
        return out


def kingman_pair_times(n: int, gamma: float, rng: np.random.Generator) -> np.ndarray:
    """
    Pairwise coalescence times of an n-sample under the Kingman coalescent
    with pair rate gamma (flattened upper triangle, sample order).
    """
    if n < 2:
        return np.empty(0)
    blocks = [[i] for i in range(n)]
    times = np.zeros((n, n))
    t = 0.0
    while len(blocks) > 1:
        m = len(blocks)
        t += rng.exponential(1.0 / (gamma * m * (m - 1) / 2.0))
        a, b = sorted(rng.choice(m, size=2, replace=False).tolist())
        for i in blocks[a]:
            for j in blocks[b]:
                times[i, j] = times[j, i] = t
        blocks[a] = blocks[a] + blocks.pop(b)
    iu, ju = np.triu_indices(n, 1)
    return times[iu, ju]


def oracle_for(spec) -> ClassicalOracle:
    """Oracle matching a preset ModelSpec, from its name and params."""
    params = spec.params
    if spec.name == "pure-death":
        counts = Counter(x.allele for x in spec.initial.types)
        rate = float(params["d0"])
        return DeathChainOracle(dict(counts), {a: rate for a in counts})
    if spec.name == "moran" and not params.get("same_site"):
        if spec.initial.types:
            return MoranOracle(dict(Counter(x.allele for x in spec.initial.types)), float(params["gamma"]))
    if spec.name == "branching":
        counts = Counter(x.allele for x in spec.initial.types)
        r, k = float(params["r"]) * params.get("scale", 1.0), int(params["k"])
        return BranchingOracle(dict(counts), r, k, r * k if params.get("critical") else 0.0)
    if spec.name == "voter":
        types = spec.initial.types
        return VoterOracle(tuple(x.location for x in types), tuple(x.allele for x in types),
                           tuple(params["rates"]), float(params["lattice_size"]))
    raise OracleMissingError(f"no classical oracle registered for '{spec.name}'")
