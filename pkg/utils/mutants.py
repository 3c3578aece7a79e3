"""
Adversarial Mutants

One deliberately broken variant per mechanism. Each keeps the projected
population dynamics plausible but mishandles levels, so the conditional
uniformity test must reject it. The uniformity suite runs every real
mechanism next to its mutant and expects exactly the mutant to fail.
"""
import logging
import math
from typing import Dict

import numpy as np

from utils.core import TypeField
from utils.mechanisms import (ContinuousBirth, DiscreteBirth, Immigration, LevelDrift, Mechanism,
                              Motion, MultipleDeath, PureDeath, Replacement, Thinning, _tile,
                              replace_subset)

logger = logging.getLogger(__name__)


class ShiftedDrift(LevelDrift):
    """u' = d0(x) (u + shift): the exponential flow translated away from zero."""

    def __init__(self, rate: TypeField, shift: float):
        self.rate = rate
        self.shift = shift

    def velocity(self, locations, alleles, levels, lam):
        return self.rate(locations, alleles) * (levels + self.shift)

    def flow(self, locations, alleles, levels, lam, dt):
        growth = np.exp(self.rate(locations, alleles) * dt)
        return (levels + self.shift) * growth - self.shift

    def exit_times(self, locations, alleles, levels, lam):
        d0 = self.rate(locations, alleles)
        out = np.full(len(levels), math.inf)
        moving = d0 > 0
        out[moving] = np.log((lam + self.shift) / (levels[moving] + self.shift)) / d0[moving]
        return out


class ShiftedDeath(PureDeath):
    kind = "mutant-pure-death"

    def drift(self):
        return ShiftedDrift(self.params_block.d0, 0.25)


class LowestMultipleDeath(MultipleDeath):
    """Kills the k lowest exposed levels and leaves the survivors where they are."""
    kind = "mutant-multiple-death"

    def _apply(self, config, now, sink):
        event = self._pick()
        exposed = np.flatnonzero(event.d1(config.locations, config.alleles) > 0)
        if exposed.size == 0:
            return False
        victims = exposed[np.argsort(config.levels[exposed], kind="stable")[:event.k_d]]
        removed = config.remove_rows(np.sort(victims))
        sink.event(now, self.label, removed.tolist())
        return True


class LowLevelBirth(DiscreteBirth):
    """Offspring of a uniformly chosen parent land in the bottom tenth of the levels."""
    kind = "mutant-discrete-birth"

    def _transform(self, config, event, rng, now, sink):
        k = event.offspring.sample(rng)
        if k <= 0 or len(config) == 0:
            return False
        row = int(rng.integers(len(config)))
        levels = rng.uniform(0.0, 0.1 * config.lam, size=k)
        locs, alleles = _tile(config.locations[row], config.alleles[row], k)
        new_ids = config.add_many(locs, alleles, levels, birth_time=now)
        if sink is not None:
            sink.event(now, self.label, [int(config.ids[row]), *new_ids.tolist()])
        return True


class StillContinuousBirth(ContinuousBirth):
    """Continuous birth without the compensating level drift."""
    kind = "mutant-continuous-birth"

    def drift(self):
        return None


class RelevellingReplacement(Replacement):
    """Replaced members are re-levelled below their parent."""
    kind = "mutant-replacement"
    preserves_levels = False
    jumps_levels = True

    def _apply(self, config, now, sink):
        event = self.pick(config)
        rows = self.select(config, event, self.rng)
        if rows.size < 2:
            return False
        replace_subset(config, rows, event.q, self.rng, now, sink, self.label)
        rows = rows[np.argsort(config.levels[rows], kind="stable")]
        parent_level = float(config.levels[rows[0]])
        config.levels[rows[1:]] = self.rng.uniform(0.0, parent_level, size=rows.size - 1)
        config.mark_levels_changed()
        return True


class LowestThinning(Thinning):
    """Removes as many particles as the thinning would, but always the lowest levels."""
    kind = "mutant-thinning"

    def _apply(self, config, now, sink):
        event = self.events[int(self.rng.choice(len(self.events), p=self.weights / self.weights.sum()))]
        p = event.p(config.locations, config.alleles)
        n_dead = int(np.sum(self.rng.random(len(p)) < p))
        if n_dead == 0:
            return False
        victims = np.argsort(config.levels, kind="stable")[:n_dead]
        removed = config.remove_rows(np.sort(victims))
        sink.event(now, self.label, removed.tolist())
        return True


class LowLevelImmigration(Immigration):
    """Immigrants enter in the bottom tenth of the levels."""
    kind = "mutant-immigration"

    def _apply(self, config, now, sink):
        source = self.sources[int(self.rng.choice(len(self.sources), p=self.weights / self.weights.sum()))]
        locations, alleles = source.type_law.sample(1, self.rng)
        level = float(self.rng.uniform(0.0, 0.1 * config.lam))
        pid = config.add(locations[0], int(alleles[0]), level, birth_time=now)
        sink.event(now, self.label, [pid])
        return True


class ShrinkingMotion(Motion):
    """Type motion that also contracts every level by e^{-dt}."""
    kind = "mutant-motion"
    preserves_levels = False

    def advance(self, config, dt):
        super().advance(config, dt)
        if dt > 0 and len(config):
            config.levels[:] = config.levels * math.exp(-dt)
            config.mark_levels_changed()


MUTANT_CLASSES: Dict[type, type] = {
    PureDeath: ShiftedDeath,
    MultipleDeath: LowestMultipleDeath,
    DiscreteBirth: LowLevelBirth,
    ContinuousBirth: StillContinuousBirth,
    Replacement: RelevellingReplacement,
    Thinning: LowestThinning,
    Immigration: LowLevelImmigration,
    Motion: ShrinkingMotion,
}


def mutant_of(mechanism: Mechanism) -> Mechanism:
    """Broken twin of `mechanism`, sharing its parameters."""
    for base, mutant in MUTANT_CLASSES.items():
        if type(mechanism) is base:
            twin = mutant.__new__(mutant)
            twin.__dict__.update(mechanism.__dict__)
            twin.label = mutant.kind
            return twin
    raise ValueError(f"no mutant registered for {type(mechanism).__name__}")

