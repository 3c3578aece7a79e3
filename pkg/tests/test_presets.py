import sys
import os
import numpy as np
import pytest
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from utils.core import Domain
from utils.engine import run
from utils.presets import (PRESET_BUILDERS, OffspringRule, SLFVAtom, SLFVEventLaw, SLFVSecondEvents,
                           build_preset, preset_branching, preset_moran, preset_slfv_first,
                           preset_slfv_second, preset_voter, slfv_density_jump, validate_slfv_law)

DOMAIN = Domain(dim=1, side=1.0, n_alleles=2)


def _law(offspring=OffspringRule.ONE_FOR_ONE, fixed_count=None):
    return SLFVEventLaw(atoms=(SLFVAtom(radius=0.1, weight=2.0, impacts=((0.5, 1.0),)),),
                        offspring=offspring, fixed_count=fixed_count)


def test_atom_validation():
    """Test rejection of malformed SLFV atoms"""
    with pytest.raises(ValueError):
        SLFVAtom(radius=0.0, weight=1.0)
    with pytest.raises(ValueError):
        SLFVAtom(radius=0.1, weight=1.0, impacts=((1.0, 1.0),))
    with pytest.raises(ValueError):
        SLFVAtom(radius=0.1, weight=1.0, impacts=((0.5, 0.6),))


def test_law_diagnostics():
    """Test the finiteness integrals of a one-atom law"""
    diagnostics = validate_slfv_law(_law(), dim=1)
    assert diagnostics.flreq1 == 0.0
    assert diagnostics.flreq1b == pytest.approx(2.0 * 0.5 * 0.01)
    assert diagnostics.flreq2 == pytest.approx(2.0 * 0.5 * 0.1)
    assert all(diagnostics.finite.values())
    with pytest.raises(ValueError):
        validate_slfv_law(_law(), dim=0)


def test_density_jump():
    """Test the density change inside one event ball"""
    assert slfv_density_jump(1.0, 0.5, 2.0, 1.0) == pytest.approx(0.5)


def test_second_construction_offspring_rules():
    """Test the offspring-law checks of the second construction"""
    with pytest.raises(ValueError):
        SLFVSecondEvents(DOMAIN, _law(), 10.0)
    with pytest.raises(ValueError):
        SLFVSecondEvents(DOMAIN, _law(OffspringRule.FIXED, fixed_count=3), 10.0)
    # lambda * zeta / (1 - zeta) * |ball| = 10 * 1 * 0.2
    mechanism = SLFVSecondEvents(DOMAIN, _law(OffspringRule.FIXED, fixed_count=2), 10.0)
    assert mechanism.offspring_mean(0.1, 0.5) == pytest.approx(2.0)


def test_first_construction_conserves_particles():
    """Test that first-construction events never change the count"""
    trajectory = run(preset_slfv_first(DOMAIN, _law(), u_max=10.0, t_end=1.0, snapshot_times=(0.5,), seed=2))
    sizes = {len(config) for _, config in trajectory.snapshots}
    assert len(sizes) == 1
    trajectory.final.assert_valid()


def test_second_construction_runs():
    """Test a short second-construction run keeps a valid state"""
    spec = preset_slfv_second(DOMAIN, _law(OffspringRule.POISSON), lam=10.0, t_end=0.5, seed=1)
    final = run(spec).final
    final.assert_valid()
    assert np.all(final.levels < 10.0)


def test_voter_lattice():
    """Test one particle per site and location exchange"""
    spec = preset_voter(lattice_size=4, dim=2, t_end=1.0, seed=3)
    trajectory = run(spec)
    final = trajectory.final
    assert len(final) == 16
    sites = sorted(map(tuple, final.locations.tolist()))
    assert sites == sorted((float(i), float(j)) for i in range(4) for j in range(4))
    with pytest.raises(ValueError):
        preset_voter(lattice_size=4, alleles=[0, 1])
    with pytest.raises(ValueError):
        preset_voter(lattice_size=1)


def test_branching_presets():
    """Test the critical variant adds the compensating level flow"""
    assert len(preset_branching().mechanisms) == 1
    critical = preset_branching(critical=True, r=0.5, k=2)
    assert [m.kind for m in critical.mechanisms] == ["continuous-birth", "pure-death"]
    with pytest.raises(ValueError):
        preset_branching(k=0)


def test_moran_validation():
    """Test the minimum population of the Moran preset"""
    with pytest.raises(ValueError):
        preset_moran(N=1)
    spec = preset_moran(N=4, domain=Domain(dim=1, side=1.0, n_alleles=2), seed=1)
    assert len(spec.initial.types) == 4


def test_build_preset_by_name():
    """Test the named builders and the unknown-name error"""
    assert sorted(PRESET_BUILDERS) == ["branching", "moran", "pure-death", "slfv-first", "slfv-second", "voter"]
    spec = build_preset("moran", {"N": 10, "mutation": 0.1}, t_end=0.5, seed=4)
    assert spec.name == "moran"
    assert spec.t_end == 0.5
    law = {"atoms": [{"radius": 0.1, "weight": 1.0}], "domain": {"dim": 1}}
    assert build_preset("slfv-first", dict(law, u_max=5.0)).lam == 5.0
    with pytest.raises(ValueError):
        build_preset("wright-fisher", {})
