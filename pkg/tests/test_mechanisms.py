import sys
import os
import math
import numpy as np
import pytest
from scipy import integrate
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from utils.core import AlleleField, ConstantField, ConstantPairRate, Configuration, Domain, TestFunction, TypePoint
from utils.mechanisms import (BernoulliDrift, CompositeDrift, ContinuousBirth, ContinuousBirthParams, CopyParent,
                              DiscreteBirth, DiscreteBirthEvent, EventSink, FiniteTypeLaw, FixedCount,
                              GeometricCount, Immigration, ImmigrationSource, InstantDeath, Motion, MotionKernel,
                              MotionKind, MultipleDeathEvent, MutateAllele, PairwiseReplacement, PoissonCount,
                              PureDeath, PureDeathParams, ReplacementEvent, ReplacementVariant, Thinning,
                              ThinningEvent, apply_discrete_birth, apply_immigration, apply_motion,
                              apply_multiple_death, apply_replacement, apply_thinning, continuous_birth_drift,
                              continuous_birth_events, continuous_birth_flow, discrete_birth_transform,
                              flow_levels_pure_death, generator_apply, loo2_products, loo_products,
                              multiple_death_transform, projected_generator, pure_death_exit_times, stream)

LAM = 3.0


def _single(level, allele=0, lam=LAM):
    return Configuration.from_arrays(lam, np.empty((1, 0)), [allele], [level])


def _level_average(mechanism, g, kinks=(), lam=LAM):
    """Average of the generator over a uniform level of one particle; it vanishes above u_g."""
    value, _ = integrate.quad(lambda u: mechanism.generator(_single(u, 0, lam), g).value,
                              0.0, g.u_g, points=list(kinks) or None, epsabs=1e-12, epsrel=1e-10, limit=200)
    return value / lam


def test_leave_one_out_products():
    """Test products with one or two factors removed, zeros included"""
    assert loo_products(np.array([2.0, 3.0, 4.0])).tolist() == [12.0, 8.0, 6.0]
    assert loo_products(np.array([0.0, 3.0, 4.0])).tolist() == [12.0, 0.0, 0.0]
    pairs = loo2_products(np.array([2.0, 3.0, 5.0]))
    assert pairs[0, 1] == pytest.approx(5.0)
    assert pairs[1, 2] == pytest.approx(2.0)
    zero = loo2_products(np.array([0.0, 3.0, 5.0]))
    assert zero[0, 1] == pytest.approx(5.0)
    assert zero[1, 2] == 0.0


def test_continuous_birth_drift_limits():
    """Test that the drift vanishes at 0 and lambda and tends to -k u"""
    assert continuous_birth_drift(0.0, 2, 5.0) == pytest.approx(0.0)
    assert continuous_birth_drift(5.0, 2, 5.0) == pytest.approx(0.0)
    assert continuous_birth_drift(2.0, 2, 5.0) < 0
    assert abs(continuous_birth_drift(1.0, 2, 1000.0) + 2.0) <= 3.0 / 1000.0


def test_bernoulli_flow_matches_ode_solver():
    """Test the closed-form continuous birth flow against numerical integration"""
    drift = BernoulliDrift(ConstantField(1.5), 2)
    locations, alleles = np.empty((3, 0)), np.zeros(3, dtype=int)
    levels = np.array([0.1, 1.0, 2.5])
    exact = drift.flow(locations, alleles, levels, LAM, 0.4)
    numeric = CompositeDrift((drift,)).flow(locations, alleles, levels, LAM, 0.4)
    assert exact == pytest.approx(numeric, rel=1e-7)
    assert np.all(exact < levels)


def test_pure_death_flow_and_exit():
    """Test exponential level growth and removal at lambda"""
    params = PureDeathParams(ConstantField(1.0))
    config = Configuration.from_arrays(1.0, np.empty((2, 0)), [0, 0], [0.1, 0.5])
    after = flow_levels_pure_death(config, params, 1.0)
    assert after.ids.tolist() == [0]
    assert after.levels[0] == pytest.approx(0.1 * math.e)
    assert after.time == 1.0
    assert len(config) == 2
    assert pure_death_exit_times(config, params) == pytest.approx([math.log(10.0), math.log(2.0)])


def test_multiple_death_kills_first_to_reach_lambda():
    """Test that the k particles closest to lambda in time die and the rest rescale"""
    config = Configuration.from_arrays(8.0, np.empty((3, 0)), [0, 0, 0], [1.0, 2.0, 4.0])
    after = apply_multiple_death(config, MultipleDeathEvent(1, ConstantField(1.0), 1.0))
    assert after.ids.tolist() == [0, 1]
    assert after.levels == pytest.approx([2.0, 4.0])


def test_discrete_birth_parent_race():
    """Test parent choice, level map and offspring levels of a discrete birth"""
    config = Configuration.from_arrays(4.0, np.empty((2, 0)), [0, 1], [1.0, 3.0])
    sink = EventSink()
    parent = discrete_birth_transform(config, np.array([1.0, 1.0]), np.array([3.5, 2.5]), CopyParent(),
                                      np.random.default_rng(0), 0.0, sink, "discrete-birth")
    assert parent == 1
    assert config.ids.tolist() == [0, 1, 2]
    assert config.levels == pytest.approx([1.5, 2.5, 3.5])
    assert config.alleles.tolist() == [0, 1, 1]
    record = sink.lineage[0]
    assert (record.child_id, record.parent_id) == (2, 1)


def test_replacement_copies_lowest_member():
    """Test that a fixed-k replacement copies the lowest level's type onto the set"""
    config = Configuration.from_arrays(LAM, np.empty((2, 0)), [1, 0], [2.0, 0.5])
    event = ReplacementEvent(ReplacementVariant.FIXED_K, rate=1.0, k=2)
    after = apply_replacement(config, event, np.random.default_rng(0))
    assert after.alleles.tolist() == [0, 0]
    assert after.levels.tolist() == [2.0, 0.5]


def test_thinning_rescales_and_removes():
    """Test that thinning with p = 1/2 doubles levels and drops those reaching lambda"""
    config = Configuration.from_arrays(LAM, np.empty((2, 0)), [0, 1], [0.3 * LAM, 0.6 * LAM])
    after = apply_thinning(config, ThinningEvent(ConstantField(0.5), 1.0))
    assert after.ids.tolist() == [0]
    assert after.levels == pytest.approx([0.6 * LAM])
    assert len(config) == 2


def test_births_with_zero_rate_change_nothing():
    """Test that r = 0 leaves the configuration as it was for both birth mechanisms"""
    config = Configuration.from_arrays(LAM, np.empty((3, 0)), [0, 1, 0], [0.2, 1.1, 2.5])
    rng = np.random.default_rng(4)
    zero = ConstantField(0.0)

    continuous = continuous_birth_events(config, ContinuousBirthParams(1, zero), 2.0, rng)
    assert continuous.ids.tolist() == config.ids.tolist()
    assert continuous.levels.tolist() == config.levels.tolist()
    assert continuous.alleles.tolist() == config.alleles.tolist()
    assert continuous.time == 2.0

    discrete = apply_discrete_birth(config, DiscreteBirthEvent(FixedCount(2), zero), rng)
    assert discrete == config


def test_immigration_adds_one_particle():
    """Test that an arrival adds exactly one particle of the source type below lambda"""
    config = _single(1.0)
    source = ImmigrationSource(1.0, FiniteTypeLaw((TypePoint((), 2),), (1.0,)))
    sink = EventSink()
    after = apply_immigration(config, source, np.random.default_rng(5), sink)
    assert len(after) == 2
    assert after.ids.tolist() == [0, 1]
    assert after.alleles.tolist() == [0, 2]
    assert 0.0 <= after.levels[1] < LAM
    assert after.levels[0] == 1.0


def test_motion_none_is_identity():
    """Test that a kernel without motion leaves types and levels alone"""
    config = Configuration.from_arrays(LAM, np.empty((3, 0)), [0, 1, 1], [0.5, 1.0, 2.0])
    after = apply_motion(config, MotionKernel(), 1.5, np.random.default_rng(6))
    assert after == config


def test_discrete_birth_parent_frequency():
    """Test that the parent is chosen with probability proportional to r"""
    rng = np.random.default_rng(7)
    event = DiscreteBirthEvent(FixedCount(2), AlleleField((1.0, 3.0)))
    draws = 10_000
    low_parent = 0
    for _ in range(draws):
        config = Configuration.from_arrays(LAM, np.empty((2, 0)), [0, 1], rng.uniform(0.0, LAM, size=2))
        after = apply_discrete_birth(config, event, rng)
        low_parent += int(after.alleles[-1] == 0)
    assert low_parent / draws == pytest.approx(0.25, abs=0.02)


def test_multiple_death_survivors_stay_below_lambda():
    """Test that rescaled survivors never land on lambda"""
    config = Configuration.from_arrays(8.0, np.empty((2, 0)), [0, 0], [1.0, 1.0])
    d1 = np.array([1.0, np.nextafter(1.0, 0.0)])
    removed, tau = multiple_death_transform(config, 1, d1)
    assert 0 in removed.tolist()
    assert tau == pytest.approx(math.log(8.0))
    assert np.all(config.levels < 8.0)


def test_parameter_blocks_validate():
    """Test rejection of invalid mechanism parameters"""
    with pytest.raises(ValueError):
        ThinningEvent(ConstantField(1.0), 1.0)
    with pytest.raises(ValueError):
        ContinuousBirthParams(0, ConstantField(1.0))
    with pytest.raises(ValueError):
        ReplacementEvent(ReplacementVariant.BERNOULLI)
    with pytest.raises(ValueError):
        MultipleDeathEvent(0, ConstantField(1.0), 1.0)


def test_offspring_generating_functions():
    """Test means and generating functions of the offspring laws"""
    assert FixedCount(3).pgf(0.5) == pytest.approx(0.125)
    assert PoissonCount(2.0).p0 == pytest.approx(math.exp(-2.0))
    geometric = GeometricCount(1.0)
    assert geometric.pgf(1.0) == pytest.approx(1.0)
    draws = [geometric.sample(np.random.default_rng(i)) for i in range(2000)]
    assert abs(np.mean(draws) - 1.0) < 0.15


def test_mutation_kernel_expectation():
    """Test the closed-form expectation of the mutation kernel"""
    kernel = MutateAllele(0.3, 2)
    fn = lambda L, A: np.where(np.asarray(A) == 0, 0.5, 1.0)
    value = kernel.expected_product(np.empty(0), 0, np.empty((2, 0)), fn)
    assert value == pytest.approx((0.7 * 0.5 + 0.3) ** 2)


def test_pure_death_generator_single_particle():
    """Test d0 u g'(u) on one particle"""
    g = TestFunction.single(ConstantField(0.5), 1.0)
    mechanism = PureDeath(PureDeathParams(ConstantField(2.0)))
    value = generator_apply(mechanism, _single(0.5), g)
    assert value.method == "analytic"
    assert value.value == pytest.approx(0.5)


def test_identity_test_function_has_zero_generator():
    """Test that f = 1 is annihilated"""
    mechanism = InstantDeath(PureDeathParams(ConstantField(1.0)))
    assert generator_apply(mechanism, _single(0.5), TestFunction.identity()).value == 0.0
    assert projected_generator(mechanism, [TypePoint()], TestFunction.identity(), LAM) == 0.0


@pytest.mark.parametrize("mechanism, kinks", [
    (PureDeath(PureDeathParams(ConstantField(2.0))), ()),
    (InstantDeath(PureDeathParams(ConstantField(2.0))), ()),
    (ContinuousBirth(ContinuousBirthParams(1, ConstantField(0.7))), ()),
    (ContinuousBirth(ContinuousBirthParams(3, ConstantField(0.7))), ()),
    (Thinning([ThinningEvent(ConstantField(0.4), 1.5)]), (0.6,)),
])
def test_level_average_of_generator(mechanism, kinks):
    """Test that averaging A f over a uniform level gives the projected generator"""
    g = TestFunction.single(ConstantField(0.6), 1.0)
    expected = projected_generator(mechanism, [TypePoint()], g, LAM)
    assert _level_average(mechanism, g, kinks) == pytest.approx(expected, rel=1e-4, abs=1e-8)


def test_continuous_birth_projection_formula():
    """Test r (gbar^(k+1) - gbar) times the other factors"""
    g = TestFunction.single(AlleleField((0.6, 0.3)), 1.0)
    types = [TypePoint((), 0), TypePoint((), 1)]
    mechanism = ContinuousBirth(ContinuousBirthParams(2, ConstantField(1.0)))
    b0, b1 = 1.0 - 0.2 / LAM, 1.0 - 0.1 / LAM
    expected = (b0 ** 3 - b0) * b1 + (b1 ** 3 - b1) * b0
    assert projected_generator(mechanism, types, g, LAM) == pytest.approx(expected)


def test_pairwise_generator_copy_parent():
    """Test gamma (g(x*, u_hi) g(x*, u_lo) - g g) on one pair"""
    g = TestFunction.single(AlleleField((0.0, 0.5)), 1.0)
    config = Configuration.from_arrays(LAM, np.empty((2, 0)), [0, 1], [0.2, 0.5])
    mechanism = PairwiseReplacement(ConstantPairRate(2.0))
    assert generator_apply(mechanism, config, g).value == pytest.approx(2.0 * (1.0 - 0.875))


def test_immigration_generator():
    """Test f times the arrival rate times (E gbar - 1)"""
    g = TestFunction.single(ConstantField(0.6), 1.0)
    source = ImmigrationSource(2.0, FiniteTypeLaw((TypePoint(),), (1.0,)))
    mechanism = Immigration([source])
    config = _single(0.5)
    expected = 0.85 * 2.0 * (-0.2 / LAM)
    assert generator_apply(mechanism, config, g).value == pytest.approx(expected)


def test_mutation_motion_generator():
    """Test the allele-flip generator against the rate matrix"""
    g = TestFunction.single(AlleleField((0.6, 0.0)), 1.0)
    kernel = MotionKernel(MotionKind.MUTATION, Domain(n_alleles=2), mutation_rates=((0.0, 1.0), (0.5, 0.0)))
    mechanism = Motion(kernel)
    value = generator_apply(mechanism, _single(0.0, allele=0), g).value
    assert value == pytest.approx(1.0 * (1.0 - 0.4))


def test_streams_are_reproducible():
    """Test that keyed streams repeat and differ across keys"""
    a = stream(7, 0, 2, 1).random(4)
    b = stream(7, 0, 2, 1).random(4)
    c = stream(7, 1, 2, 1).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_continuous_birth_flow_keeps_levels_inside():
    """Test that the flow keeps levels in [0, lambda) and advances time"""
    config = Configuration.from_arrays(LAM, np.empty((3, 0)), [0, 0, 0], [0.0, 1.0, 2.999])
    after = continuous_birth_flow(config, ContinuousBirthParams(2, ConstantField(1.0)), 0.5)
    assert np.all((after.levels >= 0) & (after.levels < LAM))
    assert after.levels[0] == pytest.approx(0.0)
    assert after.time == 0.5


def test_discrete_birth_projected_generator_fixed_offspring():
    """Test the projected discrete birth with one offspring per event"""
    g = TestFunction.single(ConstantField(0.6), 1.0)
    event = DiscreteBirthEvent(FixedCount(2), ConstantField(1.0), rate=1.5)
    mechanism = DiscreteBirth([event])
    gbar = 1.0 - 0.2 / LAM
    value = projected_generator(mechanism, [TypePoint()], g, LAM)
    assert value == pytest.approx(1.5 * (gbar ** 2 - gbar))
