"""
Verification Suites

Named collections of checks run by `main.py verify`. Each suite takes a
SuiteSettings and returns TestReports; `run_suite("all", ...)` runs every
suite in order. With `adversarial` set, the uniformity suite puts each
mechanism's broken twin in place of the real one and every other suite
appends a control run of the broken thinning, so a correct harness fails.
"""
import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from config import SIGMA, SIGNIFICANCE, SUITE_DEFAULT_REPS
from utils.classical_oracles import ArrivalOracle, CullingOracle, MoranOracle, oracle_for
from utils.core import (AlleleField, Configuration, ConstantField, ConstantPairRate, Domain, RampTerm,
                        TestFunction, TypePoint)
from utils.engine import InitialState, ModelSpec, run, run_replicates
from utils.genealogy import AncestryTree, ancestor_index, ancestor_level, coalescence_statistics, extract_tree
from utils.mechanisms import (ContinuousBirth, ContinuousBirthParams, DiscreteBirth, DiscreteBirthEvent,
                              FiniteTypeLaw, FixedCount, Immigration, ImmigrationSource, InstantDeath,
                              Mechanism, Motion, MotionKernel, MotionKind, MultipleDeath, MultipleDeathEvent,
                              PairwiseReplacement, PureDeath, PureDeathParams, Replacement, ReplacementEvent,
                              ReplacementVariant, Thinning, ThinningEvent, stream)
from utils.mutants import mutant_of
from utils.poisson_oracle import default_specs, run_identity_checks
from utils.presets import (OffspringRule, SLFVAtom, SLFVEventLaw, SLFVFirstEvents, preset_branching,
                           preset_moran, preset_pure_death, preset_slfv_first, preset_slfv_second,
                           preset_voter)
from utils.stats import (TestReport, allele_count, allele_frequency, averaging_identity_check,
                         branching_mean_check, continuum_death_check, drift_convergence,
                         exponential_lifetimes_check, forward_generator_check, heterozygosity_decay,
                         ks_uniform_levels, lambda_convergence_study, level_map_convergence,
                         pair_disagreement, projection_equivalence, restriction_check,
                         slfv_density_check, slfv_involvement_check, slfv_pair_check, total_count)

logger = logging.getLogger(__name__)

IDENTITY_STREAM_TAG = 5
SUBSAMPLE_STREAM_TAG = 6

TWO_ALLELES = (TypePoint((), 0), TypePoint((), 1))


@dataclass
class SuiteSettings:
    """Knobs shared by all suites; reps=None means the per-suite default."""
    reps: Optional[int] = None
    seed: int = 0
    workers: int = 1
    adversarial: bool = False
    tolerance: float = 0.05
    delta: float = 1e-3
    times: Tuple[float, ...] = (0.25, 0.5, 1.0)
    lams: Tuple[float, ...] = (10.0, 20.0, 40.0, 80.0)
    restriction_runs: int = 50
    subsample_runs: int = 100

    def reps_for(self, suite: str) -> int:
        return int(self.reps) if self.reps else SUITE_DEFAULT_REPS[suite]


# ---------------------------------------------------------------------------
# Shared fixtures
# ---------------------------------------------------------------------------

def _two_allele_types(n: int) -> List[TypePoint]:
    return [TWO_ALLELES[i % 2] for i in range(n)]


def isolated_mechanisms() -> Dict[str, Callable[[], Mechanism]]:
    """One factory per mechanism family, parameters sized for a 50-particle start at lambda 10."""
    return {
        "pure-death": lambda: PureDeath(PureDeathParams(AlleleField((0.5, 1.0)))),
        "multiple-death": lambda: MultipleDeath([MultipleDeathEvent(2, AlleleField((1.0, 0.5)), 3.0)]),
        "discrete-birth": lambda: DiscreteBirth([DiscreteBirthEvent(FixedCount(2), AlleleField((1.0, 2.0)),
                                                                    rate=2.0)]),
        "continuous-birth": lambda: ContinuousBirth(ContinuousBirthParams(2, ConstantField(0.5))),
        "replacement": lambda: Replacement([ReplacementEvent(ReplacementVariant.FIXED_K, rate=5.0, k=3)]),
        "thinning": lambda: Thinning([ThinningEvent(ConstantField(0.3), 2.0)]),
        "immigration": lambda: Immigration([ImmigrationSource(20.0, FiniteTypeLaw(TWO_ALLELES, (1.0, 1.0)))]),
        "motion": lambda: Motion(MotionKernel(MotionKind.MUTATION, mutation_rates=((0.0, 1.0), (0.5, 0.0)))),
    }


def isolated_spec(name: str, mechanism: Mechanism, seed: int = 0, n: int = 50,
                  lam: float = 10.0, t_end: float = 1.0) -> ModelSpec:
    return ModelSpec(initial=InitialState.uniform_levels(_two_allele_types(n)), lam=lam,
                     mechanisms=[mechanism], t_end=t_end, seed=seed, domain=Domain(n_alleles=2),
                     record_events=False, record_lineage=False, name=f"isolated:{name}")


def slfv_domain() -> Domain:
    return Domain(dim=1, side=1.0, n_alleles=2)


def slfv_law(offspring: OffspringRule = OffspringRule.ONE_FOR_ONE, zeta: float = 0.5) -> SLFVEventLaw:
    return SLFVEventLaw(atoms=(SLFVAtom(radius=0.1, weight=2.0, impacts=((zeta, 1.0),)),), offspring=offspring)


def preset_uniformity_specs(seed: int = 0) -> List[ModelSpec]:
    quiet = {"seed": seed, "record_events": False, "record_lineage": False}
    domain = slfv_domain()
    return [
        preset_moran(N=50, gamma=1.0, **quiet),
        preset_branching(N0=200, r=0.5, k=2, lam=10.0, **quiet),
        preset_slfv_first(domain, slfv_law(), u_max=20.0, **quiet),
        preset_slfv_second(domain, slfv_law(OffspringRule.POISSON), lam=20.0, **quiet),
        preset_voter(lattice_size=16, **quiet),
    ]


def generator_config() -> Configuration:
    """Five particles at lambda 2, levels straddling the test-function supports."""
    return Configuration.from_arrays(2.0, np.empty((5, 0)), np.array([0, 1, 0, 1, 0]),
                                     np.array([0.2, 0.5, 0.9, 1.3, 1.7]))


def generator_test_functions() -> List[TestFunction]:
    return [
        TestFunction.single(ConstantField(0.5), 1.0, name="flat"),
        TestFunction.single(AlleleField((0.8, 0.2)), 1.5, name="allelic"),
        TestFunction(1.2, (RampTerm(ConstantField(0.3)), RampTerm(AlleleField((0.5, 0.9)))), name="product"),
    ]


def _power(report: TestReport) -> TestReport:
    """A mutant's uniformity test, passing when the mutant is rejected."""
    return TestReport(name=f"power:{report.name}", statistic=report.statistic, threshold=SIGNIFICANCE,
                      n_reps=report.n_reps, seed=report.seed, comparison="le", p_value=report.p_value,
                      details=report.details)


def adversarial_control(settings: SuiteSettings) -> TestReport:
    """Uniformity test of the broken thinning, posing as the real one."""
    mechanism = mutant_of(isolated_mechanisms()["thinning"]())
    spec = isolated_spec("thinning", mechanism, settings.seed)
    return ks_uniform_levels(spec, settings.times, min(settings.reps_for("uniformity"), 1000),
                             settings.seed, settings.workers)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def poisson_identities_suite(settings: SuiteSettings) -> List[TestReport]:
    reps = settings.reps_for("poisson-identities")
    rng = stream(settings.seed, 0, IDENTITY_STREAM_TAG)
    reports = []
    for spec in default_specs():
        for identity in run_identity_checks(spec, reps, rng):
            reports.append(TestReport(
                name=f"{identity.identity}:{identity.spec}",
                statistic=abs(identity.mc - identity.analytic),
                threshold=SIGMA * identity.std_err + 1e-12, n_reps=reps, seed=settings.seed,
                details={"mc": identity.mc, "analytic": identity.analytic, "std_err": identity.std_err}))
    return reports


def uniformity_suite(settings: SuiteSettings) -> List[TestReport]:
    reps = settings.reps_for("uniformity")
    seed, workers, times = settings.seed, settings.workers, settings.times
    reports = []
    for name, factory in isolated_mechanisms().items():
        mutant = mutant_of(factory())
        if settings.adversarial:
            reports.append(ks_uniform_levels(isolated_spec(name, mutant, seed), times, reps, seed, workers))
            continue
        reports.append(ks_uniform_levels(isolated_spec(name, factory(), seed), times, reps, seed, workers))
        reports.append(_power(ks_uniform_levels(isolated_spec(mutant.kind, mutant, seed), times, reps,
                                                seed, workers)))
    for spec in preset_uniformity_specs(seed):
        reports.append(ks_uniform_levels(spec, times, reps, seed, workers))
    return reports


def projection_suite(settings: SuiteSettings) -> List[TestReport]:
    reps = settings.reps_for("projection")
    seed, workers = settings.seed, settings.workers
    small = min(reps, 1000)
    reports = []

    death = preset_pure_death(N0=1000, d0=1.0, t_end=1.0, snapshot_times=(0.5,), seed=seed,
                              record_lineage=False)
    reports.append(projection_equivalence(death, oracle_for(death), {"count": total_count}, reps, seed, workers))
    reports.extend(exponential_lifetimes_check(death, d0=1.0, t=1.0, n_reps=small, seed=seed))
    reports.extend(continuum_death_check(density=5.0, d0=1.0, u_max=10.0, t=1.0, n_reps=reps,
                                         seed=seed, workers=workers))

    moran = preset_moran(N=50, gamma=1.0, t_end=1.0, snapshot_times=(0.0, 0.5), seed=seed,
                         record_events=False, record_lineage=False)
    summaries = run_replicates(moran, reps, master_seed=seed, workers=workers)
    reports.append(projection_equivalence(
        moran, oracle_for(moran), {"frequency-0": allele_frequency(0), "disagreement": pair_disagreement},
        reps, seed, workers, summaries=summaries))
    reports.append(heterozygosity_decay(summaries, gamma=1.0, tolerance=settings.tolerance, seed=seed))

    # fixed-k replacement with k=2 is the Moran chain at pair rate rate / C(N, 2)
    n, event_rate = 50, 1225.0
    fixed_k = isolated_spec("fixed-k-replacement", Replacement([ReplacementEvent(
        ReplacementVariant.FIXED_K, rate=event_rate, k=2)]), seed, n=n)
    fixed_k = dataclasses.replace(fixed_k, snapshot_times=(0.5,), name="fixed-k-replacement")
    reports.append(projection_equivalence(
        fixed_k, MoranOracle({0: n // 2, 1: n - n // 2}, event_rate / (n * (n - 1) / 2)),
        {"frequency-0": allele_frequency(0)}, reps, seed, workers))

    arrivals = dataclasses.replace(
        isolated_spec("immigration", Immigration([ImmigrationSource(5.0, FiniteTypeLaw(TWO_ALLELES, (1.0, 3.0)))]),
                      seed, n=20),
        snapshot_times=(0.5,), name="immigration")
    reports.append(projection_equivalence(
        arrivals, ArrivalOracle({0: 10, 1: 10}, 5.0, (0, 1), (1.0, 3.0)),
        {"count": total_count, "allele-1": allele_count(1)}, reps, seed, workers))

    culling = dataclasses.replace(
        isolated_spec("thinning", Thinning([ThinningEvent(ConstantField(0.3), 2.0)]), seed),
        snapshot_times=(0.5,), name="thinning")
    reports.append(projection_equivalence(
        culling, CullingOracle({0: 25, 1: 25}, 2.0, 0.3),
        {"count": total_count, "allele-1": allele_count(1)}, reps, seed, workers))

    branching = preset_branching(N0=200, r=0.5, k=2, t_end=0.5, snapshot_times=(0.25,), seed=seed,
                                 record_lineage=False)
    summaries = run_replicates(branching, reps, master_seed=seed, workers=workers)
    reports.append(branching_mean_check(summaries, 200, 0.5 * 2, seed))
    reports.append(projection_equivalence(branching, oracle_for(branching), {"count": total_count},
                                          reps, seed, workers, summaries=summaries))
    critical = preset_branching(N0=200, r=0.5, k=2, critical=True, t_end=0.5, snapshot_times=(0.25,),
                                seed=seed, record_lineage=False)
    critical_summaries = run_replicates(critical, reps, master_seed=seed, workers=workers)
    reports.append(dataclasses.replace(branching_mean_check(critical_summaries, 200, 0.0, seed),
                                       name="branching-critical-mean"))

    voter = preset_voter(lattice_size=16, t_end=1.0, snapshot_times=(0.5,), seed=seed,
                         record_events=False, record_lineage=False)
    reports.append(projection_equivalence(voter, oracle_for(voter), {"allele-1": allele_count(1)},
                                          reps, seed, workers))

    reports.extend(slfv_reports(settings))
    return reports


def slfv_reports(settings: SuiteSettings) -> List[TestReport]:
    """SLFV structure checks and the restriction coupling of the fixed-level presets."""
    reps = min(settings.reps_for("projection"), 1000)
    seed, workers = settings.seed, settings.workers
    domain = slfv_domain()
    first_law = slfv_law()
    reports = []
    first = preset_slfv_first(domain, first_law, u_max=10.0, t_end=1.0, snapshot_times=(0.5,), seed=seed,
                              record_lineage=False)
    reports.extend(slfv_involvement_check(first, zeta=0.5, n_reps=reps, seed=seed))

    pair = Configuration.from_arrays(10.0, np.array([[0.1], [0.2]]), np.array([0, 1]), np.array([1.0, 2.0]))
    reports.append(slfv_pair_check(SLFVFirstEvents(domain, first_law), pair, t=1.0, n_reps=reps, seed=seed))

    second_law = slfv_law(OffspringRule.POISSON)
    second = preset_slfv_second(domain, second_law, lam=20.0, t_end=1.0, snapshot_times=(0.5,), seed=seed,
                                record_events=False, record_lineage=False)
    summaries = run_replicates(second, settings.reps_for("projection"), master_seed=seed, workers=workers)
    reports.append(slfv_density_check(summaries, density=1.0, volume=domain.volume, lam=20.0,
                                      rate=second_law.total_weight * domain.volume,
                                      mean_change_per_event=-(1.0 - 0.5), seed=seed))

    runs = settings.restriction_runs
    moran_intensity = {TWO_ALLELES[0]: 5.0, TWO_ALLELES[1]: 5.0}
    reports.append(dataclasses.replace(restriction_check(
        lambda cap: preset_moran(intensity=moran_intensity, lam=cap, t_end=1.0, snapshot_times=(0.5,),
                                 record_lineage=False),
        cap=8.0, small_cap=4.0, n_runs=runs, seed=seed), name="restriction-consistency:moran"))
    reports.append(dataclasses.replace(restriction_check(
        lambda cap: preset_slfv_first(domain, first_law, u_max=cap, t_end=1.0, snapshot_times=(0.5,),
                                      record_lineage=False),
        cap=20.0, small_cap=10.0, n_runs=runs, seed=seed), name="restriction-consistency:slfv-first"))
    reports.append(dataclasses.replace(restriction_check(
        lambda cap: preset_voter(lattice_size=8, lam=cap, t_end=1.0, snapshot_times=(0.5,),
                                 record_lineage=False),
        cap=2.0, small_cap=1.0, n_runs=runs, seed=seed, restrict_initial=True),
        name="restriction-consistency:voter"))
    return reports


def generator_suite(settings: SuiteSettings) -> List[TestReport]:
    reps = settings.reps_for("generator")
    seed = settings.seed
    config = generator_config()
    g_list = generator_test_functions()
    forward = {
        "pure-death": PureDeath(PureDeathParams(AlleleField((1.0, 2.0)))),
        "continuous-birth": ContinuousBirth(ContinuousBirthParams(2, ConstantField(0.5))),
        "immigration": Immigration([ImmigrationSource(3.0, FiniteTypeLaw(TWO_ALLELES, (1.0, 1.0)))]),
        "thinning": Thinning([ThinningEvent(AlleleField((0.2, 0.4)), 1.5)]),
        "pairwise-replacement": PairwiseReplacement(ConstantPairRate(1.0)),
    }
    reports = [forward_generator_check(mechanism, config, g_list, settings.delta, reps, seed)
               for mechanism in forward.values()]

    averaged = dict(forward)
    averaged["instant-death"] = InstantDeath(PureDeathParams(AlleleField((1.0, 2.0))))
    averaged["motion"] = Motion(MotionKernel(MotionKind.MUTATION, mutation_rates=((0.0, 1.0), (0.5, 0.0))))
    types = config.types()
    n_avg = min(reps, 2000)
    for mechanism in averaged.values():
        for g in g_list:
            reports.append(averaging_identity_check(mechanism, types, g, config.lam, n_avg, seed))
    return reports


def lambda_convergence_suite(settings: SuiteSettings) -> List[TestReport]:
    reps = settings.reps_for("lambda-convergence")
    seed, workers, lams = settings.seed, settings.workers, settings.lams
    reports = [
        drift_convergence(2, 1.0, lams).as_test(seed),
        level_map_convergence(u=2.0, u_star=1.5, v_star=1.0, r=1.0, r_star=1.0, lams=lams).as_test(seed),
    ]
    domain = slfv_domain()
    second_law = slfv_law(OffspringRule.POISSON)
    studies = lambda_convergence_study(
        lambda lam: preset_moran(N=20, lam=lam, t_end=0.5, seed=seed, record_events=False,
                                 record_lineage=False),
        lams, {"moran-count": lambda s: float(s.counts[-1])}, reps, seed, workers)
    studies += lambda_convergence_study(
        lambda lam: preset_slfv_second(domain, second_law, lam=lam, t_end=0.5, snapshot_times=(0.0,),
                                       seed=seed, record_events=False, record_lineage=False),
        lams, {"slfv-second-relative-count": lambda s: s.counts[-1] / s.counts[0] if s.counts[0] else 1.0},
        reps, seed, workers)
    reports.extend(study.as_test(seed) for study in studies)
    return reports


# ---------------------------------------------------------------------------
# Genealogy
# ---------------------------------------------------------------------------

def _lowest_sample_tree(job) -> AncestryTree:
    spec, replicate, n = job
    trajectory = run(spec, replicate)
    t = trajectory.snapshots[-1][0]
    ids = trajectory.final.lowest(n)
    return extract_tree(trajectory.lineage_log, ids, t, r=trajectory.start_time, coverage=trajectory.coverage)


def sample_lowest_trees(spec: ModelSpec, n: int, reps: int, seed: int, workers: int = 1) -> List[AncestryTree]:
    """Genealogy of the n lowest levels at t_end, one tree per replicate."""
    spec = dataclasses.replace(spec, seed=seed, record_events=False, record_lineage=True)
    jobs = [(spec, rep, n) for rep in range(reps)]
    if workers <= 1 or reps == 1:
        return [_lowest_sample_tree(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_lowest_sample_tree, jobs))


def kingman_reports(trees: Sequence[AncestryTree], gamma: float, tolerance: float, seed: int) -> List[TestReport]:
    """Pair-rate MLE within tolerance, no multifurcations, KS of pair times against Exp(gamma)."""
    summary = coalescence_statistics(trees)
    depth = trees[0].depth
    times = np.array([value for tree in trees for value in tree.pairwise_times().values()
                      if math.isfinite(value)])
    # pair times are right-censored at the tree depth
    norm = -math.expm1(-gamma * depth)
    p_value = float(stats.kstest(times, lambda x: -np.expm1(-gamma * np.asarray(x)) / norm).pvalue)
    n = len(trees)
    return [
        TestReport(name="kingman-rate", statistic=abs(summary["rate_mle"] - gamma) / gamma,
                   threshold=tolerance, n_reps=n, seed=seed,
                   details={"rate_mle": summary["rate_mle"], "rate_ci": summary["rate_ci"]}),
        TestReport(name="kingman-multifurcations", statistic=summary["multifurcation_fraction"],
                   threshold=0.0, n_reps=n, seed=seed),
        TestReport(name="kingman-pair-times", statistic=p_value, threshold=SIGNIFICANCE, n_reps=n, seed=seed,
                   comparison="ge", p_value=p_value, details={"coalesced": len(times)}),
    ]


def subsample_reports(runs: int, seed: int, sample: int = 5) -> List[TestReport]:
    """
    On small Moran runs: subsample trees equal the induced subtrees of the
    full tree, the level recursion agrees with the id walk, and every record
    looks down.
    """
    spec = preset_moran(N=12, gamma=1.0, t_end=1.0, record_events=False)
    subtree_mismatches, recursion_mismatches, upward = [], [], 0
    for rep in range(runs):
        trajectory = run(dataclasses.replace(spec, seed=seed + rep), 0)
        t, start = trajectory.snapshots[-1][0], trajectory.start_time
        final = trajectory.final
        log = trajectory.lineage_log
        ids = final.ids.tolist()
        full = extract_tree(log, ids, t, r=start, coverage=trajectory.coverage)
        rng = stream(seed, rep, SUBSAMPLE_STREAM_TAG)
        subset = sorted(int(pid) for pid in rng.choice(ids, size=sample, replace=False))
        labels = {str(pid) for pid in subset}
        sub = extract_tree(log, subset, t, r=start, coverage=trajectory.coverage)
        induced = {frozenset(clade & labels) for clade in full.clades() if len(clade & labels) >= 2}
        times_agree = all(value == full.coalescence_time(a, b) for (a, b), value in sub.pairwise_times().items())
        if sub.clades() != induced or not times_agree:
            subtree_mismatches.append(rep)
        for pid in subset:
            ancestor = ancestor_index(log, pid, start, t)
            by_level = ancestor_level(log, float(final.levels[final.row_of(pid)]), start, t)
            if by_level != float(final.levels[final.row_of(ancestor)]):
                recursion_mismatches.append((rep, pid))
        upward += sum(1 for record in log
                      if record.parent_id is not None and not record.parent_level < record.child_level)
    return [
        TestReport(name="subsample-consistency", statistic=float(len(subtree_mismatches)), threshold=0.0,
                   n_reps=runs, seed=seed, details={"mismatches": subtree_mismatches}),
        TestReport(name="index-recursion", statistic=float(len(recursion_mismatches)), threshold=0.0,
                   n_reps=runs, seed=seed, details={"mismatches": recursion_mismatches[:20]}),
        TestReport(name="lookdown-direction", statistic=float(upward), threshold=0.0, n_reps=runs, seed=seed),
    ]


def genealogy_suite(settings: SuiteSettings) -> List[TestReport]:
    reps = settings.reps_for("genealogy")
    gamma = 1.0
    spec = preset_moran(N=50, gamma=gamma, t_end=5.0)
    trees = sample_lowest_trees(spec, 2, reps, settings.seed, settings.workers)
    reports = kingman_reports(trees, gamma, settings.tolerance, settings.seed)
    reports.extend(subsample_reports(settings.subsample_runs, settings.seed))
    return reports


SUITES: Dict[str, Callable[[SuiteSettings], List[TestReport]]] = {
    "poisson-identities": poisson_identities_suite,
    "uniformity": uniformity_suite,
    "projection": projection_suite,
    "generator": generator_suite,
    "lambda-convergence": lambda_convergence_suite,
    "genealogy": genealogy_suite,
}


def run_suite(name: str, settings: SuiteSettings) -> List[TestReport]:
    """Run one named suite, or all of them for "all"."""
    if name == "all":
        reports = []
        for suite in SUITES:
            reports.extend(run_suite(suite, settings))
        return reports
    if name not in SUITES:
        raise ValueError(f"unknown suite '{name}'; choose from {sorted(SUITES) + ['all']}")
    logger.info(f"suite {name}: starting (seed={settings.seed}, reps={settings.reps_for(name)})")
    reports = SUITES[name](settings)
    if settings.adversarial and name != "uniformity":
        reports.append(adversarial_control(settings))
    failed = [report.name for report in reports if not report.passed]
    logger.info(f"suite {name}: {len(reports) - len(failed)}/{len(reports)} passed")
    return reports
