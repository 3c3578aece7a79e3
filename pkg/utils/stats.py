"""
Statistical Verification Harness

Hypothesis tests that turn the structural properties of the lookdown
constructions into pass/fail reports: conditional uniformity of levels,
agreement of the projected process with classical simulators, forward
differences against generator values, the level-averaging identity,
convergence of the level maps as lambda grows, plus the moment checks for
pure death, branching and the SLFV constructions.

Thresholds: p-values are compared with SIGNIFICANCE after Bonferroni
correction; moment tests use SIGMA standard errors, widened for the number
of simultaneous comparisons.
"""
import copy
import dataclasses
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from config import SIGMA, SIGNIFICANCE
from utils.classical_oracles import ClassicalOracle, OracleMissingError
from utils.core import (Configuration, LookdownError, TestFunction, TypePoint, eval_f,
                        sample_uniform_levels)
from utils.engine import EXIT_LABEL, InitialState, ModelSpec, ReplicateSummary, evolve, run, run_replicates
from utils.mechanisms import (EventSink, Mechanism, MechanismStreams, continuous_birth_drift,
                              discrete_birth_level_limit, discrete_birth_level_map, generator_apply,
                              projected_generator, stream)
from utils.presets import SLFVEventLaw, continuum_death_spec

logger = logging.getLogger(__name__)

ORACLE_STREAM_TAG = 3
AVERAGING_STREAM_TAG = 4


class EmptySnapshotError(LookdownError):
    """Raised when a snapshot time has no particles in any replicate."""


@dataclass
class TestReport:
    """
    One verification result. `comparison` says how the statistic meets the
    threshold: "ge" for p-values, "le" for z-scores and deviations.
    """
    __test__ = False

    name: str
    statistic: float
    threshold: float
    n_reps: int
    seed: int
    comparison: str = "le"
    p_value: Optional[float] = None
    details: Dict = field(default_factory=dict)
    passed: bool = field(default=False)

    def __post_init__(self):
        if self.comparison == "ge":
            self.passed = bool(self.statistic >= self.threshold)
        else:
            self.passed = bool(self.statistic <= self.threshold)

    def row(self) -> List:
        return [self.name, repr(self.statistic), repr(self.threshold), self.comparison,
                "" if self.p_value is None else repr(self.p_value), self.n_reps, self.seed,
                "pass" if self.passed else "fail"]


REPORT_HEADER = ["test", "statistic", "threshold", "comparison", "p_value", "n_reps", "seed", "result"]


def corrected_sigma(m: int, sigma: float = SIGMA) -> float:
    """z threshold keeping the family-wise two-sided level of one sigma-test across m tests."""
    if m <= 1:
        return sigma
    alpha = 2.0 * stats.norm.sf(sigma)
    return float(stats.norm.isf(alpha / (2.0 * m)))


def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n == 0:
        return math.nan, math.nan
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(values.mean()), se


def _var_se(values: np.ndarray) -> Tuple[float, float]:
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 2:
        return 0.0, 0.0
    centred = values - values.mean()
    variance = float(np.sum(centred ** 2) / (n - 1))
    fourth = float(np.mean(centred ** 4))
    return variance, math.sqrt(max(fourth - variance ** 2, 0.0) / n)


def _z(a: float, se_a: float, b: float, se_b: float = 0.0) -> float:
    scale = math.sqrt(se_a ** 2 + se_b ** 2)
    if scale == 0.0:
        return 0.0 if abs(a - b) <= 1e-12 * max(1.0, abs(b)) else math.inf
    return abs(a - b) / scale


def _with_snapshots(spec: ModelSpec, times: Sequence[float]) -> Tuple[ModelSpec, List[float]]:
    times = sorted(set(float(t) for t in times))
    if not times:
        raise ValueError("at least one snapshot time is needed")
    t_end = max(spec.t_end, times[-1])
    return dataclasses.replace(spec, snapshot_times=tuple(times), t_end=t_end), times


def _index_of(summary: ReplicateSummary, t: float) -> int:
    return summary.times.index(t)


def _log_report(suite: str, report: TestReport) -> TestReport:
    logger.info(f"{suite}/{report.name}: statistic={report.statistic:.6g} "
                f"threshold={report.threshold:.6g} {'pass' if report.passed else 'fail'}")
    return report


# ---------------------------------------------------------------------------
# Conditional uniformity
# ---------------------------------------------------------------------------

def uniformity_from_summaries(name: str, summaries: Sequence[ReplicateSummary], times: Sequence[float],
                              lam: float, seed: int, strata: int = 4) -> TestReport:
    """
    KS of pooled levels / lambda against U[0,1) at each time, overall and
    within count strata (replicates grouped by particle count), Bonferroni
    over every test performed.
    """
    p_values: List[Tuple[str, float]] = []
    for t in times:
        idx = _index_of(summaries[0], t)
        levels = [s.levels[idx] for s in summaries]
        counts = np.array([len(level) for level in levels])
        if counts.sum() == 0:
            raise EmptySnapshotError(f"{name}: no particles at t={t} in any replicate")
        pooled = np.concatenate(levels) / lam
        p_values.append((f"t={t!r}", float(stats.kstest(pooled, "uniform").pvalue)))
        edges = np.unique(np.quantile(counts[counts > 0], np.linspace(0, 1, strata + 1)[1:-1]))
        bins = np.digitize(counts, edges)
        if len(np.unique(bins[counts > 0])) > 1:
            for b in np.unique(bins[counts > 0]):
                members = [level for level, bucket in zip(levels, bins) if bucket == b and len(level)]
                sample = np.concatenate(members) / lam
                p_values.append((f"t={t!r},stratum={int(b)}", float(stats.kstest(sample, "uniform").pvalue)))
    m = len(p_values)
    worst_label, worst = min(p_values, key=lambda item: item[1])
    adjusted = min(1.0, worst * m)
    return TestReport(name=name, statistic=adjusted, threshold=SIGNIFICANCE, n_reps=len(summaries),
                      seed=seed, comparison="ge", p_value=adjusted,
                      details={"tests": m, "worst": worst_label,
                               "p_values": {label: p for label, p in p_values}})


def ks_uniform_levels(spec: ModelSpec, times: Sequence[float], n_reps: int,
                      seed: Optional[int] = None, workers: int = 1) -> TestReport:
    """Conditional uniformity of levels at `times` over n_reps replicates of spec."""
    spec, times = _with_snapshots(spec, times)
    seed = spec.seed if seed is None else int(seed)
    summaries = run_replicates(spec, n_reps, master_seed=seed, workers=workers)
    return _log_report("uniformity", uniformity_from_summaries(
        f"uniformity:{spec.name}", summaries, times, spec.lam, seed))


# ---------------------------------------------------------------------------
# Projection against classical oracles
# ---------------------------------------------------------------------------

Functional = Callable[[Counter], float]


def total_count(state: Counter) -> float:
    return float(sum(state.values()))


def allele_count(allele: int) -> Functional:
    def functional(state: Counter) -> float:
        return float(sum(n for x, n in state.items() if x.allele == allele))
    return functional


def allele_frequency(allele: int) -> Functional:
    def functional(state: Counter) -> float:
        total = sum(state.values())
        return float(sum(n for x, n in state.items() if x.allele == allele)) / total if total else 0.0
    return functional


def pair_disagreement(state: Counter) -> float:
    """Number of unordered pairs carrying different alleles."""
    by_allele = Counter()
    for x, n in state.items():
        by_allele[x.allele] += n
    total = sum(by_allele.values())
    return float((total * total - sum(n * n for n in by_allele.values())) / 2)


def projection_equivalence(spec: ModelSpec, classical_oracle: Optional[ClassicalOracle],
                           functionals: Dict[str, Functional], n_reps: int,
                           seed: Optional[int] = None, workers: int = 1,
                           summaries: Optional[Sequence[ReplicateSummary]] = None) -> TestReport:
    """
    Means and variances of functionals of the projected state at every
    snapshot time, lookdown against oracle, two-sample z-tests with the
    threshold corrected for the number of comparisons.
    """
    if classical_oracle is None:
        raise OracleMissingError(f"no classical oracle for '{spec.name}'")
    seed = spec.seed if seed is None else int(seed)
    if summaries is None:
        summaries = run_replicates(spec, n_reps, master_seed=seed, workers=workers)
    times = list(summaries[0].times)
    oracle_states = [classical_oracle.simulate(times, stream(seed, rep, ORACLE_STREAM_TAG))
                     for rep in range(n_reps)]
    z_scores: Dict[str, float] = {}
    moments: Dict[str, Dict[str, float]] = {}
    for idx, t in enumerate(times):
        for fname, fn in functionals.items():
            lookdown = np.array([fn(s.projections[idx]) for s in summaries])
            oracle = np.array([fn(states[idx]) for states in oracle_states])
            m1, s1 = _mean_se(lookdown)
            m2, s2 = _mean_se(oracle)
            v1, e1 = _var_se(lookdown)
            v2, e2 = _var_se(oracle)
            key = f"{fname}@t={t!r}"
            z_scores[f"mean:{key}"] = _z(m1, s1, m2, s2)
            z_scores[f"var:{key}"] = _z(v1, e1, v2, e2)
            moments[key] = {"lookdown_mean": m1, "oracle_mean": m2,
                            "lookdown_var": v1, "oracle_var": v2}
    threshold = corrected_sigma(len(z_scores))
    worst = max(z_scores, key=z_scores.get)
    return _log_report("projection", TestReport(
        name=f"projection:{spec.name}", statistic=z_scores[worst], threshold=threshold,
        n_reps=n_reps, seed=seed, details={"worst": worst, "z": z_scores, "moments": moments}))


def heterozygosity_decay(summaries: Sequence[ReplicateSummary], gamma: float,
                         tolerance: float = 0.05, seed: int = 0) -> TestReport:
    """Fit E[pairs of different alleles] ~ C e^{-rate t} and compare the rate with gamma."""
    times = np.array(summaries[0].times, dtype=float)
    means = np.array([np.mean([pair_disagreement(s.projections[i]) for s in summaries])
                      for i in range(len(times))])
    usable = means > 0
    if usable.sum() < 2:
        raise ValueError("heterozygosity fit needs two snapshot times with diversity left")
    slope, _ = np.polyfit(times[usable], np.log(means[usable]), 1)
    rate = -float(slope)
    return TestReport(name="heterozygosity-decay", statistic=abs(rate - gamma) / gamma,
                      threshold=tolerance, n_reps=len(summaries), seed=seed,
                      details={"fitted_rate": rate, "gamma": gamma, "means": means.tolist()})


# ---------------------------------------------------------------------------
# Generator checks
# ---------------------------------------------------------------------------

def forward_generator_check(mechanism: Mechanism, config: Configuration, g_list: Sequence[TestFunction],
                            delta: float, n_reps: int, seed: int = 0,
                            bias_constant: float = 10.0) -> TestReport:
    """
    (E f(eta_delta) - f(eta_0)) / delta by Monte Carlo against A f(eta_0);
    each g passes when |difference| <= SIGMA * stderr + bias_constant * delta.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    worst_margin = -math.inf
    rows = {}
    for g in g_list:
        base = eval_f(config, g)
        values = np.array([eval_f(evolve(config, [mechanism], delta, seed=seed, replicate=rep), g)
                           for rep in range(n_reps)])
        diff, se = _mean_se((values - base) / delta)
        generator = generator_apply(mechanism, config, g)
        allowed = SIGMA * math.sqrt(se ** 2 + generator.std_err ** 2) + bias_constant * delta
        margin = abs(diff - generator.value) - allowed
        worst_margin = max(worst_margin, margin)
        rows[g.name] = {"forward": diff, "generator": generator.value, "method": generator.method,
                        "allowed": allowed}
    return _log_report("generator", TestReport(
        name=f"generator:{mechanism.label}", statistic=worst_margin, threshold=0.0,
        n_reps=n_reps, seed=seed, details={"delta": delta, "bias_constant": bias_constant, "g": rows}))


def averaging_identity_check(mechanism: Mechanism, types: Sequence[TypePoint], g: TestFunction,
                             lam: float, n_reps: int, seed: int = 0) -> TestReport:
    """E[A f(eta) | types] over uniform level draws against the projected generator."""
    rng = stream(seed, 0, AVERAGING_STREAM_TAG)
    values = np.array([generator_apply(mechanism, sample_uniform_levels(types, lam, rng), g).value
                       for _ in range(n_reps)])
    mean, se = _mean_se(values)
    target = projected_generator(mechanism, types, g, lam)
    return _log_report("generator", TestReport(
        name=f"averaging:{mechanism.label}:{g.name}", statistic=_z(mean, se, target),
        threshold=SIGMA, n_reps=n_reps, seed=seed,
        details={"mc": mean, "std_err": se, "projected": target}))


# ---------------------------------------------------------------------------
# Lambda convergence
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    name: str
    lams: List[float]
    values: List[float]
    std_errs: List[float]
    order: float
    passed: bool
    details: Dict = field(default_factory=dict)

    def as_test(self, seed: int = 0, min_order: float = 0.9) -> TestReport:
        statistic = -self.order if self.passed else math.inf
        return TestReport(name=self.name, statistic=statistic, threshold=-min_order, n_reps=1, seed=seed,
                          details={"lams": self.lams, "values": self.values, "order": self.order,
                                   **self.details})


def fitted_order(lams: Sequence[float], deviations: Sequence[float]) -> float:
    """-slope of log(deviation) against log(lambda)."""
    lams = np.asarray(lams, dtype=float)
    deviations = np.asarray(deviations, dtype=float)
    keep = deviations > 0
    if keep.sum() < 2:
        return math.inf
    slope, _ = np.polyfit(np.log(lams[keep]), np.log(deviations[keep]), 1)
    return -float(slope)


def drift_convergence(k: int, u: float, lams: Sequence[float], min_order: float = 0.9) -> ConvergenceReport:
    """|G_k^lam(u) + k u| against lambda, with the Taylor bound k(k+1)u^2/(2 lam)."""
    deviations = [abs(float(continuous_birth_drift(u, k, lam)) + k * u) for lam in lams]
    bounds = [k * (k + 1) * u ** 2 / (2.0 * lam) for lam in lams]
    order = fitted_order(lams, deviations)
    within = all(d <= 1.05 * b for d, b in zip(deviations, bounds))
    return ConvergenceReport(name=f"drift-convergence:k={k},u={u}", lams=list(lams), values=deviations,
                             std_errs=[0.0] * len(lams), order=order,
                             passed=bool(order >= min_order and within), details={"bounds": bounds})


def level_map_convergence(u: float, u_star: float, v_star: float, r: float, r_star: float,
                          lams: Sequence[float], min_order: float = 0.9) -> ConvergenceReport:
    """Level map above v* against its large-lambda limit u - (u* - v*) r / r*."""
    if not u > v_star or not u_star > v_star:
        raise ValueError("the level-map study needs u > v* and u* > v*")
    limit = float(discrete_birth_level_limit(u, u_star, v_star, r, r_star))
    deviations = []
    for lam in lams:
        tau_star = math.log((lam - v_star) / (lam - u_star)) / r_star
        deviations.append(abs(float(discrete_birth_level_map(u, v_star, r, tau_star, lam)) - limit))
    order = fitted_order(lams, deviations)
    return ConvergenceReport(name=f"level-map-convergence:u={u}", lams=list(lams), values=deviations,
                             std_errs=[0.0] * len(lams), order=order, passed=bool(order >= min_order),
                             details={"limit": limit})


SummaryFunctional = Callable[[ReplicateSummary], float]


def lambda_convergence_study(spec_family: Callable[[float], ModelSpec], lams: Sequence[float],
                             functionals: Dict[str, SummaryFunctional], n_reps: int, seed: int = 0,
                             workers: int = 1, min_order: float = 0.9) -> List[ConvergenceReport]:
    """
    Estimate each functional for every lambda of the family. A functional
    passes if successive estimates agree within noise (lambda-independent) or
    their differences shrink with fitted order at least min_order.
    """
    lams = sorted(float(lam) for lam in lams)
    estimates: Dict[str, List[Tuple[float, float]]] = {name: [] for name in functionals}
    for lam in lams:
        summaries = run_replicates(spec_family(lam), n_reps, master_seed=seed, workers=workers)
        for name, fn in functionals.items():
            estimates[name].append(_mean_se(np.array([fn(s) for s in summaries])))
    reports = []
    for name, values in estimates.items():
        means = [m for m, _ in values]
        errors = [e for _, e in values]
        diffs = [abs(means[i + 1] - means[i]) for i in range(len(means) - 1)]
        noise = [SIGMA * math.sqrt(errors[i] ** 2 + errors[i + 1] ** 2) for i in range(len(means) - 1)]
        constant = all(d <= n + 1e-12 for d, n in zip(diffs, noise))
        order = math.inf if constant else fitted_order(lams[:-1], diffs)
        reports.append(ConvergenceReport(
            name=f"lambda-convergence:{name}", lams=lams, values=means, std_errs=errors, order=order,
            passed=bool(constant or order >= min_order), details={"differences": diffs}))
        logger.info(f"lambda study {name}: estimates={means} order={order}")
    return reports


# ---------------------------------------------------------------------------
# Model-specific moment checks
# ---------------------------------------------------------------------------

def mean_check(name: str, samples: np.ndarray, expected: float, n_reps: int, seed: int,
               sigma: float = SIGMA) -> TestReport:
    mean, se = _mean_se(samples)
    return TestReport(name=name, statistic=_z(mean, se, expected), threshold=sigma, n_reps=n_reps,
                      seed=seed, details={"mean": mean, "std_err": se, "expected": expected})


def exponential_lifetimes_check(spec: ModelSpec, d0: float, t: float, n_reps: int,
                                seed: Optional[int] = None, horizon: float = 25.0,
                                max_lifetimes: int = 100_000) -> List[TestReport]:
    """
    Pure death: survivor fraction at t against e^{-d0 t} (z-test) and KS of
    the exit times against Exp(d0), pooled from the event logs.
    """
    seed = spec.seed if seed is None else int(seed)
    long_spec, _ = _with_snapshots(dataclasses.replace(spec, seed=seed), (t, horizon / d0))
    fractions, lifetimes = [], []
    for rep in range(n_reps):
        trajectory = run(long_spec, rep)
        n0 = len(trajectory.state.config) + sum(len(e.affected_ids) for e in trajectory.event_log
                                                if e.mechanism == EXIT_LABEL)
        fractions.append(len(trajectory.snapshots[0][1]) / n0 if n0 else 1.0)
        if len(lifetimes) < max_lifetimes:
            for record in trajectory.event_log:
                if record.mechanism == EXIT_LABEL:
                    lifetimes.extend([record.time] * len(record.affected_ids))
    survivor = mean_check("exponential-survivors", np.array(fractions), math.exp(-d0 * t), n_reps, seed)
    sample = np.asarray(lifetimes[:max_lifetimes])
    p_value = float(stats.kstest(sample, "expon", args=(0.0, 1.0 / d0)).pvalue)
    ks = TestReport(name="exponential-lifetimes", statistic=p_value, threshold=SIGNIFICANCE,
                    n_reps=n_reps, seed=seed, comparison="ge", p_value=p_value,
                    details={"lifetimes": len(sample)})
    return [_log_report("projection", survivor), _log_report("projection", ks)]


def continuum_death_check(density: float, d0: float, u_max: float, t: float, n_reps: int,
                          seed: int = 0, workers: int = 1) -> List[TestReport]:
    """
    Conditionally Poisson start of intensity `density` under pure death: the
    count below u_max at t is Poisson(density u_max e^{-d0 t}); mean and
    variance both checked.
    """
    spec = continuum_death_spec(density, d0, u_max, t, seed)
    summaries = run_replicates(spec, n_reps, master_seed=seed, workers=workers)
    counts = np.array([s.counts[-1] for s in summaries], dtype=float)
    expected = density * u_max * math.exp(-d0 * t)
    variance, var_se = _var_se(counts)
    threshold = corrected_sigma(2)
    return [
        mean_check("continuum-death-mean", counts, expected, n_reps, seed, threshold),
        TestReport(name="continuum-death-variance", statistic=_z(variance, var_se, expected),
                   threshold=threshold, n_reps=n_reps, seed=seed,
                   details={"variance": variance, "expected": expected}),
    ]


def branching_mean_check(summaries: Sequence[ReplicateSummary], n0: int, growth_rate: float,
                         seed: int = 0) -> TestReport:
    """Mean population at every snapshot against n0 e^{growth_rate t} (growth_rate = r k - d0)."""
    z = {}
    for idx, t in enumerate(summaries[0].times):
        counts = np.array([s.counts[idx] for s in summaries], dtype=float)
        mean, se = _mean_se(counts)
        z[repr(t)] = _z(mean, se, n0 * math.exp(growth_rate * t))
    worst = max(z, key=z.get)
    return TestReport(name="branching-mean", statistic=z[worst], threshold=corrected_sigma(len(z)),
                      n_reps=len(summaries), seed=seed, details={"z": z, "worst": worst})


def slfv_involvement_check(spec: ModelSpec, zeta: float, n_reps: int, seed: Optional[int] = None) -> List[TestReport]:
    """
    First construction: fraction of in-ball particles that join equals zeta
    (binomial z-test) and the particle count never changes.
    """
    seed = spec.seed if seed is None else int(seed)
    in_ball = involved = 0
    conserved = True
    for rep in range(n_reps):
        trajectory = run(dataclasses.replace(spec, seed=seed), rep)
        mechanism = trajectory.state.mechanisms[0]
        in_ball += mechanism.in_ball_total
        involved += mechanism.involved_total
        counts = {len(config) for _, config in trajectory.snapshots}
        conserved &= len(counts) == 1 and len(trajectory.state.config) == len(trajectory.snapshots[0][1])
    frequency = involved / in_ball if in_ball else math.nan
    se = math.sqrt(zeta * (1.0 - zeta) / in_ball) if in_ball else math.inf
    return [
        TestReport(name="slfv-involvement", statistic=_z(frequency, se, zeta), threshold=SIGMA,
                   n_reps=n_reps, seed=seed, details={"frequency": frequency, "in_ball": in_ball}),
        TestReport(name="slfv-mass-conservation", statistic=0.0 if conserved else 1.0, threshold=0.0,
                   n_reps=n_reps, seed=seed),
    ]


def slfv_pair_compensator(mechanism: Mechanism, config: Configuration, t: float,
                          seed: int, replicate: int) -> Tuple[int, float]:
    """
    Drive a two-particle configuration under an SLFV mechanism; returns the
    number of events involving both particles and the integral of their
    joint-involvement rate along the path.
    """
    if len(config) != 2:
        raise ValueError("the pair compensator needs exactly two particles")
    mechanism = copy.deepcopy(mechanism)
    law: SLFVEventLaw = mechanism.law
    domain = mechanism.domain
    state = config.copy()
    mechanism.bind(state, MechanismStreams(seed, replicate, 0), static_levels=True)
    sink = EventSink(record_events=True, record_lineage=False)
    pair = set(state.ids.tolist())
    now, compensator = state.time, 0.0
    while True:
        separation = float(domain.distance(state.locations[0], state.locations[1]))
        intensity = sum(atom.weight * sum(z * z * p for z, p in atom.impacts)
                        * float(domain.ball_intersection_volume(atom.radius, separation))
                        for atom in law.atoms)
        t_next = mechanism.next_time(state, now)
        if t_next > state.time + t:
            compensator += intensity * (state.time + t - now)
            break
        compensator += intensity * (t_next - now)
        now = t_next
        mechanism.fire(state, now, sink)
    joint = sum(1 for record in sink.events if set(record.affected_ids) == pair)
    return joint, compensator


def slfv_pair_check(mechanism: Mechanism, config: Configuration, t: float, n_reps: int,
                    seed: int = 0) -> TestReport:
    """E[N_ij(t)] against the expected integrated joint-involvement rate."""
    observed, expected = [], []
    for rep in range(n_reps):
        joint, compensator = slfv_pair_compensator(mechanism, config, t, seed, rep)
        observed.append(joint)
        expected.append(compensator)
    diff_mean, diff_se = _mean_se(np.array(observed, dtype=float) - np.array(expected))
    return TestReport(name="slfv-pair-involvement", statistic=_z(diff_mean, diff_se, 0.0), threshold=SIGMA,
                      n_reps=n_reps, seed=seed,
                      details={"observed": float(np.mean(observed)), "quadrature": float(np.mean(expected))})


def slfv_density_check(summaries: Sequence[ReplicateSummary], density: float, volume: float, lam: float,
                       rate: float, mean_change_per_event: float, seed: int = 0) -> TestReport:
    """
    Second construction: mean count against the start density plus the
    finite-lambda drift (mean_change_per_event per event at the given rate).
    """
    z = {}
    n0 = density * volume * lam
    for idx, t in enumerate(summaries[0].times):
        counts = np.array([s.counts[idx] for s in summaries], dtype=float)
        mean, se = _mean_se(counts)
        z[repr(t)] = _z(mean, se, n0 + mean_change_per_event * rate * t)
    worst = max(z, key=z.get)
    return TestReport(name="slfv-second-density", statistic=z[worst], threshold=corrected_sigma(len(z)),
                      n_reps=len(summaries), seed=seed, details={"z": z})


def restriction_check(spec_for_cap: Callable[[float], ModelSpec], cap: float, small_cap: float,
                      n_runs: int, seed: int = 0, restrict_initial: bool = False) -> TestReport:
    """
    Runs with a large and a small level cap; the large run restricted to the
    small cap must equal the small run at every snapshot, bit for bit.
    With `restrict_initial` the small run starts from the large run's initial
    configuration restricted to small_cap (presets with a fixed particle count).
    """
    if not small_cap < cap:
        raise ValueError("small_cap must be below cap")
    mismatches = []
    for rep in range(n_runs):
        big_spec = dataclasses.replace(spec_for_cap(cap), seed=seed + rep, record_events=False)
        small_spec = dataclasses.replace(spec_for_cap(small_cap), seed=seed + rep, record_events=False)
        if restrict_initial:
            start = big_spec.initial_configuration().restrict(small_cap)
            small_spec = dataclasses.replace(small_spec, initial=InitialState.explicit(start))
        big = run(big_spec, 0)
        small = run(small_spec, 0)
        for (t, full), (_, part) in zip(big.snapshots, small.snapshots):
            if full.restrict(small_cap) != part:
                mismatches.append((rep, t))
                break
    return TestReport(name="restriction-consistency", statistic=float(len(mismatches)), threshold=0.0,
                      n_reps=n_runs, seed=seed, details={"mismatches": mismatches})
