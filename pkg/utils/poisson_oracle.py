"""
Poisson Random Measure Oracles

Monte-Carlo checks of the Poisson random measure identities (Laplace
functional, first two moments, product and pairwise-product formulas) on an
interval carrier with a density-form mean measure. The analytic sides come
from scipy quadrature; the sampled sides draw a Poisson count and places the
points by inverse CDF on a fine grid.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np
from scipy import integrate

from config import GRID_SIZE, QUAD_TOL, SIGMA
from utils.core import LookdownError

logger = logging.getLogger(__name__)


class DivergentIntegralError(LookdownError):
    """Raised when the analytic side of an identity is not finite."""


def _zero(z):
    return np.zeros_like(np.asarray(z, dtype=float))


def _one(z):
    return np.ones_like(np.asarray(z, dtype=float))


def _zero_pair(x, y):
    return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)


@dataclass(frozen=True)
class PoissonMeasureSpec:
    """Mean measure density on [a, b] and the integrands used by the identities."""
    name: str
    a: float
    b: float
    density: Callable
    f: Callable = _zero
    g: Callable = _one
    r: Callable = _zero_pair
    grid_size: int = GRID_SIZE
    breakpoints: Tuple[float, ...] = ()

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"empty carrier [{self.a}, {self.b}]")

    def _eval(self, fn: Callable, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(np.asarray(fn(z), dtype=float), z.shape)

    def integrate(self, fn: Callable) -> float:
        """int fn dnu by adaptive quadrature."""
        points = [p for p in self.breakpoints if self.a < p < self.b] or None
        value, _ = integrate.quad(
            lambda z: float(self._eval(fn, z) * self._eval(self.density, z)),
            self.a, self.b, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=500, points=points,
        )
        if not math.isfinite(value):
            raise DivergentIntegralError(f"{self.name}: integral is not finite")
        return value

    def mass(self) -> float:
        return self.integrate(_one)

    def double_integral(self, fn: Callable) -> float:
        """int int fn(x, y) dnu(x) dnu(y)."""
        value, _ = integrate.dblquad(
            lambda y, x: float(np.asarray(fn(x, y), dtype=float)
                               * self._eval(self.density, x) * self._eval(self.density, y)),
            self.a, self.b, self.a, self.b, epsabs=QUAD_TOL, epsrel=QUAD_TOL,
        )
        if not math.isfinite(value):
            raise DivergentIntegralError(f"{self.name}: double integral is not finite")
        return value

    def sample(self, n_reps: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Draw n_reps independent realisations.

        Returns:
            (points, replicate index of each point, count per replicate)
        """
        counts = rng.poisson(self.mass(), size=n_reps)
        grid = np.linspace(self.a, self.b, self.grid_size)
        cdf = integrate.cumulative_trapezoid(self._eval(self.density, grid), grid, initial=0.0)
        if cdf[-1] <= 0:
            return np.empty(0), np.empty(0, dtype=np.int64), np.zeros(n_reps, dtype=np.int64)
        cdf /= cdf[-1]
        points = np.interp(rng.random(int(counts.sum())), cdf, grid)
        owners = np.repeat(np.arange(n_reps), counts)
        return points, owners, counts


@dataclass
class IdentityReport:
    identity: str
    spec: str
    mc: float
    analytic: float
    std_err: float
    n_reps: int
    passed: bool = field(default=False)

    def __post_init__(self):
        self.passed = bool(abs(self.mc - self.analytic) <= SIGMA * self.std_err + 1e-12)

    def row(self) -> List:
        return [self.identity, self.spec, repr(self.mc), repr(self.analytic),
                repr(self.std_err), "pass" if self.passed else "fail"]


def _mean_and_error(values: np.ndarray) -> Tuple[float, float]:
    n = len(values)
    mean = float(values.mean())
    std_err = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, std_err


def laplace_functional_check(spec: PoissonMeasureSpec, n_reps: int,
                             rng: np.random.Generator) -> IdentityReport:
    """E exp(int f dxi) against exp(int (e^f - 1) dnu)."""
    points, owners, _ = spec.sample(n_reps, rng)
    sums = np.bincount(owners, weights=spec._eval(spec.f, points), minlength=n_reps)
    mc, std_err = _mean_and_error(np.exp(sums))
    exponent = spec.integrate(lambda z: np.expm1(spec._eval(spec.f, z)))
    analytic = math.exp(exponent)
    if not math.isfinite(analytic):
        raise DivergentIntegralError(f"{spec.name}: Laplace functional diverges")
    return IdentityReport("laplace", spec.name, mc, analytic, std_err, n_reps)


def moment_check(spec: PoissonMeasureSpec, n_reps: int,
                 rng: np.random.Generator) -> Tuple[IdentityReport, IdentityReport]:
    """Mean and variance of int f dxi against int f dnu and int f^2 dnu."""
    points, owners, _ = spec.sample(n_reps, rng)
    sums = np.bincount(owners, weights=spec._eval(spec.f, points), minlength=n_reps)
    mean, mean_err = _mean_and_error(sums)
    centred = sums - sums.mean()
    variance = float(np.mean(centred ** 2) * n_reps / max(n_reps - 1, 1))
    fourth = float(np.mean(centred ** 4))
    var_err = math.sqrt(max(fourth - variance ** 2, 0.0) / n_reps)
    mean_report = IdentityReport("moment-mean", spec.name, mean,
                                 spec.integrate(spec.f), mean_err, n_reps)
    var_report = IdentityReport("moment-variance", spec.name, variance,
                                spec.integrate(lambda z: spec._eval(spec.f, z) ** 2), var_err, n_reps)
    return mean_report, var_report


def product_identity_check(spec: PoissonMeasureSpec, n_reps: int,
                           rng: np.random.Generator) -> IdentityReport:
    """E prod g(Z_i) against exp(int (g - 1) dnu)."""
    points, owners, _ = spec.sample(n_reps, rng)
    with np.errstate(divide="ignore"):
        logs = np.log(np.clip(spec._eval(spec.g, points), 0.0, None))
    products = np.exp(np.bincount(owners, weights=logs, minlength=n_reps))
    mc, std_err = _mean_and_error(products)
    analytic = math.exp(spec.integrate(lambda z: spec._eval(spec.g, z) - 1.0))
    return IdentityReport("product", spec.name, mc, analytic, std_err, n_reps)


def _pair_sum(z: np.ndarray, spec: PoissonMeasureSpec) -> float:
    n = len(z)
    if n < 2:
        return 0.0
    g = spec._eval(spec.g, z)
    rates = np.asarray(spec.r(z[:, None], z[None, :]), dtype=float) * np.ones((n, n))
    np.fill_diagonal(rates, 0.0)
    if np.all(g > 0):
        others = np.prod(g) / np.outer(g, g)
    else:
        others = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                mask = np.ones(n, dtype=bool)
                mask[[i, j]] = False
                others[i, j] = np.prod(g[mask])
    return float(np.sum(rates * others))


def pairwise_identity_check(spec: PoissonMeasureSpec, n_reps: int,
                            rng: np.random.Generator) -> IdentityReport:
    """E sum_{i != j} r(Z_i, Z_j) prod_{k != i,j} g(Z_k) against (int int r) exp(int (g - 1))."""
    points, owners, counts = spec.sample(n_reps, rng)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    values = np.array([_pair_sum(points[offsets[i]:offsets[i + 1]], spec) for i in range(n_reps)])
    mc, std_err = _mean_and_error(values)
    analytic = spec.double_integral(spec.r) * math.exp(
        spec.integrate(lambda z: spec._eval(spec.g, z) - 1.0))
    return IdentityReport("pairwise", spec.name, mc, analytic, std_err, n_reps)


def run_identity_checks(spec: PoissonMeasureSpec, n_reps: int,
                        rng: np.random.Generator) -> List[IdentityReport]:
    """All identities for one spec, in a fixed order."""
    reports = [laplace_functional_check(spec, n_reps, rng)]
    reports.extend(moment_check(spec, n_reps, rng))
    reports.append(product_identity_check(spec, n_reps, rng))
    reports.append(pairwise_identity_check(spec, n_reps, rng))
    for report in reports:
        logger.info(f"{report.identity}/{report.spec}: mc={report.mc:.6g} "
                    f"analytic={report.analytic:.6g} se={report.std_err:.3g} "
                    f"{'pass' if report.passed else 'fail'}")
    return reports


def _narrow_density(z):
    return 5.0 * np.exp(-0.5 * ((np.asarray(z) - 0.5) / 0.02) ** 2) / (0.02 * math.sqrt(2 * math.pi))


def default_specs() -> List[PoissonMeasureSpec]:
    """The three configured specs used by the poisson-identities suite."""
    return [
        PoissonMeasureSpec(
            name="uniform-mass-2", a=0.0, b=1.0,
            density=lambda z: 2.0 * np.ones_like(z),
            f=lambda z: -z,
            g=lambda z: 1.0 - z / 2.0,
            r=lambda x, y: x * y,
        ),
        PoissonMeasureSpec(
            name="narrow-mass-5", a=0.0, b=1.0,
            density=_narrow_density,
            f=lambda z: 0.1 * np.ones_like(z),
            g=lambda z: 0.5 * np.ones_like(z),
            r=lambda x, y: np.ones(np.broadcast(x, y).shape),
            breakpoints=(0.5,),
        ),
        PoissonMeasureSpec(
            name="linear-mass-4", a=0.0, b=2.0,
            density=lambda z: 1.0 + z,
            f=lambda z: np.sin(np.pi * z),
            g=lambda z: np.exp(-z / 4.0),
            r=lambda x, y: np.exp(-np.abs(x - y)),
        ),
    ]
