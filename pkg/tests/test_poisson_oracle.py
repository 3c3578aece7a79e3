import sys
import os
import math
import numpy as np
import pytest
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from utils.poisson_oracle import (IdentityReport, PoissonMeasureSpec, default_specs, laplace_functional_check,
                                  moment_check, pairwise_identity_check, product_identity_check,
                                  run_identity_checks)


def _uniform():
    return default_specs()[0]


def _within(report, sigmas=5.0):
    return abs(report.mc - report.analytic) <= sigmas * report.std_err + 1e-9


def test_default_spec_masses():
    """Test the total masses of the configured measures"""
    masses = [spec.mass() for spec in default_specs()]
    assert masses == pytest.approx([2.0, 5.0, 4.0], rel=1e-6)


def test_empty_carrier_rejected():
    """Test that an empty interval is refused"""
    with pytest.raises(ValueError):
        PoissonMeasureSpec("bad", 1.0, 1.0, density=lambda z: np.ones_like(z))


def test_sample_counts_and_support():
    """Test that samples stay on the carrier and owners match counts"""
    spec = default_specs()[2]
    points, owners, counts = spec.sample(500, np.random.default_rng(0))
    assert len(points) == counts.sum()
    assert np.all((points >= spec.a) & (points <= spec.b))
    assert np.array_equal(np.bincount(owners, minlength=500), counts)


def test_closed_form_targets():
    """Test analytic sides of the identities on the uniform measure"""
    spec = _uniform()
    rng = np.random.default_rng(11)
    laplace = laplace_functional_check(spec, 2000, rng)
    assert laplace.analytic == pytest.approx(math.exp(-2.0 / math.e), rel=1e-8)
    mean, variance = moment_check(spec, 2000, rng)
    assert mean.analytic == pytest.approx(-1.0)
    assert variance.analytic == pytest.approx(2.0 / 3.0)
    product = product_identity_check(spec, 2000, rng)
    assert product.analytic == pytest.approx(math.exp(-0.5))
    pairwise = pairwise_identity_check(spec, 2000, rng)
    assert pairwise.analytic == pytest.approx(math.exp(-0.5), rel=1e-6)


def test_identities_hold_by_monte_carlo():
    """Test every identity on every configured measure"""
    rng = np.random.default_rng(2024)
    for spec in default_specs():
        reports = run_identity_checks(spec, 20_000, rng)
        assert [r.identity for r in reports] == \
            ["laplace", "moment-mean", "moment-variance", "product", "pairwise"]
        for report in reports:
            assert _within(report), f"{report.identity}/{report.spec}: {report.mc} vs {report.analytic}"


def test_identity_report_verdict():
    """Test the pass rule and csv row of a report"""
    report = IdentityReport("laplace", "s", 1.05, 1.0, 0.01, 100)
    assert not report.passed
    assert report.row()[-1] == "fail"
    assert IdentityReport("laplace", "s", 1.02, 1.0, 0.01, 100).passed
