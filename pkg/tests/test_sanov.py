"""Empirical large-deviation rates against the quadratic closed form."""

import math

import numpy as np
import pytest
from scipy.stats import norm

from pathkl import (
    ArgumentError,
    CapabilityError,
    InitialLaw,
    InsufficientSamplingError,
    RateExperiment,
    TimeGrid,
    cramer_rate,
    empirical_rate,
    make_model,
)


def _bm_setup(steps=16):
    return (make_model("brownian", {}), InitialLaw.point_mass([0.0]),
            TimeGrid.uniform(1.0, steps))


def _finite_n_rate(z, n):
    """Exact exceedance rate for the terminal value of driftless unit
    diffusion: the N-sample mean is Gaussian with variance 1/N."""
    p = norm.sf(z * math.sqrt(n))
    return -math.log(p) / n


# ---------------------------------------------------------------------------
# experiment validation


def test_experiment_validation():
    with pytest.raises(ArgumentError):
        RateExperiment("median", 1.0, (5, 10))
    with pytest.raises(ArgumentError):
        RateExperiment("terminal", 1.0, (10, 5))
    with pytest.raises(ArgumentError):
        RateExperiment("terminal", 1.0, (5, 5))
    with pytest.raises(ArgumentError):
        RateExperiment("terminal", 1.0, (0, 5))
    with pytest.raises(ArgumentError):
        RateExperiment("terminal", 1.0, ())
    with pytest.raises(ArgumentError):
        RateExperiment("terminal", 1.0, (5, 10), trials=50)


# ---------------------------------------------------------------------------
# closed-form rate


def test_cramer_zero_threshold():
    spec, _, grid = _bm_setup()
    assert cramer_rate(spec, 0.0, 1.0) == 0.0


def test_cramer_reference_values():
    spec, _, _ = _bm_setup()
    assert cramer_rate(spec, 1.0, 1.0) == pytest.approx(0.5, abs=1e-15)
    assert cramer_rate(spec, 2.0, 4.0) == pytest.approx(0.5, abs=1e-15)
    assert cramer_rate(spec, 2.0, 1.0) == pytest.approx(2.0, abs=1e-15)


def test_cramer_diffusion_scaling():
    spec = make_model("brownian", {"a": 2.0})
    assert cramer_rate(spec, 1.0, 1.0) == pytest.approx(0.25, abs=1e-15)


def test_cramer_capability_limits():
    with pytest.raises(CapabilityError):
        cramer_rate(make_model("ou", {"gamma": 1.0}), 1.0, 1.0)
    with pytest.raises(CapabilityError):
        cramer_rate(make_model("constant_drift", {"theta": 1.0}), 1.0, 1.0)
    with pytest.raises(CapabilityError):
        cramer_rate(make_model("sine_diffusion", {}), 1.0, 1.0)
    with pytest.raises(CapabilityError):
        cramer_rate(make_model("brownian", {}, dim=2), 1.0, 1.0)


# ---------------------------------------------------------------------------
# Monte Carlo table


def test_threshold_below_bulk_gives_tiny_rates():
    spec, init, grid = _bm_setup()
    exp = RateExperiment("terminal", -10.0, (2, 5), trials=500, seed=0)
    table = empirical_rate(spec, init, grid, exp)
    for row in table.rows:
        assert row.p_hat == 1.0
        assert row.rate == 0.0


def test_rates_match_exact_finite_n():
    spec, init, grid = _bm_setup()
    exp = RateExperiment("terminal", 1.0, (2, 5, 10), trials=10_000,
                         seed=0)
    table = empirical_rate(spec, init, grid, exp)
    for row in table.rows:
        exact = _finite_n_rate(1.0, row.n)
        assert not row.zero_count
        assert row.rate == pytest.approx(exact,
                                         abs=max(3 * row.std_error, 0.01))
        assert row.oracle == pytest.approx(0.5, abs=1e-15)


def test_rates_decrease_toward_oracle():
    spec, init, grid = _bm_setup()
    exp = RateExperiment("terminal", 1.0, (2, 5, 10), trials=10_000,
                         seed=1)
    table = empirical_rate(spec, init, grid, exp)
    rows = table.rows
    for lo, hi in zip(rows[1:], rows):
        slack = 2 * math.hypot(lo.std_error, hi.std_error)
        assert lo.rate <= hi.rate + slack
    assert rows[-1].rate >= rows[-1].oracle - 2 * rows[-1].std_error


def test_zero_count_row_flagged():
    spec, init, grid = _bm_setup()
    exp = RateExperiment("terminal", 1.0, (2, 40), trials=1000, seed=0)
    table = empirical_rate(spec, init, grid, exp)
    assert not table.rows[0].zero_count
    # P(mean of 40 > 1) ~ 1e-10: certain zero at this budget
    assert table.rows[1].zero_count
    assert table.rows[1].rate == math.inf
    assert table.rows[1].std_error == math.inf


def test_all_zero_counts_raise():
    spec, init, grid = _bm_setup()
    exp = RateExperiment("terminal", 6.0, (10,), trials=200, seed=0)
    with pytest.raises(InsufficientSamplingError):
        empirical_rate(spec, init, grid, exp)


def test_rate_monotone_in_threshold():
    spec, init, grid = _bm_setup()
    out = {}
    for z in (0.5, 1.0):
        exp = RateExperiment("terminal", z, (5,), trials=5000, seed=2)
        out[z] = empirical_rate(spec, init, grid, exp).rows[0].rate
    assert out[1.0] > out[0.5]


def test_thread_count_does_not_change_counts():
    spec, init, grid = _bm_setup()
    exp = RateExperiment("terminal", 1.0, (2, 5), trials=2000, seed=3)
    t1 = empirical_rate(spec, init, grid, exp, threads=1)
    t4 = empirical_rate(spec, init, grid, exp, threads=4)
    assert [r.count for r in t1.rows] == [r.count for r in t4.rows]
    assert [r.rate for r in t1.rows] == [r.rate for r in t4.rows]


def test_time_average_observable():
    # time average of driftless unit diffusion ~ N(0, T/3)
    spec, init, grid = _bm_setup(steps=64)
    exp = RateExperiment("time_average", 0.5, (2, 4), trials=10_000,
                         seed=4)
    table = empirical_rate(spec, init, grid, exp)
    for row in table.rows:
        sd = math.sqrt(1.0 / 3.0 / row.n)
        exact = -math.log(norm.sf(0.5 / sd)) / row.n
        assert row.rate == pytest.approx(exact,
                                         abs=max(4 * row.std_error, 0.02))
        # the quadratic closed form covers the terminal observable only
        assert row.oracle is None


def test_oracle_column_attached_and_optional():
    spec, init, grid = _bm_setup()
    exp = RateExperiment("terminal", 1.0, (2,), trials=500, seed=5)
    with_o = empirical_rate(spec, init, grid, exp)
    without = empirical_rate(spec, init, grid, exp, with_oracle=False)
    assert with_o.rows[0].oracle == pytest.approx(0.5)
    assert without.rows[0].oracle is None
    assert with_o.rows[0].count == without.rows[0].count


def test_oracle_silently_skipped_when_unavailable():
    grid = TimeGrid.uniform(1.0, 16)
    spec = make_model("ou", {"gamma": 0.2})
    exp = RateExperiment("terminal", 0.5, (2,), trials=2000, seed=6)
    table = empirical_rate(spec, InitialLaw.point_mass([0.0]), grid, exp)
    assert table.rows[0].oracle is None
    assert table.rows[0].rate > 0.0
