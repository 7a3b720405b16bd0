import math

import numpy as np
import pytest

from smcpricer.smc import SmcConfig
from smcpricer.unbiasedness import (
    TRACE_LOG_TOL,
    barrier_toy_instance,
    barrier_toy_oracle,
    tarn_toy_instance,
    tarn_toy_oracle,
    traced_run,
    unbiasedness_test,
)


class TestTracedRun:
    def test_no_resampling_single_segment(self):
        # wide corridor and unit-ish weights: the run never resamples, so
        # Z is the mean of the full-path weight products
        inst = barrier_toy_instance(lower_price=1.0, upper_price=1e6, weighting="none", psi="one")
        target, config, psi = inst.build((0,))
        run = traced_run(target, config, psi)
        assert run.trace.resample_steps == ()
        assert len(run.trace.log_segment_means) == 1
        assert run.z_estimate == pytest.approx(1.0, rel=1e-12)
        assert run.psi_hat == pytest.approx(1.0, rel=1e-12)

    def test_unit_everything_yields_exact_ones(self):
        inst = barrier_toy_instance(lower_price=1.0, upper_price=1e6, weighting="none", psi="one")
        target, config, psi = inst.build((3,))
        run = traced_run(target, config, psi)
        assert run.z_estimate == 1.0
        assert run.psi_hat == pytest.approx(1.0, rel=1e-12)

    def test_segment_identity_and_consistency(self):
        inst = barrier_toy_instance(psi="payoff", weighting="bridge")
        saw_midrun = 0
        for r in range(50):
            target, config, psi = inst.build((7, r))
            run = traced_run(target, config, psi)
            assert run.trace.consistency_error <= TRACE_LOG_TOL
            assert run.trace.max_identity_error <= TRACE_LOG_TOL
            assert run.trace.max_weight_sum_error <= 1e-12
            saw_midrun += run.midrun_resampled
        assert saw_midrun >= 15  # the toy is tuned to resample often

    def test_traced_run_requires_adaptive_mode(self):
        inst = barrier_toy_instance()
        target, config, psi = inst.build((1,))
        bad = SmcConfig(n_particles=config.n_particles, master_seed=config.master_seed,
                        resample_mode="always")
        with pytest.raises(ValueError):
            traced_run(target, bad, psi)


class TestBarrierToyOracle:
    def test_survival_mass_matches_closed_form(self):
        from scipy.stats import norm

        sigma, k = 0.2, 10
        t = k / 360.0
        mean = math.log(100.0) - 0.5 * sigma**2 * t
        std = sigma * math.sqrt(t)
        expected = norm.cdf((math.log(107.0) - mean) / std) - norm.cdf((math.log(99.0) - mean) / std)
        assert barrier_toy_oracle(psi="one") == pytest.approx(expected, rel=1e-12)

    def test_empty_payoff_region_is_zero(self):
        assert barrier_toy_oracle(upper_price=99.5, lower_price=99.0, strike_price=100.0) == 0.0


class TestUnbiasedness:
    def test_barrier_toy_survival(self):
        report = unbiasedness_test(
            barrier_toy_instance(psi="one"),
            replicates=400,
            oracle=barrier_toy_oracle(psi="one"),
            seed=(11,),
        )
        assert report.verdict == "pass"
        assert report.midrun_resample_rate >= 0.3
        assert report.max_identity_error <= TRACE_LOG_TOL

    def test_barrier_toy_call_payoff(self):
        report = unbiasedness_test(
            barrier_toy_instance(psi="payoff"),
            replicates=400,
            oracle=barrier_toy_oracle(psi="payoff"),
            seed=(12,),
        )
        assert report.verdict == "pass"

    def test_unit_potentials_reduce_to_plain_mc(self):
        report = unbiasedness_test(
            barrier_toy_instance(lower_price=1.0, upper_price=1e6, weighting="none", psi="payoff"),
            replicates=200,
            oracle=barrier_toy_oracle(lower_price=1.0, upper_price=1e6, psi="payoff"),
            seed=(13,),
            min_resample_rate=0.0,  # no weights, no resampling: plain MC
        )
        assert abs(report.z_score) <= 3.0
        assert report.resample_rate == 0.0

    def test_low_resampling_is_inconclusive_not_pass(self):
        report = unbiasedness_test(
            barrier_toy_instance(lower_price=1.0, upper_price=1e6, weighting="none", psi="one"),
            replicates=50,
            oracle=1.0,
            seed=(14,),
        )
        assert report.verdict == "inconclusive"

    def test_tarn_toy_against_large_mc(self):
        oracle, oracle_se = tarn_toy_oracle(n_paths=2_000_000, seed=55)
        report = unbiasedness_test(
            tarn_toy_instance(),
            replicates=400,
            oracle=oracle,
            oracle_se=oracle_se,
            seed=(15,),
        )
        assert report.verdict == "pass"
        assert report.max_identity_error <= TRACE_LOG_TOL
