"""Percentile bootstrap over the adjustment pipeline."""

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from switchadjust.adjusters import atse_adjust, oracle_estimate
from switchadjust.errors import BootstrapError, ConfigError, NonIdentifiableError
from switchadjust.inference import BootstrapSpec, bootstrap_ci, resample
from switchadjust.simulate import scenario_preset, simulate_external, simulate_rct, stream


@pytest.fixture(scope="module")
def trial():
    spec = scenario_preset(1)
    return simulate_rct(spec, stream(201, 0)), simulate_external(spec, stream(201, 1))


def oracle(rct, external):
    return oracle_estimate(rct)


class TestSpec:
    @pytest.mark.parametrize("bad", [dict(replicates=0), dict(level=1.0), dict(level=0.0)])
    def test_validation(self, bad):
        with pytest.raises(ConfigError):
            BootstrapSpec(**bad)


class TestResample:
    def test_strata_sizes_preserved(self, trial):
        rct, ext = trial
        rct_b, ext_b = resample(rct, ext, stream(1))
        assert len(rct_b) == len(rct) and len(ext_b) == len(ext)
        assert rct_b.arm.sum() == rct.arm.sum()
        assert set(rct_b.id) <= set(rct.id) and set(ext_b.id) <= set(ext.id)

    def test_unstratified_keeps_cohorts_apart(self, trial):
        rct, ext = trial
        rct_b, ext_b = resample(rct, ext, stream(2), stratified=False)
        assert set(rct_b.source) == {"rct"} and set(ext_b.source) == {"external"}

    def test_without_external(self, trial):
        _, ext_b = resample(trial[0], None, stream(3))
        assert ext_b is None


class TestBootstrap:
    def test_single_replicate_collapses(self, trial):
        res = bootstrap_ci(trial[0], None, oracle, spec=BootstrapSpec(replicates=1, seed=4))
        assert res.lower == res.upper == res.estimates[0]

    def test_constant_estimand(self, trial):
        res = bootstrap_ci(*trial, oracle, extractor=lambda r: 3.0, spec=BootstrapSpec(replicates=20))
        assert res.lower == res.upper == res.point == 3.0

    def test_interval_brackets_point(self, trial):
        res = bootstrap_ci(trial[0], None, oracle, spec=BootstrapSpec(replicates=200, seed=5))
        assert res.lower < res.point < res.upper
        assert res.failures == 0
        assert res.to_dict()["B"] == 200

    def test_deterministic_and_worker_independent(self, trial):
        method = lambda r, e: atse_adjust(r, e, c=4.0)
        spec = BootstrapSpec(replicates=30, seed=6)
        a = bootstrap_ci(*trial, method, spec=spec)
        b = bootstrap_ci(*trial, method, spec=spec, workers=4)
        assert_array_equal(a.estimates, b.estimates)
        assert (a.lower, a.upper) == (b.lower, b.upper)

    def test_failures_counted_then_fatal(self, trial):
        calls = {"n": 0}

        def flaky(rct, external):
            calls["n"] += 1
            if calls["n"] > 1 and calls["n"] % 20 == 0:
                raise NonIdentifiableError("no events")
            return oracle_estimate(rct)

        res = bootstrap_ci(trial[0], None, flaky, spec=BootstrapSpec(replicates=40, seed=7))
        assert res.failures == 2 and np.isnan(res.estimates).sum() == 2

        def broken(rct, external):
            calls["n"] += 1
            if calls["n"] > 1 and calls["n"] % 3 == 0:
                raise NonIdentifiableError("no events")
            return oracle_estimate(rct)

        calls["n"] = 0
        with pytest.raises(BootstrapError):
            bootstrap_ci(trial[0], None, broken, spec=BootstrapSpec(replicates=30, seed=8))

    def test_programming_errors_propagate(self, trial):
        def bad(rct, external):
            raise KeyError("oops")

        with pytest.raises(KeyError):
            bootstrap_ci(trial[0], None, bad, spec=BootstrapSpec(replicates=2))
