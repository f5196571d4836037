import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bregbayes.errors import InvalidArgumentError, UnsupportedOperationError
from bregbayes.models import make_model
from bregbayes.sampler import (
    ChainConfig,
    SampleSet,
    integrated_autocorr_time,
    posterior_mean,
    sample,
    summary,
)

EULER_GAMMA = 0.5772156649015329


def within(mean, ref, se, k=3.0):
    return np.all(np.abs(np.asarray(mean) - np.asarray(ref)) <= k * np.asarray(se))


# -- exact sampling -----------------------------------------------------------


def test_gaussian_exact_mean():
    s = sample(make_model("gaussian", {"mu": [1.0, 2.0]}), ChainConfig("exact", 100_000, seed=1))
    mean, se = posterior_mean(s)
    assert within(mean, [1.0, 2.0], 1 / math.sqrt(1e5))
    assert within(mean, [1.0, 2.0], se)


def test_exp_linear_exact_mean():
    s = sample(make_model("exp_linear"), ChainConfig("exact", 100_000, seed=2))
    mean, se = posterior_mean(s)
    assert within(mean, [-EULER_GAMMA], se)


def test_exponential_cone_exact_mean():
    s = sample(make_model("exponential_cone", {"n": 3}), ChainConfig("exact", 100_000, seed=3))
    mean, se = posterior_mean(s)
    assert within(mean, np.ones(3), se)


def test_constant_draws():
    s = SampleSet(np.full((10, 2), 3.5), "exact", 0)
    mean, se = posterior_mean(s)
    np.testing.assert_array_equal(mean, [3.5, 3.5])
    np.testing.assert_array_equal(se, [0.0, 0.0])


def test_posterior_mean_needs_two_draws():
    with pytest.raises(InvalidArgumentError):
        posterior_mean(SampleSet(np.zeros((1, 1)), "exact", 0))


def test_exact_requires_recipe():
    inst = make_model("gaussian")
    bare = type(inst)(inst.name, inst.potential)
    with pytest.raises(UnsupportedOperationError):
        sample(bare, ChainConfig("exact", 10))


# -- determinism --------------------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**63 - 1), st.sampled_from(["exact", "ula", "mala"]))
def test_seed_determinism(seed, algorithm):
    inst = make_model("gaussian", {"mu": [0.5, -0.5]})
    cfg = ChainConfig(algorithm, 300, seed=seed, n_chains=2)
    a, b = sample(inst, cfg), sample(inst, cfg)
    np.testing.assert_array_equal(a.draws, b.draws)
    assert a.acceptance_rate == b.acceptance_rate


def test_threads_do_not_change_draws():
    inst = make_model("gaussian", {"n": 3})
    cfg = ChainConfig("mala", 1001, seed=4, n_chains=3)
    a, b = sample(inst, cfg, threads=1), sample(inst, cfg, threads=3)
    np.testing.assert_array_equal(a.draws, b.draws)
    assert a.acceptance_rate == b.acceptance_rate
    assert a.draws.shape == (1001, 3)


def test_chains_use_distinct_streams():
    s = sample(make_model("gaussian"), ChainConfig("ula", 2000, seed=5, n_chains=2))
    a, b = s.draws[:1000], s.draws[1000:]
    assert not np.allclose(a, b)


# -- MCMC behaviour -----------------------------------------------------------


def test_default_burn_in():
    s = sample(make_model("gaussian"), ChainConfig("ula", 1000, seed=0))
    assert s.burn_in == 100
    assert sample(make_model("gaussian"), ChainConfig("exact", 1000)).burn_in == 0


def test_auto_step_is_inverse_l_plus_m():
    s = sample(make_model("gaussian", {"cov": 0.25}), ChainConfig("ula", 100, seed=0))
    assert s.step == pytest.approx(1.0 / (4.0 + 4.0))


@pytest.mark.parametrize("n", [2, 10, 50])
def test_mala_acceptance_band(n):
    s = sample(make_model("gaussian", {"n": n}), ChainConfig("mala", 20_000, seed=6, n_chains=4))
    assert 0.3 <= s.acceptance_rate <= 0.9


@pytest.mark.xfail(strict=True, reason="with step 1/(L+m) the acceptance at n=100 is about 0.22, below the 0.3 band")
def test_mala_acceptance_band_n100():
    s = sample(make_model("gaussian", {"n": 100}), ChainConfig("mala", 20_000, seed=6, n_chains=4))
    assert 0.3 <= s.acceptance_rate <= 0.9


def test_mala_low_acceptance_warns():
    with pytest.warns(RuntimeWarning, match="acceptance"):
        s = sample(make_model("gaussian", {"n": 5}), ChainConfig("mala", 500, seed=0, step=50.0))
    assert s.low_acceptance


def test_mala_draws_stay_in_domain():
    inst = make_model("truncated_gaussian_box")
    s = sample(inst, ChainConfig("mala", 5000, seed=7, n_chains=2))
    assert np.all(inst.potential.domain.contains(s.draws))
    mean, se = posterior_mean(s)
    assert within(mean, inst.true_mean, se, k=4)


def test_mala_mean_exp_linear():
    inst = make_model("exp_linear")
    s = sample(inst, ChainConfig("mala", 40_000, seed=8, step=0.5, n_chains=4))
    mean, se = posterior_mean(s)
    assert within(mean, [-EULER_GAMMA], se, k=4)


def test_ula_gaussian_variance_bias():
    # ULA on a standard Gaussian is an AR(1) with stationary variance 1 / (1 - step/2)
    inst = make_model("gaussian", {"n": 1})
    excess = []
    for step in (0.5, 0.25, 0.125):
        s = sample(inst, ChainConfig("ula", 400_000, seed=9, step=step, n_chains=400, burn_in=200))
        mean, se = posterior_mean(s)
        assert within(mean, [0.0], se)  # no mean bias for a Gaussian target
        var = s.draws.var()
        assert var == pytest.approx(1.0 / (1.0 - step / 2), rel=0.02)
        excess.append(var - 1.0)
    assert 1.7 < excess[0] / excess[1] < 2.8
    assert 1.7 < excess[1] / excess[2] < 2.8


def test_ula_mean_bias_first_order():
    inst = make_model("exp_linear")
    bias, ses = [], []
    for step in (0.2, 0.1):
        s = sample(inst, ChainConfig("ula", 4_000_000, seed=10, step=step, n_chains=8000, burn_in=int(20 / step)))
        mean, se = posterior_mean(s)
        bias.append(mean[0] + EULER_GAMMA)
        ses.append(se[0])
        assert abs(bias[-1]) <= 0.5 * step + 3 * se[0]
    assert abs(bias[0]) > 5 * ses[0]
    assert 1.5 < bias[0] / bias[1] < 3.5


def test_ula_requires_smooth():
    with pytest.raises(UnsupportedOperationError):
        sample(make_model("laplace_iid"), ChainConfig("ula", 10, step=0.1))


def test_auto_step_needs_finite_lipschitz():
    with pytest.raises(InvalidArgumentError):
        sample(make_model("exp_linear"), ChainConfig("ula", 10))


def test_myula_needs_moreau():
    with pytest.raises(InvalidArgumentError):
        ChainConfig("myula", 10)


def test_myula_laplace_symmetric_mean():
    inst = make_model("laplace_iid", {"n": 2})
    s = sample(inst, ChainConfig("myula", 100_000, seed=11, moreau=0.05, n_chains=100))
    mean, se = posterior_mean(s)
    assert within(mean, [0.0, 0.0], se)


def test_myula_cauchy_as_moreau_halves():
    inst = make_model("laplace_iid", {"n": 2})
    means, ses = [], []
    for lam in (0.1, 0.05, 0.025):
        s = sample(inst, ChainConfig("myula", 200_000, seed=12, moreau=lam, n_chains=200))
        m, se = posterior_mean(s)
        means.append(m)
        ses.append(se)
    for a, b, sa, sb in zip(means, means[1:], ses, ses[1:]):
        assert np.all(np.abs(a - b) <= 3 * np.sqrt(sa**2 + sb**2))


def test_myula_second_moment_bias_shrinks():
    # E|x| = 1 under the Laplace target; the smoothed target inflates it by O(lam)
    inst = make_model("laplace_iid", {"n": 1})
    err = []
    for lam in (0.2, 0.05):
        s = sample(inst, ChainConfig("myula", 200_000, seed=13, moreau=lam, n_chains=200))
        err.append(abs(np.abs(s.draws).mean() - 1.0))
    assert err[1] < err[0]


# -- autocorrelation ----------------------------------------------------------


def test_iat_white_noise_and_ar1():
    rng = np.random.default_rng(14)
    assert integrated_autocorr_time(rng.standard_normal(20_000)) == pytest.approx(1.0, abs=0.15)
    rho, x = 0.9, np.empty(100_000)
    x[0] = 0
    e = rng.standard_normal(x.size)
    for i in range(1, x.size):
        x[i] = rho * x[i - 1] + e[i]
    assert integrated_autocorr_time(x) == pytest.approx((1 + rho) / (1 - rho), rel=0.15)


def test_summary_fields():
    s = sample(make_model("gaussian"), ChainConfig("exact", 100, seed=15))
    d = summary(s, "gaussian")
    assert list(d) == ["model", "algorithm", "N", "burn_in", "seed", "mean", "se", "acceptance_rate"]
    assert d["acceptance_rate"] is None and d["N"] == 100
