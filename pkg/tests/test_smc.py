import numpy as np
import pytest
from scipy import stats

from abcts.abc_core import AbcKernel
from abcts.models import CapabilityError, LinearGaussianHMM, NormalLocation, ObservationSeries, StochasticVolatility
from abcts.smc import (
    BootstrapPropagator,
    CollapsedPropagator,
    FilterCollapsedError,
    GuidedPropagator,
    InflatedGaussianProposal,
    ParticleSystem,
    alive_smc_filter,
    filter_expectation,
    multinomial_indices,
    resample_multinomial,
    run_filter,
    smc_abc_filter,
)
from abcts.stochastics import rng_stream

DEGENERATE = LinearGaussianHMM(ar=1.0, trans_var=0.0, init_var=1.0, obs_sd=1.0)
IID = LinearGaussianHMM(ar=0.0, trans_var=1.0, init_var=1.0, obs_sd=1.0)
THETA = np.array([0.3])


def _ps(weights):
    n = len(weights)
    return ParticleSystem(np.arange(n, dtype=float)[:, None], np.zeros((n, 1)), np.asarray(weights, float), 1)


def _mean_and_se(logs):
    v = np.exp(np.asarray(logs))
    return v.mean(), v.std(ddof=1) / np.sqrt(len(v))


def test_resample_uniform_chi_square():
    rng = rng_stream(1)
    counts = np.zeros(10)
    for _ in range(10**4):
        counts += np.bincount(multinomial_indices(np.ones(10), rng), minlength=10)
    assert stats.chisquare(counts).pvalue > 0.01


def test_resample_single_positive_weight():
    ps = resample_multinomial(_ps([0, 0, 3.0, 0]), rng_stream(2))
    assert np.all(ps.states[:, 0] == 2.0) and np.all(ps.weights == 1.0)


def test_resample_expected_offspring():
    w = np.array([1.0, 2.0, 3.0, 4.0])
    rng = rng_stream(3)
    counts = np.zeros(4)
    reps = 20000
    for _ in range(reps):
        counts += np.bincount(multinomial_indices(w, rng), minlength=4)
    expected = 4 * w / w.sum()
    sd = np.sqrt(4 * (w / w.sum()) * (1 - w / w.sum()) / reps)
    assert np.all(np.abs(counts / reps - expected) < 4 * sd)


def test_resample_collapsed_is_propagated():
    ps = _ps([0.0, 0.0])
    assert resample_multinomial(ps, rng_stream(4)) is ps and ps.collapsed


def test_bootstrap_weights_are_indicators():
    y = DEGENERATE.simulate(THETA, 5, rng_stream(5))[0]
    res = smc_abc_filter(DEGENERATE, THETA, y, AbcKernel(0.8), 200, rng_stream(6))
    assert set(np.unique(res.particles.weights)) <= {0.0, 1.0}
    h = res.history
    assert np.allclose(h.log_nc_factor, np.log(h.hits / 200 / 1.6))


def test_huge_eps_exact_nc():
    y = DEGENERATE.simulate(THETA, 4, rng_stream(7))[0]
    eps = 1e6
    for kind in ("standard", "alive"):
        res = run_filter(kind, DEGENERATE, THETA, y, AbcKernel(eps), 10, rng_stream(8))
        assert res.estimate.log_value == pytest.approx(-4 * np.log(2 * eps), rel=1e-14)
        assert np.allclose(res.estimate.per_step_log_factors, -np.log(2 * eps))
        if kind == "alive":
            assert np.all(res.estimate.trial_counts == 10)


@pytest.mark.parametrize("kind", ["standard", "alive"])
def test_nc_unbiased_degenerate_toy(kind):
    y = ObservationSeries([[0.4], [1.1]])
    kernel = AbcKernel(0.5)
    exact = np.exp(DEGENERATE.abc_loglik(THETA, y, 0.5))
    rng = rng_stream(9)
    logs = [run_filter(kind, DEGENERATE, THETA, y, kernel, 20, rng).estimate.log_value for _ in range(20000)]
    mean, se = _mean_and_se(logs)
    assert abs(mean - exact) < 3.5 * se


def test_guided_proposal_unbiased():
    y = IID.simulate(THETA, 3, rng_stream(10))[0]
    kernel = AbcKernel(0.7)
    exact = np.exp(IID.abc_loglik(THETA, y, 0.7))
    prop = GuidedPropagator(IID, InflatedGaussianProposal(IID, 1.5))
    rng = rng_stream(11)
    logs = [smc_abc_filter(IID, THETA, y, kernel, 30, rng, prop).estimate.log_value for _ in range(10000)]
    mean, se = _mean_and_se(logs)
    assert abs(mean - exact) < 3.5 * se


def test_collapsed_density_route_unbiased():
    y = IID.simulate(THETA, 3, rng_stream(12))[0]
    kernel = AbcKernel(0.7)
    exact = np.exp(IID.abc_loglik(THETA, y, 0.7))
    prop = CollapsedPropagator(IID, use_samplers=False)
    assert not prop.binary_weights
    rng = rng_stream(13)
    logs = [smc_abc_filter(IID, THETA, y, kernel, 30, rng, prop).estimate.log_value for _ in range(10000)]
    mean, se = _mean_and_se(logs)
    assert abs(mean - exact) < 3.5 * se


def test_hidden_transition_routes_through_noise():
    model = LinearGaussianHMM(hide_transition_density=True)
    y = model.simulate(THETA, 5, rng_stream(14))[0]
    with pytest.raises(CapabilityError):
        smc_abc_filter(model, THETA, y, AbcKernel(1.0), 50, rng_stream(15),
                       GuidedPropagator(model, InflatedGaussianProposal(model)))
    res = smc_abc_filter(model, THETA, y, AbcKernel(1.0), 50, rng_stream(15), CollapsedPropagator(model))
    assert res.estimate.finite


def test_stable_observation_noise_falls_back_to_sampler():
    # the stable noise has no density, so it is always simulated; eta may be importance sampled
    prop = CollapsedPropagator(StochasticVolatility(), use_samplers=False)
    assert prop.phi_q is None and prop.eta_q is not None and not prop.binary_weights
    assert CollapsedPropagator(StochasticVolatility()).binary_weights


def test_noise_stream_without_sampler_or_density():
    class Opaque(LinearGaussianHMM):
        def sample_phi(self, theta, rng, size):
            raise CapabilityError("no sampler")

        def phi_logpdf(self, theta, phi):
            raise CapabilityError("no density")

    with pytest.raises(CapabilityError):
        CollapsedPropagator(Opaque())


def test_alive_rejects_weighted_propagators():
    y = IID.simulate(THETA, 3, rng_stream(16))[0]
    with pytest.raises(CapabilityError):
        alive_smc_filter(IID, THETA, y, AbcKernel(1.0), 10, rng_stream(17), CollapsedPropagator(IID, use_samplers=False))


def test_filters_reject_iid_models():
    with pytest.raises(CapabilityError):
        smc_abc_filter(NormalLocation(), np.zeros(1), ObservationSeries([[0.0]]), AbcKernel(1.0), 10, rng_stream(1))


def test_alive_needs_two_particles():
    with pytest.raises(ValueError):
        alive_smc_filter(IID, THETA, ObservationSeries([[0.0]]), AbcKernel(1.0), 1, rng_stream(1))


def test_collapse_vs_alive_tiny_eps():
    y = IID.simulate(THETA, 20, rng_stream(18))[0]
    kernel = AbcKernel(0.01)
    rng = rng_stream(19)
    collapsed = sum(not smc_abc_filter(IID, THETA, y, kernel, 20, rng).estimate.finite for _ in range(200))
    alive = [alive_smc_filter(IID, THETA, y, kernel, 20, rng).estimate for _ in range(200)]
    assert collapsed / 200 > 0.99
    assert all(e.finite for e in alive)
    assert all(np.all(e.trial_counts >= 20) for e in alive)


def test_collapse_is_recorded():
    y = ObservationSeries([[0.0], [100.0], [0.0]])
    res = smc_abc_filter(IID, THETA, y, AbcKernel(0.1), 20, rng_stream(20))
    assert res.estimate.log_value == -np.inf and res.estimate.collapsed_at == 2
    assert res.particles.collapsed


def test_alive_cap_failure_is_flagged():
    y = ObservationSeries([[0.0], [100.0]])
    res = alive_smc_filter(IID, THETA, y, AbcKernel(0.1), 5, rng_stream(21), cap=5000)
    est = res.estimate
    assert est.log_value == -np.inf and est.capped_at == 2 and est.collapsed_at is None
    assert est.trial_counts[-1] >= 5000


def test_alive_keeps_n_minus_one():
    y = IID.simulate(THETA, 4, rng_stream(22))[0]
    res = alive_smc_filter(IID, THETA, y, AbcKernel(0.5), 25, rng_stream(23))
    assert len(res.particles) == 24
    assert np.all(AbcKernel(0.5).hits(res.particles.aux, y.data[-1]))


def test_filter_expectation_basics():
    ps = _ps([0.2, 0.0, 1.0])
    assert filter_expectation(ps, lambda x, u: np.ones(len(x))) == pytest.approx(1.0)
    single = _ps([1.0])
    assert filter_expectation(single, lambda x, u: x[:, 0]) == 0.0
    with pytest.raises(FilterCollapsedError):
        filter_expectation(_ps([0.0, 0.0]), lambda x, u: x[:, 0])


def test_filter_mean_matches_quadrature():
    y = ObservationSeries([[0.9], [1.4]])
    eps = 0.5
    xs = np.linspace(-6, 6, 4001)
    lo, hi = y.data[:, 0][:, None] - eps, y.data[:, 0][:, None] + eps
    alpha = stats.norm.cdf(hi - xs) - stats.norm.cdf(lo - xs)
    post = stats.norm.pdf(xs, THETA[0], 1.0) * alpha.prod(axis=0)
    exact = np.trapezoid(xs * post, xs) / np.trapezoid(post, xs)
    rng = rng_stream(24)
    # unbiased ratio estimate: sum of NC * filter mean over sum of NC
    num = den = 0.0
    for _ in range(5000):
        res = smc_abc_filter(DEGENERATE, THETA, y, AbcKernel(eps), 50, rng)
        if res.estimate.finite:
            z = np.exp(res.estimate.log_value)
            num += z * filter_expectation(res.particles, lambda x, u: x[:, 0])
            den += z
    means = []
    for _ in range(300):
        res = alive_smc_filter(DEGENERATE, THETA, y, AbcKernel(eps), 200, rng)
        means.append(filter_expectation(res.particles, lambda x, u: x[:, 0]))
    assert num / den == pytest.approx(exact, abs=0.02)
    assert np.mean(means) == pytest.approx(exact, abs=max(0.02, 3 * np.std(means) / np.sqrt(300)))


def test_filter_replay():
    y = IID.simulate(THETA, 10, rng_stream(25))[0]
    for kind in ("standard", "alive"):
        a = run_filter(kind, IID, THETA, y, AbcKernel(0.5), 30, rng_stream(26)).estimate.log_value
        b = run_filter(kind, IID, THETA, y, AbcKernel(0.5), 30, rng_stream(26)).estimate.log_value
        assert a == b


def test_systematic_resampling_runs():
    y = IID.simulate(THETA, 10, rng_stream(27))[0]
    res = smc_abc_filter(IID, THETA, y, AbcKernel(1.0), 50, rng_stream(28), resampling="systematic")
    assert res.estimate.finite
