import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from abcts.models import (
    MODELS,
    CapabilityError,
    GarchStable,
    GaussianScale,
    LinearGaussianHMM,
    NormalLocation,
    ObservationSeries,
    Proposal,
    StochasticVolatility,
    UsageError,
    log_prior,
    perturb_noisy,
    propose,
    simulate_hmm_sv,
    simulate_iid,
    simulate_odts_garch,
)
from abcts.stochastics import DomainError, rng_stream


def test_observation_series_validation():
    with pytest.raises(ValueError):
        ObservationSeries(np.array([[1.0], [np.nan]]))
    with pytest.raises(ValueError):
        ObservationSeries(np.empty((0, 1)))
    s = ObservationSeries([1.0, 2.0])
    assert (s.n, s.d_y) == (2, 1)
    with pytest.raises(ValueError):
        s.data[0, 0] = 5.0


def test_simulate_iid_normal_location():
    y = simulate_iid(NormalLocation(), [0.0], 1000, rng_stream(1))
    assert y.data.shape == (1000, 1)


def test_simulate_iid_single_draw():
    for model, theta in ((NormalLocation(), [0.0]), (GaussianScale(), [1.0])):
        assert simulate_iid(model, theta, 1, rng_stream(2)).data.shape == (1, 1)


def test_simulate_iid_mean_band():
    n = 10**4
    y = simulate_iid(NormalLocation(), [3.0], n, rng_stream(3))
    assert abs(y.data.mean() - 3.0) < 3 / np.sqrt(n)


def test_simulate_iid_support_error():
    with pytest.raises(DomainError):
        simulate_iid(GaussianScale(), [-1.0], 5, rng_stream(1))


def test_simulate_iid_rejects_hmm():
    with pytest.raises(CapabilityError):
        simulate_iid(LinearGaussianHMM(), [0.0], 5, rng_stream(1))


def test_garch_degenerate_recursion():
    y, x = simulate_odts_garch([0.7, 0.0, 0.0], 0.5, 1.5, 0.0, 200, rng_stream(4))
    assert x.states[0] == 0.5
    assert np.all(x.states[1:] == 0.7)


def test_garch_degenerate_is_iid_stable():
    from abcts.stochastics import StableParams, sample_stable

    y, _ = simulate_odts_garch([2.0, 0.0, 0.0], 2.0, 1.5, 0.0, 5000, rng_stream(5))
    ref = sample_stable(rng_stream(6), StableParams(1.5, 0.0, 2.0), 5000)
    assert stats.ks_2samp(y.data[1:, 0], ref).pvalue > 0.001


@given(
    b=st.tuples(st.floats(1e-3, 1.0), st.floats(0.0, 0.5), st.floats(0.0, 0.05)),
    x0=st.floats(1e-3, 2.0),
    seed=st.integers(0, 2**31),
)
def test_garch_volatility_positive(b, x0, seed):
    b = (b[0], max(b[1], 1e-6), max(b[2], 1e-6))
    try:
        _, x = simulate_odts_garch(b, x0, 1.5, 0.0, 100, rng_stream(seed))
    except DomainError:
        return  # heavy-tailed draw blew the recursion up; reported as an error, never as a bad path
    assert np.all(x.states > 0)


def test_garch_stationary_setting_runs_at_data_length():
    y, x = simulate_odts_garch([0.05, 0.3, 0.02], 0.5, 1.5, 0.0, 533, rng_stream(7))
    assert y.n == 533 and np.all(np.isfinite(y.data))


def test_garch_prior_draws_explode_with_clear_error():
    model = GarchStable()
    rng = rng_stream(8)
    failures = 0
    for _ in range(20):
        try:
            model.simulate(model.sample_prior(rng), 533, rng)
        except DomainError as exc:
            assert "explosive" in str(exc)
            failures += 1
    assert failures >= 18


@pytest.mark.parametrize(
    "bad", [([0.0, 0.1, 0.1], 0.5), ([0.1, -0.1, 0.1], 0.5), ([0.1, 0.1, -0.1], 0.5), ([0.1, 0.1, 0.1], 0.0)]
)
def test_garch_domain_errors(bad):
    with pytest.raises(DomainError):
        simulate_odts_garch(bad[0], bad[1], 1.5, 0.0, 10, rng_stream(1))


def test_garch_volatilities_match_simulation():
    model = GarchStable()
    theta = np.array([0.05, 0.3, 0.02, 0.5])
    y, x = model.simulate(theta, 300, rng_stream(9))
    assert np.allclose(model.volatilities(theta, y), x.states, rtol=1e-12)


def test_sv_pure_stable_noise():
    rng_a, rng_b = rng_stream(10), rng_stream(10)
    y, x = simulate_hmm_sv([1.0, 0.0, 0.0], (1.0, 1.75, 1.0), 50, rng_a)
    assert np.all(x.states == 0)
    m = StochasticVolatility(s1=1.0, s2=1.75, s3=1.0)
    m.sample_eta([1.0, 0.0, 0.0], rng_b, 1)
    assert y.data[0, 0] == m.sample_phi([1.0, 0.0, 0.0], rng_b, 1)[0, 0]


def test_sv_gaussian_reduction():
    theta = np.array([0.7, 0.05, 0.9])
    y, x = simulate_hmm_sv(theta, (1.0, 2.0, 0.0), 20000, rng_stream(11))
    ratio = y.data[:, 0] / (theta[0] * np.exp(x.states[:, 0]))
    assert stats.kstest(ratio, stats.norm(0, np.sqrt(2)).cdf).pvalue > 0.01


def test_sv_data_length_setting():
    y, _ = simulate_hmm_sv([1.0, 0.05, 0.9], (1.0, 1.75, 1.0), 533, rng_stream(12))
    assert y.n == 533 and np.all(np.isfinite(y.data))


def test_sv_negative_variance():
    with pytest.raises(DomainError):
        simulate_hmm_sv([1.0, -0.1, 0.5], (1.0, 1.75, 1.0), 5, rng_stream(1))


def test_perturb_within_ball():
    y = simulate_iid(NormalLocation(), [0.0], 2000, rng_stream(13))
    z = perturb_noisy(y, 1.0, rng_stream(14))
    d = z.data - y.data
    assert z.kind == "perturbed"
    assert np.all(np.abs(d) < 1.0)
    assert abs(d.mean()) < 3 / np.sqrt(3 * y.n)


def test_perturb_tiny_eps():
    y = simulate_iid(NormalLocation(), [0.0], 100, rng_stream(15))
    z = perturb_noisy(y, 1e-12, rng_stream(16))
    assert np.allclose(z.data, y.data, atol=1e-12, rtol=0)


def test_double_perturbation():
    y = simulate_iid(NormalLocation(), [0.0], 5, rng_stream(17))
    z = perturb_noisy(y, 1.0, rng_stream(18))
    with pytest.raises(UsageError):
        perturb_noisy(z, 1.0, rng_stream(19))


def test_log_prior_normal_location():
    assert log_prior(NormalLocation(), [0.0]) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)


def test_log_prior_garch_support():
    assert log_prior(GarchStable(), [0.0, 0.1, 0.1, 0.5]) == -np.inf
    assert log_prior(GarchStable(), [-0.1, 0.1, 0.1, 0.5]) == -np.inf


def test_log_prior_sv_components():
    theta = [0.0, 1 / 300, 1 / 150]
    expected = (
        stats.norm.logpdf(0.0, 0.0, np.sqrt(10.0))
        + stats.invgamma.logpdf(1 / 300, 2, scale=0.01)
        + stats.invgamma.logpdf(1 / 150, 2, scale=0.02)
    )
    assert log_prior(StochasticVolatility(), theta) == pytest.approx(expected, rel=1e-12)


def test_log_prior_garch_components():
    theta = [0.2, 0.3, 0.05, 1.0]
    expected = sum(stats.gamma.logpdf(v, 2, scale=8.0) for v in theta)
    assert log_prior(GarchStable(), theta) == pytest.approx(expected, rel=1e-12)


def test_propose_symmetric_rw():
    theta, lq = propose(Proposal((0.5,)), np.array([1.0]), rng_stream(20))
    assert lq == 0.0 and theta[0] != 1.0


def test_propose_logrw_jacobian():
    # z chosen so that theta' = e: scale * z = 1
    rng = rng_stream(21)
    z = rng_stream(21).standard_normal(1)[0]
    theta, lq = propose(Proposal((1.0 / z,), ("logrw",)), np.array([1.0]), rng)
    assert theta[0] == pytest.approx(np.e)
    assert lq == pytest.approx(1.0)


@pytest.mark.parametrize("kind", ["rw", "logrw", "gamma"])
def test_propose_zero_step(kind):
    theta, lq = propose(Proposal((0.0,), (kind,)), np.array([2.0]), rng_stream(22))
    assert theta[0] == 2.0 and lq == 0.0


def test_gamma_proposal_moments_and_ratio():
    rng = rng_stream(23)
    p = Proposal((0.2,), ("gamma",))
    draws = np.array([p.propose(np.array([1.5]), rng)[0][0] for _ in range(20000)])
    assert draws.mean() == pytest.approx(1.5, abs=0.01)
    assert draws.std() == pytest.approx(0.2, rel=0.03)
    new, lq = p.propose(np.array([1.5]), rng)
    k = lambda m: stats.gamma(m**2 / 0.04, scale=0.04 / m)  # noqa: E731
    assert lq == pytest.approx(k(new[0]).logpdf(1.5) - k(1.5).logpdf(new[0]))


def test_normal_location_loglik_matches_density_product():
    model = NormalLocation()
    y = simulate_iid(model, [0.4], 50, rng_stream(24))
    direct = np.sum(np.log(stats.norm.pdf(y.data[:, 0], 0.4, 1.0)))
    assert model.loglik([0.4], y) == pytest.approx(direct, abs=1e-12)


def test_normal_location_exact_posterior():
    model = NormalLocation()
    y = simulate_iid(model, [0.4], 99, rng_stream(25))
    mean, var = model.exact_posterior(y)
    assert mean == pytest.approx(y.data.sum() / 100)
    assert var == pytest.approx(1 / 100)


def test_simulators_replay():
    for name, model in ((n, cls()) for n, cls in MODELS.items()):
        a = model.simulate(model.default_theta(), 20, rng_stream(26))[0].data
        b = model.simulate(model.default_theta(), 20, rng_stream(26))[0].data
        assert np.array_equal(a, b), name


def test_toy_hmm_iid_marginal():
    model = LinearGaussianHMM(ar=0.0, trans_var=1.0, init_var=1.0, obs_sd=1.0)
    y, _ = model.simulate([0.5], 20000, rng_stream(27))
    assert stats.kstest(y.data[:, 0], stats.norm(0.5, np.sqrt(2)).cdf).pvalue > 0.001


def test_toy_hmm_constant_latent():
    model = LinearGaussianHMM(ar=1.0, trans_var=0.0, init_var=1.0)
    _, x = model.simulate([0.5], 30, rng_stream(28))
    assert np.all(x.states == x.states[0])


def test_hidden_transition_density():
    model = LinearGaussianHMM(hide_transition_density=True)
    with pytest.raises(CapabilityError):
        model.transition_logpdf(np.array([0.0]), None, np.zeros((3, 1)))
