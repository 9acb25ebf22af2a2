"""Simulators, priors and proposals for the time-series models.

Three model kinds share one interface:

* ``iid``  - observations ``Y_i = phi_theta(noise_i)`` with no latent process;
* ``odts`` - observation-driven: ``Y_i`` given a volatility ``x_{i-1}`` that is
  a deterministic recursion of the past observations;
* ``hmm``  - hidden Markov: ``X_i = rho_theta(x_{i-1}, eta_i)``,
  ``Y_i = varphi_theta(x_i, phi_i)``.

For ``iid`` and ``odts`` models the ABC samplers only need
:meth:`Model.sample_aux`, which draws auxiliary observations ``u_i`` from the
conditional law of each ``Y_i`` given the observed past.  HMM filters use the
noise maps ``rho``/``obs_map`` or the derived ``initial``/``transition``/
``observe`` samplers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from scipy.special import gammaln

from .abc_core import abc_loglik_gaussian, abc_loglik_quadrature, as_data
from .stochastics import (
    DomainError,
    StableParams,
    sample_uniform_ball,
    scale_stable,
    standard_stable,
)


class CapabilityError(TypeError):
    """The model does not expose what the algorithm needs."""


class UsageError(ValueError):
    """An operation was called on an object in the wrong state."""


@dataclass(frozen=True)
class ObservationSeries:
    """An ``n x d_y`` series; ``kind`` is ``"raw"`` (y) or ``"perturbed"`` (z)."""

    data: np.ndarray
    kind: str = "raw"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DomainError(f"observation data must be a non-empty n x d_y array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DomainError("observation data must be finite")
        if self.kind not in ("raw", "perturbed"):
            raise DomainError(f"unknown series kind {self.kind!r}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def d_y(self):
        return self.data.shape[1]

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class LatentPath:
    states: np.ndarray


@dataclass
class CollapsedState:
    """Driving noise of the collapsed representation (``phi`` and, for HMMs, ``eta``)."""

    obs_noise: np.ndarray
    latent_noise: np.ndarray | None = None

    def copy(self):
        eta = None if self.latent_noise is None else self.latent_noise.copy()
        return CollapsedState(self.obs_noise.copy(), eta)


_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _norm_logpdf(x, mean=0.0, sd=1.0):
    z = (np.asarray(x, dtype=float) - mean) / sd
    return -0.5 * z * z - np.log(sd) - _LOG_SQRT_2PI


def _gamma_logpdf(x, shape, scale):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = (shape - 1.0) * np.log(x) - x / scale - gammaln(shape) - shape * np.log(scale)
    return np.where(x > 0, lp, -np.inf)


def _invgamma_logpdf(x, shape, scale):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = shape * np.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x
    return np.where(x > 0, lp, -np.inf)


def _check_support(value, support):
    if support == "real":
        return np.isfinite(value)
    if support == "positive":
        return np.isfinite(value) and value > 0
    lo, hi = support
    return lo < value < hi


class Model:
    """Base class; subclasses fill in the capabilities they have."""

    kind = "iid"
    name = "model"
    param_names: tuple = ()
    support: tuple = ()
    d_y = 1
    d_x = 0
    #: constructor options exposed through the experiment config
    options: dict = {}

    @property
    def d_theta(self):
        return len(self.param_names)

    def in_support(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta.shape == (self.d_theta,) and all(
            _check_support(v, s) for v, s in zip(theta, self.support)
        )

    def check_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if not self.in_support(theta):
            raise DomainError(f"{self.name}: parameter {theta} outside support {self.support}")
        return theta

    def log_prior(self, theta):
        raise NotImplementedError

    def sample_prior(self, rng):
        raise NotImplementedError

    def simulate(self, theta, n, rng):
        """Return ``(ObservationSeries, LatentPath or None)``."""
        raise NotImplementedError

    def default_theta(self):
        raise NotImplementedError

    def default_proposal(self):
        raise NotImplementedError

    # -- iid / odts -------------------------------------------------------
    def sample_aux(self, theta, y, rng, size, rows=None):
        """Draw ``size`` auxiliary observations per datum: shape ``(n_rows, size, d_y)``."""
        raise CapabilityError(f"{self.name} cannot simulate auxiliary observations")

    # -- tractable oracles -------------------------------------------------
    def obs_logpdf(self, theta, u):
        raise CapabilityError(f"{self.name} has no tractable observation density")

    def abc_loglik(self, theta, y, eps):
        raise CapabilityError(f"{self.name} has no tractable ABC likelihood")

    # -- collapsed iid -----------------------------------------------------
    noise_dim = 0

    def sample_noise(self, theta, rng, shape):
        raise CapabilityError(f"{self.name} cannot sample its observation noise")

    def noise_logpdf(self, theta, phi):
        raise CapabilityError(f"{self.name} has no observation-noise density")

    def obs_from_noise(self, theta, y, phi, rows=None):
        raise CapabilityError(f"{self.name} has no collapsed representation")

    @property
    def has_noise_density(self):
        return type(self).noise_logpdf is not Model.noise_logpdf


# ---------------------------------------------------------------------------
# i.i.d. models
# ---------------------------------------------------------------------------


class NormalLocation(Model):
    """``Y = theta + noise_sd * phi`` with ``phi ~ N(0,1)`` and a normal prior on theta."""

    kind = "iid"
    name = "normal_location"
    param_names = ("theta",)
    support = ("real",)
    noise_dim = 1
    options = {"prior_mean": 0.0, "prior_sd": 1.0, "noise_sd": 1.0}

    def __init__(self, prior_mean=0.0, prior_sd=1.0, noise_sd=1.0):
        if prior_sd <= 0 or noise_sd <= 0:
            raise DomainError("prior_sd and noise_sd must be positive")
        self.prior_mean = float(prior_mean)
        self.prior_sd = float(prior_sd)
        self.noise_sd = float(noise_sd)

    def default_theta(self):
        return np.array([0.0])

    def default_proposal(self):
        return Proposal((0.5,), ("rw",))

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        if not self.in_support(theta):
            return -np.inf
        return float(_norm_logpdf(theta[0], self.prior_mean, self.prior_sd))

    def sample_prior(self, rng):
        return np.array([rng.normal(self.prior_mean, self.prior_sd)])

    def simulate(self, theta, n, rng):
        theta = self.check_theta(theta)
        y = theta[0] + self.noise_sd * rng.standard_normal((n, 1))
        return ObservationSeries(y), None

    def sample_aux(self, theta, y, rng, size, rows=None):
        n = len(as_data(y)) if rows is None else len(rows)
        return theta[0] + self.noise_sd * rng.standard_normal((n, size, 1))

    def obs_logpdf(self, theta, u):
        return _norm_logpdf(u, theta[0], self.noise_sd)

    def abc_loglik(self, theta, y, eps):
        return float(np.sum(abc_loglik_gaussian(theta[0], self.noise_sd, as_data(y)[:, 0], eps)))

    def loglik(self, theta, y):
        """Exact log-likelihood of the un-approximated model."""
        return float(np.sum(_norm_logpdf(as_data(y)[:, 0], theta[0], self.noise_sd)))

    def exact_posterior(self, y):
        """Conjugate posterior ``(mean, variance)`` of theta."""
        y = as_data(y)[:, 0]
        prec = 1.0 / self.prior_sd**2 + len(y) / self.noise_sd**2
        mean = (self.prior_mean / self.prior_sd**2 + y.sum() / self.noise_sd**2) / prec
        return mean, 1.0 / prec

    def sample_noise(self, theta, rng, shape):
        return rng.standard_normal(tuple(shape) + (1,))

    def noise_logpdf(self, theta, phi):
        return np.sum(_norm_logpdf(phi), axis=-1)

    def obs_from_noise(self, theta, y, phi, rows=None):
        return theta[0] + self.noise_sd * phi


class GaussianScale(Model):
    """``Y = sigma * phi``, ``phi ~ N(0,1)``; the oracle family for the ABC bias of the MLE."""

    kind = "iid"
    name = "gaussian_scale"
    param_names = ("sigma",)
    support = ("positive",)
    noise_dim = 1
    options = {"prior_shape": 2.0, "prior_rate": 2.0}

    def __init__(self, prior_shape=2.0, prior_rate=2.0):
        self.prior_shape = float(prior_shape)
        self.prior_rate = float(prior_rate)

    def default_theta(self):
        return np.array([1.0])

    def default_proposal(self):
        return Proposal((0.1,), ("logrw",))

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        if not self.in_support(theta):
            return -np.inf
        return float(_gamma_logpdf(theta[0], self.prior_shape, 1.0 / self.prior_rate))

    def sample_prior(self, rng):
        return np.array([rng.gamma(self.prior_shape, 1.0 / self.prior_rate)])

    def simulate(self, theta, n, rng):
        theta = self.check_theta(theta)
        return ObservationSeries(theta[0] * rng.standard_normal((n, 1))), None

    def sample_aux(self, theta, y, rng, size, rows=None):
        n = len(as_data(y)) if rows is None else len(rows)
        return theta[0] * rng.standard_normal((n, size, 1))

    def obs_logpdf(self, theta, u):
        return _norm_logpdf(u, 0.0, theta[0])

    def abc_loglik(self, theta, y, eps):
        return float(np.sum(abc_loglik_gaussian(0.0, theta[0], as_data(y)[:, 0], eps)))

    def sample_noise(self, theta, rng, shape):
        return rng.standard_normal(tuple(shape) + (1,))

    def noise_logpdf(self, theta, phi):
        return np.sum(_norm_logpdf(phi), axis=-1)

    def obs_from_noise(self, theta, y, phi, rows=None):
        return theta[0] * phi


# ---------------------------------------------------------------------------
# observation-driven model
# ---------------------------------------------------------------------------


class GarchStable(Model):
    """GARCH(1,1)-type recursion with alpha-stable innovations.

    ``Y_{i+1} ~ Stable(alpha=s1, skew=s2, scale=x_i)`` and
    ``x_{i+1} = beta0 + beta1 * x_i + beta2 * Y_{i+1}**2``.  The initial
    volatility ``x0`` is part of the parameter vector, with Gamma(x0_shape,
    x0_rate) prior; each beta has a Gamma(beta_shape, beta_rate) prior.
    """

    kind = "odts"
    name = "garch"
    param_names = ("beta0", "beta1", "beta2", "x0")
    support = ("positive",) * 4
    options = {
        "s1": 1.5,
        "s2": 0.0,
        "x0_shape": 2.0,
        "x0_rate": 0.125,
        "beta_shape": 2.0,
        "beta_rate": 0.125,
    }

    def __init__(self, s1=1.5, s2=0.0, x0_shape=2.0, x0_rate=0.125, beta_shape=2.0, beta_rate=0.125):
        self.stable = StableParams(alpha=s1, beta_skew=s2)
        self.x0_shape, self.x0_rate = float(x0_shape), float(x0_rate)
        self.beta_shape, self.beta_rate = float(beta_shape), float(beta_rate)
        if min(self.x0_shape, self.x0_rate, self.beta_shape, self.beta_rate) <= 0:
            raise DomainError("gamma prior hyperparameters must be positive")

    def default_theta(self):
        return np.array([0.05, 0.3, 0.02, 0.5])

    def default_proposal(self):
        return Proposal((0.1,) * 4, ("logrw",) * 4)

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        if not self.in_support(theta):
            return -np.inf
        lp = _gamma_logpdf(theta[:3], self.beta_shape, 1.0 / self.beta_rate).sum()
        return float(lp + _gamma_logpdf(theta[3], self.x0_shape, 1.0 / self.x0_rate))

    def sample_prior(self, rng):
        beta = rng.gamma(self.beta_shape, 1.0 / self.beta_rate, 3)
        return np.append(beta, rng.gamma(self.x0_shape, 1.0 / self.x0_rate))

    def volatilities(self, theta, y):
        """Scales ``x_0 .. x_{n-1}`` driving ``y_1 .. y_n`` (recursion on the observed data)."""
        b0, b1, b2, x0 = theta
        y = as_data(y)[:, 0]
        drive = b0 + b2 * y[:-1] ** 2
        with np.errstate(over="ignore", invalid="ignore"):
            rest, _ = signal.lfilter([1.0], [1.0, -b1], drive, zi=[b1 * x0])
        return np.concatenate(([x0], rest))

    def _draw(self, rng, scale, size):
        z = standard_stable(rng, self.stable.alpha, self.stable.beta_skew, size)
        with np.errstate(over="ignore", invalid="ignore"):
            return scale_stable(z, self.stable.alpha, self.stable.beta_skew, scale)

    def check_theta(self, theta):
        # beta1 = beta2 = 0 is allowed for simulation (the recursion degenerates to x_i = beta0)
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (4,) or not np.all(np.isfinite(theta)):
            raise DomainError(f"garch: bad parameter {theta}")
        if theta[0] <= 0 or theta[3] <= 0 or theta[1] < 0 or theta[2] < 0:
            raise DomainError(f"garch: need beta0, x0 > 0 and beta1, beta2 >= 0, got {theta}")
        return theta

    def simulate(self, theta, n, rng):
        theta = self.check_theta(theta)
        b0, b1, b2, x = theta
        y = np.empty(n)
        xs = np.empty(n)
        for i in range(n):
            xs[i] = x
            y[i] = self._draw(rng, x, None)
            with np.errstate(over="ignore", invalid="ignore"):
                x = b0 + b1 * x + b2 * y[i] ** 2
            if not np.isfinite(x):
                raise DomainError(
                    f"GARCH volatility overflowed at step {i + 1}; parameters {theta} are explosive"
                )
        return ObservationSeries(y), LatentPath(xs)

    def sample_aux(self, theta, y, rng, size, rows=None):
        scale = self.volatilities(theta, y)
        if rows is not None:
            scale = scale[rows]
        u = self._draw(rng, scale[:, None], (len(scale), size))
        return u[..., None]


# ---------------------------------------------------------------------------
# hidden Markov models
# ---------------------------------------------------------------------------


class HMMModel(Model):
    """HMM written through its driving noise.

    Subclasses provide ``rho(theta, x_prev, eta)`` (``x_prev=None`` for the
    first step), ``obs_map(theta, x, phi)``, noise samplers and, where known,
    noise log-densities.  The state-space samplers below are derived from them.
    """

    kind = "hmm"
    d_x = 1
    d_eta = 1
    d_phi = 1

    def rho(self, theta, x_prev, eta):
        raise NotImplementedError

    def obs_map(self, theta, x, phi):
        raise NotImplementedError

    def sample_eta(self, theta, rng, size):
        raise CapabilityError(f"{self.name} cannot sample its latent noise")

    def sample_phi(self, theta, rng, size):
        raise CapabilityError(f"{self.name} cannot sample its observation noise")

    def eta_logpdf(self, theta, eta):
        raise CapabilityError(f"{self.name} has no latent-noise density")

    def phi_logpdf(self, theta, phi):
        raise CapabilityError(f"{self.name} has no observation-noise density")

    def transition_logpdf(self, theta, x_prev, x):
        raise CapabilityError(f"{self.name} has no transition density")

    def initial(self, theta, rng, size):
        return self.rho(theta, None, self.sample_eta(theta, rng, size))

    def transition(self, theta, x_prev, rng):
        return self.rho(theta, x_prev, self.sample_eta(theta, rng, len(x_prev)))

    def observe(self, theta, x, rng):
        return self.obs_map(theta, x, self.sample_phi(theta, rng, len(x)))

    def simulate(self, theta, n, rng):
        theta = self.check_theta(theta)
        xs = np.empty((n, self.d_x))
        ys = np.empty((n, self.d_y))
        x = self.initial(theta, rng, 1)
        for i in range(n):
            if i:
                x = self.transition(theta, x, rng)
            xs[i] = x[0]
            ys[i] = self.observe(theta, x, rng)[0]
        return ObservationSeries(ys), LatentPath(xs)


class StochasticVolatility(HMMModel):
    """``Y = phi * beta * exp(X)``, ``X_i = a X_{i-1} + eta_i``, ``eta ~ N(0, c)``, ``x_0 = 0``.

    ``phi`` is stable with scale ``s1``, stability index ``s2`` and skewness
    ``s3``.  Priors: beta ~ N(0, beta_prior_var), c ~ IG(c_shape, c_scale),
    a ~ IG(a_shape, a_scale).  The AR coefficient ``a`` is not restricted to
    (0, 1).
    """

    name = "sv"
    param_names = ("beta", "c", "a")
    support = ("real", "positive", "positive")
    options = {
        "s1": 1.0,
        "s2": 1.75,
        "s3": 1.0,
        "beta_prior_var": 10.0,
        "c_shape": 2.0,
        "c_scale": 0.01,
        "a_shape": 2.0,
        "a_scale": 0.02,
    }

    def __init__(self, s1=1.0, s2=1.75, s3=1.0, beta_prior_var=10.0, c_shape=2.0, c_scale=0.01,
                 a_shape=2.0, a_scale=0.02):
        self.stable = StableParams(alpha=s2, beta_skew=s3, scale=s1)
        self.beta_prior_var = float(beta_prior_var)
        self.c_shape, self.c_scale = float(c_shape), float(c_scale)
        self.a_shape, self.a_scale = float(a_shape), float(a_scale)

    def default_theta(self):
        return np.array([1.0, 0.05, 0.9])

    def default_proposal(self):
        return Proposal((0.1, 0.01, 0.05), ("rw", "gamma", "gamma"))

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (3,) or not np.all(np.isfinite(theta)) or theta[1] <= 0 or theta[2] <= 0:
            return -np.inf
        return float(
            _norm_logpdf(theta[0], 0.0, np.sqrt(self.beta_prior_var))
            + _invgamma_logpdf(theta[1], self.c_shape, self.c_scale)
            + _invgamma_logpdf(theta[2], self.a_shape, self.a_scale)
        )

    def sample_prior(self, rng):
        beta = rng.normal(0.0, np.sqrt(self.beta_prior_var))
        c = 1.0 / rng.gamma(self.c_shape, 1.0 / self.c_scale)
        a = 1.0 / rng.gamma(self.a_shape, 1.0 / self.a_scale)
        return np.array([beta, c, a])

    def check_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (3,) or not np.all(np.isfinite(theta)):
            raise DomainError(f"sv: bad parameter {theta}")
        if theta[1] < 0:
            raise DomainError(f"sv: latent variance c must be non-negative, got {theta[1]}")
        return theta

    def rho(self, theta, x_prev, eta):
        if x_prev is None:
            return np.sqrt(theta[1]) * eta
        return theta[2] * x_prev + np.sqrt(theta[1]) * eta

    def obs_map(self, theta, x, phi):
        with np.errstate(over="ignore", invalid="ignore"):
            return phi * theta[0] * np.exp(x)

    def sample_eta(self, theta, rng, size):
        return rng.standard_normal((size, 1))

    def eta_logpdf(self, theta, eta):
        return np.sum(_norm_logpdf(eta), axis=-1)

    def sample_phi(self, theta, rng, size):
        p = self.stable
        z = standard_stable(rng, p.alpha, p.beta_skew, (size, 1))
        return scale_stable(z, p.alpha, p.beta_skew, p.scale)

    def transition_moments(self, theta, x_prev):
        mean = 0.0 if x_prev is None else theta[2] * x_prev
        return mean, theta[1]

    def transition_logpdf(self, theta, x_prev, x):
        if theta[1] <= 0:
            raise CapabilityError("sv transition density is degenerate for c = 0")
        mean = 0.0 if x_prev is None else theta[2] * x_prev
        return np.sum(_norm_logpdf(x, mean, np.sqrt(theta[1])), axis=-1)


class LinearGaussianHMM(HMMModel):
    """Toy HMM with a tractable ABC likelihood in two special cases.

    ``X_1 = mu + sqrt(init_var) eta_1``,
    ``X_i = mu + ar (X_{i-1} - mu) + sqrt(trans_var) eta_i``,
    ``Y_i = X_i + obs_sd phi_i`` with standard normal noises; theta = (mu,)
    with a N(prior_mean, prior_sd^2) prior.

    * ``ar=0, trans_var=init_var``: latent states are i.i.d., so the ABC
      likelihood factorizes over data with marginal N(mu, init_var + obs_sd^2).
    * ``ar=1, trans_var=0``: the latent state is constant and the ABC
      likelihood is a one-dimensional integral over it.
    """

    name = "toy_hmm"
    param_names = ("mu",)
    support = ("real",)
    options = {
        "ar": 0.0,
        "trans_var": 1.0,
        "init_var": 1.0,
        "obs_sd": 1.0,
        "prior_mean": 0.0,
        "prior_sd": 1.0,
        "hide_transition_density": False,
    }

    def __init__(self, ar=0.0, trans_var=1.0, init_var=1.0, obs_sd=1.0, prior_mean=0.0, prior_sd=1.0,
                 hide_transition_density=False):
        if trans_var < 0 or init_var < 0 or obs_sd <= 0 or prior_sd <= 0:
            raise DomainError("toy_hmm: variances must be non-negative and sds positive")
        self.ar, self.trans_var, self.init_var = float(ar), float(trans_var), float(init_var)
        self.obs_sd = float(obs_sd)
        self.prior_mean, self.prior_sd = float(prior_mean), float(prior_sd)
        self.hide_transition_density = bool(hide_transition_density)

    def default_theta(self):
        return np.array([0.0])

    def default_proposal(self):
        return Proposal((0.5,), ("rw",))

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        if not self.in_support(theta):
            return -np.inf
        return float(_norm_logpdf(theta[0], self.prior_mean, self.prior_sd))

    def sample_prior(self, rng):
        return np.array([rng.normal(self.prior_mean, self.prior_sd)])

    def rho(self, theta, x_prev, eta):
        mu = theta[0]
        if x_prev is None:
            return mu + np.sqrt(self.init_var) * eta
        return mu + self.ar * (x_prev - mu) + np.sqrt(self.trans_var) * eta

    def obs_map(self, theta, x, phi):
        return x + self.obs_sd * phi

    def sample_eta(self, theta, rng, size):
        return rng.standard_normal((size, 1))

    def sample_phi(self, theta, rng, size):
        return rng.standard_normal((size, 1))

    def eta_logpdf(self, theta, eta):
        return np.sum(_norm_logpdf(eta), axis=-1)

    def phi_logpdf(self, theta, phi):
        return np.sum(_norm_logpdf(phi), axis=-1)

    def transition_moments(self, theta, x_prev):
        mu = theta[0]
        if x_prev is None:
            return mu, self.init_var
        return mu + self.ar * (x_prev - mu), self.trans_var

    def transition_logpdf(self, theta, x_prev, x):
        if self.hide_transition_density:
            raise CapabilityError("toy_hmm configured with a hidden transition density")
        mu = theta[0]
        if x_prev is None:
            mean, var = mu, self.init_var
        else:
            mean, var = mu + self.ar * (x_prev - mu), self.trans_var
        if var <= 0:
            raise CapabilityError("toy_hmm transition density is degenerate")
        return np.sum(_norm_logpdf(x, mean, np.sqrt(var)), axis=-1)

    @property
    def iid_latent(self):
        return self.ar == 0.0 and self.trans_var == self.init_var

    @property
    def constant_latent(self):
        return self.ar == 1.0 and self.trans_var == 0.0

    def obs_logpdf(self, theta, u):
        if not self.iid_latent:
            raise CapabilityError("toy_hmm marginal density only available for i.i.d. latents")
        return _norm_logpdf(u, theta[0], np.sqrt(self.init_var + self.obs_sd**2))

    def abc_loglik(self, theta, y, eps, points=2001):
        """ABC log-likelihood by quadrature (i.i.d. or constant latent configurations)."""
        if self.iid_latent:
            return abc_loglik_quadrature(self, theta, y, eps, points=points)
        if self.constant_latent:
            return constant_latent_abc_loglik(self, theta, y, eps, points=points)
        raise CapabilityError("toy_hmm ABC likelihood is only tractable for ar=0 or (ar=1, trans_var=0)")


def constant_latent_abc_loglik(model, theta, y, eps, points=2001, width=10.0):
    """``log int N(x; mu, init_var) prod_i pbar_eps(y_i | x) dx`` by Simpson's rule over x."""
    from scipy.integrate import simpson

    y = as_data(y)[:, 0]
    mu, sd = theta[0], np.sqrt(model.init_var)
    x = np.linspace(mu - width * sd, mu + width * sd, points)
    per = abc_loglik_gaussian(x[:, None], model.obs_sd, y[None, :], eps).sum(axis=1)
    logf = _norm_logpdf(x, mu, sd) + per
    top = logf.max()
    return float(top + np.log(simpson(np.exp(logf - top), x=x)))


# ---------------------------------------------------------------------------
# module-level operations
# ---------------------------------------------------------------------------


def simulate_iid(model, theta, n, rng):
    if model.kind != "iid":
        raise CapabilityError(f"{model.name} is not an i.i.d. model")
    return model.simulate(theta, n, rng)[0]


def simulate_odts_garch(gamma, x0, s1, s2, n, rng):
    """Simulate the stable GARCH recursion; returns ``(series, volatility path)``."""
    model = GarchStable(s1=s1, s2=s2)
    theta = np.append(np.asarray(gamma, dtype=float), x0)
    return model.simulate(theta, n, rng)


def simulate_hmm_sv(theta, stable, n, rng):
    """Simulate the SV model; ``stable = (s1, s2, s3)`` = (scale, stability index, skewness)."""
    s1, s2, s3 = stable
    return StochasticVolatility(s1=s1, s2=s2, s3=s3).simulate(theta, n, rng)


def perturb_noisy(y: ObservationSeries, eps, rng):
    """Noisy-ABC perturbation: ``z_i`` uniform on the open eps-ball around ``y_i``."""
    if y.kind != "raw":
        raise UsageError("series is already perturbed")
    return ObservationSeries(sample_uniform_ball(rng, y.data, eps), kind="perturbed")


def log_prior(model, theta):
    return model.log_prior(theta)


# ---------------------------------------------------------------------------
# proposals
# ---------------------------------------------------------------------------

PROPOSAL_KINDS = ("rw", "logrw", "gamma")


@dataclass(frozen=True)
class Proposal:
    """Component-wise random-walk proposal.

    ``rw`` adds ``scale * N(0,1)``; ``logrw`` multiplies by ``exp(scale * N(0,1))``;
    ``gamma`` draws from the gamma law with mean the current value and variance
    ``scale**2``.
    """

    scales: tuple
    kinds: tuple = field(default=None)

    def __post_init__(self):
        scales = tuple(float(s) for s in np.atleast_1d(self.scales))
        kinds = ("rw",) * len(scales) if self.kinds is None else tuple(self.kinds)
        if len(kinds) != len(scales):
            raise DomainError("proposal scales and kinds differ in length")
        if any(k not in PROPOSAL_KINDS for k in kinds):
            raise DomainError(f"proposal kinds must be among {PROPOSAL_KINDS}, got {kinds}")
        if any(s < 0 for s in scales):
            raise DomainError("proposal scales must be non-negative")
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "kinds", kinds)

    def propose(self, theta, rng):
        """Return ``(theta_new, log q(theta|theta_new) - log q(theta_new|theta))``."""
        theta = np.asarray(theta, dtype=float)
        z = rng.standard_normal(len(theta))
        new = theta.copy()
        log_ratio = 0.0
        for j, (s, k) in enumerate(zip(self.scales, self.kinds)):
            if k == "rw":
                new[j] = theta[j] + s * z[j]
            elif k == "logrw":
                new[j] = theta[j] * np.exp(s * z[j])
                log_ratio += np.log(new[j] / theta[j])
            elif s > 0:
                new[j] = rng.gamma(theta[j] ** 2 / s**2, s**2 / theta[j])
                log_ratio += _gamma_moment_logpdf(theta[j], new[j], s) - _gamma_moment_logpdf(new[j], theta[j], s)
        return new, float(log_ratio)


def _gamma_moment_logpdf(x, mean, sd):
    return _gamma_logpdf(x, mean**2 / sd**2, sd**2 / mean)


def propose(proposal: Proposal, theta, rng):
    return proposal.propose(theta, rng)


MODELS = {
    cls.name: cls
    for cls in (NormalLocation, GaussianScale, GarchStable, StochasticVolatility, LinearGaussianHMM)
}
