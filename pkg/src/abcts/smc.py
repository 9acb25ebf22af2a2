"""ABC particle filters for hidden Markov models.

:func:`smc_abc_filter` is the standard filter: it propagates N particles,
weights them by the ball indicator times ``p(x'|x) / q(x'|x)``, resamples at
every step, and estimates the ABC likelihood by

    prod_t (1 / |B_eps|) * (1/N) sum_j W_t^j.

It collapses (estimate zero) when every weight at some step is zero.

:func:`alive_smc_filter` keeps drawing (ancestor, state, observation) triples
until N of them hit the ball, keeps the first N-1, and estimates the
likelihood by

    prod_t (N - 1) / ((m_t - 1) |B_eps|),

where ``m_t`` is the number of attempts at step t.  It never collapses; it can
only run out of budget (``cap`` attempts in one step).

Both estimators are unbiased for multinomial resampling.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .abc_core import AbcKernel, as_data
from .models import CapabilityError

DEFAULT_CAP = 10**7
_MAX_BATCH = 1 << 20


class FilterCollapsedError(ValueError):
    """Expectation requested from a system whose weights are all zero."""


@dataclass
class ParticleSystem:
    states: np.ndarray
    aux: np.ndarray
    weights: np.ndarray
    t: int

    def __len__(self):
        return len(self.weights)

    @property
    def collapsed(self):
        return not np.any(self.weights > 0)


@dataclass
class NcEstimate:
    """Log normalizing-constant estimate with its per-step factors.

    ``collapsed_at`` (standard filter) and ``capped_at`` (alive filter) are
    1-based time indices; either one makes ``log_value`` equal to ``-inf``.
    """

    log_value: float
    per_step_log_factors: np.ndarray
    collapsed_at: int | None = None
    trial_counts: np.ndarray | None = None
    capped_at: int | None = None

    @property
    def finite(self):
        return np.isfinite(self.log_value)


@dataclass
class FilterHistory:
    log_nc_factor: np.ndarray
    ess: np.ndarray
    hits: np.ndarray
    trials: np.ndarray | None = None


class FilterResult(NamedTuple):
    particles: ParticleSystem
    estimate: NcEstimate
    history: FilterHistory


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def multinomial_indices(weights, rng, size=None):
    w = np.asarray(weights, dtype=float)
    size = len(w) if size is None else size
    cw = np.cumsum(w)
    idx = np.searchsorted(cw, rng.random(size) * cw[-1], side="right")
    return np.minimum(idx, len(w) - 1)


def systematic_indices(weights, rng, size=None):
    w = np.asarray(weights, dtype=float)
    size = len(w) if size is None else size
    cw = np.cumsum(w)
    pos = (rng.random() + np.arange(size)) / size * cw[-1]
    return np.minimum(np.searchsorted(cw, pos, side="right"), len(w) - 1)


RESAMPLERS = {"multinomial": multinomial_indices, "systematic": systematic_indices}


def resample_multinomial(ps: ParticleSystem, rng):
    """Multinomial resampling; weights reset to one.

    An all-zero system is returned unchanged (it stays collapsed) rather than
    raising, so callers can propagate the collapse.
    """
    if ps.collapsed:
        return ps
    idx = multinomial_indices(ps.weights, rng)
    return ParticleSystem(ps.states[idx], ps.aux[idx], np.ones(len(idx)), ps.t)


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------


class BootstrapPropagator:
    """Propose from the latent dynamics; weights reduce to the indicator."""

    binary_weights = True

    def __init__(self, model):
        if model.kind != "hmm":
            raise CapabilityError(f"{model.name} is not a hidden Markov model")
        self.model = model

    def __call__(self, theta, x_prev, rng, size):
        m = self.model
        x = m.initial(theta, rng, size) if x_prev is None else m.transition(theta, x_prev, rng)
        return x, m.observe(theta, x, rng), None


class InflatedGaussianProposal:
    """Gaussian proposal with the transition mean and ``kappa**2`` times its variance.

    Needs ``model.transition_moments(theta, x_prev) -> (mean, var)``.
    """

    def __init__(self, model, kappa=1.5):
        if not hasattr(model, "transition_moments"):
            raise CapabilityError(f"{model.name} does not expose transition moments")
        self.model, self.kappa = model, float(kappa)

    def _moments(self, theta, x_prev):
        mean, var = self.model.transition_moments(theta, x_prev)
        return mean, self.kappa * np.sqrt(var)

    def sample(self, theta, x_prev, rng, size):
        mean, sd = self._moments(theta, x_prev)
        return mean + sd * rng.standard_normal((size, 1))

    def logpdf(self, theta, x_prev, x):
        mean, sd = self._moments(theta, x_prev)
        z = (x - mean) / sd
        return np.sum(-0.5 * z**2 - np.log(sd) - 0.5 * np.log(2 * np.pi), axis=-1)


class GuidedPropagator:
    """Propose from ``proposal``; weight by ``p(x'|x) / q(x'|x)`` (needs the transition density)."""

    binary_weights = False

    def __init__(self, model, proposal):
        if model.kind != "hmm":
            raise CapabilityError(f"{model.name} is not a hidden Markov model")
        self.model, self.proposal = model, proposal

    def __call__(self, theta, x_prev, rng, size):
        x = self.proposal.sample(theta, x_prev, rng, size)
        logw = self.model.transition_logpdf(theta, x_prev, x) - self.proposal.logpdf(theta, x_prev, x)
        return x, self.model.observe(theta, x, rng), logw


class StandardNormalNoise:
    """Default importance proposal for a noise stream whose density is known but not its sampler."""

    def __init__(self, dim=1):
        self.dim = dim

    def sample(self, rng, size):
        return rng.standard_normal((size, self.dim))

    def logpdf(self, v):
        return np.sum(-0.5 * v**2 - 0.5 * np.log(2 * np.pi), axis=-1)


class CollapsedPropagator:
    """Propagate in noise space: ``x = rho(x_prev, eta)``, ``u = obs_map(x, phi)``.

    Each noise stream is drawn from the model's own sampler when it has one.
    Otherwise it is drawn from an importance proposal (``eta_proposal`` /
    ``phi_proposal``, default standard normal) and weighted by the model's
    noise density over the proposal density.  A stream with neither a sampler
    nor a density is a capability error.
    """

    def __init__(self, model, eta_proposal=None, phi_proposal=None, use_samplers=True):
        if model.kind != "hmm":
            raise CapabilityError(f"{model.name} is not a hidden Markov model")
        self.model = model
        theta0 = np.asarray(model.default_theta(), dtype=float)
        self.eta_q = self._stream(model, "eta", eta_proposal, use_samplers, theta0)
        self.phi_q = self._stream(model, "phi", phi_proposal, use_samplers, theta0)
        self.binary_weights = self.eta_q is None and self.phi_q is None

    @staticmethod
    def _stream(model, which, proposal, use_samplers, theta0):
        rng = np.random.default_rng(0)
        has_sampler = has_density = True
        try:
            getattr(model, f"sample_{which}")(theta0, rng, 1)
        except CapabilityError:
            has_sampler = False
        try:
            getattr(model, f"{which}_logpdf")(theta0, np.zeros((1, getattr(model, f"d_{which}"))))
        except CapabilityError:
            has_density = False
        if has_sampler and (use_samplers or not has_density) and proposal is None:
            return None
        if not has_density:
            raise CapabilityError(
                f"{model.name}: {which} noise has neither a usable sampler nor a density"
            )
        return proposal or StandardNormalNoise(getattr(model, f"d_{which}"))

    def __call__(self, theta, x_prev, rng, size):
        m = self.model
        logw = None
        if self.eta_q is None:
            eta = m.sample_eta(theta, rng, size)
        else:
            eta = self.eta_q.sample(rng, size)
            logw = m.eta_logpdf(theta, eta) - self.eta_q.logpdf(eta)
        x = m.rho(theta, x_prev, eta)
        if self.phi_q is None:
            phi = m.sample_phi(theta, rng, size)
        else:
            phi = self.phi_q.sample(rng, size)
            lw = m.phi_logpdf(theta, phi) - self.phi_q.logpdf(phi)
            logw = lw if logw is None else logw + lw
        return x, m.obs_map(theta, x, phi), logw


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------


def _ess(w):
    s = w.sum()
    return float(s * s / np.sum(w * w)) if s > 0 else 0.0


def smc_abc_filter(model, theta, y, kernel: AbcKernel, N, rng, propagator=None,
                   resampling="multinomial") -> FilterResult:
    """Standard ABC particle filter with resampling at every step."""
    if N < 1:
        raise ValueError("N must be >= 1")
    y = as_data(y)
    prop = propagator or BootstrapPropagator(model)
    resample = RESAMPLERS[resampling]
    n = len(y)
    factors = np.full(n, -np.inf)
    ess = np.zeros(n)
    hits = np.zeros(n, dtype=np.int64)
    x_prev = None
    collapsed_at = None
    for t in range(n):
        x, u, logw = prop(theta, x_prev, rng, N)
        h = kernel.hits(u, y[t])
        hits[t] = h.sum()
        if logw is None:
            w, shift = h.astype(float), 0.0
        else:
            lw = np.where(h, logw, -np.inf)
            shift = lw.max()
            w = np.exp(lw - shift) if np.isfinite(shift) else np.zeros(N)
        total = w.sum()
        if total <= 0:
            collapsed_at = t + 1
            ps = ParticleSystem(x, u, w, t + 1)
            break
        factors[t] = shift + np.log(total / N) - kernel.log_ball_volume
        ess[t] = _ess(w)
        ps = ParticleSystem(x, u, w, t + 1)
        if t < n - 1:
            x_prev = x[resample(w, rng)]
    log_value = -np.inf if collapsed_at else float(np.sum(factors))
    est = NcEstimate(log_value, factors, collapsed_at=collapsed_at)
    return FilterResult(ps, est, FilterHistory(factors, ess, hits))


def alive_smc_filter(model, theta, y, kernel: AbcKernel, N, rng, propagator=None,
                     cap=DEFAULT_CAP) -> FilterResult:
    """Alive ABC particle filter (indicator weights only).

    The returned particle system holds the N-1 retained particles, all with
    weight one.  If some step needs more than ``cap`` attempts the estimate is
    ``-inf`` with ``capped_at`` set and the counts so far in ``trial_counts``.
    """
    if N < 2:
        raise ValueError("the alive filter needs N >= 2")
    y = as_data(y)
    prop = propagator or BootstrapPropagator(model)
    if not prop.binary_weights:
        raise CapabilityError("the alive filter supports only propagators with indicator weights")
    n = len(y)
    m = np.zeros(n, dtype=np.int64)
    factors = np.full(n, -np.inf)
    alive_x = alive_u = None
    for t in range(n):
        xs, us = [], []
        found = spent = 0
        batch = 2 * N
        while found < N:
            b = int(min(batch, cap - spent))
            if alive_x is None:
                x, u, _ = prop(theta, None, rng, b)
            else:
                x, u, _ = prop(theta, alive_x[rng.integers(0, N - 1, b)], rng, b)
            pos = np.flatnonzero(kernel.hits(u, y[t]))
            take = pos[: N - found]
            xs.append(x[take])
            us.append(u[take])
            if found + len(pos) >= N:
                m[t] = spent + take[-1] + 1
            found += len(take)
            spent += b
            if found < N and spent >= cap:
                m[t] = spent
                est = NcEstimate(-np.inf, factors, trial_counts=m[: t + 1], capped_at=t + 1)
                ps = ParticleSystem(np.concatenate(xs), np.concatenate(us), np.ones(found), t + 1)
                return FilterResult(ps, est, FilterHistory(factors, np.full(n, N - 1.0), np.full(n, N), m))
            batch = min(2 * batch, _MAX_BATCH)
        alive_x = np.concatenate(xs)[: N - 1]
        alive_u = np.concatenate(us)[: N - 1]
        factors[t] = np.log((N - 1) / (m[t] - 1.0)) - kernel.log_ball_volume
    ps = ParticleSystem(alive_x, alive_u, np.ones(N - 1), n)
    est = NcEstimate(float(np.sum(factors)), factors, trial_counts=m)
    hist = FilterHistory(factors, np.full(n, N - 1.0), np.full(n, N, dtype=np.int64), m)
    return FilterResult(ps, est, hist)


def run_filter(kind, model, theta, y, kernel, N, rng, propagator=None, cap=DEFAULT_CAP,
               resampling="multinomial") -> FilterResult:
    if kind == "standard":
        return smc_abc_filter(model, theta, y, kernel, N, rng, propagator, resampling)
    if kind == "alive":
        return alive_smc_filter(model, theta, y, kernel, N, rng, propagator, cap)
    raise ValueError(f"unknown filter kind {kind!r}")


def filter_expectation(ps: ParticleSystem, xi):
    """Self-normalized weighted average of ``xi(states, aux)`` over the particles."""
    if ps.collapsed:
        raise FilterCollapsedError("particle system has collapsed (all weights zero)")
    vals = np.reshape(np.asarray(xi(ps.states, ps.aux), dtype=float), len(ps.weights))
    w = ps.weights / ps.weights.sum()
    return float(np.sum(w * vals))
