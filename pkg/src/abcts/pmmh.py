"""Particle-marginal Metropolis-Hastings on the ABC posterior of an HMM.

The filter estimate of the ABC likelihood replaces the exact value in the MH
ratio.  Rejected proposals keep the current estimate untouched; refreshing it
would change the invariant law.  A collapsed standard filter or an alive
filter that hits its trial cap yields ``-inf`` and is rejected outright.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .abc_core import as_data
from .mcmc import InitializationError, Trace, _accept
from .models import CapabilityError
from .smc import DEFAULT_CAP, CollapsedPropagator, NcEstimate, run_filter

FILTER_KINDS = ("standard", "alive")


@dataclass
class PmmhState:
    theta: np.ndarray
    log_prior: float
    log_nc: float
    meta: NcEstimate | None = None


class PMMH:
    def __init__(self, model, y, kernel, N, filter_kind, proposal, propagator=None,
                 cap=DEFAULT_CAP, resampling="multinomial"):
        if model.kind != "hmm":
            raise CapabilityError(f"PMMH needs a hidden Markov model, got {model.kind}")
        if filter_kind not in FILTER_KINDS:
            raise ValueError(f"filter_kind must be one of {FILTER_KINDS}")
        self.model, self.y, self.kernel = model, as_data(y), kernel
        self.N, self.filter_kind, self.proposal = int(N), filter_kind, proposal
        self.propagator, self.cap, self.resampling = propagator, cap, resampling

    def estimate(self, theta, rng) -> NcEstimate:
        return run_filter(self.filter_kind, self.model, theta, self.y, self.kernel, self.N, rng,
                          self.propagator, self.cap, self.resampling).estimate

    def init_state(self, theta, rng):
        lp = self.model.log_prior(theta)
        if not np.isfinite(lp):
            return None
        est = self.estimate(theta, rng)
        if not est.finite:
            return None
        return PmmhState(np.asarray(theta, dtype=float), lp, est.log_value, est)

    def step(self, state, rng, filter_rng=None):
        """One PMMH transition; returns ``(state, accepted, flagged)``.

        ``flagged`` marks an alive filter that ran out of budget.  The filter
        draws from ``filter_rng`` when given, otherwise from ``rng``.
        """
        theta, lq = self.proposal.propose(state.theta, rng)
        lp = self.model.log_prior(theta)
        if lp == -np.inf:
            return state, False, False
        est = self.estimate(theta, rng if filter_rng is None else filter_rng)
        if not est.finite:
            return state, False, est.capped_at is not None
        log_a = est.log_value - state.log_nc + lp - state.log_prior + lq
        if _accept(rng, log_a):
            return PmmhState(theta, lp, est.log_value, est), True, False
        return state, False, False


def pmmh_step(state, model, y, kernel, N, filter_kind, proposal, rng, propagator=None,
              cap=DEFAULT_CAP, filter_rng=None):
    return PMMH(model, y, kernel, N, filter_kind, proposal, propagator, cap).step(state, rng, filter_rng)[0]


def run_pmmh(model, y, kernel, N, filter_kind, proposal, iterations, rng, init="prior",
             max_init_attempts=1000, propagator=None, cap=DEFAULT_CAP, resampling="multinomial"):
    """Run PMMH for ``iterations`` steps.

    ``init="prior"`` draws theta from the prior and reruns the filter (with a
    fresh theta each time) until the estimate is finite; a parameter vector
    keeps theta fixed and only reruns the filter.  Extras: ``log_nc``,
    ``capped`` and, for the alive filter, ``sum_m``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    sampler = PMMH(model, y, kernel, N, filter_kind, proposal, propagator, cap, resampling)
    state = None
    for _ in range(max_init_attempts):
        theta = model.sample_prior(rng) if isinstance(init, str) else np.asarray(init, dtype=float)
        state = sampler.init_state(theta, rng)
        if state is not None:
            break
    if state is None:
        raise InitializationError(
            f"PMMH ({filter_kind}) found no finite likelihood estimate in {max_init_attempts} attempts; "
            "use a larger eps or the alive filter"
        )
    draws = np.empty((iterations, len(state.theta)))
    accepted = np.zeros(iterations, dtype=bool)
    capped = np.zeros(iterations, dtype=bool)
    log_nc = np.empty(iterations)
    sum_m = np.zeros(iterations, dtype=np.int64)
    for t in range(iterations):
        state, accepted[t], capped[t] = sampler.step(state, rng)
        draws[t] = state.theta
        log_nc[t] = state.log_nc
        if state.meta is not None and state.meta.trial_counts is not None:
            sum_m[t] = state.meta.trial_counts.sum()
    extras = {"sum_m": sum_m} if filter_kind == "alive" else {}
    extras.update(capped=capped, log_nc=log_nc)
    return Trace(tuple(model.param_names), draws, accepted, extras)


def collapsed_pmmh_hook(model, y, kernel, N, proposal, iterations, rng, filter_kind="standard",
                        eta_proposal=None, phi_proposal=None, use_samplers=True, **kwargs):
    """PMMH on the collapsed (noise-space) representation of an HMM.

    The filter draws the latent and observation noises and maps them through
    ``rho`` and ``obs_map``; noise streams without a sampler are importance
    sampled and weighted by their density.  Other arguments as in
    :func:`run_pmmh`.
    """
    prop = CollapsedPropagator(model, eta_proposal, phi_proposal, use_samplers)
    return run_pmmh(model, y, kernel, N, filter_kind, proposal, iterations, rng, propagator=prop, **kwargs)
