"""Metropolis-Hastings kernels for i.i.d. and observation-driven ABC targets.

Five kernels share one skeleton: propose theta', reject at once if the prior
vanishes, build the new likelihood estimate (or exact value), and accept with
probability ``1 ^ exp(log_a)``.  A proposed state whose estimate is zero is
rejected before the acceptance uniform is drawn.

=============  ============================================  ===================
kernel         cached log factor                             auxiliary state
=============  ============================================  ===================
marginal       exact log ABC likelihood                      none
naive          ``-n log|B|`` (all indicators are one)        u_{1:n}
ntrials        ``sum log(h_i / N) - n log|B|``               hit counts h_{1:n}
nhit           ``sum log((N-1)/(m_i-1)) - n log|B|``         trial counts m_{1:n}
collapsed      ``sum log p_theta(phi_i)``                    phi_{1:n}
=============  ============================================  ===================
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .abc_core import AbcKernel, as_data
from .models import CapabilityError, CollapsedState, Model, UsageError

DEFAULT_CAP = 10**7
_MAX_BATCH_ELEMS = 1 << 22


class InitializationError(RuntimeError):
    """No valid starting state was found within the allowed attempts."""


@dataclass
class ChainState:
    theta: np.ndarray
    log_prior: float
    log_factor: float
    aux: object = None


@dataclass
class Trace:
    """MCMC output: one row of ``draws`` per iteration plus per-iteration extras."""

    param_names: tuple
    draws: np.ndarray
    accepted: np.ndarray
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.draws)

    @property
    def acceptance_rate(self):
        return float(np.mean(self.accepted)) if len(self.accepted) else 0.0

    def column(self, name):
        return self.draws[:, self.param_names.index(name)]

    def to_csv(self, path):
        extra_names = list(self.extras)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "accepted", *self.param_names, *extra_names])
            for t in range(len(self.draws)):
                row = [t, int(self.accepted[t])]
                row += [format(v, ".17g") for v in self.draws[t]]
                row += [_fmt(self.extras[k][t]) for k in extra_names]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[:2] != ["iter", "accepted"]:
            raise ValueError(f"{path}: not a trace file (header {header[:2]})")
        data = np.array([[float(v) for v in r] for r in body]) if body else np.empty((0, len(header)))
        extra_start = len(header)
        for k in TRACE_EXTRAS:
            if k in header:
                extra_start = min(extra_start, header.index(k))
        names = tuple(header[2:extra_start])
        extras = {k: data[:, header.index(k)] for k in header[extra_start:]}
        return cls(names, data[:, 2:extra_start], data[:, 1].astype(bool), extras)


TRACE_EXTRAS = ("sum_m", "capped", "log_nc")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _accept(rng, log_a):
    u = rng.random()
    return bool(log_a >= 0.0 or u < np.exp(log_a))


def sample_until_hits(model, theta, y, kernel: AbcKernel, N, rng, cap=DEFAULT_CAP, rows=None):
    """Simulate each datum until ``N`` auxiliary draws hit its ball.

    Returns ``(m, capped)``: ``m[i]`` counts the draws up to and including the
    N-th hit; rows that reach ``cap`` draws first are flagged in ``capped``
    (their ``m`` is the number of draws spent).  Draws are made in batches per
    row; surplus draws after the N-th hit are discarded, which leaves the law
    of ``m`` negative binomial.
    """
    y = as_data(y)
    rows = np.arange(len(y)) if rows is None else np.asarray(rows)
    k = len(rows)
    m = np.zeros(k, dtype=np.int64)
    hits = np.zeros(k, dtype=np.int64)
    capped = np.zeros(k, dtype=bool)
    active = np.arange(k)
    spent = 0
    batch = max(2 * N, 16)
    while active.size:
        b = int(min(batch, cap - spent))
        u = model.sample_aux(theta, y, rng, b, rows=rows[active])
        c = np.cumsum(kernel.hits(u, y[rows[active]][:, None, :]), axis=1) + hits[active][:, None]
        done = c[:, -1] >= N
        pos = np.argmax(c >= N, axis=1)
        m[active[done]] = spent + pos[done] + 1
        hits[active] = c[:, -1]
        spent += b
        active = active[~done]
        if active.size and spent >= cap:
            capped[active] = True
            m[active] = spent
            break
        batch = int(min(2 * batch, max(_MAX_BATCH_ELEMS // max(active.size, 1), N)))
    return m, capped


def _first_hits(draw, y, kernel, rng, cap):
    """For each datum, the first candidate from ``draw(rows, size, rng)`` that hits its ball."""
    n = len(y)
    out = None
    active = np.arange(n)
    spent = 0
    batch = 16
    while active.size:
        b = int(min(batch, cap - spent))
        cand, u = draw(active, b, rng)
        h = kernel.hits(u, y[active][:, None, :])
        done = h.any(axis=1)
        pos = np.argmax(h, axis=1)
        if out is None:
            out = np.empty((n,) + cand.shape[2:])
        out[active[done]] = cand[done, pos[done]]
        spent += b
        active = active[~done]
        if active.size and spent >= cap:
            return None
        batch = int(min(2 * batch, max(_MAX_BATCH_ELEMS // max(active.size, 1), 1)))
    return out


class _AuxDraw:
    def __init__(self, model, theta, y):
        self.model, self.theta, self.y = model, theta, y

    def __call__(self, rows, size, rng):
        u = self.model.sample_aux(self.theta, self.y, rng, size, rows=rows)
        return u, u


class _NoiseDraw:
    """Noise candidates from ``p_theta``, or from N(0, I) when the model cannot sample it.

    Either way a hitting candidate is a valid starting point; only the
    support of the collapsed target matters for initialization.
    """

    def __init__(self, model, theta, y, from_model=True):
        self.model, self.theta, self.y = model, theta, y
        self.from_model = from_model

    def __call__(self, rows, size, rng):
        shape = (len(rows), size)
        if self.from_model:
            phi = self.model.sample_noise(self.theta, rng, shape)
        else:
            phi = rng.standard_normal(shape + (self.model.noise_dim,))
        u = self.model.obs_from_noise(self.theta, self.y[rows], phi, rows=rows)
        if not self.from_model:
            # candidates outside the noise support cannot start the chain
            bad = ~np.isfinite(self.model.noise_logpdf(self.theta, phi))
            u = np.where(bad[..., None], np.inf, u)
        return phi, u


class _Kernel:
    name = ""
    extra_names: tuple = ()

    def __init__(self, model, y, kernel: AbcKernel, proposal):
        if model.kind not in ("iid", "odts"):
            raise CapabilityError(f"{self.name} kernel needs an i.i.d. or observation-driven model")
        self.model = model
        self.y = as_data(y)
        if self.y.shape[1] != kernel.dim:
            raise ValueError(f"kernel dimension {kernel.dim} does not match data dimension {self.y.shape[1]}")
        self.kernel = kernel
        self.proposal = proposal
        self.n = len(self.y)

    def init_state(self, theta, rng, cap=DEFAULT_CAP):
        """Valid starting state at ``theta``, or None if the target vanishes there."""
        raise NotImplementedError

    def step(self, state, rng):
        """One MH transition; returns ``(state, accepted, flagged)``."""
        raise NotImplementedError

    def extras(self, state):
        return ()

    def _propose(self, state, rng):
        theta, lq = self.proposal.propose(state.theta, rng)
        return theta, self.model.log_prior(theta), lq

    def _finish(self, state, rng, theta, lp, lq, lf, aux):
        log_a = lf - state.log_factor + lp - state.log_prior + lq
        if _accept(rng, log_a):
            return ChainState(theta, lp, lf, aux), True, False
        return state, False, False


class MarginalMH(_Kernel):
    """Exact marginal MH on the ABC posterior; needs ``model.abc_loglik``."""

    name = "marginal"

    def __init__(self, model, y, kernel, proposal):
        # any model kind works, as long as the ABC likelihood is tractable
        if type(model).abc_loglik is Model.abc_loglik:
            raise CapabilityError(f"{model.name} has no tractable ABC likelihood")
        self.model, self.y, self.kernel, self.proposal = model, as_data(y), kernel, proposal
        self.n = len(self.y)

    def _loglik(self, theta):
        return self.model.abc_loglik(theta, self.y, self.kernel.eps)

    def init_state(self, theta, rng, cap=DEFAULT_CAP):
        lp = self.model.log_prior(theta)
        lf = self._loglik(theta)
        if not (np.isfinite(lp) and np.isfinite(lf)):
            return None
        return ChainState(np.asarray(theta, dtype=float), lp, lf)

    def step(self, state, rng):
        theta, lp, lq = self._propose(state, rng)
        if lp == -np.inf:
            return state, False, False
        lf = self._loglik(theta)
        if lf == -np.inf:
            return state, False, False
        return self._finish(state, rng, theta, lp, lq, lf, None)


class NaiveABCMH(_Kernel):
    """One auxiliary draw per datum; all must hit.

    With ``early_reject`` the data are simulated in blocks of
    ``block`` rows and simulation stops at the first block with a miss.  The
    acceptance law is unchanged but fewer random numbers are consumed.
    """

    name = "naive"

    def __init__(self, model, y, kernel, proposal, early_reject=False, block=16):
        super().__init__(model, y, kernel, proposal)
        self.early_reject = early_reject
        self.block = block
        self._lf = -self.n * kernel.log_ball_volume

    def init_state(self, theta, rng, cap=DEFAULT_CAP):
        lp = self.model.log_prior(theta)
        if not np.isfinite(lp):
            return None
        u = _first_hits(_AuxDraw(self.model, theta, self.y), self.y, self.kernel, rng, cap)
        if u is None:
            return None
        return ChainState(np.asarray(theta, dtype=float), lp, self._lf, u)

    def validate(self, state):
        if state.aux is None or not np.all(self.kernel.hits(state.aux, self.y)):
            raise UsageError("naive ABC state must hold auxiliary data that all hit")

    def step(self, state, rng):
        theta, lp, lq = self._propose(state, rng)
        if lp == -np.inf:
            return state, False, False
        if self.early_reject:
            u = np.empty_like(self.y)
            for lo in range(0, self.n, self.block):
                rows = np.arange(lo, min(lo + self.block, self.n))
                u[rows] = self.model.sample_aux(theta, self.y, rng, 1, rows=rows)[:, 0, :]
                if not np.all(self.kernel.hits(u[rows], self.y[rows])):
                    return state, False, False
        else:
            u = self.model.sample_aux(theta, self.y, rng, 1)[:, 0, :]
            if not np.all(self.kernel.hits(u, self.y)):
                return state, False, False
        return self._finish(state, rng, theta, lp, lq, self._lf, u)


class NTrialsMH(_Kernel):
    """``N`` auxiliary draws per datum; the estimate uses per-datum hit fractions.

    Only the hit counts are stored, which is all the acceptance ratio needs.
    """

    name = "ntrials"

    def __init__(self, model, y, kernel, proposal, N):
        super().__init__(model, y, kernel, proposal)
        if N < 1:
            raise ValueError("N must be >= 1")
        self.N = int(N)

    def _log_factor(self, h):
        with np.errstate(divide="ignore"):
            return float(np.sum(np.log(h / self.N)) - self.n * self.kernel.log_ball_volume)

    def _counts(self, theta, rng):
        u = self.model.sample_aux(theta, self.y, rng, self.N)
        return self.kernel.hits(u, self.y[:, None, :]).sum(axis=1)

    def init_state(self, theta, rng, cap=DEFAULT_CAP):
        lp = self.model.log_prior(theta)
        if not np.isfinite(lp):
            return None
        h = self._counts(theta, rng)
        zero = np.flatnonzero(h == 0)
        if zero.size:
            # a hit found by extra simulation stands in for one of the N trials
            draw = _RowView(_AuxDraw(self.model, theta, self.y), zero)
            if _first_hits(draw, self.y[zero], self.kernel, rng, cap) is None:
                return None
            h[zero] = 1
        return ChainState(np.asarray(theta, dtype=float), lp, self._log_factor(h), h)

    def step(self, state, rng):
        theta, lp, lq = self._propose(state, rng)
        if lp == -np.inf:
            return state, False, False
        h = self._counts(theta, rng)
        if np.any(h == 0):
            return state, False, False
        return self._finish(state, rng, theta, lp, lq, self._log_factor(h), h)


class _RowView:
    """Restrict a draw function to a subset of data rows."""

    def __init__(self, draw, rows):
        self.draw, self.rows = draw, rows

    def __call__(self, rows, size, rng):
        return self.draw(self.rows[rows], size, rng)


class NHitMH(_Kernel):
    """Simulate each datum until ``N >= 2`` hits; the estimate uses the trial counts.

    A proposal for which some datum needs more than ``cap`` draws is abandoned
    and counted as a flagged rejection.
    """

    name = "nhit"
    extra_names = ("sum_m",)

    def __init__(self, model, y, kernel, proposal, N, cap=DEFAULT_CAP):
        super().__init__(model, y, kernel, proposal)
        if N < 2:
            raise ValueError("the random-trials kernel needs N >= 2")
        self.N = int(N)
        self.cap = int(cap)

    def _log_factor(self, m):
        return float(np.sum(np.log((self.N - 1) / (m - 1.0))) - self.n * self.kernel.log_ball_volume)

    def init_state(self, theta, rng, cap=None):
        lp = self.model.log_prior(theta)
        if not np.isfinite(lp):
            return None
        m, capped = sample_until_hits(self.model, theta, self.y, self.kernel, self.N, rng, cap or self.cap)
        if capped.any():
            return None
        return ChainState(np.asarray(theta, dtype=float), lp, self._log_factor(m), m)

    def step(self, state, rng):
        theta, lp, lq = self._propose(state, rng)
        if lp == -np.inf:
            return state, False, False
        m, capped = sample_until_hits(self.model, theta, self.y, self.kernel, self.N, rng, self.cap)
        if capped.any():
            return state, False, True
        new, accepted, _ = self._finish(state, rng, theta, lp, lq, self._log_factor(m), m)
        return new, accepted, False

    def extras(self, state):
        return (int(state.aux.sum()),)


class CollapsedMH(_Kernel):
    """Blocked MH on ``(theta, phi_{1:n})`` for the collapsed target.

    The target is ``prod_i I(|varphi_theta(phi_i) - y_i| < eps) p_theta(phi_i) * prior``.
    Each step moves theta with the noise fixed, then refreshes every
    ``phi_i`` independently: from ``p_theta`` when the model can sample it
    (accept iff the induced observation hits), otherwise by a Gaussian random
    walk of size ``noise_step`` accepted with the density ratio.
    """

    name = "collapsed"

    def __init__(self, model, y, kernel, proposal, noise_step=0.5):
        super().__init__(model, y, kernel, proposal)
        if not model.has_noise_density:
            raise CapabilityError(f"{model.name} exposes no observation-noise density")
        self.noise_step = noise_step
        try:
            model.sample_noise(np.asarray(model.default_theta()), np.random.default_rng(0), (1, 1))
            self.can_sample = True
        except CapabilityError:
            self.can_sample = False

    def _noise_lp(self, theta, phi):
        return float(np.sum(self.model.noise_logpdf(theta, phi)))

    def _all_hit(self, theta, phi):
        return bool(np.all(self.kernel.hits(self.model.obs_from_noise(theta, self.y, phi), self.y)))

    def init_state(self, theta, rng, cap=DEFAULT_CAP):
        lp = self.model.log_prior(theta)
        if not np.isfinite(lp):
            return None
        draw = _NoiseDraw(self.model, theta, self.y, self.can_sample)
        phi = _first_hits(draw, self.y, self.kernel, rng, cap)
        if phi is None:
            return None
        return ChainState(np.asarray(theta, dtype=float), lp, self._noise_lp(theta, phi), CollapsedState(phi))

    def step(self, state, rng):
        phi = state.aux.obs_noise
        theta, lp, lq = self._propose(state, rng)
        accepted = False
        if lp > -np.inf and self._all_hit(theta, phi):
            lf = self._noise_lp(theta, phi)
            state, accepted, _ = self._finish(state, rng, theta, lp, lq, lf, state.aux)
        theta = state.theta
        if self.can_sample:
            cand = self.model.sample_noise(theta, rng, (self.n,))
            ok = self.kernel.hits(self.model.obs_from_noise(theta, self.y, cand), self.y)
        else:
            cand = phi + self.noise_step * rng.standard_normal(phi.shape)
            ok = self.kernel.hits(self.model.obs_from_noise(theta, self.y, cand), self.y)
            log_r = self.model.noise_logpdf(theta, cand) - self.model.noise_logpdf(theta, phi)
            ok &= rng.random(self.n) < np.exp(np.minimum(log_r, 0.0))
        if ok.any():
            phi = state.aux.obs_noise.copy()
            phi[ok] = cand[ok]
            state = replace(state, log_factor=self._noise_lp(theta, phi), aux=CollapsedState(phi))
        return state, accepted, False


KERNELS = {k.name: k for k in (MarginalMH, NaiveABCMH, NTrialsMH, NHitMH, CollapsedMH)}


def marginal_mh_step(state, model, y, kernel, proposal, rng):
    return MarginalMH(model, y, kernel, proposal).step(state, rng)[0]


def naive_abc_mh_step(state, model, y, kernel, proposal, rng, early_reject=False):
    k = NaiveABCMH(model, y, kernel, proposal, early_reject=early_reject)
    k.validate(state)
    return k.step(state, rng)[0]


def ntrials_mh_step(state, model, y, kernel, proposal, N, rng):
    return NTrialsMH(model, y, kernel, proposal, N).step(state, rng)[0]


def nhit_mh_step(state, model, y, kernel, proposal, N, rng, cap=DEFAULT_CAP):
    return NHitMH(model, y, kernel, proposal, N, cap).step(state, rng)[0]


def collapsed_mh_step(state, model, y, kernel, proposal, rng):
    return CollapsedMH(model, y, kernel, proposal).step(state, rng)[0]


def default_N(n):
    """Number of trials per datum, scaling linearly with the data size."""
    return max(2, int(round(n / 2)))


def initialize(kernel, rng, init="prior", max_attempts=100):
    """Starting state from ``init`` (a parameter vector, or ``"prior"`` to draw one)."""
    model = kernel.model
    for attempt in range(max_attempts):
        theta = model.sample_prior(rng) if isinstance(init, str) else np.asarray(init, dtype=float)
        state = kernel.init_state(theta, rng)
        if state is not None:
            return state
    raise InitializationError(
        f"{kernel.name}: no valid starting state after {max_attempts} attempts "
        f"(init={init!r}); try a larger eps or a different starting point"
    )


def run_chain(kernel, iterations, rng, init="prior", max_init_attempts=100):
    """Initialize, iterate ``kernel.step`` and record a :class:`Trace`.

    Extras: ``capped`` (proposal abandoned at the trial cap) for every kernel,
    plus the kernel's own channels (``sum_m`` for the random-trials kernel).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    state = initialize(kernel, rng, init, max_init_attempts)
    d = len(state.theta)
    draws = np.empty((iterations, d))
    accepted = np.zeros(iterations, dtype=bool)
    capped = np.zeros(iterations, dtype=bool)
    extra = {k: np.zeros(iterations, dtype=np.int64) for k in kernel.extra_names}
    for t in range(iterations):
        state, accepted[t], capped[t] = kernel.step(state, rng)
        draws[t] = state.theta
        for k, v in zip(kernel.extra_names, kernel.extras(state)):
            extra[k][t] = v
    extra["capped"] = capped
    return Trace(tuple(kernel.model.param_names), draws, accepted, extra)


def estimate_hit_probabilities(model, theta, y, kernel, N, rng):
    """Monte Carlo hit probabilities ``alpha_i`` from ``N`` draws per datum."""
    y = as_data(y)
    u = model.sample_aux(theta, y, rng, N)
    return kernel.hits(u, y[:, None, :]).mean(axis=1)
