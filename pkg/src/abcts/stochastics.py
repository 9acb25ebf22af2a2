"""Seedable random streams and the samplers used throughout the package.

Every sampler takes a :class:`numpy.random.Generator` explicitly; there is no
module-level random state.  Streams are built from ``(seed, stream_id)`` with
:class:`numpy.random.SeedSequence` spawn keys on top of PCG64, so distinct
stream ids give independent sequences and equal pairs replay exactly (for a
fixed numpy version, see ``GENERATOR``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GENERATOR = "PCG64 via numpy.random.SeedSequence(seed, spawn_key=(stream_id,))"


class DomainError(ValueError):
    """Argument outside the domain of a distribution or model."""


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return the generator for substream ``stream_id`` of ``seed``."""
    if seed < 0 or seed >= 2**64:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    if stream_id < 0:
        raise DomainError(f"stream_id must be non-negative, got {stream_id}")
    ss = np.random.SeedSequence(seed, spawn_key=(stream_id,))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class StableParams:
    """Alpha-stable law in the Samorodnitsky-Taqqu (Nolan S1) parameterization.

    With ``alpha=2`` the law is Normal(location, 2 * scale**2); with
    ``alpha=1, beta_skew=0`` it is Cauchy(location, scale).
    """

    alpha: float
    beta_skew: float = 0.0
    scale: float = 1.0
    location: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 2.0:
            raise DomainError(f"alpha must lie in (0, 2], got {self.alpha}")
        if abs(self.beta_skew) > 1.0:
            raise DomainError(f"beta_skew must lie in [-1, 1], got {self.beta_skew}")
        if not self.scale > 0.0:
            raise DomainError(f"scale must be positive, got {self.scale}")


def sample_gaussian(rng, mean=0.0, sd=1.0, size=None):
    if np.any(np.asarray(sd) <= 0):
        raise DomainError("sd must be positive")
    return rng.normal(mean, sd, size)


def sample_gamma(rng, shape, rate, size=None):
    """Gamma draw with mean ``shape / rate``.

    Shapes below one are boosted: G(shape) = G(shape + 1) * U**(1/shape).
    """
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise DomainError("gamma shape and rate must be positive")
    if size is None:
        size = np.broadcast(shape, rate).shape or None
    if np.all(shape >= 1.0):
        return rng.standard_gamma(shape, size) / rate
    g = rng.standard_gamma(shape + 1.0, size)
    u = rng.random(size)
    return g * u ** (1.0 / shape) / rate


def sample_inverse_gamma(rng, shape, scale, size=None):
    """Inverse-gamma draw, density proportional to x**(-shape-1) exp(-scale/x).

    The mode is ``scale / (shape + 1)``; the variance is infinite for
    ``shape <= 2``.
    """
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(scale) <= 0):
        raise DomainError("inverse-gamma shape and scale must be positive")
    return 1.0 / sample_gamma(rng, shape, scale, size)


def standard_stable(rng, alpha, beta_skew=0.0, size=None):
    """Chambers-Mallows-Stuck draw from S1(alpha, beta_skew, scale=1, location=0)."""
    v = rng.uniform(-np.pi / 2, np.pi / 2, size)
    w = rng.standard_exponential(size)
    if alpha == 1.0:
        half_pi = np.pi / 2
        t = half_pi + beta_skew * v
        return (t * np.tan(v) - beta_skew * np.log(half_pi * w * np.cos(v) / t)) / half_pi
    zeta = beta_skew * np.tan(np.pi * alpha / 2)
    b = np.arctan(zeta) / alpha
    s = (1.0 + zeta**2) ** (1.0 / (2.0 * alpha))
    ab = alpha * (v + b)
    return (
        s
        * np.sin(ab)
        / np.cos(v) ** (1.0 / alpha)
        * (np.cos(v - ab) / w) ** ((1.0 - alpha) / alpha)
    )


def scale_stable(z, alpha, beta_skew, scale, location=0.0):
    """Map standard S1 draws ``z`` to scale ``scale`` (array allowed) and location."""
    if alpha == 1.0:
        return scale * z + (2.0 / np.pi) * beta_skew * scale * np.log(scale) + location
    return scale * z + location


def sample_stable(rng, p: StableParams, size=None):
    z = standard_stable(rng, p.alpha, p.beta_skew, size)
    return scale_stable(z, p.alpha, p.beta_skew, p.scale, p.location)


def _ball_offsets(rng, shape, eps):
    d = shape[-1]
    if d == 1:
        return rng.uniform(-eps, eps, shape)
    g = rng.standard_normal(shape)
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    return g * eps * rng.random(shape[:-1] + (1,)) ** (1.0 / d)


def sample_uniform_ball(rng, center, eps, size=None):
    """Uniform draw on the open Euclidean ``eps``-ball around ``center``.

    ``center`` has shape ``(..., d)``; the result has shape ``size + center.shape``.
    For d = 1 this is Uniform(center - eps, center + eps); for d >= 2 a
    Gaussian direction is combined with radius ``eps * U**(1/d)``.  Draws that
    round onto the boundary are redrawn so the ball stays open.
    """
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    center = np.atleast_1d(np.asarray(center, dtype=float))
    shape = (() if size is None else tuple(np.atleast_1d(size))) + center.shape
    out = center + _ball_offsets(rng, shape, eps)
    full_center = np.broadcast_to(center, shape)
    bad = np.linalg.norm(out - center, axis=-1) >= eps
    for _ in range(64):
        if not np.any(bad):
            return out
        redraw = _ball_offsets(rng, (int(bad.sum()), shape[-1]), eps)
        out[bad] = full_center[bad] + redraw
        bad = np.linalg.norm(out - center, axis=-1) >= eps
    # eps below the floating-point spacing at center: only center itself is inside
    out[bad] = full_center[bad]
    return out
