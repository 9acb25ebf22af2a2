"""The eps-ball kernel and exact/quadrature evaluations of the ABC likelihood.

The per-datum ABC likelihood is the model density averaged over the open
Euclidean eps-ball around the datum,

    pbar_eps(y) = (1 / |B_eps|) * integral_{|u - y| < eps} p(u) du,

and the likelihood of a series is the product of the per-datum factors.
Everything is accumulated in log space.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.special import gammaln, log_ndtr

from .stochastics import DomainError


def as_data(y):
    """Return the ``n x d_y`` array behind a series (or an array-like)."""
    data = np.asarray(getattr(y, "data", y), dtype=float)
    return data[:, None] if data.ndim == 1 else data


def log_ball_volume(dim, eps):
    if dim < 1 or not eps > 0:
        raise DomainError(f"need dim >= 1 and eps > 0, got dim={dim}, eps={eps}")
    return 0.5 * dim * np.log(np.pi) + dim * np.log(eps) - gammaln(0.5 * dim + 1.0)


def ball_volume(dim, eps):
    return float(np.exp(log_ball_volume(dim, eps)))


@dataclass(frozen=True)
class AbcKernel:
    """Indicator kernel on the open Euclidean ball of radius ``eps`` in ``dim`` dimensions."""

    eps: float
    dim: int = 1

    def __post_init__(self):
        if not self.eps > 0:
            raise DomainError(f"eps must be positive, got {self.eps}")
        if self.dim < 1:
            raise DomainError(f"dim must be >= 1, got {self.dim}")
        object.__setattr__(self, "log_ball_volume", float(log_ball_volume(self.dim, self.eps)))

    def hits(self, u, y):
        """Boolean array: Euclidean distance between ``u`` and ``y`` (last axis) below eps."""
        u = np.asarray(u, dtype=float)
        y = np.asarray(y, dtype=float)
        if u.shape[-1] != self.dim or y.shape[-1] != self.dim:
            raise ValueError(f"dimension mismatch: kernel dim {self.dim}, got {u.shape[-1]} and {y.shape[-1]}")
        if self.dim == 1:
            with np.errstate(invalid="ignore"):
                return np.abs(u[..., 0] - y[..., 0]) < self.eps
        with np.errstate(invalid="ignore", over="ignore"):
            return np.sqrt(np.sum((u - y) ** 2, axis=-1)) < self.eps


def hit(u, y, kernel: AbcKernel) -> bool:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if u.shape != y.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {y.shape}")
    return bool(kernel.hits(u, y))


def _log_diff_ndtr(lo, hi):
    """``log(Phi(hi) - Phi(lo))`` for ``lo < hi``, accurate in both tails."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    # reflect into the lower tail where log_ndtr keeps full precision
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    la, lb = log_ndtr(a), log_ndtr(b)
    with np.errstate(divide="ignore"):
        return lb + np.log1p(-np.exp(la - lb))


def abc_loglik_gaussian(theta, sigma, y, eps):
    """Log ABC likelihood of datum ``y`` under N(theta, sigma^2), elementwise.

    Equals ``log[(Phi((y-theta+eps)/sigma) - Phi((y-theta-eps)/sigma)) / (2 eps)]``.
    """
    if np.any(np.asarray(sigma) <= 0) or not eps > 0:
        raise DomainError("sigma and eps must be positive")
    d = np.asarray(y, dtype=float) - theta
    return _log_diff_ndtr((d - eps) / sigma, (d + eps) / sigma) - np.log(2.0 * eps)


RULES = ("midpoint", "simpson")


@dataclass(frozen=True)
class QuadratureGrid:
    lower: float
    upper: float
    points: int = 2001
    rule: str = "simpson"

    def __post_init__(self):
        if not self.lower < self.upper:
            raise DomainError("quadrature grid needs lower < upper")
        if self.points < 2:
            raise DomainError("quadrature grid needs at least two points")
        if self.rule not in RULES:
            raise DomainError(f"rule must be one of {RULES}")

    def nodes(self):
        if self.rule == "midpoint":
            h = (self.upper - self.lower) / self.points
            return self.lower + h * (np.arange(self.points) + 0.5)
        return np.linspace(self.lower, self.upper, self.points)

    def integrate(self, values, axis=-1):
        if self.rule == "midpoint":
            return np.sum(values, axis=axis) * (self.upper - self.lower) / self.points
        return simpson(values, x=self.nodes(), axis=axis)


def _ball_integrals(model, theta, centers, eps, points, rule):
    """``integral_{c-eps}^{c+eps} p_theta(u) du`` for each centre (d_y = 1)."""
    unit = QuadratureGrid(-eps, eps, points, rule)
    u = centers[:, None] + unit.nodes()[None, :]
    return unit.integrate(np.exp(model.obs_logpdf(theta, u)), axis=1)


def hit_probabilities(model, theta, y, eps, points=2001, rule="simpson"):
    """Quadrature hit probabilities ``alpha_i = P_theta(|U - y_i| < eps)``."""
    y = as_data(y)
    if y.shape[1] != 1:
        raise DomainError("quadrature oracles are restricted to d_y = 1")
    return _ball_integrals(model, theta, y[:, 0], eps, points, rule)


def abc_loglik_quadrature(model, theta, y, eps, grid=None, points=2001, rule="simpson"):
    """``sum_i log[(1/2eps) integral_{y_i-eps}^{y_i+eps} p_theta(u) du]`` by quadrature.

    ``grid`` may be a :class:`QuadratureGrid` whose ``points`` and ``rule`` are
    used on each ball; the bounds are always the ball itself.
    """
    if grid is not None:
        points, rule = grid.points, grid.rule
    alpha = hit_probabilities(model, theta, y, eps, points, rule)
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(alpha)) - len(alpha) * np.log(2.0 * eps))


def expected_abc_loglik(model, theta, theta_star, eps, y_grid: QuadratureGrid, inner_points=201):
    """``integral log pbar_eps_theta(y) p_theta_star(y) dy`` by nested quadrature."""
    y = y_grid.nodes()
    alpha = _ball_integrals(model, theta, y, eps, inner_points, "simpson")
    with np.errstate(divide="ignore"):
        inner = np.log(np.maximum(alpha, 1e-300)) - np.log(2.0 * eps)
    weight = np.exp(model.obs_logpdf(theta_star, y))
    return float(y_grid.integrate(inner * weight))


@dataclass(frozen=True)
class OracleResult:
    theta: np.ndarray
    objective: np.ndarray
    at_boundary: bool


def theta_star_eps_oracle(model, theta_star, eps, theta_grid, y_grid: QuadratureGrid, inner_points=201):
    """Grid argmax over ``theta_grid`` of :func:`expected_abc_loglik` (one free parameter).

    Warns and sets ``at_boundary`` when the maximizer sits on the grid edge.
    """
    theta_grid = np.asarray(theta_grid, dtype=float)
    if theta_grid.ndim == 1:
        theta_grid = theta_grid[:, None]
    obj = np.array(
        [expected_abc_loglik(model, t, theta_star, eps, y_grid, inner_points) for t in theta_grid]
    )
    k = int(np.argmax(obj))
    edge = k in (0, len(obj) - 1)
    if edge:
        warnings.warn("theta_star_eps_oracle: maximizer on the grid boundary; widen the grid")
    return OracleResult(theta_grid[k], obj, edge)


def abc_posterior_moments(model, y, eps, theta_grid: QuadratureGrid, loglik=None):
    """Posterior mean and variance of a scalar parameter by quadrature over ``theta_grid``.

    ``loglik(theta)`` defaults to ``model.abc_loglik(theta, y, eps)``.
    """
    if loglik is None:
        def loglik(t):
            return model.abc_loglik(t, y, eps)
    t = theta_grid.nodes()
    logf = np.array([loglik(np.array([v])) + model.log_prior(np.array([v])) for v in t])
    w = np.exp(logf - logf.max())
    z = theta_grid.integrate(w)
    mean = theta_grid.integrate(w * t) / z
    var = theta_grid.integrate(w * (t - mean) ** 2) / z
    return float(mean), float(var)


def grid_mle(loglik, theta_grid):
    """Grid argmax of ``loglik`` over a 1-d grid of scalar parameter values."""
    theta_grid = np.asarray(theta_grid, dtype=float)
    vals = np.array([loglik(np.array([t])) for t in theta_grid])
    k = int(np.argmax(vals))
    return float(theta_grid[k]), vals
