"""Diagonal Gaussian mixtures with exact denoisers at every noise level.

For ``X_t = a X_0 + s Z`` with ``X_0 ~ sum_i w_i N(mu_i, diag(V_i))`` the
marginal is again a mixture and the posterior mean is available in closed
form.  The low-level functions take ``(alpha, sigma)`` directly so the same
code also serves auxiliary mixtures (e.g. the law of ``X_tn``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, NumericalError
from .schedule import NoiseSchedule, _col, transition

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if mu.shape != var.shape or mu.shape[0] != w.shape[0]:
            raise DomainError("weights/means/variances disagree in shape")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be non-negative and sum to 1")
        if np.any(var <= 0):
            raise DomainError("variances must be positive")
        for name, v in (("weights", w), ("means", mu), ("variances", var)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def marginal(self, alpha: float, sigma: float) -> "GaussianMixture":
        """Law of ``alpha X + sigma Z``."""
        return GaussianMixture(self.weights, alpha * self.means,
                               alpha**2 * self.variances + sigma**2)

    def describe(self) -> dict:
        return {"dim": self.dim, "weights": self.weights.tolist(),
                "means": self.means.tolist(), "variances": self.variances.tolist()}


def m1(dim: int = 1) -> GaussianMixture:
    """Standard Gaussian."""
    return GaussianMixture([1.0], np.zeros((1, dim)), np.ones((1, dim)))


def m2() -> GaussianMixture:
    """Two near-point masses at -2 and +2 in one dimension."""
    return GaussianMixture([0.5, 0.5], [[-2.0], [2.0]], [[1e-12], [1e-12]])


def ring8(radius: float = 4.0, var: float = 0.09) -> GaussianMixture:
    ang = 2 * np.pi * np.arange(8) / 8
    means = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return GaussianMixture(np.full(8, 1 / 8), means, np.full((8, 2), var))


PRESETS = {"m1": m1, "m2": m2, "ring8": ring8, "m3": ring8}


def preset(name: str) -> GaussianMixture:
    try:
        return PRESETS[name]()
    except KeyError:
        raise DomainError(f"unknown mixture preset {name!r}") from None


def _as_batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != dim:
        raise DomainError(f"expected vectors of length {dim}, got {x.shape[-1]}")
    return x, single


def _component_logpdf(gm, x, alpha, sigma):
    """``log w_i + log N(x; alpha mu_i, alpha^2 V_i + sigma^2)``, shape (n, k)."""
    a, s = _col(alpha), _col(sigma)
    if a.ndim == 2:
        a, s = a[:, :, None], s[:, :, None]
    var = a**2 * gm.variances + s**2          # (k, d) or (n, k, d)
    diff = x[:, None, :] - a * gm.means        # (n, k, d)
    quad = np.sum(diff**2 / var + np.log(var) + LOG_2PI, axis=-1)
    return np.log(gm.weights) - 0.5 * quad, diff, var


def log_density(gm: GaussianMixture, x, alpha=1.0, sigma=0.0):
    x, single = _as_batch(x, gm.dim)
    with np.errstate(divide="ignore"):
        lp, _, _ = _component_logpdf(gm, x, alpha, sigma)
    out = logsumexp(lp, axis=1)
    return out[0] if single else out


def responsibilities(gm: GaussianMixture, x, alpha=1.0, sigma=0.0):
    x, _ = _as_batch(x, gm.dim)
    with np.errstate(divide="ignore"):
        lp, _, _ = _component_logpdf(gm, x, alpha, sigma)
    return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))


def gaussian_posterior_mean(gm: GaussianMixture, x, alpha, sigma):
    """``E[X | alpha X + sigma Z = x]`` for ``X`` drawn from ``gm``."""
    x, single = _as_batch(x, gm.dim)
    with np.errstate(divide="ignore"):
        lp, diff, var = _component_logpdf(gm, x, alpha, sigma)
    r = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
    a = _col(alpha)
    if a.ndim == 2:
        a = a[:, :, None]
    comp = gm.means + a * gm.variances / var * diff  # (n, k, d)
    out = np.einsum("nk,nkd->nd", r, comp)
    return out[0] if single else out


def sample_prior(gm: GaussianMixture, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 0:
        raise DomainError("n must be non-negative")
    idx = rng.choice(gm.n_components, size=n, p=gm.weights)
    z = rng.standard_normal((n, gm.dim))
    return gm.means[idx] + np.sqrt(gm.variances[idx]) * z


def _alpha_sigma(schedule: NoiseSchedule, t):
    return schedule.alpha(t), schedule.sigma(t)


def posterior_mean(gm: GaussianMixture, x_t, t, schedule: NoiseSchedule):
    """Exact ``E[X_0 | X_t = x_t]`` under the schedule's forward process."""
    a, s = _alpha_sigma(schedule, t)
    if np.all(s == 0):
        return np.array(x_t, dtype=np.float64)
    return gaussian_posterior_mean(gm, x_t, a, s)


def score(gm: GaussianMixture, x_t, t, schedule: NoiseSchedule):
    """``grad log p_t(x_t) = (alpha_t E[X_0 | x_t] - x_t) / sigma_t^2``."""
    a, s = _alpha_sigma(schedule, t)
    if np.any(s <= 0):
        raise DomainError("score undefined at sigma_t = 0")
    pm = gaussian_posterior_mean(gm, x_t, a, s)
    x = np.asarray(x_t, dtype=np.float64)
    if pm.ndim == 2:
        a, s = _col(a), _col(s)
    return (a * pm - x) / s**2


def log_density_t(gm: GaussianMixture, x_t, t, schedule: NoiseSchedule):
    a, s = _alpha_sigma(schedule, t)
    return log_density(gm, x_t, a, s)


def nature_posterior_mean(gm: GaussianMixture, x_t, t, schedule: NoiseSchedule):
    """Exact ``E[X_tn | X_t = x_t]`` for ``t >= t_n``.

    ``X_tn`` has the marginal mixture law and ``X_t`` is a further Gaussian
    corruption of it, so this is a posterior mean of the auxiliary mixture.
    """
    a_n, s_n = _alpha_sigma(schedule, schedule.t_n)
    aux = gm.marginal(float(a_n), float(s_n))
    scale, std = transition(schedule, schedule.t_n, t)
    return gaussian_posterior_mean(aux, x_t, scale, std)


def mc_posterior_mean(gm: GaussianMixture, x_t, t, schedule: NoiseSchedule, n: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Self-normalised importance estimate of ``E[X_0 | x_t]`` from prior draws."""
    if n < 1:
        raise DomainError("n must be >= 1")
    a, s = (float(v) for v in _alpha_sigma(schedule, t))
    if s <= 0:
        raise DomainError("importance weights undefined at sigma_t = 0")
    x = np.asarray(x_t, dtype=np.float64)
    x0 = sample_prior(gm, n, rng)
    with np.errstate(over="ignore", invalid="ignore"):
        logw = -0.5 * np.sum((x - a * x0) ** 2, axis=1) / s**2
        top = logw.max()
        w = np.exp(logw - top)
    if not np.isfinite(top) or w.sum() == 0:
        raise NumericalError(f"importance weights degenerate (max log-weight {top})")
    return w @ x0 / w.sum()


class OracleDenoiser:
    """Exact posterior-mean denoiser with the same calling convention as a net.

    Carries no parameters; :meth:`backward` returns an empty gradient.
    """

    n_params = 0

    def __init__(self, gm: GaussianMixture):
        self.gm = gm

    def forward(self, x, t, schedule):
        return posterior_mean(self.gm, x, t, schedule)

    __call__ = forward

    def backward(self, x, t, schedule, upstream):
        return np.zeros(0)

    def vjp(self, x, t, schedule):
        out = self.forward(x, t, schedule)
        return out, lambda upstream: np.zeros(0)

    def jvp_input(self, x, t, schedule, dx):
        a, s = _alpha_sigma(schedule, t)
        return posterior_mean_jvp(self.gm, x, a, s, dx)


def posterior_mean_jvp(gm: GaussianMixture, x, alpha, sigma, dx):
    """Directional derivative of :func:`gaussian_posterior_mean` along ``dx``.

    Uses ``d m_i = A_i dx`` with ``A_i = alpha V_i / var_i`` and
    ``d r_i = r_i (g_i - sum_j r_j g_j) . dx`` with ``g_i = -(x - alpha mu_i) / var_i``.
    """
    x, single = _as_batch(x, gm.dim)
    dx = np.broadcast_to(np.atleast_2d(np.asarray(dx, dtype=np.float64)), x.shape)
    with np.errstate(divide="ignore"):
        lp, diff, var = _component_logpdf(gm, x, alpha, sigma)
    r = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
    a = _col(alpha)
    if a.ndim == 2:
        a = a[:, :, None]
    gain = a * gm.variances / var
    comp = gm.means + gain * diff
    g_dx = np.sum(-diff / var * dx[:, None, :], axis=-1)          # (n, k)
    dr = r * (g_dx - np.sum(r * g_dx, axis=1, keepdims=True))
    out = np.einsum("nk,nkd->nd", r, gain * dx[:, None, :]) + np.einsum("nk,nkd->nd", dr, comp)
    return out[0] if single else out
