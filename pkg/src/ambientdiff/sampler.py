"""Reverse-time samplers driven by a denoiser.

A *denoiser* is anything with ``forward(x, t, schedule)`` returning an
estimate of ``E[X_0 | X_t = x]`` for a batch ``x`` of shape ``(n, dim)``;
both :class:`~ambientdiff.net.DenoiserNet` and
:class:`~ambientdiff.oracle.OracleDenoiser` qualify.  Times may be scalars or
per-row arrays.

VP steps are carried out in the rescaled variable ``x / alpha_t``, which
follows a VE process with noise level ``sigma_t / alpha_t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError
from .schedule import VE, NoiseSchedule, _col, schedule_grid

STOCHASTIC = "stochastic"
DETERMINISTIC = "deterministic"


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 25
    kind: str = STOCHASTIC
    t_start: float | None = None
    t_stop: float = 0.0
    seed: int = 0
    grid: str = "karras"
    final_jump: bool = False

    def __post_init__(self):
        if self.n_steps < 1:
            raise DomainError("n_steps must be >= 1")
        if self.kind not in (STOCHASTIC, DETERMINISTIC):
            raise DomainError(f"unknown sampler kind {self.kind!r}")
        if self.t_stop < 0 or (self.t_start is not None and self.t_start <= self.t_stop):
            raise DomainError("need t_start > t_stop >= 0")


def _levels(schedule, t):
    """Per-row ``(alpha, sigma)`` as column vectors (or scalars)."""
    a, s = schedule.alpha(t), schedule.sigma(t)
    return _col(a), _col(s)


def _check_order(t, t_next):
    if np.any(np.asarray(t_next) >= np.asarray(t)):
        raise DomainError("t_next must be strictly below t")


def reverse_step_stochastic(denoiser, x, t, t_next, schedule: NoiseSchedule,
                            rng: np.random.Generator, h=None, noise=None):
    """One Euler-Maruyama step of the reverse SDE from ``t`` to ``t_next``.

    ``h`` may carry a precomputed ``denoiser(x, t)``; ``noise`` a fixed draw.
    """
    _check_order(t, t_next)
    x = np.asarray(x, dtype=np.float64)
    if h is None:
        h = denoiser.forward(x, t, schedule)
    if noise is None:
        noise = rng.standard_normal(x.shape)
    a, s = _levels(schedule, t)
    a_n, s_n = _levels(schedule, t_next)
    if schedule.kind == VE:
        return x + 2.0 * (s - s_n) * (h - x) / s + np.sqrt(s**2 - s_n**2) * noise
    st, sn = s / a, s_n / a_n
    xs = x / a
    xs = xs + 2.0 * (st - sn) * (h - xs) / st + np.sqrt(st**2 - sn**2) * noise
    return a_n * xs


def reverse_step_deterministic(denoiser, x, t, t_next, schedule: NoiseSchedule, h=None):
    """DDIM step: keep the predicted noise direction, shrink its magnitude."""
    _check_order(t, t_next)
    x = np.asarray(x, dtype=np.float64)
    if h is None:
        h = denoiser.forward(x, t, schedule)
    a, s = _levels(schedule, t)
    a_n, s_n = _levels(schedule, t_next)
    if schedule.kind == VE:
        return h + (s_n / s) * (x - h)
    return a_n * h + s_n * (x - a * h) / s


def run_chain(denoiser, x, ts, schedule: NoiseSchedule, rng, kind=STOCHASTIC):
    """Step ``x`` along the decreasing grid ``ts`` (shape ``(k+1,)`` or ``(k+1, n)``)."""
    for i in range(len(ts) - 1):
        if kind == STOCHASTIC:
            x = reverse_step_stochastic(denoiser, x, ts[i], ts[i + 1], schedule, rng)
        else:
            x = reverse_step_deterministic(denoiser, x, ts[i], ts[i + 1], schedule)
        bad = ~np.all(np.isfinite(x), axis=1)
        if np.any(bad):
            raise NumericalError(
                f"non-finite state at step {i} in trajectory {int(np.argmax(bad))}")
    return x


def per_row_grid(schedule: NoiseSchedule, t_from, t_to, n_steps: int, rho: float = 7.0):
    """Karras grids between per-row endpoints, shape ``(n_steps + 1, n)``."""
    s_hi = np.asarray(schedule.sigma(t_from))
    s_lo = np.asarray(schedule.sigma(t_to))
    u = np.linspace(0.0, 1.0, n_steps + 1)[:, None]
    a, b = s_hi ** (1 / rho), s_lo ** (1 / rho)
    sig = np.clip((a + u * (b - a)) ** rho, s_lo, s_hi)
    ts = np.asarray(schedule.time_at(sig), dtype=np.float64)
    ts[0], ts[-1] = t_from, t_to
    # strict decrease is required by the step functions
    for i in range(1, n_steps):
        ts[i] = np.minimum(ts[i], np.nextafter(ts[i - 1], -np.inf))
    return ts


def initial_noise(schedule: NoiseSchedule, t_start, n, dim, rng):
    std = float(schedule.sigma(t_start)) if schedule.kind == VE else 1.0
    return std * rng.standard_normal((n, dim))


def generate(denoiser, schedule: NoiseSchedule, cfg: SamplerConfig, n: int, dim: int,
             rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` samples by integrating the reverse process from noise."""
    if n == 0:
        return np.zeros((0, dim))
    t_start = schedule.T if cfg.t_start is None else cfg.t_start
    x = initial_noise(schedule, t_start, n, dim, rng)
    ts = schedule_grid(schedule, t_start, cfg.t_stop, cfg.n_steps, cfg.grid)
    x = run_chain(denoiser, x, ts, schedule, rng, cfg.kind)
    if cfg.final_jump and cfg.t_stop > 0:
        x = denoiser.forward(x, cfg.t_stop, schedule)
    return x


def early_stop_config(schedule: NoiseSchedule, n_steps: int = 25, kind=STOCHASTIC,
                      seed: int = 0) -> SamplerConfig:
    """Stop at the nature level and jump to the posterior mean."""
    return SamplerConfig(n_steps=n_steps, kind=kind, t_stop=schedule.t_n, seed=seed,
                         final_jump=True)


def posterior_sample(denoiser, x_t, t, schedule: NoiseSchedule, cfg: SamplerConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """Run the reverse chain from the observed state ``(x_t, t)`` down to ``cfg.t_stop``.

    ``x_t`` may be a batch; each row yields one independent draw.
    """
    if not 0 < t <= schedule.T:
        raise DomainError("posterior sampling needs t in (0, T]")
    x = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    if t <= cfg.t_stop:
        return x.copy()
    ts = schedule_grid(schedule, t, cfg.t_stop, cfg.n_steps, cfg.grid)
    x = run_chain(denoiser, x, ts, schedule, rng, cfg.kind)
    if cfg.final_jump and cfg.t_stop > 0:
        x = denoiser.forward(x, cfg.t_stop, schedule)
    return x
