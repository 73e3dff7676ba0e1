"""Noise schedules and the closed-form algebra of the forward process.

Two processes are supported:

* VE: ``X_t = X_0 + sigma_t Z``
* VP: ``X_t = sqrt(1 - sigma_t^2) X_0 + sigma_t Z``

Every function accepts a scalar time or an array of per-row times; per-row
coefficients come back as column vectors so they broadcast against ``(n, dim)``
batches.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError

VE = "ve"
VP = "vp"

# (t, sigma) anchors of the latent-diffusion schedule used for the VP defaults.
VP_ANCHORS = ((0.0, 0.0), (100.0, 0.325), (500.0, 0.850), (800.0, 0.981), (1000.0, 0.9999))

DEFAULT_GUARD = 1e-10


@dataclass(frozen=True)
class NoiseSchedule:
    """Monotone noise level ``sigma(t)`` on ``[0, T]`` plus the nature time ``t_n``.

    ``anchors`` is ``None`` for the identity form ``sigma(t) = t``; otherwise a
    tuple of ``(t, sigma)`` pairs interpolated piecewise-linearly.  ``t_n = 0``
    denotes clean data.
    """

    kind: str = VE
    T: float = 3.0
    t_n: float = 0.5
    anchors: tuple | None = None
    guard: float = DEFAULT_GUARD
    _ts: np.ndarray = field(init=False, repr=False, compare=False)
    _ss: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in (VE, VP):
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if not self.T > 0:
            raise DomainError("T must be positive")
        if not 0 <= self.t_n < self.T:
            raise DomainError(f"t_n={self.t_n} outside [0, T={self.T})")
        if self.anchors is None:
            ts = np.array([0.0, self.T])
            ss = np.array([0.0, self.T])
        else:
            anchors = tuple((float(a), float(b)) for a, b in self.anchors)
            object.__setattr__(self, "anchors", anchors)
            ts, ss = (np.array(v, dtype=np.float64) for v in zip(*anchors))
            if ts[0] != 0.0 or ss[0] != 0.0:
                raise DomainError("first anchor must be (0, 0)")
            if not np.isclose(ts[-1], self.T):
                raise DomainError("last anchor time must equal T")
            if np.any(np.diff(ts) <= 0) or np.any(np.diff(ss) <= 0):
                raise DomainError("anchors must be strictly increasing in t and sigma")
        if self.kind == VP and ss[-1] >= 1.0:
            raise DomainError("VP schedule requires sigma(T) < 1")
        object.__setattr__(self, "_ts", ts)
        object.__setattr__(self, "_ss", ss)

    @property
    def sigma_n(self) -> float:
        return float(self.sigma(self.t_n))

    @property
    def sigma_max(self) -> float:
        return float(self._ss[-1])

    def _check_t(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(t > self.T):
            raise DomainError(f"time outside [0, {self.T}]")
        return t

    def sigma(self, t):
        t = self._check_t(t)
        if self.anchors is None:
            return t.copy() if t.ndim else t + 0.0
        return np.interp(t, self._ts, self._ss)

    def alpha(self, t):
        s = self.sigma(t)
        if self.kind == VE:
            return np.ones_like(s)
        return np.sqrt(1.0 - s * s)

    def time_at(self, sigma):
        """Inverse of :meth:`sigma`."""
        sigma = np.asarray(sigma, dtype=np.float64)
        if np.any(sigma < 0) or np.any(sigma > self._ss[-1] * (1 + 1e-15)):
            raise DomainError(f"sigma outside [0, {self._ss[-1]}]")
        if self.anchors is None:
            return np.minimum(sigma, self.T)
        return np.interp(sigma, self._ss, self._ts)


def ve_identity(T: float = 3.0, t_n: float = 0.5, guard: float = DEFAULT_GUARD) -> NoiseSchedule:
    return NoiseSchedule(VE, T, t_n, None, guard)


def anchor_vp(t_n: float = 500.0, guard: float = DEFAULT_GUARD) -> NoiseSchedule:
    return NoiseSchedule(VP, 1000.0, t_n, VP_ANCHORS, guard)


def with_nature_time(schedule: NoiseSchedule, t_n: float) -> NoiseSchedule:
    return NoiseSchedule(schedule.kind, schedule.T, t_n, schedule.anchors, schedule.guard)


def sigma_at(schedule: NoiseSchedule, t):
    return schedule.sigma(t)


def _col(v):
    v = np.asarray(v, dtype=np.float64)
    return v[:, None] if v.ndim == 1 else v


def transition(schedule: NoiseSchedule, t_src, t_dst):
    """``(scale, std)`` with ``X_dst = scale * X_src + std * Z``."""
    s_src = schedule.sigma(t_src)
    s_dst = schedule.sigma(t_dst)
    if np.any(np.asarray(t_dst) < np.asarray(t_src)):
        raise DomainError("t_dst must not precede t_src")
    var = np.maximum(s_dst**2 - s_src**2, 0.0)
    if schedule.kind == VE:
        return np.ones_like(var), np.sqrt(var)
    keep = 1.0 - s_src**2
    return np.sqrt((1.0 - s_dst**2) / keep), np.sqrt(var / keep)


def forward_noise(schedule: NoiseSchedule, x_src, t_src, t_dst, noise):
    """Noise ``x_src`` observed at ``t_src`` further, up to ``t_dst``."""
    x_src = np.asarray(x_src, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x_src.shape:
        raise DomainError(f"noise shape {noise.shape} != x shape {x_src.shape}")
    scale, std = transition(schedule, t_src, t_dst)
    if x_src.ndim == 1:
        return scale * x_src + std * noise
    return _col(scale) * x_src + _col(std) * noise


def _above_nature(schedule: NoiseSchedule, t):
    s_t = schedule.sigma(t)
    s_n = schedule.sigma_n
    if np.any(np.asarray(t) <= schedule.t_n):
        raise DomainError("bridge undefined for t <= t_n")
    gap = s_t**2 - s_n**2
    if np.any(gap < schedule.guard):
        raise DomainError(f"sigma_t^2 - sigma_n^2 below guard {schedule.guard}")
    return s_t, s_n, gap


def bridge_coefficients(schedule: NoiseSchedule, t):
    """``(a, b)`` with ``E[X_0 | x_t] = a E[X_tn | x_t] + b x_t`` for ``t > t_n``."""
    s_t, s_n, gap = _above_nature(schedule, t)
    if schedule.kind == VE:
        return s_t**2 / gap, -(s_n**2) / gap
    return (s_t**2 * np.sqrt(1 - s_n**2) / gap,
            -(s_n**2) * np.sqrt(1 - s_t**2) / gap)


def denoiser_target_coeffs(schedule: NoiseSchedule, t):
    """``(c_h, c_x)`` so that ``c_h E[X_0 | x_t] + c_x x_t = E[X_tn | x_t]``.

    These weight the denoiser output and the noisy input in the ambient
    regression target; they invert :func:`bridge_coefficients`.
    """
    s_t, s_n, gap = _above_nature(schedule, t)
    if schedule.kind == VE:
        return gap / s_t**2, s_n**2 / s_t**2
    return (gap / (s_t**2 * np.sqrt(1 - s_n**2)),
            (s_n**2 / s_t**2) * np.sqrt((1 - s_t**2) / (1 - s_n**2)))


def schedule_grid(schedule: NoiseSchedule, t_start: float, t_stop: float, n_steps: int,
                  spacing: str = "karras", rho: float = 7.0) -> np.ndarray:
    """Decreasing time grid of ``n_steps + 1`` points from ``t_start`` to ``t_stop``.

    ``spacing='sigma2'`` is uniform in ``sigma^2``; ``'karras'`` is uniform in
    ``sigma^(1/rho)``, which concentrates steps at low noise.
    """
    if n_steps < 1:
        raise DomainError("n_steps must be >= 1")
    if not t_start > t_stop >= 0:
        raise DomainError("need t_start > t_stop >= 0")
    s_hi = float(schedule.sigma(t_start))
    s_lo = float(schedule.sigma(t_stop))
    u = np.linspace(0.0, 1.0, n_steps + 1)
    if spacing == "sigma2":
        sig = np.sqrt(s_hi**2 + u * (s_lo**2 - s_hi**2))
    elif spacing == "karras":
        a, b = s_hi ** (1 / rho), s_lo ** (1 / rho)
        sig = (a + u * (b - a)) ** rho
    else:
        raise DomainError(f"unknown grid spacing {spacing!r}")
    ts = np.asarray(schedule.time_at(np.clip(sig, s_lo, s_hi)), dtype=np.float64)
    ts[0], ts[-1] = t_start, t_stop
    return ts


def check_monotone(schedule: NoiseSchedule, n: int = 1001) -> bool:
    s = schedule.sigma(np.linspace(0.0, schedule.T, n))
    return bool(np.all(np.diff(s) > 0))


__all__: Sequence[str] = [
    "VE", "VP", "NoiseSchedule", "VP_ANCHORS", "ve_identity", "anchor_vp",
    "with_nature_time", "sigma_at", "transition", "forward_noise",
    "bridge_coefficients", "denoiser_target_coeffs", "schedule_grid", "check_monotone",
]
