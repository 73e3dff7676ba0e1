"""Closed-form identity checks on the Gaussian-mixture oracle.

Each check returns a :class:`CheckResult`; :func:`oracle_suite` runs them all
and backs the ``oracle-check`` command.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracle import (GaussianMixture, log_density_t, m1, m2, mc_posterior_mean,
                     nature_posterior_mean, posterior_mean, ring8, sample_prior, score)
from .schedule import NoiseSchedule, anchor_vp, bridge_coefficients, forward_noise, ve_identity

BRIDGE_TOL = 1e-10
TWEEDIE_TOL = 1e-6
MC_TOL = 0.02


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<34s} {self.value:.3e}  (threshold {self.threshold:.0e})"


def standard_mixtures() -> dict:
    return {"m1": m1(), "m2": m2(), "m3": ring8()}


def standard_schedules() -> dict:
    return {"ve": ve_identity(3.0, 0.5), "vp": anchor_vp(500.0)}


def probes(gm: GaussianMixture, schedule: NoiseSchedule, n: int, rng, t_lo=None):
    """``n`` pairs ``(x_t, t)`` with ``t ~ U(t_lo, T]`` and ``x_t ~ p_t``."""
    lo = schedule.t_n if t_lo is None else t_lo
    t = schedule.T - (schedule.T - lo) * rng.random(n)
    x0 = sample_prior(gm, n, rng)
    return forward_noise(schedule, x0, 0.0, t, rng.standard_normal(x0.shape)), t


def _rel(err, ref):
    return float(np.max(np.linalg.norm(err, axis=1) / np.linalg.norm(ref, axis=1)))


def bridge_error(gm, schedule, n=100, rng=None) -> float:
    """Largest relative gap between ``E[X_0|x_t]`` and its bridge from ``E[X_tn|x_t]``."""
    rng = np.random.default_rng(0) if rng is None else rng
    x, t = probes(gm, schedule, n, rng)
    a, b = bridge_coefficients(schedule, t)
    direct = posterior_mean(gm, x, t, schedule)
    bridged = a[:, None] * nature_posterior_mean(gm, x, t, schedule) + b[:, None] * x
    return _rel(direct - bridged, direct)


def tweedie_error(gm, schedule, n=20, rng=None, h=1e-5) -> float:
    """Largest relative gap between the score and central differences of ``log p_t``."""
    rng = np.random.default_rng(1) if rng is None else rng
    x, t = probes(gm, schedule, n, rng, t_lo=0.05 * schedule.T)
    worst = 0.0
    for xi, ti in zip(x, t):
        fd = np.empty_like(xi)
        for j in range(xi.size):
            e = np.zeros_like(xi)
            e[j] = h
            fd[j] = (log_density_t(gm, xi + e, ti, schedule)
                     - log_density_t(gm, xi - e, ti, schedule)) / (2 * h)
        s = score(gm, xi, ti, schedule)
        worst = max(worst, float(np.linalg.norm(s - fd) / np.linalg.norm(s)))
    return worst


def oracle_suite(rng_seed: int = 0, mc_draws: int = 10**6) -> list:
    results = []
    mixtures, schedules = standard_mixtures(), standard_schedules()
    for kind, sch in schedules.items():
        for name, gm in mixtures.items():
            err = bridge_error(gm, sch, 100, np.random.default_rng(rng_seed))
            results.append(CheckResult(f"bridge {kind} {name}", err, BRIDGE_TOL,
                                       err < BRIDGE_TOL))
    for kind, sch in schedules.items():
        for name, gm in mixtures.items():
            err = tweedie_error(gm, sch, 20, np.random.default_rng(rng_seed + 1))
            results.append(CheckResult(f"tweedie {kind} {name}", err, TWEEDIE_TOL,
                                       err < TWEEDIE_TOL))
    sch = ve_identity(3.0, 0.5)
    est = mc_posterior_mean(m2(), np.array([1.0]), 1.0, sch, mc_draws,
                            np.random.default_rng(rng_seed + 2))
    exact = posterior_mean(m2(), np.array([1.0]), 1.0, sch)
    gap = float(np.max(np.abs(est - exact)))
    results.append(CheckResult("importance sampling m2", gap, MC_TOL, gap < MC_TOL))
    x = sample_prior(ring8(), 50, np.random.default_rng(rng_seed + 3))
    gap = float(np.max(np.abs(posterior_mean(ring8(), x, 0.0, sch) - x)))
    results.append(CheckResult("identity at t=0", gap, 1e-15, gap < 1e-15))
    return results
