"""Training objectives and their parameter gradients.

* :func:`dsm_loss` regresses the denoiser onto clean samples.
* :func:`ambient_dsm_loss` uses only samples at the nature level ``t_n``:
  for ``t > t_n`` the weighted combination ``c_h h(x_t, t) + c_x x_t`` is
  regressed onto ``x_tn``; its minimiser is ``E[X_0 | x_t]``.
* :func:`consistency_loss` penalises ``h(x_t', t')`` differing from the
  expected denoiser output one reverse step later, with the expectation
  replaced by a two-draw product estimator.

Every loss takes a *model* exposing ``vjp(x, t, schedule)`` and returns a
:class:`LossBatchReport` with the mean loss and its gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericalError
from .sampler import per_row_grid, reverse_step_stochastic, run_chain
from .schedule import NoiseSchedule, _col, denoiser_target_coeffs, forward_noise

DSM = "dsm"
AMBIENT = "ambient"
AMBIENT_CONSISTENCY = "ambient+consistency"


@dataclass
class LossBatchReport:
    loss: float
    grad: np.ndarray
    breakdown: dict = field(default_factory=dict)
    count: int = 0
    times: np.ndarray | None = None
    # per-sample loss terms, for standard errors
    per_sample: np.ndarray | None = field(default=None, repr=False)

    def check(self):
        if not np.isfinite(self.loss) or not np.all(np.isfinite(self.grad)):
            bad = np.flatnonzero(~np.isfinite(self.grad))[:5]
            raise NumericalError(f"non-finite loss {self.loss} or gradient entries {bad}")
        return self


def stratified_times(rng: np.random.Generator, n: int, lo: float, hi: float) -> np.ndarray:
    """One uniform draw per stratum of ``(lo, hi]``; excludes ``lo``."""
    u = (np.arange(n) + rng.random(n)) / n
    return hi - (hi - lo) * u


def _batch(x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0 or x.shape[1] == 0:
        raise DomainError("empty batch")
    return x


def _nature_times(schedule: NoiseSchedule, rng, n, lo=None):
    """Times in ``(max(t_n, lo), T]`` that respect the near-singular guard."""
    lo = schedule.t_n if lo is None else max(lo, schedule.t_n)
    t = stratified_times(rng, n, lo, schedule.T)
    return t


def _apply_guard(schedule: NoiseSchedule, t, rng, lo=None, tries=100):
    lo = schedule.t_n if lo is None else max(lo, schedule.t_n)
    s_n2 = schedule.sigma_n**2
    for _ in range(tries):
        bad = schedule.sigma(t) ** 2 - s_n2 < schedule.guard
        if not np.any(bad):
            return t
        t = t.copy()
        t[bad] = schedule.T - (schedule.T - lo) * rng.random(int(bad.sum()))
    raise DomainError("no admissible time above the nature level")


def dsm_loss(model, x0, schedule: NoiseSchedule, rng: np.random.Generator) -> LossBatchReport:
    """Clean-data denoising score matching, ``t ~ U[0, T]``."""
    x0 = _batch(x0)
    n = x0.shape[0]
    t = stratified_times(rng, n, 0.0, schedule.T)
    z = rng.standard_normal(x0.shape)
    x_t = forward_noise(schedule, x0, 0.0, t, z)
    h, pullback = model.vjp(x_t, t, schedule)
    r = h - x0
    per = np.sum(r * r, axis=1)
    loss = float(per.mean())
    grad = pullback(2.0 * r / n)
    return LossBatchReport(loss, grad, {"dsm": loss}, n, t, per).check()


def ambient_dsm_loss(model, x_tn, schedule: NoiseSchedule,
                     rng: np.random.Generator) -> LossBatchReport:
    """Regression onto nature-level samples through the double-Tweedie weights."""
    x_tn = _batch(x_tn)
    n = x_tn.shape[0]
    t = _nature_times(schedule, rng, n)
    z = rng.standard_normal(x_tn.shape)
    t = _apply_guard(schedule, t, rng)
    x_t = forward_noise(schedule, x_tn, schedule.t_n, t, z)
    c_h, c_x = (_col(c) for c in denoiser_target_coeffs(schedule, t))
    h, pullback = model.vjp(x_t, t, schedule)
    r = c_h * h + c_x * x_t - x_tn
    per = np.sum(r * r, axis=1)
    loss = float(per.mean())
    grad = pullback(2.0 * c_h * r / n)
    return LossBatchReport(loss, grad, {"ambient_dsm": loss, "consistency": 0.0}, n, t,
                           per).check()


@dataclass
class ConsistencyDraw:
    """Everything sampled for one consistency evaluation (kept for diagnostics)."""

    t: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    x_t1: np.ndarray
    h0: np.ndarray


def consistency_draw(model, x_tn, schedule: NoiseSchedule, rng, eps: float,
                     chain_steps: int = 8, forward_above_tn: bool = False) -> ConsistencyDraw:
    """Sample ``(t, t', t'', x_t')`` as used by :func:`consistency_loss`."""
    x_tn = _batch(x_tn)
    n = x_tn.shape[0]
    if not 0 < eps < schedule.T:
        raise DomainError("eps must lie in (0, T)")
    t = _nature_times(schedule, rng, n, lo=eps)
    z = rng.standard_normal(x_tn.shape)
    t = _apply_guard(schedule, t, rng, lo=eps)
    x_t = forward_noise(schedule, x_tn, schedule.t_n, t, z)
    t1 = eps + (t - eps) * (1.0 - rng.random(n))
    t1 = np.minimum(t1, np.nextafter(t, -np.inf))
    ts = per_row_grid(schedule, t, t1, chain_steps)
    x_t1 = run_chain(model, x_t, ts, schedule, rng)
    if forward_above_tn:
        above = t1 > schedule.t_n
        if np.any(above):
            fresh = rng.standard_normal((int(above.sum()), x_tn.shape[1]))
            x_t1[above] = forward_noise(schedule, x_tn[above], schedule.t_n, t1[above], fresh)
    t2 = np.maximum(t1 - eps, 0.0) + (t1 - np.maximum(t1 - eps, 0.0)) * rng.random(n)
    t2 = np.minimum(t2, np.nextafter(t1, -np.inf))
    h0 = model.forward(x_t1, t1, schedule)
    return ConsistencyDraw(t, t1, t2, x_t1, h0)


def consistency_loss(model, x_tn, schedule: NoiseSchedule, rng: np.random.Generator,
                     eps: float, chain_steps: int = 8,
                     forward_above_tn: bool = False) -> LossBatchReport:
    """Two-draw estimate of ``||h(x_t', t') - E[h(X_t'', t'') | x_t']||^2``.

    Two independent reverse steps from ``(x_t', t')`` to ``t''`` give
    ``a = h(x1, t'') - h(x_t', t')`` and ``b = h(x2, t'') - h(x_t', t')``;
    ``E[a . b]`` equals the squared norm.  Sampled states are treated as
    constants; the gradient flows through the three denoiser evaluations.
    """
    d = consistency_draw(model, x_tn, schedule, rng, eps, chain_steps, forward_above_tn)
    n = d.x_t1.shape[0]
    x1 = reverse_step_stochastic(model, d.x_t1, d.t1, d.t2, schedule, rng, h=d.h0)
    x2 = reverse_step_stochastic(model, d.x_t1, d.t1, d.t2, schedule, rng, h=d.h0)
    xs = np.concatenate([x1, x2, d.x_t1])
    ts = np.concatenate([d.t2, d.t2, d.t1])
    out, pullback = model.vjp(xs, ts, schedule)
    h1, h2, h0 = out[:n], out[n:2 * n], out[2 * n:]
    a, b = h1 - h0, h2 - h0
    per = np.sum(a * b, axis=1)
    loss = float(per.mean())
    grad = pullback(np.concatenate([b, a, -(a + b)]) / n)
    return LossBatchReport(loss, grad, {"ambient_dsm": 0.0, "consistency": loss}, n, d.t1,
                           per).check()


def combined_loss(model, x_tn, schedule: NoiseSchedule, rng: np.random.Generator,
                  lam: float, eps: float, chain_steps: int = 8,
                  forward_above_tn: bool = False) -> LossBatchReport:
    """Ambient DSM plus ``lam`` times the consistency loss."""
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    amb = ambient_dsm_loss(model, x_tn, schedule, rng)
    if lam == 0:
        return amb
    con = consistency_loss(model, x_tn, schedule, rng, eps, chain_steps, forward_above_tn)
    c = con.breakdown["consistency"]
    return LossBatchReport(amb.loss + lam * c, amb.grad + lam * con.grad,
                           {"ambient_dsm": amb.loss, "consistency": c}, amb.count,
                           amb.times).check()
