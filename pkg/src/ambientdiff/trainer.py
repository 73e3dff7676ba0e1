"""Two-phase training: ambient DSM, then consistency fine-tuning.

Randomness is counter based: step ``k`` draws from a Philox stream keyed by
``(seed, k)``, so a run resumed from a checkpoint at step ``k`` continues
bit-for-bit like the uninterrupted run.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import loss as losses
from .errors import DomainError, NumericalError, TrainingDiverged
from .evaluation import denoiser_mse_grid
from .net import DenoiserNet
from .oracle import GaussianMixture, sample_prior
from .schedule import NoiseSchedule, forward_noise

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e6

# stream identifiers for counter-based generators
STREAM_DATA = 1
STREAM_TRAIN = 2
STREAM_EVAL = 3


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step)


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999,
              epsilon=1e-8, weight_decay=0.0):
    """Bias-corrected Adam with decoupled weight decay, applied in place."""
    if not np.all(np.isfinite(grads)):
        raise NumericalError("non-finite gradient passed to adam_step")
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise DomainError("parameter, gradient and moment buffers must align")
    state.step += 1
    state.m *= beta1
    state.m += (1 - beta1) * grads
    state.v *= beta2
    state.v += (1 - beta2) * grads * grads
    m_hat = state.m / (1 - beta1**state.step)
    v_hat = state.v / (1 - beta2**state.step)
    if weight_decay:
        params *= 1 - lr * weight_decay
    params -= lr * m_hat / (np.sqrt(v_hat) + epsilon)
    return params, state


@dataclass
class NoisyDataset:
    samples: np.ndarray
    schedule: NoiseSchedule
    seed: int = 0

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def make_dataset(gm: GaussianMixture, schedule: NoiseSchedule, n: int, seed: int = 0
                 ) -> NoisyDataset:
    """Draw ``X_tn`` samples; the clean draws never leave this function."""
    if n < 1:
        raise DomainError("n must be >= 1")
    rng = stream(seed, STREAM_DATA)
    x0 = sample_prior(gm, n, rng)
    z = rng.standard_normal(x0.shape)
    return NoisyDataset(forward_noise(schedule, x0, 0.0, schedule.t_n, z), schedule, seed)


@dataclass
class TrainConfig:
    batch_size: int = 256
    phase1_steps: int = 2000
    phase2_steps: int = 0
    lam: float = 0.01
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    epsilon: float = 1e-8
    seed: int = 0
    eval_every: int = 0
    checkpoint_every: int = 0
    loss_kind: str = losses.AMBIENT
    eps: float | None = None
    chain_steps: int = 8
    forward_above_tn: bool = False
    eval_sigmas: tuple = (0.6, 1.0, 2.0, 3.0)
    eval_points: int = 2000

    def __post_init__(self):
        if self.phase1_steps < 0 or self.phase2_steps < 0:
            raise DomainError("phase lengths must be non-negative")
        if self.phase1_steps == 0 and self.phase2_steps == 0:
            raise DomainError("at least one phase must have steps")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise DomainError("betas must lie in (0, 1)")
        if self.loss_kind not in (losses.DSM, losses.AMBIENT, losses.AMBIENT_CONSISTENCY):
            raise DomainError(f"unknown loss kind {self.loss_kind!r}")
        self.eval_sigmas = tuple(float(s) for s in self.eval_sigmas)

    @property
    def total_steps(self) -> int:
        return self.phase1_steps + self.phase2_steps

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval_sigmas"] = list(self.eval_sigmas)
        return d


@dataclass
class Checkpoint:
    net: DenoiserNet
    opt: AdamState
    step: int
    config: TrainConfig
    schedule: NoiseSchedule
    seed: int
    history: list = field(default_factory=list, repr=False)

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.net.copy(), self.opt.copy(), self.step, self.config,
                          self.schedule, self.seed, list(self.history))


def _eps(cfg: TrainConfig, schedule: NoiseSchedule) -> float:
    return schedule.T / 100 if cfg.eps is None else cfg.eps


def step_loss(cfg: TrainConfig, net, batch, schedule: NoiseSchedule, step: int, rng):
    """Loss report for global step ``step`` (phase chosen by the step index)."""
    if cfg.loss_kind == losses.DSM:
        if step < cfg.phase1_steps:
            return losses.dsm_loss(net, batch, schedule, rng)
        raise DomainError("clean DSM training has no second phase")
    if step < cfg.phase1_steps or cfg.loss_kind == losses.AMBIENT:
        return losses.ambient_dsm_loss(net, batch, schedule, rng)
    return losses.combined_loss(net, batch, schedule, rng, cfg.lam, _eps(cfg, schedule),
                                cfg.chain_steps, cfg.forward_above_tn)


def train(cfg: TrainConfig, dataset: NoisyDataset, net: DenoiserNet | None = None,
          resume: Checkpoint | None = None, mixture: GaussianMixture | None = None,
          metrics=None, on_checkpoint=None, net_kwargs=None) -> Checkpoint:
    """Run (or continue) training and return the final checkpoint.

    ``metrics`` is an optional writable text stream receiving one JSON record
    per logged step; ``on_checkpoint`` is called with a copy of every periodic
    checkpoint.  Evaluation against the oracle runs only if ``mixture`` is given.
    """
    schedule = dataset.schedule
    if cfg.phase2_steps and cfg.loss_kind == losses.DSM:
        raise DomainError("clean DSM training has no second phase")
    if resume is not None:
        ckpt = resume.copy()
        ckpt.config = cfg
    else:
        if net is None:
            net = DenoiserNet.init(dataset.dim, seed=cfg.seed, **(net_kwargs or {}))
        ckpt = Checkpoint(net.copy(), AdamState.zeros(net.n_params), 0, cfg, schedule,
                          cfg.seed)
    net, opt = ckpt.net, ckpt.opt
    data = dataset.samples
    for step in range(ckpt.step, cfg.total_steps):
        if step == cfg.phase1_steps and step > 0:
            opt = ckpt.opt = AdamState.zeros(net.n_params)
        rng = stream(cfg.seed, STREAM_TRAIN, step)
        batch = data[rng.integers(0, data.shape[0], cfg.batch_size)]
        # parameters are untouched until adam_step, so ckpt is still the last good state
        try:
            rep = step_loss(cfg, net, batch, schedule, step, rng)
        except NumericalError as exc:
            raise TrainingDiverged(f"step {step}: {exc}", ckpt.copy()) from exc
        if not rep.loss < DIVERGENCE_THRESHOLD:
            raise TrainingDiverged(f"step {step}: loss {rep.loss}", ckpt.copy())
        adam_step(net.params, rep.grad, opt, cfg.learning_rate, cfg.beta1, cfg.beta2,
                  cfg.epsilon, cfg.weight_decay)
        ckpt.step = step + 1
        record = {"step": step, "loss": rep.loss,
                  "ambient_term": rep.breakdown.get("ambient_dsm", rep.breakdown.get("dsm")),
                  "consistency_term": rep.breakdown.get("consistency", 0.0)}
        if cfg.eval_every and mixture is not None and ckpt.step % cfg.eval_every == 0:
            report = denoiser_mse_grid(net, mixture, schedule, cfg.eval_sigmas, cfg.eval_points,
                                       stream(cfg.seed, STREAM_EVAL))
            record["oracle_mse_by_sigma"] = [[r.sigma_eval, r.relative_mse] for r in report.rows]
        ckpt.history.append(rep.loss)
        if metrics is not None:
            metrics.write(json.dumps(record) + "\n")
        if on_checkpoint is not None and cfg.checkpoint_every \
                and ckpt.step % cfg.checkpoint_every == 0:
            on_checkpoint(ckpt.copy())
    return ckpt


def phase_config(cfg: TrainConfig, **changes) -> TrainConfig:
    return replace(cfg, **changes)


# consistency weights for the VP anchor schedule; larger weights at t_n = 800
# made fine-tuning collapse
VP_CONSISTENCY_WEIGHTS = {100.0: 0.01, 500.0: 0.01, 800.0: 1e-4}


def vp_phase2_config(cfg: TrainConfig, t_n: float, phase2_steps: int) -> TrainConfig:
    """Phase-2 settings for a VP anchor-schedule model at nature time ``t_n``."""
    if float(t_n) not in VP_CONSISTENCY_WEIGHTS:
        raise DomainError(f"no consistency weight recorded for t_n={t_n}")
    return replace(cfg, phase2_steps=phase2_steps, lam=VP_CONSISTENCY_WEIGHTS[float(t_n)],
                   loss_kind=losses.AMBIENT_CONSISTENCY)
