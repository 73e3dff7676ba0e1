"""Flat ``key = value`` run configuration with dotted module prefixes.

Example::

    # M2, noisy data at sigma 0.5
    schedule.t_n = 0.5
    mixture.preset = m2
    train.phase1_steps = 2000

Blank lines and ``#`` comments are ignored.  Vectors are comma separated,
lists of vectors (mixture means/variances) separate rows with ``;`` and
schedule anchors are ``t:sigma`` pairs.  ``none`` selects the automatic
value where one exists.  Unknown keys are rejected; :meth:`RunConfig.echo`
prints every key with defaults applied, in a canonical form that parses back
to the same configuration.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

from . import loss as losses
from .errors import ConfigError, DomainError
from .oracle import GaussianMixture, preset
from .sampler import DETERMINISTIC, STOCHASTIC, SamplerConfig
from .schedule import VP_ANCHORS, VE, VP, NoiseSchedule
from .trainer import TrainConfig

SEED_ENV = "ATW_SEED"
SEED_KEYS = ("data.seed", "train.seed", "sampler.seed", "eval.seed")


# -- value codecs -------------------------------------------------------------

def _float(s):
    return float(s)


def _int(s):
    return int(s)


def _bool(s):
    low = s.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _str(s):
    return s


def _optional(parse):
    def inner(s):
        return None if s.lower() in ("none", "auto", "") else parse(s)
    return inner


def _floats(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _ints(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _rows(s):
    return tuple(_floats(r) for r in s.split(";") if r.strip())


def _pairs(s):
    out = []
    for item in s.split(","):
        if item.strip():
            a, b = item.split(":")
            out.append((float(a), float(b)))
    return tuple(out)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _fmt_rows(v):
    return "none" if v is None else "; ".join(",".join(repr(x) for x in row) for row in v)


def _fmt_pairs(v):
    return "none" if v is None else ", ".join(f"{a!r}:{b!r}" for a, b in v)


@dataclass(frozen=True)
class Key:
    parse: object
    default: object
    choices: tuple = ()
    fmt: object = _fmt


KEYS: dict[str, Key] = {
    "schedule.kind": Key(_str, VE, (VE, VP)),
    "schedule.form": Key(_str, "identity", ("identity", "vp-anchors", "anchors")),
    "schedule.T": Key(_optional(_float), None),
    "schedule.t_n": Key(_float, 0.5),
    "schedule.anchors": Key(_optional(_pairs), None, fmt=_fmt_pairs),
    "schedule.guard": Key(_float, 1e-10),
    "mixture.preset": Key(_str, "m2", ("m1", "m2", "ring8", "m3", "custom", "none")),
    "mixture.weights": Key(_optional(_floats), None),
    "mixture.means": Key(_optional(_rows), None, fmt=_fmt_rows),
    "mixture.variances": Key(_optional(_rows), None, fmt=_fmt_rows),
    "net.hidden_sizes": Key(_ints, (64, 64)),
    "net.embed_dim": Key(_int, 16),
    "net.activation": Key(_str, "silu", ("silu", "relu")),
    "net.sigma_data": Key(_float, 1.0),
    "loss.kind": Key(_str, losses.AMBIENT,
                     (losses.DSM, losses.AMBIENT, losses.AMBIENT_CONSISTENCY)),
    "loss.lambda": Key(_float, 0.01),
    "loss.eps": Key(_optional(_float), None),
    "loss.chain_steps": Key(_int, 8),
    "loss.forward_above_tn": Key(_bool, False),
    "sampler.kind": Key(_str, STOCHASTIC, (STOCHASTIC, DETERMINISTIC)),
    "sampler.n_steps": Key(_int, 25),
    "sampler.t_start": Key(_optional(_float), None),
    "sampler.t_stop": Key(_float, 0.0),
    "sampler.grid": Key(_str, "karras", ("karras", "sigma2")),
    "sampler.final_jump": Key(_bool, False),
    "sampler.n": Key(_int, 10000),
    "sampler.seed": Key(_int, 0),
    "train.batch_size": Key(_int, 256),
    "train.phase1_steps": Key(_int, 2000),
    "train.phase2_steps": Key(_int, 0),
    "train.learning_rate": Key(_float, 1e-3),
    "train.beta1": Key(_float, 0.9),
    "train.beta2": Key(_float, 0.999),
    "train.weight_decay": Key(_float, 0.01),
    "train.epsilon": Key(_float, 1e-8),
    "train.seed": Key(_int, 0),
    "train.eval_every": Key(_int, 0),
    "train.checkpoint_every": Key(_int, 0),
    "eval.sigmas": Key(_floats, (0.6, 1.0, 2.0, 3.0)),
    "eval.n_points": Key(_int, 2000),
    "eval.n_projections": Key(_int, 128),
    "eval.sigma_attack": Key(_float, 1.5),
    "eval.n_per_point": Key(_int, 250),
    "eval.seed": Key(_int, 0),
    "data.path": Key(_optional(_str), None),
    "data.n": Key(_int, 50000),
    "data.seed": Key(_int, 0),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: spec.default for k, spec in KEYS.items()}
        for k, v in self.values.items():
            if k not in KEYS:
                raise ConfigError(f"unknown key {k!r}")
            merged[k] = v
        self.values = merged

    def __getitem__(self, key):
        return self.values[key]

    # -- text round trip ------------------------------------------------------

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in KEYS:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            values[key] = _parse_value(key, value, f"{source}:{lineno}")
        return cls(values)

    @classmethod
    def load(cls, path, env=None) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            cfg = cls.parse(fh.read(), str(path))
        return cfg.with_env(env)

    def with_env(self, env=None) -> "RunConfig":
        """Apply the ``ATW_SEED`` override to every seed key."""
        env = os.environ if env is None else env
        seed = env.get(SEED_ENV)
        if seed is None or seed == "":
            return self
        try:
            s = int(seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {seed!r}") from exc
        return self.override({k: s for k in SEED_KEYS})

    def override(self, changes: dict) -> "RunConfig":
        vals = dict(self.values)
        for k, v in changes.items():
            if k not in KEYS:
                raise ConfigError(f"unknown key {k!r}")
            # normalise through the text form so echo stays canonical
            text = v if isinstance(v, str) else KEYS[k].fmt(v)
            vals[k] = _parse_value(k, text, "override")
        return RunConfig(vals)

    def echo(self) -> str:
        return "".join(f"{k} = {KEYS[k].fmt(self.values[k])}\n" for k in sorted(KEYS))

    # -- builders -------------------------------------------------------------

    def schedule(self) -> NoiseSchedule:
        form = self["schedule.form"]
        kind, T = self["schedule.kind"], self["schedule.T"]
        anchors = None
        if form == "vp-anchors":
            anchors = VP_ANCHORS
        elif form == "anchors":
            anchors = self["schedule.anchors"]
            if not anchors:
                raise ConfigError("schedule.form = anchors needs schedule.anchors")
        if T is None:
            T = anchors[-1][0] if anchors else 3.0
        try:
            return NoiseSchedule(kind, T, self["schedule.t_n"], anchors, self["schedule.guard"])
        except DomainError as exc:
            raise ConfigError(f"bad schedule: {exc}") from exc

    def mixture(self) -> GaussianMixture | None:
        name = self["mixture.preset"]
        if name == "none":
            return None
        if name != "custom":
            return preset(name)
        parts = [self[f"mixture.{k}"] for k in ("weights", "means", "variances")]
        if any(p is None for p in parts):
            raise ConfigError("custom mixture needs weights, means and variances")
        try:
            return GaussianMixture(*parts)
        except DomainError as exc:
            raise ConfigError(f"bad mixture: {exc}") from exc

    def net_kwargs(self) -> dict:
        return {"hidden_sizes": self["net.hidden_sizes"], "embed_dim": self["net.embed_dim"],
                "activation": self["net.activation"], "sigma_data": self["net.sigma_data"]}

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                batch_size=self["train.batch_size"],
                phase1_steps=self["train.phase1_steps"],
                phase2_steps=self["train.phase2_steps"],
                lam=self["loss.lambda"],
                learning_rate=self["train.learning_rate"],
                beta1=self["train.beta1"], beta2=self["train.beta2"],
                weight_decay=self["train.weight_decay"], epsilon=self["train.epsilon"],
                seed=self["train.seed"], eval_every=self["train.eval_every"],
                checkpoint_every=self["train.checkpoint_every"],
                loss_kind=self["loss.kind"], eps=self["loss.eps"],
                chain_steps=self["loss.chain_steps"],
                forward_above_tn=self["loss.forward_above_tn"],
                eval_sigmas=self["eval.sigmas"], eval_points=self["eval.n_points"])
        except DomainError as exc:
            raise ConfigError(f"bad training settings: {exc}") from exc

    def sampler_config(self) -> SamplerConfig:
        try:
            return SamplerConfig(n_steps=self["sampler.n_steps"], kind=self["sampler.kind"],
                                 t_start=self["sampler.t_start"], t_stop=self["sampler.t_stop"],
                                 seed=self["sampler.seed"], grid=self["sampler.grid"],
                                 final_jump=self["sampler.final_jump"])
        except DomainError as exc:
            raise ConfigError(f"bad sampler settings: {exc}") from exc


def _parse_value(key, value, where):
    spec = KEYS[key]
    try:
        v = spec.parse(value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: bad value for {key}: {value!r}") from exc
    if spec.choices and v not in spec.choices:
        raise ConfigError(f"{where}: {key} must be one of {', '.join(spec.choices)}")
    return v
