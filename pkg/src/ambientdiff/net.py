"""Fully connected denoiser ``h(x, t)`` with hand-written reverse mode.

The network is conditioned on the noise level ``sigma_t`` through a
sinusoidal embedding of ``log(sigma_t) / 4``.  Its output is

    h(x, sigma) = c_skip(sigma) * x + c_out(sigma) * F(c_in(sigma) * x, emb(sigma))

with ``c_skip = s_d^2 / (sigma^2 + s_d^2)``, ``c_out = sigma s_d / sqrt(sigma^2 + s_d^2)``
and ``c_in = 1 / sqrt(sigma^2 + s_d^2)``.  At ``sigma = 0`` this is exactly the
identity, so ``h(x, 0) = x`` holds by construction.

All parameters live in one flat float64 vector; per-layer weights and biases
are views into it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DomainError, NumericalError

SILU = "silu"
RELU = "relu"

SIGMA_FLOOR = 1e-12


def layer_shapes(dim, hidden_sizes, embed_dim):
    sizes = [dim + embed_dim, *hidden_sizes, dim]
    return [(a, b) for a, b in zip(sizes[:-1], sizes[1:])]


def param_count(dim, hidden_sizes, embed_dim) -> int:
    return sum(a * b + b for a, b in layer_shapes(dim, hidden_sizes, embed_dim))


def _act(kind, z):
    if kind == SILU:
        s = expit(z)
        return z * s, s * (1.0 + z * (1.0 - s))
    return np.maximum(z, 0.0), (z > 0).astype(np.float64)


def sigma_embedding(sigma, embed_dim: int) -> np.ndarray:
    """Sinusoidal features of ``log(sigma)/4``, shape ``(n, embed_dim)``."""
    u = np.log(np.maximum(np.asarray(sigma, dtype=np.float64), SIGMA_FLOOR)) / 4.0
    freqs = np.exp(np.linspace(0.0, np.log(16.0), embed_dim // 2))
    arg = np.atleast_1d(u)[:, None] * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def preconditioning(sigma, sigma_data: float):
    s2 = sigma**2 + sigma_data**2
    return sigma_data**2 / s2, sigma * sigma_data / np.sqrt(s2), 1.0 / np.sqrt(s2)


@dataclass(eq=False)
class DenoiserNet:
    dim: int
    hidden_sizes: tuple
    embed_dim: int
    params: np.ndarray
    activation: str = SILU
    sigma_data: float = 1.0
    _views: list = field(init=False, repr=False)

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.embed_dim % 2 or self.embed_dim <= 0:
            raise DomainError("embed_dim must be a positive even integer")
        if any(h < 1 for h in self.hidden_sizes):
            raise DomainError("hidden sizes must be >= 1")
        if self.activation not in (SILU, RELU):
            raise DomainError(f"unknown activation {self.activation!r}")
        expected = param_count(self.dim, self.hidden_sizes, self.embed_dim)
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (expected,):
            raise DomainError(f"expected {expected} parameters, got {self.params.shape}")
        self._views = self.index_map()

    @classmethod
    def init(cls, dim, hidden_sizes=(64, 64), embed_dim=16, seed=0, activation=SILU,
             sigma_data=1.0) -> "DenoiserNet":
        if any(int(h) < 1 for h in hidden_sizes):
            raise DomainError("hidden sizes must be >= 1")
        rng = np.random.Generator(np.random.Philox(seed))
        chunks = []
        for fan_in, fan_out in layer_shapes(dim, hidden_sizes, embed_dim):
            bound = 1.0 / np.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        return cls(dim, tuple(hidden_sizes), embed_dim, np.concatenate(chunks), activation,
                   sigma_data)

    @property
    def n_params(self) -> int:
        return self.params.size

    def index_map(self):
        """``[(w_slice, w_shape, b_slice), ...]`` into the flat vector."""
        out, i = [], 0
        for a, b in layer_shapes(self.dim, self.hidden_sizes, self.embed_dim):
            w = slice(i, i + a * b)
            i += a * b
            out.append((w, (a, b), slice(i, i + b)))
            i += b
        return out

    def describe(self) -> dict:
        return {"dim": self.dim, "hidden_sizes": list(self.hidden_sizes),
                "embed_dim": self.embed_dim, "activation": self.activation,
                "sigma_data": self.sigma_data, "n_params": self.n_params}

    def copy(self) -> "DenoiserNet":
        return DenoiserNet(self.dim, self.hidden_sizes, self.embed_dim, self.params.copy(),
                           self.activation, self.sigma_data)

    def _layers(self):
        for w, shape, b in self._views:
            yield self.params[w].reshape(shape), self.params[b]

    # -- evaluation ---------------------------------------------------------

    def _prepare(self, x, t, schedule):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise DomainError(f"expected inputs of length {self.dim}, got {x.shape[1]}")
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite network input")
        sigma = np.broadcast_to(schedule.sigma(t), (x.shape[0],)).astype(np.float64)
        return x, sigma, single

    def _run(self, x, sigma):
        c_skip, c_out, c_in = (c[:, None] for c in preconditioning(sigma, self.sigma_data))
        z = np.concatenate([c_in * x, sigma_embedding(sigma, self.embed_dim)], axis=1)
        acts, derivs = [z], []
        layers = list(self._layers())
        # overflow surfaces as a non-finite output, which callers check
        with np.errstate(over="ignore", invalid="ignore"):
            for W, b in layers[:-1]:
                a, d = _act(self.activation, z @ W + b)
                acts.append(a)
                derivs.append(d)
                z = a
            W, b = layers[-1]
            f = z @ W + b
        return c_skip * x + c_out * f, (acts, derivs, c_skip, c_out, c_in)

    def forward(self, x, t, schedule):
        x, sigma, single = self._prepare(x, t, schedule)
        out, _ = self._run(x, sigma)
        return out[0] if single else out

    __call__ = forward

    def vjp(self, x, t, schedule):
        """Return ``(h(x, t), pullback)``; ``pullback(u)`` is the gradient of ``<u, h>``."""
        x, sigma, single = self._prepare(x, t, schedule)
        out, (acts, derivs, _, c_out, _) = self._run(x, sigma)
        layers = list(self._layers())

        def pullback(upstream):
            u = np.asarray(upstream, dtype=np.float64).reshape(out.shape)
            grad = np.zeros_like(self.params)
            delta = c_out * u
            for k in range(len(layers) - 1, -1, -1):
                wsl, shape, bsl = self._views[k]
                with np.errstate(over="ignore", invalid="ignore"):
                    grad[wsl] = (acts[k].T @ delta).ravel()
                grad[bsl] = delta.sum(axis=0)
                if k:
                    with np.errstate(over="ignore", invalid="ignore"):
                        delta = (delta @ layers[k][0].T) * derivs[k - 1]
                    if not np.all(np.isfinite(delta)):
                        raise NumericalError(f"non-finite gradient at layer {k - 1}")
            if not np.all(np.isfinite(grad)):
                raise NumericalError("non-finite parameter gradient")
            return grad

        return (out[0] if single else out), pullback

    def backward(self, x, t, schedule, upstream):
        return self.vjp(x, t, schedule)[1](upstream)

    def jvp_input(self, x, t, schedule, dx):
        """Directional derivative of ``h`` with respect to ``x`` along ``dx``."""
        x, sigma, single = self._prepare(x, t, schedule)
        dx = np.atleast_2d(np.asarray(dx, dtype=np.float64))
        _, (acts, derivs, c_skip, c_out, c_in) = self._run(x, sigma)
        layers = list(self._layers())
        dz = np.concatenate([c_in * dx, np.zeros((x.shape[0], self.embed_dim))], axis=1)
        dz = np.broadcast_to(dz, (x.shape[0], dz.shape[1]))
        for k, (W, _) in enumerate(layers[:-1]):
            dz = (dz @ W) * derivs[k]
        out = c_skip * dx + c_out * (dz @ layers[-1][0])
        return out[0] if single else out


def forward_jvp_through_input(net, x, t, schedule, dx):
    return net.jvp_input(x, t, schedule, dx)
