"""Quantitative checks of trained denoisers and generated samples."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError
from .oracle import GaussianMixture, posterior_mean, sample_prior
from .sampler import SamplerConfig, posterior_sample
from .schedule import NoiseSchedule, forward_noise

SIMILARITY_THRESHOLDS = (0.9, 0.95, 0.99)


@dataclass
class MseRow:
    sigma_eval: float
    relative_mse: float
    absolute_mse: float
    n_points: int


@dataclass
class DenoiserMseReport:
    rows: list
    model_id: str = "model"
    oracle_id: str = "oracle"
    # per-point squared errors, one array per row; used for paired tests
    errors: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "oracle_id": self.oracle_id,
                "rows": [asdict(r) for r in self.rows]}

    def to_csv(self) -> str:
        lines = ["sigma_eval,relative_mse,absolute_mse,n_points"]
        lines += [f"{r.sigma_eval!r},{r.relative_mse!r},{r.absolute_mse!r},{r.n_points}"
                  for r in self.rows]
        return "\n".join(lines) + "\n"

    def relative(self) -> np.ndarray:
        return np.array([r.relative_mse for r in self.rows])


def denoiser_mse_grid(model, gm: GaussianMixture, schedule: NoiseSchedule, sigma_list,
                      n_points: int, rng: np.random.Generator, model_id="model"
                      ) -> DenoiserMseReport:
    """Squared distance between ``model`` and the exact posterior mean.

    Test inputs are forward-noised fresh prior draws at each noise level, so
    two models evaluated with equally seeded generators see identical points.
    """
    rows, errors = [], []
    for sigma in sorted(float(s) for s in sigma_list):
        t = float(schedule.time_at(sigma))
        x0 = sample_prior(gm, n_points, rng)
        x_t = forward_noise(schedule, x0, 0.0, t, rng.standard_normal(x0.shape))
        target = posterior_mean(gm, x_t, t, schedule)
        err = np.sum((model.forward(x_t, t, schedule) - target) ** 2, axis=1)
        norm = np.mean(np.sum(target**2, axis=1))
        rows.append(MseRow(sigma, float(err.mean() / norm), float(err.mean()), n_points))
        errors.append(err)
    return DenoiserMseReport(rows, model_id, "gmm-oracle", errors)


def _w2_1d_sorted(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact W2 between empirical laws; columns of ``a`` and ``b`` are sorted samples."""
    n, m = a.shape[0], b.shape[0]
    if n == m:
        return np.sqrt(np.mean((a - b) ** 2, axis=0))
    levels = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    widths = np.diff(np.concatenate([[0.0], levels]))
    mid = levels - widths / 2
    ia = np.minimum((mid * n).astype(int), n - 1)
    ib = np.minimum((mid * m).astype(int), m - 1)
    return np.sqrt(widths @ (a[ia] - b[ib]) ** 2)


def random_directions(n_projections: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    th = rng.standard_normal((n_projections, dim))
    return th / np.linalg.norm(th, axis=1, keepdims=True)


def sliced_wasserstein2(A, B, n_projections: int = 128, rng: np.random.Generator | None = None,
                        directions: np.ndarray | None = None) -> float:
    """Mean over random unit directions of the 1-D W2 between projections."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise DomainError("sample sets must be non-empty")
    if A.shape[1] != B.shape[1]:
        raise DomainError(f"dimension mismatch {A.shape[1]} vs {B.shape[1]}")
    if directions is None:
        directions = random_directions(n_projections, A.shape[1], rng)
    pa = np.sort(A @ directions.T, axis=0)
    pb = np.sort(B @ directions.T, axis=0)
    return float(np.mean(_w2_1d_sorted(pa, pb)))


@dataclass
class SimilarityReport:
    bin_edges: list
    counts: list
    fractions: dict
    sigma_attack: float
    model_id: str
    n_samples: int
    similarities: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"bin_edges": self.bin_edges, "counts": self.counts,
                "fractions": {str(k): v for k, v in self.fractions.items()},
                "sigma_attack": self.sigma_attack, "model_id": self.model_id,
                "n_samples": self.n_samples}

    def to_csv(self) -> str:
        lines = ["bin_lo,bin_hi,count"]
        lines += [f"{lo!r},{hi!r},{c}" for lo, hi, c in
                  zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts)]
        return "\n".join(lines) + "\n"


def nearest_cosine(samples, dataset) -> np.ndarray:
    """Largest cosine similarity of each sample to any dataset point."""
    s = np.asarray(samples, dtype=np.float64)
    d = np.asarray(dataset, dtype=np.float64)
    s = s / np.maximum(np.linalg.norm(s, axis=1, keepdims=True), 1e-300)
    d = d / np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
    return (s @ d.T).max(axis=1)


def similarity_report(similarities, sigma_attack=float("nan"), model_id="model",
                      n_bins: int = 40) -> SimilarityReport:
    sims = np.asarray(similarities, dtype=np.float64)
    edges = np.linspace(-1.0, 1.0, n_bins + 1)
    counts, _ = np.histogram(np.clip(sims, -1.0, 1.0), bins=edges)
    fractions = {th: float(np.mean(sims > th)) for th in SIMILARITY_THRESHOLDS}
    return SimilarityReport(edges.tolist(), counts.tolist(), fractions, float(sigma_attack),
                            model_id, int(sims.size), sims)


def memorization_attack(model, dataset, schedule: NoiseSchedule, sigma_attack: float,
                        n_per_point: int, cfg: SamplerConfig, rng: np.random.Generator,
                        model_id="model") -> SimilarityReport:
    """Heavily noise each dataset point, posterior-sample, and score replication.

    ``schedule`` is the model's training schedule; the attack level must exceed
    its nature level.
    """
    points = np.atleast_2d(np.asarray(dataset, dtype=np.float64))
    if not sigma_attack > schedule.sigma_n:
        raise DomainError("attack noise must exceed the training noise level")
    t_att = float(schedule.time_at(sigma_attack))
    x0 = np.repeat(points, n_per_point, axis=0)
    x_t = forward_noise(schedule, x0, 0.0, t_att, rng.standard_normal(x0.shape))
    recon = posterior_sample(model, x_t, t_att, schedule, cfg, rng)
    return similarity_report(nearest_cosine(recon, points), sigma_attack, model_id)


def conservativeness_diagnostic(model, schedule: NoiseSchedule, t, n_probes: int,
                                rng: np.random.Generator, probes=None) -> float:
    """Mean ``|J_01 - J_10| / 2`` of the Jacobian of ``(h(x, t) - x) / sigma_t^2``.

    Zero for gradient fields.  Probe points default to ``N(0, (1 + sigma_t^2) I)``.
    """
    sigma = float(schedule.sigma(t))
    if probes is None:
        probes = np.sqrt(1.0 + sigma**2) * rng.standard_normal((n_probes, 2))
    probes = np.atleast_2d(probes)
    if probes.shape[1] != 2:
        raise DomainError("conservativeness diagnostic is defined for dim = 2")
    e0 = np.array([1.0, 0.0])
    e1 = np.array([0.0, 1.0])
    col0 = (model.jvp_input(probes, t, schedule, e0) - e0) / sigma**2
    col1 = (model.jvp_input(probes, t, schedule, e1) - e1) / sigma**2
    return float(np.mean(np.abs(col1[:, 0] - col0[:, 1])) / 2)
