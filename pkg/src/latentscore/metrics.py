"""Evaluation metrics over embedding sets and class distributions.

All metrics consume precomputed embeddings (the extractors that produce
them are pluggable; a seeded random linear featurizer is built in for
self-contained runs). Fréchet distances fit Gaussians to two populations;
density/coverage are k-NN manifold estimates; the KL direction is
KL(reference || generated), so lower means closer to the reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .tensor import derive_seed

__all__ = [
    "EmbeddingSet",
    "ClassDistribution",
    "MetricReport",
    "frechet_distance",
    "kl_divergence",
    "inception_score",
    "density_coverage",
    "cosine_alignment",
    "seeded_linear_featurizer",
    "class_probabilities",
]

_COV_RIDGE = 1e-10
_PROB_FLOOR = 1e-10


@dataclass
class EmbeddingSet:
    vectors: np.ndarray  # [N, D]
    label: str = ""

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise DataError(f"embedding set must be [N, D], got {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise DataError(f"embedding set {self.label!r} contains non-finite values")

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class ClassDistribution:
    probs: np.ndarray  # [C]

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if np.any(self.probs < 0):
            raise DataError("class distribution has negative entries")
        total = self.probs.sum()
        if abs(total - 1.0) > 1e-9:
            raise DataError(f"class distribution sums to {total}, not 1")


# ---------------------------------------------------------------------------
# Fréchet distance between fitted Gaussians


def _fit_gaussian(s: EmbeddingSet) -> tuple[np.ndarray, np.ndarray]:
    mu = s.vectors.mean(axis=0)
    cov = np.cov(s.vectors, rowvar=False).reshape(s.dim, s.dim)
    return mu, cov + _COV_RIDGE * np.eye(s.dim)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross term uses the symmetric form Tr((S_a^{1/2} S_b S_a^{1/2})^{1/2})
    via eigendecompositions, clamping negative eigenvalues at zero; both
    covariances get a small diagonal ridge.
    """
    if a.dim != b.dim:
        raise DataError(f"embedding dims disagree: {a.dim} vs {b.dim}")
    for s in (a, b):
        if s.count < 2:
            raise DataError(
                f"need at least 2 vectors to fit a Gaussian, got {s.count} in "
                f"{s.label or 'set'}"
            )
    mu_a, cov_a = _fit_gaussian(a)
    mu_b, cov_b = _fit_gaussian(b)
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    vals = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    trace_cross = float(np.sqrt(vals).sum())
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_cross)
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# KL divergence and inception score over class distributions


def kl_divergence(p_set: list[ClassDistribution], q_set: list[ClassDistribution]) -> float:
    """Mean over pairs of sum p*log(p/q); q floored at 1e-10."""
    if len(p_set) != len(q_set):
        raise DataError(f"paired lists differ in length: {len(p_set)} vs {len(q_set)}")
    if not p_set:
        raise DataError("kl_divergence needs at least one pair")
    total = 0.0
    for p, q in zip(p_set, q_set):
        if p.probs.shape != q.probs.shape:
            raise DataError(
                f"paired distributions differ in classes: {p.probs.shape} vs {q.probs.shape}"
            )
        q_floored = np.maximum(q.probs, _PROB_FLOOR)
        mask = p.probs > 0
        total += float(np.sum(p.probs[mask] * np.log(p.probs[mask] / q_floored[mask])))
    return total / len(p_set)


def inception_score(dists: list[ClassDistribution], splits: int = 1) -> tuple[float, float]:
    """exp of the mean KL between conditionals and their split marginal;
    mean and std over splits (std 0 for a single split)."""
    if splits < 1:
        raise ConfigError(f"splits must be >= 1, got {splits}")
    if len(dists) < splits:
        raise DataError(f"{len(dists)} distributions cannot fill {splits} splits")
    probs = np.stack([d.probs for d in dists])
    scores = []
    for chunk in np.array_split(probs, splits):
        marginal = np.maximum(chunk.mean(axis=0), _PROB_FLOOR)
        mask = chunk > 0
        terms = np.where(mask, chunk * np.log(np.where(mask, chunk, 1.0) / marginal), 0.0)
        scores.append(float(np.exp(terms.sum(axis=1).mean())))
    scores = np.asarray(scores)
    return float(scores.mean()), float(scores.std())


# ---------------------------------------------------------------------------
# density / coverage


def _pairwise_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    return np.sqrt(np.maximum((diff * diff).sum(axis=-1), 0.0))


def density_coverage(real: EmbeddingSet, fake: EmbeddingSet, k: int = 3) -> tuple[float, float]:
    """k-NN manifold metrics; radius_i is the distance from real point i
    to its k-th nearest other real point, boundary ties count as inside.

    density = (1/(k*M)) * sum_fake #{i : d(fake, real_i) <= radius_i}
    coverage = fraction of real points whose radius ball holds a fake.
    """
    if real.dim != fake.dim:
        raise DataError(f"embedding dims disagree: {real.dim} vs {fake.dim}")
    n = real.count
    if k >= n:
        raise ConfigError(f"k ({k}) must be smaller than the real set size ({n})")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    real_dists = _pairwise_dists(real.vectors, real.vectors)
    np.fill_diagonal(real_dists, np.inf)  # self excluded from the k-NN radius
    radii = np.sort(real_dists, axis=1)[:, k - 1]
    cross = _pairwise_dists(fake.vectors, real.vectors)  # [M, N]
    inside = cross <= radii[None, :]
    density = float(inside.sum()) / (k * fake.count)
    coverage = float(inside.any(axis=0).sum()) / n
    return density, coverage


# ---------------------------------------------------------------------------
# paired cosine alignment


def cosine_alignment(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """Mean cosine similarity over paired rows."""
    if a.count != b.count:
        raise DataError(f"paired sets differ in size: {a.count} vs {b.count}")
    if a.dim != b.dim:
        raise DataError(f"embedding dims disagree: {a.dim} vs {b.dim}")
    norms_a = np.linalg.norm(a.vectors, axis=1)
    norms_b = np.linalg.norm(b.vectors, axis=1)
    for name, norms in ((a.label or "a", norms_a), (b.label or "b", norms_b)):
        zero = np.nonzero(norms == 0)[0]
        if zero.size:
            raise DataError(f"zero-norm vector at index {zero[0]} in {name}")
    sims = (a.vectors * b.vectors).sum(axis=1) / (norms_a * norms_b)
    return float(sims.mean())


# ---------------------------------------------------------------------------
# report + built-in featurizer


@dataclass
class MetricReport:
    fad: float
    fd: float
    kl: float
    is_mean: float
    is_std: float
    ib: float
    density: float
    coverage: float
    judge_means: dict[str, float] | None = None

    def to_json_dict(self) -> dict:
        doc = {
            "fad": self.fad,
            "fd": self.fd,
            "kl": self.kl,
            "is_mean": self.is_mean,
            "is_std": self.is_std,
            "ib": self.ib,
            "density": self.density,
            "coverage": self.coverage,
        }
        if self.judge_means is not None:
            for axis, value in sorted(self.judge_means.items()):
                doc[f"judge_{axis}"] = value
        return doc


def seeded_linear_featurizer(data: np.ndarray, out_dim: int, seed: int) -> EmbeddingSet:
    """Deterministic stand-in extractor: a fixed random linear map of the
    flattened rows. Numbers are only comparable within one extractor id."""
    data = np.asarray(data, dtype=np.float64)
    flat = data.reshape(data.shape[0], -1)
    gen = np.random.Generator(np.random.PCG64(derive_seed(seed, "featurizer", flat.shape[1], out_dim)))
    proj = gen.standard_normal((flat.shape[1], out_dim)) / np.sqrt(flat.shape[1])
    return EmbeddingSet(vectors=flat @ proj, label=f"linear-feat-{seed}")


def class_probabilities(embeddings: EmbeddingSet, classes: int, seed: int) -> list[ClassDistribution]:
    """Softmax over a fixed seeded linear head; the stand-in classifier
    for KL/IS when no external class distributions are supplied."""
    gen = np.random.Generator(np.random.PCG64(derive_seed(seed, "classifier", embeddings.dim, classes)))
    head = gen.standard_normal((embeddings.dim, classes))
    logits = embeddings.vectors @ head
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return [ClassDistribution(row) for row in probs]
