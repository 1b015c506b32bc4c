"""Objective metrics for interpolated models.

* statistics-pooling embeddings and cosine similarity curves over a sweep,
* frame-level template decoding as a content error rate,
* a scalar intensity estimate and a simulated-rater rank ordering.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_frames, check_sentences
from .exceptions import (
    LengthMismatch,
    ShapeMismatch,
    TooFewPoints,
    WrongModelCount,
    ZeroVector,
)
from .merge import MergePolicy, SweepSpec, sweep
from .tensor_store import Checkpoint
from .toy.data import AttributeProfile, Dataset, synth_frames
from .toy.model import forward_batch

__all__ = [
    "StatsPoolingEmbedder",
    "TemplateDecoder",
    "extract_embedding",
    "cosine_similarity",
    "CurvePoint",
    "SimilarityCurve",
    "secs_curve",
    "smoothness_metrics",
    "content_error_rate",
    "project_intensity",
    "intensity_estimate",
    "RankTable",
    "rank_estimates",
    "intensity_rank_eval",
    "INTENSITY_ALPHAS",
]

INTENSITY_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)


def _stats(frames: np.ndarray) -> np.ndarray:
    return np.concatenate([frames.mean(axis=0), frames.std(axis=0)])


class StatsPoolingEmbedder(TransformerMixin, BaseEstimator):
    """Per-channel mean and standard deviation of frames.

    ``transform`` maps ``(n, L, F)`` frames to one ``2F`` row per sentence;
    ``pool`` pools all frames of all sentences into a single vector.
    """

    def fit(self, X, y=None):
        self.n_features_in_ = check_frames(X).shape[2]
        return self

    def transform(self, X) -> np.ndarray:
        X = check_frames(X)
        return np.stack([_stats(x) for x in X])

    def pool(self, X) -> np.ndarray:
        X = check_frames(X)
        return _stats(X.reshape(-1, X.shape[2]))


def extract_embedding(model: Checkpoint, sentences) -> np.ndarray:
    """Pooled (mean, std) statistics of the model's frames over all sentences."""
    frames = forward_batch(model, check_sentences(sentences))
    return StatsPoolingEmbedder().pool(frames)


def cosine_similarity(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise LengthMismatch(f"embedding lengths differ: {x.size} vs {y.size}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


@dataclass(frozen=True)
class CurvePoint:
    alpha: float
    sim_to_a: float
    sim_to_b: float
    sim_to_a_std: float = 0.0
    sim_to_b_std: float = 0.0


@dataclass
class SimilarityCurve:
    points: list[CurvePoint]
    max_violation: float = float("nan")
    max_jump: float = float("nan")

    @property
    def alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.points])

    @property
    def sim_to_a(self) -> np.ndarray:
        return np.array([p.sim_to_a for p in self.points])

    @property
    def sim_to_b(self) -> np.ndarray:
        return np.array([p.sim_to_b for p in self.points])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["alpha", "sim_to_a", "sim_to_b", "sim_to_a_std", "sim_to_b_std"])
        for p in self.points:
            writer.writerow([f"{v:.6f}" for v in (p.alpha, p.sim_to_a, p.sim_to_b, p.sim_to_a_std, p.sim_to_b_std)])
        return buf.getvalue()


def smoothness_metrics(curve) -> tuple[float, float]:
    """``(max_violation, max_jump)`` of sim_to_a along the curve.

    ``max_violation`` is the largest increase between consecutive points (0
    for a non-increasing curve); ``max_jump`` the largest absolute change.
    Accepts a SimilarityCurve or a plain sequence of sim_to_a values.
    """
    values = curve.sim_to_a if isinstance(curve, SimilarityCurve) else np.asarray(curve, dtype=np.float64)
    if len(values) < 2:
        raise TooFewPoints(f"need at least 2 points, got {len(values)}")
    steps = np.diff(values)
    return float(max(0.0, steps.max())), float(np.abs(steps).max())


def secs_curve(
    base_a: Checkpoint,
    base_b: Checkpoint,
    spec: SweepSpec,
    sentences,
    policy: MergePolicy | None = None,
    threads: int = 1,
) -> SimilarityCurve:
    """Similarity of each merged model's embedding to both bases across a sweep.

    Similarities compare pooled embeddings; the std columns are the spread of
    per-sentence similarities against the same pooled base embedding.
    """
    sentences = check_sentences(sentences)
    embedder = StatsPoolingEmbedder()
    emb_a = embedder.pool(forward_batch(base_a, sentences))
    emb_b = embedder.pool(forward_batch(base_b, sentences))
    points = []
    for alpha, merged in sweep(base_a, base_b, spec, policy, threads=threads):
        frames = forward_batch(merged, sentences)
        pooled = embedder.pool(frames)
        per_sentence = embedder.transform(frames)
        to_a = [cosine_similarity(e, emb_a) for e in per_sentence]
        to_b = [cosine_similarity(e, emb_b) for e in per_sentence]
        points.append(
            CurvePoint(alpha, cosine_similarity(pooled, emb_a), cosine_similarity(pooled, emb_b), float(np.std(to_a)), float(np.std(to_b)))
        )
    curve = SimilarityCurve(points)
    curve.max_violation, curve.max_jump = smoothness_metrics(curve)
    return curve


class TemplateDecoder(ClassifierMixin, BaseEstimator):
    """Nearest-template token decoder for synthetic frames.

    Templates are the noiseless frames of every token at every position under
    ``profile``; each frame decodes to the token with the closest template.
    """

    def __init__(self, profile: AttributeProfile | None = None, vocab_size: int = 16):
        self.profile = profile
        self.vocab_size = vocab_size

    def fit(self, X=None, y=None):
        if self.profile is None:
            raise ValueError("TemplateDecoder needs a template profile")
        self.classes_ = np.arange(self.vocab_size)
        return self

    def templates(self, length: int, feature_dim: int) -> np.ndarray:
        """Template frames, shape ``(vocab_size, length, feature_dim)``."""
        check_is_fitted(self, "classes_")
        grid = np.repeat(self.classes_[:, None], length, axis=1)
        return synth_frames(grid, self.profile, self.vocab_size, feature_dim)

    def predict(self, X) -> np.ndarray:
        X = check_frames(X)
        templates = self.templates(X.shape[1], X.shape[2])
        # (n, L, V): squared distance of each frame to each token's template at that position
        dist = ((X[:, :, None, :] - templates.transpose(1, 0, 2)[None]) ** 2).sum(axis=-1)
        return dist.argmin(axis=-1)

    def score(self, X, y, sample_weight=None) -> float:
        y = np.asarray(y)
        pred = self.predict(X)
        if pred.shape != y.shape:
            raise ShapeMismatch(f"decoded tokens {pred.shape} do not match reference {y.shape}")
        return float(np.mean(pred == y))


def content_error_rate(model: Checkpoint, dataset: Dataset, template_profile: AttributeProfile) -> float:
    """Fraction of frames whose decoded token differs from the true token."""
    frames = forward_batch(model, dataset.tokens)
    if frames.shape[2] != dataset.feature_dim:
        raise ShapeMismatch(f"model outputs {frames.shape[2]} channels, dataset has {dataset.feature_dim}")
    decoder = TemplateDecoder(template_profile, int(model.meta("embedding.weight").shape[0])).fit()
    return 1.0 - decoder.score(frames, dataset.tokens)


def project_intensity(embedding, neutral, emotive) -> float:
    """Projection of the embedding's mean part onto the unit neutral-to-emotive direction."""
    embedding, neutral, emotive = (np.asarray(v, dtype=np.float64) for v in (embedding, neutral, emotive))
    if not embedding.shape == neutral.shape == emotive.shape:
        raise LengthMismatch(f"embedding lengths differ: {embedding.size}, {neutral.size}, {emotive.size}")
    half = embedding.size // 2
    direction = emotive[:half] - neutral[:half]
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        raise ZeroVector("neutral and emotive bases have identical mean embeddings")
    return float(np.dot(embedding[:half] - neutral[:half], direction / norm))


def intensity_estimate(model: Checkpoint, sentences, neutral: Checkpoint, emotive: Checkpoint) -> float:
    return project_intensity(
        extract_embedding(model, sentences),
        extract_embedding(neutral, sentences),
        extract_embedding(emotive, sentences),
    )


@dataclass
class RankTable:
    alphas: tuple[float, ...]
    avg_rank: np.ndarray
    rank_std: np.ndarray
    trials: int
    noise_sigma: float
    estimates: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def levels(self) -> list[int]:
        return list(range(1, len(self.alphas) + 1))

    @property
    def grand_mean(self) -> float:
        return float(np.mean(self.avg_rank))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["level", "alpha", "avg_rank", "rank_std"])
        for level, alpha, avg, std in zip(self.levels, self.alphas, self.avg_rank, self.rank_std):
            writer.writerow([level, f"{alpha:.6f}", f"{avg:.6f}", f"{std:.6f}"])
        return buf.getvalue()


def rank_estimates(estimates, trials: int, noise_sigma: float, noise_seed: int, alphas=INTENSITY_ALPHAS) -> RankTable:
    """Simulated raters: rank noisy copies of the estimates, average per level.

    Trial ``i`` draws its noise from ``default_rng([noise_seed, i])`` so the
    table does not depend on evaluation order.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    ranks = np.empty((trials, estimates.size))
    for i in range(trials):
        noise = np.random.default_rng([noise_seed, i]).normal(0.0, 1.0, estimates.size) * noise_sigma
        ranks[i] = np.argsort(np.argsort(estimates + noise, kind="stable"), kind="stable") + 1
    return RankTable(tuple(alphas), ranks.mean(axis=0), ranks.std(axis=0), trials, float(noise_sigma), estimates)


def intensity_rank_eval(
    models: Sequence[Checkpoint],
    sentences,
    trials: int = 50,
    noise_sigma: float = 0.0,
    noise_seed: int = 0,
    neutral: Checkpoint | None = None,
    emotive: Checkpoint | None = None,
    alphas=INTENSITY_ALPHAS,
) -> RankTable:
    """Rank the five intensity levels (alpha 0, .25, .5, .75, 1) with simulated raters.

    The neutral and emotive references default to the first and last model.
    """
    models = list(models)
    if len(models) != 5:
        raise WrongModelCount(f"intensity ranking needs exactly 5 models, got {len(models)}")
    sentences = check_sentences(sentences)
    neutral = models[0] if neutral is None else neutral
    emotive = models[-1] if emotive is None else emotive
    ref_n, ref_e = extract_embedding(neutral, sentences), extract_embedding(emotive, sentences)
    estimates = [project_intensity(extract_embedding(m, sentences), ref_n, ref_e) for m in models]
    return rank_estimates(estimates, trials, noise_sigma, noise_seed, alphas)
