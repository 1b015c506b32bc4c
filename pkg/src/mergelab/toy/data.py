"""Synthetic attribute-conditioned training data.

Every token ``t`` at frame ``j`` maps to a frame whose channel ``c`` is::

    pitch_base * sin(omega[t] * j + phase[t, c]) + tilt * c / feature_dim + energy

``omega`` and ``phase`` come from a fixed seeded table shared by every
dataset of the same (vocab_size, feature_dim), so content is identical across
profiles and only the attribute terms differ.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..exceptions import InvalidSpec

__all__ = [
    "AttributeProfile",
    "ContentSpec",
    "Dataset",
    "frequency_table",
    "synth_frames",
    "generate_dataset",
    "generate_sentences",
    "midpoint_profile",
    "profile_separation",
]

TABLE_SEED = 20240917
OMEGA_RANGE = (0.15, 0.6)


@dataclass(frozen=True)
class AttributeProfile:
    pitch_base: float
    tilt: float
    energy: float
    profile_id: str = "profile"

    def to_string(self) -> str:
        return f"pitch_base={self.pitch_base!r};tilt={self.tilt!r};energy={self.energy!r};profile_id={self.profile_id}"

    @classmethod
    def from_string(cls, text: str) -> "AttributeProfile":
        fields = dict(part.split("=", 1) for part in text.split(";") if part)
        try:
            return cls(float(fields["pitch_base"]), float(fields["tilt"]), float(fields["energy"]), fields.get("profile_id", "profile"))
        except (KeyError, ValueError) as exc:
            raise InvalidSpec(f"cannot parse attribute profile {text!r}: {exc}") from None


def profile_separation(a: AttributeProfile, b: AttributeProfile) -> float:
    """Largest per-field difference between two profiles."""
    return max(abs(a.pitch_base - b.pitch_base), abs(a.tilt - b.tilt), abs(a.energy - b.energy))


def midpoint_profile(a: AttributeProfile, b: AttributeProfile) -> AttributeProfile:
    return AttributeProfile(
        (a.pitch_base + b.pitch_base) / 2,
        (a.tilt + b.tilt) / 2,
        (a.energy + b.energy) / 2,
        f"mid({a.profile_id},{b.profile_id})",
    )


@dataclass(frozen=True)
class ContentSpec:
    vocab_size: int = 16
    sentence_length: int = 32
    num_sentences: int = 32
    seed: int = 0
    feature_dim: int = 8

    def __post_init__(self):
        if self.vocab_size < 2:
            raise InvalidSpec(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.sentence_length < 1:
            raise InvalidSpec(f"sentence_length must be >= 1, got {self.sentence_length}")
        if self.num_sentences < 1:
            raise InvalidSpec(f"num_sentences must be >= 1, got {self.num_sentences}")
        if self.feature_dim < 1:
            raise InvalidSpec(f"feature_dim must be >= 1, got {self.feature_dim}")


@dataclass
class Dataset:
    """Token sentences ``(n, L)`` with target frames ``(n, L, feature_dim)``."""

    tokens: np.ndarray
    frames: np.ndarray
    profile_id: str = "mixed"
    profiles: tuple[AttributeProfile, ...] = field(default=())

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.tokens.ndim != 2 or self.frames.shape[:2] != self.tokens.shape or self.frames.ndim != 3:
            raise InvalidSpec(f"tokens {self.tokens.shape} and frames {self.frames.shape} do not line up")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def items(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.tokens, self.frames))

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[2]

    def subset(self, index) -> "Dataset":
        return Dataset(self.tokens[index], self.frames[index], self.profile_id, self.profiles)

    @classmethod
    def concat(cls, datasets, profile_id: str = "mixed") -> "Dataset":
        datasets = list(datasets)
        profiles = tuple(p for d in datasets for p in d.profiles)
        return cls(
            np.concatenate([d.tokens for d in datasets]),
            np.concatenate([d.frames for d in datasets]),
            profile_id,
            profiles,
        )


@lru_cache(maxsize=None)
def frequency_table(vocab_size: int, feature_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-token angular frequency and per-(token, channel) phase."""
    rng = np.random.default_rng([TABLE_SEED, vocab_size, feature_dim])
    omega = rng.uniform(*OMEGA_RANGE, size=vocab_size)
    phase = rng.uniform(0.0, 2 * np.pi, size=(vocab_size, feature_dim))
    omega.setflags(write=False)
    phase.setflags(write=False)
    return omega, phase


def synth_frames(tokens: np.ndarray, profile: AttributeProfile, vocab_size: int, feature_dim: int) -> np.ndarray:
    """Target frames for a ``(..., L)`` token array; frame index is the last axis."""
    tokens = np.asarray(tokens, dtype=np.int64)
    omega, phase = frequency_table(vocab_size, feature_dim)
    j = np.arange(tokens.shape[-1], dtype=np.float64)
    angle = omega[tokens][..., None] * j[:, None] + phase[tokens]
    channel = np.arange(feature_dim, dtype=np.float64) / feature_dim
    return profile.pitch_base * np.sin(angle) + profile.tilt * channel + profile.energy


def generate_sentences(content: ContentSpec) -> np.ndarray:
    rng = np.random.default_rng(content.seed)
    return rng.integers(0, content.vocab_size, size=(content.num_sentences, content.sentence_length), dtype=np.int64)


def generate_dataset(profile: AttributeProfile, content: ContentSpec) -> Dataset:
    tokens = generate_sentences(content)
    frames = synth_frames(tokens, profile, content.vocab_size, content.feature_dim)
    return Dataset(tokens, frames, profile.profile_id, (profile,))
