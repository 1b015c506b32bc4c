"""End-to-end interpolation experiment on the toy synthesizer.

pretrain on both profiles -> fine-tune one base per profile -> 0.1 sweep
(similarity curve + content error rates) -> 0.25 sweep (intensity ranks).

Every random stream derives from one seed plus a fixed per-role offset, so
partial reruns (e.g. only training) agree with a full run.
"""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import (
    INTENSITY_ALPHAS,
    RankTable,
    SimilarityCurve,
    content_error_rate,
    extract_embedding,
    project_intensity,
    rank_estimates,
    secs_curve,
)
from .exceptions import InvalidConfig
from .merge import MergePolicy, SweepSpec, sweep
from .tensor_store import Checkpoint, save_checkpoint
from .toy.data import (
    AttributeProfile,
    ContentSpec,
    Dataset,
    generate_dataset,
    generate_sentences,
    midpoint_profile,
    profile_separation,
)
from .toy.model import ToyModelConfig, TrainingRun, init_model, train

__all__ = [
    "Recipe",
    "SEED_OFFSETS",
    "derive_seed",
    "read_config_file",
    "BaseModels",
    "train_base_models",
    "pitch_statistic",
    "SeparationGate",
    "check_separation",
    "ExperimentResult",
    "run_experiment",
    "write_reports",
]

logger = logging.getLogger(__name__)

SEED_OFFSETS = {
    "init": 0,
    "pretrain": 1,
    "finetune_a": 2,
    "finetune_b": 3,
    "data_a": 11,
    "data_b": 12,
    "eval": 20,
    "raters": 30,
}


def derive_seed(seed: int, role: str) -> int:
    return int(seed) + SEED_OFFSETS[role]


@dataclass(frozen=True)
class Recipe:
    vocab_size: int = 16
    sentence_length: int = 32
    embed_dim: int = 16
    hidden_dim: int = 32
    num_layers: int = 2
    feature_dim: int = 8
    learning_rate: float = 0.5
    batch_size: int = 8
    pretrain_epochs: int = 200
    finetune_epochs: int = 100
    train_sentences: int = 32
    eval_sentences: int = 16
    min_separation: float = 1.0
    profile_a: AttributeProfile = AttributeProfile(2.0, 0.0, 0.0, "A")
    profile_b: AttributeProfile = AttributeProfile(3.0, 0.5, 1.0, "B")

    def __post_init__(self):
        sep = profile_separation(self.profile_a, self.profile_b)
        if sep < self.min_separation:
            raise InvalidConfig(
                f"profiles {self.profile_a.profile_id!r} and {self.profile_b.profile_id!r} differ by {sep}, "
                f"below the minimum separation {self.min_separation}"
            )

    def model_config(self, seed: int) -> ToyModelConfig:
        return ToyModelConfig(self.vocab_size, self.embed_dim, self.hidden_dim, self.feature_dim, self.num_layers, derive_seed(seed, "init"))

    def content(self, seed: int, num_sentences: int) -> ContentSpec:
        return ContentSpec(self.vocab_size, self.sentence_length, num_sentences, seed, self.feature_dim)

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "Recipe":
        """Build from ``key=value`` pairs; ``profile_a.pitch_base`` style keys set profile fields."""
        scalars = {f.name: f.type for f in dataclasses.fields(cls) if not f.name.startswith("profile_")}
        kwargs: dict = {}
        profiles = {"profile_a": dataclasses.asdict(cls.profile_a), "profile_b": dataclasses.asdict(cls.profile_b)}
        for key, raw in values.items():
            try:
                if key in scalars:
                    kwargs[key] = float(raw) if scalars[key] in (float, "float") else int(raw)
                elif key.split(".", 1)[0] in profiles and "." in key:
                    which, attr = key.split(".", 1)
                    attr = "profile_id" if attr == "id" else attr
                    if attr not in profiles[which]:
                        raise InvalidConfig(f"unknown profile field {key!r}")
                    profiles[which][attr] = raw if attr == "profile_id" else float(raw)
                else:
                    raise InvalidConfig(f"unknown config key {key!r}")
            except ValueError:
                raise InvalidConfig(f"bad value for {key!r}: {raw!r}") from None
        return cls(**kwargs, profile_a=AttributeProfile(**profiles["profile_a"]), profile_b=AttributeProfile(**profiles["profile_b"]))


def read_config_file(path) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise InvalidConfig(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


@dataclass
class BaseModels:
    recipe: Recipe
    seed: int
    pretrained: Checkpoint
    base_a: Checkpoint
    base_b: Checkpoint
    data_a: Dataset
    data_b: Dataset
    eval_tokens: np.ndarray


def train_base_models(recipe: Recipe = Recipe(), seed: int = 0) -> BaseModels:
    """Shared pretrain on both profiles, then one fine-tune per profile."""
    data_a = generate_dataset(recipe.profile_a, recipe.content(derive_seed(seed, "data_a"), recipe.train_sentences))
    data_b = generate_dataset(recipe.profile_b, recipe.content(derive_seed(seed, "data_b"), recipe.train_sentences))
    init = init_model(recipe.model_config(seed))
    lr, bs = recipe.learning_rate, recipe.batch_size
    pretrained = train(TrainingRun(init, Dataset.concat([data_a, data_b]), recipe.pretrain_epochs, lr, bs, derive_seed(seed, "pretrain")))
    base_a = train(TrainingRun(pretrained, data_a, recipe.finetune_epochs, lr, bs, derive_seed(seed, "finetune_a")))
    base_b = train(TrainingRun(pretrained, data_b, recipe.finetune_epochs, lr, bs, derive_seed(seed, "finetune_b")))
    eval_tokens = generate_sentences(recipe.content(derive_seed(seed, "eval"), recipe.eval_sentences))
    return BaseModels(recipe, seed, pretrained, base_a, base_b, data_a, data_b, eval_tokens)


def pitch_statistic(model: Checkpoint, sentences) -> float:
    """Estimated sinusoid amplitude: sqrt(2) times the mean per-channel std."""
    emb = extract_embedding(model, sentences)
    return float(np.sqrt(2.0) * emb[emb.size // 2 :].mean())


@dataclass
class SeparationGate:
    stat_a: float
    stat_b: float
    required: float

    @property
    def gap(self) -> float:
        return abs(self.stat_a - self.stat_b)

    @property
    def passed(self) -> bool:
        return self.gap >= self.required


def check_separation(bases: BaseModels) -> SeparationGate:
    """Fine-tuned bases must differ in pitch statistic by half the profiles' pitch gap."""
    r = bases.recipe
    return SeparationGate(
        pitch_statistic(bases.base_a, bases.eval_tokens),
        pitch_statistic(bases.base_b, bases.eval_tokens),
        0.5 * abs(r.profile_a.pitch_base - r.profile_b.pitch_base),
    )


@dataclass
class ExperimentResult:
    bases: BaseModels
    separation: SeparationGate
    curve: SimilarityCurve
    error_rates: list[tuple[float, float]]
    intensity_estimates: list[float]
    ranks: RankTable
    ranks_noiseless: RankTable
    noise_sigma: float
    extras: dict = field(default_factory=dict)

    def error_rate_csv(self) -> str:
        lines = ["alpha,error_rate"]
        lines += [f"{alpha:.6f},{rate:.6f}" for alpha, rate in self.error_rates]
        return "\n".join(lines) + "\n"


def run_experiment(
    recipe: Recipe = Recipe(),
    seed: int = 0,
    *,
    secs_step: float = 0.1,
    trials: int = 50,
    sigma_frac: float = 0.25,
    policy: MergePolicy | None = None,
    threads: int = 1,
    bases: BaseModels | None = None,
) -> ExperimentResult:
    bases = bases or train_base_models(recipe, seed)
    a, b, tokens = bases.base_a, bases.base_b, bases.eval_tokens
    separation = check_separation(bases)
    if not separation.passed:
        logger.warning("separation gate failed: pitch gap %.4f < %.4f", separation.gap, separation.required)

    curve = secs_curve(a, b, SweepSpec.by_step(secs_step), tokens, policy, threads=threads)

    held_out = generate_dataset(midpoint_profile(recipe.profile_a, recipe.profile_b), recipe.content(derive_seed(seed, "eval"), recipe.eval_sentences))
    templates = midpoint_profile(recipe.profile_a, recipe.profile_b)
    error_rates = [
        (alpha, content_error_rate(merged, held_out, templates))
        for alpha, merged in sweep(a, b, SweepSpec.by_step(secs_step), policy, threads=threads)
    ]

    ref_n, ref_e = extract_embedding(a, tokens), extract_embedding(b, tokens)
    estimates = [
        project_intensity(extract_embedding(merged, tokens), ref_n, ref_e)
        for _, merged in sweep(a, b, SweepSpec.explicit(INTENSITY_ALPHAS), policy, threads=threads)
    ]
    sigma = sigma_frac * (estimates[-1] - estimates[0])
    raters = derive_seed(seed, "raters")
    ranks = rank_estimates(estimates, trials, sigma, raters)
    noiseless = rank_estimates(estimates, trials, 0.0, raters)
    return ExperimentResult(bases, separation, curve, error_rates, estimates, ranks, noiseless, sigma)


def write_reports(result: ExperimentResult, out_dir, save_models: bool = False) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "secs": out / "secs_curve.csv",
        "wer": out / "content_error.csv",
        "intensity": out / "intensity_rank.csv",
    }
    paths["secs"].write_text(result.curve.to_csv())
    paths["wer"].write_text(result.error_rate_csv())
    paths["intensity"].write_text(result.ranks.to_csv())
    if save_models:
        models = out / "models"
        models.mkdir(exist_ok=True)
        for name in ("pretrained", "base_a", "base_b"):
            path = models / f"{name}.ckpt"
            save_checkpoint(getattr(result.bases, name), path)
            paths[name] = path
    return paths


def threads_from_env(default: int = 1) -> int:
    """``MERGELAB_THREADS`` (0 = one per CPU)."""
    raw = os.environ.get("MERGELAB_THREADS")
    if raw is None or raw.strip() == "":
        return default
    try:
        n = int(raw)
    except ValueError:
        raise InvalidConfig(f"MERGELAB_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise InvalidConfig(f"MERGELAB_THREADS must be >= 0, got {n}")
    return n or (os.cpu_count() or 1)
