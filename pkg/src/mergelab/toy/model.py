"""Per-frame feed-forward synthesizer stored as a Checkpoint.

Each frame is computed independently::

    x = embedding[token] + posenc(j)
    h = tanh(W_l h + b_l)            for l in 0 .. num_layers-1
    y = W_out h + b_out

Parameters live in F32 tensors; all arithmetic runs in float64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .._validation import check_tokens
from ..exceptions import InvalidConfig, NonFiniteLoss, ShapeMismatch
from ..tensor_store import Checkpoint
from .data import Dataset

__all__ = [
    "ToyModelConfig",
    "TrainingRun",
    "init_model",
    "forward",
    "forward_batch",
    "train",
    "mse",
    "positional_encoding",
]

logger = logging.getLogger(__name__)

STEP_KEY = "step_count"
POSENC_BASE = 100.0


@dataclass(frozen=True)
class ToyModelConfig:
    vocab_size: int = 16
    embed_dim: int = 16
    hidden_dim: int = 32
    feature_dim: int = 8
    num_layers: int = 2
    init_seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "feature_dim", "num_layers"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.vocab_size < 2:
            raise InvalidConfig(f"vocab_size must be >= 2, got {self.vocab_size}")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {"embedding.weight": (self.vocab_size, self.embed_dim)}
        fan_in = self.embed_dim
        for i in range(self.num_layers):
            shapes[f"layers.{i}.weight"] = (self.hidden_dim, fan_in)
            shapes[f"layers.{i}.bias"] = (self.hidden_dim,)
            fan_in = self.hidden_dim
        shapes["output.weight"] = (self.feature_dim, self.hidden_dim)
        shapes["output.bias"] = (self.feature_dim,)
        return shapes

    @classmethod
    def from_checkpoint(cls, cp: Checkpoint) -> "ToyModelConfig":
        try:
            vocab, embed = cp.meta("embedding.weight").shape
            hidden = cp.meta("layers.0.weight").shape[0]
            feature = cp.meta("output.weight").shape[0]
        except (ValueError, KeyError) as exc:
            raise ShapeMismatch(f"checkpoint is not a toy synthesizer: {exc}") from None
        num_layers = sum(1 for n in cp.names if n.startswith("layers.") and n.endswith(".weight"))
        config = cls(vocab, embed, hidden, feature, num_layers, int(cp.metadata.get("toy.init_seed", 0)))
        _check_structure(cp, config)
        return config


def _check_structure(cp: Checkpoint, config: ToyModelConfig) -> None:
    for name, shape in config.shapes().items():
        if name not in cp:
            raise ShapeMismatch(f"tensor {name!r} missing from model")
        if cp.meta(name).shape != shape:
            raise ShapeMismatch(f"tensor {name!r} has shape {list(cp.meta(name).shape)}, expected {list(shape)}")
        if not cp.meta(name).dtype.is_float:
            raise ShapeMismatch(f"tensor {name!r} must be floating point")


@dataclass
class TrainingRun:
    init: Checkpoint
    dataset: Dataset
    epochs: int = 100
    learning_rate: float = 0.5
    batch_size: int = 8
    shuffle_seed: int = 0


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal encoding, shape ``(length, dim)``."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim)
    rates = POSENC_BASE ** (-(2 * (i // 2)) / dim)
    angle = pos * rates
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def init_model(config: ToyModelConfig) -> Checkpoint:
    """Uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``; the embedding's fan-in is the vocab size."""
    rng = np.random.default_rng(config.init_seed)
    arrays = {}
    for name, shape in config.shapes().items():
        if name == "embedding.weight":
            fan_in = config.vocab_size
        elif name.endswith(".bias"):
            fan_in = config.shapes()[name[: -len("bias")] + "weight"][1]
        else:
            fan_in = shape[1]
        bound = 1.0 / np.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    arrays[STEP_KEY] = np.zeros(1, dtype=np.int64)
    return Checkpoint.from_arrays(arrays, {"toy.init_seed": str(config.init_seed)})


def _params(cp: Checkpoint, config: ToyModelConfig) -> dict[str, np.ndarray]:
    return {name: cp.array(name).astype(np.float64) for name in config.shapes()}


def _run(params, config, tokens):
    """Forward on ``(n, L)`` tokens; returns output and per-layer activations."""
    x = params["embedding.weight"][tokens] + positional_encoding(tokens.shape[1], config.embed_dim)
    acts = [x.reshape(-1, config.embed_dim)]
    for i in range(config.num_layers):
        acts.append(np.tanh(acts[-1] @ params[f"layers.{i}.weight"].T + params[f"layers.{i}.bias"]))
    y = acts[-1] @ params["output.weight"].T + params["output.bias"]
    return y.reshape(*tokens.shape, config.feature_dim), acts


def forward_batch(model: Checkpoint, tokens) -> np.ndarray:
    """Frames for a ``(n, L)`` token array, shape ``(n, L, feature_dim)``."""
    config = ToyModelConfig.from_checkpoint(model)
    tokens = check_tokens(tokens, config.vocab_size)
    return _run(_params(model, config), config, tokens)[0]


def forward(model: Checkpoint, tokens) -> np.ndarray:
    """Frames for one token sequence, shape ``(L, feature_dim)``."""
    tokens = check_tokens(tokens, ndim=1)
    return forward_batch(model, tokens[None, :])[0]


def mse(model: Checkpoint, dataset: Dataset) -> float:
    out = forward_batch(model, dataset.tokens)
    if out.shape != dataset.frames.shape:
        raise ShapeMismatch(f"model output {out.shape} does not match targets {dataset.frames.shape}")
    return float(np.mean((out - dataset.frames) ** 2))


def _gradients(params, config, tokens, targets):
    y, acts = _run(params, config, tokens)
    diff = (y - targets).reshape(-1, config.feature_dim)
    loss = float(np.mean(diff**2))
    grads = {}
    dy = 2.0 * diff / diff.size
    grads["output.weight"] = dy.T @ acts[-1]
    grads["output.bias"] = dy.sum(axis=0)
    dh = dy @ params["output.weight"]
    for i in reversed(range(config.num_layers)):
        dz = dh * (1.0 - acts[i + 1] ** 2)
        grads[f"layers.{i}.weight"] = dz.T @ acts[i]
        grads[f"layers.{i}.bias"] = dz.sum(axis=0)
        dh = dz @ params[f"layers.{i}.weight"]
    g_embed = np.zeros_like(params["embedding.weight"])
    np.add.at(g_embed, tokens.reshape(-1), dh)
    grads["embedding.weight"] = g_embed
    return loss, grads


def train(run: TrainingRun) -> Checkpoint:
    """Mini-batch gradient descent on frame MSE.

    Single-threaded BLAS and a seeded shuffle make the result bit-reproducible.
    The returned checkpoint carries ``train.final_mse`` (full-dataset MSE after
    the last step) and an incremented ``step_count``.
    """
    config = ToyModelConfig.from_checkpoint(run.init)
    data = run.dataset
    tokens = check_tokens(data.tokens, config.vocab_size)
    if data.feature_dim != config.feature_dim:
        raise ShapeMismatch(f"dataset has feature_dim {data.feature_dim}, model outputs {config.feature_dim}")
    if run.epochs < 0 or run.batch_size < 1:
        raise InvalidConfig(f"epochs must be >= 0 and batch_size >= 1 (got {run.epochs}, {run.batch_size})")

    params = _params(run.init, config)
    rng = np.random.default_rng(run.shuffle_seed)
    steps = 0
    # divergence is reported as NonFiniteLoss, so numpy's overflow warnings are noise here
    with threadpool_limits(limits=1), np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(run.epochs):
            order = rng.permutation(len(data))
            for start in range(0, len(order), run.batch_size):
                idx = order[start : start + run.batch_size]
                loss, grads = _gradients(params, config, tokens[idx], data.frames[idx])
                if not np.isfinite(loss):
                    raise NonFiniteLoss(
                        f"loss became {loss} at epoch {epoch}, step {steps}; learning_rate={run.learning_rate} is too high"
                    )
                for name, g in grads.items():
                    params[name] -= run.learning_rate * g
                steps += 1
        final, _ = _run(params, config, tokens)
        final_mse = float(np.mean((final - data.frames) ** 2))
    if not np.isfinite(final_mse):
        raise NonFiniteLoss(f"final loss is {final_mse}; learning_rate={run.learning_rate} is too high")

    arrays = {name: p.astype(np.float32) for name, p in params.items()}
    arrays[STEP_KEY] = run.init.array(STEP_KEY) + steps if STEP_KEY in run.init else np.array([steps], dtype=np.int64)
    metadata = {
        "toy.init_seed": run.init.metadata.get("toy.init_seed", "0"),
        "train.profile_id": data.profile_id,
        "train.parent_fingerprint": run.init.fingerprint,
        "train.final_mse": repr(final_mse),
        "train.steps": str(steps),
    }
    if len(data.profiles) == 1:
        metadata["train.profile"] = data.profiles[0].to_string()
    out = run.init.replace(arrays, metadata)
    logger.debug("trained %s: %d steps, final mse %.6f", data.profile_id, steps, final_mse)
    return out
