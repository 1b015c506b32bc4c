"""scikit-learn wrapper around the toy synthesizer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_frames, check_tokens
from ..exceptions import ShapeMismatch
from ..tensor_store import Checkpoint
from .data import Dataset
from .model import STEP_KEY, ToyModelConfig, TrainingRun, forward_batch, init_model, train


class ToySynthesizer(RegressorMixin, BaseEstimator):
    """Token sequences in, feature frames out.

    ``fit(X, y)`` trains from a fresh seeded init, or continues from
    ``init`` when one is passed (fine-tuning). The trained weights are kept
    as ``checkpoint_`` so they can be merged and serialized directly.

    Parameters
    ----------
    vocab_size, embed_dim, hidden_dim, feature_dim, num_layers : int
        Architecture; ignored when fitting from an ``init`` checkpoint.
    init_seed : int
        Seed for the uniform initialization.
    epochs, learning_rate, batch_size, shuffle_seed
        Mini-batch gradient descent settings.
    profile_id : str
        Recorded in the checkpoint metadata as ``train.profile_id``.

    Attributes
    ----------
    checkpoint_ : Checkpoint
    train_mse_ : float
        Full-dataset MSE after the last step.
    n_steps_ : int
        Gradient steps taken by the last ``fit``.
    """

    def __init__(
        self,
        vocab_size=16,
        embed_dim=16,
        hidden_dim=32,
        feature_dim=8,
        num_layers=2,
        init_seed=0,
        epochs=100,
        learning_rate=0.5,
        batch_size=8,
        shuffle_seed=0,
        profile_id="fit",
    ):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.num_layers = num_layers
        self.init_seed = init_seed
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.shuffle_seed = shuffle_seed
        self.profile_id = profile_id

    def _config(self) -> ToyModelConfig:
        return ToyModelConfig(
            self.vocab_size, self.embed_dim, self.hidden_dim, self.feature_dim, self.num_layers, self.init_seed
        )

    def fit(self, X, y, init: Checkpoint | None = None):
        X = check_tokens(X)
        if init is None:
            init = init_model(self._config())
        config = ToyModelConfig.from_checkpoint(init)
        y = check_frames(y, config.feature_dim)
        if y.shape[:2] != X.shape:
            raise ShapeMismatch(f"targets {y.shape} do not match tokens {X.shape}")
        run = TrainingRun(init, Dataset(X, y, self.profile_id), self.epochs, self.learning_rate, self.batch_size, self.shuffle_seed)
        self.checkpoint_ = train(run)
        self.train_mse_ = float(self.checkpoint_.metadata["train.final_mse"])
        self.n_steps_ = int(self.checkpoint_.array(STEP_KEY)[0] - init.array(STEP_KEY)[0])
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_checkpoint(cls, cp: Checkpoint) -> "ToySynthesizer":
        """Wrap an existing (e.g. merged) checkpoint as a fitted estimator."""
        config = ToyModelConfig.from_checkpoint(cp)
        est = cls(config.vocab_size, config.embed_dim, config.hidden_dim, config.feature_dim, config.num_layers, config.init_seed)
        est.checkpoint_ = cp
        return est

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        return forward_batch(self.checkpoint_, X)

    def score(self, X, y, sample_weight=None) -> float:
        """R^2 over all frame values."""
        pred = self.predict(X).ravel()
        y = check_frames(y).ravel()
        if pred.shape != y.shape:
            raise ShapeMismatch(f"prediction has {pred.size} values, targets {y.size}")
        resid = np.sum((y - pred) ** 2)
        total = np.sum((y - y.mean()) ** 2)
        return float(1.0 - resid / total) if total > 0 else 0.0
