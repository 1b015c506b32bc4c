"""Input validation helpers shared by the estimators and functional API."""

import numpy as np

from .exceptions import EmptySentenceSet, ShapeMismatch, TokenOutOfRange


def check_tokens(tokens, vocab_size=None, ndim=2):
    """Return tokens as int64 with ``ndim`` dims, all in ``[0, vocab_size)``.

    A 1-D sequence is promoted to a single-row batch when ``ndim == 2``.
    """
    tokens = np.asarray(tokens)
    if tokens.size and not np.issubdtype(tokens.dtype, np.integer):
        raise TokenOutOfRange(f"tokens must be integers, got dtype {tokens.dtype}")
    tokens = tokens.astype(np.int64)
    if ndim == 2 and tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != ndim:
        raise ShapeMismatch(f"expected a {ndim}-D token array, got shape {tokens.shape}")
    if vocab_size is not None and tokens.size:
        bad = (tokens < 0) | (tokens >= vocab_size)
        if bad.any():
            raise TokenOutOfRange(f"token {tokens[bad][0]} outside vocabulary [0, {vocab_size})")
    return tokens


def check_sentences(sentences, vocab_size=None):
    tokens = np.asarray(sentences)
    if tokens.size == 0:
        raise EmptySentenceSet("need at least one non-empty sentence")
    return check_tokens(tokens, vocab_size)


def check_frames(frames, feature_dim=None):
    """Return frames as float64 ``(n, L, F)``; a single ``(L, F)`` matrix is promoted."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 2:
        frames = frames[None]
    if frames.ndim != 3:
        raise ShapeMismatch(f"expected (n, L, F) frames, got shape {frames.shape}")
    if frames.shape[0] == 0 or frames.shape[1] == 0:
        raise EmptySentenceSet(f"frames contain no sentences or no frames: shape {frames.shape}")
    if feature_dim is not None and frames.shape[2] != feature_dim:
        raise ShapeMismatch(f"frames have {frames.shape[2]} channels, expected {feature_dim}")
    return frames
