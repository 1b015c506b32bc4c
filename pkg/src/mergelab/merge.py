"""Weight-space interpolation between checkpoints that share an architecture.

``merge_pair`` computes ``a + alpha * (b - a)`` element-wise, ``merge_soup``
takes the uniform mean of k checkpoints, and ``sweep`` produces the family of
pairwise merges over a grid of coefficients.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .exceptions import (
    AlphaOutOfRange,
    EmptyModelList,
    IncompatibleCheckpoints,
    IntTensorMismatch,
    InvalidSpec,
)
from .tensor_store import Checkpoint, DType

__all__ = [
    "KeyMismatch",
    "IntTensorPolicy",
    "MergePolicy",
    "CompatReport",
    "SweepSpec",
    "check_compatibility",
    "merge_pair",
    "merge_soup",
    "sweep",
    "lerp",
]

logger = logging.getLogger(__name__)


class KeyMismatch(str, enum.Enum):
    STRICT = "strict"
    INTERSECT = "intersect"


class IntTensorPolicy(str, enum.Enum):
    REQUIRE_EQUAL = "require-equal"
    TAKE_FIRST = "take-first"


@dataclass(frozen=True)
class MergePolicy:
    """Merging coefficient plus the rules for mismatched keys and integer tensors.

    Arithmetic is always done in float64 and rounded once to the output dtype.
    """

    alpha: float = 0.5
    key_mismatch: KeyMismatch = KeyMismatch.STRICT
    int_tensor: IntTensorPolicy = IntTensorPolicy.REQUIRE_EQUAL
    extrapolate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "key_mismatch", KeyMismatch(self.key_mismatch))
        object.__setattr__(self, "int_tensor", IntTensorPolicy(self.int_tensor))
        alpha = float(self.alpha)
        object.__setattr__(self, "alpha", alpha)
        if not math.isfinite(alpha):
            raise AlphaOutOfRange(f"alpha must be finite, got {alpha}")
        if not self.extrapolate and not 0.0 <= alpha <= 1.0:
            raise AlphaOutOfRange(f"alpha={alpha} is outside [0, 1]; pass extrapolate=True to allow it")

    def with_alpha(self, alpha: float) -> "MergePolicy":
        return MergePolicy(alpha, self.key_mismatch, self.int_tensor, self.extrapolate)


@dataclass
class CompatReport:
    missing_in_a: list[str] = field(default_factory=list)
    missing_in_b: list[str] = field(default_factory=list)
    shape_conflicts: list[tuple[str, tuple, tuple]] = field(default_factory=list)
    dtype_conflicts: list[tuple[str, str, str]] = field(default_factory=list)

    @property
    def compatible(self) -> bool:
        return not (self.missing_in_a or self.missing_in_b or self.shape_conflicts or self.dtype_conflicts)

    def describe(self) -> str:
        if self.compatible:
            return "compatible"
        lines = []
        for name in self.missing_in_a:
            lines.append(f"tensor {name!r} missing in first checkpoint")
        for name in self.missing_in_b:
            lines.append(f"tensor {name!r} missing in second checkpoint")
        for name, sa, sb in self.shape_conflicts:
            lines.append(f"tensor {name!r} shape conflict: {list(sa)} vs {list(sb)}")
        for name, da, db in self.dtype_conflicts:
            lines.append(f"tensor {name!r} dtype conflict: {da} vs {db}")
        return "; ".join(lines)


@dataclass(frozen=True)
class SweepSpec:
    """Strictly increasing coefficient grid from 0 to 1 inclusive."""

    alphas: tuple[float, ...]

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        object.__setattr__(self, "alphas", alphas)
        if len(alphas) < 2 or alphas[0] != 0.0 or alphas[-1] != 1.0:
            raise InvalidSpec(f"sweep must start at 0 and end at 1, got {list(alphas)}")
        if any(not lo < hi for lo, hi in zip(alphas, alphas[1:])):
            raise InvalidSpec(f"sweep alphas must be strictly increasing, got {list(alphas)}")

    @classmethod
    def by_step(cls, step: float) -> "SweepSpec":
        step = float(step)
        if not (0.0 < step <= 1.0):
            raise InvalidSpec(f"step must be in (0, 1], got {step}")
        n = round(1.0 / step)
        if abs(n * step - 1.0) > 1e-9:
            raise InvalidSpec(f"step {step} does not divide [0, 1] evenly")
        # i / n is correctly rounded, so 0.1 steps give exactly 0.0, 0.1, ..., 1.0
        return cls(tuple(i / n for i in range(n + 1)))

    @classmethod
    def explicit(cls, alphas: Sequence[float]) -> "SweepSpec":
        return cls(tuple(alphas))

    def __len__(self) -> int:
        return len(self.alphas)

    def __iter__(self):
        return iter(self.alphas)


def check_compatibility(a: Checkpoint, b: Checkpoint) -> CompatReport:
    report = CompatReport()
    names_a, names_b = set(a.names), set(b.names)
    report.missing_in_a = sorted(names_b - names_a)
    report.missing_in_b = sorted(names_a - names_b)
    for name in sorted(names_a & names_b):
        ma, mb = a.meta(name), b.meta(name)
        if ma.shape != mb.shape:
            report.shape_conflicts.append((name, ma.shape, mb.shape))
        if ma.dtype != mb.dtype:
            report.dtype_conflicts.append((name, ma.dtype.value, mb.dtype.value))
    return report


# Error-free transformations (Knuth two-sum, Dekker split/two-product). They
# keep a + alpha*(b - a) within about half an ulp of the exact value even
# under heavy cancellation, where plain float64 drifts by several ulps.
_SPLITTER = 134217729.0  # 2**27 + 1


def _two_sum(x, y):
    s = x + y
    bv = s - x
    return s, (x - (s - bv)) + (y - bv)


def _split(x):
    c = _SPLITTER * x
    hi = c - (c - x)
    return hi, x - hi


def _two_prod(x, y):
    p = x * y
    xh, xl = _split(x)
    yh, yl = _split(y)
    return p, ((xh * yh - p) + xh * yl + xl * yh) + xl * yl


def lerp(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """Accurate float64 ``a + alpha * (b - a)``.

    Non-finite inputs (and the rare overflow in the splitting step) fall back
    to plain ``(1 - alpha) * a + alpha * b`` so NaN/Inf propagate as usual.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    with np.errstate(all="ignore"):
        plain = (1.0 - alpha) * a + alpha * b  # keeps a lone inf as inf
        d, d_err = _two_sum(b, -a)
        p, p_err = _two_prod(d, alpha)
        s, s_err = _two_sum(a, p)
        out = np.array(s + (s_err + (p_err + alpha * d_err)), dtype=np.float64)  # 0-d stays an array
        plain = np.asarray(plain)
    bad = ~np.isfinite(out)
    if bad.any():
        out[bad] = plain[bad]
    return out


def _same_bits(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    view = np.uint32 if x.dtype.itemsize == 4 else np.uint64
    return x.view(view) == y.view(view)


def _flatten(arrays: list[np.ndarray]) -> np.ndarray:
    # one float64 vector per model, so the arithmetic runs once per checkpoint rather than per tensor
    if not arrays:
        return np.empty(0)
    return np.concatenate([x.ravel() for x in arrays], dtype=np.float64)


def _unflatten(flat: np.ndarray, like: list[np.ndarray]) -> list[np.ndarray]:
    out, offset = [], 0
    for x in like:
        out.append(flat[offset : offset + x.size].astype(x.dtype).reshape(x.shape))
        offset += x.size
    return out


def _count_nonfinite(flats: list[np.ndarray]) -> int:
    finite = np.ones(flats[0].shape, dtype=bool)
    for flat in flats:
        finite &= np.isfinite(flat)
    return int(finite.size - np.count_nonzero(finite))


def _merge_floats(xs_a: list[np.ndarray], xs_b: list[np.ndarray], alpha: float) -> tuple[list[np.ndarray], int]:
    """Interpolated tensors and the number of non-finite input elements."""
    flat_a, flat_b = _flatten(xs_a), _flatten(xs_b)
    nonfinite = _count_nonfinite([flat_a, flat_b])
    if alpha == 0.0:
        return [x.copy() for x in xs_a], nonfinite
    if alpha == 1.0:
        return [x.copy() for x in xs_b], nonfinite
    outs = _unflatten(lerp(flat_a, flat_b, alpha), xs_a)
    for out, xa, xb in zip(outs, xs_a, xs_b):
        # where the bases agree bit-for-bit the exact answer is that value (keeps -0.0 and NaN payloads)
        same = _same_bits(xa, xb)
        out[same] = xa[same]
    return outs, nonfinite


def _merge_int(name: str, buffers: list[np.ndarray], policy: IntTensorPolicy) -> np.ndarray:
    first = buffers[0]
    if policy is IntTensorPolicy.REQUIRE_EQUAL:
        for i, other in enumerate(buffers[1:], start=1):
            if not np.array_equal(first, other):
                raise IntTensorMismatch(
                    f"integer tensor {name!r} differs between model 0 and model {i} "
                    f"(use int_tensor='take-first' to keep the first model's values)"
                )
    return first.copy()


def merge_pair(a: Checkpoint, b: Checkpoint, policy: MergePolicy | None = None) -> Checkpoint:
    """Interpolate two checkpoints: ``a`` at alpha=0, ``b`` at alpha=1."""
    policy = policy or MergePolicy()
    alpha = policy.alpha
    report = check_compatibility(a, b)
    if policy.key_mismatch is KeyMismatch.STRICT and not report.compatible:
        raise IncompatibleCheckpoints(f"cannot merge: {report.describe()}", report)

    conflicted = {n for n, _, _ in report.shape_conflicts} | {n for n, _, _ in report.dtype_conflicts}
    shared = [n for n in a.names if n in b and n not in conflicted]
    dropped = len(set(a.names) | set(b.names)) - len(shared)

    out = {}
    floats = [n for n in shared if a.meta(n).dtype.is_float]
    for name in shared:
        if name not in floats:
            out[name] = _merge_int(name, [a.array(name), b.array(name)], policy.int_tensor)
    merged, nonfinite = _merge_floats([a.array(n) for n in floats], [b.array(n) for n in floats], alpha)
    out.update(zip(floats, merged))

    if dropped:
        logger.warning("dropped %d tensors not shared with equal shape/dtype", dropped)
    if nonfinite:
        logger.warning("%d non-finite input elements propagated into the merge", nonfinite)
    metadata = {
        "merge.alpha": repr(alpha),
        "merge.base_a": a.fingerprint,
        "merge.base_b": b.fingerprint,
        "merge.dropped_keys": str(dropped),
        "merge.nonfinite_warnings": str(nonfinite),
    }
    if len(out) == len(a):
        return a._with_arrays(out, metadata)
    return Checkpoint.from_arrays(out, metadata)


def merge_soup(models: Sequence[Checkpoint], int_tensor=IntTensorPolicy.REQUIRE_EQUAL) -> Checkpoint:
    """Uniform average of k structurally identical checkpoints.

    Sums are accumulated in list order in float64 with Neumaier compensation
    and rounded once to the output dtype.
    """
    models = list(models)
    if not models:
        raise EmptyModelList("merge_soup needs at least one checkpoint")
    int_tensor = IntTensorPolicy(int_tensor)
    first = models[0]
    for i, other in enumerate(models[1:], start=1):
        report = check_compatibility(first, other)
        if not report.compatible:
            raise IncompatibleCheckpoints(f"model 0 vs model {i}: {report.describe()}", report)

    k = len(models)
    out = {}
    floats = [n for n in first.names if first.meta(n).dtype.is_float]
    for name in first.names:
        if name not in floats:
            out[name] = _merge_int(name, [m.array(name) for m in models], int_tensor)
    like = [first.array(n) for n in floats]
    flats = [_flatten([m.array(n) for n in floats]) for m in models]
    nonfinite = _count_nonfinite(flats)
    if k == 1:
        out.update((n, x.copy()) for n, x in zip(floats, like))
    else:
        with np.errstate(all="ignore"):
            total = flats[0].copy()
            comp = np.zeros_like(total)
            for x in flats[1:]:
                t = total + x
                comp += np.where(np.abs(total) >= np.abs(x), (total - t) + x, (x - t) + total)
                total = t
            mean = (total + comp) / k
            bad = ~np.isfinite(mean)
            if bad.any():
                mean[bad] = (total / k)[bad]
        out.update(zip(floats, _unflatten(mean, like)))

    if nonfinite:
        logger.warning("%d non-finite input elements propagated into the soup", nonfinite)
    metadata = {
        "merge.soup_k": str(k),
        "merge.bases": ",".join(m.fingerprint for m in models),
        "merge.dropped_keys": "0",
        "merge.nonfinite_warnings": str(nonfinite),
    }
    return first._with_arrays(out, metadata)


def sweep(
    a: Checkpoint,
    b: Checkpoint,
    spec: SweepSpec,
    policy: MergePolicy | None = None,
    threads: int = 1,
) -> Iterator[tuple[float, Checkpoint]]:
    """Yield ``(alpha, merged)`` for every alpha in ``spec``, in order.

    With ``threads == 1`` checkpoints are produced lazily one at a time;
    otherwise merges run on a thread pool and are yielded in spec order.
    """
    policy = policy or MergePolicy()
    # fail fast on incompatibility before producing anything
    if policy.key_mismatch is KeyMismatch.STRICT:
        report = check_compatibility(a, b)
        if not report.compatible:
            raise IncompatibleCheckpoints(f"cannot merge: {report.describe()}", report)
    policies = [policy.with_alpha(alpha) for alpha in spec]
    if threads <= 1:
        for p in policies:
            yield p.alpha, merge_pair(a, b, p)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for p, merged in zip(policies, pool.map(lambda p: merge_pair(a, b, p), policies)):
            yield p.alpha, merged
