"""Attribute interpolation by weight-space merging of checkpoints."""

__version__ = "0.1.0"

from .merge import (
    CompatReport,
    IntTensorPolicy,
    KeyMismatch,
    MergePolicy,
    SweepSpec,
    check_compatibility,
    merge_pair,
    merge_soup,
    sweep,
)
from .tensor_store import (
    Checkpoint,
    DType,
    TensorMeta,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
    tensor_values,
    write_checkpoint,
)

__all__ = [
    "Checkpoint",
    "CompatReport",
    "DType",
    "IntTensorPolicy",
    "KeyMismatch",
    "MergePolicy",
    "SweepSpec",
    "TensorMeta",
    "check_compatibility",
    "load_checkpoint",
    "merge_pair",
    "merge_soup",
    "parse_checkpoint",
    "save_checkpoint",
    "sweep",
    "tensor_values",
    "write_checkpoint",
]
