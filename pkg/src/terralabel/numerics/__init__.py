"""Minimal dense-tensor arithmetic with reverse-mode automatic differentiation.

Every learnable operation in the pipeline (U-Net convolutions, GNN layers,
losses) routes through :class:`~terralabel.numerics.tensor.Tensor`. Storage is
float32 by default; tests switch to float64 via :func:`use_dtype` for
finite-difference gradient checks.
"""

from .tensor import (
    ShapeError,
    Tensor,
    batch_norm,
    clip,
    concat,
    conv2d,
    default_dtype,
    gather_rows,
    max_pool2x2,
    no_grad,
    segment_sum,
    tensor,
    upsample_nearest2x,
    use_dtype,
)
from .optim import Adam, TrainingDivergence
from .checkpoint import load_checkpoint, save_checkpoint
from . import init

__all__ = [
    "Adam",
    "ShapeError",
    "Tensor",
    "TrainingDivergence",
    "batch_norm",
    "clip",
    "concat",
    "conv2d",
    "default_dtype",
    "gather_rows",
    "init",
    "load_checkpoint",
    "max_pool2x2",
    "no_grad",
    "save_checkpoint",
    "segment_sum",
    "tensor",
    "upsample_nearest2x",
    "use_dtype",
]
