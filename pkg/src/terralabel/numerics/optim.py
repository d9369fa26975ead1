"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class TrainingDivergence(RuntimeError):
    """Raised when a gradient or loss goes non-finite during training."""


class Adam:
    """Standard Adam (Kingma & Ba) with bias correction.

    Parameters are a {name: Tensor} dict; moments are kept per name so the
    optimizer state survives checkpoint save/load of the same model.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        """Apply one update from the gradients stored on the parameters.

        Parameters whose ``.grad`` is None (unreached by the last backward)
        are skipped; their moments still see the step counter advance, which
        matches the usual per-parameter-group bookkeeping closely enough for
        this pipeline's single-group training loops.
        """
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingDivergence(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps))
            p.data -= update.astype(p.data.dtype, copy=False)
