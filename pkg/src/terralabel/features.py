"""U-Net feature extractor trained against fuzzy membership targets.

The network is a symmetric encoder/decoder with batch-normalized double-conv
blocks, doubling kernel counts per encoder level. Its penultimate layer is a
3x3 convolution producing final_feature_maps (64) activation maps at input
resolution; a 1x1 sigmoid head on top predicts the per-class memberships.
Training minimises the combo loss (equal-weight dice + binary cross-entropy)
with 90-degree rotation / Gaussian-noise augmentation and early stopping on
the held-out split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .numerics import Tensor, tensor

BCE_EPS = 1e-7


class FeatureError(ValueError):
    pass


@dataclass
class UNetConfig:
    depth: int = 5
    base_kernels: int = 64
    in_channels: int = 12
    out_classes: int = 8
    final_feature_maps: int = 64

    def __post_init__(self):
        if self.depth < 2:
            raise FeatureError(f"depth must be >= 2, got {self.depth}")
        if self.base_kernels < 4:
            raise FeatureError(f"base_kernels must be >= 4, got {self.base_kernels}")

    @classmethod
    def desk_scale(cls, in_channels: int = 12, out_classes: int = 8) -> "UNetConfig":
        """Small configuration used by the test suite: depth 3, base 8."""
        return cls(depth=3, base_kernels=8, in_channels=in_channels,
                   out_classes=out_classes)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Conv2d:
    def __init__(self, name: str, cin: int, cout: int, ksize: int,
                 rng: np.random.Generator):
        fan_in = cin * ksize * ksize
        self.weight = nm.init.he_uniform((cout, cin, ksize, ksize), fan_in, rng)
        self.bias = nm.init.zeros((cout,))
        self.padding = ksize // 2
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        return nm.conv2d(x, self.weight, self.bias, padding=self.padding)

    def params(self) -> dict[str, Tensor]:
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def state(self) -> dict[str, np.ndarray]:
        return {}


class BatchNorm2d:
    def __init__(self, name: str, channels: int):
        self.gamma = nm.init.ones((channels,))
        self.beta = nm.init.zeros((channels,))
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.name = name

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return nm.batch_norm(x, self.gamma, self.beta,
                             self.running_mean, self.running_var, training)

    def params(self) -> dict[str, Tensor]:
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def state(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}


class DoubleConv:
    """conv3x3 -> BN -> relu, twice."""

    def __init__(self, name: str, cin: int, cout: int, rng):
        self.conv1 = Conv2d(f"{name}.conv1", cin, cout, 3, rng)
        self.bn1 = BatchNorm2d(f"{name}.bn1", cout)
        self.conv2 = Conv2d(f"{name}.conv2", cout, cout, 3, rng)
        self.bn2 = BatchNorm2d(f"{name}.bn2", cout)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        x = self.bn1(self.conv1(x), training).relu()
        return self.bn2(self.conv2(x), training).relu()

    def modules(self):
        return [self.conv1, self.bn1, self.conv2, self.bn2]


class UNet:
    """Encoder/decoder over [B, in_channels, H, W]; H, W divisible by 2^(depth-1)."""

    def __init__(self, cfg: UNetConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        chans = [cfg.base_kernels * 2 ** level for level in range(cfg.depth)]
        self.channels = chans

        self.encoders = [DoubleConv(f"enc{i}", cfg.in_channels if i == 0 else chans[i - 1],
                                    chans[i], rng) for i in range(cfg.depth - 1)]
        self.bottleneck = DoubleConv("bottleneck", chans[-2], chans[-1], rng)
        # decoder level i works at encoder level i's resolution
        self.upconvs = [Conv2d(f"up{i}", chans[i + 1], chans[i], 3, rng)
                        for i in range(cfg.depth - 1)]
        self.decoders = [DoubleConv(f"dec{i}", 2 * chans[i], chans[i], rng)
                         for i in range(cfg.depth - 1)]
        self.final_conv = Conv2d("final", chans[0], cfg.final_feature_maps, 3, rng)
        self.head = Conv2d("head", cfg.final_feature_maps, cfg.out_classes, 1, rng)

    def _modules(self):
        mods = []
        for enc in self.encoders:
            mods.extend(enc.modules())
        mods.extend(self.bottleneck.modules())
        mods.extend(self.upconvs)
        for dec in self.decoders:
            mods.extend(dec.modules())
        mods.extend([self.final_conv, self.head])
        return mods

    def params(self) -> dict[str, Tensor]:
        out = {}
        for mod in self._modules():
            out.update(mod.params())
        return out

    def forward(self, x: Tensor, training: bool = False) -> tuple[Tensor, Tensor]:
        """Returns (sigmoid predictions [B,C,H,W], activations [B,64,H,W])."""
        h, w = x.shape[2], x.shape[3]
        factor = 2 ** (self.cfg.depth - 1)
        if h % factor or w % factor:
            raise FeatureError(
                f"input {h}x{w} not divisible by 2^{self.cfg.depth - 1}")
        skips = []
        for enc in self.encoders:
            x = enc(x, training)
            skips.append(x)
            x = nm.max_pool2x2(x)
        x = self.bottleneck(x, training)
        for i in reversed(range(self.cfg.depth - 1)):
            x = self.upconvs[i](nm.upsample_nearest2x(x))
            x = nm.concat([skips[i], x], axis=1)
            x = self.decoders[i](x, training)
        activations = self.final_conv(x).relu()
        pred = self.head(activations).sigmoid()
        return pred, activations

    # -- checkpointing -------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: p.data for name, p in self.params().items()}
        for mod in self._modules():
            arrays.update(mod.state())
        cfg = self.cfg
        arrays["meta.config"] = np.asarray(
            [cfg.depth, cfg.base_kernels, cfg.in_channels, cfg.out_classes,
             cfg.final_feature_maps], dtype=np.float32)
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.params()
        for name, p in params.items():
            if name not in arrays:
                raise FeatureError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != p.data.shape:
                raise FeatureError(
                    f"checkpoint {name}: shape {arrays[name].shape} != {p.data.shape}")
            p.data = arrays[name].astype(p.data.dtype)
        for mod in self._modules():
            for name, arr in mod.state().items():
                arr[...] = arrays[name]

    def save(self, path) -> None:
        nm.save_checkpoint(path, self.state_arrays())

    @classmethod
    def load(cls, path) -> "UNet":
        arrays = nm.load_checkpoint(path)
        if "meta.config" not in arrays:
            raise FeatureError("checkpoint has no meta.config record")
        depth, base, cin, classes, fmaps = (int(v) for v in arrays["meta.config"])
        net = cls(UNetConfig(depth, base, cin, classes, fmaps))
        net.load_state_arrays(arrays)
        return net


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def dice_per_class(truth: np.ndarray, pred: Tensor) -> Tensor:
    """d = 2·Σ(X·Y) / (ΣX + ΣY) for one class; 1.0 when both maps are empty."""
    if truth.shape != pred.shape:
        raise nm.ShapeError(f"dice: truth {truth.shape} vs pred {pred.shape}")
    denom_now = float(truth.sum() + pred.data.sum())
    if denom_now == 0.0:
        return tensor(1.0)
    inter = (pred * truth).sum()
    return (2.0 * inter) / (pred.sum() + float(truth.sum()))


def dice_loss(truth: np.ndarray, pred: Tensor) -> Tensor:
    """1 − mean dice over classes; class axis is 0 ([C,...]) or 1 ([B,C,...])."""
    class_axis = 0 if truth.ndim == 3 else 1
    n_classes = truth.shape[class_axis]
    terms = []
    for c in range(n_classes):
        if class_axis == 0:
            terms.append(dice_per_class(truth[c], pred[c]))
        else:
            terms.append(dice_per_class(truth[:, c], pred[:, c]))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return 1.0 - total / float(n_classes)


def bce_loss(truth: np.ndarray, pred: Tensor) -> Tensor:
    """Binary cross-entropy, mean over all entries, clamped at 1e-7."""
    p = pred.clip(BCE_EPS, 1.0 - BCE_EPS)
    return -(truth * p.log() + (1.0 - truth) * (1.0 - p).log()).mean()


def combo_loss(truth: np.ndarray, pred: Tensor) -> Tensor:
    """0.5·(1 − mean dice) + 0.5·BCE over sigmoid predictions."""
    if np.min(pred.data) < 0.0 or np.max(pred.data) > 1.0:
        raise FeatureError("combo_loss expects sigmoid outputs in [0, 1]")
    return 0.5 * dice_loss(truth, pred) + 0.5 * bce_loss(truth, pred)


# ---------------------------------------------------------------------------
# training / extraction
# ---------------------------------------------------------------------------


def augment(chips: np.ndarray, targets: np.ndarray,
            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shared random 90-degree rotation + input Gaussian noise (sigma = 1% of band std)."""
    k = int(rng.integers(4))
    chips = np.rot90(chips, k, axes=(2, 3)).copy()
    targets = np.rot90(targets, k, axes=(2, 3)).copy()
    sigma = 0.01 * chips.std(axis=(0, 2, 3), keepdims=True)
    chips = chips + rng.normal(size=chips.shape).astype(chips.dtype) * sigma
    return chips, targets


@dataclass
class TrainResult:
    net: UNet
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    diverged: bool = False


def _batch_loss(net: UNet, chips: np.ndarray, targets: np.ndarray,
                training: bool) -> Tensor:
    pred, _ = net.forward(tensor(chips), training=training)
    return combo_loss(targets, pred)


def train_unet(store, targets, cfg: UNetConfig, epochs: int = 200,
               patience: int = 15, batch_size: int = 4, lr: float = 1e-3,
               seed: int = 0, log=None) -> TrainResult:
    """Train against per-chip membership targets from the chip store.

    ``targets`` maps chip id -> [C, H, W] float32 membership maps (a dict or
    a callable). Early stopping keeps the weights with the best held-out
    (test-split) loss and stops after ``patience`` epochs without
    improvement. A non-finite loss aborts training, restoring the best
    weights seen so far.
    """
    lookup = targets if callable(targets) else targets.__getitem__
    train_ids = store.chip_ids(split="train")
    test_ids = store.chip_ids(split="test")
    if not train_ids:
        raise FeatureError("store has no training chips")

    net = UNet(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    opt = nm.Adam(net.params(), lr=lr)
    best = {"loss": np.inf, "arrays": {k: v.copy() for k, v in net.state_arrays().items()},
            "epoch": 0}
    history = []
    diverged = False

    def load_batch(ids, train_mode):
        chips = np.stack([store.load_chip(cid, normalized=True).data for cid in ids])
        targ = np.stack([np.asarray(lookup(cid), dtype=np.float32) for cid in ids])
        if train_mode:
            chips, targ = augment(chips, targ, rng)
        return chips, targ

    def held_out_loss():
        ids = test_ids or train_ids
        with nm.no_grad():
            losses = [float(_batch_loss(net, *load_batch(ids[i:i + batch_size], False),
                                        training=False).item())
                      for i in range(0, len(ids), batch_size)]
        return float(np.mean(losses))

    try:
        for epoch in range(1, epochs + 1):
            order = rng.permutation(len(train_ids))
            epoch_losses = []
            for start in range(0, len(order), batch_size):
                ids = [train_ids[i] for i in order[start:start + batch_size]]
                loss = _batch_loss(net, *load_batch(ids, True), training=True)
                value = float(loss.item())
                if not np.isfinite(value):
                    raise nm.TrainingDivergence(f"non-finite loss at epoch {epoch}")
                loss.backward()
                opt.step()
                opt.zero_grad()
                epoch_losses.append(value)
            val = held_out_loss()
            history.append({"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
                            "val_loss": val})
            if log:
                log(history[-1])
            if val < best["loss"]:
                best = {"loss": val, "arrays": {k: v.copy()
                                                for k, v in net.state_arrays().items()},
                        "epoch": epoch}
            elif epoch - best["epoch"] >= patience:
                break
    except nm.TrainingDivergence:
        diverged = True

    if best["epoch"] > 0 or diverged:
        net.load_state_arrays(best["arrays"])
    return TrainResult(net, history, best["epoch"], diverged)


def extract_activations(net: UNet, chip_data: np.ndarray) -> np.ndarray:
    """Eval-mode activation maps [64, H, W] for one normalized chip [bands, H, W]."""
    if chip_data.ndim != 3 or chip_data.shape[0] != net.cfg.in_channels:
        raise FeatureError(
            f"chip shape {chip_data.shape} incompatible with in_channels="
            f"{net.cfg.in_channels}")
    with nm.no_grad():
        _, acts = net.forward(tensor(chip_data[None]), training=False)
    return np.asarray(acts.data[0], dtype=np.float32)
