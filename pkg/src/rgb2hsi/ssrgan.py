"""UNet generator and conditional PatchGAN discriminators.

Generator: ``depth`` stride-2 conv encoders (LeakyReLU 0.2) mirrored by
stride-2 transposed-conv decoders (ReLU) with encoder skips, then a 1x1
head to 31 bands and a sigmoid. Discriminator: conv stack over the
channel-concatenated (rgb, spectra) pair emitting a map of logits.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from rgb2hsi.rng import stream

TRAINING = "training"
INFERENCE = "inference"

PRESETS: dict[str, tuple[tuple[int, int, int], ...]] = {
    "rf70": ((4, 2, 64), (4, 2, 128), (4, 2, 256), (4, 1, 512), (4, 1, 1)),
    "rf34": ((4, 2, 64), (4, 2, 128), (4, 1, 256), (4, 1, 1)),
    "rf16": ((4, 2, 64), (4, 1, 128), (4, 1, 1)),
    "rf1": ((1, 1, 64), (1, 1, 128), (1, 1, 1)),
}


def receptive_field(plan: Sequence[Sequence[int]]) -> int:
    """Input footprint of one output unit; ``plan`` holds (kernel, stride[, width])."""
    if not plan:
        raise ValueError("receptive field of an empty plan is undefined")
    r = 1
    for layer in reversed(list(plan)):
        k, s = int(layer[0]), int(layer[1])
        if k < 1 or s < 1:
            raise ValueError(f"kernel and stride must be >= 1, got kernel={k} stride={s}")
        r = r * s + (k - s)
    return r


def _scale(width: int, multiplier: float) -> int:
    return max(1, int(round(width * multiplier)))


@torch.no_grad()
def he_uniform_(module: nn.Module, rng: np.random.Generator) -> None:
    """HeUniform weights, zero biases; draws follow ``named_parameters`` order."""
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            p.zero_()
        elif p.dim() == 1:  # normalization scale
            p.fill_(1.0)
        else:
            fan_in, _ = nn.init._calculate_fan_in_and_fan_out(p)
            limit = math.sqrt(6.0 / fan_in)
            draw = rng.uniform(-limit, limit, size=tuple(p.shape))
            p.copy_(torch.from_numpy(draw).to(p.dtype))


# ------------------------------------------------------------------- generator


@dataclass(frozen=True)
class GeneratorConfig:
    depth: int = 6
    widths: tuple[int, ...] = (64, 128, 256, 512, 512, 512)
    out_bands: int = 31
    in_channels: int = 3
    dropout: float = 0.5
    width_multiplier: float = 1.0
    batch_norm: bool = False
    inference_dropout: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.depth < 1 or self.depth != len(self.widths):
            raise ValueError(f"depth {self.depth} must equal the number of widths {len(self.widths)}")
        if self.out_bands < 1 or self.in_channels < 1:
            raise ValueError("in_channels and out_bands must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.width_multiplier <= 0:
            raise ValueError("width_multiplier must be > 0")

    @property
    def channel_plan(self) -> tuple[int, ...]:
        return tuple(_scale(w, self.width_multiplier) for w in self.widths)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(**d)


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        w = config.channel_plan
        n = config.depth

        self.encoders = nn.ModuleList()
        self.enc_norms = nn.ModuleList()
        cin = config.in_channels
        for i in range(n):
            self.encoders.append(nn.Conv2d(cin, w[i], 4, stride=2, padding=1))
            # pix2pix lineage leaves the first and innermost levels unnormalized
            use_norm = config.batch_norm and 0 < i < n - 1
            self.enc_norms.append(nn.BatchNorm2d(w[i]) if use_norm else nn.Identity())
            cin = w[i]

        self.decoders = nn.ModuleList()
        for k in range(1, n + 1):
            cin = w[n - 1] if k == 1 else 2 * w[n - k]
            cout = w[max(n - k - 1, 0)]
            self.decoders.append(nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1))
        self.head = nn.Conv2d(w[0], config.out_bands, 1)

        self.dropout_rng = stream(config.seed, "generator/dropout")
        he_uniform_(self, stream(config.seed, "generator/init"))

    @property
    def mode(self) -> str:
        return TRAINING if self.training else INFERENCE

    def set_mode(self, mode: str) -> "Generator":
        if mode not in (TRAINING, INFERENCE):
            raise ValueError(f"mode must be {TRAINING!r} or {INFERENCE!r}, got {mode!r}")
        return self.train(mode == TRAINING)

    def _dropout(self, h: torch.Tensor) -> torch.Tensor:
        p = self.config.dropout
        if p == 0.0 or not (self.training or self.config.inference_dropout):
            return h
        keep = self.dropout_rng.random(tuple(h.shape), dtype=np.float32) >= p
        return h * torch.from_numpy(keep).to(h.dtype) / (1.0 - p)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n = self.config.depth
        m = 2 ** n
        if x.shape[-1] % m or x.shape[-2] % m:
            raise ValueError(
                f"spatial size {tuple(x.shape[-2:])} is not divisible by 2**depth={m}; "
                "pad the input with dataset.pad_to_multiple first"
            )
        skips = []
        h = x
        for conv, norm in zip(self.encoders, self.enc_norms):
            h = F.leaky_relu(norm(conv(h)), 0.2)
            skips.append(h)
        for k, deconv in enumerate(self.decoders, start=1):
            if k > 1:
                h = torch.cat([h, skips[n - k]], dim=1)
            h = F.relu(deconv(h))
            if k <= n - 2:
                h = self._dropout(h)
        return open_unit_sigmoid(self.head(h))


def open_unit_sigmoid(x: torch.Tensor) -> torch.Tensor:
    """Sigmoid held strictly inside (0, 1) in the working dtype.

    Plain float32 sigmoid rounds to exactly 1.0 once the logit passes ~17,
    so the result is clamped to the nearest representable interior values.
    """
    fi = torch.finfo(x.dtype)
    return torch.sigmoid(x).clamp(min=fi.tiny, max=1.0 - fi.eps / 2)


def build_generator(config: GeneratorConfig) -> Generator:
    return Generator(config)


def _as_batch(x, dtype: torch.dtype) -> tuple[torch.Tensor, bool]:
    t = torch.as_tensor(x)
    if not t.is_floating_point():
        t = t.to(dtype)
    unbatched = t.dim() == 3
    return (t.unsqueeze(0) if unbatched else t), unbatched


def _param_dtype(module: nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype


def generator_forward(gen: Generator, rgb, mode: str = INFERENCE) -> torch.Tensor:
    """Evaluate ``gen`` on a (3, H, W) or (N, 3, H, W) input in the given mode."""
    gen.set_mode(mode)
    x, unbatched = _as_batch(rgb, _param_dtype(gen))
    x = x.to(_param_dtype(gen))
    if mode == INFERENCE:
        with torch.no_grad():
            y = gen(x)
    else:
        y = gen(x)
    return y[0] if unbatched else y


# --------------------------------------------------------------- discriminator


@dataclass(frozen=True)
class DiscriminatorConfig:
    preset: str = "rf70"
    layers: tuple[tuple[int, int, int], ...] | None = None
    in_channels: int = 34
    width_multiplier: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.layers is not None:
            object.__setattr__(self, "layers", tuple(tuple(int(v) for v in l) for l in self.layers))
        rf = receptive_field(self.plan)
        if rf != self.nominal_receptive_field:
            raise ValueError(f"layer plan has receptive field {rf}, preset {self.preset} requires {self.nominal_receptive_field}")
        if self.plan[-1][2] != 1:
            raise ValueError("the last discriminator layer must emit one channel")

    @property
    def plan(self) -> tuple[tuple[int, int, int], ...]:
        return self.layers if self.layers is not None else PRESETS[self.preset]

    @property
    def nominal_receptive_field(self) -> int:
        return int(self.preset[2:])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = None if self.layers is None else [list(l) for l in self.layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        d = dict(d)
        if d.get("layers") is not None:
            d["layers"] = tuple(tuple(l) for l in d["layers"])
        return cls(**d)


class Discriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        layers = []
        cin = config.in_channels
        plan = config.plan
        for i, (k, s, w) in enumerate(plan):
            cout = 1 if i == len(plan) - 1 else _scale(w, config.width_multiplier)
            layers.append(nn.Conv2d(cin, cout, k, stride=s, padding=(k - 1) // 2))
            cin = cout
        self.convs = nn.ModuleList(layers)
        he_uniform_(self, stream(config.seed, "discriminator/init"))

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.config.plan)

    def forward(self, rgb: torch.Tensor, si: torch.Tensor) -> torch.Tensor:
        if rgb.shape[-2:] != si.shape[-2:] or rgb.shape[0] != si.shape[0]:
            raise ValueError(f"rgb {tuple(rgb.shape)} and spectra {tuple(si.shape)} differ in batch or spatial size")
        h = torch.cat([rgb, si], dim=1)
        last = len(self.convs) - 1
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < last:
                h = F.leaky_relu(h, 0.2)
        return h


def build_discriminator(config: DiscriminatorConfig) -> Discriminator:
    return Discriminator(config)


def discriminator_forward(disc: Discriminator, rgb, si) -> torch.Tensor:
    """Logit score map for (rgb, si); accepts single images or batches."""
    dtype = _param_dtype(disc)
    a, unbatched = _as_batch(rgb, dtype)
    b, _ = _as_batch(si, dtype)
    out = disc(a.to(dtype), b.to(dtype))
    return out[0] if unbatched else out


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
