"""Shared brute-force oracles and tiny fixtures for the test suites."""

from __future__ import annotations

import math

import numpy as np
import torch

from rgb2hsi.dataset import PatchPair, PatchSet
from rgb2hsi.rng import get_state, set_state
from rgb2hsi.ssrgan import DiscriminatorConfig, GeneratorConfig, build_discriminator, build_generator
from rgb2hsi.training import TrainingConfig, generator_loss

TINY_G = GeneratorConfig(depth=2, widths=(64, 128), width_multiplier=1 / 32)
TINY_D = DiscriminatorConfig(preset="rf1", width_multiplier=1 / 64)


def tiny_config(**overrides) -> TrainingConfig:
    kw = dict(epochs=2, batch_size=1, generator=TINY_G, discriminator=TINY_D)
    kw.update(overrides)
    return TrainingConfig(**kw)


def tiny_patchset(n_train=4, n_test=2, size=4, seed=0) -> PatchSet:
    """Patches whose spectra are a fixed linear map of the rgb, so they are learnable."""
    rng = np.random.default_rng(seed)
    mix = rng.random((31, 3))
    mix /= mix.sum(axis=1, keepdims=True)
    patches = []
    for i in range(n_train + n_test):
        rgb = rng.random((3, size, size))
        target = np.tensordot(mix, rgb, axes=(1, 0))
        patches.append(PatchPair(rgb, target, (0, i * size), "train" if i < n_train else "test"))
    return PatchSet(tuple(patches), size, seed)


def boxcar_oracle(data, src_wl, centers, half):
    """Band-by-band loop: average every source band whose centre sits in the window."""
    out = np.zeros((len(centers),) + data.shape[1:])
    for i, c in enumerate(centers):
        members = [b for b, w in enumerate(src_wl) if c - half <= w < c + half]
        acc = np.zeros(data.shape[1:])
        for b in members:
            acc += data[b]
        out[i] = acc / len(members)
    return out


def dot_divide_oracle(data, weights):
    """Explicit per-pixel, per-channel weighted sum divided by the weight sum."""
    b, h, w = data.shape
    out = np.zeros((3, h, w))
    for k in range(3):
        total = sum(weights[i, k] for i in range(b))
        for r in range(h):
            for c in range(w):
                out[k, r, c] = sum(weights[i, k] * data[i, r, c] for i in range(b)) / total
    return out


def painted_overlap(ps, height, width) -> int:
    """Paint every train footprint on a mask and count test pixels that land on it."""
    mask = np.zeros((height, width), dtype=bool)
    s = ps.size
    for p in ps.split("train"):
        r, c = p.origin
        mask[r:r + s, c:c + s] = True
    return int(sum(mask[r:r + s, c:c + s].sum() for r, c in (p.origin for p in ps.split("test"))))


def scalar_bce(logit: float, label: float) -> float:
    p = 1.0 / (1.0 + math.exp(-logit))
    return -(label * math.log(p) + (1 - label) * math.log(1 - p))


def gradient_check(n_probes=60, h=1e-6, seed=0, floor=1e-7):
    """Compare autograd against central differences of g_total over G's parameters.

    Runs in float64 on a width-2, depth-2 generator with an rf1 discriminator and
    4x4 patches. The dropout stream is rewound before every evaluation so each
    loss sees the same masks. Returns the list of relative errors, one per probe.
    """
    g = build_generator(TINY_G).double().train()
    d = build_discriminator(TINY_D).double()
    d.requires_grad_(False)
    rng = np.random.default_rng(seed)
    rgb = torch.from_numpy(rng.random((2, 3, 4, 4)))
    target = torch.from_numpy(rng.random((2, 31, 4, 4)))
    rng_state = get_state(g.dropout_rng)

    def loss() -> torch.Tensor:
        set_state(g.dropout_rng, rng_state)
        fake = g(rgb)
        return generator_loss(d(rgb, fake), fake, target, 100.0)[2]

    g.zero_grad()
    loss().backward()
    params = [(n, p) for n, p in g.named_parameters()]
    flat = [(n, p, i) for n, p in params for i in range(p.numel())]
    chosen = rng.choice(len(flat), size=min(n_probes, len(flat)), replace=False)
    errors = []
    with torch.no_grad():
        for j in chosen:
            _, p, i = flat[j]
            view = p.view(-1)
            analytic = p.grad.view(-1)[i].item()
            orig = view[i].item()
            view[i] = orig + h
            up = loss().item()
            view[i] = orig - h
            down = loss().item()
            view[i] = orig
            numeric = (up - down) / (2 * h)
            scale = max(abs(analytic), abs(numeric), floor)
            errors.append(abs(analytic - numeric) / scale)
    return errors
