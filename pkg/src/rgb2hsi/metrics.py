"""Evaluation: 8-bit RMSE, unit-range PSNR, spectral signatures and curve export."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence
from xml.sax.saxutils import escape

import numpy as np
import torch
from scipy.interpolate import CubicSpline

from rgb2hsi.dataset import TARGET_WAVELENGTHS, PatchSet
from rgb2hsi.hypercube import SpectralCube

INFINITE_PSNR = math.inf


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"prediction {p.shape} and target {t.shape} differ in shape")
    return p, t


def mse_unit(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.mean((p - t) ** 2))


def rmse_8bit(pred, target) -> float:
    """RMSE after scaling both inputs from [0, 1] to [0, 255] (no quantization)."""
    p, t = _pair(pred, target)
    return float(np.sqrt(np.mean((255.0 * p - 255.0 * t) ** 2)))


def psnr_unit(pred, target) -> float:
    """``10 log10(1 / MSE)``; identical inputs give ``INFINITE_PSNR``."""
    mse = mse_unit(pred, target)
    if mse == 0.0:
        return INFINITE_PSNR
    return 10.0 * math.log10(1.0 / mse)


def _json_float(x: float):
    return "inf" if math.isinf(x) else x


@dataclass
class EvalReport:
    rmse_8bit: float
    psnr_unit: float
    per_patch: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def psnr_is_infinite(self) -> bool:
        return math.isinf(self.psnr_unit)

    def to_dict(self) -> dict:
        return {
            "rmse_8bit": self.rmse_8bit,
            "psnr_unit": _json_float(self.psnr_unit),
            "psnr_infinite": self.psnr_is_infinite,
            "aggregation": "global mean over all test elements",
            "n_patches": len(self.per_patch),
            "per_patch": [
                {"id": r["id"], "rmse_8bit": r["rmse_8bit"], "psnr_unit": _json_float(r["psnr_unit"])}
                for r in self.per_patch
            ],
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _predictor(generator) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(generator, torch.nn.Module):
        from rgb2hsi.ssrgan import INFERENCE, generator_forward

        def run(rgb: np.ndarray) -> np.ndarray:
            return generator_forward(generator, torch.from_numpy(rgb), mode=INFERENCE).double().numpy()
        return run
    return generator


def evaluate(generator, patches: PatchSet, batch_size: int = 16, config: dict | None = None) -> EvalReport:
    """Score ``generator`` on the test split.

    ``generator`` is either a network (run in inference mode) or any callable
    mapping an ``(N, 3, S, S)`` batch to ``(N, 31, S, S)`` predictions.
    """
    rgb, target = patches.arrays("test")
    if len(rgb) == 0:
        raise ValueError("the test split of the patch set is empty")
    predict = _predictor(generator)
    preds = np.concatenate([np.asarray(predict(rgb[i:i + batch_size]), dtype=np.float64)
                            for i in range(0, len(rgb), batch_size)])
    target = target.astype(np.float64)
    per_patch = []
    ids = [i for i, p in enumerate(patches.patches) if p.split == "test"]
    for k, pid in enumerate(ids):
        per_patch.append({"id": f"patch_{pid:06d}", "rmse_8bit": rmse_8bit(preds[k], target[k]),
                          "psnr_unit": psnr_unit(preds[k], target[k])})
    return EvalReport(
        rmse_8bit=rmse_8bit(preds, target),
        psnr_unit=psnr_unit(preds, target),
        per_patch=per_patch,
        config=dict(config or {}),
    )


def mean_spectrum_predictor(patches: PatchSet) -> Callable[[np.ndarray], np.ndarray]:
    """Baseline that predicts the train split's mean spectrum at every pixel."""
    _, target = patches.arrays("train")
    mean = target.astype(np.float64).mean(axis=(0, 2, 3))

    def run(rgb: np.ndarray) -> np.ndarray:
        n, _, h, w = rgb.shape
        return np.broadcast_to(mean[None, :, None, None], (n, mean.size, h, w))
    return run


# ------------------------------------------------------------------ signatures


@dataclass(frozen=True)
class Signature:
    point: tuple[int, int]
    wavelengths: np.ndarray
    values: np.ndarray
    source: str = "ground_truth"


@dataclass(frozen=True)
class Curve:
    wavelengths: np.ndarray
    values: np.ndarray
    scale: str = "unit"


def sample_signature(cube: SpectralCube | np.ndarray, point: tuple[int, int], source: str = "ground_truth",
                     wavelengths: np.ndarray | None = None) -> Signature:
    if isinstance(cube, SpectralCube):
        data, wl = cube.data, cube.wavelengths
    else:
        data = np.asarray(cube, dtype=np.float64)
        wl = TARGET_WAVELENGTHS if wavelengths is None else np.asarray(wavelengths, dtype=np.float64)
    if data.shape[0] != 31:
        raise ValueError(f"signatures are taken from 31-band cubes, got {data.shape[0]} bands")
    r, c = point
    if not (0 <= r < data.shape[1] and 0 <= c < data.shape[2]):
        raise IndexError(f"point {point} outside the {data.shape[1]}x{data.shape[2]} image")
    if source not in ("ground_truth", "predicted"):
        raise ValueError(f"unknown signature source {source!r}")
    return Signature(point=(int(r), int(c)), wavelengths=np.array(wl), values=np.array(data[:, r, c]), source=source)


def interpolate_bspline(sig: Signature, samples_per_interval: int = 10, scale: str = "unit") -> Curve:
    """Natural cubic interpolating spline through every band value.

    The dense grid contains every band centre. ``scale="eight_bit"``
    multiplies by 255.
    """
    if len(sig.values) < 4:
        raise ValueError(f"cubic interpolation needs >= 4 control points, got {len(sig.values)}")
    if samples_per_interval < 1:
        raise ValueError("samples_per_interval must be >= 1")
    if scale not in ("unit", "eight_bit"):
        raise ValueError(f"unknown scale {scale!r}")
    x = np.asarray(sig.wavelengths, dtype=np.float64)
    y = np.asarray(sig.values, dtype=np.float64)
    spline = CubicSpline(x, y, bc_type="natural")
    t = np.linspace(0.0, 1.0, samples_per_interval + 1)[:-1]
    dense = np.append((x[:-1, None] + t[None, :] * np.diff(x)[:, None]).ravel(), x[-1])
    values = spline(dense)
    if scale == "eight_bit":
        values = values * 255.0
    return Curve(wavelengths=dense, values=values, scale=scale)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def render_curves(curves: Sequence[Curve], labels: Sequence[str]) -> tuple[str, str]:
    """Return (CSV text, standalone SVG text) for curves sharing one grid."""
    if not curves:
        raise ValueError("nothing to render")
    if len(labels) != len(curves):
        raise ValueError(f"{len(labels)} labels for {len(curves)} curves")
    grid = curves[0].wavelengths
    for c in curves[1:]:
        if c.wavelengths.shape != grid.shape or not np.array_equal(c.wavelengths, grid):
            raise ValueError("curves do not share a wavelength grid")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["wavelength_nm", *labels])
    for i, wl in enumerate(grid):
        writer.writerow([repr(float(wl)), *(repr(float(c.values[i])) for c in curves)])

    width, height, margin = 640, 400, 50
    x0, x1 = float(grid.min()), float(grid.max())
    ys = np.concatenate([c.values for c in curves])
    y0, y1 = float(ys.min()), float(ys.max())
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    if x1 == x0:
        x1 = x0 + 1.0

    def sx(v: float) -> float:
        return margin + (v - x0) / (x1 - x0) * (width - 2 * margin)

    def sy(v: float) -> float:
        return height - margin - (v - y0) / (y1 - y0) * (height - 2 * margin)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">wavelength (nm)</text>',
        f'<text x="{margin}" y="{height - margin + 16}" text-anchor="middle" font-size="10">{x0:g}</text>',
        f'<text x="{width - margin}" y="{height - margin + 16}" text-anchor="middle" font-size="10">{x1:g}</text>',
        f'<text x="{margin - 6}" y="{height - margin}" text-anchor="end" font-size="10">{y0:.3g}</text>',
        f'<text x="{margin - 6}" y="{margin + 4}" text-anchor="end" font-size="10">{y1:.3g}</text>',
    ]
    for i, (c, label) in enumerate(zip(curves, labels)):
        colour = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(float(a)):.2f},{sy(float(b)):.2f}" for a, b in zip(c.wavelengths, c.values))
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = margin + 14 * i
        parts.append(f'<line x1="{width - margin - 110}" y1="{ly}" x2="{width - margin - 90}" y2="{ly}" '
                     f'stroke="{colour}" stroke-width="2"/>')
        parts.append(f'<text x="{width - margin - 85}" y="{ly + 4}" font-size="10">{escape(label)}</text>')
    parts.append("</svg>")
    return buf.getvalue(), "\n".join(parts) + "\n"
