"""Camera sensitivity tables and RGB synthesis from normalized cubes."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rgb2hsi.hypercube import NORMALIZED, SpectralCube, wavelength_grid

CSF_HEADER = ["wavelength_nm", "red", "green", "blue"]
RGB_WAVELENGTHS = (450.0, 550.0, 650.0)


class CSFError(ValueError):
    def __init__(self, message: str, *, line: int | None = None, kind: str = "invalid"):
        self.line = line
        self.kind = kind
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, eq=False)
class CameraSensitivity:
    wavelengths: np.ndarray
    weights: np.ndarray  # (bands, 3): red, green, blue
    name: str = "csf"

    def __post_init__(self) -> None:
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != 3 or w.shape[0] != wl.size:
            raise CSFError(f"weights must be ({wl.size}, 3), got {w.shape}")
        if wl.size > 1 and not np.all(np.diff(wl) > 0):
            raise CSFError("wavelengths must be strictly increasing", kind="wavelengths")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise CSFError("weights must be finite and non-negative", kind="negative")
        for k, col in enumerate(CSF_HEADER[1:]):
            if not np.any(w[:, k] > 0):
                raise CSFError(f"{col} column has no positive weight", kind="zero-column")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True, eq=False)
class RGBImage:
    data: np.ndarray  # (3, H, W) in [0, 1]

    def __post_init__(self) -> None:
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[0] != 3:
            raise ValueError(f"RGB data must be (3, H, W), got {d.shape}")
        if d.size and (d.min() < 0.0 or d.max() > 1.0):
            raise ValueError("RGB samples must lie in [0, 1]")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def to_cube(self) -> SpectralCube:
        return SpectralCube(data=self.data, wavelengths=np.array(RGB_WAVELENGTHS), units=NORMALIZED, radiance_ceiling=1.0)

    @classmethod
    def from_cube(cls, cube: SpectralCube) -> "RGBImage":
        if cube.bands != 3:
            raise ValueError(f"an RGB container has 3 bands, got {cube.bands}")
        return cls(cube.data)


def parse_csf(text: str, name: str = "csf") -> CameraSensitivity:
    reader = csv.reader(io.StringIO(text.replace("\r\n", "\n")))
    rows = [r for r in reader if r and any(cell.strip() for cell in r)]
    if not rows:
        raise CSFError("empty file", kind="header")
    header = [h.strip() for h in rows[0]]
    if header != CSF_HEADER:
        missing = [c for c in CSF_HEADER if c not in header]
        raise CSFError(f"header must be {','.join(CSF_HEADER)}; missing {missing or 'none'}, got {header}",
                       line=1, kind="header")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise CSFError(f"expected 4 cells, got {len(row)}", line=lineno, kind="columns")
        try:
            values.append([float(c) for c in row])
        except ValueError as exc:
            raise CSFError(f"non-numeric cell in {row}", line=lineno, kind="non-numeric") from exc
    if not values:
        raise CSFError("no data rows", kind="empty")
    table = np.array(values)
    return CameraSensitivity(wavelengths=table[:, 0], weights=table[:, 1:], name=name)


def load_csf(path: str | os.PathLike) -> CameraSensitivity:
    p = Path(path)
    return parse_csf(p.read_text(encoding="utf-8"), name=p.stem)


def format_csf(csf: CameraSensitivity) -> str:
    lines = [",".join(CSF_HEADER)]
    for wl, row in zip(csf.wavelengths.tolist(), csf.weights.tolist()):
        lines.append(",".join(repr(v) for v in (wl, *row)))
    return "\n".join(lines) + "\n"


def builtin_csf(wavelengths: np.ndarray | None = None, fwhm: float = 60.0) -> CameraSensitivity:
    """Gaussian R/G/B responses centred at 650/550/450 nm."""
    wl = wavelength_grid(400.0, 10.0, 31) if wavelengths is None else np.asarray(wavelengths, dtype=np.float64)
    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    weights = np.stack([np.exp(-0.5 * ((wl - c) / sigma) ** 2) for c in (650.0, 550.0, 450.0)], axis=1)
    return CameraSensitivity(wavelengths=wl, weights=weights, name="builtin-gaussian")


def synthesize_rgb(cube: SpectralCube, csf: CameraSensitivity) -> RGBImage:
    """Per-channel sensitivity-weighted mean over bands."""
    if cube.units != NORMALIZED:
        raise ValueError(f"cube must be normalized to [0, 1], units are {cube.units!r}")
    if cube.wavelengths.shape != csf.wavelengths.shape or not np.allclose(cube.wavelengths, csf.wavelengths, rtol=0, atol=1e-6):
        raise ValueError(
            f"wavelength grids differ: cube {cube.wavelengths.tolist()} vs CSF {csf.wavelengths.tolist()}"
        )
    w = csf.weights / csf.weights.sum(axis=0, keepdims=True)
    rgb = np.tensordot(w.T, cube.data, axes=(1, 0))
    return RGBImage(np.clip(rgb, 0.0, 1.0))
