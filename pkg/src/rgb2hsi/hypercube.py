"""Spectral cube data model, container I/O, band resampling and synthetic scenes.

Container layout: ``<name>.json`` header plus ``<name>.raw`` payload holding
band-sequential (BSQ) little-endian float32 samples.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from rgb2hsi.rng import stream

RADIANCE = "radiance_W_m2_sr_um"
NORMALIZED = "normalized_unit"
LABEL = "label"
UNITS = (RADIANCE, NORMALIZED, LABEL)


class CubeError(ValueError):
    """Invalid cube contents or an inconsistent container."""

    def __init__(self, message: str, *, path: str | os.PathLike | None = None, kind: str = "invalid"):
        self.path = None if path is None else str(path)
        self.kind = kind
        super().__init__(f"{path}: {message}" if path is not None else message)


@dataclass(frozen=True, eq=False)
class SpectralCube:
    """H x W x B image stored as ``data[band, row, col]``."""

    data: np.ndarray
    wavelengths: np.ndarray
    units: str = NORMALIZED
    radiance_ceiling: float | None = None

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        if data.ndim != 3:
            raise CubeError(f"data must be (bands, rows, cols), got shape {data.shape}")
        if wl.ndim != 1 or wl.size != data.shape[0]:
            raise CubeError(f"{wl.size} wavelengths for {data.shape[0]} bands")
        if wl.size > 1 and not np.all(np.diff(wl) > 0):
            raise CubeError("wavelengths must be strictly increasing", kind="wavelengths")
        if self.units not in UNITS:
            raise CubeError(f"unknown units {self.units!r}")
        if not np.all(np.isfinite(data)):
            raise CubeError("samples must be finite", kind="non-finite")
        if self.units == NORMALIZED:
            if data.size and (data.min() < 0.0 or data.max() > 1.0):
                raise CubeError("normalized samples must lie in [0, 1]", kind="range")
        data.setflags(write=False)
        wl.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "wavelengths", wl)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpectralCube):
            return NotImplemented
        return (
            self.units == other.units
            and self.radiance_ceiling == other.radiance_ceiling
            and np.array_equal(self.wavelengths, other.wavelengths)
            and np.array_equal(self.data, other.data)
        )


# --------------------------------------------------------------------------- I/O


def _container_paths(path: str | os.PathLike) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".raw")


def save_cube(cube: SpectralCube, path: str | os.PathLike) -> None:
    """Write ``cube`` as ``<path>.json`` + ``<path>.raw``."""
    if not np.all(np.isfinite(cube.data)):
        raise CubeError("refusing to write non-finite samples", path=path, kind="non-finite")
    header_path, raw_path = _container_paths(path)
    header = {
        "width": cube.width,
        "height": cube.height,
        "bands": cube.bands,
        "wavelengths": [float(w) for w in cube.wavelengths],
        "units": cube.units,
        "radiance_ceiling": cube.radiance_ceiling,
        "dtype": "float32",
        "interleave": "bsq",
        "byte_order": "little-endian",
    }
    try:
        raw_path.write_bytes(cube.data.astype("<f4").tobytes(order="C"))
        header_path.write_text(json.dumps(header, indent=2) + "\n")
    except OSError as exc:
        raise CubeError(f"write failed: {exc.strerror}", path=path, kind="io") from exc


def load_cube(path: str | os.PathLike) -> SpectralCube:
    header_path, raw_path = _container_paths(path)
    try:
        header = json.loads(header_path.read_text())
        payload = raw_path.read_bytes()
    except OSError as exc:
        raise CubeError(f"read failed: {exc.strerror}", path=path, kind="io") from exc
    except json.JSONDecodeError as exc:
        raise CubeError(f"malformed header: {exc}", path=header_path, kind="header") from exc

    for key in ("width", "height", "bands", "wavelengths", "units", "dtype", "interleave"):
        if key not in header:
            raise CubeError(f"header missing {key!r}", path=header_path, kind="header")
    if header["dtype"] != "float32":
        raise CubeError(f"unsupported dtype {header['dtype']!r}", path=header_path, kind="dtype")
    if header["interleave"] != "bsq":
        raise CubeError(f"unsupported interleave {header['interleave']!r}", path=header_path, kind="interleave")
    if header.get("byte_order", "little-endian") != "little-endian":
        raise CubeError(f"unsupported byte order {header['byte_order']!r}", path=header_path, kind="byte_order")

    b, h, w = int(header["bands"]), int(header["height"]), int(header["width"])
    expected = b * h * w * 4
    if len(payload) != expected:
        raise CubeError(
            f"payload holds {len(payload)} bytes, header implies {expected} ({b}x{h}x{w} float32)",
            path=raw_path,
            kind="size",
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(b, h, w)
    try:
        return SpectralCube(
            data=data,
            wavelengths=np.asarray(header["wavelengths"], dtype=np.float64),
            units=header["units"],
            radiance_ceiling=header.get("radiance_ceiling"),
        )
    except CubeError as exc:
        raise CubeError(str(exc), path=header_path, kind=exc.kind) from exc


# -------------------------------------------------------------------- resampling


def wavelength_grid(start: float, step: float, count: int) -> np.ndarray:
    return start + step * np.arange(count, dtype=np.float64)


def resample_bands(cube: SpectralCube, target_centers: Sequence[float], half_window: float = 5.0) -> SpectralCube:
    """Boxcar mean of source bands whose centers fall in ``[c - hw, c + hw)``."""
    centers = np.asarray(target_centers, dtype=np.float64)
    src = cube.wavelengths
    rows = []
    empty = []
    for c in centers:
        sel = np.flatnonzero((src >= c - half_window) & (src < c + half_window))
        if sel.size == 0:
            empty.append(float(c))
        rows.append(sel)
    if empty:
        raise CubeError(f"no source bands within +/-{half_window} nm of target centers {empty}", kind="empty-window")
    data = np.empty((centers.size,) + cube.data.shape[1:])
    for i, sel in enumerate(rows):
        # mean taken relative to the first member, so constant windows come back bit-exact
        anchor = cube.data[sel[0]]
        data[i] = anchor + (cube.data[sel] - anchor).mean(axis=0)
    return SpectralCube(data=data, wavelengths=centers, units=cube.units, radiance_ceiling=cube.radiance_ceiling)


def normalize_cube(cube: SpectralCube, radiance_ceiling: float) -> SpectralCube:
    if not radiance_ceiling > 0:
        raise CubeError(f"radiance ceiling must be positive, got {radiance_ceiling}")
    if cube.units not in (RADIANCE, NORMALIZED):
        raise CubeError(f"cannot normalize a cube with units {cube.units!r}")
    data = np.clip(cube.data / radiance_ceiling, 0.0, 1.0)
    return SpectralCube(data=data, wavelengths=cube.wavelengths, units=NORMALIZED, radiance_ceiling=float(radiance_ceiling))


# ------------------------------------------------------------- synthetic scenes


@dataclass(frozen=True)
class Material:
    """Reflectance-like signature: ``offset + sum(amp * exp(-0.5 ((wl - center) / width)^2))``."""

    offset: float
    bumps: tuple[tuple[float, float, float], ...]  # (center_nm, width_nm, amplitude)

    def __post_init__(self) -> None:
        if not 1 <= len(self.bumps) <= 3:
            raise ValueError("a material carries 1 to 3 bumps")
        if self.offset < 0 or any(a < 0 or w <= 0 for _, w, a in self.bumps):
            raise ValueError("offset and amplitudes must be >= 0, widths > 0")
        if self.offset + sum(a for _, _, a in self.bumps) > 1.0 + 1e-12:
            raise ValueError("offset + amplitudes must not exceed 1 so the signature stays in [0, 1]")

    def evaluate(self, wavelengths: np.ndarray) -> np.ndarray:
        wl = np.asarray(wavelengths, dtype=np.float64)
        out = np.full(wl.shape, self.offset)
        for center, width, amp in self.bumps:
            out = out + amp * np.exp(-0.5 * ((wl - center) / width) ** 2)
        return out

    def to_dict(self) -> dict:
        return {"offset": self.offset, "bumps": [list(b) for b in self.bumps]}

    @classmethod
    def from_dict(cls, d: dict) -> "Material":
        return cls(offset=float(d["offset"]), bumps=tuple(tuple(float(v) for v in b) for b in d["bumps"]))


@dataclass(frozen=True)
class Rectangle:
    row: int
    col: int
    height: int
    width: int
    material: int


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a synthetic labelled scene.

    ``materials`` and ``rectangles`` are drawn from the seed when left empty.
    """

    width: int = 256
    height: int = 256
    n_materials: int = 6
    n_rectangles: int = 24
    smoothness: float = 32.0
    noise_sigma: float = 0.0
    grid_start: float = 400.0
    grid_step: float = 10.0
    grid_count: int = 31
    seed: int = 0
    materials: tuple[Material, ...] = field(default=())
    rectangles: tuple[Rectangle, ...] | None = None

    def __post_init__(self) -> None:
        if self.n_materials < 2:
            raise ValueError(f"n_materials must be >= 2, got {self.n_materials}")
        if self.grid_count < 2:
            raise ValueError(f"wavelength grid needs >= 2 samples, got {self.grid_count}")
        if self.width < 1 or self.height < 1:
            raise ValueError("scene must be at least 1x1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.smoothness <= 0:
            raise ValueError("smoothness must be > 0")
        if self.materials and len(self.materials) != self.n_materials:
            raise ValueError(f"{len(self.materials)} materials given, n_materials={self.n_materials}")

    @property
    def wavelengths(self) -> np.ndarray:
        return wavelength_grid(self.grid_start, self.grid_step, self.grid_count)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if "materials" in d:
            d["materials"] = tuple(Material.from_dict(m) for m in d["materials"])
        if d.get("rectangles") is not None:
            d["rectangles"] = tuple(Rectangle(**r) for r in d["rectangles"])
        return cls(**d)


def scene_materials(spec: SceneSpec) -> tuple[Material, ...]:
    if spec.materials:
        return spec.materials
    rng = stream(spec.seed, "scene/materials")
    lo, hi = 400.0, 700.0
    wl = spec.wavelengths
    lo, hi = max(lo, wl[0]), min(hi, wl[-1])
    out = []
    for _ in range(spec.n_materials):
        offset = rng.uniform(0.02, 0.3)
        n = int(rng.integers(1, 4))
        budget = (1.0 - offset) * rng.uniform(0.4, 1.0)
        amps = budget * rng.dirichlet(np.ones(n))
        bumps = tuple(
            (float(rng.uniform(lo, hi)), float(rng.uniform(20.0, 90.0)), float(a)) for a in amps
        )
        out.append(Material(offset=float(offset), bumps=bumps))
    return tuple(out)


def scene_rectangles(spec: SceneSpec) -> tuple[Rectangle, ...]:
    if spec.rectangles is not None:
        return spec.rectangles
    rng = stream(spec.seed, "scene/rectangles")
    out = []
    for _ in range(spec.n_rectangles):
        h = int(rng.integers(max(1, spec.height // 16), max(2, spec.height // 3) + 1))
        w = int(rng.integers(max(1, spec.width // 16), max(2, spec.width // 3) + 1))
        r = int(rng.integers(0, max(1, spec.height - h + 1)))
        c = int(rng.integers(0, max(1, spec.width - w + 1)))
        m = int(rng.integers(1, spec.n_materials))
        out.append(Rectangle(r, c, h, w, m))
    return tuple(out)


def label_map(spec: SceneSpec) -> np.ndarray:
    labels = np.zeros((spec.height, spec.width), dtype=np.int64)
    for rect in scene_rectangles(spec):
        labels[rect.row:rect.row + rect.height, rect.col:rect.col + rect.width] = rect.material
    return labels


def illumination_field(spec: SceneSpec) -> np.ndarray:
    """Smooth multiplicative field in [0.7, 1.0], bilinear over a coarse random grid."""
    s = spec.smoothness
    gh = int(math.ceil((spec.height - 1) / s)) + 2
    gw = int(math.ceil((spec.width - 1) / s)) + 2
    coarse = stream(spec.seed, "scene/illumination").uniform(0.7, 1.0, size=(gh, gw))
    y = np.arange(spec.height) / s
    x = np.arange(spec.width) / s
    y0 = np.floor(y).astype(int)
    x0 = np.floor(x).astype(int)
    fy = (y - y0)[:, None]
    fx = (x - x0)[None, :]
    c00 = coarse[np.ix_(y0, x0)]
    c01 = coarse[np.ix_(y0, x0 + 1)]
    c10 = coarse[np.ix_(y0 + 1, x0)]
    c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
    field_ = (1 - fy) * ((1 - fx) * c00 + fx * c01) + fy * ((1 - fx) * c10 + fx * c11)
    return np.clip(field_, 0.7, 1.0)


def generate_scene(spec: SceneSpec) -> tuple[SpectralCube, np.ndarray]:
    """Render ``spec`` into a normalized cube and its material-id map."""
    wl = spec.wavelengths
    table = np.stack([m.evaluate(wl) for m in scene_materials(spec)], axis=1)  # (bands, materials)
    labels = label_map(spec)
    data = illumination_field(spec)[None, :, :] * table[:, labels]
    if spec.noise_sigma > 0:
        data = data + stream(spec.seed, "scene/noise").normal(0.0, spec.noise_sigma, size=data.shape)
    data = np.clip(data, 0.0, 1.0)
    cube = SpectralCube(data=data, wavelengths=wl, units=NORMALIZED, radiance_ceiling=1.0)
    return cube, labels


def labels_to_cube(labels: np.ndarray) -> SpectralCube:
    return SpectralCube(data=labels[None].astype(np.float64), wavelengths=np.zeros(1), units=LABEL)
