"""Geographic train/test split, patch sampling and padding for inference."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rgb2hsi.hypercube import NORMALIZED, SpectralCube, load_cube, save_cube, wavelength_grid
from rgb2hsi.rgbsynth import RGB_WAVELENGTHS, RGBImage
from rgb2hsi.rng import stream

N_BANDS = 31
# patch pairs do not carry their grid; targets are always on 400:10:700
TARGET_WAVELENGTHS = wavelength_grid(400.0, 10.0, N_BANDS)
AXES = ("columns", "rows")


@dataclass(frozen=True)
class SplitRegion:
    """Train is ``[0, cut)`` along ``axis``, test is ``[cut, extent)``."""

    axis: str
    cut: int
    extent: int

    def __post_init__(self) -> None:
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if not 0 < self.cut < self.extent:
            raise ValueError(f"need 0 < cut < extent, got cut={self.cut} extent={self.extent}")

    def interval(self, split: str) -> tuple[int, int]:
        if split == "train":
            return 0, self.cut
        if split == "test":
            return self.cut, self.extent
        raise ValueError(f"unknown split {split!r}")


def geographic_split(extent: int, fraction: float = 0.6, axis: str = "columns") -> SplitRegion:
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if extent < 2:
        raise ValueError(f"extent must be >= 2, got {extent}")
    # round half away from zero; Python's round() would bank 2.5 -> 2
    cut = int(np.floor(fraction * extent + 0.5))
    return SplitRegion(axis=axis, cut=min(max(cut, 1), extent - 1), extent=extent)


@dataclass(frozen=True, eq=False)
class PatchPair:
    rgb: np.ndarray     # (3, S, S)
    target: np.ndarray  # (31, S, S)
    origin: tuple[int, int]
    split: str

    @property
    def size(self) -> int:
        return self.rgb.shape[-1]


@dataclass(frozen=True, eq=False)
class PatchSet:
    patches: tuple[PatchPair, ...]
    size: int
    seed: int
    sources: tuple[str, ...] = ()
    region: SplitRegion | None = None

    def split(self, tag: str) -> list[PatchPair]:
        return [p for p in self.patches if p.split == tag]

    def arrays(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        """Stack one split into ``(N, 3, S, S)`` and ``(N, 31, S, S)`` float32 arrays."""
        sel = self.split(tag)
        if not sel:
            s = self.size
            return np.zeros((0, 3, s, s), np.float32), np.zeros((0, N_BANDS, s, s), np.float32)
        return (np.stack([p.rgb for p in sel]).astype(np.float32),
                np.stack([p.target for p in sel]).astype(np.float32))

    def __len__(self) -> int:
        return len(self.patches)


def _legal_origins(region: SplitRegion, split: str, height: int, width: int, size: int) -> tuple[range, range]:
    lo, hi = region.interval(split)
    if hi - lo < size:
        raise ValueError(f"patch size {size} exceeds the {split} interval [{lo}, {hi})")
    along = range(lo, hi - size + 1)
    across_extent = height if region.axis == "columns" else width
    if across_extent < size:
        raise ValueError(f"patch size {size} exceeds image extent {across_extent}")
    across = range(0, across_extent - size + 1)
    # returned as (row range, col range)
    return (across, along) if region.axis == "columns" else (along, across)


def extract_patches(
    rgb: RGBImage,
    hsi: SpectralCube,
    region: SplitRegion,
    size: int = 64,
    n_train: int = 0,
    n_test: int = 0,
    seed: int = 0,
    sources: tuple[str, ...] = (),
) -> PatchSet:
    if (rgb.height, rgb.width) != (hsi.height, hsi.width):
        raise ValueError(f"RGB is {rgb.height}x{rgb.width} but cube is {hsi.height}x{hsi.width}")
    if hsi.bands != N_BANDS:
        raise ValueError(f"target cube must have {N_BANDS} bands, got {hsi.bands}")
    extent = hsi.width if region.axis == "columns" else hsi.height
    if extent != region.extent:
        raise ValueError(f"split extent {region.extent} does not match image extent {extent}")

    patches = []
    for split, count in (("train", n_train), ("test", n_test)):
        if count == 0:
            continue
        rows, cols = _legal_origins(region, split, hsi.height, hsi.width, size)
        rng = stream(seed, f"patches/{split}")
        r0 = rng.integers(rows.start, rows.stop, size=count)
        c0 = rng.integers(cols.start, cols.stop, size=count)
        for r, c in zip(r0.tolist(), c0.tolist()):
            patches.append(PatchPair(
                rgb=rgb.data[:, r:r + size, c:c + size].copy(),
                target=hsi.data[:, r:r + size, c:c + size].copy(),
                origin=(r, c),
                split=split,
            ))
    return PatchSet(patches=tuple(patches), size=size, seed=seed, sources=tuple(sources), region=region)


def footprint_overlaps(patches: PatchSet) -> list[tuple[int, int]]:
    """Index pairs of (train, test) patches whose footprints intersect."""
    s = patches.size
    bad = []
    for i, a in enumerate(patches.patches):
        for j, b in enumerate(patches.patches):
            if a.split != "train" or b.split != "test":
                continue
            (ra, ca), (rb, cb) = a.origin, b.origin
            if ra < rb + s and rb < ra + s and ca < cb + s and cb < ca + s:
                bad.append((i, j))
    return bad


def save_patchset(patches: PatchSet, directory: str | os.PathLike) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, p in enumerate(patches.patches):
        stem = f"patch_{i:06d}"
        save_cube(RGBImage(p.rgb).to_cube(), d / f"{stem}_rgb")
        save_cube(SpectralCube(p.target, wavelengths=TARGET_WAVELENGTHS, units=NORMALIZED, radiance_ceiling=1.0),
                  d / f"{stem}_target")
        entries.append({"id": stem, "origin": list(p.origin), "split": p.split})
    region = patches.region
    manifest = {
        "size": patches.size,
        "seed": patches.seed,
        "sources": list(patches.sources),
        "region": None if region is None else {"axis": region.axis, "cut": region.cut, "extent": region.extent},
        "patches": entries,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_patchset(directory: str | os.PathLike) -> PatchSet:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    patches = []
    for e in manifest["patches"]:
        rgb = load_cube(d / f"{e['id']}_rgb")
        tgt = load_cube(d / f"{e['id']}_target")
        if not np.array_equal(rgb.wavelengths, np.array(RGB_WAVELENGTHS)):
            raise ValueError(f"{e['id']}: RGB container has wavelengths {rgb.wavelengths.tolist()}")
        patches.append(PatchPair(rgb=np.array(rgb.data), target=np.array(tgt.data),
                                 origin=tuple(e["origin"]), split=e["split"]))
    r = manifest.get("region")
    return PatchSet(
        patches=tuple(patches),
        size=int(manifest["size"]),
        seed=int(manifest["seed"]),
        sources=tuple(manifest.get("sources", ())),
        region=None if r is None else SplitRegion(**r),
    )


@dataclass(frozen=True)
class CropRecord:
    height: int
    width: int
    pad_bottom: int = 0
    pad_right: int = 0

    @property
    def is_empty(self) -> bool:
        return self.pad_bottom == 0 and self.pad_right == 0

    def crop(self, array: np.ndarray) -> np.ndarray:
        return array[..., : self.height, : self.width]


def pad_to_multiple(rgb: RGBImage, multiple: int) -> tuple[RGBImage, CropRecord]:
    if multiple < 1:
        raise ValueError(f"multiple must be >= 1, got {multiple}")
    h, w = rgb.height, rgb.width
    if h < 1 or w < 1:
        raise ValueError(f"cannot pad an empty {h}x{w} image")
    pb = -h % multiple
    pr = -w % multiple
    record = CropRecord(height=h, width=w, pad_bottom=pb, pad_right=pr)
    if record.is_empty:
        return rgb, record
    # numpy's reflect mode repeats the reflection when the pad exceeds the image
    padded = np.pad(rgb.data, ((0, 0), (0, pb), (0, pr)), mode="reflect")
    return RGBImage(padded), record
