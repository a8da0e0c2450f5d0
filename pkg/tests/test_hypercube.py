import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import boxcar_oracle
from rgb2hsi.hypercube import (
    LABEL,
    NORMALIZED,
    RADIANCE,
    CubeError,
    Material,
    Rectangle,
    SceneSpec,
    SpectralCube,
    generate_scene,
    illumination_field,
    label_map,
    labels_to_cube,
    load_cube,
    normalize_cube,
    resample_bands,
    save_cube,
    scene_materials,
    wavelength_grid,
)

AERO_GRID = wavelength_grid(397.0, 606.0 / 371.0, 372)
TARGETS = np.arange(400.0, 701.0, 10.0)


def random_cube(rng, bands=5, h=3, w=4, units=NORMALIZED):
    return SpectralCube(rng.random((bands, h, w)), wavelength_grid(400, 10, bands), units=units,
                        radiance_ceiling=1.0 if units == NORMALIZED else None)


# ------------------------------------------------------------------- container


def test_minimal_cube_writes_four_bytes(tmp_path):
    cube = SpectralCube(np.full((1, 1, 1), 0.5), [550.0])
    save_cube(cube, tmp_path / "c")
    assert (tmp_path / "c.raw").stat().st_size == 4
    header = json.loads((tmp_path / "c.json").read_text())
    assert header["bands"] == 1
    assert header["interleave"] == "bsq" and header["dtype"] == "float32"
    assert header["byte_order"] == "little-endian"


def test_raw_size_for_64x64x31(tmp_path):
    cube = SpectralCube(np.zeros((31, 64, 64)), TARGETS)
    save_cube(cube, tmp_path / "c")
    assert (tmp_path / "c.raw").stat().st_size == 64 * 64 * 31 * 4 == 507904


def test_payload_is_bsq_little_endian(tmp_path):
    data = np.arange(2 * 2 * 3, dtype=np.float64).reshape(2, 2, 3) / 100
    save_cube(SpectralCube(data, [1.0, 2.0], units=RADIANCE), tmp_path / "c")
    raw = np.frombuffer((tmp_path / "c.raw").read_bytes(), dtype="<f4")
    # band 0 entirely, row-major, before band 1
    np.testing.assert_array_equal(raw, data.astype(np.float32).ravel())


def test_round_trip(tmp_path):
    cube = random_cube(np.random.default_rng(0), 31, 8, 9)
    save_cube(cube, tmp_path / "c")
    back = load_cube(tmp_path / "c")
    np.testing.assert_array_equal(back.data, cube.data.astype(np.float32))
    np.testing.assert_array_equal(back.wavelengths, cube.wavelengths)
    assert back.units == cube.units and back.radiance_ceiling == cube.radiance_ceiling


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_round_trip_property(tmp_path_factory, b, h, w, seed):
    d = tmp_path_factory.mktemp("rt")
    rng = np.random.default_rng(seed)
    cube = SpectralCube(rng.normal(size=(b, h, w)) * 1e3, np.cumsum(rng.uniform(0.5, 3, b)), units=RADIANCE)
    save_cube(cube, d / "c")
    back = load_cube(d / "c")
    np.testing.assert_array_equal(back.data, cube.data.astype(np.float32).astype(np.float64))


def test_label_container(tmp_path):
    labels = np.array([[0, 1], [2, 3]])
    save_cube(labels_to_cube(labels), tmp_path / "labels")
    back = load_cube(tmp_path / "labels")
    assert back.units == LABEL and back.bands == 1
    np.testing.assert_array_equal(back.data[0], labels)


def test_truncated_payload_is_size_error(tmp_path):
    save_cube(SpectralCube(np.zeros((31, 2, 2)), TARGETS), tmp_path / "c")
    raw = tmp_path / "c.raw"
    raw.write_bytes(raw.read_bytes()[: 30 * 2 * 2 * 4])
    with pytest.raises(CubeError) as err:
        load_cube(tmp_path / "c")
    assert err.value.kind == "size"


def test_non_increasing_wavelengths_rejected_on_load(tmp_path):
    save_cube(SpectralCube(np.zeros((3, 1, 1)), [1.0, 2.0, 3.0]), tmp_path / "c")
    header = json.loads((tmp_path / "c.json").read_text())
    header["wavelengths"] = [1.0, 3.0, 3.0]
    (tmp_path / "c.json").write_text(json.dumps(header))
    with pytest.raises(CubeError) as err:
        load_cube(tmp_path / "c")
    assert err.value.kind == "wavelengths"


@pytest.mark.parametrize("key,value", [("interleave", "bil"), ("dtype", "float64")])
def test_unknown_layout_rejected(tmp_path, key, value):
    save_cube(SpectralCube(np.zeros((1, 1, 1)), [1.0]), tmp_path / "c")
    header = json.loads((tmp_path / "c.json").read_text())
    header[key] = value
    (tmp_path / "c.json").write_text(json.dumps(header))
    with pytest.raises(CubeError) as err:
        load_cube(tmp_path / "c")
    assert err.value.kind == key


def test_non_finite_rejected():
    with pytest.raises(CubeError):
        SpectralCube(np.array([[[np.nan]]]), [1.0], units=RADIANCE)


def test_save_io_error_names_path(tmp_path):
    cube = SpectralCube(np.zeros((1, 1, 1)), [1.0])
    target = tmp_path / "missing" / "c"
    with pytest.raises(CubeError, match="missing"):
        save_cube(cube, target)


# ------------------------------------------------------------------ resampling


def test_resample_constant_cube():
    cube = SpectralCube(np.full((372, 2, 3), 0.37), AERO_GRID)
    out = resample_bands(cube, TARGETS, 5.0)
    assert out.bands == 31
    np.testing.assert_array_equal(out.wavelengths, TARGETS)
    assert np.all(out.data == 0.37)


def test_resample_singleton_window():
    data = np.random.default_rng(1).random((1, 4, 4))
    cube = SpectralCube(data, [400.0])
    np.testing.assert_array_equal(resample_bands(cube, [400.0], 5.0).data, data)


def test_resample_matches_boxcar_oracle():
    data = np.random.default_rng(2).random((372, 6, 5))
    cube = SpectralCube(data, AERO_GRID)
    out = resample_bands(cube, TARGETS, 5.0)
    expected = boxcar_oracle(data, AERO_GRID, TARGETS, 5.0)
    assert np.max(np.abs(out.data - expected)) < 1e-6
    assert (out.width, out.height, out.units) == (5, 6, NORMALIZED)


def test_resample_window_is_half_open():
    cube = SpectralCube(np.arange(3.0).reshape(3, 1, 1), [395.0, 400.0, 405.0], units=RADIANCE)
    # 405 sits on the open right edge, 395 on the closed left edge
    assert resample_bands(cube, [400.0], 5.0).data[0, 0, 0] == pytest.approx(0.5)


def test_resample_empty_window_lists_center():
    cube = SpectralCube(np.zeros((2, 1, 1)), [400.0, 410.0])
    with pytest.raises(CubeError, match="455"):
        resample_bands(cube, [400.0, 455.0], 5.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_resample_is_linear(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 372, 2, 2))
    mk = lambda d: SpectralCube(d, AERO_GRID, units=RADIANCE)
    lhs = resample_bands(mk(alpha * a + beta * b), TARGETS).data
    rhs = alpha * resample_bands(mk(a), TARGETS).data + beta * resample_bands(mk(b), TARGETS).data
    assert np.max(np.abs(lhs - rhs)) < 1e-6


# --------------------------------------------------------------- normalization


def test_normalize_clamps_at_ceiling():
    cube = SpectralCube(np.array([0.0, 3.0, 6.0]).reshape(3, 1, 1), [1, 2, 3], units=RADIANCE)
    out = normalize_cube(cube, 3.0)
    np.testing.assert_array_equal(out.data.ravel(), [0.0, 1.0, 1.0])
    assert out.units == NORMALIZED and out.radiance_ceiling == 3.0


def test_normalize_zero_cube():
    cube = SpectralCube(np.zeros((2, 2, 2)), [1, 2], units=RADIANCE)
    assert not normalize_cube(cube, 10.0).data.any()


def test_normalize_by_max_hits_one():
    data = np.random.default_rng(3).random((4, 5, 6)) * 80
    cube = SpectralCube(data, [1, 2, 3, 4], units=RADIANCE)
    out = normalize_cube(cube, float(data.max()))
    assert out.data.max() == 1.0
    np.testing.assert_allclose(out.data, data / data.max(), rtol=0, atol=0)


def test_normalize_rejects_bad_ceiling():
    cube = SpectralCube(np.zeros((1, 1, 1)), [1], units=RADIANCE)
    for bad in (0.0, -1.0):
        with pytest.raises(CubeError):
            normalize_cube(cube, bad)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_normalize_range_and_idempotence(seed, ceiling):
    data = np.random.default_rng(seed).normal(size=(3, 2, 2)) * 100
    out = normalize_cube(SpectralCube(data, [1, 2, 3], units=RADIANCE), ceiling)
    assert out.data.min() >= 0 and out.data.max() <= 1
    again = normalize_cube(out, 1.0)
    np.testing.assert_array_equal(again.data, out.data)


# -------------------------------------------------------------------- scenes


def test_scene_degenerate_layout_is_background():
    spec = SceneSpec(width=16, height=12, n_materials=3, rectangles=(Rectangle(2, 2, 0, 5, 1),),
                     n_rectangles=1, noise_sigma=0.0, seed=4)
    cube, labels = generate_scene(spec)
    assert not labels.any()
    bg = scene_materials(spec)[0].evaluate(spec.wavelengths)
    illum = illumination_field(spec)
    np.testing.assert_array_equal(cube.data, illum[None] * bg[:, None, None])


def test_scene_is_deterministic():
    spec = SceneSpec(width=40, height=30, noise_sigma=0.02, seed=11)
    a, la = generate_scene(spec)
    b, lb = generate_scene(spec)
    assert a.data.tobytes() == b.data.tobytes()
    np.testing.assert_array_equal(la, lb)
    c, _ = generate_scene(SceneSpec(width=40, height=30, noise_sigma=0.02, seed=12))
    assert not np.array_equal(a.data, c.data)


def test_scene_noise_free_equals_illumination_times_signature():
    spec = SceneSpec(width=48, height=40, n_materials=5, n_rectangles=10, noise_sigma=0.0, seed=5)
    cube, labels = generate_scene(spec)
    illum = illumination_field(spec)
    mats = scene_materials(spec)
    for r in range(0, 40, 7):
        for c in range(0, 48, 5):
            expected = illum[r, c] * mats[labels[r, c]].evaluate(spec.wavelengths)
            np.testing.assert_array_equal(cube.data[:, r, c], expected)


def test_scene_fields_in_range():
    spec = SceneSpec(width=50, height=33, smoothness=7, noise_sigma=0.05, seed=6)
    cube, labels = generate_scene(spec)
    illum = illumination_field(spec)
    assert illum.min() >= 0.7 and illum.max() <= 1.0
    assert cube.units == NORMALIZED and cube.radiance_ceiling == 1.0
    assert labels.min() >= 0 and labels.max() < spec.n_materials
    for m in scene_materials(spec):
        v = m.evaluate(spec.wavelengths)
        assert v.min() >= 0 and v.max() <= 1


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**31))
def test_random_materials_stay_in_unit_range(n, seed):
    spec = SceneSpec(width=4, height=4, n_materials=n, seed=seed, grid_start=397.0,
                     grid_step=606.0 / 371.0, grid_count=372)
    for m in scene_materials(spec):
        v = m.evaluate(spec.wavelengths)
        assert 0 <= v.min() and v.max() <= 1


def test_scene_rejects_bad_spec():
    with pytest.raises(ValueError):
        SceneSpec(n_materials=1)
    with pytest.raises(ValueError):
        SceneSpec(grid_count=1)
    with pytest.raises(ValueError):
        Material(offset=0.5, bumps=((500.0, 30.0, 0.6),))


def test_scene_372_bands_resampled_matches_boxcar_signatures():
    # signatures bottom out near 0.014, so sigma=0.002 keeps clamping at 0 out of reach
    sigma = 0.002
    spec = SceneSpec(width=64, height=48, n_materials=4, n_rectangles=6, noise_sigma=sigma, seed=7,
                     grid_start=397.0, grid_step=606.0 / 371.0, grid_count=372)
    cube, labels = generate_scene(spec)
    out = resample_bands(cube, TARGETS, 5.0)
    assert out.bands == 31 and out.units == NORMALIZED
    illum = illumination_field(spec)
    for k, mat in enumerate(scene_materials(spec)):
        mask = labels == k
        n = int(mask.sum())
        if n < 20:
            continue
        sig = boxcar_oracle(mat.evaluate(spec.wavelengths)[:, None], spec.wavelengths, TARGETS, 5.0)[:, 0]
        expected = illum[mask].mean() * sig
        observed = out.data[:, mask].mean(axis=1)
        # mean of n pixels x >=5 bands of N(0, sigma) noise
        assert np.max(np.abs(observed - expected)) < 5 * sigma / np.sqrt(n * 5) + 1e-9


def test_label_map_respects_rectangles():
    spec = SceneSpec(width=10, height=10, n_materials=3, n_rectangles=2,
                     rectangles=(Rectangle(0, 0, 5, 5, 1), Rectangle(3, 3, 4, 4, 2)), seed=0)
    labels = label_map(spec)
    assert labels[0, 0] == 1 and labels[4, 4] == 2 and labels[9, 9] == 0
