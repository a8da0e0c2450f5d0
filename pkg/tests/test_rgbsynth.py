import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dot_divide_oracle
from rgb2hsi.hypercube import RADIANCE, SpectralCube, load_cube, save_cube, wavelength_grid
from rgb2hsi.rgbsynth import (
    RGB_WAVELENGTHS,
    CameraSensitivity,
    CSFError,
    RGBImage,
    builtin_csf,
    format_csf,
    load_csf,
    parse_csf,
    synthesize_rgb,
)

GRID = wavelength_grid(400.0, 10.0, 31)


def test_single_row_table():
    # a strictly green-only row leaves red and blue without positive weight
    with pytest.raises(CSFError) as err:
        parse_csf("wavelength_nm,red,green,blue\n550,0,1,0\n")
    assert err.value.kind == "zero-column"
    csf = parse_csf("wavelength_nm,red,green,blue\n550,0.001,1,0.001\n")
    assert csf.weights.shape == (1, 3) and csf.weights[0, 1] == 1.0


def test_31_row_table(tmp_path):
    path = tmp_path / "canon.csv"
    path.write_text(format_csf(builtin_csf()))
    csf = load_csf(path)
    assert csf.weights.shape == (31, 3)
    np.testing.assert_array_equal(csf.wavelengths, GRID)


def test_crlf_accepted():
    text = "wavelength_nm,red,green,blue\r\n500,1,2,3\r\n510,1,2,3\r\n"
    assert parse_csf(text).wavelengths.tolist() == [500.0, 510.0]


@pytest.mark.parametrize(
    "text,kind",
    [
        ("wavelength_nm,red,green\n500,1,1\n", "header"),
        ("wavelength_nm,red,green,blue\n500,1,x,1\n", "non-numeric"),
        ("wavelength_nm,red,green,blue\n510,1,1,1\n500,1,1,1\n", "wavelengths"),
        ("wavelength_nm,red,green,blue\n500,0,1,1\n510,0,1,1\n", "zero-column"),
        ("wavelength_nm,red,green,blue\n500,1,1\n", "columns"),
    ],
)
def test_parse_errors(text, kind):
    with pytest.raises(CSFError) as err:
        parse_csf(text)
    assert err.value.kind == kind


def test_builtin_peaks():
    csf = builtin_csf()
    peaks = GRID[np.argmax(csf.weights, axis=0)]
    assert peaks.tolist() == [650.0, 550.0, 450.0]
    # FWHM 60 nm: half maximum 30 nm from the centre
    np.testing.assert_allclose(csf.weights[GRID.tolist().index(580.0), 1], 0.5, rtol=1e-12)


def test_constant_cube_gives_constant_rgb():
    cube = SpectralCube(np.full((31, 4, 5), 0.42), GRID)
    rgb = synthesize_rgb(cube, builtin_csf())
    assert np.all(np.abs(rgb.data - 0.42) < 1e-15)


def test_singleton_weight_copies_band():
    data = np.random.default_rng(0).random((31, 4, 4))
    w = np.full((31, 3), 0.0)
    w[7, 0] = 2.5
    w[:, 1] = 1.0
    w[:, 2] = 1.0
    rgb = synthesize_rgb(SpectralCube(data, GRID), CameraSensitivity(GRID, w))
    np.testing.assert_array_equal(rgb.data[0], data[7])


def test_matches_dot_divide_oracle():
    rng = np.random.default_rng(1)
    data = rng.random((31, 8, 8))
    csf = builtin_csf()
    rgb = synthesize_rgb(SpectralCube(data, GRID), csf)
    assert np.max(np.abs(rgb.data - dot_divide_oracle(data, csf.weights))) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_output_range_and_band_permutation(seed):
    rng = np.random.default_rng(seed)
    data = rng.random((31, 3, 3))
    weights = rng.random((31, 3)) + 1e-3
    rgb = synthesize_rgb(SpectralCube(data, GRID), CameraSensitivity(GRID, weights))
    assert rgb.data.min() >= 0 and rgb.data.max() <= 1
    # permuting bands in both the data and the table: same weighted means
    perm = rng.permutation(31)
    ref = np.tensordot((weights / weights.sum(0))[perm].T, data[perm], axes=(1, 0))
    np.testing.assert_allclose(rgb.data, ref, rtol=0, atol=1e-12)


def test_linear_in_cube():
    rng = np.random.default_rng(2)
    a, b = rng.random((2, 31, 3, 3)) * 0.5
    csf = builtin_csf()
    s = lambda d: synthesize_rgb(SpectralCube(d, GRID), csf).data
    np.testing.assert_allclose(s(a + b), s(a) + s(b), atol=1e-12)


def test_wavelength_mismatch_lists_grids():
    cube = SpectralCube(np.zeros((31, 1, 1)), GRID + 1)
    with pytest.raises(ValueError, match="401.0"):
        synthesize_rgb(cube, builtin_csf())


def test_requires_normalized_cube():
    cube = SpectralCube(np.zeros((31, 1, 1)), GRID, units=RADIANCE)
    with pytest.raises(ValueError):
        synthesize_rgb(cube, builtin_csf())


def test_rgb_container_round_trip(tmp_path):
    rgb = RGBImage(np.random.default_rng(3).random((3, 5, 6)))
    save_cube(rgb.to_cube(), tmp_path / "rgb")
    back = load_cube(tmp_path / "rgb")
    assert back.bands == 3 and tuple(back.wavelengths) == RGB_WAVELENGTHS
    np.testing.assert_array_equal(RGBImage.from_cube(back).data, rgb.data.astype(np.float32))
