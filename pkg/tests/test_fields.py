import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from densityctl.fields import (
    GridDensityEstimator,
    ReferenceDensity,
    bivariate_von_mises,
    density_from_image,
    estimate_density,
    histogram,
    image_to_grid,
    normalize,
    pixel_cell,
    tracking_von_mises,
    uniform_density,
    von_mises_1d,
)
from densityctl.grid import Grid1D, Grid2D, integrate, l2_norm, partial_derivatives, sup_norm
from densityctl.imageio import (
    ImageFormatError,
    read_image,
    read_pgm,
    read_raw_matrix,
    write_pgm,
    write_raw_matrix,
)

import oracles


def assert_density(rho, grid):
    assert np.all(rho >= 0)
    assert integrate(rho, grid) == pytest.approx(1.0, abs=1e-9)


# -- targets -----------------------------------------------------------------


def test_von_mises_kappa_zero_is_uniform(g1p):
    rho = von_mises_1d(0.0, 0.3, g1p)
    np.testing.assert_allclose(rho, 1 / (2 * np.pi), rtol=1e-12)


def test_von_mises_peak_and_symmetry(g1p):
    rho = von_mises_1d(2.0, 0.0, g1p)
    assert_density(rho, g1p)
    # cells 99 and 100 straddle zero
    assert np.argmax(rho) in (99, 100)
    assert np.max(np.abs(rho - rho[::-1])) <= 1e-12


def test_von_mises_peak_ratio():
    # no cell centre sits exactly at 0 or pi on an even grid
    g = Grid1D(np.pi, 200)
    rho = von_mises_1d(2.0, 0.0, g)
    x = g.centers
    ratio = rho[100] / rho[0]
    assert ratio == pytest.approx(np.exp(2 * (np.cos(x[100]) - np.cos(x[0]))), rel=1e-12)
    # the continuum ratio rho(0)/rho(pi) is recovered as dx -> 0
    assert ratio == pytest.approx(np.exp(4.0), rel=1e-3)


def test_von_mises_matches_oracle(g1p):
    expected, _ = oracles.von_mises(2.0, 0.5, np.pi, 200)
    np.testing.assert_allclose(von_mises_1d(2.0, 0.5, g1p), expected, rtol=1e-12)


def test_von_mises_needs_periodic_grid(g1r):
    with pytest.raises(ValueError, match="periodic"):
        von_mises_1d(2.0, 0.0, g1r)


def test_bivariate_von_mises_peak_symmetry_mass():
    g = Grid2D(np.pi, 64)
    rho = bivariate_von_mises(1.0, 1.0, 0.0, 0.0, g)
    assert_density(rho, g)
    i, j = np.unravel_index(np.argmax(rho), rho.shape)
    assert {int(i), int(j)} <= {31, 32}
    assert np.max(np.abs(rho - rho.T)) <= 1e-12
    expected, _ = oracles.bivariate(1.0, 1.0, np.pi, 64)
    np.testing.assert_allclose(rho, expected, rtol=1e-10)


def test_bivariate_von_mises_needs_periodic_grid(g2r):
    with pytest.raises(ValueError):
        bivariate_von_mises(1.0, 1.0, 0.0, 0.0, g2r)


def test_normalize_rejects_negative_and_zero(g1p):
    with pytest.raises(ValueError):
        normalize(-np.ones(200), g1p)
    with pytest.raises(ValueError):
        normalize(np.zeros(200), g1p)


# -- images ------------------------------------------------------------------


def test_uniform_image_gives_uniform_density():
    g = Grid2D(np.pi, 32)
    rho = density_from_image(np.full((20, 30), 0.7), g, smoothing_sigma=0.2)
    np.testing.assert_allclose(rho, 1 / (2 * np.pi) ** 2, rtol=1e-12)


def test_single_bright_pixel_maps_to_its_cell():
    g = Grid2D(np.pi, 40)
    img = np.zeros((40, 40))
    img[7, 25] = 1.0
    rho = density_from_image(img, g, smoothing_sigma=0.3)
    assert_density(rho, g)
    assert np.unravel_index(np.argmax(rho), rho.shape) == pixel_cell(7, 25, img.shape, g) == (25, 32)


def test_image_orientation_matches_docstring():
    g = Grid2D(1.0, 6)
    img = np.arange(36, dtype=float).reshape(6, 6)
    vals = image_to_grid(img, g)
    for r in range(6):
        for c in range(6):
            assert vals[c, 5 - r] == pytest.approx(img[r, c])


def test_inverted_image_puts_mass_on_dark_pixels():
    g = Grid2D(np.pi, 32)
    img = np.ones((32, 32))
    img[10:14, 10:14] = 0.0
    rho = density_from_image(img, g, 0.1, invert=True)
    assert rho[pixel_cell(12, 12, img.shape, g)] == rho.max()


def test_all_zero_image_is_rejected():
    with pytest.raises(ValueError, match="zero"):
        density_from_image(np.zeros((8, 8)), Grid2D(1.0, 8), 0.1)
    with pytest.raises(ValueError):
        density_from_image(np.ones((8, 8)), Grid2D(1.0, 8), -1.0)
    with pytest.raises(ValueError):
        density_from_image(np.zeros((0, 0)), Grid2D(1.0, 8), 0.1)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), sigma=st.floats(0.0, 0.5), invert=st.booleans())
def test_image_density_is_valid(seed, sigma, invert):
    g = Grid2D(1.0, 16, "reflective")
    img = np.random.default_rng(seed).random((11, 13)) + 0.01
    assert_density(density_from_image(img, g, sigma, invert), g)


# -- image files ---------------------------------------------------------------


@pytest.mark.parametrize("plain", [False, True])
@pytest.mark.parametrize("maxval", [255, 65535])
def test_pgm_round_trip(tmp_path, plain, maxval):
    q = np.random.default_rng(0).integers(0, maxval + 1, size=(5, 7))
    path = tmp_path / "img.pgm"
    write_pgm(path, q / maxval, maxval=maxval, plain=plain)
    np.testing.assert_array_equal(read_pgm(path) * maxval, q)


def test_pgm_header_bytes(tmp_path):
    path = tmp_path / "a.pgm"
    write_pgm(path, np.array([[0.0, 1.0]]))
    assert path.read_bytes() == b"P5\n2 1\n255\n\x00\xff"
    path.write_bytes(b"P2\n# comment\n2 1\n# another\n4\n0 4\n")
    np.testing.assert_array_equal(read_pgm(path), [[0.0, 1.0]])


def test_pgm_errors(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P6\n1 1\n255\n\x00")
    with pytest.raises(ImageFormatError):
        read_pgm(bad)
    bad.write_bytes(b"P5\n4 4\n255\n\x00\x00")
    with pytest.raises(ImageFormatError, match="truncated"):
        read_pgm(bad)


def test_raw_matrix_layout(tmp_path):
    path = tmp_path / "m.bin"
    m = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.5]])
    write_raw_matrix(path, m)
    data = path.read_bytes()
    assert data[:8] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert len(data) == 8 + 6 * 8
    np.testing.assert_array_equal(read_raw_matrix(path), m)
    np.testing.assert_array_equal(read_image(path), m)
    path.write_bytes(data[:-1])
    with pytest.raises(ImageFormatError):
        read_raw_matrix(path)


# -- estimation ------------------------------------------------------------------


def test_identical_positions_fill_one_cell(g1p):
    x = np.full(50, g1p.centers[17])
    rho = estimate_density(x, g1p, 0.0)
    assert rho[17] == pytest.approx(1 / g1p.dx, rel=1e-12)
    assert np.count_nonzero(rho) == 1


def test_uniform_samples_approach_uniform_density(g1p):
    x = np.random.default_rng(7).uniform(-np.pi, np.pi, 10**6)
    rho = estimate_density(x, g1p, 0.1)
    assert l2_norm(rho - uniform_density(g1p), g1p) <= 0.02


def test_estimate_rejects_empty_and_outside(g1p):
    with pytest.raises(ValueError):
        estimate_density(np.zeros(0), g1p)
    with pytest.raises(ValueError):
        estimate_density(np.array([4.0]), g1p)
    with pytest.raises(ValueError):
        estimate_density(np.zeros(3), g1p, -0.1)


def test_histogram_counts_2d(g2r):
    x = np.array([[-0.99, -0.99], [0.99, 0.99], [0.99, 0.99]])
    h = histogram(x, g2r)
    assert h.sum() == 3 and h[0, 0] == 1 and h[-1, -1] == 2


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 300), sigma=st.floats(0.0, 1.0), periodic=st.booleans())
def test_estimate_is_density_and_permutation_invariant(seed, n, sigma, periodic):
    g = Grid2D(1.0, 16, "periodic" if periodic else "reflective")
    r = np.random.default_rng(seed)
    x = r.uniform(-1, 1, (n, 2))
    rho = estimate_density(x, g, sigma)
    assert_density(rho, g)
    np.testing.assert_array_equal(rho, estimate_density(x[r.permutation(n)], g, sigma))


def test_tiny_bandwidth_recovers_histogram(g1r):
    x = np.random.default_rng(3).uniform(-1, 1, 500)
    raw = histogram(x, g1r) / (500 * g1r.dx)
    np.testing.assert_allclose(estimate_density(x, g1r, 1e-8 * g1r.dx), raw, atol=1e-12)


def test_grid_density_estimator_api(g1p):
    est = GridDensityEstimator(grid=g1p, bandwidth=0.1)
    assert est.get_params() == {"grid": g1p, "bandwidth": 0.1}
    with pytest.raises(NotFittedError):
        est.evaluate(np.zeros(1))
    x = np.random.default_rng(1).uniform(-np.pi, np.pi, 1000)
    assert est.fit(x) is est
    np.testing.assert_array_equal(est.density_, estimate_density(x, g1p, 0.1))
    assert est.n_samples_ == 1000
    assert est.evaluate(g1p.centers[:5]) == pytest.approx(est.density_[:5])
    assert clone(est).get_params()["bandwidth"] == 0.1


# -- references ------------------------------------------------------------------


def test_static_reference_caches_derivative_sups(g1p):
    ref = ReferenceDensity(g1p, von_mises_1d(2.0, 0.0, g1p))
    assert ref.is_static and ref.rate() is None
    first, second = ref.sup_derivatives()
    d1, d2 = partial_derivatives(ref.values, g1p)
    assert first[0] == sup_norm(d1[0]) and second[0] == sup_norm(d2[0])
    assert ref.sup_derivatives() is ref.sup_derivatives()


def test_tracking_reference_rate_has_zero_mass(g1p):
    ref = tracking_von_mises(0.5, 0.0, 0.5, g1p)
    for t in np.linspace(0, 4, 9):
        assert abs(integrate(ref.rate(t), g1p)) <= 1e-9
        assert_density(ref.at(t), g1p)


def test_tracking_rate_matches_finite_difference(g1p):
    ref = tracking_von_mises(0.5, 0.2, 0.5, g1p)
    h = 1e-5
    fd = (ref.at(1 + h) - ref.at(1 - h)) / (2 * h)
    np.testing.assert_allclose(ref.rate(1.0), fd, atol=1e-8)


def test_reference_needs_values_or_profile(g1p):
    with pytest.raises(ValueError):
        ReferenceDensity(g1p)
