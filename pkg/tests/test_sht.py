import numpy as np
import pytest
from scipy.special import sph_harm_y

from pcbd import sht
from pcbd.cloud import PointCloud, synth_cloud
from pcbd.errors import OrderTooHigh, PointAtOrigin
from pcbd.metrics import chamfer
from pcbd.rng import SeededRng

GRID = sht.GridSpec(181, 360)


def full_mask_field(values):
    return sht.SphericalField(values, np.ones(values.shape, dtype=bool), GRID)


def bump_field(width=0.005):
    """Full-mask field with a decaying but never-vanishing spectrum."""
    th = GRID.thetas()[:, None]
    ph = GRID.phis()[None, :]
    axis = (0.9, 0.7)
    cosang = (
        np.sin(th) * np.cos(ph) * np.sin(axis[0]) * np.cos(axis[1])
        + np.sin(th) * np.sin(ph) * np.sin(axis[0]) * np.sin(axis[1])
        + np.cos(th) * np.cos(axis[0])
    )
    vals = 0.4 * np.exp((cosang - 1.0) / width)
    vals = vals + 0.2 * np.cos(th) ** 2 * np.ones_like(ph)
    return full_mask_field(vals)


def scattered_field(seed, n_cells=150):
    gen = np.random.default_rng(seed)
    mask = np.zeros((GRID.n_theta, GRID.n_phi), dtype=bool)
    flat = gen.choice(mask.size, size=n_cells, replace=False)
    mask.ravel()[flat] = True
    values = np.where(mask, gen.normal(0.0, 0.2, mask.shape), 0.0)
    return sht.SphericalField(values, mask, GRID)


class TestBasis:
    def test_normalized_legendre_matches_scipy(self):
        th = np.linspace(0.05, np.pi - 0.05, 9)
        p = sht.normalized_assoc_legendre(20, np.cos(th))
        phi = 0.83
        worst = 0.0
        for l in range(21):
            for m in range(l + 1):
                ours = p[l, m] * np.exp(1j * m * phi)
                ref = sph_harm_y(l, m, th, phi)
                worst = max(worst, np.abs(ours - ref).max())
        assert worst < 1e-12

    def test_kernel_is_diag_of_basis_sum(self):
        # addition theorem: sum_m |Y_lm(x)|^2 = (2l+1)/(4pi)
        val = sht.legendre_sum_kernel(30, np.array([1.0]))[0]
        assert val == pytest.approx(31 * 31 / (4 * np.pi), rel=1e-12)


class TestSphericalField:
    def test_unit_sphere_points_have_zero_values(self):
        dirs = np.random.default_rng(0).normal(size=(40, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        field = sht.to_spherical_field(PointCloud(dirs), GRID)
        assert np.abs(field.values[field.mask]).max() < 1e-12

    def test_occupied_at_most_n(self):
        cloud = synth_cloud("torus", 200, SeededRng(1))
        field = sht.to_spherical_field(cloud, GRID)
        assert field.occupied <= 200

    def test_single_point_on_polar_axis(self):
        field = sht.to_spherical_field(PointCloud([[0.0, 0.0, 0.5]]), GRID)
        ti, pj = np.nonzero(field.mask)
        assert len(ti) == 1 and ti[0] == 0  # theta = 0 row
        assert field.values[ti[0], pj[0]] == pytest.approx(-0.5)

    def test_point_at_origin_rejected(self):
        with pytest.raises(PointAtOrigin):
            sht.to_spherical_field(PointCloud([[0.0, 0.0, 0.0], [1, 0, 0]]), GRID)

    def test_collision_keeps_nearest_sphere(self):
        # same direction, radii 0.7 and 1.1: |r-1| favors 1.1
        cloud = PointCloud([[0.7, 0, 0], [1.1, 0, 0]])
        field = sht.to_spherical_field(cloud, GRID, collision="nearest_sphere")
        assert field.occupied == 1
        assert field.values[field.mask][0] == pytest.approx(0.1)
        field2 = sht.to_spherical_field(cloud, GRID, collision="nearest_origin")
        assert field2.values[field2.mask][0] == pytest.approx(-0.3)


class TestDsht:
    def test_zero_field(self):
        spec = sht.dsht(full_mask_field(np.zeros((181, 360))), 20)
        assert np.abs(spec.coeffs).max() == 0.0

    def test_constant_field_orthonormality(self):
        spec = sht.dsht(full_mask_field(np.ones((181, 360))), 100)
        assert spec.get(0, 0).real == pytest.approx(np.sqrt(4 * np.pi), abs=1e-3)
        rest = np.abs(spec.coeffs).copy()
        rest[0, 100] = 0.0
        assert rest.max() <= 1e-3

    def test_matches_direct_quadrature_oracle(self):
        # independent oracle: explicit scipy-basis sum with the same weights
        field = scattered_field(3, n_cells=60)
        spec = sht.dsht(field, 8)
        ti, pj = np.nonzero(field.mask)
        th, ph = ti * GRID.d_theta, pj * GRID.d_phi
        w = sht.theta_weights(GRID)[ti] * GRID.d_phi
        f = field.values[ti, pj]
        for l in range(9):
            for m in range(-l, l + 1):
                oracle = np.sum(w * f * np.conj(sph_harm_y(l, m, th, ph)))
                assert spec.get(l, m) == pytest.approx(oracle, abs=1e-12)

    def test_conjugate_symmetry_exact(self):
        spec = sht.dsht(scattered_field(4), 24)
        assert spec.is_conjugate_symmetric(tol=0.0)

    def test_linearity(self):
        a, b = scattered_field(5), scattered_field(6)
        b = sht.SphericalField(np.where(a.mask, b.values[0, 0] + a.values * 0.3, 0.0),
                               a.mask, GRID)  # share a's mask
        coeff_a = sht.dsht(a, 16).coeffs
        coeff_b = sht.dsht(b, 16).coeffs
        mix = sht.SphericalField(2.0 * a.values - 0.5 * b.values, a.mask, GRID)
        coeff_mix = sht.dsht(mix, 16).coeffs
        assert np.abs(coeff_mix - (2.0 * coeff_a - 0.5 * coeff_b)).max() < 1e-10

    def test_order_too_high(self):
        small = sht.GridSpec(20, 41)
        field = sht.SphericalField(
            np.zeros((20, 41)), np.ones((20, 41), dtype=bool), small
        )
        with pytest.raises(OrderTooHigh):
            sht.dsht(field, 30)


class TestIsht:
    def test_zero_spectrum(self):
        out = sht.isht(sht.HarmonicSpectrum.zeros(10), GRID)
        assert np.abs(out.values).max() == 0.0

    def test_constant_coefficient_gives_unit_surface(self):
        spec = sht.HarmonicSpectrum.zeros(10)
        spec.coeffs[0, 10] = np.sqrt(4 * np.pi)
        out = sht.isht(spec, GRID)
        assert np.abs(out.values - 1.0).max() < 1e-9

    def test_full_mask_round_trip_error_monotone(self):
        field = bump_field()
        prev = np.inf
        for n_l in (4, 16, 64, 100):
            rec = sht.isht(sht.dsht(field, n_l), GRID)
            err = np.abs(rec.values - field.values).max()
            assert err <= prev + 1e-12
            prev = err
        assert prev < 1e-9  # effectively recovered at the top order


class TestFitSpectrum:
    def test_interpolates_coherent_scattered_values(self):
        # radial fields of real clouds vary smoothly over the sphere; the
        # spline fit reproduces such samples (white noise at adjacent
        # cells is smoothed instead, by design)
        gen = np.random.default_rng(7)
        mask = np.zeros((GRID.n_theta, GRID.n_phi), dtype=bool)
        mask.ravel()[gen.choice(mask.size, size=150, replace=False)] = True
        th = GRID.thetas()[:, None]
        ph = GRID.phis()[None, :]
        smooth = 0.3 * np.cos(th) ** 2 + 0.1 * np.sin(th) * np.cos(2 * ph)
        field = sht.SphericalField(np.where(mask, smooth, 0.0), mask, GRID)
        spec = sht.fit_spectrum(field, 40)
        ti, pj = np.nonzero(field.mask)
        rec = sht.synth_at_cells(spec, GRID, ti, pj)
        assert np.abs(rec - field.values[ti, pj]).max() < 1e-4

    def test_linear_for_fixed_mask(self):
        a = scattered_field(8)
        gen = np.random.default_rng(9)
        other = np.where(a.mask, gen.normal(0, 0.2, a.values.shape), 0.0)
        b = sht.SphericalField(other, a.mask, GRID)
        mix = sht.SphericalField(1.5 * a.values - 0.25 * b.values, a.mask, GRID)
        ca = sht.fit_spectrum(a, 30).coeffs
        cb = sht.fit_spectrum(b, 30).coeffs
        cm = sht.fit_spectrum(mix, 30).coeffs
        scale = np.abs(ca).max()
        assert np.abs(cm - (1.5 * ca - 0.25 * cb)).max() / scale < 1e-6

    def test_conjugate_symmetric(self):
        spec = sht.fit_spectrum(scattered_field(10), 25)
        assert spec.is_conjugate_symmetric(tol=0.0)


class TestReproduce:
    @pytest.mark.parametrize("family", ["sphere", "ellipsoid", "torus"])
    def test_error_small_at_top_order_and_monotone(self, family):
        cloud = synth_cloud(family, 256, SeededRng(11))
        errs = []
        for n_l in (4, 16, 64, 100):
            cfg = sht.SmoothingConfig(n_max=n_l)
            errs.append(chamfer(cloud, sht.reproduce(cloud, cfg)))
        assert errs[-1] <= 1e-2
        for lo, hi in zip(errs[1:], errs[:-1]):
            assert lo <= hi * 1.05 + 1e-9

    def test_occupied_cells_preserved(self):
        cloud = synth_cloud("ellipsoid", 180, SeededRng(12))
        cfg = sht.SmoothingConfig()
        field = sht.to_spherical_field(cloud, cfg.grid)
        rec = sht.reproduce(cloud, cfg)
        field_rec = sht.to_spherical_field(rec, cfg.grid)
        np.testing.assert_array_equal(field.mask, field_rec.mask)


class TestMixMasks:
    def test_endpoints_exact(self):
        gen = np.random.default_rng(13)
        a = gen.random((50, 60)) < 0.1
        b = gen.random((50, 60)) < 0.1
        np.testing.assert_array_equal(sht.mix_masks(a, b, 0.0, SeededRng(1)), a)
        np.testing.assert_array_equal(sht.mix_masks(a, b, 1.0, SeededRng(1)), b)

    def test_expected_cell_count(self):
        gen = np.random.default_rng(14)
        a = gen.random((80, 90)) < 0.08
        b = gen.random((80, 90)) < 0.08
        t = 0.3
        counts = [
            sht.mix_masks(a, b, t, SeededRng(1000 + i)).sum() for i in range(200)
        ]
        # union of independent subsamples: (1-t)|A| + t|B| minus the
        # expected overlap (1-t)*t*|A & B|
        expect = (
            (1 - t) * a.sum() + t * b.sum() - (1 - t) * t * (a & b).sum()
        )
        se = np.std(counts) / np.sqrt(len(counts))
        assert np.mean(counts) == pytest.approx(expect, abs=4 * se + 1.0)

    def test_deterministic(self):
        gen = np.random.default_rng(15)
        a = gen.random((40, 40)) < 0.2
        b = gen.random((40, 40)) < 0.2
        m1 = sht.mix_masks(a, b, 0.4, SeededRng(7))
        m2 = sht.mix_masks(a, b, 0.4, SeededRng(7))
        np.testing.assert_array_equal(m1, m2)


def smooth_deformation(cloud: PointCloud) -> PointCloud:
    p = cloud.points
    dx = 0.2 * np.sin(2.5 * p[:, 0]) * np.cos(1.5 * p[:, 1])
    dy = 0.16 * np.cos(2.0 * p[:, 1] + 0.4) * np.sin(1.5 * p[:, 2])
    dz = 0.16 * np.sin(1.8 * p[:, 2]) * np.cos(2.2 * p[:, 0] + 0.9)
    return PointCloud(p + np.c_[dx, dy, dz])


class TestHomotopy:
    def test_endpoints_bitwise(self):
        cloud = synth_cloud("cone", 256, SeededRng(16))
        cfg = sht.SmoothingConfig(seed=3)
        h0 = sht.homotopy(smooth_deformation, cloud, 0.0, cfg)
        np.testing.assert_array_equal(h0.points, cloud.points)
        h1 = sht.homotopy(smooth_deformation, cloud, 1.0, cfg)
        np.testing.assert_array_equal(h1.points, smooth_deformation(cloud).points)

    def test_point_count_restored(self):
        cloud = synth_cloud("cylinder", 256, SeededRng(17))
        out = sht.homotopy(smooth_deformation, cloud, 0.5, sht.SmoothingConfig(seed=4))
        assert out.n == cloud.n

    def test_midpoint_spectrum_is_coefficient_midpoint(self):
        a = sht.fit_spectrum(scattered_field(18), 20)
        b = sht.fit_spectrum(scattered_field(19), 20)
        mid = sht.interpolate_spectra(a, b, 0.5)
        assert np.abs(mid.coeffs - 0.5 * (a.coeffs + b.coeffs)).max() < 1e-12

    def test_distance_grows_with_t(self):
        # full monotonicity (Spearman over 20 shapes) lives in acceptance;
        # here: the half-way cloud sits strictly between the endpoints
        cloud = synth_cloud("ellipsoid", 256, SeededRng(20))
        cfg = sht.SmoothingConfig(seed=5)
        cd_mid = chamfer(sht.homotopy(smooth_deformation, cloud, 0.5, cfg), cloud)
        cd_full = chamfer(smooth_deformation(cloud), cloud)
        assert 0.0 < cd_mid < cd_full


class TestLowpass:
    def test_full_order_equals_reproduce(self):
        cloud = synth_cloud("torus", 200, SeededRng(21))
        cfg = sht.SmoothingConfig()
        a = sht.lowpass_filter(cloud, cfg.n_max, cfg)
        b = sht.reproduce(cloud, cfg)
        np.testing.assert_array_equal(a.points, b.points)

    def test_cut_to_zero_gives_common_radius(self):
        cloud = synth_cloud("ellipsoid", 128, SeededRng(22))
        out = sht.lowpass_filter(cloud, 0, sht.SmoothingConfig())
        radii = np.linalg.norm(out.points, axis=1)
        assert np.ptp(radii) < 1e-9

    def test_reduces_jitter_on_spheres(self):
        # spheres isolate the radial-noise mechanism: their own radial
        # field is flat, so truncation bias cannot mask the improvement
        for seed in (0, 1, 2):
            cloud = synth_cloud("sphere", 256, SeededRng(230 + seed))
            gen = np.random.default_rng(seed)
            jittered = PointCloud(
                cloud.points + gen.normal(0.0, 0.08, cloud.points.shape)
            )
            filtered = sht.lowpass_filter(jittered, 16, sht.SmoothingConfig())
            assert chamfer(filtered, cloud) < chamfer(jittered, cloud)

    def test_order_too_high(self):
        cloud = synth_cloud("sphere", 64, SeededRng(23))
        with pytest.raises(OrderTooHigh):
            sht.lowpass_filter(cloud, 101, sht.SmoothingConfig(n_max=100))


class TestSpectrumExport:
    def test_rows_cover_all_orders(self):
        spec = sht.fit_spectrum(scattered_field(24), 6)
        rows = sht.spectrum_to_rows(spec)
        assert len(rows) == spec.count() == 49
        ls, ms = zip(*[(r[0], r[1]) for r in rows])
        assert max(ls) == 6 and min(ms) == -6
