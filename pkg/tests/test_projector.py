"""Forward/adjoint projection: rotation, attenuation, depth-dependent blur."""

import numpy as np
import pytest

from spectfield.geometry import CircularOrbit, make_geometry
from spectfield.phantom import ImageVolume
from spectfield.projector import (SystemModel, _blur_matrix, _rotation_csr,
                                  back_project, forward_project, psf_sigma)

VOXEL = 4.8


def _model(n=16, nv=16, n_views=8, mu=None, sigma0=0.0, slope=0.0, calib=1.0,
           radius=60.0):
    geo = make_geometry(n_views, CircularOrbit(radius), det_nu=n, det_nv=nv,
                        det_pixel_mm=VOXEL)
    mu_vol = None if mu is None else ImageVolume(mu, VOXEL)
    return SystemModel(geometry=geo, mu_map=mu_vol, psf_sigma0=sigma0,
                       psf_slope=slope, calibration=calib)


def test_psf_sigma_examples():
    m = _model(sigma0=2.0, slope=0.02)
    assert psf_sigma(0.0, m) == 2.0
    assert psf_sigma(100.0, m) == pytest.approx(4.0)
    m0 = _model(sigma0=3.0, slope=0.0)
    assert psf_sigma(0.0, m0) == psf_sigma(250.0, m0) == 3.0
    with pytest.raises(ValueError):
        psf_sigma(-1.0, m)


def test_rotation_zero_angle_is_identity():
    rot = _rotation_csr(16, 0.0)
    x = np.random.default_rng(0).random((16, 16))
    assert np.array_equal(rot @ x.ravel(), x.ravel())


def test_rotation_rows_sum_to_one_inside_disc():
    # pull-style bilinear weights form a partition of unity wherever the
    # source point lands inside the grid
    rot = _rotation_csr(32, np.deg2rad(33.0))
    sums = np.asarray(rot.sum(axis=1)).ravel().reshape(32, 32)
    ii, jj = np.meshgrid(np.arange(32) - 15.5, np.arange(32) - 15.5, indexing="ij")
    interior = np.hypot(ii, jj) < 14.0
    assert np.allclose(sums[interior], 1.0)


def test_zero_volume_projects_to_zero():
    m = _model()
    stack = forward_project(np.zeros((16, 16, 16)), m)
    assert not stack.windows.any()


def test_point_source_single_pixel_every_view():
    # odd grid puts one voxel exactly on the rotation axis; with no
    # attenuation or blur it lands in a single pixel with the ray-step weight
    m = _model(n=15, nv=9, n_views=6)
    x = np.zeros((15, 15, 9))
    x[7, 7, 4] = 1.0
    stack = forward_project(x, m)
    for k in range(6):
        view = stack.peak[k]
        nz = np.nonzero(view)
        assert len(nz[0]) == 1
        assert view[nz] == pytest.approx(VOXEL)
        assert (nz[0][0], nz[1][0]) == (7, 4)


def test_interior_mass_conserved_without_physics():
    # scatter rotation keeps every interior voxel's weight; with no
    # attenuation or blur each view integrates to step * total activity
    m = _model(n=32, nv=16, n_views=8)
    rng = np.random.default_rng(11)
    x = np.zeros((32, 32, 16))
    x[10:22, 10:22, 4:12] = rng.random((12, 12, 8))
    stack = forward_project(x, m)
    for k in range(8):
        assert stack.peak[k].sum() == pytest.approx(VOXEL * x.sum(), rel=1e-12)


def test_forward_scales_with_calibration():
    x = np.random.default_rng(1).random((16, 16, 16))
    base = forward_project(x, _model()).peak
    scaled = forward_project(x, _model(calib=2.5)).peak
    assert np.allclose(scaled, 2.5 * base)


def test_attenuation_matches_beer_lambert():
    # uniform attenuator: a centered point source at rotated depth index 16
    # sees the midpoint-rule path length (16 + 0.5) voxels at view 0
    n = 33
    mu = np.full((n, n, 9), 0.0136)
    m = _model(n=n, nv=9, n_views=4, mu=mu)
    x = np.zeros((n, n, 9))
    x[16, 16, 4] = 1.0
    stack = forward_project(x, m)
    expected = VOXEL * np.exp(-0.0136 * 16.5 * VOXEL)
    assert stack.peak[0][16, 4] == pytest.approx(expected, rel=1e-12)
    # oracle form: Beer-Lambert through 79.2 mm of water-like material,
    # exp(-0.0136 * 79.2) evaluated independently
    assert stack.peak[0][16, 4] == pytest.approx(VOXEL * 0.3405749704823703, rel=0.02)


def test_attenuation_is_depth_asymmetric():
    # a source nearer the detector is attenuated less at that view
    n = 17
    mu = np.full((n, n, 9), 0.01)
    m = _model(n=n, nv=9, n_views=4, mu=mu)
    near = np.zeros((n, n, 9)); near[8, 2, 4] = 1.0
    far = np.zeros((n, n, 9)); far[8, 14, 4] = 1.0
    p_near = forward_project(near, m).peak[0].sum()
    p_far = forward_project(far, m).peak[0].sum()
    assert p_near > p_far


def test_blur_matrix_symmetric_and_normalized():
    b = _blur_matrix(33, 2.1)
    assert np.array_equal(b, b.T)
    mid = b.sum(axis=1)[10:-10]
    assert np.allclose(mid, 1.0, atol=1e-12)
    assert np.all(b.sum(axis=1) <= 1.0 + 1e-12)


def test_blur_spreads_point_but_keeps_total():
    m = _model(n=33, nv=33, n_views=4, sigma0=6.0, slope=0.0)
    x = np.zeros((33, 33, 33))
    x[16, 16, 16] = 1.0
    sharp = forward_project(x, _model(n=33, nv=33, n_views=4)).peak[0]
    soft = forward_project(x, m).peak[0]
    assert (soft > 0).sum() > (sharp > 0).sum()
    assert soft.sum() == pytest.approx(sharp.sum(), rel=1e-3)
    assert soft.max() < sharp.max()


def test_depth_dependence_widens_far_sources():
    # same source, opposite views: the view from the far side sees it deeper,
    # so the profile spreads wider
    n = 33
    m = _model(n=n, nv=9, n_views=4, sigma0=1.0, slope=0.05)
    x = np.zeros((n, n, 9))
    x[16, 6, 4] = 1.0
    stack = forward_project(x, m)
    peak_near = stack.peak[0].max()   # view at 0 degrees looks from -y
    peak_far = stack.peak[2].max()    # opposite view
    assert peak_near > peak_far


def test_forward_views_subset_consistent():
    m = _model()
    x = np.random.default_rng(2).random((16, 16, 16))
    full = forward_project(x, m)
    sub = forward_project(x, m, views=[2, 5])
    assert np.array_equal(sub.windows[0, 0], full.windows[0, 2])
    assert np.array_equal(sub.windows[0, 1], full.windows[0, 5])


def test_back_project_zero_is_zero():
    m = _model()
    vol = back_project(np.zeros((8, 16, 16)), m, views=np.arange(8))
    assert not vol.values.any()


def test_sensitivity_matches_explicit_matrix():
    # assemble A column by column on a tiny grid; back(ones) must equal the
    # column sums, with attenuation and blur in play
    n = 8
    mu = np.full((n, n, n), 0.008)
    m = _model(n=n, nv=n, n_views=4, mu=mu, sigma0=2.0, slope=0.01)
    sens = back_project(np.ones((4, n, n)), m, views=np.arange(4)).values
    expected = np.zeros((n, n, n))
    for j in range(n * n * n):
        e = np.zeros(n * n * n)
        e[j] = 1.0
        expected.ravel()[j] = forward_project(e.reshape(n, n, n), m).windows.sum()
    assert np.allclose(sens, expected, rtol=1e-10, atol=1e-12)


def test_sensitivity_positive_inside_fov():
    n = 16
    m = _model(n=n, nv=n)
    sens = back_project(np.ones((8, n, n)), m, views=np.arange(8)).values
    ii, jj = np.meshgrid(np.arange(n) - 7.5, np.arange(n) - 7.5, indexing="ij")
    inside = np.hypot(ii, jj) < 6.0
    assert (sens[inside, :] > 0).all()


def test_adjoint_dot_product_identity():
    rng = np.random.default_rng(7)
    n = 16
    mu = 0.01 * rng.random((n, n, n))
    m = _model(n=n, nv=n, mu=mu, sigma0=1.5, slope=0.02, calib=1.7)
    x = rng.random((n, n, n))
    p = rng.random((8, n, n))
    lhs = float(np.vdot(forward_project(x, m).peak, p))
    rhs = float(np.vdot(x, back_project(p, m, views=np.arange(8)).values))
    assert abs(lhs - rhs) / abs(lhs) < 1e-12


def test_back_project_accepts_stack_and_rows_equally():
    m = _model()
    rng = np.random.default_rng(3)
    x = rng.random((16, 16, 16))
    stack = forward_project(x, m)
    v1 = back_project(stack, m).values
    v2 = back_project(stack.peak, m, views=stack.view_indices).values
    assert np.array_equal(v1, v2)


def test_mu_map_dim_mismatch_rejected():
    mu = np.zeros((8, 8, 8))
    with pytest.raises(ValueError):
        _model(n=16, nv=16, mu=mu)


def test_forward_rejects_wrong_shape():
    m = _model()
    with pytest.raises(ValueError):
        forward_project(np.zeros((8, 8, 8)), m)
