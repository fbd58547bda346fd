"""Phantom voxelization: radii, occupancy, activity, attenuation, masks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectfield.phantom import (ImageVolume, PhantomSpec, SphereSpec, VoiMask,
                                build_phantom, occupancy,
                                sphere_radius_from_volume)

VOXEL = 4.8


def test_radius_unit_sphere():
    v_ml = (4.0 * np.pi / 3.0) / 1000.0  # 1 mm radius sphere in mL
    assert sphere_radius_from_volume(v_ml) == pytest.approx(1.0, rel=1e-12)


def test_radius_zero():
    assert sphere_radius_from_volume(0.0) == 0.0


def test_radius_114ml_matches_cube_root_oracle():
    # (3 * 114000 / (4 pi))^(1/3), evaluated independently
    assert sphere_radius_from_volume(114.0) == pytest.approx(30.079601661525032, rel=1e-12)


def test_radius_rejects_negative():
    with pytest.raises(ValueError):
        sphere_radius_from_volume(-1.0)


def test_default_spec_is_the_six_sphere_ring():
    spec = PhantomSpec()
    assert np.allclose(spec.semi_axes_mm, (150.0, 110.0, 90.0))
    assert spec.background_conc == 0.035
    vols = sorted(s.volume_ml for s in spec.spheres)
    assert vols == [2.0, 4.0, 8.0, 16.0, 30.0, 114.0]
    for s in spec.spheres:
        assert s.conc == 0.22
        assert np.hypot(s.center_mm[0], s.center_mm[1]) == pytest.approx(60.0)
        assert s.center_mm[2] == 0.0
    spec.validate()
    # hot-to-warm concentration contrast from the defaults
    assert 0.22 / 0.035 == pytest.approx(6.2857, abs=0.01)


def test_mu_default_matches_published_water_attenuation():
    # log-log interpolation of tabulated water mass attenuation
    # (200 keV: 0.1370, 300 keV: 0.1186 cm^2/g) gives 0.013510 /mm at 208 keV
    assert PhantomSpec().mu_body_per_mm == pytest.approx(0.013510, rel=0.01)


def test_spec_rejects_sphere_outside_body():
    spec = PhantomSpec(semi_axes_mm=(40.0, 40.0, 40.0),
                       spheres=[SphereSpec((38.0, 0.0, 0.0), 8.0, 0.2)])
    with pytest.raises(ValueError):
        spec.validate()


def test_spec_rejects_overlapping_spheres():
    spec = PhantomSpec(semi_axes_mm=(60.0, 60.0, 60.0),
                       spheres=[SphereSpec((10.0, 0.0, 0.0), 8.0, 0.2),
                                SphereSpec((-10.0, 0.0, 0.0), 30.0, 0.2)])
    with pytest.raises(ValueError):
        spec.validate()


def test_spec_dict_roundtrip():
    spec = PhantomSpec()
    back = PhantomSpec.from_dict(spec.to_dict())
    assert back.to_dict() == spec.to_dict()


@settings(max_examples=40, deadline=None)
@given(cx=st.floats(-20, 20), cy=st.floats(-20, 20), r=st.floats(2, 25),
       sub=st.integers(1, 3))
def test_occupancy_stays_in_unit_interval(cx, cy, r, sub):
    occ = occupancy((16, 16, 16), (VOXEL,) * 3, (cx, cy, 0.0), (r, r, r), sub)
    assert occ.min() >= 0.0
    assert occ.max() <= 1.0


def test_occupancy_of_off_grid_shape_is_zero():
    occ = occupancy((16, 16, 16), (VOXEL,) * 3, (500.0, 0.0, 0.0), (5.0, 5.0, 5.0))
    assert not occ.any()


def test_voxelized_volume_error_shrinks_with_subsampling():
    # statistical form: averaged over jittered centers, finer subvoxel
    # sampling estimates each sphere volume better (single placements can
    # luck into a small error at coarse sampling)
    rng = np.random.default_rng(42)
    centers = rng.uniform(-2.4, 2.4, size=(8, 3))
    for v in (2.0, 4.0, 8.0, 16.0, 30.0, 114.0):
        r = sphere_radius_from_volume(v)
        means = []
        for sub in (1, 2, 3):
            errs = [abs(occupancy((24,) * 3, (VOXEL,) * 3, c, (r,) * 3, sub).sum()
                        * VOXEL**3 / 1000.0 - v) for c in centers]
            means.append(np.mean(errs))
        assert means[2] <= means[1] <= means[0], f"volume {v}: {means}"
        assert means[2] < means[0]


def test_interior_sphere_total_activity():
    # lone sphere, no background: summed activity approximates conc x volume
    spec = PhantomSpec(semi_axes_mm=(40.0, 40.0, 40.0), background_conc=0.0,
                       spheres=[SphereSpec((0.7, -0.3, 0.4), 8.0, 0.22)])
    ph = build_phantom(spec, dims=(20, 20, 20), voxel_mm=VOXEL)
    assert ph.activity.values.sum() == pytest.approx(0.22 * 8.0, rel=0.02)


def test_no_sphere_phantom_is_uniform_inside():
    spec = PhantomSpec(semi_axes_mm=(30.0, 25.0, 20.0), background_conc=0.05,
                       spheres=[])
    ph = build_phantom(spec, dims=(16, 16, 16), voxel_mm=VOXEL)
    occ = occupancy((16, 16, 16), (VOXEL,) * 3, (0.0, 0.0, 0.0),
                    spec.semi_axes_mm)
    interior = occ == 1.0
    expected = 0.05 * VOXEL**3 / 1000.0
    assert interior.any()
    assert np.allclose(ph.activity.values[interior], expected)
    assert [m.role for m in ph.masks] == ["background"]


def test_sphere_to_background_voxel_ratio():
    ph = build_phantom(PhantomSpec(), dims=(96, 64, 48), voxel_mm=VOXEL)
    hot = max(ph.activity.values[m.values].max() for m in ph.masks if m.role == "sphere")
    warm = ph.activity.values[ph.background_mask].max()
    assert hot / warm == pytest.approx(6.3, abs=0.1)


def test_masks_partition_and_roles():
    ph = build_phantom(PhantomSpec(), dims=(96, 64, 48), voxel_mm=VOXEL)
    spheres = [m for m in ph.masks if m.role == "sphere"]
    assert len(spheres) == 6
    bkg = ph.background_mask
    for m in spheres:
        assert not (bkg & m.values).any()
        assert m.values.any()
    # sphere masks are mutually disjoint as well
    total = np.zeros_like(bkg, dtype=int)
    for m in spheres:
        total += m.values
    assert total.max() <= 1


def test_sphere_masks_sorted_by_volume():
    ph = build_phantom(PhantomSpec(), dims=(96, 64, 48), voxel_mm=VOXEL)
    vols = [v for v, _ in ph.sphere_masks()]
    assert vols == sorted(vols)
    # voxel counts should grow with nominal volume
    counts = [m.values.sum() for _, m in ph.sphere_masks()]
    assert all(a < b for a, b in zip(counts, counts[1:]))


def test_attenuation_support_matches_activity_support():
    spec = PhantomSpec(semi_axes_mm=(30.0, 25.0, 20.0), background_conc=0.05,
                       spheres=[SphereSpec((10.0, 0.0, 0.0), 2.0, 0.4)])
    ph = build_phantom(spec, dims=(16, 16, 16), voxel_mm=VOXEL)
    assert np.array_equal(ph.activity.values > 0, ph.mu_map.values > 0)
    interior = occupancy((16, 16, 16), (VOXEL,) * 3, (0.0, 0.0, 0.0),
                         spec.semi_axes_mm) == 1.0
    assert np.allclose(ph.mu_map.values[interior], spec.mu_body_per_mm)


def test_build_rejects_grid_smaller_than_body():
    with pytest.raises(ValueError):
        build_phantom(PhantomSpec(), dims=(16, 16, 16), voxel_mm=VOXEL)


def test_image_volume_validation():
    with pytest.raises(ValueError):
        ImageVolume(np.zeros((4, 8, 8)), VOXEL)  # below minimum dims
    with pytest.raises(ValueError):
        ImageVolume(np.full((8, 8, 8), -1.0), VOXEL)
    vol = ImageVolume(np.ones((8, 8, 8)), VOXEL)
    assert vol.voxel_mm == (VOXEL, VOXEL, VOXEL)
    assert vol.dims == (8, 8, 8)


def test_voi_mask_validation():
    with pytest.raises(ValueError):
        VoiMask("m", np.zeros((8, 8, 8), dtype=bool), "sphere")
    with pytest.raises(ValueError):
        VoiMask("m", np.ones((8, 8, 8), dtype=bool), "organ")
