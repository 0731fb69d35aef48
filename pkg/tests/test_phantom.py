import math

import numpy as np
import pytest
from scipy import ndimage

from oracles import brute_edt_sq
from sdmseg.edt import sdm_from_labels
from sdmseg.errors import DomainError
from sdmseg.phantom import PhantomSpec, corrupt_slicewise, generate, inject_decoy, rasterize


def ball_volume(r):
    return 4 / 3 * math.pi * r**3


def test_sphere_count_within_geometric_bounds():
    _, lab = generate(PhantomSpec(radii=((5, 5, 5),)))
    n = int(lab.data.sum())
    h = math.sqrt(3) / 2
    assert ball_volume(5 - h) <= n <= ball_volume(5 + h)


def test_deterministic_per_seed():
    spec = PhantomSpec(seed=42, blur_mm=0.8, fg_std=0.3)
    a, la = generate(spec)
    b, lb = generate(spec)
    assert np.array_equal(a.data, b.data) and np.array_equal(la.data, lb.data)
    c, _ = generate(PhantomSpec(seed=43, blur_mm=0.8, fg_std=0.3))
    assert not np.array_equal(a.data, c.data)


def test_two_lobe_is_one_component():
    spec = PhantomSpec(dims=(24, 16, 16), shape="two-lobe",
                       centres=((8.0, 7.5, 7.5), (14.0, 7.5, 7.5)), radii=((4, 3, 3), (5, 3.5, 3)))
    _, lab = generate(spec)
    _, n = ndimage.label(lab.data, ndimage.generate_binary_structure(3, 1))
    assert n == 1


def test_margin_enforced():
    with pytest.raises(DomainError):
        PhantomSpec(radii=((7, 7, 7),))
    with pytest.raises(DomainError):
        PhantomSpec(shape="banana")


def test_spec_json_round_trip():
    spec = PhantomSpec(shape="ellipsoid", radii=((4, 3, 2),), seed=9, decoy_count=1)
    assert PhantomSpec.from_json(spec.to_json()) == spec
    with pytest.raises(DomainError):
        PhantomSpec.from_json('{"colour": 1}')


def test_labels_satisfy_sdm_round_trip():
    _, lab = generate(PhantomSpec(shape="ellipsoid", radii=((5, 4, 3),)))
    assert np.array_equal(sdm_from_labels(lab, 1).data < 0, lab.data == 1)


def _second_diff(mask):
    area = mask.sum(axis=(0, 1)).astype(float)
    return float(np.abs(np.diff(area, 2)).sum())


def test_corruption_identity_at_zero():
    _, lab = generate(PhantomSpec())
    assert corrupt_slicewise(lab, 0, 1) is lab


def test_corruption_adds_z_jaggedness():
    _, lab = generate(PhantomSpec())
    rough = corrupt_slicewise(lab, 2, seed=5)
    assert _second_diff(rough.data) > 2 * _second_diff(lab.data)
    assert np.array_equal(rough.data, corrupt_slicewise(lab, 2, seed=5).data)
    nonempty = lab.data.any(axis=(0, 1))
    assert np.array_equal(rough.data.any(axis=(0, 1)), nonempty)


def test_corruption_keeps_thin_slices():
    data = np.zeros((8, 8, 4), np.uint8)
    data[3, 3, 1] = 1
    data[2:5, 2:5, 2] = 1
    from sdmseg.volume import LabelVolume

    lab = LabelVolume(data)
    for seed in range(10):
        out = corrupt_slicewise(lab, 3, seed)
        assert out.data[:, :, 1].any() and out.data[:, :, 2].any()
        assert not out.data[:, :, 0].any()


def test_no_decoys_identity():
    spec = PhantomSpec()
    img, _ = generate(spec)
    assert inject_decoy(img, spec) is img


@pytest.mark.parametrize("seed", range(4))
def test_decoys_far_from_organ_and_foreground_like(seed):
    spec = PhantomSpec(dims=(24, 24, 24), radii=((4, 4, 4),), decoy_count=2,
                       decoy_radius_mm=2.0, decoy_margin_mm=5.0, fg_std=0.2, seed=seed)
    img, lab = generate(spec)
    out = inject_decoy(img, spec)
    changed = out.data != img.data
    assert changed.any()
    assert np.array_equal(lab.data.astype(bool), rasterize(spec))
    # every painted voxel lies within decoy_radius of a centre at least margin away
    d = np.sqrt(brute_edt_sq(lab.data == 1, spec.spacing))
    assert d[changed].min() >= spec.decoy_margin_mm - spec.decoy_radius_mm - 1e-9
    vals = out.data[changed]
    assert abs(vals.mean() - spec.fg_mean) < 2 * spec.fg_std
    assert abs(vals.std() - spec.fg_std) < 2 * spec.fg_std


def test_decoy_without_room():
    spec = PhantomSpec(dims=(12, 12, 12), radii=((3, 3, 3),), decoy_count=1, decoy_margin_mm=20)
    img, _ = generate(spec)
    with pytest.raises(DomainError):
        inject_decoy(img, spec)
