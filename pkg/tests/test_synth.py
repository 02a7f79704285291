import numpy as np
import pytest

from hybridreg.metrics import jacobian_determinant
from hybridreg.resample import warp, warp_nearest
from hybridreg.synth import (BACKGROUND, PhantomSpec, invert_field, make_pair, make_phantom,
                             make_smooth_field)
from hybridreg.volume_core import DisplacementField


def test_empty_phantom():
    img, lab = make_phantom(PhantomSpec(dims=(16, 16, 16), num_blobs=0))
    assert np.all(img.data == BACKGROUND) and np.all(lab.labels == 0)


def test_single_blob_count():
    spec = PhantomSpec(dims=(16, 16, 16), blobs=[((7.5, 7.5, 7.5), (3, 3, 3))],
                       intensity_contrast=[0.5])
    _, lab = make_phantom(spec)
    # voxel-inclusion oracle: centre offsets are half-integers, radius 3
    count = 0
    for i in range(16):
        for j in range(16):
            for k in range(16):
                if (i - 7.5) ** 2 + (j - 7.5) ** 2 + (k - 7.5) ** 2 <= 9:
                    count += 1
    assert count > 0
    assert int((lab.labels == 1).sum()) == count


def test_phantom_deterministic_and_clipped():
    spec = PhantomSpec(dims=(20, 18, 16), num_blobs=4, seed=3)
    a, b = make_phantom(spec), make_phantom(spec)
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].labels, b[1].labels)
    assert a[1].num_classes == 5
    clipped = PhantomSpec(dims=(16, 16, 16), blobs=[((0, 0, 0), (6, 6, 6))],
                          intensity_contrast=[0.3])
    _, lab = make_phantom(clipped)
    assert lab.labels[0, 0, 0] == 1 and lab.labels[15, 15, 15] == 0


def test_spec_validation():
    with pytest.raises(ValueError):
        PhantomSpec(num_blobs=300)
    with pytest.raises(ValueError):
        PhantomSpec(noise_sigma=-1.0)


def test_smooth_field_examples():
    z = make_smooth_field((8, 8, 8), 0.0, 4.0)
    assert np.all(z.field.components == 0)
    assert np.all(jacobian_determinant(z.field).data == 1)
    gt = make_smooth_field((32, 32, 32), 2.0, 4.0, seed=5)
    assert jacobian_determinant(gt.field).data.min() > 0.05
    mag = np.sqrt(np.sum(gt.field.components ** 2, axis=0))
    assert mag.max() == pytest.approx(2.0, rel=1e-12)
    again = make_smooth_field((32, 32, 32), 2.0, 4.0, seed=5)
    np.testing.assert_array_equal(gt.field.components, again.field.components)


def test_smooth_field_rejection_limit():
    with pytest.raises(RuntimeError):
        make_smooth_field((16, 16, 16), 40.0, 1.0)


def test_invert_field_composes_to_identity():
    gt = make_smooth_field((24, 24, 24), 2.0, 5.0, seed=1)
    inv = invert_field(gt.field)
    from hybridreg.resample import identity_grid, interpolate
    u, v = gt.field.components, inv.components
    grid = identity_grid(u.shape[1:])
    # fixed-point condition v(y) = -u(y + v(y)) holds to solver precision
    assert np.abs(v + interpolate(u, grid + v)).max() < 1e-10
    # the reverse composition is limited by interpolating v itself
    assert np.abs(u + interpolate(v, grid + u))[:, 3:-3, 3:-3, 3:-3].max() < 0.05


def test_pair_zero_field():
    spec = PhantomSpec(dims=(16, 16, 16), num_blobs=3)
    m, f, ml, fl = make_pair(spec, DisplacementField.zeros(spec.dims))
    np.testing.assert_array_equal(m.data, f.data)
    np.testing.assert_array_equal(ml.labels, fl.labels)


def centroid(mask):
    return np.argwhere(mask).mean(axis=0)


def test_pair_constant_shift():
    spec = PhantomSpec(dims=(24, 24, 24), blobs=[((11, 12, 11), (4, 5, 4))],
                       intensity_contrast=[0.6])
    u = np.zeros((3, 24, 24, 24))
    u[0], u[2] = 2.0, -1.0
    m, f, ml, fl = make_pair(spec, DisplacementField(u))
    # warp(moving, u) ~ fixed means the moving blob sits at x + u
    shift = centroid(ml.labels == 1) - centroid(fl.labels == 1)
    np.testing.assert_allclose(shift, [2.0, 0.0, -1.0], atol=0.5)
    back = warp_nearest(ml, DisplacementField(u))
    np.testing.assert_array_equal(back.labels[3:-3, 3:-3, 3:-3], fl.labels[3:-3, 3:-3, 3:-3])


def test_pair_noise_reproducible():
    spec = PhantomSpec(dims=(16, 16, 16), noise_sigma=0.05, seed=2)
    gt = make_smooth_field(spec.dims, 1.0, 3.0, seed=2)
    a, b = make_pair(spec, gt), make_pair(spec, gt)
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)
    clean = make_pair(PhantomSpec(dims=(16, 16, 16), seed=2), gt)
    assert np.std(a[1].data - clean[1].data) == pytest.approx(0.05, rel=0.1)


def test_pair_recovered_by_ground_truth():
    spec = PhantomSpec(dims=(48, 48, 48), num_blobs=5, seed=0)
    gt = make_smooth_field(spec.dims, 3.0, 6.0, seed=0)
    m, f, _, _ = make_pair(spec, gt)
    err = np.abs(warp(m, gt.field).data - f.data).mean()
    assert err < 0.02
