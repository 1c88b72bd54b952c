import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cascadeseg.patching import assemble, coverage_count, extract, grid_patches, random_corner, sample_patch


def test_full_size_patch_is_whole_volume(rng):
    img = rng.random((4, 16, 16, 16)).astype(np.float32)
    lab = rng.integers(0, 3, (16, 16, 16))
    pi, pl, corner = sample_patch(img, lab, 16, rng)
    assert corner == (0, 0, 0)
    np.testing.assert_array_equal(pi, img)
    np.testing.assert_array_equal(pl, lab)


def test_corner_bounds_and_uniformity():
    rng = np.random.default_rng(0)
    corners = np.array([random_corner((128, 128, 128), 96, rng) for _ in range(10_000)])
    assert corners.min() >= 0 and corners.max() <= 32
    for axis in range(3):
        counts = np.bincount(corners[:, axis], minlength=33)
        assert stats.chisquare(counts).pvalue > 0.01


def test_images_and_labels_cropped_together(rng):
    img = np.arange(20 * 20 * 20, dtype=np.float32).reshape(1, 20, 20, 20)
    lab = np.arange(20 * 20 * 20).reshape(20, 20, 20)
    pi, pl, _ = sample_patch(img, lab, (8, 6, 4), rng)
    np.testing.assert_array_equal(pi[0], pl.astype(np.float32))


def test_patch_too_large(rng):
    with pytest.raises(ValueError, match="exceeds"):
        sample_patch(np.zeros((1, 8, 8, 8)), np.zeros((8, 8, 8)), 9, rng)


def test_foreground_bias(rng):
    lab = np.zeros((64, 64, 64), np.uint8)
    lab[50:54, 50:54, 50:54] = 2
    hits = sum(sample_patch(np.zeros((1, 64, 64, 64)), lab, 16, rng, foreground_prob=1.0)[1].any() for _ in range(50))
    assert hits == 50


def test_grid_examples():
    assert grid_patches((96, 96, 96), 96, 48) == [(0, 0, 0)]
    corners = grid_patches((128, 128, 128), 96, 48)
    assert sorted({c[0] for c in corners}) == [0, 32]
    assert len(corners) == 8


@pytest.mark.parametrize("shape,size,stride", [((8, 8, 8), 9, 4), ((8, 8, 8), 4, 5), ((8, 8, 8), 4, 0)])
def test_grid_invalid(shape, size, stride):
    with pytest.raises(ValueError):
        grid_patches(shape, size, stride)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_grid_covers_and_reassembles(data):
    shape = data.draw(st.tuples(*[st.integers(4, 20)] * 3))
    size = tuple(data.draw(st.integers(1, n)) for n in shape)
    stride = tuple(data.draw(st.integers(1, p)) for p in size)
    corners = grid_patches(shape, size, stride)
    count = coverage_count(shape, corners, size)
    assert count.min() >= 1
    # count equals the number of patches containing each voxel, checked per voxel by brute force
    probe = tuple(data.draw(st.integers(0, n - 1)) for n in shape)
    inside = sum(all(c <= v < c + p for c, v, p in zip(cr, probe, size)) for cr in corners)
    assert count[probe] == inside
    seed = data.draw(st.integers(0, 2**32 - 1))
    vol = np.random.default_rng(seed).standard_normal((2, *shape)).astype(np.float32)
    out = assemble(extract(vol, corners, size), corners, shape)
    assert np.array_equal(out, vol)


def test_overlap_average():
    a = np.zeros((4, 4, 4), np.float32)
    b = np.ones((4, 4, 4), np.float32)
    out = assemble([a, b], [(0, 0, 0), (2, 0, 0)], (6, 4, 4))
    assert np.all(out[:2] == 0) and np.all(out[2:4] == 0.5) and np.all(out[4:] == 1)


def test_single_full_patch_identity(rng):
    v = rng.random((5, 6, 7)).astype(np.float32)
    np.testing.assert_array_equal(assemble([v], [(0, 0, 0)], v.shape), v)


def test_uncovered_voxel():
    with pytest.raises(ValueError, match="not covered"):
        assemble([np.zeros((2, 2, 2))], [(0, 0, 0)], (3, 2, 2))
