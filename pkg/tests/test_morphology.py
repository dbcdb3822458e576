import numpy as np
import pytest

from cystseg.errors import ValidationError
from cystseg.morphology import boundary_map, dilate, disk, erode


def direct_dilate(mask, offsets):
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for r, c in zip(*np.nonzero(mask)):
        for dr, dc in offsets:
            if 0 <= r + dr < h and 0 <= c + dc < w:
                out[r + dr, c + dc] = True
    return out


def direct_erode(mask, offsets):
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for r in range(h):
        for c in range(w):
            out[r, c] = all(
                0 <= r + dr < h and 0 <= c + dc < w and mask[r + dr, c + dc] for dr, dc in offsets
            )
    return out


def test_disk_offsets():
    assert len(disk(1).offsets) == 5
    assert len(disk(2).offsets) == 13
    assert (2, 0) in disk(2).offsets and (2, 1) not in disk(2).offsets


@pytest.mark.parametrize("radius", [0, -1, 1.5])
def test_disk_rejects_bad_radius(radius):
    with pytest.raises(ValidationError):
        disk(radius)


def test_single_pixel_dilation():
    mask = np.zeros((11, 11), dtype=bool)
    mask[5, 5] = True
    out = dilate(mask, disk(2))
    assert out.sum() == 13
    assert not erode(mask, disk(2)).any()


def test_trivial_masks():
    empty = np.zeros((6, 6), dtype=bool)
    full = np.ones((6, 6), dtype=bool)
    assert not dilate(empty, disk(2)).any()
    assert dilate(full, disk(2)).all()


def test_erode_full_grid_shrinks_from_border():
    out = erode(np.ones((11, 11), dtype=bool), disk(2))
    expected = np.zeros((11, 11), dtype=bool)
    expected[2:9, 2:9] = True
    np.testing.assert_array_equal(out, expected)


@pytest.mark.parametrize("radius", [1, 2, 3])
def test_against_offset_oracle(radius):
    rng = np.random.default_rng(radius)
    se = disk(radius)
    for _ in range(40):
        mask = rng.random((14, 12)) < rng.uniform(0.1, 0.9)
        np.testing.assert_array_equal(dilate(mask, se), direct_dilate(mask, se.offsets))
        np.testing.assert_array_equal(erode(mask, se), direct_erode(mask, se.offsets))
        # closing is extensive away from the image border
        closed = erode(dilate(mask, se), se)
        inner = (slice(radius * 2, -radius * 2), slice(radius * 2, -radius * 2))
        assert np.all(closed[inner] >= mask[inner])


def test_duality_away_from_border():
    rng = np.random.default_rng(9)
    se = disk(2)
    mask = rng.random((20, 20)) < 0.6
    lhs = erode(mask, se)
    rhs = ~dilate(~mask, se)
    np.testing.assert_array_equal(lhs[2:-2, 2:-2], rhs[2:-2, 2:-2])


def test_boundary_of_square():
    labels = np.zeros((20, 20), dtype=np.int32)
    labels[7:13, 7:13] = 1
    band = boundary_map(labels, 2)
    square = labels > 0
    expected = direct_dilate(square, disk(2).offsets) & ~direct_erode(square, disk(2).offsets)
    np.testing.assert_array_equal(band, expected)
    assert not band[9:11, 9:11].any()
    assert band[7:9, 7:13].all()


def test_boundary_empty_and_gap():
    assert not boundary_map(np.zeros((5, 5), dtype=np.int32)).any()
    labels = np.zeros((10, 11), dtype=np.int32)
    labels[2:8, 1:5] = 1
    labels[2:8, 6:10] = 2
    band = boundary_map(labels, 2)
    assert band[2:8, 5].all()


def test_boundary_keeps_seam_between_touching_instances():
    labels = np.zeros((12, 12), dtype=np.int32)
    labels[2:10, 2:6] = 1
    labels[2:10, 6:10] = 2
    band = boundary_map(labels, 1)
    # the merged blob would have no band along column 5/6
    assert band[4:8, 5].all() and band[4:8, 6].all()


def test_boundary_contains_perimeter_and_excludes_core(discs):
    labels = discs((80, 80), [(20, 20), (20, 56), (58, 40)], 12)
    band = boundary_map(labels, 2)
    se = disk(2)
    for label in (1, 2, 3):
        inst = labels == label
        perimeter = inst & ~erode(inst, disk(1))
        assert np.all(band[perimeter])
        assert not np.any(band & erode(inst, se))
