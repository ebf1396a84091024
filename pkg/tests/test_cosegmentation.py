"""Saliency voting, mask building, refinement, and the end-to-end pipeline."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from util import field_from_grid, make_meta, saliency_like
from vitdesc.cosegmentation import (
    VotingConfig,
    build_masks,
    cosegment,
    refine_mask,
    refine_parts,
    segment_saliency,
    upsample_mask,
    vote_foreground,
)
from vitdesc.store import LabelMask, patch_center_px


def grid_meta(image_id="img", cells=4, dim=4):
    return make_meta(image_id=image_id, image_h=8 * cells, image_w=8 * cells,
                     patch=8, stride=8, dim=dim)


def label_mask(meta, labels):
    return LabelMask(meta, np.asarray(labels, dtype=np.int32))


class TestSegmentSaliency:
    def test_uniform_saliency(self):
        meta = grid_meta(cells=2)
        field = field_from_grid(meta, np.zeros((2, 2, 4)))
        labels = label_mask(meta, [[0, 1], [1, 0]])
        sal = saliency_like(field, np.full((2, 2), 0.4))
        assert segment_saliency(labels, sal, 0) == pytest.approx(0.4)
        assert segment_saliency(labels, sal, 1) == pytest.approx(0.4)

    def test_half_and_half(self):
        meta = grid_meta(cells=2)
        field = field_from_grid(meta, np.zeros((2, 2, 4)))
        labels = label_mask(meta, [[1, 1], [0, 0]])
        sal = saliency_like(field, [[1.0, 1.0], [0.0, 0.0]])
        assert segment_saliency(labels, sal, 1) == pytest.approx(1.0)
        assert segment_saliency(labels, sal, 0) == pytest.approx(0.0)

    def test_first_row_mean(self):
        meta = grid_meta(cells=2)
        field = field_from_grid(meta, np.zeros((2, 2, 4)))
        labels = label_mask(meta, [[1, 1], [2, 2]])
        sal = saliency_like(field, [[0.2, 0.4], [0.6, 0.8]])
        assert segment_saliency(labels, sal, 1) == pytest.approx(0.3)

    def test_absent_cluster_returns_none(self):
        meta = grid_meta(cells=2)
        field = field_from_grid(meta, np.zeros((2, 2, 4)))
        labels = label_mask(meta, [[0, 0], [0, 0]])
        sal = saliency_like(field, np.zeros((2, 2)))
        assert segment_saliency(labels, sal, 3) is None

    def test_grid_mismatch(self):
        small = grid_meta(cells=2)
        big = grid_meta(cells=3)
        field_small = field_from_grid(small, np.zeros((2, 2, 4)))
        field_big = field_from_grid(big, np.zeros((3, 3, 4)))
        with pytest.raises(ValueError):
            segment_saliency(label_mask(small, np.zeros((2, 2), dtype=int)),
                             saliency_like(field_big, np.zeros((3, 3))), 0)


class TestVoteForeground:
    def test_unanimously_salient(self):
        votes = {0: [0.9, 0.8, 0.7]}
        cfg = VotingConfig(tau=0.2, vote_fraction=1.0)
        assert vote_foreground(votes, cfg, 3) == {0}

    def test_never_salient(self):
        votes = {0: [0.1, None, 0.05]}
        cfg = VotingConfig(tau=0.2, vote_fraction=0.5)
        assert vote_foreground(votes, cfg, 3) == frozenset()

    def test_seven_of_ten(self):
        votes = {0: [0.9] * 7 + [0.0] * 3}
        assert vote_foreground(votes, VotingConfig(tau=0.2, vote_fraction=0.65),
                               10) == {0}
        assert vote_foreground(votes, VotingConfig(tau=0.2, vote_fraction=0.75),
                               10) == frozenset()

    def test_summed_reading(self):
        votes = {0: [0.05, 0.05, None], 1: [0.01, None, None]}
        cfg = VotingConfig(tau=0.08, summed_saliency=True)
        assert vote_foreground(votes, cfg, 3) == {0}

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=8),
           st.floats(0, 1), st.floats(0.05, 1), st.floats(0, 0.5), st.floats(0, 0.5))
    @settings(max_examples=80, deadline=None)
    def test_monotone_in_thresholds(self, values, tau, frac, dtau, dfrac):
        votes = {0: values}
        n = len(values)
        loose = vote_foreground(votes, VotingConfig(tau=tau, vote_fraction=frac), n)
        tight = vote_foreground(
            votes,
            VotingConfig(tau=min(1.0, tau + dtau),
                         vote_fraction=min(1.0, frac + dfrac)), n)
        assert tight <= loose

    def test_config_validation(self):
        with pytest.raises(ValueError):
            VotingConfig(tau=1.5)
        with pytest.raises(ValueError):
            VotingConfig(vote_fraction=0.0)


class TestBuildMasks:
    def test_all_and_none(self):
        meta = grid_meta(cells=2)
        labels = [label_mask(meta, [[0, 1], [2, 3]])]
        assert build_masks(labels, {0, 1, 2, 3})[0].labels.tolist() == [[1, 1], [1, 1]]
        assert build_masks(labels, set())[0].labels.tolist() == [[0, 0], [0, 0]]

    def test_checkerboard(self):
        meta = grid_meta(cells=2)
        labels = [label_mask(meta, [[0, 1], [1, 0]])]
        out = build_masks(labels, {1})[0]
        assert out.labels.tolist() == [[0, 1], [1, 0]]

    def test_pointwise_consistency(self):
        rng = np.random.default_rng(0)
        meta = grid_meta(cells=4)
        grid = rng.integers(0, 5, size=(4, 4))
        fg = {1, 3}
        out = build_masks([label_mask(meta, grid)], fg)[0]
        np.testing.assert_array_equal(out.labels == 1, np.isin(grid, list(fg)))


class TestUpsample:
    def test_patch_centers_keep_their_label(self):
        meta = make_meta(image_h=32, image_w=24, patch=8, stride=4, dim=1)
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 3, size=(meta.grid_h, meta.grid_w))
        up = upsample_mask(label_mask(meta, labels))
        assert up.shape == (32, 24)
        for r in range(meta.grid_h):
            for c in range(meta.grid_w):
                y, x = patch_center_px(r, c, meta)
                assert up[int(y), int(x)] == labels[r, c]


def two_color_image(h, w, split_col, left=(200, 30, 30), right=(30, 30, 200)):
    img = np.empty((h, w, 3), dtype=np.float64)
    img[:, :split_col] = left
    img[:, split_col:] = right
    return img


class TestRefineMask:
    def test_seed_matching_colors_is_stable(self):
        meta = make_meta(image_h=32, image_w=32, patch=8, stride=8, dim=1)
        image = two_color_image(32, 32, 16)
        seed = label_mask(meta, [[1, 1, 0, 0]] * 4)
        refined = refine_mask(seed, image)
        np.testing.assert_array_equal(refined, upsample_mask(seed) > 0)

    def test_degenerate_seed_unchanged(self):
        meta = make_meta(image_h=32, image_w=32, patch=8, stride=8, dim=1)
        image = two_color_image(32, 32, 16)
        all_fg = label_mask(meta, np.ones((4, 4), dtype=int))
        np.testing.assert_array_equal(refine_mask(all_fg, image), True)
        all_bg = label_mask(meta, np.zeros((4, 4), dtype=int))
        np.testing.assert_array_equal(refine_mask(all_bg, image), False)

    def test_offset_seed_snaps_to_color_boundary(self):
        # Colors split at pixel column 16 but the seed is one patch too wide;
        # the color models pull the mask back to the true boundary.
        meta = make_meta(image_h=32, image_w=32, patch=8, stride=8, dim=1)
        image = two_color_image(32, 32, 16)
        seed = label_mask(meta, [[1, 1, 1, 0]] * 4)
        refined = refine_mask(seed, image)
        expected = np.zeros((32, 32), dtype=bool)
        expected[:, :16] = True
        np.testing.assert_array_equal(refined, expected)

    def test_disconnected_same_color_region_dropped(self):
        # The left stripe and a far-right stripe share a color, but only the
        # component overlapping the seed survives.
        meta = make_meta(image_h=32, image_w=32, patch=8, stride=8, dim=1)
        image = two_color_image(32, 32, 8)
        image[:, 24:] = (200, 30, 30)
        seed = label_mask(meta, [[1, 0, 0, 0]] * 4)
        refined = refine_mask(seed, image)
        expected = np.zeros((32, 32), dtype=bool)
        expected[:, :8] = True
        np.testing.assert_array_equal(refined, expected)


class TestRefineParts:
    def test_two_flat_color_parts(self):
        meta = make_meta(image_h=32, image_w=32, patch=8, stride=8, dim=1)
        image = two_color_image(32, 32, 16)
        parts = label_mask(meta, [[1, 1, 2, 2]] * 4)
        refined = refine_parts(parts, image)
        assert set(np.unique(refined)) == {1, 2}
        np.testing.assert_array_equal(refined[:, :16], 1)
        np.testing.assert_array_equal(refined[:, 16:], 2)

    def test_empty_parts_give_background(self):
        meta = make_meta(image_h=32, image_w=32, patch=8, stride=8, dim=1)
        image = two_color_image(32, 32, 16)
        refined = refine_parts(label_mask(meta, np.zeros((4, 4), dtype=int)),
                               image)
        np.testing.assert_array_equal(refined, 0)


def planted_fixture(num_images=6, rng=None):
    """Images whose descriptors come from two tight, well-separated clusters.

    Foreground cells occupy a per-image block; saliency is 1 there and 0
    elsewhere.  Returns (fields, saliencies, planted binary masks).
    """
    rng = rng or np.random.default_rng(123)
    fg_mean = np.array([4.0, 0.0, 0.0, 0.0])
    bg_mean = np.array([0.0, 4.0, 0.0, 0.0])
    fields, saliencies, planted = [], {}, []
    for i in range(num_images):
        meta = grid_meta(image_id=f"img{i}", cells=4)
        mask = np.zeros((4, 4), dtype=np.int32)
        r0, c0 = i % 2, (i // 2) % 2
        mask[r0:r0 + 2, c0:c0 + 2] = 1
        grid = np.where(mask[..., None] == 1,
                        fg_mean + rng.normal(scale=0.01, size=(4, 4, 4)),
                        bg_mean + rng.normal(scale=0.01, size=(4, 4, 4)))
        field = field_from_grid(meta, grid)
        fields.append(field)
        saliencies[meta.image_id] = saliency_like(field, mask.astype(np.float64))
        planted.append(mask)
    return fields, saliencies, planted


class TestCosegment:
    def test_planted_foreground_recovered_exactly(self):
        fields, saliencies, planted = planted_fixture()
        result = cosegment(fields, saliencies, k=2, seed=0)
        assert len(result.masks) == len(fields)
        for mask, expected in zip(result.masks, planted):
            np.testing.assert_array_equal(mask.labels, expected)

    def test_missing_saliency_rejected(self):
        fields, saliencies, _ = planted_fixture()
        del saliencies["img3"]
        with pytest.raises(ValueError):
            cosegment(fields, saliencies, k=2)

    def test_augmented_fields_cluster_but_get_no_mask(self):
        fields, saliencies, planted = planted_fixture()
        extra = field_from_grid(
            make_meta(image_id="img0", image_h=32, image_w=32, patch=8,
                      stride=8, dim=4, augmented=True),
            np.asarray(fields[0].data))
        result = cosegment(fields + [extra], saliencies, k=2, seed=0)
        assert len(result.masks) == len(fields)
        for mask, expected in zip(result.masks, planted):
            np.testing.assert_array_equal(mask.labels, expected)

    def test_deterministic(self):
        fields, saliencies, _ = planted_fixture()
        a = cosegment(fields, saliencies, seed=3)
        b = cosegment(fields, saliencies, seed=3)
        assert a.chosen_k == b.chosen_k
        assert a.foreground == b.foreground
        for ma, mb in zip(a.masks, b.masks):
            np.testing.assert_array_equal(ma.labels, mb.labels)

    def test_single_image_degrades_gracefully(self):
        fields, saliencies, planted = planted_fixture(num_images=1)
        result = cosegment(fields, saliencies, k=2, seed=0)
        np.testing.assert_array_equal(result.masks[0].labels, planted[0])
