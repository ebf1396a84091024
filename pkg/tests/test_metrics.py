"""Overlap, agreement, keypoint, and landmark-regression metrics."""

import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from util import make_meta
from vitdesc.metrics import (
    jaccard,
    landmark_regression_error,
    nmi_ari,
    part_centroid_features,
    pck,
    precision_px,
)
from vitdesc.store import LabelMask


def oracle_nmi_ari(pred, gt):
    """Counter-based reimplementation, independent of the library internals."""
    n = len(pred)
    joint = Counter(zip(pred, gt))
    pc = Counter(pred)
    gc = Counter(gt)
    mi = sum((nij / n) * math.log(n * nij / (pc[p] * gc[g]))
             for (p, g), nij in joint.items())
    mi = max(0.0, mi)
    hp = -sum((v / n) * math.log(v / n) for v in pc.values())
    hg = -sum((v / n) * math.log(v / n) for v in gc.values())
    if hp == 0.0 and hg == 0.0:
        nmi = 1.0
    elif mi == 0.0:
        nmi = 0.0
    else:
        nmi = min(1.0, mi / ((hp + hg) / 2.0))

    def c2(v):
        return v * (v - 1) // 2

    s = sum(c2(v) for v in joint.values())
    sa = sum(c2(v) for v in pc.values())
    sb = sum(c2(v) for v in gc.values())
    exp = sa * sb / c2(n)
    mx = (sa + sb) / 2.0
    ari = 1.0 if mx == exp else (s - exp) / (mx - exp)
    return nmi, ari


class TestJaccard:
    def test_one_third(self):
        assert jaccard([1, 1, 0], [0, 1, 1]) == pytest.approx(1 / 3)

    def test_identical(self):
        assert jaccard([1, 0, 1], [1, 0, 1]) == 1.0

    def test_disjoint(self):
        assert jaccard([1, 0], [0, 1]) == 0.0

    def test_both_empty(self):
        assert jaccard([0, 0], [0, 0]) == 1.0

    def test_one_empty(self):
        assert jaccard([0, 0], [1, 0]) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            jaccard([1, 0], [1, 0, 0])

    @given(st.lists(st.booleans(), min_size=1, max_size=40),
           st.lists(st.booleans(), min_size=1, max_size=40))
    @settings(max_examples=60, deadline=None)
    def test_bounds_and_symmetry(self, a, b):
        m = min(len(a), len(b))
        a, b = a[:m], b[:m]
        j = jaccard(a, b)
        assert 0.0 <= j <= 1.0
        assert j == jaccard(b, a)


class TestPrecision:
    def test_three_of_four(self):
        assert precision_px([1, 1, 0, 0], [1, 1, 0, 1]) == pytest.approx(0.75)

    def test_identical_and_inverted(self):
        assert precision_px([1, 0], [1, 0]) == 1.0
        assert precision_px([1, 0], [0, 1]) == 0.0

    def test_2d_masks(self):
        pred = np.array([[1, 0], [0, 0]])
        gt = np.array([[1, 1], [0, 0]])
        assert precision_px(pred, gt) == pytest.approx(0.75)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            precision_px([], [])


# Hand-computed reference for pred=[0,0,1,1,2,2] against gt=[0,0,1,1,1,2]:
#   contingency [[2,0,0],[0,2,0],[0,1,1]], a=(2,2,2), b=(2,3,1), n=6
#   MI = ln(3)/2 + ln(2)/3, H_pred = ln(3), H_gt = ln(3)/3 + ln(2)/2 + ln(6)/6
#   ARI = (2 - 0.8) / (3.5 - 0.8) = 4/9
FROZEN_PRED = [0, 0, 1, 1, 2, 2]
FROZEN_GT = [0, 0, 1, 1, 1, 2]
FROZEN_NMI = 0.73966737680075922
FROZEN_ARI = 0.44444444444444442


class TestNmiAri:
    def test_frozen_reference(self):
        nmi, ari = nmi_ari(FROZEN_PRED, FROZEN_GT)
        assert nmi == pytest.approx(FROZEN_NMI, abs=1e-9)
        assert ari == pytest.approx(FROZEN_ARI, abs=1e-9)

    def test_frozen_values_match_independent_oracle(self):
        nmi, ari = oracle_nmi_ari(FROZEN_PRED, FROZEN_GT)
        assert nmi == pytest.approx(FROZEN_NMI, abs=1e-12)
        assert ari == pytest.approx(FROZEN_ARI, abs=1e-12)
        mi = math.log(3) / 2 + math.log(2) / 3
        mean_h = (math.log(3) + math.log(3) / 3 + math.log(2) / 2
                  + math.log(6) / 6) / 2
        assert nmi == pytest.approx(mi / mean_h, abs=1e-12)
        assert ari == pytest.approx(4 / 9, abs=1e-12)

    def test_perfect_agreement(self):
        assert nmi_ari([0, 1, 2, 1], [5, 9, 7, 9]) == (1.0, 1.0)

    def test_single_sample(self):
        assert nmi_ari([3], [8]) == (1.0, 1.0)

    def test_both_single_cluster(self):
        assert nmi_ari([1, 1, 1], [2, 2, 2]) == (1.0, 1.0)

    def test_constant_prediction_scores_zero(self):
        nmi, ari = nmi_ari([4, 4, 4, 4], [0, 0, 1, 1])
        assert nmi == 0.0
        assert ari == 0.0

    def test_foreground_only_drops_background(self):
        nmi, ari = nmi_ari([5, 5, 7], [0, 1, 1], foreground_only=True)
        assert (nmi, ari) == (0.0, 0.0)
        with pytest.raises(ValueError):
            nmi_ari([5, 5], [0, 0], foreground_only=True)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            nmi_ari([0, 1], [0, 1, 2])

    @given(st.lists(st.integers(0, 4), min_size=2, max_size=30, unique=False))
    @settings(max_examples=80, deadline=None)
    def test_against_oracle(self, gt):
        rng = np.random.default_rng(len(gt))
        pred = rng.integers(0, 4, size=len(gt)).tolist()
        got = nmi_ari(pred, gt)
        want = oracle_nmi_ari(pred, gt)
        assert got[0] == pytest.approx(want[0], abs=1e-12)
        assert got[1] == pytest.approx(want[1], abs=1e-12)
        assert 0.0 <= got[0] <= 1.0
        assert -1.0 <= got[1] <= 1.0

    def test_label_permutation_invariance(self):
        pred = [0, 0, 1, 1, 2, 2, 2]
        gt = [1, 1, 0, 0, 2, 2, 1]
        renamed = [{0: 9, 1: 4, 2: 0}[v] for v in pred]
        assert nmi_ari(pred, gt) == nmi_ari(renamed, gt)

    def test_symmetry(self):
        pred = [0, 0, 1, 2, 2, 1]
        gt = [1, 1, 0, 0, 2, 2]
        assert nmi_ari(pred, gt) == pytest.approx(nmi_ari(gt, pred))


class TestPck:
    def test_boundary_inclusive_half(self):
        gt = [(50.0, 50.0)] * 4
        pred = [(50.0, 55.0), (50.0, 60.0), (50.0, 60.01), (50.0, 80.0)]
        assert pck(pred, gt, alpha=0.1, image_h=100, image_w=100) == pytest.approx(50.0)

    def test_all_exact(self):
        pts = [(3.0, 4.0), (10.0, 10.0)]
        assert pck(pts, pts, alpha=0.05, image_h=64, image_w=64) == 100.0

    def test_uses_longer_side(self):
        # radius = 0.1 * max(100, 200) = 20
        assert pck([(0.0, 20.0)], [(0.0, 0.0)], 0.1, 100, 200) == 100.0
        assert pck([(0.0, 20.0)], [(0.0, 0.0)], 0.1, 100, 50) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            pck([], [], 0.1, 10, 10)
        with pytest.raises(ValueError):
            pck([(0, 0)], [(0, 0), (1, 1)], 0.1, 10, 10)
        with pytest.raises(ValueError):
            pck([(0, 0)], [(0, 0)], 0.0, 10, 10)


def one_cell_mask(cell, image_id="img"):
    meta = make_meta(image_id=image_id, image_h=32, image_w=32, patch=8,
                     stride=8, dim=1)
    labels = np.zeros((4, 4), dtype=np.int32)
    labels[cell] = 1
    return LabelMask(meta, labels)


class TestPartCentroidFeatures:
    def test_single_cell(self):
        feats = part_centroid_features(one_cell_mask((0, 0)), 1)
        np.testing.assert_allclose(feats, [3.5 / 32, 3.5 / 32])
        feats = part_centroid_features(one_cell_mask((3, 1)), 1)
        np.testing.assert_allclose(feats, [27.5 / 32, 11.5 / 32])

    def test_full_grid_equals_fallback(self):
        meta = make_meta(image_h=32, image_w=32, patch=8, stride=8, dim=1)
        full = LabelMask(meta, np.ones((4, 4), dtype=np.int32))
        empty = LabelMask(meta, np.zeros((4, 4), dtype=np.int32))
        np.testing.assert_allclose(part_centroid_features(full, 1),
                                   part_centroid_features(empty, 1))

    def test_absent_part_uses_fallback(self):
        feats = part_centroid_features(one_cell_mask((0, 0)), 2)
        grid_mean = (3.5 + 8 * 1.5) / 32  # mean of centers 3.5,11.5,19.5,27.5
        np.testing.assert_allclose(feats[2:], [grid_mean, grid_mean])


class TestLandmarkRegression:
    CELLS = [(0, 0), (0, 3), (3, 0), (3, 3), (1, 2), (2, 1)]

    def masks_and_centers(self):
        masks = [one_cell_mask(c, image_id=f"img{i}")
                 for i, c in enumerate(self.CELLS)]
        centers = [np.array([[r * 8 + 3.5, c * 8 + 3.5]])
                   for (r, c) in self.CELLS]
        return masks, centers

    def test_exact_linear_relation_scores_zero(self):
        masks, centers = self.masks_and_centers()
        result = landmark_regression_error(masks, centers,
                                           train_indices=[0, 1, 2, 3],
                                           test_indices=[4, 5])
        assert not result.used_ridge
        assert result.error == pytest.approx(0.0, abs=1e-8)

    def test_constant_landmarks_use_ridge_and_score_zero(self):
        masks = [one_cell_mask((1, 1), image_id=f"img{i}") for i in range(4)]
        landmarks = [np.array([[16.0, 16.0]])] * 4
        result = landmark_regression_error(masks, landmarks, [0, 1], [2, 3])
        assert result.used_ridge
        assert result.error == pytest.approx(0.0, abs=1e-6)

    def test_noise_floor_matches_gaussian_norm(self):
        rng = np.random.default_rng(17)
        n = 400
        sigma_px = 0.32  # 0.01 in normalized coordinates
        cells = [(int(r), int(c))
                 for r, c in zip(rng.integers(0, 4, n), rng.integers(0, 4, n))]
        masks = [one_cell_mask(cell, image_id=f"img{i}")
                 for i, cell in enumerate(cells)]
        landmarks = [
            np.array([[r * 8 + 3.5, c * 8 + 3.5]]) + rng.normal(scale=sigma_px,
                                                                size=(1, 2))
            for (r, c) in cells
        ]
        result = landmark_regression_error(masks, landmarks,
                                           train_indices=list(range(200)),
                                           test_indices=list(range(200, n)))
        expected = 100.0 * (sigma_px / 32.0) * math.sqrt(math.pi / 2.0)
        assert abs(result.error - expected) / expected < 0.20

    def test_validation(self):
        masks, centers = self.masks_and_centers()
        with pytest.raises(ValueError):
            landmark_regression_error(masks, centers[:-1], [0], [1])
        with pytest.raises(ValueError):
            landmark_regression_error(masks, centers, [], [1])
        with pytest.raises(ValueError):
            landmark_regression_error(masks, centers, [0], [])
        bad = list(centers)
        bad[2] = np.array([[1.0, 1.0], [2.0, 2.0]])
        with pytest.raises(ValueError):
            landmark_regression_error(masks, bad, [0, 1], [2])
