import numpy as np
import pytest

from promptseg.encoders import synth_scene
from promptseg.errors import ContractError, DimensionError, EmptyMaskError
from promptseg.geometry import BBox
from promptseg.numerics import Tensor
from promptseg.proposals import binarize_and_split, score_map, tight_bbox


def brute_force_scores(xi, xt):
    """Independent per-pixel cosine oracle."""
    h, w, d = xi.shape
    c = xt.shape[1]
    out = np.zeros((h, w, c))
    for r in range(h):
        for col in range(w):
            v = xi[r, col]
            nv = np.linalg.norm(v)
            if nv == 0:
                continue
            for k in range(c):
                u = xt[:, k]
                nu = np.linalg.norm(u)
                if nu == 0:
                    continue
                out[r, col, k] = (v / nv) @ (u / nu)
    return out


class TestScoreMap:
    def test_orthonormal_one_hot(self):
        xt = Tensor(np.eye(3))
        xi = np.zeros((2, 2, 3))
        xi[0, 1] = [0.0, 0.0, 5.0]  # scaled basis vector, cosine still 1
        scores = score_map(Tensor(xi), xt).data
        np.testing.assert_allclose(scores[0, 1], [0.0, 0.0, 1.0], atol=1e-12)

    def test_zero_pixel_scores_zero(self):
        xt = Tensor(np.eye(3))
        scores = score_map(Tensor(np.zeros((2, 2, 3))), xt).data
        np.testing.assert_array_equal(scores, np.zeros((2, 2, 3)))

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        xi = rng.normal(size=(4, 4, 8))
        xt = rng.normal(size=(8, 3))
        got = score_map(Tensor(xi), Tensor(xt)).data
        np.testing.assert_allclose(got, brute_force_scores(xi, xt), atol=1e-5)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            score_map(Tensor(np.zeros((2, 2, 5))), Tensor(np.zeros((4, 3))))

    def test_l2_range(self):
        rng = np.random.default_rng(1)
        scores = score_map(Tensor(rng.normal(size=(5, 5, 6))),
                           Tensor(rng.normal(size=(6, 4)))).data
        assert scores.min() >= -1.0 and scores.max() <= 1.0

    def test_minmax_range(self):
        rng = np.random.default_rng(2)
        scores = score_map(Tensor(rng.normal(size=(5, 5, 6))),
                           Tensor(rng.normal(size=(6, 4))), mode="minmax").data
        assert scores.min() >= 0.0 and scores.max() <= 1.0


class TestTightBBox:
    def test_two_pixels(self):
        mask = np.zeros((5, 6), dtype=bool)
        mask[1, 1] = mask[3, 4] = True
        assert tight_bbox(mask) == BBox(1, 1, 3, 4)

    def test_single_pixel(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[2, 2] = True
        assert tight_bbox(mask) == BBox(2, 2, 2, 2)

    def test_empty_mask(self):
        with pytest.raises(EmptyMaskError):
            tight_bbox(np.zeros((3, 3), dtype=bool))


def _one_hot_scores(masks, num_channels, shape):
    """Score tensor with 1.0 inside each mask's channel, 0 elsewhere."""
    scores = np.zeros(shape + (num_channels,))
    for mask, c in masks:
        scores[:, :, c] = np.where(mask, 1.0, scores[:, :, c])
    return Tensor(scores)


class TestBinarizeAndSplit:
    def test_all_below_tau_is_empty(self):
        out = binarize_and_split(Tensor(np.full((4, 4, 2), 0.1)), 0.5, 1)
        assert len(out) == 0

    def test_two_disjoint_boxes_same_class(self, small_fixture):
        bank, _ = small_fixture
        layout = [(BBox(1, 1, 4, 4), 1), (BBox(7, 6, 10, 10), 1)]
        scene = synth_scene(bank, layout, 0.0, seed=0, height=12, width=12)
        scores = score_map(scene.pixel_features, bank.embeddings)
        props = binarize_and_split(scores, 0.5, 1)
        assert len(props) == 2
        for prop, (gt_mask, gt_class) in zip(props, scene.gt_masks):
            np.testing.assert_array_equal(prop.mask, gt_mask)
            assert prop.class_id == gt_class

    def test_min_area_filters_single_pixel(self):
        scores = np.zeros((4, 4, 1))
        scores[2, 2, 0] = 0.9
        out = binarize_and_split(Tensor(scores), 0.5, 2)
        assert len(out) == 0

    def test_tau_domain_checked(self):
        with pytest.raises(ContractError):
            binarize_and_split(Tensor(np.zeros((2, 2, 1))), 1.5, 1)
        with pytest.raises(ContractError):
            binarize_and_split(Tensor(np.zeros((2, 2, 1))), -0.1, 1, mode="minmax")

    def test_minmax_mode_end_to_end(self, small_fixture):
        bank, scenes = small_fixture
        scores = score_map(scenes[0].pixel_features, bank.embeddings,
                           mode="minmax")
        assert scores.data.min() >= 0.0 and scores.data.max() <= 1.0
        props = binarize_and_split(scores, 0.6, 4, mode="minmax")
        for p in props:
            assert 0.0 <= p.score <= 1.0
            assert p.bbox == tight_bbox(p.mask)

    def test_scores_equal_mean_in_component(self):
        scores = np.zeros((3, 3, 1))
        scores[0, 0, 0] = 0.8
        scores[0, 1, 0] = 0.6
        out = binarize_and_split(Tensor(scores), 0.5, 1)
        assert len(out) == 1
        np.testing.assert_allclose(out.proposals[0].score, 0.7)

    def test_deterministic_ordering(self):
        masks = []
        m1 = np.zeros((8, 8), dtype=bool); m1[5:7, 0:2] = True
        m2 = np.zeros((8, 8), dtype=bool); m2[0:2, 5:7] = True
        m3 = np.zeros((8, 8), dtype=bool); m3[0:2, 0:2] = True
        scores = _one_hot_scores([(m1, 1), (m2, 0), (m3, 1)], 2, (8, 8))
        props = binarize_and_split(scores, 0.5, 1)
        keys = [(p.class_id, p.bbox.row_min, p.bbox.col_min) for p in props]
        assert keys == sorted(keys)


class TestProposalProperties:
    def test_translation_equivariance(self, small_fixture):
        bank, _ = small_fixture
        base = [(BBox(1, 1, 4, 4), 0), (BBox(6, 6, 9, 9), 1)]
        dr, dc = 2, 1
        shifted = [(b.shift(dr, dc), c) for b, c in base]
        s1 = synth_scene(bank, base, 0.0, seed=0, height=14, width=14)
        s2 = synth_scene(bank, shifted, 0.0, seed=0, height=14, width=14)
        p1 = binarize_and_split(score_map(s1.pixel_features, bank.embeddings), 0.5, 1)
        p2 = binarize_and_split(score_map(s2.pixel_features, bank.embeddings), 0.5, 1)
        assert len(p1) == len(p2) == 2
        for a, b in zip(p1, p2):
            assert b.bbox == a.bbox.shift(dr, dc)
            np.testing.assert_array_equal(np.roll(a.mask, (dr, dc), axis=(0, 1)),
                                          b.mask)

    def test_bbox_is_tight_for_all_outputs(self):
        rng = np.random.default_rng(3)
        scores = Tensor(rng.uniform(-1, 1, size=(16, 16, 3)))
        props = binarize_and_split(scores, 0.3, 2)
        for p in props:
            assert p.bbox == tight_bbox(p.mask)
            assert -1.0 <= p.score <= 1.0
            assert p.area >= 2

    def test_raising_tau_never_adds_foreground(self):
        rng = np.random.default_rng(4)
        scores = Tensor(rng.uniform(-1, 1, size=(12, 12, 2)))
        total = []
        for tau in (0.2, 0.4, 0.6, 0.8):
            props = binarize_and_split(scores, tau, 1)
            total.append(sum(p.area for p in props))
        assert all(a >= b for a, b in zip(total, total[1:]))

    def test_noise_free_recovery(self, small_fixture):
        bank, scenes = small_fixture
        for scene in scenes:
            scores = score_map(scene.pixel_features, bank.embeddings)
            props = binarize_and_split(scores, 0.5, 1)
            assert len(props) == len(scene.gt_masks)
            got = sorted(props, key=lambda p: (p.bbox.row_min, p.bbox.col_min))
            want = sorted(scene.gt_masks, key=lambda m: tuple(
                np.argwhere(m[0])[0]))
            for prop, (gt_mask, gt_class) in zip(got, want):
                np.testing.assert_array_equal(prop.mask, gt_mask)
                assert prop.class_id == gt_class
