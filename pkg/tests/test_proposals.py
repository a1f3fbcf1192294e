import unittest

import numpy as np
from scipy import ndimage

import nucseg.exceptions
from nucseg import config, instances, metrics, proposals, synthesis


class TestBinarise(unittest.TestCase):
    def test_threshold_is_exclusive(self):
        mask = proposals.binarise(np.array([0.4, 0.5, 0.6]), threshold=0.5)
        self.assertEqual([0, 0, 1], mask.tolist())


class TestSubtractBoundary(unittest.TestCase):
    def setUp(self):
        self.seg = np.zeros((4, 4), np.uint8)
        self.seg[1:3, 1:3] = 1

    def test_empty_boundary_keeps_mask(self):
        cores = proposals.subtract_boundary(self.seg, np.zeros_like(self.seg))
        np.testing.assert_array_equal(self.seg, cores)

    def test_boundary_covering_mask_removes_all(self):
        cores = proposals.subtract_boundary(self.seg, np.ones_like(self.seg))
        self.assertFalse(cores.any())

    def test_random_maps_match_pointwise_rule(self):
        rng = np.random.default_rng(1)
        seg = rng.integers(0, 2, (8, 8))
        bnd = rng.integers(0, 2, (8, 8))
        cores = proposals.subtract_boundary(seg, bnd)
        np.testing.assert_array_equal((seg == 1) & (bnd == 0), cores == 1)

    def test_different_shapes_raise(self):
        with self.assertRaises(nucseg.exceptions.DimensionError):
            proposals.subtract_boundary(self.seg, np.zeros((4, 5)))


class TestConnectedComponents(unittest.TestCase):
    def test_separated_squares_are_two_components(self):
        mask = np.zeros((2, 5), np.uint8)
        mask[:, :2] = 1
        mask[:, 3:] = 1
        labels = proposals.connected_components(mask)
        self.assertEqual(2, labels.max())

    def test_diagonal_neighbours_depend_on_connectivity(self):
        mask = np.zeros((4, 4), np.uint8)
        mask[:2, :2] = 1
        mask[2:, 2:] = 1
        self.assertEqual(
            2, proposals.connected_components(mask, connectivity=4).max()
        )
        self.assertEqual(
            1, proposals.connected_components(mask, connectivity=8).max()
        )

    def test_all_foreground_is_one_component(self):
        labels = proposals.connected_components(np.ones((5, 5)))
        self.assertEqual(1, labels.max())
        self.assertTrue(labels.all())

    def test_invalid_connectivity_raises(self):
        with self.assertRaises(nucseg.exceptions.RangeError):
            proposals.connected_components(np.ones((2, 2)), connectivity=6)


class TestRemoveSmall(unittest.TestCase):
    def setUp(self):
        self.labels = np.zeros((6, 6), int)
        self.labels[0, :3] = 1
        self.labels[2:4, 2:4] = 2
        self.labels[5, :] = 3

    def test_zero_min_area_keeps_everything(self):
        kept = proposals.remove_small(self.labels, min_area=0)
        self.assertEqual(3, kept.max())

    def test_small_instance_is_removed(self):
        kept = proposals.remove_small(self.labels, min_area=4)
        self.assertFalse(kept[0, :3].any())
        self.assertEqual(2, kept.max())

    def test_survivors_match_area_filter(self):
        kept = proposals.remove_small(self.labels, min_area=5)
        areas = instances.instance_areas(self.labels)
        survivors = [id_ for id_, area in areas.items() if area >= 5]
        self.assertEqual(len(survivors), kept.max())
        np.testing.assert_array_equal(self.labels == 3, kept == 1)


class TestDilateInstances(unittest.TestCase):
    def test_zero_radius_is_identity(self):
        labels = np.zeros((4, 4), int)
        labels[1, 1] = 1
        np.testing.assert_array_equal(
            labels, proposals.dilate_instances(labels, radius=0)
        )

    def test_square_grows_by_radius(self):
        labels = np.zeros((6, 6), int)
        labels[2:4, 2:4] = 1
        grown = proposals.dilate_instances(labels, radius=1)
        self.assertEqual(16, (grown == 1).sum())
        self.assertTrue(grown[1:5, 1:5].all())

    def test_instances_stay_disjoint(self):
        labels = np.zeros((5, 9), int)
        labels[:, 1] = 1
        labels[:, 5] = 2
        grown = proposals.dilate_instances(labels, radius=1)
        self.assertTrue((grown[:, 0:3] == 1).all())
        self.assertTrue((grown[:, 4:7] == 2).all())
        self.assertFalse(grown[:, 3].any())

    def test_tie_goes_to_lower_id(self):
        labels = np.zeros((1, 5), int)
        labels[0, 1] = 2
        labels[0, 3] = 1
        grown = proposals.dilate_instances(labels, radius=1)
        self.assertEqual(1, grown[0, 2])

    def test_instance_pixels_are_not_reassigned(self):
        labels = np.array([[1, 2, 2, 2]])
        grown = proposals.dilate_instances(labels, radius=2)
        np.testing.assert_array_equal(labels, grown)

    def test_negative_radius_raises(self):
        with self.assertRaises(nucseg.exceptions.RangeError):
            proposals.dilate_instances(np.zeros((2, 2), int), radius=-1)


class TestPropose(unittest.TestCase):
    def setUp(self):
        self.params = config.PostprocParams()
        self.params.min_area = 0

    def test_low_probabilities_give_empty_map(self):
        pair = instances.ProbabilityPair(
            np.full((8, 8), 0.3), np.zeros((8, 8))
        )
        self.assertFalse(proposals.propose(pair, self.params).any())

    def test_two_nucleus_fixture(self):
        labels = np.zeros((12, 12), int)
        labels[1:6, 1:6] = 1
        labels[6:11, 6:11] = 2
        pair = instances.ProbabilityPair(
            instances.instance_to_semantic(labels),
            instances.instance_to_boundary(labels, width=1),
        )
        self.params.dilation_radius = 0
        result = proposals.propose(pair, self.params)
        self.assertEqual(2, result.max())
        self.assertEqual(9, (result == 1).sum())
        self.assertTrue((result[2:5, 2:5] == 1).all())
        self.assertTrue((result[7:10, 7:10] == 2).all())

    def test_exact_maps_recover_instances(self):
        for seed in range(100):
            labels = self._synthetic_labels(seed)
            pair = instances.ProbabilityPair(
                instances.instance_to_semantic(labels),
                instances.instance_to_boundary(labels, width=1),
            )
            self.params.dilation_radius = 1
            result = proposals.propose(pair, self.params)
            self.assertEqual(1.0, metrics.aji(labels, result), seed)

    def test_wide_boundaries_recover_instances(self):
        self.params.connectivity = 8
        for seed in range(5):
            labels = self._synthetic_labels(seed)
            pair = instances.ProbabilityPair(
                instances.instance_to_semantic(labels),
                instances.instance_to_boundary(labels, width=2),
            )
            self.params.dilation_radius = 2
            result = proposals.propose(pair, self.params)
            self.assertEqual(1.0, metrics.aji(labels, result), seed)

    @staticmethod
    def _synthetic_labels(seed):
        painter = synthesis.NucleusPainter(
            (64, 64), np.random.default_rng(seed)
        )
        for _ in range(6):
            painter.add_nucleus()
        return instances.relabel_contiguous(painter.labels)

    @staticmethod
    def _smooth_pair(seed):
        rng = np.random.default_rng(seed)
        maps = []
        for _ in range(2):
            field = ndimage.gaussian_filter(rng.random((48, 48)), sigma=2)
            field -= field.min()
            maps.append(field / field.max())
        return instances.ProbabilityPair(*maps)

    def test_raising_seg_threshold_never_adds_foreground(self):
        params = config.PostprocParams()
        params.dilation_radius = 0
        for seed in range(10):
            pair = self._smooth_pair(seed)
            previous = None
            for seg_thresh in (0.3, 0.4, 0.5, 0.6, 0.7):
                params.seg_thresh = seg_thresh
                cores = proposals.propose(pair, params) > 0
                if previous is not None:
                    self.assertFalse((cores & ~previous).any())
                previous = cores

    def test_lowering_bnd_threshold_never_adds_foreground(self):
        params = config.PostprocParams()
        params.dilation_radius = 0
        for seed in range(10):
            pair = self._smooth_pair(seed)
            previous = None
            for bnd_thresh in (0.7, 0.6, 0.5, 0.4, 0.3):
                params.bnd_thresh = bnd_thresh
                cores = proposals.propose(pair, params) > 0
                if previous is not None:
                    self.assertFalse((cores & ~previous).any())
                previous = cores

    def test_default_min_area_removes_small_cores(self):
        seg = np.zeros((32, 32))
        seg[2:4, 2:4] = 1
        seg[10:20, 10:20] = 1
        pair = instances.ProbabilityPair(seg, np.zeros_like(seg))
        params = config.PostprocParams()
        params.dilation_radius = 0
        result = proposals.propose(pair, params)
        self.assertEqual(1, result.max())
        self.assertFalse(result[2:4, 2:4].any())
        self.assertTrue((result[10:20, 10:20] == 1).all())

    def test_default_min_area_on_random_maps(self):
        params = config.PostprocParams()
        params.dilation_radius = 0
        for seed in range(10):
            result = proposals.propose(self._smooth_pair(seed), params)
            ids, areas = np.unique(result[result > 0], return_counts=True)
            np.testing.assert_array_equal(np.arange(1, ids.size + 1), ids)
            self.assertTrue((areas >= params.min_area).all())

    def test_is_deterministic(self):
        rng = np.random.default_rng(2)
        pair = instances.ProbabilityPair(
            rng.random((16, 16)), rng.random((16, 16))
        )
        np.testing.assert_array_equal(
            proposals.propose(pair, self.params),
            proposals.propose(pair, self.params),
        )
