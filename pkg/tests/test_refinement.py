import unittest

import numpy as np
import torch

import nucseg.exceptions
from nucseg import config, instances, network, patching, refinement


def box_proposal(row0, col0, height, width, id_=1):
    return instances.Proposal(
        id_=id_,
        mask=np.ones((height, width), bool),
        bbox=(row0, col0, height, width),
    )


class TestMatchProposal(unittest.TestCase):
    def setUp(self):
        self.gt = np.zeros((10, 10), int)
        self.gt[2:4, 2:6] = 5

    def test_iou_of_exactly_tau_is_unmatched(self):
        result = refinement.match_proposal(
            box_proposal(2, 2, 2, 2), self.gt, tau=0.5
        )
        self.assertAlmostEqual(0.5, result.iou)
        self.assertIsNone(result.matched_gt_id)
        self.assertFalse(result.label.any())

    def test_iou_above_tau_is_matched(self):
        result = refinement.match_proposal(
            box_proposal(2, 2, 2, 2), self.gt, tau=0.4
        )
        self.assertEqual(5, result.matched_gt_id)

    def test_low_iou_gives_empty_label(self):
        result = refinement.match_proposal(
            box_proposal(2, 5, 2, 3), self.gt, tau=0.5
        )
        self.assertAlmostEqual(2 / 12, result.iou)
        self.assertIsNone(result.matched_gt_id)
        self.assertEqual((3, 3), result.label.shape)
        self.assertFalse(result.label.any())

    def test_no_overlap(self):
        result = refinement.match_proposal(
            box_proposal(7, 7, 2, 2), self.gt
        )
        self.assertEqual(0.0, result.iou)
        self.assertIsNone(result.matched_gt_id)

    def test_label_is_cut_like_the_patch(self):
        proposal = box_proposal(2, 2, 2, 3)
        result = refinement.match_proposal(
            proposal, self.gt, window=(0, 0, 8), size=16
        )
        self.assertEqual(5, result.matched_gt_id)
        expected = np.zeros((16, 16), np.uint8)
        expected[4:8, 4:12] = 1
        np.testing.assert_array_equal(expected, result.label)

    def test_best_of_several_instances(self):
        gt = self.gt.copy()
        gt[4:6, 2:6] = 6
        result = refinement.match_proposal(box_proposal(3, 2, 3, 4), gt)
        self.assertEqual(6, result.matched_gt_id)
        self.assertAlmostEqual(8 / 12, result.iou)

    def test_tau_out_of_range_raises(self):
        with self.assertRaises(nucseg.exceptions.RangeError):
            refinement.match_proposal(
                box_proposal(2, 2, 2, 2), self.gt, tau=-0.1
            )


class TestAssignLabels(unittest.TestCase):
    def test_labels_have_patch_size(self):
        gt = np.zeros((64, 64), int)
        gt[20:30, 20:30] = 1
        gt[40:44, 40:44] = 2
        probabilities = instances.ProbabilityPair(
            seg=(gt > 0).astype(float), bnd=np.zeros((64, 64))
        )
        proposal_labels = gt.copy()
        proposal_labels[40:44, 40:44] = 0
        proposal_labels[50:54, 10:14] = 3
        proposals, records = patching.extract_patches(
            np.zeros((64, 64, 3)),
            probabilities,
            proposal_labels,
            config.PatchParams(),
        )
        refinement.assign_labels(records, proposals, gt)
        self.assertEqual((48, 48), records[0].label.shape)
        self.assertEqual(1, records[0].matched_gt_id)
        self.assertAlmostEqual(1.0, records[0].iou)
        self.assertTrue(records[0].label.any())
        self.assertIsNone(records[1].matched_gt_id)
        self.assertFalse(records[1].label.any())


class TestAssemble(unittest.TestCase):
    def setUp(self):
        self.proposals = [
            box_proposal(0, 0, 4, 4, 1),
            box_proposal(2, 2, 4, 4, 2),
        ]
        self.windows = [(0, 0, 4), (2, 2, 4)]

    def test_higher_probability_wins(self):
        refined = [np.full((4, 4), 0.8), np.full((4, 4), 0.9)]
        labels = refinement.assemble(
            self.proposals, refined, self.windows, (8, 8)
        )
        self.assertEqual(2, labels[2, 2])
        self.assertEqual(1, labels[0, 0])
        self.assertEqual(12, np.sum(labels == 1))
        self.assertEqual(16, np.sum(labels == 2))

    def test_ties_go_to_lower_id(self):
        refined = [np.full((4, 4), 0.8), np.full((4, 4), 0.8)]
        labels = refinement.assemble(
            self.proposals[::-1], refined, self.windows[::-1], (8, 8)
        )
        self.assertEqual(16, np.sum(labels == 1))
        self.assertEqual(1, labels[3, 3])

    def test_empty_refined_mask_is_dropped(self):
        refined = [np.full((4, 4), 0.2), np.full((4, 4), 0.9)]
        labels = refinement.assemble(
            self.proposals, refined, self.windows, (8, 8)
        )
        self.assertEqual([1], list(instances.instance_ids(labels)))
        self.assertEqual(16, labels.astype(bool).sum())

    def test_ids_are_contiguous(self):
        proposals = [box_proposal(0, 0, 2, 2, 4), box_proposal(5, 5, 2, 2, 9)]
        refined = [np.ones((2, 2)), np.ones((2, 2))]
        labels = refinement.assemble(
            proposals, refined, [(0, 0, 2), (5, 5, 2)], (8, 8)
        )
        self.assertEqual([1, 2], list(instances.instance_ids(labels)))

    def test_window_over_border_is_clipped(self):
        labels = refinement.assemble(
            [box_proposal(0, 0, 2, 2)],
            [np.ones((6, 6))],
            [(-2, -2, 6)],
            (8, 8),
        )
        self.assertEqual(16, labels.astype(bool).sum())

    def test_refined_map_is_resized_to_window(self):
        labels = refinement.assemble(
            [box_proposal(0, 0, 4, 4)],
            [np.ones((2, 2))],
            [(0, 0, 4)],
            (8, 8),
        )
        self.assertEqual(16, labels.astype(bool).sum())

    def test_number_of_maps_not_matching_raises(self):
        with self.assertRaises(nucseg.exceptions.DimensionError):
            refinement.assemble(self.proposals, [], self.windows, (8, 8))


class TestRefineBatch(unittest.TestCase):
    def setUp(self):
        torch.manual_seed(0)
        train_config = config.TrainConfig.desk_scale()
        self.networks = network.build_refine_nets(
            train_config.stage2.refine, train_config.stage2.patch
        )
        rng = np.random.default_rng(0)
        self.records = []
        for id_, size_class, size in (
            (1, patching.SMALL, 48),
            (2, patching.LARGE, 176),
            (3, patching.SMALL, 48),
        ):
            record = patching.PatchRecord(
                proposal_id=id_, window=(0, 0, size), size_class=size_class
            )
            record.input = rng.random((size, size, 5)).astype(np.float32)
            self.records.append(record)

    def test_one_map_per_record(self):
        refined = refinement.refine_batch(self.records, self.networks)
        self.assertEqual(
            [(48, 48), (176, 176), (48, 48)], [map_.shape for map_ in refined]
        )

    def test_independent_of_order_and_batch_size(self):
        refined = refinement.refine_batch(self.records, self.networks)
        reversed_ = refinement.refine_batch(
            self.records[::-1], self.networks, batch_size=1
        )
        for one, other in zip(refined, reversed_[::-1]):
            np.testing.assert_allclose(one, other, atol=1e-6)

    def test_training_mode_is_restored(self):
        self.networks["small"].train()
        refinement.refine_batch(self.records, self.networks)
        self.assertTrue(self.networks["small"].training)

    def test_missing_network_raises(self):
        with self.assertRaises(nucseg.exceptions.RangeError):
            refinement.refine_batch(
                self.records, {"small": self.networks["small"]}
            )

    def test_wrong_patch_size_raises(self):
        self.records[0].input = np.zeros((40, 40, 5), np.float32)
        with self.assertRaises(nucseg.exceptions.DimensionError):
            refinement.refine_batch(self.records, self.networks)


class TestRefineInstances(unittest.TestCase):
    def setUp(self):
        torch.manual_seed(0)
        train_config = config.TrainConfig.desk_scale()
        self.params = train_config.stage2.patch
        self.networks = network.build_refine_nets(
            train_config.stage2.refine, self.params
        )
        self.probabilities = instances.ProbabilityPair(
            seg=np.zeros((32, 32)), bnd=np.zeros((32, 32))
        )

    def test_without_proposals_returns_empty_map(self):
        labels, records = refinement.refine_instances(
            np.zeros((32, 32, 3)),
            self.probabilities,
            np.zeros((32, 32), int),
            self.networks,
            self.params,
        )
        self.assertFalse(labels.any())
        self.assertEqual([], records)

    def test_one_record_per_proposal(self):
        proposal_labels = np.zeros((32, 32), int)
        proposal_labels[4:10, 4:10] = 1
        proposal_labels[20:26, 20:28] = 2
        labels, records = refinement.refine_instances(
            np.zeros((32, 32, 3)),
            self.probabilities,
            proposal_labels,
            self.networks,
            self.params,
        )
        self.assertEqual((32, 32), labels.shape)
        self.assertEqual(2, len(records))
