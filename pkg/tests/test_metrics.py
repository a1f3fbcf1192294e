import unittest

import numpy as np

import nucseg.exceptions
from nucseg import metrics


def random_instance_map(rng, shape=(16, 16), n_max=6):
    labels = np.zeros(shape, int)
    for id_ in range(1, rng.integers(0, n_max) + 1):
        row = rng.integers(0, shape[0] - 2)
        col = rng.integers(0, shape[1] - 2)
        height, width = rng.integers(1, 6, size=2)
        labels[row : row + height, col : col + width] = id_
    return labels


def brute_force_aji(gt, pred):
    gt_ids = sorted(set(gt.ravel()) - {0})
    pred_ids = sorted(set(pred.ravel()) - {0})
    if not gt_ids and not pred_ids:
        return 1.0
    if not pred_ids:
        return 0.0
    used = set()
    numerator, denominator = 0, 0
    for gt_id in gt_ids:
        gt_mask = gt == gt_id
        best, best_iou = None, -1.0
        for pred_id in pred_ids:
            pred_mask = pred == pred_id
            union = np.sum(gt_mask | pred_mask)
            value = np.sum(gt_mask & pred_mask) / union
            if value > best_iou:
                best, best_iou = pred_id, value
        numerator += np.sum(gt_mask & (pred == best))
        denominator += np.sum(gt_mask | (pred == best))
        used.add(best)
    for pred_id in pred_ids:
        if pred_id not in used:
            denominator += np.sum(pred == pred_id)
    return numerator / denominator


def pixel_counts(mask_a, mask_b):
    intersection, union = 0, 0
    for value_a, value_b in zip(np.ravel(mask_a), np.ravel(mask_b)):
        intersection += bool(value_a) and bool(value_b)
        union += bool(value_a) or bool(value_b)
    return intersection, union


def brute_force_iou(mask_a, mask_b):
    intersection, union = pixel_counts(mask_a, mask_b)
    return intersection / union if union else 0.0


def brute_force_dice1(gt, pred):
    intersection, _ = pixel_counts(np.ravel(gt) > 0, np.ravel(pred) > 0)
    total = int(np.sum(np.ravel(gt) > 0) + np.sum(np.ravel(pred) > 0))
    return 2 * intersection / total if total else 1.0


def brute_force_dice2(gt, pred):
    gt_ids = sorted(set(gt.ravel()) - {0})
    pred_ids = sorted(set(pred.ravel()) - {0})
    if not gt_ids:
        return 0.0 if pred_ids else 1.0
    dices = []
    for gt_id in gt_ids:
        best, best_intersection = None, 0
        for pred_id in pred_ids:
            intersection, _ = pixel_counts(gt == gt_id, pred == pred_id)
            if intersection > best_intersection:
                best, best_intersection = pred_id, intersection
        if best is None:
            dices.append(0.0)
            continue
        total = np.sum(gt == gt_id) + np.sum(pred == best)
        dices.append(2 * best_intersection / total)
    return sum(dices) / len(dices)


def f1_counts(n_gt, n_pred, tp):
    if not n_gt and not n_pred:
        return 1.0, 0, 0, 0
    fp, fn = n_pred - tp, n_gt - tp
    return 2 * tp / (2 * tp + fp + fn), tp, fp, fn


def brute_force_f1_iou(gt, pred, iou_thresh=0.5):
    gt_ids = sorted(set(gt.ravel()) - {0})
    pred_ids = sorted(set(pred.ravel()) - {0})
    pairs = []
    for gt_id in gt_ids:
        for pred_id in pred_ids:
            intersection, union = pixel_counts(gt == gt_id, pred == pred_id)
            if intersection and intersection / union >= iou_thresh:
                pairs.append((-intersection / union, gt_id, pred_id))
    matched_gt, matched_pred = set(), set()
    for _, gt_id, pred_id in sorted(pairs):
        if gt_id not in matched_gt and pred_id not in matched_pred:
            matched_gt.add(gt_id)
            matched_pred.add(pred_id)
    return f1_counts(len(gt_ids), len(pred_ids), len(matched_gt))


def brute_force_f1_centroid(gt, pred):
    gt_ids = sorted(set(gt.ravel()) - {0})
    pred_ids = sorted(set(pred.ravel()) - {0})
    candidates = {}
    for pred_id in pred_ids:
        pixels = [
            (row, col)
            for row in range(pred.shape[0])
            for col in range(pred.shape[1])
            if pred[row, col] == pred_id
        ]
        row = int(np.rint(sum(pixel[0] for pixel in pixels) / len(pixels)))
        col = int(np.rint(sum(pixel[1] for pixel in pixels) / len(pixels)))
        if gt[row, col]:
            candidates.setdefault(gt[row, col], []).append(pred_id)
    used = set()
    for gt_id in sorted(candidates):
        for pred_id in candidates[gt_id]:
            if pred_id not in used:
                used.add(pred_id)
                break
    return f1_counts(len(gt_ids), len(pred_ids), len(used))


def permute_ids(labels, rng):
    ids = np.unique(labels[labels > 0])
    lookup = np.zeros(labels.max() + 1, dtype=labels.dtype)
    lookup[ids] = rng.permutation(ids)
    return lookup[labels]


def has_unique_best(gt, pred, score, ignore_zero=False):
    for gt_id in set(gt.ravel()) - {0}:
        scores = [
            score(gt == gt_id, pred == pred_id)
            for pred_id in set(pred.ravel()) - {0}
        ]
        best = max(scores, default=0)
        if ignore_zero and not best:
            continue
        if scores.count(best) > 1:
            return False
    return True


def random_pairs(n_pairs=200, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_pairs):
        yield random_instance_map(rng), random_instance_map(rng)


class TestIou(unittest.TestCase):
    def setUp(self):
        self.mask = np.zeros((4, 4), bool)
        self.mask[1:3, 1:3] = True

    def test_identical_masks(self):
        self.assertEqual(1.0, metrics.iou(self.mask, self.mask))

    def test_disjoint_masks(self):
        other = np.zeros_like(self.mask)
        other[0, 0] = True
        self.assertEqual(0.0, metrics.iou(self.mask, other))

    def test_shifted_square(self):
        shifted = np.roll(self.mask, 1, axis=1)
        self.assertAlmostEqual(2 / 6, metrics.iou(self.mask, shifted))

    def test_different_shapes_raise(self):
        with self.assertRaises(nucseg.exceptions.DimensionError):
            metrics.iou(self.mask, np.zeros((4, 5), bool))

    def test_equals_brute_force(self):
        for gt, pred in random_pairs():
            for mask_a, mask_b in ((gt > 0, pred > 0), (gt == 1, pred == 1)):
                self.assertAlmostEqual(
                    brute_force_iou(mask_a, mask_b),
                    metrics.iou(mask_a, mask_b),
                    places=12,
                )


class TestAji(unittest.TestCase):
    def setUp(self):
        self.gt = np.zeros((6, 6), int)
        self.gt[1:3, 1:3] = 1

    def test_identical_maps(self):
        self.assertEqual(1.0, metrics.aji(self.gt, self.gt))

    def test_empty_prediction(self):
        self.assertEqual(0.0, metrics.aji(self.gt, np.zeros_like(self.gt)))

    def test_both_empty(self):
        empty = np.zeros((4, 4), int)
        self.assertEqual(1.0, metrics.aji(empty, empty))

    def test_shifted_instance(self):
        pred = np.roll(self.gt, 1, axis=1)
        self.assertAlmostEqual(2 / 6, metrics.aji(self.gt, pred))

    def test_unused_prediction_adds_to_denominator(self):
        pred = self.gt.copy()
        pred[4:6, 4:6] = 2
        self.assertAlmostEqual(4 / 8, metrics.aji(self.gt, pred))

    def test_prediction_may_be_picked_twice(self):
        gt = np.zeros((4, 4), int)
        gt[:, :2] = 1
        gt[:, 2:] = 2
        pred = np.ones((4, 4), int)
        self.assertAlmostEqual(16 / 32, metrics.aji(gt, pred))

    def test_equals_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            gt = random_instance_map(rng)
            pred = random_instance_map(rng)
            self.assertAlmostEqual(
                brute_force_aji(gt, pred), metrics.aji(gt, pred), places=9
            )

    def test_invariant_to_id_permutation(self):
        gt = np.zeros((8, 8), int)
        gt[1:4, 1:4] = 1
        gt[5:8, 4:8] = 2
        pred = np.zeros_like(gt)
        pred[1:4, 2:5] = 1
        pred[5:7, 4:8] = 2
        swapped = np.where(pred == 1, 2, np.where(pred == 2, 1, 0))
        self.assertAlmostEqual(
            metrics.aji(gt, pred), metrics.aji(gt, swapped)
        )

    def test_random_maps_invariant_to_id_permutation(self):
        rng = np.random.default_rng(1)
        checked = 0
        for gt, pred in random_pairs():
            if not has_unique_best(gt, pred, brute_force_iou):
                continue
            checked += 1
            self.assertAlmostEqual(
                metrics.aji(gt, pred),
                metrics.aji(permute_ids(gt, rng), permute_ids(pred, rng)),
                places=12,
            )
        self.assertGreater(checked, 20)


class TestDetectionF1(unittest.TestCase):
    def setUp(self):
        self.gt = np.zeros((10, 10), int)
        self.gt[0:4, 0:4] = 1
        self.gt[6:9, 6:9] = 2

    def test_identical_maps(self):
        self.assertEqual(
            (1.0, 2, 0, 0), metrics.detection_f1(self.gt, self.gt)
        )

    def test_empty_prediction(self):
        f1_score, tp, fp, fn = metrics.detection_f1(
            self.gt, np.zeros_like(self.gt)
        )
        self.assertEqual((0.0, 0, 0, 2), (f1_score, tp, fp, fn))

    def test_one_of_two_matched(self):
        pred = np.zeros_like(self.gt)
        pred[0:4, 0:4] = 1
        pred[0, 0:4] = 0
        f1_score, tp, fp, fn = metrics.detection_f1(self.gt, pred)
        self.assertAlmostEqual(2 / 3, f1_score)
        self.assertEqual((1, 0, 1), (tp, fp, fn))

    def test_below_threshold_is_no_match(self):
        pred = np.zeros_like(self.gt)
        pred[0:4, 3:7] = 1
        _, tp, fp, fn = metrics.detection_f1(self.gt, pred)
        self.assertEqual((0, 1, 2), (tp, fp, fn))

    def test_centroid_criterion(self):
        pred = np.zeros_like(self.gt)
        pred[0:4, 2:5] = 1
        _, tp, _, _ = metrics.detection_f1(self.gt, pred, criterion="iou")
        self.assertEqual(0, tp)
        _, tp, _, _ = metrics.detection_f1(
            self.gt, pred, criterion="centroid"
        )
        self.assertEqual(1, tp)

    def test_equals_brute_force_by_iou(self):
        for iou_thresh in (0.5, 0.3):
            for gt, pred in random_pairs():
                self.assert_f1_equal(
                    brute_force_f1_iou(gt, pred, iou_thresh),
                    metrics.detection_f1(gt, pred, iou_thresh=iou_thresh),
                )

    def test_equals_brute_force_by_centroid(self):
        for gt, pred in random_pairs():
            self.assert_f1_equal(
                brute_force_f1_centroid(gt, pred),
                metrics.detection_f1(gt, pred, criterion="centroid"),
            )

    def test_invariant_to_id_permutation(self):
        rng = np.random.default_rng(1)
        for gt, pred in random_pairs():
            permuted_gt = permute_ids(gt, rng)
            permuted_pred = permute_ids(pred, rng)
            for criterion in ("iou", "centroid"):
                self.assert_f1_equal(
                    metrics.detection_f1(
                        gt, pred, iou_thresh=0.6, criterion=criterion
                    ),
                    metrics.detection_f1(
                        permuted_gt,
                        permuted_pred,
                        iou_thresh=0.6,
                        criterion=criterion,
                    ),
                )

    def assert_f1_equal(self, expected, actual):
        self.assertAlmostEqual(expected[0], actual[0], places=12)
        self.assertEqual(tuple(expected[1:]), tuple(actual[1:]))

    def test_unknown_criterion_raises(self):
        with self.assertRaises(ValueError):
            metrics.detection_f1(self.gt, self.gt, criterion="area")


class TestDice1(unittest.TestCase):
    def test_identical_masks(self):
        mask = np.eye(4)
        self.assertEqual(1.0, metrics.dice1(mask, mask))

    def test_disjoint_masks(self):
        self.assertEqual(0.0, metrics.dice1(np.eye(4), 1 - np.eye(4)))

    def test_half_overlap(self):
        gt = np.array([[1, 1, 1, 1, 0, 0]])
        pred = np.array([[0, 0, 1, 1, 1, 1]])
        self.assertAlmostEqual(0.5, metrics.dice1(gt, pred))

    def test_both_empty(self):
        empty = np.zeros((3, 3))
        self.assertEqual(1.0, metrics.dice1(empty, empty))

    def test_equals_brute_force(self):
        for gt, pred in random_pairs():
            self.assertAlmostEqual(
                brute_force_dice1(gt, pred),
                metrics.dice1(gt, pred),
                places=12,
            )

    def test_invariant_to_id_permutation(self):
        rng = np.random.default_rng(1)
        for gt, pred in random_pairs():
            self.assertEqual(
                metrics.dice1(gt, pred),
                metrics.dice1(permute_ids(gt, rng), permute_ids(pred, rng)),
            )


class TestDice2(unittest.TestCase):
    def setUp(self):
        self.gt = np.zeros((6, 6), int)
        self.gt[0:2, 0:4] = 1

    def test_identical_maps(self):
        self.assertEqual(1.0, metrics.dice2(self.gt, self.gt))

    def test_half_covering_prediction(self):
        pred = np.zeros_like(self.gt)
        pred[0:2, 2:6] = 1
        self.assertAlmostEqual(0.5, metrics.dice2(self.gt, pred))

    def test_unmatched_instance_contributes_zero(self):
        gt = self.gt.copy()
        gt[4:6, 0:4] = 2
        self.assertAlmostEqual(0.5, metrics.dice2(gt, self.gt))

    def test_equals_brute_force(self):
        for gt, pred in random_pairs():
            self.assertAlmostEqual(
                brute_force_dice2(gt, pred),
                metrics.dice2(gt, pred),
                places=12,
            )

    def test_random_maps_invariant_to_id_permutation(self):
        rng = np.random.default_rng(1)
        checked = 0
        for gt, pred in random_pairs():
            if not has_unique_best(
                gt, pred, lambda a, b: pixel_counts(a, b)[0], ignore_zero=True
            ):
                continue
            checked += 1
            self.assertAlmostEqual(
                metrics.dice2(gt, pred),
                metrics.dice2(permute_ids(gt, rng), permute_ids(pred, rng)),
                places=12,
            )
        self.assertGreater(checked, 20)


class TestMetricReport(unittest.TestCase):
    def setUp(self):
        self.report = metrics.MetricReport()
        self.gt = np.zeros((6, 6), int)
        self.gt[1:3, 1:3] = 1

    def test_add_returns_row(self):
        row = self.report.add("a", self.gt, self.gt, group="seen")
        self.assertEqual("a", row["stem"])
        self.assertEqual(1.0, row["aji"])
        self.assertEqual(1, row["tp"])

    def test_aggregate_is_unweighted_mean(self):
        self.report.add("a", self.gt, self.gt)
        self.report.add("b", self.gt, np.zeros_like(self.gt))
        self.assertAlmostEqual(0.5, self.report.aggregate()["aji"])

    def test_aggregate_per_group(self):
        self.report.add("a", self.gt, self.gt, group="seen")
        self.report.add("b", self.gt, np.zeros_like(self.gt), group="unseen")
        self.assertEqual(["seen", "unseen"], self.report.groups)
        self.assertEqual(1.0, self.report.aggregate("seen")["aji"])
        self.assertEqual(0.0, self.report.aggregate("unseen")["aji"])

    def test_values_equal_direct_calls(self):
        pred = np.roll(self.gt, 1, axis=0)
        row = self.report.add("a", self.gt, pred)
        self.assertAlmostEqual(metrics.aji(self.gt, pred), row["aji"])
        self.assertAlmostEqual(metrics.dice2(self.gt, pred), row["dice2"])
