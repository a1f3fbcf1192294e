"""
Evaluation metrics for nucleus instance segmentation.

Four metrics are provided, together with the intersection over union they
are built upon:

* :func:`aji`

  Aggregated Jaccard Index, the main metric: accumulates intersections and
  unions of each ground-truth instance with its best-matching predicted
  instance, and penalises unused predictions in the denominator.

* :func:`detection_f1`

  F1 score of the instance detection, using one-to-one matching by IoU
  (default) or by centroid inclusion.

* :func:`dice1`

  Dice coefficient of the semantic (foreground/background) masks.

* :func:`dice2`

  Ensemble Dice: mean Dice of each ground-truth instance with its
  best-overlapping predicted instance.

All metric values are in [0, 1]. For two empty maps, all metrics except
:func:`iou` are defined as 1.

Per-image values and their (group-wise) means are collected in a
:class:`MetricReport`; for computing metrics on datasets, see
:class:`nucseg.analysis.SegmentationMetrics`.


Module documentation
====================

"""

import numpy as np

from nucseg import utils


def iou(mask_a, mask_b):
    """
    Intersection over union of two binary masks.

    Parameters
    ----------
    mask_a, mask_b : :class:`numpy.ndarray`
        Binary masks of the same shape

    Returns
    -------
    iou : :class:`float`
        0 if both masks are empty

    """
    utils.check_same_shape(mask_a, mask_b, names=["a", "b"])
    mask_a, mask_b = np.asarray(mask_a, bool), np.asarray(mask_b, bool)
    union = np.logical_or(mask_a, mask_b).sum()
    if not union:
        return 0.0
    return float(np.logical_and(mask_a, mask_b).sum() / union)


class _Overlap:
    """Contingency table of the instances of two maps.

    Rows correspond to ground-truth instances, columns to predicted
    instances, both in ascending id order.

    """

    def __init__(self, gt, pred):
        utils.check_same_shape(gt, pred, names=["gt", "pred"])
        gt_values, gt_index = np.unique(np.ravel(gt), return_inverse=True)
        pred_values, pred_index = np.unique(
            np.ravel(pred), return_inverse=True
        )
        # column/row 0 is background if present
        gt_index = gt_index + (0 if gt_values[:1].tolist() == [0] else 1)
        pred_index = pred_index + (
            0 if pred_values[:1].tolist() == [0] else 1
        )
        self.gt_ids = gt_values[gt_values > 0]
        self.pred_ids = pred_values[pred_values > 0]
        n_gt, n_pred = self.gt_ids.size + 1, self.pred_ids.size + 1
        joint = np.bincount(
            gt_index * n_pred + pred_index, minlength=n_gt * n_pred
        ).reshape(n_gt, n_pred)
        self.intersections = joint[1:, 1:]
        self.gt_areas = joint[1:, :].sum(axis=1)
        self.pred_areas = joint[:, 1:].sum(axis=0)
        self.unions = (
            self.gt_areas[:, np.newaxis]
            + self.pred_areas[np.newaxis, :]
            - self.intersections
        )

    @property
    def ious(self):
        return self.intersections / np.maximum(self.unions, 1)


def aji(gt, pred):
    """
    Aggregated Jaccard Index of a predicted instance map.

    Ground-truth instances are processed in ascending id order. Each picks
    the predicted instance with maximal IoU among *all* predicted instances
    (ties go to the lower id), adds the intersection to the numerator and
    the union to the denominator, and marks the prediction as used. A
    prediction may be picked by several ground-truth instances. Finally,
    the areas of all predicted instances never used are added to the
    denominator.

    Parameters
    ----------
    gt : :class:`numpy.ndarray`
        Ground-truth instance map

    pred : :class:`numpy.ndarray`
        Predicted instance map of the same shape

    Returns
    -------
    aji : :class:`float`
        1 if both maps are empty

    """
    overlap = _Overlap(gt, pred)
    if not overlap.gt_ids.size and not overlap.pred_ids.size:
        return 1.0
    if not overlap.pred_ids.size:
        return 0.0
    used = np.zeros(overlap.pred_ids.size, dtype=bool)
    numerator, denominator = 0, 0
    if overlap.gt_ids.size:
        best = np.argmax(overlap.ious, axis=1)
        rows = np.arange(overlap.gt_ids.size)
        numerator = overlap.intersections[rows, best].sum()
        denominator = overlap.unions[rows, best].sum()
        used[best] = True
    denominator += overlap.pred_areas[~used].sum()
    return float(numerator / denominator)


def detection_f1(gt, pred, iou_thresh=0.5, criterion="iou"):
    """
    F1 score of the detection of instances.

    Predicted and ground-truth instances are matched one-to-one. With the
    "iou" criterion, all pairs with IoU >= ``iou_thresh`` are matched
    greedily by descending IoU. With the "centroid" criterion, a prediction
    matches a ground-truth instance if its (rounded) centroid lies inside
    it; ground-truth instances are processed in ascending id order, each
    taking the lowest unmatched predicted id.

    Parameters
    ----------
    gt : :class:`numpy.ndarray`
        Ground-truth instance map

    pred : :class:`numpy.ndarray`
        Predicted instance map of the same shape

    iou_thresh : :class:`float`
        Minimum IoU of a matching pair

    criterion : :class:`str`
        "iou" or "centroid"

    Returns
    -------
    f1 : :class:`float`
        F1 score, 1 if both maps are empty

    tp : :class:`int`
        Number of true positives (matched pairs)

    fp : :class:`int`
        Number of unmatched predicted instances

    fn : :class:`int`
        Number of unmatched ground-truth instances

    Raises
    ------
    ValueError
        Raised for an unknown criterion

    """
    if criterion == "iou":
        overlap = _Overlap(gt, pred)
        n_gt, n_pred = overlap.gt_ids.size, overlap.pred_ids.size
        true_positives = _match_by_iou(overlap, iou_thresh)
    elif criterion == "centroid":
        utils.check_same_shape(gt, pred, names=["gt", "pred"])
        gt, pred = np.asarray(gt), np.asarray(pred)
        n_gt = np.unique(gt[gt > 0]).size
        n_pred = np.unique(pred[pred > 0]).size
        true_positives = _match_by_centroid(gt, pred)
    else:
        raise ValueError(f"Unknown criterion {criterion}")
    false_positives = n_pred - true_positives
    false_negatives = n_gt - true_positives
    if not n_gt and not n_pred:
        return 1.0, 0, 0, 0
    f1_score = (2 * true_positives) / (
        2 * true_positives + false_positives + false_negatives
    )
    return (
        float(f1_score),
        int(true_positives),
        int(false_positives),
        int(false_negatives),
    )


def _match_by_iou(overlap, iou_thresh):
    ious = overlap.ious
    candidates = (ious >= iou_thresh) & (overlap.intersections > 0)
    rows, cols = np.nonzero(candidates)
    order = np.lexsort((cols, rows, -ious[rows, cols]))
    matched_gt, matched_pred = set(), set()
    for row, col in zip(rows[order], cols[order]):
        if row in matched_gt or col in matched_pred:
            continue
        matched_gt.add(row)
        matched_pred.add(col)
    return len(matched_gt)


def _match_by_centroid(gt, pred):
    pred_ids = np.unique(pred[pred > 0])
    if not pred_ids.size:
        return 0
    rows, cols = np.indices(pred.shape)
    counts = np.bincount(pred.ravel())[pred_ids]
    centroid_rows = np.bincount(pred.ravel(), rows.ravel())[pred_ids] / counts
    centroid_cols = np.bincount(pred.ravel(), cols.ravel())[pred_ids] / counts
    hits = gt[
        np.rint(centroid_rows).astype(int), np.rint(centroid_cols).astype(int)
    ]
    candidates = {}
    for pred_id, gt_id in zip(pred_ids, hits):
        if gt_id > 0:
            candidates.setdefault(int(gt_id), []).append(int(pred_id))
    used, matches = set(), 0
    for gt_id in sorted(candidates):
        for pred_id in sorted(candidates[gt_id]):
            if pred_id not in used:
                used.add(pred_id)
                matches += 1
                break
    return matches


def dice1(gt_sem, pred_sem):
    """
    Dice coefficient of two semantic masks.

    Instance maps are accepted as well; all positive values count as
    foreground.

    Parameters
    ----------
    gt_sem : :class:`numpy.ndarray`
        Ground-truth semantic mask

    pred_sem : :class:`numpy.ndarray`
        Predicted semantic mask of the same shape

    Returns
    -------
    dice : :class:`float`
        1 if both masks are empty

    """
    utils.check_same_shape(gt_sem, pred_sem, names=["gt", "pred"])
    gt_sem, pred_sem = np.asarray(gt_sem) > 0, np.asarray(pred_sem) > 0
    total = gt_sem.sum() + pred_sem.sum()
    if not total:
        return 1.0
    return float(2 * np.logical_and(gt_sem, pred_sem).sum() / total)


def dice2(gt, pred):
    """
    Ensemble Dice of a predicted instance map.

    Each ground-truth instance is matched to the predicted instance it
    overlaps most (ties go to the lower id). The result is the mean Dice
    over all ground-truth instances, where instances without any overlap
    contribute 0.

    Parameters
    ----------
    gt : :class:`numpy.ndarray`
        Ground-truth instance map

    pred : :class:`numpy.ndarray`
        Predicted instance map of the same shape

    Returns
    -------
    dice : :class:`float`
        1 if both maps are empty, 0 if only one of them is

    """
    overlap = _Overlap(gt, pred)
    if not overlap.gt_ids.size:
        return 1.0 if not overlap.pred_ids.size else 0.0
    if not overlap.pred_ids.size:
        return 0.0
    rows = np.arange(overlap.gt_ids.size)
    best = np.argmax(overlap.intersections, axis=1)
    intersections = overlap.intersections[rows, best]
    dices = (
        2
        * intersections
        / (overlap.gt_areas + overlap.pred_areas[best]).astype(float)
    )
    return float(np.mean(np.where(intersections > 0, dices, 0.0)))


class MetricReport:
    """
    Per-image metric values and their unweighted means.

    Attributes
    ----------
    rows : :class:`list`
        One :class:`dict` per image with keys stem, group, aji, f1, dice1,
        dice2, tp, fp, fn

    iou_thresh : :class:`float`
        Minimum IoU of matching pairs for the F1 score

    criterion : :class:`str`
        Matching criterion of the F1 score, "iou" or "centroid"


    Examples
    --------
    Evaluate a number of predictions:

    .. code-block:: python

        report = MetricReport()
        for stem, gt, pred in triples:
            report.add(stem, gt, pred)
        print(report.aggregate()["aji"])

    """

    names = ("aji", "f1", "dice1", "dice2")

    def __init__(self, iou_thresh=0.5, criterion="iou"):
        self.rows = []
        self.iou_thresh = iou_thresh
        self.criterion = criterion

    def add(self, stem, gt, pred, group=""):
        """
        Compute all metrics for one image and append them as a row.

        Parameters
        ----------
        stem : :class:`str`
            Name of the image

        gt : :class:`numpy.ndarray`
            Ground-truth instance map

        pred : :class:`numpy.ndarray`
            Predicted instance map

        group : :class:`str`
            Group the image belongs to, may be empty

        Returns
        -------
        row : :class:`dict`
            Metric values of the image

        """
        f1_score, tp, fp, fn = detection_f1(
            gt, pred, iou_thresh=self.iou_thresh, criterion=self.criterion
        )
        row = {
            "stem": stem,
            "group": group,
            "aji": aji(gt, pred),
            "f1": f1_score,
            "dice1": dice1(gt, pred),
            "dice2": dice2(gt, pred),
            "tp": tp,
            "fp": fp,
            "fn": fn,
        }
        self.rows.append(row)
        return row

    @property
    def groups(self):
        """Sorted names of all non-empty groups."""
        return sorted({row["group"] for row in self.rows if row["group"]})

    def aggregate(self, group=None):
        """
        Unweighted mean of each metric over images.

        Parameters
        ----------
        group : :class:`str`
            Restrict the mean to images of this group; None for all images

        Returns
        -------
        aggregate : :class:`dict`
            Mean of aji, f1, dice1, dice2 and sums of tp, fp, fn

        """
        rows = [
            row for row in self.rows if group is None or row["group"] == group
        ]
        aggregate = {
            name: float(np.mean([row[name] for row in rows])) if rows else 0.0
            for name in self.names
        }
        for name in ("tp", "fp", "fn"):
            aggregate[name] = int(sum(row[name] for row in rows))
        return aggregate
