"""
Proposal-wise segmentation: training labels, inference and assembly.

For training the stage-2 networks, each proposal needs a label: if the
proposal overlaps some ground-truth instance with an IoU larger than tau,
the label is that ground-truth instance, cut and resized exactly like the
patch; otherwise the proposal is considered a false positive and its label
is empty (:func:`match_proposal`).

During inference, the patches are fed into the network of their size class
(:func:`refine_batch`), and the refined masks are pasted back into an
instance map of the whole image (:func:`assemble`).


Module documentation
====================

"""

import logging

import numpy as np
import torch

from nucseg import exceptions, instances, patching, utils


logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())


class MatchResult:
    """
    Result of matching one proposal against the ground truth.

    Attributes
    ----------
    proposal_id : :class:`int`
        Id of the proposal

    matched_gt_id : :class:`int`
        Id of the matched ground-truth instance, None if unmatched

    iou : :class:`float`
        Maximum IoU of the proposal with any ground-truth instance

    label : :class:`numpy.ndarray`
        Binary S x S label, all zero if unmatched

    """

    def __init__(
        self, proposal_id=0, matched_gt_id=None, iou=0.0, label=None
    ):
        self.proposal_id = proposal_id
        self.matched_gt_id = matched_gt_id
        self.iou = iou
        self.label = label


def match_proposal(proposal, gt, tau=0.5, window=None, size=None):
    """
    Match a proposal to the ground truth and construct its label.

    Parameters
    ----------
    proposal : :class:`nucseg.instances.Proposal`
        Proposal to match

    gt : :class:`numpy.ndarray`
        Ground-truth instance map

    tau : :class:`float`
        IoU threshold; matching requires an IoU strictly larger

    window : :class:`tuple`
        Window (row0, col0, side) of the patch; defaults to the bounding
        box of the proposal with no margin

    size : :class:`int`
        Patch size S the label is resized to; defaults to the window side

    Returns
    -------
    result : :class:`MatchResult`
        Matched id, IoU and label

    Raises
    ------
    nucseg.exceptions.RangeError
        Raised if tau is not in [0, 1]

    """
    if not 0 <= tau <= 1:
        raise exceptions.RangeError(message=f"tau {tau} not in [0, 1]")
    gt = np.asarray(gt)
    if window is None:
        row0, col0, height, width = proposal.bbox
        window = (row0, col0, max(height, width))
    size = size or window[2]
    result = MatchResult(
        proposal_id=proposal.id, label=np.zeros((size, size), np.uint8)
    )
    row0, col0, height, width = proposal.bbox
    covered = gt[row0 : row0 + height, col0 : col0 + width][proposal.mask]
    covered = covered[covered > 0]
    if not covered.size:
        return result
    ids, intersections = np.unique(covered, return_counts=True)
    areas = np.array([np.count_nonzero(gt == id_) for id_ in ids])
    ious = intersections / (proposal.area + areas - intersections)
    best = int(np.argmax(ious))
    result.iou = float(ious[best])
    if result.iou > tau:
        result.matched_gt_id = int(ids[best])
        instance = (gt == ids[best]).astype(np.uint8)
        result.label = utils.resize(
            utils.crop_with_padding(instance, *window), size, order=0
        )
    return result


def assign_labels(records, proposals, gt, tau=0.5):
    """
    Attach training labels to patch records.

    Parameters
    ----------
    records : :class:`list`
        :class:`nucseg.patching.PatchRecord` objects

    proposals : :class:`list`
        Proposals the records have been extracted for, in the same order

    gt : :class:`numpy.ndarray`
        Ground-truth instance map

    tau : :class:`float`
        IoU threshold

    Returns
    -------
    records : :class:`list`
        The records with label, matched_gt_id and iou set

    """
    for record, proposal in zip(records, proposals):
        result = match_proposal(
            proposal,
            gt,
            tau=tau,
            window=record.window,
            size=record.patch_size,
        )
        record.label = result.label
        record.matched_gt_id = result.matched_gt_id
        record.iou = result.iou
    return records


def records_to_tensor(records):
    """Stack the inputs of patch records into an N x 5 x S x S tensor."""
    array = np.moveaxis(np.stack([record.input for record in records]), -1, 1)
    return torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32))


def refine_batch(records, networks, batch_size=32):
    """
    Refine patches with the network of their size class.

    Networks are evaluated in inference mode without gradients, hence the
    result is deterministic and independent of the order of the records.

    Parameters
    ----------
    records : :class:`list`
        :class:`nucseg.patching.PatchRecord` objects

    networks : :class:`dict`
        :class:`nucseg.network.RefineNet` per size class

    batch_size : :class:`int`
        Maximum number of patches evaluated at once

    Returns
    -------
    refined : :class:`list`
        One S x S probability map per record, in the order of the records

    Raises
    ------
    nucseg.exceptions.RangeError
        Raised if there is no network for the size class of a record

    nucseg.exceptions.DimensionError
        Raised if a patch does not have the size of its network

    """
    refined = [None] * len(records)
    for size_class in sorted({record.size_class for record in records}):
        network = networks.get(size_class)
        if network is None or network.size_class != size_class:
            raise exceptions.RangeError(
                message=f"No network for size class {size_class}"
            )
        indices = [
            index
            for index, record in enumerate(records)
            if record.size_class == size_class
        ]
        for index in indices:
            if records[index].patch_size != network.patch_size:
                raise exceptions.DimensionError(
                    message=f"Patch of size {records[index].patch_size} "
                    f"for network of size {network.patch_size}"
                )
        device = next(network.parameters()).device
        was_training = network.training
        network.eval()
        with torch.no_grad():
            for start in range(0, len(indices), batch_size):
                chunk = indices[start : start + batch_size]
                inputs = records_to_tensor([records[i] for i in chunk])
                outputs = network(inputs.to(device))[:, 0].cpu().numpy()
                for index, output in zip(chunk, outputs):
                    refined[index] = output
        network.train(was_training)
    return refined


def assemble(proposals, refined, windows, image_shape, threshold=0.5):
    """
    Paste refined masks back into an instance map of the whole image.

    Each refined map is resized to the side of its window, thresholded and
    pasted within the window. Proposals whose refined mask is empty are
    dropped. A pixel claimed by several proposals goes to the one with the
    highest refined probability at that pixel; ties go to the lower
    proposal id.

    Parameters
    ----------
    proposals : :class:`list`
        :class:`nucseg.instances.Proposal` objects

    refined : :class:`list`
        One S x S probability map per proposal

    windows : :class:`list`
        One window (row0, col0, side) per proposal

    image_shape : :class:`tuple`
        Shape (height, width) of the image

    threshold : :class:`float`
        Refined probabilities of at least this value are foreground

    Returns
    -------
    labels : :class:`numpy.ndarray`
        Instance map with contiguous ids

    """
    if not len(proposals) == len(refined) == len(windows):
        raise exceptions.DimensionError(
            message="Need one refined map and window per proposal"
        )
    shape = tuple(image_shape[:2])
    owner = np.zeros(shape, dtype=instances.INSTANCE_DTYPE)
    best = np.zeros(shape, dtype=np.float32)
    order = np.argsort([proposal.id for proposal in proposals], kind="stable")
    dropped = 0
    for index in order:
        row0, col0, side = windows[index]
        image_slices, window_slices = utils.window_overlap(
            row0, col0, side, shape
        )
        if image_slices is None:
            dropped += 1
            continue
        probability = utils.resize(
            np.asarray(refined[index], dtype=np.float32), side, order=1
        )[window_slices]
        foreground = probability >= threshold
        if not foreground.any():
            dropped += 1
            continue
        claim = foreground & (probability > best[image_slices])
        owner[image_slices][claim] = proposals[index].id
        best[image_slices][claim] = probability[claim]
    if dropped:
        logger.debug("Dropped %d of %d proposals", dropped, len(proposals))
    return instances.relabel_contiguous(owner)


def refine_instances(image, probabilities, proposal_labels, networks, params):
    """
    Refine all proposals of an image and assemble the final instance map.

    Parameters
    ----------
    image : :class:`numpy.ndarray`
        Normalised H x W x 3 image

    probabilities : :class:`nucseg.instances.ProbabilityPair`
        Probability maps of the image

    proposal_labels : :class:`numpy.ndarray`
        Instance map of the proposals

    networks : :class:`dict`
        :class:`nucseg.network.RefineNet` per size class

    params : :class:`nucseg.config.PatchParams`
        Margin, patch sizes and mask dilation

    Returns
    -------
    labels : :class:`numpy.ndarray`
        Final instance map

    records : :class:`list`
        Patch records of all proposals

    """
    proposals, records = patching.extract_patches(
        image, probabilities, proposal_labels, params
    )
    if not proposals:
        return np.zeros(image.shape[:2], instances.INSTANCE_DTYPE), records
    refined = refine_batch(records, networks)
    labels = assemble(
        proposals,
        refined,
        [record.window for record in records],
        image.shape[:2],
    )
    return labels, records
