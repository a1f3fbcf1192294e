"""
Fixed-size patches around instance proposals.

Stage 2 looks at each proposal separately. For every proposal, a square
window containing its bounding box with a margin on each side is cut out
of the image and both probability maps. The probability maps are masked
outside the (slightly dilated) proposal, so that the patch tells the
network *which* nucleus to segment. Depending on the side of the window,
the patch is classified as small or large and resized to the input size of
the respective network.

Windows are given as (row0, col0, side) in image coordinates; parts of a
window outside the image are zero-padded.


Module documentation
====================

"""

import numpy as np

from nucseg import exceptions, instances, utils


SMALL = "small"
LARGE = "large"


class PatchRecord:
    """
    One proposal patch, the unit of stage-2 work.

    Attributes
    ----------
    proposal_id : :class:`int`
        Id of the proposal

    window : :class:`tuple`
        Window (row0, col0, side) in image coordinates

    size_class : :class:`str`
        "small" or "large"

    input : :class:`numpy.ndarray`
        S x S x 5 float array with channels R, G, B, masked semantic and
        masked boundary probability

    scale : :class:`float`
        Window side divided by patch size S

    label : :class:`numpy.ndarray`
        S x S binary training label, None unless assigned

    matched_gt_id : :class:`int`
        Id of the ground-truth instance matched, None if unmatched or not
        assigned

    iou : :class:`float`
        IoU of proposal and matched ground-truth instance

    """

    def __init__(self, proposal_id=0, window=(0, 0, 1), size_class=SMALL):
        self.proposal_id = proposal_id
        self.window = window
        self.size_class = size_class
        self.input = np.zeros(0)
        self.scale = 1.0
        self.label = None
        self.matched_gt_id = None
        self.iou = 0.0

    @property
    def patch_size(self):
        """Side S of the resized patch."""
        return self.input.shape[0]


def _window_start(start, length, side, extent, margin):
    lowest = start + length + margin - side
    highest = start - margin
    centred = start - (side - length) // 2
    # shift towards the image as long as the margin is kept
    centred = min(max(centred, min(0, extent - side)), max(0, extent - side))
    return min(max(centred, lowest), highest)


def crop_window(proposal, image_shape, margin=12):
    """
    Square window around a proposal.

    The side equals the long side of the bounding box plus twice the
    margin. The window is centred on the bounding box and shifted towards
    the image to maximise its overlap, but never so far that less than
    ``margin`` pixels remain on any side of the bounding box.

    Parameters
    ----------
    proposal : :class:`nucseg.instances.Proposal`
        Proposal with bounding box

    image_shape : :class:`tuple`
        Shape (height, width) of the image

    margin : :class:`int`
        Minimal margin in pixels

    Returns
    -------
    window : :class:`tuple`
        (row0, col0, side)

    """
    row0, col0, height, width = proposal.bbox
    side = max(height, width) + 2 * margin
    return (
        _window_start(row0, height, side, image_shape[0], margin),
        _window_start(col0, width, side, image_shape[1], margin),
        side,
    )


def classify_size(side, params):
    """
    Size class of a window.

    Parameters
    ----------
    side : :class:`int`
        Side of the window

    params : :class:`nucseg.config.PatchParams`
        Patch sizes

    Returns
    -------
    size_class : :class:`str`
        "small" if the side does not exceed ``s_small``, "large" otherwise

    """
    if side < 1:
        raise exceptions.RangeError(message=f"Invalid window side {side}")
    return SMALL if side <= params.s_small else LARGE


def target_size(size_class, params):
    """Patch size S of a size class."""
    return params.s_small if size_class == SMALL else params.s_large


def mask_probabilities(probabilities, proposal, mask_dilation=2):
    """
    Zero probabilities outside the dilated proposal.

    Parameters
    ----------
    probabilities : :class:`nucseg.instances.ProbabilityPair`
        Probability maps of the whole image

    proposal : :class:`nucseg.instances.Proposal`
        Proposal defining the support

    mask_dilation : :class:`int`
        Chebyshev radius the proposal is dilated by

    Returns
    -------
    masked : :class:`nucseg.instances.ProbabilityPair`
        Probability maps, unchanged inside the dilated proposal

    """
    support = utils.chebyshev_dilate(
        proposal.full_mask(probabilities.shape), mask_dilation
    )
    return instances.ProbabilityPair(
        seg=np.where(support, probabilities.seg, 0),
        bnd=np.where(support, probabilities.bnd, 0),
    )


def window_mask(proposal, window):
    """
    Proposal mask on the grid of a window.

    Parameters
    ----------
    proposal : :class:`nucseg.instances.Proposal`
        Proposal

    window : :class:`tuple`
        (row0, col0, side)

    Returns
    -------
    mask : :class:`numpy.ndarray`
        Boolean side x side mask

    """
    row0, col0, side = window
    mask = np.zeros((side, side), dtype=bool)
    top, left = proposal.bbox[0] - row0, proposal.bbox[1] - col0
    height, width = proposal.mask.shape
    target = mask[
        max(top, 0) : max(top + height, 0),
        max(left, 0) : max(left + width, 0),
    ]
    target |= proposal.mask[
        max(-top, 0) : max(-top, 0) + target.shape[0],
        max(-left, 0) : max(-left, 0) + target.shape[1],
    ]
    return mask


def extract_patch(image, probabilities, proposal, params):
    """
    Cut, mask and resize the patch of one proposal.

    Parameters
    ----------
    image : :class:`numpy.ndarray`
        Normalised H x W x 3 image

    probabilities : :class:`nucseg.instances.ProbabilityPair`
        Probability maps of the image

    proposal : :class:`nucseg.instances.Proposal`
        Proposal to cut the patch for

    params : :class:`nucseg.config.PatchParams`
        Margin, patch sizes and mask dilation

    Returns
    -------
    record : :class:`PatchRecord`
        Patch with 5 channels of size S x S

    Raises
    ------
    nucseg.exceptions.EmptyProposalError
        Raised if the proposal has no pixels

    """
    if not proposal.area:
        raise exceptions.EmptyProposalError(
            message=f"Proposal {proposal.id} is empty"
        )
    utils.check_same_shape(
        image, probabilities.seg, names=["image", "probabilities"]
    )
    window = crop_window(proposal, image.shape, params.margin)
    row0, col0, side = window
    support = utils.chebyshev_dilate(
        window_mask(proposal, window), params.mask_dilation
    )
    channels = np.concatenate(
        [
            utils.crop_with_padding(
                np.asarray(image, dtype=np.float32), row0, col0, side
            ),
            utils.crop_with_padding(probabilities.stack(), row0, col0, side)
            * support[..., np.newaxis],
        ],
        axis=-1,
    )
    record = PatchRecord(
        proposal_id=proposal.id,
        window=window,
        size_class=classify_size(side, params),
    )
    size = target_size(record.size_class, params)
    record.input = utils.resize(channels, size, order=1).astype(np.float32)
    record.scale = side / size
    return record


def extract_patches(image, probabilities, proposal_labels, params):
    """
    Patches of all proposals of an image.

    Parameters
    ----------
    image : :class:`numpy.ndarray`
        Normalised H x W x 3 image

    probabilities : :class:`nucseg.instances.ProbabilityPair`
        Probability maps of the image

    proposal_labels : :class:`numpy.ndarray`
        Instance map of the proposals

    params : :class:`nucseg.config.PatchParams`
        Margin, patch sizes and mask dilation

    Returns
    -------
    proposals : :class:`list`
        :class:`nucseg.instances.Proposal` objects in ascending id order

    records : :class:`list`
        One :class:`PatchRecord` per proposal, in the same order

    """
    proposals = instances.proposals_from_instances(proposal_labels)
    records = [
        extract_patch(image, probabilities, proposal, params)
        for proposal in proposals
    ]
    return proposals, records
