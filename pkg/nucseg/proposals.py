"""
Instance proposals from semantic segmentation and boundary probabilities.

Crowded nuclei touch each other, hence thresholding the semantic
segmentation alone merges them. Instead, the predicted boundary is
subtracted from the semantic segmentation, which disconnects touching
nuclei. The remaining cores are labelled as connected components, tiny
components are discarded, and each core is grown back over the subtracted
boundary ring:

#. binarise both probability maps (:func:`binarise`)
#. subtract the boundary (:func:`subtract_boundary`)
#. label connected components (:func:`connected_components`)
#. remove small components (:func:`remove_small`)
#. grow each instance (:func:`dilate_instances`)

The whole chain is available as :func:`propose`. All functions are pure and
deterministic; distances are Chebyshev distances.

For using proposal generation as a processing step on datasets, see
:class:`nucseg.processing.ProposalGeneration`.


Module documentation
====================

"""

import numpy as np
from scipy import ndimage

from nucseg import exceptions, instances, utils


_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def binarise(probabilities, threshold=0.5):
    """
    Binarise a probability map.

    Parameters
    ----------
    probabilities : :class:`numpy.ndarray`
        Probability map

    threshold : :class:`float`
        Pixels with a probability strictly above the threshold are set

    Returns
    -------
    mask : :class:`numpy.ndarray`
        Binary mask (uint8)

    """
    return (np.asarray(probabilities) > threshold).astype(np.uint8)


def subtract_boundary(seg_bin, bnd_bin):
    """
    Remove boundary pixels from a semantic mask.

    Parameters
    ----------
    seg_bin : :class:`numpy.ndarray`
        Binary semantic mask

    bnd_bin : :class:`numpy.ndarray`
        Binary boundary mask

    Returns
    -------
    mask : :class:`numpy.ndarray`
        Binary mask set where ``seg_bin`` is set and ``bnd_bin`` is not

    Raises
    ------
    nucseg.exceptions.DimensionError
        Raised if the shapes differ

    """
    utils.check_same_shape(seg_bin, bnd_bin, names=["seg", "bnd"])
    mask = np.logical_and(
        np.asarray(seg_bin, dtype=bool), np.logical_not(bnd_bin)
    )
    return mask.astype(np.uint8)


def connected_components(mask, connectivity=4):
    """
    Label the connected foreground components of a binary mask.

    Parameters
    ----------
    mask : :class:`numpy.ndarray`
        Binary mask

    connectivity : :class:`int`
        4 or 8

    Returns
    -------
    labels : :class:`numpy.ndarray`
        Instance map with ids 1..N in first-occurrence order

    Raises
    ------
    nucseg.exceptions.RangeError
        Raised if connectivity is neither 4 nor 8

    """
    if connectivity not in _STRUCTURES:
        raise exceptions.RangeError(
            message=f"Connectivity must be 4 or 8, got {connectivity}"
        )
    labels, _ = ndimage.label(
        np.asarray(mask, dtype=bool), structure=_STRUCTURES[connectivity]
    )
    return instances.relabel_contiguous(labels)


def remove_small(labels, min_area=0):
    """
    Remove instances with fewer pixels than a minimum area.

    Parameters
    ----------
    labels : :class:`numpy.ndarray`
        Instance map

    min_area : :class:`int`
        Instances with less pixels become background

    Returns
    -------
    labels : :class:`numpy.ndarray`
        Instance map relabelled contiguously

    """
    labels = np.asarray(labels)
    if labels.size and min_area > 0:
        areas = np.bincount(labels.ravel())
        small = areas < min_area
        small[0] = False
        labels = np.where(small[labels], 0, labels)
    return instances.relabel_contiguous(labels)


def dilate_instances(labels, radius=0):
    """
    Grow every instance into the surrounding background.

    Each background pixel within Chebyshev distance ``radius`` of at least
    one instance is assigned to the nearest instance; for pixels at equal
    distance to several instances, the lower id wins. Instance pixels are
    never reassigned, hence distinct instances never merge.

    Parameters
    ----------
    labels : :class:`numpy.ndarray`
        Instance map

    radius : :class:`int`
        Growth radius in pixels, 0 returns a copy

    Returns
    -------
    labels : :class:`numpy.ndarray`
        Grown instance map

    Raises
    ------
    nucseg.exceptions.RangeError
        Raised if radius is negative

    """
    if radius < 0:
        raise exceptions.RangeError(
            message=f"Dilation radius must be >= 0, got {radius}"
        )
    labels = np.asarray(labels).astype(instances.INSTANCE_DTYPE)
    grown = labels.copy()
    if radius == 0 or not labels.any():
        return grown
    sentinel = labels.max() + 1
    keyed = np.where(labels > 0, labels, sentinel)
    for distance in range(1, radius + 1):
        # lowest id within the Chebyshev ball of the original instances
        nearest = ndimage.minimum_filter(
            keyed, size=2 * distance + 1, mode="constant", cval=sentinel
        )
        unassigned = (grown == 0) & (nearest < sentinel)
        grown[unassigned] = nearest[unassigned]
        if grown.all():
            break
    return grown


def propose(probabilities, params):
    """
    Turn a pair of probability maps into instance proposals.

    Parameters
    ----------
    probabilities : :class:`nucseg.instances.ProbabilityPair`
        Semantic segmentation and boundary probabilities

    params : :class:`nucseg.config.PostprocParams`
        Thresholds, minimum area, dilation radius and connectivity

    Returns
    -------
    labels : :class:`numpy.ndarray`
        Instance map of proposals with ids 1..N

    """
    params.validate()
    cores = subtract_boundary(
        binarise(probabilities.seg, params.seg_thresh),
        binarise(probabilities.bnd, params.bnd_thresh),
    )
    labels = connected_components(cores, connectivity=params.connectivity)
    labels = remove_small(labels, min_area=params.min_area)
    return dilate_instances(labels, radius=params.dilation_radius)
