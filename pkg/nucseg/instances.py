"""
Conversions between instance, semantic and boundary representations.

An *instance map* is the central currency of the nucseg package: a 2D array
of non-negative integers where 0 denotes background and every positive
value denotes one nucleus instance. Two further representations are derived
from it and used as training targets:

* a *semantic mask*, marking every pixel that belongs to some nucleus, and

* a *boundary mask*, marking the ring of pixels at the border of each
  nucleus, including the interfaces where two nuclei touch.

The boundary is computed per instance, hence at an interface between two
touching nuclei both sides are marked. Subtracting the boundary from the
semantic mask is what disconnects crowded nuclei.

All functions in this module are pure: they never modify their input.


Distance
========

Distances are measured using the Chebyshev metric, *i.e.* the
8-neighbourhood: a pixel is within distance *w* of another pixel if both
its row and its column differ by at most *w*. This matches morphology with
square structuring elements.


Module documentation
====================

"""

import numpy as np
from scipy import ndimage

from nucseg import exceptions

INSTANCE_DTYPE = np.int32
"""Dtype used for instance maps held in memory."""


def relabel_contiguous(labels):
    """
    Relabel an instance map to ids 1..N in order of first occurrence.

    Instances are numbered in the order their first pixel appears when
    scanning the map row by row. The partition of the pixels is not
    changed, only the ids.

    Parameters
    ----------
    labels : :class:`numpy.ndarray`
        Instance map with arbitrary non-negative ids

    Returns
    -------
    relabelled : :class:`numpy.ndarray`
        Instance map with contiguous ids

    """
    labels = np.asarray(labels)
    flat = labels.ravel()
    relabelled = np.zeros(flat.shape, dtype=INSTANCE_DTYPE)
    ids, first_occurrence = np.unique(flat, return_index=True)
    foreground = ids != 0
    ids, first_occurrence = ids[foreground], first_occurrence[foreground]
    if not ids.size:
        return relabelled.reshape(labels.shape)
    ranks = np.empty(ids.size, dtype=INSTANCE_DTYPE)
    ranks[np.argsort(first_occurrence, kind="stable")] = np.arange(
        1, ids.size + 1
    )
    nonzero = flat != 0
    relabelled[nonzero] = ranks[np.searchsorted(ids, flat[nonzero])]
    return relabelled.reshape(labels.shape)


def instance_to_semantic(labels):
    """
    Convert an instance map into a binary semantic mask.

    Parameters
    ----------
    labels : :class:`numpy.ndarray`
        Instance map

    Returns
    -------
    mask : :class:`numpy.ndarray`
        Mask with value 1 wherever the instance map is non-zero

    """
    return (np.asarray(labels) > 0).astype(np.uint8)


def instance_to_boundary(labels, width=1):
    """
    Convert an instance map into a binary boundary mask.

    A pixel is boundary if it belongs to some instance *k* and lies within
    Chebyshev distance ``width`` of a pixel not belonging to *k*,
    regardless of whether that pixel is background or part of another
    instance. Only pixels inside the image are taken into account, hence
    instances touching the image border carry no boundary along it.

    Parameters
    ----------
    labels : :class:`numpy.ndarray`
        Instance map

    width : :class:`int`
        Boundary width in pixels, at least 1

    Returns
    -------
    mask : :class:`numpy.ndarray`
        Binary boundary mask of the same shape

    Raises
    ------
    nucseg.exceptions.RangeError
        Raised if width is smaller than 1

    """
    if width < 1:
        raise exceptions.RangeError(
            message=f"Boundary width must be at least 1, got {width}"
        )
    labels = np.asarray(labels)
    size = 2 * width + 1
    # mode "nearest" replicates real pixels, so no foreign value enters
    highest = ndimage.maximum_filter(labels, size=size, mode="nearest")
    lowest = ndimage.minimum_filter(labels, size=size, mode="nearest")
    boundary = (labels > 0) & ((highest != labels) | (lowest != labels))
    return boundary.astype(np.uint8)


def instance_ids(labels):
    """
    Return the sorted ids of all instances present in an instance map.

    Parameters
    ----------
    labels : :class:`numpy.ndarray`
        Instance map

    Returns
    -------
    ids : :class:`numpy.ndarray`
        Sorted positive ids

    """
    ids = np.unique(labels)
    return ids[ids > 0]


def instance_areas(labels):
    """
    Return a mapping from instance id to its number of pixels.

    Parameters
    ----------
    labels : :class:`numpy.ndarray`
        Instance map

    Returns
    -------
    areas : :class:`dict`
        Pixel count for each positive id

    """
    ids, counts = np.unique(labels, return_counts=True)
    return {
        int(id_): int(count) for id_, count in zip(ids, counts) if id_ > 0
    }


class ProbabilityPair:
    """
    Aligned semantic segmentation and boundary probability maps.

    Attributes
    ----------
    seg : :class:`numpy.ndarray`
        Probability of each pixel to belong to a nucleus, H x W in [0, 1]

    bnd : :class:`numpy.ndarray`
        Probability of each pixel to belong to a nucleus boundary,
        H x W in [0, 1]

    Raises
    ------
    nucseg.exceptions.DimensionError
        Raised if the shapes of both maps differ

    nucseg.exceptions.RangeError
        Raised if values are outside [0, 1] or not finite

    """

    def __init__(self, seg=None, bnd=None):
        self.seg = np.asarray(seg, dtype=np.float32)
        self.bnd = np.asarray(bnd, dtype=np.float32)
        if self.seg.shape != self.bnd.shape or self.seg.ndim != 2:
            raise exceptions.DimensionError(
                message=f"Probability maps need equal 2D shapes, got "
                f"{self.seg.shape} and {self.bnd.shape}"
            )
        for array in (self.seg, self.bnd):
            if not np.all(np.isfinite(array)) or (
                array.size and (array.min() < 0 or array.max() > 1)
            ):
                raise exceptions.RangeError(
                    message="Probabilities must be finite and in [0, 1]"
                )

    @property
    def shape(self):
        """Shape (height, width) of both maps."""
        return self.seg.shape

    @classmethod
    def from_stack(cls, stack):
        """
        Create a pair from an H x W x 2 stack (seg first).

        Parameters
        ----------
        stack : :class:`numpy.ndarray`
            Stacked probability maps

        Returns
        -------
        pair : :class:`ProbabilityPair`
            Pair of probability maps

        """
        return cls(seg=stack[..., 0], bnd=stack[..., 1])

    def stack(self):
        """Return both maps stacked along a last axis, seg first."""
        return np.stack([self.seg, self.bnd], axis=-1)


class Proposal:
    """
    One connected candidate instance.

    Attributes
    ----------
    id : :class:`int`
        Positive id of the proposal, identical to its label in the
        proposal instance map

    mask : :class:`numpy.ndarray`
        Boolean mask over the bounding box

    bbox : :class:`tuple`
        Bounding box (row0, col0, height, width) in image coordinates

    """

    def __init__(self, id_=1, mask=None, bbox=(0, 0, 1, 1)):
        self.id = int(id_)
        self.mask = np.asarray(mask, dtype=bool)
        self.bbox = tuple(int(value) for value in bbox)
        if self.mask.shape != self.bbox[2:]:
            raise exceptions.DimensionError(
                message=f"Mask of shape {self.mask.shape} does not fit "
                f"bounding box {self.bbox}"
            )

    @property
    def area(self):
        """Number of pixels of the proposal."""
        return int(self.mask.sum())

    def full_mask(self, shape):
        """
        Return the proposal mask on an image of given shape.

        Parameters
        ----------
        shape : :class:`tuple`
            Shape (height, width) of the image

        Returns
        -------
        mask : :class:`numpy.ndarray`
            Boolean mask

        """
        row0, col0, height, width = self.bbox
        mask = np.zeros(shape[:2], dtype=bool)
        mask[row0 : row0 + height, col0 : col0 + width] = self.mask
        return mask


def proposals_from_instances(labels):
    """
    Split an instance map into one proposal per instance.

    Parameters
    ----------
    labels : :class:`numpy.ndarray`
        Instance map

    Returns
    -------
    proposals : :class:`list`
        :class:`Proposal` objects in ascending id order

    """
    labels = np.asarray(labels)
    proposals = []
    if not labels.size:
        return proposals
    for index, slices in enumerate(ndimage.find_objects(labels)):
        if slices is None:
            continue
        id_ = index + 1
        rows, cols = slices
        proposals.append(
            Proposal(
                id_=id_,
                mask=labels[slices] == id_,
                bbox=(
                    rows.start,
                    cols.start,
                    rows.stop - rows.start,
                    cols.stop - cols.start,
                ),
            )
        )
    return proposals
