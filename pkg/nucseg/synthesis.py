"""
Synthetic tissue images with exactly known nuclei.

Real annotated histopathology images are scarce and usually licensed. For
testing the whole pipeline end to end on a desk, this module generates
images of randomly placed elliptical "nuclei" on a textured background,
together with their exact instance maps.

Each image is generated from its own random number generator spawned from
a single seed sequence, hence the result for a given seed is identical
across runs and independent of the number of images generated.

The number of nuclei per image is Poisson distributed with ``density``
nuclei per 100 x 100 pixels on average. Nuclei are ellipses with semi-axes
between 4 and 9 pixels and random orientation, kept at least two pixels
apart from each other and smoothed such that removing a boundary of up
to two pixels and growing the rest back restores them exactly. With
probability ``overlap_prob``, a nucleus gets a partner partly occluding
it, recorded as a separate instance.

A typical use would be:

.. code-block::

    datasets = synth_generate(n_images=5, shape=(128, 128), seed=42)
    for dataset in datasets:
        nucseg.io.save_dataset(dataset, "synthetic")


Module documentation
====================

"""

import logging

import numpy as np
from scipy import ndimage
from skimage import draw

import nucseg.dataset
from nucseg import exceptions, instances, utils


logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

BACKGROUND_COLOUR = (236.0, 196.0, 218.0)
NUCLEUS_COLOUR = (96.0, 62.0, 146.0)
SEMI_AXES = (4.0, 9.0)
GAP = 2
ATTEMPTS = 20


class NucleusPainter:
    """
    Place elliptical nuclei on an instance map.

    Attributes
    ----------
    labels : :class:`numpy.ndarray`
        Instance map painted so far

    rng : :class:`numpy.random.Generator`
        Random number generator

    """

    def __init__(self, shape=(128, 128), rng=None):
        self.labels = np.zeros(shape, dtype=instances.INSTANCE_DTYPE)
        self.rng = rng or np.random.default_rng()
        self._next_id = 1

    @property
    def n_instances(self):
        """Number of instances painted."""
        return self._next_id - 1

    def random_ellipse(self, centre=None):
        """
        Rasterise an ellipse with random semi-axes and orientation.

        Parameters
        ----------
        centre : :class:`tuple`
            Centre (row, col); random within the image if None

        Returns
        -------
        mask : :class:`numpy.ndarray`
            Boolean mask of the ellipse
        """
        semi_axes = self.rng.uniform(*SEMI_AXES, size=2)
        rotation = self.rng.uniform(0, np.pi)
        if centre is None:
            reach = int(np.ceil(semi_axes.max())) + 1
            centre = [
                self.rng.uniform(reach, extent - 1 - reach)
                for extent in self.labels.shape
            ]
        rows, cols = draw.ellipse(
            centre[0],
            centre[1],
            semi_axes[0],
            semi_axes[1],
            shape=self.labels.shape,
            rotation=rotation,
        )
        mask = np.zeros(self.labels.shape, dtype=bool)
        mask[rows, cols] = True
        # union of squares of side 2 * GAP + 1, survives boundary removal
        return ndimage.binary_opening(mask, structure=utils.square(GAP))

    def _free(self, mask, ignore=0):
        occupied = (self.labels > 0) & (self.labels != ignore)
        return not np.any(utils.chebyshev_dilate(mask, GAP) & occupied)

    def _paint(self, mask):
        self.labels[mask] = self._next_id
        self._next_id += 1
        return self._next_id - 1

    def add_nucleus(self):
        """
        Place a single nucleus apart from all others.

        Returns
        -------
        id_ : :class:`int`
            Id of the new instance, 0 if no free place was found
        """
        for _ in range(ATTEMPTS):
            mask = self.random_ellipse()
            if mask.any() and self._free(mask):
                return self._paint(mask)
        return 0

    def add_partner(self, id_):
        """
        Place a nucleus partly occluding an existing one.

        The partner is only painted if the occluded nucleus keeps at least
        half its area and stays connected.

        Parameters
        ----------
        id_ : :class:`int`
            Id of the nucleus to occlude

        Returns
        -------
        id_ : :class:`int`
            Id of the partner, 0 if none was placed
        """
        original = self.labels == id_
        centre = ndimage.center_of_mass(original)
        reach = np.sqrt(original.sum() / np.pi)
        for _ in range(ATTEMPTS):
            angle = self.rng.uniform(0, 2 * np.pi)
            distance = reach * self.rng.uniform(1.2, 1.6)
            mask = self.random_ellipse(
                centre=(
                    centre[0] + distance * np.sin(angle),
                    centre[1] + distance * np.cos(angle),
                )
            )
            if not np.any(mask & original) or not self._free(mask, id_):
                continue
            remaining = original & ~mask
            if remaining.sum() < original.sum() / 2:
                continue
            if ndimage.label(remaining)[1] != 1:
                continue
            return self._paint(mask)
        return 0


def _texture(shape, sigma, rng):
    noise = ndimage.gaussian_filter(rng.standard_normal(shape), sigma)
    return noise / (noise.std() or 1.0)


def render(labels, rng=None):
    """
    Render an RGB tissue image for an instance map.

    Nuclei get a per-instance intensity, a fine texture and a darker rim;
    the background a coarse texture. The image is slightly blurred and
    noisy.

    Parameters
    ----------
    labels : :class:`numpy.ndarray`
        Instance map

    rng : :class:`numpy.random.Generator`
        Random number generator

    Returns
    -------
    image : :class:`numpy.ndarray`
        H x W x 3 image (uint8)

    """
    rng = rng or np.random.default_rng()
    shape = labels.shape
    image = np.empty(shape + (3,))
    image[:] = BACKGROUND_COLOUR
    image += 8 * _texture(shape, 6, rng)[..., np.newaxis]
    foreground = labels > 0
    if foreground.any():
        ids = np.arange(labels.max() + 1)
        intensity = np.r_[1.0, rng.uniform(0.75, 1.15, size=ids.size - 1)]
        nucleus = np.asarray(NUCLEUS_COLOUR) * intensity[labels][
            ..., np.newaxis
        ]
        nucleus += 10 * _texture(shape, 1, rng)[..., np.newaxis]
        rim = instances.instance_to_boundary(labels, width=1) > 0
        nucleus[rim] *= 0.8
        image[foreground] = nucleus[foreground]
    image = ndimage.gaussian_filter(image, sigma=(0.7, 0.7, 0))
    image += rng.normal(0, 3, size=image.shape)
    return np.clip(np.round(image), 0, 255).astype(np.uint8)


def synth_generate(
    n_images=1, shape=(128, 128), density=6.0, overlap_prob=0.1, seed=0
):
    """
    Generate synthetic images together with their instance maps.

    Parameters
    ----------
    n_images : :class:`int`
        Number of images

    shape : :class:`tuple`
        Height and width, both divisible by 8

    density : :class:`float`
        Mean number of nuclei per 10000 pixels

    overlap_prob : :class:`float`
        Probability for a nucleus to get an occluding partner

    seed : :class:`int`
        Seed of the random number generators

    Returns
    -------
    datasets : :class:`list`
        :class:`nucseg.dataset.ExperimentalDataset` objects with image,
        instance map and sample metadata (stem, number of instances)

    Raises
    ------
    nucseg.exceptions.DimensionError
        Raised if the shape is not divisible by 8

    """
    shape = tuple(int(extent) for extent in shape)
    if len(shape) != 2 or any(extent % 8 or extent < 8 for extent in shape):
        raise exceptions.DimensionError(
            message=f"Shape {shape} not divisible by 8"
        )
    if density < 0 or not 0 <= overlap_prob <= 1:
        raise exceptions.RangeError(
            message="Density must be non-negative, overlap probability in "
            "[0, 1]"
        )
    datasets = []
    sequences = np.random.SeedSequence(seed).spawn(n_images)
    for index, sequence in enumerate(sequences):
        rng = np.random.default_rng(sequence)
        painter = NucleusPainter(shape=shape, rng=rng)
        n_nuclei = rng.poisson(density * shape[0] * shape[1] / 1e4)
        for _ in range(n_nuclei):
            id_ = painter.add_nucleus()
            if id_ and rng.random() < overlap_prob:
                painter.add_partner(id_)
        dataset = nucseg.dataset.ExperimentalDataset()
        dataset.data.data = render(painter.labels, rng=rng)
        dataset.instances.data = painter.labels
        dataset.metadata.sample.stem = f"synth_{index:04d}"
        dataset.metadata.sample.organ = "synthetic"
        dataset.metadata.sample.n_instances = painter.n_instances
        logger.debug(
            "Generated %s with %d of %d nuclei",
            dataset.stem,
            painter.n_instances,
            n_nuclei,
        )
        datasets.append(dataset)
    return datasets
