"""
Image transformations: stain and intensity normalisation, augmentation.

Tissue images differ in colour due to staining and scanning. Before
entering the networks, each image is

#. stain normalised with respect to a reference image
   (:func:`stain_normalise`), and

#. z-score normalised with the per-channel statistics of the training set
   (:func:`zscore_normalise`).

During training, random geometric and photometric transformations
(:func:`augment`) are applied in between.

Images are handled as H x W x 3 float arrays with values in [0, 255]. All
functions are pure; randomness is controlled entirely by the random
number generator handed in.

For applying these transformations to datasets, see the corresponding
processing steps in :mod:`nucseg.processing`.


Stain normalisation
===================

Colours are transferred by matching the per-channel mean and standard
deviation in the decorrelated l-alpha-beta colour space: the image is
converted via LMS cone space and logarithms into l-alpha-beta, each
channel is shifted and scaled to the statistics of the reference, and the
result is converted back and clamped to [0, 255].


Module documentation
====================

"""

import numpy as np
from scipy import ndimage

from nucseg import exceptions


_RGB2LMS = np.array(
    [
        [0.3811, 0.5783, 0.0402],
        [0.1967, 0.7244, 0.0782],
        [0.0241, 0.1288, 0.8444],
    ]
)
_LMS2LAB = np.dot(
    np.diag([1 / np.sqrt(3), 1 / np.sqrt(6), 1 / np.sqrt(2)]),
    np.array([[1, 1, 1], [1, 1, -2], [1, -1, 0]]),
)
_LMS2RGB = np.linalg.inv(_RGB2LMS)
_LAB2LMS = np.linalg.inv(_LMS2LAB)


def _check_rgb(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise exceptions.DimensionError(
            message=f"RGB image of shape H x W x 3 expected, got "
            f"{image.shape}"
        )
    return image


def rgb_to_lab(image):
    """
    Convert an RGB image to the l-alpha-beta colour space.

    Parameters
    ----------
    image : :class:`numpy.ndarray`
        H x W x 3 RGB image, values in [0, 255]

    Returns
    -------
    image : :class:`numpy.ndarray`
        H x W x 3 image in l-alpha-beta space

    """
    image = _check_rgb(image)
    lms = image.reshape(-1, 3) @ _RGB2LMS.T
    lms[lms <= 0] = np.spacing(1)
    return (np.log(lms) @ _LMS2LAB.T).reshape(image.shape)


def lab_to_rgb(image):
    """
    Convert an l-alpha-beta image back to RGB.

    Parameters
    ----------
    image : :class:`numpy.ndarray`
        H x W x 3 image in l-alpha-beta space

    Returns
    -------
    image : :class:`numpy.ndarray`
        H x W x 3 RGB image, not clamped

    """
    image = np.asarray(image, dtype=np.float64)
    lms = np.exp(image.reshape(-1, 3) @ _LAB2LMS.T)
    return (lms @ _LMS2RGB.T).reshape(image.shape)


def lab_statistics(image):
    """
    Per-channel mean and standard deviation in l-alpha-beta space.

    Parameters
    ----------
    image : :class:`numpy.ndarray`
        H x W x 3 RGB image, values in [0, 255]

    Returns
    -------
    mean : :class:`numpy.ndarray`
        Three means

    std : :class:`numpy.ndarray`
        Three standard deviations

    """
    lab = rgb_to_lab(image).reshape(-1, 3)
    return lab.mean(axis=0), lab.std(axis=0)


def stain_normalise(image, reference=None, reference_statistics=None):
    """
    Transfer the colour statistics of a reference image onto an image.

    A source channel with zero variance is not scaled, only shifted to the
    reference mean, hence a constant image becomes constant at the
    reference mean.

    Parameters
    ----------
    image : :class:`numpy.ndarray`
        H x W x 3 RGB image, values in [0, 255]

    reference : :class:`numpy.ndarray`
        H x W x 3 RGB reference image

    reference_statistics : :class:`tuple`
        Mean and standard deviation of the reference in l-alpha-beta space
        (see :func:`lab_statistics`); used instead of ``reference``

    Returns
    -------
    image : :class:`numpy.ndarray`
        Normalised RGB image (float32), clamped to [0, 255]

    """
    if reference_statistics is None:
        if reference is None:
            raise exceptions.MissingFileError(
                message="Stain normalisation needs a reference"
            )
        reference_statistics = lab_statistics(reference)
    target_mean, target_std = (
        np.asarray(value, dtype=np.float64) for value in reference_statistics
    )
    lab = rgb_to_lab(image)
    mean = lab.reshape(-1, 3).mean(axis=0)
    std = lab.reshape(-1, 3).std(axis=0)
    scale = np.ones(3)
    varying = std > 0
    scale[varying] = target_std[varying] / std[varying]
    lab = (lab - mean) * scale + target_mean
    return np.clip(lab_to_rgb(lab), 0, 255).astype(np.float32)


def channel_statistics(images):
    """
    Per-channel mean and standard deviation over a set of images.

    Parameters
    ----------
    images : :class:`list`
        H x W x 3 images, possibly of different sizes

    Returns
    -------
    mean : :class:`numpy.ndarray`
        Three means

    std : :class:`numpy.ndarray`
        Three standard deviations

    """
    total = np.zeros(3)
    squares = np.zeros(3)
    count = 0
    for image in images:
        pixels = np.asarray(image, dtype=np.float64).reshape(-1, 3)
        total += pixels.sum(axis=0)
        squares += (pixels**2).sum(axis=0)
        count += pixels.shape[0]
    if not count:
        raise exceptions.DimensionError(message="No pixels to average")
    mean = total / count
    return mean, np.sqrt(np.maximum(squares / count - mean**2, 0))


def zscore_normalise(image, mean, std):
    """
    Subtract the mean and divide by the standard deviation, per channel.

    Parameters
    ----------
    image : :class:`numpy.ndarray`
        H x W x 3 image

    mean : :class:`list`
        Three means

    std : :class:`list`
        Three positive standard deviations

    Returns
    -------
    image : :class:`numpy.ndarray`
        Normalised image (float32)

    Raises
    ------
    nucseg.exceptions.RangeError
        Raised if a standard deviation is not positive

    """
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise exceptions.RangeError(
            message=f"Standard deviations must be positive, got {std}"
        )
    image = np.asarray(image, dtype=np.float64)
    return ((image - np.asarray(mean)) / std).astype(np.float32)


def augment(image, labels, augment_config, rng=None):
    """
    Randomly crop, flip, deform, jitter and blur an image.

    Geometric transformations (crop, flips, elastic deformation) are
    applied identically to image and instance map, with nearest neighbour
    interpolation for the latter. Photometric transformations (colour
    jitter, blur) affect the image only.

    Parameters
    ----------
    image : :class:`numpy.ndarray`
        H x W x 3 image, values in [0, 255]

    labels : :class:`numpy.ndarray`
        H x W instance map

    augment_config : :class:`nucseg.config.AugmentConfig`
        Crop size, probabilities and ranges

    rng : :class:`numpy.random.Generator`
        Random number generator; a new one seeded with
        ``augment_config.seed`` if None

    Returns
    -------
    image : :class:`numpy.ndarray`
        Augmented image (float32), crop_size x crop_size x 3

    labels : :class:`numpy.ndarray`
        Augmented instance map, crop_size x crop_size

    Raises
    ------
    nucseg.exceptions.DimensionError
        Raised if the image is smaller than the crop size

    """
    if rng is None:
        rng = np.random.default_rng(augment_config.seed)
    image = np.asarray(image, dtype=np.float32)
    labels = np.asarray(labels)
    size = augment_config.crop_size
    height, width = labels.shape
    if image.shape[:2] != labels.shape:
        raise exceptions.DimensionError(
            message="Image and instance map differ in shape"
        )
    if height < size or width < size:
        raise exceptions.DimensionError(
            message=f"Image of size {height}x{width} smaller than crop "
            f"size {size}"
        )
    row0 = int(rng.integers(0, height - size + 1))
    col0 = int(rng.integers(0, width - size + 1))
    image = image[row0 : row0 + size, col0 : col0 + size]
    labels = labels[row0 : row0 + size, col0 : col0 + size]
    if rng.random() < augment_config.hflip_prob:
        image, labels = image[:, ::-1], labels[:, ::-1]
    if rng.random() < augment_config.vflip_prob:
        image, labels = image[::-1], labels[::-1]
    if rng.random() < augment_config.elastic_prob:
        image, labels = elastic_deform(
            image,
            labels,
            alpha=augment_config.elastic_alpha,
            sigma=augment_config.elastic_sigma,
            rng=rng,
        )
    if rng.random() < augment_config.jitter_prob:
        image = colour_jitter(
            image,
            brightness=augment_config.brightness,
            contrast=augment_config.contrast,
            saturation=augment_config.saturation,
            rng=rng,
        )
    if rng.random() < augment_config.blur_prob:
        sigma = rng.uniform(*augment_config.blur_sigma)
        image = ndimage.gaussian_filter(image, sigma=(sigma, sigma, 0))
    return (
        np.ascontiguousarray(image, dtype=np.float32),
        np.ascontiguousarray(labels),
    )


def elastic_deform(image, labels, alpha=30.0, sigma=6.0, rng=None):
    """
    Deform image and instance map by a smooth random displacement field.

    Parameters
    ----------
    image : :class:`numpy.ndarray`
        H x W x 3 image

    labels : :class:`numpy.ndarray`
        H x W instance map

    alpha : :class:`float`
        Displacement scale in pixels

    sigma : :class:`float`
        Standard deviation of the Gaussian smoothing the field, in pixels

    rng : :class:`numpy.random.Generator`
        Random number generator

    Returns
    -------
    image : :class:`numpy.ndarray`
        Deformed image, bilinear interpolation

    labels : :class:`numpy.ndarray`
        Deformed instance map, nearest neighbour interpolation

    """
    rng = rng or np.random.default_rng()
    shape = labels.shape
    displacements = [
        ndimage.gaussian_filter(
            rng.uniform(-1, 1, size=shape), sigma, mode="constant"
        )
        * alpha
        for _ in range(2)
    ]
    rows, cols = np.meshgrid(
        np.arange(shape[0]), np.arange(shape[1]), indexing="ij"
    )
    coordinates = [rows + displacements[0], cols + displacements[1]]
    deformed = np.stack(
        [
            ndimage.map_coordinates(
                image[..., channel], coordinates, order=1, mode="reflect"
            )
            for channel in range(image.shape[2])
        ],
        axis=-1,
    )
    deformed_labels = ndimage.map_coordinates(
        labels, coordinates, order=0, mode="reflect"
    )
    return deformed, deformed_labels.astype(labels.dtype)


def colour_jitter(
    image, brightness=0.1, contrast=0.1, saturation=0.1, rng=None
):
    """
    Randomly change brightness, contrast and saturation.

    Each factor is drawn uniformly from [1 - x, 1 + x] for the respective
    maximum relative change x.

    Parameters
    ----------
    image : :class:`numpy.ndarray`
        H x W x 3 image, values in [0, 255]

    brightness, contrast, saturation : :class:`float`
        Maximum relative changes

    rng : :class:`numpy.random.Generator`
        Random number generator

    Returns
    -------
    image : :class:`numpy.ndarray`
        Jittered image, clamped to [0, 255]

    """
    rng = rng or np.random.default_rng()
    image = np.asarray(image, dtype=np.float32)
    image = image * rng.uniform(1 - brightness, 1 + brightness)
    image = (image - image.mean()) * rng.uniform(
        1 - contrast, 1 + contrast
    ) + image.mean()
    grey = image.mean(axis=2, keepdims=True)
    image = grey + (image - grey) * rng.uniform(
        1 - saturation, 1 + saturation
    )
    return np.clip(image, 0, 255)
