"""General purpose functions and classes used in other modules.

To avoid circular dependencies, this module does *not* depend on any other
modules of the nucseg package except :mod:`nucseg.exceptions`, but it can be
imported into every other module.

Most functions here deal with the geometry shared by label maps, probability
maps and images: comparing shapes, square (Chebyshev) neighbourhoods,
cropping with zero padding, and resizing.

"""

import numpy as np
from scipy import ndimage
import skimage.transform

from nucseg import exceptions


def check_same_shape(*arrays, names=None):
    """
    Make sure all arrays share the same shape of their first two axes.

    Parameters
    ----------
    arrays : :class:`numpy.ndarray`
        Arrays to compare

    names : :class:`list`
        Optional names of the arrays, used in the error message

    Raises
    ------
    nucseg.exceptions.DimensionError
        Raised if the spatial shapes differ

    """
    shapes = [np.shape(array)[:2] for array in arrays]
    if len(set(shapes)) > 1:
        names = names or [f"array {idx}" for idx in range(len(arrays))]
        description = ", ".join(
            f"{name} {shape}" for name, shape in zip(names, shapes)
        )
        raise exceptions.DimensionError(
            message=f"Shapes do not match: {description}"
        )


def square(radius):
    """
    Square structuring element for a Chebyshev ball of given radius.

    Parameters
    ----------
    radius : :class:`int`
        Radius of the ball; the element has side 2 * radius + 1

    Returns
    -------
    element : :class:`numpy.ndarray`
        Boolean array of ones

    """
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


def chebyshev_dilate(mask, radius):
    """
    Dilate a binary mask by a Chebyshev ball (square) of given radius.

    Parameters
    ----------
    mask : :class:`numpy.ndarray`
        Binary mask

    radius : :class:`int`
        Dilation radius in pixels; 0 returns the mask unchanged

    Returns
    -------
    dilated : :class:`numpy.ndarray`
        Boolean mask

    """
    mask = np.asarray(mask, dtype=bool)
    if radius <= 0:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=square(radius))


def crop_with_padding(array, row0, col0, side):
    """
    Cut a square window out of an array, zero-padding outside parts.

    Parameters
    ----------
    array : :class:`numpy.ndarray`
        Array with at least two dimensions; further axes (channels) are
        kept

    row0, col0 : :class:`int`
        Upper left corner of the window, may be negative

    side : :class:`int`
        Side length of the window

    Returns
    -------
    window : :class:`numpy.ndarray`
        Array of shape (side, side, ...) with the dtype of the input

    """
    height, width = array.shape[:2]
    window = np.zeros((side, side) + array.shape[2:], dtype=array.dtype)
    top, left = max(row0, 0), max(col0, 0)
    bottom, right = min(row0 + side, height), min(col0 + side, width)
    if bottom > top and right > left:
        window[top - row0 : bottom - row0, left - col0 : right - col0] = (
            array[top:bottom, left:right]
        )
    return window


def window_overlap(row0, col0, side, shape):
    """
    Slices of a square window and of the image covering their overlap.

    Parameters
    ----------
    row0, col0 : :class:`int`
        Upper left corner of the window in image coordinates

    side : :class:`int`
        Side length of the window

    shape : :class:`tuple`
        Shape (height, width) of the image

    Returns
    -------
    image_slices : :class:`tuple`
        Slices into the image, or None if there is no overlap

    window_slices : :class:`tuple`
        Matching slices into the window, or None if there is no overlap

    """
    top, left = max(row0, 0), max(col0, 0)
    bottom, right = min(row0 + side, shape[0]), min(col0 + side, shape[1])
    if bottom <= top or right <= left:
        return None, None
    image_slices = (slice(top, bottom), slice(left, right))
    window_slices = (
        slice(top - row0, bottom - row0),
        slice(left - col0, right - col0),
    )
    return image_slices, window_slices


def resize(array, size, order=1):
    """
    Resize the first two axes of an array to a square of given size.

    Bilinear interpolation (``order=1``) is used for images and
    probability maps, nearest neighbour (``order=0``) for label maps.
    Values are never rescaled and no anti-aliasing filter is applied.

    Parameters
    ----------
    array : :class:`numpy.ndarray`
        Array to resize

    size : :class:`int`
        Target side length

    order : :class:`int`
        Interpolation order, 0 or 1

    Returns
    -------
    resized : :class:`numpy.ndarray`
        Array of shape (size, size, ...)

    """
    if array.shape[0] == size and array.shape[1] == size:
        return array.copy()
    resized = skimage.transform.resize(
        array,
        (size, size) + array.shape[2:],
        order=order,
        mode="edge",
        preserve_range=True,
        anti_aliasing=False,
    )
    if order == 0:
        resized = resized.astype(array.dtype)
    return resized
