"""
General facilities for input (and output).

In order to work with microscopy images, these images and their instance
maps need to be imported into the nucseg package. Therefore, the module
provides importers and exporters for the file formats used, as well as
functions reading and writing whole dataset directories, probability maps
and network checkpoints.

Another class implemented in this module is the
:class:`nucseg.io.DatasetImporterFactory`, a prerequisite for recipe-driven
data analysis. This factory returns the correct dataset importer for a
specific dataset depending on the information provided (usually, a filename).


Dataset directories
===================

A dataset directory contains two subdirectories with files of identical
names::

    images/<stem>.png   8-bit RGB image
    labels/<stem>.png   16-bit single-channel instance map, 0 = background

Optionally, a file ``groups.txt`` assigns images to groups (*e.g.*, organs
seen or unseen during training), one ``stem<TAB>group`` pair per line.

Predictions are written as 16-bit instance maps in the same format, one
``<stem>.png`` per image.


Probability maps
================

Probability maps are stored one per file as raw grids of 32-bit
little-endian floats with a twelve byte header: the magic ``BRPF``
followed by height and width as 32-bit little-endian unsigned integers.


Checkpoints
===========

Network checkpoints are dictionaries saved with :func:`torch.save`,
containing the kind of network, its configuration, its state dict, and
(for stage 1) the normalisation statistics of the training set. A version
number allows to detect incompatible files.


Module documentation
====================

"""

import glob
import logging
import os
import pickle

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

import aspecd.io
import aspecd.utils

import nucseg.dataset
from nucseg import exceptions, instances, utils


logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

IMAGE_DIR = "images"
LABEL_DIR = "labels"
GROUPS_FILE = "groups.txt"
PROBABILITY_MAGIC = b"BRPF"
CHECKPOINT_FORMAT = "nucseg-checkpoint"
CHECKPOINT_VERSION = 1
MAX_INSTANCES = np.iinfo(np.uint16).max
CHECKPOINT_READ_ERRORS = (
    RuntimeError,
    EOFError,
    OSError,
    pickle.UnpicklingError,
)


class DatasetImporterFactory(aspecd.io.DatasetImporterFactory):
    """Factory for creating importer objects based on the source provided.

    Currently, the sole information provided to decide about the appropriate
    importer is the source (a string). A concrete importer object is
    returned by the method ``get_importer()``. If no source is provided,
    an exception will be raised.

    If the source string does not match any of the importers handled by this
    module, the standard importers from the ASpecD framework are checked.
    See the documentation of the :class:`aspecd.io.DatasetImporterFactory`
    base class for details.

    Attributes
    ----------
    supported_formats : :class:`dict`
        Dictionary who's keys correspond to file extensions and who's values
        to the base name of the respective importer (*i.e.*, without the
        suffix "Importer").

    data_format : :class:`str`
        Name of the format that has been detected.

    """

    def __init__(self):
        super().__init__()
        self.supported_formats = {".png": "Png"}
        self.data_format = None

    def _get_importer(self):
        self._find_format()
        importer = None
        if self.data_format:
            importer = aspecd.utils.object_from_class_name(
                ".".join(["nucseg", "io", self.data_format + "Importer"])
            )
            importer.source = self.source
        return importer

    def _find_format(self):
        _, extension = os.path.splitext(self.source)
        if extension:
            self.data_format = self.supported_formats.get(extension.lower())
        else:
            for extension, data_format in self.supported_formats.items():
                if os.path.isfile(self.source + extension):
                    self.source += extension
                    self.data_format = data_format
                    break


class PngImporter(aspecd.io.DatasetImporter):
    """Importer for an image and its instance map in PNG format.

    The source is the path to the image, usually
    ``<directory>/images/<stem>.png``. The instance map is looked up as
    ``<directory>/labels/<stem>.png``.

    Parameters
    ----------
    source : :class:`str`
        Path to the image.

    Attributes
    ----------
    dataset : :obj:`nucseg.dataset.ExperimentalDataset`
        Entity containing data and metadata.

    require_labels : :class:`bool`
        Whether a missing instance map is an error.

        Default: False

    Raises
    ------
    nucseg.exceptions.MissingFileError
        Raised if the image, or a required instance map, is missing

    nucseg.exceptions.FileFormatError
        Raised if a file is no valid PNG or has the wrong number of channels

    """

    def __init__(self, source=""):
        super().__init__(source=source)
        # public properties
        self.dataset = None
        self.require_labels = False

    @property
    def stem(self):
        """File name of the source without directory and extension."""
        return os.path.splitext(os.path.basename(self.source))[0]

    @property
    def label_filename(self):
        """Path the instance map is expected at."""
        directory = os.path.dirname(os.path.dirname(self.source))
        return os.path.join(directory, LABEL_DIR, self.stem + ".png")

    def _import(self):
        if not os.path.isfile(self.source):
            raise exceptions.MissingFileError(
                message=f"Image {self.source} not found"
            )
        self.dataset.data.data = read_rgb_png(self.source)
        self.dataset.metadata.sample.stem = self.stem
        if os.path.isfile(self.label_filename):
            self._import_labels()
        elif self.require_labels:
            raise exceptions.MissingFileError(
                message=f'No instance map for image "{self.stem}"'
            )
        else:
            logger.warning(
                'No instance map found for image "%s", import continued '
                "without instance map.",
                self.stem,
            )

    def _import_labels(self):
        labels = read_label_png(self.label_filename)
        utils.check_same_shape(
            self.dataset.data.data,
            labels,
            names=[f"image {self.stem}", "instance map"],
        )
        self.dataset.instances.data = labels
        self.dataset.metadata.sample.n_instances = len(
            instances.instance_ids(labels)
        )


class LabelPngExporter(aspecd.io.DatasetExporter):
    """Exporter for instance maps as 16-bit PNG files.

    Attributes
    ----------
    target : :class:`str`
        Name of the file to write to

    attribute : :class:`str`
        Name of the dataset attribute to export, "prediction" or
        "instances"

        Default: "prediction"

    Raises
    ------
    ValueError
        Raised for an unknown attribute

    nucseg.exceptions.RangeError
        Raised if ids do not fit into 16 bit

    """

    def __init__(self, target=None):
        super().__init__(target=target)
        self.attribute = "prediction"

    def _export(self):
        if self.attribute not in ("prediction", "instances"):
            raise ValueError(f"Unknown attribute {self.attribute}")
        labels = getattr(self.dataset, self.attribute).data
        write_label_png(self.target, labels)


class DirectoryExporter(aspecd.io.DatasetExporter):
    """Exporter for image and instance map into a dataset directory.

    Writes ``images/<stem>.png`` and, if present, ``labels/<stem>.png``
    below the target directory, creating the subdirectories if needed.

    Attributes
    ----------
    target : :class:`str`
        Dataset directory

    """

    def _export(self):
        stem = self.dataset.stem
        if not stem:
            raise exceptions.MissingFileError(
                message="Dataset without stem cannot be written"
            )
        for name in (IMAGE_DIR, LABEL_DIR):
            os.makedirs(os.path.join(self.target, name), exist_ok=True)
        write_rgb_png(
            os.path.join(self.target, IMAGE_DIR, stem + ".png"),
            self.dataset.data.data,
        )
        if self.dataset.has_instances:
            write_label_png(
                os.path.join(self.target, LABEL_DIR, stem + ".png"),
                self.dataset.instances.data,
            )


class PatchStripExporter:
    """Exporter for proposal patches as image strips, for inspection.

    Each patch is written as a horizontal strip of panels of its size:
    the image channels rescaled to [0, 255], the masked segmentation and
    boundary probabilities, and the training label, if any.

    Attributes
    ----------
    target : :class:`str`
        Directory to write to

    """

    def __init__(self, target=""):
        self.target = target

    def export_from(self, records, stem=""):
        """
        Write one strip per patch record.

        Parameters
        ----------
        records : :class:`list`
            :class:`nucseg.patching.PatchRecord` objects

        stem : :class:`str`
            Stem of the image the patches come from

        Returns
        -------
        filenames : :class:`list`
            Names of the files written

        """
        os.makedirs(self.target, exist_ok=True)
        filenames = []
        for record in records:
            filename = os.path.join(
                self.target,
                f"{stem}_{record.proposal_id:04d}_{record.size_class}.png",
            )
            write_rgb_png(filename, self.strip(record))
            filenames.append(filename)
        return filenames

    @staticmethod
    def strip(record):
        """Panels of a patch record side by side, RGB uint8."""
        rgb = record.input[..., :3]
        span = np.ptp(rgb) or 1.0
        panels = [(rgb - rgb.min()) / span * 255]
        channels = [record.input[..., 3], record.input[..., 4]]
        if record.label is not None:
            channels.append(record.label)
        for channel in channels:
            panels.append(np.repeat(channel[..., np.newaxis] * 255, 3, -1))
        return np.clip(np.concatenate(panels, axis=1), 0, 255).astype(
            np.uint8
        )


def _open_png(filename):
    try:
        image = Image.open(filename)
        image.load()
    except FileNotFoundError as error:
        raise exceptions.MissingFileError(
            message=f"File {filename} not found"
        ) from error
    except (UnidentifiedImageError, OSError, SyntaxError) as error:
        raise exceptions.FileFormatError(
            message=f"{filename} is no valid PNG file"
        ) from error
    return image


def read_rgb_png(filename):
    """
    Read an 8-bit RGB image.

    Grey-scale and RGBA images are converted to RGB.

    Parameters
    ----------
    filename : :class:`str`
        Name of the file

    Returns
    -------
    image : :class:`numpy.ndarray`
        H x W x 3 uint8 array

    """
    image = np.asarray(_open_png(filename).convert("RGB"), dtype=np.uint8)
    if min(image.shape[:2]) < 8:
        raise exceptions.DimensionError(
            message=f"Image {filename} smaller than 8 x 8 pixels"
        )
    return image


def read_label_png(filename):
    """
    Read a single-channel instance map.

    Parameters
    ----------
    filename : :class:`str`
        Name of the file

    Returns
    -------
    labels : :class:`numpy.ndarray`
        H x W instance map

    Raises
    ------
    nucseg.exceptions.FileFormatError
        Raised if the file has more than one channel

    """
    labels = np.asarray(_open_png(filename))
    if labels.ndim != 2:
        raise exceptions.FileFormatError(
            message=f"Instance map {filename} is not single-channel"
        )
    return labels.astype(instances.INSTANCE_DTYPE)


def write_rgb_png(filename, image):
    """Write an H x W x 3 image as 8-bit RGB PNG, clipping to [0, 255]."""
    image = np.clip(np.round(np.asarray(image, dtype=np.float64)), 0, 255)
    Image.fromarray(image.astype(np.uint8)).save(filename)


def write_label_png(filename, labels):
    """
    Write an instance map as 16-bit single-channel PNG.

    Parameters
    ----------
    filename : :class:`str`
        Name of the file

    labels : :class:`numpy.ndarray`
        H x W instance map

    Raises
    ------
    nucseg.exceptions.RangeError
        Raised if ids are negative or do not fit into 16 bit

    """
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > MAX_INSTANCES):
        raise exceptions.RangeError(
            message=f"Instance ids must be in [0, {MAX_INSTANCES}]"
        )
    Image.fromarray(labels.astype(np.uint16)).save(filename)


def read_groups(directory):
    """
    Read the group assignment of a dataset directory.

    Parameters
    ----------
    directory : :class:`str`
        Dataset directory

    Returns
    -------
    groups : :class:`dict`
        Group per stem, empty if there is no groups file

    """
    filename = os.path.join(directory, GROUPS_FILE)
    groups = {}
    if not os.path.isfile(filename):
        return groups
    with open(filename, encoding="utf8") as file:
        for number, line in enumerate(file, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise exceptions.FileFormatError(
                    message=f"{filename}, line {number}: expected "
                    f"stem<TAB>group"
                )
            groups[fields[0].strip()] = fields[1].strip()
    return groups


def _stems(directory):
    return {
        os.path.splitext(os.path.basename(filename))[0]
        for filename in glob.glob(os.path.join(directory, "*.png"))
    }


def load_dataset(directory, require_labels=True):
    """
    Load all images of a dataset directory.

    Images are paired with their instance maps by stem and returned sorted
    by stem. Groups from the optional groups file are stored in the sample
    metadata.

    Parameters
    ----------
    directory : :class:`str`
        Dataset directory

    require_labels : :class:`bool`
        Whether every image needs an instance map

    Returns
    -------
    datasets : :class:`list`
        :class:`nucseg.dataset.ExperimentalDataset` objects

    Raises
    ------
    nucseg.exceptions.MissingFileError
        Raised if the directory has no images or there are orphan files

    """
    image_dir = os.path.join(directory, IMAGE_DIR)
    image_stems = _stems(image_dir)
    if not image_stems:
        raise exceptions.MissingFileError(
            message=f"No images found in {image_dir}"
        )
    label_stems = _stems(os.path.join(directory, LABEL_DIR))
    orphans = sorted(label_stems - image_stems)
    if require_labels:
        orphans += sorted(image_stems - label_stems)
    if orphans:
        raise exceptions.MissingFileError(
            message=f"Unpaired files for stems: {', '.join(orphans)}"
        )
    groups = read_groups(directory)
    datasets = []
    for stem in sorted(image_stems):
        importer = PngImporter(source=os.path.join(image_dir, stem + ".png"))
        importer.require_labels = require_labels
        dataset = nucseg.dataset.ExperimentalDataset()
        dataset.import_from(importer)
        dataset.metadata.sample.group = groups.get(stem, "")
        datasets.append(dataset)
    logger.info("Loaded %d images from %s", len(datasets), directory)
    return datasets


def save_dataset(datasets, directory):
    """Write images and instance maps into a dataset directory."""
    exporter = DirectoryExporter(target=directory)
    for dataset in datasets:
        dataset.export_to(exporter)
    groups = {
        dataset.stem: dataset.metadata.sample.group
        for dataset in datasets
        if dataset.metadata.sample.group
    }
    if groups:
        with open(
            os.path.join(directory, GROUPS_FILE), "w", encoding="utf8"
        ) as file:
            for stem in sorted(groups):
                file.write(f"{stem}\t{groups[stem]}\n")


def save_predictions(datasets, directory):
    """
    Write the predicted instance maps of datasets.

    Parameters
    ----------
    datasets : :class:`list`
        :class:`nucseg.dataset.ExperimentalDataset` objects with prediction

    directory : :class:`str`
        Directory to write ``<stem>.png`` files to

    Returns
    -------
    filenames : :class:`list`
        Names of the files written

    """
    os.makedirs(directory, exist_ok=True)
    exporter = LabelPngExporter()
    filenames = []
    for dataset in datasets:
        exporter.target = os.path.join(directory, dataset.stem + ".png")
        dataset.export_to(exporter)
        filenames.append(exporter.target)
    return filenames


def read_instance_maps(directory):
    """
    Read all instance maps of a directory.

    Parameters
    ----------
    directory : :class:`str`
        Directory with ``<stem>.png`` files or a dataset directory with a
        ``labels`` subdirectory

    Returns
    -------
    maps : :class:`dict`
        Instance map per stem

    """
    if os.path.isdir(os.path.join(directory, LABEL_DIR)):
        directory = os.path.join(directory, LABEL_DIR)
    return {
        stem: read_label_png(os.path.join(directory, stem + ".png"))
        for stem in sorted(_stems(directory))
    }


def write_probability_map(filename, probabilities):
    """
    Write a probability map as raw 32-bit grid with header.

    Parameters
    ----------
    filename : :class:`str`
        Name of the file

    probabilities : :class:`numpy.ndarray`
        H x W array

    """
    probabilities = np.asarray(probabilities)
    if probabilities.ndim != 2:
        raise exceptions.DimensionError(
            message="Probability map must be two-dimensional"
        )
    with open(filename, "wb") as file:
        file.write(PROBABILITY_MAGIC)
        file.write(np.array(probabilities.shape, dtype="<u4").tobytes())
        file.write(probabilities.astype("<f4").tobytes())


def read_probability_map(filename):
    """
    Read a probability map written by :func:`write_probability_map`.

    Parameters
    ----------
    filename : :class:`str`
        Name of the file

    Returns
    -------
    probabilities : :class:`numpy.ndarray`
        H x W float32 array

    Raises
    ------
    nucseg.exceptions.FileFormatError
        Raised for a wrong magic or a size not matching the header

    """
    if not os.path.isfile(filename):
        raise exceptions.MissingFileError(message=f"{filename} not found")
    with open(filename, "rb") as file:
        magic = file.read(len(PROBABILITY_MAGIC))
        header = file.read(8)
        content = file.read()
    if magic != PROBABILITY_MAGIC or len(header) != 8:
        raise exceptions.FileFormatError(
            message=f"{filename} is no probability map"
        )
    height, width = (int(value) for value in np.frombuffer(header, "<u4"))
    if len(content) != 4 * height * width:
        raise exceptions.FileFormatError(
            message=f"{filename}: {len(content)} bytes of data for a "
            f"{height} x {width} map"
        )
    return (
        np.frombuffer(content, dtype="<f4")
        .reshape(height, width)
        .astype(np.float32)
    )


def save_checkpoint(filename, kind, network, config=None, **kwargs):
    """
    Save a network together with its configuration.

    Parameters
    ----------
    filename : :class:`str`
        Name of the file

    kind : :class:`str`
        Kind of network, *e.g.* "stage1", "stage2-small"

    network : :class:`torch.nn.Module`
        Network to save

    config : :class:`nucseg.config.Parameters`
        Configuration of the network

    kwargs
        Further plain values stored alongside, *e.g.* statistics

    """
    directory = os.path.dirname(filename)
    if directory:
        os.makedirs(directory, exist_ok=True)
    checkpoint = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config.to_dict() if config is not None else {},
        "state_dict": network.state_dict(),
    }
    checkpoint.update(kwargs)
    torch.save(checkpoint, filename)
    logger.debug("Saved %s checkpoint to %s", kind, filename)


def load_checkpoint(filename, kind=None):
    """
    Load a checkpoint written by :func:`save_checkpoint`.

    Parameters
    ----------
    filename : :class:`str`
        Name of the file

    kind : :class:`str`
        Expected kind of network; not checked if None

    Returns
    -------
    checkpoint : :class:`dict`
        Contents of the checkpoint, tensors on the CPU

    Raises
    ------
    nucseg.exceptions.MissingFileError
        Raised if the file does not exist

    nucseg.exceptions.FileFormatError
        Raised for files of another format, version, or kind

    """
    if not os.path.isfile(filename):
        raise exceptions.MissingFileError(
            message=f"Checkpoint {filename} not found"
        )
    try:
        checkpoint = torch.load(filename, map_location="cpu")
    except CHECKPOINT_READ_ERRORS as error:
        raise exceptions.FileFormatError(
            message=f"{filename} is no checkpoint"
        ) from error
    if (
        not isinstance(checkpoint, dict)
        or checkpoint.get("format") != CHECKPOINT_FORMAT
    ):
        raise exceptions.FileFormatError(
            message=f"{filename} is no checkpoint"
        )
    if checkpoint.get("version") != CHECKPOINT_VERSION:
        raise exceptions.FileFormatError(
            message=f"Checkpoint version {checkpoint.get('version')} "
            f"not supported"
        )
    if kind and checkpoint["kind"] != kind:
        raise exceptions.FileFormatError(
            message=f"Expected {kind} checkpoint, got {checkpoint['kind']}"
        )
    return checkpoint
