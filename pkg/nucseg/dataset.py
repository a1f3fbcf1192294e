"""Datasets: units containing data and metadata.

The dataset is one key concept of the ASpecD framework and hence the nucseg
package derived from it, consisting of the data as well as the corresponding
metadata. A history of every processing and analysis step is recorded as
well, hence stain normalisation, proposal generation and the like are
always performed using the respective methods of a dataset.


Datasets
========

Generally, there are two types of datasets: Those containing experimental
data (microscopy images) and those containing calculated data, *e.g.* the
results of a parameter sweep. Therefore, two corresponding subclasses exist:

  * :class:`nucseg.dataset.ExperimentalDataset`
  * :class:`nucseg.dataset.CalculatedDataset`

An experimental dataset holds one RGB image as its primary data. Instance
maps and probability maps are aligned with the image pixel by pixel and
stored in additional :class:`aspecd.dataset.Data` attributes:

``instances``
    ground-truth instance map (0 = background, k = nucleus k)

``prediction``
    predicted instance map

``probabilities``
    H x W x 2 stack of semantic segmentation and boundary probabilities


Metadata
========

Besides the metadata inherited from the ASpecD framework, two metadata
classes are relevant:

  * :class:`nucseg.dataset.Sample`

    Stem of the file names, organ, and group (*e.g.* "seen"/"unseen")

  * :class:`nucseg.dataset.Normalisation`

    Reference image and statistics used for normalising the image


Dataset factory
===============

For recipe-driven data analysis (c.f. :mod:`aspecd.tasks`), datasets are
retrieved using nothing more than a source string, here the path of an
image file within a dataset directory:

  * :class:`nucseg.dataset.DatasetFactory`


Module documentation
====================

"""

import aspecd.dataset
import aspecd.metadata

import nucseg.io


class ExperimentalDataset(aspecd.dataset.ExperimentalDataset):
    """Microscopy image with aligned instance and probability maps.

    Attributes
    ----------
    metadata : :class:`nucseg.dataset.ExperimentalDatasetMetadata`
        Metadata of dataset.

    instances : :class:`aspecd.dataset.Data`
        Ground-truth instance map, H x W integers.

        Empty if no labels are available.

    prediction : :class:`aspecd.dataset.Data`
        Predicted instance map, H x W integers.

    probabilities : :class:`aspecd.dataset.Data`
        Semantic segmentation (channel 0) and boundary (channel 1)
        probabilities, H x W x 2.

    """

    def __init__(self):
        super().__init__()
        # public properties
        self.metadata = ExperimentalDatasetMetadata()
        self.instances = aspecd.dataset.Data()
        self.prediction = aspecd.dataset.Data()
        self.probabilities = aspecd.dataset.Data()

    @property
    def stem(self):
        """Stem of the file names of image and instance map."""
        return self.metadata.sample.stem

    @property
    def has_instances(self):
        """Whether a ground-truth instance map is present."""
        return self.instances.data.size > 0

    @property
    def has_probabilities(self):
        """Whether probability maps are present."""
        return self.probabilities.data.size > 0


class CalculatedDataset(aspecd.dataset.CalculatedDataset):
    """Entity consisting of calculated data and metadata.

    Used, *e.g.*, for the AJI values of a parameter sweep. As the class is
    fully inherited from ASpecD, see the ASpecD documentation of the
    :class:`aspecd.dataset.CalculatedDataset` class for details.

    """


class DatasetFactory(aspecd.dataset.DatasetFactory):
    """
    Factory for creating dataset objects based on the source provided.

    The DatasetFactory operates in conjunction with a
    :class:`nucseg.io.DatasetImporterFactory` to import the actual dataset.

    Attributes
    ----------
    importer_factory : :class:`nucseg.io.DatasetImporterFactory`
        ImporterFactory instance used for importing datasets

    """

    def __init__(self):
        super().__init__()
        self.importer_factory = nucseg.io.DatasetImporterFactory()

    @staticmethod
    def _create_dataset(source=""):
        return ExperimentalDataset()


class ExperimentalDatasetMetadata(
    aspecd.metadata.ExperimentalDatasetMetadata
):
    """Metadata for an experimental nucseg dataset.

    Metadata can be converted to dict via
    :meth:`aspecd.utils.ToDictMixin.to_dict()`, e.g., for generating
    reports using templates and template engines.

    Attributes
    ----------
    sample : :obj:`nucseg.dataset.Sample`
        Metadata corresponding to the sample.

    normalisation : :obj:`nucseg.dataset.Normalisation`
        Metadata corresponding to the normalisation of the image.

    """

    def __init__(self):
        super().__init__()
        # public properties
        self.sample = Sample()
        self.normalisation = Normalisation()


class Sample(aspecd.metadata.Sample):
    """Metadata corresponding to the sample, *i.e.* the tissue image.

    As this class inherits from :class:`aspecd.metadata.Sample`,
    see the documentation of the parent class for details and the full list
    of inherited attributes.

    Parameters
    ----------
    dict_ : :class:`dict`
        Dictionary containing fields corresponding to attributes of the class

    Attributes
    ----------
    stem : :class:`str`
        Stem shared by the image and label file names.

    organ : :class:`str`
        Organ the tissue has been taken from.

    group : :class:`str`
        Group used for group-wise aggregation of metrics, *e.g.* "seen"
        or "unseen" organs.

    n_instances : :class:`int`
        Number of nuclei, if known (*e.g.* for synthetic images).

    """

    def __init__(self, dict_=None):
        # public properties
        self.stem = ""
        self.organ = ""
        self.group = ""
        self.n_instances = None
        super().__init__(dict_=dict_)


class Normalisation(aspecd.metadata.Metadata):
    """Metadata corresponding to the normalisation of the image.

    Parameters
    ----------
    dict_ : :class:`dict`
        Dictionary containing fields corresponding to attributes of the class

    Attributes
    ----------
    reference : :class:`str`
        Stem of the reference image used for stain normalisation.

    mean : :class:`list`
        Per-channel mean used for z-score normalisation.

    std : :class:`list`
        Per-channel standard deviation used for z-score normalisation.

    """

    def __init__(self, dict_=None):
        # public properties
        self.reference = ""
        self.mean = []
        self.std = []
        super().__init__(dict_=dict_)
