"""
Data processing functionality.

.. sidebar:: Processing *vs.* analysis steps

    The key difference between processing and analysis steps: While a
    processing step *modifies* the data of the dataset it operates on,
    an analysis step returns a result based on data of a dataset, but leaves
    the original dataset unchanged.


Key to reproducible science is automatic documentation of each processing
step applied to the data of a dataset. Each processing step is
self-contained, meaning it contains every necessary information to perform
the processing task on a given dataset.

Processing steps, in contrast to analysis steps (see :mod:`nucseg.analysis`
for details), not only operate on data of a
:class:`nucseg.dataset.ExperimentalDataset`, but change its data. The
information necessary to reproduce each processing step gets added to the
:attr:`nucseg.dataset.ExperimentalDataset.history` attribute of a dataset.


Concrete processing steps
=========================

Normalisation of images before they enter the networks:

* :class:`StainNormalisation`

  Transfer the colour statistics of a reference image

* :class:`ZScoreNormalisation`

  Subtract the mean and divide by the standard deviation per channel

Data augmentation during training:

* :class:`Augmentation`

  Random crop, flips, elastic deformation, colour jitter and blur, applied
  consistently to image and instance map

Post-processing of the probability maps predicted by the stage-1 network:

* :class:`ProposalGeneration`

  Boundary subtraction, connected components, small object removal and
  dilation, resulting in an instance map of proposals


Module documentation
====================

"""

import numpy as np

import aspecd.processing

from nucseg import config, instances, proposals, transforms


def _is_rgb_dataset(dataset):
    data = dataset.data.data
    return data.ndim == 3 and data.shape[2] == 3


class StainNormalisation(aspecd.processing.SingleProcessingStep):
    # noinspection PyUnresolvedReferences
    """
    Transfer the colour statistics of a reference image.

    Colour differences due to staining are reduced by matching the mean and
    standard deviation of each channel in the l-alpha-beta colour space to
    those of a reference image. For details, see
    :func:`nucseg.transforms.stain_normalise`.

    Attributes
    ----------
    parameters : :class:`dict`
        All parameters necessary for this step.

        reference : :class:`numpy.ndarray` or :class:`aspecd.dataset.Dataset`
            Reference RGB image or dataset containing it

        statistics : :class:`tuple`
            Mean and standard deviation of the reference in l-alpha-beta
            space, used instead of the reference image if given

        reference_stem : :class:`str`
            Name of the reference, stored in the metadata of the dataset

            Default: ""

    Raises
    ------
    ValueError
        Raised if neither reference nor statistics are given


    Examples
    --------
    For convenience, a series of examples in recipe style (for details of
    the recipe-driven data analysis, see :mod:`aspecd.tasks`) is given below
    for how to make use of this class.

    Normalise with respect to the image of another dataset:

    .. code-block:: yaml

       - kind: processing
         type: StainNormalisation
         properties:
           parameters:
             reference: reference_dataset

    """

    def __init__(self):
        super().__init__()
        self.description = "Stain normalisation"
        self.undoable = True
        self.parameters["reference"] = None
        self.parameters["statistics"] = None
        self.parameters["reference_stem"] = ""

    @staticmethod
    def applicable(dataset):
        """
        Check whether processing step is applicable to the given dataset.

        Stain normalisation is only applicable to RGB images.

        Parameters
        ----------
        dataset : :class:`aspecd.dataset.Dataset`
            dataset to check

        Returns
        -------
        applicable : :class:`bool`
            `True` if successful, `False` otherwise.

        """
        return _is_rgb_dataset(dataset)

    def _sanitise_parameters(self):
        reference = self.parameters["reference"]
        if hasattr(reference, "data") and hasattr(reference.data, "data"):
            if not self.parameters["reference_stem"] and hasattr(
                reference.metadata, "sample"
            ):
                self.parameters["reference_stem"] = getattr(
                    reference.metadata.sample, "stem", ""
                )
            self.parameters["reference"] = reference.data.data
        if (
            self.parameters["reference"] is None
            and self.parameters["statistics"] is None
        ):
            raise ValueError("Missing reference for stain normalisation")

    def _perform_task(self):
        self.dataset.data.data = transforms.stain_normalise(
            self.dataset.data.data,
            reference=self.parameters["reference"],
            reference_statistics=self.parameters["statistics"],
        )
        self.dataset.metadata.normalisation.reference = self.parameters[
            "reference_stem"
        ]


class ZScoreNormalisation(aspecd.processing.SingleProcessingStep):
    # noinspection PyUnresolvedReferences
    """
    Subtract the mean and divide by the standard deviation per channel.

    Mean and standard deviation are usually those of the whole training
    set, see :func:`nucseg.transforms.channel_statistics`.

    Attributes
    ----------
    parameters : :class:`dict`
        All parameters necessary for this step.

        mean : :class:`list`
            Three channel means

            Default: [0, 0, 0]

        std : :class:`list`
            Three positive channel standard deviations

            Default: [1, 1, 1]

    Raises
    ------
    nucseg.exceptions.RangeError
        Raised if a standard deviation is not positive


    Examples
    --------
    .. code-block:: yaml

       - kind: processing
         type: ZScoreNormalisation
         properties:
           parameters:
             mean: [180.2, 130.5, 170.9]
             std: [30.1, 35.6, 28.3]

    """

    def __init__(self):
        super().__init__()
        self.description = "Z-score normalisation"
        self.undoable = True
        self.parameters["mean"] = [0.0, 0.0, 0.0]
        self.parameters["std"] = [1.0, 1.0, 1.0]

    @staticmethod
    def applicable(dataset):
        """
        Check whether processing step is applicable to the given dataset.

        Z-score normalisation is only applicable to RGB images.

        Parameters
        ----------
        dataset : :class:`aspecd.dataset.Dataset`
            dataset to check

        Returns
        -------
        applicable : :class:`bool`
            `True` if successful, `False` otherwise.

        """
        return _is_rgb_dataset(dataset)

    def _sanitise_parameters(self):
        for key in ("mean", "std"):
            self.parameters[key] = [float(x) for x in self.parameters[key]]
            if len(self.parameters[key]) != 3:
                raise ValueError(f"Need three values for {key}")

    def _perform_task(self):
        self.dataset.data.data = transforms.zscore_normalise(
            self.dataset.data.data,
            mean=self.parameters["mean"],
            std=self.parameters["std"],
        )
        self.dataset.metadata.normalisation.mean = self.parameters["mean"]
        self.dataset.metadata.normalisation.std = self.parameters["std"]


class Augmentation(aspecd.processing.SingleProcessingStep):
    # noinspection PyUnresolvedReferences
    """
    Random geometric and photometric transformation of an image.

    Image and instance map are cropped, flipped and elastically deformed
    consistently; colour jitter and blur affect the image only. For a given
    seed, the result is always the same. For details, see
    :func:`nucseg.transforms.augment`.

    Attributes
    ----------
    parameters : :class:`dict`
        All parameters necessary for this step.

        config : :class:`nucseg.config.AugmentConfig` or :class:`dict`
            Crop size, probabilities and ranges

        seed : :class:`int`
            Seed of the random number generator

            Default: seed of the config

    """

    def __init__(self):
        super().__init__()
        self.description = "Data augmentation"
        self.undoable = True
        self.parameters["config"] = None
        self.parameters["seed"] = None

    @staticmethod
    def applicable(dataset):
        """
        Check whether processing step is applicable to the given dataset.

        Augmentation is only applicable to RGB images.

        Parameters
        ----------
        dataset : :class:`aspecd.dataset.Dataset`
            dataset to check

        Returns
        -------
        applicable : :class:`bool`
            `True` if successful, `False` otherwise.

        """
        return _is_rgb_dataset(dataset)

    def _sanitise_parameters(self):
        augment_config = self.parameters["config"]
        if augment_config is None or isinstance(augment_config, dict):
            augment_config = config.AugmentConfig().from_dict(augment_config)
        augment_config.validate()
        self.parameters["config"] = augment_config
        if self.parameters["seed"] is None:
            self.parameters["seed"] = augment_config.seed

    def _perform_task(self):
        labels = self.dataset.instances.data
        has_labels = labels.size > 0
        if not has_labels:
            labels = np.zeros(
                self.dataset.data.data.shape[:2], instances.INSTANCE_DTYPE
            )
        image, labels = transforms.augment(
            self.dataset.data.data,
            labels,
            self.parameters["config"],
            rng=np.random.default_rng(self.parameters["seed"]),
        )
        self.dataset.data.data = image
        if has_labels:
            self.dataset.instances.data = labels


class ProposalGeneration(aspecd.processing.SingleProcessingStep):
    # noinspection PyUnresolvedReferences
    """
    Instance proposals from predicted probability maps.

    The predicted boundary is subtracted from the predicted semantic
    segmentation, the remaining cores are labelled, small ones removed and
    the others grown back by the dilation radius. The resulting instance map
    is stored in the ``prediction`` attribute of the dataset. For details,
    see :func:`nucseg.proposals.propose`.

    Attributes
    ----------
    parameters : :class:`dict`
        All parameters necessary for this step.

        seg_thresh : :class:`float`
            Threshold of the semantic segmentation probabilities

            Default: 0.5

        bnd_thresh : :class:`float`
            Threshold of the boundary probabilities

            Default: 0.5

        min_area : :class:`int`
            Minimum area of proposals in pixels

            Default: 20

        dilation_radius : :class:`int`
            Radius to grow proposals by

            Default: 2

        connectivity : :class:`int`
            4 or 8

            Default: 4

    Raises
    ------
    aspecd.exceptions.NotApplicableToDatasetError
        Raised if the dataset contains no probability maps


    Examples
    --------
    Generate proposals with a smaller dilation radius:

    .. code-block:: yaml

       - kind: processing
         type: ProposalGeneration
         properties:
           parameters:
             dilation_radius: 1

    """

    def __init__(self):
        super().__init__()
        self.description = "Generate instance proposals"
        self.undoable = True
        self.parameters.update(config.PostprocParams().to_dict())

    @staticmethod
    def applicable(dataset):
        """
        Check whether processing step is applicable to the given dataset.

        Proposals can only be generated for datasets with probability maps.

        Parameters
        ----------
        dataset : :class:`aspecd.dataset.Dataset`
            dataset to check

        Returns
        -------
        applicable : :class:`bool`
            `True` if successful, `False` otherwise.

        """
        return getattr(dataset, "has_probabilities", False)

    def _sanitise_parameters(self):
        params = config.PostprocParams().from_dict(self.parameters)
        params.validate()

    def _perform_task(self):
        params = config.PostprocParams().from_dict(self.parameters)
        pair = instances.ProbabilityPair.from_stack(
            self.dataset.probabilities.data
        )
        self.dataset.prediction.data = proposals.propose(pair, params)
