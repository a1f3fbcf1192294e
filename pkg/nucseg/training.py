"""
Training of both stages, inference, evaluation and parameter sweeps.

The pipeline is trained in two steps:

#. The stage-1 network is trained on augmented crops of the training
   images to predict semantic segmentation and instance boundaries
   (:class:`Stage1Trainer`). Checkpoints are written at the end of every
   period of the learning-rate schedule and whenever the AJI on the
   validation images improves.

#. With the stage-1 network fixed, proposals are generated for all
   training images, cut into patches and labelled against the ground
   truth. The two stage-2 networks are trained on the patches of their
   size class (:class:`Stage2Trainer`).

For prediction, a :class:`Pipeline` chains normalisation, the stage-1
network, proposal generation and (optionally) stage-2 refinement.
:func:`evaluate` compares written predictions with ground truth, and
:func:`sweep` reruns the relevant part of the pipeline for a series of
values of one parameter.

All randomness is derived from the seed of the configuration, hence
training twice with the same seed on the same device yields identical
loss histories.


Output files
============

Training writes into an output directory:

* ``stage1_epoch<NNNN>.pt``: stage-1 checkpoint at the end of each period

* ``stage1_best.pt``: stage-1 checkpoint with the best validation AJI
  (the last one if there are no validation images)

* ``stage2_small.pt``, ``stage2_large.pt``: stage-2 checkpoints

* ``history.tsv``, ``history_stage2.tsv``: loss (and validation AJI) per
  epoch


Module documentation
====================

"""

import copy
import csv
import logging
import os

import numpy as np
import torch

import nucseg.analysis
import nucseg.dataset
import nucseg.io
import nucseg.processing
from nucseg import (
    config,
    exceptions,
    instances,
    losses,
    metrics,
    network,
    patching,
    proposals,
    refinement,
    schedule,
    transforms,
)


logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

STAGE1 = "stage1"
SWEEP_PARAMETERS = ("dilation_radius", "tau", "stage2_loss")


def select_device(device=None):
    """Return the given device, or a GPU if available, or the CPU."""
    if device:
        return torch.device(device)
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


def seed_everything(seed=0):
    """
    Seed torch and return a numpy random number generator.

    Parameters
    ----------
    seed : :class:`int`
        Seed

    Returns
    -------
    rng : :class:`numpy.random.Generator`
        Generator for everything done with numpy

    """
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    return np.random.default_rng(seed)


def split_validation(datasets, fraction=0.2, rng=None):
    """
    Split datasets randomly into training and validation datasets.

    Parameters
    ----------
    datasets : :class:`list`
        Datasets to split

    fraction : :class:`float`
        Fraction used for validation; at least one dataset is kept for
        training

    rng : :class:`numpy.random.Generator`
        Random number generator

    Returns
    -------
    train, val : :class:`list`
        Datasets for training and validation, each in the original order

    """
    rng = rng or np.random.default_rng()
    n_val = min(int(round(fraction * len(datasets))), len(datasets) - 1)
    if fraction <= 0 or n_val < 1:
        return list(datasets), []
    chosen = set(rng.permutation(len(datasets))[:n_val].tolist())
    train = [item for idx, item in enumerate(datasets) if idx not in chosen]
    val = [item for idx, item in enumerate(datasets) if idx in chosen]
    return train, val


def write_history(filename, rows):
    """Write rows of a training history as tab-separated file."""
    if not rows:
        return
    with open(filename, "w", encoding="utf8", newline="") as file:
        writer = csv.DictWriter(
            file, fieldnames=list(rows[0]), delimiter="\t"
        )
        writer.writeheader()
        writer.writerows(rows)


def _check_finite(loss, description):
    if not torch.isfinite(loss):
        raise exceptions.DivergenceError(
            message=f"Non-finite loss {loss.item()} in {description}"
        )


def _mean_aji(datasets):
    step = nucseg.analysis.SegmentationMetrics()
    step.parameters["output"] = "value"
    step.parameters["kind"] = "aji"
    return float(
        np.mean([dataset.analyse(step).result for dataset in datasets])
    )


class Normaliser:
    """
    Stain and z-score normalisation with statistics of a training set.

    Images are stain normalised with respect to a reference image and
    z-score normalised with the channel statistics of the stain-normalised
    training images. Both are applied to datasets as processing steps,
    hence recorded in their history.

    Attributes
    ----------
    reference : :class:`str`
        Stem of the reference image

    reference_statistics : :class:`list`
        Mean and standard deviation of the reference in l-alpha-beta space

    mean : :class:`list`
        Channel means of the stain-normalised training images

    std : :class:`list`
        Channel standard deviations of the stain-normalised training images

    """

    def __init__(self):
        self.reference = ""
        self.reference_statistics = None
        self.mean = [0.0, 0.0, 0.0]
        self.std = [1.0, 1.0, 1.0]

    def fit(self, datasets, reference=""):
        """
        Determine reference and statistics from training datasets.

        Parameters
        ----------
        datasets : :class:`list`
            Training datasets; they get stain normalised in place

        reference : :class:`str`
            Stem of the reference image; the lexicographically first stem
            if empty

        Returns
        -------
        normaliser : :class:`Normaliser`
            The normaliser itself

        """
        by_stem = {dataset.stem: dataset for dataset in datasets}
        if reference and reference not in by_stem:
            raise exceptions.MissingFileError(
                message=f'Reference image "{reference}" not among the '
                f"training images"
            )
        self.reference = reference or min(by_stem)
        self.reference_statistics = [
            [float(value) for value in values]
            for values in transforms.lab_statistics(
                by_stem[self.reference].data.data
            )
        ]
        mean, std = transforms.channel_statistics(
            [self.stain_normalise(dataset) for dataset in datasets]
        )
        self.mean = [float(value) for value in mean]
        self.std = [float(value) if value > 0 else 1.0 for value in std]
        logger.info(
            "Reference image %s, channel means %s", self.reference, self.mean
        )
        return self

    def stain_normalise(self, dataset):
        """Stain normalise a dataset unless done already; return image."""
        normalisation = dataset.metadata.normalisation
        if normalisation.reference != self.reference:
            step = nucseg.processing.StainNormalisation()
            step.parameters["statistics"] = self.reference_statistics
            step.parameters["reference_stem"] = self.reference
            dataset.process(step)
        return dataset.data.data

    def normalise(self, dataset):
        """Fully normalise a dataset unless done already; return image."""
        self.stain_normalise(dataset)
        if not len(dataset.metadata.normalisation.mean):
            step = nucseg.processing.ZScoreNormalisation()
            step.parameters["mean"] = self.mean
            step.parameters["std"] = self.std
            dataset.process(step)
        return dataset.data.data

    def zscore(self, image):
        """Z-score normalise an already stain-normalised image."""
        return transforms.zscore_normalise(image, self.mean, self.std)

    def to_dict(self):
        """Plain representation, for storing in checkpoints."""
        return {
            "reference": self.reference,
            "reference_statistics": self.reference_statistics,
            "mean": self.mean,
            "std": self.std,
        }

    def from_dict(self, dict_=None):
        """Restore from the representation of :meth:`to_dict`."""
        for key, value in (dict_ or {}).items():
            setattr(self, key, value)
        return self


def predict_probabilities(tafe_network, image):
    """
    Probability maps of a normalised image.

    The image is padded by reflection to a multiple of 8 and the result
    cropped back.

    Parameters
    ----------
    tafe_network : :class:`nucseg.network.TafeNetwork`
        Stage-1 network

    image : :class:`numpy.ndarray`
        Normalised H x W x 3 image

    Returns
    -------
    probabilities : :class:`nucseg.instances.ProbabilityPair`
        Semantic segmentation and boundary probabilities

    """
    height, width = image.shape[:2]
    padded = np.pad(
        np.asarray(image, dtype=np.float32),
        ((0, -height % 8), (0, -width % 8), (0, 0)),
        mode="reflect",
    )
    tensor = torch.from_numpy(
        np.ascontiguousarray(np.moveaxis(padded, -1, 0)[np.newaxis])
    )
    device = next(tafe_network.parameters()).device
    was_training = tafe_network.training
    tafe_network.eval()
    with torch.no_grad():
        output = tafe_network(tensor.to(device))
    tafe_network.train(was_training)
    seg, bnd = (
        probs[0, 0, :height, :width].cpu().numpy()
        for probs in (output.seg_prob, output.bnd_prob)
    )
    return instances.ProbabilityPair(seg=seg, bnd=bnd)


def load_stage1(filename, device=None):
    """
    Load a stage-1 checkpoint.

    Returns
    -------
    tafe_network : :class:`nucseg.network.TafeNetwork`
        Network in evaluation mode

    stage1_config : :class:`nucseg.config.Stage1Config`
        Configuration the network was trained with

    normaliser : :class:`Normaliser`
        Normalisation of the training set

    """
    checkpoint = nucseg.io.load_checkpoint(filename, kind=STAGE1)
    stage1_config = config.Stage1Config().from_dict(checkpoint["config"])
    tafe_network = network.TafeNetwork(stage1_config.tafe)
    tafe_network.load_state_dict(checkpoint["state_dict"])
    tafe_network.to(select_device(device)).eval()
    normaliser = Normaliser().from_dict(checkpoint["normalisation"])
    return tafe_network, stage1_config, normaliser


def load_stage2(small="", large="", device=None):
    """
    Load the checkpoints of both stage-2 networks.

    Returns
    -------
    networks : :class:`dict`
        :class:`nucseg.network.RefineNet` per size class

    patch_params : :class:`nucseg.config.PatchParams`
        Patch parameters the networks were trained with

    """
    networks = {}
    patch_params = None
    for size_class, filename in (
        (patching.SMALL, small),
        (patching.LARGE, large),
    ):
        checkpoint = nucseg.io.load_checkpoint(
            filename, kind=f"stage2-{size_class}"
        )
        stage2_config = config.Stage2Config().from_dict(checkpoint["config"])
        patch_params = patch_params or stage2_config.patch
        refine_network = network.RefineNet(
            stage2_config.refine,
            size_class=size_class,
            patch_size=patching.target_size(size_class, stage2_config.patch),
        )
        refine_network.load_state_dict(checkpoint["state_dict"])
        networks[size_class] = refine_network.to(select_device(device)).eval()
    return networks, patch_params


class Pipeline:
    """
    Prediction of instance maps from images.

    Attributes
    ----------
    tafe_network : :class:`nucseg.network.TafeNetwork`
        Stage-1 network

    normaliser : :class:`Normaliser`
        Normalisation of the training set

    postproc : :class:`nucseg.config.PostprocParams`
        Parameters of the proposal generation

    refine_networks : :class:`dict`
        Stage-2 networks per size class

    patch_params : :class:`nucseg.config.PatchParams`
        Parameters of the patch extraction

    use_stage2 : :class:`bool`
        Whether to refine proposals; if False, the proposals are the
        prediction


    Examples
    --------
    .. code-block:: python

        pipeline = Pipeline.from_checkpoints(
            "out/stage1_best.pt", "out/stage2_small.pt", "out/stage2_large.pt"
        )
        for dataset in nucseg.io.load_dataset("test"):
            pipeline.predict_dataset(dataset)

    """

    def __init__(
        self,
        tafe_network=None,
        normaliser=None,
        postproc=None,
        refine_networks=None,
        patch_params=None,
        use_stage2=True,
    ):
        self.tafe_network = tafe_network
        self.normaliser = normaliser or Normaliser()
        self.postproc = postproc or config.PostprocParams()
        self.refine_networks = refine_networks or {}
        self.patch_params = patch_params or config.PatchParams()
        self.use_stage2 = use_stage2 and bool(refine_networks)

    @classmethod
    def from_checkpoints(
        cls,
        stage1="",
        small="",
        large="",
        use_stage2=True,
        postproc=None,
        device=None,
    ):
        """
        Create a pipeline from checkpoint files.

        Parameters
        ----------
        stage1 : :class:`str`
            Stage-1 checkpoint

        small, large : :class:`str`
            Stage-2 checkpoints; only needed if use_stage2 is True

        use_stage2 : :class:`bool`
            Whether to refine proposals

        postproc : :class:`nucseg.config.PostprocParams`
            Parameters of the proposal generation; those of the stage-1
            training if None

        device : :class:`str`
            Device to run the networks on

        Returns
        -------
        pipeline : :class:`Pipeline`
            Pipeline ready for prediction

        """
        tafe_network, stage1_config, normaliser = load_stage1(stage1, device)
        refine_networks, patch_params = None, None
        if use_stage2:
            refine_networks, patch_params = load_stage2(small, large, device)
        return cls(
            tafe_network=tafe_network,
            normaliser=normaliser,
            postproc=postproc or stage1_config.postproc,
            refine_networks=refine_networks,
            patch_params=patch_params,
            use_stage2=use_stage2,
        )

    def probabilities(self, image):
        """Probability maps of a normalised image."""
        return predict_probabilities(self.tafe_network, image)

    def propose(self, probabilities):
        """Instance proposals from probability maps."""
        return proposals.propose(probabilities, self.postproc)

    def refine(self, image, probabilities, proposal_labels):
        """
        Refine proposals with the stage-2 networks.

        Returns
        -------
        labels : :class:`numpy.ndarray`
            Refined instance map; the proposals if stage 2 is not used

        records : :class:`list`
            Patch records, empty if stage 2 is not used

        """
        if not self.use_stage2:
            return proposal_labels, []
        return refinement.refine_instances(
            image,
            probabilities,
            proposal_labels,
            self.refine_networks,
            self.patch_params,
        )

    def predict(self, image):
        """
        Instance map of a normalised image.

        Returns
        -------
        labels : :class:`numpy.ndarray`
            Predicted instance map

        """
        pair = self.probabilities(image)
        return self.refine(image, pair, self.propose(pair))[0]

    def predict_dataset(self, dataset):
        """
        Predict the instance map of a dataset.

        The dataset gets normalised, its probability maps and prediction
        are set. Proposal generation is applied as processing step.

        Parameters
        ----------
        dataset : :class:`nucseg.dataset.ExperimentalDataset`
            Dataset with image

        Returns
        -------
        records : :class:`list`
            Patch records of stage 2, empty if stage 2 is not used

        """
        image = self.normaliser.normalise(dataset)
        pair = self.probabilities(image)
        dataset.probabilities.data = pair.stack()
        step = nucseg.processing.ProposalGeneration()
        step.parameters.update(self.postproc.to_dict())
        dataset.process(step)
        labels, records = self.refine(image, pair, dataset.prediction.data)
        dataset.prediction.data = labels
        if not labels.any():
            logger.warning("No nuclei found in image %s", dataset.stem)
        return records


class Stage1Trainer:
    """
    Training of the stage-1 network.

    Attributes
    ----------
    config : :class:`nucseg.config.TrainConfig`
        Configuration; only the stage-1 part and the seed are used

    output_dir : :class:`str`
        Directory checkpoints and history are written to; nothing is
        written if empty

    device : :class:`torch.device`
        Device to train on

    network : :class:`nucseg.network.TafeNetwork`
        Network trained

    normaliser : :class:`Normaliser`
        Normalisation of the training set

    history : :class:`list`
        One dict per epoch with epoch, lr, loss and val_aji

    best_aji : :class:`float`
        Best validation AJI so far, None without validation

    """

    def __init__(self, train_config=None, output_dir="", device=None):
        self.config = train_config or config.TrainConfig()
        self.output_dir = output_dir
        self.device = select_device(device)
        self.network = None
        self.normaliser = Normaliser()
        self.history = []
        self.best_aji = None

    def train(self, train_datasets, val_datasets=None):
        """
        Train the network.

        Parameters
        ----------
        train_datasets : :class:`list`
            Datasets with images and instance maps

        val_datasets : :class:`list`
            Datasets for validation; split off the training datasets
            according to the configuration if None

        Returns
        -------
        network : :class:`nucseg.network.TafeNetwork`
            Network after the last epoch

        Raises
        ------
        nucseg.exceptions.DivergenceError
            Raised if the loss is not finite

        """
        stage1 = self.config.stage1
        self.config.validate()
        if not train_datasets:
            raise exceptions.MissingFileError(message="No training images")
        rng = seed_everything(self.config.seed)
        if val_datasets is None:
            train_datasets, val_datasets = split_validation(
                train_datasets, stage1.val_fraction, rng
            )
        self.normaliser.fit(train_datasets, reference=stage1.reference)
        images = [self.normaliser.stain_normalise(d) for d in train_datasets]
        labels = [dataset.instances.data for dataset in train_datasets]
        self.network = network.TafeNetwork(stage1.tafe).to(self.device)
        optimiser = torch.optim.AdamW(
            self.network.parameters(),
            lr=stage1.lr0,
            betas=tuple(stage1.betas),
            weight_decay=stage1.weight_decay,
        )
        lr_schedule = schedule.Schedule(
            stage1.lr0, stage1.first_period, stage1.epochs
        )
        self.history = []
        self.best_aji = None
        for epoch in range(stage1.epochs):
            lr = lr_schedule.lr(epoch)
            for group in optimiser.param_groups:
                group["lr"] = lr
            loss = self._train_epoch(images, labels, optimiser, rng, epoch)
            row = {"epoch": epoch + 1, "lr": lr, "loss": loss, "val_aji": ""}
            last = epoch + 1 == stage1.epochs
            if val_datasets and ((epoch + 1) % stage1.val_every == 0 or last):
                row["val_aji"] = self.validate(val_datasets)
                if self.best_aji is None or row["val_aji"] > self.best_aji:
                    self.best_aji = row["val_aji"]
                    self._save("stage1_best.pt", epoch)
            self.history.append(row)
            logger.info(
                "Epoch %d: lr %.3g, loss %.5f, val AJI %s",
                epoch + 1,
                lr,
                loss,
                row["val_aji"],
            )
            if lr_schedule.is_restart(epoch + 1) or last:
                self._save(f"stage1_epoch{epoch + 1:04d}.pt", epoch)
        if not val_datasets:
            self._save("stage1_best.pt", stage1.epochs - 1)
        if self.output_dir:
            write_history(
                os.path.join(self.output_dir, "history.tsv"), self.history
            )
        return self.network

    def _batches(self, images, labels, rng):
        stage1 = self.config.stage1
        order = rng.permutation(len(images))
        for start in range(0, len(order), stage1.batch_size):
            crops, segs, bnds = [], [], []
            for index in order[start : start + stage1.batch_size]:
                image, crop_labels = transforms.augment(
                    images[index], labels[index], stage1.augment, rng=rng
                )
                crops.append(self.normaliser.zscore(image))
                segs.append(instances.instance_to_semantic(crop_labels))
                bnds.append(
                    instances.instance_to_boundary(
                        crop_labels, width=stage1.boundary_width
                    )
                )
            yield tuple(
                torch.from_numpy(np.ascontiguousarray(array, np.float32))
                for array in (
                    np.moveaxis(np.stack(crops), -1, 1),
                    np.stack(segs)[:, np.newaxis],
                    np.stack(bnds)[:, np.newaxis],
                )
            )

    def _train_epoch(self, images, labels, optimiser, rng, epoch):
        self.network.train()
        total, count = 0.0, 0
        for inputs, seg_gt, bnd_gt in self._batches(images, labels, rng):
            optimiser.zero_grad()
            outputs = self.network(inputs.to(self.device))
            loss = losses.stage1_loss(
                outputs,
                seg_gt.to(self.device),
                bnd_gt.to(self.device),
                self.config.stage1.loss,
            )
            _check_finite(loss, f"stage 1, epoch {epoch + 1}")
            loss.backward()
            optimiser.step()
            total += loss.item() * inputs.shape[0]
            count += inputs.shape[0]
        return total / count

    def validate(self, datasets):
        """Mean AJI of the stage-1 proposals on validation datasets."""
        pipeline = Pipeline(
            tafe_network=self.network,
            normaliser=self.normaliser,
            postproc=self.config.stage1.postproc,
            use_stage2=False,
        )
        values = [
            metrics.aji(
                dataset.instances.data,
                pipeline.predict(self.normaliser.normalise(dataset)),
            )
            for dataset in datasets
        ]
        return float(np.mean(values))

    def _save(self, filename, epoch):
        if not self.output_dir:
            return
        nucseg.io.save_checkpoint(
            os.path.join(self.output_dir, filename),
            kind=STAGE1,
            network=self.network,
            config=self.config.stage1,
            normalisation=self.normaliser.to_dict(),
            epoch=epoch + 1,
            seed=self.config.seed,
        )


class Stage2Trainer:
    """
    Training of the two stage-2 networks.

    Attributes
    ----------
    config : :class:`nucseg.config.TrainConfig`
        Configuration; the stage-2 part, the proposal generation of the
        stage-1 part and the seed are used

    output_dir : :class:`str`
        Directory checkpoints and history are written to; nothing is
        written if empty

    device : :class:`torch.device`
        Device to train on

    networks : :class:`dict`
        :class:`nucseg.network.RefineNet` per size class

    records : :class:`dict`
        Labelled :class:`nucseg.patching.PatchRecord` objects per size
        class

    history : :class:`list`
        One dict per network and epoch with network, epoch, lr and loss

    """

    def __init__(self, train_config=None, output_dir="", device=None):
        self.config = train_config or config.TrainConfig()
        self.output_dir = output_dir
        self.device = select_device(device)
        self.networks = {}
        self.records = {}
        self.history = []

    def collect_records(self, datasets, pipeline):
        """
        Labelled patches of the proposals of all datasets.

        Parameters
        ----------
        datasets : :class:`list`
            Datasets with images and instance maps

        pipeline : :class:`Pipeline`
            Pipeline providing normalisation, stage 1 and proposals

        Returns
        -------
        records : :class:`dict`
            Records per size class

        Raises
        ------
        nucseg.exceptions.NoProposalsError
            Raised if there are no proposals on any image

        """
        stage2 = self.config.stage2
        self.records = {patching.SMALL: [], patching.LARGE: []}
        for dataset in datasets:
            image = pipeline.normaliser.normalise(dataset)
            pair = pipeline.probabilities(image)
            proposal_list, records = patching.extract_patches(
                image, pair, pipeline.propose(pair), stage2.patch
            )
            if not proposal_list:
                logger.warning("No proposals on image %s", dataset.stem)
                continue
            refinement.assign_labels(
                records, proposal_list, dataset.instances.data, stage2.tau
            )
            for record in records:
                self.records[record.size_class].append(record)
        if not any(self.records.values()):
            raise exceptions.NoProposalsError(
                message="No proposals on any training image"
            )
        logger.info(
            "%d small and %d large patches",
            len(self.records[patching.SMALL]),
            len(self.records[patching.LARGE]),
        )
        return self.records

    def train(self, train_datasets, stage1_checkpoint=""):
        """
        Train both networks on the proposals of a trained stage 1.

        Parameters
        ----------
        train_datasets : :class:`list`
            Datasets with images and instance maps

        stage1_checkpoint : :class:`str`
            Checkpoint of the stage-1 network

        Returns
        -------
        networks : :class:`dict`
            Trained networks per size class

        """
        stage2 = self.config.stage2
        self.config.validate()
        rng = seed_everything(self.config.seed)
        pipeline = Pipeline.from_checkpoints(
            stage1_checkpoint,
            use_stage2=False,
            postproc=self.config.stage1.postproc,
            device=self.device,
        )
        self.collect_records(train_datasets, pipeline)
        self.networks = network.build_refine_nets(stage2.refine, stage2.patch)
        self.history = []
        for size_class, refine_network in self.networks.items():
            refine_network.to(self.device)
            if self.records[size_class]:
                self._train_network(refine_network, rng)
            else:
                logger.warning(
                    "No %s patches, network left untrained", size_class
                )
            if self.output_dir:
                nucseg.io.save_checkpoint(
                    os.path.join(self.output_dir, f"stage2_{size_class}.pt"),
                    kind=f"stage2-{size_class}",
                    network=refine_network,
                    config=stage2,
                    seed=self.config.seed,
                )
        if self.output_dir:
            write_history(
                os.path.join(self.output_dir, "history_stage2.tsv"),
                self.history,
            )
        return self.networks

    def _train_network(self, refine_network, rng):
        stage2 = self.config.stage2
        records = self.records[refine_network.size_class]
        inputs = refinement.records_to_tensor(records)
        targets = torch.from_numpy(
            np.stack([record.label for record in records]).astype(np.float32)
        )[:, np.newaxis]
        optimiser = torch.optim.AdamW(
            refine_network.parameters(),
            lr=stage2.lr0,
            betas=tuple(stage2.betas),
            weight_decay=stage2.weight_decay,
        )
        lr_schedule = schedule.Schedule(
            stage2.lr0, stage2.epochs, stage2.epochs
        )
        refine_network.train()
        for epoch in range(stage2.epochs):
            lr = lr_schedule.lr(epoch)
            for group in optimiser.param_groups:
                group["lr"] = lr
            order = torch.from_numpy(rng.permutation(len(records)))
            total = 0.0
            for start in range(0, len(records), stage2.batch_size):
                batch = order[start : start + stage2.batch_size]
                optimiser.zero_grad()
                probs = refine_network(inputs[batch].to(self.device))
                loss = losses.stage2_loss(
                    probs,
                    targets[batch].to(self.device),
                    kind=stage2.loss,
                    loss_config=self.config.stage1.loss,
                )
                _check_finite(
                    loss,
                    f"stage 2 ({refine_network.size_class}), "
                    f"epoch {epoch + 1}",
                )
                loss.backward()
                optimiser.step()
                total += loss.item() * len(batch)
            row = {
                "network": refine_network.size_class,
                "epoch": epoch + 1,
                "lr": lr,
                "loss": total / len(records),
            }
            self.history.append(row)
            logger.info(
                "%s network, epoch %d: lr %.3g, loss %.5f",
                row["network"],
                row["epoch"],
                lr,
                row["loss"],
            )
        refine_network.eval()


def train_stage1(
    train_datasets,
    val_datasets=None,
    train_config=None,
    output_dir="",
    device=None,
):
    """Train the stage-1 network, see :class:`Stage1Trainer`."""
    trainer = Stage1Trainer(
        train_config, output_dir=output_dir, device=device
    )
    trainer.train(train_datasets, val_datasets)
    return trainer


def train_stage2(
    train_datasets,
    stage1_checkpoint,
    train_config=None,
    output_dir="",
    device=None,
):
    """Train the stage-2 networks, see :class:`Stage2Trainer`."""
    trainer = Stage2Trainer(
        train_config, output_dir=output_dir, device=device
    )
    trainer.train(train_datasets, stage1_checkpoint)
    return trainer


def infer(datasets, pipeline, patch_exporter=None):
    """
    Predict the instance maps of datasets.

    Parameters
    ----------
    datasets : :class:`list`
        Datasets with images

    pipeline : :class:`Pipeline`
        Pipeline to predict with

    patch_exporter : :class:`nucseg.io.PatchStripExporter`
        Exporter the stage-2 patches are written with, if any

    Returns
    -------
    labels : :class:`list`
        Predicted instance maps, also set as prediction of the datasets

    """
    predictions = []
    for dataset in datasets:
        records = pipeline.predict_dataset(dataset)
        if patch_exporter is not None:
            patch_exporter.export_from(records, stem=dataset.stem)
        predictions.append(dataset.prediction.data)
    if datasets and all(dataset.has_instances for dataset in datasets):
        logger.info("Mean AJI %.4f", _mean_aji(datasets))
    return predictions


def evaluate(pred_dir, gt_dir, iou_thresh=0.5, criterion="iou"):
    """
    Compare predicted with ground-truth instance maps.

    Parameters
    ----------
    pred_dir : :class:`str`
        Directory with predicted ``<stem>.png`` files

    gt_dir : :class:`str`
        Dataset directory (or directory of instance maps) with ground
        truth; its groups file, if any, defines the groups

    iou_thresh : :class:`float`
        IoU threshold of the F1 score

    criterion : :class:`str`
        Matching criterion of the F1 score, "iou" or "centroid"

    Returns
    -------
    report : :class:`nucseg.metrics.MetricReport`
        Metric values per image

    Raises
    ------
    nucseg.exceptions.MissingFileError
        Raised if the stems of predictions and ground truth differ

    """
    predictions = nucseg.io.read_instance_maps(pred_dir)
    ground_truth = nucseg.io.read_instance_maps(gt_dir)
    unpaired = sorted(set(predictions) ^ set(ground_truth))
    if unpaired or not ground_truth:
        raise exceptions.MissingFileError(
            message=f"Predictions and ground truth differ in stems: "
            f"{', '.join(unpaired) or 'no images'}"
        )
    groups = nucseg.io.read_groups(gt_dir)
    report = metrics.MetricReport(iou_thresh=iou_thresh, criterion=criterion)
    for stem in sorted(ground_truth):
        report.add(
            stem,
            ground_truth[stem],
            predictions[stem],
            group=groups.get(stem, ""),
        )
    return report


class SweepResult:
    """
    Mean AJI for each value of a swept parameter.

    Attributes
    ----------
    parameter : :class:`str`
        Name of the parameter

    values : :class:`list`
        Values of the parameter

    stage1_aji : :class:`list`
        Mean AJI of the stage-1 proposals per value

    pipeline_aji : :class:`list`
        Mean AJI of the whole pipeline per value; empty if not evaluated

    """

    def __init__(self, parameter="", values=None):
        self.parameter = parameter
        self.values = list(values or [])
        self.stage1_aji = []
        self.pipeline_aji = []

    @property
    def numeric(self):
        """Whether all values are numbers."""
        return all(
            isinstance(value, (int, float)) and not isinstance(value, bool)
            for value in self.values
        )

    def rows(self):
        """One dict per value with value, stage1_aji and pipeline_aji."""
        return [
            {
                "value": value,
                "stage1_aji": self.stage1_aji[index],
                "pipeline_aji": (
                    self.pipeline_aji[index] if self.pipeline_aji else ""
                ),
            }
            for index, value in enumerate(self.values)
        ]

    def to_datasets(self):
        """
        Calculated datasets with the AJI as function of the value.

        Non-numeric values are represented by their index.

        Returns
        -------
        datasets : :class:`list`
            One :class:`nucseg.dataset.CalculatedDataset` per evaluated
            curve, labelled "stage 1" and "pipeline"

        """
        axis = (
            np.asarray(self.values, dtype=float)
            if self.numeric
            else np.arange(len(self.values), dtype=float)
        )
        datasets = []
        for label, values in (
            ("stage 1", self.stage1_aji),
            ("pipeline", self.pipeline_aji),
        ):
            if not values:
                continue
            dataset = nucseg.dataset.CalculatedDataset()
            dataset.data.data = np.asarray(values, dtype=float)
            dataset.data.axes[0].values = axis
            dataset.data.axes[0].quantity = self.parameter.replace("_", " ")
            dataset.data.axes[1].quantity = "AJI"
            dataset.label = label
            datasets.append(dataset)
        return datasets


def _aji_of(datasets, predictions):
    for dataset, labels in zip(datasets, predictions):
        dataset.prediction.data = labels
    return _mean_aji(datasets)


def sweep(
    parameter,
    values,
    eval_datasets,
    stage1_checkpoint,
    stage2_checkpoints=None,
    train_datasets=None,
    train_config=None,
    output_dir="",
    device=None,
):
    """
    Evaluate the pipeline for a series of values of one parameter.

    For the dilation radius, the stage-1 probabilities are computed once and
    only the proposal generation (and the refinement of the proposals with
    the given stage-2 networks) is rerun per value. For tau and the stage-2
    loss, the stage-2 networks are retrained per value.

    Parameters
    ----------
    parameter : :class:`str`
        "dilation_radius", "tau" or "stage2_loss"

    values : :class:`list`
        Values of the parameter

    eval_datasets : :class:`list`
        Datasets with images and instance maps to evaluate on

    stage1_checkpoint : :class:`str`
        Checkpoint of the stage-1 network

    stage2_checkpoints : :class:`tuple`
        Small and large stage-2 checkpoints, for sweeping the dilation
        radius of the whole pipeline; only stage 1 is evaluated if None

    train_datasets : :class:`list`
        Datasets to retrain stage 2 on, needed for tau and the loss

    train_config : :class:`nucseg.config.TrainConfig`
        Configuration the swept parameter is varied in

    output_dir : :class:`str`
        Directory for the retrained stage-2 networks

    device : :class:`str`
        Device to run the networks on

    Returns
    -------
    result : :class:`SweepResult`
        Mean AJI per value

    Raises
    ------
    nucseg.exceptions.UnknownParameterError
        Raised for a parameter that cannot be swept

    """
    if parameter not in SWEEP_PARAMETERS:
        raise exceptions.UnknownParameterError(
            message=f"Cannot sweep {parameter}, choose one of "
            f"{', '.join(SWEEP_PARAMETERS)}"
        )
    train_config = copy.deepcopy(train_config or config.TrainConfig())
    result = SweepResult(parameter, values)
    pipeline = Pipeline.from_checkpoints(
        stage1_checkpoint,
        use_stage2=False,
        postproc=train_config.stage1.postproc,
        device=device,
    )
    images = [pipeline.normaliser.normalise(d) for d in eval_datasets]
    pairs = [pipeline.probabilities(image) for image in images]
    if parameter == "dilation_radius":
        if stage2_checkpoints:
            pipeline.refine_networks, pipeline.patch_params = load_stage2(
                *stage2_checkpoints, device=device
            )
        for value in result.values:
            pipeline.postproc.dilation_radius = int(value)
            proposal_maps = [pipeline.propose(pair) for pair in pairs]
            result.stage1_aji.append(_aji_of(eval_datasets, proposal_maps))
            if stage2_checkpoints:
                pipeline.use_stage2 = True
                refined = [
                    pipeline.refine(image, pair, labels)[0]
                    for image, pair, labels in zip(
                        images, pairs, proposal_maps
                    )
                ]
                pipeline.use_stage2 = False
                result.pipeline_aji.append(_aji_of(eval_datasets, refined))
            logger.info("%s = %s: %s", parameter, value, result.rows()[-1])
        return result
    if not train_datasets:
        raise exceptions.MissingFileError(
            message=f"Sweeping {parameter} needs training images"
        )
    proposal_maps = [pipeline.propose(pair) for pair in pairs]
    stage1_aji = _aji_of(eval_datasets, proposal_maps)
    key = "tau" if parameter == "tau" else "loss"
    for value in result.values:
        value_config = copy.deepcopy(train_config)
        value_config.stage2.set(key, value)
        directory = (
            os.path.join(output_dir, f"{parameter}_{value}")
            if output_dir
            else ""
        )
        trainer = Stage2Trainer(
            value_config, output_dir=directory, device=device
        )
        pipeline.refine_networks = trainer.train(
            train_datasets, stage1_checkpoint
        )
        pipeline.patch_params = value_config.stage2.patch
        pipeline.use_stage2 = True
        refined = [
            pipeline.refine(image, pair, labels)[0]
            for image, pair, labels in zip(images, pairs, proposal_maps)
        ]
        result.stage1_aji.append(stage1_aji)
        result.pipeline_aji.append(_aji_of(eval_datasets, refined))
        logger.info("%s = %s: %s", parameter, value, result.rows()[-1])
    return result
