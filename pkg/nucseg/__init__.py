"""
nucseg package.

Package for two-stage instance segmentation of nuclei in histopathology
images: a multi-task network predicts semantic segmentation and instance
boundaries, instance proposals are derived by subtracting the boundaries,
and each proposal is refined on a patch by a second network.

Available modules
-----------------
:mod:`nucseg.dataset`
    Organise datasets, consisting of images, instance maps and metadata.
:mod:`nucseg.io`
    Import and export images, instance maps, probability maps and
    checkpoints.
:mod:`nucseg.synthesis`
    Generate synthetic images with known instance maps.
:mod:`nucseg.transforms`
    Stain normalisation and augmentation of images.
:mod:`nucseg.processing`
    Process data in datasets.
:mod:`nucseg.analysis`
    Analyse data in datasets.
:mod:`nucseg.network`
    Networks of both stages.
:mod:`nucseg.losses`
    Losses of both stages.
:mod:`nucseg.proposals`
    Instance proposals from probability maps.
:mod:`nucseg.patching`
    Patches around proposals as input of stage 2.
:mod:`nucseg.refinement`
    Refinement of proposals and assembly of the final instance map.
:mod:`nucseg.metrics`
    Metrics comparing predicted and ground-truth instance maps.
:mod:`nucseg.training`
    Training, inference, evaluation and parameter sweeps.
:mod:`nucseg.plotting`
    Plot results of parameter sweeps.
:mod:`nucseg.report`
    Create metric reports.
:mod:`nucseg.cli`
    Command-line interface.

Utilities
---------
:mod:`nucseg.config`
    Configuration records of all hyper-parameters.
:mod:`nucseg.schedule`
    Learning-rate schedule.
:mod:`nucseg.instances`
    Instance maps, probability maps and proposals.
:mod:`nucseg.blocks`
    Building blocks of the networks.
:mod:`nucseg.utils`
    General purpose functions used in other modules.
:mod:`nucseg.exceptions`
    Exceptions for the nucseg package.


"""
