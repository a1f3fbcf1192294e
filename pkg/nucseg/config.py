"""
Configuration of networks, post-processing, patching and training.

All hyper-parameters of the two-stage pipeline are collected in one
serialisable record, :class:`TrainConfig`, made up of smaller records for
the individual concerns:

* :class:`TafeConfig`

  Size of the stage-1 network (dense-block backbone, projections, encoders)

* :class:`LossConfig`

  Parameters of the training losses

* :class:`PostprocParams`

  Parameters turning probability maps into instance proposals

* :class:`PatchParams`

  Margin, size classes and probability masking of proposal patches

* :class:`RefineNetConfig`

  Size of the two stage-2 networks

* :class:`AugmentConfig`

  Data augmentation during stage-1 training

* :class:`Stage1Config` and :class:`Stage2Config`

  Schedules, optimiser settings and the records above, per stage


Each record has sensible defaults corresponding to the full-scale setting.
Reduced settings that train within minutes on a CPU are available via
:meth:`TrainConfig.desk_scale`.


Configuration files
===================

Configurations are stored as flat text files with one ``key = value`` pair
per line, where the key addresses the attribute using dotted sections::

    # desk-scale run
    seed = 42
    stage1.epochs = 20
    stage1.first_period = 20
    stage1.tafe.block_depths = (2, 2, 2, 2)
    stage2.tau = 0.5

Values are parsed as Python literals and kept as strings otherwise. Files
ending in ``.yaml`` are read as nested YAML documents instead. Unknown keys
raise :class:`nucseg.exceptions.UnknownParameterError`.


Module documentation
====================

"""

import ast
import os

import aspecd.utils

from nucseg import exceptions


class Parameters(aspecd.utils.ToDictMixin):
    """
    Base class for all configuration records.

    Provides conversion from and to dicts, setting of (nested) attributes
    addressed by dotted keys, and validation.

    Records can be converted to dict via
    :meth:`aspecd.utils.ToDictMixin.to_dict()`, *e.g.* for storing them in
    checkpoints.

    """

    def from_dict(self, dict_=None):
        """
        Set attributes from a (possibly nested) dict.

        Parameters
        ----------
        dict_ : :class:`dict`
            Keys are attribute names or dotted keys

        Raises
        ------
        nucseg.exceptions.UnknownParameterError
            Raised if a key does not correspond to an attribute

        """
        for key, value in (dict_ or {}).items():
            self.set(key, value)
        return self

    def set(self, key, value):
        """
        Set an attribute addressed by a dotted key.

        Parameters
        ----------
        key : :class:`str`
            Attribute name, *e.g.* ``tafe.growth_rate``

        value
            New value; lists are converted to tuples where the default is
            a tuple

        Raises
        ------
        nucseg.exceptions.UnknownParameterError
            Raised if the key does not correspond to an attribute

        """
        name, _, rest = key.partition(".")
        if name.startswith("_") or name not in self._public_names():
            raise exceptions.UnknownParameterError(
                message=f"Unknown parameter {key} for "
                f"{self.__class__.__name__}"
            )
        current = getattr(self, name)
        if isinstance(current, Parameters):
            if rest:
                current.set(rest, value)
            elif isinstance(value, dict):
                current.from_dict(value)
            else:
                raise exceptions.UnknownParameterError(
                    message=f"Parameter {key} is a section, not a value"
                )
        elif rest:
            raise exceptions.UnknownParameterError(
                message=f"Unknown parameter {key}"
            )
        else:
            setattr(self, name, self._coerce(current, value))

    def get(self, key):
        """
        Return the value of an attribute addressed by a dotted key.

        Parameters
        ----------
        key : :class:`str`
            Attribute name, *e.g.* ``postproc.dilation_radius``

        Returns
        -------
        value
            Value of the attribute

        """
        value = self
        for name in key.split("."):
            if not isinstance(value, Parameters) or (
                name not in value._public_names()
            ):
                raise exceptions.UnknownParameterError(
                    message=f"Unknown parameter {key}"
                )
            value = getattr(value, name)
        return value

    def validate(self):
        """Check all invariants; subclasses raise on violation."""

    def _public_names(self):
        return [name for name in vars(self) if not name.startswith("_")]

    @staticmethod
    def _coerce(current, value):
        if isinstance(current, tuple) and isinstance(value, (list, tuple)):
            return tuple(value)
        if isinstance(current, float) and isinstance(value, int):
            if not isinstance(value, bool):
                return float(value)
        return value


class TafeConfig(Parameters):
    """
    Size of the stage-1 network.

    Attributes
    ----------
    block_depths : :class:`tuple`
        Number of convolutional layers in each of the four dense blocks

        Default: (6, 12, 18, 24)

    growth_rate : :class:`int`
        Growth rate of the dense blocks

        Default: 32

    proj_channels : :class:`int`
        Number of channels of each projected task feature map

        Default: 256

    init_features : :class:`int`
        Number of channels of the first 7x7 convolution of the backbone

        Default: 64

    bn_size : :class:`int`
        Multiplicative factor of the bottleneck layers in the dense layers

        Default: 4

    scales : :class:`tuple`
        Scales of the four feature levels, fixed

    n_ffm : :class:`int`
        Number of feature fusion modules, fixed

    """

    def __init__(self):
        super().__init__()
        self.block_depths = (6, 12, 18, 24)
        self.growth_rate = 32
        self.proj_channels = 256
        self.init_features = 64
        self.bn_size = 4
        self.scales = (1, 1 / 2, 1 / 4, 1 / 8)
        self.n_ffm = 3

    def validate(self):
        if len(self.block_depths) != 4 or min(self.block_depths) < 1:
            raise exceptions.RangeError(
                message="block_depths needs four positive values"
            )
        for name in ("growth_rate", "proj_channels", "init_features"):
            if getattr(self, name) < 1:
                raise exceptions.RangeError(message=f"{name} must be >= 1")
        if tuple(self.scales) != (1, 1 / 2, 1 / 4, 1 / 8) or self.n_ffm != 3:
            raise exceptions.RangeError(
                message="scales and n_ffm are fixed and cannot be changed"
            )


class LossConfig(Parameters):
    """
    Parameters of the training losses.

    Attributes
    ----------
    st_gamma : :class:`float`
        Truncation threshold of the smooth truncated loss, in (0, 1)

        Default: 0.1

    dice_weight : :class:`float`
        Weight of the soft Dice loss

        Default: 0.5

    dice_eps : :class:`float`
        Smoothing term of the soft Dice loss

        Default: 1e-5

    focal_gamma : :class:`float`
        Focusing parameter of the focal loss

        Default: 2.0

    focal_alpha : :class:`float`
        Weight of the focal loss, in (0, 1]

        Default: 1.0

    aux_weight : :class:`float`
        Weight of the mean auxiliary (deep supervision) loss

        Default: 0.25

    """

    def __init__(self):
        super().__init__()
        self.st_gamma = 0.1
        self.dice_weight = 0.5
        self.dice_eps = 1e-5
        self.focal_gamma = 2.0
        self.focal_alpha = 1.0
        self.aux_weight = 0.25

    def validate(self):
        if not 0 < self.st_gamma < 1:
            raise exceptions.RangeError(message="st_gamma must be in (0, 1)")
        if not 0 < self.focal_alpha <= 1:
            raise exceptions.RangeError(
                message="focal_alpha must be in (0, 1]"
            )
        for name in ("dice_weight", "focal_gamma", "aux_weight"):
            if getattr(self, name) < 0:
                raise exceptions.RangeError(message=f"{name} must be >= 0")
        if self.dice_eps <= 0:
            raise exceptions.RangeError(message="dice_eps must be positive")


class PostprocParams(Parameters):
    """
    Parameters turning probability maps into instance proposals.

    Attributes
    ----------
    seg_thresh : :class:`float`
        Threshold for the semantic segmentation probabilities

        Default: 0.5

    bnd_thresh : :class:`float`
        Threshold for the boundary probabilities

        Default: 0.5

    min_area : :class:`int`
        Components with fewer pixels are removed

        Default: 20

    dilation_radius : :class:`int`
        Radius used to grow instances back over the subtracted boundary

        Default: 2

    connectivity : :class:`int`
        Pixel connectivity for connected components, 4 or 8

        Default: 4

    """

    def __init__(self):
        super().__init__()
        self.seg_thresh = 0.5
        self.bnd_thresh = 0.5
        self.min_area = 20
        self.dilation_radius = 2
        self.connectivity = 4

    def validate(self):
        for name in ("seg_thresh", "bnd_thresh"):
            if not 0 < getattr(self, name) < 1:
                raise exceptions.RangeError(message=f"{name} not in (0, 1)")
        if self.min_area < 0 or self.dilation_radius < 0:
            raise exceptions.RangeError(
                message="min_area and dilation_radius must be >= 0"
            )
        if self.connectivity not in (4, 8):
            raise exceptions.RangeError(
                message=f"Connectivity must be 4 or 8, got "
                f"{self.connectivity}"
            )


class PatchParams(Parameters):
    """
    Margin, size classes and probability masking of proposal patches.

    Attributes
    ----------
    margin : :class:`int`
        Minimal margin around a proposal in pixels

        Default: 12

    s_small : :class:`int`
        Side length small patches are resized to; windows up to this side
        are small

        Default: 48

    s_large : :class:`int`
        Side length large patches are resized to

        Default: 176

    mask_dilation : :class:`int`
        Radius the proposal is dilated by before masking the probability
        maps

        Default: 2

    """

    def __init__(self):
        super().__init__()
        self.margin = 12
        self.s_small = 48
        self.s_large = 176
        self.mask_dilation = 2

    def validate(self):
        if min(self.margin, self.s_small, self.s_large) < 1:
            raise exceptions.RangeError(
                message="margin, s_small and s_large must be positive"
            )
        if self.mask_dilation < 0:
            raise exceptions.RangeError(message="mask_dilation must be >= 0")
        if self.s_small >= self.s_large:
            raise exceptions.RangeError(
                message="s_small must be smaller than s_large"
            )
        if self.s_small % 8 or self.s_large % 8:
            raise exceptions.DimensionError(
                message="Patch sizes must be divisible by 8"
            )


class RefineNetConfig(Parameters):
    """
    Size of the two stage-2 networks.

    Attributes
    ----------
    growth_rates : :class:`tuple`
        Growth rates of the four encoder dense blocks

        Default: (16, 32, 64, 128)

    layers_per_block : :class:`int`
        Number of 3x3 convolutional layers per dense block

        Default: 4

    init_features : :class:`int`
        Channels of the first convolution

        Default: 32

    in_channels : :class:`int`
        Input channels (R, G, B, seg, bnd)

        Default: 5

    out_channels : :class:`int`
        Output channels

        Default: 1

    """

    def __init__(self):
        super().__init__()
        self.growth_rates = (16, 32, 64, 128)
        self.layers_per_block = 4
        self.init_features = 32
        self.in_channels = 5
        self.out_channels = 1

    def validate(self):
        if len(self.growth_rates) != 4 or min(self.growth_rates) < 1:
            raise exceptions.RangeError(
                message="growth_rates needs four positive values"
            )
        if self.layers_per_block < 1 or self.init_features < 1:
            raise exceptions.RangeError(
                message="layers_per_block and init_features must be >= 1"
            )


class AugmentConfig(Parameters):
    """
    Data augmentation applied during stage-1 training.

    Geometric transformations (crop, flips, elastic deformation) act on
    image and instance map alike, photometric ones (colour jitter, blur)
    on the image only.

    Attributes
    ----------
    crop_size : :class:`int`
        Side of the random square crop, divisible by 8

        Default: 256

    hflip_prob, vflip_prob : :class:`float`
        Probabilities of horizontal and vertical flips

        Default: 0.5

    jitter_prob : :class:`float`
        Probability of colour jittering

        Default: 0.5

    brightness, contrast, saturation : :class:`float`
        Maximum relative change of brightness, contrast and saturation

        Default: 0.1

    blur_prob : :class:`float`
        Probability of Gaussian blurring

        Default: 0.2

    blur_sigma : :class:`tuple`
        Range of the blur standard deviation in pixels

        Default: (0.5, 1.5)

    elastic_prob : :class:`float`
        Probability of an elastic deformation

        Default: 0.3

    elastic_alpha : :class:`float`
        Displacement scale of the elastic deformation in pixels

        Default: 30.0

    elastic_sigma : :class:`float`
        Smoothing of the displacement field in pixels

        Default: 6.0

    seed : :class:`int`
        Seed used when augmenting outside of training

        Default: 0

    """

    def __init__(self):
        super().__init__()
        self.crop_size = 256
        self.hflip_prob = 0.5
        self.vflip_prob = 0.5
        self.jitter_prob = 0.5
        self.brightness = 0.1
        self.contrast = 0.1
        self.saturation = 0.1
        self.blur_prob = 0.2
        self.blur_sigma = (0.5, 1.5)
        self.elastic_prob = 0.3
        self.elastic_alpha = 30.0
        self.elastic_sigma = 6.0
        self.seed = 0

    def validate(self):
        if self.crop_size < 8 or self.crop_size % 8:
            raise exceptions.DimensionError(
                message=f"crop_size must be divisible by 8, got "
                f"{self.crop_size}"
            )
        for name in (
            "hflip_prob",
            "vflip_prob",
            "jitter_prob",
            "blur_prob",
            "elastic_prob",
        ):
            if not 0 <= getattr(self, name) <= 1:
                raise exceptions.RangeError(message=f"{name} not in [0, 1]")

    def disabled(self):
        """
        Return a copy with all random transformations switched off.

        Returns
        -------
        config : :class:`AugmentConfig`
            Configuration only cropping

        """
        config = AugmentConfig().from_dict(self.to_dict())
        for name in (
            "hflip_prob",
            "vflip_prob",
            "jitter_prob",
            "blur_prob",
            "elastic_prob",
        ):
            setattr(config, name, 0.0)
        return config


class Stage1Config(Parameters):
    """
    Training of the stage-1 network.

    Attributes
    ----------
    epochs : :class:`int`
        Total number of epochs; must equal the sum of the doubling periods
        of the learning-rate schedule

        Default: 600

    lr0 : :class:`float`
        Initial learning rate

        Default: 3e-4

    first_period : :class:`int`
        Length of the first cosine period in epochs

        Default: 40

    weight_decay : :class:`float`
        Decoupled weight decay of the AdamW optimiser

        Default: 1e-4

    betas : :class:`tuple`
        Moment coefficients of the AdamW optimiser

        Default: (0.9, 0.999)

    batch_size : :class:`int`
        Images per batch

        Default: 4

    boundary_width : :class:`int`
        Width of the boundary training targets

        Default: 2

    val_fraction : :class:`float`
        Fraction of the training data held out for validation if no
        validation set is given

        Default: 0.2

    val_every : :class:`int`
        Validate every *n* epochs (and always after the last epoch)

        Default: 1

    reference : :class:`str`
        Stem of the stain normalisation reference image; empty for the
        lexicographically first training image

        Default: ""

    """

    def __init__(self):
        super().__init__()
        self.epochs = 600
        self.lr0 = 3e-4
        self.first_period = 40
        self.weight_decay = 1e-4
        self.betas = (0.9, 0.999)
        self.batch_size = 4
        self.boundary_width = 2
        self.val_fraction = 0.2
        self.val_every = 1
        self.reference = ""
        self.tafe = TafeConfig()
        self.loss = LossConfig()
        self.postproc = PostprocParams()
        self.augment = AugmentConfig()

    def validate(self):
        if self.epochs < 1 or self.first_period < 1 or self.batch_size < 1:
            raise exceptions.RangeError(
                message="epochs, first_period and batch_size must be >= 1"
            )
        periods, total = 0, 0
        while total < self.epochs:
            total += self.first_period * 2**periods
            periods += 1
        if total != self.epochs:
            raise exceptions.RangeError(
                message=f"{self.epochs} epochs cannot be split into "
                f"doubling periods starting with {self.first_period}"
            )
        if self.boundary_width < 1:
            raise exceptions.RangeError(message="boundary_width must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise exceptions.RangeError(message="val_fraction not in [0, 1)")
        for record in (self.tafe, self.loss, self.postproc, self.augment):
            record.validate()


class Stage2Config(Parameters):
    """
    Training of the two stage-2 networks.

    Attributes
    ----------
    epochs : :class:`int`
        Number of epochs, one cosine period without restart

        Default: 10

    lr0 : :class:`float`
        Initial learning rate

        Default: 3e-4

    weight_decay : :class:`float`
        Decoupled weight decay of the AdamW optimiser

        Default: 1e-4

    betas : :class:`tuple`
        Moment coefficients of the AdamW optimiser

        Default: (0.9, 0.999)

    batch_size : :class:`int`
        Patches per batch

        Default: 16

    tau : :class:`float`
        IoU threshold above which a proposal inherits the mask of its
        ground-truth instance

        Default: 0.5

    loss : :class:`str`
        Loss used for training, "focal" or "cross-entropy"

        Default: "focal"

    """

    def __init__(self):
        super().__init__()
        self.epochs = 10
        self.lr0 = 3e-4
        self.weight_decay = 1e-4
        self.betas = (0.9, 0.999)
        self.batch_size = 16
        self.tau = 0.5
        self.loss = "focal"
        self.refine = RefineNetConfig()
        self.patch = PatchParams()

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise exceptions.RangeError(
                message="epochs and batch_size must be >= 1"
            )
        if not 0 <= self.tau <= 1:
            raise exceptions.RangeError(message="tau must be in [0, 1]")
        if self.loss not in ("focal", "cross-entropy"):
            raise ValueError(f"Unknown loss {self.loss}")
        self.refine.validate()
        self.patch.validate()


class TrainConfig(Parameters):
    """
    All hyper-parameters of the two-stage pipeline in one record.

    Attributes
    ----------
    stage1 : :class:`Stage1Config`
        Training of the stage-1 network

    stage2 : :class:`Stage2Config`
        Training of the stage-2 networks

    seed : :class:`int`
        Seed for every random number generator involved

        Default: 0


    Examples
    --------
    Read a configuration file on top of the desk-scale settings:

    .. code-block:: python

        config = TrainConfig.desk_scale()
        config.from_file("desk.cfg")
        config.validate()

    """

    def __init__(self):
        super().__init__()
        self.stage1 = Stage1Config()
        self.stage2 = Stage2Config()
        self.seed = 0

    def validate(self):
        self.stage1.validate()
        self.stage2.validate()

    @classmethod
    def full_scale(cls):
        """Return the configuration with full-scale defaults."""
        return cls()

    @classmethod
    def desk_scale(cls):
        """
        Return a configuration small enough to train on a CPU.

        Returns
        -------
        config : :class:`TrainConfig`
            Reduced network sizes, schedule and patch sizes

        """
        config = cls()
        config.stage1.tafe.block_depths = (2, 2, 2, 2)
        config.stage1.tafe.growth_rate = 8
        config.stage1.tafe.proj_channels = 32
        config.stage1.tafe.init_features = 16
        config.stage1.epochs = 20
        config.stage1.first_period = 20
        config.stage1.batch_size = 2
        config.stage1.boundary_width = 1
        config.stage1.postproc.min_area = 5
        config.stage1.augment.crop_size = 128
        config.stage2.epochs = 5
        config.stage2.refine.growth_rates = (4, 8, 8, 16)
        config.stage2.refine.init_features = 8
        return config

    def from_file(self, filename=""):
        """
        Update the configuration from a file.

        Parameters
        ----------
        filename : :class:`str`
            Name of a flat ``key = value`` file or a YAML file

        Returns
        -------
        config : :class:`TrainConfig`
            The updated configuration itself

        """
        if not os.path.exists(filename):
            raise exceptions.MissingFileError(
                message=f"Configuration file {filename} does not exist"
            )
        if filename.endswith((".yaml", ".yml")):
            yaml = aspecd.utils.Yaml()
            yaml.read_from(filename=filename)
            return self.from_dict(yaml.dict)
        return self.from_dict(read_config_file(filename))


def parse_value(text):
    """
    Parse the textual value of a configuration entry.

    Parameters
    ----------
    text : :class:`str`
        Value as written in the file or on the command line

    Returns
    -------
    value
        Python literal if the text is one, the stripped text otherwise

    """
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def read_config_file(filename=""):
    """
    Read a flat configuration file into a dict of dotted keys.

    Parameters
    ----------
    filename : :class:`str`
        Name of the file

    Returns
    -------
    entries : :class:`dict`
        Dotted keys and parsed values

    Raises
    ------
    nucseg.exceptions.FileFormatError
        Raised for lines not of the form ``key = value``

    """
    entries = {}
    with open(filename, encoding="utf8") as file:
        for number, line in enumerate(file, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, separator, value = line.partition("=")
            if not separator or not key.strip():
                raise exceptions.FileFormatError(
                    message=f"{filename}, line {number}: expected "
                    f"'key = value'"
                )
            entries[key.strip()] = parse_value(value)
    return entries
