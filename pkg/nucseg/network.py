"""
Networks of both stages of the pipeline.

Stage 1: task-aware feature encoding
====================================

The stage-1 network, :class:`TafeNetwork`, predicts two probability maps
for an RGB image: the semantic segmentation (nucleus *vs.* background) and
the instance boundaries. Both tasks share a dense-block backbone, but each
task encodes the shared features on its own:

#. The :class:`Backbone` produces raw feature maps at the scales 1, 1/2,
   1/4 and 1/8 of the input.

#. Unshared 1x1 convolutions (:class:`Projections`) project each raw map
   to ``proj_channels`` channels, separately for both tasks, yielding the
   features F_i.

#. One :class:`TaskEncoder` per task progressively downsamples its own
   features while summing in the projected ones: E_1 = conv(F_1) and
   E_i = conv(maxpool(E_{i-1}) + F_i).

#. At the scales 1/2, 1/4 and 1/8, a :class:`FeatureFusion` module fuses
   the features of both tasks and adds the fusion back to both branches.

#. One shallow :class:`Decoder` per task upsamples the fused features,
   sums them with E_1 and predicts the probability map.

Auxiliary heads on each E_i provide deep supervision during training.


Stage 2: proposal-wise segmentation
===================================

The stage-2 network, :class:`RefineNet`, is a U-shaped encoder-decoder of
dense blocks with skip connections. It takes a square patch with five
channels (R, G, B, masked semantic and boundary probability) around one
instance proposal and predicts the refined mask of the proposal. Two
networks of identical architecture are used, one for small and one for
large patches.


Module documentation
====================

"""

import logging

import torch
from torch import nn
from torch.nn import functional

from nucseg import blocks, config, exceptions


logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

TASKS = ("seg", "bnd")


def _check_divisible(tensor, divisor=8):
    height, width = tensor.shape[-2:]
    if height % divisor or width % divisor:
        raise exceptions.DimensionError(
            message=f"Input size {height}x{width} not divisible by {divisor}"
        )


def _upsample(tensor, size):
    if tuple(tensor.shape[-2:]) == tuple(size):
        return tensor
    return functional.interpolate(
        tensor, size=tuple(size), mode="bilinear", align_corners=False
    )


class Backbone(nn.Module):
    """
    Dense-block backbone returning feature maps at four scales.

    A 7x7 convolution with stride 1 (and no pooling) keeps the full
    resolution for the first dense block. Each further dense block is
    preceded by a transition halving channels and resolution.

    Parameters
    ----------
    tafe_config : :class:`nucseg.config.TafeConfig`
        Depths, growth rate and initial features

    Attributes
    ----------
    out_channels : :class:`list`
        Number of channels of the four raw feature maps

    """

    def __init__(self, tafe_config=None):
        super().__init__()
        tafe_config = tafe_config or config.TafeConfig()
        features = tafe_config.init_features
        self.conv0 = nn.Conv2d(
            3, features, kernel_size=7, stride=1, padding=3, bias=False
        )
        self.norm0 = nn.BatchNorm2d(features)
        self.relu0 = nn.ReLU(inplace=True)
        self.out_channels = []
        for index, depth in enumerate(tafe_config.block_depths):
            if index:
                transition = blocks.Transition(features, features // 2)
                self.add_module(f"transition{index}", transition)
                features //= 2
            block = blocks.DenseBlock(
                depth,
                features,
                tafe_config.growth_rate,
                bn_size=tafe_config.bn_size,
            )
            self.add_module(f"denseblock{index + 1}", block)
            features = block.out_features
            self.out_channels.append(features)

    def forward(self, x):
        """
        Return the raw feature maps at the scales 1, 1/2, 1/4, 1/8.

        Raises
        ------
        nucseg.exceptions.DimensionError
            Raised if height or width of the input is not divisible by 8

        """
        _check_divisible(x)
        x = self.relu0(self.norm0(self.conv0(x)))
        raw = []
        for index in range(len(self.out_channels)):
            if index:
                x = getattr(self, f"transition{index}")(x)
            x = getattr(self, f"denseblock{index + 1}")(x)
            raw.append(x)
        return raw


class Projections(nn.Module):
    """
    Unshared 1x1 projections of the raw features, one set per task.

    Parameters
    ----------
    in_channels : :class:`list`
        Channels of the four raw feature maps

    proj_channels : :class:`int`
        Channels of each projected feature map

    """

    def __init__(self, in_channels=(64, 128, 256, 512), proj_channels=256):
        super().__init__()
        self.proj_channels = proj_channels
        self.tasks = nn.ModuleDict(
            {
                task: nn.ModuleList(
                    nn.Conv2d(channels, proj_channels, kernel_size=1)
                    for channels in in_channels
                )
                for task in TASKS
            }
        )

    def forward(self, raw):
        """
        Return a dict mapping each task to its four projected maps.

        Raises
        ------
        nucseg.exceptions.DimensionError
            Raised if not exactly four levels are given

        """
        if len(raw) != 4:
            raise exceptions.DimensionError(
                message=f"Four feature levels expected, got {len(raw)}"
            )
        projected = {
            task: [conv(level) for conv, level in zip(convs, raw)]
            for task, convs in self.tasks.items()
        }
        for levels in projected.values():
            assert all(
                level.shape[1] == self.proj_channels for level in levels
            )
        return projected


class TaskEncoder(nn.Module):
    """
    Encoder of one task, merging the projected features level by level.

    Parameters
    ----------
    channels : :class:`int`
        Channels of the projected features and the encoded features

    """

    def __init__(self, channels=256):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(channels, channels, kernel_size=3, padding=1)
            for _ in range(4)
        )

    def forward(self, features):
        """Return the encoded features E_1 to E_4."""
        encoded = [self.convs[0](features[0])]
        for conv, level in zip(self.convs[1:], features[1:]):
            pooled = functional.max_pool2d(encoded[-1], kernel_size=2)
            encoded.append(conv(pooled + level))
        return encoded


class FeatureFusion(nn.Module):
    """
    Residual fusion of the features of both tasks at one scale.

    The concatenated features are fused by a 1x1 convolution, and the
    fusion is added to both inputs.

    Parameters
    ----------
    channels : :class:`int`
        Channels of the features of each task

    """

    def __init__(self, channels=256):
        super().__init__()
        self.fuse = nn.Conv2d(2 * channels, channels, kernel_size=1)

    def forward(self, e_seg, e_bnd):
        """Return the fused features (a_seg, a_bnd)."""
        fused = self.fuse(torch.cat([e_seg, e_bnd], dim=1))
        return e_seg + fused, e_bnd + fused


class Decoder(nn.Module):
    """
    Shallow decoder: three BN-ReLU-Conv layers and a sigmoid head.

    Parameters
    ----------
    channels : :class:`int`
        Channels of the features

    """

    def __init__(self, channels=256):
        super().__init__()
        self.layers = nn.Sequential(
            *(blocks.ConvUnit(channels, channels) for _ in range(3))
        )
        self.head = nn.Conv2d(channels, 1, kernel_size=1)

    def forward(self, full, fused):
        """
        Return the probability map at full resolution.

        Parameters
        ----------
        full : :class:`torch.Tensor`
            Features at full resolution

        fused : :class:`list`
            Features at the lower scales, upsampled and summed in

        """
        x = full
        for level in fused:
            x = x + _upsample(level, full.shape[-2:])
        return torch.sigmoid(self.head(self.layers(x)))


class TafeOutput:
    """
    Outputs of the stage-1 network.

    All tensors have the shape N x 1 x H x W and values in [0, 1].

    Attributes
    ----------
    seg_prob : :class:`torch.Tensor`
        Semantic segmentation probabilities

    bnd_prob : :class:`torch.Tensor`
        Boundary probabilities

    aux_seg : :class:`list`
        Auxiliary semantic segmentation probabilities, one per level

    aux_bnd : :class:`list`
        Auxiliary boundary probabilities, one per level

    """

    def __init__(
        self, seg_prob=None, bnd_prob=None, aux_seg=None, aux_bnd=None
    ):
        self.seg_prob = seg_prob
        self.bnd_prob = bnd_prob
        self.aux_seg = aux_seg or []
        self.aux_bnd = aux_bnd or []

    def main(self, task):
        """Return the main output of a task, "seg" or "bnd"."""
        return getattr(self, f"{task}_prob")

    def aux(self, task):
        """Return the auxiliary outputs of a task, "seg" or "bnd"."""
        return getattr(self, f"aux_{task}")


class TafeNetwork(nn.Module):
    """
    Stage-1 network predicting segmentation and boundary probabilities.

    Parameters
    ----------
    tafe_config : :class:`nucseg.config.TafeConfig`
        Size of the network

    use_fusion : :class:`bool`
        Whether to fuse the features of both tasks

        Default: True

    Attributes
    ----------
    backbone : :class:`Backbone`
        Shared backbone

    projections : :class:`Projections`
        Unshared projections per task

    encoders : :class:`torch.nn.ModuleDict`
        One :class:`TaskEncoder` per task

    fusions : :class:`torch.nn.ModuleList`
        :class:`FeatureFusion` modules at the scales 1/2, 1/4, 1/8

    decoders : :class:`torch.nn.ModuleDict`
        One :class:`Decoder` per task

    aux_heads : :class:`torch.nn.ModuleDict`
        Four 1x1 convolutions per task for deep supervision


    Examples
    --------
    .. code-block:: python

        network = TafeNetwork(TrainConfig.desk_scale().stage1.tafe)
        output = network(torch.rand(1, 3, 64, 64))
        output.seg_prob.shape  # (1, 1, 64, 64)

    """

    def __init__(self, tafe_config=None, use_fusion=True):
        super().__init__()
        self.tafe_config = tafe_config or config.TafeConfig()
        self.tafe_config.validate()
        channels = self.tafe_config.proj_channels
        self.backbone = Backbone(self.tafe_config)
        self.projections = Projections(
            self.backbone.out_channels, proj_channels=channels
        )
        self.encoders = nn.ModuleDict(
            {task: TaskEncoder(channels) for task in TASKS}
        )
        self.use_fusion = use_fusion
        self.fusions = nn.ModuleList(
            FeatureFusion(channels) for _ in range(self.tafe_config.n_ffm)
        )
        self.decoders = nn.ModuleDict(
            {task: Decoder(channels) for task in TASKS}
        )
        self.aux_heads = nn.ModuleDict(
            {
                task: nn.ModuleList(
                    nn.Conv2d(channels, 1, kernel_size=1) for _ in range(4)
                )
                for task in TASKS
            }
        )

    def encode(self, x):
        """
        Return the encoded features E_i per task.

        Parameters
        ----------
        x : :class:`torch.Tensor`
            Images, N x 3 x H x W

        Returns
        -------
        encoded : :class:`dict`
            Four feature maps per task

        """
        projected = self.projections(self.backbone(x))
        return {task: self.encoders[task](projected[task]) for task in TASKS}

    def fuse(self, encoded):
        """
        Fuse the encoded features of both tasks at the lower scales.

        Returns
        -------
        fused : :class:`dict`
            Three fused feature maps per task (scales 1/2, 1/4, 1/8)

        """
        fused = {task: [] for task in TASKS}
        for index, fusion in enumerate(self.fusions, start=1):
            e_seg, e_bnd = encoded["seg"][index], encoded["bnd"][index]
            if self.use_fusion:
                e_seg, e_bnd = fusion(e_seg, e_bnd)
            fused["seg"].append(e_seg)
            fused["bnd"].append(e_bnd)
        return fused

    def forward(self, x):
        """
        Predict probability maps and auxiliary outputs.

        Parameters
        ----------
        x : :class:`torch.Tensor`
            Images, N x 3 x H x W with H and W divisible by 8

        Returns
        -------
        output : :class:`TafeOutput`
            Main and auxiliary probabilities at full resolution

        """
        encoded = self.encode(x)
        fused = self.fuse(encoded)
        size = x.shape[-2:]
        probabilities, auxiliary = {}, {}
        for task in TASKS:
            probabilities[task] = self.decoders[task](
                encoded[task][0], fused[task]
            )
            auxiliary[task] = [
                torch.sigmoid(_upsample(head(level), size))
                for head, level in zip(self.aux_heads[task], encoded[task])
            ]
        return TafeOutput(
            seg_prob=probabilities["seg"],
            bnd_prob=probabilities["bnd"],
            aux_seg=auxiliary["seg"],
            aux_bnd=auxiliary["bnd"],
        )

    def load_backbone_state(self, filename=""):
        """
        Load pretrained weights into the backbone.

        Keys are matched by name after stripping common prefixes
        ("module.", "features.", "backbone."), hence the state dict of a
        DenseNet classifier can be used directly. Keys without counterpart
        or with differing shape are skipped and logged.

        Parameters
        ----------
        filename : :class:`str`
            File containing a state dict (or a dict with key "state_dict")

        Returns
        -------
        loaded : :class:`list`
            Names of the parameters loaded

        """
        state = torch.load(filename, map_location="cpu")
        state = state.get("state_dict", state)
        own = self.backbone.state_dict()
        matched = {}
        for key, value in state.items():
            name = key
            for prefix in ("module.", "features.", "backbone."):
                if name.startswith(prefix):
                    name = name[len(prefix) :]
            if name in own and own[name].shape == value.shape:
                matched[name] = value
            else:
                logger.debug("Skipping pretrained parameter %s", key)
        self.backbone.load_state_dict(matched, strict=False)
        logger.info(
            "Loaded %d of %d backbone parameters from %s",
            len(matched),
            len(own),
            filename,
        )
        return sorted(matched)


class RefineNet(nn.Module):
    """
    Stage-2 encoder-decoder refining one proposal patch.

    The encoder consists of four dense blocks without bottleneck, with a
    transition and 2x max pooling after the first three. Each decoder level
    upsamples, concatenates the encoder output of the same scale, reduces
    the channels by a 1x1 convolution and applies a dense block with the
    growth rate of that scale. A 1x1 convolution and a sigmoid form the
    head.

    Parameters
    ----------
    refine_config : :class:`nucseg.config.RefineNetConfig`
        Growth rates, layers per block, channels

    size_class : :class:`str`
        "small" or "large"

    patch_size : :class:`int`
        Side of the patches the network is trained for

    """

    def __init__(self, refine_config=None, size_class="small", patch_size=48):
        super().__init__()
        self.refine_config = refine_config or config.RefineNetConfig()
        self.refine_config.validate()
        self.size_class = size_class
        self.patch_size = patch_size
        layers = self.refine_config.layers_per_block
        features = self.refine_config.init_features
        self.stem = nn.Conv2d(
            self.refine_config.in_channels, features, kernel_size=3, padding=1
        )
        self.encoder = nn.ModuleList()
        self.downsampling = nn.ModuleList()
        skip_channels = []
        for index, growth_rate in enumerate(self.refine_config.growth_rates):
            block = blocks.DenseBlock(
                layers, features, growth_rate, bn_size=0
            )
            self.encoder.append(block)
            features = block.out_features
            if index < 3:
                skip_channels.append(features)
                self.downsampling.append(
                    blocks.Transition(features, features // 2, pool="max")
                )
                features //= 2
        self.reduction = nn.ModuleList()
        self.decoder = nn.ModuleList()
        decoder_growth = reversed(self.refine_config.growth_rates[:3])
        for skip, growth_rate in zip(reversed(skip_channels), decoder_growth):
            self.reduction.append(
                blocks.Transition(features + skip, skip // 2, pool="")
            )
            block = blocks.DenseBlock(
                layers, skip // 2, growth_rate, bn_size=0
            )
            self.decoder.append(block)
            features = block.out_features
        self.head = nn.Sequential(
            nn.BatchNorm2d(features),
            nn.ReLU(inplace=True),
            nn.Conv2d(
                features, self.refine_config.out_channels, kernel_size=1
            ),
        )

    def forward(self, x):
        """
        Predict the refined mask probabilities.

        Parameters
        ----------
        x : :class:`torch.Tensor`
            Patches, N x 5 x S x S with S divisible by 8

        Returns
        -------
        probabilities : :class:`torch.Tensor`
            N x 1 x S x S in [0, 1]

        """
        _check_divisible(x)
        x = self.stem(x)
        skips = []
        for index, block in enumerate(self.encoder):
            x = block(x)
            if index < 3:
                skips.append(x)
                x = self.downsampling[index](x)
        for reduction, block, skip in zip(
            self.reduction, self.decoder, reversed(skips)
        ):
            x = _upsample(x, skip.shape[-2:])
            x = block(reduction(torch.cat([x, skip], dim=1)))
        return torch.sigmoid(self.head(x))


def build_refine_nets(refine_config=None, patch_params=None):
    """
    Create the two stage-2 networks for small and large patches.

    Parameters
    ----------
    refine_config : :class:`nucseg.config.RefineNetConfig`
        Architecture shared by both networks

    patch_params : :class:`nucseg.config.PatchParams`
        Patch sizes of both classes

    Returns
    -------
    networks : :class:`dict`
        :class:`RefineNet` with independent parameters per size class

    """
    patch_params = patch_params or config.PatchParams()
    return {
        "small": RefineNet(refine_config, "small", patch_params.s_small),
        "large": RefineNet(refine_config, "large", patch_params.s_large),
    }
