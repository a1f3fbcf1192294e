"""
Building blocks of the convolutional networks.

Both networks of the pipeline are built from densely connected
convolutional blocks: every layer of a :class:`DenseBlock` receives the
concatenated outputs of all previous layers as input, hence the number of
channels grows by the *growth rate* with every layer. Between blocks,
:class:`Transition` layers halve the number of channels and downsample by
a factor of two.

Layers follow the pre-activation order BN-ReLU-Conv. Module names follow
the widely used DenseNet layout (``norm1``, ``conv1``, ``denselayer1``,
...) so that pretrained weights can be loaded by name.

"""

import torch
from torch import nn


class DenseLayer(nn.Sequential):
    """
    One layer of a dense block.

    With a bottleneck (``bn_size`` > 0), the layer consists of
    BN-ReLU-Conv(1x1) to ``bn_size * growth_rate`` channels followed by
    BN-ReLU-Conv(3x3). Without, only BN-ReLU-Conv(3x3) is applied.

    Parameters
    ----------
    in_features : :class:`int`
        Number of input channels

    growth_rate : :class:`int`
        Number of channels added by the layer

    bn_size : :class:`int`
        Multiplicative factor of the bottleneck; 0 for no bottleneck

    """

    def __init__(self, in_features, growth_rate, bn_size=4):
        super().__init__()
        if bn_size:
            self.add_module("norm1", nn.BatchNorm2d(in_features))
            self.add_module("relu1", nn.ReLU(inplace=True))
            self.add_module(
                "conv1",
                nn.Conv2d(
                    in_features,
                    bn_size * growth_rate,
                    kernel_size=1,
                    bias=False,
                ),
            )
            in_features = bn_size * growth_rate
        self.add_module("norm2", nn.BatchNorm2d(in_features))
        self.add_module("relu2", nn.ReLU(inplace=True))
        self.add_module(
            "conv2",
            nn.Conv2d(
                in_features, growth_rate, kernel_size=3, padding=1, bias=False
            ),
        )

    def forward(self, x):  # pylint: disable=arguments-renamed
        return torch.cat([x, super().forward(x)], dim=1)


class DenseBlock(nn.Sequential):
    """
    Sequence of dense layers.

    Parameters
    ----------
    n_layers : :class:`int`
        Number of dense layers

    in_features : :class:`int`
        Number of input channels

    growth_rate : :class:`int`
        Number of channels added by each layer

    bn_size : :class:`int`
        Multiplicative factor of the bottleneck; 0 for no bottleneck

    Attributes
    ----------
    out_features : :class:`int`
        Number of output channels, ``in_features + n_layers * growth_rate``

    """

    def __init__(self, n_layers, in_features, growth_rate, bn_size=4):
        super().__init__()
        for index in range(n_layers):
            self.add_module(
                f"denselayer{index + 1}",
                DenseLayer(
                    in_features + index * growth_rate,
                    growth_rate,
                    bn_size=bn_size,
                ),
            )
        self.out_features = in_features + n_layers * growth_rate


class Transition(nn.Sequential):
    """
    BN-ReLU-Conv(1x1) followed by 2x downsampling.

    Parameters
    ----------
    in_features : :class:`int`
        Number of input channels

    out_features : :class:`int`
        Number of output channels

    pool : :class:`str`
        "avg" or "max" pooling, or "" for no downsampling

    """

    def __init__(self, in_features, out_features, pool="avg"):
        super().__init__()
        self.add_module("norm", nn.BatchNorm2d(in_features))
        self.add_module("relu", nn.ReLU(inplace=True))
        self.add_module(
            "conv",
            nn.Conv2d(in_features, out_features, kernel_size=1, bias=False),
        )
        if pool == "avg":
            self.add_module("pool", nn.AvgPool2d(kernel_size=2, stride=2))
        elif pool == "max":
            self.add_module("pool", nn.MaxPool2d(kernel_size=2, stride=2))
        elif pool:
            raise ValueError(f"Unknown pooling {pool}")


class ConvUnit(nn.Sequential):
    """BN-ReLU-Conv(3x3) keeping the spatial size."""

    def __init__(self, in_features, out_features):
        super().__init__()
        self.add_module("norm", nn.BatchNorm2d(in_features))
        self.add_module("relu", nn.ReLU(inplace=True))
        self.add_module(
            "conv",
            nn.Conv2d(in_features, out_features, kernel_size=3, padding=1),
        )
