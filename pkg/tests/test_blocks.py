import unittest

import torch

from nucseg import blocks


class TestDenseLayer(unittest.TestCase):
    def test_adds_growth_rate_channels(self):
        layer = blocks.DenseLayer(6, 4)
        self.assertEqual((1, 10, 8, 8), layer(torch.rand(1, 6, 8, 8)).shape)

    def test_input_is_passed_through(self):
        layer = blocks.DenseLayer(6, 4, bn_size=0)
        x = torch.rand(1, 6, 8, 8)
        torch.testing.assert_close(x, layer(x)[:, :6])

    def test_without_bottleneck_has_no_1x1_convolution(self):
        layer = blocks.DenseLayer(6, 4, bn_size=0)
        self.assertFalse(hasattr(layer, "conv1"))


class TestDenseBlock(unittest.TestCase):
    def test_out_features(self):
        block = blocks.DenseBlock(3, 8, 4)
        self.assertEqual(20, block.out_features)
        self.assertEqual((2, 20, 8, 8), block(torch.rand(2, 8, 8, 8)).shape)

    def test_layer_names(self):
        block = blocks.DenseBlock(2, 8, 4)
        self.assertEqual(
            ["denselayer1", "denselayer2"],
            [name for name, _ in block.named_children()],
        )


class TestTransition(unittest.TestCase):
    def test_halves_resolution(self):
        transition = blocks.Transition(8, 4)
        self.assertEqual(
            (1, 4, 4, 4), transition(torch.rand(1, 8, 8, 8)).shape
        )

    def test_without_pooling_keeps_resolution(self):
        transition = blocks.Transition(8, 4, pool="")
        self.assertEqual(
            (1, 4, 8, 8), transition(torch.rand(1, 8, 8, 8)).shape
        )

    def test_unknown_pooling_raises(self):
        with self.assertRaises(ValueError):
            blocks.Transition(8, 4, pool="median")


class TestConvUnit(unittest.TestCase):
    def test_keeps_spatial_size(self):
        unit = blocks.ConvUnit(4, 6)
        self.assertEqual((1, 6, 8, 8), unit(torch.rand(1, 4, 8, 8)).shape)
