import math
import unittest

import torch

import nucseg.exceptions
from nucseg import config, losses, network


class TestSmoothTruncatedLoss(unittest.TestCase):
    def setUp(self):
        self.targets = torch.ones(4, dtype=torch.float64)

    def test_perfect_prediction_gives_zero(self):
        loss = losses.smooth_truncated_loss(self.targets, self.targets)
        self.assertAlmostEqual(0.0, loss.item())

    def test_value_at_gamma(self):
        probs = torch.full((4,), 0.1, dtype=torch.float64)
        loss = losses.smooth_truncated_loss(probs, self.targets, gamma=0.1)
        self.assertAlmostEqual(-math.log(0.1), loss.item())

    def test_value_below_gamma(self):
        probs = torch.full((4,), 0.05, dtype=torch.float64)
        loss = losses.smooth_truncated_loss(probs, self.targets, gamma=0.1)
        self.assertAlmostEqual(2.677585, loss.item(), places=6)

    def test_negative_targets_use_complement(self):
        probs = torch.full((4,), 0.95, dtype=torch.float64)
        loss = losses.smooth_truncated_loss(
            probs, torch.zeros(4, dtype=torch.float64), gamma=0.1
        )
        self.assertAlmostEqual(2.677585, loss.item(), places=6)

    def test_is_continuously_differentiable_at_gamma(self):
        gamma, step = 0.1, 1e-6
        values = []
        for p_t in (gamma - step, gamma, gamma + step):
            probs = torch.tensor([p_t], dtype=torch.float64)
            values.append(
                losses.smooth_truncated_loss(
                    probs, torch.ones(1, dtype=torch.float64), gamma=gamma
                ).item()
            )
        left = (values[1] - values[0]) / step
        right = (values[2] - values[1]) / step
        self.assertLess(abs(left - right), 1e-4)
        self.assertAlmostEqual(-1 / gamma, left, places=3)

    def test_matches_finite_differences(self):
        probs = torch.tensor(
            [0.02, 0.3, 0.7, 0.95], dtype=torch.float64, requires_grad=True
        )
        targets = torch.tensor([1.0, 0.0, 1.0, 0.0], dtype=torch.float64)
        self.assertTrue(
            torch.autograd.gradcheck(
                lambda x: losses.smooth_truncated_loss(x, targets), (probs,)
            )
        )

    def test_gamma_outside_unit_interval_raises(self):
        with self.assertRaises(nucseg.exceptions.RangeError):
            losses.smooth_truncated_loss(
                self.targets, self.targets, gamma=1.5
            )

    def test_different_shapes_raise(self):
        with self.assertRaises(nucseg.exceptions.DimensionError):
            losses.smooth_truncated_loss(self.targets, torch.ones(5))


class TestSoftDiceLoss(unittest.TestCase):
    def test_perfect_prediction_gives_zero(self):
        targets = torch.tensor([[1.0, 0.0], [1.0, 1.0]])
        loss = losses.soft_dice_loss(targets, targets)
        self.assertAlmostEqual(0.0, loss.item(), places=6)

    def test_zero_prediction_of_foreground_gives_one(self):
        loss = losses.soft_dice_loss(
            torch.zeros(2, 8, 8), torch.ones(2, 8, 8)
        )
        self.assertAlmostEqual(1.0, loss.item(), places=5)

    def test_half_probability(self):
        loss = losses.soft_dice_loss(
            torch.full((16, 16), 0.5, dtype=torch.float64),
            torch.ones(16, 16, dtype=torch.float64),
            eps=0.0,
        )
        self.assertAlmostEqual(1 / 3, loss.item())

    def test_matches_finite_differences(self):
        probs = torch.rand(2, 1, 4, 4, dtype=torch.float64)
        probs.requires_grad_(True)
        targets = (torch.rand(2, 1, 4, 4) > 0.5).to(torch.float64)
        self.assertTrue(
            torch.autograd.gradcheck(
                lambda x: losses.soft_dice_loss(x, targets), (probs,)
            )
        )


class TestFocalLoss(unittest.TestCase):
    def test_perfect_prediction_gives_zero(self):
        targets = torch.ones(4, dtype=torch.float64)
        self.assertAlmostEqual(
            0.0, losses.focal_loss(targets, targets).item(), places=6
        )

    def test_value_at_half(self):
        loss = losses.focal_loss(
            torch.full((4,), 0.5, dtype=torch.float64),
            torch.ones(4, dtype=torch.float64),
            gamma=2.0,
            alpha=1.0,
        )
        self.assertAlmostEqual(0.25 * math.log(2), loss.item())
        self.assertAlmostEqual(0.173287, loss.item(), places=6)

    def test_gamma_zero_equals_cross_entropy(self):
        probs = torch.tensor([0.1, 0.4, 0.8], dtype=torch.float64)
        targets = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64)
        self.assertAlmostEqual(
            losses.cross_entropy_loss(probs, targets).item(),
            losses.focal_loss(probs, targets, gamma=0.0).item(),
        )

    def test_matches_finite_differences(self):
        probs = torch.tensor(
            [0.1, 0.4, 0.8], dtype=torch.float64, requires_grad=True
        )
        targets = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64)
        self.assertTrue(
            torch.autograd.gradcheck(
                lambda x: losses.focal_loss(x, targets), (probs,)
            )
        )


class TestStage1Loss(unittest.TestCase):
    def setUp(self):
        self.seg = torch.zeros(1, 1, 8, 8, dtype=torch.float64)
        self.seg[..., 2:6, 2:6] = 1
        self.bnd = torch.zeros_like(self.seg)
        self.bnd[..., 2:6, 2] = 1

    def test_perfect_predictions_give_zero(self):
        outputs = network.TafeOutput(
            seg_prob=self.seg,
            bnd_prob=self.bnd,
            aux_seg=[self.seg, self.seg],
            aux_bnd=[self.bnd, self.bnd],
        )
        loss = losses.stage1_loss(outputs, self.seg, self.bnd)
        self.assertAlmostEqual(0.0, loss.item(), places=6)

    def test_auxiliary_outputs_are_weighted(self):
        half = torch.full_like(self.seg, 0.5)
        loss_config = config.LossConfig()
        main_only = losses.stage1_loss(
            network.TafeOutput(seg_prob=half, bnd_prob=self.bnd),
            self.seg,
            self.bnd,
            loss_config,
        )
        with_aux = losses.stage1_loss(
            network.TafeOutput(
                seg_prob=half, bnd_prob=self.bnd, aux_seg=[half, half]
            ),
            self.seg,
            self.bnd,
            loss_config,
        )
        self.assertAlmostEqual(
            (1 + loss_config.aux_weight) * main_only.item(), with_aux.item()
        )

    def test_matches_finite_differences(self):
        targets = self.seg

        def total(seg_prob):
            outputs = network.TafeOutput(
                seg_prob=seg_prob,
                bnd_prob=seg_prob,
                aux_seg=[seg_prob],
                aux_bnd=[seg_prob],
            )
            return losses.stage1_loss(outputs, targets, self.bnd)

        probs = 0.2 + 0.6 * torch.rand(1, 1, 8, 8, dtype=torch.float64)
        probs.requires_grad_(True)
        self.assertTrue(torch.autograd.gradcheck(total, (probs,)))


class TestStage2Loss(unittest.TestCase):
    def setUp(self):
        self.probs = torch.tensor([0.2, 0.9])
        self.targets = torch.tensor([0.0, 1.0])

    def test_focal(self):
        self.assertAlmostEqual(
            losses.focal_loss(self.probs, self.targets).item(),
            losses.stage2_loss(self.probs, self.targets, kind="focal").item(),
        )

    def test_cross_entropy(self):
        self.assertAlmostEqual(
            losses.cross_entropy_loss(self.probs, self.targets).item(),
            losses.stage2_loss(
                self.probs, self.targets, kind="cross-entropy"
            ).item(),
        )

    def test_unknown_kind_raises(self):
        with self.assertRaises(ValueError):
            losses.stage2_loss(self.probs, self.targets, kind="hinge")
