"""
Training losses of both stages.

Three pixel-wise losses on probability maps are provided:

* :func:`smooth_truncated_loss`

  Cross-entropy truncated below a probability threshold gamma with a
  quadratic tail, continuously differentiable at the threshold. Pixels
  predicted with high confidence against their (possibly noisy) label
  contribute a bounded loss only.

* :func:`soft_dice_loss`

  One minus the soft Dice coefficient, computed per map and averaged over
  the batch.

* :func:`focal_loss`

  Cross-entropy down-weighting well-classified pixels.

Stage 1 combines the truncated and the Dice loss for both tasks and all
auxiliary outputs (:func:`stage1_loss`), stage 2 uses either the focal
loss or plain cross-entropy (:func:`stage2_loss`).

All functions operate on :class:`torch.Tensor` objects and are
differentiable with respect to the probabilities.

"""

import math

import torch
from torch.nn import functional

from nucseg import config, exceptions

CLAMP = 1e-7
"""Probabilities are clamped to [CLAMP, 1 - CLAMP] before taking logs."""


def _check_shapes(probs, targets):
    if probs.shape != targets.shape:
        raise exceptions.DimensionError(
            message=f"Shapes of probabilities {tuple(probs.shape)} and "
            f"targets {tuple(targets.shape)} differ"
        )


def _p_t(probs, targets):
    targets = targets.to(probs.dtype)
    return probs * targets + (1 - probs) * (1 - targets)


def smooth_truncated_loss(probs, targets, gamma=0.1):
    """
    Smooth truncated cross-entropy.

    With p_t the probability of the true class, the per-pixel loss is
    -log(p_t) for p_t >= gamma and -log(gamma) + (1 - (p_t/gamma)^2)/2
    otherwise.

    Parameters
    ----------
    probs : :class:`torch.Tensor`
        Probabilities in [0, 1]

    targets : :class:`torch.Tensor`
        Binary targets of the same shape

    gamma : :class:`float`
        Truncation threshold in (0, 1)

    Returns
    -------
    loss : :class:`torch.Tensor`
        Mean over all pixels

    """
    _check_shapes(probs, targets)
    if not 0 < gamma < 1:
        raise exceptions.RangeError(message=f"gamma {gamma} not in (0, 1)")
    p_t = _p_t(probs, targets)
    log_branch = -torch.log(p_t.clamp_min(gamma))
    quadratic_branch = -math.log(gamma) + (1 - (p_t / gamma) ** 2) / 2
    return torch.where(p_t >= gamma, log_branch, quadratic_branch).mean()


def soft_dice_loss(probs, targets, eps=1e-5):
    """
    Soft Dice loss.

    For each map of the batch, 1 - (2 sum(p t) + eps)/(sum(p) + sum(t) +
    eps) is computed; the result is the mean over the maps. Tensors with
    less than three dimensions are treated as a single map.

    Parameters
    ----------
    probs : :class:`torch.Tensor`
        Probabilities in [0, 1], N x ... or a single map

    targets : :class:`torch.Tensor`
        Binary targets of the same shape

    eps : :class:`float`
        Smoothing term

    Returns
    -------
    loss : :class:`torch.Tensor`
        Mean Dice loss, in [0, 1]

    """
    _check_shapes(probs, targets)
    targets = targets.to(probs.dtype)
    if probs.dim() < 3:
        probs, targets = probs.unsqueeze(0), targets.unsqueeze(0)
    probs, targets = probs.flatten(1), targets.flatten(1)
    intersection = (probs * targets).sum(dim=1)
    total = probs.sum(dim=1) + targets.sum(dim=1)
    return (1 - (2 * intersection + eps) / (total + eps)).mean()


def focal_loss(probs, targets, gamma=2.0, alpha=1.0):
    """
    Focal loss.

    Per pixel, -alpha (1 - p_t)^gamma log(p_t) with p_t the probability of
    the true class, clamped to [1e-7, 1 - 1e-7].

    Parameters
    ----------
    probs : :class:`torch.Tensor`
        Probabilities in [0, 1]

    targets : :class:`torch.Tensor`
        Binary targets of the same shape

    gamma : :class:`float`
        Focusing parameter; 0 yields the cross-entropy

    alpha : :class:`float`
        Weight in (0, 1]

    Returns
    -------
    loss : :class:`torch.Tensor`
        Mean over all pixels

    """
    _check_shapes(probs, targets)
    p_t = _p_t(probs.clamp(CLAMP, 1 - CLAMP), targets)
    return (-alpha * (1 - p_t) ** gamma * torch.log(p_t)).mean()


def cross_entropy_loss(probs, targets):
    """
    Binary cross-entropy of probabilities, clamped like :func:`focal_loss`.

    Parameters
    ----------
    probs : :class:`torch.Tensor`
        Probabilities in [0, 1]

    targets : :class:`torch.Tensor`
        Binary targets of the same shape

    Returns
    -------
    loss : :class:`torch.Tensor`
        Mean over all pixels

    """
    _check_shapes(probs, targets)
    return functional.binary_cross_entropy(
        probs.clamp(CLAMP, 1 - CLAMP), targets.to(probs.dtype)
    )


def _task_loss(probs, targets, loss_config):
    return smooth_truncated_loss(
        probs, targets, gamma=loss_config.st_gamma
    ) + loss_config.dice_weight * soft_dice_loss(
        probs, targets, eps=loss_config.dice_eps
    )


def stage1_loss(outputs, seg_gt, bnd_gt, loss_config=None):
    """
    Total loss of the stage-1 network.

    For both tasks, the truncated loss plus the weighted Dice loss of the
    main output, plus ``aux_weight`` times the mean of the same combination
    over the auxiliary outputs.

    Parameters
    ----------
    outputs : :class:`nucseg.network.TafeOutput`
        Main and auxiliary probabilities

    seg_gt : :class:`torch.Tensor`
        Semantic segmentation targets, same shape as the main outputs

    bnd_gt : :class:`torch.Tensor`
        Boundary targets, same shape as the main outputs

    loss_config : :class:`nucseg.config.LossConfig`
        Weights and parameters of the losses

    Returns
    -------
    loss : :class:`torch.Tensor`
        Scalar loss

    """
    loss_config = loss_config or config.LossConfig()
    total = 0
    for task, targets in (("seg", seg_gt), ("bnd", bnd_gt)):
        total = total + _task_loss(outputs.main(task), targets, loss_config)
        auxiliary = outputs.aux(task)
        if auxiliary:
            aux_total = sum(
                _task_loss(probs, targets, loss_config) for probs in auxiliary
            )
            total = total + loss_config.aux_weight * aux_total / len(
                auxiliary
            )
    return total


def stage2_loss(probs, targets, kind="focal", loss_config=None):
    """
    Loss of the stage-2 networks.

    Parameters
    ----------
    probs : :class:`torch.Tensor`
        Refined probabilities

    targets : :class:`torch.Tensor`
        Binary labels of the same shape

    kind : :class:`str`
        "focal" or "cross-entropy"

    loss_config : :class:`nucseg.config.LossConfig`
        Parameters of the focal loss

    Returns
    -------
    loss : :class:`torch.Tensor`
        Scalar loss

    Raises
    ------
    ValueError
        Raised for an unknown kind of loss

    """
    loss_config = loss_config or config.LossConfig()
    if kind == "focal":
        return focal_loss(
            probs,
            targets,
            gamma=loss_config.focal_gamma,
            alpha=loss_config.focal_alpha,
        )
    if kind == "cross-entropy":
        return cross_entropy_loss(probs, targets)
    raise ValueError(f"Unknown loss {kind}")
