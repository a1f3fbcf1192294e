"""
Learning rate schedule: cosine annealing with warm restarts.

Within each period, the learning rate decreases from its start value to
zero following half a cosine. At the end of a period, it is reset, with
each period twice as long as the previous one and each start value half
the previous one. For a first period of 40 epochs and 600 epochs in
total, periods start at epochs 0, 40, 120 and 280.

Cosine annealing *without* restarts, as used for stage 2, is the special
case of a first period spanning all epochs.

The schedule is a pure function of the epoch, hence it can be evaluated
for fractional epochs as well, *e.g.* per iteration.


Module documentation
====================

"""

import math

from nucseg import exceptions


class Schedule:
    """
    Cosine annealing schedule with doubling periods and halving restarts.

    Attributes
    ----------
    lr0 : :class:`float`
        Learning rate at epoch 0

    first_period : :class:`int`
        Length of the first period in epochs

    total_epochs : :class:`int`
        Number of epochs, sum of all periods

    starts : :class:`list`
        Epochs the periods start at

    periods : :class:`list`
        Lengths of the periods

    start_lrs : :class:`list`
        Learning rates at the start of each period

    Raises
    ------
    nucseg.exceptions.RangeError
        Raised if the periods do not add up to the total number of epochs

    """

    def __init__(self, lr0=3e-4, first_period=40, total_epochs=600):
        if first_period < 1 or total_epochs < 1 or lr0 <= 0:
            raise exceptions.RangeError(
                message="Learning rate and periods must be positive"
            )
        self.lr0 = lr0
        self.first_period = first_period
        self.total_epochs = total_epochs
        self.starts = []
        self.periods = []
        self.start_lrs = []
        start, period, lr = 0, first_period, lr0
        while start < total_epochs:
            self.starts.append(start)
            self.periods.append(period)
            self.start_lrs.append(lr)
            start, period, lr = start + period, 2 * period, lr / 2
        if start != total_epochs:
            raise exceptions.RangeError(
                message=f"Doubling periods starting at {first_period} do "
                f"not add up to {total_epochs} epochs"
            )

    def period_index(self, epoch):
        """Index of the period an epoch belongs to."""
        if not 0 <= epoch < self.total_epochs:
            raise exceptions.RangeError(
                message=f"Epoch {epoch} not in [0, {self.total_epochs})"
            )
        index = 0
        while (
            index + 1 < len(self.starts) and epoch >= self.starts[index + 1]
        ):
            index += 1
        return index

    def lr(self, epoch):
        """
        Learning rate at a given epoch.

        Parameters
        ----------
        epoch : :class:`float`
            Epoch, possibly fractional, in [0, total_epochs)

        Returns
        -------
        lr : :class:`float`
            Learning rate

        Raises
        ------
        nucseg.exceptions.RangeError
            Raised if the epoch is out of range

        """
        index = self.period_index(epoch)
        phase = (epoch - self.starts[index]) / self.periods[index]
        return self.start_lrs[index] * (1 + math.cos(math.pi * phase)) / 2

    def is_restart(self, epoch):
        """Whether a period starts at the given epoch."""
        return epoch in self.starts


def lr_at(epoch, lr0=3e-4, first_period=40, total_epochs=600):
    """
    Learning rate of the cosine schedule with warm restarts at an epoch.

    Convenience function for :meth:`Schedule.lr`.

    Parameters
    ----------
    epoch : :class:`float`
        Epoch in [0, total_epochs)

    lr0 : :class:`float`
        Learning rate at epoch 0

    first_period : :class:`int`
        Length of the first period

    total_epochs : :class:`int`
        Number of epochs

    Returns
    -------
    lr : :class:`float`
        Learning rate

    """
    return Schedule(
        lr0=lr0, first_period=first_period, total_epochs=total_epochs
    ).lr(epoch)
