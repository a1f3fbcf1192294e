"""
Plotting: Graphical representations of data extracted from datasets.

Plotting relies on `matplotlib <https://matplotlib.org/>`_, and mainly its
object-oriented interface should be used for the actual plotting inside the
actual plotter classes. Note that the user of the nucseg package usually will
not be exposed directly to the matplotlib interface.

Currently, the only plotter specific to the nucseg package is the
:class:`SweepPlotter`, drawing the results of a parameter sweep (see
:func:`nucseg.training.sweep`): the mean AJI as function of the parameter
value, for stage 1 alone and for the whole pipeline. All plotters of the
ASpecD framework can be used with the datasets of the nucseg package as
well.


Module documentation
====================

"""

import aspecd.plotting


class SweepPlotter(aspecd.plotting.MultiPlotter1D):
    # noinspection PyUnresolvedReferences
    """Mean AJI as function of a swept parameter.

    Each dataset is a curve, usually one for the stage-1 proposals and one
    for the whole pipeline, as returned by
    :meth:`nucseg.training.SweepResult.to_datasets`. Curves are drawn with
    markers, as only a few parameter values are evaluated, and labelled in
    a legend by the labels of the datasets.

    As the class is inherited from ASpecD for simple usage, see the
    ASpecD documentation of the :class:`aspecd.plotting.MultiPlotter1D`
    class for its general use.

    Attributes
    ----------
    parameters : :class:`dict`
        All parameters necessary for the plot, in addition to those of the
        parent class.

        tick_labels : :class:`list`
            Labels of the parameter values, for non-numeric parameters
            whose axis values are indices

            Default: []

        marker : :class:`str`
            Marker of the data points

            Default: "o"


    Examples
    --------
    .. code-block:: python

        plotter = SweepPlotter()
        plotter.datasets = result.to_datasets()
        plotter.plot()
        saver = aspecd.plotting.Saver()
        saver.filename = "sweep.pdf"
        plotter.save(saver)

    """

    def __init__(self):
        super().__init__()
        self.description = "Mean AJI of a parameter sweep"
        self.parameters["show_legend"] = True
        self.parameters["tick_labels"] = []
        self.parameters["marker"] = "o"

    def _create_plot(self):
        """Actual drawing of datasets."""
        for properties in self.properties.drawings:
            if not properties.marker:
                properties.marker = self.parameters["marker"]
        super()._create_plot()
        tick_labels = self.parameters["tick_labels"]
        if tick_labels:
            self.ax.set_xticks(range(len(tick_labels)))
            self.ax.set_xticklabels([str(label) for label in tick_labels])
