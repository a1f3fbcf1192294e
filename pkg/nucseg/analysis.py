"""
Data analysis functionality.

.. sidebar:: Processing *vs.* analysis steps

    The key difference between processing and analysis steps: While a
    processing step *modifies* the data of the dataset it operates on,
    an analysis step returns a result based on data of a dataset, but leaves
    the original dataset unchanged.


Key to reproducible science is automatic documentation of each analysis
step applied to the data of a dataset. Each analysis step is self-contained,
meaning it contains every necessary information to perform the analysis task
on a given dataset.

Analysis steps, in contrast to processing steps (see
:mod:`nucseg.processing` for details), operate on data of a
:class:`nucseg.dataset.ExperimentalDataset`, but don't change its data.


Concrete analysis steps
=======================

* :class:`SegmentationMetrics`

  Compare the predicted instance map of a dataset with its ground truth.


Module documentation
====================

"""

import aspecd.analysis

from nucseg import metrics


class SegmentationMetrics(aspecd.analysis.SingleAnalysisStep):
    # noinspection PyUnresolvedReferences
    """
    Compare predicted and ground-truth instance maps of a dataset.

    Calculates the aggregated Jaccard index (AJI), the detection F1 score
    and the two Dice scores, see :mod:`nucseg.metrics` for details.

    Attributes
    ----------
    parameters : :class:`dict`
        All parameters necessary for this step.

        iou_thresh : :class:`float`
            IoU threshold for matching instances in the F1 score

            Default: 0.5

        criterion : :class:`str`
            Matching criterion of the F1 score, "iou" or "centroid"

            Default: "iou"

        output : :class:`str`
            Kind of output

            Valid values are "dict" (all metrics and the counts of true
            positives, false positives and false negatives) and "value"
            (the metric named by ``kind``).

            Default: "dict"

        kind : :class:`str`
            Metric returned for output "value": "aji", "f1", "dice1" or
            "dice2"

            Default: "aji"

    result : :class:`dict` or :class:`float`
        Metrics, depending on the output parameter


    Examples
    --------
    For convenience, a series of examples in recipe style (for details of
    the recipe-driven data analysis, see :mod:`aspecd.tasks`) is given below
    for how to make use of this class.

    Obtain the AJI of the prediction of a dataset:

    .. code-block:: yaml

        - kind: singleanalysis
          type: SegmentationMetrics
          properties:
            parameters:
              output: value
              kind: aji
          result: aji

    """

    def __init__(self):
        super().__init__()
        self.description = "Instance segmentation metrics"
        self.parameters["iou_thresh"] = 0.5
        self.parameters["criterion"] = "iou"
        self.parameters["output"] = "dict"
        self.parameters["kind"] = "aji"

    @staticmethod
    def applicable(dataset):
        """
        Check whether the analysis step is applicable to the given dataset.

        Metrics need both a ground-truth and a predicted instance map.
        """
        return bool(
            getattr(dataset, "has_instances", False)
            and dataset.prediction.data.size
        )

    def _sanitise_parameters(self):
        if self.parameters["output"] not in ["dict", "value"]:
            raise ValueError(
                f"Unknown output type {self.parameters['output']}"
            )
        if self.parameters["kind"] not in metrics.MetricReport.names:
            raise ValueError(f"Unknown kind {self.parameters['kind']}")
        if self.parameters["criterion"] not in ["iou", "centroid"]:
            raise ValueError(
                f"Unknown criterion {self.parameters['criterion']}"
            )

    def _perform_task(self):
        report = metrics.MetricReport(
            iou_thresh=self.parameters["iou_thresh"],
            criterion=self.parameters["criterion"],
        )
        row = report.add(
            stem=self.dataset.stem,
            gt=self.dataset.instances.data,
            pred=self.dataset.prediction.data,
        )
        if self.parameters["output"] == "value":
            self.result = row[self.parameters["kind"]]
        else:
            self.result = {
                key: value
                for key, value in row.items()
                if key not in ("stem", "group")
            }
