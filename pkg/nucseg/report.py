"""
General facilities to generate a report.

Evaluating a set of predictions results in a number of metric values per
image. This module renders these values, together with their means over
all images and over each group of images, into a tab-separated text file::

    <stem>      <aji>   <f1>    <dice1> <dice2>
    ...
    AGGREGATE   <aji>   <f1>    <dice1> <dice2>
    AGGREGATE:<group> ...

The report is created from a template bundled with the nucseg package,
using the Jinja2 template engine. Custom templates can be used as well,
with the same context.


Module documentation
====================

"""

import logging
import os

import jinja2

from nucseg import metrics


logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())


class MetricReporter:
    """
    Render the metric values of a set of images using a template.

    An example for using the class may look like this::

        reporter = MetricReporter(filename="report.tsv")
        reporter.report = nucseg.training.evaluate("pred", "gt")
        reporter.create()

    Attributes
    ----------
    template : :class:`str`
        Name of the template; looked up in the templates of the package
        unless it is the path to an existing file

        Default: "report.tsv.j2"

    filename : :class:`str`
        Name of the file to write to; nothing is written if empty

    report : :class:`nucseg.metrics.MetricReport`
        Metric values to render

    context : :class:`dict`
        Variables available within the template: ``rows``, ``aggregate``
        and ``groups`` (pairs of group name and aggregate)

    text : :class:`str`
        Rendered report

    """

    def __init__(self, template="report.tsv.j2", filename=""):
        self.template = template
        self.filename = filename
        self.report = metrics.MetricReport()
        self.context = {}
        self.text = ""

    def create(self):
        """Render the report and write it to the file, if any."""
        self._create_context()
        self.text = self._load_template().render(self.context)
        if self.filename:
            with open(self.filename, "w", encoding="utf8") as file:
                file.write(self.text)
            logger.info("Wrote report to %s", self.filename)
        return self.text

    def _create_context(self):
        self.context["rows"] = self.report.rows
        self.context["aggregate"] = self.report.aggregate()
        self.context["groups"] = [
            (group, self.report.aggregate(group))
            for group in self.report.groups
        ]

    def _load_template(self):
        if os.path.isfile(self.template):
            directory, name = os.path.split(os.path.abspath(self.template))
            loader = jinja2.FileSystemLoader(directory)
        else:
            name = self.template
            loader = jinja2.PackageLoader("nucseg", "templates")
        environment = jinja2.Environment(loader=loader)
        return environment.get_template(name)
