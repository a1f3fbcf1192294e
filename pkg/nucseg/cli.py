"""
Command-line interface of the nucseg package.

All functionality needed for training and applying the two-stage pipeline
is available as subcommands of the ``nucseg`` command::

    nucseg synth --n 200 --shape 128,128 --seed 0 --out train
    nucseg train-stage1 --data train --preset desk --out run
    nucseg train-stage2 --data train --stage1 run/stage1_best.pt --out run
    nucseg infer --data test --stage1 run/stage1_best.pt \\
        --stage2-small run/stage2_small.pt \\
        --stage2-large run/stage2_large.pt --out pred
    nucseg evaluate --pred pred --gt test --report report.tsv
    nucseg sweep --param dilation_radius --values 0,1,2,3 --data test \\
        --stage1 run/stage1_best.pt --out sweep.tsv --plot sweep.pdf

Configuration values are taken from the preset given by ``--preset``
(full scale by default), updated from the file given by ``--config`` and
finally from each ``--set key=value`` option, *e.g.*
``--set stage1.postproc.dilation_radius=2``.


Module documentation
====================

"""

import argparse
import csv
import logging
import os
import sys

import aspecd.plotting

import nucseg.io
import nucseg.plotting
import nucseg.report
import nucseg.synthesis
import nucseg.training
from nucseg import config, exceptions


logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())


def _shape(text):
    values = tuple(int(value) for value in text.split(","))
    if len(values) == 1:
        values *= 2
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"Invalid shape {text}")
    return values


def _values(text):
    return [config.parse_value(value) for value in text.split(",")]


def _add_config_arguments(parser):
    parser.add_argument(
        "--config", default="", help="configuration file (key = value)"
    )
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a configuration value, repeatable",
    )
    parser.add_argument(
        "--preset",
        choices=("full", "desk"),
        default="full",
        help="configuration the file and overrides are applied to",
    )


def _add_stage2_arguments(parser):
    parser.add_argument("--stage2-small", default="", metavar="CKPT")
    parser.add_argument("--stage2-large", default="", metavar="CKPT")


def create_parser():
    """Return the parser of the command line."""
    parser = argparse.ArgumentParser(
        prog="nucseg",
        description="Two-stage nucleus instance segmentation",
    )
    parser.add_argument(
        "--verbose", action="store_true", help="log debug messages"
    )
    parser.add_argument(
        "--device", default=None, help="torch device, e.g. cpu or cuda:0"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="generate synthetic images")
    synth.add_argument("--n", type=int, default=1)
    synth.add_argument("--shape", type=_shape, default=(128, 128))
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--density", type=float, default=6.0)
    synth.add_argument("--overlap", type=float, default=0.1)
    synth.add_argument("--out", required=True)

    stage1 = commands.add_parser("train-stage1", help="train stage 1")
    stage1.add_argument("--data", required=True)
    stage1.add_argument("--val", default="", help="validation directory")
    stage1.add_argument("--out", required=True)
    _add_config_arguments(stage1)

    stage2 = commands.add_parser("train-stage2", help="train stage 2")
    stage2.add_argument("--data", required=True)
    stage2.add_argument("--stage1", required=True, metavar="CKPT")
    stage2.add_argument("--out", required=True)
    _add_config_arguments(stage2)

    infer = commands.add_parser("infer", help="predict instance maps")
    infer.add_argument("--data", required=True)
    infer.add_argument("--stage1", required=True, metavar="CKPT")
    _add_stage2_arguments(infer)
    infer.add_argument("--no-stage2", action="store_true")
    infer.add_argument("--dump-patches", default="", metavar="DIR")
    infer.add_argument("--save-probabilities", action="store_true")
    infer.add_argument("--out", required=True)
    _add_config_arguments(infer)

    evaluate = commands.add_parser("evaluate", help="compare with truth")
    evaluate.add_argument("--pred", required=True)
    evaluate.add_argument("--gt", required=True)
    evaluate.add_argument("--iou-thresh", type=float, default=0.5)
    evaluate.add_argument(
        "--f1-criterion", choices=("iou", "centroid"), default="iou"
    )
    evaluate.add_argument("--report", default="")

    sweep = commands.add_parser("sweep", help="sweep a parameter")
    sweep.add_argument(
        "--param", required=True, choices=nucseg.training.SWEEP_PARAMETERS
    )
    sweep.add_argument("--values", required=True, type=_values)
    sweep.add_argument("--data", required=True, help="evaluation directory")
    sweep.add_argument("--train", default="", help="training directory")
    sweep.add_argument("--stage1", required=True, metavar="CKPT")
    _add_stage2_arguments(sweep)
    sweep.add_argument("--out", default="", help="TSV file of the results")
    sweep.add_argument("--plot", default="", metavar="FILE")
    _add_config_arguments(sweep)
    return parser


def load_config(args):
    """
    Configuration from preset, configuration file and overrides.

    Parameters
    ----------
    args : :class:`argparse.Namespace`
        Parsed command line

    Returns
    -------
    train_config : :class:`nucseg.config.TrainConfig`
        Validated configuration

    """
    if args.preset == "desk":
        train_config = config.TrainConfig.desk_scale()
    else:
        train_config = config.TrainConfig.full_scale()
    if args.config:
        train_config.from_file(args.config)
    for item in args.set:
        key, separator, value = item.partition("=")
        if not separator:
            raise exceptions.UnknownParameterError(
                message=f"Expected KEY=VALUE, got {item}"
            )
        train_config.set(key.strip(), config.parse_value(value))
    train_config.validate()
    return train_config


def _synth(args):
    datasets = nucseg.synthesis.synth_generate(
        n_images=args.n,
        shape=args.shape,
        density=args.density,
        overlap_prob=args.overlap,
        seed=args.seed,
    )
    nucseg.io.save_dataset(datasets, args.out)
    logger.info("Wrote %d images to %s", len(datasets), args.out)


def _train_stage1(args):
    train_config = load_config(args)
    val = nucseg.io.load_dataset(args.val) if args.val else None
    trainer = nucseg.training.train_stage1(
        nucseg.io.load_dataset(args.data),
        val_datasets=val,
        train_config=train_config,
        output_dir=args.out,
        device=args.device,
    )
    logger.info("Best validation AJI %s", trainer.best_aji)


def _train_stage2(args):
    nucseg.training.train_stage2(
        nucseg.io.load_dataset(args.data),
        args.stage1,
        train_config=load_config(args),
        output_dir=args.out,
        device=args.device,
    )


def _infer(args):
    train_config = load_config(args)
    pipeline = nucseg.training.Pipeline.from_checkpoints(
        args.stage1,
        small=args.stage2_small,
        large=args.stage2_large,
        use_stage2=not args.no_stage2,
        postproc=(
            train_config.stage1.postproc
            if args.set or args.config
            else None
        ),
        device=args.device,
    )
    datasets = nucseg.io.load_dataset(args.data, require_labels=False)
    exporter = None
    if args.dump_patches:
        exporter = nucseg.io.PatchStripExporter(target=args.dump_patches)
    nucseg.training.infer(datasets, pipeline, patch_exporter=exporter)
    nucseg.io.save_predictions(datasets, args.out)
    if args.save_probabilities:
        for dataset in datasets:
            for index, name in enumerate(("seg", "bnd")):
                nucseg.io.write_probability_map(
                    os.path.join(args.out, f"{dataset.stem}_{name}.brpf"),
                    dataset.probabilities.data[..., index],
                )


def _evaluate(args):
    reporter = nucseg.report.MetricReporter(filename=args.report)
    reporter.report = nucseg.training.evaluate(
        args.pred,
        args.gt,
        iou_thresh=args.iou_thresh,
        criterion=args.f1_criterion,
    )
    text = reporter.create()
    if not args.report:
        sys.stdout.write(text)


def _sweep(args):
    stage2_checkpoints = None
    if args.stage2_small or args.stage2_large:
        stage2_checkpoints = (args.stage2_small, args.stage2_large)
    result = nucseg.training.sweep(
        args.param,
        args.values,
        nucseg.io.load_dataset(args.data),
        args.stage1,
        stage2_checkpoints=stage2_checkpoints,
        train_datasets=(
            nucseg.io.load_dataset(args.train) if args.train else None
        ),
        train_config=load_config(args),
        output_dir=os.path.dirname(args.out),
        device=args.device,
    )
    if args.out:
        nucseg.training.write_history(args.out, result.rows())
    else:
        writer = csv.DictWriter(
            sys.stdout,
            fieldnames=["value", "stage1_aji", "pipeline_aji"],
            delimiter="\t",
        )
        writer.writeheader()
        writer.writerows(result.rows())
    if args.plot:
        plotter = nucseg.plotting.SweepPlotter()
        plotter.datasets = result.to_datasets()
        if not result.numeric:
            plotter.parameters["tick_labels"] = result.values
        plotter.plot()
        saver = aspecd.plotting.Saver()
        saver.filename = args.plot
        plotter.save(saver)


COMMANDS = {
    "synth": _synth,
    "train-stage1": _train_stage1,
    "train-stage2": _train_stage2,
    "infer": _infer,
    "evaluate": _evaluate,
    "sweep": _sweep,
}


def main(argv=None):
    """
    Run the command line.

    Parameters
    ----------
    argv : :class:`list`
        Arguments, those of the process if None

    Returns
    -------
    status : :class:`int`
        Exit status, 0 on success, 1 for errors of the package

    """
    args = create_parser().parse_args(argv)
    handler = logging.StreamHandler()
    handler.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    )
    package_logger = logging.getLogger("nucseg")
    package_logger.addHandler(handler)
    package_logger.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        COMMANDS[args.command](args)
    except exceptions.Error as error:
        logger.error("%s", error)
        return 1
    finally:
        package_logger.removeHandler(handler)
    return 0


if __name__ == "__main__":
    sys.exit(main())
