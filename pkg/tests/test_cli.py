import contextlib
import io
import os
import shutil
import tempfile
import unittest

import nucseg.cli
import nucseg.exceptions
import nucseg.io


class TestCreateParser(unittest.TestCase):
    def setUp(self):
        self.parser = nucseg.cli.create_parser()

    def test_has_all_commands(self):
        for command in nucseg.cli.COMMANDS:
            args = self.parser.parse_args(
                [command] + self._required(command)
            )
            self.assertEqual(command, args.command)

    @staticmethod
    def _required(command):
        required = {
            "synth": ["--out", "x"],
            "train-stage1": ["--data", "x", "--out", "x"],
            "train-stage2": ["--data", "x", "--stage1", "x", "--out", "x"],
            "infer": ["--data", "x", "--stage1", "x", "--out", "x"],
            "evaluate": ["--pred", "x", "--gt", "x"],
            "sweep": "--param tau --values 0.5 --data x --stage1 x".split(),
        }
        return required[command]

    def test_shape_with_one_value_is_square(self):
        args = self.parser.parse_args(
            ["synth", "--shape", "64", "--out", "x"]
        )
        self.assertEqual((64, 64), args.shape)

    def test_sweep_values_are_parsed(self):
        args = self.parser.parse_args(
            "sweep --param stage2_loss --values focal,cross-entropy "
            "--data x --stage1 x".split()
        )
        self.assertEqual(["focal", "cross-entropy"], args.values)
        args = self.parser.parse_args(
            "sweep --param dilation_radius --values 0,1,2 "
            "--data x --stage1 x".split()
        )
        self.assertEqual([0, 1, 2], args.values)


class TestLoadConfig(unittest.TestCase):
    def setUp(self):
        self.parser = nucseg.cli.create_parser()
        self.tempdir = tempfile.mkdtemp()
        self.arguments = ["train-stage1", "--data", "x", "--out", "x"]

    def tearDown(self):
        if os.path.exists(self.tempdir):
            shutil.rmtree(self.tempdir)

    def _load(self, *arguments):
        args = self.parser.parse_args(self.arguments + list(arguments))
        return nucseg.cli.load_config(args)

    def test_full_scale_by_default(self):
        self.assertEqual(600, self._load().stage1.epochs)

    def test_desk_preset(self):
        train_config = self._load("--preset", "desk")
        self.assertEqual(8, train_config.stage1.tafe.growth_rate)

    def test_set_overrides_value(self):
        train_config = self._load(
            "--set", "stage1.postproc.dilation_radius=3", "--set", "seed=7"
        )
        self.assertEqual(3, train_config.stage1.postproc.dilation_radius)
        self.assertEqual(7, train_config.seed)

    def test_set_without_value_raises(self):
        with self.assertRaises(nucseg.exceptions.UnknownParameterError):
            self._load("--set", "seed")

    def test_set_unknown_key_raises(self):
        with self.assertRaises(nucseg.exceptions.UnknownParameterError):
            self._load("--set", "stage1.nonsense=1")

    def test_config_file_is_applied_before_set(self):
        filename = os.path.join(self.tempdir, "run.cfg")
        with open(filename, "w", encoding="utf8") as file:
            file.write("seed = 3\nstage1.postproc.dilation_radius = 1\n")
        train_config = self._load(
            "--config", filename, "--set", "seed=5"
        )
        self.assertEqual(1, train_config.stage1.postproc.dilation_radius)
        self.assertEqual(5, train_config.seed)

    def test_invalid_value_raises(self):
        with self.assertRaises(nucseg.exceptions.RangeError):
            self._load("--set", "stage1.epochs=7")


class TestMain(unittest.TestCase):
    def setUp(self):
        self.tempdir = tempfile.mkdtemp()

    def tearDown(self):
        if os.path.exists(self.tempdir):
            shutil.rmtree(self.tempdir)

    def test_synth_writes_dataset_directory(self):
        status = nucseg.cli.main(
            "synth --n 2 --shape 48,64 --seed 1 --out".split()
            + [self.tempdir]
        )
        self.assertEqual(0, status)
        datasets = nucseg.io.load_dataset(self.tempdir)
        self.assertEqual(
            ["synth_0000", "synth_0001"], [d.stem for d in datasets]
        )
        self.assertEqual((48, 64, 3), datasets[0].data.data.shape)

    def test_evaluate_writes_report(self):
        nucseg.cli.main(["synth", "--n", "2", "--out", self.tempdir])
        report = os.path.join(self.tempdir, "report.tsv")
        status = nucseg.cli.main(
            [
                "evaluate",
                "--pred",
                os.path.join(self.tempdir, nucseg.io.LABEL_DIR),
                "--gt",
                self.tempdir,
                "--report",
                report,
            ]
        )
        self.assertEqual(0, status)
        with open(report, encoding="utf8") as file:
            lines = file.read().splitlines()
        self.assertTrue(lines[-1].startswith("AGGREGATE"))

    def test_evaluate_prints_report_without_file(self):
        nucseg.cli.main(["synth", "--n", "1", "--out", self.tempdir])
        output = io.StringIO()
        with contextlib.redirect_stdout(output):
            nucseg.cli.main(
                [
                    "evaluate",
                    "--pred",
                    os.path.join(self.tempdir, nucseg.io.LABEL_DIR),
                    "--gt",
                    self.tempdir,
                ]
            )
        self.assertIn("synth_0000", output.getvalue())

    def test_error_gives_exit_status_1(self):
        missing = os.path.join(self.tempdir, "missing")
        status = nucseg.cli.main(
            ["evaluate", "--pred", missing, "--gt", missing]
        )
        self.assertEqual(1, status)
