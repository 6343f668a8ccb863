import io
import json
import os
import shutil
import tempfile
import textwrap
from contextlib import redirect_stderr, redirect_stdout
from unittest import TestCase

import numpy as np

from cine_selftrain.io import read_dataset, read_study, write_dataset
from cst_cli.cli import EXIT_DATA, EXIT_OK, EXIT_PIPELINE, EXIT_USAGE, main

from tests.common import TempDirTest, study_from_labels

SMALL_CONFIG = textwrap.dedent(
    """
    [phantom]
    shape = 33, 33, 33
    spacing = 2, 2, 2
    frames = 3
    studies = 2
    manual_studies = 1
    [training]
    epochs = 2
    voxels_per_frame = 300
    batch_voxels = 256
    [selftrain]
    rounds = 1
    """
)


def run(*argv):
    """Run ``cst`` with `argv`; return the exit code, stdout and stderr."""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


class TestUsage(TempDirTest):

    def test_no_command(self):
        self.assertEqual(EXIT_OK, run()[0])
        self.assertEqual(EXIT_USAGE, run('phantom')[0])

    def test_bad_arguments(self):
        self.assertEqual(EXIT_USAGE, run('metrics', 'eval')[0])
        self.assertEqual(EXIT_USAGE, run('unknown')[0])
        code, _, err = run('selftrain', 'run', '--data', 'x', '--out', 'y',
                           '--mode', 'supervised')
        self.assertEqual(EXIT_USAGE, code)
        self.assertIn('--mode', err)

    def test_version(self):
        code, out, _ = run('--version')
        self.assertEqual(EXIT_OK, code)
        self.assertIn('cine_selftrain', out)

    def test_config_show(self):
        path = os.path.join(self.tmp, 'cst.ini')
        with open(path, 'w') as f:
            f.write('[selftrain]\nrounds = 2\n')
        code, out, _ = run('config', 'show', '--config', path)
        self.assertEqual(EXIT_OK, code)
        self.assertIn('rounds = 2', out)
        self.assertIn('[structures]', out)
        # the printed configuration reads back unchanged
        echoed = os.path.join(self.tmp, 'echo.ini')
        with open(echoed, 'w') as f:
            f.write(out)
        self.assertEqual(out, run('config', 'show', '--config', echoed)[1])

    def test_config_errors(self):
        path = os.path.join(self.tmp, 'cst.ini')
        for text in ('[selftrain]\nround = 2\n', '[training]\nepochs = 0\n'):
            with self.subTest(text=text):
                with open(path, 'w') as f:
                    f.write(text)
                code, _, err = run('config', 'show', '--config', path)
                self.assertEqual(EXIT_USAGE, code)
                self.assertIn('Error', err)
        missing = os.path.join(self.tmp, 'missing.ini')
        self.assertEqual(
            EXIT_USAGE, run('config', 'show', '--config', missing)[0]
        )

    def test_missing_directories(self):
        nowhere = os.path.join(self.tmp, 'nowhere')
        out = os.path.join(self.tmp, 'metrics.csv')
        code, _, err = run(
            'metrics', 'eval', '--pred', nowhere, '--truth', nowhere,
            '--out', out,
        )
        self.assertEqual(EXIT_USAGE, code)
        self.assertIn('nowhere', err)
        self.assertFalse(os.path.exists(out))

    def test_empty_dataset(self):
        empty = os.path.join(self.tmp, 'empty')
        os.makedirs(empty)
        code = run(
            'qc', 'flag', '--data', empty, '--out',
            os.path.join(self.tmp, 'flags.csv'),
        )[0]
        self.assertEqual(EXIT_DATA, code)


class TestPipeline(TestCase):
    """Every command on one small phantom cohort."""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.mkdtemp(prefix='cst_cli_')
        cls.config = os.path.join(cls.tmp, 'cst.ini')
        with open(cls.config, 'w') as f:
            f.write(SMALL_CONFIG)
        cls.phantom = os.path.join(cls.tmp, 'phantom')
        code, _, err = run(
            'phantom', 'generate', '--out', cls.phantom,
            '--config', cls.config, '--threads', 2,
        )
        assert code == EXIT_OK, err

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)

    def _path(self, name):
        return os.path.join(self.tmp, name)

    def _run(self, *argv):
        return run(*argv, '--config', self.config)

    def test_phantom_layout(self):
        expected = ['manual_000', 'subject_000', 'subject_001']
        for part in ('truth', 'studies'):
            self.assertEqual(
                expected, sorted(os.listdir(os.path.join(self.phantom, part)))
            )
        stored = read_study(
            os.path.join(self.phantom, 'studies', 'subject_000')
        )
        truth = read_study(os.path.join(self.phantom, 'truth', 'subject_000'))
        self.assertEqual(truth.images, stored.images)
        self.assertFalse(any(v.labels.any() for v in stored.labels))
        manual = read_study(
            os.path.join(self.phantom, 'studies', 'manual_000')
        )
        self.assertTrue(manual.is_manual)
        self.assertTrue(manual.labels[0].labels.any())

    def test_refuses_to_overwrite(self):
        code, _, err = self._run('phantom', 'generate', '--out', self.phantom)
        self.assertEqual(EXIT_DATA, code)
        self.assertIn('--force', err)

    def test_force_overwrites(self):
        out = self._path('forced')
        os.makedirs(out)
        with open(os.path.join(out, 'stale.txt'), 'w') as f:
            f.write('old')
        code = self._run(
            'phantom', 'generate', '--out', out, '--force', '--seed', 3
        )[0]
        self.assertEqual(EXIT_OK, code)
        self.assertFalse(os.path.exists(os.path.join(out, 'stale.txt')))
        self.assertFalse(os.path.exists(os.path.join(out, '.lock')))

    def test_foundation_simulate(self):
        out = self._path('foundation')
        code = self._run(
            'foundation', 'simulate', '--data', self.phantom, '--out', out
        )[0]
        self.assertEqual(EXIT_OK, code)
        studies = {s.subject_id: s for s in read_dataset(out)}
        truth = {
            s.subject_id: s
            for s in read_dataset(os.path.join(self.phantom, 'truth'))
        }
        self.assertEqual(set(truth), set(studies))
        self.assertEqual(truth['manual_000'], studies['manual_000'])

    def test_selftrain_apply_and_evaluate(self):
        run_dir = self._path('run')
        code, _, err = self._run(
            'selftrain', 'run', '--data', self.phantom, '--out', run_dir,
            '--save-labels',
        )
        self.assertEqual(EXIT_OK, code, err)
        for name in (
            'manifest.json',
            'model.json',
            'flagged_fractions.csv',
            'flagged_fractions.svg',
            'iteration_01',
            'iteration_02',
            'labels',
        ):
            self.assertTrue(os.path.exists(os.path.join(run_dir, name)), name)
        with open(os.path.join(run_dir, 'manifest.json')) as f:
            manifest = json.load(f)
        self.assertEqual('completed', manifest['status'])
        self.assertEqual(
            [1, 2], [i['iteration'] for i in manifest['iterations']]
        )
        self.assertEqual('1', manifest['config']['selftrain']['rounds'])
        self.assertEqual(['cst', 'selftrain', 'run'], manifest['command'][:3])
        self.assertTrue(
            os.path.exists(
                os.path.join(run_dir, 'iteration_02', 'metrics.csv')
            )
        )

        applied = self._path('applied')
        code = self._run(
            'selftrain', 'apply', '--model',
            os.path.join(run_dir, 'model.json'), '--data', self.phantom,
            '--out', applied, '--largest-component',
        )[0]
        self.assertEqual(EXIT_OK, code)
        self.assertTrue(os.path.exists(os.path.join(applied, 'flags.csv')))

        metrics = self._path('metrics.csv')
        code = self._run(
            'metrics', 'eval', '--pred', applied, '--truth', self.phantom,
            '--out', metrics,
        )[0]
        self.assertEqual(EXIT_OK, code)
        with open(metrics) as f:
            self.assertTrue(f.readline().startswith('scope,subject_id'))
        code = self._run(
            'metrics', 'eval', '--pred', applied, '--truth', self.phantom,
            '--out', metrics,
        )[0]
        self.assertEqual(EXIT_DATA, code)

    def test_rounds_override(self):
        run_dir = self._path('no_rounds')
        code = self._run(
            'selftrain', 'run', '--data', self.phantom, '--out', run_dir,
            '--rounds', 0, '--mode', 'pseudo_mixed',
        )[0]
        self.assertEqual(EXIT_OK, code)
        self.assertFalse(os.path.exists(os.path.join(run_dir, 'model.json')))
        with open(os.path.join(run_dir, 'manifest.json')) as f:
            manifest = json.load(f)
        self.assertEqual('0', manifest['config']['selftrain']['rounds'])
        self.assertEqual(
            'pseudo_mixed', manifest['config']['selftrain']['mode']
        )

    def test_qc_and_temporal(self):
        flags = self._path('flags.csv')
        code = self._run(
            'qc', 'flag', '--data', self.phantom, '--out', flags
        )[0]
        self.assertEqual(EXIT_OK, code)
        temporal = self._path('temporal')
        code = self._run(
            'temporal', 'report', '--data',
            os.path.join(self.phantom, 'truth'), '--out', temporal,
        )[0]
        self.assertEqual(EXIT_OK, code)
        self.assertEqual(
            ['manual_000.svg', 'subject_000.svg', 'subject_001.svg'],
            sorted(os.listdir(os.path.join(temporal, 'curves'))),
        )

    def test_benchmark(self):
        out = self._path('benchmark.csv')
        code, _, err = self._run(
            'metrics', 'benchmark', '--data', self.phantom, '--folds', 2,
            '--variants', 'foundation', 'pseudo', '--out', out,
        )
        self.assertEqual(EXIT_OK, code, err)
        with open(out) as f:
            lines = f.read().splitlines()
        self.assertEqual(1 + 2 * 7, len(lines))

    def test_benchmark_needs_truth(self):
        code = self._run(
            'metrics', 'benchmark', '--data',
            os.path.join(self.phantom, 'studies'), '--out',
            self._path('nothing.csv'),
        )[0]
        self.assertEqual(EXIT_USAGE, code)


class TestFailedRun(TempDirTest):

    def test_pipeline_failure(self):
        # every study is manual: there is nothing to self-train on
        labels = np.zeros((4, 4, 4), dtype=np.uint8)
        labels[1:3, 1:3, 1:3] = 2
        studies = [
            study_from_labels(f'm{i}', [labels] * 3, is_manual=True)
            for i in range(2)
        ]
        data = os.path.join(self.tmp, 'data')
        write_dataset(studies, data)
        out = os.path.join(self.tmp, 'run')
        code, _, err = run(
            'selftrain', 'run', '--data', data, '--out', out, '--rounds', 1
        )
        self.assertEqual(EXIT_PIPELINE, code)
        self.assertIn('RoundFailed', err)
        with open(os.path.join(out, 'manifest.json')) as f:
            manifest = json.load(f)
        self.assertEqual('failed', manifest['status'])
        self.assertEqual([1], [i['iteration'] for i in manifest['iterations']])
