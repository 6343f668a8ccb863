import json
import os

import numpy as np

from cine_selftrain.errors import (
    ContainerIntegrityError,
    LabelRangeError,
    MalformedManifestError,
    TruncatedFileError,
)
from cine_selftrain.grid import Spacing
from cine_selftrain.io import (
    read_dataset,
    read_study,
    write_dataset,
    write_study,
)
from cine_selftrain.io.container import MANIFEST_NAME, is_study_dir
from cine_selftrain.utils.hashing import sha256_bytes

from tests.common import TempDirTest, random_labels, study_from_labels


def _study(subject_id='subject_000', frames=2, is_manual=False):
    rng = np.random.default_rng(len(subject_id) + frames)
    shape = (3, 4, 5)
    labels = [random_labels(rng, shape) for _ in range(frames)]
    images = [rng.normal(100.0, 30.0, size=shape) for _ in range(frames)]
    return study_from_labels(
        subject_id,
        labels,
        Spacing(1.25, 1.25, 8.0),
        is_manual=is_manual,
        images=images,
    )


class ContainerTest(TempDirTest):

    def setUp(self):
        super().setUp()
        self.study = _study(is_manual=True)
        self.path = os.path.join(self.tmp, 'subject_000')
        write_study(self.study, self.path)

    def _manifest(self):
        with open(os.path.join(self.path, MANIFEST_NAME)) as f:
            return json.load(f)

    def _write_manifest(self, manifest):
        with open(os.path.join(self.path, MANIFEST_NAME), 'w') as f:
            json.dump(manifest, f)

    def _file(self, name):
        return os.path.join(self.path, name)


class TestWriteRead(ContainerTest):

    def test_round_trip(self):
        self.assertEqual(self.study, read_study(self.path))

    def test_layout(self):
        self.assertEqual(
            [
                'frame_000.img',
                'frame_000.lbl',
                'frame_001.img',
                'frame_001.lbl',
                MANIFEST_NAME,
            ],
            sorted(os.listdir(self.path)),
        )
        self.assertEqual(60 * 4, os.path.getsize(self._file('frame_000.img')))
        self.assertEqual(60, os.path.getsize(self._file('frame_000.lbl')))
        manifest = self._manifest()
        self.assertEqual([5, 4, 3], manifest['shape'])
        self.assertEqual([1.25, 1.25, 8.0], manifest['spacing'])
        self.assertTrue(manifest['is_manual'])
        self.assertEqual(2, manifest['num_frames'])

    def test_label_bytes_are_row_major(self):
        with open(self._file('frame_001.lbl'), 'rb') as f:
            data = f.read()
        np.testing.assert_array_equal(
            self.study.labels[1].labels.ravel(),
            np.frombuffer(data, dtype=np.uint8),
        )

    def test_rewrite_is_identical(self):
        with open(self._file('frame_000.img'), 'rb') as f:
            before = f.read()
        write_study(read_study(self.path), self.path)
        with open(self._file('frame_000.img'), 'rb') as f:
            self.assertEqual(before, f.read())


class TestIntegrity(ContainerTest):

    def test_changed_bytes(self):
        path = self._file('frame_001.img')
        with open(path, 'r+b') as f:
            first = f.read(1)
            f.seek(0)
            f.write(bytes([first[0] ^ 0xFF]))
        with self.assertRaises(ContainerIntegrityError):
            read_study(self.path)

    def test_truncated_file(self):
        path = self._file('frame_000.lbl')
        with open(path, 'rb') as f:
            data = f.read()
        with open(path, 'wb') as f:
            f.write(data[:-1])
        with self.assertRaises(TruncatedFileError):
            read_study(self.path)

    def test_missing_file(self):
        os.remove(self._file('frame_001.img'))
        with self.assertRaises(TruncatedFileError):
            read_study(self.path)

    def test_label_out_of_range(self):
        path = self._file('frame_000.lbl')
        with open(path, 'rb') as f:
            data = bytearray(f.read())
        data[7] = 9
        with open(path, 'wb') as f:
            f.write(data)
        manifest = self._manifest()
        manifest['frames'][0]['labels_sha256'] = sha256_bytes(bytes(data))
        self._write_manifest(manifest)
        with self.assertRaises(LabelRangeError) as ctx:
            read_study(self.path)
        self.assertEqual(9, ctx.exception.value)


class TestManifest(ContainerTest):

    def test_malformed(self):
        manifest = self._manifest()
        cases = {
            'missing key': {
                k: v for k, v in manifest.items() if k != 'spacing'
            },
            'frame count': dict(manifest, num_frames=3),
            'schema version': dict(manifest, schema_version=2),
            'not an object': [manifest],
            'bad shape': dict(manifest, shape=[5, 4]),
            'zero spacing': dict(manifest, spacing=[0.0, 1.0, 1.0]),
        }
        for name, document in cases.items():
            with self.subTest(name):
                self._write_manifest(document)
                with self.assertRaises(MalformedManifestError):
                    read_study(self.path)

    def test_invalid_json(self):
        with open(os.path.join(self.path, MANIFEST_NAME), 'w') as f:
            f.write('{"schema_version": 1,')
        with self.assertRaises(MalformedManifestError):
            read_study(self.path)

    def test_missing_manifest(self):
        os.remove(os.path.join(self.path, MANIFEST_NAME))
        self.assertFalse(is_study_dir(self.path))
        with self.assertRaises(MalformedManifestError):
            read_study(self.path)


class TestDataset(TempDirTest):

    def test_round_trip(self):
        studies = [_study('b_subject'), _study('a_subject', frames=1)]
        write_dataset(studies, self.tmp)
        os.makedirs(os.path.join(self.tmp, 'not_a_study'))
        loaded = read_dataset(self.tmp)
        self.assertEqual(
            ['a_subject', 'b_subject'], [s.subject_id for s in loaded]
        )
        self.assertEqual(studies[1], loaded[0])
        self.assertEqual(studies[0], loaded[1])

    def test_missing_directory(self):
        with self.assertRaises(FileNotFoundError):
            read_dataset(os.path.join(self.tmp, 'nowhere'))

    def test_empty_directory(self):
        self.assertEqual([], read_dataset(self.tmp))
