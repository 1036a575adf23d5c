import tempfile
from pathlib import Path

import numpy as np

from kanscope.exceptions import CheckpointIOError, CorruptedIndexError, UnknownVersionError
from networks.serializers import dumps_model
from networks.test_base import BaseTestCase
from .identifiers import VersionId
from .store import CheckpointStore, commit, history, rewind


class StoreTestCase(BaseTestCase):
    """Base test case with a checkpoint store in a temporary directory."""

    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)
        self.directory = Path(self._tmp.name) / 'checkpoints'
        self.store = CheckpointStore(self.directory)

    def run_scenario(self):
        """Commit 0.0 -> 0.1 -> 0.2, rewind to 0.1, commit 1.2."""
        models = [self.create_test_model(seed=seed) for seed in range(3)]
        commit(self.store, models[0], 'init')
        commit(self.store, models[1], 'train')
        commit(self.store, models[2], 'fix beta')
        restored, version = rewind(self.store, '0.1')
        commit(self.store, self.create_test_model(seed=9), 'fix gamma')
        return models, restored, version


class VersionIdTest(BaseTestCase):
    """Test cases for version labels."""

    def test_parse(self):
        """Test parsing and rendering."""
        self.assertEqual(VersionId.parse('1.12'), VersionId(1, 12))
        self.assertEqual(str(VersionId(3, 0)), '3.0')
        self.assertEqual(VersionId(0, 2).next_minor(), VersionId(0, 3))

    def test_malformed(self):
        """Test that malformed labels are rejected."""
        for text in ('abc', '1', '1.2.3', '-1.0'):
            with self.subTest(text=text), self.assertRaises(UnknownVersionError):
                VersionId.parse(text)


class CommitTest(StoreTestCase):
    """Test cases for committing versions."""

    def test_first_commits(self):
        """Test that a fresh store starts at 0.0 and counts minors."""
        self.assertIsNone(self.store.active)
        self.assertEqual(commit(self.store, self.create_test_model(), 'init'), VersionId(0, 0))
        self.assertEqual(commit(self.store, self.create_test_model(seed=1), 'train'), VersionId(0, 1))
        self.assertEqual(self.store.active, VersionId(0, 1))
        self.assertTrue((self.directory / 'v0.1.model.json').exists())

    def test_unchanged_model(self):
        """Test that repeated commits get new ids and identical snapshots."""
        model = self.create_test_model()
        first = commit(self.store, model, 'init')
        second = commit(self.store, model, 'noop')
        self.assertNotEqual(first, second)
        self.assertEqual(self.store.snapshot_path(first).read_bytes(),
                         self.store.snapshot_path(second).read_bytes())

    def test_restore_fidelity(self):
        """Test that a loaded snapshot reproduces every parameter."""
        model = self.create_test_model(width=[(2, 0), (2, 1), (1, 0)], seed=3, noise=1.0)
        version = commit(self.store, model, 'init')
        loaded = self.store.load(version)
        self.assertEqual(dumps_model(loaded), dumps_model(model))
        self.assertTrue(np.array_equal(loaded.forward(self.probe), model.forward(self.probe)))

    def test_unwritable_directory(self):
        """Test that a directory that cannot be created raises an I/O error."""
        blocker = Path(self._tmp.name) / 'blocker'
        blocker.write_text('not a directory')
        store = CheckpointStore(blocker / 'checkpoints')
        with self.assertRaises(CheckpointIOError):
            store.commit(self.create_test_model(), 'init')


class RewindTest(StoreTestCase):
    """Test cases for rewinding."""

    def test_scenario_numbering(self):
        """Test rewinding 0.1 after 0.2 and committing on the new branch."""
        models, restored, version = self.run_scenario()
        self.assertEqual(version, VersionId(1, 1))
        self.assertEqual(self.store.active, VersionId(1, 2))
        self.assertEqual(dumps_model(restored), dumps_model(models[1]))
        self.assertTrue(np.array_equal(restored.forward(self.probe), models[1].forward(self.probe)))

    def test_rewind_to_active(self):
        """Test that rewinding to the active version only bumps the major."""
        model = self.create_test_model(seed=4)
        commit(self.store, self.create_test_model(), 'init')
        commit(self.store, model, 'train')
        restored, version = self.store.rewind(VersionId(0, 1))
        self.assertEqual(version, VersionId(1, 1))
        self.assertEqual(dumps_model(restored), dumps_model(model))

    def test_majors_increase(self):
        """Test that every rewind takes a new, larger major."""
        for seed in range(3):
            commit(self.store, self.create_test_model(seed=seed), f'step {seed}')
        _, first = self.store.rewind('0.0')
        _, second = self.store.rewind('0.2')
        _, third = self.store.rewind(first)
        self.assertEqual([first, second, third], [VersionId(1, 0), VersionId(2, 2), VersionId(3, 0)])
        self.assertEqual(commit(self.store, self.create_test_model(), 'train'), VersionId(3, 1))

    def test_unknown_version(self):
        """Test that rewinding to a missing version fails."""
        commit(self.store, self.create_test_model(), 'init')
        with self.assertRaises(UnknownVersionError):
            self.store.rewind('0.5')
        with self.assertRaises(UnknownVersionError):
            self.store.load('2.0')


class HistoryTest(StoreTestCase):
    """Test cases for the version log."""

    def test_empty(self):
        """Test that an empty store has no history."""
        self.assertEqual(history(self.store), [])
        self.assertEqual(self.store.render(), '')

    def test_two_branches(self):
        """Test that the rewind scenario forks after 0.1."""
        self.run_scenario()
        v = VersionId.parse
        self.assertEqual(history(self.store), [
            (v('0.0'), None, 'init'),
            (v('0.1'), v('0.0'), 'train'),
            (v('0.2'), v('0.1'), 'fix beta'),
            (v('1.1'), v('0.1'), 'rewind 0.1'),
            (v('1.2'), v('1.1'), 'fix gamma'),
        ])
        branches = self.store.children()
        self.assertEqual([entry.version for entry in branches[v('0.1')]], [v('0.2'), v('1.1')])
        rendered = self.store.render().splitlines()
        self.assertEqual(rendered[0], '0.0  init')
        self.assertEqual(rendered[-1], '      1.2  fix gamma *')

    def test_many_commits(self):
        """Test ten commits produce ten consistent entries."""
        for step in range(10):
            commit(self.store, self.create_test_model(seed=step), f'step {step}')
        entries = self.store.history()
        self.assertEqual(len(entries), 10)
        seen = set()
        for entry in entries:
            self.assertTrue(entry.parent is None or entry.parent in seen)
            seen.add(entry.version)

    def test_truncated_tail(self):
        """Test that a torn last journal line is ignored and then replaced."""
        commit(self.store, self.create_test_model(), 'init')
        with open(self.store.index_path, 'a') as handle:
            handle.write('{"event": "com')
        self.assertEqual(len(self.store.history()), 1)
        self.assertEqual(commit(self.store, self.create_test_model(), 'train'), VersionId(0, 1))
        self.assertEqual(len(self.store.index_path.read_text().splitlines()), 2)

    def test_corrupted_line(self):
        """Test that a broken complete line is reported."""
        commit(self.store, self.create_test_model(), 'init')
        with open(self.store.index_path, 'a') as handle:
            handle.write('not json\n')
        with self.assertRaises(CorruptedIndexError):
            self.store.history()

    def test_dangling_parent(self):
        """Test that a line naming an unknown parent is reported."""
        self.directory.mkdir(parents=True)
        self.store.index_path.write_text(
            '{"event": "commit", "version": "0.1", "parent": "0.0", "op": "train", '
            '"snapshot": "v0.1.model.json", "timestamp": "2024-01-01T00:00:00+00:00"}\n'
        )
        with self.assertRaises(CorruptedIndexError):
            self.store.history()
