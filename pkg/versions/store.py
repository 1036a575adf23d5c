"""
Checkpoint store for network versions.

Layout: ``<dir>/index.jsonl`` is an append-only journal holding one JSON
object per commit or rewind, and ``<dir>/v<major>.<minor>.model.json`` holds
the full network document of every version. A snapshot is renamed into place
before its journal line is appended, so an interrupted commit leaves the
previous journal valid. The store has a single writer; readers may load
committed snapshots at any time.
"""

import json
import logging
import os
import tempfile
from pathlib import Path

from django.core.files import locks
from django.utils import timezone
from rest_framework import serializers

from kanscope.conf import kan_settings
from kanscope.exceptions import CheckpointIOError, CorruptedIndexError, UnknownVersionError
from networks.serializers import dumps_model, loads_model
from .identifiers import HistoryEntry, VersionId
from .serializers import JournalEntrySerializer

logger = logging.getLogger(__name__)

INDEX_NAME = 'index.jsonl'
ROOT_VERSION = VersionId(0, 0)


class CheckpointStore:
    """Versions of one network, kept as full snapshots in ``directory``."""

    def __init__(self, directory=None):
        self.directory = Path(directory or kan_settings.CHECKPOINT_DIR)
        self._valid_length = 0

    @property
    def index_path(self):
        return self.directory / INDEX_NAME

    def snapshot_path(self, version):
        return self.directory / f'v{VersionId.parse(version)}.model.json'

    # journal

    def _read_journal(self):
        try:
            raw = self.index_path.read_bytes()
        except (FileNotFoundError, NotADirectoryError):
            self._valid_length = 0
            return []
        except OSError as exc:
            raise CorruptedIndexError(f'Cannot read {self.index_path}: {exc}') from exc
        self._valid_length = raw.rfind(b'\n') + 1
        if raw[self._valid_length:].strip():
            logger.warning(f'Ignoring truncated last line of {self.index_path}')
        try:
            lines = raw[:self._valid_length].decode('utf-8').splitlines()
        except UnicodeDecodeError as exc:
            raise CorruptedIndexError(f'{self.index_path} is not UTF-8 text') from exc
        entries = []
        for number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            entries.append(self._parse_line(line, number, entries))
        return entries

    def _parse_line(self, line, number, entries):
        try:
            document = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptedIndexError(f'Journal line {number} is not valid JSON') from exc
        serializer = JournalEntrySerializer(data=document)
        if not serializer.is_valid():
            raise CorruptedIndexError(f'Journal line {number} is invalid: {serializer.errors}')
        data = serializer.validated_data
        version, parent = data['version'], data['parent']
        known = {entry.version for entry in entries}
        if version in known:
            raise CorruptedIndexError(f'Journal line {number} repeats version {version}')
        if parent is None and entries:
            raise CorruptedIndexError(f'Journal line {number} starts a second root')
        if parent is not None and parent not in known:
            raise CorruptedIndexError(f'Journal line {number} names unknown parent {parent}')
        if data['event'] == 'commit' and parent is not None and version != parent.next_minor():
            raise CorruptedIndexError(f'Journal line {number}: {version} cannot follow {parent}')
        if data['event'] == 'rewind':
            newest_major = max(entry.version.major for entry in entries)
            if version.major <= newest_major or version.minor != parent.minor:
                raise CorruptedIndexError(f'Journal line {number}: {version} is not a rewind of {parent}')
        return HistoryEntry(version, parent, data['op'], data['event'], document['timestamp'], data['snapshot'])

    def _append(self, entry):
        document = {
            'event': entry.event,
            'version': str(entry.version),
            'parent': None if entry.parent is None else str(entry.parent),
            'op': entry.op,
            'snapshot': entry.snapshot,
            'timestamp': entry.timestamp,
        }
        line = (json.dumps(document, sort_keys=True) + '\n').encode('utf-8')
        try:
            with open(self.index_path, 'ab') as handle:
                locks.lock(handle, locks.LOCK_EX)
                try:
                    # drop a torn line left by an interrupted append
                    handle.truncate(self._valid_length)
                    handle.write(line)
                    handle.flush()
                    os.fsync(handle.fileno())
                finally:
                    locks.unlock(handle)
        except OSError as exc:
            raise CheckpointIOError(f'Cannot append to {self.index_path}: {exc}') from exc
        self._valid_length += len(line)

    # snapshots

    def _write_snapshot(self, version, text):
        path = self.snapshot_path(version)
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            descriptor, temporary = tempfile.mkstemp(dir=self.directory, prefix='.', suffix='.tmp')
        except OSError as exc:
            raise CheckpointIOError(f'Cannot write to {self.directory}: {exc}') from exc
        try:
            with os.fdopen(descriptor, 'w', encoding='utf-8') as handle:
                handle.write(text)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(temporary, path)
        except OSError as exc:
            Path(temporary).unlink(missing_ok=True)
            raise CheckpointIOError(f'Cannot write snapshot {path}: {exc}') from exc
        return path.name

    def _read_snapshot(self, entry):
        path = self.directory / entry.snapshot
        try:
            return path.read_text(encoding='utf-8')
        except OSError as exc:
            raise CheckpointIOError(f'Cannot read snapshot {path}: {exc}') from exc

    def _entry(self, entries, version):
        version = VersionId.parse(version)
        for entry in entries:
            if entry.version == version:
                return entry
        raise UnknownVersionError(f'Version {version} is not in {self.index_path}')

    # public API

    def history(self):
        """Every version in journal order, which lists parents before children."""
        return self._read_journal()

    @property
    def active(self):
        """Version the next commit continues from, ``None`` for an empty store."""
        entries = self._read_journal()
        return entries[-1].version if entries else None

    def commit(self, model, op_label):
        """Snapshot ``model`` as the child of the active version."""
        entries = self._read_journal()
        parent = entries[-1].version if entries else None
        version = ROOT_VERSION if parent is None else parent.next_minor()
        snapshot = self._write_snapshot(version, dumps_model(model))
        self._append(HistoryEntry(version, parent, str(op_label), 'commit', timezone.now().isoformat(), snapshot))
        logger.info(f'Committed version {version} ({op_label})')
        return version

    def load(self, version):
        """Network stored under ``version``."""
        entry = self._entry(self._read_journal(), version)
        return self._load_text(self._read_snapshot(entry), entry)

    def _load_text(self, text, entry):
        try:
            return loads_model(text)
        except (ValueError, serializers.ValidationError) as exc:
            raise CheckpointIOError(f'Snapshot {entry.snapshot} is unreadable: {exc}') from exc

    def rewind(self, target):
        """
        Restore ``target`` and make it active under a new major number.

        The restored snapshot is stored again as ``(newest major + 1).minor``;
        later commits continue from there.
        """
        entries = self._read_journal()
        entry = self._entry(entries, target)
        text = self._read_snapshot(entry)
        model = self._load_text(text, entry)
        major = max(e.version.major for e in entries) + 1
        version = VersionId(major, entry.version.minor)
        snapshot = self._write_snapshot(version, text)
        self._append(HistoryEntry(version, entry.version, f'rewind {entry.version}', 'rewind',
                                  timezone.now().isoformat(), snapshot))
        logger.info(f'Rewound to {entry.version}; active version is now {version}')
        return model, version

    def children(self):
        tree = {}
        for entry in self._read_journal():
            tree.setdefault(entry.parent, []).append(entry)
        return tree

    def render(self):
        """Indented version tree, the active version marked with ``*``."""
        tree = self.children()
        if not tree:
            return ''
        active = self.active
        lines = []

        def walk(entry, depth):
            marker = ' *' if entry.version == active else ''
            lines.append(f"{'  ' * depth}{entry.version}  {entry.op}{marker}")
            for child in tree.get(entry.version, []):
                walk(child, depth + 1)

        for root in tree[None]:
            walk(root, 0)
        return '\n'.join(lines)


def commit(store, model, op_label):
    return store.commit(model, op_label)


def rewind(store, target):
    return store.rewind(target)


def history(store):
    """``(version, parent, op_label)`` triples in topological order."""
    return [(entry.version, entry.parent, entry.op) for entry in store.history()]
