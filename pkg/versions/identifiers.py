import re
from dataclasses import dataclass
from typing import Optional

from kanscope.exceptions import UnknownVersionError

VERSION_PATTERN = re.compile(r'^(\d+)\.(\d+)$')


@dataclass(frozen=True, order=True)
class VersionId:
    """
    Checkpoint label ``major.minor``.

    ``minor`` counts mutating operations along one line of work; ``major``
    counts rewinds.
    """

    major: int
    minor: int

    @classmethod
    def parse(cls, text):
        if isinstance(text, VersionId):
            return text
        match = VERSION_PATTERN.match(str(text).strip())
        if not match:
            raise UnknownVersionError(f"'{text}' is not a version of the form major.minor")
        return cls(int(match.group(1)), int(match.group(2)))

    def next_minor(self):
        return VersionId(self.major, self.minor + 1)

    def __str__(self):
        return f'{self.major}.{self.minor}'


@dataclass(frozen=True)
class HistoryEntry:
    version: VersionId
    parent: Optional[VersionId]
    op: str
    event: str = 'commit'
    timestamp: str = ''
    snapshot: str = ''
