"""Standalone reader for .oxdr recording files.

Implements the published file format document only; it shares no code
with the recording toolkit, which is the point: if both sides agree on
every golden fixture, the format itself is the interface.
"""

from .reading import (
    MalformedRecord,
    ReaderDevice,
    ReaderError,
    ReaderFeature,
    ReaderMetadata,
    ReaderRecord,
    ReaderSnapshot,
    Truncated,
    UnknownKind,
    iter_records,
    read_recording,
    validate_sequence,
)
from .tabular import Selector, SelectionError, Table, to_table, write_csv

__version__ = "0.1.0"
