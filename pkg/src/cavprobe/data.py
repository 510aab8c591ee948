"""Embedding records, datasets, and their on-disk formats.

Embeddings and metadata live in separate files joined on ``id``:

* embeddings: CSV (``id,v0,...``), JSONL (``{"id": ..., "vector": [...]}``)
  or the ``CAVE`` binary container;
* metadata: CSV with header ``id,genre,gender,language``; an empty field
  means the attribute is absent.

Vectors are held as float64 regardless of the on-disk precision.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyDataset,
    IoFailure,
    MalformedFile,
    NonFiniteValue,
)

logger = logging.getLogger(__name__)

FORMATS = ("csv", "jsonl", "binary")
ATTRIBUTES = ("genre", "gender", "language")
METADATA_HEADER = ["id", "genre", "gender", "language"]

BINARY_MAGIC = b"CAVE"
BINARY_VERSION = 1
_BIN_HEADER = struct.Struct("<4sBIQ")
_BIN_IDLEN = struct.Struct("<H")


class DroppedRecordsWarning(UserWarning):
    """Embedding records were dropped because no metadata row matched."""


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    id: str
    vector: np.ndarray
    genre: str
    gender: str | None = None
    language: str | None = None

    def attribute(self, name: str) -> str | None:
        if name not in ATTRIBUTES:
            raise KeyError(f"unknown attribute {name!r}")
        return getattr(self, name)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.genre == other.genre
            and self.gender == other.gender
            and self.language == other.language
            and np.array_equal(self.vector, other.vector)
        )

    __hash__ = None


@dataclass(frozen=True)
class Metadata:
    genre: str
    gender: str | None = None
    language: str | None = None


class Dataset:
    """Validated, immutable collection of embedding records.

    Construction checks every invariant (shared dimension, finite entries,
    unique ids, nonempty) and raises a typed error otherwise.
    """

    def __init__(self, records: Iterable[EmbeddingRecord], dimension: int | None = None):
        records = list(records)
        if not records:
            raise EmptyDataset("dataset has no records")
        if dimension is None:
            dimension = len(records[0].vector)
        if dimension < 1:
            raise DimensionMismatch("dimension must be at least 1")

        matrix = np.empty((len(records), dimension), dtype=np.float64)
        seen: dict[str, int] = {}
        for i, rec in enumerate(records):
            vec = np.asarray(rec.vector, dtype=np.float64)
            if vec.ndim != 1 or vec.shape[0] != dimension:
                raise DimensionMismatch(
                    f"record {rec.id!r} has length {vec.size}, expected {dimension}"
                )
            bad = np.flatnonzero(~np.isfinite(vec))
            if bad.size:
                raise NonFiniteValue(
                    f"record {rec.id!r} has a non-finite value at index {int(bad[0])}"
                )
            if rec.id in seen:
                raise DuplicateId(f"duplicate id {rec.id!r}")
            seen[rec.id] = i
            matrix[i] = vec
        matrix.setflags(write=False)

        self._dimension = int(dimension)
        self._matrix = matrix
        self._index = seen
        self._records = tuple(
            EmbeddingRecord(r.id, matrix[i], r.genre, r.gender, r.language)
            for i, r in enumerate(records)
        )
        vocab: dict[str, frozenset[str]] = {}
        for attr in ATTRIBUTES:
            vocab[attr] = frozenset(
                v for v in (getattr(r, attr) for r in self._records) if v is not None
            )
        self._vocab = vocab

    @classmethod
    def from_arrays(cls, ids: Sequence[str], matrix, genres: Sequence[str],
                    genders: Sequence[str | None] | None = None,
                    languages: Sequence[str | None] | None = None) -> "Dataset":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise DimensionMismatch("matrix must be two-dimensional")
        n = matrix.shape[0]
        genders = genders if genders is not None else [None] * n
        languages = languages if languages is not None else [None] * n
        if not (len(ids) == len(genres) == len(genders) == len(languages) == n):
            raise DimensionMismatch("ids, metadata columns and matrix rows differ in length")
        return cls(
            (EmbeddingRecord(str(ids[i]), matrix[i], genres[i], genders[i], languages[i])
             for i in range(n)),
            dimension=matrix.shape[1],
        )

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def records(self) -> tuple[EmbeddingRecord, ...]:
        return self._records

    @property
    def attribute_vocabulary(self) -> dict[str, frozenset[str]]:
        return dict(self._vocab)

    @property
    def matrix(self) -> np.ndarray:
        """Read-only ``(n, dimension)`` float64 view of all vectors."""
        return self._matrix

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self._records]

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __contains__(self, record_id):
        return record_id in self._index

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self._dimension == other._dimension and self._records == other._records

    __hash__ = None

    def get(self, record_id: str) -> EmbeddingRecord:
        return self._records[self._index[record_id]]

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        """Vectors for ``ids`` stacked in the given order."""
        return self._matrix[[self._index[i] for i in ids]]

    def fingerprint(self) -> str:
        """SHA-256 over ids, metadata and the float64 vector bytes."""
        h = hashlib.sha256()
        h.update(struct.pack("<Q", self._dimension))
        for rec in self._records:
            for value in (rec.id, rec.genre, rec.gender, rec.language):
                token = b"\x00" if value is None else b"\x01" + value.encode("utf-8")
                h.update(struct.pack("<I", len(token)) + token)
        h.update(np.ascontiguousarray(self._matrix, dtype="<f8").tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# reading

def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _decode_text(data: bytes, path) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFile("file is not valid UTF-8", path, exc.start) from exc


def _parse_float(token: str, path, line: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise MalformedFile(f"cannot parse {token!r} as a number", path, line) from None


def _check_vector(rid: str, vec: np.ndarray, dimension: int | None) -> None:
    if dimension is not None and vec.shape[0] != dimension:
        raise DimensionMismatch(
            f"record {rid!r} has length {vec.shape[0]}, expected {dimension}"
        )
    bad = np.flatnonzero(~np.isfinite(vec))
    if bad.size:
        raise NonFiniteValue(f"record {rid!r} has a non-finite value at index {int(bad[0])}")


def read_csv_embeddings(path) -> list[tuple[str, np.ndarray]]:
    text = _decode_text(_read_bytes(path), path)
    reader = csv.reader(io.StringIO(text, newline=""))
    out = []
    try:
        header = next(reader, None)
        if header is None:
            raise MalformedFile("missing header", path, 1)
        if len(header) < 2 or header[0] != "id":
            raise MalformedFile("header must be id,v0,v1,...", path, 1)
        expected = [f"v{i}" for i in range(len(header) - 1)]
        if header[1:] != expected:
            raise MalformedFile("header must be id,v0,v1,...", path, 1)
        dimension = len(header) - 1
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            rid = row[0]
            if rid == "":
                raise MalformedFile("empty id", path, line)
            if len(row) - 1 != dimension:
                raise DimensionMismatch(
                    f"record {rid!r} has length {len(row) - 1}, expected {dimension} (line {line})"
                )
            vec = np.array([_parse_float(t, path, line) for t in row[1:]], dtype=np.float64)
            _check_vector(rid, vec, dimension)
            out.append((rid, vec))
    except csv.Error as exc:
        raise MalformedFile(f"CSV syntax error: {exc}", path, reader.line_num) from exc
    return out


def read_jsonl_embeddings(path) -> list[tuple[str, np.ndarray]]:
    text = _decode_text(_read_bytes(path), path)
    out = []
    dimension = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except (json.JSONDecodeError, RecursionError) as exc:
            raise MalformedFile(f"invalid JSON: {exc}", path, lineno) from None
        if not isinstance(obj, dict) or "id" not in obj or "vector" not in obj:
            raise MalformedFile('expected an object with "id" and "vector"', path, lineno)
        rid, raw = obj["id"], obj["vector"]
        if not isinstance(rid, str) or rid == "":
            raise MalformedFile('"id" must be a nonempty string', path, lineno)
        if not isinstance(raw, list) or not raw:
            raise MalformedFile('"vector" must be a nonempty list', path, lineno)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
            raise MalformedFile('"vector" entries must be numbers', path, lineno)
        try:
            vec = np.array(raw, dtype=np.float64)
        except OverflowError:
            raise MalformedFile("number out of range", path, lineno) from None
        if dimension is None:
            dimension = vec.shape[0]
        _check_vector(rid, vec, dimension)
        out.append((rid, vec))
    return out


def read_binary_embeddings(path) -> list[tuple[str, np.ndarray]]:
    data = _read_bytes(path)
    if len(data) < _BIN_HEADER.size:
        raise MalformedFile("truncated header", path, len(data))
    magic, version, dimension, count = _BIN_HEADER.unpack_from(data, 0)
    if magic != BINARY_MAGIC:
        raise MalformedFile("bad magic bytes", path, 0)
    if version != BINARY_VERSION:
        raise MalformedFile(f"unsupported version {version}", path, 4)
    if dimension < 1:
        raise MalformedFile("dimension must be at least 1", path, 5)
    pos = _BIN_HEADER.size
    vec_bytes = 4 * dimension
    out = []
    for _ in range(count):
        if pos + _BIN_IDLEN.size > len(data):
            raise MalformedFile("truncated record", path, pos)
        (idlen,) = _BIN_IDLEN.unpack_from(data, pos)
        pos += _BIN_IDLEN.size
        if idlen == 0:
            raise MalformedFile("empty id", path, pos - _BIN_IDLEN.size)
        if pos + idlen + vec_bytes > len(data):
            raise MalformedFile("truncated record", path, pos)
        try:
            rid = data[pos:pos + idlen].decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedFile("id is not valid UTF-8", path, pos) from None
        pos += idlen
        vec = np.frombuffer(data, dtype="<f4", count=dimension, offset=pos).astype(np.float64)
        pos += vec_bytes
        _check_vector(rid, vec, dimension)
        out.append((rid, vec))
    if pos != len(data):
        raise MalformedFile("trailing bytes after last record", path, pos)
    return out


_READERS = {
    "csv": read_csv_embeddings,
    "jsonl": read_jsonl_embeddings,
    "binary": read_binary_embeddings,
}


def read_metadata(path) -> dict[str, Metadata]:
    text = _decode_text(_read_bytes(path), path)
    reader = csv.reader(io.StringIO(text, newline=""))
    out: dict[str, Metadata] = {}
    try:
        header = next(reader, None)
        if header != METADATA_HEADER:
            raise MalformedFile("metadata header must be id,genre,gender,language", path, 1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise MalformedFile(f"expected 4 fields, got {len(row)}", path, line)
            rid, genre, gender, language = row
            if rid == "":
                raise MalformedFile("empty id", path, line)
            if genre == "":
                raise MalformedFile(f"record {rid!r} has no genre", path, line)
            if rid in out:
                raise DuplicateId(f"duplicate metadata id {rid!r} (line {line})")
            out[rid] = Metadata(genre, gender or None, language or None)
    except csv.Error as exc:
        raise MalformedFile(f"CSV syntax error: {exc}", path, reader.line_num) from exc
    return out


def ingest(path, format: str, metadata_path) -> Dataset:
    """Read an embedding file and its metadata into a validated Dataset.

    Embedding records with no metadata row are dropped; the number dropped
    is reported through a :class:`DroppedRecordsWarning`.
    """
    if format not in _READERS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    rows = _READERS[format](path)
    if not rows:
        raise EmptyDataset(f"{path}: no embedding records")
    meta = read_metadata(metadata_path)

    seen = set()
    records = []
    dropped = 0
    for rid, vec in rows:
        if rid in seen:
            raise DuplicateId(f"duplicate embedding id {rid!r}")
        seen.add(rid)
        m = meta.get(rid)
        if m is None:
            dropped += 1
            continue
        records.append(EmbeddingRecord(rid, vec, m.genre, m.gender, m.language))
    if dropped:
        msg = f"{dropped} embedding record(s) without metadata were dropped"
        logger.warning(msg)
        warnings.warn(msg, DroppedRecordsWarning, stacklevel=2)
    if not records:
        raise EmptyDataset("no embedding record has a metadata row")
    return Dataset(records, dimension=rows[0][1].shape[0])


# ---------------------------------------------------------------------------
# writing

def _write(path, payload: bytes) -> None:
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _encode_csv(ds: Dataset) -> bytes:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id"] + [f"v{i}" for i in range(ds.dimension)])
    for rec in ds.records:
        writer.writerow([rec.id] + [repr(float(v)) for v in rec.vector])
    return buf.getvalue().encode("utf-8")


def _encode_jsonl(ds: Dataset) -> bytes:
    lines = [
        json.dumps({"id": rec.id, "vector": [float(v) for v in rec.vector]}, allow_nan=False)
        for rec in ds.records
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _encode_binary(ds: Dataset) -> bytes:
    with np.errstate(over="ignore"):
        single = ds.matrix.astype("<f4")
    if not np.all(np.isfinite(single)):
        raise NonFiniteValue("vector values overflow 32-bit floats")
    parts = [_BIN_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, ds.dimension, len(ds))]
    for i, rec in enumerate(ds.records):
        rid = rec.id.encode("utf-8")
        if len(rid) > 0xFFFF:
            raise MalformedFile(f"id {rec.id[:20]!r}... longer than 65535 bytes")
        parts.append(_BIN_IDLEN.pack(len(rid)))
        parts.append(rid)
        parts.append(single[i].tobytes())
    return b"".join(parts)


_ENCODERS = {"csv": _encode_csv, "jsonl": _encode_jsonl, "binary": _encode_binary}


def export_metadata(ds: Dataset, path) -> None:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METADATA_HEADER)
    for rec in ds.records:
        writer.writerow([rec.id, rec.genre, rec.gender or "", rec.language or ""])
    _write(path, buf.getvalue().encode("utf-8"))


def export_dataset(ds: Dataset, path, format: str, metadata_path=None) -> None:
    """Write ``ds`` in ``format``; also write the metadata CSV if a path is given.

    Binary output stores 32-bit floats, so it is bit-exact only for vectors
    that are representable in single precision.
    """
    if format not in _ENCODERS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    _write(path, _ENCODERS[format](ds))
    if metadata_path is not None:
        export_metadata(ds, metadata_path)


def guess_format(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix in (".jsonl", ".ndjson"):
        return "jsonl"
    return "binary"
