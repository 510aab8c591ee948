import struct
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from cavprobe.data import (
    Dataset,
    DroppedRecordsWarning,
    EmbeddingRecord,
    export_dataset,
    export_metadata,
    guess_format,
    ingest,
    read_binary_embeddings,
    read_metadata,
)
from cavprobe.errors import (
    CavprobeError,
    DimensionMismatch,
    DuplicateId,
    EmptyDataset,
    IoFailure,
    MalformedFile,
    NonFiniteValue,
)
from conftest import make_dataset


def random_dataset(seed=0, n=12, dim=5, single=False):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, dim)) * 10.0 ** rng.integers(-8, 8, size=(n, dim))
    if single:
        M = M.astype(np.float32).astype(np.float64)
    genres = [("rock", "jazz", "pop")[i % 3] for i in range(n)]
    genders = [("female", "male", None)[i % 3] for i in range(n)]
    languages = [("en", None, "pt", "fr")[i % 4] for i in range(n)]
    ids = [f"t{i:03d}-ü" for i in range(n)]
    return Dataset.from_arrays(ids, M, genres, genders, languages)


def test_dataset_validation():
    v = np.zeros(3)
    with pytest.raises(EmptyDataset):
        Dataset([])
    with pytest.raises(DuplicateId):
        Dataset([EmbeddingRecord("a", v, "g"), EmbeddingRecord("a", v, "g")])
    with pytest.raises(DimensionMismatch):
        Dataset([EmbeddingRecord("a", v, "g"), EmbeddingRecord("b", np.zeros(4), "g")])
    with pytest.raises(NonFiniteValue):
        Dataset([EmbeddingRecord("a", np.array([0.0, np.nan]), "g")])
    with pytest.raises(DimensionMismatch):
        Dataset([EmbeddingRecord("a", v, "g")], dimension=2)


def test_dataset_accessors(small_dataset):
    ds = small_dataset
    assert ds.dimension == 4 and len(ds) == 120
    assert ds.attribute_vocabulary["genre"] == {"rock", "jazz"}
    first = ds.records[0]
    np.testing.assert_array_equal(ds.get(first.id).vector, first.vector)
    assert first.id in ds and "nope" not in ds
    with pytest.raises(ValueError):
        ds.matrix[0, 0] = 1.0


def test_fingerprint_sensitive_to_content():
    a = make_dataset({("rock", "female"): 3}, seed=1)
    b = make_dataset({("rock", "female"): 3}, seed=1)
    c = make_dataset({("rock", "female"): 3}, seed=2)
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_binary_round_trip_bit_exact(tmp_path):
    ds = random_dataset(single=True)
    export_dataset(ds, tmp_path / "d.cave", "binary", tmp_path / "m.csv")
    back = ingest(tmp_path / "d.cave", "binary", tmp_path / "m.csv")
    assert back == ds
    assert back.matrix.tobytes() == ds.matrix.tobytes()


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_text_round_trips(tmp_path, fmt):
    ds = random_dataset()
    path = tmp_path / f"d.{fmt}"
    export_dataset(ds, path, fmt, tmp_path / "m.csv")
    back = ingest(path, fmt, tmp_path / "m.csv")
    assert back.ids == ds.ids
    np.testing.assert_allclose(back.matrix, ds.matrix, rtol=1e-12, atol=0)
    for a, b in zip(back.records, ds.records):
        assert (a.genre, a.gender, a.language) == (b.genre, b.gender, b.language)


def test_binary_overflow_rejected(tmp_path):
    ds = Dataset([EmbeddingRecord("a", np.array([1e300]), "g")])
    with pytest.raises(NonFiniteValue):
        export_dataset(ds, tmp_path / "d.cave", "binary")


def test_binary_header_layout(tmp_path):
    ds = random_dataset(n=2, dim=3, single=True)
    export_dataset(ds, tmp_path / "d.cave", "binary")
    raw = (tmp_path / "d.cave").read_bytes()
    assert struct.unpack_from("<4sBIQ", raw) == (b"CAVE", 1, 3, 2)


def test_ingest_drops_records_without_metadata(tmp_path):
    ds = random_dataset(n=6)
    export_dataset(ds, tmp_path / "d.csv", "csv")
    sub = Dataset(ds.records[:4])
    export_metadata(sub, tmp_path / "m.csv")
    with pytest.warns(DroppedRecordsWarning, match="2 embedding record"):
        back = ingest(tmp_path / "d.csv", "csv", tmp_path / "m.csv")
    assert back.ids == sub.ids


def test_ingest_without_any_metadata_match(tmp_path):
    ds = random_dataset(n=3)
    export_dataset(ds, tmp_path / "d.csv", "csv")
    (tmp_path / "m.csv").write_text("id,genre,gender,language\nzzz,rock,,\n")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(EmptyDataset):
            ingest(tmp_path / "d.csv", "csv", tmp_path / "m.csv")


def test_metadata_errors(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("id,genre\na,rock\n")
    with pytest.raises(MalformedFile):
        read_metadata(p)
    p.write_text("id,genre,gender,language\na,,female,\n")
    with pytest.raises(MalformedFile):
        read_metadata(p)
    p.write_text("id,genre,gender,language\na,rock,,\na,jazz,,\n")
    with pytest.raises(DuplicateId):
        read_metadata(p)


def test_missing_file_is_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        read_binary_embeddings(tmp_path / "absent.cave")


def test_malformed_offset_reported(tmp_path):
    p = tmp_path / "d.cave"
    p.write_bytes(b"XXXX" + bytes(13))
    with pytest.raises(MalformedFile) as info:
        read_binary_embeddings(p)
    assert info.value.offset == 0


def test_guess_format():
    assert guess_format("a.csv") == "csv"
    assert guess_format("a.JSONL") == "jsonl"
    assert guess_format("a.cave") == "binary"


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.sampled_from(["csv", "jsonl", "binary"]), st.data())
def test_random_byte_damage_never_crashes(tmp_path, fmt, data):
    ds = random_dataset(n=4, dim=3, single=True)
    path = tmp_path / f"d.{fmt}"
    export_dataset(ds, path, fmt, tmp_path / "m.csv")
    raw = bytearray(path.read_bytes())
    for _ in range(data.draw(st.integers(1, 4))):
        i = data.draw(st.integers(0, len(raw) - 1))
        raw[i] = data.draw(st.integers(0, 255))
    if data.draw(st.booleans()):
        raw = raw[: data.draw(st.integers(0, len(raw)))]
    path.write_bytes(bytes(raw))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            ingest(path, fmt, tmp_path / "m.csv")
        except CavprobeError:
            pass
