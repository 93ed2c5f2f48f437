import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compresskit.errors import (
    BlobLengthMismatchError,
    MalformedManifestError,
    ShapeError,
    StoreError,
    TruncatedBlobError,
    TruncatedHeaderError,
    UnsupportedDtypeError,
)
from compresskit.weightstore import (
    Entry,
    WeightStore,
    decode_store,
    encode_store,
    load_store,
    save_store,
    serialized_size,
    tensor_stats,
)
from conftest import random_store


def _raw(manifest: dict, blob: bytes) -> bytes:
    m = json.dumps(manifest).encode()
    return struct.pack("<Q", len(m)) + m + blob


def test_single_tensor_byte_count(tmp_path):
    store = WeightStore([("w", np.array([[1, 0], [0, 1]], np.float32))])
    n = save_store(store, tmp_path / "a.wstore")
    raw = (tmp_path / "a.wstore").read_bytes()
    (mlen,) = struct.unpack_from("<Q", raw)
    assert n == len(raw) == 8 + mlen + 16
    assert raw[8 + mlen:] == np.array([1, 0, 0, 1], "<f4").tobytes()
    manifest = json.loads(raw[8:8 + mlen])
    assert manifest == {
        "entries": [{"name": "w", "shape": [2, 2], "dtype": "f32", "role": "other",
                     "offset": 0, "nbytes": 16}],
        "metadata": {},
    }
    assert load_store(tmp_path / "a.wstore") == store


def test_empty_store_round_trip(tmp_path):
    n = save_store(WeightStore(), tmp_path / "e.wstore")
    raw = (tmp_path / "e.wstore").read_bytes()
    (mlen,) = struct.unpack_from("<Q", raw)
    assert n == 8 + mlen
    assert len(load_store(tmp_path / "e.wstore")) == 0


def test_entries_are_packed_in_manifest_order(rng):
    store = random_store(rng, 6)
    raw = encode_store(store)
    (mlen,) = struct.unpack_from("<Q", raw)
    manifest = json.loads(raw[8:8 + mlen])
    off = 0
    for rec, e in zip(manifest["entries"], store):
        assert rec["offset"] == off and rec["nbytes"] == 4 * e.numel
        assert raw[8 + mlen + off:8 + mlen + off + rec["nbytes"]] == e.tensor.astype("<f4").tobytes()
        off += rec["nbytes"]
    assert len(raw) == 8 + mlen + off == serialized_size(store)


def test_round_trip_100_random_stores(rng):
    for _ in range(100):
        s = random_store(rng, int(rng.integers(0, 8)))
        assert decode_store(encode_store(s)) == s


def test_round_trip_preserves_signed_zero_and_nonfinite():
    t = np.array([0.0, -0.0, np.nan, np.inf, -np.inf, 1e-45], np.float32)
    s = WeightStore([("x", t)])
    back = decode_store(encode_store(s))
    assert back["x"].tobytes() == t.tobytes()
    st_ = tensor_stats(back["x"])
    assert st_.nonfinite_count == 3


def test_unknown_metadata_keys_preserved():
    raw = _raw({"entries": [], "metadata": {"zzz": "1", "aaa": "2"}}, b"")
    s = decode_store(raw)
    assert list(s.metadata.items()) == [("zzz", "1"), ("aaa", "2")]


def test_truncated_header():
    with pytest.raises(TruncatedHeaderError, match="truncated header"):
        decode_store(b"\x01\x02")
    with pytest.raises(TruncatedHeaderError):
        decode_store(struct.pack("<Q", 100) + b"{}")


def test_truncated_blob():
    good = encode_store(WeightStore([("w", np.ones((2, 2), np.float32))]))
    with pytest.raises(TruncatedBlobError, match="truncated blob"):
        decode_store(good[:-4])


def test_blob_longer_than_manifest():
    good = encode_store(WeightStore([("w", np.ones(3, np.float32))]))
    with pytest.raises(BlobLengthMismatchError):
        decode_store(good + b"\x00\x00\x00\x00")


def test_nbytes_disagreeing_with_shape():
    raw = _raw({"entries": [{"name": "w", "shape": [2], "dtype": "f32", "role": "other",
                             "offset": 0, "nbytes": 4}], "metadata": {}}, b"\x00" * 4)
    with pytest.raises(BlobLengthMismatchError):
        decode_store(raw)


def test_unsupported_dtype():
    raw = _raw({"entries": [{"name": "w", "shape": [1], "dtype": "f64", "role": "other",
                             "offset": 0, "nbytes": 8}], "metadata": {}}, b"\x00" * 8)
    with pytest.raises(UnsupportedDtypeError, match="unsupported dtype"):
        decode_store(raw)


def test_malformed_json():
    with pytest.raises(MalformedManifestError):
        decode_store(struct.pack("<Q", 5) + b"{oops")


def test_error_types_are_distinct():
    kinds = {TruncatedHeaderError, TruncatedBlobError, BlobLengthMismatchError,
             UnsupportedDtypeError, MalformedManifestError}
    for a in kinds:
        for b in kinds - {a}:
            assert not issubclass(a, b)


@pytest.mark.parametrize("name", ["", "a\nb", "tab\there", "nul\x00"])
def test_bad_names_rejected(name):
    with pytest.raises(StoreError):
        WeightStore([(name, np.ones(1))])


def test_duplicate_names_rejected_before_write(tmp_path):
    with pytest.raises(StoreError, match="duplicate"):
        WeightStore([("a", np.ones(1)), ("a", np.ones(2))])


def test_conv_weight_requires_rank4():
    with pytest.raises(ShapeError):
        Entry("w", np.ones((3, 3), np.float32), "conv-weight")
    Entry("w", np.ones((1, 1, 3, 3), np.float32), "conv-weight")


def test_tensors_are_read_only():
    s = WeightStore([("w", np.ones(4, np.float32))])
    with pytest.raises(ValueError):
        s["w"][0] = 2.0


def test_store_equality_is_bitwise():
    a = WeightStore([("w", np.array([0.0], np.float32))])
    b = WeightStore([("w", np.array([-0.0], np.float32))])
    assert a != b


def test_size_monotonic_under_removal(rng):
    for _ in range(50):
        s = random_store(rng, int(rng.integers(1, 8)))
        for name in s.names:
            assert serialized_size(s.without(name)) <= serialized_size(s)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.text(min_size=1, max_size=12).filter(str.isprintable),
                          st.lists(st.floats(width=32, allow_nan=False), min_size=1, max_size=20)),
                max_size=6, unique_by=lambda t: t[0]),
       st.dictionaries(st.text(max_size=8), st.text(max_size=8), max_size=3))
def test_round_trip_property(items, md):
    s = WeightStore([(n, np.array(v, np.float32)) for n, v in items], md)
    assert decode_store(encode_store(s)) == s


# ---------------------------------------------------------------------------

def test_stats_hand_example():
    s = tensor_stats(np.array([0, 0, 3, -4], np.float32))
    assert (s.element_count, s.nonzero_count, s.l1_sum, s.min, s.max) == (4, 2, 7.0, -4.0, 3.0)


def test_stats_all_zero_counts_negative_zero_as_zero():
    s = tensor_stats(np.array([0.0] * 5 + [-0.0] * 5, np.float32))
    assert s.nonzero_count == 0 and s.l1_sum == 0.0 and s.element_count == 10


def test_stats_match_naive_loop(rng):
    t = rng.standard_normal(1000).astype(np.float32)
    t[rng.integers(0, 1000, 100)] = 0.0
    count = nz = 0
    l1 = 0.0
    lo, hi = float("inf"), float("-inf")
    for v in t.tolist():
        count += 1
        nz += v != 0.0
        l1 += abs(v)
        lo, hi = min(lo, v), max(hi, v)
    s = tensor_stats(t)
    assert (s.element_count, s.nonzero_count, s.l1_sum, s.min, s.max) == (count, nz, l1, lo, hi)


def test_stats_l1_additive_over_concatenation(rng):
    for _ in range(20):
        a = rng.standard_normal(int(rng.integers(1, 500))).astype(np.float32)
        b = rng.standard_normal(int(rng.integers(1, 500))).astype(np.float32)
        assert tensor_stats(np.concatenate([a, b])).l1_sum == tensor_stats(a).l1_sum + tensor_stats(b).l1_sum
