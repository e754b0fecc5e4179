import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covr.embeddings import (
    MAX_LEN,
    VOCAB_SIZE,
    EmbeddingStore,
    decode_embedding_store,
    embed_text,
    encode_embedding_store,
    load_embedding_store,
    middle_frame_select,
    normalize,
    tokenize,
    toy_embed_text,
    write_embedding_store,
)
from covr.errors import FormatError, InputError, ShapeError


def fnv1a(data: bytes) -> int:
    h = 14695981039346656037
    for b in data:
        h = ((h ^ b) * 1099511628211) % 2**64
    return h


def pack_store(dim, records, count=None, version=1, magic=b"CVRE"):
    """Independent CVRE writer used to build fixtures."""
    out = magic + struct.pack("<IIQ", version, dim, len(records) if count is None else count)
    for key, vec in records:
        raw = key.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw + struct.pack(f"<{len(vec)}f", *vec)
    return out


def random_store(rng, n, dim):
    return EmbeddingStore(dim, {f"v{i:05d}": rng.standard_normal(dim) for i in range(n)})


class TestTokenize:
    def test_hand_example(self):
        seq = tokenize("Add a tree", 77)
        h = [fnv1a(w.encode()) % (VOCAB_SIZE - 1) + 1 for w in ("add", "a", "tree")]
        assert seq.tokens == (0, *h)
        assert seq.tokens == (0, 38315, 65087, 6346)

    def test_empty_text_is_pool_only(self):
        assert tokenize("").tokens == (0,)

    def test_truncation(self):
        text = " ".join(f"w{i}" for i in range(100))
        assert len(tokenize(text, 8)) == 8

    def test_punctuation_and_case(self):
        assert tokenize("Hello, WORLD!").tokens == tokenize("hello world").tokens

    def test_pure_punctuation_words_vanish(self):
        assert tokenize("-- ... !!").tokens == (0,)

    def test_unicode_whitespace(self):
        assert tokenize("snow　fall day").tokens == tokenize("snow fall day").tokens

    def test_ids_below_vocab(self):
        seq = tokenize("one two three four five six", vocab=7)
        assert all(0 <= t < 7 for t in seq.tokens)
        assert all(t >= 1 for t in seq.tokens[1:])

    def test_default_max_len(self):
        assert len(tokenize("x " * 500)) == MAX_LEN

    def test_invalid_max_len(self):
        with pytest.raises(InputError):
            tokenize("a", 0)


class TestToyEmbedder:
    def test_deterministic(self):
        seq = tokenize("a dog runs on the beach")
        assert toy_embed_text(seq, 64, 7).tobytes() == toy_embed_text(seq, 64, 7).tobytes()

    @pytest.mark.parametrize("text", ["", "one", "a dog runs on the beach", "x " * 200])
    def test_unit_norm(self, text):
        assert abs(np.linalg.norm(embed_text(text, 32)) - 1.0) < 1e-6

    def test_disjoint_texts_are_far_apart(self):
        a = embed_text("the red car drives fast", 256, 42)
        b = embed_text("snowy mountain river at dawn", 256, 42)
        cos = float(a @ b)
        assert abs(cos) < 0.5
        assert cos == pytest.approx(0.013992949994959591, abs=1e-12)

    def test_seed_changes_output(self):
        assert not np.allclose(embed_text("dog", 16, 1), embed_text("dog", 16, 2))

    def test_dim_too_small(self):
        with pytest.raises(InputError):
            embed_text("dog", 1)


class TestMiddleFrame:
    @pytest.mark.parametrize("n, expected", [(15, 7), (1, 0), (4, 2)])
    def test_index(self, n, expected):
        frames = [np.full(3, float(i)) for i in range(n)]
        assert middle_frame_select(frames)[0] == expected

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 100))
    def test_floor_half(self, n):
        frames = [np.full(2, float(i)) for i in range(n)]
        assert middle_frame_select(frames) is frames[n // 2]

    def test_empty(self):
        with pytest.raises(InputError):
            middle_frame_select([])

    def test_mixed_dims(self):
        with pytest.raises(ShapeError):
            middle_frame_select([np.zeros(2), np.zeros(3)])


def test_normalize_rejects_zero():
    with pytest.raises(InputError):
        normalize(np.zeros(3))


class TestStore:
    def test_sorted_and_float32(self, rng):
        store = EmbeddingStore(2, {"b": [0.0, 1.0], "a": [1.0, 0.0]})
        assert store.ids == ["a", "b"]
        assert store.vectors.dtype == np.float32
        np.testing.assert_array_equal(store.get("b"), [0.0, 1.0])

    def test_read_only(self):
        store = EmbeddingStore(2, {"a": [1.0, 0.0]})
        with pytest.raises(ValueError):
            store.vectors[0, 0] = 5.0

    def test_duplicate_ids(self):
        with pytest.raises(InputError):
            EmbeddingStore(2, [("a", [1.0, 0.0]), ("a", [0.0, 1.0])])

    def test_wrong_dim(self):
        with pytest.raises(ShapeError):
            EmbeddingStore(3, {"a": [1.0, 0.0]})

    def test_encoding_matches_independent_writer(self):
        recs = [("a", [1.0, 0.5]), ("é", [-2.0, 0.25])]
        assert encode_embedding_store(EmbeddingStore(2, dict(recs))) == pack_store(2, recs)

    @pytest.mark.parametrize("n", [0, 1, 37, 10_000])
    def test_round_trip_is_bitwise(self, tmp_path, rng, n):
        store = random_store(rng, n, 8)
        path = tmp_path / "s.cvre"
        write_embedding_store(store, path)
        loaded = load_embedding_store(path)
        assert loaded == store
        assert encode_embedding_store(loaded) == path.read_bytes()

    def test_vectors_are_not_renormalized(self):
        loaded = decode_embedding_store(pack_store(2, [("a", [3.0, 4.0])]))
        np.testing.assert_array_equal(loaded.get("a"), [3.0, 4.0])


class TestCorruptStores:
    def test_bad_magic(self):
        with pytest.raises(FormatError, match="offset 0"):
            decode_embedding_store(pack_store(2, [], magic=b"CVRX"))

    def test_bad_version(self):
        with pytest.raises(FormatError, match="version.*offset 4"):
            decode_embedding_store(pack_store(2, [], version=2))

    def test_truncated_vector(self):
        good = pack_store(64, [("a", [0.0] * 64)])
        with pytest.raises(FormatError, match="truncated.*offset 25"):
            decode_embedding_store(good[:-4])

    def test_short_record_from_wrong_float_count(self):
        buf = pack_store(64, [("a", [0.0] * 63)])
        with pytest.raises(FormatError, match="truncated"):
            decode_embedding_store(buf)

    def test_duplicate_id(self):
        buf = pack_store(1, [("a", [1.0]), ("a", [2.0])])
        with pytest.raises(FormatError, match="duplicate id 'a'.*offset 29"):
            decode_embedding_store(buf)

    def test_unsorted_ids(self):
        with pytest.raises(FormatError, match="ascending"):
            decode_embedding_store(pack_store(1, [("b", [1.0]), ("a", [2.0])]))

    def test_count_exceeds_records(self):
        with pytest.raises(FormatError, match="truncated record 1"):
            decode_embedding_store(pack_store(1, [("a", [1.0])], count=2))

    def test_trailing_bytes(self):
        with pytest.raises(FormatError, match="trailing"):
            decode_embedding_store(pack_store(1, [("a", [1.0])]) + b"\0")

    def test_invalid_utf8(self):
        buf = b"CVRE" + struct.pack("<IIQ", 1, 1, 1) + struct.pack("<I", 1) + b"\xff" + struct.pack("<f", 1.0)
        with pytest.raises(FormatError, match="UTF-8"):
            decode_embedding_store(buf)

    def test_format_error_is_data_error(self):
        from covr.errors import DataError
        assert issubclass(FormatError, DataError)
        assert FormatError("x", 0).exit_code == 3
