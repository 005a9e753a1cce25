import logging
import struct

import numpy as np
import pytest

from modules.errors import DimensionMismatchError, EmbeddingParseError, InvalidArgumentError, OutOfVocabularyError
from modules.mitigation.embeddings import (
    EmbeddingStore, Neighbor, cosine, load_embeddings, nearest_neighbors, write_embeddings,
)


def text_file(tmp_path, content, name='vectors.txt'):
    path = tmp_path / name
    path.write_text(content, encoding='utf-8')
    return path


def store_of(words, vectors):
    return EmbeddingStore(len(vectors[0]), {w: i for i, w in enumerate(words)}, np.array(vectors, dtype=np.float32))


def encode_binary(words, vectors):
    """word2vec binary layout, written independently of the package."""
    out = bytearray(f"{len(words)} {len(vectors[0])}\n".encode('ascii'))
    for word, vec in zip(words, vectors):
        out += word.encode('utf-8') + b' ' + struct.pack('<%df' % len(vec), *vec) + b'\n'
    return bytes(out)


def scan_neighbors(store, word, k, exclude=()):
    query = store.vector(word)
    sims = [(w, cosine(query, store.vector(w))) for w in store.words if w != word and w not in exclude]
    sims.sort(key=lambda ws: (-ws[1], ws[0]))
    return sims[:k]


# --- Loading ---

def test_load_small_text_file(tmp_path):
    store = load_embeddings(text_file(tmp_path, "2 3\na 1 0 0\nb 0 1 0\n"))
    assert len(store) == 2 and store.dimension == 3
    np.testing.assert_array_equal(store.vector("b"), np.array([0, 1, 0], dtype=np.float32))


def test_limit_keeps_the_first_words(tmp_path):
    path = text_file(tmp_path, "2 3\na 1 0 0\nb 0 1 0\n")
    assert load_embeddings(path, limit=1).words == ["a"]
    assert len(load_embeddings(path, limit=0)) == 0


def test_limit_stops_before_broken_rows(tmp_path):
    path = text_file(tmp_path, "3 2\na 1 0\nb 0 1\nc broken\n")
    assert load_embeddings(path, limit=2).words == ["a", "b"]


def test_duplicate_word_keeps_first_and_warns(tmp_path, caplog):
    path = text_file(tmp_path, "3 2\na 1 0\nb 0 1\na 5 5\n")
    with caplog.at_level(logging.WARNING):
        store = load_embeddings(path)
    assert store.words == ["a", "b"]
    np.testing.assert_array_equal(store.vector("a"), np.array([1, 0], dtype=np.float32))
    assert any("1 duplicate embedding word" in r.getMessage() for r in caplog.records)


def test_rows_past_the_header_count_are_ignored(tmp_path):
    store = load_embeddings(text_file(tmp_path, "1 2\na 1 0\nb 0 1\n"))
    assert store.words == ["a"]


def test_empty_store_from_header_only(tmp_path):
    store = load_embeddings(text_file(tmp_path, "0 4\n"))
    assert len(store) == 0 and store.dimension == 4


@pytest.mark.parametrize("content, line", [
    ("2 3\na 1 0 0\nb 0 1\n", 3),
    ("2\na 1 0\n", 1),
    ("3 2\na 1 0\nb 0 1\n", 4),
    ("1 2\na 1 x\n", 2),
])
def test_parse_errors_carry_the_line(tmp_path, content, line):
    with pytest.raises(EmbeddingParseError) as exc:
        load_embeddings(text_file(tmp_path, content))
    assert exc.value.line == line


def test_non_finite_values_rejected(tmp_path):
    with pytest.raises(EmbeddingParseError):
        load_embeddings(text_file(tmp_path, "1 2\na nan 0\n"))
    with pytest.raises(EmbeddingParseError):
        load_embeddings(text_file(tmp_path, "1 2\na 1e39 0\n"))


def test_binary_matches_independent_encoder(tmp_path):
    rng = np.random.default_rng(4)
    words = [f"w{i}" for i in range(9)] + ["café"]
    vectors = rng.normal(size=(10, 7)).astype(np.float32)
    path = tmp_path / 'vectors.bin'
    path.write_bytes(encode_binary(words, vectors.tolist()))
    store = load_embeddings(path, format="binary")
    assert store.words == words
    for word, vec in zip(words, vectors):
        np.testing.assert_array_equal(store.vector(word), vec)


def test_binary_truncated_record(tmp_path):
    path = tmp_path / 'vectors.bin'
    path.write_bytes(encode_binary(["a", "b"], [[1.0, 2.0], [3.0, 4.0]])[:-5])
    with pytest.raises(EmbeddingParseError):
        load_embeddings(path, format="binary")


def test_text_and_binary_agree_after_writing(tmp_path):
    rng = np.random.default_rng(5)
    store = store_of([f"w{i}" for i in range(12)], rng.normal(size=(12, 5)).tolist())
    write_embeddings(store, tmp_path / 'v.txt')
    write_embeddings(store, tmp_path / 'v.bin', binary=True)
    as_text = load_embeddings(tmp_path / 'v.txt')
    as_binary = load_embeddings(tmp_path / 'v.bin', format="binary")
    for a in store.words:
        for b in store.words:
            assert cosine(as_text.vector(a), as_text.vector(b)) == pytest.approx(
                cosine(as_binary.vector(a), as_binary.vector(b)), abs=1e-6)


def test_unknown_format():
    with pytest.raises(InvalidArgumentError):
        load_embeddings("whatever", format="glove")


# --- cosine ---

def test_cosine_examples():
    v = np.array([0.3, -2.0, 5.0])
    assert cosine(v, v) == pytest.approx(1.0)
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([0, 0], [1, 1]) == 0.0
    with pytest.raises(DimensionMismatchError):
        cosine([1, 0], [1, 0, 0])


def test_cosine_against_extended_precision():
    from fractions import Fraction
    import math

    rng = np.random.default_rng(6)
    for _ in range(100):
        a, b = rng.normal(size=8), rng.normal(size=8)
        dot = sum(Fraction(x) * Fraction(y) for x, y in zip(a, b))
        na = sum(Fraction(x) ** 2 for x in a)
        nb = sum(Fraction(y) ** 2 for y in b)
        exact = float(dot) / math.sqrt(float(na) * float(nb))
        assert cosine(a, b) == pytest.approx(exact, abs=1e-6)


# --- nearest_neighbors ---

def test_duplicate_vector_is_the_nearest():
    store = store_of(["a", "b", "c"], [[1, 2, 3], [1, 2, 3], [-3, 0, 1]])
    result = nearest_neighbors(store, "a", 1)
    assert result == [Neighbor("b", pytest.approx(1.0))]


def test_k_larger_than_vocabulary():
    store = store_of(["a", "b", "c"], [[1, 0], [0, 1], [1, 1]])
    assert [n.word for n in nearest_neighbors(store, "a", 10)] == ["c", "b"]


def test_exclude_and_errors():
    store = store_of(["a", "b", "c"], [[1, 0], [0, 1], [1, 1]])
    assert [n.word for n in nearest_neighbors(store, "a", 10, exclude={"c"})] == ["b"]
    with pytest.raises(OutOfVocabularyError):
        nearest_neighbors(store, "zzz", 1)
    with pytest.raises(KeyError):
        nearest_neighbors(store, "zzz", 1)
    with pytest.raises(InvalidArgumentError):
        nearest_neighbors(store, "a", 0)


@pytest.mark.parametrize("k", [1, 5, 10])
def test_neighbors_match_full_scan_with_ties(k):
    rng = np.random.default_rng(k)
    base = rng.normal(size=(120, 6))
    vectors = np.vstack([base, base[:80]])  # 80 exact duplicates create ties
    words = [f"word{i:03d}" for i in range(200)]
    rng.shuffle(words)
    store = store_of(words, vectors.tolist())
    for query in words[:40]:
        got = nearest_neighbors(store, query, k)
        want = scan_neighbors(store, query, k)
        assert [n.word for n in got] == [w for w, _ in want]
        for n, (_, sim) in zip(got, want):
            assert n.similarity == pytest.approx(sim, abs=1e-9)


def test_rankings_survive_uniform_scaling():
    rng = np.random.default_rng(9)
    vectors = rng.normal(size=(50, 10))
    words = [f"w{i}" for i in range(50)]
    plain, scaled = store_of(words, vectors.tolist()), store_of(words, (vectors * 2.0).tolist())
    for query in words[:10]:
        assert [n.word for n in nearest_neighbors(plain, query, 8)] == \
               [n.word for n in nearest_neighbors(scaled, query, 8)]


def test_phrase_lookup_uses_underscores():
    store = store_of(["new_york", "paris"], [[1, 0], [0, 1]])
    assert store.resolve("new york") == "new_york"
    assert store.resolve("paris") == "paris"
    assert store.resolve("london") is None
