# Pre-trained word vectors (word2vec text / binary formats) and exact nearest-neighbour search
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from gensim.models import KeyedVectors

from fairtext import atomic_write_bytes
from modules.errors import (
    DimensionMismatchError, EmbeddingParseError, InvalidArgumentError, OutOfVocabularyError,
)

logger = logging.getLogger(__name__)

FORMATS = ("text", "binary")


@dataclass(frozen=True)
class Neighbor:
    word: str
    similarity: float


@dataclass(frozen=True)
class EmbeddingStore:
    """
    Words and their vectors, one row per word.
    Unit-length copies of the rows are kept so a query is a single matrix-vector product.
    """
    dimension: int
    vocab: dict                 # word -> row
    vectors: np.ndarray         # (len(vocab), dimension), float32
    _words: list = field(init=False, repr=False, compare=False)
    _unit: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float32).reshape(-1, self.dimension) \
            if len(self.vocab) else np.zeros((0, self.dimension), dtype=np.float32)
        if vectors.shape[0] != len(self.vocab):
            raise DimensionMismatchError(f"{len(self.vocab)} words but {vectors.shape[0]} vectors")
        if sorted(self.vocab.values()) != list(range(len(self.vocab))):
            raise DimensionMismatchError("vocab rows must cover 0..n-1 exactly once")
        if not np.all(np.isfinite(vectors)):
            raise EmbeddingParseError("non-finite value in vectors", 0)

        words = [None] * len(self.vocab)
        for word, row in self.vocab.items():
            words[row] = word
        as64 = vectors.astype(np.float64)
        norms = np.linalg.norm(as64, axis=1)
        unit = np.divide(as64, norms[:, None], out=np.zeros_like(as64), where=norms[:, None] > 0)

        object.__setattr__(self, 'vectors', vectors)
        object.__setattr__(self, '_words', words)
        object.__setattr__(self, '_unit', unit)

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, word) -> bool:
        return word in self.vocab

    @property
    def words(self) -> list:
        return list(self._words)

    def vector(self, word: str) -> np.ndarray:
        if word not in self.vocab:
            raise OutOfVocabularyError(word)
        return self.vectors[self.vocab[word]]

    def resolve(self, term: str) -> Optional[str]:
        """The stored word for a lexicon term: the term itself, or its phrase form with underscores."""
        for candidate in (term, term.replace(' ', '_')):
            if candidate in self.vocab:
                return candidate
        return None

    def similarities(self, word: str) -> np.ndarray:
        """Cosine of `word` against every stored word (0.0 against zero vectors)."""
        if word not in self.vocab:
            raise OutOfVocabularyError(word)
        return np.clip(self._unit @ self._unit[self.vocab[word]], -1.0, 1.0)


def cosine(a, b) -> float:
    """dot(a, b) / (|a| |b|); 0.0 when either vector is all zeros."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"cannot compare vectors of shape {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def nearest_neighbors(store: EmbeddingStore, word: str, k: int, exclude: Iterable[str] = ()) -> list:
    """
    The k words most similar to `word` (never `word` itself nor anything in `exclude`),
    best first, equal similarities in alphabetical order. Exact brute-force scan.
    """
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    sims = store.similarities(word)

    mask = np.ones(len(store), dtype=bool)
    mask[store.vocab[word]] = False
    for w in exclude:
        row = store.vocab.get(w)
        if row is not None:
            mask[row] = False
    candidates = np.flatnonzero(mask)

    if len(candidates) > k:
        # Keep everything tied with the k-th best so alphabetical tie-breaking stays exact
        kth = np.partition(sims[candidates], -k)[-k]
        candidates = candidates[sims[candidates] >= kth]

    words = store._words
    ranked = sorted(candidates.tolist(), key=lambda i: (-sims[i], words[i]))[:k]
    return [Neighbor(words[i], float(sims[i])) for i in ranked]


# --- Loading ---

def _read_header(path: Path):
    """The 'V D' header line, checked before the file is handed to gensim."""
    with open(path, 'rb') as f:
        raw = f.readline()
    try:
        line = raw.decode('ascii')
    except UnicodeDecodeError:
        raise EmbeddingParseError("header is not ASCII", 1)
    parts = line.split()
    if len(parts) != 2:
        raise EmbeddingParseError(f"header must be 'V D', got {line.strip()!r}", 1)
    try:
        count, dim = int(parts[0]), int(parts[1])
    except ValueError:
        raise EmbeddingParseError(f"header must hold two integers, got {line.strip()!r}", 1)
    if count < 0 or dim < 1:
        raise EmbeddingParseError(f"bad header sizes V={count} D={dim}", 1)
    return count, dim


def _error_line(error: Exception, path: Path, format: str, count: int) -> int:
    """Best line number for a gensim load failure (text rows are numbered from 2, after the header)."""
    found = re.search(r"on line (\d+)", str(error))
    if found:
        return int(found.group(1)) + 2
    if format == 'binary':
        return count + 1
    with open(path, 'r', encoding='utf-8', errors='replace') as f:
        lines = f.readlines()
    if isinstance(error, EOFError):
        return len(lines) + 1
    for line_no, line in enumerate(lines[1:count + 1], start=2):
        try:
            [float(v) for v in line.split()[1:]]
        except ValueError:
            return line_no
    return 1


def load_embeddings(path, format: str = "text", limit: Optional[int] = None) -> EmbeddingStore:
    """
    Reads a word2vec file through gensim. Only the first `limit` rows are read when a limit is given.
    A repeated word keeps its first vector (with a warning). Rows past the header count are ignored.
    """
    if format not in FORMATS:
        raise InvalidArgumentError(f"embeddings format must be one of {FORMATS}, got {format!r}")
    if limit is not None and limit < 0:
        raise InvalidArgumentError(f"limit must be >= 0, got {limit}")
    path = Path(path)
    count, dim = _read_header(path)
    if limit == 0 or count == 0:
        logger.info("Loaded 0 word vectors of dimension %d from %s (%s)", dim, path, format)
        return EmbeddingStore(dim, {}, np.zeros((0, dim), dtype=np.float32))

    try:
        kv = KeyedVectors.load_word2vec_format(str(path), binary=(format == 'binary'), limit=limit,
                                               datatype=np.float32)
    except EOFError as e:
        raise EmbeddingParseError(f"header announces {count} rows but the file ends early",
                                  _error_line(e, path, format, count)) from e
    except ValueError as e:
        raise EmbeddingParseError(str(e), _error_line(e, path, format, count)) from e

    vectors = np.asarray(kv.vectors, dtype=np.float32)
    bad = ~np.isfinite(vectors).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise EmbeddingParseError(f"non-finite value in vector for '{kv.index_to_key[row]}'", row + 2)
    expected = count if limit is None else min(count, limit)
    if len(kv) < expected:
        logger.warning("%d duplicate embedding word(s) in %s; kept the first vector of each",
                       expected - len(kv), path)

    store = EmbeddingStore(dim, {w: i for i, w in enumerate(kv.index_to_key)}, vectors)
    logger.info("Loaded %d word vectors of dimension %d from %s (%s)", len(store), dim, path, format)
    return store


def write_embeddings(store: EmbeddingStore, path, binary: bool = False):
    """Writes the store in word2vec text or binary layout."""
    header = f"{len(store)} {store.dimension}\n".encode('ascii')
    chunks = [header]
    for word in store.words:
        vec = store.vector(word)
        if binary:
            chunks.append(word.encode('utf-8') + b' ' + vec.astype('<f4').tobytes() + b'\n')
        else:
            chunks.append((word + ' ' + ' '.join(repr(float(v)) for v in vec) + '\n').encode('utf-8'))
    atomic_write_bytes(path, b''.join(chunks))
    logger.info("Wrote %d word vectors to %s (%s)", len(store), path, 'binary' if binary else 'text')
