# Import standard Python libraries
import io                      # Feed raw bytes to pandas (we need them again for error offsets)
import re                      # For pulling line numbers out of parser messages
import csv                     # Quoting constants for the CSV writer
import logging                 # For logging debug and info messages
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Tuple

import numpy as np
import pandas as pd
import regex                   # Unicode letter classes (\p{L}) for the tokenizer

from fairtext import atomic_write_text
from modules.errors import (
    CorpusParseError, CorpusSchemaError, DataError, DuplicateIdError,
    EmptyCorpusError, InvalidArgumentError, LabelValueError, UnlabeledDocumentError,
)

logger = logging.getLogger(__name__)

# Label columns in the order the public Jigsaw files use
LABELS = ("toxic", "severe_toxic", "obscene", "threat", "insult", "identity_hate")
ID_COLUMN = "id"
TEXT_COLUMN = "comment_text"

# A token is a run of letters; apostrophes and hyphens are allowed only between letters
TOKEN_RE = regex.compile(r"\p{L}+(?:['’\-]\p{L}+)*")


@dataclass(frozen=True)
class Document:
    """One comment: id, raw text and (optionally) its six 0/1 labels."""
    id: str
    text: str
    labels: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if not self.id:
            raise DataError("document id must be non-empty")
        if self.labels is not None:
            labels = tuple(int(v) for v in self.labels)
            if len(labels) != len(LABELS) or any(v not in (0, 1) for v in labels):
                raise DataError(f"document {self.id}: labels must be {len(LABELS)} values in {{0,1}}, got {self.labels!r}")
            object.__setattr__(self, 'labels', labels)


@dataclass(frozen=True)
class Token:
    text: str
    start: int  # inclusive
    end: int    # exclusive


@dataclass(frozen=True)
class Corpus:
    """
    An ordered, immutable collection of documents.
    `split_seed` remembers which seed produced this corpus when it came out of split_corpus.
    """
    documents: Tuple[Document, ...]
    split_seed: Optional[int] = None
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        documents = tuple(self.documents)
        object.__setattr__(self, 'documents', documents)
        by_id = {}
        for doc in documents:
            if doc.id in by_id:
                raise DuplicateIdError(f"duplicate document id '{doc.id}'")
            by_id[doc.id] = doc
        object.__setattr__(self, '_by_id', by_id)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def __getitem__(self, index) -> Document:
        return self.documents[index]

    @property
    def ids(self) -> list:
        return [doc.id for doc in self.documents]

    def get(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def __contains__(self, doc_id) -> bool:
        return doc_id in self._by_id

    def subset(self, ids) -> "Corpus":
        """The documents with these ids, in the order given."""
        return Corpus(tuple(self._by_id[i] for i in ids), self.split_seed)


def _byte_offset(raw: bytes, message: str) -> int:
    """
    pandas reports malformed CSV by line number; turn that into the byte offset
    of the start of that line. 0 when the message carries no line.
    """
    m = re.search(r"(?:line|row) (\d+)", message)
    if not m:
        return 0
    line_no = max(int(m.group(1)), 1)
    offset = 0
    for i, line in enumerate(raw.splitlines(keepends=True), start=1):
        if i == line_no:
            return offset
        offset += len(line)
    return len(raw)


def load_corpus(path, has_labels: bool = True) -> Corpus:
    """
    Loads a Jigsaw-schema CSV: `id,comment_text` plus the six label columns when `has_labels`.
    Quoted fields with commas, doubled quotes and newlines are handled by pandas (RFC 4180).
    """
    path = Path(path)
    logger.debug("Loading corpus from %s (labels=%s)", path, has_labels)
    raw = path.read_bytes()
    try:
        frame = pd.read_csv(io.BytesIO(raw), dtype=str, keep_default_na=False,
                            na_filter=False, encoding='utf-8')
    except pd.errors.EmptyDataError:
        # Not even a header line
        raise CorpusSchemaError(ID_COLUMN, path)
    except pd.errors.ParserError as e:
        raise CorpusParseError(f"malformed CSV in {path}: {e}", _byte_offset(raw, str(e))) from e
    except UnicodeDecodeError as e:
        raise CorpusParseError(f"{path} is not valid UTF-8", e.start) from e

    required = [ID_COLUMN, TEXT_COLUMN] + (list(LABELS) if has_labels else [])
    for column in required:
        if column not in frame.columns:
            raise CorpusSchemaError(column, path)

    if has_labels:
        for column in LABELS:
            bad = ~frame[column].isin(('0', '1'))
            if bad.any():
                row = int(np.flatnonzero(bad.to_numpy())[0])
                raise LabelValueError(row, column, frame[column].iloc[row])
        label_matrix = frame[list(LABELS)].astype(np.int64).to_numpy()

    documents = []
    for row, (doc_id, text) in enumerate(zip(frame[ID_COLUMN].tolist(), frame[TEXT_COLUMN].tolist())):
        if not doc_id:
            raise DataError(f"row {row}: empty id")
        labels = tuple(int(v) for v in label_matrix[row]) if has_labels else None
        documents.append(Document(doc_id, text, labels))

    corpus = Corpus(tuple(documents))
    logger.info("Loaded %d documents from %s", len(corpus), path)
    return corpus


def write_corpus(corpus: Corpus, path, with_labels: bool = True):
    """Writes a corpus back in the same CSV schema (labels only if every document has them)."""
    columns = [ID_COLUMN, TEXT_COLUMN]
    rows = {ID_COLUMN: [d.id for d in corpus], TEXT_COLUMN: [d.text for d in corpus]}
    if with_labels:
        matrix = corpus_label_matrix(corpus)
        for j, name in enumerate(LABELS):
            columns.append(name)
            rows[name] = matrix[:, j].tolist() if len(corpus) else []
    frame = pd.DataFrame(rows, columns=columns)
    atomic_write_text(path, frame.to_csv(index=False, lineterminator='\n', quoting=csv.QUOTE_MINIMAL))
    logger.info("Wrote %d documents to %s", len(corpus), path)


def corpus_label_matrix(corpus: Corpus) -> np.ndarray:
    """N×6 matrix of gold labels; every document must be labeled."""
    rows = []
    for doc in corpus:
        if doc.labels is None:
            raise UnlabeledDocumentError(f"document '{doc.id}' has no labels")
        rows.append(doc.labels)
    return np.asarray(rows, dtype=np.int64).reshape(len(rows), len(LABELS))


def tokenize(text: str) -> list:
    """Splits text into letter tokens with character offsets. Never fails."""
    return [Token(m.group(), m.start(), m.end()) for m in TOKEN_RE.finditer(text)]


def split_corpus(corpus: Corpus, train_fraction: float, seed: int) -> Tuple[Corpus, Corpus]:
    """
    Shuffles document indices with `seed` and cuts them at round(train_fraction * N).
    Both halves keep the original document order.
    """
    if len(corpus) == 0:
        raise EmptyCorpusError("cannot split an empty corpus")
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgumentError(f"train_fraction must be in (0, 1), got {train_fraction}")

    n = len(corpus)
    n_train = int(round(train_fraction * n))
    order = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])
    train = Corpus(tuple(corpus[int(i)] for i in train_idx), split_seed=seed)
    test = Corpus(tuple(corpus[int(i)] for i in test_idx), split_seed=seed)
    logger.info("Split %d documents into %d train / %d test (fraction=%s, seed=%s)",
                n, len(train), len(test), train_fraction, seed)
    return train, test
