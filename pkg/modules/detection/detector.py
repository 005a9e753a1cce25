# Bias detector: TF-IDF features + one logistic regression per label
import io
import logging
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.special import expit
from sklearn.feature_extraction.text import CountVectorizer, TfidfVectorizer

from fairtext import atomic_write_text, load_json, log_command, save_json
from modules.data.ingestion import LABELS, Corpus, Document, corpus_label_matrix, tokenize
from modules.errors import (
    DataError, DimensionMismatchError, EmptyCorpusError, InvalidArgumentError,
    MissingIdError, ModelFormatError, ScoreImportError, ScoreRangeError,
    TrainingError, UnknownIdError,
)

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1

# Scores stay strictly inside (0, 1) even when the sigmoid saturates
_LOW = np.nextafter(0.0, 1.0)
_HIGH = np.nextafter(1.0, 0.0)


# --- Types ---

@dataclass(frozen=True)
class Vectorizer:
    vocabulary: dict          # term -> column index
    idf: np.ndarray           # one value per column
    min_df: int = 1
    max_features: Optional[int] = None

    @property
    def size(self) -> int:
        return len(self.vocabulary)

    @cached_property
    def tfidf(self) -> TfidfVectorizer:
        """A fitted sklearn TfidfVectorizer carrying exactly this vocabulary and idf."""
        tfidf = _tfidf(self.vocabulary)
        tfidf.idf_ = self.idf
        return tfidf


@dataclass(frozen=True)
class SparseVector:
    indices: np.ndarray       # strictly increasing column indices
    values: np.ndarray
    size: int

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.size)
        dense[self.indices] = self.values
        return dense


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.001
    l2_penalty: float = 0.0001
    epochs: int = 10
    batch_size: int = 16
    seed: int = 42

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgumentError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.l2_penalty < 0:
            raise InvalidArgumentError(f"l2_penalty must be >= 0, got {self.l2_penalty}")
        if self.epochs < 0:
            raise InvalidArgumentError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray       # shape (6, |vocabulary|)
    biases: np.ndarray        # shape (6,)
    hyperparams: Hyperparams

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[0] != len(LABELS) or self.biases.shape != (len(LABELS),):
            raise DimensionMismatchError(
                f"model needs {len(LABELS)} weight rows and biases, got {self.weights.shape} / {self.biases.shape}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise ModelFormatError("model parameters must be finite")

    @property
    def size(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class LabelScores:
    scores: Tuple[float, ...]

    def __post_init__(self):
        scores = tuple(float(s) for s in self.scores)
        if len(scores) != len(LABELS):
            raise ScoreRangeError(f"expected {len(LABELS)} scores, got {len(scores)}")
        if any(not 0.0 <= s <= 1.0 for s in scores):
            raise ScoreRangeError(f"scores must lie in [0, 1], got {scores}")
        object.__setattr__(self, 'scores', scores)

    def __getitem__(self, label):
        if isinstance(label, str):
            return self.scores[LABELS.index(label)]
        return self.scores[label]

    def as_dict(self) -> dict:
        return dict(zip(LABELS, self.scores))


# --- Features ---

def _terms(text: str) -> list:
    return [t.text.lower() for t in tokenize(text)]


def _tfidf(vocabulary) -> TfidfVectorizer:
    # Counts times smoothed idf, L2-normalized; terms come from our own tokenizer
    return TfidfVectorizer(tokenizer=_terms, lowercase=False, token_pattern=None,
                           vocabulary=vocabulary, smooth_idf=True, norm='l2')


def fit_vectorizer(corpus: Corpus, min_df: int = 1, max_features: Optional[int] = None) -> Vectorizer:
    """
    Vocabulary = lowercased tokens seen in at least `min_df` documents, cut to the `max_features`
    most frequent by document frequency (ties broken alphabetically).
    idf(t) = ln((1 + N) / (1 + df(t))) + 1.
    """
    if len(corpus) == 0:
        raise EmptyCorpusError("cannot fit a vectorizer on an empty corpus")
    if min_df < 1:
        raise InvalidArgumentError(f"min_df must be >= 1, got {min_df}")
    if max_features is not None and max_features < 1:
        raise InvalidArgumentError(f"max_features must be >= 1, got {max_features}")

    texts = [doc.text for doc in corpus]
    counter = CountVectorizer(tokenizer=_terms, lowercase=False, token_pattern=None, binary=True)
    try:
        presence = counter.fit_transform(texts)
    except ValueError as e:
        raise DataError("the corpus has no tokens to build a vocabulary from") from e
    df = np.asarray(presence.sum(axis=0)).ravel()

    kept = [(term, int(count)) for term, count in zip(counter.get_feature_names_out(), df) if count >= min_df]
    if not kept:
        raise DataError(f"min_df={min_df} leaves no terms in the vocabulary")
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    if max_features is not None:
        kept = kept[:max_features]

    tfidf = _tfidf(sorted(term for term, _ in kept)).fit(texts)
    logger.info("Fitted vectorizer: %d terms from %d documents (min_df=%d, max_features=%s)",
                len(kept), len(texts), min_df, max_features)
    return Vectorizer(dict(tfidf.vocabulary_), np.asarray(tfidf.idf_, dtype=np.float64), min_df, max_features)


def transform(vectorizer: Vectorizer, doc: Document) -> SparseVector:
    """Raw term counts times idf, L2-normalized. Unknown tokens are ignored."""
    row = vectorizer.tfidf.transform([doc.text])
    row.sort_indices()
    return SparseVector(row.indices.astype(np.int64), row.data.astype(np.float64), vectorizer.size)


def transform_corpus(vectorizer: Vectorizer, corpus: Corpus) -> sparse.csr_matrix:
    """Row i is transform(vectorizer, corpus[i])."""
    X = vectorizer.tfidf.transform([doc.text for doc in corpus])
    X.sort_indices()
    return sparse.csr_matrix(X, dtype=np.float64)


# --- Loss ---

def log_loss(weights: np.ndarray, biases: np.ndarray, X, Y: np.ndarray, l2: float) -> float:
    """Sum over labels of (mean log-loss + l2/2 * ||w||^2)."""
    Z = X @ weights.T + biases
    per_doc = np.logaddexp(0.0, Z) - Y * Z
    return float(per_doc.mean(axis=0).sum() + 0.5 * l2 * np.sum(weights * weights))


def loss_gradient(weights: np.ndarray, biases: np.ndarray, X, Y: np.ndarray, l2: float):
    """Gradient of log_loss with respect to (weights, biases)."""
    n = X.shape[0]
    residual = expit(X @ weights.T + biases) - Y
    grad_w = np.asarray(X.T @ residual).T / n + l2 * weights
    grad_b = residual.mean(axis=0)
    return grad_w, grad_b


def train(vectorizer: Vectorizer, corpus: Corpus, hyperparams: Hyperparams = Hyperparams()) -> LinearModel:
    """
    Mini-batch gradient descent on every label at once.
    Document order is reshuffled each epoch from hyperparams.seed only, so the same data and
    settings always give the same parameters.
    """
    if len(corpus) == 0:
        raise EmptyCorpusError("cannot train on an empty corpus")
    Y = corpus_label_matrix(corpus).astype(np.float64)
    X = transform_corpus(vectorizer, corpus)
    n = X.shape[0]
    weights = np.zeros((len(LABELS), vectorizer.size))
    biases = np.zeros(len(LABELS))
    hp = hyperparams

    initial = log_loss(weights, biases, X, Y, hp.l2_penalty)
    loss = initial
    logger.info("Training on %d documents, %d features: %s (initial loss %.6f)",
                n, vectorizer.size, asdict(hp), initial)

    rng = np.random.default_rng(hp.seed)
    for epoch in range(1, hp.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            batch = order[start:start + hp.batch_size]
            grad_w, grad_b = loss_gradient(weights, biases, X[batch], Y[batch], hp.l2_penalty)
            weights -= hp.learning_rate * grad_w
            biases -= hp.learning_rate * grad_b
        loss = log_loss(weights, biases, X, Y, hp.l2_penalty)
        if not np.isfinite(loss) or not np.all(np.isfinite(weights)):
            raise TrainingError(f"loss became non-finite ({loss})", epoch)
        logger.debug("epoch %d/%d loss=%.6f", epoch, hp.epochs, loss)

    if loss > initial:
        logger.warning("Final training loss %.6f is above the initial loss %.6f; learning_rate %s may be too high",
                       loss, initial, hp.learning_rate)
    logger.info("Training done: loss %.6f -> %.6f", initial, loss)
    return LinearModel(weights, biases, hp)


# --- Scoring ---

def _check_dims(model: LinearModel, vectorizer: Vectorizer):
    if model.size != vectorizer.size:
        raise DimensionMismatchError(
            f"model has {model.size} weights per label but the vectorizer has {vectorizer.size} terms")


def _scores(model: LinearModel, X) -> np.ndarray:
    return np.clip(expit(X @ model.weights.T + model.biases), _LOW, _HIGH)


def predict(model: LinearModel, vectorizer: Vectorizer, doc: Document) -> LabelScores:
    """score_j = sigmoid(w_j . x + b_j) for each label."""
    _check_dims(model, vectorizer)
    X = sparse.csr_matrix(vectorizer.tfidf.transform([doc.text]), dtype=np.float64)
    return LabelScores(tuple(_scores(model, X)[0]))


def predict_corpus(model: LinearModel, vectorizer: Vectorizer, corpus: Corpus) -> np.ndarray:
    """N×6 score matrix; row i equals predict(model, vectorizer, corpus[i])."""
    _check_dims(model, vectorizer)
    if len(corpus) == 0:
        return np.zeros((0, len(LABELS)))
    return _scores(model, transform_corpus(vectorizer, corpus))


def is_biased(scores, threshold: float = 0.5) -> bool:
    """True when any label score reaches the threshold."""
    if not 0.0 < threshold < 1.0:
        raise InvalidArgumentError(f"threshold must be in (0, 1), got {threshold}")
    values = scores.scores if isinstance(scores, LabelScores) else scores
    return any(s >= threshold for s in values)


# --- Persistence ---

def save_model(path, vectorizer: Vectorizer, model: LinearModel):
    """Vocabulary, idf, weights, biases and hyperparams in one JSON file."""
    _check_dims(model, vectorizer)
    terms = sorted(vectorizer.vocabulary, key=vectorizer.vocabulary.get)
    save_json(path, {
        'format_version': MODEL_FORMAT_VERSION,
        'labels': list(LABELS),
        'vocabulary': terms,
        'idf': vectorizer.idf.tolist(),
        'min_df': vectorizer.min_df,
        'max_features': vectorizer.max_features,
        'weights': model.weights.tolist(),
        'biases': model.biases.tolist(),
        'hyperparams': asdict(model.hyperparams),
    })
    logger.info("Saved model (%d terms) to %s", vectorizer.size, path)


def load_model(path) -> Tuple[Vectorizer, LinearModel]:
    try:
        data = load_json(path)
        if data.get('format_version') != MODEL_FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported model format {data.get('format_version')!r}")
        if tuple(data['labels']) != LABELS:
            raise ModelFormatError(f"{path}: label order {data['labels']} does not match {list(LABELS)}")
        terms = data['vocabulary']
        idf = np.array(data['idf'], dtype=np.float64)
        weights = np.array(data['weights'], dtype=np.float64).reshape(len(LABELS), len(terms))
        biases = np.array(data['biases'], dtype=np.float64)
        hyperparams = Hyperparams(**data['hyperparams'])
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"{path}: {e}") from e
    if idf.shape != (len(terms),) or not np.all(np.isfinite(idf)) or np.any(idf <= 0):
        raise ModelFormatError(f"{path}: idf must hold one positive finite value per term")
    vectorizer = Vectorizer({t: i for i, t in enumerate(terms)}, idf, data['min_df'], data['max_features'])
    model = LinearModel(weights, biases, hyperparams)
    logger.info("Loaded model (%d terms) from %s", len(terms), path)
    return vectorizer, model


def export_scores(path, ids, scores: np.ndarray):
    """CSV `id,toxic,...,identity_hate`; floats written with their shortest exact repr."""
    frame = pd.DataFrame({'id': list(ids)})
    for j, name in enumerate(LABELS):
        frame[name] = [repr(float(v)) for v in scores[:, j]] if len(frame) else []
    atomic_write_text(path, frame.to_csv(index=False, lineterminator='\n'))
    logger.info("Wrote scores for %d documents to %s", len(frame), path)


def import_scores(path, corpus: Corpus) -> np.ndarray:
    """
    Reads externally produced scores and lines them up with the corpus.
    Every corpus id must be present exactly once, nothing else may be, and scores must lie in [0, 1].
    """
    raw = Path(path).read_bytes()
    try:
        frame = pd.read_csv(io.BytesIO(raw), dtype=str, keep_default_na=False, na_filter=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ScoreImportError(f"{path}: {e}") from e
    for column in ('id',) + LABELS:
        if column not in frame.columns:
            raise ScoreImportError(f"{path}: missing column '{column}'")

    ids = frame['id'].tolist()
    if len(set(ids)) != len(ids):
        raise ScoreImportError(f"{path}: duplicate ids")
    unknown = [i for i in ids if i not in corpus]
    if unknown:
        raise UnknownIdError(f"{path}: id '{unknown[0]}' is not in the corpus ({len(unknown)} unknown)")
    present = set(ids)
    missing = [i for i in corpus.ids if i not in present]
    if missing:
        raise MissingIdError(f"{path}: no scores for id '{missing[0]}' ({len(missing)} missing)")

    try:
        values = frame[list(LABELS)].astype(np.float64).to_numpy()
    except ValueError as e:
        raise ScoreRangeError(f"{path}: {e}") from e
    bad = ~((values >= 0.0) & (values <= 1.0))
    if bad.any():
        row, col = map(int, np.argwhere(bad)[0])
        raise ScoreRangeError(f"{path}: score {LABELS[col]}={values[row, col]} for id '{ids[row]}' is outside [0, 1]")

    position = {doc_id: row for row, doc_id in enumerate(ids)}
    aligned = values[[position[doc_id] for doc_id in corpus.ids]] if len(corpus) else np.zeros((0, len(LABELS)))
    logger.info("Imported scores for %d documents from %s", len(aligned), path)
    return aligned


# --- Commands ---

# fairtext train: fits the vectorizer and the detector on the train split
@log_command
def cmd_train(args):
    from modules.data.ingestion import load_corpus, split_corpus
    from modules.pipeline.config import require, resolve_config

    config = resolve_config(args)
    require(config, 'corpus')
    corpus = load_corpus(config.corpus, has_labels=True)
    train_part, _ = split_corpus(corpus, config.train_fraction, config.seed)
    vectorizer = fit_vectorizer(train_part, config.min_df, config.max_features)
    model = train(vectorizer, train_part, config.hyperparams)
    save_model(args.out, vectorizer, model)


# fairtext detect: scores every document with a saved model
@log_command
def cmd_detect(args):
    from modules.data.ingestion import load_corpus
    from modules.pipeline.config import require, resolve_config

    config = resolve_config(args)
    require(config, 'corpus', 'model')
    vectorizer, model = load_model(config.model)
    corpus = load_corpus(config.corpus, has_labels=False)
    export_scores(args.out, corpus.ids, predict_corpus(model, vectorizer, corpus))


def register_commands(subparsers):
    from modules.pipeline.config import add_config_arguments

    p = subparsers.add_parser('train', help='train the TF-IDF + logistic regression detector')
    add_config_arguments(p, 'corpus', 'detector')
    p.add_argument('--out', required=True, help='where to write model.json')
    p.set_defaults(handler=cmd_train)

    p = subparsers.add_parser('detect', help='score documents with a trained detector')
    add_config_arguments(p, 'corpus', 'model')
    p.add_argument('--out', required=True, help='where to write scores.csv')
    p.set_defaults(handler=cmd_detect)
