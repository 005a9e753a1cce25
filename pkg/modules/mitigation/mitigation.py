# Bias mitigation: substitute words for tagged spans and the rewritten documents
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from fairtext import log_command, save_json
from modules.data.ingestion import Corpus, Document, tokenize
from modules.data.lexicon import BiasLexicon, SpanTag, tag_spans
from modules.detection.detector import is_biased, predict_corpus
from modules.errors import InvalidArgumentError, OverlappingSpansError
from modules.mitigation.embeddings import EmbeddingStore, nearest_neighbors

logger = logging.getLogger(__name__)

# Similarity recorded for lexicon-provided substitutes, which have no embedding score
LEXICON_SIMILARITY = 1.0


class Fallback(str, Enum):
    NONE = "none"
    LEXICON_SUBSTITUTE = "lexicon_substitute"
    UNCHANGED = "unchanged"


@dataclass(frozen=True)
class MitigationPolicy:
    k_min: int = 5
    k_max: int = 10
    min_similarity: float = 0.25
    choose: str = "top1"

    def __post_init__(self):
        if not 1 <= self.k_min <= self.k_max:
            raise InvalidArgumentError(f"need 1 <= k_min <= k_max, got k_min={self.k_min} k_max={self.k_max}")
        if not -1.0 <= self.min_similarity <= 1.0:
            raise InvalidArgumentError(f"min_similarity must be in [-1, 1], got {self.min_similarity}")
        if self.choose != "top1":
            raise InvalidArgumentError(f"unknown choose policy {self.choose!r} (only 'top1')")


@dataclass(frozen=True)
class SubstitutionSuggestion:
    span: SpanTag
    original: str                          # the span text as it appears in the document
    candidates: Tuple[Tuple[str, float], ...]
    fallback_used: Fallback = Fallback.NONE

    @property
    def replacement(self) -> Optional[str]:
        return self.candidates[0][0] if self.candidates else None

    def to_json(self) -> dict:
        return {
            'span': self.span.to_json(),
            'original': self.original,
            'candidates': [{'word': w, 'similarity': s} for w, s in self.candidates],
            'fallback_used': self.fallback_used.value,
        }


@dataclass(frozen=True)
class MitigationResult:
    corpus: Corpus
    suggestions: Tuple[Tuple[SubstitutionSuggestion, ...], ...]  # one tuple per input document
    flagged: Tuple[bool, ...]
    rewritten_ids: Tuple[str, ...]


def _usable(word: str, original: str, lexicon: BiasLexicon) -> bool:
    """A substitute must be a single clean token, not the original, and not itself a lexicon term."""
    tokens = tokenize(word)
    return (len(tokens) == 1 and tokens[0].text == word
            and word.lower() != original.lower()
            and word.lower() not in lexicon)


def suggest(span: SpanTag, store: EmbeddingStore, lexicon: BiasLexicon,
            policy: MitigationPolicy = MitigationPolicy(), original: Optional[str] = None) -> SubstitutionSuggestion:
    """
    Ranked substitutes for one span, best first.
    Embedding neighbours come first; when fewer than k_min survive the filters the lexicon's own
    suggested substitutes are used instead; with nothing at all the span stays unchanged.
    """
    original = span.matched_term if original is None else original
    candidates = []
    query = store.resolve(span.matched_term)
    if query is not None:
        # Headroom so that dropping lexicon terms still leaves k_max words
        neighbours = nearest_neighbors(store, query, policy.k_max + len(lexicon) + 1)
        seen = set()
        for n in neighbours:
            if n.similarity < policy.min_similarity:
                break
            key = n.word.lower()
            if key in seen or not _usable(n.word, span.matched_term, lexicon):
                continue
            seen.add(key)
            candidates.append((n.word, n.similarity))
            if len(candidates) == policy.k_max:
                break
    else:
        logger.debug("'%s' is not in the embeddings; trying lexicon substitutes", span.matched_term)

    fallback = Fallback.NONE
    if len(candidates) < policy.k_min:
        entry = lexicon.lookup(span.matched_term)
        substitutes = [s for s in (entry.suggested_substitutes if entry else ())
                       if _usable(s, span.matched_term, lexicon)]
        if substitutes:
            candidates = [(s, LEXICON_SIMILARITY) for s in substitutes[:policy.k_max]]
            fallback = Fallback.LEXICON_SUBSTITUTE
        elif not candidates:
            fallback = Fallback.UNCHANGED

    return SubstitutionSuggestion(span, original, tuple(candidates), fallback)


def match_case(replacement: str, original: str) -> str:
    """ALL CAPS stays all caps, Initial Cap stays initial cap, anything else becomes lowercase."""
    replacement = replacement.lower()
    if original.isupper():
        return replacement.upper()
    if original[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


def rewrite(doc: Document, suggestions, policy: MitigationPolicy = MitigationPolicy()) -> Document:
    """
    Replaces every span that has candidates with its top candidate.
    Text outside the replaced spans is copied unchanged; the result keeps the id and drops the labels.
    """
    pieces = []
    cursor = 0
    last_end = 0  # end of the previous span, replaced or not
    for s in suggestions:
        if s.span.start < last_end:
            raise OverlappingSpansError(
                f"document '{doc.id}': span {s.span.start}-{s.span.end} overlaps or precedes the previous span")
        last_end = s.span.end
        if s.replacement is None or s.fallback_used is Fallback.UNCHANGED:
            continue
        pieces.append(doc.text[cursor:s.span.start])
        pieces.append(match_case(s.replacement, doc.text[s.span.start:s.span.end]))
        cursor = s.span.end
    pieces.append(doc.text[cursor:])
    return Document(doc.id, ''.join(pieces), None)


def mitigate_document(doc: Document, lexicon: BiasLexicon, store: EmbeddingStore,
                      policy: MitigationPolicy = MitigationPolicy()):
    """Tags one document and rewrites it. Returns (new document, suggestions)."""
    spans = tag_spans(doc, lexicon)
    suggestions = tuple(suggest(span, store, lexicon, policy, doc.text[span.start:span.end]) for span in spans)
    return rewrite(doc, suggestions, policy), suggestions


def mitigate_corpus(corpus: Corpus, model, vectorizer, lexicon: BiasLexicon, store: EmbeddingStore,
                    policy: MitigationPolicy = MitigationPolicy(), threshold: float = 0.5,
                    scores: Optional[np.ndarray] = None, workers: int = 1) -> MitigationResult:
    """
    Detection -> identification -> mitigation over a whole corpus.
    Only documents the detector flags (any score >= threshold) are tagged and rewritten;
    everything else passes through untouched. Output order always matches input order.
    Pass `scores` (N×6) to use imported scores instead of the model.
    """
    if scores is None:
        scores = predict_corpus(model, vectorizer, corpus)
    flagged = tuple(is_biased(row, threshold) for row in scores)

    def work(item):
        doc, flag = item
        if not flag:
            return doc, ()
        return mitigate_document(doc, lexicon, store, policy)

    items = list(zip(corpus.documents, flagged))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(item) for item in items]

    documents, suggestions, rewritten = [], [], []
    for (original, flag), (doc, doc_suggestions) in zip(items, results):
        if doc_suggestions:
            rewritten.append(original.id)
            documents.append(doc)
        else:
            documents.append(original)
        suggestions.append(doc_suggestions)

    logger.info("Mitigation: %d of %d documents flagged, %d rewritten",
                sum(flagged), len(corpus), len(rewritten))
    return MitigationResult(Corpus(tuple(documents), corpus.split_seed), tuple(suggestions),
                            flagged, tuple(rewritten))


def suggestions_to_json(corpus: Corpus, result: MitigationResult) -> dict:
    """suggestions.json: one entry per rewritten document, in corpus order."""
    return {
        'documents': [
            {'id': doc.id, 'suggestions': [s.to_json() for s in doc_suggestions]}
            for doc, doc_suggestions in zip(corpus, result.suggestions)
            if doc_suggestions
        ],
    }


# fairtext mitigate: rewrites the flagged documents of a corpus
@log_command
def cmd_mitigate(args):
    from modules.data.ingestion import load_corpus, write_corpus
    from modules.data.lexicon import load_lexicon
    from modules.detection.detector import import_scores, load_model
    from modules.mitigation.embeddings import load_embeddings
    from modules.pipeline.config import require, resolve_config

    config = resolve_config(args)
    require(config, 'corpus', 'lexicon', 'embeddings')
    corpus = load_corpus(config.corpus, has_labels=False)
    lexicon = load_lexicon(config.lexicon)
    store = load_embeddings(config.embeddings, config.embeddings_format, config.embeddings_limit)

    model = vectorizer = scores = None
    if config.scores:
        scores = import_scores(config.scores, corpus)
    else:
        require(config, 'model')
        vectorizer, model = load_model(config.model)

    result = mitigate_corpus(corpus, model, vectorizer, lexicon, store, config.policy,
                             config.threshold, scores=scores, workers=config.workers)
    write_corpus(result.corpus, args.out, with_labels=False)
    if args.suggestions:
        save_json(args.suggestions, suggestions_to_json(corpus, result))


def register_commands(subparsers):
    from modules.pipeline.config import add_config_arguments

    p = subparsers.add_parser('mitigate', help='rewrite flagged documents with embedding substitutes')
    add_config_arguments(p, 'corpus', 'lexicon', 'embeddings', 'model', 'scores', 'mitigation')
    p.add_argument('--out', required=True, help='where to write rewritten.csv')
    p.add_argument('--suggestions', help='where to write suggestions.json')
    p.set_defaults(handler=cmd_mitigate)
