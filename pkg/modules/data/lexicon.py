# Bias lexicon: loading the term list and tagging documents with bias spans
import json
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

from fairtext import load_json, log_command, save_json
from modules.data.ingestion import Corpus, Document, tokenize
from modules.errors import LexiconParseError, LexiconValidationError

logger = logging.getLogger(__name__)

# The closed set of bias categories a lexicon entry may use
CATEGORIES = ("gender", "race", "religion", "mental_health", "disability", "general")


@dataclass(frozen=True)
class LexiconEntry:
    term: str
    category: str
    subgroup: Optional[str] = None
    suggested_substitutes: Tuple[str, ...] = ()
    source: Optional[str] = None  # provenance of the term

    def __post_init__(self):
        term = (self.term or '').strip().lower()
        if not term:
            raise LexiconValidationError("lexicon entry has an empty term")
        if self.category not in CATEGORIES:
            raise LexiconValidationError(
                f"entry '{term}': unknown category '{self.category}' (expected one of {', '.join(CATEGORIES)})")
        object.__setattr__(self, 'term', term)
        object.__setattr__(self, 'suggested_substitutes', tuple(self.suggested_substitutes or ()))


@dataclass(frozen=True)
class BiasLexicon:
    entries: Tuple[LexiconEntry, ...]
    version: str = "unversioned"
    _by_term: Dict[str, LexiconEntry] = field(init=False, repr=False, compare=False)
    _max_tokens: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        by_term = {}
        for entry in entries:
            if entry.term in by_term:
                raise LexiconValidationError(f"duplicate lexicon term '{entry.term}'")
            by_term[entry.term] = entry
        object.__setattr__(self, 'entries', entries)
        object.__setattr__(self, '_by_term', by_term)
        object.__setattr__(self, '_max_tokens', max((len(tokenize(t)) for t in by_term), default=0))

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, term) -> bool:
        return isinstance(term, str) and term.lower() in self._by_term

    def lookup(self, term: str) -> Optional[LexiconEntry]:
        return self._by_term.get(term.lower())

    @property
    def terms(self) -> frozenset:
        return frozenset(self._by_term)

    @property
    def max_tokens(self) -> int:
        """Longest term, counted in tokens."""
        return self._max_tokens

    @property
    def subgroups(self) -> list:
        return sorted({e.subgroup for e in self.entries if e.subgroup})


@dataclass(frozen=True)
class SpanTag:
    start: int
    end: int
    matched_term: str
    category: str
    subgroup: Optional[str] = None

    def to_json(self) -> dict:
        return {
            'start': self.start,
            'end': self.end,
            'matched_term': self.matched_term,
            'category': self.category,
            'subgroup': self.subgroup,
        }


def load_lexicon(path) -> BiasLexicon:
    """
    Loads a JSON array of entries like
    {"term": "hysterical", "category": "gender", "subgroup": "female", "suggested_substitutes": ["upset"]}.
    Terms are trimmed and lowercased; duplicates and unknown categories are rejected.
    """
    path = Path(path)
    raw = path.read_bytes()
    try:
        items = json.loads(raw.decode('utf-8'))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise LexiconParseError(f"{path}: {e}") from e
    if not isinstance(items, list):
        raise LexiconParseError(f"{path}: expected a JSON array of entries")

    entries = []
    for index, item in enumerate(items):
        if not isinstance(item, dict) or 'term' not in item or 'category' not in item:
            raise LexiconValidationError(f"{path}: entry #{index} needs at least 'term' and 'category'")
        substitutes = item.get('suggested_substitutes') or ()
        if isinstance(substitutes, str) or not all(isinstance(s, str) for s in substitutes):
            raise LexiconValidationError(f"{path}: entry #{index} ('{item['term']}'): suggested_substitutes must be a list of strings")
        try:
            entry = LexiconEntry(
                term=str(item['term']),
                category=item['category'],
                subgroup=item.get('subgroup') or None,
                suggested_substitutes=tuple(substitutes),
                source=item.get('source'),
            )
        except LexiconValidationError as e:
            raise LexiconValidationError(f"{path}: entry #{index}: {e}") from e
        # A term that does not survive tokenization can never be matched
        if ' '.join(t.text for t in tokenize(entry.term)) != entry.term:
            logger.warning("Lexicon term '%s' is not a clean token sequence and will never match", entry.term)
        entries.append(entry)

    version = 'sha256:' + hashlib.sha256(raw).hexdigest()[:12]
    lexicon = BiasLexicon(tuple(entries), version=version)
    logger.info("Loaded lexicon %s with %d entries from %s", version, len(lexicon), path)
    return lexicon


def tag_spans(doc: Document, lexicon: BiasLexicon) -> list:
    """
    Finds lexicon terms in the document.
    A candidate is a window of consecutive tokens whose text, lowercased, is exactly a lexicon term,
    so multi-word terms only match with single spaces between their words.
    Overlaps are resolved longest window first (in tokens, then in characters), then leftmost.
    """
    tokens = tokenize(doc.text)
    if not tokens or not lexicon.max_tokens:
        return []

    text = doc.text
    candidates = []
    for i in range(len(tokens)):
        for j in range(i, min(len(tokens), i + lexicon.max_tokens)):
            start, end = tokens[i].start, tokens[j].end
            entry = lexicon.lookup(text[start:end])
            if entry is not None:
                candidates.append((start, end, i, j, entry))

    candidates.sort(key=lambda c: (-(c[3] - c[2]), -(c[1] - c[0]), c[0]))
    taken = set()
    chosen = []
    for start, end, i, j, entry in candidates:
        window = range(i, j + 1)
        if any(k in taken for k in window):
            continue
        taken.update(window)
        chosen.append(SpanTag(start, end, entry.term, entry.category, entry.subgroup))

    chosen.sort(key=lambda s: s.start)
    return chosen


def tag_corpus(corpus: Corpus, lexicon: BiasLexicon) -> dict:
    """Document id → list of SpanTag, in corpus order."""
    return {doc.id: tag_spans(doc, lexicon) for doc in corpus}


def category_counts(tags: Iterable[SpanTag]) -> dict:
    counts = {c: 0 for c in CATEGORIES}
    for tag in tags:
        counts[tag.category] += 1
    return counts


def _tagged_tokens(text: str, spans) -> list:
    """One flag per token: is it inside any of the (start, end) spans?"""
    flags = []
    for token in tokenize(text):
        flags.append(any(start <= token.start and token.end <= end for start, end in spans))
    return flags


def score_tagging(predicted: dict, gold: dict, corpus: Corpus) -> dict:
    """
    Token-level precision / recall / F1 of predicted spans against gold spans.
    `predicted` maps id → SpanTags, `gold` maps id → [(start, end), ...].
    With nothing predicted and nothing in gold the scores are 1.0.
    """
    tp = fp = fn = 0
    for doc in corpus:
        pred_flags = _tagged_tokens(doc.text, [(s.start, s.end) for s in predicted.get(doc.id, [])])
        gold_flags = _tagged_tokens(doc.text, [tuple(g) for g in gold.get(doc.id, [])])
        for p, g in zip(pred_flags, gold_flags):
            tp += p and g
            fp += p and not g
            fn += g and not p

    if tp + fp + fn == 0:
        return {'precision': 1.0, 'recall': 1.0, 'f1': 1.0, 'tokens': {'tp': 0, 'fp': 0, 'fn': 0}}
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {'precision': precision, 'recall': recall, 'f1': f1, 'tokens': {'tp': tp, 'fp': fp, 'fn': fn}}


def tags_to_json(corpus: Corpus, tags: dict, lexicon: BiasLexicon) -> dict:
    all_tags = [t for doc in corpus for t in tags[doc.id]]
    return {
        'lexicon_version': lexicon.version,
        'category_counts': category_counts(all_tags),
        'documents': [
            {'id': doc.id, 'spans': [t.to_json() for t in tags[doc.id]]}
            for doc in corpus
        ],
    }


# fairtext tag: writes the bias spans of every document
@log_command
def cmd_tag(args):
    from modules.data.ingestion import load_corpus
    from modules.pipeline.config import require, resolve_config

    config = resolve_config(args)
    require(config, 'corpus', 'lexicon')
    corpus = load_corpus(config.corpus, has_labels=False)
    lexicon = load_lexicon(config.lexicon)
    tags = tag_corpus(corpus, lexicon)
    payload = tags_to_json(corpus, tags, lexicon)
    if args.gold:
        gold = load_json(args.gold)
        payload['tagging_scores'] = score_tagging(tags, gold, corpus)
        logger.info("Tagging against gold: %s", payload['tagging_scores'])
    save_json(args.out, payload)
    logger.info("Tagged %d spans in %d documents", sum(len(v) for v in tags.values()), len(corpus))


def register_commands(subparsers):
    from modules.pipeline.config import add_config_arguments

    p = subparsers.add_parser('tag', help='tag bias-bearing spans with the lexicon')
    add_config_arguments(p, 'corpus', 'lexicon')
    p.add_argument('--out', required=True, help='where to write tags.json')
    p.add_argument('--gold', help='JSON object id -> [[start, end], ...] to score the tagger against')
    p.set_defaults(handler=cmd_tag)
