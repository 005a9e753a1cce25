# Synthetic fixture generator: a small labelled corpus with planted group bias,
# its lexicon, word vectors, subgroup assignment and a ready-to-run config
import logging
from pathlib import Path

import numpy as np

from fairtext import atomic_write_text, log_command, save_json
from modules.data.ingestion import LABELS, Corpus, Document, write_corpus
from modules.errors import InvalidArgumentError
from modules.mitigation.embeddings import EmbeddingStore, write_embeddings

logger = logging.getLogger(__name__)

DIMENSION = 300
MIN_DOCS = 50

# term, subgroup, embedding cluster (None = not in the embeddings), lexicon substitutes
PLANTED_TERMS = (
    ("hysterical", "female", "upset", ()),
    ("shrill", "female", "upset", ()),
    ("bossy", "female", None, ("assertive",)),
    ("brutish", "male", "rough", ()),
    ("macho", "male", "rough", ()),
    ("sneaky", "asian", "quiet", ()),
    ("robotic", "asian", "formal", ()),
    ("entitled", "white", "confident", ()),
    ("clueless", "white", "unsure", ()),
    ("rowdy", "african_american", "lively", ()),
    ("menacing", "african_american", "stern", ()),
)

CLUSTERS = {
    "upset": ("upset", "worried", "anxious", "tense", "nervous", "uneasy"),
    "rough": ("strong", "sturdy", "firm", "tough", "solid", "rugged"),
    "quiet": ("quiet", "reserved", "discreet", "private", "careful", "cautious"),
    "formal": ("formal", "precise", "methodical", "exact", "orderly", "systematic"),
    "confident": ("confident", "assured", "certain", "secure", "bold", "poised"),
    "unsure": ("unsure", "puzzled", "uncertain", "confused", "unaware", "baffled"),
    "lively": ("lively", "energetic", "spirited", "animated", "cheerful", "vibrant"),
    "stern": ("stern", "serious", "severe", "grave", "strict", "solemn"),
}

# Share of each group's documents carrying a planted bias term
BIAS_RATES = {"female": 0.5, "male": 0.1, "asian": 0.5, "white": 0.1, "african_american": 0.35}
GROUPS = tuple(BIAS_RATES)
GENERAL_TOXIC_RATE = 0.1
PAIRS = "female:male,asian:white,african_american:white"

FRAMES = (
    "honestly the {subject} was {slot} during the meeting",
    "I think the {subject} seemed {slot} again today",
    "everyone said the {subject} is {slot} and nothing else",
    "my view is that the {subject} looked {slot} at the event",
)
SUBJECTS = ("new hire", "neighbour", "team lead", "student", "driver", "author")
INSULTS = ("idiot", "moron", "fool", "clown")
TOXIC_PREFIX = "what a total {insult}"


def _clean_words() -> list:
    words = [w for cluster in CLUSTERS.values() for w in cluster]
    words.extend(s for _, _, _, subs in PLANTED_TERMS for s in subs)
    return words


def _text(rng, slot: str, insult: str = None) -> str:
    frame = FRAMES[rng.integers(len(FRAMES))]
    text = frame.format(subject=SUBJECTS[rng.integers(len(SUBJECTS))], slot=slot)
    if insult:
        text = TOXIC_PREFIX.format(insult=insult) + ", " + text
    return text


def _labels(toxic: bool) -> tuple:
    flags = {"toxic": int(toxic), "insult": int(toxic)}
    return tuple(flags.get(name, 0) for name in LABELS)


def make_corpus(n_docs: int, seed: int):
    """The documents plus id -> subgroup. Counts per group are exact, not sampled."""
    if n_docs < MIN_DOCS:
        raise InvalidArgumentError(f"need at least {MIN_DOCS} documents, got {n_docs}")
    rng = np.random.default_rng(seed)
    clean_words = _clean_words()
    terms_by_group = {g: [t for t, group, _, _ in PLANTED_TERMS if group == g] for g in GROUPS}

    planned = []
    for index, group in enumerate(GROUPS):
        size = n_docs // len(GROUPS) + (1 if index < n_docs % len(GROUPS) else 0)
        n_toxic = int(round(GENERAL_TOXIC_RATE * size))
        n_biased = int(round(BIAS_RATES[group] * size))
        kinds = ['toxic'] * n_toxic + ['biased'] * n_biased + ['clean'] * (size - n_toxic - n_biased)
        planned.extend((group, kind) for kind in kinds)

    order = rng.permutation(len(planned))
    documents, groups = [], {}
    for number, position in enumerate(order):
        group, kind = planned[position]
        doc_id = f"syn{number:05d}"
        if kind == 'biased':
            terms = terms_by_group[group]
            text = _text(rng, terms[rng.integers(len(terms))])
        elif kind == 'toxic':
            text = _text(rng, clean_words[rng.integers(len(clean_words))], INSULTS[rng.integers(len(INSULTS))])
        else:
            text = _text(rng, clean_words[rng.integers(len(clean_words))])
        documents.append(Document(doc_id, text, _labels(kind != 'clean')))
        groups[doc_id] = group
    return Corpus(tuple(documents)), groups


def make_lexicon() -> list:
    return [
        {
            "term": term,
            "category": "race" if group in ("asian", "white", "african_american") else "gender",
            "subgroup": group,
            "suggested_substitutes": list(subs),
            "source": "synthetic fixture",
        }
        for term, group, _, subs in PLANTED_TERMS
    ]


def make_embeddings(seed: int, dimension: int = DIMENSION) -> EmbeddingStore:
    """
    One tight cluster per planted meaning: lexicon terms sit close to the centre,
    their substitutes a little further out. Everything else gets an unrelated direction.
    """
    rng = np.random.default_rng(seed + 1)

    def unit():
        v = rng.standard_normal(dimension)
        return v / np.linalg.norm(v)

    centres = {name: unit() for name in CLUSTERS}
    words, rows = [], []

    def add(word, vector):
        if word not in words:
            words.append(word)
            rows.append(vector)

    for term, _, cluster, _ in PLANTED_TERMS:
        if cluster is not None:
            add(term, centres[cluster] + 0.1 * unit())
    for name, cluster in CLUSTERS.items():
        for word in cluster:
            add(word, centres[name] + 0.3 * unit())
    filler = set()
    for text in FRAMES + SUBJECTS + INSULTS + (TOXIC_PREFIX,):
        filler.update(w for w in text.replace('{', ' ').replace('}', ' ').split() if w.isalpha())
    filler -= {'subject', 'slot', 'insult'}
    for term, _, _, subs in PLANTED_TERMS:
        filler.update(subs)
    for word in sorted(filler):
        add(word, unit())

    vectors = np.vstack(rows).astype(np.float32)
    return EmbeddingStore(dimension, {w: i for i, w in enumerate(words)}, vectors)


def make_synthetic(out_dir, n_docs: int = 2000, seed: int = 42) -> dict:
    """
    Writes corpus.csv, assignment.csv, lexicon.json, embeddings.txt and config.json into out_dir.
    The same n_docs and seed always give the same files.
    """
    out = Path(out_dir)
    corpus, groups = make_corpus(n_docs, seed)
    paths = {name: out / name for name in
             ('corpus.csv', 'assignment.csv', 'lexicon.json', 'embeddings.txt', 'config.json')}

    write_corpus(corpus, paths['corpus.csv'], with_labels=True)
    lines = ['id,subgroups'] + [f"{doc.id},{groups[doc.id]}" for doc in corpus]
    atomic_write_text(paths['assignment.csv'], '\n'.join(lines) + '\n')
    save_json(paths['lexicon.json'], make_lexicon())
    write_embeddings(make_embeddings(seed), paths['embeddings.txt'])
    save_json(paths['config.json'], {
        "corpus": "corpus.csv",
        "lexicon": "lexicon.json",
        "embeddings": "embeddings.txt",
        "assignment": "assignment.csv",
        "out_dir": "out",
        "seed": seed,
        "train_fraction": 0.8,
        "evaluate_on": "all",
        "threshold": 0.5,
        "detector": {"learning_rate": 2.0, "l2_penalty": 0.0001, "epochs": 60, "batch_size": 16},
        "mitigation": {"k_min": 5, "k_max": 10, "min_similarity": 0.25},
        "metric": {"pairs": PAIRS, "p": -5, "w": 0.25},
    })
    logger.info("Wrote a synthetic fixture of %d documents (seed %d) to %s", len(corpus), seed, out)
    return paths


# fairtext synth: generate the synthetic fixture
@log_command
def cmd_synth(args):
    make_synthetic(args.out_dir, args.docs, args.seed)


def register_commands(subparsers):
    p = subparsers.add_parser('synth', help='write a synthetic biased corpus with lexicon, embeddings and config')
    p.add_argument('--out-dir', required=True, help='folder for the fixture files')
    p.add_argument('--docs', type=int, default=2000, help='number of documents')
    p.add_argument('--seed', type=int, default=42, help='random seed')
    p.set_defaults(handler=cmd_synth)
