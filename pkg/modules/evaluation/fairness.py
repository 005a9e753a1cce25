# Fairness and accuracy metrics: F1, ROC-AUC, bias-AUC and disparate impact
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.metrics import f1_score

from fairtext import log_command, save_json
from modules.data.ingestion import LABELS, Corpus, corpus_label_matrix, tokenize
from modules.data.lexicon import BiasLexicon, tag_spans
from modules.errors import (
    AssignmentError, DataError, EmptyCorpusError, InvalidArgumentError, ReportMismatchError,
)

logger = logging.getLogger(__name__)

FAIR_BAND = (0.8, 1.25)
DEFAULT_PAIRS = (("female", "male"), ("asian", "white"), ("african_american", "white"))

# Published LG-TFIDF baseline, printed beside our numbers in every report
REFERENCE = {'model': 'LG-TFIDF', 'b_auc': 0.547, 'f1': 0.585,
             'note': 'the published F1 does not say whether it is micro or macro averaged'}


# --- Subgroups ---

@dataclass(frozen=True)
class SubgroupAssignment:
    """Which identity subgroups each document mentions. Documents not listed mention none."""
    groups: Dict[str, FrozenSet[str]]
    universe: FrozenSet[str] = frozenset()

    def __post_init__(self):
        groups = {doc_id: frozenset(g) for doc_id, g in self.groups.items()}
        universe = frozenset(self.universe) or frozenset().union(*groups.values())
        stray = frozenset().union(*groups.values()) - universe
        if stray:
            raise AssignmentError(f"subgroups {sorted(stray)} are not in the subgroup universe {sorted(universe)}")
        object.__setattr__(self, 'groups', groups)
        object.__setattr__(self, 'universe', universe)

    def of(self, doc_id: str) -> FrozenSet[str]:
        return self.groups.get(doc_id, frozenset())

    def mask(self, subgroup: str, ids: Sequence[str]) -> np.ndarray:
        return np.array([subgroup in self.of(i) for i in ids], dtype=bool)


def load_assignment(path, corpus: Optional[Corpus] = None, universe: Iterable[str] = ()) -> SubgroupAssignment:
    """
    CSV with columns `id,subgroups`, subgroups separated by ';' (an empty cell means none).
    Ids must belong to the corpus when one is given.
    """
    raw = Path(path).read_bytes()
    try:
        frame = pd.read_csv(io.BytesIO(raw), dtype=str, keep_default_na=False, na_filter=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise AssignmentError(f"{path}: {e}") from e
    for column in ('id', 'subgroups'):
        if column not in frame.columns:
            raise AssignmentError(f"{path}: missing column '{column}'")

    groups = {}
    for doc_id, cell in zip(frame['id'], frame['subgroups']):
        if doc_id in groups:
            raise AssignmentError(f"{path}: id '{doc_id}' is listed twice")
        if corpus is not None and doc_id not in corpus:
            raise AssignmentError(f"{path}: id '{doc_id}' is not in the corpus")
        groups[doc_id] = frozenset(g.strip() for g in cell.split(';') if g.strip())
    assignment = SubgroupAssignment(groups, frozenset(universe))
    logger.info("Loaded subgroup assignment for %d documents (%s) from %s",
                len(groups), ', '.join(sorted(assignment.universe)), path)
    return assignment


def assignment_from_tags(corpus: Corpus, lexicon: BiasLexicon) -> SubgroupAssignment:
    """Each document mentions the subgroups of the lexicon spans tagged in it."""
    groups = {}
    for doc in corpus:
        found = {tag.subgroup for tag in tag_spans(doc, lexicon) if tag.subgroup}
        if found:
            groups[doc.id] = frozenset(found)
    return SubgroupAssignment(groups, frozenset(lexicon.subgroups))


# --- Plain metrics ---

def roc_auc(scores, labels) -> float:
    """
    P(score of a positive > score of a negative) + 0.5 * P(equal), exactly,
    through the rank-sum (Mann-Whitney U) form. NaN when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float('nan')
    ranks = rankdata(scores)  # ties share their average rank
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1(scores, labels, threshold: float = 0.5) -> dict:
    """
    Micro, macro and per-label F1 of `scores >= threshold` against the 0/1 labels (both N×6).
    A label with no predictions and no positives scores 1.0.
    """
    if not 0.0 < threshold < 1.0:
        raise InvalidArgumentError(f"threshold must be in (0, 1), got {threshold}")
    y_true = np.asarray(labels, dtype=np.int64).reshape(-1, len(LABELS))
    y_pred = (np.asarray(scores, dtype=np.float64).reshape(-1, len(LABELS)) >= threshold).astype(np.int64)
    per_label = f1_score(y_true, y_pred, average=None, zero_division=1.0)
    return {
        'micro': float(f1_score(y_true, y_pred, average='micro', zero_division=1.0)),
        'macro': float(f1_score(y_true, y_pred, average='macro', zero_division=1.0)),
        'per_label': {name: float(v) for name, v in zip(LABELS, per_label)},
    }


def power_mean(values, p: float) -> float:
    """(mean of x^p)^(1/p); p = 0 is the geometric mean. Any zero with p <= 0 gives 0."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        return float('nan')
    if np.any(x < 0):
        raise InvalidArgumentError("power mean needs non-negative values")
    if p <= 0 and np.any(x == 0):
        return 0.0
    if p == 0:
        return float(np.exp(np.mean(np.log(x))))
    return float(np.mean(x ** p) ** (1.0 / p))


# --- Bias AUC ---

@dataclass(frozen=True)
class SubgroupAUC:
    size: int
    subgroup_auc: float
    bpsn_auc: float
    bnsp_auc: float

    @property
    def defined(self) -> bool:
        return not any(math.isnan(v) for v in (self.subgroup_auc, self.bpsn_auc, self.bnsp_auc))


@dataclass(frozen=True)
class BiasAUCReport:
    overall_auc: float
    subgroups: Dict[str, SubgroupAUC]
    excluded: Tuple[str, ...]
    combined: Optional[float]
    p: float = -5.0
    w: float = 0.25

    def to_json(self) -> dict:
        return {
            'overall_auc': _num(self.overall_auc),
            'combined': _num(self.combined),
            'p': self.p,
            'w': self.w,
            'excluded_subgroups': list(self.excluded),
            'subgroups': {
                name: {'size': s.size, 'subgroup_auc': _num(s.subgroup_auc),
                       'bpsn_auc': _num(s.bpsn_auc), 'bnsp_auc': _num(s.bnsp_auc)}
                for name, s in sorted(self.subgroups.items())
            },
        }


def _binary_view(scores, labels):
    """Biased truth = any label set; biased score = highest label score."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim == 2:
        scores = scores.max(axis=1)
    if labels.ndim == 2:
        labels = labels.any(axis=1)
    return scores, labels.astype(bool)


def bias_auc(scores, labels, ids: Sequence[str], assignment: SubgroupAssignment,
             p: float = -5.0, w: float = 0.25, subgroups: Optional[Iterable[str]] = None) -> BiasAUCReport:
    """
    combined = w * overall AUC + (1 - w) / 3 * (M_p(subgroup AUCs) + M_p(BPSN AUCs) + M_p(BNSP AUCs)).
    Subgroups with any undefined component are left out of the power means.
    """
    if not 0.0 <= w <= 1.0:
        raise InvalidArgumentError(f"w must be in [0, 1], got {w}")
    y_score, y_true = _binary_view(scores, labels)
    overall = roc_auc(y_score, y_true)

    results, excluded = {}, []
    for name in sorted(subgroups if subgroups is not None else assignment.universe):
        in_group = assignment.mask(name, ids)
        sub = roc_auc(y_score[in_group], y_true[in_group])
        bpsn_rows = (~in_group & y_true) | (in_group & ~y_true)
        bnsp_rows = (~in_group & ~y_true) | (in_group & y_true)
        result = SubgroupAUC(int(in_group.sum()), sub,
                             roc_auc(y_score[bpsn_rows], y_true[bpsn_rows]),
                             roc_auc(y_score[bnsp_rows], y_true[bnsp_rows]))
        results[name] = result
        if not result.defined:
            excluded.append(name)
            logger.warning("Subgroup '%s' (%d documents) has an undefined AUC and is left out of the bias AUC",
                           name, result.size)

    included = [results[n] for n in results if n not in excluded]
    combined = None
    if included and not math.isnan(overall):
        means = [power_mean([getattr(r, attr) for r in included], p)
                 for attr in ('subgroup_auc', 'bpsn_auc', 'bnsp_auc')]
        combined = w * overall + (1.0 - w) / 3.0 * sum(means)
    elif not included:
        logger.warning("No subgroup has a defined AUC; the combined bias AUC is undefined")
    return BiasAUCReport(overall, results, tuple(excluded), combined, p, w)


# --- Disparate impact ---

@dataclass(frozen=True)
class PairImpact:
    unprivileged: str
    privileged: str
    di_ratio: Optional[float]         # None when undefined, inf when only the privileged rate is zero
    fair: Optional[bool]
    direction: str
    word_di_ratio: Optional[float] = None

    def to_json(self) -> dict:
        return {
            'unprivileged': self.unprivileged,
            'privileged': self.privileged,
            'di_ratio': _num(self.di_ratio),
            'fair': self.fair,
            'direction': self.direction,
            'word_di_ratio': _num(self.word_di_ratio),
        }


@dataclass(frozen=True)
class DisparateImpactReport:
    pairs: Tuple[PairImpact, ...]
    favorable_rate: Dict[str, Optional[float]]
    mentions: Dict[str, int]
    word_rate: Dict[str, Optional[float]] = field(default_factory=dict)
    threshold: float = 0.5

    def pair(self, unprivileged: str, privileged: str) -> PairImpact:
        for item in self.pairs:
            if (item.unprivileged, item.privileged) == (unprivileged, privileged):
                return item
        raise KeyError((unprivileged, privileged))

    def to_json(self) -> dict:
        return {
            'threshold': self.threshold,
            'fair_band': list(FAIR_BAND),
            'groups': {
                g: {'mentions': self.mentions[g], 'favorable_rate': _num(self.favorable_rate[g]),
                    'untagged_word_rate': _num(self.word_rate.get(g))}
                for g in sorted(self.mentions)
            },
            'pairs': [item.to_json() for item in self.pairs],
        }


def _ratio(unprivileged: Optional[float], privileged: Optional[float]) -> Optional[float]:
    if unprivileged is None or privileged is None:
        return None
    if privileged == 0.0:
        return math.inf if unprivileged > 0.0 else None
    return unprivileged / privileged


def _direction(di: Optional[float]) -> str:
    if di is None:
        return "undefined"
    if di < FAIR_BAND[0]:
        return "favors_privileged"
    if di > FAIR_BAND[1]:
        return "favors_unprivileged"
    return "balanced"


def is_fair(di: Optional[float]) -> Optional[bool]:
    return None if di is None else FAIR_BAND[0] <= di <= FAIR_BAND[1]


def disparate_impact(corpus: Corpus, scores, assignment: SubgroupAssignment, threshold: float = 0.5,
                     pairs: Sequence[Tuple[str, str]] = DEFAULT_PAIRS,
                     lexicon: Optional[BiasLexicon] = None) -> DisparateImpactReport:
    """
    favorable_rate(g) = share of documents mentioning g that the detector does not flag;
    DI = favorable_rate(unprivileged) / favorable_rate(privileged).
    With a lexicon, a word-level ratio is added: the share of untagged tokens in the
    documents mentioning each group.
    """
    if not 0.0 < threshold < 1.0:
        raise InvalidArgumentError(f"threshold must be in (0, 1), got {threshold}")
    scores = np.asarray(scores, dtype=np.float64).reshape(len(corpus), -1)
    favorable = ~(scores >= threshold).any(axis=1)
    ids = corpus.ids

    token_counts = None
    if lexicon is not None:
        token_counts = []
        for doc in corpus:
            total = len(tokenize(doc.text))
            tagged = sum(len(tokenize(doc.text[s.start:s.end])) for s in tag_spans(doc, lexicon))
            token_counts.append((total - tagged, total))

    groups = sorted({g for pair in pairs for g in pair})
    rates, mentions, word_rates = {}, {}, {}
    for g in groups:
        in_group = assignment.mask(g, ids)
        mentions[g] = int(in_group.sum())
        rates[g] = float(favorable[in_group].mean()) if mentions[g] else None
        if mentions[g] == 0:
            logger.warning("Group '%s' is not mentioned by any document; its disparate impact is undefined", g)
        if token_counts is not None:
            untagged = sum(token_counts[i][0] for i in np.flatnonzero(in_group))
            total = sum(token_counts[i][1] for i in np.flatnonzero(in_group))
            word_rates[g] = untagged / total if total else None

    results = []
    for unprivileged, privileged in pairs:
        di = _ratio(rates[unprivileged], rates[privileged])
        if di is None and mentions[unprivileged] and mentions[privileged]:
            logger.warning("Both '%s' and '%s' have no favorable outcomes; disparate impact is undefined",
                           unprivileged, privileged)
        word_di = _ratio(word_rates.get(unprivileged), word_rates.get(privileged)) if token_counts else None
        results.append(PairImpact(unprivileged, privileged, di, is_fair(di), _direction(di), word_di))
    return DisparateImpactReport(tuple(results), rates, mentions, word_rates, threshold)


def compare_reports(before: DisparateImpactReport, after: DisparateImpactReport) -> dict:
    """DI change per pair, flagging pairs that moved into or out of the fair band."""
    keys_before = [(p.unprivileged, p.privileged) for p in before.pairs]
    keys_after = [(p.unprivileged, p.privileged) for p in after.pairs]
    if sorted(keys_before) != sorted(keys_after):
        raise ReportMismatchError(f"cannot compare reports over different pairs: {keys_before} vs {keys_after}")

    rows = []
    for key in keys_before:
        b, a = before.pair(*key), after.pair(*key)
        finite = all(v is not None and math.isfinite(v) for v in (b.di_ratio, a.di_ratio))
        rows.append({
            'unprivileged': key[0],
            'privileged': key[1],
            'di_before': _num(b.di_ratio),
            'di_after': _num(a.di_ratio),
            'delta': a.di_ratio - b.di_ratio if finite else None,
            'entered_fair_band': a.fair is True and b.fair is not True,
            'left_fair_band': b.fair is True and a.fair is not True,
        })
    return {'pairs': rows}


# --- Report ---

def _num(value):
    """JSON-safe number: NaN / undefined become null, infinity becomes "+inf"."""
    if value is None:
        return None
    value = float(value)
    if math.isnan(value):
        return None
    if math.isinf(value):
        return "+inf" if value > 0 else "-inf"
    return value


@dataclass(frozen=True)
class Evaluation:
    documents: int
    threshold: float
    f1: dict
    per_label_auc: Dict[str, float]
    bias_auc: BiasAUCReport
    disparate_impact: DisparateImpactReport

    def to_json(self) -> dict:
        return {
            'documents': self.documents,
            'threshold': self.threshold,
            'f1': self.f1,
            'per_label_auc': {name: _num(v) for name, v in self.per_label_auc.items()},
            'bias_auc': self.bias_auc.to_json(),
            'disparate_impact': self.disparate_impact.to_json(),
            'reference': REFERENCE,
        }


def evaluation_report(corpus: Corpus, scores, assignment: SubgroupAssignment, threshold: float = 0.5,
                      pairs: Sequence[Tuple[str, str]] = DEFAULT_PAIRS, p: float = -5.0, w: float = 0.25,
                      lexicon: Optional[BiasLexicon] = None, text_corpus: Optional[Corpus] = None) -> Evaluation:
    """
    Everything report.json holds. `corpus` supplies the gold labels; `text_corpus`
    (same ids, e.g. the rewritten documents) supplies the text for the word-level ratio.
    """
    if len(corpus) == 0:
        raise EmptyCorpusError("nothing to evaluate: the evaluated documents are empty")
    text_corpus = corpus if text_corpus is None else text_corpus
    if text_corpus.ids != corpus.ids:
        raise ReportMismatchError("text corpus and labelled corpus hold different documents")
    labels = corpus_label_matrix(corpus)
    scores = np.asarray(scores, dtype=np.float64).reshape(len(corpus), len(LABELS))

    f1_scores = f1(scores, labels, threshold)
    auc = bias_auc(scores, labels, corpus.ids, assignment, p, w,
                   subgroups=sorted(assignment.universe | {g for pair in pairs for g in pair}))
    di = disparate_impact(text_corpus, scores, assignment, threshold, pairs, lexicon)

    logger.info("Evaluated %d documents: micro-F1 %.4f, macro-F1 %.4f, b-AUC %s (reference %s: b-AUC %.3f, F1 %.3f)",
                len(corpus), f1_scores['micro'], f1_scores['macro'],
                'undefined' if auc.combined is None else f'{auc.combined:.4f}',
                REFERENCE['model'], REFERENCE['b_auc'], REFERENCE['f1'])
    per_label_auc = {name: roc_auc(scores[:, j], labels[:, j]) for j, name in enumerate(LABELS)}
    return Evaluation(len(corpus), threshold, f1_scores, per_label_auc, auc, di)


# fairtext evaluate: accuracy and fairness report for a scored corpus
@log_command
def cmd_evaluate(args):
    from modules.data.ingestion import load_corpus
    from modules.data.lexicon import load_lexicon
    from modules.detection.detector import import_scores
    from modules.pipeline.config import evaluation_ids, require, resolve_config

    config = resolve_config(args)
    require(config, 'corpus', 'scores', 'lexicon')
    corpus = load_corpus(config.corpus, has_labels=True)
    lexicon = load_lexicon(config.lexicon)
    scores = import_scores(config.scores, corpus)

    if config.assignment:
        assignment = load_assignment(config.assignment, corpus)
    else:
        assignment = assignment_from_tags(corpus, lexicon)

    text_corpus = corpus
    if args.rewritten:
        text_corpus = load_corpus(args.rewritten, has_labels=False)
        if text_corpus.ids != corpus.ids:
            raise DataError(f"{args.rewritten} does not hold the same documents as {config.corpus}")

    ids = evaluation_ids(corpus, config)
    position = {doc_id: row for row, doc_id in enumerate(corpus.ids)}
    rows = [position[i] for i in ids]
    report = evaluation_report(corpus.subset(ids), scores[rows], assignment, config.threshold,
                               config.pairs, config.p, config.w, lexicon, text_corpus.subset(ids))
    save_json(args.out, report.to_json())


def register_commands(subparsers):
    from modules.pipeline.config import add_config_arguments

    p = subparsers.add_parser('evaluate', help='F1, bias AUC and disparate impact for scored documents')
    add_config_arguments(p, 'corpus', 'lexicon', 'scores', 'metrics')
    p.add_argument('--rewritten', help='rewritten corpus whose text feeds the word-level ratio')
    p.add_argument('--out', required=True, help='where to write report.json')
    p.set_defaults(handler=cmd_evaluate)
