import numpy as np
import pytest

from modules.data.ingestion import load_corpus
from modules.data.lexicon import SpanTag, load_lexicon, tag_spans
from modules.data.synthetic import (
    BIAS_RATES, CLUSTERS, GROUPS, make_corpus, make_embeddings, make_synthetic,
)
from modules.errors import InvalidArgumentError
from modules.evaluation.fairness import load_assignment
from modules.mitigation.embeddings import load_embeddings
from modules.mitigation.mitigation import Fallback, MitigationPolicy, suggest


def tag_for(entry):
    return SpanTag(0, len(entry.term), entry.term, entry.category, entry.subgroup)


def test_group_sizes_and_bias_counts_are_exact():
    corpus, groups = make_corpus(500, seed=3)
    assert len(corpus) == 500
    for group in GROUPS:
        members = [d for d in corpus if groups[d.id] == group]
        assert len(members) == 100
        toxic = sum(d.labels[0] for d in members)
        assert toxic == 10 + round(BIAS_RATES[group] * 100)


def test_too_few_documents():
    with pytest.raises(InvalidArgumentError):
        make_corpus(49, seed=1)


def test_fixture_files_are_reproducible(tmp_path):
    first = make_synthetic(tmp_path / 'a', n_docs=200, seed=5)
    second = make_synthetic(tmp_path / 'b', n_docs=200, seed=5)
    for name in first:
        assert first[name].read_bytes() == second[name].read_bytes(), name


def test_fixture_files_load(tmp_path):
    paths = make_synthetic(tmp_path, n_docs=100, seed=2)
    corpus = load_corpus(paths['corpus.csv'])
    lexicon = load_lexicon(paths['lexicon.json'])
    assignment = load_assignment(paths['assignment.csv'], corpus)
    assert len(corpus) == 100
    assert assignment.universe == frozenset(GROUPS)

    # Planted terms only occur in documents of their own group
    for doc in corpus:
        for span in tag_spans(doc, lexicon):
            assert span.subgroup in assignment.of(doc.id)


def test_planted_terms_have_cluster_substitutes(tmp_path):
    paths = make_synthetic(tmp_path, n_docs=100, seed=2)
    store = load_embeddings(paths['embeddings.txt'])
    lexicon = load_lexicon(paths['lexicon.json'])
    policy = MitigationPolicy()

    hysterical = lexicon.lookup("hysterical")
    result = suggest(tag_for(hysterical), store, lexicon, policy)
    assert result.fallback_used is Fallback.NONE
    assert {w for w, _ in result.candidates} == set(CLUSTERS["upset"])

    bossy = suggest(tag_for(lexicon.lookup("bossy")), store, lexicon, policy)
    assert bossy.fallback_used is Fallback.LEXICON_SUBSTITUTE
    assert bossy.replacement == "assertive"


def test_embeddings_put_terms_near_their_cluster():
    store = make_embeddings(seed=0, dimension=50)
    sims = store.similarities("macho")
    nearest = [store.words[i] for i in np.argsort(-sims)[1:3]]
    assert "brutish" in nearest or set(nearest) <= set(CLUSTERS["rough"])


def test_synth_command(run_cli, tmp_path):
    assert run_cli("synth", "--out-dir", tmp_path / 'fx', "--docs", 60, "--seed", 1) == 0
    assert len(load_corpus(tmp_path / 'fx' / 'corpus.csv')) == 60
