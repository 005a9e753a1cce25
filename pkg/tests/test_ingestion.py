import random

import numpy as np
import pytest

from modules.data.ingestion import (
    LABELS, Corpus, Document, corpus_label_matrix, load_corpus, split_corpus, tokenize, write_corpus,
)
from modules.errors import (
    CorpusParseError, CorpusSchemaError, DuplicateIdError, EmptyCorpusError, InvalidArgumentError,
    LabelValueError, UnlabeledDocumentError,
)

HEADER = "id,comment_text," + ",".join(LABELS) + "\n"


def write(tmp_path, text, name='corpus.csv'):
    path = tmp_path / name
    path.write_bytes(text.encode('utf-8'))
    return path


def scan_tokens(text):
    """Character-class scan: letter runs, joined across a single ' ’ or - between letters."""
    tokens, i, n = [], 0, len(text)
    while i < n:
        if not text[i].isalpha():
            i += 1
            continue
        j = i
        while j < n and text[j].isalpha():
            j += 1
        while j + 1 < n and text[j] in "'’-" and text[j + 1].isalpha():
            j += 1
            while j < n and text[j].isalpha():
                j += 1
        tokens.append((text[i:j], i, j))
        i = j
    return tokens


# --- load_corpus ---

def test_load_single_row(tmp_path):
    path = write(tmp_path, HEADER + 'abc123,"you are an idiot",1,0,1,0,1,0\n')
    corpus = load_corpus(path)
    assert len(corpus) == 1
    assert corpus[0] == Document("abc123", "you are an idiot", (1, 0, 1, 0, 1, 0))


def test_header_only_gives_empty_corpus(tmp_path):
    corpus = load_corpus(write(tmp_path, HEADER))
    assert len(corpus) == 0


def test_quoted_fields_with_commas_and_newlines(fixtures_dir):
    corpus = load_corpus(fixtures_dir / 'tiny_corpus.csv')
    assert corpus.ids == ['t1', 't2', 't3', 't4']
    assert corpus.get('t1').text == "She was Hysterical, honestly."
    assert corpus.get('t3').text == "Multi-line\ncomment about the café"
    assert corpus.get('t2').labels == (1, 0, 0, 0, 1, 0)


def test_label_sums_match_a_hand_count(fixtures_dir):
    corpus = load_corpus(fixtures_dir / 'clean_corpus.csv')
    sums = dict(zip(LABELS, corpus_label_matrix(corpus).sum(axis=0).tolist()))
    assert len(corpus) == 16
    assert sums == {'toxic': 7, 'severe_toxic': 0, 'obscene': 1, 'threat': 1, 'insult': 6, 'identity_hate': 0}


def test_unlabeled_load(tmp_path):
    corpus = load_corpus(write(tmp_path, 'id,comment_text\nx,hello there\n'), has_labels=False)
    assert corpus[0].labels is None
    with pytest.raises(UnlabeledDocumentError):
        corpus_label_matrix(corpus)


def test_missing_column_is_named(tmp_path):
    text = HEADER.replace(',threat', '') + 'a,hi,0,0,0,0,0\n'
    with pytest.raises(CorpusSchemaError) as exc:
        load_corpus(write(tmp_path, text))
    assert exc.value.column == 'threat'


def test_missing_text_column_even_without_labels(tmp_path):
    with pytest.raises(CorpusSchemaError) as exc:
        load_corpus(write(tmp_path, 'id,text\na,hi\n'), has_labels=False)
    assert exc.value.column == 'comment_text'


def test_non_binary_label_reports_row(tmp_path):
    text = HEADER + 'a,fine,0,0,0,0,0,0\nb,bad,0,2,0,0,0,0\n'
    with pytest.raises(LabelValueError) as exc:
        load_corpus(write(tmp_path, text))
    assert exc.value.row == 1
    assert exc.value.column == 'severe_toxic'
    assert exc.value.value == '2'


def test_empty_label_is_rejected_not_coerced(tmp_path):
    with pytest.raises(LabelValueError):
        load_corpus(write(tmp_path, HEADER + 'a,text,,0,0,0,0,0\n'))


def test_malformed_quoting_reports_byte_offset(tmp_path):
    text = HEADER + 'a,ok,0,0,0,0,0,0\nb,"broken "quote" here,0,0,0,0,0,0\nc,"never closed,0,0,0,0,0,0\n'
    with pytest.raises(CorpusParseError) as exc:
        load_corpus(write(tmp_path, text))
    assert 0 <= exc.value.byte_offset <= len(text.encode('utf-8'))


def test_duplicate_ids_rejected(tmp_path):
    with pytest.raises(DuplicateIdError):
        load_corpus(write(tmp_path, HEADER + 'a,x,0,0,0,0,0,0\na,y,0,0,0,0,0,0\n'))


def test_write_then_load_keeps_text_exactly(tmp_path, fixtures_dir):
    corpus = load_corpus(fixtures_dir / 'tiny_corpus.csv')
    out = tmp_path / 'again.csv'
    write_corpus(corpus, out)
    assert load_corpus(out) == corpus


def test_subset_keeps_requested_order(fixtures_dir):
    corpus = load_corpus(fixtures_dir / 'tiny_corpus.csv')
    assert corpus.subset(['t3', 't1']).ids == ['t3', 't1']


# --- tokenize ---

def test_tokenize_examples():
    assert tokenize("") == []
    assert [(t.text, t.start, t.end) for t in tokenize("He's rude.")] == [("He's", 0, 4), ("rude", 5, 9)]
    assert [t.text for t in tokenize("able-bodied, don't -stop- 42x")] == ["able-bodied", "don't", "stop", "x"]


def test_tokenize_matches_character_scan_on_random_ascii():
    rng = random.Random(1234)
    alphabet = "abcXYZ '-.,!?0123456789\t\n"
    for _ in range(1000):
        text = ''.join(rng.choice(alphabet) for _ in range(rng.randint(0, 40)))
        assert [(t.text, t.start, t.end) for t in tokenize(text)] == scan_tokens(text)


def test_token_offsets_slice_back_on_unicode():
    rng = random.Random(99)
    alphabet = "aéßΩжあ中 '’-.,😀́"
    for _ in range(500):
        text = ''.join(rng.choice(alphabet) for _ in range(rng.randint(0, 30)))
        previous_end = 0
        for token in tokenize(text):
            assert 0 <= token.start < token.end <= len(text)
            assert token.start >= previous_end
            assert text[token.start:token.end] == token.text
            previous_end = token.end


# --- split_corpus ---

def make_corpus(n):
    return Corpus(tuple(Document(f"d{i}", f"text {i}", (0,) * 6) for i in range(n)))


def test_split_sizes_and_union():
    corpus = make_corpus(10)
    train, test = split_corpus(corpus, 0.8, 42)
    assert (len(train), len(test)) == (8, 2)
    assert sorted(train.ids + test.ids) == sorted(corpus.ids)
    assert not set(train.ids) & set(test.ids)


def test_split_keeps_corpus_order_and_is_deterministic():
    corpus = make_corpus(25)
    first = split_corpus(corpus, 0.6, 7)
    second = split_corpus(corpus, 0.6, 7)
    assert first == second
    positions = [corpus.ids.index(i) for i in first[0].ids]
    assert positions == sorted(positions)


def test_different_seeds_give_different_splits():
    corpus = make_corpus(100)
    assert set(split_corpus(corpus, 0.5, 1)[0].ids) != set(split_corpus(corpus, 0.5, 2)[0].ids)


def test_split_size_within_one_of_fraction():
    for n in (1, 3, 7, 10, 33):
        for fraction in (0.1, 0.5, 0.75, 0.9):
            train, _ = split_corpus(make_corpus(n), fraction, 0)
            assert abs(len(train) - fraction * n) <= 1


def test_split_errors():
    with pytest.raises(EmptyCorpusError):
        split_corpus(Corpus(()), 0.5, 1)
    with pytest.raises(InvalidArgumentError):
        split_corpus(make_corpus(3), 1.0, 1)


def test_label_matrix_shape():
    matrix = corpus_label_matrix(make_corpus(4))
    assert matrix.shape == (4, 6)
    assert matrix.dtype == np.int64
