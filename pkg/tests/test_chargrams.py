import collections

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decsde.chargrams import (
    NGramVocab,
    bon_matrix,
    bon_vector,
    build_ngram_vocab,
    extract_ngrams,
)
from decsde.segmenter import SubwordVocab, special_tokens


def brute_substrings(token, n_max):
    out = collections.Counter()
    for i in range(len(token)):
        for j in range(i + 1, min(i + n_max, len(token)) + 1):
            out[token[i:j]] += 1
    return out


def vocab_of(*tokens):
    return SubwordVocab(special_tokens() + list(tokens))


def test_extract_ab():
    assert extract_ngrams("ab", 2) == {"a": 1, "b": 1, "ab": 1}


def test_extract_repeated_char():
    assert extract_ngrams("aaa", 1) == {"a": 3}


def test_extract_accented_token_counts_code_points():
    grams = extract_ngrams("▁olá", 3)
    oracle = brute_substrings("▁olá", 3)
    assert grams == oracle
    assert sum(grams.values()) == 9
    assert "á" in grams and "lá" in grams


def test_extract_empty_token():
    assert extract_ngrams("", 4) == {}


@settings(max_examples=50, deadline=None)
@given(st.text(alphabet="ab▁éç", max_size=9), st.integers(1, 6))
def test_extract_matches_brute_force(token, n_max):
    assert extract_ngrams(token, n_max) == brute_substrings(token, n_max)


def test_build_vocab_single_token():
    ngv = build_ngram_vocab(vocab_of("ab"), 2, 1)
    assert set(ngv.grams) == {"a", "b", "ab"}


def test_build_vocab_min_count():
    ngv = build_ngram_vocab(vocab_of("ab", "ac"), 2, 2)
    assert ngv.grams == ["a"]


def test_specials_contribute_nothing():
    ngv = build_ngram_vocab(vocab_of(), 3)
    assert len(ngv) == 0


@settings(max_examples=30, deadline=None)
@given(st.sets(st.text(alphabet="abcé▁", min_size=1, max_size=6), max_size=10), st.integers(1, 5),
       st.integers(1, 3))
def test_build_vocab_matches_set_union_oracle(tokens, n_max, min_count):
    v = vocab_of(*sorted(tokens))
    total = collections.Counter()
    for t in tokens:
        total += brute_substrings(t, n_max)
    expected = sorted((g for g, c in total.items() if c >= min_count), key=lambda g: (-total[g], g))
    ngv = build_ngram_vocab(v, n_max, min_count)
    assert ngv.grams == expected
    assert ngv.ids == {g: i for i, g in enumerate(expected)}
    assert build_ngram_vocab(v, n_max, min_count).grams == ngv.grams


def test_n_max_bounds():
    with pytest.raises(ValueError):
        build_ngram_vocab(vocab_of("a"), 9)
    with pytest.raises(ValueError):
        build_ngram_vocab(vocab_of("a"), 0)


def fixed_vocab():
    return NGramVocab(["a", "b", "ab"], n_max=2)


def test_bon_vector_ab():
    assert bon_vector("ab", fixed_vocab()) == [(0, 1), (1, 1), (2, 1)]


def test_bon_vector_all_oov():
    assert bon_vector("cc", fixed_vocab()) == []


def test_bon_vector_counts():
    assert bon_vector("aab", fixed_vocab()) == [(0, 2), (1, 1), (2, 1)]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.text(alphabet="abcd▁", min_size=1, max_size=7), min_size=1, max_size=8, unique=True),
       st.integers(1, 4), st.integers(1, 3))
def test_bon_counts_bounded_by_substring_count(tokens, n_max, min_count):
    v = vocab_of(*tokens)
    ngv = build_ngram_vocab(v, n_max, min_count)
    for t in tokens:
        vec = bon_vector(t, ngv)
        n_sub = sum(brute_substrings(t, n_max).values())
        total = sum(c for _, c in vec)
        assert total <= n_sub
        if min_count == 1:
            assert total == n_sub
        ids = [g for g, _ in vec]
        assert ids == sorted(set(ids))


def test_bon_matrix_rows():
    v = vocab_of("ab", "ba")
    ngv = build_ngram_vocab(v, 2)
    m = bon_matrix(v, ngv)
    assert m.rows == len(v)
    assert m.row(v.pad) == []
    for i, t in enumerate(v.tokens):
        if not v.is_special(i):
            assert m.row(i) == bon_vector(t, ngv)


def test_ngram_file_round_trip(tmp_path):
    ngv = build_ngram_vocab(vocab_of("▁olá", "▁ola"), 3)
    ngv.save(tmp_path / "g.tsv")
    back = NGramVocab.load(tmp_path / "g.tsv", n_max=3)
    assert back.grams == ngv.grams and back.counts == ngv.counts
