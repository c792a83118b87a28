import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decsde.evalbench import (
    BLEU_SIGNATURE,
    WordPairSet,
    bleu_corpus,
    edit_distance,
    embedding_mrr,
    extract_word_pairs,
    frequency_bucket,
    make_synthetic_pair,
    mean_reciprocal_rank,
    mrr_gain,
    rare_word_f1,
    retrieval_ranks,
    tokenize_13a,
    write_csv,
    write_gnuplot,
)


def test_identical_corpus_scores_100():
    refs = ["the cat sat on the mat .", "a dog barked loudly at night"]
    assert bleu_corpus(refs, refs).score == pytest.approx(100.0)


def test_empty_hypotheses_score_zero():
    assert bleu_corpus(["", ""], ["a b c", "d e"]).score == 0.0


def test_hand_computed_case():
    # 1-gram 3/4, 2-gram 2/3, 3-gram 1/2, 4-gram 0/1 -> smoothed to 1/(2*1)
    expected = 100 * (0.75 * (2 / 3) * 0.5 * 0.5) ** 0.25
    rep = bleu_corpus(["a b c d"], ["a b c e"])
    assert rep.score == pytest.approx(expected, abs=1e-4)
    assert rep.score == pytest.approx(59.46035575, abs=1e-4)
    assert rep.brevity_penalty == 1.0


def test_brevity_penalty():
    rep = bleu_corpus(["a b c"], ["a b c d e f"])
    assert rep.brevity_penalty == pytest.approx(math.exp(1 - 6 / 3))


def test_signature_is_pinned():
    assert BLEU_SIGNATURE == "nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp"


def test_13a_splits_punctuation_not_decimals():
    assert tokenize_13a("Hello, world! It costs 3.50.") == "Hello , world ! It costs 3.50 ."


def test_length_mismatch_is_an_error():
    with pytest.raises(ValueError):
        bleu_corpus(["a"], [])


sent = st.lists(st.sampled_from(list("abcde")), min_size=0, max_size=8).map(" ".join)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(sent, sent), min_size=1, max_size=6), st.randoms(use_true_random=False))
def test_bleu_is_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = bleu_corpus([h for h, _ in pairs], [r for _, r in pairs]).score
    b = bleu_corpus([h for h, _ in shuffled], [r for _, r in shuffled]).score
    assert a == pytest.approx(b, abs=1e-9)
    assert 0.0 <= a <= 100.0 + 1e-9


def test_edit_distance_examples():
    assert edit_distance("kitten", "sitting") == 3
    assert edit_distance("ola", "olá") == 1
    assert edit_distance("", "abc") == 3


@settings(max_examples=50, deadline=None)
@given(st.text(alphabet="abc", max_size=7), st.text(alphabet="abc", max_size=7))
def test_edit_distance_symmetric_and_bounded(a, b):
    d = edit_distance(a, b)
    assert d == edit_distance(b, a)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))


def test_pair_set_checks_distances():
    with pytest.raises(ValueError):
        WordPairSet([("ola", "olá", 2)])


def test_mrr_values():
    assert mean_reciprocal_rank([1, 1, 1]) == 1.0
    assert mean_reciprocal_rank([1, 2]) == 0.75


def test_retrieval_matches_exhaustive_sort():
    rng = np.random.default_rng(4)
    C = rng.normal(size=(5, 3))
    Q = rng.normal(size=(5, 3))
    gold = [3, 0, 4, 1, 2]
    ranks = retrieval_ranks(Q, C, gold)
    for qi, g in enumerate(gold):
        sims = [float(Q[qi] @ C[j] / (np.linalg.norm(Q[qi]) * np.linalg.norm(C[j]))) for j in range(5)]
        order = sorted(range(5), key=lambda j: -sims[j])
        assert ranks[qi] == order.index(g) + 1
    # rescaling does not change cosine ranking
    np.testing.assert_array_equal(retrieval_ranks(3.0 * Q, 0.5 * C, gold), ranks)
    mrr = mean_reciprocal_rank(ranks)
    assert 0 < mrr <= 1


def test_embedding_mrr_perfect_and_gain():
    words = {"ola": [1, 0, 0], "casa": [0, 1, 0], "mar": [0, 0, 1]}
    lrl = {"olá": [1, 0.1, 0], "cása": [0, 1, 0.1]}
    pairs = WordPairSet([("ola", "olá", 1), ("casa", "cása", 1)])
    emb = lambda table: (lambda ws: np.array([table[w] for w in ws], dtype=float))
    good = embedding_mrr(pairs, emb(lrl), emb(words), list(words))
    assert good == {1: 1.0}
    bad_lrl = {"olá": [0, 0, 1], "cása": [0, 0, 1]}
    bad = embedding_mrr(pairs, emb(bad_lrl), emb(words), list(words))
    assert mrr_gain(good, bad)[1] > 0


def test_extract_word_pairs_finds_closest():
    hrl = {"ola": 10, "casa": 8, "zzzzzzzz": 5}
    lrl = {"olá": 4, "casá": 3, "qqqqqqqqqqqqqq": 2}
    ps = extract_word_pairs(hrl, lrl)
    assert sorted(ps.pairs) == [("casa", "casá", 1), ("ola", "olá", 1)]


def test_frequency_buckets():
    assert frequency_bucket(0) == "0"
    assert frequency_bucket(1) == "[1,2)"
    assert frequency_bucket(3) == "[2,4)"
    assert frequency_bucket(4) == "[4,8)"


def test_rare_word_f1_trivial_cases():
    freq = {"a": 1, "b": 5}
    f = rare_word_f1(["a b", "b"], ["a b", "b"], freq)
    assert all(v == 1.0 for v in f.values())
    f = rare_word_f1(["a a"], ["b"], freq)
    assert all(v == 0.0 for v in f.values())


def test_rare_word_f1_hand_count():
    freq = {"x": 1, "y": 2, "z": 3}
    hyps = ["x x y", "z q", "y"]
    refs = ["x y y", "z z", "q"]
    f = rare_word_f1(hyps, refs, freq, detail=True)
    # [1,2): x hyp 2, ref 1, match 1
    assert (f["[1,2)"].hyp_count, f["[1,2)"].ref_count) == (2, 1)
    assert f["[1,2)"].f1 == pytest.approx(2 * 0.5 * 1.0 / 1.5)
    # [2,4): y and z; hyp y1+z1+y1=3, ref y2+z2=4, match y1+z1+0=2
    assert f["[2,4)"].f1 == pytest.approx(2 * (2 / 3) * 0.5 / (2 / 3 + 0.5))
    # unseen: q; hyp 1, ref 1, match 0 (different sentences)
    assert f["0"].f1 == 0.0


def test_synthetic_rate_zero_is_identical():
    pair = make_synthetic_pair(0, root_vocab_size=100, corruption_rate=0.0, n_hrl=50, n_lrl=20)
    assert pair.hrl_words == pair.lrl_words
    assert pair.mean_edit_distance() == 0.0


def test_synthetic_is_seeded():
    a = make_synthetic_pair(3, root_vocab_size=80, n_hrl=40, n_lrl=10)
    b = make_synthetic_pair(3, root_vocab_size=80, n_hrl=40, n_lrl=10)
    assert a.hrl["train"] == b.hrl["train"] and a.lrl["test"] == b.lrl["test"]
    c = make_synthetic_pair(4, root_vocab_size=80, n_hrl=40, n_lrl=10)
    assert a.hrl["train"] != c.hrl["train"]


@pytest.mark.parametrize("rate", [0.3, 0.6, 1.0, 1.5])
def test_synthetic_mean_edit_distance_matches_rate(rate):
    pair = make_synthetic_pair(1, root_vocab_size=1000, corruption_rate=rate, n_hrl=10, n_lrl=10)
    assert abs(pair.mean_edit_distance() - rate) <= 0.1 * rate


def test_synthetic_sizes_and_alignment():
    pair = make_synthetic_pair(0, root_vocab_size=200, n_hrl=300, n_lrl=40, n_dev=10, n_test=20)
    assert [len(pair.hrl[s]) for s in ("train", "dev", "test")] == [300, 10, 20]
    assert len(pair.lrl["train"]) == 40
    for s, t in zip(pair.lrl["train"].src, pair.lrl["train"].tgt):
        assert len(s.split()) == len(t.split())
    lex = dict(zip(pair.hrl_words, pair.lrl_words))
    for pc_h in [pair.hrl["train"]]:
        for t in pc_h.tgt[:20]:
            assert all(w in lex for w in t.split())


def test_reports(tmp_path):
    write_csv(tmp_path / "a.csv", [{"x": 1, "y": 2}])
    assert (tmp_path / "a.csv").read_text().splitlines() == ["x,y", "1,2"]
    write_gnuplot(tmp_path / "a.dat", ["d", "gain"], [(1, 0.5), (2, 0.25)])
    assert (tmp_path / "a.dat").read_text().splitlines() == ["# d gain", "1 0.5", "2 0.25"]


def test_hand_case_over_all_orderings_of_corpus():
    hyps = ["a b c d", "x y", "p q r s t"]
    refs = ["a b c e", "x y", "p q r s"]
    scores = {round(bleu_corpus([hyps[i] for i in p], [refs[i] for i in p]).score, 10)
              for p in itertools.permutations(range(3))}
    assert len(scores) == 1
