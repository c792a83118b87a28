import collections

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decsde.segmenter import (
    BOUNDARY,
    BPESegmenter,
    MergeTable,
    SubwordVocab,
    VocabError,
    WordSegmenter,
    build_word_vocab,
    decode_ids,
    encode_sentence,
    load_segmenter,
    normalize,
    train_bpe,
)


def naive_bpe(corpus, n_merges):
    """Recount every pair from scratch each round; pick max count, then smallest pair."""
    words = collections.Counter(w for s in corpus for w in s.split())
    segs = {w: [BOUNDARY] + list(w) for w in words}
    merges = []
    for _ in range(n_merges):
        counts = collections.Counter()
        for w, f in words.items():
            s = segs[w]
            for pair in zip(s, s[1:]):
                counts[pair] += f
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        if counts[best] < 2:
            break
        merges.append(best)
        for w in segs:
            s, out, i = segs[w], [], 0
            while i < len(s):
                if i + 1 < len(s) and (s[i], s[i + 1]) == best:
                    out.append(s[i] + s[i + 1])
                    i += 2
                else:
                    out.append(s[i])
                    i += 1
            segs[w] = out
    return merges


def test_first_merge_is_only_repeated_pair():
    mt, _ = train_bpe(["aa aa"], vocab_size=8)
    assert mt.merges[0] == ("a", "a")


def test_frequency_forces_merge_order():
    mt, _ = train_bpe(["ab ab ab", "cd"], vocab_size=20)
    first_cd = min((i for i, m in enumerate(mt.merges) if "c" in m[0] + m[1] or "d" in m[0] + m[1]),
                   default=len(mt.merges))
    assert mt.merges.index(("a", "b")) < first_cd


def test_tie_broken_lexicographically():
    mt, _ = train_bpe(["ab ab cd cd"], vocab_size=12)
    assert mt.merges[0] == ("a", "b")


words_st = st.text(alphabet="abcdeé", min_size=1, max_size=6)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(words_st, min_size=1, max_size=5).map(" ".join), min_size=1, max_size=8),
       st.integers(1, 30))
def test_merges_match_pair_count_oracle(corpus, extra):
    chars = {c for s in corpus for c in s if not c.isspace()} | {BOUNDARY}
    size = 4 + len(chars) + extra
    mt, vocab = train_bpe(corpus, size)
    assert mt.merges == naive_bpe(corpus, len(mt.merges))
    # stopping rule: either full, or no pair repeats
    assert len(vocab) == size or len(naive_bpe(corpus, len(mt.merges) + 1)) == len(mt.merges)


def test_vocab_invariants():
    mt, v = train_bpe(["the cat sat on the mat", "the hat"], 30, languages=["xx", "yy"])
    assert v.tokens[:6] == ["<pad>", "<s>", "</s>", "<unk>", "<2xx>", "<2yy>"]
    assert sorted(v.ids.values()) == list(range(len(v)))
    for left, right in mt.merges:
        assert left + right in v


def test_vocab_size_too_small():
    with pytest.raises(VocabError):
        train_bpe(["abc"], vocab_size=5)


def test_empty_corpus_is_an_error():
    with pytest.raises(VocabError):
        train_bpe([], 100)
    with pytest.raises(VocabError):
        train_bpe(["   "], 100)


def test_whole_words_encode_to_one_token_each():
    corpus = ["lorem ipsum"] * 5
    mt, v = train_bpe(corpus, 100)
    ids = encode_sentence("ipsum lorem ipsum", mt, v)
    assert [v.tokens[i] for i in ids] == ["▁ipsum", "▁lorem", "▁ipsum"]


def test_empty_sentence():
    mt, v = train_bpe(["a b"], 10)
    assert encode_sentence("", mt, v) == []


def test_unknown_characters_map_to_unk():
    mt, v = train_bpe(["ab ab"], 10)
    ids = encode_sentence("az", mt, v)
    assert v.unk in ids
    assert all(i < len(v) for i in ids)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(words_st, min_size=1, max_size=5).map(lambda ws: "  ".join(ws) + " "),
                min_size=1, max_size=6), st.integers(0, 40))
def test_round_trip_on_corpus(corpus, extra):
    chars = {c for s in corpus for c in s if not c.isspace()} | {BOUNDARY}
    mt, v = train_bpe(corpus, 4 + len(chars) + 1 + extra)
    seg = BPESegmenter(mt, v)
    for s in corpus:
        ids = seg.encode(s)
        assert all(0 <= i < len(v) for i in ids)
        assert seg.decode(ids) == normalize(s)
        assert decode_ids(ids, v) == normalize(s)


def test_training_is_deterministic():
    corpus = ["ab abc bca cab", "abc abc cc"]
    assert train_bpe(corpus, 15) == train_bpe(corpus, 15)


def test_word_vocab_top1():
    v = build_word_vocab([["a a b"]], 1)
    assert v.tokens == ["<pad>", "<s>", "</s>", "<unk>", "a"]


def test_word_vocab_keeps_everything_when_k_large():
    v = build_word_vocab([["a a b", "c"]], 10)
    assert set(v.tokens[4:]) == {"a", "b", "c"}


def test_word_vocab_frequency_order_matches_counting_oracle():
    corpora = [["x y z y", "z z w"], ["w q y"]]
    counts = {}
    for c in corpora:
        for s in c:
            for w in s.split():
                counts[w] = counts.get(w, 0) + 1
    expected = sorted(counts, key=lambda w: (-counts[w], w))
    v = build_word_vocab(corpora, 3)
    assert v.tokens[4:] == expected[:3]
    seg = WordSegmenter(v)
    assert seg.encode("q z") == [v.unk, v["z"]]


def test_word_vocab_rejects_zero_k():
    with pytest.raises(VocabError):
        build_word_vocab([["a"]], 0)


def test_files_round_trip(tmp_path):
    mt, v = train_bpe(["olá ola olá", "hello"], 25, languages=["glg"])
    v.save(tmp_path / "v.tsv")
    mt.save(tmp_path / "m.txt")
    lines = (tmp_path / "v.tsv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "<pad>\t0\t0"
    v2 = SubwordVocab.load(tmp_path / "v.tsv")
    mt2 = MergeTable.load(tmp_path / "m.txt")
    assert v2.tokens == v.tokens and v2.counts == v.counts and v2.n_specials == v.n_specials
    assert mt2.merges == mt.merges
    seg = load_segmenter(tmp_path / "v.tsv", tmp_path / "m.txt")
    assert seg.encode("olá hello") == BPESegmenter(mt, v).encode("olá hello")


def test_vocab_file_requires_specials_first(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("<pad>\t0\t0\n<s>\t1\t0\n</s>\t2\t0\n<unk>\t3\t0\nab\t4\t3\n<2xx>\t5\t0\n", encoding="utf-8")
    with pytest.raises(VocabError):
        SubwordVocab.load(p)
