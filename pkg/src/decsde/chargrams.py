"""Character n-gram inventory and bag-of-n-grams count vectors."""

from __future__ import annotations

import collections
from dataclasses import dataclass, field

from .numkernel import SparseMatrix
from .segmenter import SubwordVocab


def extract_ngrams(token: str, n_max: int) -> collections.Counter:
    """All contiguous substrings of length 1..n_max, as a multiset.

    Python strings index unicode code points, so an accented letter is one
    symbol.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    grams = collections.Counter()
    L = len(token)
    for n in range(1, min(n_max, L) + 1):
        for i in range(L - n + 1):
            grams[token[i:i + n]] += 1
    return grams


@dataclass
class NGramVocab:
    grams: list
    n_max: int
    min_count: int = 1
    counts: list = None
    ids: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.counts is None:
            self.counts = [0] * len(self.grams)
        self.ids = {g: i for i, g in enumerate(self.grams)}
        if len(self.ids) != len(self.grams):
            raise ValueError("duplicate n-gram")
        for g in self.grams:
            if not 1 <= len(g) <= self.n_max:
                raise ValueError(f"n-gram {g!r} longer than n_max={self.n_max}")

    def __len__(self):
        return len(self.grams)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, (g, c) in enumerate(zip(self.grams, self.counts)):
                fh.write(f"{g}\t{i}\t{c}\n")

    @classmethod
    def load(cls, path, n_max: int | None = None, min_count: int = 1) -> "NGramVocab":
        grams, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                line = line.rstrip("\n")
                if not line:
                    continue
                g, idx, c = line.split("\t")
                if int(idx) != len(grams):
                    raise ValueError(f"{path}:{lineno + 1}: ids must be dense and ordered")
                grams.append(g)
                counts.append(int(c))
        if n_max is None:
            n_max = max((len(g) for g in grams), default=1)
        return cls(grams, n_max, min_count, counts)


def build_ngram_vocab(v: SubwordVocab, n_max: int = 4, min_count: int = 1) -> NGramVocab:
    """Union of n-grams over the non-special tokens of ``v``.

    Grams seen fewer than ``min_count`` times (counting every occurrence in
    every token) are dropped.  Order: count descending, then lexicographic.
    """
    if not 1 <= n_max <= 8:
        raise ValueError("n_max must be in [1, 8]")
    total = collections.Counter()
    for i, tok in enumerate(v.tokens):
        if v.is_special(i):
            continue
        total.update(extract_ngrams(tok, n_max))
    kept = sorted(((g, c) for g, c in total.items() if c >= min_count), key=lambda gc: (-gc[1], gc[0]))
    return NGramVocab([g for g, _ in kept], n_max, min_count, [c for _, c in kept])


def bon_vector(token: str, ngv: NGramVocab) -> list:
    """Sorted ``(gram_id, count)`` pairs for the in-vocabulary n-grams of ``token``."""
    out = []
    for g, c in extract_ngrams(token, ngv.n_max).items():
        idx = ngv.ids.get(g)
        if idx is not None:
            out.append((idx, c))
    out.sort()
    return out


def bon_rows(tokens, ngv: NGramVocab) -> SparseMatrix:
    return SparseMatrix.from_rows([bon_vector(t, ngv) for t in tokens], len(ngv))


def bon_matrix(v: SubwordVocab, ngv: NGramVocab) -> SparseMatrix:
    """V x n count matrix; special-token rows are empty."""
    rows = [[] if v.is_special(i) else bon_vector(tok, ngv) for i, tok in enumerate(v.tokens)]
    return SparseMatrix.from_rows(rows, len(ngv))
