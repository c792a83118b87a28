"""Subword and word vocabularies.

Target sentences are split into subwords with a deterministic byte-pair
style merge table learned on the joint target corpus.  Word-initial symbols
carry the boundary marker ``▁`` so that prefixes and continuations are
distinguishable; the marker also takes part in character n-grams.
"""

from __future__ import annotations

import collections
import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BOUNDARY = "▁"
PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
BASE_SPECIALS = (PAD, BOS, EOS, UNK)


class VocabError(ValueError):
    pass


def flag_token(lang: str) -> str:
    return f"<2{lang}>"


def _is_flag(token: str) -> bool:
    return token.startswith("<2") and token.endswith(">") and len(token) > 3


def special_tokens(languages: Sequence[str] = ()) -> list:
    return list(BASE_SPECIALS) + [flag_token(code) for code in languages]


@dataclass
class SubwordVocab:
    tokens: list
    counts: list = None
    n_specials: int | None = None  # inferred from the leading special tokens when omitted
    ids: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.counts is None:
            self.counts = [0] * len(self.tokens)
        self.ids = {}
        for i, t in enumerate(self.tokens):
            if t in self.ids:
                raise VocabError(f"duplicate token {t!r}")
            if not t:
                raise VocabError("empty token")
            self.ids[t] = i
        if tuple(self.tokens[:4]) != BASE_SPECIALS:
            raise VocabError("vocabulary must start with <pad> <s> </s> <unk>")
        if self.n_specials is None:
            n = 4
            while n < len(self.tokens) and _is_flag(self.tokens[n]):
                n += 1
            self.n_specials = n

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.ids

    def __getitem__(self, token) -> int:
        return self.ids[token]

    def get(self, token, default=None):
        return self.ids.get(token, default)

    @property
    def pad(self):
        return 0

    @property
    def bos(self):
        return 1

    @property
    def eos(self):
        return 2

    @property
    def unk(self):
        return 3

    @property
    def specials(self) -> list:
        return self.tokens[: self.n_specials]

    def is_special(self, idx: int) -> bool:
        return idx < self.n_specials

    def flag_id(self, lang: str) -> int:
        try:
            return self.ids[flag_token(lang)]
        except KeyError:
            raise VocabError(f"no language flag for {lang!r}") from None

    def flag_ids(self) -> list:
        return [i for i in range(4, self.n_specials)]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, (tok, c) in enumerate(zip(self.tokens, self.counts)):
                fh.write(f"{tok}\t{i}\t{c}\n")

    @classmethod
    def load(cls, path) -> "SubwordVocab":
        tokens, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise VocabError(f"{path}:{lineno + 1}: expected token<TAB>id<TAB>count")
                tok, idx, c = parts
                if int(idx) != len(tokens):
                    raise VocabError(f"{path}:{lineno + 1}: ids must be dense and ordered")
                tokens.append(tok)
                counts.append(int(c))
        n_specials = sum(1 for t in tokens if t.startswith("<") and t.endswith(">") and len(t) > 2)
        vocab = cls(tokens, counts, n_specials=n_specials)
        if any(vocab.is_special(i) != _looks_special(t) for i, t in enumerate(tokens)):
            raise VocabError(f"{path}: special tokens must occupy the lowest ids")
        return vocab


def _looks_special(tok: str) -> bool:
    return tok.startswith("<") and tok.endswith(">") and len(tok) > 2


@dataclass
class MergeTable:
    merges: list

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}

    def __len__(self):
        return len(self.merges)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for left, right in self.merges:
                fh.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path) -> "MergeTable":
        merges = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(" ")
                if len(parts) != 2:
                    raise VocabError(f"{path}:{lineno + 1}: expected 'left right'")
                merges.append((parts[0], parts[1]))
        return cls(merges)


def normalize(s: str) -> str:
    return " ".join(s.split())


def _word_symbols(word: str, marker: str) -> tuple:
    return (marker,) + tuple(word)


def train_bpe(corpus: Iterable[str], vocab_size: int, boundary_marker: str = BOUNDARY,
              languages: Sequence[str] = ()) -> tuple:
    """Learn ``(MergeTable, SubwordVocab)`` by greedy most-frequent-pair merging.

    Ties between equally frequent pairs go to the lexicographically smaller
    ``(left, right)``.  Merging stops at ``vocab_size`` tokens or when no pair
    occurs at least twice.
    """
    word_freq = collections.Counter()
    for sent in corpus:
        word_freq.update(sent.split())
    if not word_freq:
        raise VocabError("cannot train a vocabulary on an empty corpus")

    specials = special_tokens(languages)
    words = sorted(word_freq)
    freqs = [word_freq[w] for w in words]
    seqs = [list(_word_symbols(w, boundary_marker)) for w in words]

    sym_count = collections.Counter()
    for seq, f in zip(seqs, freqs):
        for s in seq:
            sym_count[s] += f
    chars = sorted(sym_count)
    if vocab_size <= len(chars) + len(specials):
        raise VocabError(
            f"vocab_size {vocab_size} must exceed {len(chars)} characters + {len(specials)} specials"
        )

    tokens = specials + chars
    counts = [0] * len(specials) + [sym_count[c] for c in chars]
    known = set(tokens)

    pair_count = collections.Counter()
    where = collections.defaultdict(set)
    for i, (seq, f) in enumerate(zip(seqs, freqs)):
        for a, b in zip(seq, seq[1:]):
            pair_count[a, b] += f
            where[a, b].add(i)

    heap = [(-c, pair) for pair, c in pair_count.items()]
    heapq.heapify(heap)
    merges = []
    while len(tokens) < vocab_size:
        # lazy deletion: skip heap entries whose count is out of date
        while heap and pair_count.get(heap[0][1], 0) != -heap[0][0]:
            heapq.heappop(heap)
        if not heap or -heap[0][0] < 2:
            break
        neg, pair = heapq.heappop(heap)
        merges.append(pair)
        new = pair[0] + pair[1]
        if new not in known:
            known.add(new)
            tokens.append(new)
            counts.append(-neg)
        touched = set()
        for i in sorted(where.pop(pair, ())):
            seq, f = seqs[i], freqs[i]
            for a, b in zip(seq, seq[1:]):
                pair_count[a, b] -= f
                if pair_count[a, b] <= 0:
                    del pair_count[a, b]
                where[a, b].discard(i)
                touched.add((a, b))
            seq = _apply_pair(seq, pair, new)
            seqs[i] = seq
            for a, b in zip(seq, seq[1:]):
                pair_count[a, b] += f
                where[a, b].add(i)
                touched.add((a, b))
        for p in touched:
            c = pair_count.get(p)
            if c:
                heapq.heappush(heap, (-c, p))
    return MergeTable(merges), SubwordVocab(tokens, counts, n_specials=len(specials))


def _apply_pair(seq: list, pair: tuple, new: str) -> list:
    out, i = [], 0
    while i < len(seq):
        if i + 1 < len(seq) and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(new)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


class BPESegmenter:
    """Applies a merge table to text.  Pure apart from a per-word cache."""

    def __init__(self, merges: MergeTable, vocab: SubwordVocab, boundary_marker: str = BOUNDARY):
        self.merges = merges
        self.vocab = vocab
        self.marker = boundary_marker
        self._cache = {}

    def segment_word(self, word: str) -> tuple:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        seq = list(_word_symbols(word, self.marker))
        ranks = self.merges.ranks
        while len(seq) > 1:
            best, best_rank = None, None
            for pair in zip(seq, seq[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pair, r
            if best is None:
                break
            seq = _apply_pair(seq, best, best[0] + best[1])
        out = tuple(seq)
        self._cache[word] = out
        return out

    def pieces(self, s: str) -> list:
        return [p for w in s.split() for p in self.segment_word(w)]

    def encode(self, s: str) -> list:
        unk = self.vocab.unk
        return [self.vocab.get(p, unk) for p in self.pieces(s)]

    def decode(self, ids: Sequence[int]) -> str:
        parts = []
        for i in ids:
            if self.vocab.is_special(i):
                if i == self.vocab.unk:
                    parts.append(UNK)
                continue
            parts.append(self.vocab.tokens[i])
        return normalize("".join(parts).replace(self.marker, " "))


def encode_sentence(s: str, mt: MergeTable, v: SubwordVocab, boundary_marker: str = BOUNDARY) -> list:
    return BPESegmenter(mt, v, boundary_marker).encode(s)


def decode_ids(ids: Sequence[int], v: SubwordVocab, boundary_marker: str = BOUNDARY) -> str:
    return BPESegmenter(MergeTable([]), v, boundary_marker).decode(ids)


def build_word_vocab(corpora: Iterable[Iterable[str]], top_k: int, languages: Sequence[str] = ()) -> SubwordVocab:
    """Most frequent whitespace tokens, ties broken lexicographically."""
    if top_k < 1:
        raise VocabError("top_k must be at least 1")
    freq = collections.Counter()
    for corpus in corpora:
        for sent in corpus:
            freq.update(sent.split())
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    specials = special_tokens(languages)
    tokens = specials + [w for w, _ in ranked]
    counts = [0] * len(specials) + [c for _, c in ranked]
    return SubwordVocab(tokens, counts, n_specials=len(specials))


class WordSegmenter:
    """Whitespace tokenizer over a fixed word vocabulary; OOV words map to UNK."""

    def __init__(self, vocab: SubwordVocab):
        self.vocab = vocab

    def pieces(self, s: str) -> list:
        return s.split()

    def encode(self, s: str) -> list:
        unk = self.vocab.unk
        return [self.vocab.get(w, unk) for w in s.split()]

    def decode(self, ids: Sequence[int]) -> str:
        out = []
        for i in ids:
            if self.vocab.is_special(i):
                if i == self.vocab.unk:
                    out.append(UNK)
                continue
            out.append(self.vocab.tokens[i])
        return " ".join(out)


def load_segmenter(vocab_path, merges_path=None, boundary_marker: str = BOUNDARY):
    """Load a BPE segmenter, or a word segmenter when no merge file is given."""
    vocab = SubwordVocab.load(Path(vocab_path))
    if merges_path is None:
        return WordSegmenter(vocab)
    return BPESegmenter(MergeTable.load(Path(merges_path)), vocab, boundary_marker)
