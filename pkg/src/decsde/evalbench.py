"""Scoring, embedding analyses, timing, and the synthetic HRL/LRL generator.

BLEU follows the SacreBLEU defaults for a single reference: ``13a``
tokenization, corpus-level 4-gram statistics and ``exp`` smoothing (a zero
n-gram match count is replaced by ``1 / (2^k * total)`` for the k-th such
order).  Signature pinned here: ``nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp``.
"""

from __future__ import annotations

import collections
import copy
import csv
import math
import re
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

BLEU_SIGNATURE = "nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp"

_13A_RULES = [
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
]


def tokenize_13a(line: str) -> str:
    line = line.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    if "&" in line:
        line = line.replace("&quot;", '"').replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">")
    line = f" {line} "
    for rx, sub in _13A_RULES:
        line = rx.sub(sub, line)
    return " ".join(line.split())


def _ngrams(tokens: Sequence[str], n: int) -> collections.Counter:
    return collections.Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuReport:
    score: float
    precisions: list
    brevity_penalty: float
    sys_len: int
    ref_len: int
    counts: list = field(default_factory=list)
    totals: list = field(default_factory=list)

    def __str__(self):
        p = "/".join(f"{x:.1f}" for x in self.precisions)
        return (f"BLEU = {self.score:.2f} {p} (BP = {self.brevity_penalty:.3f} "
                f"hyp_len = {self.sys_len} ref_len = {self.ref_len})")


def bleu_corpus(hyps: Sequence[str], refs: Sequence[str], max_order: int = 4) -> BleuReport:
    if len(hyps) != len(refs):
        raise ValueError("hypotheses and references differ in number")
    counts = [0] * max_order
    totals = [0] * max_order
    sys_len = ref_len = 0
    for h, r in zip(hyps, refs):
        ht = tokenize_13a(h).split()
        rt = tokenize_13a(r).split()
        sys_len += len(ht)
        ref_len += len(rt)
        for n in range(1, max_order + 1):
            hn, rn = _ngrams(ht, n), _ngrams(rt, n)
            counts[n - 1] += sum(min(c, rn[g]) for g, c in hn.items())
            totals[n - 1] += max(len(ht) - n + 1, 0)

    precisions = [0.0] * max_order
    smooth = 1.0
    for n in range(max_order):
        if totals[n] == 0:
            break
        if counts[n] == 0:
            smooth *= 2
            precisions[n] = 100.0 / (smooth * totals[n])
        else:
            precisions[n] = 100.0 * counts[n] / totals[n]

    if sys_len == 0:
        return BleuReport(0.0, precisions, 0.0, sys_len, ref_len, counts, totals)
    bp = 1.0 if sys_len >= ref_len else math.exp(1.0 - ref_len / sys_len)
    if min(precisions) <= 0.0:
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p / 100.0) for p in precisions) / max_order) * 100.0
    return BleuReport(score, precisions, bp, sys_len, ref_len, counts, totals)


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit costs, over code points."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


# ---------------------------------------------------------------------------
# embedding retrieval


@dataclass
class WordPairSet:
    pairs: list  # (hrl_word, lrl_word, distance)

    def __post_init__(self):
        for h, l, d in self.pairs:
            if edit_distance(h, l) != d:
                raise ValueError(f"recorded distance {d} for {h!r}/{l!r} is wrong")

    def bucket(self, distance: int) -> "WordPairSet":
        return WordPairSet([p for p in self.pairs if p[2] == distance])

    def __len__(self):
        return len(self.pairs)


def extract_word_pairs(hrl_counts: dict, lrl_counts: dict, top_n: int = 2000, max_distance: int = 4,
                       cap_per_bucket: int | None = 200) -> WordPairSet:
    """Pair each frequent LRL word with its closest frequent HRL word (distance 1..max)."""
    def top(counts):
        return [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]]

    hrl, lrl = top(hrl_counts), top(lrl_counts)
    by_bucket = collections.defaultdict(list)
    for lw in lrl:
        best = None
        for hw in hrl:
            if abs(len(hw) - len(lw)) > max_distance:
                continue
            d = edit_distance(hw, lw)
            if 1 <= d <= max_distance and (best is None or d < best[1]):
                best = (hw, d)
        if best is not None:
            by_bucket[best[1]].append((best[0], lw, best[1]))
    pairs = []
    for d in sorted(by_bucket):
        pairs.extend(by_bucket[d][:cap_per_bucket] if cap_per_bucket else by_bucket[d])
    return WordPairSet(pairs)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(m, axis=-1, keepdims=True)
    return m / np.where(n > 0, n, 1.0)


def retrieval_ranks(queries: np.ndarray, candidates: np.ndarray, gold: Sequence[int]) -> np.ndarray:
    """Rank (1 = best) of each gold candidate under cosine similarity.

    Ties with the gold score count in the gold's favour.
    """
    sims = _unit_rows(np.asarray(queries, dtype=np.float64)) @ _unit_rows(np.asarray(candidates, dtype=np.float64)).T
    gold = np.asarray(gold, dtype=np.int64)
    g = sims[np.arange(len(gold)), gold]
    return 1 + (sims > g[:, None] + 1e-12).sum(axis=1)


def mean_reciprocal_rank(ranks) -> float:
    ranks = np.asarray(ranks, dtype=float)
    return float(np.mean(1.0 / ranks)) if ranks.size else float("nan")


def embedding_mrr(pairs: WordPairSet, embed_lrl: Callable, embed_hrl: Callable,
                  hrl_vocabulary: Sequence[str]) -> dict:
    """MRR per edit-distance bucket of retrieving the HRL partner of each LRL word.

    ``embed_*`` map a list of words to an ``(n, d)`` array.  All of
    ``hrl_vocabulary`` competes as retrieval candidates (pair words are added
    if missing).
    """
    cands = list(dict.fromkeys(list(hrl_vocabulary) + [h for h, _, _ in pairs.pairs]))
    pos = {w: i for i, w in enumerate(cands)}
    C = embed_hrl(cands)
    out = {}
    for d in sorted({p[2] for p in pairs.pairs}):
        sub = pairs.bucket(d).pairs
        Q = embed_lrl([l for _, l, _ in sub])
        out[d] = mean_reciprocal_rank(retrieval_ranks(Q, C, [pos[h] for h, _, _ in sub]))
    return out


def mrr_gain(method: dict, baseline: dict) -> dict:
    return {d: method[d] - baseline[d] for d in method if d in baseline}


def subword_word_embedder(table: np.ndarray, segmenter) -> Callable:
    """Word embedding = mean of its subword rows in a precomputed table."""
    def embed(words):
        out = np.zeros((len(words), table.shape[1]))
        for i, w in enumerate(words):
            ids = segmenter.encode(w)
            if ids:
                out[i] = table[ids].mean(axis=0)
        return out
    return embed


# ---------------------------------------------------------------------------
# rare-word F1


def frequency_bucket(freq: int) -> str:
    """``0`` for unseen words, else ``[2^k, 2^(k+1))``."""
    if freq <= 0:
        return "0"
    k = int(math.floor(math.log2(freq)))
    return f"[{2 ** k},{2 ** (k + 1)})"


def _bucket_key(label: str) -> int:
    return -1 if label == "0" else int(label[1:].split(",")[0])


@dataclass
class BucketScore:
    precision: float
    recall: float
    f1: float
    ref_count: int
    hyp_count: int


def rare_word_f1(hyps: Sequence[str], refs: Sequence[str], freq_table: dict, detail: bool = False) -> dict:
    """Word F1 per training-frequency bucket, with per-sentence clipped matches."""
    match = collections.Counter()
    nh = collections.Counter()
    nr = collections.Counter()
    for h, r in zip(hyps, refs):
        hc = collections.Counter(h.split())
        rc = collections.Counter(r.split())
        for w, c in hc.items():
            b = frequency_bucket(freq_table.get(w, 0))
            nh[b] += c
            match[b] += min(c, rc.get(w, 0))
        for w, c in rc.items():
            nr[frequency_bucket(freq_table.get(w, 0))] += c
    out = {}
    for b in sorted(set(nh) | set(nr), key=_bucket_key):
        p = match[b] / nh[b] if nh[b] else 0.0
        r = match[b] / nr[b] if nr[b] else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        out[b] = BucketScore(p, r, f, nr[b], nh[b]) if detail else f
    return out


# ---------------------------------------------------------------------------
# timing


@dataclass
class SpeedReport:
    decode_sec: float
    decode_runs: list
    train_sec_per_epoch: float | None = None
    train_runs: list = field(default_factory=list)


def _timed(fn, runs: int) -> list:
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return times


def speed_bench(models: dict, sources: Sequence[Sequence[int]], lang: str, runs: int = 3,
                train_corpora=None, train_config=None, batch_size: int = 64) -> dict:
    """Median wall-clock decode time (and optionally one training epoch) per model.

    Decoding uses each model's precomputed tables, which are built outside the
    timed region.  One untimed warm-up decode runs first.  BLAS is pinned to a
    single thread while timing.
    """
    from threadpoolctl import threadpool_limits

    from .trainer import Trainer

    reports = {}
    with threadpool_limits(limits=1):
        for name, model in models.items():
            tables = model.precompute_tables()

            def decode():
                for i in range(0, len(sources), batch_size):
                    model.greedy_decode(sources[i:i + batch_size], lang, tables=tables)

            decode()
            dec = _timed(decode, runs)
            rep = SpeedReport(statistics.median(dec), dec)
            if train_corpora is not None and train_config is not None:
                def one_epoch():
                    Trainer(copy.deepcopy(model), train_config).run_epoch(train_corpora)
                tr = _timed(one_epoch, runs)
                rep.train_sec_per_epoch = statistics.median(tr)
                rep.train_runs = tr
            reports[name] = rep
    return reports


# ---------------------------------------------------------------------------
# synthetic related-language pair

ACCENTS = {
    "a": "á", "e": "é", "i": "í", "o": "ö", "u": "ü",
    "c": "ç", "s": "ş", "g": "ğ", "n": "ñ", "z": "ž",
}
_SRC_ONSETS = ["b", "d", "f", "h", "k", "l", "m", "p", "r", "s", "t", "w", "st", "th", "gr", "pl", "sh"]
_SRC_VOWELS = ["a", "e", "i", "o", "u", "ee", "oo", "ai"]
_SRC_CODAS = ["", "", "n", "t", "r", "ck", "ng", "s", "ll"]
_TGT_ONSETS = ["b", "c", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "y", "ç", "ş"]
_TGT_VOWELS = ["a", "e", "i", "o", "u"]
_TGT_CODAS = ["", "", "", "n", "r", "s", "l", "z", "m"]


@dataclass
class ParallelCorpus:
    src: list
    tgt: list

    def __len__(self):
        return len(self.src)


@dataclass
class SyntheticPair:
    """English-like source paired with a high-resource and a related low-resource target."""

    src_words: list
    hrl_words: list
    lrl_words: list
    hrl: dict  # split -> ParallelCorpus
    lrl: dict
    corruption_rate: float
    seed: int

    def lexicon_pairs(self, distance: int | None = None) -> WordPairSet:
        pairs = []
        for h, l in zip(self.hrl_words, self.lrl_words):
            d = edit_distance(h, l)
            if d >= 1 and (distance is None or d == distance):
                pairs.append((h, l, d))
        return WordPairSet(pairs)

    def mean_edit_distance(self) -> float:
        return float(np.mean([edit_distance(h, l) for h, l in zip(self.hrl_words, self.lrl_words)]))

    def target_corpus(self, split: str = "train") -> list:
        return list(self.hrl[split].tgt) + list(self.lrl[split].tgt)

    def write(self, directory, hrl_code: str = "hrl", lrl_code: str = "lrl") -> dict:
        """Write ``<split>.<lang>.src`` / ``.tgt`` files; return their paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        for code, data in ((hrl_code, self.hrl), (lrl_code, self.lrl)):
            for split, pc in data.items():
                for side, lines in (("src", pc.src), ("tgt", pc.tgt)):
                    p = directory / f"{split}.{code}.{side}"
                    p.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
                    paths[f"{split}.{code}.{side}"] = str(p)
        return paths


def _make_words(rng, n: int, onsets, vowels, codas, syllables=(1, 3), taken=()) -> list:
    words, seen = [], set(taken)
    while len(words) < n:
        k = int(rng.integers(syllables[0], syllables[1] + 1))
        w = "".join(
            onsets[rng.integers(len(onsets))] + vowels[rng.integers(len(vowels))] + codas[rng.integers(len(codas))]
            for _ in range(k)
        )
        if len(w) >= 2 and w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _corrupt(word: str, k: int, rng) -> str:
    """Apply ``k`` substitutions at distinct positions (accent-like where possible)."""
    if k == 0:
        return word
    chars = list(word)
    eligible = [i for i, c in enumerate(chars) if c in ACCENTS]
    other = [i for i in range(len(chars)) if i not in eligible]
    rng.shuffle(eligible)
    rng.shuffle(other)
    positions = (eligible + other)[:k]
    for i in positions:
        c = chars[i]
        if c in ACCENTS:
            chars[i] = ACCENTS[c]
        else:
            choices = [x for x in _TGT_VOWELS + ["k", "t", "r"] if x != c]
            chars[i] = choices[rng.integers(len(choices))]
    return "".join(chars)


def make_synthetic_pair(seed: int, root_vocab_size: int = 1000, corruption_rate: float = 0.6,
                        n_hrl: int = 5000, n_lrl: int = 400, n_dev: int = 100, n_test: int = 200,
                        sentence_len=(3, 8), zipf_a: float = 1.0) -> SyntheticPair:
    """Generate the toy English -> {HRL, LRL} setup.

    Each root has a source word and an HRL word; the LRL word is the HRL word
    with ``k`` character substitutions, where ``k`` in {0, 1, 2} is drawn per
    root so that the expected edit distance equals ``corruption_rate``.
    Sentences translate word by word, with the target adjective-like second
    word moved to the end of sentences longer than four words.
    """
    if not 0.0 <= corruption_rate <= 2.0:
        raise ValueError("corruption_rate must be in [0, 2]")
    rng = np.random.default_rng(seed)
    src_words = _make_words(rng, root_vocab_size, _SRC_ONSETS, _SRC_VOWELS, _SRC_CODAS)
    hrl_words = _make_words(rng, root_vocab_size, _TGT_ONSETS, _TGT_VOWELS, _TGT_CODAS, syllables=(1, 3))
    lo = int(math.floor(corruption_rate))
    frac = corruption_rate - lo
    lrl_words = []
    for w in hrl_words:
        k = lo + int(rng.random() < frac)
        k = min(k, len(w))
        lrl_words.append(_corrupt(w, k, rng))

    ranks = np.arange(1, root_vocab_size + 1, dtype=float)
    probs = ranks ** -zipf_a
    probs /= probs.sum()
    perm = rng.permutation(root_vocab_size)

    def sentences(n):
        out = []
        for _ in range(n):
            L = int(rng.integers(sentence_len[0], sentence_len[1] + 1))
            out.append([int(perm[j]) for j in rng.choice(root_vocab_size, size=L, p=probs)])
        return out

    def realize(roots, lexicon):
        words = [lexicon[r] for r in roots]
        if len(words) > 4:
            words = words[:1] + words[2:] + words[1:2]
        return " ".join(words)

    def corpus(n, lexicon):
        sents = sentences(n)
        return ParallelCorpus([" ".join(src_words[r] for r in s) for s in sents],
                              [realize(s, lexicon) for s in sents])

    hrl = {"train": corpus(n_hrl, hrl_words), "dev": corpus(n_dev, hrl_words), "test": corpus(n_test, hrl_words)}
    lrl = {"train": corpus(n_lrl, lrl_words), "dev": corpus(n_dev, lrl_words), "test": corpus(n_test, lrl_words)}
    return SyntheticPair(src_words, hrl_words, lrl_words, hrl, lrl, corruption_rate, seed)


# ---------------------------------------------------------------------------
# reports


def write_csv(path, rows: Sequence[dict], fields: Sequence[str] | None = None) -> None:
    rows = list(rows)
    fields = list(fields or (rows[0].keys() if rows else []))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def write_gnuplot(path, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    """Whitespace-separated data file with a ``#`` header line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + " ".join(columns) + "\n")
        for r in rows:
            fh.write(" ".join(str(x) for x in r) + "\n")
