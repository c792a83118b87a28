"""Target-side word embeddings: the spelling-based embedder and lookup tables.

A subword ``w`` in target language ``i`` is embedded as

    c(w)   = tanh(W_c . BoN(w))                  lexical, from character n-grams
    c_i(w) = tanh((I + U_i V_i) . c(w))          low-rank language transform
    s(w)   = W_s . softmax(W_s^T . c_i(w))        attention over shared latents
    e(w)   = c_i(w) + s(w)

Everything here works on row-major batches: a batch of tokens is a
``(B, d)`` tensor, so the column-vector formulas above appear transposed.
``W_c`` is stored with one row per n-gram (``n x d``) so the bag-of-n-grams
product is a weighted row gather.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numkernel as nk
from .chargrams import NGramVocab, bon_rows
from .numkernel import Parameter, SparseMatrix, Tensor


class EmbedMode(str, enum.Enum):
    DECSDE = "decsde"
    DECSDE_NO_TYING = "decsde_no_tying"
    DECSDE_FULL_TRANSFORM = "decsde_full_transform"
    DECSDE_NO_TRANSFORM = "decsde_no_transform"
    LOOKUP_PIECE = "lookup_piece"
    LOOKUP_WORD = "lookup_word"

    @property
    def spelling_based(self) -> bool:
        return self.value.startswith("decsde")

    @property
    def transform(self) -> str:
        if not self.spelling_based:
            return "none"
        return {
            EmbedMode.DECSDE_FULL_TRANSFORM: "full",
            EmbedMode.DECSDE_NO_TRANSFORM: "none",
        }.get(self, "lowrank")

    @property
    def tied(self) -> bool:
        return self is not EmbedMode.DECSDE_NO_TYING


@dataclass(frozen=True)
class LanguageId:
    code: str
    index: int


class StaleTableError(RuntimeError):
    """A precomputed embedding table no longer matches the parameters."""


@dataclass(frozen=True)
class EmbeddingTable:
    matrix: np.ndarray
    language: LanguageId
    params_version: int

    def check(self, current_version: int) -> None:
        if current_version != self.params_version:
            raise StaleTableError(
                f"embedding table for {self.language.code!r} was built at parameter version "
                f"{self.params_version}, parameters are now at version {current_version}"
            )


@dataclass
class LowRankTransform:
    U: Parameter  # d x u
    V: Parameter  # u x d

    def parameters(self):
        return [self.U, self.V]


@dataclass
class FullTransform:
    W: Parameter  # d x d

    def parameters(self):
        return [self.W]


class DecSDEParams:
    """Trainable parameters of the spelling-based embedder.

    ``transform`` is ``"lowrank"``, ``"full"`` or ``"none"``.  ``ranks`` maps a
    language code to its rank ``u``; a rank of 0 leaves only the identity.
    ``bag_size`` is the typical number of n-grams summed per token; W_c is
    drawn from U(+-1/sqrt(d * bag_size)) so the bag sum starts at the scale of
    a single lookup row.  The default 1.0 gives plain U(+-1/sqrt(d)).
    """

    def __init__(self, n_grams: int, d: int, latent_size: int, n_specials: int,
                 languages: Sequence[LanguageId], transform: str = "lowrank",
                 ranks: dict | None = None, rng: np.random.Generator | None = None,
                 keep_tanh_without_transform: bool = False, bag_size: float = 1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        if bag_size <= 0:
            raise ValueError("bag_size must be positive")
        k = 1.0 / math.sqrt(d)
        self.d = d
        self.latent_size = latent_size
        self.transform = transform
        self.keep_tanh = keep_tanh_without_transform
        self.languages = {lang.code: lang for lang in languages}
        kc = 1.0 / math.sqrt(d * bag_size)
        self.W_c = Parameter(rng.uniform(-kc, kc, (n_grams, d)), "decsde.W_c")
        self.W_s = Parameter(rng.uniform(-k, k, (d, latent_size)), "decsde.W_s")
        self.special_rows = Parameter(rng.uniform(-k, k, (n_specials, d)), "decsde.special_rows")
        self.transforms = {}
        ranks = ranks or {}
        for lang in languages:
            if transform == "lowrank":
                u = int(ranks.get(lang.code, 0))
                if not 0 <= u < d:
                    raise ValueError(f"rank u={u} for {lang.code!r} must satisfy 0 <= u < d={d}")
                self.transforms[lang.code] = LowRankTransform(
                    Parameter(np.zeros((d, u)), f"decsde.U.{lang.code}"),
                    Parameter(rng.uniform(-k, k, (u, d)), f"decsde.V.{lang.code}"),
                )
            elif transform == "full":
                self.transforms[lang.code] = FullTransform(Parameter(np.eye(d), f"decsde.W_L.{lang.code}"))
            elif transform == "none":
                self.transforms[lang.code] = None
            else:
                raise ValueError(f"unknown transform kind {transform!r}")

    def add_language(self, lang: LanguageId, rank: int = 0, rng=None) -> None:
        """Register one more target language; only its transform is new."""
        if lang.code in self.languages:
            raise ValueError(f"language {lang.code!r} already registered")
        rng = rng if rng is not None else np.random.default_rng(lang.index)
        k = 1.0 / math.sqrt(self.d)
        self.languages[lang.code] = lang
        if self.transform == "lowrank":
            if not 0 <= rank < self.d:
                raise ValueError("rank must satisfy 0 <= u < d")
            self.transforms[lang.code] = LowRankTransform(
                Parameter(np.zeros((self.d, rank)), f"decsde.U.{lang.code}"),
                Parameter(rng.uniform(-k, k, (rank, self.d)), f"decsde.V.{lang.code}"),
            )
        elif self.transform == "full":
            self.transforms[lang.code] = FullTransform(Parameter(np.eye(self.d), f"decsde.W_L.{lang.code}"))
        else:
            self.transforms[lang.code] = None

    @property
    def n_grams(self) -> int:
        return self.W_c.shape[0]

    def parameters(self) -> list:
        out = [self.W_c, self.W_s, self.special_rows]
        for code in sorted(self.transforms):
            t = self.transforms[code]
            if t is not None:
                out.extend(t.parameters())
        return out

    @property
    def version(self) -> int:
        return sum(p.version for p in self.parameters())


def _as_rows(x: Tensor):
    return (x.reshape(1, -1), True) if x.ndim == 1 else (x, False)


def char_aware_embedding(bon, p: DecSDEParams) -> Tensor:
    """``tanh(W_c . BoN)`` for one count vector (list of pairs) or a sparse batch."""
    if isinstance(bon, SparseMatrix):
        return nk.tanh(nk.bag_sum(bon, p.W_c))
    for g, _ in bon:
        if not 0 <= g < p.n_grams:
            raise IndexError(f"n-gram id {g} out of range")
    m = SparseMatrix.from_rows([list(bon)], p.n_grams)
    return nk.tanh(nk.bag_sum(m, p.W_c)).reshape(p.d)


def lang_transform(c: Tensor, lang, p: DecSDEParams) -> Tensor:
    code = lang.code if isinstance(lang, LanguageId) else lang
    if code not in p.transforms:
        raise KeyError(f"language {code!r} is not registered")
    t = p.transforms[code]
    if t is None:
        return nk.tanh(c) if p.keep_tanh else c
    rows, squeeze = _as_rows(c)
    if isinstance(t, LowRankTransform):
        # (I + U V) c  ==  c + (c V^T) U^T  in row form
        z = rows + nk.matmul(nk.matmul(rows, t.V.T), t.U.T)
    else:
        z = nk.matmul(rows, t.W.T)
    out = nk.tanh(z)
    return out.reshape(p.d) if squeeze else out


def latent_attention(c_i: Tensor, p: DecSDEParams) -> Tensor:
    """Attention weights over the shared latent columns, one row per query."""
    rows, squeeze = _as_rows(c_i)
    a = nk.softmax(nk.matmul(rows, p.W_s), axis=-1)
    return a.reshape(p.latent_size) if squeeze else a


def latent_semantic(c_i: Tensor, p: DecSDEParams) -> Tensor:
    rows, squeeze = _as_rows(c_i)
    a = nk.softmax(nk.matmul(rows, p.W_s), axis=-1)
    s = nk.matmul(a, p.W_s.T)
    return s.reshape(p.d) if squeeze else s


def sde_rows(bon: SparseMatrix, lang, p: DecSDEParams) -> Tensor:
    """Full embedding ``c_i + s`` for every row of a sparse count matrix."""
    c_i = lang_transform(char_aware_embedding(bon, p), lang, p)
    return c_i + latent_semantic(c_i, p)


class DecSDEEmbedder:
    """Binds :class:`DecSDEParams` to a target vocabulary.

    Rows ``0 .. n_specials-1`` of the vocabulary are special tokens and use
    dedicated learned rows; every other token goes through the spelling path.
    """

    def __init__(self, params: DecSDEParams, bon: SparseMatrix, n_specials: int,
                 ngrams: NGramVocab | None = None):
        if params.special_rows.shape[0] != n_specials:
            raise ValueError("special_rows does not match the number of special tokens")
        if bon.cols != params.n_grams:
            raise ValueError("count matrix width does not match W_c")
        self.p = params
        self.bon = bon
        self.n_specials = n_specials
        self.ngrams = ngrams
        self._regular = bon.select_rows(range(n_specials, bon.rows))

    @property
    def vocab_size(self) -> int:
        return self.bon.rows

    def parameters(self) -> list:
        return self.p.parameters()

    def embed_token(self, token_id: int, lang) -> Tensor:
        if not 0 <= token_id < self.vocab_size:
            raise IndexError(f"token id {token_id} out of range")
        if token_id < self.n_specials:
            return nk.take_rows(self.p.special_rows, [token_id]).reshape(self.p.d)
        c = char_aware_embedding(self.bon.row(token_id), self.p)
        c_i = lang_transform(c, lang, self.p)
        return c_i + latent_semantic(c_i, self.p)

    def embed_batch(self, token_ids, lang) -> Tensor:
        """Embed only the distinct tokens of ``token_ids`` and gather.

        The result has shape ``token_ids.shape + (d,)``.
        """
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise IndexError("token id out of range")
        uniq, inverse = np.unique(ids.reshape(-1), return_inverse=True)
        special = uniq[uniq < self.n_specials]
        regular = uniq[uniq >= self.n_specials]
        parts = []
        if len(special):
            parts.append(nk.take_rows(self.p.special_rows, special))
        if len(regular):
            parts.append(sde_rows(self.bon.select_rows(regular), lang, self.p))
        rows = parts[0] if len(parts) == 1 else nk.concat(parts, axis=0)
        # uniq is sorted and specials come first, so concat order == uniq order
        return nk.take_rows(rows, inverse).reshape(ids.shape + (self.p.d,))

    def full_table(self, lang) -> Tensor:
        """Differentiable ``V x d`` table for one language (used for tied logits)."""
        return nk.concat([self.p.special_rows, sde_rows(self._regular, lang, self.p)], axis=0)

    def embed_strings(self, strings: Sequence[str], lang) -> np.ndarray:
        """Embeddings of arbitrary spellings (need not be in the vocabulary)."""
        if self.ngrams is None:
            raise ValueError("embedding arbitrary strings needs the n-gram vocabulary")
        with nk.no_grad():
            return sde_rows(bon_rows(strings, self.ngrams), lang, self.p).data.copy()

    def lexical_strings(self, strings: Sequence[str]) -> np.ndarray:
        if self.ngrams is None:
            raise ValueError("embedding arbitrary strings needs the n-gram vocabulary")
        with nk.no_grad():
            return char_aware_embedding(bon_rows(strings, self.ngrams), self.p).data.copy()

    def precompute_table(self, lang: LanguageId, version: int | None = None) -> EmbeddingTable:
        with nk.no_grad():
            m = self.full_table(lang).data.copy()
        m.setflags(write=False)
        return EmbeddingTable(m, lang, self.p.version if version is None else version)


def precompute_table(lang: LanguageId, embedder: DecSDEEmbedder) -> EmbeddingTable:
    return embedder.precompute_table(lang)


class LookupEmbedder:
    """Plain index-to-row table (the lookup baselines)."""

    def __init__(self, vocab_size: int, d: int, rng=None, name: str = "tgt_embed"):
        rng = rng if rng is not None else np.random.default_rng(0)
        k = 1.0 / math.sqrt(d)
        self.table = Parameter(rng.uniform(-k, k, (vocab_size, d)), name)

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    def parameters(self) -> list:
        return [self.table]

    def embed_token(self, token_id: int, lang=None) -> Tensor:
        return lookup_embed(token_id, self.table)

    def embed_batch(self, token_ids, lang=None) -> Tensor:
        return nk.take_rows(self.table, token_ids)

    def full_table(self, lang=None) -> Tensor:
        return self.table

    def precompute_table(self, lang: LanguageId, version: int | None = None) -> EmbeddingTable:
        m = self.table.data.copy()
        m.setflags(write=False)
        return EmbeddingTable(m, lang, self.table.version if version is None else version)


def lookup_embed(token_id: int, table: Tensor) -> Tensor:
    if not 0 <= token_id < table.shape[0]:
        raise IndexError(f"token id {token_id} out of range for {table.shape[0]} rows")
    return nk.take_rows(table, [token_id]).reshape(table.shape[1])


def tied_logits(hidden: Tensor, table) -> Tensor:
    """``hidden . table^T`` with no bias; ``table`` may be a Tensor or an array."""
    t = table if isinstance(table, Tensor) else Tensor(table)
    return nk.matmul(hidden, t.T)
