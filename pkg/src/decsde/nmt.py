"""A small pre-norm transformer encoder-decoder.

The source side always uses a lookup table.  The target side uses either the
spelling-based embedder or a lookup table, chosen by ``ModelConfig.embed_mode``.
A target-language flag token is prepended to every source sentence.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import numkernel as nk
from .chargrams import NGramVocab, bon_matrix
from .embedding import (
    DecSDEEmbedder,
    DecSDEParams,
    EmbeddingTable,
    EmbedMode,
    LanguageId,
    LookupEmbedder,
    tied_logits,
)
from .numkernel import Parameter, Tensor
from .segmenter import SubwordVocab

NEG_INF = -1e9


@dataclass
class ModelConfig:
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    dropout_p: float = 0.3
    embed_mode: EmbedMode = EmbedMode.DECSDE
    tie_mode: str = "two_way"  # two_way | three_way | none
    max_len: int = 64
    latent_size: int = 256
    ranks: dict = field(default_factory=dict)
    keep_tanh_without_transform: bool = False
    # decode length cap per sentence: a * source_length + b (still bounded by max_len)
    max_len_a: float = 2.0
    max_len_b: int = 10
    # scale the W_c init by the mean n-gram count per token (see DecSDEParams)
    wc_fan_in_init: bool = True

    def __post_init__(self):
        self.embed_mode = EmbedMode(self.embed_mode)
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.tie_mode not in ("two_way", "three_way", "none"):
            raise ValueError(f"unknown tie_mode {self.tie_mode!r}")
        if not self.embed_mode.tied:
            self.tie_mode = "none"
        for code, u in self.ranks.items():
            if not 0 <= int(u) < self.model_dim:
                raise ValueError(f"rank for {code!r} must satisfy 0 <= u < model_dim")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["embed_mode"] = self.embed_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class Batch:
    src_ids: np.ndarray  # B x L, flag token first
    tgt_in: np.ndarray  # B x T, BOS first
    tgt_out: np.ndarray  # B x T, EOS last
    lang: list
    src_mask: np.ndarray = None  # True where real token
    tgt_mask: np.ndarray = None

    def __post_init__(self):
        if self.src_mask is None:
            self.src_mask = self.src_ids != 0
        if self.tgt_mask is None:
            self.tgt_mask = self.tgt_out != 0

    @property
    def n_tokens(self) -> int:
        return int(self.tgt_mask.sum())


def _pad(seqs: Sequence[Sequence[int]], pad: int = 0) -> np.ndarray:
    L = max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), max(L, 1)), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def source_ids(tokens: Sequence[int], flag: int, eos: int, max_len: int) -> list:
    return [flag] + list(tokens)[: max_len - 2] + [eos]


def make_batch(src: Sequence[Sequence[int]], tgt: Sequence[Sequence[int]], lang: str,
               src_vocab: SubwordVocab, tgt_vocab: SubwordVocab, max_len: int) -> Batch:
    """Pad already-encoded sentences; prepends the flag and adds BOS/EOS."""
    flag = src_vocab.flag_id(lang)
    s = [source_ids(x, flag, src_vocab.eos, max_len) for x in src]
    t = [list(y)[: max_len - 1] for y in tgt]
    tin = [[tgt_vocab.bos] + y for y in t]
    tout = [y + [tgt_vocab.eos] for y in t]
    return Batch(_pad(s), _pad(tin), _pad(tout), [lang] * len(src))


def mean_bag_size(bon, n_specials: int) -> float:
    """Mean total n-gram count over the non-special rows of a BoN matrix."""
    csum = np.concatenate([[0.0], np.cumsum(bon.weights)])
    counts = (csum[bon.indptr[1:]] - csum[bon.indptr[:-1]])[n_specials:]
    return float(counts.mean()) if counts.size and counts.mean() > 0 else 1.0


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    out = np.zeros((n, d))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


class _Params:
    """Flat name -> Parameter registry with a seeded initializer."""

    def __init__(self, rng):
        self.rng = rng
        self.by_name = {}

    def add(self, name: str, value) -> Parameter:
        if name in self.by_name:
            raise ValueError(f"duplicate parameter {name}")
        p = Parameter(value, name)
        self.by_name[name] = p
        return p

    def linear(self, name: str, n_in: int, n_out: int):
        k = 1.0 / math.sqrt(n_in)
        return (self.add(f"{name}.weight", self.rng.uniform(-k, k, (n_in, n_out))),
                self.add(f"{name}.bias", np.zeros(n_out)))

    def norm(self, name: str, d: int):
        return self.add(f"{name}.gamma", np.ones(d)), self.add(f"{name}.beta", np.zeros(d))


class Transformer:
    """Encoder-decoder with a pluggable target embedder.

    Parameters are created in a fixed order from ``seed`` so that equal seeds
    give bit-identical models.
    """

    def __init__(self, config: ModelConfig, src_vocab: SubwordVocab, tgt_vocab: SubwordVocab,
                 languages: Sequence[str], ngrams: NGramVocab | None = None, seed: int = 0):
        self.config = config
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.languages = {code: LanguageId(code, i) for i, code in enumerate(languages)}
        self.ngrams = ngrams
        d = config.model_dim
        rng = np.random.default_rng(seed)
        reg = _Params(rng)
        self._reg = reg
        k = 1.0 / math.sqrt(d)

        if config.tie_mode == "three_way" and len(src_vocab) != len(tgt_vocab):
            raise ValueError("three-way tying needs one joint source/target vocabulary")

        mode = config.embed_mode
        if mode.spelling_based:
            if ngrams is None:
                raise ValueError(f"{mode.value} needs an n-gram vocabulary")
            bon = bon_matrix(tgt_vocab, ngrams)
            params = DecSDEParams(
                len(ngrams), d, config.latent_size, tgt_vocab.n_specials,
                list(self.languages.values()), transform=mode.transform, ranks=config.ranks,
                rng=rng, keep_tanh_without_transform=config.keep_tanh_without_transform,
                bag_size=mean_bag_size(bon, tgt_vocab.n_specials) if config.wc_fan_in_init else 1.0,
            )
            for p in params.parameters():
                reg.by_name[p.name] = p
            self.target = DecSDEEmbedder(params, bon, tgt_vocab.n_specials, ngrams)
        else:
            self.target = LookupEmbedder(len(tgt_vocab), d, rng, name="tgt_embed")
            reg.by_name["tgt_embed"] = self.target.table

        self.out_proj = None
        if config.tie_mode == "none":
            self.out_proj = reg.add("out_proj", rng.uniform(-k, k, (len(tgt_vocab), d)))

        self.src_embed = None
        if config.tie_mode != "three_way":
            self.src_embed = reg.add("src_embed", rng.uniform(-k, k, (len(src_vocab), d)))

        self.enc = [self._layer(reg, f"enc.{i}", cross=False) for i in range(config.enc_layers)]
        self.enc_norm = reg.norm("enc.norm", d)
        self.dec = [self._layer(reg, f"dec.{i}", cross=True) for i in range(config.dec_layers)]
        self.dec_norm = reg.norm("dec.norm", d)
        self.pos = sinusoidal_positions(max(config.max_len, 1) + 1, d)
        self.embed_scale = math.sqrt(d)
        self.blocked = np.array(
            [tgt_vocab.pad, tgt_vocab.bos] + tgt_vocab.flag_ids(), dtype=np.int64
        )

    def _layer(self, reg: _Params, name: str, cross: bool) -> dict:
        d, f = self.config.model_dim, self.config.ffn_dim
        layer = {
            "ln1": reg.norm(f"{name}.ln1", d),
            "self": {x: reg.linear(f"{name}.self.{x}", d, d) for x in "qkvo"},
            "ln_ff": reg.norm(f"{name}.ln_ff", d),
            "ff1": reg.linear(f"{name}.ff1", d, f),
            "ff2": reg.linear(f"{name}.ff2", f, d),
        }
        if cross:
            layer["ln2"] = reg.norm(f"{name}.ln2", d)
            layer["cross"] = {x: reg.linear(f"{name}.cross.{x}", d, d) for x in "qkvo"}
        return layer

    # -- bookkeeping -------------------------------------------------------

    def parameters(self) -> list:
        return list(self._reg.by_name.values())

    def named_parameters(self) -> dict:
        return dict(self._reg.by_name)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    @property
    def params_version(self) -> int:
        return sum(p.version for p in self.parameters())

    def lang(self, code) -> LanguageId:
        if isinstance(code, LanguageId):
            return code
        try:
            return self.languages[code]
        except KeyError:
            raise KeyError(f"unknown target language {code!r}") from None

    # -- building blocks ---------------------------------------------------

    def _drop(self, x, p, rng):
        return nk.dropout(x, p, rng) if p > 0 and rng is not None else x

    def _linear(self, x, wb):
        return nk.matmul(x, wb[0]) + wb[1]

    def _attention(self, q_in, kv_in, w, mask, p, rng, probs_out=None):
        B, Tq, d = q_in.shape
        Tk = kv_in.shape[1]
        H = self.config.heads
        dh = d // H

        def split(x, T):
            return nk.transpose(x.reshape(B, T, H, dh), (0, 2, 1, 3))

        q = split(self._linear(q_in, w["q"]), Tq)
        k = split(self._linear(kv_in, w["k"]), Tk)
        v = split(self._linear(kv_in, w["v"]), Tk)
        scores = nk.scale(nk.matmul(q, nk.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        scores = scores + mask
        a = nk.softmax(scores, axis=-1)
        if probs_out is not None:
            probs_out.append(a.data)
        a = self._drop(a, p, rng)
        ctx = nk.transpose(nk.matmul(a, v), (0, 2, 1, 3)).reshape(B, Tq, d)
        return self._linear(ctx, w["o"])

    def _ffn(self, x, layer, p, rng):
        h = nk.relu(self._linear(x, layer["ff1"]))
        h = self._drop(h, p, rng)
        return self._linear(h, layer["ff2"])

    def _embed_positions(self, x: Tensor, p, rng) -> Tensor:
        T = x.shape[1]
        if T > self.pos.shape[0]:
            raise ValueError(f"sequence length {T} exceeds max_len {self.config.max_len}")
        x = nk.scale(x, self.embed_scale) + self.pos[:T]
        return self._drop(x, p, rng)

    # -- forward passes ----------------------------------------------------

    def encode(self, src_ids, src_mask=None, lang=None, dropout: float = 0.0, rng=None,
               attn_out: list | None = None, table=None) -> Tensor:
        """Encoder states ``B x L x d``; padding keys are masked out."""
        src_ids = np.asarray(src_ids, dtype=np.int64)
        if src_mask is None:
            src_mask = src_ids != self.src_vocab.pad
        if self.config.tie_mode == "three_way":
            if table is None:
                table = self.target.full_table(self.lang(lang))
            x = nk.take_rows(table if isinstance(table, Tensor) else Tensor(table), src_ids)
        else:
            x = nk.take_rows(self.src_embed, src_ids)
        x = self._embed_positions(x, dropout, rng)
        mask = np.where(src_mask, 0.0, NEG_INF)[:, None, None, :]
        for layer in self.enc:
            h = nk.layer_norm(x, *layer["ln1"])
            x = x + self._drop(self._attention(h, h, layer["self"], mask, dropout, rng, attn_out), dropout, rng)
            h = nk.layer_norm(x, *layer["ln_ff"])
            x = x + self._drop(self._ffn(h, layer, dropout, rng), dropout, rng)
        return nk.layer_norm(x, *self.enc_norm)

    def decoder_states(self, tgt_in, enc_out: Tensor, src_mask, table, dropout: float = 0.0,
                       rng=None) -> Tensor:
        tgt_in = np.asarray(tgt_in, dtype=np.int64)
        T = tgt_in.shape[1]
        if table is not None:
            x = nk.take_rows(table if isinstance(table, Tensor) else Tensor(table), tgt_in)
        else:
            raise ValueError("decoder needs an input embedding table")
        x = self._embed_positions(x, dropout, rng)
        causal = np.triu(np.full((T, T), NEG_INF), k=1)[None, None]
        cross_mask = np.where(src_mask, 0.0, NEG_INF)[:, None, None, :]
        for layer in self.dec:
            h = nk.layer_norm(x, *layer["ln1"])
            x = x + self._drop(self._attention(h, h, layer["self"], causal, dropout, rng), dropout, rng)
            h = nk.layer_norm(x, *layer["ln2"])
            x = x + self._drop(self._attention(h, enc_out, layer["cross"], cross_mask, dropout, rng), dropout, rng)
            h = nk.layer_norm(x, *layer["ln_ff"])
            x = x + self._drop(self._ffn(h, layer, dropout, rng), dropout, rng)
        return nk.layer_norm(x, *self.dec_norm)

    def _input_table(self, tgt_in, lang):
        """Input-embedding source and projection matrix for a training pass."""
        if self.config.tie_mode == "none":
            # only the tokens in the batch need embedding
            ids = np.asarray(tgt_in)
            uniq, inv = np.unique(ids, return_inverse=True)
            rows = self.target.embed_batch(uniq, lang)
            return rows, inv.reshape(ids.shape), self.out_proj
        table = self.target.full_table(lang)
        return table, np.asarray(tgt_in), table

    def forward(self, batch: Batch, dropout: float = 0.0, rng=None) -> Tensor:
        """Training-path logits ``B x T x V``; embeddings are recomputed from parameters."""
        langs = set(batch.lang)
        if len(langs) != 1:
            raise ValueError("a batch must hold a single target language")
        lang = self.lang(batch.lang[0])
        rows, ids, proj = self._input_table(batch.tgt_in, lang)
        enc_table = proj if self.config.tie_mode == "three_way" else None
        enc = self.encode(batch.src_ids, batch.src_mask, lang, dropout, rng, table=enc_table)
        h = self.decoder_states(ids, enc, batch.src_mask, rows, dropout, rng)
        return tied_logits(h, proj)

    def decode_forward(self, batch: Batch, enc_out: Tensor, dropout: float = 0.0, rng=None) -> Tensor:
        lang = self.lang(batch.lang[0])
        rows, ids, proj = self._input_table(batch.tgt_in, lang)
        h = self.decoder_states(ids, enc_out, batch.src_mask, rows, dropout, rng)
        return tied_logits(h, proj)

    # -- inference ---------------------------------------------------------

    def precompute_tables(self) -> dict:
        """Frozen ``V x d`` table per target language, stamped with the parameter version."""
        version = self.params_version
        return {code: self.target.precompute_table(lang, version) for code, lang in self.languages.items()}

    def _inference_tables(self, lang, tables) -> tuple:
        lang = self.lang(lang)
        if tables is None:
            table = self.target.precompute_table(lang, self.params_version)
        else:
            table = tables[lang.code] if isinstance(tables, dict) else tables
        table.check(self.params_version)
        if table.language.code != lang.code:
            raise ValueError(f"table is for {table.language.code!r}, not {lang.code!r}")
        emb = Tensor(table.matrix)
        proj = Tensor(self.out_proj.data) if self.out_proj is not None else emb
        return emb, proj

    def encode_sources(self, sources: Sequence[Sequence[int]], lang) -> np.ndarray:
        flag = self.src_vocab.flag_id(self.lang(lang).code)
        return _pad([source_ids(s, flag, self.src_vocab.eos, self.config.max_len) for s in sources])

    def _mask_logits(self, logits: np.ndarray) -> np.ndarray:
        logits[..., self.blocked] = -np.inf
        return logits

    def length_limit(self, source_len: int, max_len: int | None = None) -> int:
        """Decoding steps allowed for one source sentence (EOS included)."""
        if max_len:
            return max_len
        cap = int(self.config.max_len_a * source_len + self.config.max_len_b)
        return max(1, min(cap, self.config.max_len - 1))

    def greedy_decode(self, sources: Sequence[Sequence[int]], lang, max_len: int | None = None,
                      tables=None) -> list:
        """Argmax decoding of a batch of encoded source sentences (no flag, no EOS)."""
        if not sources:
            return []
        limits = np.array([self.length_limit(len(s), max_len) for s in sources])
        emb, proj = self._inference_tables(lang, tables)
        src = self.encode_sources(sources, lang)
        mask = src != self.src_vocab.pad
        eos = self.tgt_vocab.eos
        with nk.no_grad():
            enc = self.encode(src, mask, lang, table=emb)
            ys = np.full((len(sources), 1), self.tgt_vocab.bos, dtype=np.int64)
            done = np.zeros(len(sources), dtype=bool)
            for step in range(int(limits.max())):
                done |= step >= limits
                if done.all():
                    break
                h = self.decoder_states(ys, enc, mask, emb)
                logits = self._mask_logits(h.data[:, -1] @ proj.data.T)
                nxt = logits.argmax(-1)
                nxt[done] = self.tgt_vocab.pad
                ys = np.concatenate([ys, nxt[:, None]], axis=1)
                done |= nxt == eos
                if done.all():
                    break
        out = []
        for row in ys[:, 1:]:
            seq = []
            for t in row:
                if t == eos or t == self.tgt_vocab.pad:
                    break
                seq.append(int(t))
            out.append(seq)
        return out

    def beam_decode(self, source: Sequence[int], lang, beam: int = 5, max_len: int | None = None,
                    alpha: float = 1.0, tables=None) -> list:
        """Beam search for one sentence; final scores are ``logprob / length**alpha``."""
        max_len = self.length_limit(len(source), max_len)
        emb, proj = self._inference_tables(lang, tables)
        src = self.encode_sources([source], lang)
        mask = src != self.src_vocab.pad
        eos = self.tgt_vocab.eos
        with nk.no_grad():
            enc = self.encode(src, mask, lang, table=emb)
            hyps = [([self.tgt_vocab.bos], 0.0)]
            finished = []
            for step in range(max_len):
                ys = np.array([h for h, _ in hyps], dtype=np.int64)
                n = len(hyps)
                e = Tensor(np.repeat(enc.data, n, axis=0))
                m = np.repeat(mask, n, axis=0)
                h = self.decoder_states(ys, e, m, emb)
                logits = self._mask_logits(h.data[:, -1] @ proj.data.T)
                lp = nk.log_softmax_np(logits, -1)
                cand = (np.array([s for _, s in hyps])[:, None] + lp).reshape(-1)
                V = lp.shape[1]
                order = np.argsort(-cand, kind="stable")[: 2 * beam]
                new = []
                for rank, flat in enumerate(order):
                    hi, tok = divmod(int(flat), V)
                    score = float(cand[flat])
                    if not np.isfinite(score):
                        break
                    if tok == eos:
                        if rank < beam:
                            seq = hyps[hi][0][1:]
                            finished.append((seq, score / max(len(seq) + 1, 1) ** alpha))
                        continue
                    new.append((hyps[hi][0] + [tok], score))
                    if len(new) == beam:
                        break
                if len(finished) >= beam or not new:
                    break
                hyps = new
            if not finished:
                finished = [(h[1:], s / max(len(h) - 1, 1) ** alpha) for h, s in hyps]
        best = max(finished, key=lambda fs: fs[1])
        return list(best[0])

    def translate(self, sources, lang, beam: int = 1, tables=None, max_len=None) -> list:
        if beam <= 1:
            return self.greedy_decode(sources, lang, max_len=max_len, tables=tables)
        return [self.beam_decode(s, lang, beam, max_len=max_len, tables=tables) for s in sources]
