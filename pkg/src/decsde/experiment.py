"""End-to-end desk-scale pipeline on the synthetic HRL/LRL pair."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .chargrams import NGramVocab, build_ngram_vocab
from .embedding import EmbedMode
from .evalbench import (SyntheticPair, bleu_corpus, embedding_mrr, extract_word_pairs, make_synthetic_pair,
                        subword_word_embedder)
from .nmt import ModelConfig, Transformer
from .segmenter import BPESegmenter, WordSegmenter, build_word_vocab, train_bpe
from .trainer import LangCorpus, TrainConfig, Trainer

HRL, LRL = "hrl", "lrl"
DESK_EPOCHS = 10


@dataclass
class Setup:
    pair: SyntheticPair
    languages: list
    src_seg: BPESegmenter
    tgt_seg: BPESegmenter
    word_seg: WordSegmenter
    ngrams: NGramVocab
    raw: dict = field(default_factory=dict)  # lang -> split -> ParallelCorpus

    def segmenter_for(self, mode: EmbedMode):
        return self.word_seg if mode is EmbedMode.LOOKUP_WORD else self.tgt_seg

    def corpora(self, mode: EmbedMode, split: str = "train") -> list:
        seg = self.segmenter_for(mode)
        out = []
        for lang in self.languages:
            pc = self.raw[lang][split]
            out.append(LangCorpus(lang, [self.src_seg.encode(s) for s in pc.src],
                                  [seg.encode(t) for t in pc.tgt]))
        return out


def prepare_synthetic(seed: int = 0, root_vocab_size: int = 1000, corruption_rate: float = 0.6,
                      tgt_vocab_size: int = 2000, src_vocab_size: int = 2000, n_max: int = 4,
                      word_vocab_size: int = 64000, **pair_kwargs) -> Setup:
    pair = make_synthetic_pair(seed, root_vocab_size, corruption_rate, **pair_kwargs)
    langs = [HRL, LRL]
    src_lines = list(pair.hrl["train"].src) + list(pair.lrl["train"].src)
    src_mt, src_v = train_bpe(src_lines, src_vocab_size, languages=langs)
    tgt_mt, tgt_v = train_bpe(pair.target_corpus("train"), tgt_vocab_size)
    word_v = build_word_vocab([pair.target_corpus("train")], word_vocab_size)
    return Setup(
        pair, langs, BPESegmenter(src_mt, src_v), BPESegmenter(tgt_mt, tgt_v), WordSegmenter(word_v),
        build_ngram_vocab(tgt_v, n_max), raw={HRL: pair.hrl, LRL: pair.lrl},
    )


def build_model(setup: Setup, config: ModelConfig, seed: int = 0) -> Transformer:
    seg = setup.segmenter_for(config.embed_mode)
    ngrams = setup.ngrams if config.embed_mode.spelling_based else None
    return Transformer(config, setup.src_seg.vocab, seg.vocab, setup.languages, ngrams, seed=seed)


def translate_lines(model: Transformer, setup: Setup, lines, lang: str, beam: int = 1, tables=None,
                    batch_size: int = 64) -> list:
    seg = setup.segmenter_for(model.config.embed_mode)
    tables = tables if tables is not None else model.precompute_tables()
    src = [setup.src_seg.encode(s) for s in lines]
    out = []
    for i in range(0, len(src), batch_size):
        for ids in model.translate(src[i:i + batch_size], lang, beam=beam, tables=tables):
            out.append(seg.decode(ids))
    return out


@dataclass
class VariantResult:
    mode: EmbedMode
    seed: int
    bleu: dict
    model: Transformer
    log: list
    train_seconds: float
    hyps: dict = field(default_factory=dict)
    setup: Setup | None = None


def run_variant(setup: Setup, config: ModelConfig, train_config: TrainConfig, epochs: int,
                eval_split: str = "test", beam: int = 1) -> VariantResult:
    model = build_model(setup, config, seed=train_config.seed)
    trainer = Trainer(model, train_config)
    t0 = time.perf_counter()
    trainer.fit(setup.corpora(config.embed_mode), epochs=epochs)
    dt = time.perf_counter() - t0
    tables = model.precompute_tables()
    bleu, hyps = {}, {}
    for lang in setup.languages:
        pc = setup.raw[lang][eval_split]
        hyps[lang] = translate_lines(model, setup, pc.src, lang, beam=beam, tables=tables)
        bleu[lang] = bleu_corpus(hyps[lang], pc.tgt).score
    return VariantResult(config.embed_mode, train_config.seed, bleu, model, trainer.log, dt, hyps, setup)


def desk_model_config(mode, **overrides) -> ModelConfig:
    base = dict(enc_layers=2, dec_layers=2, heads=4, model_dim=64, ffn_dim=128, dropout_p=0.1,
                embed_mode=EmbedMode(mode), max_len=64, latent_size=128, ranks={HRL: 4, LRL: 4})
    base.update(overrides)
    return ModelConfig(**base)


def desk_train_config(seed: int, **overrides) -> TrainConfig:
    base = dict(lr_peak=2e-3, warmup_steps=200, max_epochs=DESK_EPOCHS, dropout=0.1, label_smoothing=0.1,
                batch_tokens=600, seed=seed)
    base.update(overrides)
    return TrainConfig(**base)


def median(xs) -> float:
    return float(np.median(np.asarray(xs, dtype=float)))


def word_counts(setup: Setup, lang: str, split: str = "train") -> dict:
    counts: dict = {}
    for line in setup.raw[lang][split].tgt:
        for w in line.split():
            counts[w] = counts.get(w, 0) + 1
    return counts


def embedding_similarity(setup: Setup, model: Transformer, top_n: int = 2000) -> dict:
    """MRR of retrieving each LRL word's HRL cognate, per edit distance.

    Words are embedded as the mean of their subword rows in the model's
    precomputed per-language tables.
    """
    hc, lc = word_counts(setup, HRL), word_counts(setup, LRL)
    pairs = extract_word_pairs(hc, lc, top_n=top_n)
    hrl_vocab = [w for w, _ in sorted(hc.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]]
    seg = setup.segmenter_for(model.config.embed_mode)
    tables = model.precompute_tables()
    return embedding_mrr(pairs, subword_word_embedder(tables[LRL].matrix, seg),
                         subword_word_embedder(tables[HRL].matrix, seg), hrl_vocab)


def transfer_experiment(seeds=(1, 2, 3), modes=("lookup_piece", "decsde"), epochs: int = DESK_EPOCHS,
                        model_overrides: dict | None = None, train_overrides: dict | None = None,
                        **data_kwargs) -> dict:
    """Train every mode on one synthetic pair per seed; returns ``mode -> [VariantResult]``."""
    out = {m: [] for m in modes}
    for seed in seeds:
        setup = prepare_synthetic(seed=seed, **data_kwargs)
        for mode in modes:
            res = run_variant(setup, desk_model_config(mode, **(model_overrides or {})),
                              desk_train_config(seed, **(train_overrides or {})), epochs)
            out[mode].append(res)
    return out
