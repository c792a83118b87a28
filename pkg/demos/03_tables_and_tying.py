"""Precomputed tables, tied logits and stale-table protection.

At inference the per-language embedding matrix is computed once, so each
decoding step costs the same as a plain lookup table.

Run: python demos/03_tables_and_tying.py
"""
import numpy as np

from decsde.chargrams import build_ngram_vocab
from decsde.embedding import StaleTableError
from decsde.nmt import ModelConfig, Transformer
from decsde.segmenter import SubwordVocab, special_tokens

langs = ["hrl", "lrl"]
src = SubwordVocab(special_tokens(langs) + ["x", "y", "z"])
tgt = SubwordVocab(special_tokens(langs) + ["▁ka", "▁ká", "la", "▁mi", "s"])
cfg = ModelConfig(enc_layers=1, dec_layers=1, heads=2, model_dim=16, ffn_dim=32, dropout_p=0.0,
                  max_len=16, latent_size=8, ranks={"hrl": 2, "lrl": 2})
model = Transformer(cfg, src, tgt, langs, build_ngram_vocab(tgt, 3), seed=0)

tied = model.num_parameters()
untied = Transformer(ModelConfig(**{**cfg.to_dict(), "tie_mode": "none"}), src, tgt, langs,
                     build_ngram_vocab(tgt, 3), seed=0).num_parameters()
print(f"parameters tied={tied} untied={untied} (difference V*d = {len(tgt)}*{cfg.model_dim})")

tables = model.precompute_tables()
print({lang: t.matrix.shape for lang, t in tables.items()})
# U starts at zero, so both languages share one table until training moves U
print("identical before training:", np.array_equal(tables["hrl"].matrix, tables["lrl"].matrix))
u = model.named_parameters()["decsde.U.lrl"]
u.assign(np.random.default_rng(1).normal(scale=0.5, size=u.data.shape))
tables = model.precompute_tables()
print("identical after moving U(lrl):", np.array_equal(tables["hrl"].matrix, tables["lrl"].matrix))

sources = [[src["x"], src["y"]], [src["z"]]]
print("greedy with tables (untrained, so noise):", model.greedy_decode(sources, "lrl", tables=tables))

# any parameter update bumps the version; old tables are refused
w = model.named_parameters()["decsde.W_s"]
w.assign(w.data * 1.01)
try:
    model.greedy_decode(sources, "lrl", tables=tables)
except StaleTableError as err:
    print("refused:", err)
