"""Walk one token through the spelling-based embedding, stage by stage.

lexical part  c   = tanh(BoN(w) W_c)
per language  c_i = tanh(c (I + U V)^T)
latent part   s   = softmax(c_i W_s) W_s^T
embedding     e   = c_i + s

Run: python demos/02_embedding_pipeline.py
"""
import numpy as np

from decsde.chargrams import bon_matrix, build_ngram_vocab
from decsde.embedding import (DecSDEEmbedder, DecSDEParams, LanguageId, char_aware_embedding,
                              lang_transform, latent_attention, latent_semantic)
from decsde.segmenter import SubwordVocab, special_tokens

glg, por = LanguageId("glg", 0), LanguageId("por", 1)
vocab = SubwordVocab(special_tokens(["glg", "por"]) + ["▁ola", "▁olá", "▁casa", "▁cousa", "▁mar"])
ngv = build_ngram_vocab(vocab, n_max=4)
rng = np.random.default_rng(0)
p = DecSDEParams(len(ngv), d=16, latent_size=8, n_specials=vocab.n_specials, languages=[glg, por],
                 transform="lowrank", ranks={"glg": 2, "por": 2}, rng=rng)
emb = DecSDEEmbedder(p, bon_matrix(vocab, ngv), vocab.n_specials, ngv)

tok = vocab["▁olá"]
c = char_aware_embedding(emb.bon.row(tok), p)
print("lexical c, first 4 dims:", np.round(c.data[:4], 3))

# U starts at zero, so each language transform starts as plain tanh
print("glg transform == tanh(c):", np.array_equal(lang_transform(c, glg, p).data, np.tanh(c.data)))

# give the two languages different low-rank corrections
for t in p.transforms.values():
    t.U.assign(rng.normal(scale=0.5, size=t.U.shape))
c_glg, c_por = lang_transform(c, glg, p), lang_transform(c, por, p)
print("glg vs por after training-like U:", round(float(np.abs(c_glg.data - c_por.data).max()), 3))

att = latent_attention(c_glg, p).data
print("latent attention weights (sum to 1):", np.round(att, 3), round(float(att.sum()), 6))
print("latent s, first 4 dims:", np.round(latent_semantic(c_glg, p).data[:4], 3))


def cos(x, y):
    return float(x @ y / (np.linalg.norm(x) * np.linalg.norm(y)))


e = {w: emb.embed_token(vocab[w], glg).data for w in ["▁ola", "▁olá", "▁mar"]}
print(f"cos(ola, olá) = {cos(e['▁ola'], e['▁olá']):.3f}")
print(f"cos(ola, mar) = {cos(e['▁ola'], e['▁mar']):.3f}")
