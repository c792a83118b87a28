"""Character n-grams: why "ola" and "olá" end up close.

Run: python demos/01_spelling_ngrams.py
"""
from decsde.chargrams import bon_vector, build_ngram_vocab, extract_ngrams
from decsde.segmenter import SubwordVocab, special_tokens

# a token is split into every substring of length 1..n_max, counted with multiplicity
grams = extract_ngrams("▁olá", 3)
print("n-grams of ▁olá:", dict(grams))

# accented letters are single symbols, so the two spellings share most grams
a, b = extract_ngrams("▁ola", 3), extract_ngrams("▁olá", 3)
shared = sorted(set(a) & set(b))
print(f"shared grams ({len(shared)} of {len(a)}):", shared)

# the n-gram vocabulary is built from the subword vocabulary itself
vocab = SubwordVocab(special_tokens(["glg", "por"]) + ["▁ola", "▁olá", "▁casa", "sa"])
ngv = build_ngram_vocab(vocab, n_max=3)
print("n-gram vocabulary size:", len(ngv))

# BoN(w): sparse (gram id, count) pairs; out-of-vocabulary grams are dropped
print("BoN(▁olá):", bon_vector("▁olá", ngv))
print("BoN(▁ol?):", bon_vector("▁ol?", ngv))
