"""BLEU, rare-word F1 and the embedding-similarity probe on toy inputs.

Run: python demos/05_scoring_and_analysis.py
"""
import numpy as np

from decsde.evalbench import (BLEU_SIGNATURE, WordPairSet, bleu_corpus, embedding_mrr, mrr_gain,
                              rare_word_f1)

refs = ["the cat sat on the mat .", "a dog barked at night"]
hyps = ["the cat sat on a mat .", "a dog barked at night"]
rep = bleu_corpus(hyps, refs)
print(f"BLEU = {rep.score:.2f}  [{BLEU_SIGNATURE}]")
print("precisions:", [round(x, 1) for x in rep.precisions], "BP:", round(rep.brevity_penalty, 3))

# F1 by how often the word was seen in training
train_freq = {"the": 50, "cat": 3, "mat": 1, "dog": 9}
for bucket, f in rare_word_f1(hyps, refs, train_freq).items():
    print(f"  freq {bucket:>7}: F1 {f:.2f}")

# retrieval probe: does an LRL word find its HRL cognate by cosine similarity?
hrl = {"casa": [1.0, 0.1, 0.0], "mar": [0.0, 1.0, 0.2], "lume": [0.1, 0.0, 1.0]}
good = {"cása": [0.9, 0.2, 0.0], "már": [0.1, 0.9, 0.1]}
poor = {"cása": [0.0, 0.3, 1.0], "már": [0.9, 0.1, 0.0]}
pairs = WordPairSet([("casa", "cása", 1), ("mar", "már", 1)])


def embed(table):
    return lambda words: np.array([table[w] for w in words])


m_good = embedding_mrr(pairs, embed(good), embed(hrl), list(hrl))
m_poor = embedding_mrr(pairs, embed(poor), embed(hrl), list(hrl))
print("MRR by edit distance:", m_good, "baseline:", m_poor, "gain:", mrr_gain(m_good, m_poor))
