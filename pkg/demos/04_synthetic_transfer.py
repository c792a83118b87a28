"""Train LookUp-piece and DecSDE on a toy related-language pair, then translate.

The toy pair: an English-like source, a high-resource target (5K sentences)
and a low-resource target (400 sentences) whose words are the high-resource
words with a few accent-like substitutions.

Run: python demos/04_synthetic_transfer.py  (a few minutes on one core)
"""
import time

from decsde import experiment as ex

setup = ex.prepare_synthetic(seed=0)
pair = setup.pair
print("mean edit distance hrl->lrl:", round(pair.mean_edit_distance(), 2))
for h, l in list(zip(pair.hrl_words, pair.lrl_words))[:6]:
    print(f"  {h:>10} -> {l}")

results = {}
for mode in ("lookup_piece", "decsde"):
    t0 = time.perf_counter()
    res = ex.run_variant(setup, ex.desk_model_config(mode), ex.desk_train_config(1), epochs=ex.DESK_EPOCHS)
    results[mode] = res
    print(f"{mode:>13}: BLEU hrl {res.bleu['hrl']:.2f}  lrl {res.bleu['lrl']:.2f}  "
          f"({time.perf_counter() - t0:.0f}s)")

print("\nfirst LRL test sentences")
test = setup.raw["lrl"]["test"]
for i in range(3):
    print("  src   :", test.src[i])
    print("  ref   :", test.tgt[i])
    for mode, res in results.items():
        print(f"  {mode[:6]:<6}:", res.hyps["lrl"][i])
