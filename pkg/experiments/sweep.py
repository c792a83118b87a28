"""Run one experiment config over a list of values for one key; print a BLEU row per value.

    python experiments/sweep.py experiments/ngram_size.cfg n_max=3,4,5

Each row gets its own work directory (vocabularies, n-grams, checkpoints,
hypotheses) under the config's ``work_dir``; the synthetic corpora are
generated once into ``data_dir`` and shared.  Extra ``--key value`` pairs
after the sweep argument override the config for every row.
"""

import argparse
import sys
import time
from pathlib import Path

from decsde import cli
from decsde.evalbench import bleu_corpus


def run(argv: list) -> None:
    code = cli.main(argv)
    if code != 0:
        sys.exit(f"`decsde {' '.join(argv)}` failed with exit code {code}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config")
    parser.add_argument("sweep", help="key=v1,v2,...")
    args, extra = parser.parse_known_args()
    key, _, values = args.sweep.partition("=")
    if not values:
        parser.error("sweep must look like key=v1,v2,...")
    base = cli.load_config(args.config, cli.split_overrides(extra))
    opt = "--" + key.replace("_", "-")

    if not Path(base.data("train", base.languages[0], "src")).exists():
        run(["make-synthetic", "--config", args.config, *extra])

    print(f"{key:>14}  " + "  ".join(f"{lang:>7}" for lang in base.languages) + "  seconds")
    for value in values.split(","):
        work = str(Path(base.work_dir) / f"{key}={value}")
        common = ["--config", args.config, *extra, opt, value, "--work-dir", work]
        t0 = time.perf_counter()
        for cmd in ("build-vocab", "build-ngrams", "train"):
            run([cmd, *common])
        cfg = cli.load_config(args.config, cli.split_overrides([*extra, opt, value, "--work-dir", work]))
        scores = []
        for lang in cfg.languages:
            hyp = Path(work) / f"test.{lang}.hyp"
            run(["translate", *common, "--lang", lang, "--output", str(hyp)])
            refs = cli.read_lines(cfg.data("test", lang, "tgt"))
            scores.append(bleu_corpus(cli.read_lines(hyp), refs).score)
        print(f"{value:>14}  " + "  ".join(f"{s:7.2f}" for s in scores) + f"  {time.perf_counter() - t0:7.0f}",
              flush=True)


if __name__ == "__main__":
    main()
