"""Command-line driver: ``python -m decsde <command> [--config FILE] [--key value ...]``.

Every command reads one flat ``key = value`` config file; any config key can be
overridden with ``--key value`` (dashes and underscores are interchangeable).
Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error, 5 stale
precomputed embedding table.
"""

from __future__ import annotations

import argparse
import collections
import dataclasses
import logging
import sys
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numkernel as nk
from .chargrams import NGramVocab, build_ngram_vocab
from .embedding import EmbeddingTable, EmbedMode, LanguageId, StaleTableError
from .evalbench import (
    BLEU_SIGNATURE,
    bleu_corpus,
    embedding_mrr,
    extract_word_pairs,
    make_synthetic_pair,
    mrr_gain,
    rare_word_f1,
    speed_bench,
    subword_word_embedder,
    write_csv,
    write_gnuplot,
)
from .nmt import ModelConfig, Transformer
from .segmenter import VocabError, build_word_vocab, load_segmenter, train_bpe
from .trainer import CheckpointError, LangCorpus, TrainConfig, Trainer, read_checkpoint, restore

log = logging.getLogger("decsde")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_STALE = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# experiment config


@dataclass
class ExperimentConfig:
    # paths
    data_dir: str = "data"
    work_dir: str = "work"
    languages: list = field(default_factory=lambda: ["hrl", "lrl"])
    # vocabularies
    vocab_size: int = 2000
    src_vocab_size: int = 2000
    word_vocab_size: int = 64000
    n_max: int = 4
    ngram_min_count: int = 1
    # model
    embed_mode: str = "decsde"
    tie_mode: str = "two_way"
    latent_size: int = 256
    u: int = 0
    ranks: dict = field(default_factory=dict)  # per-language override, written as ``u.<lang>``
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    dropout: float = 0.3
    max_len: int = 64
    keep_tanh_without_transform: bool = False
    wc_fan_in_init: bool = True
    # training
    lr_peak: float = 5e-4
    warmup_steps: int = 400
    max_epochs: int = 50
    label_smoothing: float = 0.1
    batch_tokens: int = 2048
    sampling_temperature: float = 1.0
    patience: typing.Optional[int] = None
    seed: int = 1
    # decoding
    beam: int = 5
    alpha: float = 1.0
    max_len_a: float = 2.0
    max_len_b: int = 10
    # synthetic data
    root_vocab_size: int = 1000
    corruption_rate: float = 0.6
    n_hrl: int = 5000
    n_lrl: int = 400
    n_dev: int = 100
    n_test: int = 200
    sentence_len_min: int = 3
    sentence_len_max: int = 8

    def __post_init__(self):
        try:
            EmbedMode(self.embed_mode)
        except ValueError:
            raise ConfigError(f"unknown embed_mode {self.embed_mode!r}; "
                              f"choose from {', '.join(m.value for m in EmbedMode)}") from None
        if not self.languages:
            raise ConfigError("languages must name at least one target language")
        if self.vocab_size < 4 + len(self.languages) or self.src_vocab_size < 4 + len(self.languages):
            raise ConfigError("vocabulary sizes must exceed the number of special tokens")
        if not 1 <= self.n_max <= 8:
            raise ConfigError("n_max must be in [1, 8]")
        for code in self.ranks:
            if code not in self.languages:
                raise ConfigError(f"rank given for unknown language {code!r}")
        for code in self.languages:
            if not 0 <= self.rank(code) < self.model_dim:
                raise ConfigError(f"rank u={self.rank(code)} for {code!r} must satisfy 0 <= u < model_dim")

    def rank(self, code: str) -> int:
        return int(self.ranks.get(code, self.u))

    # -- derived configs ---------------------------------------------------

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig(
                enc_layers=self.enc_layers, dec_layers=self.dec_layers, heads=self.heads,
                model_dim=self.model_dim, ffn_dim=self.ffn_dim, dropout_p=self.dropout,
                embed_mode=EmbedMode(self.embed_mode), tie_mode=self.tie_mode, max_len=self.max_len,
                latent_size=self.latent_size, ranks={c: self.rank(c) for c in self.languages},
                keep_tanh_without_transform=self.keep_tanh_without_transform,
                max_len_a=self.max_len_a, max_len_b=self.max_len_b, wc_fan_in_init=self.wc_fan_in_init,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                lr_peak=self.lr_peak, warmup_steps=self.warmup_steps, max_epochs=self.max_epochs,
                dropout=self.dropout, label_smoothing=self.label_smoothing, batch_tokens=self.batch_tokens,
                seed=self.seed, sampling_temperature=self.sampling_temperature, patience=self.patience,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None

    # -- paths ---------------------------------------------------------------

    def work(self, name: str) -> Path:
        return Path(self.work_dir) / name

    def data(self, split: str, lang: str, side: str) -> Path:
        return Path(self.data_dir) / f"{split}.{lang}.{side}"


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_HINTS = typing.get_type_hints(ExperimentConfig)


def _convert(key: str, raw: str):
    hint = _HINTS[key]
    raw = raw.strip()
    try:
        if hint is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint == typing.Optional[int]:
            return None if raw.lower() in ("none", "") else int(raw)
        if hint is list:
            return [x.strip() for x in raw.split(",") if x.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, list):
        return ",".join(value)
    return str(value)


def parse_assignments(pairs, source: str = "config") -> dict:
    """Typed values for ``(key, raw_value)`` pairs; ``u.<lang>`` keys become ranks."""
    out, ranks = {}, {}
    for key, raw in pairs:
        key = key.strip().replace("-", "_")
        if key.startswith("u.") and len(key) > 2:
            try:
                ranks[key[2:]] = int(raw)
            except ValueError:
                raise ConfigError(f"{source}: bad rank {raw!r} for {key}") from None
            continue
        if key not in _FIELDS or key == "ranks":
            raise ConfigError(f"{source}: unknown key {key!r}")
        out[key] = _convert(key, raw)
    if ranks:
        out["ranks"] = ranks
    return out


def parse_config_text(text: str, source: str = "config") -> dict:
    pairs, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        pairs.append((key, raw))
    return parse_assignments(pairs, source)


def build_config(values: dict, overrides: dict | None = None) -> ExperimentConfig:
    merged = dict(values)
    for k, v in (overrides or {}).items():
        if k == "ranks":
            merged["ranks"] = {**merged.get("ranks", {}), **v}
        else:
            merged[k] = v
    try:
        return ExperimentConfig(**merged)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        values = parse_config_text(p.read_text(encoding="utf-8"), str(p))
    return build_config(values, overrides)


def dump_config(cfg: ExperimentConfig) -> str:
    """Normalised ``key = value`` text; parsing it gives back ``cfg``."""
    lines = []
    for f in dataclasses.fields(cfg):
        if f.name == "ranks":
            continue
        lines.append(f"{f.name} = {_format(getattr(cfg, f.name))}")
    for code in sorted(cfg.ranks):
        lines.append(f"u.{code} = {cfg.ranks[code]}")
    return "\n".join(lines) + "\n"


def split_overrides(tokens) -> dict:
    """``--key value`` / ``--key=value`` pairs left over by argparse."""
    pairs = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, raw = tok[2:].split("=", 1)
            i += 1
        elif i + 1 < len(tokens) and not _is_flag_token(tokens[i + 1]):
            key, raw = tok[2:], tokens[i + 1]
            i += 2
        else:
            key, raw = tok[2:], "true"
            i += 1
        pairs.append((key, raw))
    return parse_assignments(pairs, "command line")


def _is_flag_token(tok: str) -> bool:
    if not tok.startswith("--"):
        return False
    try:
        float(tok)
        return False
    except ValueError:
        return True


# ---------------------------------------------------------------------------
# data access


def read_lines(path) -> list:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"missing data file {p}")
    return p.read_text(encoding="utf-8").splitlines()


def read_parallel(cfg: ExperimentConfig, split: str, lang: str) -> tuple:
    src = read_lines(cfg.data(split, lang, "src"))
    tgt = read_lines(cfg.data(split, lang, "tgt"))
    if len(src) != len(tgt):
        raise DataError(f"{split}.{lang}: {len(src)} source lines but {len(tgt)} target lines")
    return src, tgt


def _require(path: Path, hint: str) -> Path:
    if not path.is_file():
        raise DataError(f"missing {path} (run `{hint}` first)")
    return path


def load_segmenters(cfg: ExperimentConfig) -> tuple:
    """Source BPE segmenter and the target segmenter matching ``embed_mode``."""
    src = load_segmenter(_require(cfg.work("src.vocab"), "build-vocab"), _require(cfg.work("src.merges"), "build-vocab"))
    if EmbedMode(cfg.embed_mode) is EmbedMode.LOOKUP_WORD:
        tgt = load_segmenter(_require(cfg.work("tgt.words"), "build-vocab"))
    else:
        tgt = load_segmenter(_require(cfg.work("tgt.vocab"), "build-vocab"), _require(cfg.work("tgt.merges"), "build-vocab"))
    return src, tgt


def load_ngrams(cfg: ExperimentConfig):
    if not EmbedMode(cfg.embed_mode).spelling_based:
        return None
    return NGramVocab.load(_require(cfg.work("ngrams.tsv"), "build-ngrams"), n_max=cfg.n_max,
                           min_count=cfg.ngram_min_count)


def encode_corpora(cfg, src_seg, tgt_seg, split: str) -> list:
    out = []
    for lang in cfg.languages:
        src, tgt = read_parallel(cfg, split, lang)
        out.append(LangCorpus(lang, [src_seg.encode(s) for s in src], [tgt_seg.encode(t) for t in tgt]))
    return out


def default_checkpoint(cfg: ExperimentConfig) -> Path:
    best = cfg.work("ckpt/best.ckpt")
    return best if best.is_file() else cfg.work("ckpt/last.ckpt")


def load_model(path) -> tuple:
    """Rebuild a trained model (and its segmenters) from a checkpoint alone."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint {path} not found")
    header, tensors = read_checkpoint(path)
    files = header.get("files", {})
    try:
        mcfg = ModelConfig.from_dict(header["model_config"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: unusable model config ({e})") from None
    src_seg = load_segmenter(files["src_vocab"], files["src_merges"])
    tgt_seg = load_segmenter(files["tgt_vocab"], files.get("tgt_merges"))
    ngrams = None
    if mcfg.embed_mode.spelling_based:
        ngrams = NGramVocab.load(files["ngrams"], n_max=int(header["n_max"]))
    model = Transformer(mcfg, src_seg.vocab, tgt_seg.vocab, header["languages"], ngrams, seed=0)
    restore(model, tensors, header)
    return model, src_seg, tgt_seg, header


def save_table(path, table: EmbeddingTable) -> None:
    np.savez(path, matrix=table.matrix, params_version=np.int64(table.params_version),
             language=np.array(table.language.code), index=np.int64(table.language.index))


def load_table(path) -> EmbeddingTable:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"table file {p} not found")
    with np.load(p) as z:
        m = z["matrix"].copy()
        m.setflags(write=False)
        return EmbeddingTable(m, LanguageId(str(z["language"]), int(z["index"])), int(z["params_version"]))


# ---------------------------------------------------------------------------
# commands


def cmd_make_synthetic(cfg, args) -> None:
    pair = make_synthetic_pair(
        cfg.seed, cfg.root_vocab_size, cfg.corruption_rate, n_hrl=cfg.n_hrl, n_lrl=cfg.n_lrl,
        n_dev=cfg.n_dev, n_test=cfg.n_test, sentence_len=(cfg.sentence_len_min, cfg.sentence_len_max),
    )
    if len(cfg.languages) != 2:
        raise ConfigError("make-synthetic writes exactly two languages (high-resource first)")
    hrl, lrl = cfg.languages
    paths = pair.write(cfg.data_dir, hrl, lrl)
    lex = Path(cfg.data_dir) / "lexicon.tsv"
    lex.write_text("".join(f"{s}\t{h}\t{l}\n" for s, h, l in zip(pair.src_words, pair.hrl_words, pair.lrl_words)),
                   encoding="utf-8")
    print(f"wrote {len(paths)} corpus files to {cfg.data_dir} "
          f"(mean HRL/LRL edit distance {pair.mean_edit_distance():.3f})")


def cmd_build_vocab(cfg, args) -> None:
    src_lines, tgt_lines = [], []
    for lang in cfg.languages:
        s, t = read_parallel(cfg, "train", lang)
        src_lines += s
        tgt_lines += t
    Path(cfg.work_dir).mkdir(parents=True, exist_ok=True)
    src_mt, src_v = train_bpe(src_lines, cfg.src_vocab_size, languages=cfg.languages)
    tgt_mt, tgt_v = train_bpe(tgt_lines, cfg.vocab_size)
    words = build_word_vocab([tgt_lines], cfg.word_vocab_size)
    src_v.save(cfg.work("src.vocab"))
    src_mt.save(cfg.work("src.merges"))
    tgt_v.save(cfg.work("tgt.vocab"))
    tgt_mt.save(cfg.work("tgt.merges"))
    words.save(cfg.work("tgt.words"))
    print(f"source vocab {len(src_v)}, target vocab {len(tgt_v)}, target words {len(words)}")


def cmd_build_ngrams(cfg, args) -> None:
    vocab = load_segmenter(_require(cfg.work("tgt.vocab"), "build-vocab")).vocab
    ngv = build_ngram_vocab(vocab, cfg.n_max, cfg.ngram_min_count)
    ngv.save(cfg.work("ngrams.tsv"))
    print(f"{len(ngv)} character n-grams (n <= {cfg.n_max}, min count {cfg.ngram_min_count})")


def _files_header(cfg) -> dict:
    word = EmbedMode(cfg.embed_mode) is EmbedMode.LOOKUP_WORD
    files = {
        "src_vocab": str(cfg.work("src.vocab").resolve()),
        "src_merges": str(cfg.work("src.merges").resolve()),
        "tgt_vocab": str(cfg.work("tgt.words" if word else "tgt.vocab").resolve()),
    }
    if not word:
        files["tgt_merges"] = str(cfg.work("tgt.merges").resolve())
    if EmbedMode(cfg.embed_mode).spelling_based:
        files["ngrams"] = str(cfg.work("ngrams.tsv").resolve())
    return {"files": files, "n_max": cfg.n_max, "experiment": dump_config(cfg)}


def cmd_train(cfg, args) -> None:
    src_seg, tgt_seg = load_segmenters(cfg)
    ngrams = load_ngrams(cfg)
    train = encode_corpora(cfg, src_seg, tgt_seg, "train")
    dev = encode_corpora(cfg, src_seg, tgt_seg, "dev") if not args.no_dev else []
    model = Transformer(cfg.model_config(), src_seg.vocab, tgt_seg.vocab, cfg.languages, ngrams, seed=cfg.seed)
    ck = Path(args.checkpoint_dir) if args.checkpoint_dir else cfg.work("ckpt")
    trainer = Trainer(model, cfg.train_config(), header_extra=_files_header(cfg))
    if args.resume:
        trainer.load(args.resume)
    t0 = time.perf_counter()
    res = trainer.fit(train, dev, epochs=args.epochs, checkpoint_dir=ck, log_path=cfg.work("train_log.csv"))
    print(f"trained {trainer.epoch} epochs, {trainer.opt.step} steps, {model.num_parameters()} parameters, "
          f"{time.perf_counter() - t0:.1f}s; best dev ppl {res.best_dev_ppl:.3f} at epoch {res.best_epoch}")


def _checkpoint_arg(cfg, args) -> Path:
    return Path(args.checkpoint) if args.checkpoint else default_checkpoint(cfg)


def _tables_for(args, lang: str):
    if not args.tables:
        return None
    return load_table(Path(args.tables) / f"{lang}.npz")


def cmd_translate(cfg, args) -> None:
    model, src_seg, tgt_seg, _ = load_model(_checkpoint_arg(cfg, args))
    lang = args.lang or cfg.languages[-1]
    if lang not in model.languages:
        raise ConfigError(f"model has no target language {lang!r}")
    lines = read_lines(args.input) if args.input else read_lines(cfg.data("test", lang, "src"))
    table = _tables_for(args, lang)
    tables = {lang: table} if table is not None else model.precompute_tables()
    beam = cfg.beam if args.beam is None else args.beam
    out = []
    ids = [src_seg.encode(s) for s in lines]
    if beam <= 1:
        for i in range(0, len(ids), 64):
            out += [tgt_seg.decode(h) for h in model.greedy_decode(ids[i:i + 64], lang, tables=tables)]
    else:
        out = [tgt_seg.decode(model.beam_decode(s, lang, beam, alpha=cfg.alpha, tables=tables)) for s in ids]
    text = "".join(h + "\n" for h in out)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_precompute(cfg, args) -> None:
    model, *_ = load_model(_checkpoint_arg(cfg, args))
    out = Path(args.out) if args.out else cfg.work("tables")
    out.mkdir(parents=True, exist_ok=True)
    for code, table in model.precompute_tables().items():
        save_table(out / f"{code}.npz", table)
    print(f"wrote {len(model.languages)} tables (version {model.params_version}) to {out}")


def _word_counts(cfg, lang) -> collections.Counter:
    return collections.Counter(w for line in read_parallel(cfg, "train", lang)[1] for w in line.split())


def cmd_analyze_embeddings(cfg, args) -> None:
    if len(cfg.languages) < 2:
        raise ConfigError("embedding analysis needs a high- and a low-resource language")
    hrl, lrl = args.hrl or cfg.languages[0], args.lrl or cfg.languages[-1]
    hc, lc = _word_counts(cfg, hrl), _word_counts(cfg, lrl)
    pairs = extract_word_pairs(hc, lc, top_n=args.top_n)
    if not len(pairs):
        raise DataError("no HRL/LRL word pairs within edit distance 4")
    hrl_vocab = [w for w, _ in hc.most_common(args.top_n)]
    results = {}
    for name, path in (("method", _checkpoint_arg(cfg, args)), ("baseline", args.baseline)):
        if path is None:
            continue
        model, _, tgt_seg, _ = load_model(path)
        tables = model.precompute_tables()
        results[name] = embedding_mrr(
            pairs,
            subword_word_embedder(tables[lrl].matrix, tgt_seg),
            subword_word_embedder(tables[hrl].matrix, tgt_seg),
            hrl_vocab,
        )
    rows = []
    gain = mrr_gain(results["method"], results["baseline"]) if "baseline" in results else {}
    for d in sorted(results["method"]):
        rows.append({"distance": d, "pairs": len(pairs.bucket(d)), "mrr": results["method"][d],
                     "baseline_mrr": results.get("baseline", {}).get(d, float("nan")),
                     "gain": gain.get(d, float("nan"))})
    prefix = Path(args.out) if args.out else cfg.work("embedding_mrr")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_csv(prefix.with_suffix(".csv"), rows)
    write_gnuplot(prefix.with_suffix(".dat"), ["distance", "gain", "mrr", "baseline_mrr"],
                  [(r["distance"], r["gain"], r["mrr"], r["baseline_mrr"]) for r in rows])
    for r in rows:
        print(f"distance {r['distance']}: pairs {r['pairs']} mrr {r['mrr']:.4f} "
              f"baseline {r['baseline_mrr']:.4f} gain {r['gain']:+.4f}")


def cmd_eval_bleu(cfg, args) -> None:
    hyps, refs = read_lines(args.hyp), read_lines(args.ref)
    if len(hyps) != len(refs):
        raise DataError(f"{len(hyps)} hypotheses but {len(refs)} references")
    rep = bleu_corpus(hyps, refs)
    print(f"{rep}  [{BLEU_SIGNATURE}]")
    if args.train_tgt:
        freq = collections.Counter(w for line in read_lines(args.train_tgt) for w in line.split())
        scores = rare_word_f1(hyps, refs, freq, detail=True)
        prefix = Path(args.out) if args.out else Path(args.hyp).with_suffix("")
        rows = [{"bucket": b, "f1": s.f1, "precision": s.precision, "recall": s.recall,
                 "ref_count": s.ref_count, "hyp_count": s.hyp_count} for b, s in scores.items()]
        write_csv(prefix.with_suffix(".f1.csv"), rows)
        write_gnuplot(prefix.with_suffix(".f1.dat"), ["bucket", "f1"], [(r["bucket"], r["f1"]) for r in rows])
        for r in rows:
            print(f"freq {r['bucket']}: f1 {r['f1']:.4f} (refs {r['ref_count']})")


def cmd_bench(cfg, args) -> None:
    paths = args.checkpoint or [str(default_checkpoint(cfg))]
    lang = args.lang or cfg.languages[-1]
    models, src_seg = {}, None
    for p in paths:
        model, src_seg, _, _ = load_model(p)
        models[str(p)] = model
    sources = [src_seg.encode(s) for s in read_lines(cfg.data("test", lang, "src"))]
    reps = speed_bench(models, sources, lang, runs=args.runs)
    rows = [{"model": k, "decode_sec": r.decode_sec, "runs": " ".join(f"{x:.4f}" for x in r.decode_runs)}
            for k, r in reps.items()]
    out = Path(args.out) if args.out else cfg.work("bench.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, rows)
    for r in rows:
        print(f"{r['model']}: decode {r['decode_sec']:.3f}s (median of {args.runs})")


def cmd_show_config(cfg, args) -> None:
    sys.stdout.write(dump_config(cfg))


COMMANDS = {
    "make-synthetic": (cmd_make_synthetic, "generate the synthetic HRL/LRL corpora"),
    "build-vocab": (cmd_build_vocab, "learn source/target subword vocabularies"),
    "build-ngrams": (cmd_build_ngrams, "extract the character n-gram vocabulary"),
    "train": (cmd_train, "train a model"),
    "translate": (cmd_translate, "decode sentences with a trained model"),
    "precompute": (cmd_precompute, "write frozen per-language embedding tables"),
    "analyze-embeddings": (cmd_analyze_embeddings, "MRR of HRL/LRL word pairs by edit distance"),
    "eval-bleu": (cmd_eval_bleu, "corpus BLEU and rare-word F1"),
    "bench": (cmd_bench, "decode timing"),
    "show-config": (cmd_show_config, "print the normalised configuration"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decsde", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    cmds = {}
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key = value experiment file")
        cmds[name] = p
    cmds["train"].add_argument("--epochs", type=int, help="stop after this many epochs in total")
    cmds["train"].add_argument("--checkpoint-dir")
    cmds["train"].add_argument("--resume", help="continue from a checkpoint")
    cmds["train"].add_argument("--no-dev", action="store_true", help="skip dev perplexity")
    for name in ("translate", "precompute", "analyze-embeddings"):
        cmds[name].add_argument("--checkpoint")
    cmds["translate"].add_argument("--lang")
    cmds["translate"].add_argument("--beam", type=int)
    cmds["translate"].add_argument("--input")
    cmds["translate"].add_argument("--output")
    cmds["translate"].add_argument("--tables", help="directory written by `precompute`")
    cmds["precompute"].add_argument("--out")
    cmds["analyze-embeddings"].add_argument("--baseline", help="checkpoint of the comparison model")
    cmds["analyze-embeddings"].add_argument("--hrl")
    cmds["analyze-embeddings"].add_argument("--lrl")
    cmds["analyze-embeddings"].add_argument("--top-n", type=int, default=2000)
    cmds["analyze-embeddings"].add_argument("--out", help="output prefix for .csv/.dat")
    cmds["eval-bleu"].add_argument("--hyp", required=True)
    cmds["eval-bleu"].add_argument("--ref", required=True)
    cmds["eval-bleu"].add_argument("--train-tgt", help="training targets, enables rare-word F1")
    cmds["eval-bleu"].add_argument("--out", help="output prefix for F1 reports")
    cmds["bench"].add_argument("--checkpoint", action="append")
    cmds["bench"].add_argument("--lang")
    cmds["bench"].add_argument("--runs", type=int, default=3)
    cmds["bench"].add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, split_overrides(rest))
        COMMANDS[args.command][0](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StaleTableError as e:
        print(f"stale table: {e}", file=sys.stderr)
        return EXIT_STALE
    except nk.NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, VocabError, FileNotFoundError, KeyError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
