"""Optimization loop: inverse-square-root schedule, Adam, checkpoints.

Checkpoint layout (all integers little-endian uint32, values float32)::

    b"DSDE" | version | header_len | header (UTF-8 JSON)
    n_tensors | { name_len | name | ndim | dims... | values } * n_tensors

The JSON header carries the model/training config, the step/epoch counters,
the dropout RNG state and the vocabulary file references.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numkernel as nk
from .nmt import Batch, ModelConfig, Transformer, make_batch
from .numkernel import Parameter

log = logging.getLogger(__name__)

MAGIC = b"DSDE"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr_peak: float = 5e-4
    warmup_steps: int = 400
    max_epochs: int = 50
    dropout: float | None = 0.3
    label_smoothing: float = 0.1
    batch_tokens: int = 2048
    seed: int = 1
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8
    sampling_temperature: float = 1.0
    patience: int | None = None

    def __post_init__(self):
        if self.lr_peak <= 0:
            raise ValueError("lr_peak must be positive")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be at least 1")


def lr_schedule(step: int, warmup: int, lr_peak: float) -> float:
    """Linear warmup to ``lr_peak`` at ``warmup``, then decay with 1/sqrt(step)."""
    step = max(int(step), 1)
    if step <= warmup:
        return lr_peak * step / warmup
    return lr_peak * math.sqrt(warmup / step)


def label_smoothed_nll(logits, targets, eps: float, pad_mask=None) -> nk.Tensor:
    """``(1 - eps) * NLL + eps * CE(uniform)`` averaged over non-pad tokens.

    ``pad_mask`` is True at real tokens.
    """
    return nk.smoothed_cross_entropy(logits, targets, eps, pad_mask)


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: Sequence[Parameter], state: OptimizerState, lr: float,
              beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in place; gradients are zeroed afterwards."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in params:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        g = p.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        upd = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data = (p.data - upd).astype(p.data.dtype, copy=False)
        p.version += 1
        p.zero_grad()


# ---------------------------------------------------------------------------
# data


@dataclass
class LangCorpus:
    """Encoded parallel data for one target language."""

    lang: str
    src: list
    tgt: list

    def __post_init__(self):
        if len(self.src) != len(self.tgt):
            raise ValueError(f"{self.lang}: source and target differ in length")

    def __len__(self):
        return len(self.src)


def _lang_batches(corpus: LangCorpus, batch_tokens: int, max_len: int, rng) -> list:
    """Index groups for one language, shuffled, length-bucketed within chunks."""
    order = rng.permutation(len(corpus))
    # sort by length inside chunks of 100 to cut padding, keep randomness across chunks
    chunks = [order[i:i + 100] for i in range(0, len(order), 100)]
    groups = []
    for chunk in chunks:
        chunk = sorted(chunk, key=lambda i: (len(corpus.tgt[i]), len(corpus.src[i]), i))
        cur, width = [], 0
        for i in chunk:
            w = min(max(len(corpus.tgt[i]) + 1, len(corpus.src[i]) + 2), max_len)
            if cur and max(width, w) * (len(cur) + 1) > batch_tokens:
                groups.append(cur)
                cur, width = [], 0
            cur.append(int(i))
            width = max(width, w)
        if cur:
            groups.append(cur)
    perm = rng.permutation(len(groups))
    return [groups[j] for j in perm]


def epoch_schedule(corpora: Sequence[LangCorpus], batch_tokens: int, max_len: int, seed: int,
                   epoch: int, temperature: float = 1.0) -> list:
    """Deterministic ``(lang_index, sentence_indices)`` batch order for one epoch.

    With ``temperature == 1`` every batch of every language is visited once in
    a random interleaving, i.e. languages are mixed in proportion to their size.
    Higher temperatures sample languages with probability ``size ** (1/T)``.
    """
    rng = np.random.default_rng([seed, epoch])
    per_lang = [_lang_batches(c, batch_tokens, max_len, rng) for c in corpora]
    total = sum(len(b) for b in per_lang)
    if temperature == 1.0:
        tagged = [(li, g) for li, groups in enumerate(per_lang) for g in groups]
        perm = rng.permutation(len(tagged))
        return [tagged[j] for j in perm]
    sizes = np.array([len(c) for c in corpora], dtype=float)
    probs = sizes ** (1.0 / temperature)
    probs /= probs.sum()
    cursor = [0] * len(corpora)
    out = []
    for _ in range(total):
        li = int(rng.choice(len(corpora), p=probs))
        groups = per_lang[li]
        out.append((li, groups[cursor[li] % len(groups)]))
        cursor[li] += 1
    return out


def corpus_batch(model: Transformer, corpus: LangCorpus, idx: Sequence[int]) -> Batch:
    return make_batch([corpus.src[i] for i in idx], [corpus.tgt[i] for i in idx], corpus.lang,
                      model.src_vocab, model.tgt_vocab, model.config.max_len)


def evaluate_nll(model: Transformer, corpora: Sequence[LangCorpus], batch_tokens: int = 4096) -> float:
    """Per-token negative log-likelihood (no smoothing, no dropout)."""
    total, count = 0.0, 0
    with nk.no_grad():
        for c in corpora:
            for idx in _lang_batches(c, batch_tokens, model.config.max_len, np.random.default_rng(0)):
                b = corpus_batch(model, c, idx)
                loss = label_smoothed_nll(model.forward(b), b.tgt_out, 0.0, b.tgt_mask)
                total += loss.item() * b.n_tokens
                count += b.n_tokens
    return total / max(count, 1)


# ---------------------------------------------------------------------------
# checkpoints


def _pack_tensor(buf, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    buf.write(struct.pack("<I", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _unpack_tensors(data: bytes, offset: int) -> dict:
    (n,) = struct.unpack_from("<I", data, offset)
    offset += 4
    out = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset:offset + ln].decode("utf-8")
        offset += ln
        (nd,) = struct.unpack_from("<I", data, offset)
        offset += 4
        shape = struct.unpack_from(f"<{nd}I", data, offset)
        offset += 4 * nd
        size = int(np.prod(shape)) if nd else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=offset).reshape(shape).copy()
        offset += 4 * size
        out[name] = arr
    if offset != len(data):
        raise CheckpointError("trailing bytes after tensor section")
    return out


def checkpoint_bytes(model: Transformer, opt: OptimizerState, header: dict) -> bytes:
    params = model.named_parameters()
    head = dict(header)
    head["model_config"] = model.config.to_dict()
    head["languages"] = list(model.languages)
    head["opt_step"] = opt.step
    head["param_versions"] = {name: p.version for name, p in params.items()}
    hb = json.dumps(head, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(hb)))
    buf.write(hb)
    names = sorted(params)
    entries = [(f"param/{n}", params[n].data) for n in names]
    for n in names:
        if n in opt.m:
            entries.append((f"adam_m/{n}", opt.m[n]))
            entries.append((f"adam_v/{n}", opt.v[n]))
    buf.write(struct.pack("<I", len(entries)))
    for name, arr in entries:
        _pack_tensor(buf, name, arr)
    return buf.getvalue()


def save_checkpoint(path, model: Transformer, opt: OptimizerState, header: dict) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, opt, header))


def read_checkpoint(path) -> tuple:
    """Return ``(header, tensors)`` from a checkpoint file."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    return header, _unpack_tensors(data, 12 + hlen)


def restore(model: Transformer, tensors: dict, header: dict, opt: OptimizerState | None = None) -> None:
    params = model.named_parameters()
    versions = header.get("param_versions", {})
    for name, p in params.items():
        key = f"param/{name}"
        if key not in tensors:
            raise CheckpointError(f"checkpoint lacks parameter {name}")
        arr = tensors[key]
        if arr.shape != p.shape:
            raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
        p.data = arr.astype(p.data.dtype)
        p.version = int(versions.get(name, 0))
        p.zero_grad()
    if opt is not None:
        opt.step = int(header.get("opt_step", 0))
        opt.m, opt.v = {}, {}
        for name, p in params.items():
            if f"adam_m/{name}" in tensors:
                opt.m[name] = tensors[f"adam_m/{name}"].astype(p.data.dtype)
                opt.v[name] = tensors[f"adam_v/{name}"].astype(p.data.dtype)


# ---------------------------------------------------------------------------
# training loop

LOG_FIELDS = ["epoch", "step", "loss", "lr", "tokens_per_sec", "dev_ppl"]


@dataclass
class TrainResult:
    log: list
    best_dev_ppl: float
    best_epoch: int
    opt: OptimizerState


class Trainer:
    """Owns the model's parameters for the duration of training."""

    def __init__(self, model: Transformer, config: TrainConfig, header_extra: dict | None = None):
        self.model = model
        self.config = config
        self.opt = OptimizerState()
        self.rng = np.random.default_rng([config.seed, 7919])
        self.epoch = 0
        self.log = []
        self.best_dev_ppl = math.inf
        self.best_epoch = 0
        self.header_extra = dict(header_extra or {})

    @property
    def dropout(self) -> float:
        return self.model.config.dropout_p if self.config.dropout is None else self.config.dropout

    def header(self) -> dict:
        h = dict(self.header_extra)
        h.update(
            train_config=asdict(self.config),
            epoch=self.epoch,
            rng_state=self.rng.bit_generator.state,
            best_dev_ppl=None if math.isinf(self.best_dev_ppl) else self.best_dev_ppl,
            best_epoch=self.best_epoch,
            log=[{k: r[k] for k in LOG_FIELDS if k != "tokens_per_sec"} for r in self.log],
        )
        return h

    def save(self, path) -> None:
        save_checkpoint(path, self.model, self.opt, self.header())

    def load(self, path) -> None:
        header, tensors = read_checkpoint(path)
        restore(self.model, tensors, header, self.opt)
        self.epoch = int(header.get("epoch", 0))
        self.rng.bit_generator.state = header["rng_state"]
        bd = header.get("best_dev_ppl")
        self.best_dev_ppl = math.inf if bd is None else float(bd)
        self.best_epoch = int(header.get("best_epoch", 0))
        self.log = [dict(r, tokens_per_sec=float("nan")) for r in header.get("log", [])]

    def train_step(self, batch: Batch) -> float:
        cfg = self.config
        logits = self.model.forward(batch, self.dropout, self.rng)
        loss = label_smoothed_nll(logits, batch.tgt_out, cfg.label_smoothing, batch.tgt_mask)
        loss.backward()
        lr = lr_schedule(self.opt.step + 1, cfg.warmup_steps, cfg.lr_peak)
        adam_step(self.model.parameters(), self.opt, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        return loss.item()

    def run_epoch(self, corpora: Sequence[LangCorpus]) -> dict:
        cfg = self.config
        self.epoch += 1
        sched = epoch_schedule(corpora, cfg.batch_tokens, self.model.config.max_len, cfg.seed,
                               self.epoch, cfg.sampling_temperature)
        t0 = time.perf_counter()
        tot_loss, tot_tok = 0.0, 0
        for li, idx in sched:
            b = corpus_batch(self.model, corpora[li], idx)
            loss = self.train_step(b)
            if not math.isfinite(loss):
                raise nk.NumericError(f"non-finite loss at step {self.opt.step}")
            tot_loss += loss * b.n_tokens
            tot_tok += b.n_tokens
        dt = time.perf_counter() - t0
        return {
            "epoch": self.epoch,
            "step": self.opt.step,
            "loss": tot_loss / max(tot_tok, 1),
            "lr": lr_schedule(max(self.opt.step, 1), cfg.warmup_steps, cfg.lr_peak),
            "tokens_per_sec": tot_tok / dt if dt > 0 else float("nan"),
            "dev_ppl": float("nan"),
            "seconds": dt,
        }

    def fit(self, corpora: Sequence[LangCorpus], dev: Sequence[LangCorpus] = (), epochs: int | None = None,
            checkpoint_dir=None, log_path=None) -> TrainResult:
        """Train until ``epochs`` (default ``max_epochs``) total epochs have run.

        The best checkpoint by dev perplexity goes to ``checkpoint_dir/best.ckpt``
        and the latest to ``checkpoint_dir/last.ckpt``.
        """
        target = self.config.max_epochs if epochs is None else epochs
        ck = Path(checkpoint_dir) if checkpoint_dir else None
        if ck:
            ck.mkdir(parents=True, exist_ok=True)
        while self.epoch < target:
            row = self.run_epoch(corpora)
            if dev:
                row["dev_ppl"] = math.exp(min(evaluate_nll(self.model, dev), 50.0))
                if row["dev_ppl"] < self.best_dev_ppl:
                    self.best_dev_ppl = row["dev_ppl"]
                    self.best_epoch = self.epoch
                    if ck:
                        self.save(ck / "best.ckpt")
            self.log.append({k: row[k] for k in LOG_FIELDS})
            log.info("epoch %d step %d loss %.4f dev_ppl %.3f", row["epoch"], row["step"], row["loss"], row["dev_ppl"])
            if ck:
                self.save(ck / "last.ckpt")
            if log_path:
                write_log(log_path, self.log)
            if (self.config.patience and dev and self.epoch - self.best_epoch >= self.config.patience):
                break
        return TrainResult(self.log, self.best_dev_ppl, self.best_epoch, self.opt)


def write_log(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def train(model: Transformer, data: Sequence[LangCorpus], config: TrainConfig,
          dev: Sequence[LangCorpus] = (), checkpoint_dir=None, log_path=None) -> TrainResult:
    return Trainer(model, config).fit(data, dev, checkpoint_dir=checkpoint_dir, log_path=log_path)
