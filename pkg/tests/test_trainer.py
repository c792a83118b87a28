import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decsde import numkernel as nk
from decsde.chargrams import build_ngram_vocab
from decsde.nmt import ModelConfig, Transformer
from decsde.numkernel import Parameter, Tensor
from decsde.segmenter import SubwordVocab, special_tokens
from decsde.trainer import (
    CheckpointError,
    LangCorpus,
    OptimizerState,
    TrainConfig,
    Trainer,
    adam_step,
    epoch_schedule,
    label_smoothed_nll,
    lr_schedule,
    read_checkpoint,
)

LANGS = ["aa", "bb"]
WORDS = ["▁ka", "▁ko", "la", "lá", "▁mi", "s", "▁pe", "ra", "▁tu"]
SRC = SubwordVocab(special_tokens(LANGS) + ["x", "y", "z", "w", "v", "u"])
TGT = SubwordVocab(special_tokens(LANGS) + WORDS)
NGRAMS = build_ngram_vocab(TGT, 3)


def small_model(mode="decsde", seed=0, d=16):
    cfg = ModelConfig(enc_layers=1, dec_layers=1, heads=2, model_dim=d, ffn_dim=2 * d, dropout_p=0.1,
                      embed_mode=mode, max_len=16, latent_size=8, ranks={"aa": 2, "bb": 2})
    return Transformer(cfg, SRC, TGT, LANGS, NGRAMS if cfg.embed_mode.spelling_based else None, seed=seed)


def toy_corpora(n=100, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for li, lang in enumerate(LANGS):
        src, tgt = [], []
        for _ in range(n // 2):
            ws = rng.integers(0, 6, size=rng.integers(1, 5))
            src.append([6 + int(w) for w in ws])
            tgt.append([6 + (int(w) + li) % len(WORDS) for w in ws])
        out.append(LangCorpus(lang, src, tgt))
    return out


def test_lr_schedule_values():
    assert lr_schedule(400, 400, 5e-4) == pytest.approx(5e-4)
    assert lr_schedule(1600, 400, 5e-4) == pytest.approx(2.5e-4)
    assert lr_schedule(200, 400, 5e-4) == pytest.approx(2.5e-4)
    assert TrainConfig().lr_peak == 5e-4
    assert TrainConfig().warmup_steps == 400


@given(st.integers(1, 500))
def test_lr_schedule_continuous_at_warmup(w):
    a, b = lr_schedule(w, w, 1.0), lr_schedule(w + 1, w, 1.0)
    assert a == 1.0 and abs(a - b) <= 1.0 / w


def test_config_validation():
    for bad in (dict(lr_peak=0.0), dict(label_smoothing=1.0), dict(warmup_steps=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def _logsoftmax(x):
    x = x - x.max(-1, keepdims=True)
    return x - np.log(np.exp(x).sum(-1, keepdims=True))


def test_eps_zero_is_plain_cross_entropy():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(2, 3, 5))
    tgt = rng.integers(0, 5, size=(2, 3))
    with nk.precision(64):
        got = label_smoothed_nll(Tensor(logits), tgt, 0.0).item()
    lp = _logsoftmax(logits)
    expected = -np.mean(np.take_along_axis(lp, tgt[..., None], -1))
    assert got == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("eps", [0.0, 0.1, 0.5])
def test_uniform_logits_give_log_v(eps):
    loss = label_smoothed_nll(Tensor(np.zeros((3, 4, 7))), np.ones((3, 4), dtype=int), eps)
    assert loss.item() == pytest.approx(math.log(7), abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.9))
def test_matches_kl_oracle(seed, eps):
    rng = np.random.default_rng(seed)
    V = 6
    logits = rng.normal(scale=2.0, size=(3, 4, V))
    tgt = rng.integers(0, V, size=(3, 4))
    mask = rng.random((3, 4)) > 0.3
    mask[0, 0] = True
    with nk.precision(64):
        got = label_smoothed_nll(Tensor(logits), tgt, eps, mask).item()
    # smoothed target q = (1-eps)*onehot + eps/V; loss = KL(q||p) + H(q)
    p = np.exp(_logsoftmax(logits))
    q = np.full(p.shape, eps / V)
    np.put_along_axis(q, tgt[..., None], (1 - eps) + eps / V, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(q > 0, q * (np.log(q) - np.log(p)), 0.0).sum(-1)
        h = -np.where(q > 0, q * np.log(q), 0.0).sum(-1)
    expected = (kl + h)[mask].mean()
    assert got == pytest.approx(expected, abs=1e-9)


def test_adam_zero_grad_leaves_params():
    p = Parameter(np.array([1.0, -2.0]), "p")
    adam_step([p], OptimizerState(), 0.1)
    np.testing.assert_array_equal(p.data, np.array([1.0, -2.0], dtype=p.data.dtype))


def test_adam_constant_grad_moves_against_sign():
    p = Parameter(np.array([0.0, 0.0]), "p")
    st_ = OptimizerState()
    for _ in range(20):
        p.grad[:] = [0.5, -3.0]
        adam_step([p], st_, 0.01)
    assert p.data[0] < 0 < p.data[1]
    assert st_.step == 20
    assert np.all(p.grad == 0)


def test_adam_single_step_hand_oracle():
    with nk.precision(64):
        p = Parameter(np.array([0.5]), "p")
        p.grad[:] = 2.0
        adam_step([p], OptimizerState(), lr=0.1, beta1=0.9, beta2=0.98, eps=1e-8)
    m = 0.1 * 2.0 / (1 - 0.9)
    v = 0.02 * 4.0 / (1 - 0.98)
    assert p.data[0] == pytest.approx(0.5 - 0.1 * m / (math.sqrt(v) + 1e-8), abs=1e-12)


def test_adam_bumps_versions():
    p = Parameter(np.ones(2), "p")
    before = p.version
    adam_step([p], OptimizerState(), 0.1)
    assert p.version == before + 1


def test_epoch_schedule_is_deterministic_and_complete():
    corpora = toy_corpora()
    a = epoch_schedule(corpora, 40, 16, seed=3, epoch=1)
    b = epoch_schedule(corpora, 40, 16, seed=3, epoch=1)
    assert a == b
    assert a != epoch_schedule(corpora, 40, 16, seed=3, epoch=2)
    for li, c in enumerate(corpora):
        seen = sorted(i for lj, idx in a if lj == li for i in idx)
        assert seen == list(range(len(c)))
    assert {li for li, _ in a} == {0, 1}


def test_same_seed_same_loss_curve():
    corpora = toy_corpora()
    cfg = TrainConfig(lr_peak=1e-3, warmup_steps=5, batch_tokens=60, seed=4)
    runs = []
    for _ in range(2):
        t = Trainer(small_model(), cfg)
        t.fit(corpora, epochs=2)
        runs.append([r["loss"] for r in t.log])
    assert runs[0] == runs[1]


def test_one_epoch_reduces_loss():
    corpora = toy_corpora(100)
    m = small_model("lookup_piece")
    before = sum(_nll(m, c) for c in corpora)
    Trainer(m, TrainConfig(lr_peak=3e-3, warmup_steps=5, batch_tokens=60, seed=0)).run_epoch(corpora)
    assert sum(_nll(m, c) for c in corpora) < before


def _nll(model, corpus):
    from decsde.trainer import evaluate_nll
    return evaluate_nll(model, [corpus])


def test_resume_continues_loss_curve(tmp_path):
    corpora = toy_corpora()
    cfg = TrainConfig(lr_peak=1e-3, warmup_steps=5, batch_tokens=60, seed=2)
    full = Trainer(small_model(), cfg)
    full.fit(corpora, epochs=3)

    first = Trainer(small_model(), cfg)
    first.fit(corpora, epochs=1, checkpoint_dir=tmp_path)
    resumed = Trainer(small_model(seed=99), cfg)
    resumed.load(tmp_path / "last.ckpt")
    resumed.fit(corpora, epochs=3)
    assert [r["loss"] for r in resumed.log] == [r["loss"] for r in full.log]
    for name, p in full.model.named_parameters().items():
        np.testing.assert_array_equal(p.data, resumed.model.named_parameters()[name].data)


def test_checkpoints_are_bit_identical(tmp_path):
    corpora = toy_corpora(40)
    cfg = TrainConfig(lr_peak=1e-3, warmup_steps=5, batch_tokens=60, seed=5)
    for run in ("a", "b"):
        t = Trainer(small_model(), cfg)
        t.fit(corpora, epochs=1)
        t.save(tmp_path / f"{run}.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes()[:4] == b"DSDE"


def test_corrupt_checkpoint_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"XXXX" + b"\0" * 16)
    with pytest.raises(CheckpointError):
        read_checkpoint(path)


def test_dev_selection_and_log(tmp_path):
    corpora = toy_corpora()
    t = Trainer(small_model("lookup_piece"), TrainConfig(lr_peak=3e-3, warmup_steps=5, batch_tokens=60))
    res = t.fit(corpora, dev=toy_corpora(20, seed=1), epochs=2, checkpoint_dir=tmp_path,
                log_path=tmp_path / "log.csv")
    assert (tmp_path / "best.ckpt").exists()
    assert 1 <= res.best_epoch <= 2 and math.isfinite(res.best_dev_ppl)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,step,loss,lr,tokens_per_sec,dev_ppl"
    assert len(lines) == 3


def test_memorizes_fifty_sentences():
    corpora = toy_corpora(50, seed=7)
    m = small_model("lookup_piece", d=32)
    cfg = TrainConfig(lr_peak=5e-3, warmup_steps=10, dropout=0.0, label_smoothing=0.0,
                      batch_tokens=1000, seed=0)
    t = Trainer(m, cfg)
    for _ in range(200):
        row = t.run_epoch(corpora)
        if row["loss"] < 0.1:
            break
    assert row["loss"] < 0.1, row
