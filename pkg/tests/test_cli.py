import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decsde import cli
from decsde.cli import ExperimentConfig, dump_config, main, parse_config_text

TINY = """
# tiny experiment
root_vocab_size = 50
n_hrl = 150
n_lrl = 30
n_dev = 10
n_test = 12
vocab_size = 250
src_vocab_size = 250
model_dim = 16
ffn_dim = 32
enc_layers = 1
dec_layers = 1
latent_size = 8
u = 2
max_epochs = 1
batch_tokens = 400
warmup_steps = 5
lr_peak = 0.003
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "exp.cfg"
    cfg.write_text(TINY + f"data_dir = {root / 'data'}\nwork_dir = {root / 'work'}\n", encoding="utf-8")
    for cmd in ("make-synthetic", "build-vocab", "build-ngrams", "train"):
        assert main([cmd, "--config", str(cfg)]) == 0
    return root, cfg


def test_config_round_trip():
    cfg = cli.load_config(None, cli.split_overrides(["--embed-mode", "lookup_piece", "--u", "3", "--u.lrl", "5",
                                                      "--patience", "none", "--languages", "aa,bb,lrl"]))
    text = dump_config(cfg)
    again = cli.build_config(parse_config_text(text))
    assert again == cfg
    assert dump_config(again) == text


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 15), st.floats(0.0, 0.9), st.booleans(), st.sampled_from(["decsde", "lookup_word"]))
def test_config_round_trip_property(u, ls, tanh, mode):
    cfg = ExperimentConfig(u=u, label_smoothing=ls, keep_tanh_without_transform=tanh, embed_mode=mode)
    assert cli.build_config(parse_config_text(dump_config(cfg))) == cfg


def test_flag_overrides_set_rank():
    cfg = cli.load_config(None, cli.split_overrides(["--embed-mode", "decsde", "--u", "16"]))
    assert cfg.model_config().ranks == {"hrl": 16, "lrl": 16}


@pytest.mark.parametrize("text", ["nonsense line", "bogus = 1", "u = x", "u = 1\nu = 2", "embed_mode = foo",
                                  "u = 64", "vocab_size = 3"])
def test_bad_configs_exit_2(tmp_path, text):
    p = tmp_path / "bad.cfg"
    p.write_text(text, encoding="utf-8")
    assert main(["show-config", "--config", str(p)]) == 2


def test_missing_config_and_data(tmp_path):
    assert main(["show-config", "--config", str(tmp_path / "nope.cfg")]) == 2
    assert main(["build-vocab", "--data-dir", str(tmp_path / "none"), "--work-dir", str(tmp_path)]) == 3


def test_translate_beam_one_equals_greedy(workspace, tmp_path):
    root, cfg = workspace
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert main(["translate", "--config", str(cfg), "--lang", "lrl", "--beam", "1", "--output", str(a)]) == 0
    model, src_seg, tgt_seg, _ = cli.load_model(cli.default_checkpoint(cli.load_config(cfg)))
    lines = (root / "data" / "test.lrl.src").read_text(encoding="utf-8").splitlines()
    greedy = [tgt_seg.decode(h) for h in model.greedy_decode([src_seg.encode(s) for s in lines], "lrl")]
    assert a.read_text(encoding="utf-8").splitlines() == greedy
    assert main(["translate", "--config", str(cfg), "--lang", "lrl", "--beam", "1", "--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_training_is_rerunnable(workspace, tmp_path):
    root, cfg = workspace
    for run in ("x", "y"):
        assert main(["train", "--config", str(cfg), "--checkpoint-dir", str(tmp_path / run)]) == 0
    assert (tmp_path / "x" / "last.ckpt").read_bytes() == (tmp_path / "y" / "last.ckpt").read_bytes()


def test_precomputed_tables_and_staleness(workspace, tmp_path):
    root, cfg = workspace
    tables = tmp_path / "tables"
    assert main(["precompute", "--config", str(cfg), "--out", str(tables)]) == 0
    out = tmp_path / "t.txt"
    assert main(["translate", "--config", str(cfg), "--lang", "hrl", "--beam", "1", "--tables", str(tables),
                 "--output", str(out)]) == 0
    # train one more epoch elsewhere; the old tables no longer match
    ck = tmp_path / "more"
    assert main(["train", "--config", str(cfg), "--epochs", "2", "--checkpoint-dir", str(ck),
                 "--resume", str(root / "work" / "ckpt" / "last.ckpt")]) == 0
    assert main(["translate", "--config", str(cfg), "--lang", "hrl", "--tables", str(tables),
                 "--checkpoint", str(ck / "last.ckpt"), "--output", str(out)]) == 5


def test_numeric_error_exit_code(workspace, tmp_path, monkeypatch):
    root, cfg = workspace

    def boom(*a, **k):
        raise cli.nk.NumericError("nan in loss")

    monkeypatch.setattr(cli.Trainer, "fit", boom)
    assert main(["train", "--config", str(cfg), "--checkpoint-dir", str(tmp_path)]) == 4


def test_eval_bleu_and_reports(workspace, tmp_path, capsys):
    root, cfg = workspace
    ref = root / "data" / "test.lrl.tgt"
    assert main(["eval-bleu", "--hyp", str(ref), "--ref", str(ref), "--train-tgt",
                 str(root / "data" / "train.lrl.tgt"), "--out", str(tmp_path / "self")]) == 0
    assert "BLEU = 100.00" in capsys.readouterr().out
    csv_lines = (tmp_path / "self.f1.csv").read_text().splitlines()
    assert csv_lines[0].startswith("bucket,f1")
    assert (tmp_path / "self.f1.dat").read_text().startswith("# bucket f1")


def test_analyze_embeddings_and_bench(workspace, tmp_path):
    root, cfg = workspace
    base = tmp_path / "lookup"
    assert main(["train", "--config", str(cfg), "--embed-mode", "lookup_piece", "--checkpoint-dir", str(base)]) == 0
    assert main(["analyze-embeddings", "--config", str(cfg), "--baseline", str(base / "last.ckpt"),
                 "--out", str(tmp_path / "mrr")]) == 0
    rows = (tmp_path / "mrr.csv").read_text().splitlines()
    assert rows[0] == "distance,pairs,mrr,baseline_mrr,gain"
    assert main(["bench", "--config", str(cfg), "--checkpoint", str(base / "last.ckpt"), "--runs", "1",
                 "--out", str(tmp_path / "bench.csv")]) == 0
    assert (tmp_path / "bench.csv").read_text().startswith("model,decode_sec")


def test_word_lookup_mode_trains(workspace, tmp_path):
    root, cfg = workspace
    assert main(["train", "--config", str(cfg), "--embed-mode", "lookup_word", "--checkpoint-dir", str(tmp_path)]) == 0
    model, _, tgt_seg, _ = cli.load_model(tmp_path / "last.ckpt")
    assert all(not t.startswith("▁") for t in tgt_seg.vocab.tokens)


def test_table_file_round_trip(workspace, tmp_path):
    root, cfg = workspace
    model, *_ = cli.load_model(cli.default_checkpoint(cli.load_config(cfg)))
    t = model.precompute_tables()["lrl"]
    cli.save_table(tmp_path / "x.npz", t)
    back = cli.load_table(tmp_path / "x.npz")
    np.testing.assert_array_equal(back.matrix, t.matrix)
    assert back.params_version == t.params_version and back.language == t.language
