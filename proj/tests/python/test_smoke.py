import math

import numpy as np
import pytest

import unitmt


SMALL = {
    "synth": {"cipher": {"vocab_size": 16}, "mono_size": 60, "parallel_size": 12, "test_size": 6,
              "min_len": 3, "max_len": 7},
    "model": {"embed_dim": 16, "encoder_layers": 1, "decoder_layers": 1, "heads": 2, "ffn_dim": 24,
              "max_positions": 24},
    "pretrain": {"steps": 4, "tokens_per_batch": 64, "lr": {"warmup_steps": 2}},
    "finetune": {"epochs": 1, "tokens_per_batch": 64, "lr": {"warmup_steps": 2}},
    "backtranslate": {"epochs": 1, "bt_sentences": 4, "bt_steps_per_epoch": 2, "sampling": {"max_len": 12},
                      "lr": {"warmup_steps": 1}},
    "beam": {"beam_size": 2, "max_len": 12},
}


def test_bleu_identity_and_fixture():
    refs = [[1, 2, 3, 4, 5], [6, 7, 8, 9]]
    assert unitmt.corpus_bleu(refs, refs) == pytest.approx(100.0)
    assert unitmt.corpus_bleu([[1, 2, 3, 4, 6]], [[1, 2, 3, 4, 5]]) == pytest.approx(100 * 0.2 ** 0.25)
    rep = unitmt.evaluate(refs * 3, refs * 3)
    assert sum(b["count"] for b in rep["buckets"].values()) == 6


def test_schedule_endpoints():
    assert unitmt.lr_at(0) == pytest.approx(1e-7)
    assert unitmt.lr_at(100, total_steps=1000) == pytest.approx(1e-5)
    assert unitmt.lr_at(10**8, total_steps=1000) == pytest.approx(1e-6)


def test_quantizer_roundtrips():
    rng = np.random.default_rng(0)
    frames = [np.vstack([rng.normal(0, 0.1, (10, 2)), rng.normal(5, 0.1, (10, 2))])]
    centers, distortion, history = unitmt.kmeans(frames, k=2, seed=1)
    assert centers.shape == (2, 2)
    assert all(b <= a * (1 + 1e-12) for a, b in zip(history, history[1:]))
    units = unitmt.assign_units(frames[0], centers)
    assert len(set(units[:10])) == 1 and units[0] != units[-1]
    u, d = unitmt.run_length_encode(units)
    assert unitmt.expand_runs(u, d) == units
    want = ((2 / 3) * math.log(4 / 3) + (1 / 3) * math.log(2 / 3)) / math.log(2)
    assert unitmt.pnmi([[0, 0, 1, 0, 1, 1]], [[0, 0, 0, 1, 1, 1]]) == pytest.approx(want, abs=1e-12)


def test_bpe_and_noise():
    corpus = [("a", [[1, 2, 1, 2, 3], [1, 2, 3]]), ("b", [[3, 1, 2]])]
    v = unitmt.train_bpe(corpus, 40)
    assert v.languages == ["a", "b"]
    toks = v.encode([1, 2, 1, 2, 3], "a")
    assert v.decode(toks) == [1, 2, 1, 2, 3]
    r = unitmt.noise(list(range(7, 27)), num_specials=7, seed=3)
    assert len(r["masked_positions"]) >= 7
    assert r == unitmt.noise(list(range(7, 27)), num_specials=7, seed=3)


def test_config_errors_name_the_key():
    with pytest.raises(unitmt.ConfigError, match="pretrain.bogus"):
        unitmt.resolve_config({"pretrain": {"bogus": 1}})
    cfg = unitmt.resolve_config({"pretrain": {"steps": 7}})
    assert cfg["pretrain"]["steps"] == 7
    assert unitmt.default_config()["beam"]["beam_size"] == 10


def test_tiny_pipeline(tmp_path):
    b = unitmt.make_benchmark(SMALL)
    l1, l2 = b["first_language"], b["second_language"]
    vocab = unitmt.train_bpe([(l1, b["mono_first"]), (l2, b["mono_second"])], 40)
    init = unitmt.init_model(vocab, SMALL)
    mono = [(l1, b["mono_first"]), (l2, b["mono_second"])]
    par = [(l1, b["train_first"]), (l2, b["train_second"])]
    pre, curve = unitmt.pretrain(init, vocab, mono, SMALL)
    assert pre.stage == "pretrain" and pre.step == 4 and len(curve) == 4
    fin, _ = unitmt.finetune(pre, vocab, par, SMALL)
    bt, _ = unitmt.backtranslate(fin, vocab, mono, par, SMALL)
    assert bt.stage == "backtranslate" and bt.step == 2
    path = str(tmp_path / "bt.ckpt")
    bt.save(path)
    assert unitmt.Checkpoint.load(path).hash == bt.hash
    hyps = unitmt.translate(bt, vocab, b["test_first"], l1, l2, SMALL)
    assert len(hyps) == len(b["test_first"])
    assert 0.0 <= unitmt.corpus_bleu(hyps, b["test_second"]) <= 100.0
    with pytest.raises(unitmt.InputError):
        unitmt.Checkpoint.load(str(tmp_path / "missing.ckpt"))
