import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import TINY_TRAIN
from signgraph.ctc import GlossVocab
from signgraph.datasynth import Dataset
from signgraph.model import SignModel
from signgraph.rng import CounterRng
from signgraph.tensor import Tensor
from signgraph.train import (
    METRICS_HEADER, Adam, MetricsRecord, TextVocab, TrainConfig,
    _transfer_init, build_ctc_vocab, build_text_vocab, evaluate,
    evaluate_model, export_graphs, load_checkpoint, model_config_from,
    prepare_split, save_checkpoint, write_metrics_csv,
)


class TestTrainConfig:
    def test_roundtrip_json(self, tmp_path):
        cfg = TrainConfig(dataset="d", epochs=3, k_local=(2, 5))
        cfg.save(tmp_path / "c.json")
        back = TrainConfig.from_json(tmp_path / "c.json")
        assert back == cfg

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown keys"):
            TrainConfig.from_dict({"learning_rate": 0.1})

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(task="mystery")
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1)
        with pytest.raises(ValueError):
            TrainConfig(k_local=(0, 1))
        with pytest.raises(ValueError):
            TrainConfig(decay_at=(0.6, 0.4))

    def test_lr_schedule(self):
        cfg = TrainConfig(epochs=30)
        assert cfg.lr_milestones() == [12, 18]
        assert cfg.lr_factor(0) == 1.0
        assert cfg.lr_factor(12) == 0.5
        assert cfg.lr_factor(18) == 0.25

    def test_lr_milestones_clamped_for_short_runs(self):
        cfg = TrainConfig(epochs=1)
        assert cfg.lr_milestones() == [1]


class TestMetrics:
    def test_csv_row_format(self):
        r = MetricsRecord(3, "dev", 1.25, 0.5, 1, 2, 3, 0.75)
        assert r.csv_row() == "3,dev,1.250000,0.500000,1,2,3,0.750000"

    def test_file_header(self, tmp_path):
        write_metrics_csv(tmp_path / "m.csv", [])
        assert (tmp_path / "m.csv").read_text() == METRICS_HEADER + "\n"
        assert METRICS_HEADER == "epoch,split,loss,wer,del,ins,sub,dispersion"


class TestTextVocab:
    def test_specials_reserved(self):
        v = TextVocab(["bird", "cat"])
        assert v.size == 5
        assert v.encode(["bird", "dog", "cat"]) == [3, 2, 4]
        assert v.decode([3, 2, 4]) == ["bird", "<unk>", "cat"]

    def test_build_orders_by_frequency(self):
        v = build_text_vocab(["b a b.", "c a."])
        assert v.words == ["a", "b", "c"]

    def test_save_load(self, tmp_path):
        v = TextVocab(["x", "y"])
        v.save(tmp_path / "tv.json")
        assert TextVocab.load(tmp_path / "tv.json").words == v.words

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            TextVocab(["a", "a"])


class TestAdam:
    def test_minimizes_quadratic(self):
        p = {"w": Tensor(np.array([5.0, -3.0]), requires_grad=True)}
        opt = Adam(p, lr=0.1, decoder_lr=0.1, weight_decay=0.0)
        for _ in range(300):
            p["w"].grad = 2.0 * p["w"].data
            opt.step(p)
        assert np.abs(p["w"].data).max() < 1e-3

    def test_decoder_lr_applied(self):
        p = {"decoder.w": Tensor(np.array([1.0]), requires_grad=True),
             "enc.w": Tensor(np.array([1.0]), requires_grad=True)}
        opt = Adam(p, lr=0.1, decoder_lr=0.0, weight_decay=0.0)
        for t in p.values():
            t.grad = np.array([1.0])
        opt.step(p)
        assert p["decoder.w"].data[0] == 1.0
        assert p["enc.w"].data[0] != 1.0

    def test_skips_params_without_grads(self):
        p = {"w": Tensor(np.array([1.0]), requires_grad=True)}
        opt = Adam(p, lr=0.1, decoder_lr=0.1, weight_decay=0.1)
        opt.step(p)
        assert p["w"].data[0] == 1.0


def _tiny_model(num_classes=5, text_vocab=0, seed=0):
    cfg = TrainConfig(**TINY_TRAIN)
    return SignModel(model_config_from(cfg, num_classes, text_vocab), seed), cfg


class TestCheckpoints:
    def test_roundtrip(self, tmp_path):
        model, cfg = _tiny_model()
        save_checkpoint(tmp_path / "ck", model, cfg, {"epoch": 2, "task": "cslr"})
        loaded, lcfg, meta = load_checkpoint(tmp_path / "ck")
        assert meta["epoch"] == 2 and meta["num_classes"] == 5
        assert lcfg == cfg
        assert sorted(loaded.params) == sorted(model.params)
        for n in model.params:
            assert np.array_equal(loaded.params[n].data, model.params[n].data)

    def test_transfer_init_partial(self, tmp_path):
        enc_model, cfg = _tiny_model()
        save_checkpoint(tmp_path / "init", enc_model, cfg, {"epoch": 0, "task": "cslr"})
        # target model adds a decoder; its params keep the fresh init
        target, _ = _tiny_model(text_vocab=7, seed=1)
        fresh_dec = {n: p.data.copy() for n, p in target.params.items()
                     if n.startswith("decoder.")}
        copied = _transfer_init(target, tmp_path / "init")
        assert copied and not any(n.startswith("decoder.") for n in copied)
        for n in copied:
            assert np.array_equal(target.params[n].data, enc_model.params[n].data)
        for n, d in fresh_dec.items():
            assert np.array_equal(target.params[n].data, d)

    def test_transfer_init_shape_mismatch_lists_names(self, tmp_path):
        model, cfg = _tiny_model()
        save_checkpoint(tmp_path / "init", model, cfg, {"epoch": 0, "task": "cslr"})
        other_cfg = replace(TrainConfig(**TINY_TRAIN), hidden=6)
        other = SignModel(model_config_from(other_cfg, 5, 0), 0)
        with pytest.raises(ValueError, match="mismatched shapes"):
            _transfer_init(other, tmp_path / "init")


class TestVocabAndSplits:
    def test_gloss_vocab_covers_dataset(self, tiny_dataset):
        ds = Dataset(tiny_dataset)
        vocab, oov = build_ctc_vocab(ds, "cslr")
        assert vocab.tokens == ds.glosses and oov == 0

    def test_pseudo_vocab_counts_oov(self, tiny_dataset):
        ds = Dataset(tiny_dataset)
        vocab, oov = build_ctc_vocab(ds, "tcp_pretrain")
        assert vocab.size > 1 and oov >= 0

    def test_prepared_targets_are_one_based(self, tiny_dataset):
        ds = Dataset(tiny_dataset)
        vocab, _ = build_ctc_vocab(ds, "cslr")
        samples = prepare_split(ds, "train", "cslr", vocab, None)
        for s in samples:
            assert s.ctc_target == [g + 1 for g in ds.meta(s.sample_id)["gloss_ids"]]
            assert s.feasible  # >= 4 frames per gloss, no adjacent repeats


class TestTraining:
    def test_epoch_zero_saves_fresh_init(self, tiny_dataset, tmp_path):
        cfg = TrainConfig(dataset=str(tiny_dataset),
                          **{**TINY_TRAIN, "epochs": 0})
        best = __import__("signgraph.train", fromlist=["train_cslr"]) \
            .train_cslr(cfg, tmp_path / "r0")
        fresh = SignModel(model_config_from(cfg, 13, 0), cfg.seed)
        loaded, _, meta = load_checkpoint(best)
        assert meta["epoch"] == 0 and meta["best"] is None
        for n in fresh.params:
            assert np.array_equal(loaded.params[n].data, fresh.params[n].data)
        assert (tmp_path / "r0" / "metrics.csv").read_text() \
            .startswith(METRICS_HEADER)

    def test_run_artifacts(self, tiny_run):
        out = tiny_run["out"]
        for name in ("metrics.csv", "train_log.json", "gloss_vocab.json",
                     "best/config.json", "best/params.json", "best/params.bin",
                     "best/meta.json"):
            assert (out / name).exists(), name
        lines = (out / "metrics.csv").read_text().strip().split("\n")
        assert lines[0] == METRICS_HEADER
        assert len(lines) == 3  # 1 epoch: train row + dev row
        assert lines[1].split(",")[1] == "train"
        assert lines[2].split(",")[1] == "dev"

    def test_training_deterministic(self, tiny_dataset, tiny_run, tmp_path):
        from signgraph.train import train_cslr
        cfg = TrainConfig(dataset=str(tiny_dataset), **TINY_TRAIN)
        best = train_cslr(cfg, tmp_path / "again")
        assert (tmp_path / "again" / "metrics.csv").read_text() == \
            (tiny_run["out"] / "metrics.csv").read_text()
        assert (best / "params.bin").read_bytes() == \
            (tiny_run["best"] / "params.bin").read_bytes()

    def test_evaluate_checkpoint(self, tiny_run):
        record, extras = evaluate(tiny_run["best"], "test")
        assert record.split == "test"
        assert record.wer >= 0.0 and extras["token_accuracy"] is None

    def test_evaluate_unknown_split(self, tiny_run):
        with pytest.raises(ValueError, match="split"):
            evaluate(tiny_run["best"], "holdout")

    def test_eval_matches_dev_metrics_row(self, tiny_run):
        model, cfg, _ = load_checkpoint(tiny_run["best"])
        ds = Dataset(cfg.dataset)
        vocab = GlossVocab.load(tiny_run["out"] / "gloss_vocab.json")
        dev = prepare_split(ds, "dev", "cslr", vocab, None)
        rec, _ = evaluate_model(model, dev, "dev", 0, False)
        best_row = (tiny_run["out"] / "metrics.csv").read_text() \
            .strip().split("\n")[2]
        assert f"{rec.wer:.6f}" == best_row.split(",")[3]


class TestExportGraphs:
    def test_dot_and_json(self, tiny_run, tmp_path):
        ds = Dataset(tiny_run["cfg"].dataset)
        sid = ds.split_ids("dev")[0]
        dot_files = export_graphs(tiny_run["best"], sid, "dot", tmp_path / "d")
        json_files = export_graphs(tiny_run["best"], sid, "json", tmp_path / "j")
        names = sorted(p.name for p in dot_files)
        assert names == ["stage0_hierarchical.dot", "stage0_local.dot",
                         "stage0_temporal.dot", "stage1_local.dot",
                         "stage1_temporal.dot"]
        text = (tmp_path / "d" / "stage0_local.dot").read_text()
        assert text.startswith("graph") and "f0_n" in text
        data = json.loads((tmp_path / "j" / "stage0_temporal.json").read_text())
        assert data["kind"] == "temporal"
        # temporal edges cross consecutive frames
        a, b = data["edges"][0]
        fa = int(a.split("_")[0][1:])
        fb = int(b.split("_")[0][1:])
        assert fb == fa + 1

    def test_unknown_sample_rejected(self, tiny_run, tmp_path):
        with pytest.raises(ValueError, match="unknown sample"):
            export_graphs(tiny_run["best"], "nope-123", "dot", tmp_path)

    def test_bad_format_rejected(self, tiny_run, tmp_path):
        with pytest.raises(ValueError, match="format"):
            export_graphs(tiny_run["best"], "dev-00000", "svg", tmp_path)
