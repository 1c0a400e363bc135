"""Training orchestration: recognition training, text-driven pre-training,
translation fine-tuning, evaluation, graph export, and persistence.

Everything is deterministic given (config, seed): sample order, dropout,
augmentation, and initialization all draw from counter-based streams, and
parameters update in sorted-name order, so metrics files and checkpoints
are bit-identical across reruns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, fields, replace
from pathlib import Path

import numpy as np

from . import ctc as cc
from . import head as hd
from . import tcp as tp
from . import tensor as tz
from .backbone import StemConfig
from .datasynth import Dataset, SUFFIXES
from .graphs import GraphParams, SignGraph, graph_to_dot, graph_to_json
from .model import ModelConfig, SignModel
from .rng import CounterRng
from .tensor import Tape, Tensor, backward, load_params, save_params

TASKS = ("cslr", "tcp_pretrain", "finetune_gloss", "finetune_glossfree")
METRICS_HEADER = "epoch,split,loss,wer,del,ins,sub,dispersion"


@dataclass
class TrainConfig:
    dataset: str = "data"
    task: str = "cslr"
    seed: int = 0
    epochs: int = 30
    batch_size: int = 4
    lr: float = 5e-4
    decoder_lr: float = 5e-4
    weight_decay: float = 1e-4
    decay_at: tuple[float, ...] = (0.4, 0.6)   # fractions of total epochs
    decay_factor: float = 0.5
    hidden: int = 64
    emb_dim: int = 32
    stem_channels: tuple[int, ...] = (16, 32, 64)
    k_local: tuple[int, ...] = (3, 4)
    k_temporal: tuple[int, ...] = (16, 16)
    distance: str = "euclidean"
    aggregation: str = "edgeconv_max"
    order: tuple[str, ...] = ("HSG", "TSG", "LSG")
    drop_rate: float = 0.1
    use_graphs: bool = True
    augment: bool = True

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"TrainConfig: unknown task {self.task!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("TrainConfig: epochs must be >= 0, batch_size >= 1")
        if any(k < 1 for k in self.k_local) or any(k < 1 for k in self.k_temporal):
            raise ValueError("TrainConfig: K values must be >= 1")
        if list(self.decay_at) != sorted(set(self.decay_at)):
            raise ValueError("TrainConfig: decay_at must be strictly increasing")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            raw = json.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"TrainConfig: unknown keys {unknown}")
        kw = dict(raw)
        for name in ("decay_at", "stem_channels", "k_local", "k_temporal", "order"):
            if name in kw:
                kw[name] = tuple(kw[name])
        return cls(**kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v
                for k, v in asdict(self).items()}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def lr_milestones(self) -> list[int]:
        return sorted({max(1, int(frac * self.epochs)) for frac in self.decay_at})

    def lr_factor(self, epoch: int) -> float:
        return self.decay_factor ** sum(1 for m in self.lr_milestones() if epoch >= m)


@dataclass
class MetricsRecord:
    epoch: int
    split: str
    loss: float
    wer: float
    deletions: int
    insertions: int
    substitutions: int
    dispersion: float

    def csv_row(self) -> str:
        return (f"{self.epoch},{self.split},{self.loss:.6f},{self.wer:.6f},"
                f"{self.deletions},{self.insertions},{self.substitutions},"
                f"{self.dispersion:.6f}")


def write_metrics_csv(path, records: list[MetricsRecord]) -> None:
    lines = [METRICS_HEADER] + [r.csv_row() for r in records]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# text vocabulary (decoder side)


class TextVocab:
    """Word <-> id table for the translation decoder.

    Ids 0/1/2 are end-of-sentence, start-of-sentence, and unknown; real
    words start at 3, ordered by descending train-split frequency with
    lexicographic tie-breaks.
    """

    def __init__(self, words: list[str]):
        if len(set(words)) != len(words):
            raise ValueError("TextVocab: duplicate words")
        self.words = list(words)
        self._ids = {w: i + hd.N_SPECIALS for i, w in enumerate(self.words)}

    @property
    def size(self) -> int:
        return len(self.words) + hd.N_SPECIALS

    def encode(self, tokens: list[str]) -> list[int]:
        return [self._ids.get(t, hd.UNK_ID) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        out = []
        for i in ids:
            if i < hd.N_SPECIALS:
                out.append("<unk>" if i == hd.UNK_ID else "")
            else:
                out.append(self.words[i - hd.N_SPECIALS])
        return out

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"version": 1, "words": self.words}, fh, indent=2,
                      sort_keys=True, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TextVocab":
        with open(path) as fh:
            return cls(json.load(fh)["words"])


def build_text_vocab(texts: list[str]) -> TextVocab:
    from collections import Counter
    counts = Counter()
    for text in texts:
        counts.update(tp.make_pseudo_gloss(text))
    return TextVocab(sorted(counts, key=lambda w: (-counts[w], w)))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with decoupled weight decay and per-parameter-group step sizes.

    Updates iterate parameter names in sorted order so the sequence of
    floating-point operations, and hence the result, is reproducible.
    """

    def __init__(self, params: dict[str, Tensor], lr: float, decoder_lr: float,
                 weight_decay: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.decoder_lr = decoder_lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self, params: dict[str, Tensor], lr_factor: float = 1.0) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name in sorted(params):
            p = params[name]
            if p.grad is None:
                continue
            base = self.decoder_lr if name.startswith("decoder.") else self.lr
            lr = base * lr_factor
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * p.grad
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * p.grad * p.grad
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            p.data -= lr * (mhat / (np.sqrt(vhat) + self.eps)
                            + self.weight_decay * p.data)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(out_dir, model: SignModel, cfg: TrainConfig, meta: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    ordered = {n: model.params[n] for n in sorted(model.params)}
    save_params(ordered, out / "params.json", out / "params.bin")
    meta = dict(meta)
    meta["num_classes"] = model.cfg.num_classes
    meta["text_vocab"] = model.cfg.text_vocab
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def model_config_from(cfg: TrainConfig, num_classes: int, text_vocab: int) -> ModelConfig:
    stage0 = tuple(cfg.order)
    stage1 = tuple(m for m in cfg.order if m != "HSG")
    return ModelConfig(
        num_classes=num_classes,
        text_vocab=text_vocab,
        hidden=cfg.hidden,
        emb_dim=cfg.emb_dim,
        aggregation=cfg.aggregation,
        drop_rate=cfg.drop_rate,
        stem=StemConfig(channels=tuple(cfg.stem_channels)),
        graph=GraphParams(tuple(cfg.k_local), tuple(cfg.k_temporal), cfg.distance),
        stage_orders=(stage0, stage1),
        use_graphs=cfg.use_graphs,
    )


def load_checkpoint(ckpt_dir) -> tuple[SignModel, TrainConfig, dict]:
    ckpt = Path(ckpt_dir)
    cfg = TrainConfig.from_json(ckpt / "config.json")
    with open(ckpt / "meta.json") as fh:
        meta = json.load(fh)
    mcfg = model_config_from(cfg, meta["num_classes"], meta["text_vocab"])
    model = SignModel(mcfg, cfg.seed)
    loaded = load_params(ckpt / "params.json", ckpt / "params.bin")
    for name, t in loaded.items():
        if name not in model.params:
            raise ValueError(f"load_checkpoint: unexpected parameter {name}")
        if t.data.shape != model.params[name].data.shape:
            raise ValueError(f"load_checkpoint: shape mismatch for {name}")
        model.params[name] = Tensor(t.data.copy(), requires_grad=True)
    return model, cfg, meta


def _transfer_init(model: SignModel, init_dir) -> list[str]:
    """Copy matching parameters from an init checkpoint into ``model``.

    Parameters absent from the init (e.g. a fresh decoder on top of a
    recognition-only checkpoint) keep their random initialization.  Any
    shape mismatch aborts, listing the offending names.
    """
    init = Path(init_dir)
    loaded = load_params(init / "params.json", init / "params.bin")
    mismatched = sorted(
        n for n, t in loaded.items()
        if n in model.params and t.data.shape != model.params[n].data.shape
    )
    if mismatched:
        raise ValueError(f"init checkpoint incompatible, mismatched shapes: {mismatched}")
    copied = []
    for name, t in loaded.items():
        if name in model.params:
            model.params[name] = Tensor(t.data.copy(), requires_grad=True)
            copied.append(name)
    return copied


# ---------------------------------------------------------------------------
# data plumbing


@dataclass
class PreparedSample:
    sample_id: str
    frames: np.ndarray          # float32 [T, H, W, 3]
    ctc_target: list[int]
    text_ids: list[int] | None  # decoder word ids, no specials
    feasible: bool


def _pseudo_normalizer() -> tp.NormalizerConfig:
    return tp.NormalizerConfig(lemmatizer=tp.suffix_lemmatizer(SUFFIXES))


def build_ctc_vocab(ds: Dataset, task: str) -> tuple[cc.GlossVocab, int]:
    """CTC label vocabulary plus the count of out-of-vocabulary pseudo
    tokens dropped from non-train splits (always 0 for gloss tasks)."""
    if task in ("cslr", "finetune_gloss"):
        return cc.GlossVocab(list(ds.glosses)), 0
    norm = _pseudo_normalizer()
    corpus = [tp.make_pseudo_gloss(ds.meta(sid)["text"], norm)
              for sid in ds.split_ids("train")]
    vocab = tp.build_vocab(corpus)
    oov = 0
    for split in ds.manifest["splits"]:
        if split == "train":
            continue
        for sid in ds.split_ids(split):
            _, n = vocab.encode(tp.make_pseudo_gloss(ds.meta(sid)["text"], norm))
            oov += n
    return vocab, oov


def prepare_split(ds: Dataset, split: str, task: str, vocab: cc.GlossVocab,
                  text_vocab: TextVocab | None) -> list[PreparedSample]:
    norm = _pseudo_normalizer()
    out = []
    for sid in ds.split_ids(split):
        meta = ds.meta(sid)
        if task in ("cslr", "finetune_gloss"):
            target = [g + 1 for g in meta["gloss_ids"]]
        else:
            target, _ = vocab.encode(tp.make_pseudo_gloss(meta["text"], norm))
        text_ids = None
        if text_vocab is not None:
            text_ids = text_vocab.encode(tp.make_pseudo_gloss(meta["text"]))
        frames = ds.frames(sid)
        feasible = bool(target) and \
            cc.min_frames_required(target) <= hd.head_out_len(frames.shape[0])
        out.append(PreparedSample(sid, frames, target, text_ids, feasible))
    return out


def _augment_frames(frames: np.ndarray, rng: CounterRng) -> np.ndarray:
    """Temporal scaling by a factor in [0.8, 1.2] (nearest-frame resample)."""
    factor = 0.8 + 0.4 * rng.uniform()
    T = frames.shape[0]
    new_t = max(4, int(round(T * factor)))
    idx = np.round(np.linspace(0, T - 1, new_t)).astype(np.int64)
    return frames[idx]


# ---------------------------------------------------------------------------
# forward / loss


def _sample_loss(model: SignModel, sample: PreparedSample, frames: np.ndarray,
                 drop_seed: int, drop_rate: float | None,
                 use_decoder: bool) -> tuple[Tensor, Tensor]:
    """Per-sample objective: CTC at both classifier heads (averaged), plus
    the decoder cross entropy 1:1 when fine-tuning for translation."""
    logits, aux_logits, enc = model.encode(
        Tensor(frames.astype(np.float64)), drop_seed=drop_seed, drop_rate=drop_rate)
    lp = tz.softmax_log(logits)
    loss = (cc.ctc_loss(lp, sample.ctc_target)
            + cc.ctc_loss(tz.softmax_log(aux_logits), sample.ctc_target)) \
        * Tensor(0.5)
    if use_decoder and sample.text_ids is not None:
        dec_lp = model.decode_text(enc, [hd.SOS_ID] + sample.text_ids)
        ce = hd.cross_entropy(dec_lp, sample.text_ids + [hd.EOS_ID])
        loss = loss + ce
    return loss, lp


# ---------------------------------------------------------------------------
# evaluation


def _token_accuracy(hyp: list[int], ref: list[int]) -> float:
    if not ref:
        return 1.0 if not hyp else 0.0
    rep = cc.wer(hyp, ref)
    return max(0.0, 1.0 - rep.wer)


def evaluate_model(model: SignModel, samples: list[PreparedSample], split: str,
                   epoch: int, use_decoder: bool) -> tuple[MetricsRecord, dict]:
    """Deterministic evaluation: no augmentation, no edge dropout."""
    tot_edits = tot_ref = dels = inss = subs = 0
    losses, disps, accs = [], [], []
    skipped = 0
    for sample in samples:
        logits, aux_logits, enc = model.encode(
            Tensor(sample.frames.astype(np.float64)), drop_rate=0.0)
        lp = tz.softmax_log(logits)
        hyp = cc.greedy_decode(lp)
        if sample.ctc_target:
            rep = cc.wer(hyp, sample.ctc_target)
            tot_edits += rep.deletions + rep.insertions + rep.substitutions
            tot_ref += rep.ref_len
            dels += rep.deletions
            inss += rep.insertions
            subs += rep.substitutions
        else:
            skipped += 1
        if sample.feasible:
            loss = (cc.ctc_loss(lp, sample.ctc_target)
                    + cc.ctc_loss(tz.softmax_log(aux_logits), sample.ctc_target)) \
                * Tensor(0.5)
            if use_decoder and sample.text_ids is not None:
                dec_lp = model.decode_text(enc, [hd.SOS_ID] + sample.text_ids)
                loss = loss + hd.cross_entropy(dec_lp, sample.text_ids + [hd.EOS_ID])
            losses.append(float(loss.data))
        if enc.data.shape[0] >= 2:
            disps.append(tp.feature_dispersion(enc))
        if use_decoder and sample.text_ids is not None:
            _, toks = model.decode_text(enc, None, max_len=2 * len(sample.text_ids) + 5)
            accs.append(_token_accuracy(toks, sample.text_ids))
    record = MetricsRecord(
        epoch=epoch,
        split=split,
        loss=float(np.mean(losses)) if losses else 0.0,
        wer=tot_edits / tot_ref if tot_ref else 1.0,
        deletions=dels,
        insertions=inss,
        substitutions=subs,
        dispersion=float(np.mean(disps)) if disps else 0.0,
    )
    extras = {"token_accuracy": float(np.mean(accs)) if accs else None,
              "skipped": skipped}
    return record, extras


# ---------------------------------------------------------------------------
# training loops


def _fit(cfg: TrainConfig, out_dir, init_dir=None) -> Path:
    """Shared loop behind all four tasks.  Returns the checkpoint directory
    (best dev WER; for translation tasks, best dev token accuracy)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = Dataset(cfg.dataset)
    use_decoder = cfg.task in ("finetune_gloss", "finetune_glossfree")

    vocab, oov = build_ctc_vocab(ds, cfg.task)
    text_vocab = build_text_vocab(
        [ds.meta(sid)["text"] for sid in ds.split_ids("train")]) if use_decoder else None

    mcfg = model_config_from(cfg, vocab.size,
                             text_vocab.size if text_vocab else 0)
    model = SignModel(mcfg, cfg.seed)
    if init_dir is not None:
        _transfer_init(model, init_dir)

    train = prepare_split(ds, "train", cfg.task, vocab, text_vocab)
    dev = prepare_split(ds, "dev", cfg.task, vocab, text_vocab)
    feasible = [s for s in train if s.feasible]
    n_skipped = len(train) - len(feasible)
    if not feasible:
        raise RuntimeError(
            f"no CTC-feasible training samples ({n_skipped} skipped)")

    vocab.save(out / "gloss_vocab.json")
    if text_vocab is not None:
        text_vocab.save(out / "text_vocab.json")

    opt = Adam(model.params, cfg.lr, cfg.decoder_lr, cfg.weight_decay)
    rng = CounterRng("train", cfg.seed, cfg.task)
    records: list[MetricsRecord] = []
    best_key = None
    best_dir = out / "best"
    log = {"task": cfg.task, "skipped_train": n_skipped, "oov_dropped": oov,
           "epochs_run": 0, "best_epoch": None}

    if cfg.epochs == 0:
        save_checkpoint(best_dir, model, cfg,
                        {"epoch": 0, "task": cfg.task, "best": None,
                         "rng_state": rng.state()})
        write_metrics_csv(out / "metrics.csv", records)
        with open(out / "train_log.json", "w") as fh:
            json.dump(log, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return best_dir

    for epoch in range(cfg.epochs):
        order = list(range(len(feasible)))
        rng.substream("shuffle", epoch).shuffle(order)
        lr_factor = cfg.lr_factor(epoch)
        epoch_losses = []
        tot_edits = tot_ref = dels = inss = subs = 0
        disps = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            model.zero_grads()
            for j in batch:
                sample = feasible[j]
                frames = sample.frames
                if cfg.augment:
                    aug = _augment_frames(
                        frames, rng.substream("aug", epoch, sample.sample_id))
                    if cc.min_frames_required(sample.ctc_target) \
                            <= hd.head_out_len(aug.shape[0]):
                        frames = aug
                drop_seed = _key_i64("drop", cfg.seed, epoch, sample.sample_id)
                with Tape() as tape:
                    loss, lp = _sample_loss(model, sample, frames, drop_seed,
                                            None, use_decoder)
                    scaled = loss * Tensor(1.0 / len(batch))
                backward(tape, scaled)
                epoch_losses.append(float(loss.data))
                hyp = cc.greedy_decode(lp)
                rep = cc.wer(hyp, sample.ctc_target)
                tot_edits += rep.deletions + rep.insertions + rep.substitutions
                tot_ref += rep.ref_len
                dels += rep.deletions
                inss += rep.insertions
                subs += rep.substitutions
            opt.step(model.params, lr_factor)
        records.append(MetricsRecord(
            epoch=epoch, split="train",
            loss=float(np.mean(epoch_losses)),
            wer=tot_edits / tot_ref if tot_ref else 1.0,
            deletions=dels, insertions=inss, substitutions=subs,
            dispersion=float(np.mean(disps)) if disps else 0.0))
        dev_rec, dev_extras = evaluate_model(model, dev, "dev", epoch, use_decoder)
        records.append(dev_rec)
        if use_decoder and dev_extras["token_accuracy"] is not None:
            key = -dev_extras["token_accuracy"]
        else:
            key = dev_rec.wer
        if best_key is None or key < best_key:
            best_key = key
            log["best_epoch"] = epoch
            save_checkpoint(best_dir, model, cfg,
                            {"epoch": epoch, "task": cfg.task,
                             "best": {"wer": dev_rec.wer,
                                      "token_accuracy": dev_extras["token_accuracy"],
                                      "dispersion": dev_rec.dispersion},
                             "rng_state": rng.state()})
        log["epochs_run"] = epoch + 1

    write_metrics_csv(out / "metrics.csv", records)
    with open(out / "train_log.json", "w") as fh:
        json.dump(log, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return best_dir


def _key_i64(*parts) -> int:
    """Stable small int key for dropout streams derived from string parts."""
    from .rng import _key_from_parts
    return _key_from_parts(parts) % (1 << 31)


def train_cslr(cfg: TrainConfig, out_dir) -> Path:
    """Recognition training with CTC supervision on gloss targets."""
    if cfg.task != "cslr":
        cfg = replace(cfg, task="cslr")
    return _fit(cfg, out_dir)


def pretrain_tcp(cfg: TrainConfig, out_dir) -> Path:
    """Same loop as recognition training, but targets are pseudo glosses
    derived from the spoken text (no gloss annotations consumed)."""
    if cfg.task != "tcp_pretrain":
        cfg = replace(cfg, task="tcp_pretrain")
    return _fit(cfg, out_dir)


def finetune_translation(cfg: TrainConfig, out_dir, init_dir=None) -> Path:
    """Joint CTC + cross-entropy fine-tuning with the attention decoder.

    ``cfg.task`` picks the CTC targets: finetune_gloss uses annotated
    glosses, finetune_glossfree uses pseudo glosses from text.
    """
    if cfg.task not in ("finetune_gloss", "finetune_glossfree"):
        raise ValueError(f"finetune_translation: bad task {cfg.task!r}")
    return _fit(cfg, out_dir, init_dir=init_dir)


def evaluate(ckpt_dir, split: str) -> tuple[MetricsRecord, dict]:
    """Evaluate a checkpoint on one dataset split."""
    model, cfg, meta = load_checkpoint(ckpt_dir)
    ds = Dataset(cfg.dataset)
    if split not in ds.manifest["splits"]:
        raise ValueError(f"evaluate: dataset has no split {split!r}")
    vocab = cc.GlossVocab.load(Path(ckpt_dir).parent / "gloss_vocab.json") \
        if (Path(ckpt_dir).parent / "gloss_vocab.json").exists() \
        else build_ctc_vocab(ds, cfg.task)[0]
    use_decoder = meta["text_vocab"] > 0
    tv_path = Path(ckpt_dir).parent / "text_vocab.json"
    text_vocab = TextVocab.load(tv_path) if use_decoder and tv_path.exists() else None
    samples = prepare_split(ds, split, cfg.task, vocab, text_vocab)
    return evaluate_model(model, samples, split, meta.get("epoch", 0),
                          use_decoder and text_vocab is not None)


# ---------------------------------------------------------------------------
# graph export


def export_graphs(ckpt_dir, sample_id: str, out_format: str, out_dir) -> list[Path]:
    """Write one DOT or JSON file per (stage, graph kind) from a forward
    pass on ``sample_id`` with edge dropout disabled."""
    if out_format not in ("dot", "json"):
        raise ValueError(f"export_graphs: format must be dot|json, got {out_format!r}")
    model, cfg, _ = load_checkpoint(ckpt_dir)
    ds = Dataset(cfg.dataset)
    if sample_id not in ds.manifest["samples"]:
        raise ValueError(f"export_graphs: unknown sample {sample_id!r}")
    frames = ds.frames(sample_id)
    collector: list = []
    model.encode(Tensor(frames.astype(np.float64)), collector=collector,
                 drop_rate=0.0)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for stage, kind, per_frame in collector:
        n_low = (frames.shape[1] // (model.cfg.stem.patch_size * (2 ** stage))) ** 2
        if kind == "hierarchical":
            s = model.cfg.stem.patch_size // model.cfg.stem.tap_stride
            n_high = n_low * s * s
            edges = [(t * n_high + a, t * n_low + b)
                     for t, fe in enumerate(per_frame) for a, b in fe]
            id_a = lambda g, nh=n_high: f"f{g // nh}_n{g % nh}"
            id_b = lambda g, nl=n_low, nh=n_high: f"f{g // nl}_n{nh + g % nl}"
        elif kind == "temporal":
            edges = [(t * n_low + a, (t + 1) * n_low + b)
                     for t, fe in enumerate(per_frame) for a, b in fe]
            id_a = id_b = lambda g, n=n_low: f"f{g // n}_n{g % n}"
        else:
            edges = [(t * n_low + a, t * n_low + b)
                     for t, fe in enumerate(per_frame) for a, b in fe]
            id_a = id_b = lambda g, n=n_low: f"f{g // n}_n{g % n}"
        g = SignGraph(kind, edges)
        path = out / f"stage{stage}_{kind}.{out_format}"
        if out_format == "dot":
            path.write_text(graph_to_dot(g, id_a, id_b,
                                         name=f"stage{stage}_{kind}"))
        else:
            with open(path, "w") as fh:
                json.dump(graph_to_json(g, id_a, id_b), fh, indent=2)
                fh.write("\n")
        written.append(path)
    return written
