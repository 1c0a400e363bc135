"""Deterministic synthetic sign corpus.

Each gloss is a short clip of two moving colored blobs.  Glosses come in
pairs that share motion and *total* color mass but split it differently
between the two blobs (e.g. one bright + one faint vs. two medium blobs),
so telling pair members apart requires relating the two regions rather
than averaging over the frame.  "Spoken" text is derived from the gloss
sequence by swaps, artificial inflection suffixes, and function-word
insertions, making the text/sign alignment non-monotonic.

Every byte of the corpus is a pure function of (spec, seed): samples draw
from per-(seed, split, index) counter streams, so generation order never
matters.

On-disk format: ``manifest.json`` plus one MSGF file per sample.  MSGF is
magic b"MSGF", four little-endian uint32 extents (T, H, W, C), then
T*H*W*C little-endian float32 values.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .rng import CounterRng

GLOSS_NAMES = (
    "balo", "cari", "dorn", "elmi", "fewa", "gilt",
    "hupo", "jeri", "kanu", "lomi", "meza", "nuri",
)

# artificial inflections; no gloss name ends with one of these
SUFFIXES = ("ath", "esk", "um")
FUNCTION_WORDS = ("po", "qi", "zu")


@dataclass
class SynthSpec:
    num_glosses: int = 12
    frames_per_gloss: tuple[int, int] = (4, 8)   # inclusive range
    frame_h: int = 64
    frame_w: int = 64
    glosses_per_sample: tuple[int, int] = (1, 5)
    train: int = 200
    dev: int = 30
    test: int = 30
    p_swap: float = 0.35
    p_suffix: float = 0.5
    p_insert: float = 0.25
    noise: float = 0.02

    def sizes(self) -> dict[str, int]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


@dataclass
class SynthSample:
    sample_id: str
    gloss_ids: list[int]
    text: str
    frames: np.ndarray  # [T, H, W, 3] float32 in [0, 1]


# ---------------------------------------------------------------------------
# rendering


def _gloss_visual_params(gloss_id: int, num_glosses: int) -> dict:
    """Deterministic per-gloss blob parameters.

    Glosses 2p and 2p+1 form a pair: same channel, same motion, same total
    intensity, different split between the two blobs.  The parameter tuples
    of distinct glosses differ in at least one of (channel, split, phase,
    angular rate), giving a separation margin of >= 0.3 in intensity or
    >= 0.8 rad in phase.
    """
    pair = gloss_id // 2
    member = gloss_id % 2
    channel = pair % 3
    # intensity split: member 0 is lopsided, member 1 is even; sum constant
    if member == 0:
        inten_a, inten_b = 0.95, 0.25
    else:
        inten_a, inten_b = 0.60, 0.60
    phase = 2.0 * np.pi * pair / max(1, (num_glosses + 1) // 2)
    omega = 0.5 + 0.25 * (pair % 4)
    return {
        "channel": channel,
        "inten_a": inten_a,
        "inten_b": inten_b,
        "phase": phase,
        "omega": omega,
        "radius": 5.0,
    }


def render_gloss_clip(gloss_id: int, spec: SynthSpec, rng: CounterRng) -> np.ndarray:
    """Render one gloss as [T, H, W, 3] float32 frames in [0, 1]."""
    if not 0 <= gloss_id < spec.num_glosses:
        raise ValueError(f"render_gloss_clip: gloss id {gloss_id} out of range")
    p = _gloss_visual_params(gloss_id, spec.num_glosses)
    lo, hi = spec.frames_per_gloss
    T = rng.randint(lo, hi + 1)
    H, W = spec.frame_h, spec.frame_w
    jitter = rng.normal((2, 2)) * 1.5  # small per-clip center offsets
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    frames = np.zeros((T, H, W, 3), dtype=np.float64)
    ca0 = np.array([H * 0.3, W * 0.3]) + jitter[0]
    cb0 = np.array([H * 0.7, W * 0.7]) + jitter[1]
    orbit = 6.0
    for t in range(T):
        ang = p["phase"] + p["omega"] * t
        ca = ca0 + orbit * np.array([np.cos(ang), np.sin(ang)])
        cb = cb0 + orbit * np.array([np.cos(ang + np.pi), np.sin(ang + np.pi)])
        for center, inten in ((ca, p["inten_a"]), (cb, p["inten_b"])):
            d2 = (yy - center[0]) ** 2 + (xx - center[1]) ** 2
            blob = inten * np.exp(-d2 / (2.0 * p["radius"] ** 2))
            frames[t, :, :, p["channel"]] += blob
    if spec.noise > 0:
        frames += spec.noise * rng.uniform(frames.shape)
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# text derivation


def derive_text(gloss_tokens: list[str], spec: SynthSpec, rng: CounterRng) -> str:
    """Non-monotonic "spoken" rendering of a gloss sequence.

    Adjacent swaps with probability p_swap, inflection suffixes with
    probability p_suffix, function-word insertions with probability
    p_insert per gap; joined with spaces plus a trailing period.
    """
    if not gloss_tokens:
        raise ValueError("derive_text: empty gloss sequence")
    toks = list(gloss_tokens)
    i = 0
    while i < len(toks) - 1:
        if rng.uniform() < spec.p_swap:
            toks[i], toks[i + 1] = toks[i + 1], toks[i]
            i += 2  # swapped pairs don't cascade
        else:
            i += 1
    toks = [
        t + SUFFIXES[rng.randint(0, len(SUFFIXES))] if rng.uniform() < spec.p_suffix else t
        for t in toks
    ]
    out = []
    for t in toks:
        if rng.uniform() < spec.p_insert:
            out.append(FUNCTION_WORDS[rng.randint(0, len(FUNCTION_WORDS))])
        out.append(t)
    if rng.uniform() < spec.p_insert:
        out.append(FUNCTION_WORDS[rng.randint(0, len(FUNCTION_WORDS))])
    return " ".join(out) + "."


# ---------------------------------------------------------------------------
# sample / corpus generation


def _sample_gloss_sequence(spec: SynthSpec, rng: CounterRng, pool_rng: CounterRng,
                           pool: list[int]) -> list[int]:
    """Draw a gloss sequence from a balanced cyclic pool (keeps the gloss
    prior near-uniform) while avoiding adjacent repeats."""
    lo, hi = spec.glosses_per_sample
    length = rng.randint(lo, hi + 1)
    seq: list[int] = []
    while len(seq) < length:
        if not pool:
            pool.extend(range(spec.num_glosses))
            pool_rng.shuffle(pool)
        cand = pool.pop()
        if seq and cand == seq[-1]:
            pool.insert(0, cand)
            if all(g == cand for g in pool):  # cannot avoid a repeat
                seq.append(cand)
                pool.pop()
        else:
            seq.append(cand)
    return seq


def generate_sample(spec: SynthSpec, seed: int, split: str, index: int) -> SynthSample:
    """Sample ``index`` of ``split``: a pure function of (spec, seed, split, index)."""
    rng = CounterRng("synth", seed, split, index)
    # balanced pool shared across a split is stateful; to stay order-free we
    # key the pool by block of 12 samples instead
    pool_rng = CounterRng("synth-pool", seed, split, index // 12)
    pool: list[int] = []
    # regenerate pool state deterministically for this index within its block
    block_start = (index // 12) * 12
    seq = None
    for i in range(block_start, index + 1):
        draw_rng = CounterRng("synth-seq", seed, split, i)
        seq = _sample_gloss_sequence(spec, draw_rng, pool_rng, pool)
    gloss_ids = seq
    clips = [render_gloss_clip(g, spec, rng.substream("clip", pos))
             for pos, g in enumerate(gloss_ids)]
    frames = np.concatenate(clips, axis=0)
    text = derive_text([GLOSS_NAMES[g] for g in gloss_ids], spec,
                       rng.substream("text"))
    return SynthSample(f"{split}-{index:05d}", gloss_ids, text, frames)


# ---------------------------------------------------------------------------
# MSGF frame files

MSGF_MAGIC = b"MSGF"


def write_msgf(path, frames: np.ndarray) -> None:
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4:
        raise ValueError(f"write_msgf: expected [T, H, W, C], got {frames.shape}")
    with open(path, "wb") as fh:
        fh.write(MSGF_MAGIC)
        fh.write(struct.pack("<4I", *frames.shape))
        fh.write(frames.astype("<f4").tobytes())


def read_msgf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MSGF_MAGIC:
            raise ValueError(f"read_msgf: bad magic {magic!r} in {path}")
        t, h, w, c = struct.unpack("<4I", fh.read(16))
        buf = fh.read(4 * t * h * w * c)
        if len(buf) != 4 * t * h * w * c:
            raise ValueError(f"read_msgf: truncated file {path}")
        if fh.read(1):
            raise ValueError(f"read_msgf: trailing bytes in {path}")
    return np.frombuffer(buf, dtype="<f4").reshape(t, h, w, c).copy()


def gen_corpus(spec: SynthSpec, seed: int, out_dir) -> dict[str, int]:
    """Write the dataset directory; returns per-split sample counts."""
    out = Path(out_dir)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": 1,
        "frame_format": "MSGF",
        "seed": seed,
        "spec": asdict(spec),
        "glosses": list(GLOSS_NAMES[: spec.num_glosses]),
        "splits": {},
        "samples": {},
    }
    counts = {}
    for split, size in spec.sizes().items():
        if size < 1:
            raise ValueError(f"gen_corpus: split {split} must have >= 1 samples")
        ids = []
        for i in range(size):
            s = generate_sample(spec, seed, split, i)
            fname = f"frames/{s.sample_id}.msgf"
            write_msgf(out / fname, s.frames)
            manifest["samples"][s.sample_id] = {
                "id": s.sample_id,
                "gloss_ids": s.gloss_ids,
                "text": s.text,
                "frames_file": fname,
                "T": int(s.frames.shape[0]),
            }
            ids.append(s.sample_id)
        manifest["splits"][split] = ids
        counts[split] = size
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return counts


class Dataset:
    """Lazy reader over a generated corpus directory."""

    def __init__(self, root):
        self.root = Path(root)
        with open(self.root / "manifest.json") as fh:
            self.manifest = json.load(fh)
        self.glosses = self.manifest["glosses"]

    def split_ids(self, split: str) -> list[str]:
        if split not in self.manifest["splits"]:
            raise KeyError(f"Dataset: no split {split!r}")
        return list(self.manifest["splits"][split])

    def meta(self, sample_id: str) -> dict:
        return self.manifest["samples"][sample_id]

    def frames(self, sample_id: str) -> np.ndarray:
        return read_msgf(self.root / self.meta(sample_id)["frames_file"])
