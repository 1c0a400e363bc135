"""Full recognition/translation model.

Pipeline per sample: patchify stem over the frames, two multiscale stages
of graph updates separated by a patch merge, per-frame node pooling, the
temporal head (conv blocks + BiLSTM + two CTC classifiers), and optionally
a small attention decoder for text.

Stage 0 runs hierarchical + temporal + local updates on the 8x8 grid with
the stem's 16x16 tap; stage 1, after merging to 4x4 with doubled width,
runs temporal + local only (no higher-resolution map remains to tap).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import head as hd
from . import message_passing as mp
from . import tensor as tz
from .backbone import NodeGrid, StemConfig, init_merge_params, init_stem_params, \
    patch_merge, patchify_stem
from .graphs import GraphParams
from .rng import CounterRng
from .tensor import ShapeError, Tensor


@dataclass
class ModelConfig:
    num_classes: int                      # gloss classes including the blank
    text_vocab: int = 0                   # decoder vocab including specials; 0 = none
    hidden: int = 64
    emb_dim: int = 32
    aggregation: str = "edgeconv_max"
    drop_rate: float = 0.1
    stem: StemConfig = field(default_factory=StemConfig)
    graph: GraphParams = field(default_factory=GraphParams)
    stage_orders: tuple[tuple[str, ...], ...] = (("HSG", "TSG", "LSG"), ("TSG", "LSG"))
    use_graphs: bool = True               # False = stem + head ablation

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("ModelConfig: need at least one non-blank class")
        if len(self.stage_orders) != 2:
            raise ValueError("ModelConfig: exactly two stages are supported")
        if "HSG" in self.stage_orders[1]:
            raise ValueError("ModelConfig: stage 1 has no tap for HSG")


class SignModel:
    """Parameter registry plus the forward pass.

    All weights live in a flat name -> Tensor dict so the optimizer,
    checkpointing, and gradient checks can treat them uniformly.
    """

    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        rng = CounterRng("model-init", seed)
        params = init_stem_params(cfg.stem, rng.substream("stem"))
        d0 = cfg.stem.out_dim
        d1 = 2 * d0
        if cfg.use_graphs:
            s = cfg.stem.patch_size // cfg.stem.tap_stride
            for mod in cfg.stage_orders[0]:
                key = mod.lower()
                if mod == "HSG":
                    mp.init_block_weights(cfg.stem.tap_dim, d0,
                                          rng.substream("s0", key),
                                          f"stage0.{key}", params, hier_stride=s)
                else:
                    mp.init_block_weights(d0, d0, rng.substream("s0", key),
                                          f"stage0.{key}", params)
            for mod in cfg.stage_orders[1]:
                key = mod.lower()
                mp.init_block_weights(d1, d1, rng.substream("s1", key),
                                      f"stage1.{key}", params)
        params.update(init_merge_params(d0, rng.substream("merge"), "merge"))
        hd.init_head_params(d1, cfg.hidden, cfg.num_classes,
                            rng.substream("head"), params)
        if cfg.text_vocab:
            hd.init_decoder_params(2 * cfg.hidden, cfg.hidden, cfg.text_vocab,
                                   cfg.emb_dim, rng.substream("decoder"), params)
        self.params = params

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def stage_configs(self, drop_rate: float | None = None) -> tuple[mp.StageConfig, mp.StageConfig]:
        rate = self.cfg.drop_rate if drop_rate is None else drop_rate
        gp = GraphParams(self.cfg.graph.k_local, self.cfg.graph.k_temporal,
                         self.cfg.graph.distance, rate)
        return (
            mp.StageConfig(self.cfg.stage_orders[0], self.cfg.aggregation, gp),
            mp.StageConfig(self.cfg.stage_orders[1], self.cfg.aggregation, gp),
        )

    def encode(self, frames: Tensor, drop_seed: int = 0,
               collector: list | None = None,
               drop_rate: float | None = None) -> tuple[Tensor, Tensor, Tensor]:
        """Frames [T, H, W, 3] -> (logits [T', C], aux logits, encoder seq).

        ``drop_seed`` keys the edge-dropout streams; ``drop_rate`` overrides
        the config rate (pass 0.0 for deterministic evaluation).
        ``collector`` receives (stage, kind, per_frame_edges) tuples.
        """
        if frames.data.shape[0] < 4:
            raise ShapeError(
                f"encode: need at least 4 frames to survive two temporal pools, "
                f"got {frames.data.shape[0]}"
            )
        grid, tap = patchify_stem(frames, self.cfg.stem, self.params)
        if self.cfg.use_graphs:
            s0, s1 = self.stage_configs(drop_rate)
            col0 = [] if collector is not None else None
            grid = mp.mix_stage(grid, tap, s0, self.params, "stage0", 0,
                                drop_seed=drop_seed, collector=col0)
            grid = patch_merge(grid, self.params, "merge")
            col1 = [] if collector is not None else None
            grid = mp.mix_stage(grid, None, s1, self.params, "stage1", 1,
                                drop_seed=drop_seed + 1000000, collector=col1)
            if collector is not None:
                collector.extend((0, kind, e) for kind, e in col0)
                collector.extend((1, kind, e) for kind, e in col1)
        else:
            grid = patch_merge(grid, self.params, "merge")
        pooled = hd.pool_nodes(grid)
        return hd.temporal_head(pooled, self.params, self.cfg.hidden)

    def decode_text(self, enc: Tensor, target_tokens=None, max_len: int = 30):
        """Run the translation decoder (teacher forcing if targets given)."""
        if not self.cfg.text_vocab:
            raise ValueError("decode_text: model built without a text decoder")
        if target_tokens is not None:
            return hd.translation_decoder(enc, target_tokens, self.params,
                                          self.cfg.hidden)
        return hd.translation_decoder(enc, None, self.params, self.cfg.hidden,
                                      teacher_forcing=False, max_len=max_len)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None
