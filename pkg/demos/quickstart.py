"""End-to-end walkthrough on a tiny synthetic corpus.

Generates a small dataset, trains the recognition model for a few epochs,
evaluates on the test split, and dumps the constructed graphs for one
sample. Runs in about a minute on one CPU.
"""

from pathlib import Path

from signgraph.datasynth import Dataset, SynthSpec, gen_corpus
from signgraph.train import TrainConfig, evaluate, export_graphs, train_cslr

WORK = Path("demo-quickstart")

spec = SynthSpec(frame_h=32, frame_w=32, glosses_per_sample=(1, 2),
                 train=24, dev=8, test=8)
gen_corpus(spec, seed=0, out_dir=WORK / "data")
print("generated", len(Dataset(WORK / "data").split_ids("train")), "train samples")

cfg = TrainConfig(
    dataset=str(WORK / "data"),
    epochs=4,
    hidden=16,
    stem_channels=(8, 12, 16),
    k_local=(2, 2),
    k_temporal=(8, 8),
)
best = train_cslr(cfg, WORK / "run")
print("best checkpoint at", best)

record, _ = evaluate(best, "test")
print(f"test WER {record.wer:.3f}  "
      f"(del {record.deletions} / ins {record.insertions} / sub {record.substitutions})")

sample = Dataset(WORK / "data").split_ids("test")[0]
files = export_graphs(best, sample, "dot", WORK / "graphs")
print("wrote", len(files), "graph files, e.g.", files[0])
