import pytest

from signgraph.datasynth import SynthSpec, gen_corpus
from signgraph.train import TrainConfig, train_cslr

TINY_SPEC = SynthSpec(frame_h=32, frame_w=32, glosses_per_sample=(1, 2),
                      train=8, dev=3, test=3)

TINY_TRAIN = dict(
    task="cslr", seed=0, epochs=1, batch_size=4,
    hidden=8, emb_dim=4, stem_channels=(4, 6, 8),
    k_local=(2, 2), k_temporal=(4, 4), augment=False,
)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny-ds") / "ds"
    gen_corpus(TINY_SPEC, 5, root)
    return root


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, tiny_dataset):
    """One-epoch recognition run shared by checkpoint/eval/export tests."""
    out = tmp_path_factory.mktemp("tiny-run") / "run"
    cfg = TrainConfig(dataset=str(tiny_dataset), **TINY_TRAIN)
    best = train_cslr(cfg, out)
    return {"out": out, "best": best, "cfg": cfg}
