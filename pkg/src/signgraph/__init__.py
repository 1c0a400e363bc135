"""Graph-based continuous sign language recognition and translation
pre-training on a deterministic synthetic corpus, built on a small
float64 autodiff engine.
"""

from .tensor import Tensor, Tape, backward, grad_check
from .ctc import GlossVocab, ctc_loss, greedy_decode, wer
from .model import ModelConfig, SignModel
from .train import TrainConfig, train_cslr, pretrain_tcp, finetune_translation, evaluate

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Tape", "backward", "grad_check",
    "GlossVocab", "ctc_loss", "greedy_decode", "wer",
    "ModelConfig", "SignModel",
    "TrainConfig", "train_cslr", "pretrain_tcp", "finetune_translation", "evaluate",
    "__version__",
]
