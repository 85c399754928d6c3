"""Entity-aware relation extraction over noisy sentence bags.

A small, self-contained research stack: a tape-based autodiff core over
numpy, gated entity-aware embeddings, a piecewise-pooled convolutional
encoder paired with token self-attention, gated bag aggregation with a
selective-attention baseline, a synthetic corpus generator, and the
training and evaluation harness that ties them together.
"""

__version__ = "0.1.0"

from .data import Bag, Dataset, SentenceExample, SynthSpec, generate_synthetic, load_jsonl
from .errors import DataError, SegError, ShapeError, TrainingAbort, ValidationError
from .model import ModelConfig, SegParams, VARIANTS, forward_bag, load_checkpoint, loss, save_checkpoint
from .numerics import Tensor, backward, clear_tape, grad_check, no_grad
from .training import TrainConfig, train

__all__ = [
    "Bag",
    "DataError",
    "Dataset",
    "ModelConfig",
    "SegError",
    "SegParams",
    "SentenceExample",
    "ShapeError",
    "SynthSpec",
    "Tensor",
    "TrainConfig",
    "TrainingAbort",
    "VARIANTS",
    "ValidationError",
    "__version__",
    "backward",
    "clear_tape",
    "forward_bag",
    "generate_synthetic",
    "grad_check",
    "load_checkpoint",
    "load_jsonl",
    "loss",
    "no_grad",
    "save_checkpoint",
    "train",
]
