"""Transport-term unsupervised domain adaptation on a small numpy autodiff engine."""

from .data import BatchSampler, DomainPair, gen_blobs, gen_moons
from .losses import PRESETS, LossBreakdown, LossWeights
from .model import ChattyModel, forward, init, predict
from .train import RunRecord, TrainConfig, default_lambda2, evaluate, run

__version__ = "0.1.0"

__all__ = [
    "BatchSampler", "DomainPair", "gen_blobs", "gen_moons",
    "PRESETS", "LossBreakdown", "LossWeights",
    "ChattyModel", "forward", "init", "predict",
    "RunRecord", "TrainConfig", "default_lambda2", "evaluate", "run",
]
