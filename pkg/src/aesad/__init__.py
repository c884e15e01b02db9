"""Semi-supervised anomaly detection with autoencoders.

Normal examples are trained to reconstruct themselves and labeled
anomalies to reconstruct as a fixed transform of the input; the anomaly
score is the plain reconstruction error.
"""

from aesad.data import Dataset, PollutionSpec, SplitSpec
from aesad.loss import FKind, LossConfig
from aesad.nn import Network, init_network
from aesad.trainer import TrainConfig, TrainReport, score

__all__ = [
    "Dataset",
    "FKind",
    "LossConfig",
    "Network",
    "PollutionSpec",
    "SplitSpec",
    "TrainConfig",
    "TrainReport",
    "init_network",
    "score",
]

__version__ = "0.1.0"
