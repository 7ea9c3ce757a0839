"""rSTAN: pulse-enriched spatio-temporal attention for pain recognition from
face video, on a small float64 autodiff engine."""

from .attention import STA, VFE
from .errors import ConfigError, ContractError, DimensionError, FormatError, NumericError
from .harness import RunConfig, evaluate, train
from .losses import cross_entropy, neg_pearson_loss
from .networks import CNN1D, RSTAN, STAN, DeepRPPG, paper_preset, toy_preset
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "CNN1D", "RSTAN", "STA", "STAN", "VFE", "ConfigError", "ContractError", "DeepRPPG", "DimensionError",
    "FormatError", "NumericError", "RunConfig", "Tensor", "backward", "cross_entropy", "evaluate",
    "neg_pearson_loss", "no_grad", "paper_preset", "toy_preset", "train",
]
