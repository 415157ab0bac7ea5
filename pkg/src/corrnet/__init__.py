"""Neuron-wise correlation-maximizing regularization for small numpy networks."""
from ._kernels import BACKEND
from .corrreg import (CorrRegConfig, TwoWayPartition, corr, corr_grads, corr_value,
                      corrreg_conv_backward, corrreg_fc_backward, corrreg_penalty_total,
                      make_partitions)
from .data import TwoViewDataset, gen_synthetic_two_view, load_idx, occlude
from .exceptions import ConfigError, DimensionError, FormatError, NumericError, TrainingError
from .network import Network, preset
from .optim import TrainConfig, train
from .regularizers import cca_objective, l2regu

__version__ = "0.1.0"
