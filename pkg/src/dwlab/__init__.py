"""Dynamic weighted learning for unsupervised domain adaptation, in plain numpy."""

from .data import DomainDataset, load_idx, make_two_moons_shift, weight_samples
from .dwl import TrainConfig, Trainer, loss_cd, loss_ce, loss_da
from .metrics import BalanceState, lda_criterion, mmd, scatter, update_and_balance
from .nn import init_model, load_checkpoint, save_checkpoint
from .tensor import Tape, Tensor

__all__ = [
    "BalanceState", "DomainDataset", "Tape", "Tensor", "TrainConfig", "Trainer",
    "init_model", "lda_criterion", "load_checkpoint", "load_idx", "loss_cd", "loss_ce",
    "loss_da", "make_two_moons_shift", "mmd", "save_checkpoint", "scatter",
    "update_and_balance", "weight_samples",
]
