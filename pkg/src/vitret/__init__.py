"""Recurrent-transformer and vision-transformer activity recognition at desk scale."""

from .config import ModelConfig
from .data import DatasetContainer, FrameSequence, load_dataset, save_dataset, synthetic_dataset
from .lstm import LstmModel, lstm_forward, lstm_train
from .tensor import GradTape, Tensor, grad_check
from .transformer import ReTModel, ret_forward, ret_train
from .vision import ViTModel, ViTReTModel, vit_forward, vit_ret_forward, vit_ret_train

__version__ = "0.1.0"
