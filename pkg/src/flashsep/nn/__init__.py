from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .layers import l2_loss
from .model import VARIANTS, Model
from .optim import AdamState, adam_step
from .train import TrainConfig, TrainingError, develop_inputs, infer, prepare_sample, train
from .unet import NetArch, UNet, init_params

__all__ = [
    "AdamState", "Checkpoint", "Model", "NetArch", "TrainConfig", "TrainingError", "UNet",
    "VARIANTS", "adam_step", "develop_inputs", "infer", "init_params", "l2_loss", "load_checkpoint",
    "prepare_sample", "save_checkpoint", "train",
]
