"""MeanFlow on toy data: a small autodiff engine, an average-velocity MLP,
FM / MeanFlow objectives, guided one-step and multi-step samplers, a
trainer, two-sample metrics and a command line front end.
"""

from .autodiff import Value, grad, jvp, stop_gradient, value_and_grad
from .data import ToyDataset, make_dataset
from .network import VelocityModel, init_model, load_checkpoint, save_checkpoint
from .objectives import fm_loss, make_flow_batch, make_flow_sample, meanflow_loss, meanflow_target
from .sampling import GuidanceConfig, SamplerSpec, TimePairConfig, apply_guidance, one_step_sample
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Value", "grad", "jvp", "stop_gradient", "value_and_grad",
    "ToyDataset", "make_dataset",
    "VelocityModel", "init_model", "load_checkpoint", "save_checkpoint",
    "fm_loss", "make_flow_batch", "make_flow_sample", "meanflow_loss", "meanflow_target",
    "GuidanceConfig", "SamplerSpec", "TimePairConfig", "apply_guidance", "one_step_sample",
    "TrainConfig", "train",
]
