"""Reverse-mode autodiff and the two U-Nets."""
from . import autodiff
from .autodiff import Var, backward, param
from .models import (
    Checkpoint,
    ImgNet,
    SinoNet,
    UNetConfig,
    imgnet_config,
    init_params,
    load_model,
    param_shapes,
    save_model,
    sinonet_config,
)

__all__ = [
    "Checkpoint", "ImgNet", "SinoNet", "UNetConfig", "Var", "autodiff", "backward",
    "imgnet_config", "init_params", "load_model", "param", "param_shapes", "save_model",
    "sinonet_config",
]
