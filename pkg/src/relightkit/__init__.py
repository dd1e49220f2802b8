"""Desk-scale single-image portrait relighting.

The pieces, bottom up: a taped reverse-mode tensor core (`tensor`,
`layers`, `optim`, `gradcheck`), lat-long environment map math
(`envmap`), a spherical light stage with one-light-at-a-time rendering
(`lightstage`), training-pair synthesis (`datasynth`), the relighting
network (`prnet`), losses and metrics (`losses`, `metrics`), the
training and evaluation loops (`training`), a scikit-learn style wrapper
(`estimator`), PFM/PNG I/O (`pfm`), and the command line (`cli`).
"""

from .envmap import (
    direction_to_pixel,
    integrate,
    pixel_to_direction,
    resize_bilinear,
    rotate_longitude,
    solid_angle_map,
)
from .estimator import PortraitRelighter
from .gradcheck import grad_check, network_check, primitive_checks
from .lightstage import LightStage, OlatSet, SceneProxy, make_stage, relight
from .losses import compose_total, loss_image, loss_light
from .metrics import dssim, image_metrics, light_rmse_s, rmse, rmse_scaled
from .optim import AdamState, adam_step
from .pfm import export_png, read_pfm, write_pfm
from .prnet import PRNetConfig, PRNetParams, forward, init_params, self_reconstruct
from .tensor import NonFiniteError, Tape, Tensor, backward, set_finite_checks
from .training import MetricsReport, TrainConfig, evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "LightStage",
    "MetricsReport",
    "NonFiniteError",
    "OlatSet",
    "PRNetConfig",
    "PRNetParams",
    "PortraitRelighter",
    "SceneProxy",
    "Tape",
    "Tensor",
    "TrainConfig",
    "adam_step",
    "backward",
    "compose_total",
    "direction_to_pixel",
    "dssim",
    "evaluate",
    "export_png",
    "fit",
    "forward",
    "grad_check",
    "image_metrics",
    "init_params",
    "integrate",
    "light_rmse_s",
    "loss_image",
    "loss_light",
    "make_stage",
    "network_check",
    "pixel_to_direction",
    "primitive_checks",
    "read_pfm",
    "relight",
    "resize_bilinear",
    "rmse",
    "rmse_scaled",
    "rotate_longitude",
    "self_reconstruct",
    "set_finite_checks",
    "solid_angle_map",
    "write_pfm",
    "__version__",
]
