"""Scikit-learn style front door for the relighting network.

PortraitRelighter wraps dataset loading, training, persistence, and the
three inference modes (relight to a given light, estimate the light of a
photo, retarget a photo's own light by a rotation) behind the familiar
fit/predict surface. All heavy lifting lives in the functional modules;
this class only holds hyperparameters and fitted state.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .datasynth import TrainingPair
from .metrics import rmse
from .prnet import (
    PRNetConfig,
    forward,
    load_checkpoint,
    save_checkpoint,
    self_reconstruct,
)
from .training import MetricsReport, TrainConfig, evaluate, fit as fit_loop, load_pairs
from .validation import check_image, check_light, check_theta

_ESTIMATOR_META = "estimator.json"


class PortraitRelighter(BaseEstimator):
    """Single-image relighting model with a fit/predict interface.

    Parameters mirror the network and training configured elsewhere;
    ``config=None`` selects the default architecture. ``fit`` accepts a
    dataset directory, a manifest dict, or a list of training pairs.
    """

    def __init__(
        self,
        config: PRNetConfig | None = None,
        steps: int = 500,
        learning_rate: float = 1e-3,
        lambda_light: float = 0.8,
        lambda_self: float = 1.0,
        batch_size: int = 1,
        seed: int = 0,
        out_dir: str | None = None,
    ):
        self.config = config
        self.steps = steps
        self.learning_rate = learning_rate
        self.lambda_light = lambda_light
        self.lambda_self = lambda_self
        self.batch_size = batch_size
        self.seed = seed
        self.out_dir = out_dir

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            learning_rate=self.learning_rate,
            lambda_light=self.lambda_light,
            lambda_self=self.lambda_self,
            batch_size=self.batch_size,
            seed=self.seed,
        )

    def fit(self, X, y=None, resume_from: str | None = None):
        """Train on a pair dataset (directory, manifest dict, or pairs)."""
        config = self.config or PRNetConfig()
        params, history = fit_loop(
            X, config, self._train_config(), out_dir=self.out_dir, resume_from=resume_from
        )
        self.config_ = config
        self.params_ = params
        self.history_ = history
        return self

    def _pair_inputs(self, X) -> list[tuple[np.ndarray, np.ndarray]]:
        """Normalize predict inputs to (image, target_light) tuples."""
        if isinstance(X, (str, os.PathLike, dict)):
            X = load_pairs(X)
        out = []
        for item in X:
            if isinstance(item, TrainingPair):
                out.append((item.image_src, item.light_tgt))
            else:
                image, light = item
                out.append(
                    (
                        check_image(image, resolution=self.config_.resolution),
                        check_light(light, shape=self.config_.light_shape),
                    )
                )
        return out

    def predict(self, X) -> np.ndarray:
        """Relight each (image, target_light) input; returns (n, H, W, 3)."""
        check_is_fitted(self, "params_")
        items = self._pair_inputs(X)
        return np.stack(
            [forward(self.params_, self.config_, img, light).image for img, light in items]
        )

    def estimate_light(self, X) -> np.ndarray:
        """Predicted source light for each input image; returns (n, HL, WL, 3)."""
        check_is_fitted(self, "params_")
        if isinstance(X, (str, os.PathLike, dict)):
            X = load_pairs(X)
        lights = []
        for item in X:
            image = item.image_src if isinstance(item, TrainingPair) else check_image(
                item, resolution=self.config_.resolution
            )
            lights.append(self_reconstruct(self.params_, self.config_, image, 0.0).light)
        return np.stack(lights)

    def retarget(self, image: np.ndarray, theta_deg: float = 0.0):
        """Re-render one image under its own estimated light rotated by theta."""
        check_is_fitted(self, "params_")
        image = check_image(image, resolution=self.config_.resolution)
        return self_reconstruct(self.params_, self.config_, image, check_theta(theta_deg))

    def report(self, X) -> MetricsReport:
        """Full metric report (target, source, light) over a dataset."""
        check_is_fitted(self, "params_")
        return evaluate(X, self.params_, self.config_)

    def score(self, X, y=None) -> float:
        """Negative mean masked target RMSE (higher is better)."""
        check_is_fitted(self, "params_")
        pairs = load_pairs(X)
        values = []
        for pair in pairs:
            pred = forward(self.params_, self.config_, pair.image_src, pair.light_tgt).image
            values.append(rmse(pred, pair.image_tgt, pair.mask))
        return -float(np.mean(values))

    def save(self, directory: str | os.PathLike) -> None:
        check_is_fitted(self, "params_")
        save_checkpoint(directory, self.params_, self.config_, meta={"purpose": "estimator"})
        hyper = self.get_params()
        hyper["config"] = asdict(hyper["config"]) if hyper["config"] is not None else None
        with open(os.path.join(directory, _ESTIMATOR_META), "w") as f:
            json.dump(hyper, f, indent=1)

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "PortraitRelighter":
        params, config, _meta, _opt = load_checkpoint(directory)
        meta_path = os.path.join(directory, _ESTIMATOR_META)
        kwargs = {}
        if os.path.exists(meta_path):
            with open(meta_path) as f:
                kwargs = json.load(f)
            kwargs.pop("config", None)
        est = cls(config=config, **kwargs)
        est.config_ = config
        est.params_ = params
        est.history_ = []
        return est
