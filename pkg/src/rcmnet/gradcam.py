"""Grad-CAM: gradient-weighted class activation maps."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import netpbm
from . import tensor as T
from .data import resize_nearest
from .errors import ConfigError
from .tensor import Tensor

PathLike = Union[str, os.PathLike]


@dataclass
class GradCamResult:
    target_class: int
    layer: str
    alpha: np.ndarray  # one coefficient per channel of the hooked map
    cam: np.ndarray  # relu(sum_i alpha_i A_i), shape (h, w)
    activation: np.ndarray  # the hooked map A, shape (C, h, w)
    input_side: int

    @property
    def heatmap(self) -> np.ndarray:
        return heatmap_image(self.cam, self.input_side)


def compute_gradcam(model, image, target_class: int, layer_name: Optional[str] = None,
                    score: str = "logit") -> GradCamResult:
    """Class-evidence map of ``target_class`` at ``layer_name`` for one image.

    ``score`` selects the differentiated quantity: the pre-softmax logit
    (default) or the softmax probability. The model is run in eval mode and
    none of its parameters or statistics change. ``model`` needs ``run(x,
    start=, stop=)``, ``num_classes`` and ``eval``/``train``.
    """
    if score not in ("logit", "probability"):
        raise ConfigError(f"score must be 'logit' or 'probability', got {score!r}")
    if not 0 <= target_class < model.num_classes:
        raise ConfigError(f"class {target_class} out of range for {model.num_classes} classes")
    if layer_name is None:
        layer_name = getattr(model, "default_cam_layer", None)
    if hasattr(model, "resolve_stage"):
        layer_name = model.resolve_stage(layer_name)
    x = np.asarray(image.data if isinstance(image, Tensor) else image)
    if x.ndim == 3:
        x = x[None]
    was_training = getattr(model, "training", False)
    model.eval()
    try:
        with T.no_grad():
            a = model.run(Tensor(x), stop=layer_name).data
        if a.ndim != 4:
            raise ConfigError(f"layer {layer_name!r} output has shape {a.shape}, expected a 4-D feature map")
        act = Tensor(a.copy(), requires_grad=True)
        out = model.run(act, start=layer_name)
        if score == "probability":
            out = T.softmax(out, axis=1)
        pick = np.zeros(out.shape, dtype=out.dtype)
        pick[0, target_class] = 1.0
        s_c = (out * pick).sum()
        T.backward(s_c, inputs=[act])
        grad = act.grad[0]
    finally:
        model.train(was_training)
    alpha = grad.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(alpha, a[0], axes=1), 0.0)
    return GradCamResult(int(target_class), layer_name, alpha, cam, a[0], int(x.shape[-1]))


def normalize_cam(cam: np.ndarray) -> np.ndarray:
    """Min-max to uint8; an all-zero map stays zero and a constant positive map becomes 255."""
    cam = np.asarray(cam, dtype=np.float64)
    hi, lo = cam.max(), cam.min()
    if hi <= 0:
        return np.zeros(cam.shape, dtype=np.uint8)
    if hi == lo:
        return np.full(cam.shape, 255, dtype=np.uint8)
    return np.floor((cam - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8)


def heatmap_image(cam: np.ndarray, side: int) -> np.ndarray:
    return resize_nearest(normalize_cam(cam)[None], side)[0]


def export_heatmap(result: GradCamResult, path: PathLike, input_side: Optional[int] = None) -> None:
    """Write the normalised, upsampled map as a binary P5 file."""
    side = result.input_side if input_side is None else input_side
    netpbm.write(path, heatmap_image(result.cam, side))
