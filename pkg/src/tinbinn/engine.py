"""Fixed-point forward pass built from the accelerator kernel models.

Per convolution layer: every (output, input) map pair goes through the
strip-tiled dual-convolution instruction, the 16b partials are summed in
groups of 16 input maps and widened into 32b, and the 32b-to-8b activation
applies per-channel bias, shift, ReLU and saturation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fxcore import OverflowLog, Plane
from .model_io import Model
from .netgraph import LayerKind


def as_input_array(image, input_shape) -> np.ndarray:
    """Normalise an image to uint8 (C, H+2, W+2), the padded first-layer input.

    Accepts planes or an array at the network's input size (zero-padded here)
    or already carrying a 1-pixel border (camera crop).
    """
    if isinstance(image, (list, tuple)):
        image = np.stack([p.data if isinstance(p, Plane) else np.asarray(p) for p in image])
    x = np.asarray(image)
    c, h, w = input_shape
    if x.shape == (c, h, w):
        return np.pad(x.astype(np.uint8), ((0, 0), (1, 1), (1, 1)))
    if x.shape == (c, h + 2, w + 2):
        return x.astype(np.uint8)
    raise ValueError(f"image shape {x.shape} matches neither {(c, h, w)} nor the padded {(c, h + 2, w + 2)}")


def pad_same(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (1, 1), (1, 1)))


@dataclass
class ForwardResult:
    scores: np.ndarray
    trace: list[np.ndarray] = field(default_factory=list)  # output of every expanded layer
    timings: list[tuple[str, float]] = field(default_factory=list)

    @property
    def label(self) -> int:
        return kernels.argmax_label(self.scores)


def conv_relu_layer(x_padded: np.ndarray, params, overflow: OverflowLog | None = None, where: str = "conv") -> np.ndarray:
    partials = kernels.conv_layer(x_padded, params.weights)
    acc = kernels.accumulate_array(partials, kernels.DEFAULT_GROUP, axis=1, overflow=overflow, where=where)
    return kernels.activate_array(acc, params.biases, params.shifts)


def forward(model: Model, image, overflow: OverflowLog | None = None, keep_trace: bool = True) -> ForwardResult:
    x = as_input_array(image, model.spec.input_shape)
    padded = True
    result = ForwardResult(scores=np.zeros(0, dtype=np.int32))
    for i, layer, _, params in model.weighted():
        t0 = time.perf_counter()
        if layer.kind is LayerKind.CONV3:
            x = conv_relu_layer(x if padded else pad_same(x), params, overflow, where=f"layer {i + 1}")
        elif layer.kind is LayerKind.MAXPOOL2:
            x = kernels.maxpool_array(x[:, 1:-1, 1:-1] if padded else x)
        elif layer.kind is LayerKind.DENSE:
            flat = (x[:, 1:-1, 1:-1] if padded else x).reshape(-1)
            sums = kernels.dense_sums(flat, params.weights, params.fan_in)
            x = kernels.activate_array(sums, params.biases, params.shifts)[:, None, None]
        else:
            flat = (x[:, 1:-1, 1:-1] if padded else x).reshape(-1)
            x = kernels.svm_array(flat, params.weights, params.fan_in, params.biases)
            result.scores = x
        padded = False
        result.timings.append((layer.kind.value, time.perf_counter() - t0))
        if keep_trace:
            result.trace.append(x)
    return result


def classify(model: Model, image) -> tuple[np.ndarray, int]:
    res = forward(model, image, keep_trace=False)
    return res.scores, res.label
