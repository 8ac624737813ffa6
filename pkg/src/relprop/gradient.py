"""Sensitivity analysis: exact input gradients of a logit, and a finite-difference oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import RelpropError, ShapeError
from .model import AvgPool, Conv, Dense, Embedding, Flatten, ForwardTrace, MaxPool, Model, ReLU, forward
from .relevance import SA, RelevanceMap

ABS = "abs"
L2_OVER_CHANNELS = "l2_over_channels"


@dataclass
class GradientMap:
    """Signed partial derivatives of logit ``target_class``.

    ``domain`` is ``"embedding"`` when the gradient is taken with respect to
    the embedding outputs (token ids are not differentiable).
    """

    values: np.ndarray
    target_class: int
    domain: str = "input"


def check_trace(model: Model, trace: ForwardTrace) -> None:
    if len(trace.outputs) != len(model.layers):
        raise ShapeError(f"trace has {len(trace.outputs)} layers, model has {len(model.layers)}")
    for i in range(trace.start, len(model.layers)):
        if trace.inputs[i].shape != model.shapes[i] or trace.outputs[i].shape != model.shapes[i + 1]:
            raise ShapeError(f"stale trace: layer {i} shapes do not match the model")


def layer_backward(layer, x: np.ndarray, aux, g: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of one layer at recorded input ``x``."""
    if isinstance(layer, Dense):
        return nx.linear_sum_transpose(g, layer.weights)
    if isinstance(layer, Conv):
        s = layer.spec
        return nx.conv_linear_transpose(g, s.kernel, s.stride, s.padding, x.shape)
    if isinstance(layer, AvgPool):
        kernel = nx.avg_pool_kernel(x.shape[0], layer.window)
        return nx.conv_linear_transpose(g, kernel, layer.stride, (0, 0), x.shape)
    if isinstance(layer, MaxPool):
        idx = nx.argmax_to_input_index(aux, x.shape, layer.window, layer.stride)
        out = np.zeros(x.size)
        np.add.at(out, idx.reshape(-1), g.reshape(-1))
        return out.reshape(x.shape)
    if isinstance(layer, ReLU):
        # derivative at exactly 0 is 0
        return np.where(x > 0, g, 0.0)
    if isinstance(layer, Flatten):
        return g.reshape(x.shape)
    raise RelpropError(f"no gradient rule for layer {layer!r}")


def backward_gradient(model: Model, trace: ForwardTrace, target_class: int | None = None) -> GradientMap:
    """Reverse-mode gradient of logit ``target_class`` (default: predicted class)."""
    check_trace(model, trace)
    c = trace.predicted_class if target_class is None else int(target_class)
    if not 0 <= c < model.n_classes:
        raise ValueError(f"target class {c} out of range for {model.n_classes} classes")
    g = np.zeros(model.n_classes)
    g[c] = 1.0
    domain = "input"
    for i in range(len(model.layers) - 1, trace.start - 1, -1):
        layer = model.layers[i]
        if isinstance(layer, Embedding):
            domain = "embedding"
            break
        g = layer_backward(layer, trace.inputs[i], trace.aux[i], g)
    return GradientMap(g, c, domain)


def finite_difference_gradient(
    model: Model, x, target_class: int, h: float = 1e-4, start: int = 0
) -> GradientMap:
    """Central differences ``(f_c(x + h e_i) - f_c(x - h e_i)) / 2h``.

    Disagrees with :func:`backward_gradient` when ``x +- h e_i`` straddles a
    ReLU kink or a max-pool tie; callers should sample inputs away from those.
    Pass ``start=1`` with an embedding-output tensor for embedding models.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    x = nx.as_tensor(x)
    flat = x.reshape(-1)
    grad = np.empty(flat.size)
    for i in range(flat.size):
        up = flat.copy()
        down = flat.copy()
        up[i] += h
        down[i] -= h
        f_up = forward(model, up.reshape(x.shape), start).logits[target_class]
        f_down = forward(model, down.reshape(x.shape), start).logits[target_class]
        grad[i] = (f_up - f_down) / (2 * h)
    return GradientMap(grad.reshape(x.shape), target_class, "embedding" if start > 0 else "input")


def default_channel_norm(shape) -> str:
    return L2_OVER_CHANNELS if len(shape) == 3 else ABS


def sensitivity_map(grad: GradientMap, channel_norm: str | None = None) -> RelevanceMap:
    """``R_i = ||df/dx_i||``: per-scalar absolute value, or per-pixel L2 over channels."""
    g = grad.values
    mode = channel_norm or default_channel_norm(g.shape)
    if mode == ABS:
        values = np.abs(g)
    elif mode == L2_OVER_CHANNELS:
        if g.ndim != 3:
            raise ShapeError(f"l2_over_channels needs a c x h x w gradient, got shape {g.shape}")
        values = np.sqrt(np.sum(g * g, axis=0))
    else:
        raise ValueError(f"unknown channel norm {mode!r}")
    return RelevanceMap(
        values=values,
        target_class=grad.target_class,
        rule=SA,
        domain=grad.domain,
        metadata={"sa_channel_norm": mode},
    )


def explain_sa(model: Model, x, target_class: int | None = None, channel_norm: str | None = None) -> RelevanceMap:
    trace = forward(model, x)
    return sensitivity_map(backward_gradient(model, trace, target_class), channel_norm)
