"""Random network and input generators shared by the property and acceptance tests."""
from __future__ import annotations

import numpy as np

from relprop.model import AvgPool, Conv, Dense, Flatten, MaxPool, Model, ReLU, forward


def _dense(rng, n_in, n_out, bias):
    w = rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, n_out))
    b = rng.normal(0.0, 0.1, n_out) if bias else np.zeros(n_out)
    return Dense(w, b)


def dense_relu_net(rng, n_dense=None, bias=False, max_width=32) -> Model:
    """Dense/ReLU chain with ``n_dense`` Dense layers (2 to 5 by default)."""
    n_dense = n_dense or int(rng.integers(2, 6))
    widths = [int(rng.integers(2, max_width + 1)) for _ in range(n_dense)] + [int(rng.integers(2, 6))]
    layers = []
    for i in range(n_dense):
        layers.append(_dense(rng, widths[i], widths[i + 1], bias))
        if i < n_dense - 1:
            layers.append(ReLU())
    return Model((widths[0],), layers, [f"c{i}" for i in range(widths[-1])])


def avgpool_net(rng, bias=False, max_width=32) -> Model:
    """c x h x w input -> AvgPool -> [ReLU] -> Flatten -> Dense/ReLU chain."""
    c = int(rng.integers(1, 3))
    h, w = int(rng.integers(2, 5)) * 2, int(rng.integers(2, 5)) * 2
    layers = [AvgPool((2, 2))]
    if rng.random() < 0.5:
        layers.append(ReLU())
    layers.append(Flatten())
    n = c * (h // 2) * (w // 2)
    n_dense = int(rng.integers(1, 4))
    widths = [n] + [int(rng.integers(2, max_width + 1)) for _ in range(n_dense - 1)] + [int(rng.integers(2, 5))]
    for i in range(n_dense):
        layers.append(_dense(rng, widths[i], widths[i + 1], bias))
        if i < n_dense - 1:
            layers.append(ReLU())
    return Model((c, h, w), layers, [f"c{i}" for i in range(widths[-1])])


def conv_net(rng, bias=True) -> Model:
    """Conv -> ReLU -> Max/AvgPool -> Flatten -> Dense [-> ReLU -> Dense]."""
    c = int(rng.integers(1, 3))
    h, w = int(rng.integers(5, 9)), int(rng.integers(5, 9))
    o = int(rng.integers(1, 4))
    k = int(rng.integers(2, 4))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    kernel = rng.normal(0.0, 1.0 / np.sqrt(c * k * k), (o, c, k, k))
    conv = Conv(kernel, rng.normal(0, 0.1, o) if bias else np.zeros(o), stride, pad)
    _, oh, ow = conv.output_shape((c, h, w))
    layers = [conv, ReLU()]
    if min(oh, ow) >= 2:
        layers.append(MaxPool((2, 2), (1, 1)) if rng.random() < 0.5 else AvgPool((2, 2)))
    shape = (c, h, w)
    for layer in layers:
        shape = layer.output_shape(shape)
    layers.append(Flatten())
    n = int(np.prod(shape))
    n_out = int(rng.integers(2, 5))
    if rng.random() < 0.5:
        hidden = int(rng.integers(2, 17))
        layers += [_dense(rng, n, hidden, bias), ReLU(), _dense(rng, hidden, n_out, bias)]
    else:
        layers.append(_dense(rng, n, n_out, bias))
    return Model((c, h, w), layers, [f"c{i}" for i in range(n_out)])


def random_supported_net(rng, bias=True) -> Model:
    kind = rng.integers(0, 3)
    if kind == 0:
        return dense_relu_net(rng, bias=bias)
    if kind == 1:
        return avgpool_net(rng, bias=bias)
    return conv_net(rng, bias=bias)


def kink_margin(model: Model, x) -> float:
    """Smallest distance of any ReLU input from 0 or any max-pool winner from its runner-up."""
    trace = forward(model, x)
    margin = np.inf
    for i, layer in enumerate(model.layers):
        xin = np.asarray(trace.inputs[i])
        if isinstance(layer, ReLU):
            margin = min(margin, float(np.min(np.abs(xin))))
        elif isinstance(layer, MaxPool):
            kh, kw = layer.window
            sh, sw = layer.stride
            _, oh, ow = trace.outputs[i].shape
            for p in range(oh):
                for q in range(ow):
                    win = np.sort(xin[:, p * sh : p * sh + kh, q * sw : q * sw + kw].reshape(xin.shape[0], -1), axis=1)
                    margin = min(margin, float(np.min(win[:, -1] - win[:, -2])))
    return margin


def kink_free_input(rng, model: Model, margin: float, tries: int = 200):
    for _ in range(tries):
        x = rng.normal(0.0, 1.0, model.input_shape)
        if kink_margin(model, x) > margin:
            return x
    return None


def has_both_denominators(model: Model, x) -> bool:
    """Every neuron of every linear layer sees a positive and a negative contribution."""
    trace = forward(model, x)
    for i, layer in enumerate(model.layers):
        xin = np.asarray(trace.inputs[i])
        if isinstance(layer, Dense):
            contrib = xin[:, None] * layer.weights
            if not (np.all((contrib > 0).any(axis=0)) and np.all((contrib < 0).any(axis=0))):
                return False
        elif isinstance(layer, AvgPool):
            kh, kw = layer.window
            c, h, w = xin.shape
            for p in range(0, h - kh + 1, layer.stride[0]):
                for q in range(0, w - kw + 1, layer.stride[1]):
                    win = xin[:, p : p + kh, q : q + kw].reshape(c, -1)
                    if not (np.all((win > 0).any(axis=1)) and np.all((win < 0).any(axis=1))):
                        return False
    return True


def alphabeta_case(rng, tries: int = 20):
    """Bias-free Dense/ReLU or avg-pool net plus an input where every neuron has
    both denominators nonzero; ``None`` if no such input turns up."""
    model = dense_relu_net(rng, bias=False) if rng.random() < 0.5 else avgpool_net(rng, bias=False)
    for _ in range(tries):
        x = rng.normal(0.0, 1.0, model.input_shape)
        if has_both_denominators(model, x):
            return model, x
    return None
