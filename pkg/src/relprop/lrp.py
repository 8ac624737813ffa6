"""Layer-wise relevance propagation.

The explained logit ``f_c(x)`` is placed on output neuron ``c`` and pushed back
layer by layer. Linear layers (Dense, Conv and AvgPool, the latter two as
their equivalent linear maps) use the configured rule:

epsilon rule
    ``R_j = sum_k x_j w_jk / (z_k + eps * sign(z_k)) * R_k`` with
    ``z_k = sum_j x_j w_jk + b_k`` and ``sign(0) = +1``.
alpha-beta rule
    ``R_j = sum_k (alpha * (x_j w_jk)+ / sum_j (x_j w_jk)+
    - beta * (x_j w_jk)- / sum_j (x_j w_jk)-) * R_k``; positive/negative bias
    parts join the matching denominator, and a term whose denominator is zero
    is dropped.

ReLU passes relevance unchanged, max-pool sends it to the recorded winner and
Flatten reshapes. Relevance held by biases, the stabilizer or dropped terms is
tallied in the :class:`ConservationReport` instead of disappearing silently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .errors import AuditRefused, RelpropError, ShapeError
from .gradient import check_trace
from .model import AvgPool, Conv, Dense, Embedding, Flatten, ForwardTrace, MaxPool, Model, ReLU, forward
from .relevance import ALPHABETA, ConservationReport, RelevanceMap, RuleConfig


@dataclass
class _Leaks:
    bias: float = 0.0
    epsilon: float = 0.0
    unassigned: float = 0.0

    @property
    def total(self) -> float:
        return self.bias + self.epsilon + self.unassigned


@dataclass(frozen=True)
class _LinearOp:
    """A bias-free linear map ``z = apply(x, W)`` and its adjoint."""

    weights: np.ndarray
    bias: np.ndarray
    apply: Callable[[np.ndarray, np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray, np.ndarray], np.ndarray]


def _dense_op(weights, bias) -> _LinearOp:
    return _LinearOp(nx.as_tensor(weights), nx.as_tensor(bias), nx.linear_sum, nx.linear_sum_transpose)


def _conv_op(kernel, bias, stride, padding, in_shape, out_shape) -> _LinearOp:
    out_hw = out_shape[1:]
    return _LinearOp(
        kernel,
        bias[:, None, None] if bias.ndim == 1 else bias,
        lambda x, w: nx.conv_linear(x, w, stride, padding, out_hw),
        lambda s, w: nx.conv_linear_transpose(s, w, stride, padding, in_shape),
    )


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ok = den != 0
    return np.where(ok, num / np.where(ok, den, 1.0), 0.0), ok


def _epsilon_rule(x, r_out, op: _LinearOp, epsilon: float) -> tuple[np.ndarray, _Leaks]:
    bias = np.broadcast_to(op.bias, r_out.shape)
    z = op.apply(x, op.weights) + bias
    stab = epsilon * np.where(z >= 0, 1.0, -1.0)
    s, ok = _safe_ratio(r_out, z + stab)
    r_in = x * op.adjoint(s, op.weights)
    leaks = _Leaks(
        bias=float(np.sum(s * bias)),
        epsilon=float(np.sum(s * stab)),
        unassigned=float(np.sum(np.where(ok, 0.0, r_out))),
    )
    return r_in, leaks


def _alphabeta_rule(x, r_out, op: _LinearOp, alpha: float, beta: float) -> tuple[np.ndarray, _Leaks]:
    xp, xn = np.maximum(x, 0.0), np.minimum(x, 0.0)
    wp, wn = np.maximum(op.weights, 0.0), np.minimum(op.weights, 0.0)
    bias = np.broadcast_to(op.bias, r_out.shape)
    bp, bn = np.maximum(bias, 0.0), np.minimum(bias, 0.0)
    # (x w)+ = x+ w+ + x- w-,  (x w)- = x+ w- + x- w+
    pos = op.apply(xp, wp) + op.apply(xn, wn) + bp
    neg = op.apply(xp, wn) + op.apply(xn, wp) + bn
    sp, okp = _safe_ratio(alpha * r_out, pos)
    r_in = xp * op.adjoint(sp, wp) + xn * op.adjoint(sp, wn)
    bias_share = float(np.sum(sp * bp))
    unassigned = float(np.sum(np.where(okp, 0.0, alpha * r_out)))
    if beta != 0:
        sn, okn = _safe_ratio(beta * r_out, neg)
        r_in = r_in - (xp * op.adjoint(sn, wn) + xn * op.adjoint(sn, wp))
        bias_share -= float(np.sum(sn * bn))
        unassigned -= float(np.sum(np.where(okn, 0.0, beta * r_out)))
    return r_in, _Leaks(bias=bias_share, unassigned=unassigned)


def _apply_rule(x, r_out, op: _LinearOp, config: RuleConfig) -> tuple[np.ndarray, _Leaks]:
    if config.rule == ALPHABETA:
        return _alphabeta_rule(x, r_out, op, config.alpha, config.beta)
    return _epsilon_rule(x, r_out, op, config.epsilon)


def _check_dense(x, weights, bias, r_out):
    x, weights, bias, r_out = (nx.as_tensor(a) for a in (x, weights, bias, r_out))
    n, m = weights.shape
    if x.shape != (n,) or bias.shape != (m,) or r_out.shape != (m,):
        raise ShapeError(
            f"shape mismatch: x{x.shape}, W{weights.shape}, b{bias.shape}, R{r_out.shape}"
        )
    return x, weights, bias, r_out


def lrp_epsilon_layer(x, weights, bias, r_out, epsilon: float = 0.0) -> np.ndarray:
    """Epsilon rule through one dense layer; ``weights`` is ``(n_in, n_out)``."""
    x, weights, bias, r_out = _check_dense(x, weights, bias, r_out)
    return _epsilon_rule(x, r_out, _dense_op(weights, bias), float(epsilon))[0]


def lrp_alphabeta_layer(x, weights, bias, r_out, alpha: float = 1.0, beta: float = 0.0) -> np.ndarray:
    """Alpha-beta rule through one dense layer. Requires ``alpha - beta == 1``."""
    config = RuleConfig.alphabeta(alpha, beta)  # validates the constraint
    x, weights, bias, r_out = _check_dense(x, weights, bias, r_out)
    return _alphabeta_rule(x, r_out, _dense_op(weights, bias), config.alpha, config.beta)[0]


def _layer_relevance(layer, x, out, aux, r_out, config) -> tuple[np.ndarray, _Leaks]:
    if isinstance(layer, Dense):
        return _apply_rule(x, r_out, _dense_op(layer.weights, layer.bias), config)
    if isinstance(layer, Conv):
        s = layer.spec
        return _apply_rule(x, r_out, _conv_op(s.kernel, s.bias, s.stride, s.padding, x.shape, out.shape), config)
    if isinstance(layer, AvgPool):
        kernel = nx.avg_pool_kernel(x.shape[0], layer.window)
        op = _conv_op(kernel, np.zeros(x.shape[0]), layer.stride, (0, 0), x.shape, out.shape)
        return _apply_rule(x, r_out, op, config)
    if isinstance(layer, MaxPool):
        idx = nx.argmax_to_input_index(aux, x.shape, layer.window, layer.stride)
        r_in = np.zeros(x.size)
        np.add.at(r_in, idx.reshape(-1), r_out.reshape(-1))
        return r_in.reshape(x.shape), _Leaks()
    if isinstance(layer, ReLU):
        return r_out, _Leaks()
    if isinstance(layer, Flatten):
        return r_out.reshape(x.shape), _Leaks()
    raise RelpropError(f"LRP does not support layer {layer!r}")


def lrp_explain(
    model: Model, trace: ForwardTrace, target_class: int | None = None, config: RuleConfig | None = None
) -> RelevanceMap:
    """Propagate logit ``target_class`` (default: predicted) back to the input.

    For models starting with an Embedding layer the result lives on the
    embedding outputs (``domain="embedding"``); use :func:`token_relevance`
    for per-token scores.
    """
    check_trace(model, trace)
    config = config or RuleConfig()
    c = trace.predicted_class if target_class is None else int(target_class)
    if not 0 <= c < model.n_classes:
        raise ValueError(f"target class {c} out of range for {model.n_classes} classes")
    f_value = float(trace.logits[c])
    r = np.zeros(model.n_classes)
    r[c] = f_value

    relevances = [r]
    sums = [float(np.sum(r))]
    gaps = [0.0]
    total = _Leaks()
    domain = "input"
    for i in range(len(model.layers) - 1, trace.start - 1, -1):
        layer = model.layers[i]
        if isinstance(layer, Embedding):
            domain = "embedding"
            break
        r, leaks = _layer_relevance(layer, trace.inputs[i], trace.outputs[i], trace.aux[i], r, config)
        total.bias += leaks.bias
        total.epsilon += leaks.epsilon
        total.unassigned += leaks.unassigned
        relevances.append(r)
        sums.append(float(np.sum(r)))
        gaps.append(total.total)

    report = ConservationReport(
        layer_sums=sums,
        f_value=f_value,
        bias_absorbed=total.bias,
        epsilon_leaked=total.epsilon,
        unassigned=total.unassigned,
        layer_gaps=gaps,
    )
    return RelevanceMap(
        values=r,
        target_class=c,
        rule=config,
        conservation=report,
        layer_relevances=relevances,
        domain=domain,
    )


def explain_lrp(model: Model, x, target_class: int | None = None, config: RuleConfig | None = None) -> RelevanceMap:
    return lrp_explain(model, forward(model, x), target_class, config)


def conservation_audit(rmap: RelevanceMap) -> ConservationReport:
    """Recompute every per-layer relevance sum with ``math.fsum`` and compare to f(x).

    ``max_abs_deviation``/``max_rel_deviation`` measure ``|sum - f|`` over all
    layers; ``unaccounted`` is the largest deviation left after subtracting the
    recorded bias, stabilizer and dropped-term shares.
    """
    if rmap.is_sa:
        raise AuditRefused("sensitivity maps explain a variation of f(x), not f(x) itself; nothing to conserve")
    if rmap.conservation is None or rmap.layer_relevances is None:
        raise AuditRefused("relevance map carries no per-layer record")
    rep = rmap.conservation
    f = rep.f_value
    sums = [math.fsum(r.reshape(-1).tolist()) for r in rmap.layer_relevances]
    gaps = rep.layer_gaps or [0.0] * len(sums)
    abs_dev = max(abs(s - f) for s in sums)
    unaccounted = max(abs(s + g - f) for s, g in zip(sums, gaps))
    scale = abs(f) if f != 0 else 1.0
    return ConservationReport(
        layer_sums=sums,
        f_value=f,
        bias_absorbed=rep.bias_absorbed,
        epsilon_leaked=rep.epsilon_leaked,
        unassigned=rep.unassigned,
        layer_gaps=list(gaps),
        max_abs_deviation=abs_dev,
        max_rel_deviation=abs_dev / scale,
        unaccounted=unaccounted,
    )


def aggregate_groups(rmap: RelevanceMap | np.ndarray, groups: Sequence[Sequence[int]]) -> np.ndarray:
    """Signed relevance sum per group; ``groups`` must partition the flat index set."""
    values = rmap.values if isinstance(rmap, RelevanceMap) else np.asarray(rmap, dtype=np.float64)
    flat = values.reshape(-1)
    seen = np.zeros(flat.size, dtype=bool)
    out = np.empty(len(groups))
    for g, members in enumerate(groups):
        idx = np.asarray(list(members), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= flat.size):
            raise ValueError(f"group {g} has indices outside [0, {flat.size})")
        if np.any(seen[idx]) or np.unique(idx).size != idx.size:
            raise ValueError(f"group {g} overlaps another group")
        seen[idx] = True
        out[g] = math.fsum(flat[idx].tolist())
    if not seen.all():
        missing = np.flatnonzero(~seen)[:5].tolist()
        raise ValueError(f"groups do not cover every index (missing e.g. {missing})")
    return out


def token_groups(shape: tuple[int, ...], layout: str = "sequence") -> list[list[int]]:
    """Partition of embedding-output indices into one group per token."""
    if layout == "sequence":
        n_tokens, dim = shape
        return [list(range(t * dim, (t + 1) * dim)) for t in range(n_tokens)]
    dim, _, n_tokens = shape
    return [[d * n_tokens + t for d in range(dim)] for t in range(n_tokens)]


def token_relevance(rmap: RelevanceMap, model: Model) -> np.ndarray:
    """Per-token relevance for a map over an Embedding model's outputs.

    LRP maps are summed with sign per token. SA maps become the Euclidean norm
    of each token's embedding gradient; ``l2_over_channels`` SA maps of the
    ``channels`` layout already hold one such value per token.
    """
    emb = model.embedding
    if emb is None or rmap.domain != "embedding":
        raise ValueError("token relevance needs a map over Embedding outputs")
    emb_shape = model.shapes[1]
    if rmap.values.shape == emb_shape:
        groups = token_groups(emb_shape, emb.layout)
        if rmap.is_sa:
            return np.sqrt(aggregate_groups(rmap.values * rmap.values, groups))
        return aggregate_groups(rmap, groups)
    if rmap.values.size == emb_shape[-1]:
        return rmap.values.reshape(-1).copy()
    raise ShapeError(f"map shape {rmap.values.shape} does not match embedding output {emb_shape}")


def pixel_relevance(rmap: RelevanceMap) -> np.ndarray:
    """Rank-2 display map: channels summed with sign (LRP) or L2-normed (SA)."""
    v = rmap.values
    if v.ndim == 3:
        return np.sqrt(np.sum(v * v, axis=0)) if rmap.is_sa else np.sum(v, axis=0)
    if v.ndim == 2:
        return v
    if v.ndim == 1:
        return v.reshape(1, -1)
    raise ShapeError(f"cannot display a rank-{v.ndim} map")
