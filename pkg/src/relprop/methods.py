"""Named explanation methods used by the evaluation harness and the CLI."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradient import ABS, backward_gradient, sensitivity_map
from .lrp import lrp_explain, token_relevance
from .model import Model, forward
from .prng import Xoshiro256
from .relevance import SA, RelevanceMap, RuleConfig

METHOD_NAMES = ("sa", "lrp-eps", "lrp-ab", "random")


@dataclass(frozen=True)
class Method:
    name: str
    epsilon: float = 0.01
    alpha: float = 1.0
    beta: float | None = None
    channel_norm: str | None = None

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ValueError(f"unknown method {self.name!r}; choose from {', '.join(METHOD_NAMES)}")
        self.rule()  # validate alpha/beta/epsilon early

    @property
    def label(self) -> str:
        return self.name

    def rule(self) -> RuleConfig | None:
        if self.name == "lrp-eps":
            return RuleConfig.eps(self.epsilon)
        if self.name == "lrp-ab":
            return RuleConfig.alphabeta(self.alpha, self.beta)
        return None

    def to_dict(self) -> dict:
        d = {"name": self.name}
        rule = self.rule()
        if rule is not None:
            d.update(rule.to_dict())
        if self.name == "sa" and self.channel_norm:
            d["channel_norm"] = self.channel_norm
        return d


def explain(model: Model, x, method: Method, target_class: int | None = None,
            seed: int = 0, sample_id: int = 0) -> RelevanceMap:
    """Relevance map for ``x`` under ``method`` (``random`` is a seeded baseline)."""
    trace = forward(model, x)
    c = trace.predicted_class if target_class is None else int(target_class)
    if method.name == "sa":
        return sensitivity_map(backward_gradient(model, trace, c), method.channel_norm)
    if method.name == "random":
        rng = Xoshiro256.substream(seed, "random-ranking", sample_id)
        shape = np.shape(x)
        values = rng.uniform(0.0, 1.0, int(np.prod(shape))).reshape(shape)
        return RelevanceMap(values, c, "random", metadata={"seed": seed, "sample_id": sample_id})
    return lrp_explain(model, trace, c, method.rule())


def input_level(rmap: RelevanceMap, model: Model) -> RelevanceMap:
    """Collapse embedding-level maps to one score per token; other maps pass through."""
    if rmap.domain != "embedding":
        return rmap
    return rmap.with_values(token_relevance(rmap, model), domain="tokens")


def ranking_map(model: Model, x, method: Method, *, zero_mode: bool,
                seed: int = 0, sample_id: int = 0) -> RelevanceMap:
    """Map at the granularity perturbations act on.

    For scalar deletion of multi-channel inputs, SA falls back to per-scalar
    ``abs`` so every input variable gets its own score.
    """
    if method.name == "sa" and zero_mode and np.ndim(x) == 3 and method.channel_norm is None:
        method = Method("sa", channel_norm=ABS)
    rmap = explain(model, x, method, seed=seed, sample_id=sample_id)
    return input_level(rmap, model) if rmap.rule != "random" else rmap


__all__ = ["Method", "METHOD_NAMES", "explain", "input_level", "ranking_map", "SA"]
