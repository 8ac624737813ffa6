"""Relevance maps, rule configuration and conservation reports, plus JSON I/O."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import RuleConfigError

EPSILON = "epsilon"
ALPHABETA = "alphabeta"
SA = "SA"


@dataclass(frozen=True)
class RuleConfig:
    """LRP rule choice.

    ``epsilon`` stabilizes the epsilon rule; ``alpha``/``beta`` weight the
    positive/negative parts of the alpha-beta rule and must satisfy
    ``alpha - beta == 1``.
    """

    rule: str = EPSILON
    epsilon: float = 0.0
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if self.rule == EPSILON:
            if not self.epsilon >= 0:
                raise RuleConfigError(f"epsilon must be non-negative, got {self.epsilon}")
        elif self.rule == ALPHABETA:
            if not (self.alpha >= 1 and self.beta >= 0):
                raise RuleConfigError(f"need alpha >= 1 and beta >= 0, got alpha={self.alpha}, beta={self.beta}")
            if self.alpha - self.beta != 1:
                raise RuleConfigError(
                    f"alpha - beta must equal 1 exactly, got alpha={self.alpha}, beta={self.beta}"
                )
        else:
            raise RuleConfigError(f"unknown rule {self.rule!r}")

    @classmethod
    def eps(cls, epsilon: float = 0.0) -> "RuleConfig":
        return cls(EPSILON, epsilon=float(epsilon))

    @classmethod
    def alphabeta(cls, alpha: float = 1.0, beta: float | None = None) -> "RuleConfig":
        alpha = float(alpha)
        return cls(ALPHABETA, alpha=alpha, beta=alpha - 1.0 if beta is None else float(beta))

    def to_dict(self) -> dict:
        if self.rule == EPSILON:
            return {"rule": EPSILON, "epsilon": self.epsilon}
        return {"rule": ALPHABETA, "alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_dict(cls, d: dict) -> "RuleConfig":
        if d["rule"] == EPSILON:
            return cls.eps(d.get("epsilon", 0.0))
        return cls.alphabeta(d["alpha"], d.get("beta"))


@dataclass
class ConservationReport:
    """Relevance bookkeeping for one explanation.

    ``layer_sums`` run from the output layer down to the input. ``layer_gaps``
    holds, for the same positions, the cumulative relevance removed so far by
    bias absorption, the epsilon stabilizer and zero-denominator drops, so
    ``layer_sums[i] + layer_gaps[i]`` should equal ``f_value``.
    """

    layer_sums: list[float]
    f_value: float
    bias_absorbed: float = 0.0
    epsilon_leaked: float = 0.0
    unassigned: float = 0.0
    layer_gaps: list[float] = field(default_factory=list)
    # filled in by the audit
    max_abs_deviation: float | None = None
    max_rel_deviation: float | None = None
    unaccounted: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ConservationReport":
        return cls(**d)


@dataclass
class RelevanceMap:
    """Relevance scores over the explained input.

    ``rule`` is a :class:`RuleConfig` for LRP maps and the string ``"SA"`` for
    sensitivity maps. ``domain`` is ``"input"`` or ``"embedding"`` (relevance
    stopped at embedding outputs). ``layer_relevances`` keeps the relevance
    tensor at every layer boundary, output first, for auditing.
    """

    values: np.ndarray
    target_class: int
    rule: RuleConfig | str
    conservation: ConservationReport | None = None
    layer_relevances: list[np.ndarray] | None = None
    domain: str = "input"
    metadata: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def is_sa(self) -> bool:
        return self.rule == SA

    def with_values(self, values: np.ndarray, **changes) -> "RelevanceMap":
        return replace(self, values=np.asarray(values, dtype=np.float64), **changes)

    def to_dict(self, include_layers: bool = True) -> dict:
        d = {
            "shape": list(self.values.shape),
            "values": self.values.reshape(-1).tolist(),
            "target_class": int(self.target_class),
            "rule": self.rule if isinstance(self.rule, str) else self.rule.to_dict(),
            "domain": self.domain,
            "conserving": isinstance(self.rule, RuleConfig),
            "conservation": None if self.conservation is None else self.conservation.to_dict(),
            "metadata": self.metadata,
        }
        if include_layers and self.layer_relevances is not None:
            d["layer_relevances"] = [
                {"shape": list(r.shape), "values": r.reshape(-1).tolist()} for r in self.layer_relevances
            ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RelevanceMap":
        values = np.asarray(d["values"], dtype=np.float64).reshape(d["shape"])
        rule = d["rule"] if isinstance(d["rule"], str) else RuleConfig.from_dict(d["rule"])
        layers = d.get("layer_relevances")
        if layers is not None:
            layers = [np.asarray(r["values"], dtype=np.float64).reshape(r["shape"]) for r in layers]
        cons = d.get("conservation")
        return cls(
            values=values,
            target_class=int(d["target_class"]),
            rule=rule,
            conservation=None if cons is None else ConservationReport.from_dict(cons),
            layer_relevances=layers,
            domain=d.get("domain", "input"),
            metadata=d.get("metadata", {}),
        )


def dumps(rmap: RelevanceMap) -> str:
    return json.dumps(rmap.to_dict(), indent=1) + "\n"


def save_relevance(rmap: RelevanceMap, path) -> None:
    Path(path).write_text(dumps(rmap), encoding="utf-8")


def load_relevance(path) -> RelevanceMap:
    return RelevanceMap.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
