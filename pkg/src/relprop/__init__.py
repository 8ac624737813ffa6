"""Relevance propagation (LRP), sensitivity analysis and perturbation-based
evaluation for small feed-forward networks, in plain numpy."""

__version__ = "0.1.0"

from .errors import RelpropError
from .evaluate import PerturbationPlan, compare_methods, perturbation_curve
from .gradient import backward_gradient, finite_difference_gradient, sensitivity_map
from .lrp import aggregate_groups, conservation_audit, lrp_explain
from .methods import Method, explain
from .model import Model, forward, load_model, save_model
from .relevance import RelevanceMap, RuleConfig

__all__ = [
    "Method",
    "Model",
    "PerturbationPlan",
    "RelevanceMap",
    "RelpropError",
    "RuleConfig",
    "aggregate_groups",
    "backward_gradient",
    "compare_methods",
    "conservation_audit",
    "explain",
    "finite_difference_gradient",
    "forward",
    "load_model",
    "lrp_explain",
    "perturbation_curve",
    "save_model",
    "sensitivity_map",
]
