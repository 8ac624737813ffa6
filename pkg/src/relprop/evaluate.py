"""Explanation quality by perturbation: destroy the most relevant regions first
and track how fast the explained class's logit falls.

The tracked score is the pre-softmax logit of the class predicted on the
clean input, even if the argmax changes along the way. A steeper decline,
i.e. a smaller area under the mean relative-score curve, marks a better
explanation.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import SampleExcluded, ShapeError
from .methods import Method, ranking_map
from .model import Model, forward
from .prng import Xoshiro256
from .relevance import RelevanceMap

PATCH_UNIFORM = "patch"
ZERO_DELETE = "zero"
TRACKED_SCORE = "pre-softmax logit of the class predicted on the unperturbed input"


@dataclass(frozen=True)
class PerturbationPlan:
    mode: str = ZERO_DELETE
    steps: int = 10
    patch: tuple[int, int] = (9, 9)
    value_range: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (PATCH_UNIFORM, ZERO_DELETE):
            raise ValueError(f"unknown perturbation mode {self.mode!r}")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        ph, pw = (int(v) for v in self.patch)
        if ph < 1 or pw < 1:
            raise ValueError(f"patch must be positive, got {self.patch}")
        object.__setattr__(self, "patch", (ph, pw))
        if self.value_range is not None:
            lo, hi = (float(v) for v in self.value_range)
            if lo > hi:
                raise ValueError(f"value range low {lo} exceeds high {hi}")
            object.__setattr__(self, "value_range", (lo, hi))

    def check_input(self, shape: tuple[int, ...]) -> None:
        if self.mode != PATCH_UNIFORM:
            return
        if len(shape) != 3:
            raise ShapeError(f"patch perturbation needs a c x h x w input, got shape {tuple(shape)}")
        ph, pw = self.patch
        if ph > shape[1] or pw > shape[2]:
            raise ShapeError(f"patch {ph}x{pw} exceeds input {shape[1]}x{shape[2]}")

    def n_regions(self, shape: tuple[int, ...]) -> int:
        if self.mode == ZERO_DELETE:
            return int(np.prod(shape))
        ph, pw = self.patch
        return -(-shape[1] // ph) * -(-shape[2] // pw)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "steps": self.steps,
            "patch": list(self.patch) if self.mode == PATCH_UNIFORM else None,
            "value_range": None if self.value_range is None else list(self.value_range),
            "seed": self.seed,
        }


@dataclass
class PerturbationCurve:
    relative_scores: list[float]
    absolute_scores: list[float]
    ranking_source: str
    # whether the originally predicted class is still the argmax after each step
    still_predicted: list[bool] = field(default_factory=list)


def _descending(scores: np.ndarray) -> np.ndarray:
    # stable sort on the negation keeps ties in index order
    return np.argsort(-scores, kind="stable")


def rank_regions(rmap: RelevanceMap | np.ndarray, plan: PerturbationPlan, input_shape=None) -> list[np.ndarray]:
    """Regions as arrays of flat input indices, most relevant first.

    Patch mode tiles the ``h x w`` plane into non-overlapping ``ph x pw`` tiles
    (edge tiles are cut short when the size does not divide) and ranks them by
    summed relevance; every tile covers all channels. Zero mode ranks single
    variables.
    """
    values = rmap.values if isinstance(rmap, RelevanceMap) else np.asarray(rmap, dtype=np.float64)
    shape = tuple(input_shape) if input_shape is not None else values.shape
    if plan.mode == ZERO_DELETE:
        if values.size != int(np.prod(shape)):
            raise ShapeError(f"map of shape {values.shape} does not cover input of shape {shape}")
        return [np.array([i]) for i in _descending(values.reshape(-1))]

    plan.check_input(shape)
    c, h, w = shape
    if values.shape == (c, h, w):
        plane = np.sum(values, axis=0)
    elif values.shape == (h, w):
        plane = values
    else:
        raise ShapeError(f"map of shape {values.shape} does not match input {shape}")
    ph, pw = plan.patch
    tiles, sums = [], []
    for r0 in range(0, h, ph):
        for c0 in range(0, w, pw):
            rows = np.arange(r0, min(r0 + ph, h))
            cols = np.arange(c0, min(c0 + pw, w))
            pix = (rows[:, None] * w + cols[None, :]).reshape(-1)
            tiles.append((np.arange(c)[:, None] * (h * w) + pix[None, :]).reshape(-1))
            sums.append(math.fsum(plane[np.ix_(rows, cols)].reshape(-1).tolist()))
    return [tiles[i] for i in _descending(np.asarray(sums))]


def perturb_step(x, region, plan: PerturbationPlan, step_index: int, sample_id: int = 0) -> np.ndarray:
    """Copy of ``x`` with ``region`` destroyed.

    Uniform replacement values come from the xoshiro256** substream keyed by
    ``(plan.seed, sample_id, step_index)``.
    """
    out = nx.as_tensor(x).copy()
    flat = out.reshape(-1)
    region = np.asarray(region, dtype=np.int64)
    if plan.mode == ZERO_DELETE:
        flat[region] = 0.0
        return out
    if plan.value_range is None:
        raise ValueError("patch perturbation needs a value_range")
    lo, hi = plan.value_range
    rng = Xoshiro256.substream(plan.seed, "perturb", sample_id, step_index)
    flat[region] = rng.uniform(lo, hi, region.size)
    return out


def perturbation_curve(
    model: Model, x, rmap: RelevanceMap, plan: PerturbationPlan, sample_id: int = 0, label: str | None = None
) -> PerturbationCurve:
    """Cumulatively perturb regions in relevance order and record the logit.

    Raises :class:`SampleExcluded` when the clean score is not positive, since
    the relative decrease is then undefined.
    """
    x = nx.as_tensor(x)
    trace = forward(model, x)
    c = trace.predicted_class
    if rmap.target_class != c:
        raise ValueError(f"map explains class {rmap.target_class}, model predicts {c}")
    score0 = float(trace.logits[c])
    if not score0 > 0:
        raise SampleExcluded(f"clean score {score0!r} <= 0", sample_id)
    regions = rank_regions(rmap, plan, x.shape)
    if plan.steps > len(regions):
        raise ValueError(f"{plan.steps} steps requested but only {len(regions)} regions exist")
    scores, kept = [score0], [True]
    for t in range(1, plan.steps + 1):
        x = perturb_step(x, regions[t - 1], plan, t, sample_id)
        logits = forward(model, x).logits
        scores.append(float(logits[c]))
        kept.append(int(np.argmax(logits)) == c)
    return PerturbationCurve([s / score0 for s in scores], scores, label or str(rmap.rule), kept)


def curve_auc(curve: list[float]) -> tuple[float, float]:
    """``(normalized, raw)`` trapezoidal area with unit step width.

    ``normalized`` divides by the number of steps; a zero-step curve ``[v]``
    has normalized area ``v``.
    """
    if len(curve) == 1:
        return float(curve[0]), 0.0
    raw = math.fsum((a + b) / 2.0 for a, b in zip(curve[:-1], curve[1:]))
    return raw / (len(curve) - 1), raw


@dataclass
class MethodResult:
    label: str
    method: dict
    mean_relative: list[float]
    mean_still_predicted: list[float]
    auc: float
    auc_raw: float
    n_samples: int


@dataclass
class Comparison:
    results: list[MethodResult]
    plan: PerturbationPlan
    n_total: int
    exclusions: list[tuple[int, str]]

    def auc(self, label: str) -> float:
        return next(r.auc for r in self.results if r.label == label)

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "method", "mean_relative_score", "n_samples"])
        for r in self.results:
            for t, v in enumerate(r.mean_relative):
                w.writerow([t, r.label, repr(v), r.n_samples])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "aucs": {r.label: r.auc for r in self.results},
            "methods": [
                {
                    "label": r.label,
                    "method": r.method,
                    "auc": r.auc,
                    "auc_raw": r.auc_raw,
                    "mean_relative_score": r.mean_relative,
                    "mean_still_predicted": r.mean_still_predicted,
                    "n_samples": r.n_samples,
                }
                for r in self.results
            ],
            "plan": self.plan.to_dict(),
            "seed": self.plan.seed,
            "n_total": self.n_total,
            "n_excluded": len(self.exclusions),
            "exclusions": [{"sample_id": i, "reason": why} for i, why in self.exclusions],
            "tracked_score": TRACKED_SCORE,
            "auc_definition": "trapezoid with unit step width divided by the number of steps; lower is better",
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2) + "\n"


def _evaluate_sample(args) -> tuple[int, str | None, list[PerturbationCurve] | None]:
    model, x, methods, plan, sample_id = args
    trace = forward(model, x)
    score0 = float(trace.logits[trace.predicted_class])
    if not score0 > 0:
        return sample_id, f"clean score {score0!r} <= 0", None
    curves = []
    for m in methods:
        rmap = ranking_map(model, x, m, zero_mode=plan.mode == ZERO_DELETE, seed=plan.seed, sample_id=sample_id)
        curves.append(perturbation_curve(model, x, rmap, plan, sample_id, m.label))
    return sample_id, None, curves


def with_random_baseline(methods: list[Method]) -> list[Method]:
    methods = list(methods)
    if not any(m.name == "random" for m in methods):
        methods.append(Method("random"))
    return methods


def compare_methods(
    model: Model, inputs, methods: list[Method], plan: PerturbationPlan, workers: int = 1
) -> Comparison:
    """Mean relative-score curve and AUC per method over ``inputs``.

    A seeded random ranking is appended unless already listed. Sample ``i``
    always uses substreams keyed by ``i``, and results are averaged in sample
    order, so the output is identical for any ``workers``.
    """
    methods = with_random_baseline(methods)
    inputs = [nx.as_tensor(x) for x in inputs]
    if inputs:
        plan.check_input(inputs[0].shape)
        if plan.steps > plan.n_regions(inputs[0].shape):
            raise ValueError(f"{plan.steps} steps requested but inputs have only {plan.n_regions(inputs[0].shape)} regions")
    jobs = [(model, x, methods, plan, i) for i, x in enumerate(inputs)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_evaluate_sample, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        outcomes = [_evaluate_sample(job) for job in jobs]
    outcomes.sort(key=lambda o: o[0])

    exclusions = [(i, why) for i, why, _ in outcomes if why is not None]
    kept = [curves for _, why, curves in outcomes if why is None]
    if not kept:
        raise SampleExcluded(f"no sample survived the positive-score filter ({len(exclusions)} excluded)")
    results = []
    for k, m in enumerate(methods):
        rel = [[v for v in curves[k].relative_scores] for curves in kept]
        acc = [[float(b) for b in curves[k].still_predicted] for curves in kept]
        mean = [math.fsum(col) / len(kept) for col in zip(*rel)]
        mean_acc = [math.fsum(col) / len(kept) for col in zip(*acc)]
        auc, raw = curve_auc(mean)
        results.append(MethodResult(m.label, m.to_dict(), mean, mean_acc, auc, raw, len(kept)))
    return Comparison(results, plan, len(inputs), exclusions)
