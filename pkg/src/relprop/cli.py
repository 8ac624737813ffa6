"""``relprop`` command-line interface.

Exit codes: 0 success, 1 runtime error, 2 usage/configuration error.
Every command writes a run manifest (JSON) next to its outputs recording the
fully resolved configuration and the SHA-256 of every input and output;
``relprop replay MANIFEST`` re-executes it and verifies the output hashes.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    Dataset,
    encode_tokens,
    idx_images,
    load_csv,
    load_idx,
    load_tokens,
    load_vocabulary,
    read_idx,
    synthetic_blobs,
    synthetic_feature_groups,
    write_csv,
)
from .errors import RelpropError, SampleExcluded, ShapeError
from .evaluate import PATCH_UNIFORM, ZERO_DELETE, PerturbationPlan, compare_methods
from .lrp import conservation_audit, pixel_relevance, token_relevance
from .methods import METHOD_NAMES, Method, explain
from .model import forward, load_model, save_model
from .relevance import load_relevance, save_relevance
from .render import DIVERGING, MAGNITUDE, ColorMapSpec, render_heatmap_image, render_text_html
from .training import train_mlp

MANIFEST_SUFFIX = ".manifest.json"


class UsageError(Exception):
    """Bad flags or a configuration that can never run (exit code 2)."""


# ------------------------------------------------------------------ helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_paths(paths) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for f in files:
            if f.name.endswith(MANIFEST_SUFFIX) or f.name == "run_manifest.json":
                continue
            out[str(f.resolve())] = sha256_file(f)
    return out


def _abs(p) -> str | None:
    return None if p is None else str(Path(p).resolve())


def write_manifest(path, command: str, config: dict, inputs, outputs, metrics: dict | None = None,
                   resolved: dict | None = None) -> Path:
    """Write the run manifest; ``config`` must be replayable as flags, ``resolved``
    records defaults that were derived from the data."""
    argv = [command]
    for key, value in config.items():
        if value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        argv.append(flag if value is True else f"{flag}={value}")
    manifest = {
        "tool": "relprop",
        "version": __version__,
        "command": command,
        "config": config,
        "argv": argv,
        "resolved": resolved or {},
        "inputs": _hash_paths([p for p in inputs if p]),
        "outputs": _hash_paths([p for p in outputs if p]),
        "metrics": metrics or {},
    }
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def _sidecar(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + MANIFEST_SUFFIX)


def _parse_floats(text: str, n: int, what: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"{what} must be {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{what} must be {n} comma-separated numbers, got {text!r}")
    return vals


def _parse_patch(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise UsageError(f"--patch must look like 9x9, got {text!r}") from None


def _method(name: str, args) -> Method:
    if name not in METHOD_NAMES:
        raise UsageError(f"unknown method {name!r}; choose from {', '.join(METHOD_NAMES)}")
    try:
        return Method(name, epsilon=args.epsilon, alpha=args.alpha, beta=args.beta,
                      channel_norm=getattr(args, "channel_norm", None))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def load_dataset(path, label=None, labels=None, vocab=None, max_len=None, limit=None, normalize=False) -> Dataset:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".csv":
        ds = load_csv(path, label, normalize=normalize)
    elif suffix in (".idx", ".ubyte") or "idx" in path.name:
        ds = load_idx(path, labels, limit)
    elif suffix == ".txt":
        if vocab is None or max_len is None:
            raise UsageError("token files need --vocab and a model/--max-len")
        ds = load_tokens(path, vocab, max_len)
    else:
        raise UsageError(f"unsupported data file {path}")
    if limit is not None and suffix != ".idx":
        ds = Dataset(ds.inputs[:limit], None if ds.labels is None else ds.labels[:limit], ds.class_names,
                     ds.normalization, ds.feature_names,
                     None if ds.tokens is None else ds.tokens[:limit],
                     None if ds.dropped_tokens is None else ds.dropped_tokens[:limit])
    return ds


def _load_input(path, model, index: int, vocab, label) -> tuple[np.ndarray, list[str] | None]:
    path = Path(path)
    suffix = path.suffix.lower()
    tokens = None
    if suffix == ".json":
        obj = json.loads(path.read_text(encoding="utf-8"))
        x = np.asarray(obj["values"] if isinstance(obj, dict) else obj, dtype=np.float64)
    elif suffix == ".npy":
        x = np.load(path).astype(np.float64)
    elif suffix == ".csv":
        x = load_csv(path, label).inputs[index]
    elif suffix == ".txt":
        if vocab is None:
            raise UsageError("--vocab is required for token input")
        lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
        line = lines[index].split("\t", 1)[-1]
        x, tokens, _ = encode_tokens(line.split(), load_vocabulary(vocab), model.input_shape[0])
        tokens = tokens + [""] * (model.input_shape[0] - len(tokens))
    else:
        arr = read_idx(path)
        x = idx_images(arr)[index] if arr.ndim in (3, 4) else np.asarray(arr[index], dtype=np.float64)
    if x.size != int(np.prod(model.input_shape)):
        raise ShapeError(f"input has {x.size} values, model expects shape {model.input_shape}")
    return x.reshape(model.input_shape), tokens


# ----------------------------------------------------------------- commands


def cmd_train(args) -> int:
    widths = [int(v) for v in args.layers.split(",")]
    ds = load_dataset(args.data, label=args.label, labels=args.labels, limit=args.limit, normalize=args.normalize)
    result = train_mlp(ds, widths, args.epochs, args.lr, args.seed)
    out = Path(args.out)
    save_model(result.model, out)
    print(f"train accuracy {result.accuracy:.4f} final loss {result.losses[-1]:.6g}")
    config = {
        "data": _abs(args.data), "label": args.label, "labels": _abs(args.labels), "limit": args.limit,
        "normalize": args.normalize, "layers": args.layers, "epochs": args.epochs, "lr": args.lr,
        "seed": args.seed, "out": _abs(out),
    }
    metrics = {"train_accuracy": result.accuracy, "losses": result.losses}
    write_manifest(out / "run_manifest.json", "train", config, [args.data, args.labels], [out], metrics)
    return 0


def cmd_explain(args) -> int:
    method = _method(args.method, args)
    model = load_model(args.model)
    x, tokens = _load_input(args.input, model, args.index, args.vocab, args.label)
    trace = forward(model, x)
    target = trace.predicted_class if args.class_ is None else args.class_
    if not 0 <= target < model.n_classes:
        raise UsageError(f"--class {target} out of range for {model.n_classes} classes")
    rmap = explain(model, x, method, target)
    meta = {
        "method": method.to_dict(),
        "predicted_class": trace.predicted_class,
        "class_name": model.class_names[target],
        "f_value": float(trace.logits[target]),
        "explained_score": "pre-softmax logit",
    }
    if rmap.is_sa:
        meta["audit"] = "skipped: sensitivity maps do not decompose f(x)"
    else:
        rmap.conservation = conservation_audit(rmap)
    if model.embedding is not None:
        meta["token_relevance"] = token_relevance(rmap, model).tolist()
        meta["tokens"] = tokens
    rmap.metadata.update(meta)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_relevance(rmap, out)
    outputs = [out]
    if args.render:
        colormap = args.colormap or (MAGNITUDE if rmap.is_sa else DIVERGING)
        _render(rmap, args.render, ColorMapSpec(colormap, args.saturation))
        outputs.append(args.render)
    config = {
        "model": _abs(args.model), "input": _abs(args.input), "index": args.index, "vocab": _abs(args.vocab),
        "label": args.label, "method": args.method, "epsilon": args.epsilon, "alpha": args.alpha,
        "beta": method.rule().beta if method.name == "lrp-ab" else args.beta,
        "class": target, "channel_norm": args.channel_norm, "render": _abs(args.render),
        "colormap": args.colormap, "saturation": args.saturation, "out": _abs(out),
    }
    write_manifest(_sidecar(out), "explain", config, [args.model, args.input, args.vocab], outputs)
    if rmap.conservation is not None and rmap.conservation.max_rel_deviation is not None:
        rep = rmap.conservation
        print(f"f(x)={rep.f_value:.6g} max relative conservation deviation {rep.max_rel_deviation:.3g} "
              f"(bias {rep.bias_absorbed:.3g}, epsilon {rep.epsilon_leaked:.3g}, unaccounted {rep.unaccounted:.3g})")
    return 0


def cmd_evaluate(args) -> int:
    methods = [_method(name.strip(), args) for name in args.methods.split(",") if name.strip()]
    if not methods:
        raise UsageError("--methods is empty")
    mode = {"patch": PATCH_UNIFORM, "zero": ZERO_DELETE}[args.perturb]
    model = load_model(args.model)
    max_len = model.input_shape[0] if model.embedding is not None else None
    ds = load_dataset(args.data, label=args.label, labels=args.labels, vocab=args.vocab, max_len=max_len,
                      limit=args.limit)
    value_range = _parse_floats(args.value_range, 2, "--value-range") if args.value_range else ds.value_range()
    try:
        plan = PerturbationPlan(mode, args.steps, _parse_patch(args.patch), value_range, args.seed)
        inputs = [x.reshape(model.input_shape) for x in ds.inputs]
        plan.check_input(model.input_shape)
        if args.steps > plan.n_regions(model.input_shape):
            raise UsageError(f"--steps {args.steps} exceeds the {plan.n_regions(model.input_shape)} perturbable regions")
    except (ShapeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    try:
        comparison = compare_methods(model, inputs, methods, plan, workers=args.workers)
    except SampleExcluded as exc:
        print(f"relprop: error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "curves.csv").write_text(comparison.curves_csv(), encoding="utf-8")
    summary = comparison.summary()
    summary["value_range_source"] = "--value-range" if args.value_range else "observed min/max of the evaluated data"
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    for r in comparison.results:
        print(f"{r.label:8s} AUC {r.auc:.4f}  (n={r.n_samples})")
    config = {
        "model": _abs(args.model), "data": _abs(args.data), "label": args.label, "labels": _abs(args.labels),
        "vocab": _abs(args.vocab), "limit": args.limit, "methods": args.methods, "perturb": args.perturb,
        "patch": args.patch, "steps": args.steps, "seed": args.seed, "epsilon": args.epsilon,
        "alpha": args.alpha, "beta": args.beta, "value_range": args.value_range,
        "workers": args.workers, "out": _abs(out),
    }
    write_manifest(out / "run_manifest.json", "evaluate", config, [args.model, args.data, args.labels, args.vocab],
                   [out / "curves.csv", out / "summary.json"], {"aucs": summary["aucs"]},
                   resolved={"value_range": list(value_range)})
    return 0


def _render(rmap, out, spec: ColorMapSpec) -> None:
    out = Path(out)
    if out.suffix.lower() in (".html", ".htm"):
        tokens = rmap.metadata.get("tokens")
        scores = rmap.metadata.get("token_relevance")
        if tokens is None or scores is None:
            raise UsageError("HTML rendering needs a token-level relevance map")
        render_text_html(tokens, scores, spec, out)
    else:
        render_heatmap_image(pixel_relevance(rmap), spec, out)


def cmd_render(args) -> int:
    rmap = load_relevance(args.relevance)
    _render(rmap, args.out, ColorMapSpec(args.colormap, args.saturation))
    config = {"relevance": _abs(args.relevance), "out": _abs(args.out), "colormap": args.colormap,
              "saturation": args.saturation}
    write_manifest(_sidecar(args.out), "render", config, [args.relevance], [args.out])
    return 0


def cmd_synth(args) -> int:
    if args.kind == "blobs":
        ds = synthetic_blobs(args.n, args.seed)
    else:
        ds = synthetic_feature_groups(args.n, args.seed)
    write_csv(args.out, ds.inputs, ds.labels, label_column=args.label)
    config = {"kind": args.kind, "n": args.n, "seed": args.seed, "label": args.label, "out": _abs(args.out)}
    write_manifest(_sidecar(args.out), "synth", config, [], [args.out])
    return 0


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    code = main(manifest["argv"])
    if code != 0:
        return code
    current = _hash_paths(list(manifest["outputs"]))
    bad = [p for p, h in manifest["outputs"].items() if current.get(p) != h]
    if bad:
        print(f"relprop: replay produced different bytes for: {', '.join(bad)}", file=sys.stderr)
        return 1
    print(f"replay reproduced {len(manifest['outputs'])} output file(s) byte-identically")
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relprop", description="Relevance propagation and sensitivity explanations.")
    p.add_argument("--version", action="version", version=f"relprop {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a Dense/ReLU classifier")
    t.add_argument("--data", required=True)
    t.add_argument("--label", help="label column (CSV)")
    t.add_argument("--labels", help="label file (IDX)")
    t.add_argument("--limit", type=int)
    t.add_argument("--normalize", action="store_true", help="min-max normalize CSV features")
    t.add_argument("--layers", required=True, help="layer widths, e.g. 2,8,2")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    def rule_flags(q):
        q.add_argument("--epsilon", type=float, default=0.01)
        q.add_argument("--alpha", type=float, default=1.0)
        q.add_argument("--beta", type=float, help="defaults to alpha - 1")

    e = sub.add_parser("explain", help="explain one input")
    e.add_argument("--model", required=True)
    e.add_argument("--input", required=True)
    e.add_argument("--index", type=int, default=0, help="sample index within the input file")
    e.add_argument("--vocab")
    e.add_argument("--label", help="label column to drop from CSV input")
    e.add_argument("--method", default="lrp-eps")
    rule_flags(e)
    e.add_argument("--class", dest="class_", type=int)
    e.add_argument("--channel-norm", choices=["abs", "l2_over_channels"])
    e.add_argument("--render")
    e.add_argument("--colormap", choices=[DIVERGING, MAGNITUDE])
    e.add_argument("--saturation", type=float)
    e.add_argument("--out", default="relevance.json")
    e.set_defaults(func=cmd_explain)

    v = sub.add_parser("evaluate", help="perturbation-based comparison of explanation methods")
    v.add_argument("--model", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--label")
    v.add_argument("--labels")
    v.add_argument("--vocab")
    v.add_argument("--limit", type=int)
    v.add_argument("--methods", default="sa,lrp-eps,lrp-ab,random")
    v.add_argument("--perturb", choices=["patch", "zero"], default="zero")
    v.add_argument("--patch", default="9x9")
    v.add_argument("--steps", type=int, default=10)
    v.add_argument("--seed", type=int, default=0)
    rule_flags(v)
    v.add_argument("--value-range", help="low,high for uniform replacement (default: observed data range)")
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--out", default="evaluation")
    v.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("render", help="render a saved relevance map")
    r.add_argument("--relevance", required=True)
    r.add_argument("--out", required=True, help=".ppm image or .html for token maps")
    r.add_argument("--colormap", choices=[DIVERGING, MAGNITUDE], default=DIVERGING)
    r.add_argument("--saturation", type=float)
    r.set_defaults(func=cmd_render)

    s = sub.add_parser("synth", help="write a seeded synthetic CSV dataset")
    s.add_argument("--kind", choices=["blobs", "groups"], default="blobs")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--label", default="y")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    rp = sub.add_parser("replay", help="re-run a run manifest and verify its outputs")
    rp.add_argument("manifest")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"relprop: error: {exc}", file=sys.stderr)
        return 2
    except (RelpropError, OSError, ValueError) as exc:
        print(f"relprop: error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
