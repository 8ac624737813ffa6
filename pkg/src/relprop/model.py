"""Layer graph, forward pass with activation recording, and the model file format.

A model on disk is a directory holding two files:

``model.json``
    UTF-8 manifest: ``format_version`` (1), ``input_shape``, ``layers``
    (``[{"kind": ..., "params": {...}}]``), ``class_names``, ``weights_file``
    and ``weights_sha256``.
``weights.bin``
    Every layer's parameter tensors concatenated in declaration order, each
    row-major, little-endian float32. Loading widens them to float64.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar

import numpy as np

from . import numerics as nx
from .errors import ChecksumMismatch, ModelFileMissing, ModelFormatError, ShapeError

FORMAT_VERSION = 1
MANIFEST_NAME = "model.json"
WEIGHTS_NAME = "weights.bin"


class Layer:
    kind: ClassVar[str]

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, object]:
        """Return ``(output, aux)``; ``aux`` holds whatever backward passes need."""
        raise NotImplementedError

    def params(self) -> list[np.ndarray]:
        return []

    def config(self) -> dict:
        return {}

    @classmethod
    def param_shapes(cls, config: dict) -> list[tuple[int, ...]]:
        return []

    @classmethod
    def from_config(cls, config: dict, arrays: list[np.ndarray]) -> "Layer":
        return cls()

    def __eq__(self, other):
        if type(self) is not type(other) or self.config() != other.config():
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.params(), other.params()))

    def __repr__(self):
        return f"{type(self).__name__}({self.config()})"


class Dense(Layer):
    """``out = x @ weights + bias`` with ``weights`` shaped ``(n_in, n_out)``."""

    kind = "Dense"

    def __init__(self, weights, bias=None):
        self.weights = nx.as_tensor(weights)
        if self.weights.ndim != 2:
            raise ShapeError(f"Dense weights must be rank 2, got shape {self.weights.shape}")
        if bias is None:
            bias = np.zeros(self.weights.shape[1])
        self.bias = nx.as_tensor(bias)
        if self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(f"Dense bias shape {self.bias.shape} vs weights {self.weights.shape}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[0]

    @property
    def n_out(self) -> int:
        return self.weights.shape[1]

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.n_in,):
            raise ShapeError(f"Dense({self.n_in}->{self.n_out}) cannot take input of shape {tuple(in_shape)}")
        return (self.n_out,)

    def forward(self, x):
        return nx.dense_forward(x, self.weights, self.bias), None

    def params(self):
        return [self.weights, self.bias]

    def config(self):
        return {"in": self.n_in, "out": self.n_out}

    @classmethod
    def param_shapes(cls, config):
        return [(int(config["in"]), int(config["out"])), (int(config["out"]),)]

    @classmethod
    def from_config(cls, config, arrays):
        return cls(*arrays)


class Conv(Layer):
    kind = "Conv"

    def __init__(self, kernel, bias=None, stride=1, padding=0):
        kernel = nx.as_tensor(kernel)
        if bias is None and kernel.ndim == 4:
            bias = np.zeros(kernel.shape[0])
        self.spec = nx.ConvSpec(kernel, bias, stride, padding)

    @property
    def kernel(self):
        return self.spec.kernel

    @property
    def bias(self):
        return self.spec.bias

    def output_shape(self, in_shape):
        return self.spec.output_shape(tuple(in_shape))

    def forward(self, x):
        return nx.conv_forward(x, self.spec), None

    def params(self):
        return [self.spec.kernel, self.spec.bias]

    def config(self):
        kh, kw = self.spec.window
        return {
            "in_channels": self.spec.in_channels,
            "out_channels": self.spec.out_channels,
            "kernel": [kh, kw],
            "stride": list(self.spec.stride),
            "padding": list(self.spec.padding),
        }

    @classmethod
    def param_shapes(cls, config):
        o, c = int(config["out_channels"]), int(config["in_channels"])
        kh, kw = (int(v) for v in config["kernel"])
        return [(o, c, kh, kw), (o,)]

    @classmethod
    def from_config(cls, config, arrays):
        return cls(arrays[0], arrays[1], tuple(config["stride"]), tuple(config["padding"]))


class _Pool(Layer):
    pool_kind: ClassVar[str]

    def __init__(self, window, stride=None):
        self.window = nx._pair(window, "window")
        self.stride = self.window if stride is None else nx._pair(stride, "stride")

    def output_shape(self, in_shape):
        return nx.pool_output_shape(tuple(in_shape), self.window, self.stride)

    def forward(self, x):
        return nx.pool_forward(x, self.pool_kind, self.window, self.stride)

    def config(self):
        return {"window": list(self.window), "stride": list(self.stride)}

    @classmethod
    def from_config(cls, config, arrays):
        return cls(tuple(config["window"]), tuple(config.get("stride", config["window"])))


class MaxPool(_Pool):
    kind = "MaxPool"
    pool_kind = "max"


class AvgPool(_Pool):
    kind = "AvgPool"
    pool_kind = "avg"


class ReLU(Layer):
    kind = "ReLU"

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return nx.relu_forward(x), None


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(-1).copy(), None


class Embedding(Layer):
    """Token-id lookup. Must be the first layer; row 0 (padding) must be zero.

    ``layout="sequence"`` emits ``tokens x dim``; ``layout="channels"`` emits
    ``dim x 1 x tokens`` so a following ``Conv`` acts as a 1-D convolution.
    """

    kind = "Embedding"
    LAYOUTS = ("sequence", "channels")

    def __init__(self, table, layout: str = "sequence"):
        self.table = nx.as_tensor(table)
        if self.table.ndim != 2:
            raise ShapeError(f"Embedding table must be rank 2, got shape {self.table.shape}")
        if layout not in self.LAYOUTS:
            raise ValueError(f"unknown embedding layout {layout!r}")
        self.layout = layout

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"Embedding expects a token-id vector, got shape {tuple(in_shape)}")
        (n,) = in_shape
        return (n, self.dim) if self.layout == "sequence" else (self.dim, 1, n)

    def token_ids(self, x: np.ndarray) -> np.ndarray:
        ids = np.asarray(x)
        if not np.all(ids == np.round(ids)) or ids.min(initial=0) < 0 or ids.max(initial=0) >= self.vocab_size:
            raise ShapeError(f"token ids must be integers in [0, {self.vocab_size})")
        return ids.astype(np.int64)

    def forward(self, x):
        rows = self.table[self.token_ids(x)]
        if self.layout == "channels":
            rows = rows.T.reshape(self.dim, 1, -1)
        return np.ascontiguousarray(rows), None

    def params(self):
        return [self.table]

    def config(self):
        return {"vocab": self.vocab_size, "dim": self.dim, "layout": self.layout}

    @classmethod
    def param_shapes(cls, config):
        return [(int(config["vocab"]), int(config["dim"]))]

    @classmethod
    def from_config(cls, config, arrays):
        return cls(arrays[0], config.get("layout", "sequence"))


LAYER_KINDS: dict[str, type[Layer]] = {
    cls.kind: cls for cls in (Dense, Conv, MaxPool, AvgPool, ReLU, Flatten, Embedding)
}


@dataclass
class Model:
    input_shape: tuple[int, ...]
    layers: list[Layer]
    class_names: list[str]

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.layers = list(self.layers)
        self.class_names = [str(c) for c in self.class_names]
        self.shapes = self.validate()

    def validate(self) -> list[tuple[int, ...]]:
        """Check the layer chain; returns the shape after each layer (input first)."""
        if not self.layers:
            raise ShapeError("model has no layers")
        if any(s < 1 for s in self.input_shape):
            raise ShapeError(f"input shape must have positive extents, got {self.input_shape}")
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Embedding):
                if i != 0:
                    raise ShapeError(f"Embedding must be the first layer (found at position {i})")
                if np.any(layer.table[0] != 0):
                    raise ShapeError("Embedding row 0 (padding/unknown) must be all zeros")
            try:
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        out = shapes[-1]
        if len(self.class_names) < 2:
            raise ShapeError(f"need at least 2 class names, got {len(self.class_names)}")
        if out != (len(self.class_names),):
            raise ShapeError(
                f"layer chain yields output shape {out} but there are {len(self.class_names)} class names"
            )
        return shapes

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def embedding(self) -> Embedding | None:
        first = self.layers[0]
        return first if isinstance(first, Embedding) else None

    def __eq__(self, other):
        return (
            isinstance(other, Model)
            and self.input_shape == other.input_shape
            and self.class_names == other.class_names
            and len(self.layers) == len(other.layers)
            and all(a == b for a, b in zip(self.layers, other.layers))
        )


@dataclass
class ForwardTrace:
    """Per-layer inputs and outputs of one forward pass.

    ``inputs[i]`` / ``outputs[i]`` are the tensors entering / leaving layer
    ``i``; ``aux[i]`` carries layer-specific records (the max-pool argmax).
    All recorded arrays are read-only.
    """

    inputs: list[np.ndarray]
    outputs: list[np.ndarray]
    aux: list[object]
    logits: np.ndarray
    predicted_class: int
    start: int = 0
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.outputs)


def forward(model: Model, x, start: int = 0) -> ForwardTrace:
    """Run ``model`` on ``x`` recording every layer's input and output.

    ``start`` skips the first ``start`` layers, treating ``x`` as the input of
    layer ``start``; the skipped entries of the trace hold ``None``.
    """
    x = nx.as_tensor(x)
    expected = model.shapes[start]
    if x.shape != expected:
        raise ShapeError(f"input shape {x.shape} does not match expected {expected}")
    x = nx.frozen(x.copy())
    n = len(model.layers)
    inputs: list = [None] * n
    outputs: list = [None] * n
    aux: list = [None] * n
    for i in range(start, n):
        inputs[i] = x
        out, extra = model.layers[i].forward(x)
        x = nx.frozen(out)
        outputs[i] = x
        aux[i] = extra
    logits = outputs[-1]
    return ForwardTrace(inputs, outputs, aux, logits, int(np.argmax(logits)), start)


def logit(model: Model, x, target_class: int, start: int = 0) -> float:
    return float(forward(model, x, start).logits[target_class])


# ---------------------------------------------------------------- file format


def _layer_entry(layer: Layer) -> dict:
    return {"kind": layer.kind, "params": layer.config()}


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def weight_blob(model: Model) -> bytes:
    parts = [np.asarray(p, dtype="<f4").tobytes(order="C") for layer in model.layers for p in layer.params()]
    return b"".join(parts)


def save_model(model: Model, path) -> Path:
    """Write ``model`` into directory ``path``; returns the manifest path.

    Both files are written to a temporary name and renamed into place.
    """
    if not model.layers:
        raise ShapeError("refusing to save a model with no layers")
    model.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = weight_blob(model)
    manifest = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(model.input_shape),
        "layers": [_layer_entry(layer) for layer in model.layers],
        "class_names": list(model.class_names),
        "weights_file": WEIGHTS_NAME,
        "weights_sha256": hashlib.sha256(blob).hexdigest(),
    }
    _atomic_write(path / WEIGHTS_NAME, blob)
    text = json.dumps(manifest, indent=2) + "\n"
    _atomic_write(path / MANIFEST_NAME, text.encode("utf-8"))
    return path / MANIFEST_NAME


def manifest_path(path) -> Path:
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def load_model(path) -> Model:
    """Load a model directory (or its manifest file) written by :func:`save_model`."""
    mpath = manifest_path(path)
    if not mpath.is_file():
        raise ModelFileMissing(f"model manifest not found: {mpath}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable manifest {mpath}: {exc}") from None
    for key in ("format_version", "input_shape", "layers", "class_names", "weights_file", "weights_sha256"):
        if key not in manifest:
            raise ModelFormatError(f"manifest {mpath} lacks field {key!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {manifest['format_version']!r}")
    if not manifest["layers"]:
        raise ModelFormatError("manifest declares no layers")

    bpath = mpath.parent / manifest["weights_file"]
    if not bpath.is_file():
        raise ModelFileMissing(f"weight blob not found: {bpath}")
    blob = bpath.read_bytes()
    if len(blob) % 4:
        raise ModelFormatError(f"weight blob size {len(blob)} is not a multiple of 4 bytes")
    floats = np.frombuffer(blob, dtype="<f4").astype(np.float64)

    specs = []
    offset = 0
    for i, entry in enumerate(manifest["layers"]):
        kind = entry.get("kind")
        if kind not in LAYER_KINDS:
            raise ModelFormatError(f"layer {i}: unknown kind {kind!r}")
        cls = LAYER_KINDS[kind]
        config = entry.get("params", {})
        try:
            shapes = cls.param_shapes(config)
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"layer {i} ({kind}): bad params {config!r}: {exc}") from None
        sizes = [int(np.prod(s)) for s in shapes]
        if offset + sum(sizes) > floats.size:
            raise ModelFormatError(_size_message(i, kind, sizes, floats.size - offset))
        arrays = []
        for shape, size in zip(shapes, sizes):
            arrays.append(floats[offset : offset + size].reshape(shape).copy())
            offset += size
        specs.append((cls, config, arrays))
    if offset != floats.size:
        raise ModelFormatError(f"weight blob holds {floats.size} floats but layers declare {offset}")
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["weights_sha256"]:
        raise ChecksumMismatch(f"weight blob sha256 {digest} != manifest {manifest['weights_sha256']}")

    layers = []
    for i, (cls, config, arrays) in enumerate(specs):
        try:
            layers.append(cls.from_config(config, arrays))
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"layer {i} ({cls.kind}): bad params {config!r}: {exc}") from None
    return Model(tuple(manifest["input_shape"]), layers, list(manifest["class_names"]))


def _size_message(i: int, kind: str, sizes: list[int], available: int) -> str:
    if len(sizes) == 2:
        need = f"expected {sizes[0]} weight floats (+{sizes[1]} bias)"
    else:
        need = f"expected {sum(sizes)} weight floats"
    return f"layer {i} ({kind}): {need}, blob has {available} remaining"


def round_to_float32(model: Model) -> Model:
    """Copy of ``model`` with parameters rounded through float32, as saved on disk."""
    layers = []
    for layer in model.layers:
        arrays = [np.asarray(p, dtype=np.float32).astype(np.float64) for p in layer.params()]
        layers.append(type(layer).from_config(layer.config(), arrays))
    return Model(model.input_shape, layers, model.class_names)
