"""Dataset loading (IDX, CSV, token files) and seeded synthetic fixtures."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, DataFormatError, TruncatedFile
from .prng import Xoshiro256

# IDX type codes -> big-endian numpy dtypes
_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass
class Dataset:
    inputs: list[np.ndarray]
    labels: list[int] | None
    class_names: list[str]
    normalization: tuple[np.ndarray, np.ndarray] | None = None
    feature_names: list[str] | None = None
    tokens: list[list[str]] | None = None
    dropped_tokens: list[int] | None = None

    def __post_init__(self):
        if self.labels is not None:
            if len(self.labels) != len(self.inputs):
                raise DataFormatError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
            bad = [y for y in self.labels if not 0 <= y < len(self.class_names)]
            if bad:
                raise DataFormatError(f"label {bad[0]} outside the {len(self.class_names)} classes")
        shapes = {x.shape for x in self.inputs}
        if len(shapes) > 1:
            raise DataFormatError(f"inputs have mixed shapes {sorted(shapes)}")

    def __len__(self):
        return len(self.inputs)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.inputs[0].shape

    def value_range(self) -> tuple[float, float]:
        lo = min(float(x.min()) for x in self.inputs)
        hi = max(float(x.max()) for x in self.inputs)
        return lo, hi


def _class_names(labels) -> list[str]:
    n = max(2, (max(labels) + 1) if labels else 0)
    return [str(i) for i in range(n)]


# ------------------------------------------------------------------- IDX


def read_idx(path, limit: int | None = None) -> np.ndarray:
    """Read an IDX file into an array (big-endian header ``00 00 type ndim``)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in _IDX_TYPES or raw[3] == 0:
        raise BadMagic(f"{path}: not an IDX file (magic {raw[:4].hex()})")
    dtype, ndim = _IDX_TYPES[raw[2]], raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFile(f"{path}: header needs {header} bytes, file has {len(raw)}")
    dims = list(struct.unpack(f">{ndim}I", raw[4:header]))
    count = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header < count:
        raise TruncatedFile(f"{path}: dims {dims} need {count} data bytes, file has {len(raw) - header}")
    arr = np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=header).reshape(dims)
    if limit is not None:
        arr = arr[:limit]
    return arr


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = next((c for c, dt in _IDX_TYPES.items() if dt.newbyteorder("=") == array.dtype.newbyteorder("=")), None)
    if code is None:
        raise DataFormatError(f"no IDX type code for dtype {array.dtype}")
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(_IDX_TYPES[code]).tobytes())


def idx_images(arr: np.ndarray) -> list[np.ndarray]:
    """Per-sample ``1 x h x w`` (or ``c x h x w``) float tensors; bytes scaled to [0, 1]."""
    if arr.ndim not in (3, 4):
        raise DataFormatError(f"image IDX must have 3 or 4 dims, got {arr.shape}")
    data = arr.astype(np.float64)
    if arr.dtype == np.dtype(">u1"):
        data = data / 255.0
    if arr.ndim == 3:
        data = data[:, None, :, :]
    return [np.ascontiguousarray(x) for x in data]


def load_idx(images_path, labels_path=None, limit: int | None = None) -> Dataset:
    images = idx_images(read_idx(images_path, limit))
    labels = None
    if labels_path is not None:
        lab = read_idx(labels_path)
        if lab.ndim != 1:
            raise DataFormatError(f"label IDX must be 1-D, got {lab.shape}")
        n_all = read_idx(images_path).shape[0]
        if lab.shape[0] != n_all:
            raise DataFormatError(f"labels file holds {lab.shape[0]} labels but images file holds {n_all} images")
        labels = [int(v) for v in lab[: len(images)]]
    names = _class_names(labels) if labels is not None else [str(i) for i in range(10)]
    return Dataset(images, labels, names)


# ------------------------------------------------------------------- CSV


def load_csv(path, label_column: str | None, normalize: bool = False) -> Dataset:
    """Rectangular numeric CSV with a header; one rank-1 tensor per row.

    With ``normalize``, features are min-max scaled as ``(raw - offset) / scale``
    with ``offset = min`` and ``scale = max - min`` (1 when max == min).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    if label_column is not None and label_column not in header:
        raise DataFormatError(f"{path}: no column {label_column!r}; available columns: {', '.join(header)}")
    li = header.index(label_column) if label_column is not None else None
    features = [h for i, h in enumerate(header) if i != li]
    inputs, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataFormatError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
        try:
            vals = [float(c) for i, c in enumerate(row) if i != li]
        except ValueError:
            raise DataFormatError(f"{path}: row {lineno} has a non-numeric cell") from None
        inputs.append(np.asarray(vals, dtype=np.float64))
        if li is not None:
            try:
                y = float(row[li])
            except ValueError:
                raise DataFormatError(f"{path}: row {lineno} label {row[li]!r} is not numeric") from None
            if y != int(y) or y < 0:
                raise DataFormatError(f"{path}: row {lineno} label {row[li]!r} is not a class index")
            labels.append(int(y))
    if not inputs:
        raise DataFormatError(f"{path}: no data rows")
    norm = None
    if normalize:
        raw = np.stack(inputs)
        offset = raw.min(axis=0)
        span = raw.max(axis=0) - offset
        scale = np.where(span == 0, 1.0, span)
        inputs = [(x - offset) / scale for x in inputs]
        norm = (offset, scale)
    lab = labels if li is not None else None
    return Dataset(inputs, lab, _class_names(labels), norm, features)


def write_csv(path, inputs, labels, feature_names=None, label_column: str = "y") -> None:
    inputs = [np.asarray(x).reshape(-1) for x in inputs]
    names = feature_names or [f"x{i}" for i in range(inputs[0].size)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + [label_column])
        for x, y in zip(inputs, labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


# ---------------------------------------------------------------- tokens


def load_vocabulary(path) -> dict[str, int]:
    """``token<TAB>id`` lines; id 0 is reserved for padding/unknown."""
    vocab: dict[str, int] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"{path}: line {lineno} is not 'token<TAB>id'")
        token, ident = parts[0], parts[1].strip()
        try:
            ident_int = int(ident)
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno} id {ident!r} is not an integer") from None
        if ident_int < 1:
            raise DataFormatError(f"{path}: line {lineno} uses reserved id {ident_int}")
        vocab[token] = ident_int
    if not vocab:
        raise DataFormatError(f"{path}: empty vocabulary")
    return vocab


def encode_tokens(tokens: list[str], vocab: dict[str, int], max_len: int) -> tuple[np.ndarray, list[str], int]:
    """Returns ``(ids, kept_tokens, n_dropped)``; unknown tokens map to id 0."""
    kept = tokens[:max_len]
    ids = np.zeros(max_len, dtype=np.float64)
    for i, tok in enumerate(kept):
        ids[i] = vocab.get(tok, 0)
    return ids, kept, len(tokens) - len(kept)


def load_tokens(path, vocabulary_path, max_len: int) -> Dataset:
    """One document per line, whitespace-tokenized.

    A line of the form ``<label><TAB><text>`` carries an integer label; labels
    must be present on all lines or none.
    """
    if max_len < 1:
        raise ValueError("max_len must be positive")
    vocab = load_vocabulary(vocabulary_path)
    inputs, labels, tokens, dropped = [], [], [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        label = None
        if "\t" in line:
            head, line = line.split("\t", 1)
            try:
                label = int(head)
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno} label {head!r} is not an integer") from None
        ids, kept, n_dropped = encode_tokens(line.split(), vocab, max_len)
        inputs.append(ids)
        tokens.append(kept)
        dropped.append(n_dropped)
        labels.append(label)
    if not inputs:
        raise DataFormatError(f"{path}: no documents")
    have = [y is not None for y in labels]
    if any(have) and not all(have):
        raise DataFormatError(f"{path}: labels present on some lines only")
    lab = labels if all(have) else None
    return Dataset(inputs, lab, _class_names(lab or []), tokens=tokens, dropped_tokens=dropped)


# ------------------------------------------------------------- synthetic


def synthetic_blobs(n: int = 200, seed: int = 0, gap: float = 1.0) -> Dataset:
    """Two linearly separable 2-D square blobs centred at (-2, -2) and (2, 2).

    Each point is its centre plus uniform noise in ``[-2 + gap/2, 2 - gap/2]``
    per axis, so the classes are separated by the line ``x0 + x1 = 0`` with a
    margin of at least ``gap``.
    """
    rng = Xoshiro256.substream(seed, "blobs")
    half = 2.0 - gap / 2.0
    inputs, labels = [], []
    for i in range(n):
        y = i % 2
        centre = 2.0 if y else -2.0
        inputs.append(centre + rng.uniform(-half, half, 2))
        labels.append(y)
    return Dataset(inputs, labels, ["0", "1"])


def synthetic_feature_groups(
    n: int = 200, seed: int = 0, n_signal: int = 5, n_noise: int = 10, contrast: float = 0.6
) -> Dataset:
    """Two-class tabular set with ``2 * n_signal + n_noise`` features in [0, 1].

    Features ``[0, n_signal)`` are bright (close to 1) for class 0 and dark for
    class 1; features ``[n_signal, 2 * n_signal)`` the other way round. The
    remaining features are uniform noise unrelated to the class.
    """
    rng = Xoshiro256.substream(seed, "feature-groups")
    d = 2 * n_signal + n_noise
    lo = (1.0 - contrast) / 2.0
    inputs, labels = [], []
    for i in range(n):
        y = i % 2
        x = np.empty(d)
        bright = rng.uniform(1.0 - lo - 0.2, 1.0, n_signal)
        dark = rng.uniform(0.0, lo + 0.2, n_signal)
        if y == 0:
            x[:n_signal], x[n_signal : 2 * n_signal] = bright, dark
        else:
            x[:n_signal], x[n_signal : 2 * n_signal] = dark, bright
        x[2 * n_signal :] = rng.uniform(0.0, 1.0, n_noise)
        inputs.append(x)
        labels.append(y)
    return Dataset(inputs, labels, ["0", "1"])
