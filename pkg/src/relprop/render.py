"""Heatmap rendering: binary PPM images and token-colored HTML.

Diverging map (signed relevance, ``t = min(|R| / saturation, 1)``)::

    R >= 0 -> (255, 255 (1 - t), 255 (1 - t))   white to red
    R <  0 -> (255 (1 - t), 255 (1 - t), 255)   white to blue

Magnitude map: ``|R| -> (255 t, 0, 0)``, black to red. Channel values are
rounded half away from zero.
"""
from __future__ import annotations

import html
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError

DIVERGING = "diverging"
MAGNITUDE = "magnitude"


@dataclass(frozen=True)
class ColorMapSpec:
    kind: str = DIVERGING
    saturation: float | None = None  # default: max |R| of the map

    def __post_init__(self):
        if self.kind not in (DIVERGING, MAGNITUDE):
            raise ValueError(f"unknown colormap {self.kind!r}")
        if self.saturation is not None and not self.saturation > 0:
            raise ValueError(f"saturation must be positive, got {self.saturation}")

    def resolve(self, values: np.ndarray) -> float:
        """Saturation to use for ``values``; 0.0 only for an all-zero map without override."""
        if self.saturation is not None:
            return float(self.saturation)
        return float(np.max(np.abs(values))) if values.size else 0.0


def _round_byte(v: np.ndarray) -> np.ndarray:
    return np.floor(v + 0.5).astype(np.uint8)  # v >= 0: half away from zero


def colorize(values, spec: ColorMapSpec) -> np.ndarray:
    """RGB bytes of shape ``values.shape + (3,)``."""
    values = np.asarray(values, dtype=np.float64)
    sat = spec.resolve(values)
    if sat == 0.0:
        t = np.zeros_like(values)
    else:
        t = np.minimum(np.abs(values) / sat, 1.0)
    rgb = np.empty(values.shape + (3,), dtype=np.float64)
    if spec.kind == MAGNITUDE:
        rgb[..., 0] = 255.0 * t
        rgb[..., 1] = 0.0
        rgb[..., 2] = 0.0
        return _round_byte(rgb)
    fade = 255.0 * (1.0 - t)
    neg = values < 0
    rgb[..., 0] = np.where(neg, fade, 255.0)
    rgb[..., 1] = fade
    rgb[..., 2] = np.where(neg, 255.0, fade)
    return _round_byte(rgb)


def ppm_bytes(values, spec: ColorMapSpec) -> bytes:
    values = np.asarray(getattr(values, "values", values), dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"heatmap needs a rank-2 map, got shape {values.shape}")
    h, w = values.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + colorize(values, spec).tobytes()


def render_heatmap_image(values, spec: ColorMapSpec, path) -> None:
    """Write a binary PPM (P6), one pixel per map cell, rows top to bottom."""
    data = ppm_bytes(values, spec)
    Path(path).write_bytes(data)


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError(f"{path}: not a P6 image with maxval 255")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def text_html(tokens: list[str], relevance, spec: ColorMapSpec | None = None, title: str = "relevance") -> str:
    relevance = np.asarray(relevance, dtype=np.float64).reshape(-1)
    if len(tokens) != relevance.size:
        raise ShapeError(f"{len(tokens)} tokens but {relevance.size} relevance scores")
    spec = ColorMapSpec(DIVERGING, spec.saturation if spec else None)
    colors = colorize(relevance, spec)
    spans = []
    for tok, (r, g, b), score in zip(tokens, colors, relevance):
        spans.append(
            f'<span style="background-color:#{r:02x}{g:02x}{b:02x}" title="{float(score)!r}">{html.escape(tok)}</span>'
        )
    return (
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
        f"<title>{html.escape(title)}</title>\n</head>\n<body>\n<p>"
        + " ".join(spans)
        + "</p>\n</body>\n</html>\n"
    )


def render_text_html(tokens: list[str], relevance, spec: ColorMapSpec | None, path) -> None:
    """Self-contained UTF-8 HTML; every token is escaped and shaded by its relevance."""
    Path(path).write_text(text_html(tokens, relevance, spec), encoding="utf-8")
