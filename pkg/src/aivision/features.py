"""Appearance features for tracks: RGB histogram embedding, cosine distance.

The default embedding is a joint RGB histogram with 8 bins per channel
(512 dimensions), L2-normalized. It is a deterministic, pluggable stand-in
for a learned re-identification network.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .geom import BBox

HIST_BINS = 8

Embedder = Callable[[np.ndarray, BBox], np.ndarray]


def crop_pixels(frame: np.ndarray, box: BBox) -> np.ndarray:
    """Integer-pixel crop of a box, clipped to the frame."""
    height, width = frame.shape[:2]
    x1 = max(int(math.floor(box.x)), 0)
    y1 = max(int(math.floor(box.y)), 0)
    x2 = min(int(math.ceil(box.x2)), width)
    y2 = min(int(math.ceil(box.y2)), height)
    if x2 <= x1 or y2 <= y1:
        raise ValueError(f"crop empty after clipping box {box} to {width}x{height}")
    return frame[y1:y2, x1:x2]


def appearance_embed(frame: np.ndarray, box: BBox) -> np.ndarray:
    """Unit-norm 8x8x8 RGB histogram of the box crop."""
    crop = crop_pixels(frame, box)
    binned = (crop.astype(np.uint16) * HIST_BINS) // 256
    flat = binned[..., 0] * HIST_BINS * HIST_BINS + binned[..., 1] * HIST_BINS + binned[..., 2]
    hist = np.bincount(flat.ravel(), minlength=HIST_BINS ** 3).astype(np.float64)
    norm = np.linalg.norm(hist)
    return hist / norm


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 minus cosine similarity, in [0, 2]."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine distance undefined for zero vectors")
    return float(1.0 - float(np.dot(a, b)) / (na * nb))
