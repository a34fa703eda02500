"""Pooled top-layer features and their 2-D PCA projection, written as CSV."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import EncoderModel, forward_from_layer, forward_to_layer
from .text import Example, pad_batch


def pooled_features(model: EncoderModel, dataset: Sequence[Example], batch_size: int = 64) -> np.ndarray:
    rows = []
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start:start + batch_size]
        batch = pad_batch([e.tokens for e in chunk], [e.label for e in chunk], [e.id for e in chunk])
        h = forward_to_layer(model, batch, model.num_layers)
        rows.append(forward_from_layer(model, h).data)
    if not rows:
        return np.zeros((0, model.config.dim))
    return np.concatenate(rows)


def pca_project(x: np.ndarray, k: int = 2) -> np.ndarray:
    """Scores of the centred rows of ``x`` on the top-``k`` principal axes.

    Missing components (fewer samples or features than ``k``) are zero.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros((x.shape[0], k))
    if x.shape[0] == 0:
        return out
    centred = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    m = min(k, vt.shape[0])
    out[:, :m] = centred @ vt[:m].T
    return out


def reconstruction_error(x: np.ndarray, k: int) -> float:
    """Squared Frobenius error of the rank-``k`` PCA reconstruction of ``x``."""
    centred = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    basis = vt[:k]
    return float(np.sum((centred - centred @ basis.T @ basis) ** 2))


def dump_features(model: EncoderModel, dataset: Sequence[Example], out_path) -> np.ndarray:
    """Write ``id,label,f0..f{d-1},pc1,pc2`` rows; return the feature matrix."""
    ordered = sorted(dataset, key=lambda e: e.id)
    feats = pooled_features(model, ordered)
    proj = pca_project(feats, 2)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"] + [f"f{j}" for j in range(feats.shape[1])] + ["pc1", "pc2"])
        for ex, f, p in zip(ordered, feats, proj):
            writer.writerow([ex.id, ex.label] + [repr(float(v)) for v in f] + [repr(float(v)) for v in p])
    return feats
