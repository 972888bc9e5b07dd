"""Embedding-distribution diagnostics: collapse and isotropy measurements
over a trained model's prediction embeddings."""

from __future__ import annotations

import numpy as np
import torch

from .data import ImageStore, sample_seed
from .multicrop import AugmentConfig, center_view, make_views
from .synthdata import Manifest


def view_prediction_embeddings(
    model,
    manifest: Manifest,
    aug_cfg: AugmentConfig,
    epoch: int = 0,
    batch_size: int = 64,
) -> np.ndarray:
    """Predictor outputs for the full multi-crop view set of every sample,
    eval mode (running statistics), seeded augmentation. Returns
    (views * N, D) float64."""
    model.eval()
    dtype = next(model.parameters()).dtype
    store = ImageStore(manifest)
    out = []
    with torch.no_grad():
        for start in range(0, len(manifest), batch_size):
            views = []
            for idx in range(start, min(start + batch_size, len(manifest))):
                vb = make_views(store.image(idx), aug_cfg, sample_seed(epoch, idx))
                views.extend(vb.views)
            for size in sorted({v.shape[-1] for v in views}):
                stack = np.stack([v for v in views if v.shape[-1] == size])
                emb = model.predict_views(torch.as_tensor(stack, dtype=dtype))
                out.append(emb.double().cpu().numpy())
    return np.concatenate(out, axis=0)


def center_prediction_embeddings(model, manifest: Manifest, batch_size: int = 64) -> np.ndarray:
    """Un-normalized predictor outputs for the single 224 center view of
    every sample, eval mode. Returns (N, D) float64."""
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    with torch.no_grad():
        for start in range(0, len(manifest.records), batch_size):
            chunk = manifest.records[start : start + batch_size]
            views = np.stack([center_view(manifest.load_image(rec)) for rec in chunk])
            emb = model.predict_views(torch.as_tensor(views, dtype=dtype))
            out.append(emb.double().cpu().numpy())
    return np.concatenate(out, axis=0)


def total_variance(embeddings: np.ndarray) -> float:
    """Sum of per-dimension variances (trace of the covariance)."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    return float(embeddings.var(axis=0).sum())


def covariance_stats(embeddings: np.ndarray) -> dict:
    """Condition number of the covariance and the per-dimension variance
    range of an embedding batch."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    cov = np.cov(embeddings, rowvar=False)
    eigs = np.linalg.eigvalsh(cov)
    floor = 1e-12
    condition = float(eigs.max() / max(eigs.min(), floor))
    per_dim = embeddings.var(axis=0)
    return {
        "condition_number": condition,
        "var_min": float(per_dim.min()),
        "var_max": float(per_dim.max()),
    }
