"""Zero-shot evaluation: positive/negative prompt pairs per class, cosine
similarity scoring, softmax pair probability, per-class ROC-AUC and the
macro average."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import torch

from .multicrop import center_view

DEFAULT_CLASSES = ("Atelectasis", "Cardiomegaly", "Edema", "Pleural Effusion", "Consolidation")

_NORM_TOL = 1e-6


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class PromptPair:
    class_name: str
    positive_text: str
    negative_text: str
    t_plus: np.ndarray  # unit 64-dim
    t_minus: np.ndarray


@dataclass
class EvalReport:
    per_class: dict  # class -> AUC (defined classes only)
    macro_auc: float
    warnings: list


def _unit(vec: np.ndarray) -> np.ndarray:
    return vec / np.linalg.norm(vec)


def build_prompt_pairs(classes, model) -> list:
    """Encode '{class}' / 'no {class}' (lowercased) through the frozen text
    path and l2-normalize."""
    classes = list(classes)
    if not classes:
        raise ValueError("need at least one class")
    pairs = []
    with torch.no_grad():
        for name in classes:
            pos = name.lower()
            neg = f"no {name.lower()}"
            emb = model.text([pos, neg]).double().cpu().numpy()
            pairs.append(
                PromptPair(
                    class_name=name,
                    positive_text=pos,
                    negative_text=neg,
                    t_plus=_unit(emb[0]),
                    t_minus=_unit(emb[1]),
                )
            )
    return pairs


def class_probability(v: np.ndarray, pair: PromptPair) -> float:
    """Softmax over (cosine to positive, cosine to negative) prompts."""
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > _NORM_TOL:
        raise ValueError("image embedding must be l2-normalized")
    s_plus = float(v @ pair.t_plus)
    s_minus = float(v @ pair.t_minus)
    m = max(s_plus, s_minus)
    e_plus = math.exp(s_plus - m)
    return e_plus / (e_plus + math.exp(s_minus - m))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midrank tie handling, O(k log k)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equal length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def embed_images(model, manifest, batch_size: int = 64) -> np.ndarray:
    """Encode every image once: single 224 center view, eval mode,
    predictor output l2-normalized. Returns (N, D) float64."""
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    with torch.no_grad():
        for start in range(0, len(manifest.records), batch_size):
            chunk = manifest.records[start : start + batch_size]
            views = np.stack([center_view(manifest.load_image(rec)) for rec in chunk])
            emb = model.predict_views(torch.as_tensor(views, dtype=dtype))
            out.append(emb.double().cpu().numpy())
    embs = np.concatenate(out, axis=0)
    return embs / np.linalg.norm(embs, axis=1, keepdims=True)


def evaluate(model, manifest, classes=None, batch_size: int = 64) -> EvalReport:
    """Score every class on every image; classes with single-valued labels
    are excluded from the macro mean with a warning."""
    classes = list(classes) if classes is not None else list(manifest.classes)
    pairs = build_prompt_pairs(classes, model)
    embs = embed_images(model, manifest, batch_size=batch_size)
    per_class, warnings = {}, []
    for pair in pairs:
        scores = np.array([class_probability(v, pair) for v in embs])
        labels = np.array([rec.labels.get(pair.class_name, 0) for rec in manifest.records])
        try:
            per_class[pair.class_name] = roc_auc(scores, labels)
        except UndefinedMetricError:
            warnings.append(f"class {pair.class_name!r} has single-valued labels; AUC undefined")
    if not per_class:
        raise UndefinedMetricError("no class has both positive and negative labels")
    macro = float(np.mean(list(per_class.values())))
    return EvalReport(per_class=per_class, macro_auc=macro, warnings=warnings)


def write_report(report: EvalReport, out_dir, seed: int, checkpoint_hash: str) -> None:
    """Emit eval_report.csv (class, auc) and eval_summary.json."""
    import csv
    from pathlib import Path

    out_dir = Path(out_dir)
    with open(out_dir / "eval_report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "auc"])
        for name, auc in report.per_class.items():
            writer.writerow([name, repr(auc)])
    summary = {
        "macro_auc": report.macro_auc,
        "seed": seed,
        "checkpoint_hash": checkpoint_hash,
        "warnings": report.warnings,
    }
    with open(out_dir / "eval_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
