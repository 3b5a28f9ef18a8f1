"""Evaluation metrics: rank-based AUC, accuracy, macro F1, RMSE/MAE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import numkernel as nk
from .errors import UndefinedMetricError
from .numkernel import Array


def auc(scores: Array, labels: Array) -> float:
    """Mann-Whitney AUC with ties credited 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0)
                 / (n_pos * n_neg))


def multiclass_auc(probs: Array, labels: Array) -> float:
    """Unweighted one-vs-rest mean over classes present using per-class
    probabilities; binary inputs reduce to plain AUC."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    values = []
    for c in range(probs.shape[1]):
        mask = labels == c
        if mask.all() or not mask.any():
            continue
        values.append(auc(probs[:, c], mask))
    if not values:
        raise UndefinedMetricError("AUC needs both classes present")
    return float(np.mean(values))


def accuracy(pred: Array, labels: Array) -> float:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if len(pred) == 0:
        raise UndefinedMetricError("accuracy of an empty set")
    return float((pred == labels).mean())


def macro_f1(pred: Array, labels: Array, n_c: int,
             positive_class: int | None = None) -> float:
    """Unweighted mean over classes of 2PR/(P+R); 0 when P+R = 0.

    ``positive_class`` switches to the single-class F1 of that class.
    """
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    classes = [positive_class] if positive_class is not None else range(n_c)
    scores = []
    for c in classes:
        tp = int(((pred == c) & (labels == c)).sum())
        fp = int(((pred == c) & (labels != c)).sum())
        fn = int(((pred != c) & (labels == c)).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * precision * recall / (precision + recall)
                      if precision + recall else 0.0)
    return float(np.mean(scores))


def rmse_mae(scores: Array, targets: Array) -> tuple[float, float]:
    """Computed over all (sample, concept) entries."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if scores.shape != targets.shape:
        raise UndefinedMetricError(
            f"shape mismatch {scores.shape} vs {targets.shape}"
        )
    err = scores - targets
    return float(np.sqrt((err * err).mean())), float(np.abs(err).mean())


@dataclass
class MetricReport:
    diagnosis: dict      # auc, acc, macro_f1
    concepts: dict       # per_concept list + macro averages

    def flat(self) -> dict:
        out = {f"diag_{k}": v for k, v in self.diagnosis.items()}
        for k, v in self.concepts.items():
            if k != "per_concept":
                out[f"concept_{k}"] = v
        return out

    def to_dict(self) -> dict:
        return {"diagnosis": self.diagnosis, "concepts": self.concepts}


def evaluate(probs: Array, labels: Array, concept_scores: Array,
             concept_targets: Array, task: str, n_c: int) -> MetricReport:
    """Full report for one evaluation set from raw model outputs."""
    pred = np.asarray(probs).argmax(axis=1)
    diagnosis = {
        "auc": multiclass_auc(probs, labels),
        "acc": accuracy(pred, labels),
        "macro_f1": macro_f1(pred, labels, n_c),
    }
    per_concept = []
    if task == "classification":
        aucs, accs = [], []
        for j in range(concept_scores.shape[1]):
            s = concept_scores[:, j]
            t = concept_targets[:, j]
            try:
                a = auc(s, t)
                aucs.append(a)
            except UndefinedMetricError:
                a = None
            # threshold sigmoid(score) at 0.5, i.e. raw score at 0
            acc_j = accuracy((s > 0.0).astype(int), t.astype(int))
            accs.append(acc_j)
            per_concept.append({"auc": a, "acc": acc_j})
        concepts = {
            "per_concept": per_concept,
            "macro_auc": float(np.mean(aucs)) if aucs else None,
            "macro_acc": float(np.mean(accs)),
        }
    else:
        for j in range(concept_scores.shape[1]):
            r, m = rmse_mae(concept_scores[:, j], concept_targets[:, j])
            per_concept.append({"rmse": r, "mae": m})
        r_all, m_all = rmse_mae(concept_scores, concept_targets)
        concepts = {"per_concept": per_concept, "rmse": r_all, "mae": m_all}
    return MetricReport(diagnosis=diagnosis, concepts=concepts)


def sigmoid_scores(scores: Array) -> Array:
    return nk.sigmoid_np(scores)
