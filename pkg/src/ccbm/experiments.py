"""Experiment harnesses: cross-validation, inference-time intervention,
label efficiency, unknown-concept sweep, and the similarity-loss ablation.

Every harness returns an ``ExperimentReport`` whose rows carry full
provenance (setting, fold, seed) and whose ``write`` method emits
``report.json``, ``report.csv``, a plot-data CSV, and a rendered figure.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, stratified_kfold, subsample_proportion
from .errors import ConfigError
from .metrics import evaluate
from .model import (CcbmParams, ConceptBank, ModelConfig, apply_decision,
                    display_scores, predict_batch)
from .numkernel import Array, softmax_rows_np
from .trainer import TrainConfig, train


@dataclass
class ExperimentReport:
    experiment_id: str
    rows: list[dict]            # one per (setting, fold)
    aggregates: list[dict]      # one per setting, mean/std over folds
    config_snapshot: dict
    x_key: str = "setting"
    metric_keys: list[str] = field(default_factory=lambda: ["diag_auc", "diag_acc"])

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "rows": self.rows,
            "aggregates": self.aggregates,
            "config": self.config_snapshot,
        }

    def write(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        _write_csv(os.path.join(out_dir, "report.csv"), self.rows)
        _write_csv(os.path.join(out_dir, "plot_data.csv"), self.aggregates)
        if self.aggregates:
            from .plots import plot_setting_curve
            keys = [k for k in self.metric_keys
                    if f"{k}_mean" in self.aggregates[0]]
            if keys:
                plot_setting_curve(
                    self.aggregates, self.x_key, keys, self.experiment_id,
                    os.path.join(out_dir, "report.png"))


def _write_csv(path, rows: list[dict]) -> None:
    if not rows:
        with open(path, "w", encoding="utf-8") as f:
            f.write("")
        return
    keys: list[str] = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def aggregate_rows(rows: list[dict], by: str, metric_keys: list[str]) -> list[dict]:
    """Mean and population std per setting, recomputable from the rows."""
    out = []
    for setting in dict.fromkeys(r[by] for r in rows):
        group = [r for r in rows if r[by] == setting]
        agg = {by: setting, "n_folds": len(group)}
        for key in metric_keys:
            vals = [r[key] for r in group if r.get(key) is not None]
            if vals:
                agg[f"{key}_mean"] = float(np.mean(vals))
                agg[f"{key}_std"] = float(np.std(vals))
        out.append(agg)
    return out


METRIC_KEYS = ["diag_auc", "diag_acc", "diag_macro_f1",
               "concept_macro_auc", "concept_macro_acc",
               "concept_rmse", "concept_mae"]


def _fold_row(dataset: Dataset, bank: ConceptBank, config: TrainConfig,
              train_idx: Array, test_idx: Array, fold: int, setting) -> dict:
    params, history = train(dataset.subset(train_idx), bank, config)
    test = dataset.subset(test_idx)
    s, _, _, probs = predict_batch(test.features, params, bank, config.model)
    report = evaluate(probs, test.labels, s, test.concepts,
                      config.model.concept_task, config.model.n_c)
    row = {"setting": setting, "fold": fold, "seed": config.seed,
           "train_size": len(train_idx), "test_size": len(test_idx),
           "stopped_epoch": history.stopped_epoch}
    for k in METRIC_KEYS:
        row[k] = report.flat().get(k)
    return row


def crossval_evaluate(dataset: Dataset, bank: ConceptBank, config: TrainConfig,
                      k: int = 5) -> ExperimentReport:
    folds = stratified_kfold(dataset.labels, k, config.seed)
    rows = [
        _fold_row(dataset, bank, config, tr, te, fold, "crossval")
        for fold, (tr, te) in enumerate(folds)
    ]
    return ExperimentReport(
        experiment_id="crossval",
        rows=rows,
        aggregates=aggregate_rows(rows, "setting", METRIC_KEYS),
        config_snapshot=_snapshot(config, k=k),
    )


def intervene_scores(s: Array, l: Array, params: CcbmParams,
                     config: ModelConfig, threshold: float,
                     include_unknown: bool = False) -> tuple[Array, Array]:
    """Zero every concept score whose display-scale value surpasses the
    threshold, then re-run only the decision layer.

    Returns (intervened [S, L] batch, logits).
    """
    s = np.array(s, dtype=np.float64, copy=True)
    l = np.array(l, dtype=np.float64, copy=True)
    disp = display_scores(s, config)
    s[disp > threshold] = 0.0
    if include_unknown and l.size:
        l[l > threshold] = 0.0
    combined = np.concatenate([s, l], axis=1)
    return combined, apply_decision(combined, params)


def run_intervention(params: CcbmParams, bank: ConceptBank, config: ModelConfig,
                     test: Dataset, thresholds: list[float] | None = None,
                     include_unknown: bool = False) -> ExperimentReport:
    s, l, _, _ = predict_batch(test.features, params, bank, config)
    if thresholds is None:
        disp = display_scores(s, config)
        qs = np.linspace(0.1, 0.9, 8)
        thresholds = [float(np.quantile(disp, q)) for q in qs]
    thresholds = list(thresholds)
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ConfigError("intervention thresholds must be ascending")

    rows = []
    # baseline goes through the same decision-layer path so a no-op
    # threshold reproduces it bit-exactly
    base_combined, base_logits = intervene_scores(
        s, l, params, config, float("inf"), include_unknown)
    rows.append(_intervention_row("baseline", base_combined, base_logits,
                                  test, config))
    for t in thresholds:
        combined, logits = intervene_scores(s, l, params, config, t,
                                            include_unknown)
        rows.append(_intervention_row(t, combined, logits, test, config))
    return ExperimentReport(
        experiment_id="intervention",
        rows=rows,
        aggregates=[{**r, "diag_auc_mean": r["diag_auc"],
                     "diag_acc_mean": r["diag_acc"]} for r in rows],
        config_snapshot={"model": config.to_dict(),
                         "thresholds": thresholds,
                         "include_unknown": include_unknown},
        x_key="setting",
    )


def _intervention_row(setting, combined: Array, logits: Array, test: Dataset,
                      config: ModelConfig) -> dict:
    probs = softmax_rows_np(logits)
    s_part = combined[:, :config.n_k]
    report = evaluate(probs, test.labels, s_part, test.concepts,
                      config.concept_task, config.n_c)
    row = {"setting": setting, "n_zeroed": int((combined == 0.0).sum())}
    for k in METRIC_KEYS:
        row[k] = report.flat().get(k)
    return row


def run_label_efficiency(dataset: Dataset, bank: ConceptBank,
                         config: TrainConfig,
                         proportions=(1.0, 0.7, 0.5, 0.3, 0.1),
                         k: int = 5) -> ExperimentReport:
    if any(not (0.0 < p <= 1.0) for p in proportions):
        raise ConfigError("proportions must lie in (0, 1]")
    folds = stratified_kfold(dataset.labels, k, config.seed)
    rows = []
    for p in proportions:
        for fold, (tr, te) in enumerate(folds):
            sub = subsample_proportion(tr, p, seed=config.seed + fold,
                                       labels=dataset.labels[tr])
            row = _fold_row(dataset, bank, config, sub, te, fold, p)
            rows.append(row)
    return ExperimentReport(
        experiment_id="label_efficiency",
        rows=rows,
        aggregates=aggregate_rows(rows, "setting", METRIC_KEYS),
        config_snapshot=_snapshot(config, k=k, proportions=list(proportions)),
    )


def run_unknown_sweep(dataset: Dataset, bank: ConceptBank, base: TrainConfig,
                      n_u_values=(0, 1, 2, 3, 5), k: int = 5) -> ExperimentReport:
    if any(v < 0 for v in n_u_values):
        raise ConfigError("n_u values must be >= 0")
    rows = []
    for n_u in n_u_values:
        mc = ModelConfig(**{**base.model.to_dict(), "n_u": int(n_u),
                            "d_u": base.model.d_k})
        cfg = replace(base, model=mc)
        folds = stratified_kfold(dataset.labels, k, cfg.seed)
        for fold, (tr, te) in enumerate(folds):
            rows.append(_fold_row(dataset, bank, cfg, tr, te, fold, int(n_u)))
    return ExperimentReport(
        experiment_id="unknown_sweep",
        rows=rows,
        aggregates=aggregate_rows(rows, "setting", METRIC_KEYS),
        config_snapshot=_snapshot(base, k=k, n_u_values=list(n_u_values)),
    )


def mean_abs_cosines(unknown_emb: Array, known_emb: Array) -> dict:
    """Mean pairwise |cos| among unknown rows and between unknown and known."""
    def unit(m):
        return m / np.sqrt((m * m).sum(axis=1, keepdims=True))

    u = unit(np.asarray(unknown_emb, dtype=np.float64))
    kk = unit(np.asarray(known_emb, dtype=np.float64))
    uu = np.abs(u @ u.T)
    n_u = u.shape[0]
    pairs = [uu[i, j] for i in range(n_u) for j in range(i + 1, n_u)]
    uk = np.abs(u @ kk.T)
    return {
        "mean_abs_cos_unknown_unknown": float(np.mean(pairs)) if pairs else 0.0,
        "mean_abs_cos_unknown_known": float(uk.mean()),
    }


def run_ablation_similarity(dataset: Dataset, bank: ConceptBank,
                            config: TrainConfig, k: int = 5) -> ExperimentReport:
    if config.model.n_u < 1:
        raise ConfigError("similarity ablation needs n_u >= 1")
    rows = []
    for setting, l2 in (("with_sim", config.weights.lambda2), ("without_sim", 0.0)):
        cfg = replace(config, weights=replace(config.weights, lambda2=l2))
        folds = stratified_kfold(dataset.labels, k, cfg.seed)
        for fold, (tr, te) in enumerate(folds):
            params, history = train(dataset.subset(tr), bank, cfg)
            test = dataset.subset(te)
            s, _, _, probs = predict_batch(test.features, params, bank, cfg.model)
            report = evaluate(probs, test.labels, s, test.concepts,
                              cfg.model.concept_task, cfg.model.n_c)
            row = {"setting": setting, "fold": fold, "seed": cfg.seed,
                   "lambda2": l2, "stopped_epoch": history.stopped_epoch,
                   "final_sim_term": history.epochs[-1].similarity_term}
            for key in METRIC_KEYS:
                row[key] = report.flat().get(key)
            row.update(mean_abs_cosines(params.unknown_embeddings,
                                        bank.embeddings))
            rows.append(row)
    keys = METRIC_KEYS + ["mean_abs_cos_unknown_unknown",
                          "mean_abs_cos_unknown_known"]
    return ExperimentReport(
        experiment_id="similarity_ablation",
        rows=rows,
        aggregates=aggregate_rows(rows, "setting", keys),
        config_snapshot=_snapshot(config, k=k),
    )


def _snapshot(config: TrainConfig, **extra) -> dict:
    snap = {
        "model": config.model.to_dict(),
        "weights": {"lambda1": config.weights.lambda1,
                    "lambda2": config.weights.lambda2},
        "max_epochs": config.max_epochs, "batch_size": config.batch_size,
        "lr": config.lr, "seed": config.seed,
        "early_stop_window": config.early_stop_window,
        "early_stop_tol": config.early_stop_tol,
    }
    snap.update(extra)
    return snap
