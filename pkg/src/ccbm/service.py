"""Stateless inference and intervention service over a frozen checkpoint.

Endpoints:
  GET  /model/meta      model config plus concept and class names
  GET  /samples?limit=N sample ids with true labels
  GET  /explain/{id}    full explanation report for one sample
  POST /intervene       override concept scores, re-run the decision layer

Interventions recompute only the affine decision layer: override values
replace entries of the concatenated score vector verbatim, so a delta on
one score moves each class logit by exactly the corresponding decision
weight times the delta.
"""

from __future__ import annotations

import json

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .data import Dataset
from .model import (CcbmParams, ConceptBank, ModelConfig, apply_decision,
                    diagnose, explain, load_checkpoint, unknown_concept_names)
from .numkernel import softmax_rows_np


class InterventionRequest(BaseModel):
    sample_id: str
    overrides: dict[str, float] = Field(default_factory=dict)
    include_unknown: bool = False


class ModelBundle:
    """Immutable model plus sample index served by the app."""

    def __init__(self, params: CcbmParams, config: ModelConfig,
                 bank: ConceptBank, class_names: list[str], dataset: Dataset):
        self.params = params
        self.config = config
        self.bank = bank
        self.class_names = class_names
        self.dataset = dataset
        self.index = {sid: i for i, sid in enumerate(dataset.ids)}

    @classmethod
    def from_checkpoint(cls, checkpoint_path, dataset: Dataset) -> "ModelBundle":
        params, config, bank, class_names, _ = load_checkpoint(checkpoint_path)
        if dataset.meta.d != config.d or dataset.meta.n_k != config.n_k:
            raise ValueError(
                f"dataset shape (d={dataset.meta.d}, n_k={dataset.meta.n_k}) "
                f"does not match checkpoint (d={config.d}, n_k={config.n_k})"
            )
        return cls(params, config, bank, class_names, dataset)


def export_decision_layer(checkpoint_path, out_path) -> dict:
    """Write the decision layer as JSON for client-side recomputation."""
    params, config, bank, class_names, _ = load_checkpoint(checkpoint_path)
    w, b = params.decision
    doc = {
        "decision_weights": w.tolist(),   # (n_k + n_u) rows x n_c
        "decision_bias": b.tolist(),
        "concept_names": list(bank.names),
        "unknown_names": unknown_concept_names(config.n_u),
        "class_names": list(class_names),
        "score_scale": {
            "decision_input": "raw",
            "display": ("sigmoid" if config.concept_task == "classification"
                        else "raw"),
        },
        "concept_task": config.concept_task,
    }
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2)
    return doc


def create_app(bundle: ModelBundle) -> FastAPI:
    app = FastAPI(title="ccbm intervention service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"],
    )
    cfg = bundle.config
    all_names = list(bundle.bank.names) + unknown_concept_names(cfg.n_u)

    @app.get("/model/meta")
    def model_meta():
        return {
            "config": cfg.to_dict(),
            "concept_names": list(bundle.bank.names),
            "unknown_names": unknown_concept_names(cfg.n_u),
            "class_names": list(bundle.class_names),
            "n_samples": len(bundle.dataset),
        }

    @app.get("/samples")
    def samples(limit: int = 50):
        ds = bundle.dataset
        out = []
        for sid in ds.ids[:limit]:
            i = bundle.index[sid]
            out.append({"id": sid, "label": int(ds.labels[i]),
                        "label_name": bundle.class_names[int(ds.labels[i])]})
        return {"samples": out}

    def _explain(sample_id: str):
        if sample_id not in bundle.index:
            raise HTTPException(status_code=404,
                                detail=f"unknown sample id {sample_id!r}")
        i = bundle.index[sample_id]
        return explain(
            bundle.dataset.features[i], bundle.params, bundle.bank, cfg,
            bundle.class_names, bundle.bank.names, sample_id=sample_id,
            true_label=int(bundle.dataset.labels[i]),
        )

    @app.get("/explain/{sample_id}")
    def explain_endpoint(sample_id: str):
        report = _explain(sample_id).to_dict()
        i = bundle.index[sample_id]
        report["concept_truth"] = [float(v) for v in bundle.dataset.concepts[i]]
        return report

    @app.post("/intervene")
    def intervene(req: InterventionRequest):
        if req.sample_id not in bundle.index:
            raise HTTPException(status_code=404,
                                detail=f"unknown sample id {req.sample_id!r}")
        allowed = all_names if req.include_unknown else list(bundle.bank.names)
        for name, value in req.overrides.items():
            if name not in allowed:
                raise HTTPException(
                    status_code=400,
                    detail=f"override names unknown concept {name!r}")
            if not np.isfinite(value):
                raise HTTPException(
                    status_code=400,
                    detail=f"override for {name!r} is not finite")
            if cfg.concept_task == "classification" and not (0.0 <= value <= 1.0):
                raise HTTPException(
                    status_code=400,
                    detail=f"override for {name!r} must lie in [0, 1]")

        i = bundle.index[req.sample_id]
        trace = diagnose(bundle.dataset.features[i], bundle.params,
                         bundle.bank, cfg)
        combined = np.concatenate([trace.s_scores, trace.l_scores])
        for name, value in req.overrides.items():
            combined[all_names.index(name)] = value
        logits = apply_decision(combined, bundle.params)[0]
        probs = softmax_rows_np(logits[None, :])[0]
        w, _ = bundle.params.decision

        def contributions(scores, pred):
            return [{"name": all_names[j],
                     "contribution": float(w[j, pred]) * float(scores[j])}
                    for j in range(len(all_names))]

        orig_pred = int(np.argmax(trace.probs))
        new_pred = int(np.argmax(probs))
        return {
            "sample_id": req.sample_id,
            "original": {
                "probs": [float(p) for p in trace.probs],
                "logits": [float(v) for v in trace.logits],
                "predicted_class": orig_pred,
                "predicted_class_name": bundle.class_names[orig_pred],
                "contributions": contributions(
                    np.concatenate([trace.s_scores, trace.l_scores]), orig_pred),
            },
            "intervened": {
                "probs": [float(p) for p in probs],
                "logits": [float(v) for v in logits],
                "predicted_class": new_pred,
                "predicted_class_name": bundle.class_names[new_pred],
                "contributions": contributions(combined, new_pred),
                "scores": [float(v) for v in combined],
            },
        }

    return app
