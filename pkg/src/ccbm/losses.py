"""Training objectives: diagnosis cross-entropy, concept detection loss,
and the cosine redundancy penalty on unknown embeddings.

The cross-entropy and multi-label losses are summed over the batch (no
1/n); the regression loss carries 1/n. Batch-mean reduction for the summed
losses is available via ``mean_reduction`` because summed losses couple the
balance weights to batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .errors import ConfigError, DataFormatError
from .model import CcbmParams, ConceptBank, ModelConfig
from .numkernel import Array

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.2
    lambda2: float = 10.0

    def __post_init__(self):
        if not (np.isfinite(self.lambda1) and np.isfinite(self.lambda2)):
            raise ConfigError("loss weights must be finite")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    ce_term: float
    concept_term: float
    similarity_term: float

    @staticmethod
    def combine(ce: float, cep: float, sim: float,
                weights: LossWeights) -> "LossBreakdown":
        return LossBreakdown(
            total=weights.lambda1 * ce + cep + weights.lambda2 * sim,
            ce_term=ce, concept_term=cep, similarity_term=sim,
        )


def classification_loss(probs: Array, labels: Array) -> float:
    """Summed cross-entropy over predicted class probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n, n_c = probs.shape
    if labels.min() < 0 or labels.max() >= n_c:
        raise DataFormatError(
            f"label out of range [0, {n_c}): {int(labels.min())}..{int(labels.max())}"
        )
    picked = probs[np.arange(n), labels]
    return float(-np.log(np.maximum(picked, LOG_CLAMP)).sum())


def concept_bce_loss(scores: Array, targets: Array) -> float:
    """Summed multi-label cross-entropy on sigmoid(score), stable logit form."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if not np.isin(targets, (0.0, 1.0)).all():
        raise DataFormatError("binary concept targets must be 0 or 1")
    return float(
        (np.maximum(scores, 0.0) - scores * targets
         + np.log1p(np.exp(-np.abs(scores)))).sum()
    )


def concept_bce_loss_naive(scores: Array, targets: Array) -> float:
    """Direct sigmoid-then-log form; reference only, saturates for large |s|."""
    s = nk.sigmoid_np(scores)
    targets = np.asarray(targets, dtype=np.float64)
    return float(-(targets * np.log(s) + (1.0 - targets) * np.log(1.0 - s)).sum())


def concept_mse_loss(scores: Array, targets: Array) -> float:
    """Squared error summed over concepts, averaged over samples."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = scores.shape[0]
    return float(((scores - targets) ** 2).sum() / n)


def similarity_penalty(unknown_emb: Array, known_emb: Array,
                       squared: bool = True) -> float:
    """Sum over unknown rows of cosine similarity to the other unknown rows
    (ordered pairs) and to every known row. ``squared`` selects cos^2."""
    unknown_emb = np.asarray(unknown_emb, dtype=np.float64)
    known_emb = np.asarray(known_emb, dtype=np.float64)
    if unknown_emb.shape[0] == 0:
        return 0.0
    tape = nk.Tape()
    node = nk.cosine_penalty(tape.leaf(unknown_emb), known_emb, squared=squared)
    return float(node.value)


def total_loss(probs: Array, concept_scores: Array, labels: Array,
               concept_targets: Array, weights: LossWeights,
               config: ModelConfig, params: CcbmParams,
               bank: ConceptBank, sim_squared: bool = True,
               mean_reduction: bool = False) -> LossBreakdown:
    """Assemble the joint objective from a forward-pass batch."""
    n = probs.shape[0]
    ce = classification_loss(probs, labels)
    if config.concept_task == "classification":
        cep = concept_bce_loss(concept_scores, concept_targets)
    else:
        cep = concept_mse_loss(concept_scores, concept_targets)
    if mean_reduction:
        ce /= n
        if config.concept_task == "classification":
            cep /= n
    if config.n_u > 0:
        sim = similarity_penalty(params.unknown_embeddings, bank.embeddings,
                                 squared=sim_squared)
    else:
        sim = 0.0
    return LossBreakdown.combine(ce, cep, sim, weights)
