"""Adam training of the joint objective with early stopping and grid search."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .data import Dataset, stratified_kfold
from .errors import ConfigError, DimensionError, DivergenceError
from .losses import LossBreakdown, LossWeights
from .metrics import accuracy, multiclass_auc
from .model import (CcbmParams, ConceptBank, ModelConfig, forward_nodes,
                    init_params, make_param_nodes, predict_batch)
from .numkernel import Array, Tape


@dataclass
class TrainConfig:
    model: ModelConfig
    weights: LossWeights = field(default_factory=LossWeights)
    max_epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    early_stop_window: int = 10
    early_stop_tol: float = 1e-4
    seed: int = 0
    sim_squared: bool = True
    mean_reduction: bool = False

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.early_stop_window < 2:
            raise ConfigError("early_stop_window must be >= 2")


@dataclass
class TrainHistory:
    epochs: list[LossBreakdown] = field(default_factory=list)
    val_auc: list[float | None] = field(default_factory=list)
    val_acc: list[float | None] = field(default_factory=list)
    stopped_epoch: int = 0
    wall_time: float = 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "total", "ce", "cep", "sim", "val_auc", "val_acc"])
            for e, bd in enumerate(self.epochs, start=1):
                w.writerow([
                    e, repr(bd.total), repr(bd.ce_term), repr(bd.concept_term),
                    repr(bd.similarity_term),
                    "" if self.val_auc[e - 1] is None else repr(self.val_auc[e - 1]),
                    "" if self.val_acc[e - 1] is None else repr(self.val_acc[e - 1]),
                ])


@dataclass
class AdamState:
    m: dict[str, Array]
    v: dict[str, Array]
    t: int = 0

    @classmethod
    def for_params(cls, named: dict[str, Array]) -> "AdamState":
        return cls(m={k: np.zeros_like(a) for k, a in named.items()},
                   v={k: np.zeros_like(a) for k, a in named.items()})


def adam_step(params: dict[str, Array], grads: dict[str, Array],
              state: AdamState, lr: float, beta1: float, beta2: float,
              eps: float, t: int) -> tuple[dict[str, Array], AdamState]:
    """Bias-corrected Adam update applied in the canonical parameter order."""
    if t < 1:
        raise ConfigError("Adam step index t must be >= 1")
    for name in params:
        g = grads[name]
        if g.shape != params[name].shape:
            raise DimensionError(
                f"gradient shape {g.shape} vs param {name} {params[name].shape}"
            )
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1 ** t)
        v_hat = state.v[name] / (1.0 - beta2 ** t)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    state.t = t
    return params, state


def batch_loss_and_grads(params: CcbmParams, x: Array, concept_targets: Array,
                         labels: Array, bank: ConceptBank, config: TrainConfig
                         ) -> tuple[LossBreakdown, dict[str, Array]]:
    """One tape pass: forward, joint loss, reverse sweep."""
    mc = config.model
    tape = Tape()
    pnodes = make_param_nodes(tape, params)
    fwd = forward_nodes(tape, tape.constant(x), pnodes, bank, mc)

    n = x.shape[0]
    onehot = np.zeros((n, mc.n_c))
    onehot[np.arange(n), labels] = 1.0
    ce = nk.cross_entropy_with_logits(fwd.logits, onehot)
    if mc.concept_task == "classification":
        cep = nk.bce_with_logits(fwd.scores_known, concept_targets)
    else:
        cep = nk.mse_mean(fwd.scores_known, concept_targets)

    l1 = config.weights.lambda1
    terms, coeffs = [ce, cep], [l1, 1.0]
    if config.mean_reduction:
        coeffs = [l1 / n, 1.0 / n if mc.concept_task == "classification" else 1.0]
    sim_value = 0.0
    if mc.n_u > 0:
        sim = nk.cosine_penalty(fwd.unknown_embeddings, bank.embeddings,
                                squared=config.sim_squared)
        terms.append(sim)
        coeffs.append(config.weights.lambda2)
        sim_value = float(sim.value)
    total = nk.weighted_sum(terms, coeffs)
    tape.backward(total)

    grads = {name: node.grad for name, node in pnodes.items()}
    ce_val, cep_val = float(ce.value), float(cep.value)
    if config.mean_reduction:
        ce_val /= n
        if mc.concept_task == "classification":
            cep_val /= n
    return LossBreakdown.combine(ce_val, cep_val, sim_value, config.weights), grads


def train(dataset: Dataset, bank: ConceptBank, config: TrainConfig,
          val_dataset: Dataset | None = None,
          init: CcbmParams | None = None) -> tuple[CcbmParams, TrainHistory]:
    """Mini-batch Adam on the joint objective; deterministic per seed.

    Early stopping watches the mean per-sample training loss: once the
    relative spread over the trailing window drops below the tolerance,
    training stops.
    """
    t0 = time.perf_counter()
    mc = config.model
    params = (init or init_params(mc, config.seed)).copy()
    named = params.named_arrays()
    state = AdamState.for_params(named)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    n = len(dataset)
    step = 0
    epoch_means: list[float] = []

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)  # ce, cep, sim accumulated per batch
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            bd, grads = batch_loss_and_grads(
                params, dataset.features[idx], dataset.concepts[idx],
                dataset.labels[idx], bank, config,
            )
            if not np.isfinite(bd.total):
                raise DivergenceError(epoch)
            step += 1
            adam_step(named, grads, state, config.lr, config.beta1,
                      config.beta2, config.eps, step)
            sums += (bd.ce_term, bd.concept_term, bd.similarity_term)

        n_batches = -(-n // config.batch_size)
        # similarity and any mean-reduced term are per-batch values; average
        # them, keep summed terms as epoch sums
        if config.mean_reduction:
            epoch_bd = LossBreakdown.combine(
                sums[0] / n_batches, sums[1] / n_batches, sums[2] / n_batches,
                config.weights)
        else:
            epoch_bd = LossBreakdown.combine(
                sums[0], sums[1], sums[2] / n_batches, config.weights)
        history.epochs.append(epoch_bd)

        if val_dataset is not None and len(val_dataset):
            _, _, _, probs = predict_batch(val_dataset.features, params, bank, mc)
            history.val_auc.append(multiclass_auc(probs, val_dataset.labels))
            history.val_acc.append(
                accuracy(probs.argmax(axis=1), val_dataset.labels))
        else:
            history.val_auc.append(None)
            history.val_acc.append(None)

        epoch_means.append(epoch_bd.total / n)
        history.stopped_epoch = epoch
        w = config.early_stop_window
        if len(epoch_means) >= w:
            window = epoch_means[-w:]
            spread = max(window) - min(window)
            if spread < config.early_stop_tol * max(abs(window[-1]), 1e-12):
                break

    history.wall_time = time.perf_counter() - t0
    return params, history


@dataclass
class GridSearchResult:
    best: LossWeights
    table: list[dict]


def grid_search(dataset: Dataset, bank: ConceptBank, base: TrainConfig,
                lambda1_grid: list[float], lambda2_grid: list[float],
                k: int = 5) -> GridSearchResult:
    """K-fold mean validation diagnosis AUC per cell; ties prefer smaller
    lambda2, then smaller lambda1."""
    if not lambda1_grid or not lambda2_grid:
        raise ConfigError("grids must be non-empty")
    folds = stratified_kfold(dataset.labels, k, base.seed)
    table = []
    for l1 in lambda1_grid:
        for l2 in lambda2_grid:
            cfg = TrainConfig(
                model=base.model, weights=LossWeights(l1, l2),
                max_epochs=base.max_epochs, batch_size=base.batch_size,
                lr=base.lr, beta1=base.beta1, beta2=base.beta2, eps=base.eps,
                early_stop_window=base.early_stop_window,
                early_stop_tol=base.early_stop_tol, seed=base.seed,
                sim_squared=base.sim_squared, mean_reduction=base.mean_reduction,
            )
            aucs = []
            for train_idx, test_idx in folds:
                try:
                    params, _ = train(dataset.subset(train_idx), bank, cfg)
                    _, _, _, probs = predict_batch(
                        dataset.features[test_idx], params, bank, cfg.model)
                    aucs.append(multiclass_auc(probs, dataset.labels[test_idx]))
                except DivergenceError:
                    aucs.append(float("-inf"))
            mean_auc = float(np.mean(aucs))
            table.append({"lambda1": l1, "lambda2": l2, "mean_val_auc": mean_auc})
    best_row = max(
        table,
        key=lambda r: (
            r["mean_val_auc"] if np.isfinite(r["mean_val_auc"]) else -np.inf,
            -r["lambda2"], -r["lambda1"],
        ),
    )
    return GridSearchResult(
        best=LossWeights(best_row["lambda1"], best_row["lambda2"]), table=table)
