"""Concept-bottleneck classifier with a learnable unknown-concept complement
branch, cross-attention concept scoring, hand-written backpropagation, and
experiment harnesses for intervention, label efficiency, and ablations."""

from .data import (Dataset, DatasetMeta, FeatureRecord, SynthSpec,
                   kfold_split, load_concept_bank, load_dataset,
                   stratified_kfold, subsample_proportion, synth_generate)
from .losses import (LossBreakdown, LossWeights, classification_loss,
                     concept_bce_loss, concept_mse_loss, similarity_penalty,
                     total_loss)
from .metrics import MetricReport, accuracy, auc, evaluate, macro_f1, rmse_mae
from .model import (CcbmParams, ConceptBank, ExplanationReport, ForwardTrace,
                    ModelConfig, cross_attention, diagnose,
                    encode_known_queries, explain, init_params,
                    known_concept_scores, load_checkpoint, predict_batch,
                    save_checkpoint, unknown_concept_scores)
from .numkernel import Tape, grad_check, linear_apply, softmax_rows_np
from .trainer import AdamState, TrainConfig, TrainHistory, adam_step, grid_search, train

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
