import math

import numpy as np
import pytest

import oracles
from conftest import random_bank, tiny_config
from ccbm.data import Dataset
from ccbm.errors import ConfigError, DataFormatError, DegenerateEmbeddingError
from ccbm.losses import (LossBreakdown, LossWeights, classification_loss,
                         concept_bce_loss, concept_bce_loss_naive,
                         concept_mse_loss, similarity_penalty, total_loss)
from ccbm.model import init_params, predict_batch


class TestClassificationLoss:
    def test_perfect_prediction_is_zero(self):
        probs = np.eye(3)[[0, 1, 2]]
        assert classification_loss(probs, [0, 1, 2]) == 0.0

    def test_uniform_probs(self):
        probs = np.full((5, 4), 0.25)
        assert classification_loss(probs, [0, 1, 2, 3, 0]) == pytest.approx(
            5 * math.log(4), abs=1e-12)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(3), size=10)
        labels = rng.integers(0, 3, 10)
        assert classification_loss(probs, labels) == pytest.approx(
            oracles.ce_loss(probs, labels), abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(DataFormatError):
            classification_loss(np.full((1, 2), 0.5), [2])


class TestConceptBceLoss:
    def test_saturation_limit(self):
        assert concept_bce_loss(np.array([[20.0]]), np.array([[1.0]])) <= 1e-6

    def test_zero_scores(self):
        n, n_k = 4, 3
        assert concept_bce_loss(np.zeros((n, n_k)), np.ones((n, n_k))) == \
            pytest.approx(n * n_k * math.log(2), abs=1e-12)

    def test_matches_naive_oracle_at_moderate_scores(self):
        rng = np.random.default_rng(1)
        scores = rng.uniform(-5, 5, (6, 4))
        targets = rng.integers(0, 2, (6, 4)).astype(float)
        assert concept_bce_loss(scores, targets) == pytest.approx(
            oracles.bce_loss_naive(scores, targets), abs=1e-9)

    def test_stable_equals_naive_within_window(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(-10, 10, (5, 5))
        targets = rng.integers(0, 2, (5, 5)).astype(float)
        assert abs(concept_bce_loss(scores, targets)
                   - concept_bce_loss_naive(scores, targets)) <= 1e-9

    def test_non_binary_target_rejected(self):
        with pytest.raises(DataFormatError):
            concept_bce_loss(np.zeros((1, 2)), np.array([[0.5, 1.0]]))


class TestConceptMseLoss:
    def test_zero_at_equality(self):
        s = np.random.default_rng(0).uniform(0, 1, (3, 8))
        assert concept_mse_loss(s, s) == 0.0

    def test_constant_half_error_with_eight_concepts(self):
        for n in (1, 5, 17):
            scores = np.full((n, 8), 0.75)
            targets = np.full((n, 8), 0.25)
            assert concept_mse_loss(scores, targets) == pytest.approx(2.0, abs=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        s = rng.uniform(-1, 2, (7, 4))
        t = rng.uniform(0, 1, (7, 4))
        assert concept_mse_loss(s, t) == pytest.approx(
            oracles.mse_loss(s, t), abs=1e-12)


class TestSimilarityPenalty:
    def test_orthogonal_rows_give_zero(self):
        unknown = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
        known = np.array([[0, 0, 1.0, 0], [0, 0, 0, 1.0]])
        assert similarity_penalty(unknown, known) == pytest.approx(0.0, abs=1e-15)

    def test_identical_rows_both_ordered_pairs(self):
        unknown = np.array([[1.0, 2.0], [1.0, 2.0]])
        assert similarity_penalty(unknown, np.zeros((0, 2))) == pytest.approx(
            2.0, abs=1e-12)

    def test_matches_pairwise_loop_oracle(self):
        rng = np.random.default_rng(4)
        unknown = rng.standard_normal((3, 5))
        known = rng.standard_normal((4, 5))
        for squared in (True, False):
            assert similarity_penalty(unknown, known, squared=squared) == \
                pytest.approx(oracles.sim_penalty(unknown, known, squared),
                              abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(5)
        unknown = rng.standard_normal((2, 4))
        known = rng.standard_normal((3, 4))
        base = similarity_penalty(unknown, known)
        scaled = unknown.copy()
        scaled[0] *= 7.5
        assert similarity_penalty(scaled, known) == pytest.approx(base, abs=1e-12)

    def test_zero_norm_row_rejected(self):
        with pytest.raises(DegenerateEmbeddingError):
            similarity_penalty(np.zeros((1, 3)), np.ones((1, 3)))

    def test_empty_unknowns_zero(self):
        assert similarity_penalty(np.zeros((0, 3)), np.ones((2, 3))) == 0.0


class TestLossWeights:
    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(-0.1, 1.0)

    def test_paper_setting_expressible(self):
        w = LossWeights(0.2, 10.0)
        assert (w.lambda1, w.lambda2) == (0.2, 10.0)


class TestTotalLoss:
    def _setup(self, task="classification", n_u=2):
        cfg = tiny_config(task=task, n_u=n_u)
        params = init_params(cfg, 0)
        bank = random_bank(cfg)
        rng = np.random.default_rng(6)
        x = rng.standard_normal((5, cfg.d))
        labels = rng.integers(0, cfg.n_c, 5)
        if task == "classification":
            targets = rng.integers(0, 2, (5, cfg.n_k)).astype(float)
        else:
            targets = rng.uniform(0, 1, (5, cfg.n_k))
        s, _, _, probs = predict_batch(x, params, bank, cfg)
        return cfg, params, bank, probs, s, labels, targets

    def test_zero_weights_leave_concept_term(self):
        cfg, params, bank, probs, s, labels, targets = self._setup()
        bd = total_loss(probs, s, labels, targets, LossWeights(0.0, 0.0),
                        cfg, params, bank)
        assert bd.total == pytest.approx(bd.concept_term, abs=1e-12)

    def test_recomposition_identity(self):
        for task in ("classification", "regression"):
            cfg, params, bank, probs, s, labels, targets = self._setup(task)
            w = LossWeights(0.2, 10.0)
            bd = total_loss(probs, s, labels, targets, w, cfg, params, bank)
            assert bd.total == pytest.approx(
                0.2 * bd.ce_term + bd.concept_term + 10.0 * bd.similarity_term,
                abs=1e-12)

    def test_no_unknowns_no_similarity_term(self):
        cfg, params, bank, probs, s, labels, targets = self._setup(n_u=0)
        bd = total_loss(probs, s, labels, targets, LossWeights(0.2, 10.0),
                        cfg, params, bank)
        assert bd.similarity_term == 0.0
