import json

import numpy as np
import pytest

import oracles
from conftest import random_bank, tiny_config
from ccbm.errors import CheckpointError, ConfigError, DimensionError
from ccbm.model import (ConceptBank, ModelConfig, apply_decision,
                        cross_attention, diagnose, encode_known_queries,
                        explain, init_params, known_concept_scores,
                        load_checkpoint, predict_batch, save_checkpoint,
                        unknown_concept_scores)


class TestModelConfig:
    def test_d_u_defaults_to_d_k(self):
        cfg = ModelConfig(d=4, d_k=8, n_k=2, n_c=2)
        assert cfg.d_u == 8

    def test_mismatched_d_u_with_unknowns_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(d=4, d_k=8, d_u=4, n_k=2, n_c=2, n_u=1)

    def test_heads_must_divide_d_k(self):
        with pytest.raises(ConfigError):
            ModelConfig(d=4, d_k=6, n_k=2, n_c=2, heads=4)

    def test_negative_n_u_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(d=4, d_k=4, n_k=2, n_c=2, n_u=-1)


class TestInitParams:
    def test_deterministic_per_seed(self):
        cfg = tiny_config()
        a = init_params(cfg, 42).named_arrays()
        b = init_params(cfg, 42).named_arrays()
        assert a.keys() == b.keys()
        for k in a:
            assert np.array_equal(a[k], b[k])

    def test_no_unknowns_means_empty_blocks(self):
        cfg = tiny_config(n_u=0)
        p = init_params(cfg, 0)
        assert p.unknown_adapters == []
        assert p.unknown_embeddings.shape == (0, cfg.d_u)
        assert p.decision[0].shape == (cfg.n_k, cfg.n_c)

    def test_fan_in_bound(self):
        cfg = ModelConfig(d=4, d_k=4, n_k=3, n_c=2)
        p = init_params(cfg, 7)
        for w, _ in p.known_adapters:
            assert np.abs(w).max() <= 0.5  # fan_in 4 -> bound 1/2
        for _, b in p.known_adapters:
            assert np.array_equal(b, np.zeros(4))

    def test_unknown_embeddings_unit_norm(self):
        p = init_params(tiny_config(n_u=3), 0)
        norms = np.linalg.norm(p.unknown_embeddings, axis=1)
        assert np.abs(norms - 1.0).max() <= 1e-12


class TestEncodeKnownQueries:
    def test_zero_weights_return_biases(self):
        cfg = tiny_config()
        p = init_params(cfg, 0)
        for i, (w, b) in enumerate(p.known_adapters):
            w[:] = 0.0
            b[:] = float(i + 1)
        q = encode_known_queries(np.ones(cfg.d), p, cfg)
        for i in range(cfg.n_k):
            assert np.array_equal(q[i], np.full(cfg.d_k, float(i + 1)))

    def test_seven_concept_configuration(self):
        cfg = ModelConfig(d=6, d_k=4, n_k=7, n_c=2)
        q = encode_known_queries(np.zeros(6), init_params(cfg, 0), cfg)
        assert q.shape == (7, 4)

    def test_matches_per_row_matvec_oracle(self):
        cfg = ModelConfig(d=5, d_k=3, n_k=2, n_c=2)
        p = init_params(cfg, 3)
        x = np.random.default_rng(5).standard_normal(5)
        q = encode_known_queries(x, p, cfg)
        for i, (w, b) in enumerate(p.known_adapters):
            assert np.abs(q[i] - oracles.matvec(x, w, b)).max() <= 1e-12

    def test_dim_mismatch(self):
        cfg = tiny_config()
        with pytest.raises(DimensionError):
            encode_known_queries(np.zeros(cfg.d + 1), init_params(cfg, 0), cfg)


class TestCrossAttention:
    def test_zero_query_gives_uniform_attention(self):
        rng = np.random.default_rng(0)
        k = rng.standard_normal((4, 3))
        a, aw = cross_attention(np.zeros((2, 3)), k, k)
        assert np.allclose(a, 0.25, atol=1e-15)
        assert np.allclose(aw, k.mean(axis=0), atol=1e-12)

    def test_single_key(self):
        k = np.array([[1.0, 2.0]])
        a, aw = cross_attention(np.array([[5.0, -3.0]]), k, k)
        assert np.array_equal(a, [[1.0]])
        assert np.array_equal(aw, k)

    def test_hand_evaluated_instance(self):
        q = np.array([[1.0, 0.0]])
        k = np.array([[1.0, 0.0], [0.0, 1.0]])
        a, aw = cross_attention(q, k, k)
        import math
        e0 = math.exp(1.0 / math.sqrt(2.0))
        e1 = math.exp(0.0)
        expect_a = np.array([[e0 / (e0 + e1), e1 / (e0 + e1)]])
        assert np.abs(a - expect_a).max() <= 1e-12
        assert np.abs(aw - expect_a @ k).max() <= 1e-12

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            cross_attention(np.zeros((1, 3)), np.zeros((2, 4)), np.zeros((2, 4)))


class TestConceptScores:
    def test_constant_aggregator_head(self, tiny_setup):
        cfg, p, bank = tiny_setup
        for i, (w, b) in enumerate(p.known_aggregators):
            w[:] = 0.0
            b[:] = float(i) - 1.0
        s = known_concept_scores(np.random.default_rng(1).standard_normal(cfg.d),
                                 p, bank, cfg)
        assert np.allclose(s, [-1.0, 0.0, 1.0], atol=1e-15)

    def test_known_scores_match_composition_oracle(self, tiny_setup):
        cfg, p, bank = tiny_setup
        x = np.random.default_rng(2).standard_normal(cfg.d)
        s_exp, _, _, _ = oracles.forward_sample(x, p, bank.embeddings, cfg)
        assert np.abs(known_concept_scores(x, p, bank, cfg) - s_exp).max() <= 1e-9

    def test_single_unknown_concept_attention_is_identity(self):
        cfg = tiny_config(n_u=1)
        p = init_params(cfg, 4)
        x = np.random.default_rng(3).standard_normal(cfg.d)
        l = unknown_concept_scores(x, p, cfg)
        w, b = p.unknown_aggregators[0]
        expected = float(p.unknown_embeddings[0] @ w[:, 0] + b[0])
        assert abs(l[0] - expected) <= 1e-12

    def test_unknown_constant_head(self):
        cfg = tiny_config(n_u=2)
        p = init_params(cfg, 4)
        for j, (w, b) in enumerate(p.unknown_aggregators):
            w[:] = 0.0
            b[:] = 10.0 + j
        l = unknown_concept_scores(np.ones(cfg.d), p, cfg)
        assert np.allclose(l, [10.0, 11.0], atol=1e-15)

    def test_n_u_zero_gives_empty_vector(self):
        cfg = tiny_config(n_u=0)
        assert unknown_concept_scores(np.zeros(cfg.d), init_params(cfg, 0),
                                      cfg).shape == (0,)

    def test_unknown_scores_match_oracle(self, tiny_setup):
        cfg, p, bank = tiny_setup
        x = np.random.default_rng(8).standard_normal(cfg.d)
        _, l_exp, _, _ = oracles.forward_sample(x, p, bank.embeddings, cfg)
        _, l, _, _ = predict_batch(x, p, bank, cfg)
        assert np.abs(l[0] - l_exp).max() <= 1e-9


class TestDiagnose:
    def test_zero_decision_weights_uniform_probs(self, tiny_setup):
        cfg, p, bank = tiny_setup
        p.decision[0][:] = 0.0
        p.decision[1][:] = 0.0
        trace = diagnose(np.ones(cfg.d), p, bank, cfg)
        assert np.allclose(trace.probs, 0.5, atol=1e-15)

    def test_decision_width_includes_unknowns(self):
        cfg = ModelConfig(d=8, d_k=6, n_k=22, n_c=3, n_u=3)
        p = init_params(cfg, 0)
        assert p.decision[0].shape == (25, 3)

    def test_end_to_end_matches_oracle(self, tiny_setup):
        cfg, p, bank = tiny_setup
        rng = np.random.default_rng(11)
        for _ in range(5):
            x = rng.standard_normal(cfg.d)
            s_e, l_e, logits_e, probs_e = oracles.forward_sample(
                x, p, bank.embeddings, cfg)
            tr = diagnose(x, p, bank, cfg)
            assert np.abs(tr.s_scores - s_e).max() <= 1e-9
            assert np.abs(tr.l_scores - l_e).max() <= 1e-9
            assert np.abs(tr.logits - logits_e).max() <= 1e-9
            assert np.abs(tr.probs - probs_e).max() <= 1e-9

    def test_trace_normalization(self, tiny_setup):
        cfg, p, bank = tiny_setup
        tr = diagnose(np.random.default_rng(0).standard_normal(cfg.d), p, bank, cfg)
        assert abs(tr.probs.sum() - 1.0) <= 1e-12
        assert np.abs(tr.known_attention.sum(axis=1) - 1.0).max() <= 1e-12
        assert np.abs(tr.unknown_attention.sum(axis=1) - 1.0).max() <= 1e-12

    def test_n_u_zero_path_is_pure_known_branch(self):
        cfg = tiny_config(n_u=0)
        p = init_params(cfg, 5)
        bank = random_bank(cfg)
        x = np.random.default_rng(1).standard_normal(cfg.d)
        tr = diagnose(x, p, bank, cfg)
        # empty-concat identity: logits equal decision applied to S alone
        expect = apply_decision(tr.s_scores, p)[0]
        assert np.array_equal(tr.logits, expect)

    def test_multihead_trace_still_normalized(self):
        cfg = tiny_config(heads=2, d_k=4)
        p = init_params(cfg, 2)
        bank = random_bank(cfg)
        tr = diagnose(np.random.default_rng(0).standard_normal(cfg.d), p, bank, cfg)
        assert np.abs(tr.known_attention.sum(axis=1) - 1.0).max() <= 1e-12
        assert abs(tr.probs.sum() - 1.0) <= 1e-12


class TestExplain:
    def _explain(self, tiny_setup, x=None):
        cfg, p, bank = tiny_setup
        x = np.ones(cfg.d) if x is None else x
        return cfg, p, bank, explain(x, p, bank, cfg, ["neg", "pos"], bank.names)

    def test_zero_weight_column_zero_contributions(self, tiny_setup):
        cfg, p, bank = tiny_setup
        p.decision[0][:] = 0.0
        _, _, _, rep = self._explain((cfg, p, bank))
        assert all(c["contribution"] == 0.0 for c in rep.concepts)

    def test_contribution_linear_in_score(self, tiny_setup):
        cfg, p, bank = tiny_setup
        _, _, _, rep = self._explain((cfg, p, bank))
        row = rep.concepts[0]
        assert row["contribution"] == pytest.approx(
            row["decision_weight"] * row["display_score"], abs=1e-15)
        assert row["logit_contribution"] == pytest.approx(
            row["decision_weight"] * row["raw_score"], abs=1e-15)

    def test_contributions_match_direct_loop(self, tiny_setup):
        cfg, p, bank, rep = self._explain(tiny_setup)
        w, _ = p.decision
        by_name = {c["name"]: c for c in rep.concepts}
        names = list(bank.names) + ["unknown_0", "unknown_1"]
        for j, name in enumerate(names):
            c = by_name[name]
            assert abs(c["logit_contribution"] - w[j, rep.predicted_class]
                       * c["raw_score"]) <= 1e-12

    def test_logit_contributions_sum_to_logit_minus_bias(self, tiny_setup):
        cfg, p, bank = tiny_setup
        x = np.random.default_rng(9).standard_normal(cfg.d)
        rep = explain(x, p, bank, cfg, ["neg", "pos"], bank.names)
        tr = diagnose(x, p, bank, cfg)
        total = sum(c["logit_contribution"] for c in rep.concepts)
        c = rep.predicted_class
        assert abs(total - (tr.logits[c] - p.decision[1][c])) <= 1e-9

    def test_sorted_by_abs_contribution(self, tiny_setup):
        _, _, _, rep = self._explain(tiny_setup)
        mags = [abs(c["contribution"]) for c in rep.concepts]
        assert mags == sorted(mags, reverse=True)


class TestCheckpoint:
    def test_round_trip_reproduces_logits(self, tiny_setup, tmp_path):
        cfg, p, bank = tiny_setup
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, p, cfg, bank, ["a", "b"], metadata={"seed": 0})
        p2, cfg2, bank2, class_names, meta = load_checkpoint(path)
        assert class_names == ["a", "b"]
        assert meta == {"seed": 0}
        x = np.random.default_rng(5).standard_normal((4, cfg.d))
        _, _, logits1, _ = predict_batch(x, p, bank, cfg)
        _, _, logits2, _ = predict_batch(x, p2, bank2, cfg2)
        assert np.abs(logits1 - logits2).max() <= 1e-12

    def test_bad_format_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format": "other"}))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_block_rejected(self, tiny_setup, tmp_path):
        cfg, p, bank = tiny_setup
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, p, cfg, bank, ["a", "b"])
        doc = json.loads(path.read_text())
        del doc["params"]["decision_w"]
        path.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
