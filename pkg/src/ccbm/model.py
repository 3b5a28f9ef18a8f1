"""The concept-bottleneck computation graph.

Per-concept adapters project a shared feature vector into concept
subspaces; each projection queries a cross-attention over frozen textual
concept embeddings (known branch) or learnable complement embeddings
(unknown branch); per-concept affine aggregators turn the attended vectors
into scalar scores; an affine decision layer maps the concatenated scores
to class logits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .errors import CheckpointError, ConfigError, DimensionError
from .numkernel import Array, Node, Tape


@dataclass(frozen=True)
class ModelConfig:
    d: int
    d_k: int
    n_k: int
    n_c: int
    n_u: int = 0
    d_u: int | None = None
    heads: int = 1
    concept_task: str = "classification"

    def __post_init__(self):
        if self.d_u is None:
            object.__setattr__(self, "d_u", self.d_k)
        for name in ("d", "d_k", "d_u", "n_k", "n_c", "heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_u < 0:
            raise ConfigError(f"n_u must be >= 0, got {self.n_u}")
        if self.n_u > 0 and self.d_u != self.d_k:
            raise ConfigError(
                "d_u must equal d_k when n_u > 0 (cosine terms compare "
                "unknown and known embedding rows)"
            )
        if self.heads > 1 and self.d_k % self.heads != 0:
            raise ConfigError(f"heads={self.heads} must divide d_k={self.d_k}")
        if self.concept_task not in ("classification", "regression"):
            raise ConfigError(f"unknown concept_task {self.concept_task!r}")

    @property
    def decision_width(self) -> int:
        return self.n_k + self.n_u

    def to_dict(self) -> dict:
        return {
            "d": self.d, "d_k": self.d_k, "d_u": self.d_u,
            "n_k": self.n_k, "n_u": self.n_u, "n_c": self.n_c,
            "heads": self.heads, "concept_task": self.concept_task,
        }

    @classmethod
    def from_dict(cls, dd: dict) -> "ModelConfig":
        return cls(**dd)


@dataclass
class ConceptBank:
    """Frozen textual concept embeddings; rows serve as both keys and values."""

    names: list[str]
    embeddings: Array

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if len(set(self.names)) != len(self.names):
            raise ConfigError("concept names must be unique")
        if self.embeddings.shape[0] != len(self.names):
            raise DimensionError(
                f"bank has {len(self.names)} names but "
                f"{self.embeddings.shape[0]} embedding rows"
            )


@dataclass
class CcbmParams:
    """All trainable parameter blocks.

    ``named_arrays`` defines the one canonical parameter order used by the
    optimizer, the tape, and serialization.
    """

    known_adapters: list[tuple[Array, Array]]
    unknown_adapters: list[tuple[Array, Array]]
    known_aggregators: list[tuple[Array, Array]]
    unknown_aggregators: list[tuple[Array, Array]]
    unknown_embeddings: Array
    decision: tuple[Array, Array]
    head_projections: dict[str, Array] = field(default_factory=dict)

    def named_arrays(self) -> dict[str, Array]:
        out: dict[str, Array] = {}
        for i, (w, b) in enumerate(self.known_adapters):
            out[f"known_adapter_{i}_w"] = w
            out[f"known_adapter_{i}_b"] = b
        for i, (w, b) in enumerate(self.known_aggregators):
            out[f"known_agg_{i}_w"] = w
            out[f"known_agg_{i}_b"] = b
        for j, (w, b) in enumerate(self.unknown_adapters):
            out[f"unknown_adapter_{j}_w"] = w
            out[f"unknown_adapter_{j}_b"] = b
        for j, (w, b) in enumerate(self.unknown_aggregators):
            out[f"unknown_agg_{j}_w"] = w
            out[f"unknown_agg_{j}_b"] = b
        if self.unknown_embeddings.size:
            out["unknown_embeddings"] = self.unknown_embeddings
        for name in sorted(self.head_projections):
            out[name] = self.head_projections[name]
        out["decision_w"], out["decision_b"] = self.decision
        return out

    def copy(self) -> "CcbmParams":
        return CcbmParams(
            known_adapters=[(w.copy(), b.copy()) for w, b in self.known_adapters],
            unknown_adapters=[(w.copy(), b.copy()) for w, b in self.unknown_adapters],
            known_aggregators=[(w.copy(), b.copy()) for w, b in self.known_aggregators],
            unknown_aggregators=[
                (w.copy(), b.copy()) for w, b in self.unknown_aggregators
            ],
            unknown_embeddings=self.unknown_embeddings.copy(),
            decision=(self.decision[0].copy(), self.decision[1].copy()),
            head_projections={k: v.copy() for k, v in self.head_projections.items()},
        )


@dataclass
class ForwardTrace:
    known_queries: Array          # n_k x d_k
    unknown_queries: Array        # n_u x d_u
    known_attention: Array        # n_k x n_k
    unknown_attention: Array      # n_u x n_u
    s_scores: Array               # n_k
    l_scores: Array               # n_u
    logits: Array                 # n_c
    probs: Array                  # n_c


@dataclass
class ExplanationReport:
    sample_id: str | None
    predicted_class: int
    predicted_class_name: str
    probs: list[float]
    class_names: list[str]
    concepts: list[dict]   # name, kind, raw_score, display_score,
                           # contribution, logit_contribution
    true_label: int | None = None

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "predicted_class": self.predicted_class,
            "predicted_class_name": self.predicted_class_name,
            "probs": self.probs,
            "class_names": self.class_names,
            "concepts": self.concepts,
            "true_label": self.true_label,
        }


def unknown_concept_names(n_u: int) -> list[str]:
    return [f"unknown_{j}" for j in range(n_u)]


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def init_params(config: ModelConfig, seed: int) -> CcbmParams:
    """Uniform fan-in weights, zero biases, unit-norm unknown embeddings."""
    rng = np.random.default_rng(seed)

    def uniform(fan_in: int, shape) -> Array:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    known_adapters = [
        (uniform(config.d, (config.d, config.d_k)), np.zeros(config.d_k))
        for _ in range(config.n_k)
    ]
    known_aggregators = [
        (uniform(config.d_k, (config.d_k, 1)), np.zeros(1))
        for _ in range(config.n_k)
    ]
    unknown_adapters = [
        (uniform(config.d, (config.d, config.d_u)), np.zeros(config.d_u))
        for _ in range(config.n_u)
    ]
    unknown_aggregators = [
        (uniform(config.d_u, (config.d_u, 1)), np.zeros(1))
        for _ in range(config.n_u)
    ]
    if config.n_u > 0:
        emb = rng.standard_normal((config.n_u, config.d_u))
        emb /= np.sqrt((emb * emb).sum(axis=1, keepdims=True))
    else:
        emb = np.zeros((0, config.d_u))
    decision = (
        uniform(config.decision_width, (config.decision_width, config.n_c)),
        np.zeros(config.n_c),
    )
    head_projections: dict[str, Array] = {}
    if config.heads > 1:
        for name in ("known_mha_wq", "known_mha_wk", "known_mha_wv", "known_mha_wo"):
            head_projections[name] = uniform(config.d_k, (config.d_k, config.d_k))
        if config.n_u > 0:
            for name in (
                "unknown_mha_wq", "unknown_mha_wk",
                "unknown_mha_wv", "unknown_mha_wo",
            ):
                head_projections[name] = uniform(config.d_u, (config.d_u, config.d_u))
    return CcbmParams(
        known_adapters=known_adapters,
        unknown_adapters=unknown_adapters,
        known_aggregators=known_aggregators,
        unknown_aggregators=unknown_aggregators,
        unknown_embeddings=emb,
        decision=decision,
        head_projections=head_projections,
    )


# ---------------------------------------------------------------------------
# forward graph
# ---------------------------------------------------------------------------


@dataclass
class ForwardNodes:
    """Tape nodes for one batch; values live on the nodes."""

    queries_known: list[Node]
    queries_unknown: list[Node]
    attn_known: list[Node]
    attn_unknown: list[Node]
    scores_known: Node | None
    scores_unknown: Node | None
    logits: Node
    unknown_embeddings: Node | None


def _attend(tape: Tape, q: Node, keys: Node, dim: int, heads: int,
            proj: dict[str, Node] | None, prefix: str) -> tuple[Node, Node]:
    """Scaled dot-product attention of one query block over one key set.

    Keys double as values. Returns (attention, attended). With one head this
    is exactly softmax(q k^T / sqrt(dim)) applied to the key rows; with more
    heads, learned projections split the subspace and an output projection
    recombines it, and the returned attention map is the head average.
    """
    if heads == 1 or proj is None:
        a = nk.softmax_rows(
            nk.scale(nk.matmul(q, nk.transpose(keys)), 1.0 / math.sqrt(dim))
        )
        return a, nk.matmul(a, keys)
    d_h = dim // heads
    qp = nk.matmul(q, proj[f"{prefix}_wq"])
    kp = nk.matmul(keys, proj[f"{prefix}_wk"])
    vp = nk.matmul(keys, proj[f"{prefix}_wv"])
    heads_out = []
    attn_sum = None
    for h in range(heads):
        lo, hi = h * d_h, (h + 1) * d_h
        qh = nk.slice_cols(qp, lo, hi)
        kh = nk.slice_cols(kp, lo, hi)
        vh = nk.slice_cols(vp, lo, hi)
        ah = nk.softmax_rows(
            nk.scale(nk.matmul(qh, nk.transpose(kh)), 1.0 / math.sqrt(d_h))
        )
        heads_out.append(nk.matmul(ah, vh))
        attn_sum = ah if attn_sum is None else nk.add(attn_sum, ah)
    out = nk.matmul(nk.concat_cols(heads_out), proj[f"{prefix}_wo"])
    return nk.scale(attn_sum, 1.0 / heads), out


def forward_nodes(tape: Tape, x: Node, param_nodes: dict[str, Node],
                  bank: ConceptBank, config: ModelConfig) -> ForwardNodes:
    """Build the full forward graph for a batch x of shape (n, d)."""
    if x.value.shape[1] != config.d:
        raise DimensionError(
            f"feature width {x.value.shape[1]} does not match config d={config.d}"
        )
    if bank.embeddings.shape != (config.n_k, config.d_k):
        raise DimensionError(
            f"bank shape {bank.embeddings.shape} does not match "
            f"(n_k, d_k)=({config.n_k}, {config.d_k})"
        )
    keys_known = tape.constant(bank.embeddings)
    proj = param_nodes if config.heads > 1 else None

    queries_known, attn_known, s_cols = [], [], []
    for i in range(config.n_k):
        q = nk.add_rowvec(
            nk.matmul(x, param_nodes[f"known_adapter_{i}_w"]),
            param_nodes[f"known_adapter_{i}_b"],
        )
        a, aw = _attend(tape, q, keys_known, config.d_k, config.heads, proj, "known_mha")
        s = nk.add_rowvec(
            nk.matmul(aw, param_nodes[f"known_agg_{i}_w"]),
            param_nodes[f"known_agg_{i}_b"],
        )
        queries_known.append(q)
        attn_known.append(a)
        s_cols.append(s)
    scores_known = nk.concat_cols(s_cols)

    queries_unknown, attn_unknown, l_cols = [], [], []
    emb_node = None
    scores_unknown = None
    if config.n_u > 0:
        emb_node = param_nodes["unknown_embeddings"]
        for j in range(config.n_u):
            q = nk.add_rowvec(
                nk.matmul(x, param_nodes[f"unknown_adapter_{j}_w"]),
                param_nodes[f"unknown_adapter_{j}_b"],
            )
            a, aw = _attend(tape, q, emb_node, config.d_u, config.heads, proj, "unknown_mha")
            l = nk.add_rowvec(
                nk.matmul(aw, param_nodes[f"unknown_agg_{j}_w"]),
                param_nodes[f"unknown_agg_{j}_b"],
            )
            queries_unknown.append(q)
            attn_unknown.append(a)
            l_cols.append(l)
        scores_unknown = nk.concat_cols(l_cols)
        all_scores = nk.concat_cols([scores_known, scores_unknown])
    else:
        all_scores = scores_known

    logits = nk.add_rowvec(
        nk.matmul(all_scores, param_nodes["decision_w"]), param_nodes["decision_b"]
    )
    return ForwardNodes(
        queries_known=queries_known,
        queries_unknown=queries_unknown,
        attn_known=attn_known,
        attn_unknown=attn_unknown,
        scores_known=scores_known,
        scores_unknown=scores_unknown,
        logits=logits,
        unknown_embeddings=emb_node,
    )


def make_param_nodes(tape: Tape, params: CcbmParams) -> dict[str, Node]:
    return {name: tape.leaf(arr) for name, arr in params.named_arrays().items()}


# ---------------------------------------------------------------------------
# inference entry points
# ---------------------------------------------------------------------------


def predict_batch(x: Array, params: CcbmParams, bank: ConceptBank,
                  config: ModelConfig):
    """Forward a batch; returns (S, L, logits, probs) as plain arrays."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    tape = Tape()
    fwd = forward_nodes(tape, tape.constant(x), make_param_nodes(tape, params),
                        bank, config)
    s = fwd.scores_known.value
    l = (fwd.scores_unknown.value if fwd.scores_unknown is not None
         else np.zeros((x.shape[0], 0)))
    logits = fwd.logits.value
    return s, l, logits, nk.softmax_rows_np(logits)


def encode_known_queries(feature: Array, params: CcbmParams,
                         config: ModelConfig) -> Array:
    """Row i is the i-th adapter applied to the feature vector."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (config.d,):
        raise DimensionError(
            f"feature shape {feature.shape} does not match config d={config.d}"
        )
    return np.stack([
        nk.linear_apply(feature, w, b) for w, b in params.known_adapters
    ])


def cross_attention(q: Array, k: Array, v: Array) -> tuple[Array, Array]:
    """Single-head scaled dot-product attention over explicit K, V."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise DimensionError(
            f"cross_attention: q {q.shape}, k {k.shape}, v {v.shape}"
        )
    a = nk.softmax_rows_np(q @ k.T / math.sqrt(q.shape[1]))
    return a, a @ v


def known_concept_scores(feature: Array, params: CcbmParams, bank: ConceptBank,
                         config: ModelConfig) -> Array:
    s, _, _, _ = predict_batch(feature, params, bank, config)
    return s[0]


def unknown_concept_scores(feature: Array, params: CcbmParams,
                           config: ModelConfig) -> Array:
    if config.n_u == 0:
        return np.zeros(0)
    bank = _dummy_bank(config)
    _, l, _, _ = predict_batch(feature, params, bank, config)
    return l[0]


def _dummy_bank(config: ModelConfig) -> ConceptBank:
    # unknown-branch-only evaluation still routes through the full forward;
    # the known branch needs some bank, and identity-padded rows are inert
    emb = np.eye(config.n_k, config.d_k) if config.d_k >= config.n_k else \
        np.ones((config.n_k, config.d_k))
    return ConceptBank(names=[f"_k{i}" for i in range(config.n_k)], embeddings=emb)


def diagnose(feature: Array, params: CcbmParams, bank: ConceptBank,
             config: ModelConfig) -> ForwardTrace:
    feature = np.asarray(feature, dtype=np.float64)
    tape = Tape()
    fwd = forward_nodes(tape, tape.constant(feature[None, :]),
                        make_param_nodes(tape, params), bank, config)
    logits = fwd.logits.value[0]
    return ForwardTrace(
        known_queries=np.vstack([q.value for q in fwd.queries_known]),
        unknown_queries=(np.vstack([q.value for q in fwd.queries_unknown])
                         if fwd.queries_unknown else np.zeros((0, config.d_u))),
        known_attention=np.vstack([a.value for a in fwd.attn_known]),
        unknown_attention=(np.vstack([a.value for a in fwd.attn_unknown])
                           if fwd.attn_unknown else np.zeros((0, 0))),
        s_scores=fwd.scores_known.value[0],
        l_scores=(fwd.scores_unknown.value[0] if fwd.scores_unknown is not None
                  else np.zeros(0)),
        logits=logits,
        probs=nk.softmax_rows_np(logits[None, :])[0],
    )


def display_scores(raw_known: Array, config: ModelConfig) -> Array:
    """Known scores on the user-facing scale: sigmoid for classification."""
    if config.concept_task == "classification":
        return nk.sigmoid_np(raw_known)
    return np.asarray(raw_known, dtype=np.float64)


def apply_decision(scores: Array, params: CcbmParams) -> Array:
    """Affine decision layer over a concatenated [S, L] batch."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[None, :]
    w, b = params.decision
    return scores @ w + b


def explain(feature: Array, params: CcbmParams, bank: ConceptBank,
            config: ModelConfig, class_names: list[str],
            concept_names: list[str], sample_id: str | None = None,
            true_label: int | None = None) -> ExplanationReport:
    trace = diagnose(feature, params, bank, config)
    pred = int(np.argmax(trace.probs))
    w, _ = params.decision
    disp_known = display_scores(trace.s_scores, config)
    rows = []
    names = list(concept_names) + unknown_concept_names(config.n_u)
    for j, name in enumerate(names):
        if j < config.n_k:
            raw = float(trace.s_scores[j])
            disp = float(disp_known[j])
            kind = "known"
        else:
            raw = float(trace.l_scores[j - config.n_k])
            disp = raw
            kind = "unknown"
        rows.append({
            "name": name,
            "kind": kind,
            "raw_score": raw,
            "display_score": disp,
            "contribution": float(w[j, pred]) * disp,
            "logit_contribution": float(w[j, pred]) * raw,
            "decision_weight": float(w[j, pred]),
        })
    rows.sort(key=lambda r: abs(r["contribution"]), reverse=True)
    return ExplanationReport(
        sample_id=sample_id,
        predicted_class=pred,
        predicted_class_name=class_names[pred],
        probs=[float(p) for p in trace.probs],
        class_names=list(class_names),
        concepts=rows,
        true_label=true_label,
    )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "ccbm-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: CcbmParams, config: ModelConfig,
                    bank: ConceptBank, class_names: list[str],
                    metadata: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "concept_names": list(bank.names),
        "class_names": list(class_names),
        "bank_embeddings": bank.embeddings.tolist(),
        "params": {k: v.tolist() for k, v in params.named_arrays().items()},
        "metadata": metadata or {},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_checkpoint(path):
    """Returns (params, config, bank, class_names, metadata)."""
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    config = ModelConfig.from_dict(doc["config"])
    bank = ConceptBank(
        names=doc["concept_names"],
        embeddings=np.asarray(doc["bank_embeddings"], dtype=np.float64),
    )
    named = {k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()}
    params = _params_from_named(named, config)
    return params, config, bank, doc["class_names"], doc.get("metadata", {})


def _params_from_named(named: dict[str, Array], config: ModelConfig) -> CcbmParams:
    try:
        head_projections = {
            k: named[k] for k in named if "_mha_" in k
        }
        return CcbmParams(
            known_adapters=[
                (named[f"known_adapter_{i}_w"], named[f"known_adapter_{i}_b"])
                for i in range(config.n_k)
            ],
            unknown_adapters=[
                (named[f"unknown_adapter_{j}_w"], named[f"unknown_adapter_{j}_b"])
                for j in range(config.n_u)
            ],
            known_aggregators=[
                (named[f"known_agg_{i}_w"], named[f"known_agg_{i}_b"])
                for i in range(config.n_k)
            ],
            unknown_aggregators=[
                (named[f"unknown_agg_{j}_w"], named[f"unknown_agg_{j}_b"])
                for j in range(config.n_u)
            ],
            unknown_embeddings=(named["unknown_embeddings"] if config.n_u > 0
                                else np.zeros((0, config.d_u))),
            decision=(named["decision_w"], named["decision_b"]),
            head_projections=head_projections,
        )
    except KeyError as e:
        raise CheckpointError(f"checkpoint is missing parameter block {e}") from e
