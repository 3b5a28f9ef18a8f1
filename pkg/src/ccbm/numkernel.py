"""Dense float64 numeric core with hand-written backward passes.

Every primitive the model needs is implemented twice: a forward value and
an analytic vector-Jacobian product. Applications are recorded on a
``Tape`` in creation order; the reverse sweep walks the tape back-to-front,
so for a fixed sequence of operations the gradients are reproducible
bit-for-bit. All storage is row-major float64 and all reductions use a
fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateEmbeddingError, DimensionError

Array = np.ndarray


def _f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


class Node:
    """One tape entry: a value plus the backward closure that produced it."""

    __slots__ = ("tape", "value", "grad", "_bwd")

    def __init__(self, tape: "Tape", value: Array, bwd=None):
        self.tape = tape
        self.value = value
        self.grad: Array | None = None
        self._bwd = bwd
        tape._nodes.append(self)


class Tape:
    """Ordered record of primitive applications.

    The reverse sweep visits nodes in exact reverse creation order, which is
    a valid topological order because operands always exist before results.
    A tape belongs to one training step and is never shared.
    """

    def __init__(self):
        self._nodes: list[Node] = []

    def leaf(self, value) -> Node:
        return Node(self, _f64(value))

    # frozen inputs use the same storage; nothing consumes their grads
    constant = leaf

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, root: Node) -> None:
        if root.value.shape != ():
            raise DimensionError("backward root must be a scalar node")
        for n in self._nodes:
            n.grad = np.zeros_like(n.value)
        root.grad = np.ones_like(root.value)
        for n in reversed(self._nodes):
            if n._bwd is not None:
                n._bwd(n.grad)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul: {a.value.shape} @ {b.value.shape} is not defined"
        )
    out_value = a.value @ b.value

    def bwd(g):
        a.grad += g @ b.value.T
        b.grad += a.value.T @ g

    return Node(a.tape, out_value, bwd)


def transpose(a: Node) -> Node:
    def bwd(g):
        a.grad += g.T

    return Node(a.tape, a.value.T.copy(), bwd)


def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"add: {a.value.shape} vs {b.value.shape}")

    def bwd(g):
        a.grad += g
        b.grad += g

    return Node(a.tape, a.value + b.value, bwd)


def add_rowvec(m: Node, v: Node) -> Node:
    if m.value.shape[1] != v.value.shape[0] or v.value.ndim != 1:
        raise DimensionError(
            f"add_rowvec: matrix {m.value.shape} vs vector {v.value.shape}"
        )
    out_value = m.value + v.value[None, :]

    def bwd(g):
        m.grad += g
        v.grad += g.sum(axis=0)

    return Node(m.tape, out_value, bwd)


def scale(a: Node, c: float) -> Node:
    c = float(c)

    def bwd(g):
        a.grad += c * g

    return Node(a.tape, c * a.value, bwd)


def softmax_rows(a: Node) -> Node:
    p = softmax_rows_np(a.value)

    def bwd(g):
        a.grad += p * (g - (g * p).sum(axis=1, keepdims=True))

    return Node(a.tape, p, bwd)


def concat_cols(parts: list[Node]) -> Node:
    if not parts:
        raise DimensionError("concat_cols: empty part list")
    widths = [p.value.shape[1] for p in parts]
    out_value = np.concatenate([p.value for p in parts], axis=1)
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p.grad += g[:, lo:hi]

    return Node(parts[0].tape, out_value, bwd)


def slice_cols(a: Node, lo: int, hi: int) -> Node:
    out_value = a.value[:, lo:hi].copy()

    def bwd(g):
        a.grad[:, lo:hi] += g

    return Node(a.tape, out_value, bwd)


def cross_entropy_with_logits(logits: Node, onehot: Array) -> Node:
    """Summed softmax cross-entropy, computed through log-sum-exp."""
    z = logits.value
    if z.shape != onehot.shape:
        raise DimensionError(
            f"cross_entropy_with_logits: logits {z.shape} vs targets {onehot.shape}"
        )
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    out_value = np.asarray((lse - (z * onehot).sum(axis=1)).sum())
    p = softmax_rows_np(z)

    def bwd(g):
        logits.grad += g * (p - onehot)

    return Node(logits.tape, out_value, bwd)


def bce_with_logits(scores: Node, targets: Array) -> Node:
    """Summed multi-label cross-entropy in the stable logit form."""
    s = scores.value
    if s.shape != targets.shape:
        raise DimensionError(
            f"bce_with_logits: scores {s.shape} vs targets {targets.shape}"
        )
    out_value = np.asarray(
        (np.maximum(s, 0.0) - s * targets + np.log1p(np.exp(-np.abs(s)))).sum()
    )

    def bwd(g):
        scores.grad += g * (sigmoid_np(s) - targets)

    return Node(scores.tape, out_value, bwd)


def mse_mean(scores: Node, targets: Array) -> Node:
    """Squared error summed over columns, averaged over rows."""
    s = scores.value
    if s.shape != targets.shape:
        raise DimensionError(f"mse_mean: scores {s.shape} vs targets {targets.shape}")
    n = s.shape[0]
    diff = s - targets
    out_value = np.asarray((diff * diff).sum() / n)

    def bwd(g):
        scores.grad += g * (2.0 / n) * diff

    return Node(scores.tape, out_value, bwd)


def _cos_and_grad(u: Array, v: Array, squared: bool):
    """Value and d/du of cos(u,v) or cos^2(u,v); v is held fixed."""
    nu = np.sqrt(u @ u)
    nv = np.sqrt(v @ v)
    c = (u @ v) / (nu * nv)
    dc_du = v / (nu * nv) - c * u / (nu * nu)
    if squared:
        return c * c, 2.0 * c * dc_du
    return c, dc_du


def cosine_penalty(unknown: Node, known: Array, squared: bool = True) -> Node:
    """Pairwise cosine redundancy penalty on the unknown embedding rows.

    Sums, for every unknown row i, the similarity to every other unknown
    row (ordered pairs) and to every known row. ``squared`` selects cos^2
    so that the minimum is orthogonality rather than anti-alignment.
    """
    u = unknown.value
    _check_nonzero_rows(u, "unknown embedding")
    if known.size:
        _check_nonzero_rows(known, "known embedding")
    n_u = u.shape[0]
    total = 0.0
    grad_u = np.zeros_like(u)
    for i in range(n_u):
        for j in range(n_u):
            if j == i:
                continue
            # each ordered (i, j) term depends on both rows
            val, d_i = _cos_and_grad(u[i], u[j], squared)
            _, d_j = _cos_and_grad(u[j], u[i], squared)
            total += val
            grad_u[i] += d_i
            grad_u[j] += d_j
        for k in range(known.shape[0]):
            val, d_i = _cos_and_grad(u[i], known[k], squared)
            total += val
            grad_u[i] += d_i

    def bwd(g):
        unknown.grad += g * grad_u

    return Node(unknown.tape, np.asarray(total), bwd)


def weighted_sum(nodes: list[Node], coeffs: list[float]) -> Node:
    if len(nodes) != len(coeffs):
        raise DimensionError("weighted_sum: length mismatch")
    out_value = np.asarray(
        sum(c * float(n.value) for n, c in zip(nodes, coeffs))
    )

    def bwd(g):
        for n, c in zip(nodes, coeffs):
            n.grad += float(c) * g

    return Node(nodes[0].tape, out_value, bwd)


# ---------------------------------------------------------------------------
# plain (tape-free) helpers
# ---------------------------------------------------------------------------


def softmax_rows_np(z: Array) -> Array:
    z = _f64(z)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid_np(s: Array) -> Array:
    s = _f64(s)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def linear_apply(x: Array, weight: Array, bias: Array) -> Array:
    """Affine map out[j] = sum_i x[i] W[i, j] + b[j]."""
    x, weight, bias = _f64(x), _f64(weight), _f64(bias)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear_apply: input width {x.shape[-1]} vs weight rows {weight.shape[0]}"
        )
    if weight.shape[1] != bias.shape[0]:
        raise DimensionError(
            f"linear_apply: weight cols {weight.shape[1]} vs bias length {bias.shape[0]}"
        )
    return x @ weight + bias


def _check_nonzero_rows(m: Array, what: str) -> None:
    norms = np.sqrt((m * m).sum(axis=1))
    bad = np.nonzero(norms == 0.0)[0]
    if bad.size:
        raise DegenerateEmbeddingError(f"{what} row {int(bad[0])} has zero norm")


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_index: tuple
    analytic_at_worst: float
    numeric_at_worst: float
    tol: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def grad_check(loss_fn, grad_fn, params: dict, h: float = 1e-5,
               tol: float = 1e-4, floor: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn(params) -> float`` and ``grad_fn(params) -> {name: array}``.
    Relative error uses ``max(|analytic|, |numeric|, floor)`` as the
    denominator; coordinates with both sides below the floor are judged on
    absolute error, which keeps finite-difference noise on dead coordinates
    from dominating the report.
    """
    analytic = grad_fn(params)
    worst = (-1.0, "", (), 0.0, 0.0)
    failures = []
    for name in params:
        p = params[name]
        a = np.asarray(analytic[name], dtype=np.float64)
        if a.shape != p.shape:
            raise DimensionError(
                f"grad_check: gradient shape {a.shape} vs param {name} {p.shape}"
            )
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            f_plus = float(loss_fn(params))
            p[idx] = orig - h
            f_minus = float(loss_fn(params))
            p[idx] = orig
            num = (f_plus - f_minus) / (2.0 * h)
            ana = float(a[idx])
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            if rel > worst[0]:
                worst = (rel, name, idx, ana, num)
            if rel > tol:
                failures.append((name, idx, ana, num, rel))
            it.iternext()
    return GradCheckReport(
        max_rel_err=worst[0],
        worst_param=worst[1],
        worst_index=worst[2],
        analytic_at_worst=worst[3],
        numeric_at_worst=worst[4],
        tol=tol,
        failures=failures,
    )
