"""Attention and skinning kernels with exact hand-derived gradients.

Shape conventions: attention operands are batched per head as (h, n, d);
the skeleton-distance bias table is (levels, h) and expands to an (n, n, h)
bias; point/bone feature matrices are (n, d) and (j, d).

These kernels are the numeric core of a skinning predictor whose wiring
is: bone tokens attend over themselves with the graph-distance bias, pick
up global context from a shape encoding by cross-attention, exchange
features with surface points in both directions, and a cosine-similarity
head finally converts point and bone features into per-vertex skinning
distributions.  Only the kernels live here; stacking them into trained
blocks is out of scope.

Every kernel has a companion ``*_vjp`` / ``*_grad`` routine returning
exact gradients; the test-suite checks them against central finite
differences at double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import VOCAB_SIZE

COSINE_NORM_EPS = 1e-12
DEFAULT_MAX_LEVEL = 16


def _require_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _softmax_vjp(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    # For p = softmax(z):  g_z = p * (g_p - sum(g_p * p))
    inner = np.sum(grad_p * p, axis=-1, keepdims=True)
    return p * (grad_p - inner)


# ---------------------------------------------------------------------------
# Graph-distance bias
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistanceEmbeddingTable:
    """Learnable per-head scalars indexed by clamped graph distance.

    values[l, h] is the bias for token pairs l bones apart on the skeleton
    (distances beyond the last level share its entry).
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError("table values must be (levels, heads)")
        _require_finite("distance table", v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def max_level(self) -> int:
        return self.values.shape[0] - 1

    @property
    def heads(self) -> int:
        return self.values.shape[1]

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        heads: int,
        max_level: int = DEFAULT_MAX_LEVEL,
        scale: float = 0.1,
    ) -> "DistanceEmbeddingTable":
        return cls(scale * rng.standard_normal((max_level + 1, heads)))


def _clamped_levels(distances: np.ndarray, table: DistanceEmbeddingTable):
    d = np.asarray(distances)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distance matrix must be square")
    if d.size and d.min() < 0:
        raise ValueError("graph distances must be non-negative")
    return np.minimum(d.astype(np.int64), table.max_level)


def distance_embedding(
    distances: np.ndarray, table: DistanceEmbeddingTable
) -> np.ndarray:
    """Expand a (n, n) hop-count matrix into an (n, n, heads) bias."""
    return table.values[_clamped_levels(distances, table)]


def distance_embedding_vjp(
    distances: np.ndarray, table: DistanceEmbeddingTable, grad_bias: np.ndarray
) -> np.ndarray:
    """Gradient of the table values: scatter-add over clamped levels."""
    levels = _clamped_levels(distances, table)
    grad_bias = np.asarray(grad_bias, dtype=np.float64)
    if grad_bias.shape != levels.shape + (table.heads,):
        raise ValueError("grad_bias shape must be (n, n, heads)")
    grad_values = np.zeros_like(table.values)
    np.add.at(grad_values, levels.ravel(), grad_bias.reshape(-1, table.heads))
    return grad_values


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


def _attention_core(q, k, v, bias):
    d_k = q.shape[-1]
    logits = np.einsum("hid,hjd->hij", q, k) / np.sqrt(d_k)
    if bias is not None:
        logits = logits + bias
    attn = _softmax(logits)
    out = np.einsum("hij,hjd->hid", attn, v)
    return out, attn


def _check_qkv(q, k, v):
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 3 or k.shape != q.shape or v.shape != q.shape:
        raise ValueError("q, k, v must share shape (heads, n, d)")
    for name, a in (("q", q), ("k", k), ("v", v)):
        _require_finite(name, a)
    return q, k, v


def reference_attention(q, k, v) -> tuple[np.ndarray, np.ndarray]:
    """Plain scaled dot-product attention; returns (output, attention maps)."""
    q, k, v = _check_qkv(q, k, v)
    return _attention_core(q, k, v, None)


def topology_aware_attention(
    q, k, v, bias: np.ndarray, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Attention with an additive skeleton-distance bias on the logits.

    softmax(q k^T / sqrt(d) + lam * bias) v, per head.  ``bias`` is the
    (n, n, heads) output of :func:`distance_embedding`.  With lam = 0 the
    result is bitwise identical to :func:`reference_attention`.
    """
    q, k, v = _check_qkv(q, k, v)
    bias = np.asarray(bias, dtype=np.float64)
    h, n, _ = q.shape
    if bias.shape != (n, n, h):
        raise ValueError(f"bias must be (n, n, heads)=({n},{n},{h})")
    _require_finite("bias", bias)
    if not np.isfinite(lam):
        raise ValueError("lam must be finite")
    return _attention_core(q, k, v, float(lam) * np.transpose(bias, (2, 0, 1)))


def topology_aware_attention_vjp(
    q, k, v, bias: np.ndarray, lam: float, grad_out: np.ndarray
):
    """Gradients of the attention output wrt (q, k, v, bias, lam)."""
    q, k, v = _check_qkv(q, k, v)
    bias_hij = float(lam) * np.transpose(bias, (2, 0, 1))
    d_k = q.shape[-1]
    scale = 1.0 / np.sqrt(d_k)
    logits = np.einsum("hid,hjd->hij", q, k) * scale + bias_hij
    attn = _softmax(logits)

    grad_out = np.asarray(grad_out, dtype=np.float64)
    grad_v = np.einsum("hij,hid->hjd", attn, grad_out)
    grad_attn = np.einsum("hid,hjd->hij", grad_out, v)
    grad_logits = _softmax_vjp(attn, grad_attn)
    grad_q = np.einsum("hij,hjd->hid", grad_logits, k) * scale
    grad_k = np.einsum("hij,hid->hjd", grad_logits, q) * scale
    grad_bias = float(lam) * np.transpose(grad_logits, (1, 2, 0))
    grad_lam = float(np.sum(grad_logits * np.transpose(bias, (2, 0, 1))))
    return grad_q, grad_k, grad_v, grad_bias, grad_lam


# ---------------------------------------------------------------------------
# Skinning head
# ---------------------------------------------------------------------------


def _guarded_norms(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    true = np.linalg.norm(a, axis=-1)
    return true, true + COSINE_NORM_EPS


def skinning_head(
    point_features: np.ndarray, bone_features: np.ndarray, alpha: float
) -> np.ndarray:
    """Per-vertex skinning distribution from feature cosine similarity.

    W[v] = softmax over joints of alpha * cos(point v, bone j).  Norms are
    guarded with a 1e-12 epsilon so all-zero feature rows yield a uniform
    row instead of NaN.  Every output row sums to 1.
    """
    p = np.asarray(point_features, dtype=np.float64)
    b = np.asarray(bone_features, dtype=np.float64)
    if p.ndim != 2 or b.ndim != 2 or p.shape[1] != b.shape[1]:
        raise ValueError("features must be (n, d) and (j, d) with shared d")
    _require_finite("point features", p)
    _require_finite("bone features", b)
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    _, np_g = _guarded_norms(p)
    _, nb_g = _guarded_norms(b)
    cos = (p @ b.T) / np.outer(np_g, nb_g)
    return _softmax(float(alpha) * cos)


def skinning_head_vjp(
    point_features: np.ndarray,
    bone_features: np.ndarray,
    alpha: float,
    grad_w: np.ndarray,
):
    """Gradients of the skinning distribution wrt both feature sets and alpha."""
    p = np.asarray(point_features, dtype=np.float64)
    b = np.asarray(bone_features, dtype=np.float64)
    np_t, np_g = _guarded_norms(p)
    nb_t, nb_g = _guarded_norms(b)
    inv = 1.0 / np.outer(np_g, nb_g)
    scores = p @ b.T
    cos = scores * inv
    w = _softmax(float(alpha) * cos)

    grad_w = np.asarray(grad_w, dtype=np.float64)
    grad_z = _softmax_vjp(w, grad_w)
    grad_alpha = float(np.sum(grad_z * cos))
    grad_cos = float(alpha) * grad_z

    grad_scores = grad_cos * inv
    grad_np = -np.sum(grad_cos * cos, axis=1) / np_g
    grad_nb = -np.sum(grad_cos * cos, axis=0) / nb_g
    # d|x| / dx is x/|x|; zero-norm rows get zero direction (their cosine is
    # constant under the epsilon guard anyway).
    unit_p = np.where(np_t[:, None] > 0.0, p / np.where(np_t == 0, 1, np_t)[:, None], 0.0)
    unit_b = np.where(nb_t[:, None] > 0.0, b / np.where(nb_t == 0, 1, nb_t)[:, None], 0.0)
    grad_p = grad_scores @ b + grad_np[:, None] * unit_p
    grad_b = grad_scores.T @ p + grad_nb[:, None] * unit_b
    return grad_p, grad_b, grad_alpha


# ---------------------------------------------------------------------------
# Cross entropy
# ---------------------------------------------------------------------------


def _check_ce(logits, targets, mask):
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[1] != VOCAB_SIZE:
        raise ValueError(f"logits must be (length, {VOCAB_SIZE})")
    if targets.shape != (logits.shape[0],):
        raise ValueError("targets must align with logits rows")
    if targets.size and (targets.min() < 0 or targets.max() >= VOCAB_SIZE):
        raise ValueError("targets out of vocabulary range")
    _require_finite("logits", logits)
    if mask is None:
        mask = np.ones(logits.shape[0], dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (logits.shape[0],):
            raise ValueError("mask must align with logits rows")
    if not mask.any():
        raise ValueError("mask excludes every position")
    return logits, targets, mask


def next_token_cross_entropy(
    logits: np.ndarray, targets: np.ndarray, mask: np.ndarray | None = None
) -> float:
    """Mean negative log-softmax of the target token over unmasked rows.

    Computed through a shifted log-sum-exp, so large logits do not
    overflow.  Uniform logits give log(vocab) = log(203) ~ 5.313.
    """
    logits, targets, mask = _check_ce(logits, targets, mask)
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1))
    nll = lse - shifted[np.arange(targets.size), targets]
    return float(np.mean(nll[mask]))


def next_token_cross_entropy_grad(
    logits: np.ndarray, targets: np.ndarray, mask: np.ndarray | None = None
) -> np.ndarray:
    """Exact gradient wrt logits: (softmax - onehot) / count on unmasked rows."""
    logits, targets, mask = _check_ce(logits, targets, mask)
    probs = _softmax(logits)
    grad = probs.copy()
    grad[np.arange(targets.size), targets] -= 1.0
    grad[~mask] = 0.0
    return grad / float(mask.sum())
