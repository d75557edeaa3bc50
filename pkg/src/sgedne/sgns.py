"""Skip-Gram with negative sampling: pair extraction, noise distribution and SGD.

Training is plain sequential SGD in a numba kernel, one positive pair at a
time, in the order the pairs were extracted. All randomness comes from
counter-based streams seeded from the caller's generator, so a learner is
bit-reproducible for a given seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ._rand import draw_seed, next_below, next_float, stream_seed
from .sampler import _vose


@dataclass(frozen=True)
class TrainConfig:
    window: int = 10
    negatives: int = 5
    learning_rate: float = 0.025
    epochs: int = 1
    noise_exponent: float = 0.75
    lr_decay: bool = True
    min_lr_ratio: float = 1e-4

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.negatives < 0:
            raise ValueError("negatives must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class LearnerState:
    """Trainable in/out matrices of one learner plus its grow-only vocabulary.

    ``nodes[row]`` is the node id stored in ``row``; ``row_of[node]`` is the
    inverse map (-1 for nodes outside the vocabulary).
    """

    in_embed: np.ndarray
    out_embed: np.ndarray
    nodes: np.ndarray
    row_of: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.in_embed.shape[1]

    def __len__(self) -> int:
        return len(self.nodes)

    def rows(self, node_ids) -> np.ndarray:
        """Map node ids to rows; ids outside the vocabulary (and -1 padding) map to -1."""
        ids = np.asarray(node_ids, dtype=np.int64)
        out = np.full(ids.shape, -1, dtype=np.int64)
        ok = (ids >= 0) & (ids < len(self.row_of))
        out[ok] = self.row_of[ids[ok]]
        return out

    def copy(self) -> "LearnerState":
        return LearnerState(self.in_embed.copy(), self.out_embed.copy(), self.nodes.copy(), self.row_of.copy())


@dataclass(frozen=True)
class PairBatch:
    centers: np.ndarray
    contexts: np.ndarray

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.centers.tolist(), self.contexts.tolist()))


@dataclass(frozen=True)
class NoiseDistribution:
    """Unigram^alpha distribution over vocabulary rows, with an alias table on its support."""

    probs: np.ndarray
    support: np.ndarray
    alias_prob: np.ndarray
    alias_idx: np.ndarray


@njit(cache=True, nogil=True)
def _count_pairs(seqs, window):
    total = 0
    for k in range(seqs.shape[0]):
        n = 0
        while n < seqs.shape[1] and seqs[k, n] >= 0:
            n += 1
        for p in range(n):
            lo = max(0, p - window)
            hi = min(n - 1, p + window)
            total += hi - lo
    return total


@njit(cache=True, nogil=True)
def _fill_pairs(seqs, window, centers, contexts):
    j = 0
    for k in range(seqs.shape[0]):
        n = 0
        while n < seqs.shape[1] and seqs[k, n] >= 0:
            n += 1
        for p in range(n):
            for o in range(max(0, p - window), min(n - 1, p + window) + 1):
                if o == p:
                    continue
                centers[j] = seqs[k, p]
                contexts[j] = seqs[k, o]
                j += 1


def _as_matrix(sequences) -> np.ndarray:
    if isinstance(sequences, np.ndarray) and sequences.ndim == 2:
        return np.ascontiguousarray(sequences, dtype=np.int64)
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    width = max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), width), -1, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def extract_pairs(sequences, window: int) -> PairBatch:
    """All (center, context) pairs within ``window`` positions, in sequence order.

    Sequences may be a list of integer sequences or a -1 padded 2-D array.
    """
    seqs = _as_matrix(sequences)
    n = _count_pairs(seqs, window)
    centers = np.empty(n, dtype=np.int64)
    contexts = np.empty(n, dtype=np.int64)
    _fill_pairs(seqs, window, centers, contexts)
    return PairBatch(centers, contexts)


def build_noise_distribution(batch: PairBatch, alpha: float = 0.75, size: int | None = None) -> NoiseDistribution:
    """Noise distribution proportional to (context count)^alpha."""
    if len(batch) == 0:
        raise ValueError("empty pair batch")
    counts = np.bincount(batch.contexts, minlength=size or 0).astype(np.float64)
    support = np.flatnonzero(counts)
    w = counts[support] ** alpha
    probs = np.zeros(len(counts))
    probs[support] = w / w.sum()
    ap = np.ones(len(support))
    ai = np.zeros(len(support), dtype=np.int64)
    _vose(probs[support], ap, ai)
    return NoiseDistribution(probs, support, ap, ai)


@njit(cache=True, inline="always")
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


@njit(cache=True, inline="always")
def _log_sigmoid(x):
    if x >= 0:
        return -np.log1p(np.exp(-x))
    return x - np.log1p(np.exp(x))


_FAST = {"nsz", "arcp", "contract", "afn", "reassoc"}


@njit(cache=True, nogil=True, fastmath=_FAST)
def _sgd_kernel(in_e, out_e, centers, contexts, support, ap, ai, q, lr0, lr_end, epochs, seed):
    d = in_e.shape[1]
    n = len(centers)
    total = n * epochs
    grad = np.empty(d)
    ns = len(support)
    step = 0
    for ep in range(epochs):
        state = stream_seed(seed, ep, 7)
        for k in range(n):
            lr = lr0 - (lr0 - lr_end) * step / total
            step += 1
            zc = in_e[centers[k]]
            grad[:] = 0.0
            for t in range(q + 1):
                if t == 0:
                    target = contexts[k]
                    label = 1.0
                else:
                    state, s = next_below(state, ns)
                    state, x = next_float(state)
                    if x >= ap[s]:
                        s = ai[s]
                    target = support[s]
                    label = 0.0
                zt = out_e[target]
                f = 0.0
                for j in range(d):
                    f += zc[j] * zt[j]
                g = (label - _sigmoid(f)) * lr
                if not np.isfinite(g):
                    return k + 1
                for j in range(d):
                    grad[j] += g * zt[j]
                    zt[j] += g * zc[j]
            for j in range(d):
                zc[j] += grad[j]
    return 0


def sgd_train(state: LearnerState, batch: PairBatch, noise: NoiseDistribution, cfg: TrainConfig, rng) -> LearnerState:
    """Gradient ascent on the SGNS objective, updating ``state`` in place.

    For every positive pair, ``cfg.negatives`` noise rows are drawn afresh.
    The step size decays linearly from ``learning_rate`` to
    ``learning_rate * min_lr_ratio`` over the call unless ``lr_decay`` is off.
    """
    if len(batch) == 0:
        return state
    n = len(state)
    if batch.centers.max() >= n or batch.contexts.max() >= n or batch.centers.min() < 0 or batch.contexts.min() < 0:
        raise IndexError("pair batch refers to rows outside the learner vocabulary")
    if cfg.negatives > 0 and len(noise.support) and noise.support.max() >= n:
        raise IndexError("noise distribution refers to rows outside the learner vocabulary")
    seed = draw_seed(rng) if isinstance(rng, np.random.Generator) else int(rng)
    lr0 = float(cfg.learning_rate)
    lr_end = lr0 * cfg.min_lr_ratio if cfg.lr_decay else lr0
    status = _sgd_kernel(state.in_embed, state.out_embed, batch.centers, batch.contexts,
                         noise.support, noise.alias_prob, noise.alias_idx,
                         int(cfg.negatives), lr0, lr_end, int(cfg.epochs), seed)
    if status:
        k = status - 1
        raise FloatingPointError(
            f"non-finite gradient at pair {k} (center row {batch.centers[k]}, context row {batch.contexts[k]})")
    return state


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def objective_value(state: LearnerState, batch: PairBatch, negatives: np.ndarray) -> float:
    """SGNS objective summed over ``batch`` with pre-drawn ``negatives`` of shape (len(batch), q)."""
    zc = state.in_embed[batch.centers]
    pos = np.einsum("ij,ij->i", zc, state.out_embed[batch.contexts])
    total = log_sigmoid(pos).sum()
    negatives = np.asarray(negatives, dtype=np.int64).reshape(len(batch), -1)
    if negatives.shape[1]:
        neg = np.einsum("ij,ikj->ik", zc, state.out_embed[negatives])
        total += log_sigmoid(-neg).sum()
    return float(total)


def draw_negatives(noise: NoiseDistribution, n_pairs: int, q: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(len(noise.probs), size=(n_pairs, q), p=noise.probs)


def pair_gradients(zc, z_pos, z_neg):
    """Gradients of ``log s(zc.z_pos) + sum_k log s(-zc.z_neg[k])``.

    Returns ``(d/dzc, d/dz_pos, d/dz_neg)``; ``z_neg`` has shape (q, d).
    """
    zc = np.asarray(zc, dtype=np.float64)
    z_pos = np.asarray(z_pos, dtype=np.float64)
    z_neg = np.asarray(z_neg, dtype=np.float64).reshape(-1, len(zc))
    gp = 1.0 - sigmoid(zc @ z_pos)
    gn = -sigmoid(z_neg @ zc)
    d_zc = gp * z_pos + gn @ z_neg
    return d_zc, gp * zc, gn[:, None] * zc[None, :]


def _empty_row_of(size: int) -> np.ndarray:
    return np.full(size, -1, dtype=np.int64)


def init_offline(nodes, dim: int, rng: np.random.Generator) -> LearnerState:
    """Fresh learner: in-rows uniform in [-0.5/dim, 0.5/dim], out-rows zero."""
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    if len(nodes) == 0:
        raise ValueError("no nodes to initialise")
    in_e = rng.uniform(-0.5 / dim, 0.5 / dim, size=(len(nodes), dim))
    out_e = np.zeros((len(nodes), dim))
    row_of = _empty_row_of(int(nodes.max()) + 1)
    row_of[nodes] = np.arange(len(nodes))
    return LearnerState(in_e, out_e, nodes, row_of)


def init_incremental(prev: LearnerState, new_nodes, rng: np.random.Generator) -> LearnerState:
    """Inherit ``prev`` and append offline-style rows for ``new_nodes``."""
    new = np.unique(np.asarray(new_nodes, dtype=np.int64))
    if len(new) and np.any(prev.rows(new) >= 0):
        raise ValueError("new nodes overlap the existing vocabulary")
    if len(new) == 0:
        return prev.copy()
    dim = prev.dim
    in_e = np.vstack([prev.in_embed, rng.uniform(-0.5 / dim, 0.5 / dim, size=(len(new), dim))])
    out_e = np.vstack([prev.out_embed, np.zeros((len(new), dim))])
    size = max(len(prev.row_of), int(new.max()) + 1)
    row_of = _empty_row_of(size)
    row_of[:len(prev.row_of)] = prev.row_of
    row_of[new] = np.arange(len(prev), len(prev) + len(new))
    return LearnerState(in_e, out_e, np.concatenate([prev.nodes, new]), row_of)
