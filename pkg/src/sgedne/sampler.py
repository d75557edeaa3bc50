"""Alias-sampled random walks with restart over a snapshot."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ._rand import draw_seed, next_below, next_float, stream_seed
from .dyngraph import Snapshot


@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 10
    walk_length: int = 80
    restart_prob: float = 0.0

    def __post_init__(self):
        if self.walks_per_node < 1:
            raise ValueError("walks_per_node must be >= 1")
        if self.walk_length < 2:
            raise ValueError("walk_length must be >= 2")
        if not 0.0 <= self.restart_prob <= 1.0:
            raise ValueError("restart_prob must lie in [0, 1]")


@dataclass(frozen=True)
class AliasTables:
    """Per-node alias tables laid out parallel to the snapshot's CSR ``indices``.

    For node ``u`` the slots ``indptr[u]:indptr[u+1]`` hold the acceptance
    probability of each neighbor and the local offset of its alias.
    """

    indptr: np.ndarray
    prob: np.ndarray
    alias: np.ndarray

    def has_table(self, u: int) -> bool:
        return self.indptr[u + 1] > self.indptr[u]

    def distribution(self, u: int) -> np.ndarray:
        """Exact probabilities encoded by the table of ``u`` (in neighbor order)."""
        lo, hi = self.indptr[u], self.indptr[u + 1]
        deg = hi - lo
        out = self.prob[lo:hi] / deg
        np.add.at(out, self.alias[lo:hi], (1.0 - self.prob[lo:hi]) / deg)
        return out


@njit(cache=True, nogil=True)
def _vose(w, prob_out, alias_out):
    n = len(w)
    total = 0.0
    for i in range(n):
        total += w[i]
    scaled = np.empty(n)
    small = np.empty(n, dtype=np.int64)
    large = np.empty(n, dtype=np.int64)
    ns = 0
    nl = 0
    for i in range(n):
        scaled[i] = w[i] * n / total
        alias_out[i] = i
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        g = large[nl - 1]
        prob_out[s] = scaled[s]
        alias_out[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        if scaled[g] < 1.0:
            nl -= 1
            small[ns] = g
            ns += 1
    for i in range(nl):
        prob_out[large[i]] = 1.0
    for i in range(ns):
        # leftovers are 1 up to rounding
        prob_out[small[i]] = 1.0


@njit(cache=True, nogil=True)
def _build_tables(indptr, weights, prob, alias, reuse, old_indptr, old_prob, old_alias):
    n = len(indptr) - 1
    n_old = len(old_indptr) - 1
    for u in range(n):
        lo = indptr[u]
        hi = indptr[u + 1]
        if hi == lo:
            continue
        if reuse and u < n_old and old_indptr[u + 1] - old_indptr[u] == hi - lo:
            olo = old_indptr[u]
            for k in range(hi - lo):
                prob[lo + k] = old_prob[olo + k]
                alias[lo + k] = old_alias[olo + k]
        else:
            _vose(weights[lo:hi], prob[lo:hi], alias[lo:hi])


def build_alias_tables(g: Snapshot, previous: AliasTables | None = None) -> AliasTables:
    """Alias tables for the transition ``P(j|i) = A_ij / sum_j' A_ij'``.

    With ``previous`` (tables of an earlier snapshot of the same cumulative
    network) the tables of nodes whose degree did not change are copied
    instead of rebuilt. In a cumulative network edges are only ever added to
    surviving nodes, so an unchanged degree means an unchanged neighbor list.
    Do not pass ``previous`` when weights can change without the degree.
    """
    nnz = len(g.indices)
    prob = np.ones(nnz, dtype=np.float64)
    alias = np.zeros(nnz, dtype=np.int64)
    if previous is None:
        old = (np.zeros(1, dtype=np.int64), np.ones(0), np.zeros(0, dtype=np.int64))
        _build_tables(g.indptr, g.weights, prob, alias, False, *old)
    else:
        _build_tables(g.indptr, g.weights, prob, alias, True, previous.indptr, previous.prob, previous.alias)
    return AliasTables(g.indptr, prob, alias)


@njit(cache=True, inline="always")
def _step(state, u, indptr, indices, prob, alias):
    lo = indptr[u]
    deg = indptr[u + 1] - lo
    state, k = next_below(state, deg)
    state, x = next_float(state)
    if x >= prob[lo + k]:
        k = alias[lo + k]
    return state, indices[lo + k]


@njit(cache=True, nogil=True)
def _walks_kernel(indptr, indices, prob, alias, starts, r, length, restart, seed):
    out = np.full((len(starts) * r, length), -1, dtype=np.int64)
    for i in range(len(starts)):
        s = starts[i]
        for j in range(r):
            row = i * r + j
            state = stream_seed(seed, s, j)
            out[row, 0] = s
            cur = s
            for p in range(1, length):
                if indptr[cur + 1] == indptr[cur]:
                    break
                state, x = next_float(state)
                if x < restart:
                    cur = s
                else:
                    state, cur = _step(state, cur, indptr, indices, prob, alias)
                out[row, p] = cur
    return out


@njit(cache=True, nogil=True)
def _sample_kernel(indptr, indices, prob, alias, u, n, seed):
    out = np.empty(n, dtype=np.int64)
    state = stream_seed(seed, u, 0)
    for i in range(n):
        state, out[i] = _step(state, u, indptr, indices, prob, alias)
    return out


def sample_transitions(g: Snapshot, tables: AliasTables, u: int, n: int, seed: int) -> np.ndarray:
    """``n`` independent one-step transitions out of ``u``."""
    if g.degree(u) == 0:
        raise ValueError(f"node {u} has no neighbors")
    return _sample_kernel(g.indptr, g.indices, tables.prob, tables.alias, int(u), int(n), int(seed))


def _seed_of(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return draw_seed(rng)
    return int(rng)


def rwr_walk(g: Snapshot, tables: AliasTables, start: int, cfg: WalkConfig, rng) -> np.ndarray:
    """One truncated walk with restart from ``start``.

    At every step after the first, the walker returns to ``start`` with
    probability ``cfg.restart_prob`` (the restart occupies that position) and
    otherwise moves to a neighbor drawn from the alias table. ``rng`` is a
    numpy Generator or an integer seed.
    """
    start = int(start)
    if not 0 <= start < g.num_ids or g.degree(start) == 0:
        raise ValueError(f"start node {start} is not in the snapshot")
    w = _walks_kernel(g.indptr, g.indices, tables.prob, tables.alias, np.array([start], dtype=np.int64),
                      1, cfg.walk_length, float(cfg.restart_prob), _seed_of(rng))[0]
    return w[w >= 0]


def generate_walks(g: Snapshot, tables: AliasTables, start_nodes, cfg: WalkConfig, rng) -> np.ndarray:
    """``walks_per_node`` walks from each start node, as rows of a 2-D array in shuffled order.

    Each (start node, walk index) pair has its own random stream derived from
    one seed drawn from ``rng``; the row order is then permuted with ``rng``.
    Rows are padded with -1 if a walk hits a node without neighbors.
    """
    starts = np.unique(np.asarray(list(start_nodes) if not isinstance(start_nodes, np.ndarray) else start_nodes,
                                  dtype=np.int64))
    if len(starts) == 0:
        return np.empty((0, cfg.walk_length), dtype=np.int64)
    bad = (starts < 0) | (starts >= g.num_ids)
    if bad.any() or np.any(np.diff(g.indptr)[starts] == 0):
        raise ValueError("start nodes must belong to the snapshot")
    seed = _seed_of(rng)
    walks = _walks_kernel(g.indptr, g.indices, tables.prob, tables.alias, starts,
                          cfg.walks_per_node, cfg.walk_length, float(cfg.restart_prob), seed)
    perm = np.random.default_rng(seed).permutation(len(walks))
    return walks[perm]


@dataclass(frozen=True)
class WalkStats:
    nodes: np.ndarray  # visited node ids, sorted
    counts: np.ndarray  # visits per node, parallel to ``nodes``

    @property
    def unique(self) -> int:
        return len(self.nodes)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.nodes.tolist(), self.counts.tolist()))


def walk_statistics(sequences) -> WalkStats:
    """Visit counts per node and the number of distinct visited nodes."""
    if isinstance(sequences, np.ndarray):
        flat = sequences.ravel()
    else:
        flat = np.concatenate([np.asarray(s, dtype=np.int64).ravel() for s in sequences]) if len(sequences) else np.empty(0)
    flat = flat[flat >= 0]
    if flat.size == 0:
        raise ValueError("no sequences")
    nodes, counts = np.unique(flat, return_counts=True)
    return WalkStats(nodes, counts)


def write_walks(walks, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w in walks:
            fh.write(" ".join(str(int(x)) for x in w if x >= 0) + "\n")
