"""Barabasi-Albert preferential-attachment graphs for the scalability benchmarks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ._rand import draw_seed, next_below, stream_seed
from .dyngraph import DynamicNetwork, EdgeStream, Snapshot


@dataclass(frozen=True)
class BAConfig:
    edges_per_node: int = 4
    seed_nodes: int | None = None  # defaults to edges_per_node
    nodes_per_snapshot: int = 4
    num_snapshots: int = 20

    def __post_init__(self):
        if self.edges_per_node < 1:
            raise ValueError("edges_per_node must be >= 1")
        if self.n0 < self.edges_per_node:
            raise ValueError("seed_nodes must be >= edges_per_node")

    @property
    def n0(self) -> int:
        return self.seed_nodes if self.seed_nodes is not None else self.edges_per_node


@njit(cache=True)
def _ba_kernel(n, m, n0, seed):
    n_edges = (n0 - 1) + m * (n - n0)
    src = np.empty(n_edges, dtype=np.int64)
    dst = np.empty(n_edges, dtype=np.int64)
    ends = np.empty(2 * n_edges, dtype=np.int64)
    n_ends = 0
    e = 0
    for i in range(n0 - 1):
        src[e] = i
        dst[e] = i + 1
        ends[n_ends] = i
        ends[n_ends + 1] = i + 1
        n_ends += 2
        e += 1
    state = stream_seed(seed, 0, 0)
    targets = np.empty(m, dtype=np.int64)
    for v in range(n0, n):
        k = 0
        while k < m:
            if n_ends == 0:
                state, cand = next_below(state, v)
            else:
                state, j = next_below(state, n_ends)
                cand = ends[j]
            dup = False
            for x in range(k):
                if targets[x] == cand:
                    dup = True
                    break
            if not dup:
                targets[k] = cand
                k += 1
        # endpoints are appended after all targets are chosen so a node never picks itself
        for x in range(m):
            src[e] = v
            dst[e] = targets[x]
            ends[n_ends] = v
            ends[n_ends + 1] = targets[x]
            n_ends += 2
            e += 1
    return src, dst


def _seed(rng) -> int:
    return draw_seed(rng) if isinstance(rng, np.random.Generator) else int(rng)


def ba_edges(n: int, cfg: BAConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Edges ``(new node, target)`` in insertion order, starting from a path on ``n0`` nodes."""
    if n < cfg.n0:
        raise ValueError(f"n={n} is smaller than the seed size {cfg.n0}")
    return _ba_kernel(int(n), int(cfg.edges_per_node), int(cfg.n0), _seed(rng))


def ba_generate(n: int, cfg: BAConfig | None = None, rng=0) -> Snapshot:
    cfg = cfg or BAConfig()
    src, dst = ba_edges(n, cfg, rng)
    return Snapshot.from_edges(src, dst, n)


def ba_edge_stream(n: int, cfg: BAConfig | None = None, rng=0) -> EdgeStream:
    """BA graph as an edge stream whose timestamps are the insertion order."""
    cfg = cfg or BAConfig()
    src, dst = ba_edges(n, cfg, rng)
    return EdgeStream(src, dst, np.arange(len(src), dtype=np.int64), tuple(str(i) for i in range(n)))


def ba_dynamic(cfg: BAConfig | None = None, rng=0) -> DynamicNetwork:
    """Growing BA network: ``nodes_per_snapshot`` new nodes join at every snapshot.

    G^0 holds the seed plus the first batch, so the last snapshot has
    ``n0 + nodes_per_snapshot * num_snapshots`` nodes.
    """
    cfg = cfg or BAConfig()
    if cfg.num_snapshots < 2:
        raise ValueError("need at least two snapshots")
    delta_n = cfg.nodes_per_snapshot
    n = cfg.n0 + delta_n * cfg.num_snapshots
    src, dst = ba_edges(n, cfg, rng)
    labels = tuple(str(i) for i in range(n))
    snaps = []
    for t in range(cfg.num_snapshots):
        size = cfg.n0 + delta_n * (t + 1)
        e = (cfg.n0 - 1) + cfg.edges_per_node * (size - cfg.n0)
        snaps.append(Snapshot.from_edges(src[:e], dst[:e], n, labels=labels))
    sizes = [delta_n * cfg.edges_per_node] * (cfg.num_snapshots - 1)
    return DynamicNetwork(snaps, sizes, labels, cfg.num_snapshots - 1, None)


def degree_tail_slope(g: Snapshot, k_min: int | None = None, bins_per_octave: int = 2) -> float:
    """Log-log slope of the log-binned degree density, fitted by least squares."""
    deg = np.diff(g.indptr)[g.nodes]
    k_min = k_min or int(deg.min())
    deg = deg[deg >= k_min]
    edges = k_min * 2.0 ** (np.arange(0, np.log2(deg.max() / k_min) + 1.0 / bins_per_octave + 1e-9,
                                      1.0 / bins_per_octave))
    counts, edges = np.histogram(deg, bins=edges)
    # number of integer degrees falling in each bin
    widths = np.ceil(edges[1:]) - np.ceil(edges[:-1])
    centers = np.sqrt(edges[:-1] * edges[1:])
    ok = (counts >= 5) & (widths > 0)
    x = np.log(centers[ok])
    y = np.log(counts[ok] / widths[ok] / len(deg))
    return float(np.polyfit(x, y, 1)[0])
