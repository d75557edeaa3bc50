"""Edge-stream ingestion, snapshot slicing and the dynamic-network data model.

Node labels from input files are arbitrary strings. They are mapped to dense
integer ids in order of first appearance in the time-ordered stream, and every
graph structure below works on those ids. Snapshots store a CSR adjacency over
the whole id space of their network, so a node that is absent from a snapshot
simply has degree 0.
"""
from __future__ import annotations

import io
import json
import os
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


class EdgeStreamError(ValueError):
    """Raised for malformed or empty edge streams."""


class SlicingError(ValueError):
    """Raised when a stream cannot be sliced into valid snapshots."""


def edge_keys(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Canonical int64 key for undirected edges (smaller id in the high word)."""
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    lo = np.minimum(u, v)
    hi = np.maximum(u, v)
    return (lo << 32) | hi


def split_keys(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    keys = np.asarray(keys, dtype=np.int64)
    return keys >> 32, keys & 0xFFFFFFFF


@dataclass(frozen=True)
class EdgeStream:
    """Time-ordered edge records with labels mapped to dense ids."""

    src: np.ndarray
    dst: np.ndarray
    timestamps: np.ndarray
    labels: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def records(self) -> list[tuple[str, str, int]]:
        lab = self.labels
        return [(lab[u], lab[v], int(t)) for u, v, t in zip(self.src, self.dst, self.timestamps)]

    @property
    def num_ids(self) -> int:
        return len(self.labels)


def _iter_lines(source) -> Iterable[str]:
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def ingest_edge_stream(source: str | Iterable[str]) -> EdgeStream:
    """Parse "src dst timestamp" lines into an ordered :class:`EdgeStream`.

    ``source`` is either the full text or an iterable of lines (an open file
    works). Lines starting with ``#`` and blank lines are ignored, extra
    columns are ignored. Records are stably sorted by timestamp and self-loops
    are dropped; duplicate records are kept.
    """
    raw: list[tuple[str, str, int]] = []
    for lineno, line in enumerate(_iter_lines(source), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) < 3:
            raise EdgeStreamError(f"line {lineno}: expected 'src dst timestamp', got {text!r}")
        try:
            ts = int(parts[2])
        except ValueError:
            try:
                ts = int(float(parts[2]))
            except ValueError:
                raise EdgeStreamError(f"line {lineno}: bad timestamp {parts[2]!r}") from None
        if parts[0] == parts[1]:
            continue
        raw.append((parts[0], parts[1], ts))
    if not raw:
        raise EdgeStreamError("edge stream is empty (after dropping comments and self-loops)")

    # python's sort is stable, so equal timestamps keep their input order
    raw.sort(key=lambda rec: rec[2])
    index: dict[str, int] = {}
    src = np.empty(len(raw), dtype=np.int64)
    dst = np.empty(len(raw), dtype=np.int64)
    ts = np.empty(len(raw), dtype=np.int64)
    for i, (a, b, t) in enumerate(raw):
        src[i] = index.setdefault(a, len(index))
        dst[i] = index.setdefault(b, len(index))
        ts[i] = t
    return EdgeStream(src, dst, ts, tuple(index))


def read_edge_stream(path: str | os.PathLike) -> EdgeStream:
    with open(path, encoding="utf-8") as fh:
        return ingest_edge_stream(fh)


def write_edge_stream(stream: EdgeStream, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, t in stream.records:
            fh.write(f"{a} {b} {t}\n")


class Snapshot:
    """Immutable undirected graph over a fixed id space ``0..num_ids-1``.

    ``indptr``/``indices`` form a CSR adjacency with sorted neighbor lists.
    ``weights`` is parallel to ``indices``; it is all ones for the unweighted
    graphs built from edge streams.
    """

    __slots__ = ("num_ids", "nodes", "indptr", "indices", "weights", "labels", "_keys")

    def __init__(self, num_ids, indptr, indices, weights=None, labels=None):
        self.num_ids = int(num_ids)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        if weights is None:
            weights = np.ones(len(self.indices), dtype=np.float64)
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        self.labels = labels
        self.nodes = np.flatnonzero(np.diff(self.indptr) > 0)
        self._keys = None
        for arr in (self.indptr, self.indices, self.weights, self.nodes):
            arr.setflags(write=False)

    @classmethod
    def from_edges(cls, u, v, num_ids: int, weights=None, labels=None) -> "Snapshot":
        """Build from an undirected edge list; duplicates collapse, self-loops are dropped.

        With ``weights`` given, the weight of the first occurrence of each edge is kept.
        """
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        keep = u != v
        u, v = u[keep], v[keep]
        keys = edge_keys(u, v)
        keys, first = np.unique(keys, return_index=True)
        a, b = split_keys(keys)
        if weights is not None:
            w = np.asarray(weights, dtype=np.float64)[keep][first]
            w = np.concatenate([w, w])
        else:
            w = None
        rows = np.concatenate([a, b])
        cols = np.concatenate([b, a])
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        if w is not None:
            w = w[order]
        indptr = np.zeros(num_ids + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        np.cumsum(indptr, out=indptr)
        snap = cls(num_ids, indptr, cols, w, labels)
        snap._keys = keys
        return snap

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    def degree(self, u: int) -> int:
        if u < 0 or u >= self.num_ids:
            return 0
        return int(self.indptr[u + 1] - self.indptr[u])

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def __contains__(self, u) -> bool:
        return self.degree(int(u)) > 0

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < len(nb) and nb[i] == v)

    def edge_keys(self) -> np.ndarray:
        """Sorted canonical keys of all edges."""
        if self._keys is None:
            rows = np.repeat(np.arange(self.num_ids, dtype=np.int64), np.diff(self.indptr))
            mask = rows < self.indices
            self._keys = np.sort((rows[mask] << 32) | self.indices[mask])
            self._keys.setflags(write=False)
        return self._keys

    def edges(self) -> np.ndarray:
        """``(|E|, 2)`` array of edges with ``u < v``."""
        a, b = split_keys(self.edge_keys())
        return np.stack([a, b], axis=1)

    def to_scipy(self) -> csr_matrix:
        return csr_matrix((self.weights, self.indices, self.indptr), shape=(self.num_ids, self.num_ids))

    def subgraph(self, nodes) -> "Snapshot":
        """Induced subgraph on ``nodes``, same id space."""
        keep = np.zeros(self.num_ids, dtype=bool)
        keep[np.asarray(nodes, dtype=np.int64)] = True
        e = self.edges()
        mask = keep[e[:, 0]] & keep[e[:, 1]]
        w = None
        if not np.all(self.weights == 1.0):
            w = np.array([self.weights[self.indptr[a] + np.searchsorted(self.neighbors(a), b)] for a, b in e[mask]])
        return Snapshot.from_edges(e[mask, 0], e[mask, 1], self.num_ids, weights=w, labels=self.labels)

    def label(self, u: int) -> str:
        return self.labels[u] if self.labels is not None else str(u)

    def __repr__(self) -> str:
        return f"Snapshot(nodes={self.num_nodes}, edges={self.num_edges})"


@dataclass(frozen=True)
class DeltaView:
    new_edges: np.ndarray  # (k, 2), u < v
    affected_nodes: np.ndarray  # sorted ids


@dataclass
class DynamicNetwork:
    """Ordered cumulative snapshots plus the raw streaming-edge count per step."""

    snapshots: list[Snapshot]
    slice_sizes: list[int]
    labels: tuple[str, ...] = ()
    num_slices: int | None = None
    init_fraction: Fraction | None = None
    dropped_nodes: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.slice_sizes) != len(self.snapshots) - 1:
            raise ValueError("need one slice size per step after the initial snapshot")
        if not self.dropped_nodes:
            self.dropped_nodes = [0] * len(self.slice_sizes)

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, t: int) -> Snapshot:
        return self.snapshots[t]

    @property
    def num_ids(self) -> int:
        return self.snapshots[0].num_ids

    def label(self, u: int) -> str:
        return self.labels[u] if self.labels else str(u)

    def manifest(self) -> dict:
        return {
            "num_slices": self.num_slices if self.num_slices is not None else len(self.slice_sizes),
            "init_fraction": str(self.init_fraction) if self.init_fraction is not None else None,
            "slice_sizes": [int(x) for x in self.slice_sizes],
            "nodes": [g.num_nodes for g in self.snapshots],
            "edges": [g.num_edges for g in self.snapshots],
            "lcc_dropped_nodes": [int(x) for x in self.dropped_nodes],
            "docs": degree_of_changes(self) if len(self.snapshots) >= 2 else None,
        }


def largest_connected_component(g: Snapshot) -> Snapshot:
    """Largest component by node count; ties go to the component holding the smallest id."""
    if g.num_nodes == 0:
        raise ValueError("graph has no edges")
    _, comp = connected_components(g.to_scipy(), directed=False)
    comp_nodes = comp[g.nodes]
    labels_, first_pos, counts = np.unique(comp_nodes, return_index=True, return_counts=True)
    # g.nodes is sorted, so first_pos orders components by their smallest id
    best = labels_[np.lexsort((first_pos, -counts))[0]]
    if counts.max() == g.num_nodes:
        return g
    return g.subgraph(g.nodes[comp_nodes == best])


def delta(prev: Snapshot, curr: Snapshot) -> DeltaView:
    new = np.setdiff1d(curr.edge_keys(), prev.edge_keys(), assume_unique=True)
    a, b = split_keys(new)
    return DeltaView(np.stack([a, b], axis=1), np.union1d(a, b))


def _slice_bounds(n_rest: int, num_slices: int) -> list[int]:
    base, extra = divmod(n_rest, num_slices)
    return [base + 1 if i < extra else base for i in range(num_slices)]


def slice_stream(stream: EdgeStream, num_slices: int, init_fraction=Fraction(1, 5)) -> DynamicNetwork:
    """Cut a stream into an initial snapshot plus ``num_slices`` cumulative steps.

    Each snapshot is the largest connected component of the cumulative raw
    edge set up to that step, so the final snapshot does not depend on how
    many slices were used.
    """
    if num_slices < 1:
        raise SlicingError("num_slices must be >= 1")
    frac = Fraction(init_fraction).limit_denominator(10**9) if isinstance(init_fraction, float) else Fraction(init_fraction)
    n = len(stream)
    n0 = (frac * n).numerator // (frac * n).denominator
    if n0 == 0:
        raise SlicingError(f"initial portion is empty ({n} records, init_fraction={frac})")
    sizes = _slice_bounds(n - n0, num_slices)
    keys = edge_keys(stream.src, stream.dst)
    n_ids = stream.num_ids

    snapshots: list[Snapshot] = []
    dropped: list[int] = []
    cum = np.unique(keys[:n0])
    start = n0
    for t in range(num_slices + 1):
        if t > 0:
            stop = start + sizes[t - 1]
            cum = np.union1d(cum, keys[start:stop])
            start = stop
        a, b = split_keys(cum)
        raw = Snapshot.from_edges(a, b, n_ids, labels=stream.labels)
        if raw.num_edges == 0:
            raise SlicingError(f"snapshot {t} has no edges")
        g = largest_connected_component(raw)
        if snapshots:
            lost = np.setdiff1d(snapshots[-1].nodes, g.nodes, assume_unique=True)
            dropped.append(len(lost))
            if len(lost):
                warnings.warn(f"snapshot {t}: {len(lost)} node(s) left the largest connected component")
        snapshots.append(g)
    return DynamicNetwork(snapshots, sizes, stream.labels, num_slices, frac, dropped)


def docs_from_slice_sizes(sizes: Sequence[int]) -> float:
    if len(sizes) == 0:
        raise ValueError("need at least one step")
    return float(Fraction(int(sum(sizes)), len(sizes)))


def degree_of_changes(net: DynamicNetwork) -> float:
    """Average number of streaming edges per step (raw slice records)."""
    if len(net.snapshots) < 2:
        raise ValueError("degree of changes needs at least two snapshots")
    return docs_from_slice_sizes(net.slice_sizes)


def save_network(net: DynamicNetwork, path: str | os.PathLike) -> None:
    """Write the sliced network as a compressed ``.npz`` (edges per snapshot plus labels)."""
    keys = [g.edge_keys() for g in net.snapshots]
    offsets = np.cumsum([0] + [len(k) for k in keys])
    np.savez_compressed(
        path,
        keys=np.concatenate(keys),
        offsets=offsets,
        num_ids=np.int64(net.num_ids),
        labels=np.array(net.labels if net.labels else [str(i) for i in range(net.num_ids)], dtype=str),
        slice_sizes=np.asarray(net.slice_sizes, dtype=np.int64),
        dropped=np.asarray(net.dropped_nodes, dtype=np.int64),
        meta=json.dumps({"num_slices": net.num_slices,
                         "init_fraction": str(net.init_fraction) if net.init_fraction is not None else None}),
    )


def load_network(path: str | os.PathLike) -> DynamicNetwork:
    with np.load(path) as z:
        keys, offsets = z["keys"], z["offsets"]
        num_ids = int(z["num_ids"])
        labels = tuple(str(x) for x in z["labels"])
        meta = json.loads(str(z["meta"]))
        slice_sizes = [int(x) for x in z["slice_sizes"]]
        dropped = [int(x) for x in z["dropped"]]
    snaps = []
    for t in range(len(offsets) - 1):
        a, b = split_keys(keys[offsets[t]:offsets[t + 1]])
        snaps.append(Snapshot.from_edges(a, b, num_ids, labels=labels))
    frac = Fraction(meta["init_fraction"]) if meta.get("init_fraction") else None
    return DynamicNetwork(snaps, slice_sizes, labels, meta.get("num_slices"), frac, dropped)
