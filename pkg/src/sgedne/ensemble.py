"""Ensembles of incremental SGNS learners fed by walks with different restart probabilities.

Each learner owns a slice of the output dimensions and its own restart
probability. At t = 0 every learner walks from all nodes and trains from
scratch; afterwards it inherits its previous weights and only walks from the
nodes touched by new edges. The per-learner in-matrices are concatenated and
min-max rescaled per column to give the output embedding.
"""
from __future__ import annotations

import io
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._rand import draw_seed
from .dyngraph import DynamicNetwork, Snapshot, delta
from .sampler import AliasTables, WalkConfig, build_alias_tables, generate_walks
from .sgns import (LearnerState, TrainConfig, build_noise_distribution, extract_pairs, init_incremental,
                   init_offline, sgd_train)

log = logging.getLogger(__name__)

VARIANTS = ("sg-edne", "edne-rwr", "dne-rw", "edne-rw-fix", "edne-rw", "edne-rwr-ws")


@dataclass(frozen=True)
class EnsembleConfig:
    num_learners: int = 5
    max_restart: float = 0.1
    total_dim: int = 128
    walks_per_node: int = 10
    walk_length: int = 80
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler_mode: str = "rwr"
    shared_walks: bool = False
    rescale: bool = True
    retrain_every: int | None = None
    threads: int = 1

    def __post_init__(self):
        if not 1 <= self.num_learners <= self.total_dim:
            raise ValueError("need 1 <= num_learners <= total_dim")
        if not 0.0 <= self.max_restart <= 1.0:
            raise ValueError("max_restart must lie in [0, 1]")
        if self.sampler_mode not in ("rw", "rwr"):
            raise ValueError(f"unknown sampler mode {self.sampler_mode!r}")


def variant_config(name: str, base: EnsembleConfig | None = None) -> EnsembleConfig:
    """Config for one of the named ablation variants, built on ``base``.

    ``dne-rw`` forces a single learner; every other variant keeps the
    learner count of ``base``.
    """
    base = base or EnsembleConfig()
    name = name.lower()
    if name in ("sg-edne", "edne-rwr"):
        return replace(base, sampler_mode="rwr", shared_walks=False, rescale=True)
    if name == "dne-rw":
        return replace(base, num_learners=1, sampler_mode="rw", shared_walks=False, rescale=True)
    if name == "edne-rw-fix":
        return replace(base, sampler_mode="rw", shared_walks=True, rescale=True)
    if name == "edne-rw":
        return replace(base, sampler_mode="rw", shared_walks=False, rescale=True)
    if name == "edne-rwr-ws":
        return replace(base, sampler_mode="rwr", shared_walks=False, rescale=False)
    raise ValueError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")


def assign_restarts(max_restart: float, num_learners: int) -> list[float]:
    """R_m = (m-1) * max_restart / M for m = 1..M."""
    if num_learners < 1:
        raise ValueError("need at least one learner")
    return [m * max_restart / num_learners for m in range(num_learners)]


def assign_dims(total_dim: int, num_learners: int) -> list[int]:
    """Equal integer shares; the last learner also takes the remainder."""
    if num_learners > total_dim:
        raise ValueError(f"cannot split {total_dim} dimensions over {num_learners} learners")
    base, rem = divmod(total_dim, num_learners)
    return [base] * (num_learners - 1) + [base + rem]


@dataclass
class CombinedEmbedding:
    """Embedding matrix with one row per node id in ``nodes``."""

    matrix: np.ndarray
    nodes: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        self._index = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row_index(self) -> dict[int, int]:
        if self._index is None:
            self._index = {int(u): i for i, u in enumerate(self.nodes)}
        return self._index

    def vectors(self, node_ids) -> np.ndarray:
        idx = self.row_index()
        return self.matrix[[idx[int(u)] for u in node_ids]]

    def __contains__(self, u) -> bool:
        return int(u) in self.row_index()


def combine(matrices, nodes=None) -> CombinedEmbedding:
    """Concatenate per-learner matrices column-wise, in learner order.

    ``matrices`` may be plain arrays sharing a row layout, or
    :class:`CombinedEmbedding` objects whose ``nodes`` must agree.
    """
    if not matrices:
        raise ValueError("nothing to combine")
    if isinstance(matrices[0], CombinedEmbedding):
        ref = matrices[0].nodes
        for e in matrices[1:]:
            if not np.array_equal(e.nodes, ref):
                raise ValueError("row mapping mismatch between learners")
        nodes = ref if nodes is None else nodes
        arrays = [e.matrix for e in matrices]
    else:
        arrays = [np.asarray(m) for m in matrices]
    rows = {a.shape[0] for a in arrays}
    if len(rows) != 1:
        raise ValueError("row count mismatch between learners")
    if nodes is None:
        nodes = np.arange(arrays[0].shape[0])
    return CombinedEmbedding(np.hstack(arrays), np.asarray(nodes))


def rescale_minmax_columns(matrix: np.ndarray) -> np.ndarray:
    """Map every column to [0, 1]; constant columns become zeros. Returns a new array."""
    m = np.asarray(matrix, dtype=np.float64)
    lo = m.min(axis=0)
    span = m.max(axis=0) - lo
    out = np.zeros_like(m)
    ok = span > 0
    out[:, ok] = (m[:, ok] - lo[ok]) / span[ok]
    return out


@dataclass
class StepRecord:
    t: int
    mode: str
    num_nodes: int
    num_affected: int
    walk_starts: list[int]
    num_walks: list[int]
    num_pairs: list[int]
    seconds: float
    visited: list[np.ndarray] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {"t": self.t, "mode": self.mode, "num_nodes": self.num_nodes, "num_affected": self.num_affected,
                "walk_starts": self.walk_starts, "num_walks": self.num_walks, "num_pairs": self.num_pairs,
                "seconds": round(self.seconds, 6)}


@dataclass
class EnsembleModel:
    config: EnsembleConfig
    seed: int
    learners: list[LearnerState]
    restarts: list[float]
    dims: list[int]
    t: int = 0
    snapshot: Snapshot | None = field(default=None, repr=False)
    tables: AliasTables | None = field(default=None, repr=False)
    history: list[StepRecord] = field(default_factory=list, repr=False)

    def embedding(self, g: Snapshot | None = None, rescale: bool | None = None) -> CombinedEmbedding:
        """Combined embedding of the nodes of ``g``, rescaled per the config unless ``rescale`` overrides it."""
        g = g if g is not None else self.snapshot
        return _combined(self.learners, g, self.config.rescale if rescale is None else rescale)


def _learner_rng(seed: int, learner: int, t: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, learner, t, purpose])


_WALK, _INIT, _TRAIN = 0, 1, 2


def _restarts_for(cfg: EnsembleConfig) -> list[float]:
    if cfg.sampler_mode == "rw":
        return [0.0] * cfg.num_learners
    return assign_restarts(cfg.max_restart, cfg.num_learners)


def _combined(learners: list[LearnerState], g: Snapshot, rescale: bool) -> CombinedEmbedding:
    parts = []
    for st in learners:
        rows = st.rows(g.nodes)
        if np.any(rows < 0):
            raise RuntimeError("snapshot node without learner row")
        parts.append(st.in_embed[rows])
    z = np.hstack(parts)
    if rescale:
        z = rescale_minmax_columns(z)
    return CombinedEmbedding(z, g.nodes.copy(), g.labels)


def _walk_corpus(g, tables, starts, cfg: EnsembleConfig, restart: float, seed: int, m: int, t: int):
    wc = WalkConfig(cfg.walks_per_node, cfg.walk_length, restart)
    return generate_walks(g, tables, starts, wc, _learner_rng(seed, m, t, _WALK))


def _train_one(state: LearnerState, walks: np.ndarray, cfg: EnsembleConfig, seed: int, m: int, t: int):
    rows = state.rows(walks)
    batch = extract_pairs(rows, cfg.train.window)
    if len(batch):
        noise = build_noise_distribution(batch, cfg.train.noise_exponent, size=len(state))
        sgd_train(state, batch, noise, cfg.train, _learner_rng(seed, m, t, _TRAIN))
    return len(batch)


def _run_learners(jobs, threads: int):
    if threads <= 1 or len(jobs) == 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: job(), jobs))


def _seed_int(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return draw_seed(rng)
    return int(rng)


def _train_step(g: Snapshot, tables: AliasTables, starts: np.ndarray, cfg: EnsembleConfig, seed: int, t: int,
                previous: list[LearnerState] | None, restarts: list[float], dims: list[int]):
    M = cfg.num_learners
    shared = None
    if cfg.shared_walks and len(starts):
        shared = _walk_corpus(g, tables, starts, cfg, restarts[0], seed, 0, t)

    def job(m):
        def run():
            if previous is None:
                state = init_offline(g.nodes, dims[m], _learner_rng(seed, m, t, _INIT))
            else:
                prev = previous[m]
                known = prev.rows(g.nodes) >= 0
                state = init_incremental(prev, g.nodes[~known], _learner_rng(seed, m, t, _INIT))
            if len(starts) == 0:
                return state, 0, 0, np.empty(0, dtype=np.int64)
            walks = shared if shared is not None else _walk_corpus(g, tables, starts, cfg, restarts[m], seed, m, t)
            n_pairs = _train_one(state, walks, cfg, seed, m, t)
            visited = np.unique(walks[walks >= 0])
            return state, len(walks), n_pairs, visited
        return run

    return _run_learners([job(m) for m in range(M)], cfg.threads)


def step_offline(g0: Snapshot, cfg: EnsembleConfig, rng, t: int = 0) -> tuple[EnsembleModel, CombinedEmbedding]:
    """Train all learners from scratch on ``g0``, walking from every node."""
    if g0.num_nodes == 0:
        raise ValueError("empty initial snapshot")
    seed = _seed_int(rng)
    tic = time.perf_counter()
    restarts = _restarts_for(cfg)
    dims = assign_dims(cfg.total_dim, cfg.num_learners)
    tables = build_alias_tables(g0)
    results = _train_step(g0, tables, g0.nodes, cfg, seed, t, None, restarts, dims)
    learners = [r[0] for r in results]
    model = EnsembleModel(cfg, seed, learners, restarts, dims, t, g0, tables)
    emb = model.embedding(g0)
    model.history.append(StepRecord(t, "offline", g0.num_nodes, g0.num_nodes, [g0.num_nodes] * cfg.num_learners,
                                    [r[1] for r in results], [r[2] for r in results], time.perf_counter() - tic,
                                    [r[3] for r in results]))
    return model, emb


def step_online(model: EnsembleModel, prev: Snapshot, curr: Snapshot, cfg: EnsembleConfig | None = None,
                rng=None) -> tuple[EnsembleModel, CombinedEmbedding]:
    """Advance ``model`` by one timestep.

    Walks start only at the endpoints of new edges. ``model`` is updated in
    place (learner states are replaced by their inherited successors) and
    returned together with the new combined embedding.
    """
    cfg = cfg or model.config
    t = model.t + 1
    if cfg.retrain_every and t % cfg.retrain_every == 0:
        fresh, emb = step_offline(curr, cfg, model.seed, t=t)
        fresh.history = model.history + fresh.history
        model.__dict__.update(fresh.__dict__)
        return model, emb
    tic = time.perf_counter()
    dv = delta(prev, curr)
    starts = dv.affected_nodes
    seed = model.seed if rng is None else _seed_int(rng)
    prev_tables = model.tables if model.snapshot is prev else None
    tables = build_alias_tables(curr, prev_tables)
    results = _train_step(curr, tables, starts, cfg, seed, t, model.learners, model.restarts, model.dims)
    model.learners = [r[0] for r in results]
    model.t = t
    model.snapshot = curr
    model.tables = tables
    emb = model.embedding(curr)
    if len(starts) == 0:
        log.info("timestep %d: no new edges, embeddings re-emitted", t)
    model.history.append(StepRecord(t, "online", curr.num_nodes, len(starts), [len(starts)] * cfg.num_learners,
                                    [r[1] for r in results], [r[2] for r in results], time.perf_counter() - tic,
                                    [r[3] for r in results]))
    return model, emb


def embed_network(net: DynamicNetwork, cfg: EnsembleConfig, seed: int):
    """Yield ``(t, model, embedding)`` for every snapshot of ``net``."""
    model, emb = step_offline(net[0], cfg, seed)
    yield 0, model, emb
    for t in range(1, len(net)):
        model, emb = step_online(model, net[t - 1], net[t], cfg)
        yield t, model, emb


def serialize_embedding(emb: CombinedEmbedding, sink) -> None:
    """Write ``N d`` then one ``label v1 ... vd`` line per node. ``sink`` is a path or text file."""
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w", encoding="utf-8") as fh:
            serialize_embedding(emb, fh)
        return
    n, d = emb.matrix.shape
    sink.write(f"{n} {d}\n")
    for i in range(n):
        u = int(emb.nodes[i])
        name = emb.labels[u] if emb.labels else str(u)
        sink.write(name + " " + " ".join(repr(float(x)) for x in emb.matrix[i]) + "\n")


def deserialize_embedding(source, label_index: dict[str, int] | None = None) -> CombinedEmbedding:
    """Read the format written by :func:`serialize_embedding`.

    Node labels are mapped to ids with ``label_index``; without it, rows get
    ids ``0..N-1`` and the labels are kept in file order.
    """
    if isinstance(source, (str, os.PathLike)) and not (isinstance(source, str) and "\n" in source):
        with open(source, encoding="utf-8") as fh:
            return deserialize_embedding(fh, label_index)
    if isinstance(source, str):
        source = io.StringIO(source)
    header = source.readline().split()
    if len(header) != 2:
        raise ValueError("malformed header: expected 'N d'")
    try:
        n, d = int(header[0]), int(header[1])
    except ValueError:
        raise ValueError("malformed header: expected 'N d'") from None
    names, rows = [], []
    for lineno, line in enumerate(source, start=2):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != d + 1:
            raise ValueError(f"line {lineno}: expected {d} values, got {len(parts) - 1}")
        names.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    if len(rows) != n:
        raise ValueError(f"header announces {n} rows, found {len(rows)}")
    matrix = np.array(rows, dtype=np.float64).reshape(n, d)
    if label_index is None:
        return CombinedEmbedding(matrix, np.arange(n), tuple(names))
    nodes = np.array([label_index[s] for s in names], dtype=np.int64)
    order = np.argsort(nodes, kind="stable")
    inv = [""] * (int(nodes.max()) + 1 if n else 0)
    for s, u in label_index.items():
        if u < len(inv):
            inv[u] = s
    return CombinedEmbedding(matrix[order], nodes[order], tuple(inv))
