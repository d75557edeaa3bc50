"""Downstream evaluation: graph reconstruction, node recommendation and link prediction.

GR and NR rank candidates by cosine similarity and report MAP@k. LP trains a
logistic regression on edge features (weighted-L1 or weighted-L2) that keeps
its weights from one timestep to the next, and reports AUC on the next
step's new edges.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .dyngraph import DynamicNetwork, Snapshot, delta
from .ensemble import CombinedEmbedding, EnsembleConfig, embed_network

log = logging.getLogger(__name__)

TASKS = ("GR", "NR", "LP")
FEATURE_MODES = ("weighted-L1", "weighted-L2")


# ---------------------------------------------------------------- ranking

def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    out = np.zeros_like(m, dtype=np.float64)
    np.divide(m, norms, out=out, where=norms > 0)
    return out


# similarities are rounded so that ties in exact arithmetic stay ties in floating point
_SIM_DECIMALS = 12


def _top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k largest scores; ties go to the smaller position."""
    scores = np.round(scores, _SIM_DECIMALS)
    n = len(scores)
    if k >= n:
        return np.argsort(-scores, kind="stable")
    thr = np.partition(scores, n - k)[n - k]
    sel = np.flatnonzero(scores >= thr)
    return sel[np.argsort(-scores[sel], kind="stable")][:k]


def cosine_rank(z: CombinedEmbedding, query: int, candidates, k: int) -> list[int]:
    """Top-k candidates by cosine similarity to ``query``; ties by ascending node id.

    A zero vector has similarity 0 with everything.
    """
    cand = np.unique(np.asarray(list(candidates), dtype=np.int64))
    cand = cand[cand != query]
    if len(cand) == 0:
        return []
    q = _unit_rows(z.vectors([query]))[0]
    sims = _unit_rows(z.vectors(cand)) @ q
    return cand[_top_k(sims, k)].tolist()


def _rank_all(z: CombinedEmbedding, queries: np.ndarray, k: int, block: int = 512) -> dict[int, np.ndarray]:
    """Top-k over all other embedded nodes for each query (node ids in ``z.nodes`` order)."""
    order = np.argsort(z.nodes, kind="stable")
    nodes = z.nodes[order]
    unit = _unit_rows(z.matrix[order])
    pos = np.searchsorted(nodes, queries)
    out = {}
    for lo in range(0, len(queries), block):
        qp = pos[lo:lo + block]
        sims = unit[qp] @ unit.T
        sims[np.arange(len(qp)), qp] = -np.inf
        for r, p in enumerate(qp):
            out[int(nodes[p])] = nodes[_top_k(sims[r], min(k, len(nodes) - 1))]
    return out


# ---------------------------------------------------------------- metrics

def average_precision_at_k(ranked: Sequence[int], truth, k: int) -> float:
    truth = set(int(x) for x in truth)
    if not truth:
        raise ValueError("empty truth set")
    hits = 0
    total = 0.0
    for i, item in enumerate(list(ranked)[:k], start=1):
        if int(item) in truth:
            hits += 1
            total += hits / i
    return total / min(k, len(truth))


def map_at_k(rankings: Mapping[int, Sequence[int]], truth: Mapping[int, Iterable[int]], k: int,
             audit: Counter | None = None) -> float:
    """Mean of AP@k over queries, with AP@k normalised by ``min(k, |truth|)``.

    Queries with an empty truth set are skipped and counted in ``audit``.
    Returns NaN when no query can be scored.
    """
    vals = []
    for q, ranked in rankings.items():
        rel = truth.get(q, ())
        rel = set(int(x) for x in rel)
        if not rel:
            if audit is not None:
                audit["empty_truth"] += 1
            continue
        vals.append(average_precision_at_k(ranked, rel, k))
    return float(np.mean(vals)) if vals else float("nan")


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties get average ranks)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# ---------------------------------------------------------------- GR / NR

@dataclass
class TaskScore:
    task: str
    metric: str
    k: int | None
    values: list[float] = field(default_factory=list)
    timesteps: list[int] = field(default_factory=list)
    audit: Counter = field(default_factory=Counter)
    seed: int | None = None

    @property
    def mean(self) -> float:
        vals = [v for v in self.values if not np.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def add(self, t: int, value: float) -> None:
        self.timesteps.append(t)
        self.values.append(value)


def graph_reconstruction(z: CombinedEmbedding, g: Snapshot, ks: int | Sequence[int] = 5,
                         sample: int | None = None, rng: np.random.Generator | None = None):
    """MAP@k for recovering each node's neighbors in ``g`` from ``z``.

    Returns a float for a single ``k`` or a ``{k: MAP}`` dict for several.
    ``sample`` evaluates a uniform subset of query nodes.
    """
    single = np.isscalar(ks)
    ks = [int(ks)] if single else [int(k) for k in ks]
    queries = g.nodes
    if sample is not None and sample < len(queries):
        rng = rng or np.random.default_rng(0)
        queries = np.sort(rng.choice(queries, size=sample, replace=False))
    ranked = _rank_all(z, queries, max(ks))
    truth = {int(u): g.neighbors(u) for u in queries}
    res = {k: map_at_k(ranked, truth, k) for k in ks}
    return res[ks[0]] if single else res


def node_recommendation(z: CombinedEmbedding, g_next: Snapshot, affected, ks: int | Sequence[int] = 5,
                        audit: Counter | None = None):
    """MAP@k for recommending the next-step neighbors of affected nodes.

    Affected nodes without an embedding are skipped (``audit["no_embedding"]``).
    Ground truth is restricted to neighbors that have an embedding, since
    nothing else can appear in a ranking.
    """
    single = np.isscalar(ks)
    ks = [int(ks)] if single else [int(k) for k in ks]
    audit = audit if audit is not None else Counter()
    affected = np.unique(np.asarray(affected, dtype=np.int64))
    known = np.array([u in z for u in affected], dtype=bool) if len(affected) else np.zeros(0, dtype=bool)
    audit["no_embedding"] += int((~known).sum())
    queries = affected[known]
    if len(queries) == 0:
        audit["no_queries"] += 1
        nan = float("nan")
        return nan if single else {k: nan for k in ks}
    index = z.row_index()
    truth = {}
    for u in queries:
        truth[int(u)] = [int(v) for v in g_next.neighbors(u) if int(v) in index]
    ranked = _rank_all(z, queries, max(ks))
    res = {k: map_at_k(ranked, truth, k, audit) for k in ks}
    return res[ks[0]] if single else res


# ---------------------------------------------------------------- LP

def edge_features(zu, zv, mode: str = "weighted-L1") -> np.ndarray:
    """Element-wise |zu - zv| (weighted-L1) or (zu - zv)^2 (weighted-L2); works row-wise on matrices."""
    zu = np.asarray(zu, dtype=np.float64)
    zv = np.asarray(zv, dtype=np.float64)
    if zu.shape != zv.shape:
        raise ValueError(f"shape mismatch {zu.shape} vs {zv.shape}")
    diff = zu - zv
    if mode in ("weighted-L1", "L1", "l1"):
        return np.abs(diff)
    if mode in ("weighted-L2", "L2", "l2"):
        return diff * diff
    raise ValueError(f"unknown feature mode {mode!r}")


@dataclass
class LRModel:
    """Logistic regression trained by SGD; weights carry over between calls."""

    weights: np.ndarray
    bias: float = 0.0
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 32
    calls: int = 0

    @classmethod
    def zeros(cls, dim: int, **kw) -> "LRModel":
        return cls(np.zeros(dim), **kw)

    def decision(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.bias

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        s = self.decision(x)
        e = np.exp(-np.abs(s))
        return np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def fit_step(self, x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> "LRModel":
        n = len(y)
        for _ in range(self.epochs):
            perm = rng.permutation(n)
            for lo in range(0, n, self.batch_size):
                idx = perm[lo:lo + self.batch_size]
                err = y[idx] - self.predict_proba(x[idx])
                self.weights += self.learning_rate * (x[idx].T @ err) / len(idx)
                self.bias += self.learning_rate * err.mean()
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise FloatingPointError("logistic regression diverged")
        self.calls += 1
        return self


def sample_non_edges(g: Snapshot, nodes, count: int, rng: np.random.Generator, max_tries: int = 100) -> np.ndarray:
    """``count`` distinct node pairs from ``nodes`` that are not edges of ``g`` (rejection sampling)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    n = len(nodes)
    if count == 0:
        return np.empty((0, 2), dtype=np.int64)
    if n < 2:
        raise ValueError("need at least two nodes to sample non-edges")
    edge_set = g.edge_keys()
    chosen: dict[int, None] = {}
    for _ in range(max_tries):
        need = count - len(chosen)
        a = nodes[rng.integers(0, n, size=2 * need)]
        b = nodes[rng.integers(0, n, size=2 * need)]
        ok = a != b
        a, b = a[ok], b[ok]
        keys = (np.minimum(a, b) << 32) | np.maximum(a, b)
        pos = np.searchsorted(edge_set, keys)
        pos[pos >= len(edge_set)] = 0
        is_edge = (len(edge_set) > 0) & (edge_set[pos] == keys) if len(edge_set) else np.zeros(len(keys), bool)
        for key in keys[~is_edge]:
            chosen.setdefault(int(key), None)
            if len(chosen) == count:
                k = np.fromiter(chosen, dtype=np.int64)
                return np.stack([k >> 32, k & 0xFFFFFFFF], axis=1)
    raise RuntimeError(f"could not sample {count} non-edges after {max_tries} rounds; graph too dense")


def _pair_features(z: CombinedEmbedding, pairs: np.ndarray, mode: str) -> np.ndarray:
    if len(pairs) == 0:
        return np.empty((0, z.dim))
    return edge_features(z.vectors(pairs[:, 0]), z.vectors(pairs[:, 1]), mode)


def _embedded_pairs(z: CombinedEmbedding, pairs: np.ndarray, audit: Counter | None) -> np.ndarray:
    if len(pairs) == 0:
        return pairs
    idx = z.row_index()
    ok = np.array([int(a) in idx and int(b) in idx for a, b in pairs], dtype=bool)
    if audit is not None:
        audit["edge_no_embedding"] += int((~ok).sum())
    return pairs[ok]


def lp_train_incremental(model: LRModel, z: CombinedEmbedding, g: Snapshot, positives: np.ndarray,
                         rng: np.random.Generator, mode: str = "weighted-L1") -> LRModel:
    """Continue training ``model`` on ``positives`` plus as many sampled non-edges of ``g``."""
    pos = _embedded_pairs(z, np.asarray(positives, dtype=np.int64).reshape(-1, 2), None)
    if len(pos) == 0:
        return model
    cand = np.intersect1d(g.nodes, z.nodes)
    neg = sample_non_edges(g, cand, len(pos), rng)
    x = np.vstack([_pair_features(z, pos, mode), _pair_features(z, neg, mode)])
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return model.fit_step(x, y, rng)


def lp_evaluate(model: LRModel, z: CombinedEmbedding, test_pos: np.ndarray, test_neg: np.ndarray,
                mode: str = "weighted-L1", audit: Counter | None = None) -> float:
    """AUC of the model's probabilities on future edges versus future non-edges."""
    pos = _embedded_pairs(z, np.asarray(test_pos, dtype=np.int64).reshape(-1, 2), audit)
    neg = _embedded_pairs(z, np.asarray(test_neg, dtype=np.int64).reshape(-1, 2), audit)
    if len(pos) == 0 or len(neg) == 0:
        if audit is not None:
            audit["lp_undefined"] += 1
        return float("nan")
    x = np.vstack([_pair_features(z, pos, mode), _pair_features(z, neg, mode)])
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return auc(model.predict_proba(x), y)


# ---------------------------------------------------------------- protocol

Embedder = Callable[[DynamicNetwork, int], Iterator[tuple[int, CombinedEmbedding]]]


def ensemble_embedder(cfg: EnsembleConfig) -> Embedder:
    def run(net: DynamicNetwork, seed: int):
        for t, _, emb in embed_network(net, cfg, seed):
            yield t, emb
    return run


def random_embedder(dim: int = 128) -> Embedder:
    """Control method: i.i.d. Gaussian embeddings at every timestep."""
    def run(net: DynamicNetwork, seed: int):
        for t, g in enumerate(net.snapshots):
            rng = np.random.default_rng([seed, t, 99])
            yield t, CombinedEmbedding(rng.standard_normal((g.num_nodes, dim)), g.nodes.copy(), g.labels)
    return run


def score_key(task: str, k: int | None = None, mode: str | None = None) -> str:
    if task == "LP":
        return f"LP-AUC-{mode.split('-')[-1]}"
    return f"{task}-MAP@{k}"


@dataclass
class RunResult:
    seed: int
    scores: dict[str, TaskScore]

    def averages(self) -> dict[str, float]:
        return {name: s.mean for name, s in self.scores.items()}


def evaluate_run(net: DynamicNetwork, embeddings: Iterable[tuple[int, CombinedEmbedding]], seed: int,
                 tasks: Sequence[str] = TASKS, ks: Sequence[int] = (5, 50),
                 modes: Sequence[str] = FEATURE_MODES, gr_sample: int | None = None,
                 lr_kwargs: dict | None = None) -> RunResult:
    """Score one run of per-timestep embeddings on every requested task.

    GR is scored at every timestep; NR and LP at every timestep that has a
    successor. LP at step t trains on the new edges of step t (all edges at
    t = 0) and is tested on the new edges of step t + 1.
    """
    for task in tasks:
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}; choose from {', '.join(TASKS)}")
    scores: dict[str, TaskScore] = {}
    for task in tasks:
        if task == "LP":
            for mode in modes:
                scores[score_key(task, mode=mode)] = TaskScore("LP", f"AUC-{mode.split('-')[-1]}", None, seed=seed)
        else:
            for k in ks:
                scores[score_key(task, k)] = TaskScore(task, f"MAP@{k}", k, seed=seed)
    lr_models: dict[str, LRModel] = {}
    T = len(net)
    for t, z in embeddings:
        g = net[t]
        if "GR" in tasks:
            rng = np.random.default_rng([seed, t, 11])
            res = graph_reconstruction(z, g, ks, sample=gr_sample, rng=rng)
            for k in ks:
                scores[score_key("GR", k)].add(t, res[k])
        if t + 1 >= T:
            continue
        g_next = net[t + 1]
        d_next = delta(g, g_next)
        if "NR" in tasks:
            audit = Counter()
            res = node_recommendation(z, g_next, d_next.affected_nodes, ks, audit)
            for k in ks:
                scores[score_key("NR", k)].add(t, res[k])
                scores[score_key("NR", k)].audit.update(audit)
        if "LP" in tasks:
            train_pos = g.edges() if t == 0 else delta(net[t - 1], g).new_edges
            test_pos = _embedded_pairs(z, d_next.new_edges, None)
            cand = np.intersect1d(g_next.nodes, z.nodes)
            for mode in modes:
                sc = scores[score_key("LP", mode=mode)]
                model = lr_models.setdefault(mode, LRModel.zeros(z.dim, **(lr_kwargs or {})))
                lp_train_incremental(model, z, g, train_pos, np.random.default_rng([seed, t, 21]), mode)
                if len(test_pos) == 0:
                    sc.audit["lp_undefined"] += 1
                    continue
                test_neg = sample_non_edges(g_next, cand, len(test_pos), np.random.default_rng([seed, t, 31]))
                sc.add(t, lp_evaluate(model, z, test_pos, test_neg, mode, sc.audit))
    return RunResult(seed, scores)


@dataclass
class ProtocolReport:
    runs: list[RunResult]

    def per_run(self) -> list[dict[str, float]]:
        return [r.averages() for r in self.runs]

    def mean(self) -> dict[str, float]:
        rows = self.per_run()
        return {key: float(np.nanmean([r[key] for r in rows])) for key in rows[0]} if rows else {}

    def std(self) -> dict[str, float]:
        rows = self.per_run()
        return {key: float(np.nanstd([r[key] for r in rows])) for key in rows[0]} if rows else {}

    def rows(self):
        """Flat ``(run, seed, timestep, task, metric, k, value)`` records."""
        for i, r in enumerate(self.runs):
            for s in r.scores.values():
                for t, v in zip(s.timesteps, s.values):
                    yield i, r.seed, t, s.task, s.metric, s.k if s.k is not None else "", v


def run_protocol(method: EnsembleConfig | Embedder, net: DynamicNetwork, tasks: Sequence[str] = TASKS,
                 ks: Sequence[int] = (5, 50), runs: int | Sequence[int] = 10, **kwargs) -> ProtocolReport:
    """Embed ``net`` once per seed and score every timestep.

    ``runs`` is a number of runs (seeds 0..runs-1) or an explicit seed list.
    """
    if len(net) < 2:
        raise ValueError("the protocol needs at least two snapshots")
    embedder = ensemble_embedder(method) if isinstance(method, EnsembleConfig) else method
    seeds = list(range(runs)) if isinstance(runs, int) else list(runs)
    results = []
    for seed in seeds:
        results.append(evaluate_run(net, embedder(net, seed), seed, tasks, ks, **kwargs))
    return ProtocolReport(results)


@dataclass
class SuiteReport:
    """Per-network protocol reports for several slicings of one dataset."""

    reports: dict[str, ProtocolReport]

    def means(self) -> dict[str, dict[str, float]]:
        return {name: rep.mean() for name, rep in self.reports.items()}

    def stdev(self) -> dict[str, float]:
        """Population stdev across networks of each task's mean (robustness to DoCs)."""
        means = self.means()
        keys = next(iter(means.values())).keys()
        return {key: float(np.nanstd([m[key] for m in means.values()])) for key in keys}

    def table(self) -> dict[str, dict]:
        means = self.means()
        std = self.stdev()
        return {key: {"means": {name: means[name][key] for name in means}, "stdev": std[key],
                      "mean": float(np.nanmean([means[name][key] for name in means]))}
                for key in std}


def run_suite(method: EnsembleConfig | Embedder, networks: Mapping[str, DynamicNetwork],
              tasks: Sequence[str] = TASKS, ks: Sequence[int] = (5, 50), runs: int | Sequence[int] = 10,
              **kwargs) -> SuiteReport:
    return SuiteReport({name: run_protocol(method, net, tasks, ks, runs, **kwargs) for name, net in networks.items()})
