"""Acceptance suite: one test per criterion, each printing a PASS/FAIL verdict line.

The embedding-quality criteria (8, 11, 12) share one cached set of runs on a
500-node BA-grown network sliced three ways.
"""
import warnings

import numpy as np
import pytest

from sgedne.cli import bench_offline, bench_online, fit_loglog_slope
from sgedne.dyngraph import (DynamicNetwork, EdgeStream, Snapshot, degree_of_changes, delta,
                             docs_from_slice_sizes, slice_stream)
from sgedne.ensemble import EnsembleConfig, assign_dims, assign_restarts, embed_network, variant_config
from sgedne.evaltasks import (TASKS, ProtocolReport, SuiteReport, auc, evaluate_run, map_at_k, random_embedder,
                              run_suite)
from sgedne.sampler import WalkConfig, build_alias_tables, generate_walks, sample_transitions, walk_statistics
from sgedne.sgns import LearnerState, PairBatch, TrainConfig, objective_value, pair_gradients
from sgedne.synthgen import BAConfig, ba_edge_stream, ba_generate

SUITE_NODES = 500
SUITE_SLICES = (5, 10, 15)
QUALITY_SEEDS = (0, 1, 2)
ABLATION_SEEDS = (0, 1, 2, 3, 4)
GR_KEY = "GR-MAP@5"


def random_stream(n_records, n_nodes, seed):
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n_nodes, size=n_records)
    dst = rng.integers(0, n_nodes, size=n_records)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    order = np.argsort(rng.integers(0, 10 * n_records, size=len(src)), kind="stable")
    return EdgeStream(src[order], dst[order], np.arange(len(src), dtype=np.int64),
                      tuple(str(i) for i in range(n_nodes)))


# ---------------------------------------------------------------- shared runs

class SuiteRuns:
    """Lazily trained and cached runs on the quality suite."""

    def __init__(self):
        stream = ba_edge_stream(SUITE_NODES, BAConfig(), 0)
        self.networks = {f"slices_{s}": slice_stream(stream, s) for s in SUITE_SLICES}
        self.results: dict[tuple[str, str, int], object] = {}
        self.locality: list[str] = []
        self.locality_steps: dict[tuple[str, int], int] = {}

    def _train(self, variant: str, name: str, seed: int) -> None:
        net = self.networks[name]
        cfg = variant_config("edne-rwr" if variant == "edne-rwr-ws" else variant)
        scaled, raw = [], []
        before = None
        for t, model, emb in embed_network(net, cfg, seed):
            scaled.append((t, emb))
            raw.append((t, model.embedding(net[t], rescale=False)))
            if variant == "edne-rwr" and before is not None:
                self._check_locality(net, t, before, model)
                self.locality_steps[(name, seed)] = self.locality_steps.get((name, seed), 0) + 1
            before = [s.copy() for s in model.learners]
        if variant in ("edne-rwr", "edne-rwr-ws"):
            # rescaling happens after training, so one training run serves both variants
            self.results[("edne-rwr", name, seed)] = evaluate_run(net, scaled, seed, ("GR",), (5,))
            self.results[("edne-rwr-ws", name, seed)] = evaluate_run(net, raw, seed, ("GR",), (5,))
        else:
            self.results[(variant, name, seed)] = evaluate_run(net, scaled, seed, ("GR",), (5,))

    def _check_locality(self, net, t, before, model):
        rec = model.history[-1]
        dv = delta(net[t - 1], net[t])
        for m, (old, new) in enumerate(zip(before, model.learners)):
            if rec.walk_starts[m] != len(dv.affected_nodes):
                self.locality.append(f"t={t} learner {m}: {rec.walk_starts[m]} starts for |dV|={len(dv.affected_nodes)}")
            untouched = np.setdiff1d(old.nodes, rec.visited[m])
            ro, rn = old.rows(untouched), new.rows(untouched)
            if not (np.array_equal(old.in_embed[ro], new.in_embed[rn])
                    and np.array_equal(old.out_embed[ro], new.out_embed[rn])):
                self.locality.append(f"t={t} learner {m}: untouched rows changed")

    def result(self, variant: str, name: str, seed: int):
        key = (variant, name, seed)
        if key not in self.results:
            if variant == "random":
                net = self.networks[name]
                self.results[key] = evaluate_run(net, random_embedder(128)(net, seed), seed, ("GR",), (5,))
            else:
                self._train(variant, name, seed)
        return self.results[key]

    def suite(self, variant: str, seeds) -> SuiteReport:
        return SuiteReport({name: ProtocolReport([self.result(variant, name, s) for s in seeds])
                            for name in self.networks})

    def seed_means(self, variant: str, seeds) -> np.ndarray:
        """Per-seed GR-MAP@5, averaged over timesteps and then over the slicings."""
        return np.array([np.mean([self.result(variant, name, s).averages()[GR_KEY] for name in self.networks])
                         for s in seeds])


@pytest.fixture(scope="session")
def runs():
    return SuiteRuns()


# ---------------------------------------------------------------- criteria

def test_c01_restart_and_dimension_split(verdict):
    r = assign_restarts(0.1, 5)
    d = assign_dims(128, 5)
    ok = np.allclose(r, [0, 0.02, 0.04, 0.06, 0.08], rtol=0, atol=1e-15) and r[0] == 0 and d == [25, 25, 25, 25, 28]
    verdict(1, ok, f"restarts={[round(x, 12) for x in r]} dims={d}")
    assert ok


def test_c02_docs_arithmetic(verdict):
    toys = [[1] * 7, [2] * 3, [3, 2], [4], [3]]
    docs = []
    for sizes in toys:
        snaps = [Snapshot.from_edges([0], [1], 2)] * (len(sizes) + 1)
        docs.append(degree_of_changes(DynamicNetwork(snaps, sizes)))
    toy_ok = docs == [1, 2, 2.5, 4, 3] and [docs_from_slice_sizes(s) for s in toys] == docs
    antitone = True
    for seed in range(5):
        stream = random_stream(1000, 150, seed)
        seq = [degree_of_changes(slice_stream(stream, s)) for s in (1, 2, 5, 10, 20, 40, 80)]
        antitone &= all(a >= b for a, b in zip(seq, seq[1:]))
    ok = toy_ok and antitone
    verdict(2, ok, f"toy DoCs={docs}, antitone over 5 streams={antitone}")
    assert ok


def test_c03_slicing_conservation(verdict):
    stream = random_stream(3000, 800, 42)
    counts, edge_sets = [], set()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # early snapshots may drop nodes from the LCC
        for s in (20, 40, 60, 80, 100):
            last = slice_stream(stream, s)[-1]
            counts.append((last.num_nodes, last.num_edges))
            edge_sets.add(last.edge_keys().tobytes())
    ok = len(set(counts)) == 1 and len(edge_sets) == 1
    verdict(3, ok, f"final (|V|, |E|) per slicing 20..100: {counts}")
    assert ok


def _full_gradient(state, batch, negatives):
    g_in = np.zeros_like(state.in_embed)
    g_out = np.zeros_like(state.out_embed)
    for i, (c, o) in enumerate(zip(batch.centers, batch.contexts)):
        dc, dp, dn = pair_gradients(state.in_embed[c], state.out_embed[o], state.out_embed[negatives[i]])
        g_in[c] += dc
        g_out[o] += dp
        np.add.at(g_out, negatives[i], dn)
    return g_in, g_out


def _finite_difference(state, batch, negatives, h=1e-6):
    grads = []
    for mat in (state.in_embed, state.out_embed):
        g = np.zeros_like(mat)
        for idx in np.ndindex(mat.shape):
            keep = mat[idx]
            mat[idx] = keep + h
            fp = objective_value(state, batch, negatives)
            mat[idx] = keep - h
            fm = objective_value(state, batch, negatives)
            mat[idx] = keep
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def test_c04_sgns_gradient_check(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(2, 11))
        d = int(rng.integers(1, 9))
        q = (0, 1, 5)[i % 3]
        state = LearnerState(rng.normal(0, 0.8, (n, d)), rng.normal(0, 0.8, (n, d)), np.arange(n), np.arange(n))
        n_pairs = int(rng.integers(1, 8))
        batch = PairBatch(rng.integers(0, n, n_pairs), rng.integers(0, n, n_pairs))
        negatives = rng.integers(0, n, (n_pairs, q))
        analytic = np.concatenate([g.ravel() for g in _full_gradient(state, batch, negatives)])
        numeric = np.concatenate([g.ravel() for g in _finite_difference(state, batch, negatives)])
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
        worst = max(worst, rel)
    ok = worst < 1e-4
    verdict(4, ok, f"max relative error over 100 configurations = {worst:.2e} (< 1e-4)")
    assert ok


def _ap_oracle(ranked, truth, k):
    hits, total = 0, 0.0
    for i, x in enumerate(ranked[:k], 1):
        if x in truth:
            hits += 1
            total += hits / i
    return total / min(k, len(truth))


def _auc_oracle(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    return sum((p > n) + 0.5 * (p == n) for p in pos for n in neg) / (len(pos) * len(neg))


def test_c05_metric_oracles(verdict):
    rng = np.random.default_rng(5)
    worst_map = worst_auc = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 40))
        k = int(rng.integers(1, 15))
        rankings = {q: rng.permutation(n).tolist() for q in range(int(rng.integers(1, 6)))}
        truth = {q: set(rng.choice(n, size=int(rng.integers(1, n)), replace=False).tolist()) for q in rankings}
        expect = np.mean([_ap_oracle(rankings[q], truth[q], k) for q in rankings])
        worst_map = max(worst_map, abs(map_at_k(rankings, truth, k) - expect))
    for _ in range(100):
        n = int(rng.integers(2, 60))
        scores = rng.integers(0, 8, n) / 7.0
        labels = rng.integers(0, 2, n)
        labels[:2] = [1, 0]
        worst_auc = max(worst_auc, abs(auc(scores, labels) - _auc_oracle(scores, labels)))
    examples = (map_at_k({0: [1, 2, 3, 4, 5]}, {0: {1}}, 5) == 1.0
                and map_at_k({0: [2, 1, 3, 4, 5]}, {0: {1}}, 5) == 0.5
                and abs(map_at_k({0: [1, 9, 2, 8, 7]}, {0: {1, 2}}, 5) - 5 / 6) < 1e-15
                and auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
                and auc([0.4] * 4, [1, 0, 1, 0]) == 0.5
                and auc([0.9, 0.8, 0.3], [1, 0, 1]) == 0.5)
    ok = worst_map <= 1e-9 and worst_auc <= 1e-9 and examples
    verdict(5, ok, f"max |MAP - oracle|={worst_map:.1e}, max |AUC - oracle|={worst_auc:.1e}, worked examples={examples}")
    assert ok


def test_c06_alias_sampling_fidelity(verdict):
    from scipy import stats
    rng = np.random.default_rng(6)
    n = 50
    u, v = np.triu_indices(n, 1)
    keep = rng.random(len(u)) < 0.2
    u = np.concatenate([u[keep], np.arange(n)])
    v = np.concatenate([v[keep], (np.arange(n) + 1) % n])
    g = Snapshot.from_edges(u, v, n, weights=rng.uniform(0.1, 5.0, len(u)))
    tables = build_alias_tables(g)
    node = int(np.argmax(np.diff(g.indptr)))
    draws = sample_transitions(g, tables, node, 10 ** 6, seed=606)
    nb = g.neighbors(node)
    w = g.weights[g.indptr[node]:g.indptr[node + 1]]
    counts = np.array([(draws == x).sum() for x in nb])
    p = stats.chisquare(counts, 10 ** 6 * w / w.sum()).pvalue
    ok = p > 0.01 and counts.sum() == 10 ** 6
    verdict(6, ok, f"chi-square p={p:.3f} over {len(nb)} neighbors, 10^6 draws")
    assert ok


def test_c07_restart_trend(verdict):
    g = ba_generate(500, BAConfig(), 7)
    tables = build_alias_tables(g)
    start = int(np.random.default_rng(7).choice(g.nodes))
    rows = []
    for R in (0.0, 0.2, 0.5, 0.8):
        uniq = [walk_statistics(generate_walks(g, tables, [start], WalkConfig(10, 80, R), s)).unique for s in range(10)]
        rows.append((R, np.mean(uniq), np.std(uniq, ddof=1)))
    ok = True
    for (_, m1, s1), (_, m2, s2) in zip(rows, rows[1:]):
        pooled_se = np.sqrt((s1 ** 2 + s2 ** 2) / 2) * np.sqrt(2 / 10)
        ok &= m2 <= m1 + pooled_se
    verdict(7, ok, "mean unique nodes " + ", ".join(f"R={R}: {m:.1f}" for R, m, _ in rows))
    assert ok


def test_c08_embedding_quality_floor(runs, verdict):
    ens = runs.seed_means("edne-rwr", QUALITY_SEEDS)
    ctl = runs.seed_means("random", QUALITY_SEEDS)
    per_net = {name: np.mean([runs.result("edne-rwr", name, s).averages()[GR_KEY] for s in QUALITY_SEEDS])
               for name in runs.networks}
    ok = ens.mean() >= 0.60 and ens.mean() - ctl.mean() >= 0.40
    verdict(8, ok, f"SG-EDNE GR-MAP@5={ens.mean():.3f} (per slicing "
                   + ", ".join(f"{k}={v:.3f}" for k, v in per_net.items())
                   + f"), random={ctl.mean():.3f}, gap={ens.mean() - ctl.mean():.3f}")
    assert ok


def test_c09_incremental_locality(runs, verdict):
    for name in runs.networks:
        runs.result("edne-rwr", name, QUALITY_SEEDS[0])
    # every checked run must have been checked at each of its online steps
    complete = all(count == len(runs.networks[name]) - 1 for (name, _), count in runs.locality_steps.items())
    steps = sum(runs.locality_steps.values())
    ok = not runs.locality and complete and steps > 0
    verdict(9, ok, f"{steps} online steps over {len(runs.locality_steps)} runs checked, "
                   f"violations: {runs.locality[:3] or 'none'}")
    assert ok


BENCH = EnsembleConfig(walks_per_node=2, walk_length=20, train=TrainConfig(window=5))


def test_c10_scalability_slopes(verdict):
    off = bench_offline([2 ** e for e in range(10, 17)], BENCH, m_ba=4, seed=0)
    on = bench_online([2 ** e for e in range(4, 13)], BENCH, snapshots=20, m_ba=4, seed=0)
    s_off = fit_loglog_slope([r[0] for r in off], [r[1] for r in off])
    s_on = fit_loglog_slope([r[0] for r in on], [r[1] for r in on])
    ok = 0.8 <= s_off <= 1.3 and 0.8 <= s_on <= 1.3
    verdict(10, ok, f"offline slope={s_off:.3f}, online slope={s_on:.3f} (both in [0.8, 1.3]); "
                    f"largest offline {off[-1][1]:.1f}s, largest online step {on[-1][1]:.2f}s")
    assert ok


def _margin(better: np.ndarray, worse: np.ndarray) -> tuple[float, float]:
    """Difference of seed means and the pooled standard deviation of the two seed samples."""
    return better.mean() - worse.mean(), float(np.sqrt((better.var(ddof=1) + worse.var(ddof=1)) / 2))


def test_c11_ablation_direction(runs, verdict):
    rwr = runs.seed_means("edne-rwr", ABLATION_SEEDS)
    fix = runs.seed_means("edne-rw-fix", ABLATION_SEEDS)
    ws = runs.seed_means("edne-rwr-ws", ABLATION_SEEDS)
    m_fix, sd_fix = _margin(rwr, fix)
    m_ws, sd_ws = _margin(rwr, ws)
    strict = m_fix >= 0 and m_ws >= 0
    # a negative margin inside one pooled sd is reported, not failed
    tolerated = m_fix >= -sd_fix and m_ws >= -sd_ws
    verdict(11, strict,
            f"EDNE-rwr {rwr.mean():.4f} vs EDNE-rw-fix {fix.mean():.4f} (margin {m_fix:+.4f}, pooled sd {sd_fix:.4f}); "
            f"vs EDNE-rwr-ws {ws.mean():.4f} (margin {m_ws:+.4f}, pooled sd {sd_ws:.4f})",
            soft=tolerated)
    assert tolerated


def test_c12_robustness_report(runs, verdict):
    stream = ba_edge_stream(SUITE_NODES, BAConfig(), 0)
    five = {f"G{i}": slice_stream(stream, s) for i, s in enumerate((20, 40, 60, 80, 100), 1)}
    small = EnsembleConfig(total_dim=16, walks_per_node=2, walk_length=10, train=TrainConfig(window=3))
    table = run_suite(small, five, TASKS, (5, 50), runs=1).table()
    shape_ok = len(table) == 6 and all(len(c["means"]) == 5 and np.isfinite(c["stdev"]) for c in table.values())
    ens = runs.suite("edne-rwr", ABLATION_SEEDS).stdev()[GR_KEY]
    dne = runs.suite("dne-rw", ABLATION_SEEDS).stdev()[GR_KEY]
    verdict(12, shape_ok and ens <= dne,
            f"report cells={sorted(table)} with 5 means + 1 stdev each={shape_ok}; "
            f"GR-MAP@5 stdev across slicings: SG-EDNE {ens:.4f} vs DNE-rw {dne:.4f}"
            + ("" if ens <= dne else " (report-only)"),
            soft=shape_ok)
    assert shape_ok
