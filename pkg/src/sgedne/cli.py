"""Command-line front-end: ``sgedne {slice,embed,eval,sweep,bench,walkstats}``.

All randomness derives from ``--seed``. Learner ``m`` at timestep ``t`` uses
``numpy.random.default_rng([seed, m, t, purpose])`` with purpose 0 for walks,
1 for row initialisation and 2 for SGD; evaluation uses
``default_rng([seed, t, purpose])`` with purposes 11 (GR sampling), 21 (LP
training negatives) and 31 (LP test negatives).

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dyngraph import (DynamicNetwork, EdgeStreamError, SlicingError, degree_of_changes, delta, load_network,
                       read_edge_stream, save_network, slice_stream)
from .ensemble import (VARIANTS, EnsembleConfig, embed_network, serialize_embedding, step_offline, step_online,
                       variant_config)
from .evaltasks import FEATURE_MODES, TASKS, evaluate_run, run_protocol
from .sampler import WalkConfig, build_alias_tables, generate_walks, walk_statistics
from .sgns import TrainConfig
from .synthgen import BAConfig, ba_dynamic, ba_generate

log = logging.getLogger("sgedne")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    input: list[str] = field(default_factory=list)
    slices: list[int] = field(default_factory=lambda: [20, 40, 60, 80, 100])
    init_fraction: str = "1/5"
    variant: str = "sg-edne"
    M: int = 5
    rmax: float = 0.1
    dim: int = 128
    walks: int = 10
    walk_len: int = 80
    window: int = 10
    negatives: int = 5
    lr: float = 0.025
    seed: int = 0
    runs: int = 10
    k: list[int] = field(default_factory=lambda: [5, 50])
    tasks: list[str] = field(default_factory=lambda: list(TASKS))
    threads: int = 1
    out: str = "runs"

    def ensemble_config(self) -> EnsembleConfig:
        base = EnsembleConfig(
            num_learners=self.M, max_restart=self.rmax, total_dim=self.dim,
            walks_per_node=self.walks, walk_length=self.walk_len,
            train=TrainConfig(window=self.window, negatives=self.negatives, learning_rate=self.lr),
            threads=self.threads)
        return variant_config(self.variant, base)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _range_list(text: str, cast=float) -> list:
    """``a:b:step`` (inclusive) or a comma list."""
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
        a, b, s = parts
        n = int(np.floor((b - a) / s + 1e-9)) + 1
        return [cast(round(a + i * s, 10)) for i in range(n)]
    return [cast(x) for x in text.split(",") if x.strip()]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, method: bool = True) -> None:
    p.add_argument("--config", help="JSON file with RunConfig keys; flags override it")
    p.add_argument("--input", action="append", help="edge-stream file, network .npz, or directory (repeatable)")
    p.add_argument("--slices", type=_int_list)
    p.add_argument("--init-fraction", dest="init_fraction")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    if method:
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--M", type=int)
        p.add_argument("--rmax", type=float)
        p.add_argument("--dim", type=int)
        p.add_argument("--walks", type=int)
        p.add_argument("--walk-len", dest="walk_len", type=int)
        p.add_argument("--window", type=int)
        p.add_argument("--negatives", type=int)
        p.add_argument("--lr", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sgedne", description="Diversity-enhanced ensembles of incremental Skip-Gram embeddings.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("slice", help="slice an edge stream into dynamic networks")
    _common(p, method=False)

    p = sub.add_parser("embed", help="embed every snapshot of a dynamic network")
    _common(p)

    p = sub.add_parser("eval", help="run the GR/NR/LP evaluation protocol")
    _common(p)
    p.add_argument("--embeddings", help="directory of per-timestep embedding files to score instead of training")
    p.add_argument("--tasks", type=_str_list)
    p.add_argument("--k", type=_int_list)
    p.add_argument("--runs", type=int)
    p.add_argument("--gr-sample", type=int, help="evaluate GR on a uniform sample of query nodes")

    p = sub.add_parser("sweep", help="grid over number of learners and maximum restart probability")
    _common(p)
    p.add_argument("--M-range", dest="m_range", default="1:10:1")
    p.add_argument("--rmax-range", dest="rmax_range", default="0.1:0.9:0.2")
    p.add_argument("--tasks", type=_str_list)
    p.add_argument("--k", type=_int_list)
    p.add_argument("--runs", type=int)

    p = sub.add_parser("bench", help="offline/online scalability benchmark on BA graphs")
    _common(p)
    p.add_argument("--offline-exp", default="6:16", help="log2 node counts, a:b")
    p.add_argument("--online-exp", default="2:12", help="log2 new nodes per snapshot, a:b")
    p.add_argument("--snapshots", type=int, default=20)
    p.add_argument("--m-ba", type=int, default=4)
    p.add_argument("--repeats", type=int, default=1)

    p = sub.add_parser("walkstats", help="visit statistics of walks with restart")
    _common(p, method=False)
    p.add_argument("--R", dest="restarts", type=_float_list, default=None)
    p.add_argument("--start", help="start node label (default: a random node of the snapshot)")
    p.add_argument("--snapshot", type=int, default=-1)
    p.add_argument("--walks", type=int, default=10)
    p.add_argument("--walk-len", dest="walk_len", type=int, default=80)
    p.add_argument("--seeds", type=int, default=10)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {args.config}: {exc}") from None
        known = {f.name for f in fields(RunConfig)}
        bad = set(data) - known
        if bad:
            raise UsageError(f"unknown config keys: {', '.join(sorted(bad))}")
        if isinstance(data.get("input"), str):
            data["input"] = [data["input"]]
        cfg = replace(cfg, **data)
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)
                 if getattr(args, f.name, None) is not None}
    cfg = replace(cfg, **overrides)
    for t in cfg.tasks:
        if t not in TASKS:
            raise UsageError(f"unknown task {t!r}; choose from {', '.join(TASKS)}")
    if cfg.variant not in VARIANTS:
        raise UsageError(f"unknown variant {cfg.variant!r}")
    return cfg


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"bad init fraction {text!r}") from None


def load_networks(cfg: RunConfig) -> dict[str, DynamicNetwork]:
    """Resolve ``--input`` entries to named networks.

    A ``.npz`` file is a saved network, a directory is searched for
    ``slices_*/network.npz`` (or holds ``network.npz`` itself), and anything
    else is read as an edge stream and sliced once per ``--slices`` value.
    """
    if not cfg.input:
        raise UsageError("--input is required")
    nets: dict[str, DynamicNetwork] = {}
    for item in cfg.input:
        path = Path(item)
        if not path.exists():
            raise DataError(f"input not found: {item}")
        if path.is_dir():
            found = sorted(path.glob("slices_*/network.npz"), key=lambda p: int(p.parent.name.split("_")[1]))
            if (path / "network.npz").exists():
                found = [path / "network.npz"]
            if not found:
                raise DataError(f"no network.npz under {item}")
            for f in found:
                name = f.parent.name if len(found) > 1 or f.parent != path else path.name
                nets[name] = load_network(f)
        elif path.suffix == ".npz":
            nets[path.stem] = load_network(path)
        else:
            stream = read_edge_stream(path)
            for s in cfg.slices:
                nets[f"slices_{s}"] = slice_stream(stream, s, _fraction(cfg.init_fraction))
    return nets


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# ---------------------------------------------------------------- commands

def cmd_slice(cfg: RunConfig) -> int:
    if not cfg.input:
        raise UsageError("--input is required")
    out = Path(cfg.out)
    frac = _fraction(cfg.init_fraction)
    rows = []
    for item in cfg.input:
        if not Path(item).is_file():
            raise DataError(f"input not found: {item}")
        stream = read_edge_stream(item)
        for s in cfg.slices:
            net = slice_stream(stream, s, frac)
            d = out / f"slices_{s}"
            d.mkdir(parents=True, exist_ok=True)
            save_network(net, d / "network.npz")
            man = net.manifest()
            man.update({"input": str(item), "init_fraction": str(frac)})
            _write_json(d / "manifest.json", man)
            rows.append((s, man["docs"], man["nodes"][0], man["edges"][0], man["nodes"][-1], man["edges"][-1]))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "docs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slices", "docs", "nodes_initial", "edges_initial", "nodes_last", "edges_last"])
        w.writerows(rows)
    print(f"{'slices':>8} {'DoCs':>12} {'|V0|':>8} {'|E0|':>9} {'|VT|':>8} {'|ET|':>9}")
    for r in rows:
        print(f"{r[0]:>8} {r[1]:>12.2f} {r[2]:>8} {r[3]:>9} {r[4]:>8} {r[5]:>9}")
    return EXIT_OK


def _write_node_index(net: DynamicNetwork, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(net.num_ids):
            fh.write(f"{i}\t{net.label(i)}\n")


def cmd_embed(cfg: RunConfig) -> int:
    nets = load_networks(cfg)
    ecfg = cfg.ensemble_config()
    root = Path(cfg.out)
    for name, net in nets.items():
        out = root / name if len(nets) > 1 else root
        (out / "embeddings").mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", asdict(cfg))
        _write_node_index(net, out / "nodes.tsv")
        steps = []
        for t, model, emb in embed_network(net, ecfg, cfg.seed):
            serialize_embedding(emb, out / "embeddings" / f"t{t:04d}.emb")
            rec = model.history[-1].as_dict()
            steps.append(rec)
            log.info("%s t=%d |V|=%d |dV|=%d %.3fs", name, t, rec["num_nodes"], rec["num_affected"], rec["seconds"])
        _write_json(out / "manifest.json", {"config": asdict(cfg), "ensemble": asdict(ecfg), "network": net.manifest(),
                                            "steps": steps})
        print(f"{name}: wrote {len(steps)} embedding files to {out / 'embeddings'}")
    return EXIT_OK


def _load_embeddings(directory: Path, net: DynamicNetwork):
    from .ensemble import deserialize_embedding
    index = {net.label(i): i for i in range(net.num_ids)}
    files = sorted(directory.glob("t*.emb"))
    if len(files) != len(net):
        raise DataError(f"{directory}: {len(files)} embedding files for {len(net)} snapshots")
    for t, f in enumerate(files):
        yield t, deserialize_embedding(f, index)


def _metrics_csv(path: Path, report) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "seed", "timestep", "task", "metric", "k", "value"])
        for row in report.rows():
            w.writerow(list(row[:-1]) + [repr(float(row[-1]))])


def cmd_eval(cfg: RunConfig, embeddings: str | None = None, gr_sample: int | None = None) -> int:
    nets = load_networks(cfg)
    root = Path(cfg.out)
    seeds = [cfg.seed + i for i in range(cfg.runs)]
    from .evaltasks import ProtocolReport, SuiteReport
    reports = {}
    for name, net in nets.items():
        if embeddings:
            res = evaluate_run(net, _load_embeddings(Path(embeddings), net), cfg.seed, cfg.tasks, cfg.k,
                               gr_sample=gr_sample)
            rep = ProtocolReport([res])
        else:
            rep = run_protocol(cfg.ensemble_config(), net, cfg.tasks, cfg.k, seeds, gr_sample=gr_sample)
        reports[name] = rep
        _metrics_csv(root / name / "metrics.csv", rep)
    suite = SuiteReport(reports)
    summary = {"config": asdict(cfg), "docs": {n: degree_of_changes(net) for n, net in nets.items()},
               "table": suite.table(), "per_run": {n: r.per_run() for n, r in reports.items()}}
    _write_json(root / "summary.json", summary)
    names = list(reports)
    print("cell".ljust(16) + "".join(n.rjust(14) for n in names) + "    mean±stdev")
    for key, cell in suite.table().items():
        vals = "".join(f"{cell['means'][n]:14.4f}" for n in names)
        print(f"{key:<16}{vals}    {cell['mean']:.4f}±{cell['stdev']:.4f}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, m_range: str, rmax_range: str) -> int:
    nets = load_networks(cfg)
    ms = _range_list(m_range, int)
    rs = _range_list(rmax_range, float)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "grid.csv"
    done = set()
    header = ["network", "M", "rmax", "key", "mean", "std", "config"]
    if path.exists():
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                done.add((row["network"], int(row["M"]), float(row["rmax"])))
    new_file = not path.exists()
    seeds = [cfg.seed + i for i in range(cfg.runs)]
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new_file:
            w.writerow(header)
        for name, net in nets.items():
            for m in ms:
                for r in rs:
                    if (name, m, float(r)) in done:
                        log.info("skip %s M=%d rmax=%g (done)", name, m, r)
                        continue
                    point = replace(cfg, M=m, rmax=r)
                    try:
                        ecfg = point.ensemble_config()
                    except ValueError as exc:
                        raise UsageError(str(exc)) from None
                    rep = run_protocol(ecfg, net, cfg.tasks, cfg.k, seeds)
                    mean, std = rep.mean(), rep.std()
                    echo = json.dumps(asdict(point), sort_keys=True)
                    for key in mean:
                        w.writerow([name, m, r, key, repr(mean[key]), repr(std[key]), echo])
                    fh.flush()
                    print(f"{name} M={m} rmax={r:g} " + " ".join(f"{k}={v:.4f}" for k, v in mean.items()))
    return EXIT_OK


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log2(y) against log2(x)."""
    return float(np.polyfit(np.log2(np.asarray(x, float)), np.log2(np.asarray(y, float)), 1)[0])


def _exp_range(text: str) -> list[int]:
    try:
        a, b = (int(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"expected a:b exponent range, got {text!r}") from None
    return [2 ** e for e in range(a, b + 1)]


def bench_offline(sizes, ecfg: EnsembleConfig, m_ba: int = 4, seed: int = 0, repeats: int = 1):
    """``(|V|, seconds)`` of the offline stage on BA graphs; the fastest of ``repeats`` is kept."""
    step_offline(ba_generate(64, BAConfig(edges_per_node=m_ba), seed), ecfg, seed)  # compile kernels
    rows = []
    for n in sizes:
        g = ba_generate(n, BAConfig(edges_per_node=m_ba), seed)
        best = np.inf
        for _ in range(repeats):
            tic = time.perf_counter()
            step_offline(g, ecfg, seed)
            best = min(best, time.perf_counter() - tic)
        rows.append((g.num_nodes, best))
    return rows


def bench_online(deltas, ecfg: EnsembleConfig, snapshots: int = 20, m_ba: int = 4, seed: int = 0):
    """``(new nodes per snapshot, mean online step seconds, mean |dV|, mean |V|)`` on growing BA networks."""
    warm = ba_dynamic(BAConfig(edges_per_node=m_ba, nodes_per_snapshot=8, num_snapshots=3), seed)
    model, _ = step_offline(warm[0], ecfg, seed)
    step_online(model, warm[0], warm[1], ecfg)
    rows = []
    for dn in deltas:
        net = ba_dynamic(BAConfig(edges_per_node=m_ba, nodes_per_snapshot=dn, num_snapshots=snapshots), seed)
        model, _ = step_offline(net[0], ecfg, seed)
        times, dv, vv = [], [], []
        for t in range(1, len(net)):
            tic = time.perf_counter()
            model, _ = step_online(model, net[t - 1], net[t], ecfg)
            times.append(time.perf_counter() - tic)
            dv.append(model.history[-1].num_affected)
            vv.append(net[t].num_nodes)
        rows.append((dn, float(np.mean(times)), float(np.mean(dv)), float(np.mean(vv))))
    return rows


def cmd_bench(cfg: RunConfig, offline_exp: str, online_exp: str, snapshots: int, m_ba: int, repeats: int) -> int:
    ecfg = cfg.ensemble_config()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    result = {"config": asdict(cfg)}
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "size", "seconds", "mean_affected", "mean_nodes"])
        if offline_exp:
            off = bench_offline(_exp_range(offline_exp), ecfg, m_ba, cfg.seed, repeats)
            for n, s in off:
                w.writerow(["offline", n, repr(s), "", n])
                print(f"offline |V|={n:>8} {s:10.4f}s")
            result["offline_slope"] = fit_loglog_slope([r[0] for r in off], [r[1] for r in off])
            print(f"offline slope (log2 time vs log2 |V|): {result['offline_slope']:.3f}")
        if online_exp:
            on = bench_online(_exp_range(online_exp), ecfg, snapshots, m_ba, cfg.seed)
            for dn, s, dv, vv in on:
                w.writerow(["online", dn, repr(s), dv, vv])
                print(f"online |dV_BA|={dn:>6} {s:10.4f}s/step  mean|dV|={dv:.0f} mean|V|={vv:.0f}")
            result["online_slope"] = fit_loglog_slope([r[0] for r in on], [r[1] for r in on])
            print(f"online slope (log2 time vs log2 |dV_BA|): {result['online_slope']:.3f}")
    _write_json(out / "slopes.json", result)
    return EXIT_OK


def cmd_walkstats(cfg: RunConfig, restarts, start: str | None, snapshot: int, walks: int, walk_len: int,
                  seeds: int) -> int:
    if not restarts:
        raise UsageError("--R needs at least one restart probability")
    nets = load_networks(cfg)
    name, net = next(iter(nets.items()))
    g = net[snapshot]
    if start is None:
        start_id = int(np.random.default_rng(cfg.seed).choice(g.nodes))
    else:
        index = {net.label(i): i for i in range(net.num_ids)}
        if start not in index or index[start] not in g:
            raise DataError(f"start node {start!r} is not in snapshot {snapshot}")
        start_id = index[start]
    tables = build_alias_tables(g)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "walkstats.csv", "w", newline="") as fs, open(out / "visits.csv", "w", newline="") as fv:
        ws, wv = csv.writer(fs), csv.writer(fv)
        ws.writerow(["R", "seed", "start", "unique_nodes", "total_visits"])
        wv.writerow(["R", "node", "visits"])
        for R in restarts:
            hist: dict[int, int] = {}
            uniq = []
            for s in range(seeds):
                seq = generate_walks(g, tables, [start_id], WalkConfig(walks, walk_len, R), cfg.seed * 1000003 + s)
                st = walk_statistics(seq)
                uniq.append(st.unique)
                ws.writerow([R, s, net.label(start_id), st.unique, st.total])
                for u, c in st.as_dict().items():
                    hist[u] = hist.get(u, 0) + c
            for u, c in sorted(hist.items(), key=lambda kv: -kv[1]):
                wv.writerow([R, net.label(u), c])
            print(f"R={R:<5g} mean unique nodes {np.mean(uniq):8.2f}  (start {net.label(start_id)})")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors (and --help) this way
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = resolve_config(args)
        if args.command == "slice":
            return cmd_slice(cfg)
        if args.command == "embed":
            return cmd_embed(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.embeddings, args.gr_sample)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.m_range, args.rmax_range)
        if args.command == "bench":
            return cmd_bench(cfg, args.offline_exp, args.online_exp, args.snapshots, args.m_ba, args.repeats)
        if args.command == "walkstats":
            restarts = args.restarts if args.restarts is not None else [0.0, 0.2, 0.5, 0.8]
            return cmd_walkstats(cfg, restarts, args.start, args.snapshot, args.walks, args.walk_len, args.seeds)
    except UsageError as exc:
        print(f"sgedne: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EdgeStreamError, SlicingError, FileNotFoundError, OSError) as exc:
        print(f"sgedne: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"sgedne: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
