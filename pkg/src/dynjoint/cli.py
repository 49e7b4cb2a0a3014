"""Command-line interface: simulate, fit, predict, evaluate, align.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .align import pca_project, posterior_mean_positions
from .errors import (
    ConfigError,
    DataError,
    DegenerateLabels,
    FactorizationFailure,
    GridMismatch,
    IoError,
    KeyMismatch,
    RankDeficiencyWarning,
    SamplerStall,
    ShapeMismatch,
    SweepError,
)
from .gibbs import merge_archives, run_chain
from .predict import (
    auc,
    extend_latents,
    interval_metrics,
    mspe,
    predict_attributes,
    score_edges,
    score_future_edges,
)
from .simulate import (
    apply_mask,
    integer_grid,
    simulate_scheme1,
    simulate_scheme2,
    simulate_scheme3,
    standardize_attributes,
)

log = logging.getLogger("dynjoint")

EDGES, ATTRS = "edges.csv", "attributes.csv"
LEDGER_EDGES, LEDGER_ATTRS = "ledger_edges.csv", "ledger_attributes.csv"
TRUTH_EDGES, TRUTH_ATTRS, TRUTH_LATENTS = "truth_edges.csv", "truth_attributes.csv", "truth_latents.bin"
ARCHIVE, DIAGNOSTICS = "archive.djarc", "diagnostics.txt"
EDGE_PRED, ATTR_PRED = "edge_predictions.csv", "attr_predictions.csv"
METRICS, POSITIONS, GRAM = "metrics.csv", "positions.csv", "gram.csv"


def _setup(args):
    cfg = io.load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    if seed < 0 or seed >= 2**64:
        raise ConfigError("--seed must be an unsigned 64-bit integer")
    out = Path(args.out) if args.out else cfg.data_dir
    if not out.is_dir():
        raise IoError(f"output directory does not exist: {out}")
    threshold = cfg.threshold if args.threshold is None else args.threshold
    if not 0 < threshold < 1:
        raise ConfigError("--threshold must lie in (0, 1)")
    return cfg, seed, out, threshold


def _data_dir(cfg):
    if not cfg.data_dir.is_dir():
        raise IoError(f"data directory does not exist: {cfg.data_dir}")
    return cfg.data_dir


def _load_dataset(cfg):
    d = _data_dir(cfg)
    return io.read_dataset(d / EDGES, d / ATTRS)


# ---------------------------------------------------------------- simulate

def simulate_dataset(cfg, seed):
    """Simulated data, its masked version and the ledger, all from one seed."""
    rng = np.random.default_rng(seed)
    p = cfg.scheme_params
    sizes = p.attributes.sizes if cfg.scheme == "scheme3" else p.sizes
    grid = integer_grid(sizes.num_times)
    sim = {"scheme1": simulate_scheme1, "scheme2": simulate_scheme2, "scheme3": simulate_scheme3}
    data = sim[cfg.scheme](p, grid, rng)
    if cfg.standardize:
        data = standardize_attributes(data)
    masked = apply_mask(data.graph, cfg.mask, rng, data.attrs)
    return data, masked


def cmd_simulate(args):
    cfg, seed, out, _ = _setup(args)
    data, masked = simulate_dataset(cfg, seed)
    io.write_edges(out / EDGES, masked.graph)
    io.write_attributes(out / ATTRS, masked.attrs)
    io.write_ledger(out / LEDGER_EDGES, out / LEDGER_ATTRS, masked.ledger,
                    io.default_node_ids(data.graph.num_nodes))
    io.write_edges(out / TRUTH_EDGES, data.graph)
    io.write_attributes(out / TRUTH_ATTRS, data.attrs)
    io.save_truth(out / TRUTH_LATENTS, data.truth)
    g = masked.graph
    led = masked.ledger
    n_cells = g.num_layers * g.num_times * g.num_nodes * (g.num_nodes - 1) // 2
    print(f"simulated {cfg.scheme}: J={g.num_nodes} L={g.num_layers} m={masked.attrs.num_attrs} "
          f"T={data.graph.num_times} (train {g.num_times}); {n_cells} dyad-cells written; "
          f"hidden: {len(led.missing_edges)} edge cells, {len(led.future_edges)} future edge cells, "
          f"{len(led.missing_attrs)} attribute cells, {len(led.future_attrs)} future attribute cells")
    return 0


# ---------------------------------------------------------------- fit

def chain_seeds(seed, n):
    if n == 1:
        return [seed]
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _run_one(task):
    graph, attrs, config, seed = task
    return run_chain(graph, attrs, config, seed=seed)


def fit_chains(graph, attrs, config, seed, chains):
    seeds = chain_seeds(seed, chains)
    tasks = [(graph, attrs, replace(config, seed=s), s) for s in seeds]
    if chains == 1:
        return _run_one(tasks[0])
    workers = min(chains, os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        archives = list(pool.map(_run_one, tasks))
    return merge_archives(archives)


def diagnostics_report(archive):
    prov = archive.provenance
    chains = prov.get("chains", [prov])
    lines = [f"draws kept: {len(archive)}"]
    for c, p in enumerate(chains):
        q = len(archive) // len(chains)
        lines.append(f"chain {c}: seed {p['seed']}, {p['sweeps']} sweeps, "
                     f"{p['wall_time']:.2f} s total, {p['seconds_per_sweep']:.4f} s/sweep")
        for name, ess in p["ess"].items():
            lines.append(f"  ESS {name}: {ess:.1f} (ESS/Q {ess / q:.3f})")
    return "\n".join(lines) + "\n"


def cmd_fit(args):
    cfg, seed, out, _ = _setup(args)
    if args.chains < 1:
        raise ConfigError("--chains must be >= 1")
    graph, attrs, ids = _load_dataset(cfg)
    config = replace(cfg.model, seed=seed)
    archive = fit_chains(graph, attrs, config, seed, args.chains)
    archive.node_ids = ids
    report = diagnostics_report(archive)
    io.save_archive(out / ARCHIVE, archive)
    (out / DIAGNOSTICS).write_text(report)
    print(report, end="")
    return 0


# ---------------------------------------------------------------- predict

def _future_times(cfg, grid):
    if cfg.future_times is not None:
        return np.array(cfg.future_times)
    d = cfg.data_dir
    if (d / LEDGER_EDGES).is_file() and (d / LEDGER_ATTRS).is_file():
        times = io.read_ledger(d / LEDGER_EDGES, d / LEDGER_ATTRS).future_times()
        return np.array([t for t in times if t > grid[-1]])
    return np.empty(0)


def _edge_rows(scenario, scores, times, ids, threshold):
    return [[scenario, io.fmt(times[t]), int(l), ids[i], ids[j], io.fmt(p), int(p > threshold)]
            for l, t, i, j, p in zip(scores.layer, scores.t_idx, scores.i, scores.j, scores.probability)]


def _attr_rows(scenario, pred, times, ids):
    return [[scenario, io.fmt(times[t]), ids[j], int(k), io.fmt(p), io.fmt(lo), io.fmt(hi)]
            for j, k, t, p, lo, hi in zip(pred.node, pred.attr, pred.t_idx, pred.point, pred.lo, pred.hi)]


def make_predictions(archive, graph, attrs, ids, future, rng, bernoulli=False, threshold=0.5, level=0.95):
    """Rows of the edge and attribute prediction tables for every scenario."""
    if archive.grid.shape != graph.grid.shape or not np.array_equal(archive.grid, graph.grid):
        raise GridMismatch("archive grid does not match the dataset grid")
    if archive.node_ids is not None and tuple(archive.node_ids) != tuple(ids):
        raise DataError("archive node ids do not match the dataset")
    grid = graph.grid
    erows, arows = [], []
    for scen, cells in (("in", graph.observed_cells()), ("mis", graph.hidden_cells())):
        s = score_edges(archive, *cells, bernoulli=bernoulli, rng=rng, threshold=threshold)
        erows += _edge_rows(scen, s, grid, ids, threshold)
    obs = np.nonzero(attrs.mask)
    hid = np.nonzero(~attrs.mask)
    for scen, cells in (("in", obs), ("mis", hid)):
        p = predict_attributes(archive, attrs, cells, rng, level=level)
        arows += _attr_rows(scen, p, grid, ids)
    if future.size:
        ext = extend_latents(archive, future, rng)
        s = score_future_edges(archive, graph, future, rng, bernoulli=bernoulli,
                               threshold=threshold, extended=ext)
        erows += _edge_rows("out", s, ext.times, ids, threshold)
        J, m = attrs.values.shape[:2]
        j, k, t = np.meshgrid(np.arange(J), np.arange(m), np.arange(future.size), indexing="ij")
        p = predict_attributes(archive, attrs, (j.ravel(), k.ravel(), t.ravel()), rng,
                               extended=ext, level=level)
        arows += _attr_rows("out", p, ext.times, ids)
    return erows, arows


def cmd_predict(args):
    cfg, seed, out, threshold = _setup(args)
    graph, attrs, ids = _load_dataset(cfg)
    archive = io.load_archive(out / ARCHIVE)
    rng = np.random.default_rng(seed)
    future = _future_times(cfg, graph.grid)
    erows, arows = make_predictions(archive, graph, attrs, ids, future, rng,
                                    args.bernoulli_scores, threshold, cfg.level)
    io.write_edge_predictions(out / EDGE_PRED, erows)
    io.write_attr_predictions(out / ATTR_PRED, arows)
    print(f"wrote {len(erows)} edge and {len(arows)} attribute predictions")
    return 0


# ---------------------------------------------------------------- evaluate

def _mismatch(what, keys):
    keys = sorted(keys)
    shown = ", ".join(str(k) for k in keys[:10])
    more = f" (+{len(keys) - 10} more)" if len(keys) > 10 else ""
    return KeyMismatch(f"{what}: {shown}{more}")


def evaluate_tables(edge_pred, attr_pred, ledger, graph, attrs, ids):
    """Metric rows ``(scenario, metric, value)`` from prediction and truth tables."""
    nodes = io.NodeIndex(ids)
    ep = io.canonical_edges(edge_pred, nodes)
    ap = io.canonical_attrs(attr_pred, nodes)
    le = io.canonical_edges(ledger.edges, nodes)
    la = io.canonical_attrs(ledger.attrs, nodes)
    t_of = {float(t): n for n, t in enumerate(graph.grid)}

    edge_truth = {}
    for key, (scen, p) in ep.items():
        if scen == "in":
            time, l, i, j = key
            t = t_of.get(time)
            if t is None or not graph.mask[l, t, i, j]:
                raise _mismatch("in-sample edge predictions for unobserved cells", [key])
            edge_truth[key] = int(graph.edges[l, t, i, j])
    attr_truth = {}
    for key, (scen, *_) in ap.items():
        if scen == "in":
            time, j, k = key
            t = t_of.get(time)
            if t is None or not attrs.mask[j, k, t]:
                raise _mismatch("in-sample attribute predictions for unobserved cells", [key])
            attr_truth[key] = float(attrs.values[j, k, t])

    for table, truth, pred, what in ((le, edge_truth, ep, "edge"), (la, attr_truth, ap, "attribute")):
        missing = [k for k, (s, _) in table.items() if k not in pred or pred[k][0] != s]
        if missing:
            raise _mismatch(f"ledger {what} cells without a matching prediction", missing)
        extra = [k for k, v in pred.items() if v[0] != "in" and k not in table]
        if extra:
            raise _mismatch(f"{what} predictions without a ledger entry", extra)
        for k, (s, v) in table.items():
            truth[k] = v

    rows = []
    for scen in ("in", "mis", "out"):
        keys = [k for k, (s, _) in ep.items() if s == scen]
        if keys:
            try:
                rows.append((scen, "auc", auc([ep[k][1] for k in keys], [edge_truth[k] for k in keys])))
            except DegenerateLabels:
                rows.append((scen, "auc", float("nan")))
        keys = [k for k, v in ap.items() if v[0] == scen]
        if keys:
            point = [ap[k][1] for k in keys]
            tr = [attr_truth[k] for k in keys]
            rows.append((scen, "mspe", mspe(point, tr)))
            if scen != "in":
                cov, length = interval_metrics([ap[k][2] for k in keys], [ap[k][3] for k in keys], tr)
                rows.append((scen, "coverage", cov))
                rows.append((scen, "interval_length", length))
    return rows


def cmd_evaluate(args):
    cfg, _, out, _ = _setup(args)
    graph, attrs, ids = _load_dataset(cfg)
    d = cfg.data_dir
    ledger = io.read_ledger(d / LEDGER_EDGES, d / LEDGER_ATTRS)
    rows = evaluate_tables(io.read_edge_predictions(out / EDGE_PRED),
                           io.read_attr_predictions(out / ATTR_PRED), ledger, graph, attrs, ids)
    io.write_metrics(out / METRICS, rows)
    width = max(len(m) for _, m, _ in rows) if rows else 0
    for scen, metric, value in rows:
        print(f"{scen:>4}  {metric:<{width}}  {value:.4f}")
    return 0


# ---------------------------------------------------------------- align

def cmd_align(args):
    cfg, _, out, _ = _setup(args)
    archive = io.load_archive(out / ARCHIVE)
    grid = archive.grid
    ids = archive.node_ids or io.default_node_ids(archive.zeta.shape[1])
    if cfg.align_times is None:
        t_idx = list(range(grid.size))
    else:
        lookup = {float(t): n for n, t in enumerate(grid)}
        bad = [t for t in cfg.align_times if t not in lookup]
        if bad:
            raise DataError(f"align times not on the archive grid: {bad}")
        t_idx = [lookup[t] for t in cfg.align_times]
    if archive.zeta.shape[2] < 2:
        raise ConfigError("alignment needs a shared rank of at least 2")
    rows, gram_rows = [], []
    for t in t_idx:
        frame = posterior_mean_positions(archive, t)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RankDeficiencyWarning)
            pc = pca_project(frame)
        flag = int(any(issubclass(w.category, RankDeficiencyWarning) for w in caught))
        for j in range(pc.shape[0]):
            rows.append([io.fmt(grid[t]), ids[j], io.fmt(pc[j, 0]), io.fmt(pc[j, 1]), flag])
        if args.gram:
            G = frame.Z @ frame.Z.T
            for j in range(G.shape[0]):
                gram_rows.append([io.fmt(grid[t]), ids[j]] + [io.fmt(v) for v in G[j]])
    io._write_csv(out / POSITIONS, ["time", "node", "pc1", "pc2", "rank_deficient"], rows)
    if args.gram:
        io._write_csv(out / GRAM, ["time", "node"] + list(ids), gram_rows)
    print(f"wrote positions for {len(t_idx)} time points")
    return 0


# ---------------------------------------------------------------- entry point

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML run configuration")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--out", default=None, help="output directory (must exist)")
    common.add_argument("--threshold", type=float, default=None,
                        help="edge decision threshold in (0, 1), default 0.5")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dynjoint", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate a dataset and its hidden-truth ledger")
    p = sub.add_parser("fit", parents=[common], help="run the Gibbs sampler and write an archive")
    p.add_argument("--chains", type=int, default=1)
    p = sub.add_parser("predict", parents=[common], help="score hidden and future cells")
    p.add_argument("--bernoulli-scores", action="store_true",
                   help="average Bernoulli draws instead of probabilities")
    sub.add_parser("evaluate", parents=[common], help="AUC, MSPE and interval metrics")
    p = sub.add_parser("align", parents=[common], help="aligned 2-D latent positions")
    p.add_argument("--gram", action="store_true", help="also write the Gram matrix per time")
    return parser


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "align": cmd_align}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, IoError, GridMismatch, ShapeMismatch) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (SweepError, FactorizationFailure, SamplerStall) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
