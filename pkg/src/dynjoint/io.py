"""File formats: CSV datasets and ledgers, binary archives, YAML run configs.

Floats are written with ``repr`` so every text file round-trips bit-exactly.
Node ids are opaque strings mapped to dense indices in order of first
appearance (edge file first, then attribute file).
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DataError, IoError, KeyMismatch, VersionError
from .model import UNKNOWN, AttributeSeries, ModelConfig, MultiplexGraphSeries, PosteriorArchive
from .simulate import MaskPolicy, Scheme1Params, Scheme2Params, Scheme3Params, Sizes

EDGE_HEADER = ["time", "layer", "i", "j", "value", "observed"]
ATTR_HEADER = ["time", "node", "attr", "value", "observed"]
EDGE_LEDGER_HEADER = ["scenario", "time", "layer", "i", "j", "value"]
ATTR_LEDGER_HEADER = ["scenario", "time", "node", "attr", "value"]
EDGE_PRED_HEADER = ["scenario", "time", "layer", "i", "j", "probability", "predicted"]
ATTR_PRED_HEADER = ["scenario", "time", "node", "attr", "point", "lo", "hi"]
METRICS_HEADER = ["scenario", "metric", "value"]

ARCHIVE_MAGIC = b"DJARCHV\x00"
TRUTH_MAGIC = b"DJTRUTH\x00"
FORMAT_VERSION = 1
SCHEMA_VERSION = 1
# excluded from archives so identical seeds give identical bytes
TIMING_KEYS = ("wall_time", "seconds_per_sweep")


def fmt(x):
    return repr(float(x))


def default_node_ids(n):
    return tuple(str(j) for j in range(n))


def _parse_bool(text, line):
    t = text.strip().lower()
    if t in ("1", "true"):
        return True
    if t in ("0", "false"):
        return False
    raise DataError(f"observed must be 0/1/true/false, got {text!r}", line)


def _parse_time(text, line):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"bad time {text!r}", line) from None
    if not math.isfinite(v):
        raise DataError(f"non-finite time {text!r}", line)
    return v


def _parse_index(text, what, line):
    try:
        v = int(text)
    except ValueError:
        raise DataError(f"bad {what} {text!r}", line) from None
    if v < 0:
        raise DataError(f"{what} must be >= 0", line)
    return v


def _check_dir(path):
    path = Path(path)
    if not path.is_dir():
        raise IoError(f"output directory does not exist: {path}")
    return path


def _open_read(path):
    path = Path(path)
    if not path.is_file():
        raise IoError(f"file not found: {path}")
    return open(path, newline="")


def _write_csv(path, header, rows):
    _check_dir(Path(path).parent)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path, header):
    """Yield ``(line_number, row_dict)``; the header is line 1."""
    with _open_read(path) as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file", 1) from None
        if [h.strip() for h in got] != header:
            raise DataError(f"{path}: expected header {','.join(header)}", 1)
        for n, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: expected {len(header)} fields, got {len(row)}", n)
            yield n, dict(zip(header, (c.strip() for c in row)))


# ---------------------------------------------------------------- datasets

def write_edges(path, graph, node_ids=None):
    """Every upper-triangle cell of every layer and time; hidden cells have an empty value."""
    ids = node_ids or default_node_ids(graph.num_nodes)
    iu, ju = np.triu_indices(graph.num_nodes, 1)
    rows = []
    for t, time in enumerate(graph.grid):
        for l in range(graph.num_layers):
            vals = graph.edges[l, t, iu, ju]
            obs = graph.mask[l, t, iu, ju]
            for i, j, v, o in zip(iu, ju, vals, obs):
                rows.append([fmt(time), l, ids[i], ids[j], int(v) if o else "", int(o)])
    _write_csv(path, EDGE_HEADER, rows)


def write_attributes(path, attrs, node_ids=None):
    ids = node_ids or default_node_ids(attrs.num_nodes)
    rows = []
    for t, time in enumerate(attrs.grid):
        for j in range(attrs.num_nodes):
            for k in range(attrs.num_attrs):
                o = attrs.mask[j, k, t]
                rows.append([fmt(time), ids[j], k, fmt(attrs.values[j, k, t]) if o else "", int(o)])
    _write_csv(path, ATTR_HEADER, rows)


class NodeIndex:
    def __init__(self, ids=()):
        self.ids = []
        self.index = {}
        for i in ids:
            self.get(i)

    def get(self, node_id):
        if node_id not in self.index:
            self.index[node_id] = len(self.ids)
            self.ids.append(node_id)
        return self.index[node_id]

    def lookup(self, node_id, line=None):
        if node_id not in self.index:
            raise DataError(f"unknown node id {node_id!r}", line)
        return self.index[node_id]


def _read_edge_records(path, nodes):
    recs = {}
    for n, row in _read_csv(path, EDGE_HEADER):
        time = _parse_time(row["time"], n)
        layer = _parse_index(row["layer"], "layer", n)
        a, b = row["i"], row["j"]
        if not a or not b:
            raise DataError("empty node id", n)
        if a == b:
            raise DataError(f"self-loop on node {a!r}", n)
        i, j = nodes.get(a), nodes.get(b)
        if i > j:
            i, j = j, i
        observed = _parse_bool(row["observed"], n)
        if observed:
            if row["value"] not in ("0", "1"):
                raise DataError(f"edge value must be 0 or 1, got {row['value']!r}", n)
            value = int(row["value"])
        else:
            if row["value"] not in ("", "0", "1"):
                raise DataError(f"edge value must be 0, 1 or empty, got {row['value']!r}", n)
            value = UNKNOWN
        key = (time, layer, i, j)
        if key in recs:
            raise DataError(f"duplicate edge record (first at line {recs[key][0]})", n)
        recs[key] = (n, value, observed)
    return recs


def _read_attr_records(path, nodes):
    recs = {}
    for n, row in _read_csv(path, ATTR_HEADER):
        time = _parse_time(row["time"], n)
        if not row["node"]:
            raise DataError("empty node id", n)
        j = nodes.get(row["node"])
        k = _parse_index(row["attr"], "attr", n)
        observed = _parse_bool(row["observed"], n)
        if observed:
            try:
                value = float(row["value"])
            except ValueError:
                raise DataError(f"bad attribute value {row['value']!r}", n) from None
            if not math.isfinite(value):
                raise DataError("non-finite attribute value", n)
        else:
            value = math.nan
        key = (time, j, k)
        if key in recs:
            raise DataError(f"duplicate attribute record (first at line {recs[key][0]})", n)
        recs[key] = (n, value, observed)
    return recs


def read_dataset(edges_path, attrs_path):
    """Returns ``(graph, attrs, node_ids)``; cells absent from the files are unobserved."""
    nodes = NodeIndex()
    erec = _read_edge_records(edges_path, nodes)
    arec = _read_attr_records(attrs_path, nodes)
    J = len(nodes.ids)
    if J < 2:
        raise DataError("need at least two nodes")
    times = sorted({k[0] for k in erec} | {k[0] for k in arec})
    t_of = {t: n for n, t in enumerate(times)}
    L = 1 + max((k[1] for k in erec), default=0)
    m = 1 + max((k[2] for k in arec), default=0)
    T = len(times)
    edges = np.full((L, T, J, J), UNKNOWN, dtype=np.int8)
    mask = np.zeros((L, T, J, J), bool)
    for (time, l, i, j), (_, v, o) in erec.items():
        if o:
            t = t_of[time]
            edges[l, t, i, j] = edges[l, t, j, i] = v
            mask[l, t, i, j] = mask[l, t, j, i] = True
    values = np.full((J, m, T), np.nan)
    amask = np.zeros((J, m, T), bool)
    for (time, j, k), (_, v, o) in arec.items():
        if o:
            values[j, k, t_of[time]] = v
            amask[j, k, t_of[time]] = True
    grid = np.array(times, dtype=np.float64)
    graph = MultiplexGraphSeries(grid, edges, mask)
    attrs = AttributeSeries(grid, values, amask)
    return graph, attrs, tuple(nodes.ids)


# ---------------------------------------------------------------- ledgers

def write_ledger(edge_path, attr_path, ledger, node_ids):
    """Hidden truth: ``mis`` rows inside the training window, ``out`` rows after it."""
    grid = ledger.grid
    ids = node_ids
    rows = []
    for scen, block in (("mis", ledger.missing_edges), ("out", ledger.future_edges)):
        for l, t, i, j, v in np.asarray(block, dtype=np.int64).reshape(-1, 5):
            rows.append([scen, fmt(grid[t]), l, ids[i], ids[j], int(v)])
    _write_csv(edge_path, EDGE_LEDGER_HEADER, rows)
    rows = []
    for scen, block in (("mis", ledger.missing_attrs), ("out", ledger.future_attrs)):
        for j, k, t, v in np.asarray(block, dtype=np.float64).reshape(-1, 4):
            rows.append([scen, fmt(grid[int(t)]), ids[int(j)], int(k), fmt(v)])
    _write_csv(attr_path, ATTR_LEDGER_HEADER, rows)


@dataclass
class LedgerTable:
    """Ledger rows keyed by node-id tuples: edges ``(time, layer, i, j)``, attrs ``(time, node, attr)``."""

    edges: dict = field(default_factory=dict)  # key -> (scenario, value)
    attrs: dict = field(default_factory=dict)

    def future_times(self):
        return sorted({k[0] for k, (s, _) in self.edges.items() if s == "out"}
                      | {k[0] for k, (s, _) in self.attrs.items() if s == "out"})


def _scenario(text, line, allowed=("mis", "out")):
    if text not in allowed:
        raise DataError(f"scenario must be one of {allowed}, got {text!r}", line)
    return text


def read_ledger(edge_path, attr_path):
    table = LedgerTable()
    for n, row in _read_csv(edge_path, EDGE_LEDGER_HEADER):
        a, b = row["i"], row["j"]
        if a == b:
            raise DataError("self-loop in ledger", n)
        key = (_parse_time(row["time"], n), _parse_index(row["layer"], "layer", n), a, b)
        if key in table.edges:
            raise DataError("duplicate ledger edge", n)
        if row["value"] not in ("0", "1"):
            raise DataError("ledger edge value must be 0 or 1", n)
        table.edges[key] = (_scenario(row["scenario"], n), int(row["value"]))
    for n, row in _read_csv(attr_path, ATTR_LEDGER_HEADER):
        key = (_parse_time(row["time"], n), row["node"], _parse_index(row["attr"], "attr", n))
        if key in table.attrs:
            raise DataError("duplicate ledger attribute", n)
        try:
            value = float(row["value"])
        except ValueError:
            raise DataError(f"bad attribute value {row['value']!r}", n) from None
        table.attrs[key] = (_scenario(row["scenario"], n), value)
    return table


def canonical_edges(table, nodes):
    """Re-key ``{(time, layer, a, b): v}`` by dense indices with ``i < j``."""
    out = {}
    for (time, layer, a, b), v in table.items():
        i, j = sorted((nodes.lookup(a), nodes.lookup(b)))
        key = (time, layer, i, j)
        if key in out:
            raise DataError(f"duplicate edge key {(time, layer, a, b)}")
        out[key] = v
    return out


def canonical_attrs(table, nodes):
    return {(time, nodes.lookup(node), k): v for (time, node, k), v in table.items()}


# ---------------------------------------------------------------- binary containers

def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def write_container(path, magic, header, arrays):
    """``magic | u16 version | u32 header length | JSON header | arrays as <f8``."""
    _check_dir(Path(path).parent)
    header = dict(header)
    header["arrays"] = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_container(path, magic):
    path = Path(path)
    if not path.is_file():
        raise IoError(f"file not found: {path}")
    data = path.read_bytes()
    if data[:len(magic)] != magic:
        raise VersionError(f"{path}: bad magic bytes, not a {magic[:7].decode()} file")
    off = len(magic)
    if len(data) < off + 6:
        raise VersionError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<HI", data, off)
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {version}")
    off += 6
    try:
        header = json.loads(data[off:off + hlen].decode())
        specs = header["arrays"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise VersionError(f"{path}: corrupt header ({exc})") from None
    off += hlen
    arrays = {}
    for spec in specs:
        shape = tuple(int(s) for s in spec["shape"])
        n = int(np.prod(shape)) * 8
        if off + n > len(data):
            raise VersionError(f"{path}: truncated array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(data, dtype="<f8", count=n // 8, offset=off).reshape(shape).copy()
        off += n
    if off != len(data):
        raise VersionError(f"{path}: {len(data) - off} trailing bytes")
    return header, arrays


def save_archive(path, archive):
    header = {
        "format": "dynjoint-archive",
        "grid": [float(t) for t in archive.grid],
        "config": asdict(archive.config),
        "families": list(archive.families),
        "provenance": _strip_timing(archive.provenance),
        "node_ids": None if archive.node_ids is None else list(archive.node_ids),
    }
    arrays = {}
    for name in PosteriorArchive.ARRAYS:
        v = getattr(archive, name)
        if v is not None:
            arrays[name] = v
    write_container(path, ARCHIVE_MAGIC, header, arrays)


def load_archive(path):
    header, arrays = read_container(path, ARCHIVE_MAGIC)
    try:
        cfg = header["config"]
        config = ModelConfig(**cfg)
        grid = np.array(header["grid"], dtype=np.float64)
        families = tuple(header["families"])
    except (KeyError, TypeError, ValueError) as exc:
        raise VersionError(f"{path}: corrupt header ({exc})") from None
    chain = arrays.pop("chain", None)
    ids = header.get("node_ids")
    return PosteriorArchive(
        grid=grid, config=config, families=families,
        provenance=header.get("provenance", {}),
        node_ids=None if ids is None else tuple(ids),
        chain=None if chain is None else chain.astype(np.int64),
        xi_attr=arrays.pop("xi_attr", None), **arrays,
    )


def save_truth(path, truth):
    write_container(path, TRUTH_MAGIC, {"format": "dynjoint-truth", "grid": [float(t) for t in truth.grid]},
                    {k: np.asarray(v, dtype=np.float64) for k, v in sorted(truth.latents.items())})


def load_truth_latents(path):
    header, arrays = read_container(path, TRUTH_MAGIC)
    return np.array(header["grid"]), arrays


# ---------------------------------------------------------------- prediction tables

def write_edge_predictions(path, rows):
    _write_csv(path, EDGE_PRED_HEADER, rows)


def write_attr_predictions(path, rows):
    _write_csv(path, ATTR_PRED_HEADER, rows)


def read_edge_predictions(path):
    out = {}
    for n, row in _read_csv(path, EDGE_PRED_HEADER):
        scen = _scenario(row["scenario"], n, ("in", "mis", "out"))
        key = (_parse_time(row["time"], n), _parse_index(row["layer"], "layer", n), row["i"], row["j"])
        try:
            p = float(row["probability"])
        except ValueError:
            raise DataError("bad probability", n) from None
        if not 0.0 <= p <= 1.0:
            raise DataError(f"probability {p} outside [0, 1]", n)
        if key in out:
            raise DataError("duplicate prediction", n)
        out[key] = (scen, p)
    return out


def read_attr_predictions(path):
    out = {}
    for n, row in _read_csv(path, ATTR_PRED_HEADER):
        scen = _scenario(row["scenario"], n, ("in", "mis", "out"))
        key = (_parse_time(row["time"], n), row["node"], _parse_index(row["attr"], "attr", n))
        try:
            vals = tuple(float(row[c]) for c in ("point", "lo", "hi"))
        except ValueError:
            raise DataError("bad attribute prediction", n) from None
        if key in out:
            raise DataError("duplicate prediction", n)
        out[key] = (scen,) + vals
    return out


def write_metrics(path, rows):
    _write_csv(path, METRICS_HEADER, [[s, m, fmt(v)] for s, m, v in rows])


# ---------------------------------------------------------------- run config

@dataclass
class RunConfig:
    seed: int = 0
    data_dir: Path = Path(".")
    scheme: str = "scheme1"
    scheme_params: object = None
    standardize: bool = True
    mask: MaskPolicy = MaskPolicy()
    model: ModelConfig = ModelConfig()
    threshold: float = 0.5
    level: float = 0.95
    future_times: tuple | None = None
    align_times: tuple | None = None


def _sizes(d):
    return Sizes(**{k: int(d[k]) for k in ("num_nodes", "num_layers", "num_attrs", "num_times",
                                            "layer_rank", "shared_rank") if k in d})


def _scheme_params(d):
    d = dict(d or {})
    name = d.pop("name", "scheme1")
    sizes = _sizes(d)
    families = ("mu", "eta", "zeta", "xi", "alpha")
    if name in ("scheme1", "scheme3"):
        beta = d.get("beta", {})
        if isinstance(beta, (list, tuple)):
            beta = {f: beta for f in families}
        full = {f: (0.01, 0.4) for f in families}
        full.update({f: tuple(float(x) for x in v) for f, v in beta.items()})
        s1 = Scheme1Params(sizes=sizes, beta=full, depth=int(d.get("depth", 1)),
                           noise_var=float(d.get("noise_var", 1.0)))
        if name == "scheme1":
            return name, s1
        return name, Scheme3Params(attributes=s1, theta1_scale=float(d.get("theta1_scale", 1.0)),
                                   theta2=float(d.get("theta2", 0.5)))
    if name == "scheme2":
        def per_family(key, default):
            v = d.get(key, default)
            return {f: float(v) for f in families} if not isinstance(v, dict) else \
                {f: float(v.get(f, default)) for f in families}
        return name, Scheme2Params(sizes=sizes, rho=per_family("rho", 0.5),
                                   innovation_var=per_family("innovation_var", 4.0),
                                   noise_var=float(d.get("noise_var", 1.0)))
    raise ConfigError(f"unknown scheme {name!r}")


def load_config(path):
    """Parse a YAML run config; relative paths resolve against the config's directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if "schema_version" not in doc:
        raise ConfigError(f"{path}: missing schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {doc['schema_version']!r}")
    known = {"schema_version", "seed", "data", "scheme", "mask", "model", "predict", "align"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"{path}: unknown sections {sorted(extra)}")
    try:
        base = path.parent
        data = doc.get("data") or {}
        data_dir = (base / data.get("dir", ".")).resolve()
        scheme_doc = dict(doc.get("scheme") or {})
        standardize = bool(scheme_doc.pop("standardize", True))
        name, params = _scheme_params(scheme_doc)
        mask = MaskPolicy(**(doc.get("mask") or {}))
        model_doc = dict(doc.get("model") or {})
        seed = int(doc.get("seed", 0))
        model_doc.setdefault("seed", seed)
        model = ModelConfig(**model_doc)
        pred = doc.get("predict") or {}
        threshold = float(pred.get("threshold", 0.5))
        if not 0 < threshold < 1:
            raise ValueError("predict.threshold must lie in (0, 1)")
        future = pred.get("future_times")
        align_doc = doc.get("align") or {}
        align_times = align_doc.get("times")
        return RunConfig(
            seed=seed, data_dir=data_dir, scheme=name, scheme_params=params,
            standardize=standardize, mask=mask, model=model, threshold=threshold,
            level=float(pred.get("level", 0.95)),
            future_times=None if future is None else tuple(float(t) for t in future),
            align_times=None if align_times is None else tuple(float(t) for t in align_times),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
