"""Multi-layered graph data model, loaders, supra graph and transductive splits.

Edges are stored as directed ordered pairs ``(src, dst)``; ``dst`` aggregates
messages from ``src``. Undirected sources are symmetrized on load. Self-pairs
are never stored (attention adds self-edges on its own), but a per-layer
``self_pairs`` count is kept so that the ordered-pairs-including-self edge
totals used by the benchmark tables can be reported.
"""

from __future__ import annotations

import csv
import math
import os
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNLABELED = -1
MISSING_POLICIES = ("drop-edges", "own-category")
DEFAULT_MISSING = ("?", "")


class DataFormatError(ValueError):
    """Malformed dataset input. ``line`` is 1-based when known."""

    def __init__(self, message: str, path: str | os.PathLike | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _canonical_edges(src: np.ndarray, dst: np.ndarray, n_nodes: int) -> np.ndarray:
    """Deduplicated, self-loop free ``(M, 2)`` array sorted by (src, dst)."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    keep = src != dst
    code = np.unique(src[keep] * n_nodes + dst[keep])
    return np.stack([code // n_nodes, code % n_nodes], axis=1) if code.size else np.zeros((0, 2), np.int64)


@dataclass(frozen=True)
class LayerGraph:
    layer_id: int
    n_nodes: int
    edges: np.ndarray
    present: np.ndarray
    self_pairs: int = 0
    name: str = ""

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        present = np.asarray(self.present, dtype=bool)
        if present.shape != (self.n_nodes,):
            raise ValueError(f"present mask has shape {present.shape}, expected ({self.n_nodes},)")
        if edges.size and (edges.min() < 0 or edges.max() >= self.n_nodes):
            raise ValueError(f"layer {self.layer_id}: node id out of range [0, {self.n_nodes})")
        canon = _canonical_edges(edges[:, 0], edges[:, 1], self.n_nodes)
        if len(canon) != len(edges):
            raise ValueError(f"layer {self.layer_id}: duplicate pairs or self-loops in edge array")
        object.__setattr__(self, "edges", _frozen(canon))
        object.__setattr__(self, "present", _frozen(present.copy()))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def counted_edges(self) -> int:
        """Ordered pairs including self-pairs (the benchmark-table convention)."""
        return self.n_edges + self.self_pairs

    def is_symmetric(self) -> bool:
        fwd = self.edges[:, 0] * self.n_nodes + self.edges[:, 1]
        rev = np.sort(self.edges[:, 1] * self.n_nodes + self.edges[:, 0])
        return bool(np.array_equal(fwd, rev))

    @classmethod
    def from_pairs(cls, pairs, n_nodes: int, directed: bool = True, layer_id: int = 0,
                   present=None, name: str = "") -> "LayerGraph":
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        src, dst = pairs[:, 0], pairs[:, 1]
        if not directed:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        self_nodes = np.unique(pairs[pairs[:, 0] == pairs[:, 1], 0])
        edges = _canonical_edges(src, dst, n_nodes)
        if present is None:
            present = np.zeros(n_nodes, dtype=bool)
            present[edges.ravel()] = True
            present[self_nodes] = True
        return cls(layer_id, n_nodes, edges, present, int(len(self_nodes)), name)


@dataclass(frozen=True)
class MultiLayerGraph:
    n_nodes: int
    layers: tuple[LayerGraph, ...]
    labels: np.ndarray
    n_classes: int
    name: str = ""
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a multi-layered graph needs at least one layer")
        for i, layer in enumerate(layers):
            if layer.n_nodes != self.n_nodes:
                raise ValueError(f"layer {i} has {layer.n_nodes} nodes, expected {self.n_nodes}")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (self.n_nodes,):
            raise ValueError(f"labels have shape {labels.shape}, expected ({self.n_nodes},)")
        bad = (labels != UNLABELED) & ((labels < 0) | (labels >= self.n_classes))
        if bad.any():
            raise ValueError(f"label out of range [0, {self.n_classes}) at node {int(np.flatnonzero(bad)[0])}")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "labels", _frozen(labels.copy()))
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def labeled_ids(self) -> np.ndarray:
        return np.flatnonzero(self.labels != UNLABELED)

    def permute(self, perm) -> "MultiLayerGraph":
        """Relabel nodes so that old node ``i`` becomes ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        layers = []
        for layer in self.layers:
            present = np.empty_like(layer.present)
            present[perm] = layer.present
            layers.append(LayerGraph(layer.layer_id, self.n_nodes, perm[layer.edges], present,
                                     layer.self_pairs, layer.name))
        labels = np.empty_like(self.labels)
        labels[perm] = self.labels
        return MultiLayerGraph(self.n_nodes, tuple(layers), labels, self.n_classes, self.name, self.class_names)


@dataclass(frozen=True)
class SupraGraph:
    """Flattened (node, layer) graph. Copy of node ``i`` in layer ``l`` sits at ``l * N + i``."""

    n_nodes: int
    n_layers: int
    intra_edges: np.ndarray
    pillar_edges: np.ndarray

    @property
    def n_supra(self) -> int:
        return self.n_nodes * self.n_layers

    def index_of(self, node, layer):
        return np.asarray(layer) * self.n_nodes + np.asarray(node)

    @property
    def node_of(self) -> np.ndarray:
        return np.tile(np.arange(self.n_nodes), self.n_layers)

    @property
    def layer_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_layers), self.n_nodes)

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate([self.intra_edges, self.pillar_edges])


@dataclass(frozen=True)
class Split:
    train_idx: np.ndarray
    test_idx: np.ndarray
    seed: int
    frac: float


@dataclass
class GraphStats:
    name: str
    n_nodes: int
    n_layers: int
    n_classes: int
    stored_edges: list[int]
    counted_edges: list[int]
    class_counts: list[int]
    n_unlabeled: int = 0
    layer_names: list[str] = field(default_factory=list)

    @property
    def total_stored(self) -> int:
        return sum(self.stored_edges)

    @property
    def total_counted(self) -> int:
        return sum(self.counted_edges)

    def format(self) -> str:
        lines = [
            f"dataset={self.name or '-'}",
            f"N={self.n_nodes} L={self.n_layers} C={self.n_classes}",
            f"edges={self.total_counted} stored_directed={self.total_stored}",
            "classes=" + ",".join(str(c) for c in self.class_counts)
            + (f" unlabeled={self.n_unlabeled}" if self.n_unlabeled else ""),
        ]
        for i, (s, c) in enumerate(zip(self.stored_edges, self.counted_edges)):
            label = self.layer_names[i] if i < len(self.layer_names) and self.layer_names[i] else ""
            lines.append(f"layer {i}{' ' + label if label else ''}: stored={s} counted={c}")
        return "\n".join(lines)


def load_layer_edgelist(path, n_nodes: int, directed: bool = False, layer_id: int = 0) -> LayerGraph:
    """Read a whitespace-separated integer edge list; ``#`` starts a comment."""
    pairs = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) < 2:
                raise DataFormatError(f"expected two node ids, got {line!r}", path, lineno)
            try:
                u, v = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise DataFormatError(f"non-integer node id in {line!r}", path, lineno) from None
            for x in (u, v):
                if not 0 <= x < n_nodes:
                    raise DataFormatError(f"node id {x} outside [0, {n_nodes})", path, lineno)
            pairs.append((u, v))
    return LayerGraph.from_pairs(np.array(pairs, dtype=np.int64).reshape(-1, 2), n_nodes,
                                 directed=directed, layer_id=layer_id, name=Path(path).stem)


def _group_pairs(members: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = len(members)
    src = np.repeat(members, n)
    dst = np.tile(members, n)
    keep = src != dst
    return src[keep], dst[keep]


def ingest_categorical_table(table: Sequence[Sequence[str]], labels=None, n_classes: int | None = None,
                             missing_policy: str = "drop-edges", missing_values=DEFAULT_MISSING,
                             attribute_names: Sequence[str] | None = None, name: str = "",
                             class_names: Sequence[str] = ()) -> MultiLayerGraph:
    """One layer per attribute column; rows sharing a value are fully connected.

    With ``drop-edges`` a missing value joins no group (the node is absent from
    that layer); with ``own-category`` missing values form a group of their own.
    """
    if missing_policy not in MISSING_POLICIES:
        raise ValueError(f"missing_policy must be one of {MISSING_POLICIES}, got {missing_policy!r}")
    rows = [list(r) for r in table]
    if not rows or not rows[0]:
        raise DataFormatError("empty table")
    n, n_attr = len(rows), len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != n_attr:
            raise DataFormatError(f"row {i} has {len(r)} fields, expected {n_attr}")
    names = list(attribute_names) if attribute_names is not None else [f"attr{j}" for j in range(n_attr)]
    missing = set(missing_values)

    layers = []
    for j in range(n_attr):
        column = [str(r[j]).strip() for r in rows]
        is_missing = np.array([v in missing for v in column])
        if is_missing.all():
            raise DataFormatError(f"column {names[j]!r} has only missing values")
        if missing_policy == "own-category":
            column = ["\x00missing" if m else v for v, m in zip(column, is_missing)]
            is_missing = np.zeros(n, dtype=bool)
        _, codes = np.unique(np.array(column, dtype=object).astype(str), return_inverse=True)
        codes = np.where(is_missing, -1, codes)
        order = np.argsort(codes, kind="stable")
        sorted_codes = codes[order]
        bounds = np.flatnonzero(np.diff(sorted_codes)) + 1
        srcs, dsts = [], []
        for members in np.split(order, bounds):
            if codes[members[0]] < 0 or len(members) < 2:
                continue
            s, d = _group_pairs(np.sort(members))
            srcs.append(s)
            dsts.append(d)
        src = np.concatenate(srcs) if srcs else np.zeros(0, np.int64)
        dst = np.concatenate(dsts) if dsts else np.zeros(0, np.int64)
        present = ~is_missing
        layers.append(LayerGraph(j, n, _canonical_edges(src, dst, n), present, int(present.sum()), names[j]))

    if labels is None:
        labels = np.full(n, UNLABELED)
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if (labels != UNLABELED).any() else 0
    return MultiLayerGraph(n, tuple(layers), labels, n_classes, name, tuple(class_names))


def read_categorical_table(path, label_column: str | int, delimiter: str = ",",
                           columns: Sequence[str] | None = None):
    """Read a delimited table with a header row.

    Returns ``(table, attribute_names, labels, class_names)``; class indices
    follow the sorted order of the label values.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError("empty table", path) from None
        body = [r for r in reader if any(x.strip() for x in r)]
    if isinstance(label_column, int):
        label_idx = label_column
    else:
        if label_column not in header:
            raise DataFormatError(f"label column {label_column!r} not in header {header}", path)
        label_idx = header.index(label_column)
    if columns is None:
        attr_idx = [j for j in range(len(header)) if j != label_idx]
    else:
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataFormatError(f"columns {missing} not in header", path)
        attr_idx = [header.index(c) for c in columns]
    for lineno, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataFormatError(f"expected {len(header)} fields, got {len(r)}", path, lineno)
    raw_labels = [r[label_idx].strip() for r in body]
    class_names = sorted(set(raw_labels) - set(DEFAULT_MISSING))
    lookup = {c: i for i, c in enumerate(class_names)}
    labels = np.array([lookup.get(v, UNLABELED) for v in raw_labels], dtype=np.int64)
    table = [[r[j] for j in attr_idx] for r in body]
    return table, [header[j] for j in attr_idx], labels, class_names


def build_supra_graph(g: MultiLayerGraph) -> SupraGraph:
    n, n_layers = g.n_nodes, g.n_layers
    intra = [layer.edges + l * n for l, layer in enumerate(g.layers)]
    intra = np.concatenate(intra) if intra else np.zeros((0, 2), np.int64)
    nodes = np.arange(n)
    pillars = [
        np.stack([la * n + nodes, lb * n + nodes], axis=1)
        for la in range(n_layers) for lb in range(n_layers) if la != lb
    ]
    pillars = np.concatenate(pillars) if pillars else np.zeros((0, 2), np.int64)
    return SupraGraph(n, n_layers, _frozen(intra.astype(np.int64)), _frozen(pillars.astype(np.int64)))


def random_features(rows: int, dim: int, seed) -> np.ndarray:
    """I.i.d. standard normal node attributes, reproducible from ``seed``."""
    if rows <= 0 or dim <= 0:
        raise ValueError(f"rows and dim must be positive, got {rows}x{dim}")
    return np.random.default_rng(seed).standard_normal((rows, dim))


def split_transductive(labeled_ids, frac: float, seed: int) -> Split:
    """Uniform random train subset of size ``floor(frac * n)``; the rest is test."""
    if not 0.0 < frac < 1.0:
        raise ValueError(f"frac must lie in (0, 1), got {frac}")
    ids = np.asarray(labeled_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("no labeled nodes to split")
    n_train = math.floor(frac * ids.size)
    if n_train == 0:
        raise ValueError(f"frac={frac} of {ids.size} labeled nodes leaves an empty train set")
    perm = np.random.default_rng(seed).permutation(ids.size)
    train = np.sort(ids[perm[:n_train]])
    test = np.sort(ids[perm[n_train:]])
    return Split(_frozen(train), _frozen(test), int(seed), float(frac))


def graph_stats(g: MultiLayerGraph) -> GraphStats:
    labeled = g.labels[g.labels != UNLABELED]
    return GraphStats(
        name=g.name,
        n_nodes=g.n_nodes,
        n_layers=g.n_layers,
        n_classes=g.n_classes,
        stored_edges=[layer.n_edges for layer in g.layers],
        counted_edges=[layer.counted_edges for layer in g.layers],
        class_counts=np.bincount(labeled, minlength=g.n_classes).tolist(),
        n_unlabeled=int((g.labels == UNLABELED).sum()),
        layer_names=[layer.name for layer in g.layers],
    )


# -- dataset descriptor files -------------------------------------------------

def _parse_bool(value: str, path, lineno) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise DataFormatError(f"expected a boolean, got {value!r}", path, lineno)


def load_labels(path, n_nodes: int) -> np.ndarray:
    labels = np.full(n_nodes, UNLABELED, dtype=np.int64)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                node, label = int(tokens[0]), int(tokens[1])
            except (ValueError, IndexError):
                raise DataFormatError(f"expected 'node_id label_index', got {line!r}", path, lineno) from None
            if not 0 <= node < n_nodes:
                raise DataFormatError(f"node id {node} outside [0, {n_nodes})", path, lineno)
            labels[node] = label
    return labels


def load_dataset(path) -> MultiLayerGraph:
    """Load a dataset from a descriptor file (or a directory holding ``dataset.cfg``).

    Descriptor lines are ``key=value``: ``n_nodes``, ``n_classes``, ``directed``,
    ``labels=<path>`` and one ``layer=<path>`` per layer in order. Optional
    ``name`` and ``classes`` (comma separated). Paths are relative to the file.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "dataset.cfg"
    if not path.exists():
        raise FileNotFoundError(f"dataset descriptor not found: {path}")
    base = path.parent
    info: dict = {"layer": []}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(f"expected key=value, got {line!r}", path, lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            if key == "layer":
                info["layer"].append(value)
            elif key in ("n_nodes", "n_classes"):
                try:
                    info[key] = int(value)
                except ValueError:
                    raise DataFormatError(f"{key} must be an integer, got {value!r}", path, lineno) from None
            elif key == "directed":
                info[key] = _parse_bool(value, path, lineno)
            elif key in ("labels", "name", "classes"):
                info[key] = value
            else:
                raise DataFormatError(f"unknown key {key!r}", path, lineno)
    for key in ("n_nodes", "n_classes", "labels"):
        if key not in info:
            raise DataFormatError(f"missing required key {key!r}", path)
    if not info["layer"]:
        raise DataFormatError("no layer= entries", path)
    n = info["n_nodes"]
    directed = info.get("directed", False)
    layers = tuple(load_layer_edgelist(base / p, n, directed, layer_id=i) for i, p in enumerate(info["layer"]))
    labels = load_labels(base / info["labels"], n)
    class_names = tuple(c.strip() for c in info["classes"].split(",")) if "classes" in info else ()
    return MultiLayerGraph(n, layers, labels, info["n_classes"], info.get("name", base.name), class_names)


def write_dataset(g: MultiLayerGraph, directory) -> Path:
    """Write ``g`` as a descriptor + labels + one edge list per layer.

    Counted self-pairs are written as explicit ``u u`` lines so that a reload
    reports the same counted edge totals.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"name={g.name}", f"n_nodes={g.n_nodes}", f"n_classes={g.n_classes}", "directed=true",
             "labels=labels.txt"]
    if g.class_names:
        lines.append("classes=" + ",".join(g.class_names))
    for l, layer in enumerate(g.layers):
        fname = f"layer{l:02d}.txt"
        with open(directory / fname, "w") as fh:
            if layer.name:
                fh.write(f"# {layer.name}\n")
            if layer.self_pairs:
                selfs = np.flatnonzero(layer.present)
                if len(selfs) != layer.self_pairs:
                    selfs = selfs[: layer.self_pairs]
                for u in selfs:
                    fh.write(f"{u} {u}\n")
            np.savetxt(fh, layer.edges, fmt="%d")
        lines.append(f"layer={fname}")
    with open(directory / "labels.txt", "w") as fh:
        for i in g.labeled_ids:
            fh.write(f"{i} {g.labels[i]}\n")
    (directory / "dataset.cfg").write_text("\n".join(lines) + "\n")
    return directory / "dataset.cfg"
