"""Named benchmark datasets.

Three categorical tables ship with the package (Congress Votes, Balance Scale
and the complete-case Mammographic Masses rows). The rest are read from a data
root given by ``MULTIPLEX_GAT_DATA`` (or the ``root`` argument), one
subdirectory per dataset holding a ``dataset.cfg`` descriptor. Mammography may
instead be supplied as the raw UCI file ``mammographic_masses.data``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .graph import MultiLayerGraph, ingest_categorical_table, load_dataset, read_categorical_table

DATA_ENV = "MULTIPLEX_GAT_DATA"
MAMMOGRAPHY_COLUMNS = ("bi_rads", "age", "shape", "margin", "density")


class DatasetUnavailable(FileNotFoundError):
    pass


@dataclass(frozen=True)
class DatasetInfo:
    key: str
    title: str
    n_nodes: int
    n_layers: int
    total_edges: int
    n_classes: int
    bundled: bool = False


# Reference sizes: nodes, layers, total edges, classes.
REFERENCE = {
    "vickers": DatasetInfo("vickers", "Vickers-Chan", 29, 3, 740, 2),
    "congress": DatasetInfo("congress", "Congress Votes", 435, 16, 358_338, 2, bundled=True),
    "leskovec": DatasetInfo("leskovec", "Leskovec-Ng", 191, 4, 1_836, 2),
    "reinnovation": DatasetInfo("reinnovation", "Reinnovation", 145, 12, 18_648, 3),
    "mammography": DatasetInfo("mammography", "Mammography", 961, 5, 1_979_115, 2),
    "ckm": DatasetInfo("ckm", "CKM (Social)", 241, 3, 3_825, 4),
    "balance": DatasetInfo("balance", "Balance Scale", 625, 4, 312_500, 3, bundled=True),
}
EXTRA = ("mammography-complete",)


def _bundled(name: str) -> Path:
    return Path(str(resources.files("multiplex_gat") / "data" / name))


def data_root(root=None) -> Path | None:
    root = root if root is not None else os.environ.get(DATA_ENV)
    return Path(root) if root else None


def congress_votes(missing_policy: str = "drop-edges") -> MultiLayerGraph:
    table, names, labels, classes = read_categorical_table(_bundled("congress_votes.csv"), "party")
    return ingest_categorical_table(table, labels, len(classes), missing_policy, attribute_names=names,
                                    name="congress", class_names=classes)


def balance_scale() -> MultiLayerGraph:
    table, names, labels, classes = read_categorical_table(_bundled("balance_scale.csv"), "class")
    return ingest_categorical_table(table, labels, len(classes), attribute_names=names, name="balance",
                                    class_names=classes)


def mammography_complete() -> MultiLayerGraph:
    """The 830 rows of the mammographic-mass table that have no missing value."""
    table, names, labels, classes = read_categorical_table(_bundled("mammographic_complete.csv"), "severity")
    return ingest_categorical_table(table, labels, len(classes), attribute_names=names,
                                    name="mammography-complete", class_names=classes)


def mammography_raw(path, missing_policy: str = "drop-edges") -> MultiLayerGraph:
    """Raw UCI file: five attributes then severity, comma separated, ``?`` for missing."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    table = [r[:5] for r in rows]
    raw = [r[5].strip() for r in rows]
    classes = sorted(set(raw) - {"?"})
    labels = [classes.index(v) if v in classes else -1 for v in raw]
    return ingest_categorical_table(table, labels, len(classes), missing_policy,
                                    attribute_names=MAMMOGRAPHY_COLUMNS, name="mammography", class_names=classes)


def load(key: str, root=None, missing_policy: str = "drop-edges") -> MultiLayerGraph:
    """Load a dataset by registry key, or a descriptor path if ``key`` is not registered."""
    if key.lower() not in (*REFERENCE, *EXTRA):
        return load_dataset(key)
    key = key.lower()
    if key == "congress":
        return congress_votes(missing_policy)
    if key == "balance":
        return balance_scale()
    if key == "mammography-complete":
        return mammography_complete()
    base = data_root(root)
    if base is None:
        raise DatasetUnavailable(f"dataset {key!r} is not bundled; set {DATA_ENV} to a data root "
                                 f"containing {key}/dataset.cfg")
    folder = base / key
    if key == "mammography" and (folder / "mammographic_masses.data").exists():
        return mammography_raw(folder / "mammographic_masses.data", missing_policy)
    if not (folder / "dataset.cfg").exists():
        raise DatasetUnavailable(f"dataset {key!r} not found under {folder}")
    return load_dataset(folder)

