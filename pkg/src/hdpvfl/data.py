"""Party tables: CSV ingestion, entity resolution, normalisation, and
vertical splitting of benchmark datasets.

Party CSV layout: UTF-8, comma separated, a header row, ``id`` as the first
column, an optional ``label`` column, every other column a real feature.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InputError
from .privacy import stream_rng

log = logging.getLogger(__name__)

#: Active/passive attribute counts used by default for the named benchmarks.
DATASET_SPLITS = {"breast": (11, 20), "credit": (14, 10), "adult": (7, 8)}


class CsvParseError(InputError):
    def __init__(self, message: str, path, row: Optional[int] = None, column: Optional[str] = None):
        where = [str(path)]
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}")
        self.path, self.row, self.column = path, row, column


class MissingIdError(CsvParseError):
    pass


class DuplicateIdError(CsvParseError):
    pass


class NonNumericError(CsvParseError):
    pass


class MissingLabelError(CsvParseError):
    pass


@dataclass
class PartyTable:
    ids: list
    X: np.ndarray
    column_names: list
    y: Optional[np.ndarray] = None

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.ids), -1)
        self.column_names = list(self.column_names)
        if len(set(self.ids)) != len(self.ids):
            raise InputError("entity ids must be unique within a table")
        if self.X.shape[1] != len(self.column_names):
            raise InputError(f"{self.X.shape[1]} feature columns but {len(self.column_names)} names")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=float)
            if self.y.shape != (len(self.ids),):
                raise InputError("one target per row is required")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def is_active(self) -> bool:
        return self.y is not None

    def take(self, rows) -> "PartyTable":
        rows = np.asarray(rows, dtype=int)
        return PartyTable([self.ids[i] for i in rows], self.X[rows], self.column_names,
                          None if self.y is None else self.y[rows])


@dataclass
class AlignedPair:
    active: PartyTable
    passive: PartyTable
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.active.is_active or self.passive.is_active:
            raise InputError("the active table must carry labels and the passive table must not")
        if self.active.ids != self.passive.ids:
            raise InputError("tables are not aligned on entity ids")

    @property
    def n(self) -> int:
        return self.active.n

    def take(self, rows) -> "AlignedPair":
        return AlignedPair(self.active.take(rows), self.passive.take(rows), dict(self.metadata))


def _map_binary_labels(y: np.ndarray) -> np.ndarray:
    values = set(np.unique(y).tolist())
    if values <= {0.0, 1.0}:
        return np.where(y == 1.0, 1.0, -1.0)
    return y


def load_csv(path, has_label: bool) -> PartyTable:
    """Parse a party CSV. Rows with an empty cell are dropped (logged)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvParseError("file is empty", path) from None
        if not header or header[0] != "id":
            raise MissingIdError("first column must be named 'id'", path, row=1)
        if has_label and "label" not in header:
            raise MissingLabelError("no 'label' column", path, row=1)
        label_col = header.index("label") if has_label else None
        feature_cols = [j for j in range(1, len(header)) if j != label_col]
        ids, rows, labels, seen, dropped = [], [], [], {}, 0
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise CsvParseError(f"expected {len(header)} cells, found {len(record)}", path, row=lineno)
            rid = record[0].strip()
            if not rid:
                raise MissingIdError("missing id", path, row=lineno, column="id")
            if rid in seen:
                raise DuplicateIdError(f"duplicate id {rid!r} (first seen on row {seen[rid]})",
                                       path, row=lineno, column="id")
            seen[rid] = lineno
            cells = [record[j].strip() for j in range(1, len(header))]
            if any(c == "" for c in cells):
                dropped += 1
                continue
            values = {}
            for j in range(1, len(header)):
                try:
                    v = float(record[j])
                except ValueError:
                    raise NonNumericError(f"non-numeric value {record[j]!r}", path,
                                          row=lineno, column=header[j]) from None
                if not math.isfinite(v):
                    raise NonNumericError(f"non-finite value {record[j]!r}", path,
                                          row=lineno, column=header[j])
                values[j] = v
            ids.append(rid)
            rows.append([values[j] for j in feature_cols])
            if has_label:
                labels.append(values[label_col])
    if dropped:
        log.warning("%s: dropped %d rows with empty cells", path, dropped)
    X = np.array(rows, dtype=float).reshape(len(ids), len(feature_cols))
    y = _map_binary_labels(np.array(labels, dtype=float)) if has_label else None
    return PartyTable(ids, X, [header[j] for j in feature_cols], y)


def write_csv(table: PartyTable, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        head = ["id"] + (["label"] if table.is_active else []) + table.column_names
        writer.writerow(head)
        for i, rid in enumerate(table.ids):
            lead = [rid] + ([repr(float(table.y[i]))] if table.is_active else [])
            writer.writerow(lead + [repr(float(v)) for v in table.X[i]])


def entity_resolve(a: PartyTable, p: PartyTable) -> AlignedPair:
    """Keep the common entities of both tables, in sorted-id order."""
    common = sorted(set(a.ids) & set(p.ids))
    if not common:
        raise InputError("the parties share no entity ids")
    pos_a = {rid: i for i, rid in enumerate(a.ids)}
    pos_p = {rid: i for i, rid in enumerate(p.ids)}
    return AlignedPair(a.take([pos_a[r] for r in common]), p.take([pos_p[r] for r in common]))


def _party_scale(X: np.ndarray, role: str) -> float:
    max_norm = float(np.max(np.linalg.norm(X, axis=1))) if X.size else 0.0
    if max_norm == 0.0:
        log.warning("%s features are all zero; leaving them unscaled", role)
        return 1.0
    return max_norm * math.sqrt(2.0)


def normalize_features(pair: AlignedPair) -> AlignedPair:
    """Divide each party's matrix by one constant so its rows have norm at
    most ``1/sqrt(2)``; the joint row norm is then at most 1 without either
    party seeing the other's data."""
    s_a = _party_scale(pair.active.X, "active")
    s_p = _party_scale(pair.passive.X, "passive")
    meta = dict(pair.metadata, active_scale=s_a, passive_scale=s_p)
    return AlignedPair(replace(pair.active, X=pair.active.X / s_a),
                       replace(pair.passive, X=pair.passive.X / s_p), meta)


def normalize_targets(y) -> np.ndarray:
    """Standardise regression targets with the population std."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise InputError("cannot normalise an empty target vector")
    std = float(y.std())
    if std == 0.0:
        log.warning("targets are constant; normalised to zeros")
        return np.zeros_like(y)
    return (y - y.mean()) / std


def _attributes(column_names: list) -> dict:
    """Group encoded columns by source attribute (``attr=value`` one-hot names)."""
    groups: dict = {}
    for j, name in enumerate(column_names):
        groups.setdefault(name.split("=", 1)[0], []).append(j)
    return groups


def default_active_attributes(dataset: str, n_attributes: int) -> tuple[int, bool]:
    """Active attribute count for a named benchmark.

    Returns ``(count, id_counted)``. When the published active + passive
    counts exceed the real attribute count by exactly one, the id column is
    taken to be one of the active party's published attributes.
    """
    try:
        n_act, n_pas = DATASET_SPLITS[dataset.lower()]
    except KeyError:
        raise InputError(f"no default split for dataset {dataset!r}") from None
    if n_act + n_pas == n_attributes:
        return n_act, False
    if n_act + n_pas == n_attributes + 1:
        return n_act - 1, True
    raise InputError(f"{dataset} default split {n_act}/{n_pas} does not fit {n_attributes} attributes")


def vertical_split(full: PartyTable, d_active: int, seed: int = 0) -> tuple[PartyTable, PartyTable]:
    """Assign ``d_active`` attributes (and the label) to the active party.

    Which attributes go where is a seeded random choice; columns keep their
    original order within each party. One-hot columns named ``attr=value``
    travel together and count as a single attribute.
    """
    if not full.is_active:
        raise InputError("vertical_split needs a labelled table")
    groups = _attributes(full.column_names)
    names = list(groups)
    if not 1 <= d_active < len(names):
        raise InputError(f"d_active must lie in [1, {len(names) - 1}], got {d_active}")
    chosen = set(stream_rng(seed, "split").permutation(len(names))[:d_active].tolist())
    act_cols = sorted(j for i, a in enumerate(names) if i in chosen for j in groups[a])
    pas_cols = sorted(j for i, a in enumerate(names) if i not in chosen for j in groups[a])
    active = PartyTable(full.ids, full.X[:, act_cols], [full.column_names[j] for j in act_cols], full.y)
    passive = PartyTable(full.ids, full.X[:, pas_cols], [full.column_names[j] for j in pas_cols])
    return active, passive


def load_breast(standardize: bool = True) -> PartyTable:
    """Wisconsin diagnostic breast cancer data (569 x 30), labels in {-1, +1}.

    ``standardize`` z-scores each column; the model has no intercept, so
    centred features matter.
    """
    from sklearn.datasets import load_breast_cancer

    raw = load_breast_cancer()
    X = raw.data.astype(float)
    if standardize:
        X = (X - X.mean(axis=0)) / X.std(axis=0)
    names = [str(c).replace(" ", "_") for c in raw.feature_names]
    return PartyTable([str(i) for i in range(X.shape[0])], X, names, np.where(raw.target == 1, 1.0, -1.0))


def load_raw_table(path, standardize: bool = False) -> PartyTable:
    """Load a raw labelled CSV for splitting; text columns are one-hot encoded
    with ``attr=value`` column names."""
    import pandas as pd

    df = pd.read_csv(path, skipinitialspace=True)
    if df.columns[0] != "id":
        raise MissingIdError("first column must be named 'id'", path, row=1)
    if "label" not in df.columns:
        raise MissingLabelError("no 'label' column", path, row=1)
    df = df.dropna()
    ids = df.pop("id").astype(str)
    if ids.duplicated().any():
        raise DuplicateIdError(f"duplicate id {ids[ids.duplicated()].iloc[0]!r}", path, column="id")
    labels = df.pop("label")
    if labels.dtype == object:
        classes = sorted(labels.unique())
        if len(classes) != 2:
            raise InputError(f"text labels must be binary, found {len(classes)} classes")
        labels = (labels == classes[1]).astype(float)
    features = pd.get_dummies(df, prefix_sep="=", dtype=float)
    X = features.to_numpy(dtype=float)
    if standardize:
        std = X.std(axis=0)
        X = (X - X.mean(axis=0)) / np.where(std == 0, 1.0, std)
    y = _map_binary_labels(labels.to_numpy(dtype=float))
    return PartyTable(ids.tolist(), X, list(features.columns), y)


def write_metadata(meta: dict, path) -> None:
    lines = []
    for key in sorted(meta):
        value = meta[key]
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metadata(path) -> dict:
    meta = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            meta[key] = value
    return meta


def prepare(full: PartyTable, out_dir, *, d_active: int, seed: int = 0,
            dataset: str = "custom", standardize_targets: bool = False,
            id_counted: bool = False) -> AlignedPair:
    """Split, align and normalise a labelled table, then write
    ``active.csv``, ``passive.csv`` and ``metadata.txt`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    active, passive = vertical_split(full, d_active, seed)
    if standardize_targets:
        active = replace(active, y=normalize_targets(active.y))
    pair = normalize_features(entity_resolve(active, passive))
    pair.metadata.update({
        "dataset": dataset, "n": pair.n, "split_seed": seed,
        "active_attributes": d_active + int(id_counted),
        "passive_attributes": len(_attributes(pair.passive.column_names)),
        "id_counted_as_active_attribute": id_counted,
        "active_columns": pair.active.column_names,
        "passive_columns": pair.passive.column_names,
    })
    write_csv(pair.active, out_dir / "active.csv")
    write_csv(pair.passive, out_dir / "passive.csv")
    write_metadata(pair.metadata, out_dir / "metadata.txt")
    return pair


def benchmark_pair(dataset: str = "breast", seed: int = 0) -> AlignedPair:
    """Split, align and normalise a bundled benchmark in memory.

    Only ``"breast"`` ships with the package; the others need their raw
    CSV and :func:`prepare`.
    """
    if dataset.lower() != "breast":
        raise InputError(f"dataset {dataset!r} is not bundled; prepare it from its raw CSV")
    full = load_breast()
    d_active, id_counted = default_active_attributes("breast", full.d)
    active, passive = vertical_split(full, d_active, seed)
    pair = normalize_features(entity_resolve(active, passive))
    pair.metadata.update({"dataset": "breast", "split_seed": seed,
                          "id_counted_as_active_attribute": id_counted})
    return pair
