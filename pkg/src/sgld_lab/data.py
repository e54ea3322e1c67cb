"""Tabular dataset ingestion, encoding, splitting and caching.

The usual flow is ``load_csv`` -> ``split_indices`` -> ``encode`` (fitted on
the training rows only) -> ``split``. Encoded datasets can be cached in a
flat binary container (``save_binary`` / ``load_binary``).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import struct
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import RngStream

UNKNOWN = "__unknown__"
MAGIC = b"SGLDDS1\x00"
KINDS = ("numeric", "categorical", "label")


class DataError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    classes: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")


def load_schema(path) -> list[ColumnSchema]:
    doc = json.loads(Path(path).read_text())
    return [ColumnSchema(c["name"], c["kind"], tuple(c["classes"]) if c.get("classes") else None) for c in doc["columns"]]


@dataclasses.dataclass
class RawTable:
    schema: list[ColumnSchema]
    columns: dict[str, list]
    digest: str

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def label_column(self) -> ColumnSchema:
        labels = [c for c in self.schema if c.kind == "label"]
        if len(labels) != 1:
            raise DataError("schema must contain exactly one label column")
        return labels[0]


def load_csv(path, schema: Sequence[ColumnSchema]) -> RawTable:
    """Parse a headered CSV into typed columns, preserving row order."""
    path = Path(path)
    raw = path.read_bytes()
    reader = csv.reader(raw.decode("utf-8").splitlines())
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: missing header row") from None
    by_name = {c.name: c for c in schema}
    if set(header) != set(by_name):
        missing = set(header) ^ set(by_name)
        raise DataError(f"{path}: header and schema disagree on columns {sorted(missing)}")
    columns: dict[str, list] = {name: [] for name in header}
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}")
        for name, cell in zip(header, row):
            cell = cell.strip()
            if by_name[name].kind == "numeric":
                try:
                    columns[name].append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: row {row_no}, column {name!r}: cannot parse {cell!r}") from None
            else:
                columns[name].append(cell)
    ordered = [by_name[name] for name in header]
    return RawTable(ordered, columns, hashlib.sha256(raw).hexdigest())


@dataclasses.dataclass(frozen=True)
class SplitSpec:
    train: int
    holdout: int
    test: int
    seed: int = 0

    def check(self, n: int) -> None:
        if min(self.train, self.holdout, self.test) < 0:
            raise DataError("split sizes must be nonnegative")
        if self.train + self.holdout + self.test > n:
            raise DataError(f"split sizes {self.train}+{self.holdout}+{self.test} exceed dataset size {n}")


def split_indices(n: int, spec: SplitSpec) -> dict[str, np.ndarray]:
    """Seeded permutation of ``range(n)`` cut into contiguous train/holdout/test blocks."""
    spec.check(n)
    perm = RngStream(spec.seed, stream_id=0x5917).permutation(n)
    a, b = spec.train, spec.train + spec.holdout
    return {"train": perm[:a], "holdout": perm[a:b], "test": perm[b : b + spec.test]}


@dataclasses.dataclass(frozen=True)
class TabularDataset:
    """Encoded features and integer labels.

    ``row_ids`` are the row numbers in the source table, so subsets of the
    same table can be checked for overlap.
    """

    features: np.ndarray
    labels: np.ndarray
    metadata: dict
    digest: str
    row_ids: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DataError("features must be 2-D with one row per label")
        if self.row_ids.shape[0] != self.labels.shape[0]:
            raise DataError("row_ids length mismatch")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.metadata.get("n_classes", int(self.labels.max()) + 1 if len(self) else 0))

    def take(self, idx) -> "TabularDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return TabularDataset(self.features[idx], self.labels[idx], self.metadata, self.digest, self.row_ids[idx])


def encode(raw: RawTable, fit_rows: Sequence[int] | None = None) -> TabularDataset:
    """One-hot categoricals (plus an unknown bucket), z-scored numerics, integer labels.

    Category sets and numeric statistics come from ``fit_rows`` only.
    """
    fit = np.arange(raw.n_rows) if fit_rows is None else np.asarray(fit_rows, dtype=np.intp)
    if fit.size == 0:
        raise DataError("fit split is empty")
    blocks, feature_names, columns_meta = [], [], []
    warnings_out = []
    for col in raw.schema:
        if col.kind == "label":
            continue
        values = raw.columns[col.name]
        if col.kind == "numeric":
            arr = np.asarray(values, dtype=np.float64)
            mean = float(arr[fit].mean())
            std = float(arr[fit].std())
            if std == 0.0:
                warnings_out.append(f"constant numeric column {col.name!r} encoded as zeros")
                blocks.append(np.zeros((arr.size, 1)))
            else:
                blocks.append(((arr - mean) / std)[:, None])
            feature_names.append(col.name)
            columns_meta.append({"name": col.name, "kind": "numeric", "mean": mean, "std": std, "constant": std == 0.0})
        else:
            cats = sorted({values[i] for i in fit})
            lookup = {c: k for k, c in enumerate(cats)}
            codes = np.array([lookup.get(v, len(cats)) for v in values], dtype=np.intp)
            onehot = np.zeros((len(values), len(cats) + 1))
            onehot[np.arange(len(values)), codes] = 1.0
            blocks.append(onehot)
            feature_names.extend([f"{col.name}={c}" for c in cats] + [f"{col.name}={UNKNOWN}"])
            columns_meta.append({"name": col.name, "kind": "categorical", "categories": cats})

    label_col = raw.label_column
    label_values = raw.columns[label_col.name]
    classes = list(label_col.classes) if label_col.classes else sorted(set(label_values))
    class_index = {c: k for k, c in enumerate(classes)}
    try:
        labels = np.array([class_index[v] for v in label_values], dtype=np.intp)
    except KeyError as exc:
        raise DataError(f"label value {exc.args[0]!r} not among classes {classes}") from None

    for w in warnings_out:
        warnings.warn(w)
    metadata = {
        "columns": columns_meta,
        "feature_names": feature_names,
        "label": label_col.name,
        "classes": classes,
        "n_classes": len(classes),
        "warnings": warnings_out,
    }
    features = np.hstack(blocks) if blocks else np.zeros((raw.n_rows, 0))
    return TabularDataset(features, labels, metadata, raw.digest, np.arange(raw.n_rows))


def split(dataset: TabularDataset, spec: SplitSpec) -> dict[str, TabularDataset]:
    return {name: dataset.take(idx) for name, idx in split_indices(len(dataset), spec).items()}


def adjacent(dataset: TabularDataset, index: int) -> TabularDataset:
    """The dataset with row ``index`` removed."""
    if not 0 <= index < len(dataset):
        raise IndexError(f"index {index} out of range for dataset of size {len(dataset)}")
    keep = np.delete(np.arange(len(dataset)), index)
    return dataset.take(keep)


def synthetic(n: int, dims: int, class_separation: float, seed: int) -> TabularDataset:
    """Two unit-covariance Gaussian blobs at ``+-(separation/2) e_1`` with balanced labels."""
    if n < 2 or dims < 1:
        raise DataError("synthetic data needs n >= 2 and dims >= 1")
    rng = RngStream(seed, stream_id=0x5E7)
    labels = np.arange(n) % 2
    labels = labels[rng.permutation(n)]
    x = rng.normal((n, dims))
    x[:, 0] += np.where(labels == 1, 0.5, -0.5) * class_separation
    digest = hashlib.sha256(f"synthetic:{n}:{dims}:{class_separation!r}:{seed}".encode()).hexdigest()
    meta = {
        "feature_names": [f"x{i}" for i in range(dims)],
        "classes": ["0", "1"],
        "n_classes": 2,
        "generator": {"n": n, "dims": dims, "class_separation": class_separation, "seed": seed},
        "warnings": [],
    }
    return TabularDataset(x, labels.astype(np.intp), meta, digest, np.arange(n))


def save_binary(dataset: TabularDataset, path) -> None:
    """Write features and label as little-endian row-major doubles plus a JSON sidecar.

    Layout: 8-byte magic, uint64 rows, uint64 columns, then ``rows * columns``
    doubles where the last column is the label.
    """
    path = Path(path)
    table = np.hstack([dataset.features, dataset.labels[:, None].astype(np.float64)])
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", *table.shape))
        fh.write(np.ascontiguousarray(table, dtype="<f8").tobytes())
    sidecar = {"metadata": dataset.metadata, "digest": dataset.digest, "row_ids": dataset.row_ids.tolist(), "label_column": table.shape[1] - 1}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))


def load_binary(path) -> TabularDataset:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise DataError(f"{path}: bad magic bytes")
    rows, cols = struct.unpack("<QQ", raw[8:24])
    table = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=24).reshape(rows, cols).astype(np.float64)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    return TabularDataset(
        table[:, :-1].copy(), table[:, -1].astype(np.intp), sidecar["metadata"], sidecar["digest"], np.asarray(sidecar["row_ids"], dtype=np.intp)
    )


# Named presets -----------------------------------------------------------

PRESET_FILES = {
    "german-credit": ("german_credit.csv", "german_credit.schema.json"),
    "uci-adult": ("adult.csv", "adult.schema.json"),
}
PRESET_SPLITS = {
    "german-credit": SplitSpec(400, 300, 300),
    "uci-adult": SplitSpec(22792, 9769, 16281),
    "synthetic": SplitSpec(200, 200, 200),
}


def data_dir() -> Path:
    """Dataset root: ``$SGLD_LAB_DATA_DIR``, else ``./data``, else the checkout's ``data/``."""
    env = os.environ.get("SGLD_LAB_DATA_DIR")
    if env:
        return Path(env)
    for candidate in (Path.cwd() / "data", Path(__file__).resolve().parents[2] / "data"):
        if (candidate / PRESET_FILES["german-credit"][0]).exists():
            return candidate
    return Path.cwd() / "data"


def load_preset(name: str, seed: int = 0, split_spec: SplitSpec | None = None) -> dict[str, TabularDataset]:
    """Load, encode (fit on train) and split one of the named datasets."""
    spec = split_spec or dataclasses.replace(PRESET_SPLITS[name], seed=seed)
    if name == "synthetic":
        ds = synthetic(spec.train + spec.holdout + spec.test, 10, 1.0, seed=1234)
        return split(ds, spec)
    if name not in PRESET_FILES:
        raise DataError(f"unknown dataset {name!r}")
    csv_name, schema_name = PRESET_FILES[name]
    root = data_dir()
    if not (root / csv_name).exists():
        raise FileNotFoundError(f"{root / csv_name} not found; set SGLD_LAB_DATA_DIR")
    raw = load_csv(root / csv_name, load_schema(root / schema_name))
    idx = split_indices(raw.n_rows, spec)
    ds = encode(raw, fit_rows=idx["train"])
    return {k: ds.take(v) for k, v in idx.items()}
