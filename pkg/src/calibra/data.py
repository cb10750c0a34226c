"""Datasets: ARFF/CSV ingestion, imputation, indicator encoding, stratified folds."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

MISSING = float("nan")


class DataFormatError(ValueError):
    """Raised for unparseable input files; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Attribute:
    name: str
    values: tuple[str, ...] | None = None  # None means numeric

    def __post_init__(self):
        if self.values is not None:
            if len(self.values) == 0:
                raise ValueError(f"categorical attribute {self.name!r} has no values")
            if len(set(self.values)) != len(self.values):
                raise ValueError(f"categorical attribute {self.name!r} has duplicate values")

    @property
    def is_numeric(self) -> bool:
        return self.values is None

    @property
    def kind(self) -> str:
        return "numeric" if self.values is None else "categorical"

    def to_dict(self) -> dict:
        return {"name": self.name, "values": None if self.values is None else list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> Attribute:
        vals = d.get("values")
        return cls(d["name"], None if vals is None else tuple(vals))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Typed tabular data.

    ``X`` holds one float column per attribute: numeric values, or the value
    index for categorical attributes.  Missing cells are NaN.
    """

    attributes: tuple[Attribute, ...]
    X: np.ndarray
    y: np.ndarray
    class_names: tuple[str, ...]
    name: str = "data"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != len(self.attributes):
            raise ValueError("every row needs one cell per attribute")
        if y.shape != (X.shape[0],):
            raise ValueError("one label per row required")
        if len(self.class_names) < 2:
            raise ValueError("at least two classes are required")
        if y.size and (y.min() < 0 or y.max() >= len(self.class_names)):
            raise ValueError("label index out of range")
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError("attribute names must be unique")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> Dataset:
        return Dataset(self.attributes, self.X[idx], self.y[idx], self.class_names, self.name)

    def has_missing(self) -> bool:
        return bool(np.isnan(self.X).any())

    def schema(self) -> dict:
        return {
            "attributes": [a.to_dict() for a in self.attributes],
            "class_names": list(self.class_names),
        }


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def load_dataset(path, format: str | None = None, label_column: str | None = None) -> Dataset:
    """Load an ARFF or CSV file; the format defaults to the file extension."""
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "arff"
    text = path.read_text(encoding="utf-8")
    if format == "arff":
        ds = parse_arff(text, name=path.stem)
    elif format == "csv":
        ds = parse_csv(text, label_column=label_column, name=path.stem)
    else:
        raise ValueError(f"unknown format {format!r}")
    return ds


def _split_arff_row(line: str, lineno: int) -> list[str]:
    try:
        row = next(csv.reader([line], skipinitialspace=True, quotechar="'"))
    except (csv.Error, StopIteration) as exc:
        raise DataFormatError(f"cannot split data row: {exc}", lineno) from None
    out = []
    for cell in row:
        cell = cell.strip()
        if len(cell) >= 2 and cell[0] == cell[-1] == '"':
            cell = cell[1:-1]
        out.append(cell)
    return out


def _parse_nominal_spec(spec: str, lineno: int) -> tuple[str, ...]:
    inner = spec.strip()
    if not (inner.startswith("{") and inner.endswith("}")):
        raise DataFormatError(f"bad nominal specification {spec!r}", lineno)
    vals = _split_arff_row(inner[1:-1], lineno)
    return tuple(v for v in vals)


def _read_arff(text: str, name: str):
    relation = name
    attrs: list[Attribute] = []
    rows: list[list[str]] = []
    row_lines: list[int] = []
    in_data = False
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        if not in_data:
            low = line.lower()
            if low.startswith("@relation"):
                relation = line.split(None, 1)[1].strip().strip("'\"") if " " in line else name
            elif low.startswith("@attribute"):
                rest = line[len("@attribute"):].strip()
                if rest.startswith(("'", '"')):
                    q = rest[0]
                    end = rest.find(q, 1)
                    if end < 0:
                        raise DataFormatError("unterminated attribute name", lineno)
                    aname, spec = rest[1:end], rest[end + 1:].strip()
                else:
                    parts = rest.split(None, 1)
                    if len(parts) != 2:
                        raise DataFormatError("attribute declaration without a type", lineno)
                    aname, spec = parts
                if spec.startswith("{"):
                    try:
                        attrs.append(Attribute(aname, _parse_nominal_spec(spec, lineno)))
                    except ValueError as exc:
                        raise DataFormatError(str(exc), lineno) from None
                elif spec.lower() in ("numeric", "real", "integer"):
                    attrs.append(Attribute(aname))
                else:
                    raise DataFormatError(f"unsupported attribute type {spec!r}", lineno)
            elif low.startswith("@data"):
                in_data = True
            else:
                raise DataFormatError(f"unexpected header line {line!r}", lineno)
            continue
        if line.startswith("{"):
            raise DataFormatError("sparse ARFF rows are not supported", lineno)
        cells = _split_arff_row(line, lineno)
        if len(cells) != len(attrs):
            raise DataFormatError(f"expected {len(attrs)} values, found {len(cells)}", lineno)
        rows.append(cells)
        row_lines.append(lineno)
    if not attrs:
        raise DataFormatError("no attributes declared")
    return relation, attrs, rows, row_lines


def parse_arff(text: str, name: str = "data", class_index: int = -1) -> Dataset:
    """Parse the dense ARFF subset: numeric and nominal attributes, ``?`` for missing."""
    relation, attrs, rows, row_lines = _read_arff(text, name)
    ci = class_index % len(attrs)
    cls_attr = attrs[ci]
    if cls_attr.is_numeric:
        raise DataFormatError(f"class attribute {cls_attr.name!r} must be nominal")
    feats = [a for k, a in enumerate(attrs) if k != ci]
    X = np.empty((len(rows), len(feats)))
    y = np.empty(len(rows), dtype=np.int64)
    lookups = [None if a.is_numeric else {v: i for i, v in enumerate(a.values)} for a in attrs]
    keep = np.ones(len(rows), dtype=bool)
    for r, (cells, lineno) in enumerate(zip(rows, row_lines)):
        col = 0
        for k, cell in enumerate(cells):
            a = attrs[k]
            if k == ci:
                if cell == "?":
                    keep[r] = False  # unlabeled rows carry no information here
                    y[r] = 0
                elif cell not in lookups[k]:
                    raise DataFormatError(f"unknown class value {cell!r}", lineno)
                else:
                    y[r] = lookups[k][cell]
                continue
            if cell == "?":
                X[r, col] = MISSING
            elif a.is_numeric:
                try:
                    X[r, col] = float(cell)
                except ValueError:
                    raise DataFormatError(f"non-numeric value {cell!r} for {a.name!r}", lineno) from None
            else:
                if cell not in lookups[k]:
                    raise DataFormatError(f"value {cell!r} not declared for {a.name!r}", lineno)
                X[r, col] = lookups[k][cell]
            col += 1
    if not keep.all():
        log.warning("dropping %d rows with missing class", int((~keep).sum()))
        X, y = X[keep], y[keep]
    _require_two_classes(y, cls_attr.values)
    return Dataset(tuple(feats), X, y, cls_attr.values, relation)


def _require_two_classes(y, class_names):
    if len(np.unique(y)) < 2:
        raise DataFormatError("dataset contains a single class; calibration needs at least two")


def _is_number(s: str) -> bool:
    try:
        v = float(s)
    except ValueError:
        return False
    return not math.isnan(v)


def parse_csv(text: str, label_column: str | None = None, name: str = "data") -> Dataset:
    """Parse RFC-4180 CSV with a header row.  Empty cells are missing.

    Columns whose non-missing cells all parse as numbers are numeric; other
    columns are categorical with values in first-appearance order.  The label
    column defaults to the last column; class names are sorted (numerically
    when every label is a number).
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataFormatError("empty CSV file: header row required", 1) from None
    header = [h.strip() for h in header]
    if label_column is None:
        li = len(header) - 1
    else:
        if label_column not in header:
            raise DataFormatError(f"label column {label_column!r} not in header", 1)
        li = header.index(label_column)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(c == "" for c in row) and len(row) <= 1:
            continue
        if len(row) != len(header):
            raise DataFormatError(f"expected {len(header)} fields, found {len(row)}", lineno)
        rows.append(row)
    labels = [r[li] for r in rows]
    if any(v == "" for v in labels):
        raise DataFormatError("missing class label")
    # sorted, so the positive (second) class does not depend on row order
    distinct = set(labels)
    if all(_is_number(v) for v in distinct):
        class_names = tuple(sorted(distinct, key=float))
    else:
        class_names = tuple(sorted(distinct))
    if len(class_names) < 2:
        raise DataFormatError("dataset contains a single class; calibration needs at least two")
    cmap = {v: i for i, v in enumerate(class_names)}
    y = np.array([cmap[v] for v in labels], dtype=np.int64)
    attrs = []
    cols = []
    for k, h in enumerate(header):
        if k == li:
            continue
        cells = [r[k] for r in rows]
        present = [c for c in cells if c != ""]
        if all(_is_number(c) for c in present):
            attrs.append(Attribute(h))
            cols.append([float(c) if c != "" else MISSING for c in cells])
        else:
            vals = tuple(dict.fromkeys(present))
            vmap = {v: i for i, v in enumerate(vals)}
            attrs.append(Attribute(h, vals))
            cols.append([float(vmap[c]) if c != "" else MISSING for c in cells])
    X = np.array(cols, dtype=float).T if cols else np.empty((len(rows), 0))
    X = X.reshape(len(rows), len(attrs))
    return Dataset(tuple(attrs), X, y, class_names, name)


def _decode_cell(attr: Attribute, cell: str, lineno: int) -> float:
    if cell in ("?", ""):
        return MISSING
    if attr.is_numeric:
        try:
            return float(cell)
        except ValueError:
            raise DataFormatError(f"non-numeric value {cell!r} for {attr.name!r}", lineno) from None
    try:
        return float(attr.values.index(cell))
    except ValueError:
        return float(len(attr.values))  # unseen value, routed by the consumer


def load_instances(path, attributes: Sequence[Attribute], class_names: Sequence[str],
                   format: str | None = None, label_column: str | None = None):
    """Read rows against a known schema, keeping unlabeled rows.

    Columns are matched by attribute name.  Returns ``(X, labels)`` where a
    missing or absent class is ``-1``.  An empty file yields zero rows.
    Unseen categorical values are coded as one past the last declared index.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    p = len(attributes)
    if not text.strip():
        return np.empty((0, p)), np.empty(0, dtype=np.int64)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "arff"
    if format == "arff":
        _, decl, rows, lines = _read_arff(text, path.stem)
        names = [a.name for a in decl]
    elif format == "csv":
        reader = csv.reader(io.StringIO(text))
        names = [h.strip() for h in next(reader)]
        rows, lines = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names):
                raise DataFormatError(f"expected {len(names)} fields, found {len(row)}", lineno)
            rows.append([c.strip() for c in row])
            lines.append(lineno)
    else:
        raise ValueError(f"unknown format {format!r}")
    pos = {n: i for i, n in enumerate(names)}
    missing = [a.name for a in attributes if a.name not in pos]
    if missing:
        raise DataFormatError(f"columns required by the model are absent: {missing}")
    extra = [n for n in names if n not in {a.name for a in attributes}]
    if label_column is not None:
        li = pos.get(label_column)
    elif format == "arff" or len(extra) == 1:
        li = pos[extra[-1]] if extra else None
    else:
        li = None
    cmap = {c: i for i, c in enumerate(class_names)}
    X = np.empty((len(rows), p))
    y = np.full(len(rows), -1, dtype=np.int64)
    for r, (cells, lineno) in enumerate(zip(rows, lines)):
        for k, a in enumerate(attributes):
            X[r, k] = _decode_cell(a, cells[pos[a.name]], lineno)
        if li is not None:
            y[r] = cmap.get(cells[li], -1)
    return X, y


def format_cell(attr: Attribute, v: float) -> str:
    if math.isnan(v):
        return ""
    if attr.is_numeric:
        return repr(float(v))
    return attr.values[int(v)]


def write_csv(d: Dataset, path, label_column: str = "class") -> None:
    """Write ``d`` as CSV; numeric cells use ``repr`` so a reload is bit-exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([a.name for a in d.attributes] + [label_column])
        for row, lab in zip(d.X, d.y):
            w.writerow([format_cell(a, v) for a, v in zip(d.attributes, row)] + [d.class_names[lab]])


def write_arff(d: Dataset, path) -> None:
    def q(s):
        return f"'{s}'" if any(ch in s for ch in " ,{}'%") else s

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"@relation {q(d.name)}\n\n")
        for a in d.attributes:
            spec = "numeric" if a.is_numeric else "{" + ",".join(q(v) for v in a.values) + "}"
            fh.write(f"@attribute {q(a.name)} {spec}\n")
        fh.write("@attribute class {" + ",".join(q(c) for c in d.class_names) + "}\n\n@data\n")
        for row, lab in zip(d.X, d.y):
            cells = ["?" if math.isnan(v) else (repr(float(v)) if a.is_numeric else q(a.values[int(v)]))
                     for a, v in zip(d.attributes, row)]
            fh.write(",".join(cells + [q(d.class_names[lab])]) + "\n")


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Imputer:
    """Per-attribute fill values fitted on training data."""

    fill: tuple[float, ...]

    @classmethod
    def fit(cls, d: Dataset) -> Imputer:
        if d.n == 0:
            raise ValueError("cannot fit imputation on an empty dataset")
        fill = []
        for k, a in enumerate(d.attributes):
            col = d.X[:, k]
            col = col[~np.isnan(col)]
            if col.size == 0:
                fill.append(0.0)
            elif a.is_numeric:
                fill.append(float(col.mean()))
            else:
                counts = np.bincount(col.astype(np.int64), minlength=len(a.values))
                fill.append(float(np.argmax(counts)))  # argmax: lowest index on ties
        return cls(tuple(fill))

    def transform(self, d: Dataset) -> Dataset:
        if len(self.fill) != len(d.attributes):
            raise ValueError("imputer was fitted on a different schema")
        X = np.array(d.X, dtype=float)
        mask = np.isnan(X)
        if mask.any():
            X[mask] = np.broadcast_to(np.asarray(self.fill), X.shape)[mask]
        return Dataset(d.attributes, X, d.y, d.class_names, d.name)

    def to_dict(self) -> dict:
        return {"fill": list(self.fill)}

    @classmethod
    def from_dict(cls, d: dict) -> Imputer:
        return cls(tuple(float(v) for v in d["fill"]))


def impute_missing(d: Dataset, imputer: Imputer | None = None) -> Dataset:
    """Replace missing cells by the column mean (numeric) or mode (categorical)."""
    if imputer is None:
        imputer = Imputer.fit(d)
    return imputer.transform(d)


def encoded_names(attributes: Sequence[Attribute]) -> list[str]:
    names = []
    for a in attributes:
        if a.is_numeric:
            names.append(a.name)
        else:
            names.extend(f"{a.name}={v}" for v in a.values)
    return names


def encode_matrix(attributes: Sequence[Attribute], X: np.ndarray) -> np.ndarray:
    """Indicator-encode categorical columns of ``X`` (missing cells not allowed)."""
    X = np.asarray(X, dtype=float)
    if np.isnan(X).any():
        raise ValueError("encode_categorical needs imputed data")
    blocks = []
    for k, a in enumerate(attributes):
        col = X[:, k]
        if a.is_numeric:
            blocks.append(col[:, None])
        else:
            ind = np.zeros((X.shape[0], len(a.values)))
            idx = col.astype(np.int64)
            inside = (idx >= 0) & (idx < len(a.values))
            ind[np.flatnonzero(inside), idx[inside]] = 1.0
            blocks.append(ind)
    if not blocks:
        return np.empty((X.shape[0], 0))
    return np.hstack(blocks)


def encode_categorical(d: Dataset) -> Dataset:
    """Replace each v-valued categorical attribute by v numeric 0/1 indicators."""
    if all(a.is_numeric for a in d.attributes):
        return d
    attrs = tuple(Attribute(n) for n in encoded_names(d.attributes))
    return Dataset(attrs, encode_matrix(d.attributes, d.X), d.y, d.class_names, d.name)


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    k: int
    assignment: np.ndarray
    seed: int

    def train_test(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        test = self.assignment == fold
        return np.flatnonzero(~test), np.flatnonzero(test)

    def __iter__(self):
        for f in range(self.k):
            yield self.train_test(f)


def stratified_folds(y, k: int, seed: int) -> FoldAssignment:
    """Shuffle within each class, then deal instances round-robin over folds.

    Dealing continues across classes, so per-class fold counts differ by at
    most one and so do total fold sizes.  Accepts a label array or a Dataset.
    """
    if isinstance(y, Dataset):
        y = y.y
    y = np.asarray(y, dtype=np.int64)
    n = y.shape[0]
    if k < 2:
        raise ValueError("need at least two folds")
    if k > n:
        raise ValueError(f"cannot build {k} folds from {n} instances")
    rng = np.random.default_rng(seed)
    order = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        order.append(rng.permutation(idx))
    order = np.concatenate(order)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n) % k
    return FoldAssignment(k, assignment, seed)


def derive_seed(seed: int, *tags: int) -> int:
    """Deterministic child seed from a master seed and integer tags."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(t) for t in tags]])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
