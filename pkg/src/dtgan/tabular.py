"""Schema inference, GAN-space encoding and conditional-vector sampling.

Continuous columns are min-max scaled to [-1, 1]; categorical columns are
one-hot encoded in schema category order.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    minimum: float | None = None
    maximum: float | None = None
    integer: bool = False
    categories: tuple[str, ...] = ()
    frequencies: tuple[float, ...] = ()

    @property
    def width(self) -> int:
        return 1 if self.kind == CONTINUOUS else len(self.categories)

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass(frozen=True)
class Schema:
    columns: tuple[ColumnSpec, ...]
    target: str

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        if self.target not in names:
            raise SchemaError(f"target column {self.target!r} not in schema")
        if not self.column(self.target).is_categorical:
            raise SchemaError(f"target column {self.target!r} must be categorical")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def width(self) -> int:
        return sum(c.width for c in self.columns)

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def spans(self) -> list[tuple[int, int]]:
        out, pos = [], 0
        for c in self.columns:
            out.append((pos, pos + c.width))
            pos += c.width
        return out

    def span(self, name: str) -> tuple[int, int]:
        return self.spans()[self.names.index(name)]

    @property
    def categorical_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.is_categorical]

    @property
    def continuous_names(self) -> list[str]:
        return [c.name for c in self.columns if not c.is_categorical]

    @property
    def categorical_names(self) -> list[str]:
        return [c.name for c in self.columns if c.is_categorical]

    @property
    def condition_width(self) -> int:
        return sum(self.columns[i].width for i in self.categorical_indices)

    def to_json(self) -> str:
        return json.dumps({"target": self.target, "columns": [asdict(c) for c in self.columns]},
                          indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "Schema":
        cols = []
        for c in d["columns"]:
            c = dict(c)
            c["categories"] = tuple(c.get("categories", ()))
            c["frequencies"] = tuple(c.get("frequencies", ()))
            cols.append(ColumnSpec(**c))
        return cls(tuple(cols), d["target"])

    @classmethod
    def from_json(cls, text: str) -> "Schema":
        return cls.from_dict(json.loads(text))

    def coerce(self, df: pd.DataFrame) -> pd.DataFrame:
        """Typed copy: floats for continuous columns, strings for categorical ones."""
        missing = [n for n in self.names if n not in df.columns]
        if missing:
            raise SchemaError(f"missing columns: {missing}")
        out = {}
        for c in self.columns:
            col = df[c.name]
            if c.is_categorical:
                out[c.name] = col.map(_category_key).astype(object)
            else:
                try:
                    out[c.name] = pd.to_numeric(col).astype(float)
                except (ValueError, TypeError) as exc:
                    raise SchemaError(f"column {c.name!r}: {exc}") from None
        return pd.DataFrame(out, index=df.index)


def _category_key(v) -> str:
    """Canonical string for a category cell ("1.0" and 1 both map to "1")."""
    if isinstance(v, str):
        f = _as_float(v)
        if f is None or not f.is_integer():
            return v
        v = f
    if isinstance(v, (float, np.floating)) and float(v).is_integer():
        return str(int(v))
    return str(v)


def _as_float(s) -> float | None:
    try:
        f = float(s)
    except (TypeError, ValueError):
        return None
    return f if math.isfinite(f) else None


def _check_complete(df: pd.DataFrame):
    for j, name in enumerate(df.columns):
        col = df[name]
        bad = col.isna() | (col.astype(str).str.strip() == "")
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise SchemaError(f"missing value at row {i}, column {name!r} (index {j})")


def infer_schema(df: pd.DataFrame, target: str, threshold: int = 20) -> Schema:
    """A column is categorical iff it is non-numeric, or integer-valued with at
    most ``threshold`` distinct values."""
    if df.shape[0] == 0 or df.shape[1] == 0:
        raise SchemaError("empty table")
    if target not in df.columns:
        raise SchemaError(f"target column {target!r} not found")
    _check_complete(df)
    cols = []
    for name in df.columns:
        values = df[name].tolist()
        floats = [_as_float(v) for v in values]
        n_bad = sum(f is None for f in floats)
        distinct = {f for f in floats if f is not None}
        if n_bad == 0:
            integer = all(f.is_integer() for f in distinct)
            if integer and len(distinct) <= threshold:
                cols.append(_categorical_spec(name, values, numeric=True))
            else:
                cols.append(ColumnSpec(name, CONTINUOUS, min(distinct), max(distinct), integer))
        elif n_bad < 0.05 * len(values) and len(distinct) > threshold:
            i = next(k for k, f in enumerate(floats) if f is None)
            raise SchemaError(f"unparsable numeric cell {values[i]!r} at row {i}, column {name!r}")
        else:
            cols.append(_categorical_spec(name, values, numeric=False))
    return Schema(tuple(cols), target)


def _categorical_spec(name, values, numeric):
    keys = [_category_key(v) for v in values]
    counts = pd.Series(keys).value_counts()
    if numeric:
        cats = sorted(counts.index, key=float)
    else:
        cats = sorted(counts.index)
    total = float(len(keys))
    return ColumnSpec(name, CATEGORICAL, categories=tuple(cats),
                      frequencies=tuple(float(counts[c]) / total for c in cats))


def encode(schema: Schema, df: pd.DataFrame) -> np.ndarray:
    df = schema.coerce(df)
    out = np.zeros((len(df), schema.width), dtype=np.float64)
    for c, (a, b) in zip(schema.columns, schema.spans()):
        col = df[c.name]
        if c.is_categorical:
            index = {k: i for i, k in enumerate(c.categories)}
            unknown = set(col) - set(index)
            if unknown:
                raise SchemaError(f"unknown categories {sorted(unknown)[:5]} in column {c.name!r}")
            idx = col.map(index).to_numpy(dtype=int)
            out[np.arange(len(df)), a + idx] = 1.0
        elif c.maximum > c.minimum:
            out[:, a] = 2 * (col.to_numpy() - c.minimum) / (c.maximum - c.minimum) - 1
    return out


def decode(schema: Schema, matrix) -> pd.DataFrame:
    """Total on arbitrary matrices: continuous values are clamped, categorical
    blocks decoded by argmax."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != schema.width:
        raise SchemaError(f"expected width {schema.width}, got {m.shape}")
    data = {}
    for c, (a, b) in zip(schema.columns, schema.spans()):
        if c.is_categorical:
            data[c.name] = np.asarray(c.categories, dtype=object)[m[:, a:b].argmax(axis=1)]
        else:
            v = (np.clip(m[:, a], -1, 1) + 1) / 2 * (c.maximum - c.minimum) + c.minimum
            if c.integer:
                v = np.round(v)
            data[c.name] = v
    return pd.DataFrame(data)


@dataclass(frozen=True)
class ConditionVector:
    column: int     # schema column index (categorical)
    category: int
    vector: np.ndarray = field(repr=False)


def condition_slots(schema: Schema) -> dict[int, int]:
    """Start offset of each categorical column inside the condition vector."""
    out, pos = {}, 0
    for i in schema.categorical_indices:
        out[i] = pos
        pos += schema.columns[i].width
    return out


def sample_conditions(schema: Schema, rng: np.random.Generator, n: int, mode: str = "log"):
    """Draw ``n`` conditions: column uniform over categorical columns, category
    with probability proportional to log(1 + frequency) (``mode="log"``) or
    to the frequency itself (``mode="empirical"``).

    Returns (column indices, category indices, dense one-hot matrix); the
    matrix has zero width when the schema has no categorical column.
    """
    cat_cols = schema.categorical_indices
    if not cat_cols:
        return np.zeros(n, int), np.zeros(n, int), np.zeros((n, 0))
    slots = condition_slots(schema)
    cols = rng.integers(len(cat_cols), size=n)
    u = rng.random(n)
    col_idx = np.empty(n, dtype=int)
    cat_idx = np.empty(n, dtype=int)
    dense = np.zeros((n, schema.condition_width))
    for k, ci in enumerate(cat_cols):
        mask = cols == k
        if not mask.any():
            continue
        freq = np.asarray(schema.columns[ci].frequencies)
        if mode == "log":
            p = np.log1p(freq)
        elif mode == "empirical":
            p = freq
        else:
            raise ValueError(f"unknown condition mode {mode!r}")
        cdf = np.cumsum(p / p.sum())
        cdf[-1] = 1.0
        cats = np.searchsorted(cdf, u[mask], side="right")
        col_idx[mask] = ci
        cat_idx[mask] = cats
        dense[np.flatnonzero(mask), slots[ci] + cats] = 1.0
    return col_idx, cat_idx, dense


def sample_condition(schema: Schema, rng: np.random.Generator, mode: str = "log") -> ConditionVector | None:
    """Single condition, or None when the schema has no categorical column."""
    if not schema.categorical_indices:
        return None
    col, cat, dense = sample_conditions(schema, rng, 1, mode)
    return ConditionVector(int(col[0]), int(cat[0]), dense[0])


# -- CSV -----------------------------------------------------------------

def read_csv(path) -> pd.DataFrame:
    """Comma-separated UTF-8 with a header row; every cell read as a string."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: header without data rows")
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise SchemaError(f"{path}: row {i} has {len(r)} fields, expected {len(header)}")
    return pd.DataFrame(rows, columns=header, dtype=object)


def to_csv_text(df: pd.DataFrame, schema: Schema | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(df.columns))
    int_cols = set()
    if schema is not None:
        int_cols = {c.name for c in schema.columns if not c.is_categorical and c.integer}
    for row in df.itertuples(index=False):
        cells = []
        for name, v in zip(df.columns, row):
            if isinstance(v, (float, np.floating)):
                cells.append(str(int(v)) if name in int_cols else repr(float(v)))
            else:
                cells.append(str(v))
        writer.writerow(cells)
    return buf.getvalue()
