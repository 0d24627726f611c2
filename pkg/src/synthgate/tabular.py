"""Schema-driven loading, cleaning and encoding of tabular microdata.

Schema files are line oriented. Each non-blank line that does not start with
``#`` describes one variable as ``;``-separated fields; the first field is the
variable name and the rest are ``key=value`` pairs::

    Income; kind=continuous; role=target
    Race; kind=categorical; role=predictor; codes=1:White,2:Black,3:AmIndian,4:Asian,5:Other; missing=970,980,990; recode=100:1,200:2
    HoursWorked; kind=continuous; role=predictor; missing=0,97,98,99

Keys:

``kind``
    ``continuous``, ``binary`` or ``categorical``.
``role``
    ``target`` (alias ``sensitive-target``), ``predictor`` or ``excluded``.
``codes``
    Comma separated ``code`` or ``code:label`` items (post-recode codes).
``missing``
    Comma separated codes whose rows are dropped by :func:`clean`.
``recode``
    Comma separated ``old:new`` pairs applied by :func:`clean`.

Labels are documentation only and may not contain ``,`` ``;`` or ``:``.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._util import atomic_write_text, derive_rng, format_float

log = logging.getLogger(__name__)

KINDS = ("continuous", "binary", "categorical")
ROLES = ("target", "predictor", "excluded")
_ROLE_ALIASES = {"sensitive-target": "target", "sensitive_target": "target"}


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    """Raised when a CSV does not conform to its schema.

    ``problems`` holds ``(row, column, message)`` tuples; ``row`` is 1-based
    over data lines (the header is row 0) and may be ``None``.
    """

    def __init__(self, problems: Sequence[tuple[int | None, str | None, str]]):
        self.problems = list(problems)
        shown = "; ".join(_fmt_problem(p) for p in self.problems[:10])
        more = f" (+{len(self.problems) - 10} more)" if len(self.problems) > 10 else ""
        super().__init__(shown + more)


def _fmt_problem(p: tuple[int | None, str | None, str]) -> str:
    row, col, msg = p
    where = []
    if row is not None:
        where.append(f"row {row}")
    if col is not None:
        where.append(f"column {col!r}")
    return f"{', '.join(where)}: {msg}" if where else msg


@dataclass(frozen=True)
class VariableSchema:
    name: str
    kind: str
    role: str = "predictor"
    allowed_codes: tuple[int, ...] = ()
    labels: Mapping[int, str] = field(default_factory=dict)
    missing_codes: tuple[float, ...] = ()
    recode_map: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        role = _ROLE_ALIASES.get(self.role, self.role)
        if role not in ROLES:
            raise SchemaError(f"{self.name}: unknown role {self.role!r}")
        object.__setattr__(self, "role", role)
        if self.kind != "continuous":
            if len(self.allowed_codes) < 2:
                raise SchemaError(f"{self.name}: {self.kind} variable needs at least 2 allowed codes")
            if self.kind == "binary" and len(self.allowed_codes) != 2:
                raise SchemaError(f"{self.name}: binary variable needs exactly 2 allowed codes")
            overlap = set(self.allowed_codes) & set(self.missing_codes)
            if overlap:
                raise SchemaError(f"{self.name}: codes {sorted(overlap)} are both allowed and missing")
            bad = set(self.recode_map.values()) - set(self.allowed_codes)
            if bad:
                raise SchemaError(f"{self.name}: recode targets {sorted(bad)} are not allowed codes")

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(sorted(self.allowed_codes))

    @property
    def is_coded(self) -> bool:
        return self.kind != "continuous"

    def accepts_raw(self, value: float) -> bool:
        """Whether a freshly loaded (pre-cleaning) value is legal for this column."""
        if np.isnan(value) or value in self.missing_codes:
            return True
        if self.kind == "continuous":
            return True
        return value in self.allowed_codes or value in self.recode_map


def check_schema(schema: Sequence[VariableSchema]) -> None:
    names = [v.name for v in schema]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise SchemaError(f"duplicate variable names: {sorted(dupes)}")
    targets = [v for v in schema if v.role == "target"]
    if len(targets) != 1:
        raise SchemaError(f"expected exactly one target variable, found {len(targets)}")
    if targets[0].kind != "continuous":
        raise SchemaError(f"target {targets[0].name!r} must be continuous")


def _parse_codes(text: str, *, labelled: bool) -> tuple[list[float], dict[int, str]]:
    codes: list[float] = []
    labels: dict[int, str] = {}
    for item in filter(None, (x.strip() for x in text.split(","))):
        code, _, label = item.partition(":")
        value = float(code)
        codes.append(int(value) if value.is_integer() else value)
        if labelled and label:
            labels[int(value)] = label.strip()
    return codes, labels


def parse_schema(text: str) -> list[VariableSchema]:
    schema = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(";")]
        name, opts = parts[0], {}
        if not name or "=" in name:
            raise SchemaError(f"line {lineno}: first field must be the variable name")
        for part in parts[1:]:
            if not part:
                continue
            key, sep, value = part.partition("=")
            if not sep:
                raise SchemaError(f"line {lineno}: expected key=value, got {part!r}")
            opts[key.strip()] = value.strip()
        unknown = set(opts) - {"kind", "role", "codes", "missing", "recode"}
        if unknown:
            raise SchemaError(f"line {lineno}: unknown keys {sorted(unknown)}")
        try:
            codes, labels = _parse_codes(opts.get("codes", ""), labelled=True)
            missing, _ = _parse_codes(opts.get("missing", ""), labelled=False)
            recode = {}
            for item in filter(None, (x.strip() for x in opts.get("recode", "").split(","))):
                old, _, new = item.partition(":")
                recode[int(old)] = int(new)
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
        if "kind" not in opts:
            raise SchemaError(f"line {lineno}: missing kind")
        schema.append(
            VariableSchema(
                name=name,
                kind=opts["kind"],
                role=opts.get("role", "predictor"),
                allowed_codes=tuple(int(c) for c in codes),
                labels=labels,
                missing_codes=tuple(missing),
                recode_map=recode,
            )
        )
    check_schema(schema)
    return schema


def load_schema(path: str | os.PathLike) -> list[VariableSchema]:
    with open(path, encoding="utf-8") as fh:
        return parse_schema(fh.read())


def format_schema(schema: Sequence[VariableSchema]) -> str:
    lines = ["# name; kind=...; role=...; codes=...; missing=...; recode=..."]
    for v in schema:
        fields = [v.name, f"kind={v.kind}", f"role={v.role}"]
        if v.allowed_codes:
            fields.append(
                "codes="
                + ",".join(f"{c}:{v.labels[c]}" if c in v.labels else str(c) for c in v.allowed_codes)
            )
        if v.missing_codes:
            fields.append("missing=" + ",".join(format_float(c) for c in v.missing_codes))
        if v.recode_map:
            fields.append("recode=" + ",".join(f"{a}:{b}" for a, b in v.recode_map.items()))
        lines.append("; ".join(fields))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DropRecord:
    variable: str
    rule: str
    codes: tuple[float, ...]
    dropped: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store. Every column is a read-only float64 array; NaN marks an empty cell."""

    schema: tuple[VariableSchema, ...]
    columns: Mapping[str, np.ndarray]
    cleaned: bool = False
    cleaning_log: tuple[DropRecord, ...] = ()

    def __post_init__(self):
        schema = tuple(self.schema)
        check_schema(schema)
        cols = {}
        n = None
        for v in schema:
            if v.name not in self.columns:
                raise DataError([(None, v.name, "column missing")])
            arr = np.array(self.columns[v.name], dtype=np.float64)
            if arr.ndim != 1:
                raise DataError([(None, v.name, "column must be one-dimensional")])
            if n is None:
                n = len(arr)
            elif len(arr) != n:
                raise DataError([(None, v.name, f"length {len(arr)} != {n}")])
            arr.setflags(write=False)
            cols[v.name] = arr
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.schema]

    @property
    def target(self) -> VariableSchema:
        return next(v for v in self.schema if v.role == "target")

    @property
    def predictors(self) -> list[VariableSchema]:
        return [v for v in self.schema if v.role == "predictor"]

    def variable(self, name: str) -> VariableSchema:
        for v in self.schema:
            if v.name == name:
                return v
        raise KeyError(f"unknown column {name!r}")

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise KeyError(f"unknown column {name!r}")
        return self.columns[name]

    @property
    def target_values(self) -> np.ndarray:
        return self.columns[self.target.name]

    def missing_mask(self) -> np.ndarray:
        """Rows holding an empty cell or a missing code in any column."""
        mask = np.zeros(self.n, dtype=bool)
        for v in self.schema:
            col = self.columns[v.name]
            mask |= np.isnan(col)
            if v.missing_codes:
                mask |= np.isin(col, v.missing_codes)
        return mask

    def take(self, index: np.ndarray) -> "Dataset":
        index = np.asarray(index)
        return replace(self, columns={k: c[index] for k, c in self.columns.items()})

    def with_target(self, values: np.ndarray) -> "Dataset":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.n,):
            raise ValueError(f"target vector has shape {values.shape}, expected ({self.n},)")
        cols = dict(self.columns)
        cols[self.target.name] = values
        return replace(self, columns=cols)

    def equals(self, other: "Dataset") -> bool:
        if self.names != other.names or self.n != other.n:
            return False
        return all(np.array_equal(self.columns[k], other.columns[k], equal_nan=True) for k in self.names)


def _parse_cell(text: str, var: VariableSchema) -> float:
    text = text.strip()
    if text == "" or text.upper() == "NA":
        return float("nan")
    value = float(text)
    if var.is_coded and not value.is_integer():
        raise ValueError(f"expected an integer code, got {text!r}")
    return value


def read_csv_text(text: str, schema: Sequence[VariableSchema]) -> Dataset:
    schema = tuple(schema)
    check_schema(schema)
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError([(0, None, "file is empty")]) from None
    missing = [v.name for v in schema if v.name not in header]
    if missing:
        raise DataError([(0, name, "column missing from header") for name in missing])
    pos = {v.name: header.index(v.name) for v in schema}
    values: dict[str, list[float]] = {v.name: [] for v in schema}
    problems: list[tuple[int | None, str | None, str]] = []
    for rowno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        for v in schema:
            j = pos[v.name]
            cell = row[j] if j < len(row) else ""
            try:
                x = _parse_cell(cell, v)
            except ValueError:
                problems.append((rowno, v.name, f"type mismatch for {v.kind} value {cell!r}"))
                x = float("nan")
            else:
                if not v.accepts_raw(x):
                    problems.append((rowno, v.name, f"code {cell.strip()} outside allowed/missing codes"))
            values[v.name].append(x)
    if problems:
        raise DataError(problems)
    return Dataset(schema, {k: np.asarray(vals, dtype=np.float64) for k, vals in values.items()})


def load_csv(path: str | os.PathLike, schema: Sequence[VariableSchema]) -> Dataset:
    """Load a CSV with a header row naming every schema variable.

    Cells holding missing codes or left empty are kept and flagged via
    :meth:`Dataset.missing_mask`; :func:`clean` drops them.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        return read_csv_text(fh.read(), schema)


def format_csv(ds: Dataset) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(ds.names)
    cols = [ds.columns[name] for name in ds.names]
    for i in range(ds.n):
        writer.writerow(["" if np.isnan(c[i]) else format_float(c[i]) for c in cols])
    return out.getvalue()


def write_csv(ds: Dataset, path: str | os.PathLike) -> None:
    atomic_write_text(path, format_csv(ds))


def clean(ds: Dataset) -> Dataset:
    """Complete-case cleaning followed by recoding.

    Rules run in schema order; for each variable empty cells are dropped first,
    then missing codes. The returned dataset carries the per-rule drop counts
    in ``cleaning_log``. Cleaning an already cleaned dataset is a no-op.
    """
    keep = np.ones(ds.n, dtype=bool)
    records = []
    for v in ds.schema:
        col = ds.columns[v.name]
        empty = keep & np.isnan(col)
        records.append(DropRecord(v.name, "empty", (), int(empty.sum())))
        keep &= ~empty
        if v.missing_codes:
            hit = keep & np.isin(col, v.missing_codes)
            records.append(DropRecord(v.name, "missing-codes", tuple(v.missing_codes), int(hit.sum())))
            keep &= ~hit
    if ds.cleaned and keep.all():
        return ds
    cols = {k: c[keep] for k, c in ds.columns.items()}
    if not ds.cleaned:
        for v in ds.schema:
            if v.recode_map:
                col = cols[v.name].copy()
                src = cols[v.name]
                for old, new in v.recode_map.items():
                    col[src == old] = new
                cols[v.name] = col
    for v in ds.schema:
        if v.is_coded:
            bad = ~np.isin(cols[v.name], v.allowed_codes)
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise DataError([(None, v.name, f"code {format_float(cols[v.name][row])} not allowed after recoding")])
    log.info("cleaning kept %d of %d rows", int(keep.sum()), ds.n)
    return Dataset(ds.schema, cols, cleaned=True, cleaning_log=ds.cleaning_log + tuple(records))


def cleaning_log_json(ds: Dataset) -> list[dict]:
    return [
        {"variable": r.variable, "rule": r.rule, "codes": list(r.codes), "dropped": r.dropped}
        for r in ds.cleaning_log
    ]


@dataclass(frozen=True)
class IncomeForms:
    income_b: np.ndarray
    income_c: np.ndarray

    def scatter(self) -> np.ndarray:
        """Rebuild the original target from its binary and positive parts."""
        out = np.zeros(len(self.income_b), dtype=np.float64)
        out[self.income_b == 1] = self.income_c
        return out


def derive_income_forms(ds: Dataset | np.ndarray) -> IncomeForms:
    y = ds.target_values if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    if np.isnan(y).any():
        raise ValueError("target contains empty cells; clean the dataset first")
    if (y < 0).any():
        raise ValueError(f"target has {int((y < 0).sum())} negative values")
    b = (y > 0).astype(np.int64)
    return IncomeForms(income_b=b, income_c=y[y > 0].copy())


def sample_rows(ds: Dataset, n: int, seed: int) -> Dataset:
    """Uniform sample of ``n`` rows without replacement, kept in original row order."""
    if n > ds.n:
        raise ValueError(f"cannot sample {n} rows from {ds.n}")
    if n < 0:
        raise ValueError("sample size must be non-negative")
    idx = derive_rng(seed, "sample_rows").choice(ds.n, size=n, replace=False)
    return ds.take(np.sort(idx))


@dataclass(frozen=True)
class EncodingOptions:
    standardize: bool = True
    categorical: str = "dummy"  # or "numeric"
    variables: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.categorical not in ("dummy", "numeric"):
            raise ValueError(f"unknown categorical coding {self.categorical!r}")


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    matrix: np.ndarray
    names: tuple[str, ...]
    transforms: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    def rows(self, index) -> "DesignMatrix":
        return DesignMatrix(self.matrix[index], self.names, self.transforms)

    def manifest(self) -> dict:
        return {"columns": list(self.names), "transforms": {k: dict(v) for k, v in self.transforms.items()}}


def encode_variable(values: np.ndarray, var: VariableSchema, opts: EncodingOptions):
    """Columns, names and transform record for one predictor."""
    values = np.asarray(values, dtype=np.float64)
    if var.is_coded:
        stray = ~np.isin(values, var.allowed_codes)
        if stray.any():
            raise ValueError(
                f"{var.name}: level {format_float(values[stray][0])} absent from schema codes {list(var.levels)}"
            )
    if var.kind == "continuous" or (var.kind == "categorical" and opts.categorical == "numeric"):
        if opts.standardize and var.kind == "continuous":
            mean = float(values.mean()) if len(values) else 0.0
            sd = float(values.std(ddof=1)) if len(values) > 1 else 0.0
            col = values - mean
            if sd > 0:
                col = col / sd
            col = col - col.mean() if len(col) else col
            return col[:, None], [var.name], {"mean": mean, "sd": sd}
        return values[:, None], [var.name], {}
    levels = var.levels
    cols = [(values == lev).astype(np.float64) for lev in levels[1:]]
    names = [f"{var.name}={lev}" for lev in levels[1:]]
    return np.column_stack(cols), names, {"reference": float(levels[0])}


def design_matrix(ds: Dataset, opts: EncodingOptions | None = None) -> DesignMatrix:
    """Intercept plus encoded predictors.

    Categoricals are dummy coded against their lowest code; binaries become a
    single indicator of the higher code; continuous predictors are optionally
    standardized to mean 0 and sd 1 (the transform is recorded).
    """
    opts = opts or EncodingOptions()
    if opts.variables is None:
        variables = ds.predictors
    else:
        variables = [ds.variable(name) for name in opts.variables]
    blocks = [np.ones((ds.n, 1))]
    names = ["(Intercept)"]
    transforms = {}
    for var in variables:
        col, nm, tr = encode_variable(ds[var.name], var, opts)
        blocks.append(col)
        names.extend(nm)
        if tr:
            transforms[var.name] = tr
    return DesignMatrix(np.hstack(blocks), tuple(names), transforms)


def expected_columns(variables: Iterable[VariableSchema], categorical: str = "dummy") -> int:
    total = 1
    for v in variables:
        if v.kind == "categorical" and categorical == "dummy":
            total += len(v.allowed_codes) - 1
        else:
            total += 1
    return total
