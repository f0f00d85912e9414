"""Datasets and CSV round-tripping.

An :class:`ObservationalDataset` is the unit every fitting and estimation
routine consumes: an ``(n, p)`` covariate matrix, a binary treatment vector
and an outcome vector, all float64 and frozen read-only after construction.
:class:`CounterfactualDataset` extends it with both potential outcomes and
the true propensity, which only a simulator can know.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import (
    CsvFormatError,
    DataError,
    DegenerateArmError,
    MissingValueError,
    NonBinaryTreatmentError,
)

_MISSING_TOKENS = {"", "na", "nan", "null", "none", "."}

# Formatting with 17 significant digits makes float64 -> text -> float64 exact.
_FLOAT_FMT = "%.17g"


def _freeze(arr: NDArray[np.float64]) -> NDArray[np.float64]:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out is arr and arr.flags.writeable:
        out = arr.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class ObservationalDataset:
    """Covariates, binary treatment and observed outcome for n subjects."""

    X: NDArray[np.float64]
    A: NDArray[np.float64]
    Y: NDArray[np.float64]
    covariate_names: tuple[str, ...] = ()
    treatment_name: str = "a"
    outcome_name: str = "y"

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        A = np.asarray(self.A, dtype=np.float64).ravel()
        Y = np.asarray(self.Y, dtype=np.float64).ravel()
        if X.shape[0] != A.shape[0] or A.shape[0] != Y.shape[0]:
            raise DataError(
                f"inconsistent lengths: X has {X.shape[0]} rows, "
                f"A has {A.shape[0]}, Y has {Y.shape[0]}"
            )
        names = tuple(self.covariate_names)
        if not names:
            names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError(
                f"{len(names)} covariate names for {X.shape[1]} columns"
            )
        object.__setattr__(self, "X", _freeze(X))
        object.__setattr__(self, "A", _freeze(A))
        object.__setattr__(self, "Y", _freeze(Y))
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.A == 1.0))

    @property
    def n_control(self) -> int:
        return int(np.sum(self.A == 0.0))

    def replace_rows(self, idx: NDArray[np.intp]) -> "ObservationalDataset":
        """Dataset made of the given rows (with repeats), e.g. a bootstrap draw."""
        return ObservationalDataset(
            X=self.X[idx],
            A=self.A[idx],
            Y=self.Y[idx],
            covariate_names=self.covariate_names,
            treatment_name=self.treatment_name,
            outcome_name=self.outcome_name,
        )


@dataclass(frozen=True, eq=False)
class CounterfactualDataset(ObservationalDataset):
    """Simulated dataset that also carries both potential outcomes and the
    true propensity score, so population estimands can be checked exactly."""

    y1: NDArray[np.float64] = field(default_factory=lambda: np.empty(0))
    y0: NDArray[np.float64] = field(default_factory=lambda: np.empty(0))
    pi_true: NDArray[np.float64] = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        super().__post_init__()
        y1 = np.asarray(self.y1, dtype=np.float64).ravel()
        y0 = np.asarray(self.y0, dtype=np.float64).ravel()
        pi = np.asarray(self.pi_true, dtype=np.float64).ravel()
        n = self.X.shape[0]
        if y1.shape[0] != n or y0.shape[0] != n or pi.shape[0] != n:
            raise DataError("potential outcome arrays must have length n")
        if np.any(pi <= 0.0) or np.any(pi >= 1.0):
            raise DataError("true propensity must lie strictly in (0, 1)")
        observed = np.where(self.A == 1.0, y1, y0)
        if not np.array_equal(observed, self.Y):
            raise DataError("Y must equal the potential outcome of the arm taken")
        object.__setattr__(self, "y1", _freeze(y1))
        object.__setattr__(self, "y0", _freeze(y0))
        object.__setattr__(self, "pi_true", _freeze(pi))

    def observed(self) -> ObservationalDataset:
        """Strip the counterfactual columns, keeping only what an analyst sees."""
        return ObservationalDataset(
            X=self.X,
            A=self.A,
            Y=self.Y,
            covariate_names=self.covariate_names,
            treatment_name=self.treatment_name,
            outcome_name=self.outcome_name,
        )


def validate(ds: ObservationalDataset) -> list[str]:
    """Return a list of human-readable violations (empty when the dataset is
    usable). Checks finiteness, binary treatment, minimum arm sizes and the
    n >= p + 2 sample size floor."""
    problems: list[str] = []
    for name, arr in (("covariates", ds.X), (ds.treatment_name, ds.A), (ds.outcome_name, ds.Y)):
        bad = ~np.isfinite(arr)
        if np.any(bad):
            rows = np.unique(np.nonzero(bad)[0])[:5] + 1
            listed = ", ".join(str(int(r)) for r in rows)
            problems.append(f"non-finite values in {name} (rows {listed}, ...)")
    a_vals = np.unique(ds.A[np.isfinite(ds.A)])
    extra = [v for v in a_vals if v not in (0.0, 1.0)]
    if extra:
        problems.append(
            f"treatment column {ds.treatment_name!r} contains values other than 0/1: "
            + ", ".join(_FLOAT_FMT % v for v in extra[:5])
        )
    else:
        if ds.n_treated < 2:
            problems.append(f"treated arm has {ds.n_treated} observations (need >= 2)")
        if ds.n_control < 2:
            problems.append(f"control arm has {ds.n_control} observations (need >= 2)")
    if ds.n < ds.p + 2:
        problems.append(f"n = {ds.n} is below the floor p + 2 = {ds.p + 2}")
    return problems


def _raise_for_violations(ds: ObservationalDataset) -> None:
    problems = validate(ds)
    if not problems:
        return
    msg = "; ".join(problems)
    if any("other than 0/1" in p for p in problems):
        raise NonBinaryTreatmentError(msg)
    if any("arm has" in p for p in problems):
        raise DegenerateArmError(msg)
    raise DataError(msg)


def _parse_cell(token: str, row: int, column: str) -> float:
    stripped = token.strip()
    if stripped.lower() in _MISSING_TOKENS:
        raise MissingValueError(f"missing value at data row {row}, column {column!r}")
    try:
        value = float(stripped)
    except ValueError:
        raise MissingValueError(
            f"cannot parse {token!r} at data row {row}, column {column!r}"
        ) from None
    if not math.isfinite(value):
        raise MissingValueError(f"non-finite value at data row {row}, column {column!r}")
    return value


def load_csv(
    path: str | os.PathLike,
    treatment: str = "a",
    outcome: str = "y",
    covariates: Sequence[str] | None = None,
) -> ObservationalDataset:
    """Read a headered CSV into a validated :class:`ObservationalDataset`.

    ``covariates`` restricts (and orders) the covariate columns; by default
    every column other than the treatment and outcome is used, in file order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise CsvFormatError(f"{path}: duplicate column names in header")
        for required in (treatment, outcome):
            if required not in header:
                raise CsvFormatError(
                    f"{path}: column {required!r} not found (header: {header})"
                )
        if covariates is None:
            cov_names = [h for h in header if h not in (treatment, outcome)]
        else:
            cov_names = list(covariates)
            for c in cov_names:
                if c not in header:
                    raise CsvFormatError(f"{path}: covariate column {c!r} not found")
        col_index = {h: i for i, h in enumerate(header)}
        rows_x: list[list[float]] = []
        rows_a: list[float] = []
        rows_y: list[float] = []
        for r, record in enumerate(reader, start=1):
            if len(record) != len(header):
                raise CsvFormatError(
                    f"{path}: data row {r} has {len(record)} fields, expected {len(header)}"
                )
            rows_x.append([_parse_cell(record[col_index[c]], r, c) for c in cov_names])
            rows_a.append(_parse_cell(record[col_index[treatment]], r, treatment))
            rows_y.append(_parse_cell(record[col_index[outcome]], r, outcome))
    if not rows_a:
        raise CsvFormatError(f"{path}: no data rows")
    ds = ObservationalDataset(
        X=np.asarray(rows_x, dtype=np.float64).reshape(len(rows_a), len(cov_names)),
        A=np.asarray(rows_a),
        Y=np.asarray(rows_y),
        covariate_names=tuple(cov_names),
        treatment_name=treatment,
        outcome_name=outcome,
    )
    _raise_for_violations(ds)
    return ds


def save_csv(ds: ObservationalDataset, path: str | os.PathLike) -> None:
    """Write the dataset with covariates first, then treatment, then outcome.

    Floats are written with 17 significant digits so a load/save/load cycle
    reproduces every bit.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.covariate_names) + [ds.treatment_name, ds.outcome_name])
        for i in range(ds.n):
            row = [_FLOAT_FMT % v for v in ds.X[i]]
            row.append(_FLOAT_FMT % ds.A[i])
            row.append(_FLOAT_FMT % ds.Y[i])
            writer.writerow(row)
