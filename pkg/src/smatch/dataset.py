"""Units, treatment arms, CSV ingestion and covariate standardization."""

from __future__ import annotations

import csv
import itertools
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from smatch.errors import InputError

SD_CONVENTION = "population"


@dataclass(frozen=True, order=True)
class TreatmentId:
    index: int
    label: str

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class Unit:
    id: str
    treatment: TreatmentId
    covariates: tuple
    response: Optional[float] = None


@dataclass(frozen=True)
class ScalingParams:
    """Per-covariate location and scale used by :func:`standardize`."""

    mean: np.ndarray
    sd: np.ndarray
    covariate_names: tuple
    sd_convention: str = SD_CONVENTION

    def __post_init__(self):
        if np.any(~(self.sd > 0)):
            raise InputError("standard deviations must be strictly positive")

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.sd

    def invert(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.sd + self.mean

    def to_dict(self) -> dict:
        return {
            "covariates": list(self.covariate_names),
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "sd_convention": self.sd_convention,
        }


LevelRef = Union[int, str, TreatmentId]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable collection of units observed under k >= 2 treatments.

    Stored column-wise: ``treatment[i]`` is the level index of unit ``i`` and
    missing responses are ``nan``.
    """

    ids: tuple
    treatment: np.ndarray
    covariates: np.ndarray
    responses: np.ndarray
    levels: tuple
    covariate_names: tuple
    scaling: Optional[ScalingParams] = field(default=None, repr=False)

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim != 2:
            raise InputError("covariates must be a 2-d array (n, p)")
        n, p = X.shape
        t = np.asarray(self.treatment)
        if t.shape != (n,) or len(self.ids) != n:
            raise InputError("ids, treatment and covariates disagree in length")
        if not np.issubdtype(t.dtype, np.integer):
            raise InputError("treatment must hold integer level indices")
        r = np.asarray(self.responses, dtype=float)
        if r.shape != (n,):
            raise InputError("responses must have one entry per unit")
        if len(self.covariate_names) != p:
            raise InputError("covariate_names length must equal p")
        levels = tuple(self.levels)
        k = len(levels)
        if k < 2:
            raise InputError("fewer than 2 treatment levels")
        for i, lev in enumerate(levels):
            if not isinstance(lev, TreatmentId) or lev.index != i:
                raise InputError("levels must be TreatmentIds indexed 0..k-1 in order")
        if len({lev.label for lev in levels}) != k:
            raise InputError("treatment labels must be unique")
        if not np.all(np.isfinite(X)):
            bad = int(np.argwhere(~np.isfinite(X))[0][0])
            raise InputError(f"unit {self.ids[bad]!r} has a non-finite covariate")
        if n and (t.min() < 0 or t.max() >= k):
            raise InputError("treatment index out of range")
        counts = np.bincount(t, minlength=k)
        for lev, c in zip(levels, counts):
            if c == 0:
                raise InputError(f"treatment arm {lev.label!r} is empty")
        ids = tuple(str(i) for i in self.ids)
        if len(set(ids)) != n:
            seen = set()
            for i in ids:
                if i in seen:
                    raise InputError(f"duplicate id {i!r}")
                seen.add(i)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "treatment", _readonly(t.astype(np.int64)))
        object.__setattr__(self, "covariates", _readonly(X))
        object.__setattr__(self, "responses", _readonly(r))

    @classmethod
    def from_arrays(
        cls,
        covariates,
        treatment: Sequence,
        responses=None,
        ids: Optional[Sequence] = None,
        levels: Optional[Sequence[str]] = None,
        covariate_names: Optional[Sequence[str]] = None,
    ) -> "Dataset":
        """Build a Dataset from raw labels or integer codes.

        ``treatment`` may hold labels (mapped through ``levels``, or
        first-appearance order when ``levels`` is None) or integer indices
        when ``levels`` is given and the entries are ints.
        """
        X = np.asarray(covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n, p = X.shape
        treatment = list(treatment)
        if levels is None:
            labels = []
            for t in treatment:
                if str(t) not in labels:
                    labels.append(str(t))
        else:
            labels = [str(lev) for lev in levels]
        index = {lab: i for i, lab in enumerate(labels)}
        codes = np.empty(n, dtype=np.int64)
        for i, t in enumerate(treatment):
            if isinstance(t, (int, np.integer)) and levels is not None and str(t) not in index:
                codes[i] = int(t)
            else:
                try:
                    codes[i] = index[str(t)]
                except KeyError:
                    raise InputError(f"treatment {t!r} not among levels {labels}") from None
        if responses is None:
            r = np.full(n, np.nan)
        else:
            r = np.array([np.nan if v is None else float(v) for v in responses], dtype=float)
        if ids is None:
            width = len(str(max(n - 1, 0)))
            ids = [f"u{i:0{width}d}" for i in range(n)]
        if covariate_names is None:
            covariate_names = [f"x{j + 1}" for j in range(p)]
        return cls(
            ids=tuple(ids),
            treatment=codes,
            covariates=X,
            responses=r,
            levels=tuple(TreatmentId(i, lab) for i, lab in enumerate(labels)),
            covariate_names=tuple(covariate_names),
        )

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def k(self) -> int:
        return len(self.levels)

    @cached_property
    def _id_index(self) -> dict:
        return {uid: i for i, uid in enumerate(self.ids)}

    def index_of(self, uid: str) -> int:
        try:
            return self._id_index[uid]
        except KeyError:
            raise InputError(f"unknown unit id {uid!r}") from None

    def level(self, ref: LevelRef) -> TreatmentId:
        """Resolve an index, label or TreatmentId to this dataset's TreatmentId."""
        if isinstance(ref, TreatmentId):
            ref = ref.index
        if isinstance(ref, (int, np.integer)) and not isinstance(ref, bool):
            if 0 <= ref < self.k:
                return self.levels[int(ref)]
            raise InputError(f"treatment index {ref} out of range 0..{self.k - 1}")
        for lev in self.levels:
            if lev.label == str(ref):
                return lev
        raise InputError(f"unknown treatment level {ref!r}")

    def arm_indices(self, ref: LevelRef) -> np.ndarray:
        return np.flatnonzero(self.treatment == self.level(ref).index)

    def arm_sizes(self) -> np.ndarray:
        return np.bincount(self.treatment, minlength=self.k)

    def arms(self) -> dict:
        """Map each TreatmentId to the list of its units' ids."""
        return {lev: [self.ids[i] for i in self.arm_indices(lev)] for lev in self.levels}

    @property
    def units(self) -> list:
        out = []
        for i, uid in enumerate(self.ids):
            r = self.responses[i]
            out.append(
                Unit(
                    id=uid,
                    treatment=self.levels[self.treatment[i]],
                    covariates=tuple(float(v) for v in self.covariates[i]),
                    response=None if math.isnan(r) else float(r),
                )
            )
        return out

    def with_covariates(self, X: np.ndarray, scaling: Optional[ScalingParams] = None) -> "Dataset":
        return Dataset(
            ids=self.ids,
            treatment=self.treatment,
            covariates=X,
            responses=self.responses,
            levels=self.levels,
            covariate_names=self.covariate_names,
            scaling=scaling,
        )

    def with_responses(self, r: np.ndarray) -> "Dataset":
        return Dataset(
            ids=self.ids,
            treatment=self.treatment,
            covariates=self.covariates,
            responses=r,
            levels=self.levels,
            covariate_names=self.covariate_names,
            scaling=self.scaling,
        )


@dataclass(frozen=True)
class CsvSchema:
    treatment_col: str
    covariate_cols: tuple
    response_col: Optional[str] = None
    id_col: Optional[str] = None
    levels: Optional[tuple] = None


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise InputError(f"row {row}, column {col!r}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(v):
        raise InputError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return v


def load_csv(
    path: Union[str, os.PathLike],
    treatment_col: Optional[str] = None,
    covariate_cols: Optional[Iterable[str]] = None,
    response_col: Optional[str] = None,
    id_col: Optional[str] = None,
    levels: Optional[Sequence[str]] = None,
    schema: Optional[CsvSchema] = None,
) -> Dataset:
    """Read a comma-separated UTF-8 file with a header row.

    Rows are numbered from 1 starting at the first data row. Missing
    covariates are rejected; an empty response cell is recorded as missing.
    Without ``id_col`` the ids are the data row numbers. Leading lines that
    start with ``#`` (a metadata block) are skipped.
    """
    if schema is None:
        if treatment_col is None or not covariate_cols:
            raise InputError("schema needs a treatment column and at least one covariate column")
        schema = CsvSchema(
            treatment_col=treatment_col,
            covariate_cols=tuple(covariate_cols),
            response_col=response_col,
            id_col=id_col,
            levels=tuple(levels) if levels is not None else None,
        )
    if not os.path.isfile(path):
        raise InputError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(itertools.dropwhile(lambda line: line.startswith("#"), fh))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        needed = [schema.treatment_col, *schema.covariate_cols]
        if schema.response_col:
            needed.append(schema.response_col)
        if schema.id_col:
            needed.append(schema.id_col)
        missing = [c for c in needed if c not in header]
        if missing:
            raise InputError(f"{path}: missing column(s) {missing}")
        pos = {c: header.index(c) for c in needed}
        ids, treat, X, resp = [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise InputError(f"row {row_no}: expected {len(header)} fields, got {len(row)}")
            label = row[pos[schema.treatment_col]].strip()
            if not label:
                raise InputError(f"row {row_no}, column {schema.treatment_col!r}: missing treatment")
            xs = []
            for c in schema.covariate_cols:
                cell = row[pos[c]].strip()
                if not cell:
                    raise InputError(f"row {row_no}, column {c!r}: missing covariate value")
                xs.append(_parse_float(cell, row_no, c))
            if schema.response_col:
                cell = row[pos[schema.response_col]].strip()
                resp.append(_parse_float(cell, row_no, schema.response_col) if cell else None)
            ids.append(row[pos[schema.id_col]].strip() if schema.id_col else str(row_no))
            treat.append(label)
            X.append(xs)
    if not ids:
        raise InputError(f"{path}: no data rows")
    found = list(dict.fromkeys(treat))
    if schema.levels is not None:
        unknown = [t for t in found if t not in schema.levels]
        if unknown:
            raise InputError(f"treatment value(s) {unknown} not in the supplied level order")
        order = list(schema.levels)
    else:
        order = found
    if len(order) < 2:
        raise InputError("fewer than 2 treatment levels")
    return Dataset.from_arrays(
        np.array(X, dtype=float).reshape(len(ids), len(schema.covariate_cols)),
        treat,
        responses=resp if schema.response_col else None,
        ids=ids,
        levels=order,
        covariate_names=schema.covariate_cols,
    )


def standardize(d: Dataset) -> tuple:
    """Center and scale every covariate over the pooled sample.

    Uses the population standard deviation (divide by n). Returns the new
    Dataset and the ScalingParams needed to invert the map.
    """
    X = d.covariates
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=0)
    for j, name in enumerate(d.covariate_names):
        if not sd[j] > 1e-12 * max(1.0, abs(mean[j])):
            raise InputError(f"covariate {name!r} is constant; cannot standardize")
    params = ScalingParams(mean=mean, sd=sd, covariate_names=d.covariate_names)
    return d.with_covariates(params.apply(X), scaling=params), params


def unstandardize(d: Dataset, params: ScalingParams) -> Dataset:
    return d.with_covariates(params.invert(d.covariates))
