"""Panel ingestion, validation and first-step transforms.

A panel is a set of observations ``Y[i, t]`` indexed by an opaque unit
identifier and an integer period. Everything downstream (weights, forecasts,
evaluation) reads per-unit :class:`Series` slices of a :class:`PanelDataset`.
"""

from __future__ import annotations

import csv
import io
import math
import os
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, TextIO, Union

import numpy as np

__all__ = [
    "PanelError",
    "PanelParseError",
    "PanelValidationError",
    "EstimationError",
    "MuMode",
    "Observation",
    "Series",
    "PanelSchema",
    "PanelDataset",
    "SubjectRecord",
    "load_panel",
    "serialize",
    "pooled_mean",
    "group_means",
    "demean",
    "pooled_ols",
    "residualize_panel",
    "aggregate_value_added",
    "rolling_windows",
]


class PanelError(ValueError):
    """Base class for panel input problems."""


class PanelParseError(PanelError):
    """A CSV row could not be parsed. ``row`` is the 1-based line number."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class PanelValidationError(PanelError):
    """The data parsed but violates a panel invariant."""


class EstimationError(PanelError):
    """A first-step regression could not be computed."""


@dataclass(frozen=True)
class MuMode:
    """How the shrink point for each unit is determined.

    ``kind`` is ``"known"`` (fixed ``value``), ``"pooled"`` (grand mean of all
    observations) or ``"group"`` (mean of the unit's group).
    """

    kind: str = "pooled"
    value: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("known", "pooled", "group"):
            raise ValueError(f"unknown mu mode {self.kind!r}")
        if self.kind == "known":
            if self.value is None or not math.isfinite(self.value):
                raise ValueError("known mu must be a finite number")
        elif self.value is not None:
            raise ValueError(f"mu mode {self.kind!r} takes no value")

    @classmethod
    def known(cls, value: float) -> MuMode:
        return cls("known", float(value))

    @classmethod
    def pooled(cls) -> MuMode:
        return cls("pooled")

    @classmethod
    def group_pooled(cls) -> MuMode:
        return cls("group")


@dataclass(frozen=True)
class Observation:
    unit_id: Any
    period: int
    outcome: float
    covariates: tuple[float, ...] | None = None
    group: Any = None


@dataclass(frozen=True, eq=False)
class Series:
    """One unit's outcomes in period order, with its shrink point ``mu``."""

    unit_id: Any
    values: np.ndarray
    mu: float = 0.0
    periods: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size < 1:
            raise ValueError("a series needs at least one value")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"series {self.unit_id!r} has non-finite values")
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def T(self) -> int:
        return int(self.values.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Series):
            return NotImplemented
        return (
            self.unit_id == other.unit_id
            and self.mu == other.mu
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping for CSV input. Names are matched exactly."""

    unit: str = "unit"
    period: str = "period"
    outcome: str = "outcome"
    covariates: tuple[str, ...] = ()
    group: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "covariates", tuple(self.covariates))
        names = [self.unit, self.period, self.outcome, *self.covariates]
        if self.group is not None:
            names.append(self.group)
        if len(set(names)) != len(names):
            raise ValueError(f"schema maps the same column twice: {names}")


def _unit_key(u: Any) -> tuple[str, Any]:
    # Mixed id types sort by type name first so sorting never raises.
    return (type(u).__name__, u)


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Immutable, validated panel sorted by (unit, period).

    Build with :meth:`from_observations` or :func:`load_panel`.
    """

    units: tuple[Any, ...]
    unit_index: np.ndarray
    periods: np.ndarray
    outcomes: np.ndarray
    covariates: np.ndarray | None = None
    groups: tuple[Any, ...] | None = None
    covariate_names: tuple[str, ...] = ()
    mu_mode: MuMode = field(default_factory=MuMode.pooled)
    _offsets: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    # -- construction -----------------------------------------------------

    @classmethod
    def from_observations(
        cls,
        observations: Iterable[Observation],
        mu_mode: MuMode | None = None,
        covariate_names: Sequence[str] | None = None,
    ) -> PanelDataset:
        obs = list(observations)
        mu_mode = mu_mode or MuMode.pooled()
        unset = object()
        ncov: Any = unset
        for o in obs:
            if not isinstance(o.period, (int, np.integer)) or isinstance(o.period, bool):
                raise PanelValidationError(f"period of ({o.unit_id!r}, {o.period!r}) is not an integer")
            if not math.isfinite(o.outcome):
                raise PanelValidationError(f"non-finite outcome at ({o.unit_id!r}, {o.period})")
            k = None if o.covariates is None else len(o.covariates)
            if ncov is unset:
                ncov = k
            elif k != ncov:
                raise PanelValidationError(
                    f"covariate length mismatch at ({o.unit_id!r}, {o.period}): {k} vs {ncov}"
                )
        if ncov is unset:
            ncov = None
        obs.sort(key=lambda o: (_unit_key(o.unit_id), int(o.period)))
        for a, b in zip(obs, obs[1:]):
            if a.unit_id == b.unit_id and a.period == b.period:
                raise PanelValidationError(f"duplicate observation ({a.unit_id!r}, {a.period})")

        units: list[Any] = []
        idx = np.empty(len(obs), dtype=np.int64)
        unit_groups: list[Any] = []
        for j, o in enumerate(obs):
            if not units or units[-1] != o.unit_id:
                units.append(o.unit_id)
                unit_groups.append(o.group)
            elif o.group != unit_groups[-1]:
                raise PanelValidationError(f"unit {o.unit_id!r} has more than one group label")
            idx[j] = len(units) - 1

        cov = None
        if ncov is not None:
            cov = np.array([o.covariates for o in obs], dtype=float).reshape(len(obs), ncov)
            if not np.all(np.isfinite(cov)):
                raise PanelValidationError("non-finite covariate value")
        names = tuple(covariate_names) if covariate_names is not None else tuple(
            f"x{k + 1}" for k in range(ncov or 0)
        )
        if len(names) != (ncov or 0):
            raise PanelValidationError("covariate_names does not match covariate length")
        has_groups = any(g is not None for g in unit_groups)
        if has_groups and any(g is None for g in unit_groups):
            raise PanelValidationError("group label missing for some units")
        return cls(
            units=tuple(units),
            unit_index=idx,
            periods=np.array([int(o.period) for o in obs], dtype=np.int64),
            outcomes=np.array([float(o.outcome) for o in obs], dtype=float),
            covariates=cov,
            groups=tuple(unit_groups) if has_groups else None,
            covariate_names=names,
            mu_mode=mu_mode,
        )

    def __post_init__(self) -> None:
        for arr in (self.unit_index, self.periods, self.outcomes, self.covariates):
            if arr is not None:
                arr.setflags(write=False)
        if self.mu_mode.kind == "group" and self.groups is None:
            raise PanelValidationError("group-pooled mu requires a group column")
        counts = np.bincount(self.unit_index, minlength=len(self.units))
        offsets = np.concatenate([[0], np.cumsum(counts)])
        object.__setattr__(self, "_offsets", offsets)

    # -- basic properties -------------------------------------------------

    @property
    def n_obs(self) -> int:
        return int(self.outcomes.size)

    @property
    def n_units(self) -> int:
        return len(self.units)

    def unit_slice(self, k: int) -> slice:
        return slice(int(self._offsets[k]), int(self._offsets[k + 1]))

    @property
    def balanced(self) -> bool:
        if self.n_units == 0:
            return True
        first = self.periods[self.unit_slice(0)]
        return all(
            np.array_equal(first, self.periods[self.unit_slice(k)]) for k in range(1, self.n_units)
        )

    @property
    def T_common(self) -> int | None:
        if self.n_units == 0 or not self.balanced:
            return None
        return int(self._offsets[1])

    @property
    def all_periods(self) -> np.ndarray:
        return np.unique(self.periods)

    @property
    def observations(self) -> tuple[Observation, ...]:
        out = []
        for j in range(self.n_obs):
            k = int(self.unit_index[j])
            out.append(
                Observation(
                    unit_id=self.units[k],
                    period=int(self.periods[j]),
                    outcome=float(self.outcomes[j]),
                    covariates=None if self.covariates is None else tuple(map(float, self.covariates[j])),
                    group=None if self.groups is None else self.groups[k],
                )
            )
        return tuple(out)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PanelDataset):
            return NotImplemented
        same_cov = (self.covariates is None and other.covariates is None) or (
            self.covariates is not None
            and other.covariates is not None
            and np.array_equal(self.covariates, other.covariates)
        )
        return (
            self.units == other.units
            and self.groups == other.groups
            and self.covariate_names == other.covariate_names
            and self.mu_mode == other.mu_mode
            and np.array_equal(self.unit_index, other.unit_index)
            and np.array_equal(self.periods, other.periods)
            and np.array_equal(self.outcomes, other.outcomes)
            and same_cov
        )

    __hash__ = None  # type: ignore[assignment]

    # -- derived views ----------------------------------------------------

    def restrict(self, mask: np.ndarray, mu_mode: MuMode | None = None) -> PanelDataset:
        """Subset of observations selected by a boolean mask."""
        mask = np.asarray(mask, dtype=bool)
        keep_units = np.unique(self.unit_index[mask])
        remap = np.full(self.n_units, -1, dtype=np.int64)
        remap[keep_units] = np.arange(keep_units.size)
        return PanelDataset(
            units=tuple(self.units[k] for k in keep_units),
            unit_index=remap[self.unit_index[mask]],
            periods=self.periods[mask].copy(),
            outcomes=self.outcomes[mask].copy(),
            covariates=None if self.covariates is None else self.covariates[mask].copy(),
            groups=None if self.groups is None else tuple(self.groups[k] for k in keep_units),
            covariate_names=self.covariate_names,
            mu_mode=mu_mode or self.mu_mode,
        )

    def with_outcomes(self, outcomes: np.ndarray, mu_mode: MuMode | None = None) -> PanelDataset:
        outcomes = np.asarray(outcomes, dtype=float)
        if outcomes.shape != self.outcomes.shape:
            raise PanelValidationError("replacement outcomes have the wrong length")
        if not np.all(np.isfinite(outcomes)):
            raise PanelValidationError("non-finite replacement outcome")
        return PanelDataset(
            units=self.units,
            unit_index=self.unit_index,
            periods=self.periods,
            outcomes=outcomes.copy(),
            covariates=self.covariates,
            groups=self.groups,
            covariate_names=self.covariate_names,
            mu_mode=mu_mode or self.mu_mode,
        )

    def with_mu_mode(self, mu_mode: MuMode) -> PanelDataset:
        return self.with_outcomes(self.outcomes, mu_mode)

    def unit_values(self, k: int) -> np.ndarray:
        return self.outcomes[self.unit_slice(k)]

    def unit_periods(self, k: int) -> np.ndarray:
        return self.periods[self.unit_slice(k)]

    def mu_by_unit(self) -> np.ndarray:
        """Resolved shrink point for each unit (in ``units`` order)."""
        mode = self.mu_mode
        if mode.kind == "known":
            return np.full(self.n_units, mode.value, dtype=float)
        if mode.kind == "pooled":
            return np.full(self.n_units, pooled_mean(self), dtype=float)
        means = group_means(self)
        return np.array([means[g] for g in self.groups], dtype=float)  # type: ignore[union-attr]

    def series(self) -> list[Series]:
        mus = self.mu_by_unit()
        return [
            Series(u, self.unit_values(k), float(mus[k]), tuple(int(p) for p in self.unit_periods(k)))
            for k, u in enumerate(self.units)
        ]

    def get_series(self, unit_id: Any) -> Series:
        for s in self.series():
            if s.unit_id == unit_id:
                return s
        raise KeyError(unit_id)


# -- CSV I/O ---------------------------------------------------------------

Source = Union[str, "os.PathLike[str]", bytes, TextIO, io.BufferedIOBase]


def _open_text(source: Source) -> tuple[TextIO, bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8"), True
    if isinstance(source, bytes):
        return io.TextIOWrapper(io.BytesIO(source), encoding="utf-8", newline=""), False
    if isinstance(source, io.TextIOBase):
        return source, False  # type: ignore[return-value]
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False  # type: ignore[arg-type]


def _parse_period(text: str, row: int) -> int:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        f = float(text)
    except ValueError:
        raise PanelParseError(f"period {text!r} is not an integer", row) from None
    if not f.is_integer():
        raise PanelParseError(f"period {text!r} is not an integer", row)
    return int(f)


def _parse_real(text: str, what: str, row: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise PanelParseError(f"{what} {text!r} is not a number", row) from None


def load_panel(
    source: Source,
    schema: PanelSchema | None = None,
    mu_mode: MuMode | None = None,
) -> PanelDataset:
    """Read a UTF-8 CSV panel.

    ``source`` may be a path, raw bytes or an open (text or binary) stream.
    Unit and group identifiers are kept as strings.
    """
    schema = schema or PanelSchema()
    stream, owned = _open_text(source)
    try:
        try:
            reader = csv.reader(stream)
            header = next(reader, None)
        except UnicodeDecodeError as exc:
            raise PanelParseError(f"input is not valid UTF-8: {exc}", 1) from None
        if header is None:
            raise PanelParseError("empty input, expected a header row", 1)
        header = [h.strip() for h in header]
        wanted = [schema.unit, schema.period, schema.outcome, *schema.covariates]
        if schema.group is not None:
            wanted.append(schema.group)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise PanelParseError(f"missing column(s) {missing}; header is {header}", 1)
        pos = {c: header.index(c) for c in wanted}
        obs = []
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(header):
                    raise PanelParseError(
                        f"expected {len(header)} fields, found {len(row)}", line
                    )
                unit = row[pos[schema.unit]].strip()
                if unit == "":
                    raise PanelParseError("empty unit identifier", line)
                period = _parse_period(row[pos[schema.period]].strip(), line)
                y = _parse_real(row[pos[schema.outcome]].strip(), "outcome", line)
                if not math.isfinite(y):
                    raise PanelValidationError(f"row {line}: non-finite outcome at ({unit!r}, {period})")
                covs = None
                if schema.covariates:
                    covs = tuple(
                        _parse_real(row[pos[c]].strip(), f"covariate {c}", line) for c in schema.covariates
                    )
                group = row[pos[schema.group]].strip() if schema.group is not None else None
                obs.append(Observation(unit, period, y, covs, group))
        except UnicodeDecodeError as exc:
            raise PanelParseError(f"input is not valid UTF-8: {exc}", reader.line_num + 1) from None
        except csv.Error as exc:
            raise PanelParseError(str(exc), reader.line_num) from None
    finally:
        if owned:
            stream.close()
    return PanelDataset.from_observations(
        obs, mu_mode=mu_mode, covariate_names=schema.covariates if schema.covariates else None
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def serialize(dataset: PanelDataset, schema: PanelSchema | None = None) -> str:
    """CSV text that :func:`load_panel` reads back to an equal dataset."""
    if schema is None:
        schema = PanelSchema(
            covariates=dataset.covariate_names,
            group="group" if dataset.groups is not None else None,
        )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = [schema.unit, schema.period, schema.outcome, *schema.covariates]
    if schema.group is not None:
        header.append(schema.group)
    w.writerow(header)
    for j in range(dataset.n_obs):
        k = int(dataset.unit_index[j])
        row = [dataset.units[k], int(dataset.periods[j]), _fmt(dataset.outcomes[j])]
        if dataset.covariates is not None:
            row.extend(_fmt(x) for x in dataset.covariates[j])
        if schema.group is not None:
            row.append(dataset.groups[k])  # type: ignore[index]
        w.writerow(row)
    return buf.getvalue()


# -- shrink points ---------------------------------------------------------


def group_means(dataset: PanelDataset) -> dict[Any, float]:
    if dataset.n_obs == 0:
        raise ValueError("pooled mean of an empty dataset")
    if dataset.groups is None:
        raise ValueError("dataset has no group labels")
    obs_groups = np.array([dataset.groups[k] for k in dataset.unit_index], dtype=object)
    return {
        g: float(np.mean(dataset.outcomes[obs_groups == g])) for g in dict.fromkeys(dataset.groups)
    }


def pooled_mean(dataset: PanelDataset) -> float | dict[Any, float]:
    """Grand mean of all outcomes, or a per-group map under group-pooled mu."""
    if dataset.n_obs == 0:
        raise ValueError("pooled mean of an empty dataset")
    if dataset.mu_mode.kind == "group":
        return group_means(dataset)
    return float(np.mean(dataset.outcomes))


def demean(dataset: PanelDataset) -> PanelDataset:
    """Subtract the grand mean; the result has known mu 0."""
    mu = float(np.mean(dataset.outcomes))
    return dataset.with_outcomes(dataset.outcomes - mu, MuMode.known(0.0))


# -- first-step residualization -------------------------------------------


def pooled_ols(dataset: PanelDataset) -> np.ndarray:
    """Pooled least squares of outcome on [1, covariates]. Returns (intercept, slopes...)."""
    if dataset.covariates is None:
        raise PanelValidationError("dataset has no covariates")
    X = np.column_stack([np.ones(dataset.n_obs), dataset.covariates])
    if dataset.n_obs < X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        raise EstimationError("design matrix [1, X] is rank deficient")
    coef, *_ = np.linalg.lstsq(X, dataset.outcomes, rcond=None)
    return coef


def residualize_panel(dataset: PanelDataset, beta: Sequence[float] | None = None) -> PanelDataset:
    """Replace outcomes by ``Y - X'beta``.

    Without ``beta`` the slope comes from pooled OLS with an intercept; the
    intercept is removed as well, so the result has known mu 0. With ``beta``
    the residuals use it as given and mu_mode is kept.
    """
    if dataset.covariates is None:
        raise PanelValidationError("residualization needs covariates on every observation")
    if beta is None:
        coef = pooled_ols(dataset)
        X = np.column_stack([np.ones(dataset.n_obs), dataset.covariates])
        return dataset.with_outcomes(dataset.outcomes - X @ coef, MuMode.known(0.0))
    b = np.asarray(beta, dtype=float).reshape(-1)
    if b.size != dataset.covariates.shape[1]:
        raise PanelValidationError(
            f"beta has length {b.size} but there are {dataset.covariates.shape[1]} covariates"
        )
    return dataset.with_outcomes(dataset.outcomes - dataset.covariates @ b)


@dataclass(frozen=True)
class SubjectRecord:
    unit_id: Any
    period: int
    subject: Any
    outcome: float
    covariates: tuple[float, ...] = ()


def aggregate_value_added(
    raw: Iterable[SubjectRecord | tuple] | Mapping[tuple[Any, int], Sequence],
    beta: Sequence[float],
    mu_mode: MuMode | None = None,
) -> PanelDataset:
    """Average subject outcomes and covariates within each (unit, period) cell.

    ``Y[i, t] = mean_j y[i, j, t] - mean_j(X[i, j, t])' beta``.

    ``raw`` is either an iterable of subject records / 5-tuples
    ``(unit, period, subject, outcome, covariates)`` or a mapping from
    ``(unit, period)`` to a sequence of ``(subject, outcome, covariates)``.
    """
    b = np.asarray(beta, dtype=float).reshape(-1)
    cells: dict[tuple[Any, int], list[tuple[float, tuple[float, ...]]]] = {}
    if isinstance(raw, Mapping):
        for key, members in raw.items():
            members = list(members)
            if not members:
                raise PanelValidationError(f"cell {key!r} has no subjects")
            cells[key] = [(float(m[1]), tuple(m[2]) if len(m) > 2 else ()) for m in members]
    else:
        for rec in raw:
            if not isinstance(rec, SubjectRecord):
                rec = SubjectRecord(*rec)
            cells.setdefault((rec.unit_id, int(rec.period)), []).append(
                (float(rec.outcome), tuple(rec.covariates))
            )
    if not cells:
        raise PanelValidationError("no cells to aggregate")
    obs = []
    for (unit, period), members in cells.items():
        y = np.array([m[0] for m in members])
        for m in members:
            if len(m[1]) != b.size:
                raise PanelValidationError(
                    f"cell ({unit!r}, {period}): covariate length {len(m[1])} does not match beta length {b.size}"
                )
        xbar = np.array([m[1] for m in members], dtype=float).reshape(len(members), b.size).mean(axis=0)
        obs.append(Observation(unit, int(period), float(y.mean() - xbar @ b)))
    return PanelDataset.from_observations(obs, mu_mode=mu_mode)


# -- rolling windows -------------------------------------------------------


def rolling_windows(dataset: PanelDataset, window: int) -> list[tuple[int, PanelDataset]]:
    """Balanced windows of ``window`` consecutive periods.

    Each entry is ``(origin, restricted dataset)`` where the origin is the
    period right after the window's last period. Units missing a period in
    the window are dropped from it; windows left with no units are skipped.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if dataset.n_obs == 0:
        return []
    lo, hi = int(dataset.periods.min()), int(dataset.periods.max())
    out = []
    for end in range(lo + window - 1, hi + 1):
        start = end - window + 1
        in_window = (dataset.periods >= start) & (dataset.periods <= end)
        counts = np.bincount(dataset.unit_index[in_window], minlength=dataset.n_units)
        complete = counts == window
        mask = in_window & complete[dataset.unit_index]
        if mask.any():
            out.append((end + 1, dataset.restrict(mask)))
    return out
