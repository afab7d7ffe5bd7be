"""Individual weights on the time-series forecast.

Every rule maps a unit's history (and its shrink point ``mu``) to a weight
``w`` in [0, 1]; the combined forecast is ``w * TS + (1 - w) * mu``.

The rules are written once, vectorized over rows of a 2-D array, so the
Monte Carlo engine and the per-series API share the same arithmetic. A row
is one unit's series ``Y_1..Y_T``. Two information timings exist:

* ``current``: the weight uses ``Y_1..Y_T`` and combines with the mean.
* ``lagged``: the weight uses ``Y_1..Y_{T-1}`` only and combines with the
  last observation ``Y_T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Union

import numpy as np

from .panel_data import PanelDataset, Series

__all__ = [
    "CURRENT",
    "LAGGED",
    "WeightKind",
    "WeightRule",
    "WeightResult",
    "WeightBatch",
    "sigma2_hat_diff",
    "iw_o_weight",
    "zeta_bound_hat",
    "minimax_weight_from_bound",
    "iw_mr_weight",
    "iw_mr2_weight",
    "iw_msfe_is_weight",
    "iw_msfe_oos_weight",
    "oracle_weight",
    "james_stein_weight",
    "js_homogeneous_estimates",
]

CURRENT = "current"
LAGGED = "lagged"
_TIMINGS = (CURRENT, LAGGED)


class WeightKind(str, Enum):
    IW_O = "IW-O"
    IW_MR = "IW-MR"
    IW_MR2 = "IW-MR2"
    IW_MSFE_IS = "IW-MSFE-IS"
    IW_MSFE_OOS = "IW-MSFE-OOS"
    ORACLE = "Oracle"
    JAMES_STEIN = "JamesStein"
    CONSTANT = "Constant"


_ALIASES = {
    "iw-o": WeightKind.IW_O,
    "iw-mr": WeightKind.IW_MR,
    "iw-mr2": WeightKind.IW_MR2,
    "iw-msfe-is": WeightKind.IW_MSFE_IS,
    "iw-msfe-oos": WeightKind.IW_MSFE_OOS,
    "oracle": WeightKind.ORACLE,
    "jamesstein": WeightKind.JAMES_STEIN,
    "james-stein": WeightKind.JAMES_STEIN,
    "js": WeightKind.JAMES_STEIN,
    "constant": WeightKind.CONSTANT,
}

# Rules that depend only on the series; only these carry a timing choice.
_LAGGABLE = {WeightKind.IW_O, WeightKind.IW_MR, WeightKind.ORACLE, WeightKind.CONSTANT}
_MINIMAX = {WeightKind.IW_MR, WeightKind.IW_MR2}


@dataclass(frozen=True)
class WeightResult:
    w: float
    zeta_bound: float | None = None
    sigma2_hat: float | None = None
    clipped: bool = False


@dataclass(frozen=True, eq=False)
class WeightBatch:
    """Row-wise weights for a stack of series."""

    w: np.ndarray
    clipped: np.ndarray
    zeta_bound: np.ndarray | None = None
    sigma2_hat: np.ndarray | None = None

    def result(self, i: int) -> WeightResult:
        return WeightResult(
            w=float(self.w[i]),
            zeta_bound=None if self.zeta_bound is None else float(self.zeta_bound[i]),
            sigma2_hat=None if self.sigma2_hat is None else float(self.sigma2_hat[i]),
            clipped=bool(self.clipped[i]),
        )


@dataclass(frozen=True)
class WeightRule:
    """A weighting method with its parameters.

    ``P`` and ``window`` apply to IW-MSFE-OOS; ``lambda2``/``sigma2`` to
    Oracle and JamesStein; ``c`` to Constant.
    """

    kind: WeightKind
    timing: str = CURRENT
    P: int | None = None
    window: int | None = None
    lambda2: float | None = None
    sigma2: float | None = None
    c: float | None = None

    def __post_init__(self) -> None:
        kind = WeightKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.timing not in _TIMINGS:
            raise ValueError(f"timing must be one of {_TIMINGS}, got {self.timing!r}")
        if self.timing == LAGGED and kind not in _LAGGABLE:
            raise ValueError(f"{kind.value} has no lagged-timing form")
        if kind is WeightKind.IW_MSFE_OOS:
            if self.P is None:
                object.__setattr__(self, "P", 1)
            if int(self.P) != self.P or self.P < 1:
                raise ValueError("P must be an integer >= 1")
            if self.window is not None and (int(self.window) != self.window or self.window < 1):
                raise ValueError("window must be an integer >= 1")
        elif self.P is not None or self.window is not None:
            raise ValueError("P and window only apply to IW-MSFE-OOS")
        if kind is WeightKind.CONSTANT:
            if self.c is None or not (0.0 <= self.c <= 1.0):
                raise ValueError("Constant weight needs c in [0, 1]")
        elif self.c is not None:
            raise ValueError("c only applies to Constant")
        if kind in (WeightKind.ORACLE, WeightKind.JAMES_STEIN):
            if self.lambda2 is not None and not (self.lambda2 >= 0 and math.isfinite(self.lambda2)):
                raise ValueError("lambda2 must be finite and >= 0")
            if self.sigma2 is not None and not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
                raise ValueError("sigma2 must be finite and > 0")
        elif self.lambda2 is not None or self.sigma2 is not None:
            raise ValueError("lambda2/sigma2 only apply to Oracle and JamesStein")

    # -- text form ------------------------------------------------------------

    @classmethod
    def parse(cls, text: str) -> WeightRule:
        """Parse ``kind[:timing][:param=value]...``.

        Examples: ``iw-mr``, ``iw-mr:lagged``, ``iw-msfe-oos:P=2:window=3``,
        ``constant:0``, ``oracle:lambda2=1:sigma2=1``.
        """
        parts = [p.strip() for p in text.strip().split(":")]
        key = parts[0].lower()
        if key not in _ALIASES:
            raise ValueError(f"unknown weight rule {parts[0]!r}; valid kinds: {sorted(set(_ALIASES))}")
        kind = _ALIASES[key]
        kwargs: dict[str, object] = {}
        for p in parts[1:]:
            if p.lower() in _TIMINGS:
                kwargs["timing"] = p.lower()
                continue
            if "=" not in p:
                if kind is WeightKind.CONSTANT and "c" not in kwargs:
                    kwargs["c"] = _num(p, "c")
                    continue
                raise ValueError(f"cannot parse {p!r} in rule {text!r}")
            name, value = (s.strip() for s in p.split("=", 1))
            name_l = name.lower()
            if name_l in ("p", "window"):
                v = _num(value, name)
                if not float(v).is_integer():
                    raise ValueError(f"{name} must be an integer")
                kwargs["P" if name_l == "p" else "window"] = int(v)
            elif name_l in ("lambda2", "sigma2", "c"):
                kwargs[name_l] = _num(value, name)
            elif name_l == "timing":
                kwargs["timing"] = value.lower()
            else:
                raise ValueError(f"unknown parameter {name!r} in rule {text!r}")
        return cls(kind, **kwargs)  # type: ignore[arg-type]

    @property
    def label(self) -> str:
        s = self.kind.value
        if self.kind is WeightKind.CONSTANT:
            s += f"({self.c:g})"
        if self.kind is WeightKind.IW_MSFE_OOS:
            s += f"(P={self.P}" + (f",R={self.window})" if self.window else ")")
        if self.timing == LAGGED:
            s += ":lagged"
        return s

    @property
    def is_minimax(self) -> bool:
        return self.kind in _MINIMAX

    def min_length(self) -> int:
        """Smallest series length the rule accepts."""
        if self.kind in (WeightKind.CONSTANT, WeightKind.ORACLE, WeightKind.JAMES_STEIN):
            return 1
        if self.kind is WeightKind.IW_MSFE_OOS:
            return int(self.P) + 1  # type: ignore[arg-type]
        return 3 if self.timing == LAGGED else 2

    def with_parameters(self, lambda2: float, sigma2: float) -> WeightRule:
        """Fill in missing oracle/JS parameters (used by simulation designs)."""
        if self.kind not in (WeightKind.ORACLE, WeightKind.JAMES_STEIN):
            return self
        return replace(
            self,
            lambda2=lambda2 if self.lambda2 is None else self.lambda2,
            sigma2=sigma2 if self.sigma2 is None else self.sigma2,
        )

    # -- evaluation -----------------------------------------------------------

    def batch(self, Y: np.ndarray, mu: float | np.ndarray = 0.0) -> WeightBatch:
        """Weights for each row of ``Y`` (shape ``(n, T)``)."""
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2:
            raise ValueError("expected a 2-D array of series")
        T = Y.shape[1]
        if T < self.min_length():
            raise ValueError(
                f"{self.label} needs at least {self.min_length()} observations, got {T}"
            )
        mu = np.broadcast_to(np.asarray(mu, dtype=float).reshape(-1, 1), (Y.shape[0], 1))
        k = self.kind
        if k is WeightKind.CONSTANT:
            n = Y.shape[0]
            return WeightBatch(np.full(n, float(self.c)), np.zeros(n, dtype=bool))
        if k in (WeightKind.ORACLE, WeightKind.JAMES_STEIN):
            if self.lambda2 is None or self.sigma2 is None:
                raise ValueError(f"{k.value} needs lambda2 and sigma2")
            eff_T = 1 if self.timing == LAGGED else T
            w = _ratio_weight(self.lambda2, self.sigma2, eff_T)
            n = Y.shape[0]
            return WeightBatch(np.full(n, w), np.zeros(n, dtype=bool))
        # The feasible rules depend on Y - mu only and are scale-free, so each
        # row is rescaled by its largest deviation; squares then cannot
        # underflow or overflow. Variance estimates are scaled back.
        Z = Y - mu
        scale = np.max(np.abs(_history(Z, self.timing)), axis=1, keepdims=True)
        scale[~(scale > 0) | ~np.isfinite(scale)] = 1.0
        Z = Z / scale
        zero = np.zeros_like(mu)
        if k is WeightKind.IW_O:
            b = _iw_o(Z, zero, self.timing)
        elif k is WeightKind.IW_MR:
            z, s2, coincide = _zeta(Z, zero, self.timing)
            b = WeightBatch(_minimax_w(z), coincide, z, s2)
        elif k is WeightKind.IW_MR2:
            b = _iw_mr2(Z, zero)
        elif k is WeightKind.IW_MSFE_IS:
            b = _msfe_is(Z, zero)
        elif k is WeightKind.IW_MSFE_OOS:
            b = _msfe_oos(Z, zero, int(self.P), self.window)  # type: ignore[arg-type]
        else:
            raise AssertionError(k)
        if b.sigma2_hat is not None:
            b = replace(b, sigma2_hat=b.sigma2_hat * scale[:, 0] ** 2)
        return b

    def compute(self, series: Series) -> WeightResult:
        return self.batch(series.values[None, :], series.mu).result(0)


def _num(text: str, name: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"parameter {name} must be a number, got {text!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"parameter {name} must be finite")
    return v


# -- vectorized cores --------------------------------------------------------


def _history(Y: np.ndarray, timing: str) -> np.ndarray:
    return Y[:, :-1] if timing == LAGGED else Y


def _diff_ss(H: np.ndarray) -> np.ndarray:
    return np.sum(np.diff(H, axis=1) ** 2, axis=1)


def _coincide(H: np.ndarray, mu: np.ndarray) -> np.ndarray:
    return np.all(H == mu, axis=1)


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """num/den with 0/0 -> 0 and x/0 -> inf (num, den >= 0)."""
    out = np.zeros_like(num)
    pos = den > 0
    np.divide(num, den, out=out, where=pos)
    out[~pos & (num > 0)] = np.inf
    return out


def _minimax_w(z: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        w = 1.0 - 1.0 / np.sqrt(z + 1.0)
    return np.clip(w, 0.0, 1.0)


def _iw_o(Y: np.ndarray, mu: np.ndarray, timing: str) -> WeightBatch:
    H = _history(Y, timing)
    m = H.shape[1]
    s = np.mean((H - mu) ** 2, axis=1)
    d = _diff_ss(H)
    raw = s - d / (2 * (m - 1))
    num = np.maximum(raw, 0.0)
    den = s if timing == LAGGED else s - d / (2 * m)
    w = np.zeros_like(num)
    ok = (num > 0) & (den > 0)
    np.divide(num, den, out=w, where=ok)
    w[(num > 0) & (den <= 0)] = 1.0
    coincide = _coincide(H, mu)
    clipped = (raw < 0) | (w > 1.0) | coincide
    return WeightBatch(np.clip(w, 0.0, 1.0), clipped, None, d / (2 * (m - 1)))


def _zeta(Y: np.ndarray, mu: np.ndarray, timing: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    H = _history(Y, timing)
    m = H.shape[1]
    num = np.max((H - mu) ** 2, axis=1)
    d = _diff_ss(H)
    s2 = d / (2 * (m - 1))
    den = s2 if timing == LAGGED else s2 / m
    return _safe_ratio(num, den), s2, _coincide(H, mu)


def _iw_mr2(Y: np.ndarray, mu: np.ndarray) -> WeightBatch:
    T = Y.shape[1]
    num = np.max((Y - mu) ** 2, axis=1)
    ss = _centered_ss(Y)
    z = _safe_ratio(num, ss / (T * (T - 1)))
    return WeightBatch(_minimax_w(z), _coincide(Y, mu), z, ss / (T - 1))


def _centered_ss(Y: np.ndarray) -> np.ndarray:
    """Row sums of squared deviations from the row mean.

    Differences from the first column are formed before averaging, so a
    common shift of the row cancels exactly and does not perturb the mean.
    """
    D = Y - Y[:, :1]
    return np.sum((D - D.mean(axis=1, keepdims=True)) ** 2, axis=1)


def _inverse_error_weight(e_ts: np.ndarray, e_pool: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # (1/e_ts) / (1/e_ts + 1/e_pool) == e_pool / (e_ts + e_pool)
    tot = e_ts + e_pool
    w = np.zeros_like(tot)
    np.divide(e_pool, tot, out=w, where=tot > 0)
    return np.clip(w, 0.0, 1.0), tot == 0


def _msfe_is(Y: np.ndarray, mu: np.ndarray) -> WeightBatch:
    sse_ts = _centered_ss(Y)
    sse_pool = np.sum((Y - mu) ** 2, axis=1)
    w, both_zero = _inverse_error_weight(sse_ts, sse_pool)
    return WeightBatch(w, both_zero)


def _msfe_oos(Y: np.ndarray, mu: np.ndarray, P: int, window: int | None) -> WeightBatch:
    T = Y.shape[1]
    # Recursive means are built on differences from the first value so that
    # a common shift of series and mu cancels exactly.
    D = Y - Y[:, :1]
    csum = np.concatenate([np.zeros((Y.shape[0], 1)), np.cumsum(D, axis=1)], axis=1)
    e_ts = np.zeros(Y.shape[0])
    e_pool = np.zeros(Y.shape[0])
    for t in range(T - P, T):  # 0-based index of the target observation
        lo = 0 if window is None else max(0, t - window)
        ts = (csum[:, t] - csum[:, lo]) / (t - lo)
        e_ts += (D[:, t] - ts) ** 2
        e_pool += (Y[:, t] - mu[:, 0]) ** 2
    w, both_zero = _inverse_error_weight(e_ts, e_pool)
    return WeightBatch(w, both_zero)


def _ratio_weight(lambda2: float, sigma2: float, T: int) -> float:
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    if not lambda2 >= 0:
        raise ValueError("lambda2 must be >= 0")
    if T < 1:
        raise ValueError("T must be >= 1")
    return lambda2 / (lambda2 + sigma2 / T)


# -- per-series API ------------------------------------------------------------


def _as_series(series: Series | np.ndarray | list, mu: float | None = None) -> Series:
    if isinstance(series, Series):
        return series if mu is None else Series(series.unit_id, series.values, mu)
    return Series(None, np.asarray(series, dtype=float), 0.0 if mu is None else mu)


SeriesLike = Union[Series, np.ndarray, list]


def sigma2_hat_diff(values: np.ndarray | list) -> float:
    """Sum of squared first differences over 2(m - 1); unbiased for the shock variance."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size < 2:
        raise ValueError("need at least 2 values")
    return float(np.sum(np.diff(v) ** 2) / (2 * (v.size - 1)))


def iw_o_weight(series: SeriesLike, timing: str = CURRENT) -> WeightResult:
    return WeightRule(WeightKind.IW_O, timing).compute(_as_series(series))


def zeta_bound_hat(series: SeriesLike, timing: str = CURRENT) -> float:
    """Heuristic bound on the conditional signal-to-noise ratio.

    Largest squared deviation from mu over an unbiased estimate of the
    noise variance of the forecast being shrunk (sigma^2/T for the
    current timing, sigma^2 for the lagged one).
    """
    s = _as_series(series)
    rule = WeightRule(WeightKind.IW_MR, timing)
    if s.T < rule.min_length():
        raise ValueError(f"need at least {rule.min_length()} observations for {timing} timing")
    z, _, _ = _zeta(s.values[None, :], np.array([[s.mu]]), timing)
    return float(z[0])


def minimax_weight_from_bound(zeta_bound: float) -> float:
    """``1 - 1/sqrt(zeta + 1)``; accepts ``inf``."""
    if math.isnan(zeta_bound) or zeta_bound < 0:
        raise ValueError("bound must be >= 0")
    return float(_minimax_w(np.array([float(zeta_bound)]))[0])


def iw_mr_weight(series: SeriesLike, timing: str = CURRENT) -> WeightResult:
    return WeightRule(WeightKind.IW_MR, timing).compute(_as_series(series))


def iw_mr2_weight(series: SeriesLike) -> WeightResult:
    return WeightRule(WeightKind.IW_MR2).compute(_as_series(series))


def iw_msfe_is_weight(series: SeriesLike) -> WeightResult:
    return WeightRule(WeightKind.IW_MSFE_IS).compute(_as_series(series))


def iw_msfe_oos_weight(series: SeriesLike, P: int = 1, window: int | None = None) -> WeightResult:
    s = _as_series(series)
    if not 1 <= P <= s.T - 1:
        raise ValueError(f"P must be in [1, {s.T - 1}], got {P}")
    return WeightRule(WeightKind.IW_MSFE_OOS, P=P, window=window).compute(s)


def oracle_weight(lambda2: float, sigma2: float, T: int) -> float:
    """lambda2 / (lambda2 + sigma2 / T) with unit-specific parameters."""
    return _ratio_weight(lambda2, sigma2, T)


def james_stein_weight(lambda2: float, sigma2: float, T: int) -> float:
    """Same ratio as the oracle, applied with homogeneous (cross-sectional) parameters."""
    return _ratio_weight(lambda2, sigma2, T)


def js_homogeneous_estimates(dataset: PanelDataset) -> tuple[float, float]:
    """Cross-sectional estimates ``(lambda2_hat, sigma2_hat)`` from a balanced panel.

    sigma2_hat averages the per-unit difference estimator; lambda2_hat is the
    variance of unit means (divisor N - 1) minus sigma2_hat / T, floored at 0.
    """
    if not dataset.balanced:
        raise ValueError("James-Stein estimates need a balanced panel")
    T = dataset.T_common or 0
    if T < 2 or dataset.n_units < 2:
        raise ValueError(f"need T >= 2 and N >= 2, got T={T}, N={dataset.n_units}")
    Y = dataset.outcomes.reshape(dataset.n_units, T)
    sigma2 = float(np.mean(_diff_ss(Y) / (2 * (T - 1))))
    lam = float(np.var(Y.mean(axis=1), ddof=1)) - sigma2 / T
    return max(lam, 0.0), sigma2
