"""Random-effect and shock distributions.

All three families are symmetric about their location. Laplace and double
Pareto draws use inverse-CDF sampling from one uniform per draw, so a given
uniform stream maps to the same variates on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["DistributionSpec", "NORMAL", "LAPLACE", "DOUBLE_PARETO", "PIECEWISE", "GENERALIZED"]

NORMAL = "normal"
LAPLACE = "laplace"
DOUBLE_PARETO = "double-pareto"

# Double Pareto density forms (theta = shape, beta = scale):
#   piecewise:   c * (|x|/b)^(t-1) for |x| < b,  c * (b/|x|)^(t+1) for |x| >= b,  c = t/(4b)
#   generalized: t/(2b) * (1 + |x|/b)^-(t+1)   (a Lomax magnitude with a random sign)
PIECEWISE = "piecewise"
GENERALIZED = "generalized"

_BELOW_ONE = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class DistributionSpec:
    """A symmetric distribution.

    * ``normal``: ``a`` = mean, ``b`` = variance
    * ``laplace``: ``a`` = location, ``b`` = scale (variance ``2 b^2``)
    * ``double-pareto``: ``a`` = shape theta (> 2), ``b`` = scale beta, centered at 0
    """

    kind: str
    a: float
    b: float
    form: str = PIECEWISE

    def __post_init__(self) -> None:
        if self.kind not in (NORMAL, LAPLACE, DOUBLE_PARETO):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("distribution parameters must be finite")
        if self.kind == NORMAL and not self.b > 0:
            raise ValueError("normal variance must be > 0")
        if self.kind == LAPLACE and not self.b > 0:
            raise ValueError("laplace scale must be > 0")
        if self.kind == DOUBLE_PARETO:
            if not self.a > 2:
                raise ValueError("double Pareto shape must be > 2 so the variance exists")
            if not self.b > 0:
                raise ValueError("double Pareto scale must be > 0")
            if self.form not in (PIECEWISE, GENERALIZED):
                raise ValueError(f"unknown double Pareto form {self.form!r}")

    @classmethod
    def normal(cls, mean: float = 0.0, variance: float = 1.0) -> DistributionSpec:
        return cls(NORMAL, float(mean), float(variance))

    @classmethod
    def laplace(cls, location: float = 0.0, scale: float = 1.0) -> DistributionSpec:
        return cls(LAPLACE, float(location), float(scale))

    @classmethod
    def double_pareto(cls, shape: float, scale: float, form: str = PIECEWISE) -> DistributionSpec:
        return cls(DOUBLE_PARETO, float(shape), float(scale), form)

    @classmethod
    def from_dict(cls, d: dict) -> DistributionSpec:
        kind = d["kind"].lower()
        if kind == NORMAL:
            return cls.normal(d.get("mean", 0.0), d.get("variance", 1.0))
        if kind == LAPLACE:
            return cls.laplace(d.get("location", 0.0), d.get("scale", 1.0))
        if kind in (DOUBLE_PARETO, "double_pareto"):
            return cls.double_pareto(d["shape"], d["scale"], d.get("form", PIECEWISE))
        raise ValueError(f"unknown distribution kind {d['kind']!r}")

    def to_dict(self) -> dict:
        if self.kind == NORMAL:
            return {"kind": NORMAL, "mean": self.a, "variance": self.b}
        if self.kind == LAPLACE:
            return {"kind": LAPLACE, "location": self.a, "scale": self.b}
        return {"kind": DOUBLE_PARETO, "shape": self.a, "scale": self.b, "form": self.form}

    # -- moments ---------------------------------------------------------------

    @property
    def center(self) -> float:
        return 0.0 if self.kind == DOUBLE_PARETO else self.a

    @property
    def variance(self) -> float:
        if self.kind == NORMAL:
            return self.b
        if self.kind == LAPLACE:
            return 2.0 * self.b**2
        t, s = self.a, self.b
        if self.form == PIECEWISE:
            return t * t * s * s / (t * t - 4.0)
        return 2.0 * s * s / ((t - 1.0) * (t - 2.0))

    def with_variance(self, variance: float) -> DistributionSpec:
        """Same family and shape, rescaled to the requested variance."""
        if not variance > 0:
            raise ValueError("variance must be > 0")
        if self.kind == NORMAL:
            return DistributionSpec.normal(self.a, variance)
        k = math.sqrt(variance / self.variance)
        return DistributionSpec(self.kind, self.a, self.b * k, self.form)

    # -- quantiles and sampling ----------------------------------------------

    def _abs_quantile(self, q: np.ndarray) -> np.ndarray:
        """Quantile of |X - center| at probability q in [0, 1)."""
        q = np.minimum(q, _BELOW_ONE)
        if self.kind == LAPLACE:
            return -self.b * np.log1p(-q)
        t, s = self.a, self.b
        if self.form == GENERALIZED:
            return s * np.expm1(-np.log1p(-q) / t)
        inner = s * np.power(2.0 * q, 1.0 / t)
        with np.errstate(divide="ignore"):
            outer = s * np.power(2.0 * (1.0 - q), -1.0 / t)
        return np.where(q < 0.5, inner, outer)

    def quantile(self, p: float | np.ndarray) -> np.ndarray | float:
        p_arr = np.asarray(p, dtype=float)
        if np.any((p_arr <= 0) | (p_arr >= 1)):
            raise ValueError("probabilities must lie in (0, 1)")
        if self.kind == NORMAL:
            from statistics import NormalDist

            nd = NormalDist(self.a, math.sqrt(self.b))
            out = np.vectorize(nd.inv_cdf, otypes=[float])(p_arr)
        else:
            mag = self._abs_quantile(np.abs(2.0 * p_arr - 1.0))
            out = self.center + np.sign(p_arr - 0.5) * mag
        return float(out) if np.ndim(p) == 0 else out

    def sample(self, rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
        if self.kind == NORMAL:
            return rng.normal(self.a, math.sqrt(self.b), size)
        u = rng.random(size)
        # F^-1(u): |X| quantile at |2u - 1| with the sign of u - 1/2.
        mag = self._abs_quantile(np.abs(2.0 * u - 1.0))
        return self.center + np.where(u < 0.5, -mag, mag)

    def crow_siddiqui(self) -> float:
        """Population (Q.975 - Q.025) / (Q.75 - Q.25)."""
        q = self.quantile(np.array([0.025, 0.25, 0.75, 0.975]))
        return float((q[3] - q[0]) / (q[2] - q[1]))
