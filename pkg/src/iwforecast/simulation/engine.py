"""Replication engine: draw panels from the random-effects model and score methods.

One replication draws ``A`` from the effect distribution and shocks
``U_1..U_{T+1}``, observes ``Y_t = A + U_t`` for ``t <= T`` and scores each
method's forecast of ``Y_{T+1}``. All methods see the same draws.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..forecast import Method, parse_method
from ..weights import WeightKind, WeightRule
from .distributions import DistributionSpec
from .streams import BLOCK_SIZE, block_rng, block_sizes

__all__ = ["Design", "PointDraws", "MonteCarloConfig", "resolve_methods", "simulate_point", "run_tasks"]


@dataclass(frozen=True)
class Design:
    """A random-effects design.

    ``effect`` is the shape of the effect distribution; draws are centered on
    ``pool`` and rescaled to variance ``lambda2`` when it is given, otherwise
    used as is (plus ``pool``). ``T`` is the number of observed periods.
    ``comparator_lambda2`` replaces the effect variance handed to oracle and
    James-Stein weights, for designs that state a variance different from
    the one the distribution implies.
    """

    effect: DistributionSpec
    shock: DistributionSpec
    T: int
    pool: float = 0.0
    lambda2: float | None = None
    comparator_lambda2: float | None = None

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.lambda2 is not None and not (self.lambda2 >= 0 and math.isfinite(self.lambda2)):
            raise ValueError("lambda2 must be finite and >= 0")

    @property
    def effect_variance(self) -> float:
        return self.effect.variance if self.lambda2 is None else self.lambda2

    @property
    def shock_variance(self) -> float:
        return self.shock.variance

    @property
    def comparator_variance(self) -> float:
        return self.effect_variance if self.comparator_lambda2 is None else self.comparator_lambda2

    def draw(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(A, Y)`` with ``Y`` of shape ``(n, T + 1)``; the last column is the target."""
        x = self.effect.sample(rng, n) - self.effect.center
        if self.lambda2 is not None:
            x = x * math.sqrt(self.lambda2 / self.effect.variance)
        A = self.pool + x
        U = self.shock.sample(rng, (n, self.T + 1)) - self.shock.center
        return A, A[:, None] + U


def resolve_methods(methods: Sequence[Method | str | WeightRule]) -> list[Method]:
    out = [parse_method(m) for m in methods]
    labels = [m.label for m in out]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate methods: {labels}")
    return out


def _sim_rule(m: Method, design: Design) -> WeightRule | None:
    """Weight rule used in simulation; JS and oracle use the design's true parameters."""
    lam = design.comparator_variance
    if m.name == "JS":
        return WeightRule(WeightKind.JAMES_STEIN).with_parameters(lam, design.shock_variance)
    if m.rule is not None:
        return m.rule.with_parameters(lam, design.shock_variance)
    return None


@dataclass(frozen=True, eq=False)
class PointDraws:
    """Per-replication output for one design, in replication order."""

    A: np.ndarray
    sq_errors: dict[str, np.ndarray]
    weights: dict[str, np.ndarray] = field(default_factory=dict)


def _score_block(
    design: Design, methods: Sequence[Method], rng: np.random.Generator, n: int
) -> tuple[np.ndarray, dict[str, np.ndarray], dict[str, np.ndarray]]:
    A, Y = design.draw(rng, n)
    H, target = Y[:, :-1], Y[:, -1]
    mean, last = H.mean(axis=1), H[:, -1]
    errs: dict[str, np.ndarray] = {}
    wts: dict[str, np.ndarray] = {}
    for m in methods:
        ts = last if m.ts_variant == "last" else mean
        if m.name in ("TS", "TS-last"):
            f = ts
        elif m.name == "Pool":
            f = np.full(n, design.pool)
        else:
            rule = _sim_rule(m, design)
            w = rule.batch(H, design.pool).w  # type: ignore[union-attr]
            f = w * ts + (1.0 - w) * design.pool
            wts[m.label] = w
        errs[m.label] = (target - f) ** 2
    return A, errs, wts


def run_tasks(fn: Callable[[int], object], n_tasks: int, workers: int = 1) -> list:
    """Evaluate ``fn(0..n_tasks-1)`` and return results in task order."""
    if workers <= 1 or n_tasks <= 1:
        return [fn(i) for i in range(n_tasks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_tasks)))


def simulate_point(
    design: Design,
    methods: Sequence[Method | str | WeightRule],
    replications: int,
    seed: int,
    stream: str,
    point: int = 0,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> PointDraws:
    """All replications for one design, using common random numbers across methods."""
    ms = resolve_methods(methods)
    for m in ms:
        if design.T < m.min_length():
            raise ValueError(f"{m.label} needs T >= {m.min_length()}, design has T={design.T}")
    sizes = block_sizes(replications, block_size)

    def task(b: int):
        return _score_block(design, ms, block_rng(seed, stream, point, b), sizes[b])

    parts = run_tasks(task, len(sizes), workers)
    A = np.concatenate([p[0] for p in parts])
    errs = {m.label: np.concatenate([p[1][m.label] for p in parts]) for m in ms}
    wts = {k: np.concatenate([p[2][k] for p in parts]) for k in parts[0][2]}
    return PointDraws(A, errs, wts)


@dataclass(frozen=True)
class MonteCarloConfig:
    """Settings for a Monte Carlo scan over a parameter grid.

    ``effect`` and ``shock`` give distribution shapes; at each grid point they
    are rescaled to the point's ``lambda2`` and ``sigma2``.
    """

    replications: int = 100_000
    seed: int = 0
    T: int = 3
    effect: DistributionSpec = field(default_factory=DistributionSpec.normal)
    shock: DistributionSpec = field(default_factory=DistributionSpec.normal)
    pool: float = 0.0
    workers: int = 1
    batches: int = 20
    closed_form: bool = True
    stream: str = "scan"

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def design(self, lambda2: float, sigma2: float) -> Design:
        return Design(self.effect, self.shock.with_variance(sigma2), self.T, self.pool, lambda2)
