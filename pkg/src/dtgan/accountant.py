"""Renyi-DP accounting for the two DTGAN training variants.

All privacy costs are in nats. A curve maps each integer Renyi order to the
cost at that order; curves compose by pointwise addition and convert to
(epsilon, delta)-DP by minimising over the order grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

DEFAULT_ORDERS: tuple[int, ...] = tuple(range(2, 65)) + (128, 256, 512)


class BudgetUnreachable(ValueError):
    """Raised when no noise multiplier in the search range meets the budget."""


@dataclass(frozen=True)
class OrderGrid:
    orders: tuple[int, ...] = DEFAULT_ORDERS

    def __post_init__(self):
        orders = tuple(int(o) for o in self.orders)
        if not orders:
            raise ValueError("order grid must be non-empty")
        if orders[0] < 2:
            raise ValueError("Renyi orders must be >= 2")
        if any(b <= a for a, b in zip(orders, orders[1:])):
            raise ValueError("orders must be strictly increasing")
        object.__setattr__(self, "orders", orders)

    def __len__(self):
        return len(self.orders)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.orders, dtype=np.float64)


@dataclass(frozen=True)
class RdpCurve:
    """Cost per order; entries may be +inf once a spend saturates."""

    grid: OrderGrid
    epsilons: tuple[float, ...]

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if len(eps) != len(self.grid):
            raise ValueError("curve length does not match its order grid")
        if any(math.isnan(e) or e < 0 for e in eps):
            raise ValueError("RDP costs must be non-negative")
        object.__setattr__(self, "epsilons", eps)

    @classmethod
    def zeros(cls, grid: OrderGrid | None = None) -> "RdpCurve":
        grid = grid or OrderGrid()
        return cls(grid, (0.0,) * len(grid))

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray],
                      grid: OrderGrid | None = None) -> "RdpCurve":
        grid = grid or OrderGrid()
        return cls(grid, tuple(np.asarray(fn(grid.as_array()), dtype=np.float64)))

    def __getitem__(self, order: int) -> float:
        return self.epsilons[self.grid.orders.index(int(order))]

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.grid.orders, self.epsilons))

    def scale(self, k: float) -> "RdpCurve":
        return RdpCurve(self.grid, tuple(k * e for e in self.epsilons))


@dataclass(frozen=True)
class DpBudget:
    epsilon: float
    delta: float = 1e-5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class MechanismSpec:
    """One sanitized update: ``per_update_compositions`` Gaussian mechanisms
    of the given sensitivity, run on a subsample of rate ``subsample_rate``."""

    sigma: float
    per_update_compositions: int
    subsample_rate: float
    sensitivity: float = 2.0

    def __post_init__(self):
        _check_positive(sigma=self.sigma, sensitivity=self.sensitivity)
        if self.per_update_compositions < 1:
            raise ValueError("per_update_compositions must be >= 1")
        if not 0 < self.subsample_rate <= 1:
            raise ValueError("subsample_rate must lie in (0, 1]")

    def update_cost(self, orders) -> np.ndarray:
        """Unamplified per-update cost at (possibly non-grid) integer orders."""
        orders = np.asarray(orders, dtype=np.float64)
        return self.per_update_compositions * gaussian_rdp(self.sigma, self.sensitivity, orders)


def _check_positive(**values):
    for name, v in values.items():
        if not (np.all(np.isfinite(v)) and np.all(np.asarray(v) > 0)):
            raise ValueError(f"{name} must be finite and positive, got {v!r}")


def gaussian_rdp(sigma, sensitivity, order):
    """RDP of the Gaussian mechanism: order * sensitivity**2 / (2 sigma**2)."""
    _check_positive(sigma=sigma, sensitivity=sensitivity)
    order_arr = np.asarray(order, dtype=np.float64)
    if not np.all(np.isfinite(order_arr)) or np.any(order_arr < 2):
        raise ValueError("Renyi order must be finite and >= 2")
    out = order_arr * sensitivity**2 / (2.0 * sigma**2)
    return float(out) if out.ndim == 0 else out


def compose(curves: Sequence[RdpCurve]) -> RdpCurve:
    """Pointwise sum of curves defined on the same grid."""
    if not curves:
        raise ValueError("nothing to compose")
    grid = curves[0].grid
    for c in curves[1:]:
        if c.grid != grid:
            raise ValueError("cannot compose curves on different order grids")
    total = np.sum([c.epsilons for c in curves], axis=0)
    return RdpCurve(grid, tuple(total))


def _log_expm1(x: float) -> float:
    if x > 30:
        return x + math.log1p(-math.exp(-x))
    return math.log(math.expm1(x))


def subsample_amplify(base: Callable[[np.ndarray], np.ndarray], gamma: float, order: int) -> float:
    """Upper bound on the RDP of ``base`` run on a without-replacement subsample.

    ``base`` maps an array of integer orders to costs and must be a Gaussian
    mechanism: its cost at order infinity is unbounded, so every inner
    ``min{2, (e^eps(inf) - 1)^j}`` factor is 2. Evaluated in log space.
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    order = int(order)
    if order < 2:
        raise ValueError("order must be >= 2")
    js = np.arange(2, order + 1, dtype=np.float64)
    eps = np.asarray(base(js), dtype=np.float64)
    if np.any(np.isnan(eps)) or np.any(eps < 0):
        raise ValueError("base mechanism returned an invalid cost")
    if not np.isfinite(eps[0]):
        return math.inf
    log_gamma = math.log(gamma)
    lam = float(order)

    def log_binom(j):
        return gammaln(lam + 1) - gammaln(j + 1) - gammaln(lam - j + 1)

    eps2 = float(eps[0])
    # min{4(e^eps2 - 1), 2 e^eps2} in log space
    log_min2 = min(math.log(4.0) + _log_expm1(eps2) if eps2 > 0 else -math.inf,
                   math.log(2.0) + eps2)
    terms = [2 * log_gamma + float(log_binom(2.0)) + log_min2]
    if order >= 3:
        j = js[1:]
        with np.errstate(over="ignore", invalid="ignore"):
            t = j * log_gamma + log_binom(j) + (j - 1) * eps[1:] + math.log(2.0)
        terms.extend(t.tolist())
    terms = np.asarray(terms)
    if np.any(np.isposinf(terms)):
        return math.inf
    top = terms.max()
    if top == -math.inf:
        return 0.0
    if top < 0:
        # log(1 + s) with s < len(terms); log1p keeps tiny costs exact.
        log_total = math.log1p(float(np.exp(terms).sum()))
    else:
        log_total = top + math.log(math.exp(-top) + float(np.exp(terms - top).sum()))
    return log_total / (lam - 1)


def amplified_curve(spec: MechanismSpec, grid: OrderGrid | None = None) -> RdpCurve:
    """Per-update cost of ``spec`` after subsampling amplification."""
    grid = grid or OrderGrid()
    if spec.subsample_rate == 1.0:
        return RdpCurve.from_function(spec.update_cost, grid)
    return RdpCurve(grid, tuple(subsample_amplify(spec.update_cost, spec.subsample_rate, o)
                                for o in grid.orders))


def to_dp(curve: RdpCurve, delta: float) -> tuple[float, int]:
    """Convert to (epsilon, delta)-DP; returns epsilon and the minimising order."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    orders = curve.grid.as_array()
    eps = np.asarray(curve.epsilons) + math.log(1.0 / delta) / (orders - 1)
    best = int(np.argmin(eps))  # argmin returns the first, i.e. smallest order, on ties
    return float(eps[best]), curve.grid.orders[best]


def discriminator_update_cost(batch_size: int, sigma: float, grid: OrderGrid | None = None) -> RdpCurve:
    """B per-sample Gaussian mechanisms with sensitivity 2C, C = 1: 2 B order / sigma^2."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return RdpCurve.from_function(lambda o: batch_size * gaussian_rdp(sigma, 2.0, o), grid)


def generator_update_cost(batch_size: int, sigma: float, grid: OrderGrid | None = None,
                          n_losses: int = 3) -> RdpCurve:
    """Each of ``n_losses`` sanitized loss gradients costs a discriminator update."""
    return discriminator_update_cost(batch_size, sigma, grid).scale(n_losses)


@dataclass
class PrivacyLedger:
    """Append-only record of identical sanitized updates.

    Every update costs the same amplified curve, so the spend after ``t``
    updates is ``t`` times that curve.
    """

    spec: MechanismSpec
    delta: float = 1e-5
    grid: OrderGrid = field(default_factory=OrderGrid)
    steps: int = 0
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.step_curve = amplified_curve(self.spec, self.grid)

    def curve_after(self, steps: int) -> RdpCurve:
        with np.errstate(over="ignore", invalid="ignore"):
            eps = np.asarray(self.step_curve.epsilons) * steps
        eps[np.isnan(eps)] = 0.0  # 0 * inf
        return RdpCurve(self.grid, tuple(eps))

    def epsilon_after(self, steps: int) -> tuple[float, int | None]:
        if steps == 0:
            return 0.0, None
        return to_dp(self.curve_after(steps), self.delta)

    @property
    def curve(self) -> RdpCurve:
        return self.curve_after(self.steps)

    @property
    def epsilon(self) -> float:
        return self.epsilon_after(self.steps)[0]

    def spend(self, n: int = 1) -> float:
        for _ in range(n):
            self.steps += 1
            self.history.append(self.epsilon_after(self.steps)[0])
        return self.epsilon

    def transcript(self, **extra) -> dict:
        eps, order = self.epsilon_after(self.steps)
        out = {
            "steps": self.steps,
            "sigma": self.spec.sigma,
            "gamma": self.spec.subsample_rate,
            "compositions": self.spec.per_update_compositions,
            "sensitivity": self.spec.sensitivity,
            "curve": {str(o): _json_float(e) for o, e in self.curve.as_dict().items()},
            "epsilon": _json_float(eps),
            "delta": self.delta,
            "order": order,
        }
        out.update(extra)
        return out


def _json_float(x: float):
    return x if math.isfinite(x) else "inf"


def run_ledger(spec: MechanismSpec, steps: int, delta: float = 1e-5,
               grid: OrderGrid | None = None) -> tuple[RdpCurve, tuple[float, int | None]]:
    if steps < 0:
        raise ValueError("steps must be non-negative")
    ledger = PrivacyLedger(spec, delta, grid or OrderGrid())
    return ledger.curve_after(steps), ledger.epsilon_after(steps)


def calibrate_sigma(budget: DpBudget, steps: int, per_update_compositions: int,
                    subsample_rate: float, sensitivity: float = 2.0,
                    grid: OrderGrid | None = None, lo: float = 1e-2, hi: float = 1e4,
                    rtol: float = 1e-3) -> float:
    """Smallest sigma (to ``rtol``) whose ``steps``-update spend fits ``budget``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    grid = grid or OrderGrid()

    def eps_at(sigma):
        spec = MechanismSpec(sigma, per_update_compositions, subsample_rate, sensitivity)
        return run_ledger(spec, steps, budget.delta, grid)[1][0]

    eps_hi = eps_at(hi)
    if eps_hi > budget.epsilon:
        raise BudgetUnreachable(
            f"epsilon={eps_hi:.4g} at sigma={hi:g} still exceeds the target {budget.epsilon:g}")
    eps_lo = eps_at(lo)
    if eps_lo <= budget.epsilon:
        return lo
    assert eps_lo >= eps_hi, "privacy cost must decrease with sigma"
    while hi / lo > 1 + rtol:
        mid = math.sqrt(lo * hi)
        if eps_at(mid) <= budget.epsilon:
            hi = mid
        else:
            lo = mid
    return hi
