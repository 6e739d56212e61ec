# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
"""Linear step-latency model over load and launch accounting."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass
from typing import Any, Self

import numpy as np
from numpy.typing import NDArray

from .const import LOGGER
from .exceptions import ConfigurationError
from .fusion import LayerRole, LayerRolePlan
from .grouped import LoadStats

__all__ = [
    "CostCoeffs",
    "StepAccounting",
    "account_step",
    "cost_breakdown",
    "estimate_latency",
    "fit_cost_coeffs",
    "median_relative_error",
]


@dataclass(frozen=True, slots=True)
class CostCoeffs:
    """Cost per unit of each accounted quantity, in abstract time."""

    c_base: float = 1.0
    c_launch: float = 0.05
    c_block: float = 0.01
    c_index: float = 0.02
    c_window: float = 0.0005

    def __post_init__(self) -> None:
        if negative := [k for k, v in asdict(self).items() if v < 0]:  # pyright:ignore[reportAny]
            raise ConfigurationError(f"cost coefficients must be >= 0: {negative}")

    def as_vector(self) -> NDArray[np.float64]:
        """Coefficients in the order of `StepAccounting.features`."""
        return np.array(
            [self.c_base, self.c_launch, self.c_block, self.c_index, self.c_window], dtype=np.float64
        )

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Self:  # pyright:ignore[reportExplicitAny]
        return cls(**{k: float(v) for k, v in data.items()})  # pyright:ignore[reportAny]


@dataclass(frozen=True, slots=True)
class StepAccounting:
    """Counts of one verification step summed over all layers."""

    unique_loads: int
    index_constructions: int
    launches: int
    window_tokens: int
    requested_loads: int = 0
    n_layers: int = 0

    def features(self) -> NDArray[np.float64]:
        return np.array(
            [1.0, self.launches, self.unique_loads, self.index_constructions, self.window_tokens],
            dtype=np.float64,
        )


def account_step(stats: Sequence[LoadStats], plan: LayerRolePlan) -> StepAccounting:
    """Aggregate per-layer load statistics of one step under a layer plan."""
    if len(stats) != plan.n_layers:
        raise ConfigurationError(
            f"accounting covers {len(stats)} layers, the plan has {plan.n_layers}"
        )
    for layer, layer_stats in enumerate(stats):
        if plan.role(layer) is LayerRole.REUSE and layer_stats.index_constructions:
            raise ConfigurationError(f"reuse layer {layer} constructed indices")
    return StepAccounting(
        unique_loads=sum(s.unique_block_loads for s in stats),
        index_constructions=sum(s.index_constructions for s in stats),
        launches=plan.total_launches,
        window_tokens=sum(s.window_token_loads for s in stats),
        requested_loads=sum(s.total_requested_loads for s in stats),
        n_layers=plan.n_layers,
    )


def estimate_latency(acc: StepAccounting, coeffs: CostCoeffs) -> float:
    """T = c_base + c_launch*launches + c_block*unique + c_index*constructions + c_window*window."""
    return float((acc.features() * coeffs.as_vector()).sum())


def cost_breakdown(acc: StepAccounting, coeffs: CostCoeffs) -> dict[str, float]:
    """Contribution of every term to the estimate, plus the index-construction share."""
    terms = acc.features() * coeffs.as_vector()
    total = float(terms.sum())
    return {
        "base": float(terms[0]),
        "launch": float(terms[1]),
        "block": float(terms[2]),
        "index": float(terms[3]),
        "window": float(terms[4]),
        "total": total,
        "index_share": float(terms[3]) / total if total > 0 else 0.0,
    }


def fit_cost_coeffs(accountings: Sequence[StepAccounting], times: Sequence[float]) -> CostCoeffs:
    """Non-negative least-squares fit of the coefficients to measured step times.

    Uses an active-set refit: solve unconstrained, pin the most negative coefficient
    to zero, repeat until every free coefficient is non-negative.
    """
    if len(accountings) != len(times) or not accountings:
        raise ConfigurationError("need one measured time per accounting row")
    a = np.stack([acc.features() for acc in accountings])
    b = np.asarray(times, dtype=np.float64)
    free = list(range(a.shape[1]))
    solution = np.zeros(a.shape[1], dtype=np.float64)
    while free:
        x, *_ = np.linalg.lstsq(a[:, free], b, rcond=None)
        if np.all(x >= 0):
            solution[free] = x
            break
        free.pop(int(np.argmin(x)))
    LOGGER.debug(f"[cost] fitted coefficients {solution.tolist()} on {len(times)} steps")
    return CostCoeffs(*(float(v) for v in solution))


def median_relative_error(
    accountings: Sequence[StepAccounting], times: Sequence[float], coeffs: CostCoeffs
) -> float:
    predicted = np.array([estimate_latency(acc, coeffs) for acc in accountings])
    measured = np.asarray(times, dtype=np.float64)
    return float(np.median(np.abs(predicted - measured) / measured))
