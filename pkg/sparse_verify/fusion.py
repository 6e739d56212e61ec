# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
"""Refresh/reuse layer schedules and the launch accounting of fused execution.

A refresh layer routes its queries (one routing launch plus one fused attention
launch). A reuse layer inherits the selected indices of the nearest preceding
refresh layer of the same pass and runs as a single fused launch.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
import json
from typing import Protocol

import numpy as np
from numpy.typing import NDArray

from .const import (
    LAUNCHES_REFRESH,
    LAUNCHES_REUSE,
    LAUNCHES_VANILLA,
    LOGGER,
    WRITES_REFRESH,
    WRITES_REUSE,
    WRITES_VANILLA,
)
from .exceptions import ConfigurationError
from .nsa import NsaConfig, SelectedIndexSet

__all__ = [
    "LayerRole",
    "LayerRolePlan",
    "ScheduleCalibration",
    "calibrate_reuse_schedule",
    "clamp_inherited_indices",
    "parse_reuse_schedule",
    "resolve_layer_roles",
]


class LayerRole(StrEnum):
    REFRESH = "refresh"
    REUSE = "reuse"


@dataclass(frozen=True, slots=True)
class LayerRolePlan:
    n_layers: int
    reuse_set: frozenset[int]
    roles: tuple[LayerRole, ...] = field(init=False)
    sources: tuple[int | None, ...] = field(init=False)
    """Refresh layer each layer takes its indices from (None for refresh layers)."""

    def __post_init__(self) -> None:
        if self.n_layers < 1:
            raise ConfigurationError(f"layer count must be positive, got {self.n_layers}")
        if 0 in self.reuse_set:
            raise ConfigurationError("layer 0 is always a refresh layer")
        if bad := sorted(j for j in self.reuse_set if not 0 < j < self.n_layers):
            raise ConfigurationError(f"reuse layers {bad} out of range 1..{self.n_layers - 1}")
        roles: list[LayerRole] = []
        sources: list[int | None] = []
        last_refresh = 0
        for layer in range(self.n_layers):
            if layer in self.reuse_set:
                roles.append(LayerRole.REUSE)
                sources.append(last_refresh)
            else:
                roles.append(LayerRole.REFRESH)
                sources.append(None)
                last_refresh = layer
        object.__setattr__(self, "roles", tuple(roles))
        object.__setattr__(self, "sources", tuple(sources))

    @property
    def is_all_refresh(self) -> bool:
        return not self.reuse_set

    def role(self, layer: int) -> LayerRole:
        return self.roles[layer]

    def source(self, layer: int) -> int | None:
        return self.sources[layer]

    def launches(self, layer: int) -> int:
        return LAUNCHES_REUSE if self.roles[layer] is LayerRole.REUSE else LAUNCHES_REFRESH

    @property
    def total_launches(self) -> int:
        return sum(self.launches(j) for j in range(self.n_layers))

    @property
    def vanilla_launches(self) -> int:
        """Launches of unfused NSA over the same layers."""
        return LAUNCHES_VANILLA * self.n_layers

    @property
    def intermediate_writes(self) -> int:
        """Materialised intermediate outputs per query over all layers."""
        return sum(
            WRITES_REUSE if role is LayerRole.REUSE else WRITES_REFRESH for role in self.roles
        )

    @property
    def vanilla_writes(self) -> int:
        return WRITES_VANILLA * self.n_layers

    def to_json(self) -> str:
        return json.dumps(sorted(self.reuse_set))


def resolve_layer_roles(reuse_set: Iterable[int], n_layers: int) -> LayerRolePlan:
    """Derive per-layer roles and inheritance sources for schedule S."""
    return LayerRolePlan(n_layers, frozenset(reuse_set))


def parse_reuse_schedule(text: str, n_layers: int) -> frozenset[int]:
    """Parse `none`, `alt` (odd layers) or a comma-separated list / JSON array of ids."""
    text = text.strip().lower()
    if text in ("", "none"):
        return frozenset()
    if text == "alt":
        return frozenset(range(1, n_layers, 2))
    try:
        if text.startswith("["):
            ids = [int(x) for x in json.loads(text)]  # pyright:ignore[reportAny]
        else:
            ids = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise ConfigurationError(f"invalid reuse schedule '{text}': {e}") from e
    schedule = frozenset(ids)
    resolve_layer_roles(schedule, n_layers)  # pyright:ignore[reportUnusedCallResult]
    return schedule


def clamp_inherited_indices(
    source: SelectedIndexSet,
    bound: int,
    cfg: NsaConfig,
    *,
    query_id: int | None = None,
    layer: int | None = None,
) -> tuple[SelectedIndexSet, int]:
    """Interpret inherited indices under a query's causal bound.

    Blocks starting beyond `bound` are dropped; a block straddling it is kept and
    its tokens past `bound` are masked. Returns the effective set and the inclusive
    token bound to apply within the kept blocks.
    """
    kept = tuple(b for b in source.indices if b * cfg.l_sel <= bound)
    effective = SelectedIndexSet(
        source.query_id if query_id is None else query_id,
        source.layer if layer is None else layer,
        kept,
        source.forced & frozenset(kept),
        source.kv_head,
    )
    return effective, bound


class HiddenEncoder(Protocol):
    """Anything that can encode a token sequence under a given layer plan."""

    @property
    def n_layers(self) -> int: ...

    def encode(self, tokens: Sequence[int], plan: LayerRolePlan) -> NDArray[np.float32]: ...


@dataclass(frozen=True, slots=True)
class ScheduleCalibration:
    reuse_set: frozenset[int]
    deviations: list[float]
    """Deviation after each layer was added, in the order they were added."""
    order: list[int]


def calibrate_reuse_schedule(
    prompts: Sequence[Sequence[int]], model: HiddenEncoder, tolerance: float
) -> ScheduleCalibration:
    """Greedily mark layers as reuse while the hidden-state deviation stays within tolerance.

    Deviation is the mean relative L2 distance between the final hidden states of
    the schedule and of the all-refresh plan, over all calibration tokens. Each round
    adds the candidate with the smallest deviation (lower layer id on ties).
    """
    if not prompts or not any(prompts):
        raise ConfigurationError("calibration needs at least one non-empty prompt")
    if tolerance < 0:
        raise ConfigurationError(f"deviation tolerance must be >= 0, got {tolerance}")
    n_layers = model.n_layers
    reference = [model.encode(p, resolve_layer_roles((), n_layers)) for p in prompts if p]

    def deviation(schedule: frozenset[int]) -> float:
        plan = resolve_layer_roles(schedule, n_layers)
        total, count = 0.0, 0
        for prompt, ref in zip((p for p in prompts if p), reference):
            hidden = model.encode(prompt, plan).astype(np.float64)
            ref64 = ref.astype(np.float64)
            norms = np.linalg.norm(ref64, axis=1)
            total += float((np.linalg.norm(hidden - ref64, axis=1) / np.maximum(norms, 1e-30)).sum())
            count += len(prompt)
        return total / count

    schedule: frozenset[int] = frozenset()
    deviations: list[float] = []
    order: list[int] = []
    candidates = list(range(1, n_layers))
    while candidates:
        scored = [(deviation(schedule | {c}), c) for c in candidates]
        best_dev, best = min(scored)
        if best_dev > tolerance:
            break
        schedule |= {best}
        candidates.remove(best)
        deviations.append(best_dev)
        order.append(best)
        LOGGER.info(f"[calibrate] layer {best} marked reuse (deviation {best_dev:.3e})")
    return ScheduleCalibration(schedule, deviations, order)
