# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
"""Autoregressive and speculative decode loops."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from time import perf_counter

import numpy as np

from .const import LOGGER
from .cost_model import CostCoeffs, StepAccounting, account_step, estimate_latency
from .draft_tree import ROOT_ID, expand_draft_tree, flatten_tree, greedy_verify
from .exceptions import ConfigurationError, ContextOverflowError
from .fusion import resolve_layer_roles
from .grouped import LoadStats
from .model import PassInput, SessionDraft, ToyTransformer
from .planner import (
    PrecisionClass,
    ProfileTable,
    RefinerState,
    StepMetrics,
    StrategyTuple,
    bucket_of,
    refine_step,
)

__all__ = [
    "GuardSettings",
    "SpeculativeRun",
    "StepRecord",
    "TimeSource",
    "decode_autoregressive",
    "decode_speculative",
]


class TimeSource(StrEnum):
    MODELED = "modeled"  # cost-model estimate of the verification step
    WALL = "wall"  # measured wall-clock of the whole step


@dataclass(frozen=True, slots=True)
class GuardSettings:
    """Runtime refinement settings of one request."""

    enabled: bool = True
    bookkeeping_only: bool = False
    alpha: float | None = None
    rho: float | None = None
    warmup: int | None = None
    hysteresis: int | None = None
    early_window: int | None = None

    def overrides(self) -> dict[str, float | int | bool]:
        values = {
            "alpha": self.alpha,
            "rho": self.rho,
            "warmup": self.warmup,
            "hysteresis": self.hysteresis,
            "early_window": self.early_window,
        }
        return {k: v for k, v in values.items() if v is not None} | {
            "bookkeeping_only": self.bookkeeping_only
        }


@dataclass(frozen=True, slots=True)
class StepRecord:
    step: int
    accepted: int
    latency: float
    modeled: float
    wall: float
    gamma: int
    context_len: int
    bucket: str
    strategy: str
    accounting: StepAccounting
    hidden_deviation: float | None = None
    """Mean relative deviation of the verified hidden states from Strict verification."""


@dataclass(slots=True)
class SpeculativeRun:
    tokens: list[int]
    steps: list[StepRecord] = field(default_factory=list[StepRecord])
    load_trail: list[list[LoadStats]] = field(default_factory=list[list[LoadStats]])
    """Per-layer load statistics of every step."""
    refiner: RefinerState | None = None

    @property
    def total_accepted(self) -> int:
        return sum(s.accepted for s in self.steps)

    @property
    def total_latency(self) -> float:
        return sum(s.latency for s in self.steps)

    @property
    def throughput(self) -> float:
        total = self.total_latency
        return self.total_accepted / total if total > 0 else 0.0

    @property
    def mean_accepted(self) -> float:
        return self.total_accepted / len(self.steps) if self.steps else 0.0

    @property
    def refinement_events(self) -> int:
        return self.refiner.switch_count if self.refiner is not None else 0


def decode_autoregressive(model: ToyTransformer, prompt: Sequence[int], steps: int) -> list[int]:
    """Greedy decoding, one target token per step."""
    _check_request(model, prompt, steps)
    session = model.new_session()
    session.prefill(prompt[:-1])
    pending = prompt[-1]
    tokens: list[int] = []
    for _ in range(steps):
        pending = int(np.argmax(session.step(pending).logits[0]))
        tokens.append(pending)
    return tokens


def decode_speculative(
    target: ToyTransformer,
    draft: ToyTransformer,
    prompt: Sequence[int],
    steps: int,
    strategy: StrategyTuple,
    pclass: PrecisionClass,
    *,
    profile: ProfileTable | None = None,
    guard: GuardSettings | None = None,
    time_source: TimeSource = TimeSource.MODELED,
    coeffs: CostCoeffs | None = None,
    shadow: bool = False,
) -> SpeculativeRun:
    """Draft, verify and accept until `steps` tokens are emitted.

    With a profile and an enabled guard the starting strategy comes from the profile
    and may be refined during the early steps. `shadow` additionally verifies every
    tree under Strict settings to report the hidden-state deviation.
    """
    _check_request(target, prompt, steps)
    if draft.spec.vocab != target.spec.vocab:
        raise ConfigurationError("draft and target vocabularies differ")
    strategy.validate(pclass, target.n_layers)
    coeffs = coeffs or (profile.cost_coeffs if profile is not None else None) or CostCoeffs()

    refiner: RefinerState | None = None
    if guard is not None and guard.enabled:
        if profile is None:
            raise ConfigurationError("runtime refinement requires a profile")
        refiner = RefinerState.start(
            profile, bucket_of(len(prompt)), pclass, **guard.overrides()
        )
        strategy = refiner.strategy
        LOGGER.info(f"[guard] preselected {strategy.label} (E[A]={refiner.expected:.3f})")

    plan = resolve_layer_roles(strategy.reuse_set, target.n_layers)
    session = target.new_session(plan, strategy.mode, strategy.coarsening)
    strict = target.new_session() if shadow else None
    drafter = SessionDraft(draft)
    session.prefill(prompt[:-1])
    drafter.prefill(prompt[:-1])
    if strict is not None:
        strict.prefill(prompt[:-1])

    run = SpeculativeRun([], refiner=refiner)
    pending = prompt[-1]
    step = 0
    while len(run.tokens) < steps:
        step += 1
        started = perf_counter()
        root = session.step(pending)
        if strict is not None:
            strict.step(pending)  # pyright:ignore[reportUnusedCallResult]
        depth = min(strategy.depth, target.spec.max_context - session.committed_len)
        tree = expand_draft_tree(drafter, pending, depth, strategy.width, strategy.budget)
        batch = flatten_tree(tree, strategy.traversal, session.committed_len)
        verify_started = perf_counter()
        result = session.run(PassInput.from_batch(batch))
        wall_verify = perf_counter() - verify_started
        argmax = {ROOT_ID: int(np.argmax(root.logits[0])), **result.argmax()}
        outcome = greedy_verify(batch, argmax, tree)

        deviation = None
        if strict is not None:
            reference = strict.run(PassInput.from_batch(batch))
            diff = np.linalg.norm(result.hidden.astype(np.float64) - reference.hidden, axis=1)
            deviation = float(np.mean(diff / np.linalg.norm(reference.hidden.astype(np.float64), axis=1)))
            strict.commit(reference, outcome.node_ids)

        session.commit(result, outcome.node_ids)
        drafter.commit(tree, outcome.node_ids)
        emitted = [*outcome.tokens, outcome.bonus][: steps - len(run.tokens)]
        run.tokens.extend(emitted)
        pending = outcome.bonus
        wall = perf_counter() - started

        accounting = account_step(result.layer_stats, session.plan)
        modeled = estimate_latency(accounting, coeffs)
        latency = modeled if time_source is TimeSource.MODELED else max(wall, 1e-9)
        bucket = bucket_of(session.committed_len)
        run.steps.append(
            StepRecord(
                step=step,
                accepted=len(emitted),
                latency=latency,
                modeled=modeled,
                wall=wall_verify,
                gamma=batch.gamma,
                context_len=session.committed_len,
                bucket=str(bucket),
                strategy=strategy.label,
                accounting=accounting,
                hidden_deviation=deviation,
            )
        )
        run.load_trail.append(result.layer_stats)
        LOGGER.debug(
            f"[step {step}] gamma={batch.gamma} accepted={len(emitted)} "
            f"latency={latency:.4f} strategy={strategy.label}"
        )

        if refiner is not None:
            metrics = StepMetrics(len(emitted), latency)
            chosen, refiner = refine_step(refiner, metrics, profile, bucket, pclass, step)
            if chosen != strategy:
                strategy = chosen
                session.configure(
                    resolve_layer_roles(strategy.reuse_set, target.n_layers),
                    strategy.mode,
                    strategy.coarsening,
                )
    return run


def _check_request(model: ToyTransformer, prompt: Sequence[int], steps: int) -> None:
    if not prompt:
        raise ConfigurationError("prompt must contain at least one token")
    if steps < 0:
        raise ConfigurationError(f"generated token count must be >= 0, got {steps}")
    if bad := [t for t in prompt if not 0 <= t < model.spec.vocab]:
        raise ConfigurationError(f"prompt tokens {bad[:5]} are outside the vocabulary")
    if len(prompt) + steps > model.spec.max_context:
        raise ContextOverflowError(
            f"prompt of {len(prompt)} tokens plus {steps} generated tokens exceeds "
            f"the context of {model.spec.max_context}"
        )
