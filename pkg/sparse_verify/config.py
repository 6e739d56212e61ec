# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
"""JSON configuration files, their schemas and the objects built from them."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import StrEnum
import json
from pathlib import Path
from typing import Any

import numpy as np
import voluptuous as vol

from .const import (
    BYTE_VOCAB,
    DEFAULT_CMP_BLOCK,
    DEFAULT_CMP_STRIDE,
    DEFAULT_DRAFT_LAYERS,
    DEFAULT_HIDDEN,
    DEFAULT_MAX_CONTEXT,
    DEFAULT_SEL_BLOCK,
    DEFAULT_SEL_COUNT,
    DEFAULT_TARGET_LAYERS,
    DEFAULT_VOCAB,
    DEFAULT_WINDOW,
    GUARD_EARLY_WINDOW,
    LOGGER,
)
from .cost_model import CostCoeffs
from .draft_tree import Traversal
from .engine import GuardSettings, TimeSource
from .exceptions import ConfigurationError, ProfileError
from .grouped import CoarseningMode
from .model import ToyModelSpec, ToyTransformer
from .nsa import NsaConfig
from .planner import ContextBucket, PrecisionClass, ProfileTable, StrategyTuple

__all__ = [
    "ARMS_SCHEMA",
    "CANDIDATES_SCHEMA",
    "MODEL_SPEC_SCHEMA",
    "NSA_CONFIG_SCHEMA",
    "PROFILE_SCHEMA",
    "RUN_CONFIG_SCHEMA",
    "STRATEGY_SCHEMA",
    "ArmKind",
    "ArmSpec",
    "DraftDerivation",
    "RunConfig",
    "build_models",
    "load_arms",
    "load_candidates",
    "load_json",
    "load_profile",
    "load_prompts",
    "save_profile",
    "synthetic_prompt",
    "tokenize",
]

PositiveInt = vol.All(int, vol.Range(min=1))
NonNegative = vol.All(vol.Coerce(float), vol.Range(min=0.0))


class DraftDerivation(StrEnum):
    INDEPENDENT = "independent"  # separately seeded dense-attention model
    TRUNCATED = "truncated"  # first layers of the target


class ArmKind(StrEnum):
    BASE = "base"  # fixed Base configuration
    STATIC_BEST = "static-best"  # profile rank-1, no refinement
    BEST_R = "best+r"  # profile rank-1 with runtime refinement
    BOOKKEEPING = "bookkeeping"  # profile rank-1, guard state updated but never switches
    EXPLICIT = "explicit"  # strategy given in the arm


NSA_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("l", default=DEFAULT_CMP_BLOCK): PositiveInt,
        vol.Optional("d", default=DEFAULT_CMP_STRIDE): PositiveInt,
        vol.Optional("l_sel", default=DEFAULT_SEL_BLOCK): PositiveInt,
        vol.Optional("n", default=DEFAULT_SEL_COUNT): vol.All(int, vol.Range(min=3)),
        vol.Optional("w", default=DEFAULT_WINDOW): PositiveInt,
        vol.Optional("n_q_heads", default=4): PositiveInt,
        vol.Optional("n_kv_heads", default=2): PositiveInt,
        vol.Optional("d_head", default=32): PositiveInt,
        vol.Optional("n_layers", default=DEFAULT_TARGET_LAYERS): PositiveInt,
    }
)

MODEL_SPEC_SCHEMA = vol.Schema(
    {
        vol.Optional("seed", default=0): int,
        vol.Optional("n_layers", default=DEFAULT_TARGET_LAYERS): PositiveInt,
        vol.Optional("hidden", default=DEFAULT_HIDDEN): PositiveInt,
        vol.Optional("vocab", default=DEFAULT_VOCAB): vol.All(int, vol.Range(min=BYTE_VOCAB)),
        vol.Optional("max_context", default=DEFAULT_MAX_CONTEXT): PositiveInt,
        vol.Optional("ffn_mult", default=2): PositiveInt,
        vol.Optional("nsa", default=dict): NSA_CONFIG_SCHEMA,
    }
)

STRATEGY_SCHEMA = vol.Schema(
    {
        vol.Required("depth"): PositiveInt,
        vol.Required("width"): PositiveInt,
        vol.Optional("traversal", default=str(Traversal.BFS)): vol.All(vol.Lower, vol.In([str(t) for t in Traversal])),
        vol.Optional("coarsening", default=1): PositiveInt,
        vol.Optional("mode", default=str(CoarseningMode.EXACT)): vol.All(
            vol.Lower, vol.In([*[str(m) for m in CoarseningMode], "approx"])
        ),
        vol.Optional("reuse_set", default=list): [vol.All(int, vol.Range(min=1))],
        vol.Optional("budget", default=None): vol.Any(None, PositiveInt),
    }
)

COST_COEFFS_SCHEMA = vol.Schema(
    {
        vol.Required("c_base"): NonNegative,
        vol.Required("c_launch"): NonNegative,
        vol.Required("c_block"): NonNegative,
        vol.Required("c_index"): NonNegative,
        vol.Required("c_window"): NonNegative,
    }
)

GUARD_SCHEMA = vol.Schema(
    {
        vol.Optional("alpha"): vol.All(vol.Coerce(float), vol.Range(min=0.0, min_included=False, max=1.0)),
        vol.Optional("rho"): vol.All(vol.Coerce(float), vol.Range(min=0.0, max=1.0, min_included=False, max_included=False)),
        vol.Optional("warmup"): vol.All(int, vol.Range(min=0)),
        vol.Optional("hysteresis"): PositiveInt,
        vol.Optional("early_window"): PositiveInt,
    }
)

PRECISION_CLASS = vol.All(vol.Lower, vol.Coerce(PrecisionClass))

RUN_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("target", default=dict): MODEL_SPEC_SCHEMA,
        vol.Optional("draft", default=dict): {
            vol.Optional("kind", default=str(DraftDerivation.TRUNCATED)): vol.In([str(d) for d in DraftDerivation]),
            vol.Optional("seed", default=1): int,
            vol.Optional("n_layers", default=DEFAULT_DRAFT_LAYERS): PositiveInt,
        },
        vol.Optional("prompt_file", default=None): vol.Any(None, str),
        vol.Optional("prompts", default=dict): {
            vol.Optional("count", default=4): PositiveInt,
            vol.Optional("length", default=64): PositiveInt,
            vol.Optional("seed", default=0): int,
        },
        vol.Optional("steps", default=32): PositiveInt,
        vol.Optional("precision_class", default=str(PrecisionClass.STRICT)): PRECISION_CLASS,
        vol.Optional("strategy", default=None): vol.Any(None, STRATEGY_SCHEMA),
        vol.Optional("time_source", default=str(TimeSource.MODELED)): vol.In([str(t) for t in TimeSource]),
        vol.Optional("profile", default=None): vol.Any(None, str),
        vol.Optional("early_window", default=GUARD_EARLY_WINDOW): PositiveInt,
        vol.Optional("cost_coeffs", default=None): vol.Any(None, COST_COEFFS_SCHEMA),
        vol.Optional("repetitions", default=1): PositiveInt,
    }
)

ARMS_SCHEMA = vol.Schema(
    [
        {
            vol.Required("name"): str,
            vol.Required("kind"): vol.In([str(k) for k in ArmKind]),
            vol.Optional("strategy"): STRATEGY_SCHEMA,
            vol.Optional("precision_class"): PRECISION_CLASS,
            vol.Optional("guard", default=dict): GUARD_SCHEMA,
        }
    ]
)

CANDIDATES_SCHEMA = vol.Schema({vol.In([str(p) for p in PrecisionClass]): [STRATEGY_SCHEMA]})

PROFILE_SCHEMA = vol.Schema(
    {
        vol.Required("n_layers"): PositiveInt,
        vol.Required("buckets"): {
            vol.In([str(b) for b in ContextBucket]): {
                vol.In([str(p) for p in PrecisionClass]): vol.All(
                    [
                        {
                            vol.Required("strategy"): STRATEGY_SCHEMA,
                            vol.Required("expA"): vol.All(vol.Coerce(float), vol.Range(min=0.0)),
                            vol.Required("expT"): vol.All(vol.Coerce(float), vol.Range(min=0.0, min_included=False)),
                            vol.Optional("thr"): vol.Coerce(float),
                        }
                    ],
                    vol.Length(min=1, msg="empty candidate list"),
                )
            }
        },
        vol.Optional("cost_coeffs"): COST_COEFFS_SCHEMA,
    }
)


def validate(schema: vol.Schema, data: object, what: str) -> Any:  # pyright:ignore[reportExplicitAny]
    """Validate `data`, re-raising voluptuous errors as ConfigurationError."""
    try:
        return schema(data)  # pyright:ignore[reportAny]
    except vol.Invalid as e:
        path = ".".join(str(p) for p in e.path) or "<root>"
        raise ConfigurationError(f"{what}: {e.msg} at {path}") from e


def load_json(path: str | Path, schema: vol.Schema, what: str) -> Any:  # pyright:ignore[reportExplicitAny]
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))  # pyright:ignore[reportAny]
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read {what} '{path}': {e}") from e
    return validate(schema, data, what)  # pyright:ignore[reportAny]


def strategy_from(data: Mapping[str, Any]) -> StrategyTuple:  # pyright:ignore[reportExplicitAny]
    return StrategyTuple.from_dict(validate(STRATEGY_SCHEMA, dict(data), "strategy"))  # pyright:ignore[reportAny]


@dataclass(frozen=True, slots=True)
class RunConfig:
    target: ToyModelSpec = field(default_factory=ToyModelSpec)
    draft_kind: DraftDerivation = DraftDerivation.TRUNCATED
    draft_seed: int = 1
    draft_layers: int = DEFAULT_DRAFT_LAYERS
    prompt_file: str | None = None
    prompt_count: int = 4
    prompt_length: int = 64
    prompt_seed: int = 0
    steps: int = 32
    precision_class: PrecisionClass = PrecisionClass.STRICT
    strategy: StrategyTuple | None = None
    time_source: TimeSource = TimeSource.MODELED
    profile: str | None = None
    early_window: int = GUARD_EARLY_WINDOW
    cost_coeffs: CostCoeffs | None = None
    repetitions: int = 1

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigurationError(f"generated tokens must be >= 1, got {self.steps}")
        if self.strategy is not None:
            self.strategy.validate(self.precision_class, self.target.n_layers)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RunConfig:  # pyright:ignore[reportExplicitAny]
        conf: dict[str, Any] = validate(RUN_CONFIG_SCHEMA, dict(data), "run config")  # pyright:ignore[reportExplicitAny]
        target: dict[str, Any] = dict(conf["target"])  # pyright:ignore[reportExplicitAny, reportAny]
        nsa: dict[str, Any] = dict(target["nsa"])  # pyright:ignore[reportExplicitAny, reportAny]
        nsa["n_layers"] = target["n_layers"]
        target["nsa"] = NsaConfig(**nsa)  # pyright:ignore[reportAny]
        draft: dict[str, Any] = conf["draft"]  # pyright:ignore[reportExplicitAny, reportAny]
        prompts: dict[str, Any] = conf["prompts"]  # pyright:ignore[reportExplicitAny, reportAny]
        strategy: dict[str, Any] | None = conf["strategy"]  # pyright:ignore[reportExplicitAny, reportAny]
        coeffs: dict[str, Any] | None = conf["cost_coeffs"]  # pyright:ignore[reportExplicitAny, reportAny]
        return cls(
            target=ToyModelSpec(**target),  # pyright:ignore[reportAny]
            draft_kind=DraftDerivation(draft["kind"]),
            draft_seed=int(draft["seed"]),  # pyright:ignore[reportAny]
            draft_layers=int(draft["n_layers"]),  # pyright:ignore[reportAny]
            prompt_file=conf["prompt_file"],  # pyright:ignore[reportAny]
            prompt_count=int(prompts["count"]),  # pyright:ignore[reportAny]
            prompt_length=int(prompts["length"]),  # pyright:ignore[reportAny]
            prompt_seed=int(prompts["seed"]),  # pyright:ignore[reportAny]
            steps=int(conf["steps"]),  # pyright:ignore[reportAny]
            precision_class=conf["precision_class"],  # pyright:ignore[reportAny]
            strategy=StrategyTuple.from_dict(strategy) if strategy is not None else None,
            time_source=TimeSource(conf["time_source"]),
            profile=conf["profile"],  # pyright:ignore[reportAny]
            early_window=int(conf["early_window"]),  # pyright:ignore[reportAny]
            cost_coeffs=CostCoeffs.from_dict(coeffs) if coeffs is not None else None,
            repetitions=int(conf["repetitions"]),  # pyright:ignore[reportAny]
        )

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        return cls.from_dict(load_json(path, vol.Schema(dict), "run config"))  # pyright:ignore[reportAny]


@dataclass(frozen=True, slots=True)
class ArmSpec:
    name: str
    kind: ArmKind
    strategy: StrategyTuple | None = None
    precision_class: PrecisionClass | None = None
    guard: GuardSettings = field(default_factory=GuardSettings)

    def __post_init__(self) -> None:
        if self.kind is ArmKind.EXPLICIT and self.strategy is None:
            raise ConfigurationError(f"arm '{self.name}' is explicit but has no strategy")


def load_arms(path: str | Path) -> list[ArmSpec]:
    return parse_arms(load_json(path, vol.Schema(list), "arms file"))  # pyright:ignore[reportAny]


def parse_arms(data: object) -> list[ArmSpec]:
    arms: list[dict[str, Any]] = validate(ARMS_SCHEMA, data, "arms")  # pyright:ignore[reportExplicitAny]
    specs: list[ArmSpec] = []
    for arm in arms:
        kind = ArmKind(arm["kind"])
        guard: dict[str, Any] = arm["guard"]  # pyright:ignore[reportExplicitAny, reportAny]
        specs.append(
            ArmSpec(
                name=str(arm["name"]),  # pyright:ignore[reportAny]
                kind=kind,
                strategy=StrategyTuple.from_dict(arm["strategy"]) if "strategy" in arm else None,  # pyright:ignore[reportAny]
                precision_class=arm.get("precision_class"),
                guard=GuardSettings(
                    enabled=kind in (ArmKind.BEST_R, ArmKind.BOOKKEEPING),
                    bookkeeping_only=kind is ArmKind.BOOKKEEPING,
                    **guard,  # pyright:ignore[reportAny]
                ),
            )
        )
    if len({a.name for a in specs}) != len(specs):
        raise ConfigurationError("arm names must be unique")
    return specs


def load_candidates(path: str | Path) -> dict[PrecisionClass, list[StrategyTuple]]:
    data: dict[str, list[dict[str, Any]]] = load_json(path, CANDIDATES_SCHEMA, "candidates file")  # pyright:ignore[reportExplicitAny]
    return {
        PrecisionClass(pclass): [StrategyTuple.from_dict(s) for s in strategies]
        for pclass, strategies in data.items()
    }


def load_profile(path: str | Path) -> ProfileTable:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))  # pyright:ignore[reportAny]
    except OSError as e:
        raise ProfileError(f"cannot read profile '{path}': {e}") from e
    except json.JSONDecodeError as e:
        raise ProfileError(f"profile '{path}' is not valid JSON: {e}") from e
    table = ProfileTable.from_dict(validate(PROFILE_SCHEMA, raw, "profile"))  # pyright:ignore[reportAny]
    LOGGER.debug(f"[profile] loaded {table.strategy_count} strategies from {path}")
    return table


def save_profile(table: ProfileTable, path: str | Path) -> None:
    Path(path).write_text(table.to_json(), encoding="utf-8")  # pyright:ignore[reportUnusedCallResult]
    LOGGER.info(f"[profile] wrote {table.strategy_count} strategies to {path}")


def tokenize(text: str) -> list[int]:
    """Byte-level tokens of UTF-8 text."""
    return list(text.encode("utf-8"))


def synthetic_prompt(length: int, seed: int, vocab: int = BYTE_VOCAB) -> list[int]:
    """Seeded prompt with some repeated spans, so drafts find patterns to follow."""
    rng = np.random.default_rng(seed)
    motif = rng.integers(0, vocab, size=max(4, min(32, length // 4))).tolist()  # pyright:ignore[reportAny]
    tokens: list[int] = []
    while len(tokens) < length:
        if rng.random() < 0.5:
            tokens.extend(int(t) for t in motif)  # pyright:ignore[reportAny]
        else:
            tokens.extend(int(t) for t in rng.integers(0, vocab, size=8))  # pyright:ignore[reportAny]
    return tokens[:length]


def load_prompts(conf: RunConfig, bucket: ContextBucket | None = None) -> list[list[int]]:
    """Prompts of a run: non-empty lines of the prompt file or the synthetic set.

    With a bucket, synthetic prompts are lengthened to fall into it.
    """
    if conf.prompt_file is not None:
        try:
            lines = Path(conf.prompt_file).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise ConfigurationError(f"cannot read prompt file '{conf.prompt_file}': {e}") from e
        prompts = [tokenize(line) for line in lines if line.strip()]
        if not prompts:
            raise ConfigurationError(f"prompt file '{conf.prompt_file}' has no prompts")
        return prompts
    offset = bucket.lower if bucket is not None else 0
    return [
        synthetic_prompt(offset + conf.prompt_length, conf.prompt_seed + i)
        for i in range(conf.prompt_count)
    ]


def build_models(conf: RunConfig) -> tuple[ToyTransformer, ToyTransformer]:
    """Target and draft models of a run."""
    target = ToyTransformer(conf.target)
    if conf.draft_kind is DraftDerivation.TRUNCATED:
        draft = target.truncated(min(conf.draft_layers, target.n_layers))
    else:
        draft = ToyTransformer(ToyModelSpec.draft_for(conf.target, conf.draft_seed, conf.draft_layers))
    LOGGER.debug(
        f"[model] target {target.n_layers} layers, draft {draft.n_layers} layers ({conf.draft_kind})"
    )
    return target, draft


def profile_buckets(names: str | None) -> list[ContextBucket]:
    """Parse a comma-separated bucket list; all buckets when empty."""
    if not names:
        return list(ContextBucket)
    try:
        return [ContextBucket(n.strip().lower()) for n in names.split(",") if n.strip()]
    except ValueError as e:
        raise ConfigurationError(f"invalid bucket list '{names}': {e}") from e
