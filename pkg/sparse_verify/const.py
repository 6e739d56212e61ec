# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
from logging import Logger, getLogger
from typing import Final

LOGGER: Final[Logger] = getLogger(__package__)

NAME: Final = "sparse-verify"

# NSA geometry defaults.
DEFAULT_CMP_BLOCK: Final = 32
"""Compression block length l (tokens)."""
DEFAULT_CMP_STRIDE: Final = 16
"""Compression stride d (tokens)."""
DEFAULT_SEL_BLOCK: Final = 64
"""Selection block size l' (tokens)."""
DEFAULT_SEL_COUNT: Final = 16
"""Number of selected blocks n."""
DEFAULT_WINDOW: Final = 512
"""Sliding-window size w (tokens)."""

FORCED_LOCAL_BLOCKS: Final = 2
"""Number of most recent selection blocks always selected (besides block 0)."""

# Launch accounting per layer.
LAUNCHES_VANILLA: Final = 5  # routing, compressed, selected, window, aggregation
LAUNCHES_REFRESH: Final = 2  # routing launch + fused downstream kernel
LAUNCHES_REUSE: Final = 1  # single fully fused kernel

# Materialised intermediate outputs per layer.
WRITES_VANILLA: Final = 4  # indices + three branch outputs
WRITES_REFRESH: Final = 1  # indices only
WRITES_REUSE: Final = 0

# Runtime refinement guard.
GUARD_ALPHA: Final = 0.40
"""EMA smoothing coefficient of the accepted-token count."""
GUARD_RHO: Final = 0.85
"""Acceptance-drop ratio against the profiled expectation."""
GUARD_WARMUP: Final = 8
"""Steps observed before the guard may count a drop."""
GUARD_HYSTERESIS: Final = 5
"""Consecutive sub-threshold steps required to switch."""
GUARD_MAX_TRANSITIONS: Final = 2
"""Profile transitions permitted per request."""
GUARD_EARLY_WINDOW: Final = 32
"""Verification steps during which refinement is considered."""

# Offline profile shape.
BUCKET_WIDTH: Final = 4096
PROFILE_CANDIDATES: Final = 12
"""Ranked candidates stored per (bucket, precision class)."""

# Toy model scale.
DEFAULT_TARGET_LAYERS: Final = 8
DEFAULT_DRAFT_LAYERS: Final = 2
DEFAULT_HIDDEN: Final = 256
DEFAULT_VOCAB: Final = 1024
DEFAULT_MAX_CONTEXT: Final = 16384
BYTE_VOCAB: Final = 256
"""Prompt files are tokenized as UTF-8 bytes."""

# Base configuration of the planner benchmark.
BASE_DEPTH: Final = 6
BASE_WIDTH: Final = 10
BASE_BUDGET: Final = 128
BASE_COARSENING: Final = 2

WIDE_TOLERANCE: Final = 1e-12
"""Tolerance of wide-accumulation equivalence checks."""
