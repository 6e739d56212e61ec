# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
"""Sparse speculative verification: NSA attention verifying draft trees."""

from .engine import decode_autoregressive, decode_speculative
from .exceptions import ConfigurationError, ContextOverflowError, ProfileError, SparseVerifyError
from .model import ToyModelSpec, ToyTransformer
from .nsa import NsaConfig
from .planner import PrecisionClass, StrategyTuple

__all__ = [
    "ConfigurationError",
    "ContextOverflowError",
    "NsaConfig",
    "PrecisionClass",
    "ProfileError",
    "SparseVerifyError",
    "StrategyTuple",
    "ToyModelSpec",
    "ToyTransformer",
    "decode_autoregressive",
    "decode_speculative",
]
