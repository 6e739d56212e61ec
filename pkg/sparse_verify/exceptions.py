# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
"""Exceptions raised by sparse-verify."""

__all__ = [
    "ConfigurationError",
    "ContextOverflowError",
    "ProfileError",
    "SparseVerifyError",
]


class SparseVerifyError(Exception):
    """Base class of all sparse-verify errors."""


class ConfigurationError(SparseVerifyError):
    """Invalid configuration, strategy, schedule or profile lookup."""


class ContextOverflowError(SparseVerifyError):
    """The prompt plus the requested tokens exceed the model's context."""


class ProfileError(SparseVerifyError):
    """The profile file is missing or cannot be read."""
