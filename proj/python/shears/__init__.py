# Copyright 2026 The Shears Authors
# SPDX-License-Identifier: Apache-2.0
"""Sparse base model with elastic low-rank adapters."""

from ._shears import *  # noqa: F401,F403
from ._shears import ArtifactError, ConfigError, NumericError  # noqa: F401

__version__ = "0.1.0"
