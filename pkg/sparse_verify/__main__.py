# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
import sys

from .cli import main

sys.exit(main())
