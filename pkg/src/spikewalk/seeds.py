"""Stable seed derivation for sub-components.

Child seeds are digests of (master seed, component name, index) so adding
or reordering instrumentation never shifts another component's stream.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, name: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{master}:{name}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")
