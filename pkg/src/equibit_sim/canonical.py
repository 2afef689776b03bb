"""Canonical byte encodings and simulated-time units.

Everything that gets hashed, signed, or exported passes through here so that
digests are stable across runs and machines: JSON with sorted keys, compact
separators, lowercase hex for binary fields, plain integers for amounts and
times. Wire formats that fix an explicit field order (message envelopes) use
``ordered_bytes`` instead, which preserves dict insertion order.
"""

from __future__ import annotations

import json
from typing import Any

HOUR = 3600
DAY = 24 * HOUR


def canon_bytes(obj: Any) -> bytes:
    """Canonical JSON: sorted keys, no whitespace, UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def ordered_bytes(obj: Any) -> bytes:
    """Compact JSON preserving insertion order, for wire forms with a fixed field order."""
    return json.dumps(obj, sort_keys=False, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def to_hex(data: bytes) -> str:
    return data.hex()


def from_hex(text: str) -> bytes:
    return bytes.fromhex(text)
