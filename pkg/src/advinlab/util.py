"""Shared helpers: stable hashing, seed derivation, fraction parsing."""

from __future__ import annotations

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, state: int = FNV_OFFSET) -> int:
    """64-bit FNV-1a over a byte string; `state` allows incremental hashing."""
    h = state
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def derive_seed(master: int, *labels: object) -> int:
    """Deterministic per-component seed from a master seed and a label path.

    All randomness in an experiment flows from one master seed; components
    ask for their own stream by name (and index where applicable), e.g.
    ``derive_seed(seed, "shuffle", epoch)``.
    """
    h = fnv1a64(int(master).to_bytes(8, "little", signed=False))
    for label in labels:
        h = fnv1a64(str(label).encode("utf-8") + b"\x00", state=h)
    return h


def parse_fraction(text: str) -> float:
    """Parse '8/255' (exact division) or a plain decimal like '0.05'."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        d = float(den)
        if d == 0:
            raise ValueError(f"zero denominator in fraction {text!r}")
        return float(num) / d
    return float(text)
