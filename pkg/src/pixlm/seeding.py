"""Deterministic seed derivation.

Every random choice in the pipeline flows from one root seed through
`mix_seed`, so re-running any stage with the same inputs reproduces it
bit for bit.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix_seed(seed: int, *salts) -> int:
    """Derive a child seed from a parent seed and a salt tuple."""
    h = _splitmix64(seed & _MASK64)
    for salt in salts:
        if isinstance(salt, str):
            for byte in salt.encode("utf-8"):
                h = _splitmix64(h ^ byte)
        else:
            h = _splitmix64(h ^ (int(salt) & _MASK64))
    return h
