"""Modular position code over pairwise-coprime ring sizes.

An integer position is stored as its remainders modulo a set of coprime
moduli and recovered by Chinese-remainder reconstruction into a signed
window centred on zero.  All arithmetic is exact integer arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd, prod
from typing import Sequence


def _check_moduli(moduli: Sequence[int]) -> None:
    if len(moduli) == 0:
        raise ValueError("at least one modulus is required")
    for m in moduli:
        if not isinstance(m, int) or m < 2:
            raise ValueError(f"moduli must be integers >= 2, got {m}")
    for i in range(len(moduli)):
        for j in range(i + 1, len(moduli)):
            if gcd(moduli[i], moduli[j]) != 1:
                raise ValueError(
                    f"moduli must be pairwise coprime: gcd({moduli[i]}, {moduli[j]}) != 1"
                )


@dataclass(frozen=True)
class ResidueCode:
    """Remainders of a position modulo each ring size."""

    moduli: tuple[int, ...]
    residues: tuple[int, ...]

    def __post_init__(self):
        _check_moduli(self.moduli)
        if len(self.residues) != len(self.moduli):
            raise ValueError("residues and moduli must have matching lengths")
        for r, m in zip(self.residues, self.moduli):
            if not 0 <= r < m:
                raise ValueError(f"residue {r} out of range for modulus {m}")


def capacity(moduli: Sequence[int]) -> int:
    """Number of distinct representable positions: the product of the moduli."""
    _check_moduli(moduli)
    return prod(moduli)


def encode(x: int, moduli: Sequence[int]) -> ResidueCode:
    """Component-wise remainders of x; positions beyond capacity wrap."""
    _check_moduli(moduli)
    return ResidueCode(tuple(moduli), tuple(x % m for m in moduli))


def offset(
    walker_states: Sequence[int],
    reference_states: Sequence[int],
    moduli: Sequence[int],
) -> ResidueCode:
    """Per-ring offset (walker - reference) mod size."""
    if len(walker_states) != len(reference_states) or len(walker_states) != len(moduli):
        raise ValueError("walker, reference, and moduli lengths must match")
    _check_moduli(moduli)
    for c, r, m in zip(walker_states, reference_states, moduli):
        if not (0 <= c < m and 0 <= r < m):
            raise ValueError(f"ring states must lie in [0, {m})")
    return ResidueCode(
        tuple(moduli),
        tuple((c - r) % m for c, r, m in zip(walker_states, reference_states, moduli)),
    )


def signed_wrap(x: int, cap: int) -> int:
    """Map any integer into the signed window [-(cap-1)//2, cap//2]."""
    half = (cap - 1) // 2
    return (x + half) % cap - half


def decode(code: ResidueCode) -> int:
    """Chinese-remainder reconstruction into the signed centred window.

    Returns the unique x in [-(C-1)//2, C//2] (C the product of the moduli)
    congruent to every residue; decode(encode(x)) == x within that window.
    """
    total = prod(code.moduli)
    acc = 0
    for r, m in zip(code.residues, code.moduli):
        others = total // m
        inv = pow(others, -1, m)
        acc = (acc + r * others * inv) % total
    return signed_wrap(acc, total)
