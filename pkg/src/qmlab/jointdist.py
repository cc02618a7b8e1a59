"""Sparse labeled joint distributions over integer-valued registers.

The classical counterpart of a density matrix: protocol enumeration and
the eavesdropper pipelines assemble these for states that are diagonal in
the computational basis, where Shannon quantities replace eigensolves and
supports stay enumerable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

CLASSICAL_TOL = 1e-12


@dataclass(frozen=True)
class JointDistribution:
    """Probability table over named integer registers."""

    registers: tuple[str, ...]
    table: tuple[tuple[tuple[int, ...], float], ...]

    def __post_init__(self) -> None:
        merged: dict[tuple[int, ...], float] = {}
        for key, p in self.table:
            if p < -CLASSICAL_TOL:
                raise ValueError(f"negative probability {p}")
            if len(key) != len(self.registers):
                raise ValueError("key arity does not match registers")
            if p > 0.0:
                merged[tuple(int(v) for v in key)] = merged.get(tuple(key), 0.0) + p
        total = sum(merged.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mass {total} is not 1")
        object.__setattr__(self, "table", tuple(sorted(merged.items())))

    @classmethod
    def from_dict(cls, registers: Sequence[str], probs: Mapping[tuple[int, ...], float]) -> "JointDistribution":
        return cls(tuple(registers), tuple(probs.items()))

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return dict(self.table)

    def _indices(self, labels: Sequence[str]) -> list[int]:
        out = []
        for l in labels:
            if l not in self.registers:
                raise KeyError(f"unknown register {l!r}")
            out.append(self.registers.index(l))
        return out

    def marginal(self, labels: Sequence[str]) -> "JointDistribution":
        idx = self._indices(labels)
        acc: dict[tuple[int, ...], float] = {}
        for key, p in self.table:
            sub = tuple(key[i] for i in idx)
            acc[sub] = acc.get(sub, 0.0) + p
        return JointDistribution(tuple(labels), tuple(acc.items()))

    def entropy(self, labels: Sequence[str] | None = None) -> float:
        """Shannon entropy in bits of the marginal on ``labels``."""
        dist = self if labels is None else self.marginal(labels)
        return float(-sum(p * math.log2(p) for _, p in dist.table if p > 0))

    def cmi(self, part_a: Sequence[str], part_b: Sequence[str], conditioning: Sequence[str] = ()) -> float:
        """I(A:B|C) in bits; tiny negatives are floored at 0."""
        a, b, c = tuple(part_a), tuple(part_b), tuple(conditioning)
        overlap = (set(a) & set(b)) | (set(a) & set(c)) | (set(b) & set(c))
        if overlap:
            raise ValueError(f"label sets overlap on {sorted(overlap)}")
        value = (
            self.entropy(a + c)
            + self.entropy(b + c)
            - self.entropy(a + b + c)
            - (self.entropy(c) if c else 0.0)
        )
        if value < -1e-9:
            raise ValueError(f"classical CMI {value} negative beyond tolerance")
        return max(value, 0.0)

    def condition(self, assignment: Mapping[str, int]) -> "JointDistribution":
        """Posterior after observing the given register values."""
        idx = {self.registers.index(l): int(v) for l, v in assignment.items()}
        rows = [(key, p) for key, p in self.table if all(key[i] == v for i, v in idx.items())]
        mass = sum(p for _, p in rows)
        if mass <= 0.0:
            raise ValueError("conditioning on a zero-probability event")
        return JointDistribution(self.registers, tuple((k, p / mass) for k, p in rows))

    def support(self, labels: Sequence[str] | None = None) -> frozenset[tuple[int, ...]]:
        dist = self if labels is None else self.marginal(labels)
        return frozenset(k for k, p in dist.table if p > CLASSICAL_TOL)

    def probability(self, assignment: Mapping[str, int]) -> float:
        idx = {self.registers.index(l): int(v) for l, v in assignment.items()}
        return sum(p for key, p in self.table if all(key[i] == v for i, v in idx.items()))

    def sample(self, rng: np.random.Generator) -> dict[str, int]:
        keys = [k for k, _ in self.table]
        probs = np.array([p for _, p in self.table])
        pick = keys[int(rng.choice(len(keys), p=probs / probs.sum()))]
        return dict(zip(self.registers, pick))

    def tv_distance(self, other: "JointDistribution") -> float:
        if self.registers != other.registers:
            raise ValueError("registers must match for total variation")
        mine, theirs = self.as_dict(), other.as_dict()
        keys = set(mine) | set(theirs)
        return 0.5 * sum(abs(mine.get(k, 0.0) - theirs.get(k, 0.0)) for k in keys)

    def escape_probability(self, other: "JointDistribution") -> float:
        """Mass this distribution puts outside the support of ``other``."""
        sup = other.support()
        return sum(p for k, p in self.table if k not in sup)

    def to_density(self, dims: Mapping[str, int]):
        """Embed as a diagonal density matrix (for quantum cross-checks)."""
        from .qmat import DensityMatrix, SystemLayout

        lay = SystemLayout(tuple((l, int(dims[l])) for l in self.registers))
        diag = np.zeros(lay.total_dim)
        strides = np.cumprod([1] + [lay.dim(l) for l in reversed(self.registers)])[:-1][::-1]
        for key, p in self.table:
            flat = int(sum(v * s for v, s in zip(key, strides)))
            diag[flat] += p
        return DensityMatrix(lay, np.diag(diag.astype(complex)), check_psd=False)
