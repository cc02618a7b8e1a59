"""Von Neumann and Shannon entropies, mutual information, and CMI.

All values are in bits.  Conditional mutual information is the
four-entropy combination S(AC) + S(BC) - S(ABC) - S(C); plain mutual
information is the same formula with an empty conditioning set, so there
is a single code path and a single test surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .qmat import DensityMatrix, LayoutError, partial_trace

CMI_NEGATIVE_TOL = 1e-8
ENTROPY_CLAMP_TOL = 1e-8


class DistributionError(ValueError):
    """Probability vector failed validation."""


class SubadditivityError(ValueError):
    """CMI came out negative beyond tolerance: an upstream numerical bug."""


@dataclass(frozen=True)
class EntropyReport:
    """Entropy-like value in bits plus a flag for floored tiny negatives."""

    value: float
    clamped: bool = False


def _eig_probs(rho: DensityMatrix) -> np.ndarray:
    if rho.dim == 1:
        return np.array([1.0])
    vals = np.linalg.eigvalsh(rho.entries)
    return np.clip(np.real(vals), 0.0, None)


def _entropy_bits(probs: np.ndarray) -> float:
    p = probs[probs > 0.0]
    if p.size == 0:
        return 0.0
    return float(-(p * np.log2(p)).sum())


def von_neumann_entropy(rho: DensityMatrix, subset: Iterable[str] | None = None) -> EntropyReport:
    """Entropy in bits of the reduced state on ``subset`` (default: all)."""
    if subset is None:
        reduced = rho
    else:
        labels = rho.layout.require(subset)
        if not labels:
            return EntropyReport(0.0, False)
        reduced = rho if set(labels) == set(rho.layout.labels) else partial_trace(rho, labels)
    value = _entropy_bits(_eig_probs(reduced))
    clamped = False
    if value < 0.0:
        value, clamped = 0.0, True
    cap = math.log2(reduced.dim) if reduced.dim > 1 else 0.0
    if value > cap + ENTROPY_CLAMP_TOL:
        raise SubadditivityError(
            f"entropy {value} exceeds log2(dim)={cap} beyond tolerance"
        )
    return EntropyReport(min(value, cap) if value > cap else value, clamped)


def shannon_entropy(p: Sequence[float] | np.ndarray) -> float:
    """Shannon entropy in bits of a probability vector."""
    v = np.asarray(p, dtype=float)
    if v.size == 0:
        raise DistributionError("empty probability vector")
    if v.min() < -1e-12:
        raise DistributionError(f"negative probability {v.min()}")
    if abs(v.sum() - 1.0) > 1e-9:
        raise DistributionError(f"probabilities sum to {v.sum()}, not 1")
    return _entropy_bits(np.clip(v, 0.0, None))


def binary_entropy(p: float) -> float:
    """H2(p) in bits with the 0 log 0 = 0 convention."""
    if p < -1e-12 or p > 1 + 1e-12:
        raise DistributionError(f"binary probability {p} outside [0, 1]")
    p = min(max(p, 0.0), 1.0)
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * math.log2(p) - (1 - p) * math.log2(1 - p))


def _disjoint(*groups: tuple[str, ...]) -> None:
    seen: set[str] = set()
    for g in groups:
        overlap = seen & set(g)
        if overlap:
            raise LayoutError(f"label sets overlap on {sorted(overlap)}")
        seen |= set(g)


def conditional_mutual_information(
    rho: DensityMatrix,
    part_a: Iterable[str],
    part_b: Iterable[str],
    conditioning: Iterable[str] = (),
) -> EntropyReport:
    """I(A:B|C) in bits; C may be empty, giving plain mutual information.

    Tiny negatives in [-1e-8, 0) are clamped to 0 with the flag set;
    anything lower raises ``SubadditivityError`` since strong
    subadditivity forbids it on valid states.
    """
    a = rho.layout.require(part_a)
    b = rho.layout.require(part_b)
    c = rho.layout.require(conditioning)
    if not a or not b:
        raise LayoutError("both main label sets must be non-empty")
    _disjoint(a, b, c)
    s_ac = von_neumann_entropy(rho, a + c).value
    s_bc = von_neumann_entropy(rho, b + c).value
    s_abc = von_neumann_entropy(rho, a + b + c).value
    s_c = von_neumann_entropy(rho, c).value if c else 0.0
    value = s_ac + s_bc - s_abc - s_c
    clamped = False
    if value < 0.0:
        if value < -CMI_NEGATIVE_TOL:
            raise SubadditivityError(
                f"CMI {value} below -{CMI_NEGATIVE_TOL}: strong subadditivity violated"
            )
        value, clamped = 0.0, True
    return EntropyReport(value, clamped)


def mutual_information(rho: DensityMatrix, part_a: Iterable[str], part_b: Iterable[str]) -> EntropyReport:
    return conditional_mutual_information(rho, part_a, part_b, ())
