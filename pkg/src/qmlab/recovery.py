"""Recovery channels that rebuild a lost subsystem from a conditioning one.

Given a joint state on (E, B), the rotated-Petz channel with parameter s
maps operators on E to operators on E x B:

    X -> rho_EB^{(1+is)/2} (rho_E^{-(1+is)/2} X rho_E^{-(1-is)/2} x I_B) rho_EB^{(1-is)/2}

with all inverses taken on the support.  A grid search over s picks the
family member whose reconstruction lands closest in trace distance; the
achieved distance is what the attack reports consume, with the
sqrt(ln2 * CMI) bound recorded alongside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .qentropy import conditional_mutual_information
from .qmat import (
    DensityMatrix,
    LayoutError,
    SystemLayout,
    matrix_apply_spectral,
    partial_trace,
    reorder,
    trace_distance,
)

DEFAULT_GRID_LIMIT = 5.0
DEFAULT_GRID_STEP = 0.25
KRAUS_SUM_TOL = 1e-8


class SupportError(ValueError):
    """Channel input has mass outside the support the channel was built on."""


def default_grid() -> tuple[float, ...]:
    steps = int(round(2 * DEFAULT_GRID_LIMIT / DEFAULT_GRID_STEP)) + 1
    return tuple(float(-DEFAULT_GRID_LIMIT + k * DEFAULT_GRID_STEP) for k in range(steps))


def fr_bound(cmi_bits: float) -> float:
    """Trace-distance ceiling sqrt(ln 2 * CMI) for CMI in bits."""
    return math.sqrt(math.log(2.0) * max(cmi_bits, 0.0))


@dataclass(frozen=True)
class RecoveryChannel:
    """Kraus operators from E to E x B plus the rotation parameter.

    The Kraus sum equals the support projector of rho_E; kernel directions
    are completed to trace preservation by dump operators onto a sink
    basis state, counted in ``dump_rank``.
    """

    kraus_ops: tuple[np.ndarray, ...]
    e_layout: SystemLayout
    b_layout: SystemLayout
    rotation_param: float
    dump_rank: int = 0

    @property
    def in_dim(self) -> int:
        return self.e_layout.total_dim

    @property
    def out_dim(self) -> int:
        return self.e_layout.total_dim * self.b_layout.total_dim

    def kraus_sum(self) -> np.ndarray:
        acc = np.zeros((self.in_dim, self.in_dim), dtype=complex)
        for k in self.kraus_ops:
            acc += k.conj().T @ k
        return acc


def _power(mat: np.ndarray, exponent: complex) -> np.ndarray:
    return matrix_apply_spectral(mat, lambda x: x.astype(complex) ** exponent, "project")


def rotated_petz(
    rho_eb: DensityMatrix,
    e_labels: Sequence[str],
    b_labels: Sequence[str],
    s: float = 0.0,
) -> RecoveryChannel:
    """Rotated-Petz recovery channel for the given E/B split of ``rho_eb``."""
    e_labels = list(rho_eb.layout.require(e_labels))
    b_labels = list(rho_eb.layout.require(b_labels))
    if set(e_labels) | set(b_labels) != set(rho_eb.layout.labels):
        raise LayoutError("E and B labels must partition the joint state")
    ordered = reorder(rho_eb, e_labels + b_labels)
    e_layout = ordered.layout.subset(e_labels)
    b_layout = ordered.layout.subset(b_labels)
    de, db = e_layout.total_dim, b_layout.total_dim

    rho_e = partial_trace(ordered, e_labels).entries
    left = _power(ordered.entries, 0.5 * (1 + 1j * s))      # rho_EB^{(1+is)/2}
    right_e = _power(rho_e, -0.5 * (1 + 1j * s))            # rho_E^{-(1+is)/2}
    ops = []
    for j in range(db):
        inj = np.zeros((de * db, de), dtype=complex)
        inj[j::db, :] = np.eye(de)  # |e> -> |e>|j> in (E, B) ordering
        ops.append(left @ (inj @ right_e))

    # complete on the kernel of rho_E with dump operators onto |0...0, 0>
    support = matrix_apply_spectral(rho_e, lambda x: np.ones_like(x), "project")
    kernel_dim = de - int(round(np.real(np.trace(support))))
    dump_rank = 0
    if kernel_dim > 0:
        vals, vecs = np.linalg.eigh(rho_e)
        sink = np.zeros(de * db, dtype=complex)
        sink[0] = 1.0
        for idx in np.argsort(vals)[:kernel_dim]:
            dump = np.outer(sink, vecs[:, idx].conj())
            ops.append(dump)
            dump_rank += 1

    channel = RecoveryChannel(tuple(ops), e_layout, b_layout, float(s), dump_rank)
    dev = np.abs(channel.kraus_sum() - np.eye(de)).max()
    if dev > KRAUS_SUM_TOL:
        raise SupportError(f"Kraus completeness deviation {dev:.3e}")
    return channel


def apply_recovery(
    ch: RecoveryChannel,
    rho: DensityMatrix,
    e_labels: Sequence[str],
    b_labels: Sequence[str] | None = None,
) -> DensityMatrix:
    """Apply the channel to the E factors of ``rho``; appends fresh B labels.

    ``b_labels`` renames the reconstructed registers (default: the
    channel's B labels with a prime suffix).
    """
    e_labels = list(rho.layout.require(e_labels))
    if tuple(rho.layout.dim(l) for l in e_labels) != ch.e_layout.dims:
        raise LayoutError("E register dimensions do not match the channel")
    if b_labels is None:
        b_labels = [l + "'" for l in ch.b_layout.labels]
    b_labels = list(b_labels)
    if len(b_labels) != len(ch.b_layout.labels):
        raise LayoutError("wrong number of reconstructed register labels")

    rest = [l for l in rho.layout.labels if l not in e_labels]
    ordered = reorder(rho, rest + e_labels) if rest else reorder(rho, e_labels)
    dr = int(np.prod([rho.layout.dim(l) for l in rest], dtype=np.int64)) if rest else 1
    de = ch.in_dim
    deb = ch.out_dim
    src = ordered.entries.reshape(dr, de, dr, de)

    out = np.zeros((dr, deb, dr, deb), dtype=complex)
    for k in ch.kraus_ops:
        tmp = np.einsum("ab,ibjc->iajc", k, np.einsum("ibjd,cd->ibjc", src, k.conj()))
        out += tmp
    out_layout = SystemLayout(
        tuple((l, rho.layout.dim(l)) for l in rest)
        + tuple(zip(e_labels, ch.e_layout.dims))
        + tuple(zip(b_labels, ch.b_layout.dims))
    )
    d = out_layout.total_dim
    mat = out.reshape(d, d)
    tr = float(np.real(np.trace(mat)))
    if abs(tr - 1.0) > 1e-8:
        raise SupportError(f"recovered state trace {tr} off unit by more than 1e-8")
    mat = mat / tr
    vals = np.linalg.eigvalsh(mat)
    if vals.min() < -1e-8:
        raise SupportError(f"recovered state has eigenvalue {vals.min():.3e}")
    # clamp round-off and renormalize
    w, v = np.linalg.eigh(mat)
    w = np.clip(w, 0.0, None)
    mat = (v * w) @ v.conj().T
    mat /= np.real(np.trace(mat))
    return DensityMatrix(out_layout, mat, check_psd=False)


@dataclass(frozen=True)
class RecoveryResult:
    channel: RecoveryChannel
    achieved_td: float
    cmi_bits: float
    bound: float
    grid: tuple[float, ...]
    per_s_td: dict[float, float]


def best_recovery(
    rho_aeb: DensityMatrix,
    a_labels: Sequence[str],
    e_labels: Sequence[str],
    b_labels: Sequence[str],
    grid: Iterable[float] | None = None,
) -> RecoveryResult:
    """Grid-search the rotated-Petz family for the best reconstruction of B.

    The channel is built from rho_EB, applied to rho_AE, and judged by
    trace distance to the original rho_AEB.
    """
    a_labels = list(rho_aeb.layout.require(a_labels))
    e_labels = list(rho_aeb.layout.require(e_labels))
    b_labels = list(rho_aeb.layout.require(b_labels))
    if set(a_labels) | set(e_labels) | set(b_labels) != set(rho_aeb.layout.labels):
        raise LayoutError("A, E, B labels must partition the joint state")
    grid_t = tuple(float(s) for s in (grid if grid is not None else default_grid()))
    if not grid_t:
        raise ValueError("grid must be non-empty")

    cmi = conditional_mutual_information(rho_aeb, a_labels, b_labels, e_labels).value
    rho_eb = partial_trace(rho_aeb, e_labels + b_labels)
    rho_ae = partial_trace(rho_aeb, a_labels + e_labels)
    target = reorder(rho_aeb, a_labels + e_labels + b_labels)

    best_channel = None
    best_td = math.inf
    per_s: dict[float, float] = {}
    for s in grid_t:
        ch = rotated_petz(rho_eb, e_labels, b_labels, s)
        rebuilt = apply_recovery(ch, rho_ae, e_labels, b_labels=b_labels)
        td = trace_distance(reorder(rebuilt, a_labels + e_labels + b_labels), target)
        per_s[s] = td
        if td < best_td:
            best_td, best_channel = td, ch
    assert best_channel is not None
    return RecoveryResult(
        channel=best_channel,
        achieved_td=best_td,
        cmi_bits=cmi,
        bound=fr_bound(cmi),
        grid=grid_t,
        per_s_td=per_s,
    )
