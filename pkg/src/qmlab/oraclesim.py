"""Purified random-oracle simulation.

A boolean oracle H on [2^n] is carried as an explicit function register of
dimension 2^(2^n) holding the uniform superposition over all tables, so
queries are unitaries and the compressed (Fourier database) view is a
basis change on that register.  The same engine also runs with a concrete
sampled table, in which case the function register is absent.

States are pure vectors over a labeled layout; classical randomness is
kept classical by copying coins into environment registers that views
trace out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .qmat import DensityMatrix, LayoutError, SystemLayout

ORACLE_N_CAP = 3
FUNCTION_REGISTER = "H"

HADAMARD = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / math.sqrt(2.0)


class OracleCapError(ValueError):
    """Oracle domain exponent beyond what dense simulation supports."""


class QueryModeError(ValueError):
    """Query mode incompatible with the state (e.g. classical on coherent)."""


class RecordConflictError(ValueError):
    """A query record contains contradictory input/output pairs."""


@dataclass(frozen=True)
class OracleFunction:
    """Concrete table of a boolean oracle on [2^n]."""

    n: int
    table: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "table", tuple(int(b) for b in self.table))
        if len(self.table) != 2**self.n:
            raise ValueError(f"table length {len(self.table)} is not 2^{self.n}")
        if any(b not in (0, 1) for b in self.table):
            raise ValueError("table entries must be bits")

    def value(self, x: int) -> int:
        return self.table[x]

    @property
    def index(self) -> int:
        """Integer encoding with bit x holding H(x)."""
        out = 0
        for x, b in enumerate(self.table):
            out |= b << x
        return out

    @classmethod
    def from_index(cls, n: int, index: int) -> "OracleFunction":
        return cls(n, tuple((index >> x) & 1 for x in range(2**n)))

    def to_json(self) -> dict:
        width = max(1, (2**self.n + 3) // 4)
        return {"n": self.n, "table_hex": format(self.index, f"0{width}x")}

    @classmethod
    def from_json(cls, doc: dict) -> "OracleFunction":
        return cls.from_index(int(doc["n"]), int(doc["table_hex"], 16))


def sample_oracle(n: int, seed: int | np.random.Generator) -> OracleFunction:
    """Uniform table under a seeded PRNG; same seed, same table."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return OracleFunction(n, tuple(int(b) for b in rng.integers(0, 2, size=2**n)))


def enumerate_oracles(n: int) -> Iterator[OracleFunction]:
    """All 2^(2^n) tables in index order; requires n <= ORACLE_N_CAP."""
    if n > ORACLE_N_CAP:
        raise OracleCapError(f"enumeration needs n <= {ORACLE_N_CAP}, got {n}")
    for idx in range(2 ** (2**n)):
        yield OracleFunction.from_index(n, idx)


@dataclass(frozen=True)
class QueryRecord:
    """Input/output pairs learned about an oracle; later duplicates ignored."""

    pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        seen: dict[int, int] = {}
        clean: list[tuple[int, int]] = []
        for x, y in self.pairs:
            x, y = int(x), int(y)
            if x in seen:
                if seen[x] != y:
                    raise RecordConflictError(f"conflicting outputs for input {x}")
                continue
            seen[x] = y
            clean.append((x, y))
        object.__setattr__(self, "pairs", tuple(clean))

    @property
    def inputs(self) -> frozenset[int]:
        return frozenset(x for x, _ in self.pairs)

    def as_dict(self) -> dict[int, int]:
        return dict(self.pairs)

    def merged(self, other: "QueryRecord") -> "QueryRecord":
        return QueryRecord(self.pairs + other.pairs)

    def consistent_with(self, h: OracleFunction) -> bool:
        return all(h.value(x) == y for x, y in self.pairs)


def reprogram_oracle(h: OracleFunction, record: QueryRecord) -> OracleFunction:
    """Patch ``h`` to agree with the record on its inputs; idempotent."""
    table = list(h.table)
    for x, y in record.pairs:
        if x >= len(table):
            raise ValueError(f"input {x} outside the oracle domain")
        table[x] = y
    return OracleFunction(h.n, tuple(table))


@dataclass(frozen=True)
class FourierDatabase:
    """Database vector D over the oracle domain; weight = popcount."""

    n: int
    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.bits) != 2**self.n:
            raise ValueError("database length must be 2^n")

    @property
    def weight(self) -> int:
        return sum(self.bits)

    @property
    def index(self) -> int:
        out = 0
        for x, b in enumerate(self.bits):
            out |= b << x
        return out


@dataclass(frozen=True)
class PurifiedOracleState:
    """Pure joint state of work registers and (optionally) the oracle.

    With ``oracle is None`` the layout ends in the function register and
    queries act on it; with a concrete ``oracle`` the function register is
    absent and queries consult the table directly.
    """

    layout: SystemLayout
    vector: np.ndarray
    n: int
    oracle: OracleFunction | None = None

    def __post_init__(self) -> None:
        v = np.asarray(self.vector, dtype=complex).reshape(-1)
        if v.size != self.layout.total_dim:
            raise LayoutError("vector length does not match layout")
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"state norm {norm} is not 1")
        if self.oracle is None:
            if self.layout.labels[-1] != FUNCTION_REGISTER:
                raise LayoutError("purified state must end in the function register")
            if self.layout.dim(FUNCTION_REGISTER) != 2 ** (2**self.n):
                raise LayoutError("function register dimension must be 2^(2^n)")
        elif FUNCTION_REGISTER in self.layout.labels:
            raise LayoutError("sampled-oracle state must not carry a function register")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    @property
    def work_labels(self) -> tuple[str, ...]:
        if self.oracle is None:
            return self.layout.labels[:-1]
        return self.layout.labels

    def tensor(self) -> np.ndarray:
        return self.vector.reshape(self.layout.dims)

    def reduced_density(self, keep: Iterable[str]) -> DensityMatrix:
        keep_labels = self.layout.require(keep)
        dims = self.layout.dims
        keep_idx = [self.layout.index(l) for l in keep_labels]
        drop_idx = [i for i in range(len(dims)) if i not in keep_idx]
        t = np.transpose(self.tensor(), keep_idx + drop_idx)
        kd = int(np.prod([dims[i] for i in keep_idx], dtype=np.int64)) if keep_idx else 1
        mat = t.reshape(kd, -1)
        return DensityMatrix(self.layout.subset(keep_labels), mat @ mat.conj().T, check_psd=False)

    def probabilities(self, labels: Sequence[str]) -> dict[tuple[int, ...], float]:
        """Born probabilities of computational-basis outcomes on ``labels``."""
        labels = list(labels)
        dims = self.layout.dims
        idx = [self.layout.index(l) for l in labels]
        rest = [i for i in range(len(dims)) if i not in idx]
        t = np.transpose(self.tensor(), idx + rest)
        flat = np.abs(t.reshape([dims[i] for i in idx] + [-1])) ** 2
        mass = flat.sum(axis=-1)
        out: dict[tuple[int, ...], float] = {}
        for multi, p in np.ndenumerate(mass):
            if p > 1e-15:
                out[tuple(int(v) for v in multi)] = float(p)
        return out


def init_purified_oracle(
    n: int, extra: SystemLayout | None = None, n_cap: int = ORACLE_N_CAP
) -> PurifiedOracleState:
    """All-zero work registers joined to the uniform oracle superposition."""
    if n > n_cap:
        raise OracleCapError(f"n={n} exceeds the function-register cap {n_cap}")
    extra = extra if extra is not None else SystemLayout(())
    hdim = 2 ** (2**n)
    lay = extra.concat(SystemLayout(((FUNCTION_REGISTER, hdim),)))
    vec = np.zeros(lay.total_dim, dtype=complex)
    vec = vec.reshape(extra.total_dim if extra.factors else 1, hdim)
    vec[0, :] = 1.0 / math.sqrt(hdim)
    return PurifiedOracleState(lay, vec.reshape(-1), n)


def init_sampled_state(n: int, extra: SystemLayout, oracle: OracleFunction) -> PurifiedOracleState:
    """All-zero work registers evolving under a fixed oracle table."""
    if oracle.n != n:
        raise ValueError("oracle domain exponent mismatch")
    vec = np.zeros(extra.total_dim, dtype=complex)
    vec[0] = 1.0
    return PurifiedOracleState(extra, vec, n, oracle=oracle)


def add_register(state: PurifiedOracleState, label: str, dim: int) -> PurifiedOracleState:
    """Adjoin a fresh |0> register (kept ahead of the function register)."""
    if label in state.layout.labels:
        raise LayoutError(f"register {label!r} already allocated")
    if state.oracle is None:
        work = state.layout.factors[:-1]
        tail = state.layout.factors[-1:]
    else:
        work, tail = state.layout.factors, ()
    lay = SystemLayout(work + ((label, int(dim)),) + tail)
    tail_dim = tail[0][1] if tail else 1
    v = state.vector.reshape(-1, tail_dim)
    out = np.zeros((v.shape[0], dim, tail_dim), dtype=complex)
    out[:, 0, :] = v
    return PurifiedOracleState(lay, out.reshape(-1), state.n, state.oracle)


def slice_register(state: PurifiedOracleState, label: str, value: int) -> PurifiedOracleState:
    """Drop a register by fixing its computational-basis value."""
    ax = state.layout.index(label)
    t = np.take(state.tensor(), int(value), axis=ax)
    norm = float(np.linalg.norm(t))
    if norm < 1e-12:
        raise ValueError("slicing onto a zero-probability value")
    lay = SystemLayout(tuple(f for f in state.layout.factors if f[0] != label))
    return PurifiedOracleState(lay, t.reshape(-1) / norm, state.n, state.oracle)


def _three_axis_view(state: PurifiedOracleState, in_label: str, out_label: str):
    dims = state.layout.dims
    in_ax = state.layout.index(in_label)
    out_ax = state.layout.index(out_label)
    if state.layout.dim(out_label) != 2:
        raise QueryModeError("query output register must be a qubit")
    axes = [in_ax, out_ax]
    if state.oracle is None:
        axes.append(state.layout.index(FUNCTION_REGISTER))
    rest = [i for i in range(len(dims)) if i not in axes]
    order = axes + rest
    t = np.transpose(state.tensor(), order).copy()
    lead = [dims[i] for i in axes]
    t = t.reshape(lead + [-1])
    return t, order, dims


def _untranspose(t: np.ndarray, order: list[int], dims: tuple[int, ...]) -> np.ndarray:
    t = t.reshape([dims[i] for i in order])
    inv = np.argsort(order)
    return np.transpose(t, inv).reshape(-1)


def _mapped_points(state: PurifiedOracleState, in_label: str, in_map) -> np.ndarray:
    d_in = state.layout.dim(in_label)
    domain = 2**state.n
    if in_map is None:
        if d_in > domain:
            raise QueryModeError(
                f"register {in_label} (dim {d_in}) exceeds oracle domain {domain}; pass in_map"
            )
        return np.arange(d_in)
    pts = np.array([int(in_map(v)) % domain for v in range(d_in)])
    return pts


def apply_query(
    state: PurifiedOracleState,
    mode: str,
    in_label: str | None,
    out_label: str,
    in_map: Callable[[int], int] | None = None,
    point: int | None = None,
) -> PurifiedOracleState:
    """One oracle query.

    ``phase`` multiplies the (x, y=1) branches by (-1)^{H(x)}; ``xor``
    writes H(x) into the output qubit; ``classical`` is xor after checking
    the input register is classical (diagonal reduced state), which is how
    measure-then-query appears in a purified run.  ``in_map`` lets the
    input register hold a value that designates the queried point
    indirectly; ``point`` queries a fixed point with no input register.
    """
    if mode not in ("phase", "xor", "classical"):
        raise QueryModeError(f"unknown query mode {mode!r}")
    if in_label is None:
        if point is None:
            raise QueryModeError("a query needs an input register or a fixed point")
        return _apply_fixed_point_query(state, mode, out_label, int(point))
    if mode == "classical":
        red = state.reduced_density([in_label]).entries
        off = np.abs(red - np.diag(np.diagonal(red))).max()
        if off > 1e-9:
            raise QueryModeError(
                f"classical query on a coherent input register (off-diagonal {off:.2e})"
            )
    points = _mapped_points(state, in_label, in_map)
    t, order, dims = _three_axis_view(state, in_label, out_label)
    d_in = dims[state.layout.index(in_label)]
    if state.oracle is None:
        hdim = 2 ** (2**state.n)
        harange = np.arange(hdim)
        bits = (harange[None, :] >> points[:, None]) & 1  # (d_in, hdim)
        if mode == "phase":
            sign = np.where(bits == 1, -1.0, 1.0)
            t[:, 1, :, :] = t[:, 1, :, :] * sign[:, :, None]
        else:
            for xv in range(d_in):
                flip = bits[xv] == 1
                flipped = t[xv, ::-1].copy()
                t[xv][:, flip, :] = flipped[:, flip, :]
    else:
        hvals = np.array([state.oracle.value(int(p)) for p in points])
        if mode == "phase":
            sign = np.where(hvals == 1, -1.0, 1.0)
            t[:, 1, :] = t[:, 1, :] * sign[:, None]
        else:
            for xv in range(d_in):
                if hvals[xv] == 1:
                    t[xv] = t[xv, ::-1].copy()
    vec = _untranspose(t, order, dims)
    return replace(state, vector=vec)


def _apply_fixed_point_query(
    state: PurifiedOracleState, mode: str, out_label: str, point: int
) -> PurifiedOracleState:
    if point >= 2**state.n:
        raise QueryModeError(f"point {point} outside the oracle domain")
    dims = state.layout.dims
    out_ax = state.layout.index(out_label)
    if dims[out_ax] != 2:
        raise QueryModeError("query output register must be a qubit")
    axes = [out_ax]
    if state.oracle is None:
        axes.append(state.layout.index(FUNCTION_REGISTER))
    rest = [i for i in range(len(dims)) if i not in axes]
    order = axes + rest
    t = np.transpose(state.tensor(), order).copy()
    t = t.reshape([dims[i] for i in axes] + [-1])
    if state.oracle is None:
        hdim = dims[axes[1]]
        bit = ((np.arange(hdim) >> point) & 1).astype(bool)
        if mode == "phase":
            t[1, bit, :] *= -1.0
        else:
            flipped = t[::-1].copy()
            t[:, bit, :] = flipped[:, bit, :]
    else:
        if state.oracle.value(point) == 1:
            if mode == "phase":
                t[1] *= -1.0
            else:
                t = t[::-1].copy()
    vec = _untranspose(t, order, dims)
    return replace(state, vector=vec)


def apply_unitary(state: PurifiedOracleState, labels: Sequence[str], u: np.ndarray) -> PurifiedOracleState:
    """Local unitary on the named registers (listed order)."""
    labels = list(labels)
    dims = state.layout.dims
    idx = [state.layout.index(l) for l in labels]
    rest = [i for i in range(len(dims)) if i not in idx]
    order = idx + rest
    t = np.transpose(state.tensor(), order)
    tdim = int(np.prod([dims[i] for i in idx], dtype=np.int64))
    u = np.asarray(u, dtype=complex)
    if u.shape != (tdim, tdim):
        raise LayoutError(f"unitary shape {u.shape} does not match target dim {tdim}")
    t = (u @ t.reshape(tdim, -1)).reshape([dims[i] for i in order])
    vec = _untranspose(t, order, dims)
    return replace(state, vector=vec)


def apply_classical_fn(
    state: PurifiedOracleState,
    srcs: Sequence[str],
    dst: str,
    fn: Callable[..., int],
) -> PurifiedOracleState:
    """|s, e> -> |s, e + fn(*s) mod d>: classical computation into ``dst``."""
    srcs = list(srcs)
    dims = state.layout.dims
    src_idx = [state.layout.index(l) for l in srcs]
    dst_idx = state.layout.index(dst)
    if dst_idx in src_idx:
        raise LayoutError("destination register cannot be a source")
    d_dst = dims[dst_idx]
    order = src_idx + [dst_idx] + [i for i in range(len(dims)) if i not in src_idx and i != dst_idx]
    t = np.transpose(state.tensor(), order)
    lead = [dims[i] for i in src_idx]
    t = t.reshape(lead + [d_dst, -1])
    out = np.empty_like(t)
    for multi in np.ndindex(*lead) if lead else [()]:
        shift = int(fn(*multi)) % d_dst
        out[multi] = np.roll(t[multi], shift, axis=0)
    vec = _untranspose(out, order, dims)
    return replace(state, vector=vec)


def copy_register(state: PurifiedOracleState, src: str, dst: str) -> PurifiedOracleState:
    """Generalized CNOT |x, e> -> |x, e + x mod d>; clones a fresh dst."""
    if state.layout.dim(dst) < state.layout.dim(src):
        raise LayoutError("copy destination must be at least as large as the source")
    return apply_classical_fn(state, [src], dst, lambda x: x)


def prepare_superposition(state: PurifiedOracleState, label: str, amplitudes: Sequence[complex]) -> PurifiedOracleState:
    """Rotate a fresh |0> register into the given amplitude vector."""
    amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
    d = state.layout.dim(label)
    if amps.size != d:
        raise LayoutError("amplitude vector length mismatch")
    amps = amps / np.linalg.norm(amps)
    u = completion_unitary(amps)
    return apply_unitary(state, [label], u)


def prepare_controlled(
    state: PurifiedOracleState,
    controls: Sequence[str],
    target: str,
    amps_fn: Callable[..., Sequence[complex]],
) -> PurifiedOracleState:
    """Per-control-value rotation of a fresh target register."""
    controls = list(controls)
    cdims = [state.layout.dim(c) for c in controls]
    d = state.layout.dim(target)
    cdim = int(np.prod(cdims, dtype=np.int64))
    blocks = []
    for multi in np.ndindex(*cdims):
        amps = np.asarray(amps_fn(*multi), dtype=complex).reshape(-1)
        if amps.size != d:
            raise LayoutError("controlled amplitude vector length mismatch")
        blocks.append(completion_unitary(amps / np.linalg.norm(amps)))
    u = np.zeros((cdim * d, cdim * d), dtype=complex)
    for k, b in enumerate(blocks):
        u[k * d : (k + 1) * d, k * d : (k + 1) * d] = b
    return apply_unitary(state, controls + [target], u)


def completion_unitary(first_column: np.ndarray) -> np.ndarray:
    """Unitary whose first column is the given unit vector (Gram-Schmidt)."""
    d = first_column.size
    cols = [first_column]
    for k in range(d):
        if len(cols) == d:
            break
        v = np.zeros(d, dtype=complex)
        v[k] = 1.0
        for c in cols:
            v = v - np.vdot(c, v) * c
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            cols.append(v / norm)
    return np.stack(cols, axis=1)


def measure(
    state: PurifiedOracleState, labels: Sequence[str], rng: np.random.Generator
) -> tuple[tuple[int, ...], PurifiedOracleState]:
    """Sample a computational-basis outcome and collapse onto it."""
    probs = state.probabilities(labels)
    outcomes = sorted(probs)
    weights = np.array([probs[o] for o in outcomes])
    pick = outcomes[int(rng.choice(len(outcomes), p=weights / weights.sum()))]
    return pick, project(state, labels, pick)


def project(
    state: PurifiedOracleState, labels: Sequence[str], values: Sequence[int]
) -> PurifiedOracleState:
    """Project onto given outcome values and renormalize."""
    labels = list(labels)
    dims = state.layout.dims
    t = state.tensor().copy()
    for l, v in zip(labels, values):
        ax = state.layout.index(l)
        sl = [slice(None)] * len(dims)
        keepers = np.zeros(dims[ax], dtype=bool)
        keepers[int(v)] = True
        sl[ax] = ~keepers
        t[tuple(sl)] = 0.0
    vec = t.reshape(-1)
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        raise ValueError("projection onto a zero-probability outcome")
    return replace(state, vector=vec / norm)


def _fourier_matrix_view(state: PurifiedOracleState) -> np.ndarray:
    """Amplitudes as (work, database) with the oracle axis in the Fourier basis."""
    if state.oracle is not None:
        raise QueryModeError("fourier view needs a purified oracle register")
    hdim = state.layout.dim(FUNCTION_REGISTER)
    mat = state.vector.reshape(-1, hdim).copy()
    # normalized WHT column-wise over the function-value coordinates
    h = 1
    while h < hdim:
        mat = mat.reshape(-1, hdim)
        blocks = mat.reshape(mat.shape[0], -1, 2 * h)
        x = blocks[:, :, :h].copy()
        y = blocks[:, :, h:].copy()
        blocks[:, :, :h] = x + y
        blocks[:, :, h:] = x - y
        h *= 2
    mat = mat.reshape(-1, hdim) / math.sqrt(hdim)
    return mat


def fourier_support_weights(state: PurifiedOracleState) -> dict[int, float]:
    """Probability mass on each database Hamming weight |D|."""
    mat = _fourier_matrix_view(state)
    hdim = mat.shape[1]
    mass = (np.abs(mat) ** 2).sum(axis=0)
    out: dict[int, float] = {}
    for d in range(hdim):
        w = bin(d).count("1")
        out[w] = out.get(w, 0.0) + float(mass[d])
    return {w: m for w, m in sorted(out.items()) if m > 0 or w == 0}


def fourier_branch_overlaps(state: PurifiedOracleState, mass_floor: float = 1e-12):
    """Gram matrix of the work-register branches attached to each database.

    Returns (database indices, gram) for databases above the mass floor;
    off-diagonal entries vanish for parallel-query circuits.
    """
    mat = _fourier_matrix_view(state)
    mass = (np.abs(mat) ** 2).sum(axis=0)
    keep = np.where(mass > mass_floor)[0]
    branches = mat[:, keep]
    gram = branches.conj().T @ branches
    return keep, gram
