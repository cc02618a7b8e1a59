"""Dense complex linear algebra over labeled multi-register Hilbert spaces.

Every state in this package is carried by a :class:`DensityMatrix` (or a
:class:`PureState`) over a :class:`SystemLayout` that names its tensor
factors.  All operations are pure functions over immutable values; the
factor order of a layout is the canonical order for exchange between
modules.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
EIGENVALUE_FLOOR = -1e-9
DEFAULT_DIM_CAP = 2**14


class LayoutError(ValueError):
    """Bad register labels or incompatible layouts."""


class MatrixValidationError(ValueError):
    """A matrix failed a structural invariant (hermiticity, trace, spectrum)."""


class SingularityError(ValueError):
    """A spectral function is undefined on the kernel of its argument."""


def dim_cap() -> int:
    """Total-dimension cap for layouts; QML_DIM_CAP overrides the default."""
    raw = os.environ.get("QML_DIM_CAP")
    return int(raw) if raw else DEFAULT_DIM_CAP


@dataclass(frozen=True)
class SystemLayout:
    """Ordered named tensor factors (label, dimension)."""

    factors: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "factors", tuple((str(l), int(d)) for l, d in self.factors))
        labels = [l for l, _ in self.factors]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"duplicate register labels in {labels}")
        if any(d < 1 for _, d in self.factors):
            raise LayoutError("register dimensions must be positive")
        if self.total_dim > dim_cap():
            raise LayoutError(
                f"total dimension {self.total_dim} exceeds cap {dim_cap()}"
            )

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.factors)

    @property
    def total_dim(self) -> int:
        out = 1
        for _, d in self.factors:
            out *= d
        return out

    def dim(self, label: str) -> int:
        for l, d in self.factors:
            if l == label:
                return d
        raise LayoutError(f"unknown register {label!r}")

    def index(self, label: str) -> int:
        for i, (l, _) in enumerate(self.factors):
            if l == label:
                return i
        raise LayoutError(f"unknown register {label!r}")

    def require(self, labels: Iterable[str]) -> tuple[str, ...]:
        """Return the given labels in canonical (layout) order."""
        wanted = set(labels)
        missing = wanted - set(self.labels)
        if missing:
            raise LayoutError(f"unknown registers {sorted(missing)}")
        return tuple(l for l in self.labels if l in wanted)

    def subset(self, labels: Iterable[str]) -> "SystemLayout":
        keep = self.require(labels)
        return SystemLayout(tuple((l, self.dim(l)) for l in keep))

    def concat(self, other: "SystemLayout") -> "SystemLayout":
        overlap = set(self.labels) & set(other.labels)
        if overlap:
            raise LayoutError(f"register labels collide: {sorted(overlap)}")
        return SystemLayout(self.factors + other.factors)


def layout(*factors: tuple[str, int]) -> SystemLayout:
    """Convenience constructor: ``layout(("a", 2), ("b", 3))``."""
    return SystemLayout(tuple(factors))


@dataclass(frozen=True)
class HermitianEigenDecomposition:
    """Eigenvalues sorted descending with matching eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def _as_complex_matrix(entries: np.ndarray | Sequence) -> np.ndarray:
    m = np.asarray(entries, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise MatrixValidationError(f"expected a square matrix, got shape {m.shape}")
    return m


def _check_hermitian(m: np.ndarray, tol: float = HERMITICITY_TOL) -> None:
    dev = np.abs(m - m.conj().T).max() if m.size else 0.0
    if dev > tol:
        raise MatrixValidationError(f"matrix is not Hermitian (deviation {dev:.3e})")


def hermitian_eig(m: np.ndarray | Sequence) -> HermitianEigenDecomposition:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending."""
    mat = _as_complex_matrix(m)
    _check_hermitian(mat)
    vals, vecs = np.linalg.eigh(mat)
    order = np.argsort(vals)[::-1]
    return HermitianEigenDecomposition(np.real(vals[order]), vecs[:, order])


@dataclass(frozen=True)
class DensityMatrix:
    """Positive semidefinite, unit-trace complex matrix over a labeled layout.

    Construction validates hermiticity and trace; the spectrum check (all
    eigenvalues above ``EIGENVALUE_FLOOR``) runs unless ``check_psd=False``
    is passed for results that are positive by construction.
    """

    layout: SystemLayout
    entries: np.ndarray
    check_psd: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self) -> None:
        m = _as_complex_matrix(self.entries)
        if m.shape[0] != self.layout.total_dim:
            raise LayoutError(
                f"matrix side {m.shape[0]} does not match layout dimension "
                f"{self.layout.total_dim}"
            )
        _check_hermitian(m)
        tr = float(np.real(np.trace(m)))
        if abs(tr - 1.0) > TRACE_TOL:
            raise MatrixValidationError(f"trace {tr} is not 1 within {TRACE_TOL}")
        if self.check_psd:
            lo = float(np.linalg.eigvalsh(m).min()) if m.shape[0] > 1 else float(np.real(m[0, 0]))
            if lo < EIGENVALUE_FLOOR:
                raise MatrixValidationError(
                    f"negative eigenvalue {lo:.3e} below floor {EIGENVALUE_FLOOR}"
                )
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    def tensor_view(self) -> np.ndarray:
        """Entries reshaped to one axis pair per factor (kets then bras)."""
        dims = self.layout.dims
        return self.entries.reshape(dims + dims)

    def validate(self) -> None:
        """Re-run the full invariant check including the spectrum."""
        DensityMatrix(self.layout, self.entries, check_psd=True)


def density(layout_: SystemLayout, entries: np.ndarray, *, trusted: bool = False) -> DensityMatrix:
    return DensityMatrix(layout_, entries, check_psd=not trusted)


@dataclass(frozen=True)
class PureState:
    """Normalized state vector over a labeled layout."""

    layout: SystemLayout
    vector: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.vector, dtype=complex).reshape(-1)
        if v.size != self.layout.total_dim:
            raise LayoutError("vector length does not match layout dimension")
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-9:
            raise MatrixValidationError(f"vector norm {norm} is not 1")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    def to_density(self) -> DensityMatrix:
        return DensityMatrix(self.layout, np.outer(self.vector, self.vector.conj()), check_psd=False)

    def reduced(self, keep: Iterable[str]) -> DensityMatrix:
        """Reduced density matrix on ``keep`` without forming the full matrix."""
        keep_labels = self.layout.require(keep)
        dims = self.layout.dims
        keep_idx = [self.layout.index(l) for l in keep_labels]
        drop_idx = [i for i in range(len(dims)) if i not in keep_idx]
        t = self.vector.reshape(dims)
        t = np.transpose(t, keep_idx + drop_idx)
        kd = int(np.prod([dims[i] for i in keep_idx], dtype=np.int64)) if keep_idx else 1
        mat = t.reshape(kd, -1)
        rho = mat @ mat.conj().T
        return DensityMatrix(self.layout.subset(keep_labels), rho, check_psd=False)


def tensor_product(a: DensityMatrix, b: DensityMatrix) -> DensityMatrix:
    """Kronecker product of two states on disjoint register sets."""
    lay = a.layout.concat(b.layout)
    return DensityMatrix(lay, np.kron(a.entries, b.entries), check_psd=False)


def partial_trace(rho: DensityMatrix, keep: Iterable[str]) -> DensityMatrix:
    """Trace out every factor not named in ``keep`` (canonical order kept)."""
    keep_labels = rho.layout.require(keep)
    dims = rho.layout.dims
    n = len(dims)
    t = rho.tensor_view()
    # Trace highest-index dropped factors first so axis numbers stay valid.
    drop = [i for i in range(n) if rho.layout.labels[i] not in keep_labels]
    remaining = n
    for i in sorted(drop, reverse=True):
        t = np.trace(t, axis1=i, axis2=i + remaining)
        remaining -= 1
    new_layout = rho.layout.subset(keep_labels)
    d = new_layout.total_dim
    return DensityMatrix(new_layout, t.reshape(d, d), check_psd=False)


def matrix_apply_spectral(
    m: np.ndarray | Sequence,
    f: Callable[[np.ndarray], np.ndarray],
    null_policy: str = "project",
    support_tol: float = 1e-12,
) -> np.ndarray:
    """Apply a scalar function to a PSD matrix through its eigenbasis.

    Eigenvalues in ``[EIGENVALUE_FLOOR, 0)`` are clamped to 0 first; anything
    below the floor raises.  Under ``null_policy="project"`` the function
    acts on the support only and the kernel maps to 0; under ``"error"`` a
    kernel eigenvalue where ``f`` is undefined raises ``SingularityError``.
    """
    if null_policy not in ("project", "error"):
        raise ValueError(f"unknown null_policy {null_policy!r}")
    eig = hermitian_eig(m)
    vals = eig.eigenvalues.copy()
    if vals.size and vals.min() < EIGENVALUE_FLOOR:
        raise MatrixValidationError(
            f"eigenvalue {vals.min():.3e} below floor; not a PSD input"
        )
    vals[vals < 0] = 0.0
    kernel = vals <= support_tol
    if kernel.any() and null_policy == "error":
        try:
            with np.errstate(all="ignore"):
                probe = np.asarray(f(np.array([0.0])))
        except (ZeroDivisionError, FloatingPointError, ValueError) as exc:
            raise SingularityError("function undefined on a kernel eigenvalue") from exc
        if not np.all(np.isfinite(probe)):
            raise SingularityError("function undefined on a kernel eigenvalue")
    fvals = np.zeros(vals.shape, dtype=complex)
    if (~kernel).any():
        fvals[~kernel] = np.asarray(f(vals[~kernel]), dtype=complex)
    if kernel.any() and null_policy == "error":
        fvals[kernel] = np.asarray(f(np.zeros(int(kernel.sum()))), dtype=complex)
    v = eig.eigenvectors
    return (v * fvals) @ v.conj().T


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """Half the trace norm of the difference; requires identical layouts."""
    if a.layout != b.layout:
        raise LayoutError("trace distance needs identical layouts")
    diff = a.entries - b.entries
    vals = np.linalg.eigvalsh(diff)
    return float(0.5 * np.abs(vals).sum())


def purify(rho: DensityMatrix, ancilla_label: str) -> PureState:
    """Purify with an ancilla of equal dimension appended to the layout."""
    if ancilla_label in rho.layout.labels:
        raise LayoutError(f"ancilla label {ancilla_label!r} already in layout")
    eig = hermitian_eig(rho.entries)
    vals = np.clip(eig.eigenvalues, 0.0, None)
    d = rho.dim
    # vec[a, i] = sqrt(eta_i) <a|phi_i>, ancilla index i appended last
    vec = (eig.eigenvectors * np.sqrt(vals)).reshape(-1)
    lay = rho.layout.concat(SystemLayout(((ancilla_label, d),)))
    vec = vec / np.linalg.norm(vec)
    return PureState(lay, vec)


def apply_unitary(rho: DensityMatrix, labels: Sequence[str], u: np.ndarray) -> DensityMatrix:
    """Conjugate by a unitary acting on the named factors (in listed order)."""
    big = embed_operator(rho.layout, labels, u)
    return DensityMatrix(rho.layout, big @ rho.entries @ big.conj().T, check_psd=False)


def embed_operator(lay: SystemLayout, labels: Sequence[str], op: np.ndarray) -> np.ndarray:
    """Embed an operator on the named factors into the full space.

    ``op`` acts on the tensor product of the named registers in the order
    listed, which may differ from layout order.
    """
    labels = list(labels)
    if len(set(labels)) != len(labels):
        raise LayoutError("repeated labels in operator target")
    for l in labels:
        lay.dim(l)
    dims = lay.dims
    n = len(dims)
    target_idx = [lay.index(l) for l in labels]
    tdim = int(np.prod([dims[i] for i in target_idx], dtype=np.int64))
    op = np.asarray(op, dtype=complex)
    if op.shape != (tdim, tdim):
        raise LayoutError(f"operator shape {op.shape} does not match target dim {tdim}")
    rest_idx = [i for i in range(n) if i not in target_idx]
    perm = target_idx + rest_idx
    inv = np.argsort(perm)
    full = np.kron(op, np.eye(int(np.prod([dims[i] for i in rest_idx], dtype=np.int64))))
    # full acts on (targets, rest); rewire it to layout order.
    pdims = [dims[i] for i in perm]
    t = full.reshape(pdims + pdims)
    t = np.transpose(t, list(inv) + [n + i for i in inv])
    d = lay.total_dim
    return t.reshape(d, d)


def reorder(rho: DensityMatrix, new_order: Sequence[str]) -> DensityMatrix:
    """Permute the tensor factors into the given label order."""
    if set(new_order) != set(rho.layout.labels) or len(new_order) != len(rho.layout.labels):
        raise LayoutError("new order must be a permutation of the layout labels")
    dims = rho.layout.dims
    n = len(dims)
    perm = [rho.layout.index(l) for l in new_order]
    t = rho.tensor_view()
    t = np.transpose(t, perm + [n + p for p in perm])
    new_layout = SystemLayout(tuple((l, rho.layout.dim(l)) for l in new_order))
    d = new_layout.total_dim
    return DensityMatrix(new_layout, t.reshape(d, d), check_psd=False)


def random_unitary(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Haar-ish random unitary from the QR of a Ginibre matrix."""
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(g)
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))


def random_density(rng: np.random.Generator, lay: SystemLayout, rank: int | None = None) -> DensityMatrix:
    """Random mixed state (Ginibre ensemble) of optional bounded rank."""
    d = lay.total_dim
    r = rank if rank is not None else d
    g = rng.normal(size=(d, r)) + 1j * rng.normal(size=(d, r))
    m = g @ g.conj().T
    return DensityMatrix(lay, m / np.real(np.trace(m)), check_psd=False)


def random_pure(rng: np.random.Generator, lay: SystemLayout) -> PureState:
    v = rng.normal(size=lay.total_dim) + 1j * rng.normal(size=lay.total_dim)
    return PureState(lay, v / np.linalg.norm(v))
