"""Randomized property checks for the CMI helper identities.

These are exact theorems, so any violation above tolerance is a
build-blocking numerical bug rather than a statistical fluke.  Each check
generates states inside the theorem's hypothesis class, evaluates the
claimed inequality, and reports the worst violation seen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qmat
from .qentropy import conditional_mutual_information, von_neumann_entropy
from .qmat import DensityMatrix, MatrixValidationError, SystemLayout, apply_unitary, layout, partial_trace

ENTROPY_TOL = 1e-8
CLASSICAL_TOL = 1e-12


class PreconditionError(ValueError):
    """Inputs outside the hypothesis class of the checked statement."""


@dataclass(frozen=True)
class CheckResult:
    lemma_id: str
    trials: int
    max_violation: float
    passed: bool
    tolerance: float

    def to_json_dict(self) -> dict:
        return {
            "lemma_id": self.lemma_id,
            "trials": self.trials,
            "max_violation": self.max_violation,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }


def _result(lemma_id: str, trials: int, violations: list[float], tol: float) -> CheckResult:
    worst = max(violations) if violations else 0.0
    return CheckResult(lemma_id, trials, float(worst), bool(worst <= tol), tol)


def _separable_with_repeated_blocks(
    rng: np.random.Generator, t: int, terms: int = 4
) -> DensityMatrix:
    """Mixture of product states whose A-blocks repeat the same factor.

    Fully separable by construction, and exchanging any two A-blocks
    leaves every term invariant.
    """
    labels = [("B", 2), ("C", 2)] + [(f"A{i}", 2) for i in range(1, t + 1)]
    lay = SystemLayout(tuple(labels))
    probs = rng.dirichlet(np.ones(terms))
    acc = np.zeros((lay.total_dim, lay.total_dim), dtype=complex)
    for k in range(terms):
        factor_b = qmat.random_density(rng, layout(("B", 2))).entries
        factor_c = qmat.random_density(rng, layout(("C", 2))).entries
        factor_a = qmat.random_density(rng, layout(("A", 2))).entries
        term = np.kron(factor_b, factor_c)
        for _ in range(t):
            term = np.kron(term, factor_a)
        acc += probs[k] * term
    return DensityMatrix(lay, acc, check_psd=False)


def check_permutation_invariance(t: int, trials: int, seed: int) -> CheckResult:
    """Some conditioning prefix pushes the block-partner CMI below S(B)/t."""
    if not 1 <= t <= 6:
        raise PreconditionError("block count must keep the state desk-sized")
    rng = np.random.default_rng(seed)
    violations = []
    for _ in range(trials):
        rho = _separable_with_repeated_blocks(rng, t, terms=int(rng.integers(2, 9)))
        s_b = von_neumann_entropy(rho, ["B"]).value
        best = np.inf
        for i in range(t):
            prefix = [f"A{j}" for j in range(1, i + 1)]
            cmi = conditional_mutual_information(rho, [f"A{t}"], ["B"], ["C"] + prefix).value
            best = min(best, cmi)
        violations.append(max(0.0, best - s_b / t))
    return _result("permutation-prefix", trials, violations, ENTROPY_TOL)


def _random_channel_on(rng: np.random.Generator, rho: DensityMatrix, label: str) -> DensityMatrix:
    """Unitary with a fresh ancilla, then discard the ancilla."""
    anc = label + ".anc"
    anc_state = DensityMatrix(
        SystemLayout(((anc, 2),)), np.diag([1.0, 0.0]).astype(complex), check_psd=False
    )
    joint = qmat.tensor_product(rho, anc_state)
    u = qmat.random_unitary(rng, rho.layout.dim(label) * 2)
    joint = apply_unitary(joint, [label, anc], u)
    return partial_trace(joint, [l for l in joint.layout.labels if l != anc])


def check_local_op_monotonicity(trials: int, seed: int) -> CheckResult:
    """Channels on one side never increase conditional mutual information."""
    rng = np.random.default_rng(seed)
    lay = layout(("A", 2), ("B", 2), ("C", 2))
    violations = []
    for _ in range(trials):
        rho = qmat.random_density(rng, lay)
        before = conditional_mutual_information(rho, ["A"], ["B"], ["C"]).value
        after_state = _random_channel_on(rng, rho, "A")
        after = conditional_mutual_information(after_state, ["A"], ["B"], ["C"]).value
        violations.append(max(0.0, after - before))
    return _result("local-operation-monotone", trials, violations, ENTROPY_TOL)


def _classical_message_state(rng: np.random.Generator) -> DensityMatrix:
    """A = (W, MA) with MA classical and correlated blocks on (W, B, C)."""
    lay = layout(("W", 2), ("MA", 2), ("B", 2), ("C", 2), ("MB", 2), ("MC", 2))
    probs = rng.dirichlet(np.ones(2))
    acc = np.zeros((lay.total_dim, lay.total_dim), dtype=complex)
    for m in range(2):
        block = qmat.random_density(rng, layout(("W", 2), ("B", 2), ("C", 2))).entries
        proj = np.zeros((2, 2))
        proj[m, m] = 1.0
        zero = np.diag([1.0, 0.0])
        # assemble in layout order (W, MA, B, C, MB, MC)
        w_bc = block.reshape(2, 4, 2, 4)
        piece = np.einsum("iajb,mn->imajnb", w_bc, proj).reshape(16, 16)
        piece = np.kron(np.kron(piece, zero), zero)
        acc += probs[m] * piece
    return DensityMatrix(lay, acc, check_psd=False)


def _copy_classical_register(rho: DensityMatrix, src: str, dst: str) -> DensityMatrix:
    d = rho.layout.dim(src)
    if rho.layout.dim(dst) != d:
        raise PreconditionError("copy target must match the source dimension")
    red = partial_trace(rho, [src]).entries
    off = np.abs(red - np.diag(np.diagonal(red))).max()
    if off > 1e-9:
        raise PreconditionError(f"register {src} is not classical (off-diagonal {off:.2e})")
    perm = np.zeros((d * d, d * d))
    for a in range(d):
        for e in range(d):
            perm[a * d + (e + a) % d, a * d + e] = 1.0
    return apply_unitary(rho, [src, dst], perm)


def check_classical_broadcast(trials: int, seed: int) -> CheckResult:
    """Handing classical message copies to B and C never increases CMI."""
    rng = np.random.default_rng(seed)
    violations = []
    for _ in range(trials):
        rho = _classical_message_state(rng)
        before = conditional_mutual_information(rho, ["W", "MA"], ["B"], ["C"]).value
        sent = _copy_classical_register(rho, "MA", "MB")
        sent = _copy_classical_register(sent, "MA", "MC")
        after = conditional_mutual_information(sent, ["W", "MA"], ["B", "MB"], ["C", "MC"]).value
        violations.append(max(0.0, after - before))
        # copying a classical register must leave joint entropies alone
        s_all = von_neumann_entropy(sent, ["W", "MA", "MB"]).value
        s_first = von_neumann_entropy(sent, ["W", "MA"]).value
        s_second = von_neumann_entropy(sent, ["W", "MB"]).value
        violations.append(abs(s_all - s_first))
        violations.append(abs(s_all - s_second))
    return _result("classical-broadcast", trials, violations, ENTROPY_TOL)


def _random_sparse_distribution(rng: np.random.Generator, size: int) -> np.ndarray:
    mask = rng.random(size) < rng.uniform(0.3, 0.9)
    if not mask.any():
        mask[int(rng.integers(0, size))] = True
    raw = rng.random(size) * mask
    return raw / raw.sum()


def check_support_lemma(trials: int, seed: int) -> CheckResult:
    """Escape mass off the second support is at most twice the TV distance."""
    rng = np.random.default_rng(seed)
    violations = []
    for _ in range(trials):
        size = int(rng.integers(2, 13))
        dx = _random_sparse_distribution(rng, size)
        dy = _random_sparse_distribution(rng, size)
        escape = float(dx[dy <= 0.0].sum())
        tv = 0.5 * float(np.abs(dx - dy).sum())
        violations.append(max(0.0, escape - 2.0 * tv))
    return _result("support-escape", trials, violations, CLASSICAL_TOL)


def run_all_checks(trials: int, seed: int, t: int = 4) -> list[CheckResult]:
    """The four helper-lemma checks at a shared trial count."""
    return [
        check_permutation_invariance(t, trials, seed),
        check_local_op_monotonicity(trials, seed + 1),
        check_classical_broadcast(trials, seed + 2),
        check_support_lemma(trials, seed + 3),
    ]
