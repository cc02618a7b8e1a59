"""Tests for entropies and conditional mutual information."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmlab import qmat
from qmlab.qentropy import (
    DistributionError,
    SubadditivityError,
    binary_entropy,
    conditional_mutual_information,
    mutual_information,
    shannon_entropy,
    von_neumann_entropy,
)
from qmlab.qmat import DensityMatrix, LayoutError, PureState, layout, tensor_product


def qubit_layout(*names):
    return layout(*((n, 2) for n in names))


def ghz(lay):
    v = np.zeros(lay.total_dim, dtype=complex)
    v[0] = v[-1] = 1 / np.sqrt(2)
    return PureState(lay, v).to_density()


class TestVonNeumann:
    def test_pure_state_zero(self):
        rng = np.random.default_rng(0)
        psi = qmat.random_pure(rng, qubit_layout("a", "b"))
        assert von_neumann_entropy(psi.to_density()).value == pytest.approx(0.0, abs=1e-10)

    def test_maximally_mixed_one_bit(self):
        rho = DensityMatrix(qubit_layout("a"), np.eye(2) / 2)
        assert von_neumann_entropy(rho).value == pytest.approx(1.0)

    def test_classical_quantum_mixture_identity(self):
        # S(sum_k p_k |k><k| x rho_k) = H(p) + sum_k p_k S(rho_k), two branches
        rng = np.random.default_rng(1)
        lay_b = qubit_layout("b")
        rho0 = qmat.random_density(rng, lay_b)
        rho1 = qmat.random_density(rng, lay_b)
        p = 0.3
        m = np.zeros((4, 4), dtype=complex)
        m[:2, :2] = p * rho0.entries
        m[2:, 2:] = (1 - p) * rho1.entries
        joint = DensityMatrix(layout(("k", 2), ("b", 2)), m)
        expected = (
            binary_entropy(p)
            + p * von_neumann_entropy(rho0).value
            + (1 - p) * von_neumann_entropy(rho1).value
        )
        assert von_neumann_entropy(joint).value == pytest.approx(expected, abs=1e-10)

    def test_subset_entropy(self):
        rho = ghz(qubit_layout("a", "b", "c"))
        assert von_neumann_entropy(rho, ["a"]).value == pytest.approx(1.0)
        assert von_neumann_entropy(rho, ["a", "b", "c"]).value == pytest.approx(0.0, abs=1e-9)

    def test_invalid_subset(self):
        rho = ghz(qubit_layout("a", "b", "c"))
        with pytest.raises(LayoutError):
            von_neumann_entropy(rho, ["nope"])


class TestShannon:
    def test_binary_half(self):
        assert binary_entropy(0.5) == pytest.approx(1.0)

    def test_point_mass(self):
        assert shannon_entropy([1.0, 0.0, 0.0]) == pytest.approx(0.0)

    def test_dyadic(self):
        assert shannon_entropy([0.5, 0.25, 0.25]) == pytest.approx(1.5)

    def test_endpoints(self):
        assert binary_entropy(0.0) == 0.0
        assert binary_entropy(1.0) == 0.0

    def test_invalid_distribution(self):
        with pytest.raises(DistributionError):
            shannon_entropy([0.7, 0.7])
        with pytest.raises(DistributionError):
            shannon_entropy([1.2, -0.2])

    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_binary_entropy_bounded(self, p):
        h = binary_entropy(p)
        assert 0.0 <= h <= 1.0 + 1e-12

    @given(st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=1, max_size=8))
    @settings(max_examples=60)
    def test_uniform_maximizes(self, weights):
        v = np.array(weights) / np.sum(weights)
        assert shannon_entropy(v) <= np.log2(v.size) + 1e-9


class TestCMI:
    def test_product_state_zero(self):
        rng = np.random.default_rng(5)
        a = qmat.random_density(rng, qubit_layout("a"))
        b = qmat.random_density(rng, qubit_layout("b"))
        c = qmat.random_density(rng, qubit_layout("c"))
        rho = tensor_product(tensor_product(a, b), c)
        rep = conditional_mutual_information(rho, ["a"], ["b"], ["c"])
        assert rep.value == pytest.approx(0.0, abs=1e-9)

    def test_bell_pair_two_bits(self):
        lay = qubit_layout("a", "b")
        v = np.zeros(4, dtype=complex)
        v[0] = v[3] = 1 / np.sqrt(2)
        rho = PureState(lay, v).to_density()
        assert mutual_information(rho, ["a"], ["b"]).value == pytest.approx(2.0, abs=1e-9)

    def test_ghz_one_bit(self):
        rho = ghz(qubit_layout("a", "b", "c"))
        rep = conditional_mutual_information(rho, ["a"], ["b"], ["c"])
        assert rep.value == pytest.approx(1.0, abs=1e-9)

    def test_overlapping_sets_rejected(self):
        rho = ghz(qubit_layout("a", "b", "c"))
        with pytest.raises(LayoutError):
            conditional_mutual_information(rho, ["a"], ["a"], ["c"])

    def test_non_negative_on_random_states(self):
        rng = np.random.default_rng(8)
        lay = qubit_layout("a", "b", "c")
        for _ in range(100):
            rho = qmat.random_density(rng, lay)
            rep = conditional_mutual_information(rho, ["a"], ["b"], ["c"])
            assert rep.value >= 0.0

    def test_unitary_invariance(self):
        rng = np.random.default_rng(9)
        lay = qubit_layout("a", "b", "c")
        for _ in range(25):
            rho = qmat.random_density(rng, lay)
            u = qmat.random_unitary(rng, 2)
            rotated = qmat.apply_unitary(rho, ["a"], u)
            s0 = von_neumann_entropy(rho, ["a"]).value
            s1 = von_neumann_entropy(rotated, ["a"]).value
            assert abs(s0 - s1) <= 1e-9
            c0 = conditional_mutual_information(rho, ["a"], ["b"], ["c"]).value
            c1 = conditional_mutual_information(rotated, ["a"], ["b"], ["c"]).value
            assert abs(c0 - c1) <= 1e-9

    def test_separable_conditional_entropy_positive(self):
        # classical-quantum states have S(B|A) >= 0
        rng = np.random.default_rng(10)
        for _ in range(25):
            probs = rng.dirichlet(np.ones(2))
            blocks = [qmat.random_density(rng, qubit_layout("b")).entries for _ in range(2)]
            m = np.zeros((4, 4), dtype=complex)
            for k in range(2):
                m[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = probs[k] * blocks[k]
            rho = DensityMatrix(layout(("k", 2), ("b", 2)), m)
            s_ab = von_neumann_entropy(rho).value
            s_a = von_neumann_entropy(rho, ["k"]).value
            assert s_ab - s_a >= -1e-9

    def test_chain_rule(self):
        rng = np.random.default_rng(11)
        lay = qubit_layout("a1", "a2", "b", "c")
        for _ in range(20):
            rho = qmat.random_density(rng, lay)
            lhs = conditional_mutual_information(rho, ["a1", "a2"], ["b"], ["c"]).value
            rhs = (
                conditional_mutual_information(rho, ["a1"], ["b"], ["c"]).value
                + conditional_mutual_information(rho, ["a2"], ["b"], ["c", "a1"]).value
            )
            assert abs(lhs - rhs) <= 1e-9

    def test_empty_conditioning_matches_mutual_information(self):
        rng = np.random.default_rng(12)
        lay = qubit_layout("a", "b")
        rho = qmat.random_density(rng, lay)
        via_cmi = conditional_mutual_information(rho, ["a"], ["b"], ()).value
        via_mi = mutual_information(rho, ["a"], ["b"]).value
        assert via_cmi == via_mi
