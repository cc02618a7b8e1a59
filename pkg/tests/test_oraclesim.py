"""Tests for the purified oracle simulator and compressed (Fourier) view."""

import numpy as np
import pytest

from qmlab import oraclesim
from qmlab.oraclesim import (
    HADAMARD,
    OracleCapError,
    OracleFunction,
    QueryModeError,
    QueryRecord,
    RecordConflictError,
    apply_classical_fn,
    apply_query,
    apply_unitary,
    copy_register,
    enumerate_oracles,
    fourier_branch_overlaps,
    fourier_support_weights,
    init_purified_oracle,
    init_sampled_state,
    prepare_superposition,
    reprogram_oracle,
    sample_oracle,
)
from qmlab.qmat import SystemLayout, layout


class TestOracleFunction:
    def test_roundtrip_index(self):
        h = OracleFunction(2, (1, 0, 1, 1))
        assert OracleFunction.from_index(2, h.index) == h

    def test_json_roundtrip(self):
        h = OracleFunction(3, tuple(int(b) for b in np.random.default_rng(0).integers(0, 2, 8)))
        assert OracleFunction.from_json(h.to_json()) == h

    def test_enumerate_small(self):
        assert len(list(enumerate_oracles(1))) == 4

    def test_enumerate_cap(self):
        with pytest.raises(OracleCapError):
            list(enumerate_oracles(4))

    def test_sampling_deterministic(self):
        assert sample_oracle(2, 42) == sample_oracle(2, 42)

    def test_sampling_unbiased(self):
        rng = np.random.default_rng(7)
        counts = np.zeros(4)
        trials = 20000
        for _ in range(trials):
            counts += sample_oracle(2, rng).table
        freq = counts / trials
        sigma = 0.5 / np.sqrt(trials)
        assert np.all(np.abs(freq - 0.5) < 3 * sigma + 1e-9)


class TestQueryRecord:
    def test_dedupes(self):
        r = QueryRecord(((0, 1), (0, 1), (2, 0)))
        assert r.pairs == ((0, 1), (2, 0))

    def test_conflict_raises(self):
        with pytest.raises(RecordConflictError):
            QueryRecord(((0, 1), (0, 0)))

    def test_reprogram_empty_is_identity(self):
        h = OracleFunction(2, (0, 1, 1, 0))
        assert reprogram_oracle(h, QueryRecord()) == h

    def test_reprogram_full_domain(self):
        h = OracleFunction(1, (0, 0))
        r = QueryRecord(((0, 1), (1, 1)))
        assert reprogram_oracle(h, r).table == (1, 1)

    def test_reprogram_single_point(self):
        h = OracleFunction(2, (0, 1, 1, 0))
        r = QueryRecord(((0, 1 - h.value(0)),))
        patched = reprogram_oracle(h, r)
        diffs = [x for x in range(4) if patched.value(x) != h.value(x)]
        assert diffs == [0]
        assert reprogram_oracle(patched, r) == patched


class TestInit:
    def test_uniform_superposition_n1(self):
        state = init_purified_oracle(1)
        assert np.allclose(state.vector, np.full(4, 0.5))

    def test_initial_state_is_zero_database(self):
        state = init_purified_oracle(2)
        weights = fourier_support_weights(state)
        assert weights[0] == pytest.approx(1.0, abs=1e-12)

    def test_n3_norm(self):
        state = init_purified_oracle(3)
        assert state.layout.dim("H") == 256
        assert abs(np.linalg.norm(state.vector) - 1.0) <= 1e-12

    def test_cap(self):
        with pytest.raises(OracleCapError):
            init_purified_oracle(4)

    def test_function_register_diagonal_uniform(self):
        state = init_purified_oracle(1, SystemLayout((("x", 2),)))
        probs = state.probabilities(["H"])
        assert all(p == pytest.approx(0.25, abs=1e-12) for p in probs.values())


def queries_layout(n, extra=()):
    return SystemLayout((("x", 2**n), ("y", 2)) + tuple(extra))


class TestApplyQuery:
    def test_phase_query_y0_is_identity(self):
        state = init_purified_oracle(1, queries_layout(1))
        out = apply_query(state, "phase", "x", "y")
        assert np.allclose(out.vector, state.vector)

    def test_xor_on_uniform_oracle_gives_random_bit(self):
        state = init_purified_oracle(1, queries_layout(1))
        out = apply_query(state, "xor", "x", "y")
        probs = out.probabilities(["y"])
        assert probs[(0,)] == pytest.approx(0.5, abs=1e-12)
        assert probs[(1,)] == pytest.approx(0.5, abs=1e-12)

    def test_phase_query_support_weight_one(self):
        n = 2
        state = init_purified_oracle(n, queries_layout(n))
        state = apply_unitary(state, ["y"], np.array([[0, 1], [1, 0]], dtype=complex))
        amps = np.full(2**n, 1 / 2 ** (n / 2))
        state = prepare_superposition(state, "x", amps)
        out = apply_query(state, "phase", "x", "y")
        weights = fourier_support_weights(out)
        assert sum(weights.values()) == pytest.approx(1.0, abs=1e-9)
        assert sum(m for w, m in weights.items() if w > 1) <= 1e-9

    def test_norm_preserved(self):
        rng = np.random.default_rng(3)
        state = init_purified_oracle(2, queries_layout(2))
        from qmlab.qmat import random_unitary

        state = apply_unitary(state, ["x"], random_unitary(rng, 4))
        state = apply_unitary(state, ["y"], random_unitary(rng, 2))
        for mode in ("phase", "xor"):
            out = apply_query(state, mode, "x", "y")
            assert abs(np.linalg.norm(out.vector) - 1.0) <= 1e-10

    def test_phase_xor_hadamard_equivalence(self):
        rng = np.random.default_rng(5)
        from qmlab.qmat import random_unitary

        state = init_purified_oracle(1, queries_layout(1))
        state = apply_unitary(state, ["x"], random_unitary(rng, 2))
        state = apply_unitary(state, ["y"], random_unitary(rng, 2))
        via_phase = apply_query(state, "phase", "x", "y")
        conj = apply_unitary(state, ["y"], HADAMARD)
        conj = apply_query(conj, "xor", "x", "y")
        via_xor = apply_unitary(conj, ["y"], HADAMARD)
        assert np.abs(via_phase.vector - via_xor.vector).max() <= 1e-10

    def test_classical_mode_rejects_coherent_input(self):
        state = init_purified_oracle(1, queries_layout(1))
        state = prepare_superposition(state, "x", [1 / np.sqrt(2), 1 / np.sqrt(2)])
        with pytest.raises(QueryModeError):
            apply_query(state, "classical", "x", "y")

    def test_classical_mode_on_basis_input(self):
        h = OracleFunction(1, (1, 0))
        state = init_sampled_state(1, queries_layout(1), h)
        out = apply_query(state, "classical", "x", "y")
        assert out.probabilities(["y"])[(1,)] == pytest.approx(1.0)

    def test_sampled_matches_purified_average(self):
        # xor query under each table, averaged, equals the purified reduction
        extra = queries_layout(1)
        purified = init_purified_oracle(1, extra)
        purified = prepare_superposition(purified, "x", [0.6, 0.8])
        out_p = apply_query(purified, "xor", "x", "y").reduced_density(["x", "y"])
        acc = np.zeros((4, 4), dtype=complex)
        for h in enumerate_oracles(1):
            s = init_sampled_state(1, extra, h)
            s = prepare_superposition(s, "x", [0.6, 0.8])
            s = apply_query(s, "xor", "x", "y")
            acc += s.reduced_density(["x", "y"]).entries / 4
        assert np.abs(out_p.entries - acc).max() <= 1e-10

    def test_in_map_redirects_query(self):
        # register value v queries point (v + 1) mod 2
        h = OracleFunction(1, (0, 1))
        state = init_sampled_state(1, queries_layout(1), h)
        out = apply_query(state, "xor", "x", "y", in_map=lambda v: (v + 1) % 2)
        assert out.probabilities(["y"])[(1,)] == pytest.approx(1.0)


class TestFourier:
    def test_fresh_oracle_all_mass_at_zero(self):
        state = init_purified_oracle(2)
        assert fourier_support_weights(state) == {0: pytest.approx(1.0)}

    def test_one_query_mass_within_weight_one(self):
        state = init_purified_oracle(2, queries_layout(2))
        state = apply_unitary(state, ["y"], np.array([[0, 1], [1, 0]], dtype=complex))
        state = prepare_superposition(state, "x", np.full(4, 0.5))
        out = apply_query(state, "phase", "x", "y")
        weights = fourier_support_weights(out)
        assert sum(m for w, m in weights.items() if w > 1) <= 1e-9

    def test_two_queries_mass_within_weight_two_vs_direct(self):
        rng = np.random.default_rng(11)
        from qmlab.qmat import random_unitary

        n = 2
        lay = SystemLayout((("x", 4), ("y", 2), ("x2", 4), ("y2", 2)))
        state = init_purified_oracle(n, lay)
        state = apply_unitary(state, ["x"], random_unitary(rng, 4))
        state = apply_unitary(state, ["y"], random_unitary(rng, 2))
        state = apply_query(state, "phase", "x", "y")
        state = apply_unitary(state, ["x2"], random_unitary(rng, 4))
        state = apply_unitary(state, ["y2"], random_unitary(rng, 2))
        state = apply_query(state, "phase", "x2", "y2")
        weights = fourier_support_weights(state)
        assert sum(m for w, m in weights.items() if w > 2) <= 1e-9
        # direct basis change on the function register as an oracle
        hdim = 16
        wht = np.array(
            [[(-1) ** bin(u & v).count("1") for v in range(hdim)] for u in range(hdim)]
        ) / np.sqrt(hdim)
        tensor = state.vector.reshape(-1, hdim)
        fourier = tensor @ wht.T
        direct = (np.abs(fourier) ** 2).sum(axis=0)
        for d in range(hdim):
            w = bin(d).count("1")
            weights[w] = weights.get(w, 0.0) - direct[d]
        assert max(abs(v) for v in weights.values()) <= 1e-9

    def test_nonadaptive_branches_orthogonal(self):
        rng = np.random.default_rng(13)
        n = 1
        lay = SystemLayout((("x1", 2), ("y1", 2), ("x2", 2), ("y2", 2)))
        state = init_purified_oracle(n, lay)
        for labels in (("x1", "y1"), ("x2", "y2")):
            amps = rng.normal(size=4) + 1j * rng.normal(size=4)
            state = prepare_superposition(state, labels[0], rng.normal(size=2) + 0j)
            state = prepare_superposition(state, labels[1], rng.normal(size=2) + 0j)
        state = apply_query(state, "phase", "x1", "y1")
        state = apply_query(state, "phase", "x2", "y2")
        _, gram = fourier_branch_overlaps(state)
        off = np.abs(gram - np.diag(np.diagonal(gram))).max()
        assert off <= 1e-9


class TestRegisterOps:
    def test_copy_register(self):
        state = init_purified_oracle(1, SystemLayout((("a", 3), ("b", 3))))
        state = prepare_superposition(state, "a", [0.0, 1.0, 0.0])
        state = copy_register(state, "a", "b")
        assert state.probabilities(["a", "b"])[(1, 1)] == pytest.approx(1.0)

    def test_classical_fn(self):
        state = init_purified_oracle(1, SystemLayout((("a", 2), ("b", 2), ("c", 2))))
        state = prepare_superposition(state, "a", [0, 1])
        state = prepare_superposition(state, "b", [0, 1])
        state = apply_classical_fn(state, ["a", "b"], "c", lambda a, b: a ^ b)
        assert state.probabilities(["c"])[(0,)] == pytest.approx(1.0)

    def test_measure_collapses(self):
        rng = np.random.default_rng(17)
        state = init_purified_oracle(1, SystemLayout((("a", 2),)))
        state = prepare_superposition(state, "a", [0.6, 0.8])
        values, collapsed = oraclesim.measure(state, ["a"], rng)
        assert values in {(0,), (1,)}
        assert collapsed.probabilities(["a"])[values] == pytest.approx(1.0)
