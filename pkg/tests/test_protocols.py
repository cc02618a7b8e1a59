"""Tests for the toy protocols and their three execution engines."""

import numpy as np
import pytest

from qmlab import oraclesim, qmat
from qmlab.oraclesim import OracleFunction, enumerate_oracles
from qmlab.protocols import (
    ABORT_KEY,
    ProtocolError,
    agreement_probability,
    enumerate_branches,
    enumerate_joint,
    make_protocol,
    protocol_names,
    run_protocol,
    spec_from_json,
)


class TestBuilders:
    def test_all_builders_construct(self):
        for name in protocol_names():
            spec = make_protocol(name)
            assert spec.name == name

    def test_json_roundtrip(self):
        spec = make_protocol("toy-qpke")
        again = spec_from_json(spec.to_json())
        assert again.name == spec.name
        assert again.params == spec.params

    def test_merkle_params_echoed(self):
        spec = make_protocol("merkle", n=2, d=2)
        assert spec.params == {"n": 2, "d": 2}
        assert spec.query_budget("alice") == 2
        assert spec.query_budget("bob") == 2

    def test_unknown_protocol(self):
        with pytest.raises(ProtocolError):
            make_protocol("nope")

    def test_circuit_width(self):
        spec = make_protocol("toy-qpke")
        assert spec.stages[0].circuit.query_width == spec.n + 1


class TestAgreement:
    def test_toy_nika_perfect(self):
        spec = make_protocol("toy-nika")
        assert agreement_probability(spec, "exact_enumeration") == pytest.approx(1.0)

    def test_example1_perfect(self):
        spec = make_protocol("example1")
        assert agreement_probability(spec, "exact_enumeration") == pytest.approx(1.0)

    def test_example2_never_aborts_honestly(self):
        spec = make_protocol("example2", n=2)
        assert agreement_probability(spec, "exact_enumeration") == pytest.approx(1.0)
        for br in enumerate_branches(spec, "final"):
            assert br.values["A.k"] != ABORT_KEY

    def test_merkle_five_sixths(self):
        spec = make_protocol("merkle", n=2, d=2)
        assert agreement_probability(spec, "exact_enumeration") == pytest.approx(5 / 6)

    def test_toy_qpke_perfect_by_enumeration(self):
        spec = make_protocol("toy-qpke", n=2)
        assert agreement_probability(spec, "exact_enumeration") == pytest.approx(1.0)

    def test_toy_qpke_qct_perfect(self):
        spec = make_protocol("toy-qpke-qct", n=1)
        assert agreement_probability(spec, "exact_enumeration") == pytest.approx(1.0)

    def test_toy_qpke_qpk_perfect(self):
        spec = make_protocol("toy-qpke-qpk")
        assert agreement_probability(spec, "exact_enumeration") == pytest.approx(1.0)

    def test_shortsk_delta_complete(self):
        spec = make_protocol("toy-shortsk", delta=0.9)
        assert agreement_probability(spec, "exact_enumeration") == pytest.approx(0.9)

    def test_product_agreement_half(self):
        spec = make_protocol("product")
        assert agreement_probability(spec, "exact_enumeration") == pytest.approx(0.5)

    def test_purified_readout_matches_enumeration(self):
        for name in ("toy-nika", "example1", "product"):
            spec = make_protocol(name)
            exact = agreement_probability(spec, "exact_enumeration")
            readout = agreement_probability(spec, "purified_readout")
            assert readout == pytest.approx(exact, abs=1e-8)

    def test_purified_readout_example2(self, monkeypatch):
        monkeypatch.setenv("QML_DIM_CAP", str(2**22))
        spec = make_protocol("example2", n=1)
        exact = agreement_probability(spec, "exact_enumeration")
        readout = agreement_probability(spec, "purified_readout")
        assert readout == pytest.approx(exact, abs=1e-8)


class TestPurifiedRuns:
    def test_merkle_function_register_dim(self, monkeypatch):
        monkeypatch.setenv("QML_DIM_CAP", str(2**22))
        spec = make_protocol("merkle", n=2, d=2)
        run = run_protocol(spec, "purified", "post_queries")
        assert run.joint.layout.dim("H") == 16

    def test_keygen_state_diagonal_on_classical_registers(self):
        spec = make_protocol("toy-qpke", n=2)
        run = run_protocol(spec, "purified", "post_m1")
        rho = run.reduced(["A.r", "A.y", "M.pk"])
        off = np.abs(rho.entries - np.diag(np.diagonal(rho.entries))).max()
        assert off <= 1e-9

    def test_quantum_pk_not_diagonal(self):
        spec = make_protocol("toy-qpke-qpk")
        run = run_protocol(spec, "purified", "post_m1")
        rho = run.reduced(["M.pkx", "M.pky"])
        off = np.abs(rho.entries - np.diag(np.diagonal(rho.entries))).max()
        assert off == pytest.approx(0.125, abs=1e-9)

    def test_purified_vs_sampled_average(self):
        # averaging enumerated branches over all oracles reproduces the
        # purified state's reduced protocol registers
        for name in ("toy-nika", "example1"):
            spec = make_protocol(name)
            labels = [l for l, _, _ in spec.registers]
            purified = run_protocol(spec, "purified", "final").reduced(labels)
            acc = np.zeros_like(purified.entries)
            for br in enumerate_branches(spec, "final"):
                acc += br.prob * br.reduced_density(spec, labels).entries
            assert np.abs(acc - purified.entries).max() <= 1e-8

    def test_purified_vs_sampled_average_quantum_ct(self):
        spec = make_protocol("toy-qpke-qct", n=1)
        labels = ["M.ctx", "M.ctc", "B.k"]
        purified = run_protocol(spec, "purified", "post_m2").reduced(labels)
        acc = np.zeros_like(purified.entries)
        for br in enumerate_branches(spec, "post_m2"):
            acc += br.prob * br.reduced_density(spec, labels).entries
        assert np.abs(acc - purified.entries).max() <= 1e-8


class TestSampledRuns:
    def test_fixed_seed_reproduces_transcript(self):
        spec = make_protocol("toy-qpke", n=2)
        a = run_protocol(spec, "sampled", "final", seed=11)
        b = run_protocol(spec, "sampled", "final", seed=11)
        assert a.transcript == b.transcript
        assert a.keys == b.keys

    def test_sampled_keys_agree_for_perfect_protocol(self):
        spec = make_protocol("toy-qpke", n=2)
        for seed in range(20):
            run = run_protocol(spec, "sampled", "final", seed=seed)
            assert run.keys[0] == run.keys[1]

    def test_sampled_respects_given_oracle(self):
        spec = make_protocol("example1", n=1)
        h = OracleFunction(1, (1, 1))
        run = run_protocol(spec, "sampled", "final", seed=3, oracle=h)
        assert run.keys[1] == 1

    def test_sampled_needs_seed(self):
        spec = make_protocol("example1")
        with pytest.raises(ProtocolError):
            run_protocol(spec, "sampled", "final")


class TestEnumeration:
    def test_joint_distribution_mass(self):
        spec = make_protocol("toy-nika")
        joint = enumerate_joint(spec, "final")
        assert abs(sum(p for _, p in joint.table) - 1.0) <= 1e-9

    def test_branch_probabilities_sum_to_one(self):
        spec = make_protocol("toy-qpke", n=2)
        total = sum(br.prob for br in enumerate_branches(spec, "final"))
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_enumerate_joint_rejects_coherent(self):
        spec = make_protocol("toy-qpke-qct", n=1)
        with pytest.raises(ProtocolError):
            enumerate_joint(spec, "post_m2")

    def test_conditioned_enumeration(self):
        spec = make_protocol("example1", n=1)
        h = OracleFunction(1, (0, 1))
        for br in enumerate_branches(spec, "final", oracle=h):
            assert br.values["B.k"] == h.value(br.values["B.x"])
