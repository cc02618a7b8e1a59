"""Executable toy key-agreement and public-key-encryption protocols.

A protocol is an ordered list of stages, each a party circuit plus the
message registers published afterwards.  Three engines interpret the same
step vocabulary:

* ``run_protocol(..., "purified")`` keeps the oracle as a function
  register and every coin purified by an environment copy, returning the
  exact joint state;
* ``run_protocol(..., "sampled")`` fixes a concrete oracle table and
  draws coins and measurements, returning one classical branch (plus any
  registers deliberately left coherent);
* ``enumerate_branches`` walks every oracle, coin, and measurement
  outcome with exact probabilities, which powers exhaustive agreement
  checks, support computations, and the eavesdroppers' posteriors.

Key extraction is always a computational-basis measurement of a
designated register; circuits needing another basis rotate first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from . import oraclesim
from .jointdist import JointDistribution
from .oraclesim import (
    HADAMARD,
    FUNCTION_REGISTER,
    OracleFunction,
    PurifiedOracleState,
    enumerate_oracles,
    init_purified_oracle,
    init_sampled_state,
    sample_oracle,
)
from .qmat import DensityMatrix, LayoutError, SystemLayout, reorder, tensor_product

CHECKPOINTS = ("post_queries", "post_m1", "post_m2", "final")


class ProtocolError(ValueError):
    """Malformed protocol specification or construction-time check failure."""


# ---------------------------------------------------------------------------
# step vocabulary


@dataclass(frozen=True)
class Coin:
    """Sample a register classically, optionally conditioned on controls."""

    label: str
    probs: tuple[float, ...] | None = None
    control: tuple[str, ...] = ()
    probs_fn: Callable[..., Sequence[float]] | None = None

    def distribution(self, *control_values: int) -> np.ndarray:
        if self.probs_fn is not None:
            p = np.asarray(self.probs_fn(*control_values), dtype=float)
        elif self.probs is not None:
            p = np.asarray(self.probs, dtype=float)
        else:
            raise ProtocolError(f"coin {self.label} has no distribution")
        if abs(p.sum() - 1.0) > 1e-9 or p.min() < 0:
            raise ProtocolError(f"coin {self.label} distribution invalid")
        return p


@dataclass(frozen=True)
class Query:
    mode: str
    in_label: str | None
    out_label: str
    in_map: Callable[[int], int] | None = None
    point: int | None = None


@dataclass(frozen=True)
class Unitary:
    labels: tuple[str, ...]
    matrix: np.ndarray


@dataclass(frozen=True)
class ClassicalFn:
    srcs: tuple[str, ...]
    dst: str
    fn: Callable[..., int]


@dataclass(frozen=True)
class CopyReg:
    src: str
    dst: str


@dataclass(frozen=True)
class Measure:
    labels: tuple[str, ...]


Step = Coin | Query | Unitary | ClassicalFn | CopyReg | Measure


@dataclass(frozen=True)
class QueryCircuit:
    """Ordered steps of one party stage with a declared query budget."""

    steps: tuple[Step, ...]
    n: int
    declared_queries: int | None = None

    def __post_init__(self) -> None:
        actual = sum(1 for s in self.steps if isinstance(s, Query))
        if self.declared_queries is None:
            object.__setattr__(self, "declared_queries", actual)
        elif self.declared_queries != actual:
            raise ProtocolError(
                f"declared {self.declared_queries} queries but found {actual}"
            )

    @property
    def query_count(self) -> int:
        return int(self.declared_queries or 0)

    @property
    def query_width(self) -> int:
        return self.n + 1

    def relabeled(self, mapping: Callable[[str], str]) -> "QueryCircuit":
        steps: list[Step] = []
        for s in self.steps:
            if isinstance(s, Coin):
                steps.append(
                    replace(s, label=mapping(s.label), control=tuple(mapping(c) for c in s.control))
                )
            elif isinstance(s, Query):
                steps.append(
                    replace(
                        s,
                        in_label=None if s.in_label is None else mapping(s.in_label),
                        out_label=mapping(s.out_label),
                    )
                )
            elif isinstance(s, Unitary):
                steps.append(replace(s, labels=tuple(mapping(l) for l in s.labels)))
            elif isinstance(s, ClassicalFn):
                steps.append(
                    replace(s, srcs=tuple(mapping(l) for l in s.srcs), dst=mapping(s.dst))
                )
            elif isinstance(s, CopyReg):
                steps.append(replace(s, src=mapping(s.src), dst=mapping(s.dst)))
            elif isinstance(s, Measure):
                steps.append(Measure(tuple(mapping(l) for l in s.labels)))
        return QueryCircuit(tuple(steps), self.n, self.declared_queries)


@dataclass(frozen=True)
class Stage:
    party: str
    circuit: QueryCircuit
    publish: tuple[str, ...] = ()


@dataclass(frozen=True)
class ProtocolSpec:
    kind: str
    name: str
    n: int
    registers: tuple[tuple[str, int, str], ...]  # (label, dim, owner A|B|M)
    stages: tuple[Stage, ...]
    key_a: str
    key_b: str
    checkpoints: dict[str, int] = field(default_factory=dict)
    quantum_messages: frozenset[str] = frozenset()
    perfect_complete: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        labels = [l for l, _, _ in self.registers]
        if len(set(labels)) != len(labels):
            raise ProtocolError("duplicate register labels")
        owners = {o for _, _, o in self.registers}
        if not owners <= {"A", "B", "M", "E"}:
            raise ProtocolError(f"unknown register owners {owners}")
        for cp in CHECKPOINTS:
            if cp not in self.checkpoints:
                raise ProtocolError(f"missing checkpoint {cp}")

    def dim(self, label: str) -> int:
        for l, d, _ in self.registers:
            if l == label:
                return d
        raise ProtocolError(f"unknown register {label!r}")

    def owned(self, owner: str) -> tuple[str, ...]:
        return tuple(l for l, _, o in self.registers if o == owner)

    @property
    def alice_labels(self) -> tuple[str, ...]:
        return self.owned("A")

    @property
    def bob_labels(self) -> tuple[str, ...]:
        return self.owned("B")

    @property
    def message_labels(self) -> tuple[str, ...]:
        return self.owned("M")

    def stage_circuits(self, party: str) -> tuple[QueryCircuit, ...]:
        return tuple(s.circuit for s in self.stages if s.party == party)

    def query_budget(self, party: str) -> int:
        return sum(c.query_count for c in self.stage_circuits(party))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "n": self.n,
            "params": dict(self.params),
            "perfect_complete": self.perfect_complete,
        }


def spec_from_json(doc: dict) -> ProtocolSpec:
    return make_protocol(doc["name"], **doc.get("params", {}))


# ---------------------------------------------------------------------------
# purified execution


def _stage_count(spec: ProtocolSpec, checkpoint: str) -> int:
    if checkpoint not in spec.checkpoints:
        raise ProtocolError(f"unknown checkpoint {checkpoint!r}")
    return spec.checkpoints[checkpoint]


@dataclass
class ProtocolRun:
    """State (exact or sampled) of a protocol at a named checkpoint."""

    spec: ProtocolSpec
    checkpoint: str
    joint: object  # PurifiedOracleState | Branch
    transcript: dict[str, int]
    keys: tuple[int | None, int | None]

    def reduced(self, labels: Sequence[str]) -> DensityMatrix:
        labels = list(labels)
        if isinstance(self.joint, PurifiedOracleState):
            return reorder(self.joint.reduced_density(labels), labels)
        return self.joint.reduced_density(self.spec, labels)


class _PurifiedRunner:
    """Exact runner; registers are allocated lazily so early checkpoints
    stay small, and classical randomness is decohered by environment
    copies.  Classicality is tracked by provenance: a register counts as
    classical once its branches are orthogonal on traced-out factors
    (coin environments or the function register), which holds for coins,
    classical computation over classical sources, and oracle outputs of
    classically-addressed queries."""

    def __init__(self, spec: ProtocolSpec):
        self.spec = spec
        self.state = init_purified_oracle(spec.n)
        self.env_count = 0
        self.classical: set[str] = set()

    def ensure(self, label: str | None) -> None:
        if label is None or label in self.state.layout.labels:
            return
        self.state = oraclesim.add_register(self.state, label, self.spec.dim(label))
        self.classical.add(label)  # fresh |0> registers are classical

    def dephase(self, label: str) -> None:
        """Copy a register into a fresh traced-out environment register."""
        self.env_count += 1
        env = f"{label}~{self.env_count}"
        self.state = oraclesim.add_register(self.state, env, self.spec.dim(label))
        self.state = oraclesim.copy_register(self.state, label, env)
        self.classical.add(label)

    def run_step(self, step: Step) -> None:
        if isinstance(step, Coin):
            for c in step.control:
                self.ensure(c)
            self.ensure(step.label)
            if step.control:
                self.state = oraclesim.prepare_controlled(
                    self.state,
                    list(step.control),
                    step.label,
                    lambda *cv: np.sqrt(step.distribution(*cv)),
                )
            else:
                self.state = oraclesim.prepare_superposition(
                    self.state, step.label, np.sqrt(step.distribution())
                )
            self.dephase(step.label)
        elif isinstance(step, Query):
            self.ensure(step.in_label)
            self.ensure(step.out_label)
            self.state = oraclesim.apply_query(
                self.state, step.mode, step.in_label, step.out_label, step.in_map, step.point
            )
            # xor output stays classical only when written from a classical
            # input into an already-classical register: branches with
            # different oracle outputs are then orthogonal on H itself
            classical_input = step.in_label is None or step.in_label in self.classical
            if step.mode in ("xor", "classical"):
                if not (classical_input and step.out_label in self.classical):
                    self.classical.discard(step.out_label)
        elif isinstance(step, Unitary):
            for l in step.labels:
                self.ensure(l)
                self.classical.discard(l)
            self.state = oraclesim.apply_unitary(self.state, list(step.labels), step.matrix)
        elif isinstance(step, ClassicalFn):
            for l in step.srcs:
                self.ensure(l)
            self.ensure(step.dst)
            self.state = oraclesim.apply_classical_fn(self.state, list(step.srcs), step.dst, step.fn)
            if not all(l in self.classical for l in step.srcs) or step.dst not in self.classical:
                self.classical.discard(step.dst)
        elif isinstance(step, CopyReg):
            self.ensure(step.src)
            self.ensure(step.dst)
            self.state = oraclesim.copy_register(self.state, step.src, step.dst)
            if step.src not in self.classical or step.dst not in self.classical:
                self.classical.discard(step.dst)
        elif isinstance(step, Measure):
            for l in step.labels:
                self.ensure(l)
                if l not in self.classical:
                    self.dephase(l)
        else:
            raise ProtocolError(f"unknown step {step!r}")

    def run(self, checkpoint: str) -> PurifiedOracleState:
        for stage in self.spec.stages[: _stage_count(self.spec, checkpoint)]:
            for step in stage.circuit.steps:
                self.run_step(step)
            for label in stage.publish:
                self.ensure(label)
                if label not in self.spec.quantum_messages and label not in self.classical:
                    self.dephase(label)
        return self.state


# ---------------------------------------------------------------------------
# branch execution (sampling and exact enumeration)

_COHERENT = -1  # sentinel value for registers living in the coherent substate


@dataclass
class Branch:
    """One classical execution path, with optional coherent leftovers."""

    prob: float
    oracle: OracleFunction
    values: dict[str, int]
    coherent: PurifiedOracleState | None = None

    def value(self, label: str) -> int:
        v = self.values.get(label, 0)
        if v == _COHERENT:
            raise ProtocolError(f"register {label} is coherent, not classical")
        return v

    def coherent_labels(self) -> tuple[str, ...]:
        return self.coherent.layout.labels if self.coherent is not None else ()

    def reduced_density(self, spec: ProtocolSpec, labels: Sequence[str]) -> DensityMatrix:
        labels = list(labels)
        coh = [l for l in labels if l in self.coherent_labels()]
        cls = [l for l in labels if l not in coh]
        parts: list[DensityMatrix] = []
        if coh:
            parts.append(self.coherent.reduced_density(coh))
        for l in cls:
            d = spec.dim(l)
            m = np.zeros((d, d), dtype=complex)
            m[self.value(l), self.value(l)] = 1.0
            parts.append(DensityMatrix(SystemLayout(((l, d),)), m, check_psd=False))
        out = parts[0]
        for p in parts[1:]:
            out = tensor_product(out, p)
        return reorder(out, labels)


class _BranchExecutor:
    """Shared interpreter for sampled runs and exhaustive enumeration."""

    def __init__(self, spec: ProtocolSpec):
        self.spec = spec

    # -- coherent bookkeeping

    def _promote(self, br: Branch, labels: Iterable[str]) -> Branch:
        need = [l for l in labels if l not in br.coherent_labels()]
        if not need:
            return br
        state = br.coherent
        if state is None:
            state = init_sampled_state(self.spec.n, SystemLayout(()), br.oracle)
        values = dict(br.values)
        for l in need:
            state = oraclesim.add_register(state, l, self.spec.dim(l))
            v = values.get(l, 0)
            if v not in (0, _COHERENT):
                state = oraclesim.apply_classical_fn(state, [], l, lambda v=v: v)
            values[l] = _COHERENT
        return replace(br, values=values, coherent=state)

    def _demote(self, br: Branch, label: str, value: int) -> Branch:
        state = oraclesim.slice_register(br.coherent, label, value)
        values = dict(br.values)
        values[label] = value
        return replace(
            br, values=values, coherent=state if state.layout.factors else None
        )

    # -- step semantics; each handler yields (branch, probability-factor)

    def step_outcomes(self, br: Branch, step: Step) -> Iterator[tuple[Branch, float]]:
        if isinstance(step, Coin):
            dist = step.distribution(*(br.value(c) for c in step.control))
            for v, p in enumerate(dist):
                if p > 0.0:
                    values = dict(br.values)
                    values[step.label] = int(v)
                    yield replace(br, values=values), float(p)
        elif isinstance(step, Query):
            involved = [l for l in (step.in_label, step.out_label) if l is not None]
            if any(l in br.coherent_labels() for l in involved):
                br = self._promote(br, involved)
                state = oraclesim.apply_query(
                    br.coherent, step.mode, step.in_label, step.out_label, step.in_map, step.point
                )
                yield replace(br, coherent=state), 1.0
            else:
                if step.point is not None:
                    x = step.point
                else:
                    x = br.value(step.in_label)
                    if step.in_map is not None:
                        x = step.in_map(x) % (2**self.spec.n)
                if step.mode == "phase":
                    yield br, 1.0  # global phase on a classical branch
                else:
                    values = dict(br.values)
                    d = self.spec.dim(step.out_label)
                    values[step.out_label] = (br.value(step.out_label) + br.oracle.value(x)) % d
                    yield replace(br, values=values), 1.0
        elif isinstance(step, Unitary):
            br = self._promote(br, step.labels)
            state = oraclesim.apply_unitary(br.coherent, list(step.labels), step.matrix)
            yield replace(br, coherent=state), 1.0
        elif isinstance(step, (ClassicalFn, CopyReg)):
            if isinstance(step, CopyReg):
                srcs, dst, fn = (step.src,), step.dst, (lambda x: x)
            else:
                srcs, dst, fn = step.srcs, step.dst, step.fn
            touched = list(srcs) + [dst]
            if any(l in br.coherent_labels() for l in touched):
                coh_srcs = [l for l in srcs if l in br.coherent_labels()]
                cls_srcs = [l for l in srcs if l not in coh_srcs]
                br = self._promote(br, coh_srcs + [dst])
                fixed = {l: br.value(l) for l in cls_srcs}

                def bound_fn(*coh_values, _srcs=srcs, _coh=coh_srcs, _fixed=fixed, _fn=fn):
                    by_label = dict(zip(_coh, coh_values))
                    return _fn(*(by_label[l] if l in by_label else _fixed[l] for l in _srcs))

                state = oraclesim.apply_classical_fn(br.coherent, coh_srcs, dst, bound_fn)
                yield replace(br, coherent=state), 1.0
            else:
                values = dict(br.values)
                d = self.spec.dim(dst)
                values[dst] = (br.value(dst) + int(fn(*(br.value(l) for l in srcs)))) % d
                yield replace(br, values=values), 1.0
        elif isinstance(step, Measure):
            yield from self._measure_outcomes(br, step.labels)
        else:
            raise ProtocolError(f"unknown step {step!r}")

    def _measure_outcomes(self, br: Branch, labels: Sequence[str]) -> Iterator[tuple[Branch, float]]:
        coh = [l for l in labels if l in br.coherent_labels()]
        if not coh:
            yield br, 1.0
            return
        probs = br.coherent.probabilities(coh)
        for outcome, p in sorted(probs.items()):
            child = br
            state = oraclesim.project(child.coherent, coh, outcome)
            child = replace(child, coherent=state)
            for l, v in zip(coh, outcome):
                child = self._demote(child, l, int(v))
            yield child, float(p)

    # -- drivers

    def enumerate(self, checkpoint: str, oracle: OracleFunction | None = None) -> Iterator[Branch]:
        oracles = [oracle] if oracle is not None else list(enumerate_oracles(self.spec.n))
        base_p = 1.0 / len(oracles)
        count = _stage_count(self.spec, checkpoint)
        steps: list[Step] = []
        for stage in self.spec.stages[:count]:
            steps.extend(stage.circuit.steps)
            for label in stage.publish:
                if label not in self.spec.quantum_messages:
                    steps.append(Measure((label,)))
        for h in oracles:
            stack = [(Branch(base_p, h, {}), 0)]
            while stack:
                br, i = stack.pop()
                if i == len(steps):
                    yield br
                    continue
                for child, p in self.step_outcomes(br, steps[i]):
                    stack.append((replace(child, prob=br.prob * p * 1.0), i + 1))

    def sample(self, checkpoint: str, oracle: OracleFunction, rng: np.random.Generator) -> Branch:
        count = _stage_count(self.spec, checkpoint)
        br = Branch(1.0, oracle, {})
        for stage in self.spec.stages[:count]:
            steps = list(stage.circuit.steps)
            for label in stage.publish:
                if label not in self.spec.quantum_messages:
                    steps.append(Measure((label,)))
            for step in steps:
                outcomes = list(self.step_outcomes(br, step))
                weights = np.array([p for _, p in outcomes])
                pick = int(rng.choice(len(outcomes), p=weights / weights.sum()))
                br = outcomes[pick][0]
        return replace(br, prob=1.0)


def enumerate_branches(
    spec: ProtocolSpec, checkpoint: str = "final", oracle: OracleFunction | None = None
) -> Iterator[Branch]:
    yield from _BranchExecutor(spec).enumerate(checkpoint, oracle)


def sample_steps(
    spec: ProtocolSpec, branch: Branch, steps: Sequence[Step], rng: np.random.Generator
) -> Branch:
    """Advance one branch through extra steps, drawing random outcomes."""
    ex = _BranchExecutor(spec)
    for step in steps:
        outcomes = list(ex.step_outcomes(branch, step))
        weights = np.array([p for _, p in outcomes])
        pick = int(rng.choice(len(outcomes), p=weights / weights.sum()))
        branch = outcomes[pick][0]
    return replace(branch, prob=1.0)


def extend_spec(
    spec: ProtocolSpec,
    extra_registers: Sequence[tuple[str, int, str]],
    extra_stages: Sequence[Stage],
    quantum_extra: Iterable[str] = (),
) -> ProtocolSpec:
    """Append observer registers and stages after the protocol proper.

    Checkpoints keep their meaning; ``final`` moves past the appended
    stages so exact engines cover the extended system.
    """
    checkpoints = dict(spec.checkpoints)
    checkpoints["final"] = len(spec.stages) + len(extra_stages)
    return ProtocolSpec(
        kind=spec.kind,
        name=spec.name,
        n=spec.n,
        registers=spec.registers + tuple(extra_registers),
        stages=spec.stages + tuple(extra_stages),
        key_a=spec.key_a,
        key_b=spec.key_b,
        checkpoints=checkpoints,
        quantum_messages=spec.quantum_messages | frozenset(quantum_extra),
        perfect_complete=spec.perfect_complete,
        params=dict(spec.params),
    )


def enumerate_joint(spec: ProtocolSpec, checkpoint: str = "final") -> JointDistribution:
    """Exact classical joint over all registers; coherent leftovers rejected."""
    regs = [l for l, _, _ in spec.registers]
    acc: dict[tuple[int, ...], float] = {}
    for br in enumerate_branches(spec, checkpoint):
        if br.coherent_labels():
            raise ProtocolError(
                f"registers {br.coherent_labels()} are still coherent at {checkpoint}"
            )
        key = tuple(br.values.get(l, 0) for l in regs)
        acc[key] = acc.get(key, 0.0) + br.prob
    return JointDistribution.from_dict(regs, acc)


def run_protocol(
    spec: ProtocolSpec,
    oracle_mode: str = "purified",
    checkpoint: str = "final",
    seed: int | None = None,
    oracle: OracleFunction | None = None,
) -> ProtocolRun:
    """Execute up to a checkpoint, exactly (purified) or concretely (sampled)."""
    if checkpoint not in CHECKPOINTS:
        raise ProtocolError(f"unknown checkpoint {checkpoint!r}")
    if oracle_mode == "purified":
        state = _PurifiedRunner(spec).run(checkpoint)
        return ProtocolRun(spec, checkpoint, state, {}, (None, None))
    if oracle_mode != "sampled":
        raise ProtocolError(f"unknown oracle mode {oracle_mode!r}")
    if seed is None and oracle is None:
        raise ProtocolError("sampled mode needs a seed or an explicit oracle")
    rng = np.random.default_rng(seed)
    h = oracle if oracle is not None else sample_oracle(spec.n, rng)
    br = _BranchExecutor(spec).sample(checkpoint, h, rng)
    transcript = {
        l: br.values[l]
        for stage in spec.stages[: _stage_count(spec, checkpoint)]
        for l in stage.publish
        if l in br.values and br.values[l] != _COHERENT
    }
    keys: tuple[int | None, int | None] = (None, None)
    if checkpoint == "final":
        ka = br.values.get(spec.key_a)
        kb = br.values.get(spec.key_b)
        keys = (
            None if ka in (None, _COHERENT) else int(ka),
            None if kb in (None, _COHERENT) else int(kb),
        )
    return ProtocolRun(spec, checkpoint, br, transcript, keys)


def agreement_probability(spec: ProtocolSpec, method: str = "exact_enumeration") -> float:
    """Probability the two extracted keys coincide."""
    if method == "exact_enumeration":
        if spec.n > oraclesim.ORACLE_N_CAP:
            raise ProtocolError("exact enumeration needs a small oracle domain")
        total = 0.0
        for br in enumerate_branches(spec, "final"):
            ka = br.values.get(spec.key_a, 0)
            kb = br.values.get(spec.key_b, 0)
            if _COHERENT in (ka, kb):
                raise ProtocolError("key registers must be measured at final")
            if ka == kb:
                total += br.prob
        return total
    if method == "purified_readout":
        state = _PurifiedRunner(spec).run("final")
        rho = reorder(state.reduced_density([spec.key_a, spec.key_b]), [spec.key_a, spec.key_b])
        da = spec.dim(spec.key_a)
        db = spec.dim(spec.key_b)
        diag = np.real(np.diagonal(rho.entries)).reshape(da, db)
        return float(sum(diag[v, v] for v in range(min(da, db))))
    raise ProtocolError(f"unknown agreement method {method!r}")


# ---------------------------------------------------------------------------
# built-in protocols


def _qc(steps: Sequence[Step], n: int) -> QueryCircuit:
    return QueryCircuit(tuple(steps), n)


def _uniform(k: int) -> tuple[float, ...]:
    return tuple(1.0 / k for _ in range(k))


def _make_toy_nika() -> ProtocolSpec:
    """Non-interactive toy: everyone reads H(0); Bob also reads H(1)."""
    n = 1
    alice1 = _qc([Query("classical", None, "A.y", point=0)], n)
    bob = _qc(
        [
            Query("classical", None, "B.y0", point=0),
            Query("classical", None, "B.y1", point=1),
            ClassicalFn(("B.y0",), "B.k", lambda y: y),
            Measure(("B.k",)),
        ],
        n,
    )
    alice2 = _qc([ClassicalFn(("A.y",), "A.k", lambda y: y), Measure(("A.k",))], n)
    return ProtocolSpec(
        kind="non_interactive_ka",
        name="toy-nika",
        n=n,
        registers=(
            ("A.y", 2, "A"),
            ("A.k", 2, "A"),
            ("B.y0", 2, "B"),
            ("B.y1", 2, "B"),
            ("B.k", 2, "B"),
        ),
        stages=(Stage("alice", alice1), Stage("bob", bob), Stage("alice", alice2)),
        key_a="A.k",
        key_b="B.k",
        checkpoints={"post_queries": 2, "post_m1": 2, "post_m2": 2, "final": 3},
        perfect_complete=True,
    )


def _make_product() -> ProtocolSpec:
    """No shared resource: Alice reads H(0), Bob reads H(1)."""
    n = 1
    alice1 = _qc([Query("classical", None, "A.y", point=0)], n)
    bob = _qc(
        [
            Query("classical", None, "B.y", point=1),
            ClassicalFn(("B.y",), "B.k", lambda y: y),
            Measure(("B.k",)),
        ],
        n,
    )
    alice2 = _qc([ClassicalFn(("A.y",), "A.k", lambda y: y), Measure(("A.k",))], n)
    return ProtocolSpec(
        kind="non_interactive_ka",
        name="product",
        n=n,
        registers=(
            ("A.y", 2, "A"),
            ("A.k", 2, "A"),
            ("B.y", 2, "B"),
            ("B.k", 2, "B"),
        ),
        stages=(Stage("alice", alice1), Stage("bob", bob), Stage("alice", alice2)),
        key_a="A.k",
        key_b="B.k",
        checkpoints={"post_queries": 2, "post_m1": 2, "post_m2": 2, "final": 3},
        perfect_complete=False,
    )


def _subsets(domain: int, size: int) -> list[tuple[int, ...]]:
    from itertools import combinations

    return list(combinations(range(domain), size))


def _make_merkle(n: int = 2, d: int = 2) -> ProtocolSpec:
    """Puzzle-style non-interactive agreement on the first common point.

    Each party samples a d-subset of the domain and reads the oracle
    there; subsets are exchanged and the key is H(x*) at the smallest
    common point.  Empty intersections yield distinct failure sentinels
    (Alice 2, Bob 3), so agreement is exactly the overlap probability.
    """
    domain = 2**n
    subsets = _subsets(domain, d)
    ns = len(subsets)

    def key_fn(sa_idx, sb_idx, *ys):
        common = sorted(set(subsets[sa_idx]) & set(subsets[sb_idx]))
        if not common:
            return None
        return common[0]

    def alice_key(sa_idx, sb_idx, *ys):
        x = key_fn(sa_idx, sb_idx)
        if x is None:
            return 2
        return ys[subsets[sa_idx].index(x)]

    def bob_key(sb_idx, sa_idx, *ys):
        x = key_fn(sa_idx, sb_idx)
        if x is None:
            return 3
        return ys[subsets[sb_idx].index(x)]

    a_steps: list[Step] = [Coin("A.s", _uniform(ns))]
    for j in range(d):
        a_steps.append(
            Query("classical", "A.s", f"A.y{j}", in_map=lambda s, j=j: subsets[s][j])
        )
    b_steps: list[Step] = [Coin("B.s", _uniform(ns))]
    for j in range(d):
        b_steps.append(
            Query("classical", "B.s", f"B.y{j}", in_map=lambda s, j=j: subsets[s][j])
        )
    publish_a = _qc([CopyReg("A.s", "M.m1")], n)
    publish_b = _qc([CopyReg("B.s", "M.m2")], n)
    a_key = _qc(
        [
            ClassicalFn(("A.s", "M.m2") + tuple(f"A.y{j}" for j in range(d)), "A.k", alice_key),
            Measure(("A.k",)),
        ],
        n,
    )
    b_key = _qc(
        [
            ClassicalFn(("B.s", "M.m1") + tuple(f"B.y{j}" for j in range(d)), "B.k", bob_key),
            Measure(("B.k",)),
        ],
        n,
    )
    regs = (
        [("A.s", ns, "A")]
        + [(f"A.y{j}", 2, "A") for j in range(d)]
        + [("A.k", 4, "A")]
        + [("B.s", ns, "B")]
        + [(f"B.y{j}", 2, "B") for j in range(d)]
        + [("B.k", 4, "B")]
        + [("M.m1", ns, "M"), ("M.m2", ns, "M")]
    )
    return ProtocolSpec(
        kind="non_interactive_ka",
        name="merkle",
        n=n,
        registers=tuple(regs),
        stages=(
            Stage("alice", _qc(a_steps, n)),
            Stage("bob", _qc(b_steps, n)),
            Stage("alice", publish_a, publish=("M.m1",)),
            Stage("bob", publish_b, publish=("M.m2",)),
            Stage("alice", a_key),
            Stage("bob", b_key),
        ),
        key_a="A.k",
        key_b="B.k",
        checkpoints={"post_queries": 2, "post_m1": 3, "post_m2": 4, "final": 6},
        perfect_complete=False,
        params={"n": n, "d": d},
    )


def _make_example1(n: int = 1) -> ProtocolSpec:
    """Bob broadcasts a random point; both parties output its oracle value."""
    domain = 2**n
    bob = _qc(
        [
            Coin("B.x", _uniform(domain)),
            Query("classical", "B.x", "B.h"),
            ClassicalFn(("B.h",), "B.k", lambda h: h),
            CopyReg("B.x", "M.m2"),
            Measure(("B.k",)),
        ],
        n,
    )
    alice2 = _qc(
        [
            Query("classical", "M.m2", "A.h"),
            ClassicalFn(("A.h",), "A.k", lambda h: h),
            Measure(("A.k",)),
        ],
        n,
    )
    return ProtocolSpec(
        kind="two_round_ka",
        name="example1",
        n=n,
        registers=(
            ("A.h", 2, "A"),
            ("A.k", 2, "A"),
            ("B.x", domain, "B"),
            ("B.h", 2, "B"),
            ("B.k", 2, "B"),
            ("M.m2", domain, "M"),
        ),
        stages=(
            Stage("alice", _qc([], n)),
            Stage("bob", bob, publish=("M.m2",)),
            Stage("alice", alice2),
        ),
        key_a="A.k",
        key_b="B.k",
        checkpoints={"post_queries": 2, "post_m1": 1, "post_m2": 2, "final": 3},
        perfect_complete=True,
        params={"n": n},
    )


ABORT_KEY = 2


def _make_example2(n: int = 2, x_probs: Sequence[float] | None = None) -> ProtocolSpec:
    """Alice cross-checks H(0) before accepting the key H(x).

    She stores y = H(0) up front; Bob broadcasts a random nonzero point x
    and keys on H(x); Alice re-reads H(0), aborts on mismatch, otherwise
    keys on H(x).  Honest runs never abort.  ``x_probs`` skews Bob's
    choice of x (entry 0 must stay 0).
    """
    domain = 2**n
    if x_probs is None:
        probs = (0.0,) + _uniform(domain - 1)
    else:
        probs = tuple(float(p) for p in x_probs)
        if len(probs) != domain or probs[0] != 0.0:
            raise ProtocolError("x_probs must cover the domain and avoid 0")
    bob = _qc(
        [
            Coin("B.x", probs),
            Query("classical", "B.x", "B.h"),
            ClassicalFn(("B.h",), "B.k", lambda h: h),
            CopyReg("B.x", "M.m2"),
            Measure(("B.k",)),
        ],
        n,
    )
    alice1 = _qc([Query("classical", None, "A.y", point=0)], n)
    alice2 = _qc(
        [
            Query("classical", None, "A.h0", point=0),
            Query("classical", "M.m2", "A.hx"),
            ClassicalFn(
                ("A.y", "A.h0", "A.hx"),
                "A.k",
                lambda y, h0, hx: hx if y == h0 else ABORT_KEY,
            ),
            Measure(("A.k",)),
        ],
        n,
    )
    return ProtocolSpec(
        kind="two_round_ka",
        name="example2",
        n=n,
        registers=(
            ("A.y", 2, "A"),
            ("A.h0", 2, "A"),
            ("A.hx", 2, "A"),
            ("A.k", 3, "A"),
            ("B.x", domain, "B"),
            ("B.h", 2, "B"),
            ("B.k", 2, "B"),
            ("M.m2", domain, "M"),
        ),
        stages=(
            Stage("alice", alice1),
            Stage("bob", bob, publish=("M.m2",)),
            Stage("alice", alice2),
        ),
        key_a="A.k",
        key_b="B.k",
        checkpoints={"post_queries": 2, "post_m1": 1, "post_m2": 2, "final": 3},
        perfect_complete=True,
        params={"n": n} if x_probs is None else {"n": n, "x_probs": list(probs)},
    )


def _make_toy_qpke(n: int = 2, quantum_ct: bool = False) -> ProtocolSpec:
    """Perfectly complete toy public-key scheme with classical key generation.

    Key generation reads H at a random point r and publishes r itself as
    the public key; encryption hides the key bit against H at a random
    x != r; decryption re-derives H(x).  Deliberately insecure, but it
    exercises the whole classical-keygen pipeline.  With ``quantum_ct``
    the ciphertext bit travels as a conjugate-basis qubit.
    """
    domain = 2**n

    def x_probs(pk):
        return tuple(0.0 if x == pk else 1.0 / (domain - 1) for x in range(domain))

    alice1 = _qc(
        [
            Coin("A.r", _uniform(domain)),
            Query("classical", "A.r", "A.y"),
            CopyReg("A.r", "M.pk"),
        ],
        n,
    )
    bob_steps: list[Step] = [
        Coin("B.k", (0.5, 0.5)),
        Coin("B.x", control=("M.pk",), probs_fn=x_probs),
        Query("xor", "B.x", "B.h"),
        CopyReg("B.x", "M.ctx"),
        ClassicalFn(("B.k", "B.h"), "M.ctc", lambda k, h: k ^ h),
        Measure(("B.k",)),
    ]
    if quantum_ct:
        bob_steps.append(Unitary(("M.ctc",), HADAMARD))
    alice2_steps: list[Step] = [Query("xor", "M.ctx", "A.h2")]
    if quantum_ct:
        alice2_steps.append(Unitary(("M.ctc",), HADAMARD))
    alice2_steps += [
        ClassicalFn(("M.ctc", "A.h2"), "A.k", lambda c, h: c ^ h),
        Measure(("A.k",)),
    ]
    name = "toy-qpke-qct" if quantum_ct else "toy-qpke"
    return ProtocolSpec(
        kind="qpke_classical_keygen",
        name=name,
        n=n,
        registers=(
            ("A.r", domain, "A"),
            ("A.y", 2, "A"),
            ("A.h2", 2, "A"),
            ("A.k", 2, "A"),
            ("B.k", 2, "B"),
            ("B.x", domain, "B"),
            ("B.h", 2, "B"),
            ("M.pk", domain, "M"),
            ("M.ctx", domain, "M"),
            ("M.ctc", 2, "M"),
        ),
        stages=(
            Stage("alice", alice1, publish=("M.pk",)),
            Stage("bob", _qc(bob_steps, n), publish=("M.ctx", "M.ctc")),
            Stage("alice", _qc(alice2_steps, n)),
        ),
        key_a="A.k",
        key_b="B.k",
        checkpoints={"post_queries": 2, "post_m1": 1, "post_m2": 2, "final": 3},
        quantum_messages=frozenset({"M.ctc"}) if quantum_ct else frozenset(),
        perfect_complete=True,
        params={"n": n, "quantum_ct": quantum_ct},
    )


def _make_toy_qpke_qpk(n: int = 1) -> ProtocolSpec:
    """Pure quantum public key (|0, H(0)> + |1, H(1)>)/sqrt(2), classical keygen.

    Key generation reads the whole oracle classically (the secret key);
    the public key is a pure two-qubit state built from those values.
    Encryption measures the public key and masks the key bit with the
    observed oracle value; decryption unmasks with the secret key.
    """
    if n != 1:
        raise ProtocolError("the pure-public-key toy is sized for n=1")
    alice1 = _qc(
        [
            Query("classical", None, "A.y0", point=0),
            Query("classical", None, "A.y1", point=1),
            Unitary(("M.pkx",), HADAMARD),
            ClassicalFn(("M.pkx", "A.y0", "A.y1"), "M.pky", lambda x, y0, y1: y1 if x else y0),
        ],
        n,
    )
    bob = _qc(
        [
            Measure(("M.pkx", "M.pky")),
            Coin("B.k", (0.5, 0.5)),
            ClassicalFn(("B.k", "M.pky"), "M.ct", lambda k, y: k ^ y),
            CopyReg("M.pkx", "M.ctx"),
            Measure(("B.k",)),
        ],
        n,
    )
    alice2 = _qc(
        [
            ClassicalFn(
                ("M.ct", "M.ctx", "A.y0", "A.y1"),
                "A.k",
                lambda c, x, y0, y1: c ^ (y1 if x else y0),
            ),
            Measure(("A.k",)),
        ],
        n,
    )
    return ProtocolSpec(
        kind="qpke_quantum_pk",
        name="toy-qpke-qpk",
        n=n,
        registers=(
            ("A.y0", 2, "A"),
            ("A.y1", 2, "A"),
            ("A.k", 2, "A"),
            ("B.k", 2, "B"),
            ("M.pkx", 2, "M"),
            ("M.pky", 2, "M"),
            ("M.ct", 2, "M"),
            ("M.ctx", 2, "M"),
        ),
        stages=(
            Stage("alice", alice1, publish=("M.pkx", "M.pky")),
            Stage("bob", bob, publish=("M.ct", "M.ctx")),
            Stage("alice", alice2),
        ),
        key_a="A.k",
        key_b="B.k",
        checkpoints={"post_queries": 2, "post_m1": 1, "post_m2": 2, "final": 3},
        quantum_messages=frozenset({"M.pkx", "M.pky"}),
        perfect_complete=True,
        params={"n": n},
    )


def _make_toy_shortsk_trivial() -> ProtocolSpec:
    """Degenerate secret-key space of size one; the key is just H(0)."""
    n = 1
    alice1 = _qc([Query("classical", None, "A.y", point=0)], n)
    bob = _qc(
        [
            Query("classical", None, "B.h0", point=0),
            ClassicalFn(("B.h0",), "B.k", lambda h: h),
            Measure(("B.k",)),
        ],
        n,
    )
    alice2 = _qc([ClassicalFn(("A.y",), "A.k", lambda y: y), Measure(("A.k",))], n)
    return ProtocolSpec(
        kind="qpke_short_sk",
        name="toy-shortsk-trivial",
        n=n,
        registers=(
            ("A.r", 1, "A"),
            ("A.y", 2, "A"),
            ("A.k", 2, "A"),
            ("B.h0", 2, "B"),
            ("B.k", 2, "B"),
        ),
        stages=(Stage("alice", alice1), Stage("bob", bob), Stage("alice", alice2)),
        key_a="A.k",
        key_b="B.k",
        checkpoints={"post_queries": 2, "post_m1": 1, "post_m2": 2, "final": 3},
        perfect_complete=True,
        params={"trivial_sk": True},
    )


def _make_toy_shortsk(delta: float = 1.0) -> ProtocolSpec:
    """Two-round agreement keyed by H(sk) xor H(x) with a short secret key.

    ``delta`` < 1 lets Bob's key bit flip with probability 1 - delta, so
    completeness is exactly delta.
    """
    n = 1
    sk_dim = 2
    noise = (float(delta), float(1.0 - delta))
    alice1_steps: list[Step] = [
        Coin("A.r", _uniform(sk_dim)),
        Query("classical", "A.r", "A.y"),
        CopyReg("A.r", "M.pk"),
    ]
    bob = _qc(
        [
            Query("classical", "M.pk", "B.hr"),
            Coin("B.x", (0.5, 0.5)),
            Query("classical", "B.x", "B.hx"),
            Coin("B.noise", noise),
            ClassicalFn(("B.hr", "B.hx", "B.noise"), "B.k", lambda hr, hx, e: hr ^ hx ^ e),
            CopyReg("B.x", "M.ctx"),
            Measure(("B.k",)),
        ],
        n,
    )
    alice2 = _qc(
        [
            Query("classical", "A.r", "A.hr2"),
            Query("classical", "M.ctx", "A.hx2"),
            ClassicalFn(("A.hr2", "A.hx2"), "A.k", lambda hr, hx: hr ^ hx),
            Measure(("A.k",)),
        ],
        n,
    )
    return ProtocolSpec(
        kind="qpke_short_sk",
        name="toy-shortsk",
        n=n,
        registers=(
            ("A.r", sk_dim, "A"),
            ("A.y", 2, "A"),
            ("A.hr2", 2, "A"),
            ("A.hx2", 2, "A"),
            ("A.k", 2, "A"),
            ("B.hr", 2, "B"),
            ("B.x", 2, "B"),
            ("B.hx", 2, "B"),
            ("B.noise", 2, "B"),
            ("B.k", 2, "B"),
            ("M.pk", sk_dim, "M"),
            ("M.ctx", 2, "M"),
        ),
        stages=(
            Stage("alice", _qc(alice1_steps, n), publish=("M.pk",)),
            Stage("bob", bob, publish=("M.ctx",)),
            Stage("alice", alice2),
        ),
        key_a="A.k",
        key_b="B.k",
        checkpoints={"post_queries": 2, "post_m1": 1, "post_m2": 2, "final": 3},
        perfect_complete=(delta == 1.0),
        params={"delta": delta},
    )


def _make_nonadaptive(n: int = 1, amplitudes: Sequence[Sequence[float]] | None = None) -> ProtocolSpec:
    """Parallel-query agreement: prepare per-query pairs, query all at once."""
    if amplitudes is None:
        amplitudes = [[0.5] * (2 ** (n + 1))]
    d = len(amplitudes)
    regs: list[tuple[str, int, str]] = []
    stages: list[Stage] = []
    for party, tag in (("alice", "A"), ("bob", "B")):
        steps: list[Step] = []
        for l, amps in enumerate(amplitudes):
            amps = np.asarray(amps, dtype=complex)
            if amps.size != 2 ** (n + 1):
                raise ProtocolError("component amplitudes must cover (input, output) pairs")
            xreg, yreg = f"{tag}.x{l}", f"{tag}.y{l}"
            regs += [(xreg, 2**n, tag), (yreg, 2, tag)]
            steps.append(Unitary((xreg, yreg), oraclesim.completion_unitary(amps / np.linalg.norm(amps))))
        for l in range(d):
            steps.append(Query("phase", f"{tag}.x{l}", f"{tag}.y{l}"))
        stages.append(Stage(party, _qc(steps, n)))
    for tag in ("A", "B"):
        regs.append((f"{tag}.k", 2, tag))
    stages.append(
        Stage("alice", _qc([CopyReg("A.y0", "A.k"), Measure(("A.k",))], n))
    )
    stages.append(
        Stage("bob", _qc([CopyReg("B.y0", "B.k"), Measure(("B.k",))], n))
    )
    return ProtocolSpec(
        kind="non_interactive_ka",
        name="nonadaptive",
        n=n,
        registers=tuple(regs),
        stages=tuple(stages),
        key_a="A.k",
        key_b="B.k",
        checkpoints={"post_queries": 2, "post_m1": 2, "post_m2": 2, "final": 4},
        perfect_complete=False,
        params={"n": n, "d": d},
    )


_BUILDERS: dict[str, Callable[..., ProtocolSpec]] = {
    "toy-nika": _make_toy_nika,
    "product": _make_product,
    "merkle": _make_merkle,
    "example1": _make_example1,
    "example2": _make_example2,
    "toy-qpke": lambda **kw: _make_toy_qpke(quantum_ct=False, **kw),
    "toy-qpke-qct": lambda **kw: _make_toy_qpke(quantum_ct=True, **kw),
    "toy-qpke-qpk": _make_toy_qpke_qpk,
    "toy-shortsk": _make_toy_shortsk,
    "toy-shortsk-trivial": _make_toy_shortsk_trivial,
    "nonadaptive": _make_nonadaptive,
}


def protocol_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILDERS))


def make_protocol(name: str, **params) -> ProtocolSpec:
    """Construct a built-in protocol; perfect-completeness flags are verified."""
    if name not in _BUILDERS:
        raise ProtocolError(f"unknown protocol {name!r}; know {sorted(_BUILDERS)}")
    params = {k: v for k, v in params.items() if k not in ("quantum_ct", "trivial_sk")}
    spec = _BUILDERS[name](**params)
    if spec.perfect_complete:
        agreement = agreement_probability(spec, "exact_enumeration")
        if abs(agreement - 1.0) > 1e-12:
            raise ProtocolError(
                f"{name} flagged perfectly complete but agreement is {agreement}"
            )
    return spec
