"""Eavesdroppers against the toy protocols.

Every attack follows the same recipe: simulate the honest parties, hand
Eve copies of whatever she can legitimately rerun, condition on her
registers plus the transcript, resample the missing view through a
recovery step, and finish the protocol on the fake view.  Two engines
realize the recovery step:

* a dense quantum path (entropies from ``qentropy``, rotated-Petz
  channels from ``recovery``) used whenever the assembled joint state
  fits comfortably in memory;
* an exact classical path for joints that are diagonal in the
  computational basis, where the optimal recovery channel is posterior
  resampling and every probability is enumerable.

Small instances are cross-checked between the two paths in the tests.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import oraclesim, protocols
from .jointdist import JointDistribution
from .oraclesim import OracleFunction, PurifiedOracleState, QueryRecord, reprogram_oracle, sample_oracle
from .protocols import (
    Branch,
    ClassicalFn,
    Coin,
    CopyReg,
    Measure,
    ProtocolError,
    ProtocolSpec,
    Query,
    QueryCircuit,
    Stage,
    Unitary,
    enumerate_branches,
    enumerate_joint,
    extend_spec,
    make_protocol,
    run_protocol,
    sample_steps,
)
from .qentropy import conditional_mutual_information, von_neumann_entropy
from .qmat import DensityMatrix, SystemLayout, partial_trace, reorder
from .recovery import apply_recovery, best_recovery, default_grid, fr_bound

DENSE_DIM_CAP = 4096
CMI_SLACK = 1e-8


class AttackError(ValueError):
    """Attack preconditions violated or instance too large for any engine."""


# ---------------------------------------------------------------------------
# query weights, heavy sets, BBBV


@dataclass(frozen=True)
class QueryWeightProfile:
    """Total squared amplitude each oracle input receives across queries."""

    weights: dict[int, float]
    query_count: int
    per_query: tuple[dict[int, float], ...] = ()

    def __post_init__(self) -> None:
        total = sum(self.weights.values())
        if total > self.query_count + 1e-8:
            raise AttackError(f"query weights sum to {total} > d = {self.query_count}")

    def weight(self, x: int) -> float:
        return self.weights.get(x, 0.0)

    def heavy_set(self, eps: float) -> "HeavySet":
        if self.query_count == 0:
            return HeavySet(threshold=math.inf, members=frozenset())
        thr = eps**2 / self.query_count**2
        return HeavySet(thr, frozenset(x for x, q in self.weights.items() if q >= thr))


@dataclass(frozen=True)
class HeavySet:
    threshold: float
    members: frozenset[int]


def _state_with_values(
    n: int, dims, labels: Sequence[str], values: Mapping[str, int], oracle: OracleFunction | None
) -> PurifiedOracleState:
    dim = _dim_fn(dims)
    lay = SystemLayout(tuple((l, dim(l)) for l in labels))
    if oracle is None:
        state = oraclesim.init_purified_oracle(n, lay)
    else:
        state = oraclesim.init_sampled_state(n, lay, oracle)
    for l, v in values.items():
        if v:
            state = oraclesim.apply_classical_fn(state, [], l, lambda v=v: v)
    return state


def _dim_fn(source) -> Callable[[str], int]:
    if isinstance(source, ProtocolSpec):
        return source.dim
    return lambda label: int(source[label])


class _ProfiledRunner:
    """Purified circuit runner that snapshots query-input marginals."""

    def __init__(self, n: int, dims, state: PurifiedOracleState):
        self.n = n
        self.dim = _dim_fn(dims)
        self.state = state
        self.env = 0
        self.marginals: list[dict[int, float]] = []

    def _ensure(self, label: str | None) -> None:
        if label is None or label in self.state.layout.labels:
            return
        self.state = oraclesim.add_register(self.state, label, self.dim(label))

    def _input_marginal(self, step: Query) -> dict[int, float]:
        domain = 2**self.n
        if step.in_label is None:
            return {int(step.point) % domain: 1.0}
        probs = self.state.probabilities([step.in_label])
        out: dict[int, float] = defaultdict(float)
        for (v,), p in probs.items():
            x = step.in_map(v) % domain if step.in_map else v % domain
            out[int(x)] += p
        return dict(out)

    def run_circuit(self, circuit: QueryCircuit) -> None:
        for step in circuit.steps:
            if isinstance(step, Coin):
                for c in step.control:
                    self._ensure(c)
                self._ensure(step.label)
                if step.control:
                    self.state = oraclesim.prepare_controlled(
                        self.state, list(step.control), step.label,
                        lambda *cv: np.sqrt(step.distribution(*cv)),
                    )
                else:
                    self.state = oraclesim.prepare_superposition(
                        self.state, step.label, np.sqrt(step.distribution())
                    )
                self.env += 1
                env = f"{step.label}~p{self.env}"
                self.state = oraclesim.add_register(self.state, env, self.dim(step.label))
                self.state = oraclesim.copy_register(self.state, step.label, env)
            elif isinstance(step, Query):
                self._ensure(step.in_label)
                self._ensure(step.out_label)
                self.marginals.append(self._input_marginal(step))
                self.state = oraclesim.apply_query(
                    self.state, step.mode, step.in_label, step.out_label, step.in_map, step.point
                )
            elif isinstance(step, Unitary):
                for l in step.labels:
                    self._ensure(l)
                self.state = oraclesim.apply_unitary(self.state, list(step.labels), step.matrix)
            elif isinstance(step, ClassicalFn):
                for l in step.srcs:
                    self._ensure(l)
                self._ensure(step.dst)
                self.state = oraclesim.apply_classical_fn(self.state, list(step.srcs), step.dst, step.fn)
            elif isinstance(step, CopyReg):
                self._ensure(step.src)
                self._ensure(step.dst)
                self.state = oraclesim.copy_register(self.state, step.src, step.dst)
            elif isinstance(step, Measure):
                # dephasing never changes computational-basis marginals,
                # so measurements are no-ops for weight profiling
                for l in step.labels:
                    self._ensure(l)
            else:
                raise ProtocolError(f"unknown step {step!r}")


def exact_query_weights(
    circuit: QueryCircuit,
    input_state: PurifiedOracleState,
    dims: "ProtocolSpec | Mapping[str, int]",
) -> QueryWeightProfile:
    """q_x from the pre-query input marginals of every query in the circuit."""
    runner = _ProfiledRunner(circuit.n, dims, input_state)
    runner.run_circuit(circuit)
    weights: dict[int, float] = defaultdict(float)
    for marg in runner.marginals:
        for x, p in marg.items():
            weights[x] += p
    return QueryWeightProfile(dict(weights), circuit.query_count, tuple(runner.marginals))


def bob_query_weights(
    spec: ProtocolSpec, oracle: OracleFunction, m1_values: Mapping[str, int]
) -> QueryWeightProfile:
    """Ground-truth weights of Bob's stage given the first message."""
    bob_stage = next(s for s in spec.stages if s.party == "bob")
    state = _state_with_values(spec.n, spec, sorted(m1_values), m1_values, oracle)
    return exact_query_weights(bob_stage.circuit, state, spec)


def bbbv_check(
    circuit: QueryCircuit,
    dims: "ProtocolSpec | Mapping[str, int]",
    h: OracleFunction,
    h2: OracleFunction,
    initial_values: Mapping[str, int] | None = None,
) -> tuple[float, float]:
    """Final-state perturbation versus the query-weight bound.

    Returns (lhs, rhs): the Euclidean distance between the final states
    under the two oracles, and 2 sqrt(d) sqrt(sum of weights on points
    where the oracles differ).  lhs <= rhs always.
    """
    if h.n != h2.n:
        raise AttackError("oracles must share a domain")
    values = dict(initial_values or {})
    labels = sorted(values)
    runs = []
    for table in (h, h2):
        runner = _ProfiledRunner(
            circuit.n, dims, _state_with_values(circuit.n, dims, labels, values, table)
        )
        runner.run_circuit(circuit)
        runs.append(runner)
    psi, phi = runs[0].state, runs[1].state
    if psi.layout != phi.layout:
        raise AttackError("circuit produced different layouts under the two oracles")
    lhs = float(np.linalg.norm(psi.vector - phi.vector))
    diff = [x for x in range(2**h.n) if h.value(x) != h2.value(x)]
    weights: dict[int, float] = defaultdict(float)
    for marg in runs[0].marginals:
        for x, p in marg.items():
            weights[x] += p
    d = circuit.query_count
    rhs = 2.0 * math.sqrt(d) * math.sqrt(sum(weights[x] for x in diff)) if d else 0.0
    if lhs > rhs + 1e-9:
        raise AttackError(f"perturbation bound violated: {lhs} > {rhs}")
    return lhs, rhs


# ---------------------------------------------------------------------------
# attack report


@dataclass
class AttackReport:
    """Outcome record every eavesdropper produces."""

    attack_name: str
    params: dict
    queries_used: int
    cmi_achieved: float | None
    recovery_td: float | None
    fr_bound: float | None
    key_match_prob: float
    bound_satisfied: bool
    support_violation_rate: float | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.key_match_prob <= 1.0 + 1e-12:
            raise AttackError(f"key match probability {self.key_match_prob} outside [0, 1]")

    def to_json_dict(self) -> dict:
        out = {
            "attack_name": self.attack_name,
            "params": {k: self.params[k] for k in sorted(self.params)},
            "queries_used": self.queries_used,
            "cmi_achieved": self.cmi_achieved,
            "recovery_td": self.recovery_td,
            "fr_bound": self.fr_bound,
            "key_match_prob": self.key_match_prob,
            "flags": {
                "bound_satisfied": self.bound_satisfied,
                "support_violation_rate": self.support_violation_rate,
            },
            "extras": {k: self.extras[k] for k in sorted(self.extras)},
        }
        return out


def wilson_lower_bound(successes: int, trials: int, z: float = 1.959963984540054) -> float:
    """Lower end of the Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0
    phat = successes / trials
    denom = 1 + z**2 / trials
    center = phat + z**2 / (2 * trials)
    spread = z * math.sqrt(phat * (1 - phat) / trials + z**2 / (4 * trials**2))
    return max(0.0, (center - spread) / denom)


# ---------------------------------------------------------------------------
# repeat-and-recover (non-interactive and query-free final stage)


def _written_labels(circuit: QueryCircuit) -> list[str]:
    out: list[str] = []
    for step in circuit.steps:
        if isinstance(step, Coin):
            out.append(step.label)
        elif isinstance(step, Query):
            out.append(step.out_label)
        elif isinstance(step, Unitary):
            out.extend(step.labels)
        elif isinstance(step, ClassicalFn):
            out.append(step.dst)
        elif isinstance(step, CopyReg):
            out.append(step.dst)
    seen: list[str] = []
    for l in out:
        if l not in seen:
            seen.append(l)
    return seen


def _copy_circuit(spec: ProtocolSpec, party: str) -> tuple[QueryCircuit, list[str]]:
    """The circuit one Eve copy reruns, and the labels it owns afterwards.

    For quantum public keys the copy re-prepares the published pure state
    (the same preparation on the same secret registers), then runs the
    party's stage on its private copy.
    """
    owner = {"alice": "A", "bob": "B"}[party]
    party_stage = next(s for s in spec.stages if s.party == party)
    steps: list = []
    if spec.quantum_messages:
        first = spec.stages[0]
        for step in first.circuit.steps:
            touched = set(_written_labels(QueryCircuit((step,), spec.n)))
            if touched & spec.quantum_messages:
                steps.append(step)
    steps.extend(party_stage.circuit.steps)
    circuit = QueryCircuit(tuple(steps), spec.n)
    # registers the rerun writes become Eve-local: the party's private
    # state plus any message registers it would have produced
    written = _written_labels(circuit)
    private = [
        l
        for l in written
        if l in spec.owned(owner) or l in spec.message_labels or l in spec.quantum_messages
    ]
    return circuit, private


def repeated_copies_spec(
    spec: ProtocolSpec, party: str, copies: int, prefix: str = "E"
) -> tuple[ProtocolSpec, list[list[str]]]:
    """Extend a protocol with Eve's independent reruns of one party."""
    circuit, private = _copy_circuit(spec, party)
    extra_regs: list[tuple[str, int, str]] = []
    extra_stages: list[Stage] = []
    copy_labels: list[list[str]] = []
    quantum_extra: list[str] = []
    for i in range(1, copies + 1):
        mapping = {l: f"{prefix}{i}.{l}" for l in private}
        for l in private:
            extra_regs.append((mapping[l], spec.dim(l), "E"))
            if l in spec.quantum_messages:
                quantum_extra.append(mapping[l])
        relabeled = circuit.relabeled(lambda l, m=mapping: m.get(l, l))
        extra_stages.append(Stage("eve", relabeled))
        copy_labels.append([mapping[l] for l in private])
    ext = extend_spec(spec, extra_regs, extra_stages, quantum_extra)
    return ext, copy_labels


def _classical_recovery_metrics(
    joint: JointDistribution,
    target_labels: Sequence[str],
    partner_labels: Sequence[str],
    conditioning: Sequence[str],
    target_key: str,
    partner_key: str,
) -> tuple[float, float]:
    """Posterior-resampling recovery: exact trace distance and key match.

    The fake view is drawn from P(target | conditioning); returns the
    total-variation distance between (partner, conditioning, fake) and
    (partner, conditioning, real), and the probability the fake view's
    key register matches the partner's.
    """
    cond = list(conditioning)
    tgt = list(target_labels)
    other = list(partner_labels)
    real = joint.marginal(other + cond + tgt)
    post: dict[tuple[int, ...], JointDistribution] = {}
    for cval in joint.support(cond):
        post[cval] = joint.condition(dict(zip(cond, cval))).marginal(tgt)
    fake_probs: dict[tuple[int, ...], float] = defaultdict(float)
    key_match = 0.0
    pk_idx = other.index(partner_key)
    tk_idx = tgt.index(target_key)
    base = joint.marginal(other + cond)
    for row, p in base.table:
        ovals, cvals = row[: len(other)], row[len(other) :]
        posterior = post[tuple(cvals)]
        for tvals, q in posterior.table:
            fake_probs[tuple(ovals) + tuple(cvals) + tuple(tvals)] += p * q
            if tvals[tk_idx] == ovals[pk_idx]:
                key_match += p * q
    fake = JointDistribution.from_dict(tuple(other + cond + tgt), fake_probs)
    return real.tv_distance(fake), float(key_match)


def eve_repeat_and_recover(
    spec: ProtocolSpec,
    t_max: int,
    c_labels: Sequence[str] | None = None,
    grid: Iterable[float] | None = None,
    engine: str = "auto",
) -> AttackReport:
    """Rerun one party's query stage, condition, and rebuild the other view.

    Non-interactive protocols rerun Alice's query stage; two-round
    protocols whose final stage makes no queries rerun Bob on the first
    message.  Eve keeps t copies, scans conditioning prefixes i = 0..t
    for the smallest CMI between the target and partner views, applies
    the best recovery at that prefix, and reads the key off the rebuilt
    view.  The minimum CMI must come in below S(partner)/(t+1).
    """
    final_queries = spec.stages[-1].circuit.query_count
    if spec.kind == "non_interactive_ka":
        party = "alice"
    elif final_queries == 0:
        party = "bob"
    else:
        raise AttackError(
            "repeat-and-recover needs a non-interactive protocol or a "
            "query-free final stage"
        )
    target_labels = list(spec.alice_labels)  # view being rebuilt
    partner_labels = list(spec.bob_labels)
    transcript = list(c_labels) if c_labels is not None else [
        l for l in spec.message_labels if l not in spec.quantum_messages
    ]
    ext, copy_labels = repeated_copies_spec(spec, party, t_max)

    all_labels = target_labels + partner_labels + transcript + [l for c in copy_labels for l in c]
    dense_dim = 1
    for l in all_labels:
        dense_dim *= ext.dim(l)
    if engine == "auto":
        engine = "dense" if dense_dim <= DENSE_DIM_CAP else "classical"

    if engine == "dense":
        state = run_protocol(ext, "purified", "final").joint
        # registers never touched stay |0> and carry nothing; drop them
        present = set(state.layout.labels)
        target_labels = [l for l in target_labels if l in present]
        partner_labels = [l for l in partner_labels if l in present]
        transcript = [l for l in transcript if l in present]
        copy_labels = [[l for l in c if l in present] for c in copy_labels]
        all_labels = target_labels + partner_labels + transcript + [
            l for c in copy_labels for l in c
        ]
        rho = state.reduced_density(all_labels)
        cmis = []
        for i in range(t_max + 1):
            cond = transcript + [l for c in copy_labels[:i] for l in c]
            sub = partial_trace(rho, target_labels + partner_labels + cond)
            cmis.append(
                conditional_mutual_information(sub, target_labels, partner_labels, cond).value
            )
        best_i = int(np.argmin(cmis))
        cond = transcript + [l for c in copy_labels[:best_i] for l in c]
        sub = partial_trace(rho, target_labels + partner_labels + cond)
        s_partner = von_neumann_entropy(sub, partner_labels).value
        result = best_recovery(
            sub,
            a_labels=partner_labels,
            e_labels=cond,
            b_labels=target_labels,
            grid=grid if grid is not None else default_grid(),
        )
        rho_pe = partial_trace(sub, partner_labels + cond)
        rebuilt = apply_recovery(
            result.channel, rho_pe, cond, b_labels=[l + "'" for l in target_labels]
        )
        key_match = _diagonal_key_match(
            rebuilt, spec.key_b, spec.key_a + "'", spec.dim(spec.key_b), spec.dim(spec.key_a)
        )
        cmi_star = cmis[best_i]
        td = result.achieved_td
        extras = {
            "engine": "dense",
            "prefix_cmis": [float(c) for c in cmis],
            "prefix_selected": best_i,
            "partner_entropy_bits": s_partner,
            "grid_size": len(result.grid),
            "rotation_param": result.channel.rotation_param,
        }
    elif engine == "classical":
        joint = enumerate_joint(ext, "final")
        cmis = []
        for i in range(t_max + 1):
            cond = transcript + [l for c in copy_labels[:i] for l in c]
            cmis.append(joint.cmi(target_labels, partner_labels, cond))
        best_i = int(np.argmin(cmis))
        cond = transcript + [l for c in copy_labels[:best_i] for l in c]
        s_partner = joint.entropy(partner_labels)
        td, key_match = _classical_recovery_metrics(
            joint, target_labels, partner_labels, cond, spec.key_a, spec.key_b
        )
        cmi_star = cmis[best_i]
        extras = {
            "engine": "classical",
            "prefix_cmis": [float(c) for c in cmis],
            "prefix_selected": best_i,
            "partner_entropy_bits": s_partner,
        }
    else:
        raise AttackError(f"unknown engine {engine!r}")

    entropy_bound = s_partner / (t_max + 1)
    bound_ok = cmi_star <= entropy_bound + CMI_SLACK
    match_ok = key_match >= 1.0 - 2.0 * td - 1e-9 if spec.perfect_complete else True
    repeated_queries = spec.query_budget(party) if party == "alice" else spec.query_budget("bob")
    return AttackReport(
        attack_name="repeat_and_recover",
        params={"t": t_max, "protocol": spec.name, "engine": extras["engine"]},
        queries_used=t_max * repeated_queries,
        cmi_achieved=float(cmi_star),
        recovery_td=float(td),
        fr_bound=fr_bound(cmi_star),
        key_match_prob=float(key_match),
        bound_satisfied=bool(bound_ok and match_ok),
        extras={**extras, "entropy_bound": float(entropy_bound)},
    )


def _diagonal_key_match(
    state: DensityMatrix, key_one: str, key_two: str, dim_one: int, dim_two: int
) -> float:
    """Probability that two measured key registers agree."""
    rho = reorder(partial_trace(state, [key_one, key_two]), [key_one, key_two])
    diag = np.real(np.diagonal(rho.entries)).reshape(dim_one, dim_two)
    return float(sum(diag[v, v] for v in range(min(dim_one, dim_two))))


# ---------------------------------------------------------------------------
# heavy-query sampling (modified Bob)


def _m1_context(spec: ProtocolSpec, rng: np.random.Generator, oracle: OracleFunction | None):
    """Sample an oracle and a first-message branch when not provided."""
    h = oracle if oracle is not None else sample_oracle(spec.n, rng)
    run = run_protocol(spec, "sampled", "post_m1", seed=int(rng.integers(0, 2**62)), oracle=h)
    return h, run.joint


def _bob_stage(spec: ProtocolSpec) -> Stage:
    return next(s for s in spec.stages if s.party == "bob")


def _fresh_branch_from(base: Branch, keep: Iterable[str]) -> Branch:
    values = {l: base.values[l] for l in keep if l in base.values}
    return Branch(1.0, base.oracle, values, None)


def modified_bob_sample(
    spec: ProtocolSpec,
    reps: int,
    seed: int | np.random.Generator,
    oracle: OracleFunction | None = None,
    m1_branch: Branch | None = None,
) -> QueryRecord:
    """Record oracle points by rerunning Bob and measuring a random query.

    Each repetition simulates a fresh Bob on the same first message up to
    a uniformly chosen query, measures that query's input register, and
    stores the point with its oracle value.
    """
    if reps < 1:
        raise AttackError("need at least one sampling repetition")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if m1_branch is None:
        oracle, m1_branch = _m1_context(spec, rng, oracle)
        published = [l for l in spec.stages[0].publish if l not in spec.quantum_messages]
        m1_branch = Branch(1.0, oracle, {l: m1_branch.value(l) for l in published})
    else:
        oracle = m1_branch.oracle
    bob = _bob_stage(spec).circuit
    d = bob.query_count
    if d == 0:
        return QueryRecord()
    shared = list(m1_branch.values)
    pairs: list[tuple[int, int]] = []
    for _ in range(reps):
        target = int(rng.integers(1, d + 1))
        br = _fresh_branch_from(m1_branch, shared)
        seen = 0
        for step in bob.steps:
            if isinstance(step, Query):
                seen += 1
                if seen == target:
                    x = _measure_query_input(spec, br, step, rng)
                    pairs.append((x, oracle.value(x)))
                    break
            br = sample_steps(spec, br, [step], rng)
    return QueryRecord(tuple(pairs))


def _measure_query_input(
    spec: ProtocolSpec, br: Branch, step: Query, rng: np.random.Generator
) -> int:
    domain = 2**spec.n
    if step.in_label is None:
        return int(step.point) % domain
    if step.in_label in br.coherent_labels():
        br = sample_steps(spec, br, [Measure((step.in_label,))], rng)
    v = br.value(step.in_label)
    return (step.in_map(v) if step.in_map else v) % domain


def paper_reps(d: int, eps: float) -> int:
    """Per-copy sampling repetitions 3 d^2 (ln d + ln 1/eps), at least 1."""
    if d == 0:
        return 0
    return max(1, math.ceil(3 * d * d * (math.log(max(d, 1)) + math.log(1.0 / eps))))


def paper_copies(d: int, n: int, eps: float) -> int:
    """First-message copies d n / eps^2, at least 1."""
    return max(1, math.ceil(d * n / eps**2))


def heavy_coverage_experiment(
    spec: ProtocolSpec,
    eps: float,
    trials: int,
    seed: int,
    copies: int | None = None,
    reps: int | None = None,
) -> dict:
    """Estimate Pr[W_B subseteq In_E] at the prescribed sampling budget.

    Per trial the heavy set is computed from exact query weights and
    Eve's point collection is simulated at ``copies x reps`` draws from
    the per-query input marginals (each draw distributed exactly as one
    measured rerun).  Returns the success count with a Wilson 95% lower
    bound.
    """
    d = _bob_stage(spec).circuit.query_count
    copies = copies if copies is not None else paper_copies(d, spec.n, eps)
    reps = reps if reps is not None else paper_reps(d, eps)
    successes = 0
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(trial,)))
        h, m1_branch = _m1_context(spec, rng, None)
        published = [l for l in spec.stages[0].publish if l not in spec.quantum_messages]
        m1_values = {l: m1_branch.value(l) for l in published}
        profile = bob_query_weights(spec, h, m1_values)
        heavy = profile.heavy_set(eps).members
        in_e: set[int] = set()
        marginals = profile.per_query
        for _ in range(copies):
            for _ in range(reps):
                q = int(rng.integers(0, d)) if d else 0
                marg = marginals[q]
                xs = sorted(marg)
                probs = np.array([marg[x] for x in xs])
                in_e.add(int(xs[int(rng.choice(len(xs), p=probs / probs.sum()))]))
        if heavy <= in_e:
            successes += 1
    return {
        "trials": trials,
        "successes": successes,
        "copies": copies,
        "reps": reps,
        "eps": eps,
        "wilson_lower": wilson_lower_bound(successes, trials),
    }


# ---------------------------------------------------------------------------
# the classical-keygen eavesdropper (full pipeline)


def _stage_written(spec: ProtocolSpec, party: str) -> list[str]:
    return _written_labels(next(s for s in spec.stages if s.party == party).circuit)


def _observable(spec: ProtocolSpec, labels: Iterable[str]) -> list[str]:
    return [l for l in labels if l not in spec.quantum_messages]


def alice1_record(spec: ProtocolSpec, values: Mapping[str, int]) -> QueryRecord:
    """Query record implied by a (fake or real) key-generation view."""
    stage = spec.stages[0]
    pairs = []
    domain = 2**spec.n
    for step in stage.circuit.steps:
        if isinstance(step, Query):
            if step.in_label is None:
                x = int(step.point) % domain
            else:
                x = values[step.in_label]
                x = (step.in_map(x) if step.in_map else x) % domain
            pairs.append((x, values[step.out_label] % 2))
    return QueryRecord(tuple(pairs))


class _KeygenAttackContext:
    """Caches for one protocol: per-oracle branch tables and marginals."""

    def __init__(self, spec: ProtocolSpec):
        if not spec.perfect_complete:
            raise AttackError("the keygen attack requires perfect completeness")
        for step in spec.stages[0].circuit.steps:
            if isinstance(step, Query) and step.mode != "classical":
                raise AttackError("key generation must query classically")
        self.spec = spec
        self.oracles = list(oraclesim.enumerate_oracles(spec.n))
        self.copy_circuit, self.copy_private = _copy_circuit(spec, "bob")
        a1_written = _written_labels(spec.stages[0].circuit)
        self.aview = [l for l in a1_written if l in spec.alice_labels]
        self.m1 = _observable(spec, spec.stages[0].publish)
        self.m2 = _observable(spec, spec.stages[1].publish)
        self.copy_obs = _observable(spec, self.copy_private)
        self.kb = spec.key_b
        self._alice_table: dict[int, list[tuple[float, dict]]] = {}
        self._copy_table: dict[tuple, JointDistribution] = {}
        self._weights: dict[tuple, QueryWeightProfile] = {}
        self._support: dict[tuple, int] | None = None

    def alice_branches(self, h_idx: int) -> list[tuple[float, dict]]:
        if h_idx not in self._alice_table:
            h = self.oracles[h_idx]
            rows = [
                (br.prob * len(self.oracles), br.values)
                for br in enumerate_branches(self.spec, "post_m1", oracle=h)
            ]
            self._alice_table[h_idx] = rows
        return self._alice_table[h_idx]

    def copy_distribution(self, h_idx: int, base: Mapping[str, int]) -> JointDistribution:
        key = (h_idx, tuple(sorted(base.items())))
        if key not in self._copy_table:
            h = self.oracles[h_idx]
            acc: dict[tuple[int, ...], float] = defaultdict(float)
            ex = protocols._BranchExecutor(self.spec)
            labels = tuple(self.copy_obs + [self.kb])
            stack = [(Branch(1.0, h, dict(base)), 0)]
            steps = list(self.copy_circuit.steps) + [Measure(tuple(self.copy_private))]
            while stack:
                br, i = stack.pop()
                if i == len(steps):
                    acc[tuple(br.values.get(l, 0) for l in labels)] += br.prob
                    continue
                for child, p in ex.step_outcomes(br, steps[i]):
                    stack.append((replace(child, prob=br.prob * p), i + 1))
            self._copy_table[key] = JointDistribution.from_dict(labels, acc)
        return self._copy_table[key]

    def bob_weights(self, h_idx: int, base: Mapping[str, int]) -> QueryWeightProfile:
        # the encryption stage reads only the published first message
        narrowed = {l: base[l] for l in self.m1 if l in base}
        key = (h_idx, tuple(sorted(narrowed.items())))
        if key not in self._weights:
            self._weights[key] = bob_query_weights(self.spec, self.oracles[h_idx], narrowed)
        return self._weights[key]

    def support_oracles(self) -> dict[tuple, int]:
        """View tuple -> bitmask of oracles reaching it with positive odds."""
        if self._support is None:
            table: dict[tuple, int] = defaultdict(int)
            labels = self.aview + self.m1 + self.m2 + [self.kb]
            for h_idx, h in enumerate(self.oracles):
                for br in enumerate_branches(self.spec, "post_m2", oracle=h):
                    if any(br.values.get(l, 0) == protocols._COHERENT for l in labels):
                        raise AttackError("observable views must be classical")
                    key = tuple(br.values.get(l, 0) for l in labels)
                    table[key] |= 1 << h_idx
            self._support = dict(table)
        return self._support

    def view_in_support(self, view: tuple, record: QueryRecord) -> bool:
        mask = self.support_oracles().get(view, 0)
        if mask == 0:
            return False
        for h_idx, h in enumerate(self.oracles):
            if mask >> h_idx & 1 and record.consistent_with(h):
                return True
        return False


def _posterior_fake_view(
    ctx: _KeygenAttackContext,
    record: QueryRecord,
    m1_vals: dict[str, int],
    m2_vals: dict[str, int],
    copies: list[dict[str, int]],
    rng: np.random.Generator,
) -> dict[str, int]:
    """Sample a key-generation view from the exact posterior given Eve's data."""
    spec = ctx.spec
    weights: dict[tuple[int, ...], float] = defaultdict(float)
    for h_idx, h in enumerate(ctx.oracles):
        if not record.consistent_with(h):
            continue
        for p_a, avals in ctx.alice_branches(h_idx):
            if any(avals.get(l, 0) != m1_vals[l] for l in ctx.m1):
                continue
            base = {l: avals.get(l, 0) for l in ctx.aview}
            base.update(m1_vals)
            copy_dist = ctx.copy_distribution(h_idx, base)
            w = p_a
            # observed second message
            m2_key = {l: m2_vals[l] for l in ctx.m2}
            w *= copy_dist.marginal(ctx.m2).probability(m2_key) if ctx.m2 else 1.0
            # Eve's rerun outputs
            for copy in copies:
                w *= copy_dist.probability({l: copy[l] for l in ctx.copy_obs})
            # Eve's sampled points (uniform query index times input marginal)
            if record.pairs:
                profile = ctx.bob_weights(h_idx, base)
                d = max(profile.query_count, 1)
                for x, _ in record.pairs:
                    mass = sum(m.get(x, 0.0) for m in profile.per_query) / d
                    w *= mass
            if w > 0:
                weights[tuple(base[l] for l in ctx.aview)] += w
    if not weights:
        raise AttackError("empty posterior: observation inconsistent with every oracle")
    keys = sorted(weights)
    probs = np.array([weights[k] for k in keys])
    pick = keys[int(rng.choice(len(keys), p=probs / probs.sum()))]
    return dict(zip(ctx.aview, pick))


def eve_classical_keygen(
    spec: ProtocolSpec,
    t: int,
    reps: int,
    eps: float,
    seed: int,
    runs: int = 200,
    strategy: str = "combined",
    grid: Iterable[float] | None = None,
) -> AttackReport:
    """Break a perfectly complete scheme whose key generation is classical.

    Pipeline per run: collect t reruns of Bob on the first message plus
    the sampled point records, draw a fake key-generation view from the
    exact posterior given everything Eve holds, patch the real oracle to
    agree with the fake view's records, and decrypt with the patched
    oracle.  ``strategy`` selects the final oracle: "combined" patches
    the real oracle, "fresh_consistent" samples a fresh oracle matching
    only the fake records, "real_oracle" skips the patch.
    """
    if strategy not in ("combined", "fresh_consistent", "real_oracle"):
        raise AttackError(f"unknown strategy {strategy!r}")
    ctx = _KeygenAttackContext(spec)
    d_bob = _bob_stage(spec).circuit.query_count
    alice2 = spec.stages[-1].circuit
    matches = 0
    support_violations = 0
    compat_hits = 0
    compat_total = 0
    coverage_hits = 0
    locality_violations = 0
    heavy_misses = 0
    real_views: list[tuple] = []
    fake_views: list[tuple] = []
    for run_idx in range(runs):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(run_idx,)))
        h = sample_oracle(spec.n, rng)
        real = protocols._BranchExecutor(spec).sample("post_m2", h, rng)
        m1_vals = {l: real.value(l) for l in ctx.m1}
        m2_vals = {l: real.value(l) for l in ctx.m2}
        k_b = real.value(spec.key_b)
        shared = {**m1_vals, **{l: real.value(l) for l in ctx.aview}}
        # Eve's copies and point records
        copies: list[dict[str, int]] = []
        pairs: list[tuple[int, int]] = []
        for _ in range(t):
            br = Branch(1.0, h, dict(shared))
            br = sample_steps(spec, br, list(ctx.copy_circuit.steps), rng)
            br = sample_steps(spec, br, [Measure(tuple(ctx.copy_private))], rng)
            copies.append({l: br.value(l) for l in ctx.copy_obs + [spec.key_b]})
            if d_bob:
                rec = modified_bob_sample(
                    spec, reps, rng, m1_branch=Branch(1.0, h, dict(shared))
                )
                pairs.extend(rec.pairs)
        record = QueryRecord(tuple(pairs))
        in_e = record.inputs
        # ground-truth heavy set for diagnostics
        profile = ctx.bob_weights(h.index, {**m1_vals, **{l: real.value(l) for l in ctx.aview}})
        heavy = profile.heavy_set(eps).members
        if heavy <= in_e:
            coverage_hits += 1
        # fake view from the exact posterior
        fake = _posterior_fake_view(ctx, record, m1_vals, m2_vals, copies, rng)
        fake_record = alice1_record(spec, {**fake, **m1_vals})
        view = tuple(fake[l] for l in ctx.aview) + tuple(
            m1_vals[l] for l in ctx.m1
        ) + tuple(m2_vals[l] for l in ctx.m2) + (k_b,)
        real_view = tuple(real.value(l) for l in ctx.aview) + tuple(
            m1_vals[l] for l in ctx.m1
        ) + tuple(m2_vals[l] for l in ctx.m2) + (k_b,)
        real_views.append(real_view)
        fake_views.append(view)
        in_support = ctx.view_in_support(view, record)
        if not in_support:
            support_violations += 1
        # choose the decryption oracle
        if strategy == "combined":
            h_run = reprogram_oracle(h, fake_record)
        elif strategy == "real_oracle":
            h_run = h
        else:
            fresh = [int(rng.integers(0, 2)) for _ in range(2**spec.n)]
            rec_map = fake_record.as_dict()
            h_run = OracleFunction(
                spec.n, tuple(rec_map.get(x, fresh[x]) for x in range(2**spec.n))
            )
        if strategy == "combined":
            diffs = {x for x in range(2**spec.n) if h_run.value(x) != h.value(x)}
            if not diffs <= (fake_record.inputs - in_e):
                locality_violations += 1
            if diffs & heavy:
                heavy_misses += 1
            # key compatibility under the patched oracle
            compat_total += 1
            base = dict(m1_vals)
            dist = ctx.copy_distribution(h_run.index, {**fake, **base})
            m2_and_key = {**{l: m2_vals[l] for l in ctx.m2}, spec.key_b: k_b}
            if dist.probability(m2_and_key) > 0:
                compat_hits += 1
        # decrypt on the fake view
        br = Branch(1.0, h_run, {**fake, **m1_vals, **m2_vals})
        if real.coherent is not None:
            br = replace(br, coherent=replace(real.coherent, oracle=h_run))
        br = sample_steps(spec, br, list(alice2.steps), rng)
        k_e = br.value(spec.key_a)
        if k_e == k_b:
            matches += 1
    # empirical distance between real and fake view tuples
    tv_est = _empirical_tv(real_views, fake_views)
    key_match = matches / runs
    violation_rate = support_violations / runs
    report = AttackReport(
        attack_name="classical_keygen",
        params={
            "t": t,
            "reps": reps,
            "eps": eps,
            "seed": seed,
            "runs": runs,
            "strategy": strategy,
            "protocol": spec.name,
        },
        queries_used=t * (d_bob + reps * (d_bob + 1)) + alice2.query_count,
        cmi_achieved=None,
        recovery_td=None,
        fr_bound=None,
        key_match_prob=key_match,
        bound_satisfied=bool(
            violation_rate <= 2 * tv_est + _interval_slack(runs)
            and (strategy != "combined" or key_match >= 1 - 10 * eps - _interval_slack(runs))
        ),
        support_violation_rate=violation_rate,
        extras={
            "wilson_key_match_lower": wilson_lower_bound(matches, runs),
            "key_compat_rate": (compat_hits / compat_total) if compat_total else None,
            "heavy_coverage_rate": coverage_hits / runs,
            "locality_violations": locality_violations,
            "heavy_reprogram_collisions": heavy_misses,
            "tv_estimate": tv_est,
        },
    )
    return report


def _interval_slack(runs: int) -> float:
    return 2.0 / math.sqrt(runs)


def _empirical_tv(xs: list[tuple], ys: list[tuple]) -> float:
    from collections import Counter

    cx, cy = Counter(xs), Counter(ys)
    keys = set(cx) | set(cy)
    n = max(len(xs), 1)
    return 0.5 * sum(abs(cx.get(k, 0) - cy.get(k, 0)) for k in keys) / n


# ---------------------------------------------------------------------------
# short classical secret keys


def eve_short_sk(
    spec: ProtocolSpec,
    t: int,
    grid: Iterable[float] | None = None,
    sk_label: str = "A.r",
) -> AttackReport:
    """Enumerate the secret-key space and rebuild Bob's view exactly.

    Eve holds t reruns of Bob on the first message and, for every secret
    key value s, t reruns of the final stage executed with that key.  The
    conditioning prefix (over both families) with the smallest CMI
    between (sk, Alice) and Bob is selected; Bob's view is resampled from
    the exact posterior and its key register is Eve's guess.
    """
    if spec.kind != "qpke_short_sk":
        raise AttackError("this attack expects a short-secret-key scheme")
    sk_dim = spec.dim(sk_label)
    if sk_dim > 16:
        raise AttackError("secret-key space too large to enumerate")
    bob_stage = _bob_stage(spec)
    alice2 = spec.stages[-1].circuit
    d_max = max(s.circuit.query_count for s in spec.stages)
    width = spec.n + 1

    extra_regs: list[tuple[str, int, str]] = []
    extra_stages: list[Stage] = []
    bob_private = [l for l in _written_labels(bob_stage.circuit) if l in spec.bob_labels]
    bob_copy_sets: list[list[str]] = []
    for i in range(1, t + 1):
        mapping = {l: f"EB{i}.{l}" for l in bob_private}
        for l in bob_private:
            extra_regs.append((mapping[l], spec.dim(l), "E"))
        extra_stages.append(Stage("eve", bob_stage.circuit.relabeled(lambda l, m=mapping: m.get(l, l))))
        bob_copy_sets.append([mapping[l] for l in bob_private])
    a2_written = _written_labels(alice2)
    a2_private = [l for l in a2_written if l in spec.alice_labels]
    sk_copy_sets: dict[int, list[list[str]]] = {}
    for s in range(sk_dim):
        sk_copy_sets[s] = []
        for i in range(1, t + 1):
            mapping = {l: f"EA{s}.{i}.{l}" for l in a2_private}
            mapping[sk_label] = f"EA{s}.{i}.sk"
            extra_regs.append((f"EA{s}.{i}.sk", sk_dim, "E"))
            for l in a2_private:
                extra_regs.append((mapping[l], spec.dim(l), "E"))
            prep = ClassicalFn((), f"EA{s}.{i}.sk", lambda s=s: s)
            circ = QueryCircuit(
                (prep,) + alice2.relabeled(lambda l, m=mapping: m.get(l, l)).steps, spec.n
            )
            extra_stages.append(Stage("eve", circ))
            sk_copy_sets[s].append([mapping[l] for l in a2_private])
    ext = extend_spec(spec, extra_regs, extra_stages)
    joint = enumerate_joint(ext, "final")

    transcript = [l for l in spec.message_labels if l not in spec.quantum_messages]
    a_side = list(spec.alice_labels)  # includes the secret key register
    b_side = list(spec.bob_labels)

    from itertools import product as _product

    best = None
    for qs in _product(range(t + 1), repeat=1 + sk_dim):
        q_b, q_a = qs[0], qs[1:]
        cond = transcript + [l for c in bob_copy_sets[:q_b] for l in c]
        for s in range(sk_dim):
            cond += [l for c in sk_copy_sets[s][: q_a[s]] for l in c]
        value = joint.cmi(a_side, b_side, cond)
        if best is None or value < best[0]:
            best = (value, qs, cond)
    cmi_star, chosen, cond = best
    bound = 2.0 * width * d_max / t

    td, key_match = _classical_recovery_metrics(
        joint, b_side, a_side, cond, spec.key_b, spec.key_a
    )
    queries = t * bob_stage.circuit.query_count + sk_dim * t * alice2.query_count
    return AttackReport(
        attack_name="short_sk",
        params={"t": t, "protocol": spec.name, "sk_dim": sk_dim},
        queries_used=queries,
        cmi_achieved=float(cmi_star),
        recovery_td=float(td),
        fr_bound=fr_bound(cmi_star),
        key_match_prob=float(key_match),
        bound_satisfied=bool(cmi_star <= bound + CMI_SLACK),
        extras={
            "cmi_bound": bound,
            "prefix_selected": list(chosen),
            "query_width": width,
            "stage_query_cap": d_max,
        },
    )
