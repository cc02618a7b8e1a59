"""Classical XOR random-walk engine on dyadic groups.

Distributions over {0,1}^m are length-2^m vectors indexed by the integer
encoding of the bit vector.  XOR convolution is pointwise multiplication
in the Walsh-Hadamard domain, which makes t-step walk entropies cheap.
Also provides the Poissonized walk closed forms and the scalar bound
sweeps used to audit the walk's decay rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .qentropy import binary_entropy, shannon_entropy

MAX_VECTOR_BITS = 16  # distributions live on {0,1}^m with m <= 16


class WalkSizeError(ValueError):
    """Vector length cap exceeded."""


def walsh_hadamard(v: np.ndarray | Sequence[float]) -> np.ndarray:
    """Unnormalized WHT, in-place radix-2 butterfly; length must be 2^m."""
    a = np.array(v, dtype=float)
    n = a.size
    if n & (n - 1) or n == 0:
        raise WalkSizeError(f"length {n} is not a power of two")
    h = 1
    while h < n:
        a = a.reshape(-1, 2 * h)
        x, y = a[:, :h].copy(), a[:, h:].copy()
        a[:, :h] = x + y
        a[:, h:] = x - y
        a = a.reshape(n)
        h *= 2
    return a


def inverse_walsh_hadamard(v: np.ndarray | Sequence[float]) -> np.ndarray:
    a = walsh_hadamard(v)
    return a / a.size


def xor_convolve(a: np.ndarray | Sequence[float], b: np.ndarray | Sequence[float]) -> np.ndarray:
    """Distribution of X xor Y for independent X ~ a, Y ~ b."""
    av = np.asarray(a, dtype=float)
    bv = np.asarray(b, dtype=float)
    if av.size != bv.size:
        raise WalkSizeError("distributions must share a domain")
    if av.size > 2**MAX_VECTOR_BITS:
        raise WalkSizeError(f"domain size {av.size} exceeds 2^{MAX_VECTOR_BITS}")
    out = inverse_walsh_hadamard(walsh_hadamard(av) * walsh_hadamard(bv))
    return np.clip(out, 0.0, None)


def xor_power(a: np.ndarray | Sequence[float], t: int) -> np.ndarray:
    """t-fold XOR convolution of a distribution with itself."""
    av = np.asarray(a, dtype=float)
    if t < 0:
        raise ValueError("power must be non-negative")
    spec = walsh_hadamard(av)
    out = inverse_walsh_hadamard(spec**t)
    return np.clip(out, 0.0, None)


def distribution_entropy(p: np.ndarray) -> float:
    """Shannon entropy in bits, tolerant of convolution round-off."""
    v = np.clip(np.asarray(p, dtype=float), 0.0, None)
    s = v.sum()
    if abs(s - 1.0) > 1e-8:
        raise ValueError(f"mass {s} is not 1")
    return shannon_entropy(v / s)


@dataclass(frozen=True)
class XorStepDistribution:
    """Per-query step components, each supported on weight <= 1 vectors.

    ``components[l]`` maps a database-vector index (0 or a power of two,
    i.e. the zero vector or a standard basis vector e_i) to probability.
    """

    n: int
    components: tuple[dict[int, float], ...]

    def __post_init__(self) -> None:
        m = 2**self.n
        if m > MAX_VECTOR_BITS:
            raise WalkSizeError(f"2^n = {m} exceeds bit cap {MAX_VECTOR_BITS}")
        for comp in self.components:
            total = 0.0
            for idx, p in comp.items():
                if idx != 0 and (idx & (idx - 1) or idx >= 2**m):
                    raise ValueError(f"support index {idx} is not weight <= 1")
                if p < 0:
                    raise ValueError("negative probability")
                total += p
            if abs(total - 1.0) > 1e-12:
                raise ValueError(f"component mass {total} is not 1")

    @property
    def query_count(self) -> int:
        return len(self.components)

    @property
    def domain_size(self) -> int:
        return 2**self.n

    def component_vector(self, l: int) -> np.ndarray:
        v = np.zeros(2**self.domain_size, dtype=float)
        for idx, p in self.components[l].items():
            v[idx] = p
        return v

    def step_vector(self) -> np.ndarray:
        """Full one-application distribution: XOR of all components."""
        out = None
        for l in range(self.query_count):
            c = self.component_vector(l)
            out = c if out is None else xor_convolve(out, c)
        if out is None:
            out = np.zeros(2**self.domain_size)
            out[0] = 1.0
        return out

    def bit_rates(self) -> np.ndarray:
        """sum_l p_{l,i} for each domain point i."""
        rates = np.zeros(self.domain_size)
        for comp in self.components:
            for idx, p in comp.items():
                if idx:
                    rates[idx.bit_length() - 1] += p
        return rates


@dataclass(frozen=True)
class WalkEntropySeries:
    """S(D^t) in bits for a range of t, tagged with how it was computed."""

    values: dict[int, float]
    method: str = field(default="wht_exact")


def walk_entropy_series(steps: XorStepDistribution, t_values: Iterable[int]) -> WalkEntropySeries:
    step = steps.step_vector()
    spec = walsh_hadamard(step)
    out = {}
    for t in sorted(set(int(t) for t in t_values)):
        if t < 0:
            raise ValueError("t must be non-negative")
        dist = np.clip(inverse_walsh_hadamard(spec**t), 0.0, None)
        out[t] = distribution_entropy(dist)
    return WalkEntropySeries(out)


def walk_cmi(steps: XorStepDistribution, t: int) -> float:
    """2 S(D^{t+1}) - S(D^t) - S(D^{t+2}) in bits; non-negative by concavity."""
    if t < 0:
        raise ValueError("t must be non-negative")
    series = walk_entropy_series(steps, (t, t + 1, t + 2))
    value = 2 * series.values[t + 1] - series.values[t] - series.values[t + 2]
    if value < -1e-8:
        raise ValueError(f"walk CMI {value} is negative beyond tolerance")
    return max(value, 0.0)


def parity_of_poisson(lam: float) -> float:
    """Probability that a Poisson(lam) draw is odd: (1 - e^{-2 lam})/2."""
    if lam < 0:
        raise ValueError("rate must be non-negative")
    return 0.5 * (1.0 - math.exp(-2.0 * lam))


def poissonized_walk_entropy(steps: XorStepDistribution, t: int, mu: float) -> float:
    """Entropy in bits of the Poissonized t-step walk, in closed form.

    Each query count is replaced by an independent Poisson with rate
    t * ln(mu * d); the resulting database bits are mutually independent,
    so the entropy is a sum of binary entropies of Poisson parities.
    """
    if mu < 2:
        raise ValueError("mu must be at least 2")
    if t < 0:
        raise ValueError("t must be non-negative")
    d = max(steps.query_count, 1)
    rate = t * math.log(mu * d)
    rates = steps.bit_rates()
    return float(sum(binary_entropy(parity_of_poisson(rate * r)) for r in rates))


def poissonized_walk_distribution(
    steps: XorStepDistribution, t: int, mu: float, sigmas: float = 10.0
) -> np.ndarray:
    """Poissonized walk distribution mixed by truncated Poisson series.

    Independent oracle for the closed form: each component is applied a
    Poisson number of times, truncated at mean + ``sigmas`` standard
    deviations, and the pieces are XOR-convolved together.
    """
    if mu < 2:
        raise ValueError("mu must be at least 2")
    d = max(steps.query_count, 1)
    rate = t * math.log(mu * d)
    size = 2**steps.domain_size
    out = np.zeros(size)
    out[0] = 1.0
    kmax = int(math.ceil(rate + sigmas * math.sqrt(max(rate, 1.0)))) + 1
    weights = np.zeros(kmax + 1)
    weights[0] = math.exp(-rate)
    for k in range(1, kmax + 1):
        weights[k] = weights[k - 1] * rate / k
    for l in range(steps.query_count):
        spec = walsh_hadamard(steps.component_vector(l))
        mix_spec = np.zeros_like(spec)
        for k, w in enumerate(weights):
            mix_spec += w * spec**k
        mixed = np.clip(inverse_walsh_hadamard(mix_spec), 0.0, None)
        mixed /= mixed.sum()
        out = xor_convolve(out, mixed)
    return out


def binary_entropy_gap(t: int, p: float) -> float:
    """2 H2((1-e^{-2tp})/2) - H2((1-e^{-2(t-1)p})/2) - H2((1-e^{-2(t+1)p})/2)."""
    return (
        2 * binary_entropy(0.5 * (1 - math.exp(-2 * t * p)))
        - binary_entropy(0.5 * (1 - math.exp(-2 * (t - 1) * p)))
        - binary_entropy(0.5 * (1 - math.exp(-2 * (t + 1) * p)))
    )


F_BOUND_CONSTANT = 8.0


def f_bound_sweep(
    t_values: Iterable[int], p_grid: Iterable[float], constant: float = F_BOUND_CONSTANT
) -> list[dict]:
    """Evaluate the entropy-gap decay bound over a (t, p) grid.

    For p in (0, 1] the gap must stay below ``constant * p / t``; for
    p > 1 it must stay below ``constant * exp(-t)``.  Returns one row per
    grid point with the observed ratio so the constant is auditable.
    """
    rows = []
    for t in t_values:
        if t < 2:
            raise ValueError("t must be at least 2")
        for p in p_grid:
            if p < 0:
                raise ValueError("p must be non-negative")
            value = binary_entropy_gap(t, p) if p > 0 else 0.0
            if p == 0.0:
                bound = 0.0
                ratio = 0.0
            elif p <= 1.0:
                bound = constant * p / t
                ratio = value / bound if bound else 0.0
            else:
                bound = constant * math.exp(-t)
                ratio = value / bound if bound else 0.0
            rows.append(
                {
                    "t": int(t),
                    "p": float(p),
                    "value": value,
                    "bound": bound,
                    "ratio": ratio,
                    "pass": value <= bound + 1e-12,
                }
            )
    return rows


def arctanh_decay_term(t: int, q: float) -> float:
    """q^{t+1} ((1/q) atanh(q^{t-1}) - atanh(q^{t+1})) for t > 1, q in [0, 1)."""
    if not 0 <= q < 1:
        raise ValueError("q must be in [0, 1)")
    if t <= 1:
        raise ValueError("t must exceed 1")
    if q == 0.0:
        return 0.0
    return q ** (t + 1) * (math.atanh(q ** (t - 1)) / q - math.atanh(q ** (t + 1)))


def arctanh_decay_bound(t: int) -> float:
    return 1.0 / (t - 1) + 1.0 / (t + 1)
