# app/quantum_oracle.py
"""
Exact small-scale oracles for the urn.

- evolve_amplitudes: joint (mode populations, atom record) amplitudes. Each
  step sends |n, m>|record> to
      sqrt((n+1)/(n+m+2)) |n+1, m>|record, b> + sqrt((m+1)/(n+m+2)) |n, m+1>|record, r>
  Atom records are mutually orthogonal, so outcome probabilities are sums
  of squared amplitudes with no interference terms.
- enumerate_paths: exact rational sum over all 2^k branch sequences of the
  classical transition law.

Both must reproduce the beta-binomial law (k, b0 + 1, r0 + 1).
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterator, List, Tuple, Union

from scipy.stats import betabinom

from app.errors import OracleCapError

ENUMERATION_CAP = 20
AMPLITUDE_CAP = 16
AMPLITUDE_TOLERANCE = 1e-12

Probability = Union[Fraction, float]


@dataclass(frozen=True)
class AmplitudeTerm:
    n: int
    m: int
    record: str
    amplitude: float


@dataclass(frozen=True)
class AmplitudeState:
    initial: Tuple[int, int]
    step: int
    terms: Tuple[AmplitudeTerm, ...]

    def norm(self) -> float:
        return math.fsum(term.amplitude ** 2 for term in self.terms)

    def consistency_errors(self) -> List[str]:
        """Bookkeeping violations: population growth vs record length and blue count."""
        n0, m0 = self.initial
        errors = []
        for term in self.terms:
            if term.n + term.m - (n0 + m0) != self.step or len(term.record) != self.step:
                errors.append(f"term {term.record!r}: population growth != step {self.step}")
            if term.record.count("b") != term.n - n0:
                errors.append(f"term {term.record!r}: blue records != n - n0")
        return errors


@dataclass(frozen=True)
class PathDistribution:
    probabilities: Dict[int, Probability]

    def total(self) -> Probability:
        values = list(self.probabilities.values())
        if all(isinstance(v, Fraction) for v in values):
            return sum(values, Fraction(0))
        return math.fsum(float(v) for v in values)

    def max_abs_difference(self, other: "PathDistribution") -> float:
        keys = set(self.probabilities) | set(other.probabilities)
        return max(
            abs(float(self.probabilities.get(j, 0)) - float(other.probabilities.get(j, 0)))
            for j in keys
        )


def _check_cap(steps: int, cap: int) -> None:
    if steps < 0:
        raise OracleCapError(f"steps must be non-negative, got {steps}")
    if steps > cap:
        raise OracleCapError(f"steps={steps} exceeds the oracle cap of {cap}")


# ---- amplitude evolution ----
def evolve_amplitudes(initial: Tuple[int, int], steps: int, perturbation: float = 0.0) -> AmplitudeState:
    """Apply the branching `steps` times from |n0, m0>|e, e, ...>.

    `perturbation` scales every blue-branch factor by (1 + perturbation); it
    exists only to check that verification catches a broken evolution.
    """
    _check_cap(steps, AMPLITUDE_CAP)
    n0, m0 = initial
    terms = [AmplitudeTerm(n0, m0, "", 1.0)]
    for _ in range(steps):
        nxt = []
        for t in terms:
            denom = t.n + t.m + 2
            blue = math.sqrt((t.n + 1) / denom) * (1.0 + perturbation)
            red = math.sqrt((t.m + 1) / denom)
            nxt.append(AmplitudeTerm(t.n + 1, t.m, t.record + "b", t.amplitude * blue))
            nxt.append(AmplitudeTerm(t.n, t.m + 1, t.record + "r", t.amplitude * red))
        terms = nxt
    return AmplitudeState(initial=(n0, m0), step=steps, terms=tuple(terms))


def marginal_counts(state: AmplitudeState) -> PathDistribution:
    """Outcome probabilities by number of blue additions."""
    n0 = state.initial[0]
    buckets: Dict[int, List[float]] = {}
    for term in state.terms:
        buckets.setdefault(term.n - n0, []).append(term.amplitude ** 2)
    return PathDistribution({j: math.fsum(v) for j, v in sorted(buckets.items())})


# ---- classical path enumeration ----
def path_products(initial: Tuple[int, int], steps: int) -> Iterator[Tuple[str, Fraction]]:
    """Every branch sequence with its exact probability, depth first."""
    _check_cap(steps, ENUMERATION_CAP)
    b0, r0 = initial
    stack = [(b0, r0, "", Fraction(1))]
    while stack:
        b, r, record, prob = stack.pop()
        if len(record) == steps:
            yield record, prob
            continue
        total = b + r + 2
        stack.append((b, r + 1, record + "r", prob * Fraction(r + 1, total)))
        stack.append((b + 1, r, record + "b", prob * Fraction(b + 1, total)))


def enumerate_paths(initial: Tuple[int, int], steps: int) -> PathDistribution:
    grouped: Dict[int, Fraction] = {}
    for record, prob in path_products(initial, steps):
        j = record.count("b")
        grouped[j] = grouped.get(j, Fraction(0)) + prob
    return PathDistribution(dict(sorted(grouped.items())))


def _rising(x: int, k: int) -> int:
    out = 1
    for i in range(k):
        out *= x + i
    return out


def beta_binomial_exact(k: int, a: int, b: int) -> PathDistribution:
    """Closed-form beta-binomial pmf for integer shapes, as exact rationals."""
    denom = _rising(a + b, k)
    return PathDistribution({
        j: Fraction(math.comb(k, j) * _rising(a, j) * _rising(b, k - j), denom) for j in range(k + 1)
    })


def beta_binomial_float(k: int, a: float, b: float) -> PathDistribution:
    return PathDistribution({j: float(betabinom.pmf(j, k, a, b)) for j in range(k + 1)})


def exchangeability_violations(initial: Tuple[int, int], steps: int) -> List[str]:
    """Paths with equal blue counts must carry identical probabilities."""
    seen: Dict[int, Fraction] = {}
    bad = []
    for record, prob in path_products(initial, steps):
        j = record.count("b")
        if seen.setdefault(j, prob) != prob:
            bad.append(record)
    return bad


# ---- equivalence suite ----
@dataclass(frozen=True)
class EquivalenceRow:
    initial: Tuple[int, int]
    steps: int
    max_difference: float
    norm_error: float
    passed: bool


def equivalence_suite(max_total: int = 4, max_steps: int = 8, perturbation: float = 0.0) -> List[EquivalenceRow]:
    """Amplitude marginals vs exact enumeration for every n0 + m0 <= max_total, k <= max_steps."""
    rows = []
    for total in range(max_total + 1):
        for n0 in range(total + 1):
            initial = (n0, total - n0)
            for k in range(max_steps + 1):
                state = evolve_amplitudes(initial, k, perturbation)
                diff = marginal_counts(state).max_abs_difference(enumerate_paths(initial, k))
                norm_error = abs(state.norm() - 1.0)
                ok = (diff <= AMPLITUDE_TOLERANCE and norm_error <= AMPLITUDE_TOLERANCE
                      and not state.consistency_errors())
                rows.append(EquivalenceRow(initial, k, diff, norm_error, ok))
    return rows
