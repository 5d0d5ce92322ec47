"""
Defining sequences `(α_n)` for `(α_n)`-regular sets.

A sequence is described by a small JSON-able *spec*:

    {"kind": "geometric", "params": {"c": 0.5}}

and turned into an `AlphaSequence`, a deterministic generator of the values
`α_1, α_2, ...` (indexing starts at 1 everywhere in **fml**).

The classes `ℓ^p`, `ℓ^0 = ∩ ℓ^p` and `ℓ^∞ = ∪ ℓ^p` are asymptotic, so
membership is decided per family from its closed form and never from a finite
sum. Truncated sums are still reported, but only as advisory evidence.
"""

import math
from fractions import Fraction
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np


__all__ = ('Kind', 'Membership', 'AlphaSequence', 'ClassReport', 'ParameterError',
           'make_sequence', 'partial_lp_sum', 'classify_family', 'parse_rule')


class ParameterError(ValueError):
    """A family parameter that would put some `α_n` outside `(0, 1)`."""


class Kind(str, Enum):
    CONSTANT = 'constant'
    POWER = 'power-decay'
    GEOMETRIC = 'geometric'
    STRETCHED = 'stretched-exponential'
    RECIPROCAL_ODD = 'reciprocal-odd'
    EXPLICIT = 'explicit-list'


class Membership(str, Enum):
    ELL0 = 'ell0'
    ELL_INFINITY = 'ellInfinity-not-ell0'
    NEITHER = 'neither'
    UNKNOWN = 'unknown-heuristic'


# The fat/thin prediction for a set built on a sequence of each class.
PREDICTIONS = {
    Membership.ELL0: 'fat',
    Membership.ELL_INFINITY: 'neither fat nor thin',
    Membership.NEITHER: 'thin',
    Membership.UNKNOWN: 'unknown',
}

# The `(p, N)` grid of truncated sums carried by every `ClassReport`.
REPORT_P = (0.5, 1.0, 2.0)
REPORT_N = (1024, 2048, 4096, 8192, 16384)


# === The sequence type ===

@dataclass(frozen=True)
class AlphaSequence:
    kind: Kind
    params: dict = field(default_factory=dict)
    length_limit: Optional[int] = None

    def __hash__(self):
        return hash((self.kind, tuple(sorted((k, repr(v)) for k, v in self.params.items())),
                     self.length_limit))

    def value(self, n: int) -> float:
        """
        Return `α_n` for `n >= 1`.
        """
        if n < 1:
            raise ValueError("Sequences are indexed from 1, got n={}".format(n))
        if self.length_limit is not None and n > self.length_limit:
            raise ValueError("Index {} beyond the sequence length {}".format(n, self.length_limit))
        p = self.params
        if self.kind is Kind.CONSTANT:
            return float(p['c'])
        if self.kind is Kind.POWER:
            return float(p.get('c', 1.0)) * float(n) ** (-float(p['s']))
        if self.kind is Kind.GEOMETRIC:
            return float(p['c']) ** n
        if self.kind is Kind.STRETCHED:
            return math.exp(-float(p.get('c', 1.0)) * float(n) ** float(p.get('gamma', 0.5)))
        if self.kind is Kind.RECIPROCAL_ODD:
            return 1.0 / self.base(n)
        values = p['values']
        if n > len(values):
            raise ValueError("Index {} beyond the explicit list of {} values".format(n, len(values)))
        return float(values[n - 1])

    def base(self, n: int) -> int:
        """
        The odd integer `a_n` with `α_n = 1 / a_n`, for reciprocal-odd sequences
        and for explicit lists of such reciprocals.
        """
        if self.kind is Kind.RECIPROCAL_ODD:
            return int(self.params.get('k', 2)) * n + int(self.params.get('m', 1))
        a = round(1.0 / self.value(n))
        if not math.isclose(a * self.value(n), 1.0, rel_tol=1e-12):
            raise ValueError("alpha_{} = {} is not the reciprocal of an integer".format(n, self.value(n)))
        return a

    def values(self, N: int) -> np.ndarray:
        return np.array([self.value(n) for n in range(1, N + 1)], dtype=float)

    def is_constant(self) -> bool:
        if self.kind is Kind.CONSTANT:
            return True
        if self.kind is Kind.RECIPROCAL_ODD:
            return int(self.params.get('k', 2)) == 0
        if self.kind is Kind.EXPLICIT:
            return len(set(self.params['values'])) == 1
        return False

    def converges(self, p: float) -> Optional[bool]:
        """
        Closed-form test of `Σ α_n^p < ∞`. `None` when the family has no closed
        form (explicit lists).
        """
        if p <= 0:
            raise ValueError("p must be positive, got {}".format(p))
        if self.kind in (Kind.GEOMETRIC, Kind.STRETCHED):
            return True
        if self.is_constant():
            return False
        if self.kind is Kind.POWER:
            return p * float(self.params['s']) > 1.0
        if self.kind is Kind.RECIPROCAL_ODD:
            return p > 1.0
        return None

    def tail_sum(self, p: float, N: int) -> float:
        """
        Analytic estimate of `Σ_{n>N} α_n^p`, `inf` when the series diverges.
        """
        if not self.converges(p):
            return math.inf
        pr = self.params
        if self.kind is Kind.GEOMETRIC:
            x = float(pr['c']) ** p
            return x ** (N + 1) / (1.0 - x)
        if self.kind is Kind.POWER:
            e = p * float(pr['s'])
            # Midpoint rule for a convex tail.
            return float(pr.get('c', 1.0)) ** p * (N + 0.5) ** (1.0 - e) / (e - 1.0)
        if self.kind is Kind.RECIPROCAL_ODD:
            k, m = int(pr.get('k', 2)), int(pr.get('m', 1))
            return (k * (N + 0.5) + m) ** (1.0 - p) / (k * (p - 1.0))
        # Stretched exponential: sum the terms until they stop mattering.
        total, n = 0.0, N + 1
        while True:
            term = self.value(n) ** p
            total += term
            if term < 1e-18 * max(total, 1e-300) or n > N + 10 ** 7:
                return total
            n += 1

    def to_dict(self) -> dict:
        doc = {"kind": self.kind.value, "params": dict(self.params)}
        if self.length_limit is not None:
            doc["length_limit"] = self.length_limit
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> 'AlphaSequence':
        return make_sequence(doc)


@dataclass
class ClassReport:
    family: dict
    membership: Membership
    witness_p: Optional[float]
    truncated_sums: list
    prediction: str

    def to_dict(self) -> dict:
        return {"family": self.family, "membership": self.membership.value,
                "witness_p": self.witness_p, "prediction": self.prediction,
                "truncated_sums": [list(t) for t in self.truncated_sums]}


# === Building and checking sequences ===

def _check_range(seq: AlphaSequence):
    kind, p = seq.kind, seq.params
    if kind is Kind.CONSTANT:
        bad = not 0.0 < float(p['c']) < 1.0
    elif kind is Kind.POWER:
        # The canonical p-series (c = 1) starts at α_1 = 1; builders refuse it.
        bad = float(p['s']) <= 0.0 or not 0.0 < float(p.get('c', 1.0)) <= 1.0
    elif kind is Kind.GEOMETRIC:
        bad = not 0.0 < float(p['c']) < 1.0
    elif kind is Kind.STRETCHED:
        bad = float(p.get('c', 1.0)) <= 0.0 or float(p.get('gamma', 0.5)) <= 0.0
    elif kind is Kind.RECIPROCAL_ODD:
        k, m = int(p.get('k', 2)), int(p.get('m', 1))
        bad = k < 0 or k % 2 or not m % 2 or k + m < 3
    else:
        values = p.get('values')
        bad = not values or any(not 0.0 < float(v) < 1.0 for v in values)
    if bad:
        raise ParameterError("Parameters {} of family '{}' put some alpha_n outside (0, 1)".format(p, kind.value))


def make_sequence(spec) -> AlphaSequence:
    """
    Turn a sequence spec (a dict, or an `AlphaSequence` which is returned as
    is) into an `AlphaSequence`, checking that every `α_n` is in `(0, 1)`.
    """
    if isinstance(spec, AlphaSequence):
        return spec
    try:
        kind = Kind(spec["kind"])
    except (KeyError, ValueError):
        raise ValueError("Unknown sequence kind in {}".format(spec))
    params = dict(spec.get("params", {}))
    if kind is Kind.EXPLICIT:
        params['values'] = [float(v) for v in params.get('values', [])]
    limit = spec.get("length_limit")
    if kind is Kind.EXPLICIT and limit is None:
        limit = len(params['values'])
    seq = AlphaSequence(kind, params, limit)
    _check_range(seq)
    return seq


def parse_rule(rule: str) -> AlphaSequence:
    """
    Parse the command-line shorthands for sequences:

    * `odd:2n+1` (any `odd:kn+m` with `k` even and `m` odd),
    * `3,5,7`, an explicit list of odd bases,
    * `geometric:0.5`, `constant:1/3`, `power:1.5`,
    * `stretched:c,gamma` for `exp(-c·n^gamma)`.
    """
    rule = rule.strip()
    if rule.startswith('odd:'):
        body = rule[4:].replace(' ', '')
        k, _, m = body.partition('n')
        k = int(k) if k not in ('', '+') else 1
        m = int(m) if m else 0
        return make_sequence({"kind": Kind.RECIPROCAL_ODD.value, "params": {"k": k, "m": m}})
    if ':' in rule:
        name, _, value = rule.partition(':')
        key = {'geometric': ('geometric', 'c'), 'constant': ('constant', 'c'),
               'power': ('power-decay', 's'), 'stretched': ('stretched-exponential', 'c')}.get(name)
        if key is None:
            raise ValueError("Unknown sequence rule: {}".format(rule))
        first, _, gamma = value.partition(',')
        params = {key[1]: float(Fraction(first))}
        if gamma:
            if name != 'stretched':
                raise ValueError("Only stretched rules take a second parameter: {}".format(rule))
            params['gamma'] = float(Fraction(gamma))
        return make_sequence({"kind": key[0], "params": params})
    bases = [int(b) for b in rule.split(',') if b]
    return make_sequence({"kind": Kind.EXPLICIT.value, "params": {"values": [1.0 / b for b in bases]}})


def partial_lp_sum(seq: AlphaSequence, p: float, N: int) -> float:
    """
    `Σ_{n=1}^{N} α_n^p`, accumulated from the largest term down.
    """
    if p <= 0 or N < 1:
        raise ValueError("partial_lp_sum needs p > 0 and N >= 1, got p={}, N={}".format(p, N))
    terms = np.sort(seq.values(N) ** p)[::-1]
    return math.fsum(terms)


def _truncated_sums(seq: AlphaSequence) -> list:
    limit = seq.length_limit
    grid = [N for N in REPORT_N if limit is None or N <= limit] or ([limit] if limit else [])
    return [(p, N, partial_lp_sum(seq, p, N)) for p in REPORT_P for N in grid]


def classify_family(spec) -> ClassReport:
    """
    Decide `ℓ^0` / `ℓ^∞` membership from the closed form of the family:

    * geometric and stretched-exponential families are in `ℓ^0`;
    * `c·n^{-s}` and reciprocal odd sequences with growing bases are in
      `ℓ^∞ \\ ℓ^0`, witnessed by `p = 2/s` (`p = 2` for reciprocal odd);
    * constant sequences are in neither;
    * explicit lists are always `unknown-heuristic`.
    """
    seq = make_sequence(spec)
    witness = None
    if seq.kind is Kind.EXPLICIT:
        membership = Membership.UNKNOWN
    elif seq.kind in (Kind.GEOMETRIC, Kind.STRETCHED):
        membership = Membership.ELL0
    elif seq.is_constant():
        membership = Membership.NEITHER
    else:
        membership = Membership.ELL_INFINITY
        witness = 2.0 / float(seq.params['s']) if seq.kind is Kind.POWER else 2.0
    return ClassReport(seq.to_dict(), membership, witness, _truncated_sums(seq), PREDICTIONS[membership])
