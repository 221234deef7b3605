"""Global dyadic grids, induced partitions, and the left-endpoint projection.

Grid times are represented exactly as rationals k/2^m relative to the
horizon T (``fractions.Fraction`` auto-canonicalizes, so the stored
numerator is odd or the level is zero).  Membership, nesting, and
concatenation are therefore decided exactly; floats appear only when a
time is handed to the numerical layers.  User-supplied non-dyadic
endpoints are allowed in induced partitions (any float is itself an exact
rational), but the concatenation and Chapman-Kolmogorov paths insist on
exact dyadic membership.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import DomainError


def _to_relative(t, T):
    """Exact rational t/T for a float, Fraction, or DyadicRational time."""
    if isinstance(t, DyadicRational):
        if t.T != T:
            raise DomainError("mixing dyadic times with different horizons")
        return t.as_fraction()
    if isinstance(t, Fraction):
        return t
    if isinstance(t, (int, float)):
        return Fraction(t) / Fraction(T)
    raise DomainError(f"unsupported time value {t!r}")


def _is_dyadic(q, m):
    """True iff the relative time q equals k/2^m for an integer k."""
    return (q * 2**m).denominator == 1


@dataclass(frozen=True)
class DyadicRational:
    """Exact dyadic time k 2^{-m} T in canonical form (k odd or m = 0)."""

    k: int
    m: int
    T: float

    def __post_init__(self):
        if self.m < 0 or self.k < 0:
            raise DomainError("dyadic rationals need k >= 0 and m >= 0")
        q = Fraction(self.k, 2**self.m)
        if q > 1:
            raise DomainError("dyadic time exceeds the horizon")
        # canonicalize
        object.__setattr__(self, "k", q.numerator)
        object.__setattr__(self, "m", q.denominator.bit_length() - 1)

    def as_fraction(self):
        return Fraction(self.k, 2**self.m)

    @property
    def value(self):
        return float(self.as_fraction() * Fraction(self.T))

    @staticmethod
    def from_fraction(q, T):
        if q < 0 or q > 1 or q.denominator & (q.denominator - 1):
            raise DomainError(f"{q} is not a dyadic time in [0, T]")
        return DyadicRational(q.numerator, q.denominator.bit_length() - 1, T)


@dataclass(frozen=True)
class DyadicGrid:
    """Global dyadic grid D_m = {k 2^{-m} T : k = 0..2^m}."""

    m: int
    T: float

    def __post_init__(self):
        if self.m < 1:
            raise DomainError("grid level must be at least 1")
        if not (self.T > 0.0):
            raise DomainError("horizon must be positive")

    def __len__(self):
        return 2**self.m + 1

    def fractions(self):
        n = 2**self.m
        return [Fraction(k, n) for k in range(n + 1)]

    def times(self):
        return [float(q * Fraction(self.T)) for q in self.fractions()]

    def contains(self, t):
        return _is_dyadic(_to_relative(t, self.T), self.m)


@dataclass(frozen=True)
class DyadicPartition:
    """Ordered finite grid s = t_0 < ... < t_n = t inside [0, T].

    ``rel_times`` are exact rationals relative to T.
    """

    rel_times: tuple
    T: float

    def __post_init__(self):
        if len(self.rel_times) < 2:
            raise DomainError("a partition needs at least two points")
        if any(q < 0 or q > 1 for q in self.rel_times):
            raise DomainError("partition points must lie in [0, T]")
        if any(b <= a for a, b in zip(self.rel_times, self.rel_times[1:])):
            raise DomainError("partition points must be strictly increasing")

    @staticmethod
    def from_times(times, T):
        rel = tuple(_to_relative(t, T) for t in times)
        return DyadicPartition(rel, T)

    @property
    def s(self):
        return float(self.rel_times[0] * Fraction(self.T))

    @property
    def t(self):
        return float(self.rel_times[-1] * Fraction(self.T))

    def times(self):
        return [float(q * Fraction(self.T)) for q in self.rel_times]

    def n_steps(self):
        return len(self.rel_times) - 1

    def mesh(self):
        return max(float((b - a) * Fraction(self.T)) for a, b in zip(self.rel_times, self.rel_times[1:]))

    def refines(self, other):
        return set(other.rel_times) <= set(self.rel_times)

    def to_json(self):
        return [float(q * Fraction(self.T)) for q in self.rel_times]


def induced_partition(m, s, t, T):
    """pi_m[s, t] = {s, t} together with the level-m grid points inside (s, t)."""
    qs = _to_relative(s, T)
    qt = _to_relative(t, T)
    if not (0 <= qs < qt <= 1):
        raise DomainError("need 0 <= s < t <= T")
    n = 2**m
    interior = [Fraction(k, n) for k in range(n + 1) if qs < Fraction(k, n) < qt]
    rel = tuple(sorted({qs, qt, *interior}))
    return DyadicPartition(rel, T)


def concatenate_check(m, r, s, t, T):
    """True iff pi_m[r, t] equals pi_m[r, s] united with pi_m[s, t].

    All three times must be exact members of D_m.
    """
    for name, v in (("r", r), ("s", s), ("t", t)):
        if not _is_dyadic(_to_relative(v, T), m):
            raise DomainError(f"{name}={v} is not a level-{m} dyadic time")
    qr, qs, qt = (_to_relative(v, T) for v in (r, s, t))
    if not (qr < qs < qt):
        raise DomainError("need r < s < t")
    whole = set(induced_partition(m, r, t, T).rel_times)
    glued = set(induced_partition(m, r, s, T).rel_times) | set(induced_partition(m, s, t, T).rel_times)
    return whole == glued


def refine(p: DyadicPartition, extra):
    """Insert extra points (must lie strictly inside (s, t)) into a partition."""
    qs, qt = p.rel_times[0], p.rel_times[-1]
    new = set(p.rel_times)
    for e in extra:
        q = _to_relative(e, p.T)
        if not (qs < q < qt):
            raise DomainError(f"extra point {e} is outside the open interval")
        new.add(q)
    return DyadicPartition(tuple(sorted(new)), p.T)


def left_projection(m, t, T):
    """Left-endpoint projection onto D_m: (T/2^m) floor(2^m t / T).

    Exact on grid members; monotone nondecreasing in t.
    """
    q = _to_relative(t, T)
    if not (0 <= q <= 1):
        raise DomainError("time must lie in [0, T]")
    n = 2**m
    k = math.floor(q * n)
    return float(Fraction(k, n) * Fraction(T))


def left_projection_index(m, t, T):
    """Index k with theta_m(t) = k 2^{-m} T."""
    q = _to_relative(t, T)
    if not (0 <= q <= 1):
        raise DomainError("time must lie in [0, T]")
    return math.floor(q * 2**m)
