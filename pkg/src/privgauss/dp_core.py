"""Randomized privacy primitives with a seedable randomness contract.

Budgets are (epsilon, delta) pairs; every mechanism draws its noise from an
explicit RandomSource so that a fixed (seed, stream path) reproduces outputs
bit for bit, and records what it spent on an optional Accountant.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, UnsupportedComposition


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) differential-privacy budget.

    delta may be zero only in accounting contexts (ledger arithmetic);
    mechanisms themselves reject delta == 0.
    """

    epsilon: float
    delta: float

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise InvalidArgument(f"epsilon must be positive and finite, got {self.epsilon}")
        if not (0.0 <= self.delta < 1.0):
            raise InvalidArgument(f"delta must lie in [0, 1), got {self.delta}")

    def split(self, shares):
        return split_budget(self, shares)

    def scaled(self, factor):
        return PrivacyBudget(self.epsilon * factor, self.delta * factor)


def split_budget(budget: PrivacyBudget, shares):
    """Split a budget into parts (s_i * eps, s_i * delta).

    Shares must be positive and sum to 1 (tolerance 1e-12); basic
    composition of the parts gives back exactly the input budget.
    """
    shares = [float(s) for s in shares]
    if not shares or any(s <= 0.0 for s in shares):
        raise InvalidArgument("shares must be positive")
    if abs(sum(shares) - 1.0) > 1e-12:
        raise InvalidArgument(f"shares sum to {sum(shares)}, expected 1")
    return [PrivacyBudget(budget.epsilon * s, budget.delta * s) for s in shares]


def _hash_label(label):
    digest = hashlib.blake2b(repr(label).encode("utf-8"), digest_size=8).digest()
    return (
        int.from_bytes(digest[:4], "little"),
        int.from_bytes(digest[4:], "little"),
    )


class RandomSource:
    """A seeded, hierarchically splittable random stream.

    Identical (seed, stream path) always reproduce the same draw sequence;
    children derived with distinct labels are statistically independent.
    Each instance owns one generator, consumed sequentially.
    """

    def __init__(self, seed, _spawn_key=()):
        self.seed = int(seed)
        self._spawn_key = tuple(_spawn_key)
        self._generator = None

    def child(self, *labels) -> "RandomSource":
        key = self._spawn_key
        for label in labels:
            key = key + _hash_label(label)
        return RandomSource(self.seed, key)

    @property
    def path_key(self):
        return self._spawn_key

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self._spawn_key)
            self._generator = np.random.Generator(np.random.PCG64(seq))
        return self._generator

    def normal(self, scale=1.0, size=None):
        return self.generator.normal(0.0, scale, size=size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size=size)

    def laplace(self, scale, size=None):
        return self.generator.laplace(0.0, scale, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size=size)


@dataclass(frozen=True)
class LedgerEntry:
    label: str
    budget: PrivacyBudget
    mechanism: str = ""
    sensitivity: float | None = None

    def as_dict(self):
        return {
            "label": self.label,
            "epsilon": self.budget.epsilon,
            "delta": self.budget.delta,
            "mechanism": self.mechanism,
            "sensitivity": self.sensitivity,
        }


@dataclass
class Accountant:
    """Append-only ledger of privacy charges with a composition mode.

    ``basic`` sums charges linearly; ``advanced`` applies the sublinear
    rule for T equal charges with slack ``advanced_delta_slack``.
    """

    mode: str = "basic"
    advanced_delta_slack: float = 0.0
    _entries: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("basic", "advanced"):
            raise InvalidArgument(f"unknown composition mode {self.mode!r}")
        if self.mode == "advanced" and not 0.0 < self.advanced_delta_slack < 1.0:
            raise InvalidArgument("advanced mode needs delta slack in (0, 1)")

    @property
    def entries(self):
        return tuple(self._entries)

    def charge(self, label, budget: PrivacyBudget, mechanism="", sensitivity=None):
        self._entries.append(LedgerEntry(str(label), budget, mechanism, sensitivity))

    def extend(self, other: "Accountant", prefix=""):
        for entry in other.entries:
            label = f"{prefix}{entry.label}" if prefix else entry.label
            self._entries.append(LedgerEntry(label, entry.budget, entry.mechanism, entry.sensitivity))

    def total(self):
        return compose(self)

    def as_dict(self):
        eps, delta = self.total()
        return {
            "mode": self.mode,
            "total_epsilon": eps,
            "total_delta": delta,
            "entries": [e.as_dict() for e in self._entries],
        }


def compose(accountant: Accountant):
    """Total (epsilon, delta) of the accountant's ledger.

    basic:    (sum eps_t, sum delta_t); an empty ledger composes to (0, 0).
    advanced: requires T >= 1 equal charges with eps_0 <= 1; returns
              (eps_0 * sqrt(6 T ln(1/delta_0)), delta_0 + sum delta_t).
    """
    entries = accountant.entries
    if accountant.mode == "basic":
        # fsum is the correctly rounded sum, so the total is exactly
        # invariant under ledger permutation
        return (
            math.fsum(e.budget.epsilon for e in entries),
            math.fsum(e.budget.delta for e in entries),
        )
    if not entries:
        raise UnsupportedComposition("advanced composition needs a non-empty ledger")
    eps0 = entries[0].budget.epsilon
    if any(abs(e.budget.epsilon - eps0) > 1e-12 * eps0 for e in entries):
        raise UnsupportedComposition("advanced composition needs uniform epsilon charges")
    if eps0 > 1.0:
        raise UnsupportedComposition("advanced composition requires eps_0 <= 1")
    delta0 = accountant.advanced_delta_slack
    t = len(entries)
    eps = eps0 * math.sqrt(6.0 * t * math.log(1.0 / delta0))
    return eps, delta0 + math.fsum(e.budget.delta for e in entries)


@dataclass(frozen=True)
class SharePlan:
    """Per-call budget for a fixed number of calls, picked so the calls
    compose to at most the parent budget.

    At moderate call counts basic composition gives each call more epsilon
    than the advanced rule, so the plan takes whichever is larger.
    """

    per_call: PrivacyBudget
    calls: int
    mode: str
    delta_slack: float = 0.0


def plan_shares(budget: PrivacyBudget, calls) -> SharePlan:
    if calls < 1:
        raise InvalidArgument("need at least one call")
    basic_eps = budget.epsilon / calls
    delta0 = budget.delta / (calls + 1)
    adv_eps = budget.epsilon / math.sqrt(6.0 * calls * math.log(1.0 / delta0))
    if adv_eps > basic_eps and adv_eps <= 1.0:
        return SharePlan(PrivacyBudget(adv_eps, delta0), calls, "advanced", delta0)
    return SharePlan(PrivacyBudget(basic_eps, budget.delta / calls), calls, "basic")


def gaussian_sigma(sensitivity, budget: PrivacyBudget):
    """Noise scale of the Gaussian mechanism: sigma^2 = 2 s^2 ln(2/delta) / eps^2."""
    if not (math.isfinite(sensitivity) and sensitivity > 0.0):
        raise InvalidArgument(f"sensitivity must be positive and finite, got {sensitivity}")
    if budget.delta == 0.0:
        raise InvalidArgument("the Gaussian mechanism requires delta > 0")
    return sensitivity * math.sqrt(2.0 * math.log(2.0 / budget.delta)) / budget.epsilon


def gaussian_mechanism(values, sensitivity, budget, rng: RandomSource, accountant=None, label="gaussian"):
    """Add calibrated iid Gaussian noise to a statistic with known l2 sensitivity."""
    v = np.asarray(values, dtype=np.float64)
    sigma = gaussian_sigma(sensitivity, budget)
    if accountant is not None:
        accountant.charge(label, budget, mechanism="gaussian", sensitivity=sensitivity)
    return v + rng.normal(scale=sigma, size=v.shape)


def gue_noise(d, sigma, rng: RandomSource):
    """Symmetric d x d noise: entries i <= j iid N(0, sigma^2), mirrored."""
    if d < 1:
        raise InvalidArgument(f"dimension must be >= 1, got {d}")
    if sigma < 0.0:
        raise InvalidArgument(f"sigma must be non-negative, got {sigma}")
    if sigma == 0.0:
        return np.zeros((d, d))
    draws = rng.normal(scale=sigma, size=(d, d))
    upper = np.triu(draws)
    return upper + np.triu(draws, k=1).T


@dataclass(frozen=True)
class BucketScheme:
    """Disjoint half-open buckets [l, r) covering the target range.

    geometric: buckets [ratio^k, ratio^{k+1}) over (0, inf) plus the
               distinguished zero bucket [0, 0]; negative values rejected.
    linear:    buckets [offset + k*w, offset + (k+1)*w) over the reals.
    """

    kind: str
    ratio_or_width: float
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("geometric", "linear"):
            raise InvalidArgument(f"unknown bucket scheme kind {self.kind!r}")
        if self.kind == "geometric" and self.ratio_or_width <= 1.0:
            raise InvalidArgument("geometric scheme needs ratio > 1")
        if self.kind == "linear" and self.ratio_or_width <= 0.0:
            raise InvalidArgument("linear scheme needs width > 0")

    ZERO = None  # key of the geometric zero bucket

    def keys(self, values):
        """Bucket key for each value; geometric keys are None for the zero
        bucket, otherwise integers k with value in [ratio^k, ratio^{k+1})."""
        v = np.asarray(values, dtype=np.float64)
        if v.size and not np.all(np.isfinite(v)):
            raise InvalidArgument("histogram values must be finite")
        if self.kind == "linear":
            idx = np.floor((v - self.offset) / self.ratio_or_width).astype(np.int64)
            # half-open buckets: boundary values belong to the upper bucket
            hi = self.offset + (idx + 1) * self.ratio_or_width
            idx[v >= hi] += 1
            return [int(k) for k in idx]
        if v.size and np.any(v < 0.0):
            raise InvalidArgument("geometric scheme covers [0, inf) only")
        out = []
        ln_ratio = math.log(self.ratio_or_width)
        for x in v:
            if x == 0.0:
                out.append(None)
                continue
            k = math.floor(math.log(x) / ln_ratio)
            # float boundary correction so [l, r) is exact
            while self.ratio_or_width ** (k + 1) <= x:
                k += 1
            while self.ratio_or_width ** k > x:
                k -= 1
            out.append(k)
        return out

    def bounds(self, key):
        if self.kind == "linear":
            lo = self.offset + key * self.ratio_or_width
            return lo, lo + self.ratio_or_width
        if key is None:
            return 0.0, 0.0
        return self.ratio_or_width ** key, self.ratio_or_width ** (key + 1)


def stable_release_threshold(budget: PrivacyBudget):
    """Noisy-count release threshold 1 + 2 ln(2/delta) / eps."""
    if budget.delta == 0.0:
        raise InvalidArgument("stability-based histograms require delta > 0")
    return 1.0 + 2.0 * math.log(2.0 / budget.delta) / budget.epsilon


def stable_counts(counts, budget: PrivacyBudget, rng: RandomSource):
    """Core stability-based release: Laplace(2/eps) noise on occupied
    buckets, keep those whose noisy count clears the threshold.

    ``counts`` maps bucket key -> true count (> 0); keys must sort.  Only
    occupied buckets are ever candidates, so empty buckets can never be
    released.  Returns {key: noisy_count}, deterministic given the stream.
    """
    threshold = stable_release_threshold(budget)
    keys = sorted(counts.keys(), key=lambda k: (k is not None, k))
    if not keys:
        return {}
    noise = rng.laplace(2.0 / budget.epsilon, size=len(keys))
    released = {}
    for key, eta in zip(keys, noise):
        noisy = counts[key] + eta
        if noisy > threshold:
            released[key] = float(noisy)
    return released


def stable_histogram(values, scheme: BucketScheme, budget, rng, accountant=None, label="stable_histogram"):
    """(eps, delta)-DP histogram over the scheme's buckets.

    Returns a list of ((lo, hi), noisy_count) for released buckets, sorted
    by lower edge.  Empty input releases nothing (not an error).
    """
    keys = scheme.keys(values)
    counts = {}
    for k in keys:
        counts[k] = counts.get(k, 0) + 1
    if accountant is not None:
        accountant.charge(label, budget, mechanism="stable_histogram", sensitivity=1.0)
    released = stable_counts(counts, budget, rng)
    out = [(scheme.bounds(k), noisy) for k, noisy in released.items()]
    out.sort(key=lambda item: item[0][0])
    return out
