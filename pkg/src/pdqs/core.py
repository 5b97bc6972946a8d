"""Domain types, allocation functions and the seeding contract.

Every mechanism in the package consumes the same `AllocationFunction`
interface: a map from the bid vector to per-owner selection probabilities
that is non-increasing in each owner's own bid and clamped to ``[0, 1 - tau]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_TAU = 1e-6


class DomainKind(str, enum.Enum):
    BINARY = "binary"
    REAL_INTERVAL = "real-interval"


@dataclass(frozen=True)
class DataDomain:
    """Domain of the private values.

    The binary domain is always ``{0, 1}``; ``lo``/``hi`` are ignored for it.
    """

    kind: DomainKind = DomainKind.BINARY
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DomainKind(self.kind))
        if self.kind is DomainKind.BINARY:
            object.__setattr__(self, "lo", 0.0)
            object.__setattr__(self, "hi", 1.0)
        elif not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"real-interval domain needs finite lo < hi, got [{self.lo}, {self.hi}]")

    @classmethod
    def binary(cls) -> DataDomain:
        return cls(DomainKind.BINARY)

    @classmethod
    def interval(cls, lo: float, hi: float) -> DataDomain:
        return cls(DomainKind.REAL_INTERVAL, float(lo), float(hi))

    @property
    def is_binary(self) -> bool:
        return self.kind is DomainKind.BINARY

    def contains(self, values) -> bool:
        v = np.asarray(values, dtype=float)
        if self.is_binary:
            return bool(np.all((v == 0.0) | (v == 1.0)))
        return bool(np.all((v >= self.lo) & (v <= self.hi)))

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        """Uniform draws from the domain (the randomiser's replacement value)."""
        if self.is_binary:
            return gen.integers(0, 2, size=size).astype(float)
        return gen.uniform(self.lo, self.hi, size=size)


@dataclass(frozen=True)
class DataOwner:
    private_value: float
    valuation: float
    bid: float


@dataclass(frozen=True, eq=False)
class Market:
    """A single transaction: owners (stored column-wise), budget and bounds."""

    values: np.ndarray
    bids: np.ndarray
    budget: float
    valuations: np.ndarray | None = None
    theta_lo: float = 0.0
    theta_hi: float = 1.0
    data_domain: DataDomain = field(default_factory=DataDomain.binary)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        bids = np.asarray(self.bids, dtype=float).ravel()
        valuations = bids.copy() if self.valuations is None else np.asarray(self.valuations, dtype=float).ravel()
        for name, arr in (("values", values), ("bids", bids), ("valuations", valuations)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(bids)
        if n < 1:
            raise ValueError("market needs at least one owner")
        if len(values) != n or len(valuations) != n:
            raise ValueError("values, bids and valuations must have equal length")
        if not self.budget > 0:
            raise ValueError(f"budget must be positive, got {self.budget}")
        if not self.theta_lo < self.theta_hi:
            raise ValueError("theta_lo must be below theta_hi")
        for name, arr in (("bids", bids), ("valuations", valuations)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            if np.any(arr < self.theta_lo) or np.any(arr > self.theta_hi):
                raise ValueError(f"{name} must lie in [{self.theta_lo}, {self.theta_hi}]")
        if not self.data_domain.contains(values):
            raise ValueError("private values fall outside the data domain")

    @classmethod
    def from_owners(cls, owners: Sequence[DataOwner], budget: float, **kw) -> Market:
        return cls(
            values=[o.private_value for o in owners],
            bids=[o.bid for o in owners],
            valuations=[o.valuation for o in owners],
            budget=budget,
            **kw,
        )

    @property
    def n(self) -> int:
        return len(self.bids)

    @property
    def owners(self) -> list[DataOwner]:
        return [DataOwner(float(t), float(v), float(b)) for t, v, b in zip(self.values, self.valuations, self.bids)]

    def with_bids(self, bids) -> Market:
        return Market(self.values, bids, self.budget, None, self.theta_lo, self.theta_hi, self.data_domain)


# -- allocation functions ---------------------------------------------------


class AllocationFunction:
    """Per-owner selection probabilities as a function of the bid vector.

    Subclasses implement `curves`, which evaluates every owner's probability
    at substituted own bids while the other owners' bids stay fixed. All
    other entry points derive from it.
    """

    kind: str = "abstract"
    tau: float = DEFAULT_TAU

    def clamp(self, x):
        return np.clip(x, 0.0, 1.0 - self.tau)

    def curves(self, bids: np.ndarray, xs: np.ndarray, owners: np.ndarray | None = None) -> np.ndarray:
        """Row ``r`` of the result is owner ``owners[r]``'s probability at own bids ``xs[r]``."""
        raise NotImplementedError

    def probabilities(self, bids) -> np.ndarray:
        bids = _check_bids(bids)
        return self.curves(bids, bids[:, None])[:, 0]

    def own_curve(self, bids, i: int, xs) -> np.ndarray:
        bids = _check_bids(bids)
        _check_index(i, len(bids))
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        return self.curves(bids, xs[None, :], np.array([i]))[0]


class _OwnBidAllocation(AllocationFunction):
    """Closed forms that only look at the owner's own bid."""

    def raw(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def curves(self, bids, xs, owners=None):
        with np.errstate(divide="ignore", over="ignore"):
            return self.clamp(self.raw(np.asarray(xs, dtype=float)))


@dataclass(frozen=True)
class LinearAllocation(_OwnBidAllocation):
    tau: float = DEFAULT_TAU
    kind = "linear"

    def raw(self, x):
        return 1.0 - x


@dataclass(frozen=True)
class LogAllocation(_OwnBidAllocation):
    """``q = -ln(k * b)``; a zero bid maps to the clamp ceiling."""

    k: float = 1.0
    tau: float = DEFAULT_TAU
    kind = "log"

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("log coefficient must be positive")

    def raw(self, x):
        return -np.log(self.k * x)


@dataclass(frozen=True)
class ExpAllocation(_OwnBidAllocation):
    k: float = 1.0
    tau: float = DEFAULT_TAU
    kind = "exp"

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("exp coefficient must be positive")

    def raw(self, x):
        return np.exp(-self.k * x)


@dataclass(frozen=True)
class ConstantAllocation(_OwnBidAllocation):
    value: float = 0.5
    tau: float = DEFAULT_TAU
    kind = "constant"

    def raw(self, x):
        return np.full_like(x, self.value, dtype=float)


@dataclass(frozen=True)
class IncreasingAllocation(_OwnBidAllocation):
    """``q = b``. Deliberately violates monotonicity; used by self-checks."""

    tau: float = DEFAULT_TAU
    kind = "increasing"

    def raw(self, x):
        return np.array(x, dtype=float)


def _check_bids(bids) -> np.ndarray:
    b = np.asarray(bids, dtype=float).ravel()
    if not np.all(np.isfinite(b)):
        raise ValueError("bids must be finite")
    return b


def _check_index(i: int, n: int) -> None:
    if not (0 <= int(i) < n) or int(i) != i:
        raise IndexError(f"owner index {i} out of range for {n} owners")


def eval_allocation(af: AllocationFunction, bids, i: int) -> float:
    bids = _check_bids(bids)
    _check_index(i, len(bids))
    return float(af.own_curve(bids, i, bids[i])[0])


# -- randomness ---------------------------------------------------------------

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Rng:
    """Seed plus stream id; `generator()` always replays the same draws."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream <= _MASK64):
            raise ValueError("seed and stream must be 64-bit unsigned integers")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(self.stream,))))

    def derive(self, trial: int, owner: int) -> Rng:
        return derive_rng(self, trial, owner)


def derive_rng(root: Rng, trial: int, owner: int) -> Rng:
    """Stream for ``(trial, owner)`` under ``root``; injective in the pair."""
    if not (0 <= trial < 1 << 32 and 0 <= owner < 1 << 32):
        raise ValueError("trial and owner indices must fit in 32 bits")
    seed = root.seed
    if root.stream:
        # fold the parent stream into the seed so nested derivations stay distinct
        seed = int(np.random.SeedSequence((root.seed, root.stream)).generate_state(1, np.uint64)[0])
    return Rng(seed, (trial << 32) | owner)
