"""Discrete memoryless (multi-user) channels, input distributions and rate sets.

All information quantities are in nats.
"""
from __future__ import annotations

import io
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import xlogy

ROW_SUM_TOL = 1e-9
MAX_USERS = 16


class ChannelFormatError(ValueError):
    """Raised for malformed channel files or invalid channel tensors."""


def _as_prob_vector(probs, what="distribution") -> np.ndarray:
    p = np.array(probs, dtype=float).reshape(-1)
    if p.size == 0:
        raise ValueError(f"{what} is empty")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError(f"{what} has negative or non-finite entries: {p}")
    if abs(p.sum() - 1.0) > ROW_SUM_TOL:
        raise ValueError(f"{what} sums to {float(p.sum()):.17g}, not 1")
    p.setflags(write=False)
    return p


@dataclass(frozen=True, eq=False)
class InputDistribution:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _as_prob_vector(self.probs, "input distribution"))

    @classmethod
    def uniform(cls, size: int) -> "InputDistribution":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def point_mass(cls, size: int, symbol: int) -> "InputDistribution":
        p = np.zeros(size)
        p[symbol] = 1.0
        return cls(p)

    def __len__(self):
        return self.probs.size

    def __eq__(self, other):
        if not isinstance(other, InputDistribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())


@dataclass(frozen=True, eq=False)
class Channel:
    """K-user DMC with transition tensor indexed ``[x_1, ..., x_K, y]``."""

    transition: np.ndarray

    def __post_init__(self):
        t = np.array(self.transition, dtype=float)
        if t.ndim < 2:
            raise ChannelFormatError("transition tensor needs at least one input axis and one output axis")
        if t.ndim - 1 > MAX_USERS:
            raise ChannelFormatError(f"at most {MAX_USERS} users are supported, got {t.ndim - 1}")
        if any(d < 1 for d in t.shape):
            raise ChannelFormatError(f"empty alphabet in shape {t.shape}")
        if not np.all(np.isfinite(t)) or np.any(t < 0) or np.any(t > 1):
            raise ChannelFormatError("transition probabilities must lie in [0, 1]")
        sums = t.sum(axis=-1)
        bad = np.argwhere(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            idx = tuple(int(i) for i in bad[0])
            raise ChannelFormatError(f"row for input {idx} sums to {float(sums[idx]):.17g}, not 1")
        t.setflags(write=False)
        object.__setattr__(self, "transition", t)
        with np.errstate(divide="ignore"):
            logt = np.log(t)
        logt.setflags(write=False)
        object.__setattr__(self, "_log", logt)

    @property
    def num_users(self) -> int:
        return self.transition.ndim - 1

    @property
    def input_sizes(self) -> tuple[int, ...]:
        return self.transition.shape[:-1]

    @property
    def output_size(self) -> int:
        return self.transition.shape[-1]

    @property
    def log_transition(self) -> np.ndarray:
        """Natural log of the transition tensor (``-inf`` where P = 0)."""
        return self._log

    @classmethod
    def from_matrix(cls, matrix) -> "Channel":
        return cls(np.asarray(matrix, dtype=float))

    def split(self, subset: Iterable[int]) -> tuple[np.ndarray, tuple[int, ...], tuple[int, ...]]:
        """Regroup the log tensor as ``[x_S, x_Sbar, y]`` with both groups flattened.

        Returns the (nS, nSbar, nY) array and the user orders of S and its complement.
        """
        s = tuple(sorted(set(subset)))
        rest = tuple(k for k in range(self.num_users) if k not in s)
        perm = s + rest + (self.num_users,)
        sizes = self.input_sizes
        n_s = int(np.prod([sizes[k] for k in s])) if s else 1
        n_r = int(np.prod([sizes[k] for k in rest])) if rest else 1
        arr = np.transpose(self._log, perm).reshape(n_s, n_r, self.output_size)
        return arr, s, rest


def bsc(p: float) -> Channel:
    return Channel(np.array([[1 - p, p], [p, 1 - p]]))


def identity_channel(size: int = 2) -> Channel:
    return Channel(np.eye(size))


def xor_mac() -> Channel:
    t = np.zeros((2, 2, 2))
    for x1, x2 in itertools.product(range(2), repeat=2):
        t[x1, x2, x1 ^ x2] = 1.0
    return Channel(t)


def load_channel(source) -> Channel:
    """Parse the text channel format.

    ``source`` may be bytes, str, a path-like or a binary/text stream. The first
    non-comment line is ``dmc K |X_1| ... |X_K| |Y|``; each following line is one
    transition row, input tuples in lexicographic order.
    """
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    elif isinstance(source, str):
        text = source
    elif hasattr(source, "read"):
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    else:
        with open(source, "rb") as fh:
            text = fh.read().decode("utf-8")

    lines = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        content = raw.split("#", 1)[0].strip()
        if content:
            lines.append((lineno, content))
    if not lines:
        raise ChannelFormatError("empty channel file")

    lineno, header = lines[0]
    tokens = header.split()
    if tokens[0] != "dmc":
        raise ChannelFormatError(f"line {lineno}: header must start with 'dmc'")
    try:
        dims = [int(t) for t in tokens[1:]]
    except ValueError:
        raise ChannelFormatError(f"line {lineno}: non-integer dimension in header") from None
    if not dims:
        raise ChannelFormatError(f"line {lineno}: missing user count")
    k = dims[0]
    if k < 1 or k > MAX_USERS:
        raise ChannelFormatError(f"line {lineno}: user count must be in 1..{MAX_USERS}")
    if len(dims) != k + 2:
        raise ChannelFormatError(f"line {lineno}: expected {k + 1} alphabet sizes after K, got {len(dims) - 1}")
    if any(d < 1 for d in dims[1:]):
        raise ChannelFormatError(f"line {lineno}: alphabet sizes must be positive")
    in_sizes, n_out = dims[1:-1], dims[-1]
    n_rows = int(np.prod(in_sizes))

    rows = lines[1:]
    if len(rows) != n_rows:
        raise ChannelFormatError(f"expected {n_rows} transition rows, found {len(rows)}")
    table = np.empty((n_rows, n_out))
    for r, (lineno, content) in enumerate(rows):
        try:
            vals = [float(v) for v in content.split()]
        except ValueError:
            raise ChannelFormatError(f"line {lineno} (row {r}): not a list of numbers") from None
        if len(vals) != n_out:
            raise ChannelFormatError(f"line {lineno} (row {r}): expected {n_out} entries, got {len(vals)}")
        v = np.array(vals)
        if not np.all(np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
            raise ChannelFormatError(f"line {lineno} (row {r}): probabilities must lie in [0, 1]")
        if abs(v.sum() - 1.0) > ROW_SUM_TOL:
            raise ChannelFormatError(f"line {lineno} (row {r}): row sums to {float(v.sum()):.17g}, not 1")
        table[r] = v
    return Channel(table.reshape(*in_sizes, n_out))


def dump_channel(ch: Channel) -> str:
    out = [f"dmc {ch.num_users} " + " ".join(str(s) for s in ch.input_sizes) + f" {ch.output_size}"]
    for row in ch.transition.reshape(-1, ch.output_size):
        out.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(out) + "\n"


# --- rate sets and operation regions -------------------------------------


@dataclass(frozen=True)
class RatePoint:
    rate: float
    dist: InputDistribution


@dataclass(frozen=True)
class RateProfile:
    """Per-user ordered rate sets, each rate paired with its input distribution."""

    users: tuple[tuple[RatePoint, ...], ...]

    def __post_init__(self):
        users = tuple(tuple(pts) for pts in self.users)
        if not users:
            raise ValueError("rate profile needs at least one user")
        for k, pts in enumerate(users):
            if not pts:
                raise ValueError(f"user {k} has no rate points")
            rates = [p.rate for p in pts]
            if any(not np.isfinite(r) or r < 0 for r in rates):
                raise ValueError(f"user {k}: rates must be finite and >= 0")
            if any(b <= a for a, b in zip(rates, rates[1:])):
                raise ValueError(f"user {k}: rates must be strictly increasing, got {rates}")
        object.__setattr__(self, "users", users)

    @classmethod
    def single(cls, rates: Sequence[float], dists) -> "RateProfile":
        """One-user profile; ``dists`` is one distribution for all rates or one per rate."""
        if isinstance(dists, InputDistribution):
            dists = [dists] * len(rates)
        return cls(((tuple(RatePoint(float(r), d) for r, d in zip(rates, dists, strict=True))),))

    @property
    def num_users(self) -> int:
        return len(self.users)

    def sizes(self) -> tuple[int, ...]:
        return tuple(len(pts) for pts in self.users)

    def all_vectors(self) -> list[tuple[int, ...]]:
        return list(itertools.product(*(range(m) for m in self.sizes())))

    def rates(self, vec: Sequence[int]) -> tuple[float, ...]:
        return tuple(self.users[k][i].rate for k, i in enumerate(vec))

    def dists(self, vec: Sequence[int]) -> tuple[InputDistribution, ...]:
        return tuple(self.users[k][i].dist for k, i in enumerate(vec))

    def check_channel(self, ch: Channel) -> None:
        if ch.num_users != self.num_users:
            raise ValueError(f"channel has {ch.num_users} users, rate profile has {self.num_users}")
        for k, pts in enumerate(self.users):
            for p in pts:
                if len(p.dist) != ch.input_sizes[k]:
                    raise ValueError(
                        f"user {k}: distribution length {len(p.dist)} != input alphabet {ch.input_sizes[k]}"
                    )


@dataclass(frozen=True)
class OperationRegion:
    """The rate-index vectors the receiver intends to decode."""

    members: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        members = frozenset(tuple(int(i) for i in v) for v in self.members)
        if not members:
            raise ValueError("operation region must be non-empty")
        lengths = {len(v) for v in members}
        if len(lengths) != 1:
            raise ValueError("region vectors have inconsistent lengths")
        object.__setattr__(self, "members", members)

    @classmethod
    def of(cls, *vectors) -> "OperationRegion":
        return cls(frozenset(tuple(v) if isinstance(v, (tuple, list)) else (v,) for v in vectors))

    def __contains__(self, vec) -> bool:
        return tuple(vec) in self.members

    def __iter__(self):
        return iter(sorted(self.members))

    def __len__(self):
        return len(self.members)

    def validate(self, rp: RateProfile) -> None:
        sizes = rp.sizes()
        for v in self.members:
            if len(v) != len(sizes):
                raise ValueError(f"region vector {v} has wrong length for {len(sizes)} users")
            if any(not 0 <= i < m for i, m in zip(v, sizes)):
                raise ValueError(f"region vector {v} indexes outside the rate profile")

    def inside(self) -> list[tuple[int, ...]]:
        return sorted(self.members)

    def outside(self, rp: RateProfile) -> list[tuple[int, ...]]:
        return [v for v in rp.all_vectors() if v not in self.members]


def proper_subsets(k: int) -> list[tuple[int, ...]]:
    """All S strictly contained in {0..k-1}, in bitmask order (S = () first)."""
    if k > MAX_USERS:
        raise ValueError(f"at most {MAX_USERS} users are supported")
    return [tuple(i for i in range(k) if mask >> i & 1) for mask in range((1 << k) - 1)]


# --- information measures -------------------------------------------------


def _product_dist(dists: Sequence[InputDistribution], users: Sequence[int]) -> np.ndarray:
    p = np.ones(1)
    for k in users:
        p = np.multiply.outer(p, dists[k].probs).reshape(-1)
    return p


def conditional_mutual_information(ch: Channel, dists: Sequence[InputDistribution], subset=()) -> float:
    """I(X_Sbar; Y | X_S) under independent inputs, in nats."""
    s = tuple(sorted(set(subset)))
    if len(s) >= ch.num_users:
        raise ValueError("subset must be a proper subset of the users")
    if len(dists) != ch.num_users:
        raise ValueError("need one input distribution per user")
    for k, d in enumerate(dists):
        if len(d) != ch.input_sizes[k]:
            raise ValueError(f"user {k}: distribution length does not match the input alphabet")
    _, s, rest = ch.split(s)
    perm = s + rest + (ch.num_users,)
    n_s = int(np.prod([ch.input_sizes[k] for k in s])) if s else 1
    w = np.transpose(ch.transition, perm).reshape(n_s, -1, ch.output_size)
    p_s = _product_dist(dists, s)
    p_r = _product_dist(dists, rest)
    # output law given x_S
    q = np.einsum("j,ijy->iy", p_r, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        # q = 0 with w > 0 only happens for inputs of probability zero
        ratio = np.where((w > 0) & (q[:, None, :] > 0), w / q[:, None, :], 1.0)
    inner = np.einsum("j,ijy->i", p_r, xlogy(w, ratio))
    return float(max(p_s @ inner, 0.0))


def mutual_information(ch: Channel, dist: InputDistribution) -> float:
    if ch.num_users != 1:
        raise ValueError("mutual_information expects a single-user channel")
    return conditional_mutual_information(ch, [dist], ())


@dataclass(frozen=True)
class Violation:
    vector: tuple[int, ...]
    subset: tuple[int, ...]
    rate_sum: float
    information: float


def region_is_achievable(ch: Channel, rp: RateProfile, region: OperationRegion) -> tuple[bool, list[Violation]]:
    """Check sum_{k not in S} r_k < I(X_Sbar; Y | X_S) for every member and every proper S."""
    rp.check_channel(ch)
    region.validate(rp)
    violations = []
    cache: dict = {}
    for vec in region.inside():
        rates = rp.rates(vec)
        dists = rp.dists(vec)
        for s in proper_subsets(ch.num_users):
            key = (s, tuple(dists[k] for k in range(ch.num_users)))
            if key not in cache:
                cache[key] = conditional_mutual_information(ch, dists, s)
            info = cache[key]
            total = sum(rates[k] for k in range(ch.num_users) if k not in s)
            if not total < info:
                violations.append(Violation(vec, s, total, info))
    return not violations, violations
