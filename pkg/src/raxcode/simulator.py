"""Monte Carlo and exact evaluation of the random-coding ensemble.

A trial draws a fresh codebook (every codeword symbol i.i.d. from its class's
input distribution), sends codeword 0 of the condition's class for every
user, samples the channel, and decodes with maximum likelihood plus a
per-output typicality threshold.

Only the classes the decoder searches (those appearing in the operation
region) are generated in full. A transmitted class outside the region only
needs its first ``message + 1`` codewords, since nothing else in it is ever
looked at.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import Channel, OperationRegion, RateProfile, proper_subsets
from .exponents import DEFAULT_CONFIG, ExponentCache, ExponentResult, OptimizerConfig

DEFAULT_SYMBOL_BUDGET = 50_000_000
EXACT_LIMIT = 10_000_000
TIE_RTOL = 1e-9
WILSON_Z = 1.96


class BudgetExceeded(RuntimeError):
    """Raised when a codebook or an enumeration would exceed its size limit."""


def codeword_count(n: int, rate: float) -> int:
    """floor(e^{n r}); the small slack keeps e.g. exp(2 * log(4)/2) from rounding down to 3."""
    x = n * rate
    if x > 700:
        return math.inf
    return max(1, math.floor(math.exp(x) + 1e-9))


# --- thresholds -----------------------------------------------------------


@dataclass(frozen=True)
class ThresholdParams:
    """Threshold parameters in the exponent's (rho, s) coordinates.

    The threshold formula itself uses (rho_tilde, s1, s2); the two sets are
    linked by an invertible change of variables that is checked on creation.
    """

    rho: float
    s: float
    offset: float = 0.0

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if not 0 < self.s <= 1 - self.rho + 1e-12:
            raise ValueError(f"s must lie in (0, 1 - rho], got s={self.s}, rho={self.rho}")
        if math.isnan(self.offset):
            raise ValueError("offset must not be NaN")
        rt, s2, s1 = self.rho_tilde, self.s2, self.s1
        if not (0 < s2 < rt or math.isclose(s2, rt, rel_tol=0, abs_tol=1e-15)) or not 0 <= s1 < 1:
            raise ValueError("derived threshold parameters out of range")
        # rt - s2 and rt - (1 - rt) s2 cancel badly for small rho; use their reduced forms
        d = 1.0 - (1.0 - self.s) * (1.0 - rt)
        gap = rt * rt * (1.0 - self.s) / d
        den = rt * rt / d
        rho_back = rt * gap / den
        s_back = 1 - gap / den
        if abs(rho_back - self.rho) > 1e-12 or abs(s_back - self.s) > 1e-12:
            raise ValueError("variable change does not round-trip")

    @property
    def rho_tilde(self) -> float:
        return min(1.0, self.rho / (1.0 - self.s))

    @property
    def s2(self) -> float:
        rt = self.rho_tilde
        return rt * self.s / (1.0 - (1.0 - self.s) * (1.0 - rt))

    @property
    def s1(self) -> float:
        return 1.0 - self.s2 / self.rho_tilde

    @classmethod
    def from_exponent(cls, res: ExponentResult, offset: float = 0.0) -> "ThresholdParams":
        return cls(res.rho_star, res.s_star, offset)

    def with_offset(self, offset: float) -> "ThresholdParams":
        return ThresholdParams(self.rho, self.s, offset)


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m, axis=axis)


def _log_joint(dists, users) -> np.ndarray:
    p = np.ones(1)
    for k in users:
        p = np.multiply.outer(p, dists[k].probs).reshape(-1)
    with np.errstate(divide="ignore"):
        return np.log(p)


def _tau(L: np.ndarray, idx: np.ndarray, y: np.ndarray, log_p: np.ndarray, log_qs: Sequence[np.ndarray],
         rate_sum: float, tp: ThresholdParams) -> float:
    if not len(log_qs):
        return math.inf
    n = y.size
    Ly = L[idx, :, y]  # (N, n_rest)
    rt, s2 = tp.rho_tilde, tp.s2
    with np.errstate(invalid="ignore"):
        scaled = np.where(np.isneginf(Ly), -np.inf, (s2 / rt) * Ly)
    log_a = float(np.sum(_lse(log_p[None, :] + scaled, axis=1)))
    if log_a == -math.inf:
        return -math.inf
    log_b = max(float(np.sum(_lse(q[None, :] + Ly, axis=1))) for q in log_qs)
    if log_b == -math.inf:
        return math.inf
    tau = -(log_b + (rt - 1.0) * log_a + n * rt * rate_sum) / (n * (tp.s1 + s2))
    return tau + tp.offset


def _subset_index(ch: Channel, s_users, x_subset, n: int) -> np.ndarray:
    if not s_users:
        return np.zeros(n, dtype=np.intp)
    xs = np.asarray(x_subset, dtype=np.intp).reshape(len(s_users), n)
    return np.ravel_multi_index(tuple(xs), tuple(ch.input_sizes[k] for k in s_users))


def compute_threshold(ch: Channel, y: Sequence[int], rate_sum: float, dists, out_dists: Sequence,
                      tp: ThresholdParams, subset=(), x_subset=None) -> float:
    """Typicality threshold tau (nats/symbol) for one candidate rate vector and subset S.

    ``rate_sum`` is the candidate's total rate over users outside S, ``dists``
    its per-user input distributions, and ``out_dists`` the per-user
    distributions of every out-of-region vector agreeing with it on S.
    ``x_subset`` holds the candidate's codeword symbols for the users in S,
    shape (|S|, N). The worst out-of-region vector is chosen for this y.
    """
    y = np.asarray(y, dtype=np.intp)
    L, s_users, rest = ch.split(subset)
    idx = _subset_index(ch, s_users, x_subset, y.size)
    log_qs = [_log_joint(d, rest) for d in out_dists]
    return _tau(L, idx, y, _log_joint(dists, rest), log_qs, rate_sum, tp)


class ThresholdTable:
    """Threshold parameters per (candidate rate vector, subset S).

    A missing entry means no out-of-region vector agrees with the candidate on
    S, so the check for that S always passes.
    """

    def __init__(self, ch: Channel, rp: RateProfile, region: OperationRegion, params: dict):
        self.ch, self.rp, self.region = ch, rp, region
        self.params = dict(params)
        outside = region.outside(rp)
        # per (r, S): split channel, log input laws and the rate sum, built once
        self._prep = {}
        for r in region.inside():
            for S in proper_subsets(ch.num_users):
                L, s_users, rest = ch.split(S)
                log_qs = [_log_joint(rp.dists(v), rest) for v in outside if all(v[k] == r[k] for k in S)]
                rate_sum = sum(rp.rates(r)[k] for k in rest)
                self._prep[(r, S)] = (L, s_users, _log_joint(rp.dists(r), rest), log_qs, rate_sum)

    @classmethod
    def from_exponents(cls, ch: Channel, rp: RateProfile, region: OperationRegion,
                       cfg: OptimizerConfig = DEFAULT_CONFIG, offset: float = 0.0,
                       cache: ExponentCache | None = None) -> "ThresholdTable":
        """Use the (rho*, s*) of the smallest E_i exponent for each (r, S)."""
        region.validate(rp)
        cache = cache or ExponentCache(ch, rp, cfg)
        outside = region.outside(rp)
        params = {}
        for r in region.inside():
            for S in proper_subsets(ch.num_users):
                worst = None
                for v in outside:
                    if all(v[k] == r[k] for k in S):
                        res = cache.ei(S, r, v)
                        if worst is None or res.value < worst.value:
                            worst = res
                if worst is not None:
                    params[(r, S)] = ThresholdParams.from_exponent(worst, offset)
        return cls(ch, rp, region, params)

    def with_offset(self, offset: float) -> "ThresholdTable":
        return ThresholdTable(self.ch, self.rp, self.region,
                              {k: v.with_offset(offset) for k, v in self.params.items()})

    def tau(self, y, r, S, x_subset=None) -> float:
        tp = self.params.get((r, S))
        L, s_users, log_p, log_qs, rate_sum = self._prep[(r, S)]
        if tp is None or not log_qs:
            return math.inf
        y = np.asarray(y, dtype=np.intp)
        return _tau(L, _subset_index(self.ch, s_users, x_subset, y.size), y, log_p, log_qs, rate_sum, tp)


# --- codebooks ------------------------------------------------------------


@dataclass(frozen=True)
class CodebookSpec:
    """Which codeword classes to draw: ``counts[k]`` maps class index to codeword count."""

    n: int
    profile: RateProfile
    seed: int = 0
    counts: tuple = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("codeword length must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        counts = self.counts or tuple(
            {i: codeword_count(self.n, p.rate) for i, p in enumerate(pts)} for pts in self.profile.users
        )
        counts = tuple(dict(sorted(c.items())) for c in counts)
        if len(counts) != self.profile.num_users:
            raise ValueError("need class counts for every user")
        for k, c in enumerate(counts):
            for i, m in c.items():
                if not 0 <= i < self.profile.sizes()[k] or not m >= 1:
                    raise ValueError(f"user {k}: bad class {i} with {m} codewords")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def for_condition(cls, n: int, profile: RateProfile, region: OperationRegion, condition, messages=None,
                      seed: int = 0) -> "CodebookSpec":
        """Searched classes in full, plus enough of the transmitted class to hold the sent codeword."""
        K = profile.num_users
        messages = messages or (0,) * K
        counts = [dict() for _ in range(K)]
        for v in region:
            for k, i in enumerate(v):
                counts[k][i] = codeword_count(n, profile.users[k][i].rate)
        for k, (i, w) in enumerate(zip(condition, messages)):
            full = codeword_count(n, profile.users[k][i].rate)
            if w >= full:
                raise ValueError(f"user {k}: message {w} does not exist at rate index {i}")
            counts[k][i] = counts[k].get(i, w + 1)
        return cls(n, profile, seed, tuple(counts))

    def total_symbols(self) -> float:
        return sum(m for c in self.counts for m in c.values()) * self.n


@dataclass(frozen=True)
class Codebook:
    """``words[k][i]`` is an int array (count, n) of user k's class-i codewords."""

    n: int
    profile: RateProfile
    words: tuple = field(default_factory=tuple)


def _draw(rng: np.random.Generator, probs: np.ndarray, shape) -> np.ndarray:
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(shape), side="right").astype(np.intp)


def generate_codebook(spec: CodebookSpec, rng: np.random.Generator | None = None,
                      budget: float = DEFAULT_SYMBOL_BUDGET) -> Codebook:
    if spec.total_symbols() > budget:
        raise BudgetExceeded(f"codebook needs {spec.total_symbols():.3g} symbols, budget is {budget:.3g}")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    words = []
    for k, c in enumerate(spec.counts):
        pts = spec.profile.users[k]
        words.append({i: _draw(rng, pts[i].dist.probs, (m, spec.n)) for i, m in c.items()})
    return Codebook(spec.n, spec.profile, tuple(words))


def sample_output(ch: Channel, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Channel output for input symbols ``x`` of shape (K, N)."""
    rows = ch.transition[tuple(np.asarray(x))]  # (N, |Y|)
    cdf = np.cumsum(rows, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(rows.shape[0])
    return (cdf <= u[:, None]).sum(axis=1).astype(np.intp)


# --- decoding -------------------------------------------------------------


@dataclass(frozen=True)
class Outcome:
    """Decoder output; ``rates is None`` denotes a collision report."""

    messages: tuple | None = None
    rates: tuple | None = None

    @property
    def collision(self) -> bool:
        return self.rates is None


COLLISION = Outcome()


def _candidates(codebook: Codebook, region: OperationRegion, ch: Channel, y: np.ndarray):
    """Log-likelihoods of every in-region codeword tuple: list of (r, LL array over message tuples)."""
    logp = ch.log_transition
    K = ch.num_users
    out = []
    for r in region:
        words = [codebook.words[k][r[k]] for k in range(K)]
        idx = tuple(w.reshape((1,) * k + (w.shape[0],) + (1,) * (K - k - 1) + (w.shape[1],))
                    for k, w in enumerate(words))
        ll = logp[idx + (y,)].sum(axis=-1)
        out.append((r, ll))
    return out


def decode_multi(y, codebook: Codebook, region: OperationRegion, thresholds: ThresholdTable) -> Outcome:
    """Unique strict ML winner among in-region tuples that also clears every per-subset threshold.

    Strict dominance over all tuples differing in some user, taken over every
    subset S, is the same as being the unique maximiser. Log-likelihoods equal
    up to a relative 1e-9 count as ties, which absorbs summation-order noise.
    """
    ch = thresholds.ch
    y = np.asarray(y, dtype=np.intp)
    cands = _candidates(codebook, region, ch, y)
    best = max(float(ll.max()) for _, ll in cands)
    if best == -math.inf:
        return COLLISION
    tol = TIE_RTOL * max(1.0, abs(best))
    hits = [(r, ll) for r, ll in cands if ll.max() >= best - tol]
    n_hits = sum(int(np.count_nonzero(ll >= best - tol)) for _, ll in hits)
    if n_hits != 1:
        return COLLISION
    r, ll = hits[0]
    w = np.unravel_index(int(np.argmax(ll)), ll.shape)
    n = y.size
    for S in proper_subsets(ch.num_users):
        x_s = np.array([codebook.words[k][r[k]][w[k]] for k in S]).reshape(len(S), n)
        tau = thresholds.tau(y, r, S, x_s)
        if not best > -n * tau:
            return COLLISION
    return Outcome(tuple(int(i) for i in w), tuple(r))


def decode_single(y, codebook: Codebook, region: OperationRegion, thresholds: ThresholdTable) -> Outcome:
    if thresholds.ch.num_users != 1:
        raise ValueError("decode_single expects a single-user channel")
    return decode_multi(y, codebook, region, thresholds)


# --- trials ---------------------------------------------------------------


def wilson_radius(count: int, trials: int, z: float = WILSON_Z) -> float:
    """Half-width of the Wilson score interval."""
    if trials <= 0:
        raise ValueError("trials must be >= 1")
    p = count / trials
    return z / (1 + z * z / trials) * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))


@dataclass(frozen=True)
class SimOutcome:
    condition: tuple
    in_region: bool
    trials: int
    errors: int

    @property
    def decode_error_freq(self) -> float:
        return self.errors / self.trials if self.in_region else 0.0

    @property
    def miss_detect_freq(self) -> float:
        return 0.0 if self.in_region else self.errors / self.trials

    @property
    def error_freq(self) -> float:
        """The frequency relevant to this condition's side."""
        return self.errors / self.trials

    @property
    def wilson_radius_95(self) -> float:
        return wilson_radius(self.errors, self.trials)


def empirical_p_es(outcomes: Sequence[SimOutcome]) -> float:
    return max(o.error_freq for o in outcomes)


def _is_error(out: Outcome, condition, messages, in_region: bool) -> bool:
    if in_region:
        return out.collision or out.rates != tuple(condition) or out.messages != tuple(messages)
    return not out.collision


def trial_rng(base_seed: int, index: int) -> np.random.Generator:
    """Per-trial generator: PCG64 seeded by a SeedSequence over (base_seed, index)."""
    return np.random.default_rng([int(base_seed), int(index)])


def run_trials(ch: Channel, spec: CodebookSpec, region: OperationRegion, thresholds: ThresholdTable,
               condition, trials: int, base_seed: int, messages=None, threads: int = 1,
               budget: float = DEFAULT_SYMBOL_BUDGET) -> SimOutcome:
    """Estimate the condition's error probability over ``trials`` fresh codebooks.

    For an in-region condition an error is anything other than decoding the
    sent (messages, rates); for an out-of-region one it is anything other than
    a collision report. Counts are summed per chunk, so the result does not
    depend on ``threads``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    condition = tuple(int(i) for i in condition)
    messages = tuple(messages or (0,) * ch.num_users)
    in_region = condition in region
    if spec.total_symbols() > budget:
        raise BudgetExceeded(f"codebook needs {spec.total_symbols():.3g} symbols, budget is {budget:.3g}")

    def work(lo: int, hi: int) -> int:
        errors = 0
        for t in range(lo, hi):
            rng = trial_rng(base_seed, t)
            cb = generate_codebook(spec, rng, budget)
            x = np.stack([cb.words[k][condition[k]][messages[k]] for k in range(ch.num_users)])
            y = sample_output(ch, x, rng)
            errors += _is_error(decode_multi(y, cb, region, thresholds), condition, messages, in_region)
        return errors

    threads = max(1, int(threads))
    if threads == 1:
        total = work(0, trials)
    else:
        bounds = np.linspace(0, trials, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            total = sum(pool.map(work, bounds[:-1], bounds[1:]))
    return SimOutcome(condition, in_region, trials, int(total))


# --- exact enumeration ----------------------------------------------------


@dataclass(frozen=True)
class ExactOutcome:
    condition: tuple
    in_region: bool
    error_probability: float

    @property
    def decode_error(self) -> float:
        return self.error_probability if self.in_region else 0.0

    @property
    def miss_detect(self) -> float:
        return 0.0 if self.in_region else self.error_probability


def exact_ensemble_error(ch: Channel, spec: CodebookSpec, region: OperationRegion, thresholds: ThresholdTable,
                         condition, messages=None, limit: int = EXACT_LIMIT) -> ExactOutcome:
    """Ensemble-average error probability by enumerating every codebook and output sequence.

    Only symbols with positive probability are enumerated; the size limit
    applies to (codebook realizations) x (output sequences).
    """
    condition = tuple(int(i) for i in condition)
    messages = tuple(messages or (0,) * ch.num_users)
    in_region = condition in region
    n = spec.n
    slots = []  # (user, class, count) in generation order
    for k, c in enumerate(spec.counts):
        for i, m in c.items():
            slots.append((k, i, m))
    supports, logs = [], []
    for k, i, m in slots:
        probs = spec.profile.users[k][i].dist.probs
        sup = np.flatnonzero(probs > 0)
        supports.extend([sup] * (m * n))
        logs.extend([np.log(probs[sup])] * (m * n))
    size = math.prod(len(s) for s in supports) * ch.output_size ** n
    if size > limit:
        raise BudgetExceeded(f"enumeration size {size:.3g} exceeds the limit {limit:.3g}")

    outputs = np.array(list(itertools.product(range(ch.output_size), repeat=n)), dtype=np.intp).reshape(-1, n)
    total = 0.0
    for choice in itertools.product(*(range(len(s)) for s in supports)):
        logw = sum(lg[c] for lg, c in zip(logs, choice))
        symbols = [s[c] for s, c in zip(supports, choice)]
        words = [dict() for _ in range(ch.num_users)]
        pos = 0
        for k, i, m in slots:
            words[k][i] = np.array(symbols[pos:pos + m * n], dtype=np.intp).reshape(m, n)
            pos += m * n
        cb = Codebook(n, spec.profile, tuple(words))
        x = np.stack([cb.words[k][condition[k]][messages[k]] for k in range(ch.num_users)])
        rows = ch.transition[tuple(x)]  # (n, |Y|)
        for y in outputs:
            py = float(np.prod(rows[np.arange(n), y]))
            if py == 0.0:
                continue
            if _is_error(decode_multi(y, cb, region, thresholds), condition, messages, in_region):
                total += math.exp(logw) * py
    return ExactOutcome(condition, in_region, total)
