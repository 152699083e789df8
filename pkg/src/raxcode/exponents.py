"""Achievable exponents E_m / E_i and their grid-rate variants.

Each exponent is ``max over (rho, s)`` of an explicit objective. Every feasible
(rho, s) already gives a valid exponent, so the optimizer only has to find a
good point, never a certified maximum. The search is a coarse grid followed by
alternating golden-section line searches around the incumbent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .channel import (
    MAX_USERS,
    Channel,
    InputDistribution,
    OperationRegion,
    RateProfile,
    proper_subsets,
)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
# line-search resolution in (rho, t); the objective is flat to second order at
# an interior optimum, so this is far below any value tolerance used downstream
_XTOL = 1e-10


class Kind(str, Enum):
    EM = "Em"
    EI = "Ei"
    EM_TILDE = "EmTilde"
    EI_TILDE = "EiTilde"


@dataclass(frozen=True)
class OptimizerConfig:
    """Search settings for the (rho, s) maximisation.

    ``grid_points_rho`` / ``grid_points_s`` count grid intervals, so the coarse
    grid has one more node than that along each axis and doubling a count nests
    the old grid inside the new one.
    """

    grid_points_rho: int = 64
    grid_points_s: int = 64
    refine_iters: int = 40
    epsilon: float = 1e-9
    golden_iters: int = 80

    def __post_init__(self):
        if self.grid_points_rho < 8 or self.grid_points_s < 8:
            raise ValueError("grid_points_rho and grid_points_s must be >= 8")
        if self.refine_iters < 0 or self.golden_iters < 1:
            raise ValueError("refine_iters must be >= 0 and golden_iters >= 1")
        if not 0 < self.epsilon < 1e-3:
            raise ValueError("epsilon must lie in (0, 1e-3)")


DEFAULT_CONFIG = OptimizerConfig()


@dataclass(frozen=True)
class ExponentResult:
    value: float
    rho_star: float
    s_star: float
    kind: Kind


def _lse(a: np.ndarray, axis) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _scaled(log_p: np.ndarray, power) -> np.ndarray:
    """``power * log P`` with P = 0 mapped to -inf for every power (0^0 := 0)."""
    with np.errstate(invalid="ignore"):
        return np.where(np.isneginf(log_p), -np.inf, power * log_p)


def _log_probs(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def _joint(dists: Sequence[InputDistribution], users: Sequence[int]) -> np.ndarray:
    p = np.ones(1)
    for k in users:
        p = np.multiply.outer(p, dists[k].probs).reshape(-1)
    return p


def _check_subset(ch: Channel, subset) -> tuple[int, ...]:
    if ch.num_users > MAX_USERS:
        raise ValueError(f"at most {MAX_USERS} users are supported")
    s = tuple(sorted(set(int(k) for k in subset)))
    if any(not 0 <= k < ch.num_users for k in s):
        raise ValueError(f"subset {s} names users outside 0..{ch.num_users - 1}")
    if len(s) == ch.num_users:
        raise ValueError("subset must be a proper subset of the users")
    return s


def _check_dists(ch: Channel, dists, what: str) -> None:
    if len(dists) != ch.num_users:
        raise ValueError(f"{what}: need one distribution per user")
    for k, d in enumerate(dists):
        if d is None:
            continue
        if len(d) != ch.input_sizes[k]:
            raise ValueError(f"{what}: user {k} distribution does not match the input alphabet")


class _Objective:
    """Vectorised objective over (rho, s) arrays.

    Layout: channel log tensor ``L[i, j, y]`` with i indexing x_S and j the
    complement users' joint input.
    """

    kind: Kind

    def __init__(self, ch: Channel, subset, rate_sum: float, reduce: str):
        if reduce not in ("max", "min"):
            raise ValueError("reduce must be 'max' or 'min'")
        self.L, self.s_users, self.rest = ch.split(subset)
        self.rate_sum = float(rate_sum)
        self.reduce = np.max if reduce == "max" else np.min

    def max_s(self, rho):
        raise NotImplementedError

    def rho_range(self, eps):
        raise NotImplementedError

    def log_inner(self, rho, s):
        raise NotImplementedError

    def __call__(self, rho, s):
        rho = np.asarray(rho, dtype=float)
        s = np.asarray(s, dtype=float)
        return -rho * self.rate_sum - self.log_inner(rho, s)


class _EmObjective(_Objective):
    """-rho*R - log sum_{y,x_S} p_S [sum p_r P^(1-s)] reduce_m [sum q_m P^(s/rho)]^rho."""

    kind = Kind.EM

    def __init__(self, ch, subset, r_dists, rate_sum, competitor_dists, reduce="max"):
        super().__init__(ch, subset, rate_sum, reduce)
        self.log_ps = _log_probs(_joint(r_dists, self.s_users))
        self.log_pr = _log_probs(_joint(r_dists, self.rest))
        self.log_q = np.stack([_log_probs(_joint(d, self.rest)) for d in competitor_dists])

    def max_s(self, rho):
        return np.ones_like(np.asarray(rho, dtype=float))

    def rho_range(self, eps):
        return eps, 1.0

    def log_inner(self, rho, s):
        shape = np.broadcast(rho, s).shape
        rho = np.broadcast_to(rho, shape).reshape(-1, 1, 1, 1)
        s = np.broadcast_to(s, shape).reshape(-1, 1, 1, 1)
        L = self.L[None]  # (1, nS, nR, nY)
        log_a = _lse(self.log_pr[None, None, :, None] + _scaled(L, 1.0 - s), axis=2)
        scaled = _scaled(L, s / rho)  # (G, nS, nR, nY)
        log_b = _lse(self.log_q[None, :, None, :, None] + scaled[:, None], axis=3)  # (G, M, nS, nY)
        log_b = self.reduce(log_b, axis=1)
        terms = self.log_ps[None, :, None] + log_a + rho[:, :, :, 0] * log_b
        return _lse(terms.reshape(terms.shape[0], -1), axis=1).reshape(shape)


class _EiObjective(_Objective):
    """-rho*R - log sum_{y,x_S} p_S reduce_m [sum p_m P^(s/(s+rho))]^(s+rho) [sum q P]^(1-s)."""

    kind = Kind.EI

    def __init__(self, ch, subset, s_dists, rate_sum, candidate_dists, out_dists, reduce="max"):
        super().__init__(ch, subset, rate_sum, reduce)
        self.log_ps = _log_probs(_joint(s_dists, self.s_users))
        self.log_p = np.stack([_log_probs(_joint(d, self.rest)) for d in candidate_dists])
        log_q = _log_probs(_joint(out_dists, self.rest))
        self.log_b = _lse(log_q[None, :, None] + self.L, axis=1)  # (nS, nY)

    def max_s(self, rho):
        return 1.0 - np.asarray(rho, dtype=float)

    def rho_range(self, eps):
        return eps, 1.0 - eps

    def log_inner(self, rho, s):
        shape = np.broadcast(rho, s).shape
        rho = np.broadcast_to(rho, shape).reshape(-1, 1, 1, 1)
        s = np.broadcast_to(s, shape).reshape(-1, 1, 1, 1)
        scaled = _scaled(self.L[None], s / (s + rho))  # (G, nS, nR, nY)
        log_a = _lse(self.log_p[None, :, None, :, None] + scaled[:, None], axis=3)  # (G, M, nS, nY)
        log_a = self.reduce(log_a, axis=1)
        g = rho[:, :, :, 0]
        sg = s[:, :, :, 0]
        terms = self.log_ps[None, :, None] + (sg + g) * log_a + _scaled(self.log_b[None], 1.0 - sg)
        return _lse(terms.reshape(terms.shape[0], -1), axis=1).reshape(shape)


def _golden_max(f, lo, hi, iters, tol=1e-15):
    """Golden-section search for a maximiser of f on [lo, hi]; endpoints are also tried."""
    best_x, best_v = lo, f(lo)
    v_hi = f(hi)
    if v_hi > best_v:
        best_x, best_v = hi, v_hi
    if hi - lo <= 0:
        return best_x, best_v
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
        if b - a < tol:
            break
    for x, v in ((c, fc), (d, fd)):
        if v > best_v:
            best_x, best_v = x, v
    return best_x, best_v


def _line_bounds(x, d, lo, hi):
    """Largest [a, b] with lo <= x + t*d <= hi for t in [a, b]."""
    a, b = -math.inf, math.inf
    for xi, di, l, h in zip(x, d, lo, hi):
        if di > 0:
            a, b = max(a, (l - xi) / di), min(b, (h - xi) / di)
        elif di < 0:
            a, b = max(a, (h - xi) / di), min(b, (l - xi) / di)
    return a, b


def maximize(obj: _Objective, cfg: OptimizerConfig = DEFAULT_CONFIG) -> ExponentResult:
    """Grid search plus golden-section refinement.

    The search runs in coordinates (rho, t) with s = eps + t * (s_max(rho) - eps),
    so the slanted boundary s = 1 - rho of the E_i feasible set becomes the face
    t = 1 and line searches can slide along it. Each refinement round does one
    golden search per coordinate and one along the round's net displacement.
    Only strict improvements are accepted, so the result never falls below the
    best grid node.
    """
    eps = cfg.epsilon
    r_lo, r_hi = obj.rho_range(eps)

    def s_of(rho, t):
        return eps + t * (np.maximum(obj.max_s(rho), eps) - eps)

    def f(rho, t):
        v = float(obj(rho, s_of(rho, t)))
        return -math.inf if math.isnan(v) else v

    rho_nodes = np.linspace(r_lo, r_hi, cfg.grid_points_rho + 1)
    t_nodes = np.linspace(0.0, 1.0, cfg.grid_points_s + 1)
    rho_grid, t_grid = np.meshgrid(rho_nodes, t_nodes, indexing="ij")
    vals = obj(rho_grid, s_of(rho_grid, t_grid))
    vals = np.where(np.isnan(vals), -np.inf, vals)
    # argmax returns the first maximiser: lowest rho, then lowest s
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    x = np.array([rho_nodes[i], t_nodes[j]])
    best = f(*x)

    lo = np.array([r_lo, 0.0])
    hi = np.array([r_hi, 1.0])
    h = np.array([(r_hi - r_lo) / cfg.grid_points_rho, 1.0 / cfg.grid_points_s])
    for _ in range(cfg.refine_iters):
        start, prev = x.copy(), best
        for axis in (0, 1):
            d = np.zeros(2)
            d[axis] = 1.0
            a, b = _line_bounds(x, d, lo, hi)
            a, b = max(a, -h[axis]), min(b, h[axis])
            if b > a:
                base = x.copy()
                t, v = _golden_max(lambda t: f(*(base + t * d)), a, b, cfg.golden_iters, _XTOL)
                if v > best:
                    x, best = np.clip(base + t * d, lo, hi), v
        d = x - start
        if np.any(d != 0):
            a, b = _line_bounds(x, d, lo, hi)
            a, b = max(a, -1.0), min(b, 4.0)
            if b > a:
                base = x.copy()
                tol = _XTOL / float(np.max(np.abs(d)))
                t, v = _golden_max(lambda t: f(*(base + t * d)), a, b, cfg.golden_iters, tol)
                if v > best:
                    x, best = np.clip(base + t * d, lo, hi), v
        if best - prev <= 1e-15:
            break
    rho = float(x[0])
    s = float(s_of(rho, x[1]))
    value = float(obj(rho, s))
    return ExponentResult(value=value, rho_star=rho, s_star=s, kind=obj.kind)


# --- public exponent functions -------------------------------------------


def em_objective(ch, subset, r_dists, rtilde, rtilde_dists, rho, s):
    """Evaluate the E_m objective at given (rho, s) (no maximisation)."""
    s_ = _check_subset(ch, subset)
    rate = sum(rtilde[k] for k in range(ch.num_users) if k not in s_)
    return _EmObjective(ch, s_, r_dists, rate, [rtilde_dists])(rho, s)


def ei_objective(ch, subset, r, r_dists, rprime_dists, rho, s):
    """Evaluate the E_i objective at given (rho, s) (no maximisation)."""
    s_ = _check_subset(ch, subset)
    rate = sum(r[k] for k in range(ch.num_users) if k not in s_)
    return _EiObjective(ch, s_, r_dists, rate, [r_dists], rprime_dists)(rho, s)


def em_multi(ch: Channel, subset, r_dists, rtilde, rtilde_dists, cfg: OptimizerConfig = DEFAULT_CONFIG) -> ExponentResult:
    """E_m for user subset S; ``rtilde`` and ``rtilde_dists`` are read for users outside S only."""
    s_ = _check_subset(ch, subset)
    _check_dists(ch, r_dists, "r_dists")
    _check_dists(ch, rtilde_dists, "rtilde_dists")
    rate = sum(float(rtilde[k]) for k in range(ch.num_users) if k not in s_)
    return maximize(_EmObjective(ch, s_, r_dists, rate, [rtilde_dists]), cfg)


def ei_multi(ch: Channel, subset, r, r_dists, rprime_dists, cfg: OptimizerConfig = DEFAULT_CONFIG) -> ExponentResult:
    s_ = _check_subset(ch, subset)
    _check_dists(ch, r_dists, "r_dists")
    _check_dists(ch, rprime_dists, "rprime_dists")
    rate = sum(float(r[k]) for k in range(ch.num_users) if k not in s_)
    return maximize(_EiObjective(ch, s_, r_dists, rate, [r_dists], rprime_dists), cfg)


def em_single(ch: Channel, r_dist: InputDistribution, rtilde: float, rtilde_dist: InputDistribution,
              cfg: OptimizerConfig = DEFAULT_CONFIG) -> ExponentResult:
    if ch.num_users != 1:
        raise ValueError("em_single expects a single-user channel")
    if rtilde < 0:
        raise ValueError("rate must be >= 0")
    return em_multi(ch, (), [r_dist], [rtilde], [rtilde_dist], cfg)


def ei_single(ch: Channel, r: float, r_dist: InputDistribution, rtilde_dist: InputDistribution,
              cfg: OptimizerConfig = DEFAULT_CONFIG) -> ExponentResult:
    if ch.num_users != 1:
        raise ValueError("ei_single expects a single-user channel")
    if r < 0:
        raise ValueError("rate must be >= 0")
    return ei_multi(ch, (), [r], [r_dist], [rtilde_dist], cfg)


def em_tilde(ch: Channel, subset, r_dists, grid_rates, rep_dists, cfg: OptimizerConfig = DEFAULT_CONFIG,
             reduce: str = "max") -> ExponentResult:
    """Grid-rate E_m against one competitor cell.

    ``grid_rates`` holds the cell's grid rate per user (users in S ignored) and
    ``rep_dists`` the per-user distributions of each finite representative of
    the cell. The bracket for the competitors is reduced elementwise over the
    representatives: ``"max"`` keeps the bound valid for every member of the
    cell, ``"min"`` gives the smaller, optimistic value.
    """
    s_ = _check_subset(ch, subset)
    _check_dists(ch, r_dists, "r_dists")
    reps = list(rep_dists)
    if not reps:
        raise ValueError("empty representative set for the referenced cell")
    for d in reps:
        _check_dists(ch, d, "rep_dists")
    rate = sum(float(grid_rates[k]) for k in range(ch.num_users) if k not in s_)
    res = maximize(_EmObjective(ch, s_, r_dists, rate, reps, reduce), cfg)
    return ExponentResult(res.value, res.rho_star, res.s_star, Kind.EM_TILDE)


def ei_tilde(ch: Channel, subset, grid_rates, rep_dists, rprime_dists, cfg: OptimizerConfig = DEFAULT_CONFIG,
             reduce: str = "max") -> ExponentResult:
    """Grid-rate E_i: in-region representatives of one cell against out-of-region ``rprime_dists``."""
    s_ = _check_subset(ch, subset)
    _check_dists(ch, rprime_dists, "rprime_dists")
    reps = list(rep_dists)
    if not reps:
        raise ValueError("empty representative set for the referenced cell")
    for d in reps:
        _check_dists(ch, d, "rep_dists")
    rate = sum(float(grid_rates[k]) for k in range(ch.num_users) if k not in s_)
    res = maximize(_EiObjective(ch, s_, rprime_dists, rate, reps, rprime_dists, reduce), cfg)
    return ExponentResult(res.value, res.rho_star, res.s_star, Kind.EI_TILDE)


# --- system exponent lower bounds ----------------------------------------


@dataclass(frozen=True)
class Witness:
    kind: Kind
    subset: tuple[int, ...]
    first: tuple[int, ...]
    second: tuple[int, ...]
    result: ExponentResult


class ExponentCache:
    """Memoises E_m / E_i values by (kind, subset, first vector, second vector)."""

    def __init__(self, ch: Channel, rp: RateProfile, cfg: OptimizerConfig = DEFAULT_CONFIG):
        rp.check_channel(ch)
        self.ch, self.rp, self.cfg = ch, rp, cfg
        self._store: dict = {}

    def em(self, subset, r, rtilde) -> ExponentResult:
        key = (Kind.EM, subset, r, rtilde)
        if key not in self._store:
            rp = self.rp
            self._store[key] = em_multi(self.ch, subset, rp.dists(r), rp.rates(rtilde), rp.dists(rtilde), self.cfg)
        return self._store[key]

    def ei(self, subset, r, rprime) -> ExponentResult:
        key = (Kind.EI, subset, r, rprime)
        if key not in self._store:
            rp = self.rp
            self._store[key] = ei_multi(self.ch, subset, rp.rates(r), rp.dists(r), rp.dists(rprime), self.cfg)
        return self._store[key]


def _agree(a, b, subset) -> bool:
    return all(a[k] == b[k] for k in subset)


def es_lower_single(ch: Channel, rp: RateProfile, region: OperationRegion,
                    cfg: OptimizerConfig = DEFAULT_CONFIG, cache: ExponentCache | None = None) -> tuple[float, Witness]:
    """min{ min_{r, r~ in R} E_m, min_{r in R, r~ not in R} E_i } for one user."""
    if ch.num_users != 1 or rp.num_users != 1:
        raise ValueError("es_lower_single expects a single-user channel and profile")
    region.validate(rp)
    cache = cache or ExponentCache(ch, rp, cfg)
    inside, outside = region.inside(), region.outside(rp)
    best: Witness | None = None
    for r in inside:
        for rt in inside:
            res = cache.em((), r, rt)
            if best is None or res.value < best.result.value:
                best = Witness(Kind.EM, (), r, rt, res)
    for r in inside:
        for rt in outside:
            res = cache.ei((), r, rt)
            if res.value < best.result.value:
                best = Witness(Kind.EI, (), r, rt, res)
    return best.result.value, best


def es_lower_multi(ch: Channel, rp: RateProfile, region: OperationRegion,
                   cfg: OptimizerConfig = DEFAULT_CONFIG, cache: ExponentCache | None = None) -> tuple[float, Witness]:
    """Minimum over proper S of E_m / E_i for rate-vector pairs agreeing on S."""
    region.validate(rp)
    cache = cache or ExponentCache(ch, rp, cfg)
    inside, outside = region.inside(), region.outside(rp)
    best: Witness | None = None
    for subset in proper_subsets(ch.num_users):
        for r in inside:
            for rt in inside:
                if _agree(r, rt, subset):
                    res = cache.em(subset, r, rt)
                    if best is None or res.value < best.result.value:
                        best = Witness(Kind.EM, subset, r, rt, res)
    for subset in proper_subsets(ch.num_users):
        for r in inside:
            for rt in outside:
                if _agree(r, rt, subset):
                    res = cache.ei(subset, r, rt)
                    if res.value < best.result.value:
                        best = Witness(Kind.EI, subset, r, rt, res)
    return best.result.value, best
