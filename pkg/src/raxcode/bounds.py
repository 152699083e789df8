"""Finite-length system error probability bounds assembled from exponents.

Every bound has two branches. The decode side bounds the error probability of
in-region transmissions, the collision side bounds the miss-detection
probability of out-of-region ones. Each branch is a max over groups of sums of
``exp(-N * E)`` terms, evaluated in the log domain.

The exponent terms do not depend on N, so they are gathered once
(``*_terms``) and scaled for every N by :func:`assemble`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .channel import Channel, OperationRegion, RateProfile, proper_subsets
from .exponents import (
    DEFAULT_CONFIG,
    ExponentCache,
    ExponentResult,
    OptimizerConfig,
    ei_tilde,
    em_tilde,
)


class Branch(str, Enum):
    DECODE = "decode"
    COLLISION = "collision"


@dataclass(frozen=True)
class ExponentTerm:
    """One additive term ``exp(-N * exponent.value)`` of a bound."""

    branch: Branch
    group: tuple
    descriptor: str
    exponent: ExponentResult


@dataclass(frozen=True)
class Term:
    branch: Branch
    group: tuple
    descriptor: str
    log_value: float


@dataclass(frozen=True)
class BoundResult:
    n: int
    log_p_es_upper: float
    breakdown: list = field(default_factory=list)

    @property
    def p_es_upper(self) -> float:
        return math.exp(self.log_p_es_upper) if self.log_p_es_upper < 710 else math.inf

    @property
    def trivial(self) -> bool:
        return self.log_p_es_upper >= 0.0

    def branch_log_values(self) -> dict:
        return {b: _branch_value(self.breakdown, b) for b in Branch}

    @property
    def dominant_branch(self) -> Branch:
        vals = self.branch_log_values()
        # ties go to the decode side
        return Branch.DECODE if vals[Branch.DECODE] >= vals[Branch.COLLISION] else Branch.COLLISION


def _branch_value(breakdown: Sequence[Term], branch: Branch) -> float:
    groups: dict = {}
    for t in breakdown:
        if t.branch == branch:
            groups.setdefault(t.group, []).append(t.log_value)
    if not groups:
        return -math.inf
    return max(float(logsumexp(v)) for v in groups.values())


def recombine(breakdown: Sequence[Term]) -> float:
    """Log of the bound rebuilt from its terms: sum within a group, max over groups and branches."""
    return max(_branch_value(breakdown, b) for b in Branch)


def assemble(n: int, terms: Sequence[ExponentTerm]) -> BoundResult:
    if n < 1:
        raise ValueError("codeword length must be >= 1")
    breakdown = [Term(t.branch, t.group, t.descriptor, -n * t.exponent.value) for t in terms]
    return BoundResult(n=n, log_p_es_upper=recombine(breakdown), breakdown=breakdown)


def _fmt(vec) -> str:
    return "(" + ",".join(str(v) for v in vec) + ")"


def _worst(cands):
    """Candidate with the smallest exponent; the first one wins ties."""
    best = None
    for key, res in cands:
        if best is None or res.value < best[1].value:
            best = (key, res)
    return best


# --- discrete rate sets ---------------------------------------------------


def bound_terms_single(ch: Channel, rp: RateProfile, region: OperationRegion,
                       cfg: OptimizerConfig = DEFAULT_CONFIG, cache: ExponentCache | None = None) -> list:
    if ch.num_users != 1 or rp.num_users != 1:
        raise ValueError("single-user bound needs a single-user channel and profile")
    region.validate(rp)
    cache = cache or ExponentCache(ch, rp, cfg)
    inside, outside = region.inside(), region.outside(rp)
    terms = []
    for r in inside:
        for rt in inside:
            terms.append(ExponentTerm(Branch.DECODE, r, f"Em r={_fmt(r)} rt={_fmt(rt)}", cache.em((), r, rt)))
        if outside:
            rt, res = _worst((rt, cache.ei((), r, rt)) for rt in outside)
            terms.append(ExponentTerm(Branch.DECODE, r, f"Ei r={_fmt(r)} rt={_fmt(rt)}", res))
    if outside:
        for r in inside:
            rt, res = _worst((rt, cache.ei((), r, rt)) for rt in outside)
            terms.append(ExponentTerm(Branch.COLLISION, (), f"Ei r={_fmt(r)} rt={_fmt(rt)}", res))
    return terms


def _agree(a, b, subset) -> bool:
    return all(a[k] == b[k] for k in subset)


def bound_terms_multi(ch: Channel, rp: RateProfile, region: OperationRegion,
                      cfg: OptimizerConfig = DEFAULT_CONFIG, cache: ExponentCache | None = None) -> list:
    region.validate(rp)
    cache = cache or ExponentCache(ch, rp, cfg)
    inside, outside = region.inside(), region.outside(rp)
    subsets = proper_subsets(ch.num_users)
    terms = []
    for r in inside:
        for S in subsets:
            for rt in inside:
                if _agree(rt, r, S):
                    desc = f"Em S={_fmt(S)} r={_fmt(r)} rt={_fmt(rt)}"
                    terms.append(ExponentTerm(Branch.DECODE, r, desc, cache.em(S, r, rt)))
            outs = [rq for rq in outside if _agree(rq, r, S)]
            if outs:
                rq, res = _worst((rq, cache.ei(S, r, rq)) for rq in outs)
                desc = f"Ei S={_fmt(S)} r={_fmt(r)} rq={_fmt(rq)}"
                terms.append(ExponentTerm(Branch.DECODE, r, desc, res))
    for rt in outside:
        for S in subsets:
            outs = [rq for rq in outside if _agree(rq, rt, S)]
            for r in inside:
                if _agree(r, rt, S):
                    rq, res = _worst((rq, cache.ei(S, r, rq)) for rq in outs)
                    desc = f"Ei S={_fmt(S)} r={_fmt(r)} rq={_fmt(rq)}"
                    terms.append(ExponentTerm(Branch.COLLISION, rt, desc, res))
    return terms


def pes_bound_single(n: int, ch: Channel, rp: RateProfile, region: OperationRegion,
                     cfg: OptimizerConfig = DEFAULT_CONFIG, cache: ExponentCache | None = None) -> BoundResult:
    return assemble(n, bound_terms_single(ch, rp, region, cfg, cache))


def pes_bound_multi(n: int, ch: Channel, rp: RateProfile, region: OperationRegion,
                    cfg: OptimizerConfig = DEFAULT_CONFIG, cache: ExponentCache | None = None) -> BoundResult:
    return assemble(n, bound_terms_multi(ch, rp, region, cfg, cache))


# --- grid rates -----------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Per-user rate partition ``r_0 < 0 <= r_1 <= ... <= r_M``.

    Cell i of user k is the interval ``(r_{k,i-1}, r_{k,i}]`` and its grid rate is
    the upper edge ``r_{k,i}``.
    """

    edges: tuple

    def __post_init__(self):
        edges = tuple(np.asarray(e, dtype=float) for e in self.edges)
        if not edges:
            raise ValueError("grid needs at least one user")
        for k, e in enumerate(edges):
            if e.ndim != 1 or len(e) < 2:
                raise ValueError(f"user {k}: need a lower edge and at least one grid rate")
            if not e[0] < 0 <= e[1]:
                raise ValueError(f"user {k}: edges must start below 0 and the first grid rate must be >= 0")
            if np.any(np.diff(e[1:]) < 0):
                raise ValueError(f"user {k}: grid rates must be nondecreasing")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_rates(cls, grid_rates, lower: float = -1.0) -> "GridSpec":
        return cls(tuple(np.concatenate([[lower], np.asarray(g, dtype=float)]) for g in grid_rates))

    @property
    def num_users(self) -> int:
        return len(self.edges)

    def cell(self, k: int, rate: float) -> int:
        """Index i >= 1 of the cell containing ``rate``."""
        e = self.edges[k]
        if not e[0] < rate <= e[-1]:
            raise ValueError(f"user {k}: rate {rate} lies outside the grid ({e[0]}, {e[-1]}]")
        return int(np.searchsorted(e, rate, side="left"))

    def grid_rate(self, k: int, cell: int) -> float:
        return float(self.edges[k][cell])


class _TildeCache:
    def __init__(self, ch, cfg, reduce):
        self.ch, self.cfg, self.reduce = ch, cfg, reduce
        self._store: dict = {}

    def em(self, S, r_dists, grid_rates, reps, key):
        if key not in self._store:
            self._store[key] = em_tilde(self.ch, S, r_dists, grid_rates, reps, self.cfg, self.reduce)
        return self._store[key]

    def ei(self, S, grid_rates, reps, rq_dists, key):
        if key not in self._store:
            self._store[key] = ei_tilde(self.ch, S, grid_rates, reps, rq_dists, self.cfg, self.reduce)
        return self._store[key]


def bound_terms_standard(ch: Channel, grid: GridSpec, samples: RateProfile, region: OperationRegion,
                         cfg: OptimizerConfig = DEFAULT_CONFIG, reduce: str = "max") -> list:
    """Terms of the grid-rate bound.

    ``samples`` lists the representative rate points of every cell; each point is
    assigned to the cell containing its rate. Competitor sets are the in-region
    vectors of one grid cell that agree with the reference vector on S.
    """
    samples.check_channel(ch)
    region.validate(samples)
    if grid.num_users != samples.num_users:
        raise ValueError("grid and rate profile disagree on the number of users")
    K = samples.num_users
    cells = {v: tuple(grid.cell(k, samples.users[k][v[k]].rate) for k in range(K)) for v in samples.all_vectors()}

    def grid_rates(cell):
        return [grid.grid_rate(k, c) for k, c in enumerate(cell)]

    inside, outside = region.inside(), region.outside(samples)
    tc = _TildeCache(ch, cfg, reduce)
    subsets = proper_subsets(K)

    def grouped(vectors):
        by_cell: dict = {}
        for v in vectors:
            by_cell.setdefault(cells[v], []).append(v)
        return sorted(by_cell.items())

    def ei_term(S, cell, reps, rq):
        key = ("i", S, tuple(reps), rq)
        return tc.ei(S, grid_rates(cell), [samples.dists(v) for v in reps], samples.dists(rq), key)

    terms = []
    for r in inside:
        for S in subsets:
            for cell, reps in grouped(v for v in inside if _agree(v, r, S)):
                key = ("m", S, r, tuple(reps))
                res = tc.em(S, samples.dists(r), grid_rates(cell), [samples.dists(v) for v in reps], key)
                desc = f"EmTilde S={_fmt(S)} r={_fmt(r)} cell={_fmt(cell)}"
                terms.append(ExponentTerm(Branch.DECODE, r, desc, res))
            cands = []
            for rq in outside:
                if _agree(rq, r, S):
                    reps = [v for v in inside if cells[v] == cells[r] and _agree(v, rq, S)]
                    cands.append((rq, ei_term(S, cells[r], reps, rq)))
            if cands:
                rq, res = _worst(cands)
                desc = f"EiTilde S={_fmt(S)} cell={_fmt(cells[r])} rq={_fmt(rq)}"
                terms.append(ExponentTerm(Branch.DECODE, r, desc, res))
    for rt in outside:
        for S in subsets:
            outs = [rq for rq in outside if _agree(rq, rt, S)]
            for cell, _ in grouped(v for v in inside if _agree(v, rt, S)):
                cands = []
                for rq in outs:
                    reps = [v for v in inside if cells[v] == cell and _agree(v, rq, S)]
                    cands.append((rq, ei_term(S, cell, reps, rq)))
                rq, res = _worst(cands)
                desc = f"EiTilde S={_fmt(S)} cell={_fmt(cell)} rq={_fmt(rq)}"
                terms.append(ExponentTerm(Branch.COLLISION, rt, desc, res))
    return terms


def pes_bound_standard(n: int, ch: Channel, grid: GridSpec, samples: RateProfile, region: OperationRegion,
                       cfg: OptimizerConfig = DEFAULT_CONFIG, reduce: str = "max") -> BoundResult:
    return assemble(n, bound_terms_standard(ch, grid, samples, region, cfg, reduce))
