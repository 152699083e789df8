"""``raxcode`` command line: region / exponent / bound / simulate / sweep.

Configs are JSON. Paths inside a config are resolved relative to the config
file. Example::

    {
      "channel": "bsc.dmc",
      "users": [[{"rate": 0.05, "dist": [0.5, 0.5]}, {"rate": 0.6, "dist": [0.5, 0.5]}]],
      "region": [[0]],
      "optimizer": {"grid_points_rho": 64, "grid_points_s": 64, "refine_iters": 40},
      "bound": {"n": [20, 50, 100]},
      "simulation": {"n": [20, 50], "trials": 1000, "seed": 1, "offset": 0.0},
      "sweep": {"user": 0, "index": 0, "rates": [0.05, 0.1]}
    }

An optional ``"grid": {"edges": [[-1, 0.1, 0.6]]}`` switches ``bound`` to the
grid-rate bound, with the ``users`` entries acting as cell representatives.

Exit codes: 0 success, 2 configuration error, 3 size budget exceeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .bounds import (
    Branch,
    GridSpec,
    assemble,
    bound_terms_multi,
    bound_terms_single,
    bound_terms_standard,
)
from .channel import (
    Channel,
    InputDistribution,
    OperationRegion,
    RatePoint,
    RateProfile,
    load_channel,
    proper_subsets,
    region_is_achievable,
)
from .exponents import ExponentCache, OptimizerConfig, es_lower_multi, es_lower_single
from .simulator import BudgetExceeded, CodebookSpec, ThresholdTable, run_trials

EXIT_CONFIG = 2
EXIT_BUDGET = 3


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    path: Path
    channel: Channel
    profile: RateProfile
    region: OperationRegion
    optimizer: OptimizerConfig
    raw: dict

    def section(self, name: str) -> dict:
        sec = self.raw.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"'{name}' must be an object")
        return sec

    def n_list(self, section: str) -> list[int]:
        ns = self.section(section).get("n")
        if not isinstance(ns, list) or not ns:
            raise ConfigError(f"'{section}.n' must be a non-empty list of codeword lengths")
        if any(not isinstance(n, int) or isinstance(n, bool) or n < 1 for n in ns):
            raise ConfigError(f"'{section}.n' entries must be positive integers")
        return ns


def _parse_profile(users) -> RateProfile:
    if not isinstance(users, list) or not users:
        raise ConfigError("'users' must be a non-empty list (one rate list per user)")
    out = []
    for k, pts in enumerate(users):
        if not isinstance(pts, list) or not pts:
            raise ConfigError(f"user {k}: rate list must be non-empty")
        row = []
        for j, p in enumerate(pts):
            if not isinstance(p, dict) or "rate" not in p or "dist" not in p:
                raise ConfigError(f"user {k}, rate {j}: need 'rate' and 'dist'")
            row.append(RatePoint(float(p["rate"]), InputDistribution(p["dist"])))
        out.append(tuple(row))
    return RateProfile(tuple(out))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    base = path.parent
    if "channel" not in raw:
        raise ConfigError("missing 'channel'")
    ch_path = base / raw["channel"]
    if not ch_path.is_file():
        raise ConfigError(f"channel file not found: {ch_path}")
    try:
        channel = load_channel(ch_path)
    except ValueError as exc:
        raise ConfigError(f"{ch_path}: {exc}") from None
    users = raw.get("users")
    if isinstance(users, str):
        u_path = base / users
        if not u_path.is_file():
            raise ConfigError(f"rate profile file not found: {u_path}")
        try:
            users = json.loads(u_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{u_path}: invalid JSON: {exc}") from None
    try:
        profile = _parse_profile(users)
        profile.check_channel(channel)
        region_raw = raw.get("region")
        if not isinstance(region_raw, list) or not region_raw:
            raise ConfigError("'region' must be a non-empty list of rate-index vectors")
        region = OperationRegion(frozenset(tuple(v) if isinstance(v, list) else (v,) for v in region_raw))
        region.validate(profile)
        optimizer = OptimizerConfig(**raw.get("optimizer", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(path, channel, profile, region, optimizer, raw)


# --- output ---------------------------------------------------------------


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "%.17g" % v
    return v


def render(columns: list[str], rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        payload = {"columns": columns, "rows": [{c: _json_value(r[c]) for c in columns} for r in rows]}
        return json.dumps(payload, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r[c]) for c in columns])
    return buf.getvalue()


def write_output(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    target = Path(out)
    fd, tmp = tempfile.mkstemp(dir=target.parent or ".", prefix=".raxcode-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _vec(v) -> str:
    return "(" + ",".join(str(i) for i in v) + ")"


def _subset(s) -> str:
    return "{" + ",".join(str(k) for k in s) + "}"


# --- commands -------------------------------------------------------------


def cmd_region(cfg: ExperimentConfig, args) -> tuple[list, list]:
    cols = ["vector", "rates", "in_region", "achievable", "violated_subsets"]
    rows = []
    for v in cfg.profile.all_vectors():
        ok, violations = region_is_achievable(cfg.channel, cfg.profile, OperationRegion.of(v))
        rows.append({
            "vector": _vec(v),
            "rates": _vec(cfg.profile.rates(v)),
            "in_region": v in cfg.region,
            "achievable": ok,
            "violated_subsets": ";".join(_subset(x.subset) for x in violations),
        })
    return cols, rows


def _exponent_rows(cfg: ExperimentConfig, cache: ExponentCache) -> list[dict]:
    ch, rp, region = cfg.channel, cfg.profile, cfg.region
    inside, outside = region.inside(), region.outside(rp)
    rows = []

    def row(kind, S, a, b, res):
        return {"kind": kind, "subset": _subset(S), "first": _vec(a), "second": _vec(b),
                "value": res.value, "rho_star": res.rho_star, "s_star": res.s_star}

    subsets = proper_subsets(ch.num_users)
    for S in subsets:
        for r in inside:
            for rt in inside:
                if all(r[k] == rt[k] for k in S):
                    rows.append(row("Em", S, r, rt, cache.em(S, r, rt)))
    for S in subsets:
        for r in inside:
            for rt in outside:
                if all(r[k] == rt[k] for k in S):
                    rows.append(row("Ei", S, r, rt, cache.ei(S, r, rt)))
    lower = es_lower_single if ch.num_users == 1 else es_lower_multi
    value, w = lower(ch, rp, region, cfg.optimizer, cache)
    rows.append({"kind": "Es_lower", "subset": _subset(w.subset), "first": _vec(w.first),
                 "second": _vec(w.second), "value": value, "rho_star": w.result.rho_star,
                 "s_star": w.result.s_star})
    return rows


def cmd_exponent(cfg: ExperimentConfig, args) -> tuple[list, list]:
    cols = ["kind", "subset", "first", "second", "value", "rho_star", "s_star"]
    cache = ExponentCache(cfg.channel, cfg.profile, cfg.optimizer)
    return cols, _exponent_rows(cfg, cache)


def _bound_terms(cfg: ExperimentConfig, profile: RateProfile, cache: ExponentCache | None):
    grid = cfg.raw.get("grid")
    if grid is not None:
        try:
            spec = GridSpec(tuple(grid["edges"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad 'grid': {exc}") from None
        reduce = grid.get("reduce", "max")
        try:
            return "standard", bound_terms_standard(cfg.channel, spec, profile, cfg.region, cfg.optimizer, reduce)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if cfg.channel.num_users == 1:
        return "single", bound_terms_single(cfg.channel, profile, cfg.region, cfg.optimizer, cache)
    return "multi", bound_terms_multi(cfg.channel, profile, cfg.region, cfg.optimizer, cache)


BOUND_COLUMNS = ["n", "bound", "log_p_es_upper", "p_es_upper", "trivial", "dominant_branch",
                 "log_decode_branch", "log_collision_branch", "collision_vacuous"]


def _bound_row(n, kind, terms) -> dict:
    b = assemble(n, terms)
    vals = b.branch_log_values()
    return {
        "n": n,
        "bound": kind,
        "log_p_es_upper": b.log_p_es_upper,
        "p_es_upper": b.p_es_upper,
        "trivial": b.trivial,
        "dominant_branch": b.dominant_branch.value,
        "log_decode_branch": vals[Branch.DECODE],
        "log_collision_branch": vals[Branch.COLLISION],
        "collision_vacuous": not any(t.branch == Branch.COLLISION for t in terms),
    }


def cmd_bound(cfg: ExperimentConfig, args) -> tuple[list, list]:
    ns = cfg.n_list("bound")
    cache = ExponentCache(cfg.channel, cfg.profile, cfg.optimizer)
    kind, terms = _bound_terms(cfg, cfg.profile, cache)
    return BOUND_COLUMNS, [_bound_row(n, kind, terms) for n in ns]


def cmd_simulate(cfg: ExperimentConfig, args) -> tuple[list, list]:
    sim = cfg.section("simulation")
    ns = cfg.n_list("simulation")
    trials = sim.get("trials", 1000)
    if not isinstance(trials, int) or trials < 1:
        raise ConfigError("'simulation.trials' must be a positive integer")
    seed = args.seed if args.seed is not None else sim.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    offset = float(sim.get("offset", 0.0))
    budget = float(sim.get("budget", 5e7))
    rp, region = cfg.profile, cfg.region
    conds = sim.get("conditions")
    try:
        conditions = ([tuple(c) if isinstance(c, list) else (c,) for c in conds] if conds is not None
                      else region.inside() + region.outside(rp))
        OperationRegion(frozenset(conditions)).validate(rp)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad 'simulation.conditions': {exc}") from None

    cache = ExponentCache(cfg.channel, rp, cfg.optimizer)
    table = ThresholdTable.from_exponents(cfg.channel, rp, region, cfg.optimizer, offset, cache)
    if cfg.channel.num_users == 1:
        terms = bound_terms_single(cfg.channel, rp, region, cfg.optimizer, cache)
    else:
        terms = bound_terms_multi(cfg.channel, rp, region, cfg.optimizer, cache)
    cols = ["n", "condition", "in_region", "trials", "errors", "decode_error_freq", "miss_detect_freq",
            "wilson_radius_95", "log_p_es_upper", "p_es_upper", "within_bound"]
    rows = []
    for n in ns:
        bound = assemble(n, terms)
        for c in conditions:
            spec = CodebookSpec.for_condition(n, rp, region, c, seed=seed)
            out = run_trials(cfg.channel, spec, region, table, c, trials, seed, threads=args.threads,
                             budget=budget)
            rows.append({
                "n": n,
                "condition": _vec(c),
                "in_region": out.in_region,
                "trials": out.trials,
                "errors": out.errors,
                "decode_error_freq": out.decode_error_freq,
                "miss_detect_freq": out.miss_detect_freq,
                "wilson_radius_95": out.wilson_radius_95,
                "log_p_es_upper": bound.log_p_es_upper,
                "p_es_upper": bound.p_es_upper,
                "within_bound": out.error_freq <= bound.p_es_upper + 3 * out.wilson_radius_95,
            })
    return cols, rows


def cmd_sweep(cfg: ExperimentConfig, args) -> tuple[list, list]:
    sw = cfg.section("sweep")
    ns = cfg.n_list("bound")
    try:
        user, index = int(sw["user"]), int(sw["index"])
        rates = [float(r) for r in sw["rates"]]
        pts = cfg.profile.users[user]
        pts[index]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"bad 'sweep' section: {exc!r}") from None
    if not rates:
        raise ConfigError("'sweep.rates' must be non-empty")
    cols = ["rate", "n", "es_lower", "log_p_es_upper", "p_es_upper", "trivial"]
    rows = []
    lower = es_lower_single if cfg.channel.num_users == 1 else es_lower_multi
    for rate in rates:
        users = list(cfg.profile.users)
        row = list(users[user])
        row[index] = RatePoint(rate, row[index].dist)
        users[user] = tuple(row)
        try:
            profile = RateProfile(tuple(users))
        except ValueError as exc:
            raise ConfigError(f"sweep rate {rate}: {exc}") from None
        cache = ExponentCache(cfg.channel, profile, cfg.optimizer)
        es, _ = lower(cfg.channel, profile, cfg.region, cfg.optimizer, cache)
        kind, terms = _bound_terms(cfg, profile, cache)
        for n in ns:
            b = assemble(n, terms)
            rows.append({"rate": rate, "n": n, "es_lower": es, "log_p_es_upper": b.log_p_es_upper,
                         "p_es_upper": b.p_es_upper, "trivial": b.trivial})
    return cols, rows


COMMANDS = {
    "region": cmd_region,
    "exponent": cmd_exponent,
    "bound": cmd_bound,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="raxcode", description="Random access coding bounds, exponents and simulation.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--seed", type=int, default=None, help="override the simulation seed")
    p.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config)
        fmt = args.format or cfg.raw.get("format", "csv")
        if fmt not in ("csv", "json"):
            raise ConfigError(f"unknown output format {fmt!r}")
        cols, rows = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"raxcode: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"raxcode: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    write_output(render(cols, rows, fmt), args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
