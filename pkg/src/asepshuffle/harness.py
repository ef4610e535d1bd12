"""Reproducible experiment runner: config parsing, replica fan-out, result
files and summaries.

A run writes three files into its output directory: ``config.txt`` (the
config text as given), ``results.csv`` (one row per replica or statistic,
headed by ``#schema=1``) and ``manifest.json``.  The manifest is written
last and marks the directory as complete; directories without it are
ignored by :func:`summarize`.

Replica ``r`` uses the seed ``derive_seed(master_seed, r)`` at every
parameter point, so points share their random numbers and a replica set can
be extended without changing existing rows.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
from scipy import stats

from .configs import ParameterError, canonical_states
from .coupling import card_coalescence_time, default_cap
from .measures import (
    BlockingOracle,
    BlockingParams,
    blocking_sampler,
    point_mass_sampler,
    psi_tail_right,
    sample_blocking,
    sample_blocking_batch,
    stationarity_check,
)
from .observables import (
    SigmaRun,
    card_state_law,
    drift_estimate,
    event_report,
    geometric_gof,
    hitting_time,
    left_gaps,
    margin_for,
    run_beta,
    run_sigma,
    wilson,
)
from .oracle import (
    build_generator,
    card_weights,
    exact_mixing_time,
    spectral_gap,
    stationary_distribution,
    transition_matrix,
)
from .streams import derive_seed, sampler_rng

SCHEMA_VERSION = 1
CODE_VERSION = "0.1.0"
OUTPUT_ENV = "ASEPSHUFFLE_OUTPUT_ROOT"
MANIFEST = "manifest.json"
RESULTS = "results.csv"
CONFIG_COPY = "config.txt"

TAGS = (
    "mixing-scaling",
    "hitting-tail",
    "drift",
    "blocking-stationarity",
    "proof-events",
    "exact-crosscheck",
    "couple-distance",
)


class ConfigError(ValueError):
    """Invalid experiment config; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


class SchemaError(ValueError):
    """A result file does not match its schema."""


# ---------------------------------------------------------------- config

# key -> (kind, default); kinds: int, float, str, ints, floats
_SECTIONS: dict[str, dict[str, tuple[str, Any]]] = {
    "experiment": {
        "tag": ("str", None),
        "reps": ("int", None),
        "master_seed": ("int", None),
        "cap": ("str", "default"),
        "parallelism": ("int", None),
        "name": ("str", None),
    },
    "params": {
        "N": ("ints", None),
        "k": ("int", None),
        "p": ("floats", None),
        "C": ("float", None),
        "D": ("float", None),
        "t": ("floats", None),
        "l": ("int", 0),
        "t0": ("float", 50.0),
        "family": ("str", None),
        "n_grid": ("ints", None),
        "margin": ("int", None),
        "chain": ("str", "cards"),
        "alpha": ("float", 0.01),
        "top_k": ("int", 10),
        "gap_count": ("int", 31),
        "tail_n": ("ints", None),
        "tail_reps": ("int", None),
    },
    "thresholds": {
        "ratio_lo": ("float", 1.5),
        "ratio_hi": ("float", 2.6),
        "slope_lo": ("float", 0.8),
        "slope_hi": ("float", 1.3),
        "abs_tol": ("float", 0.02),
        "se_mult": ("float", 3.0),
        "var_factor": ("float", 6.0),
        "r2_min": ("float", 0.9),
        "growth_factor": ("float", 2.0),
        "tv_tol": ("float", 0.01),
        "ratio_rel_tol": ("float", 0.05),
        "weight_tol": ("float", 1e-8),
        "tail_ratio_lo": ("float", 2.0),
        "tail_ratio_hi": ("float", 4.5),
    },
    "output": {
        "root": ("str", "results"),
    },
}

_REQUIRED = {
    "mixing-scaling": ("N", "p"),
    "hitting-tail": ("family", "p"),
    "drift": ("p", "t"),
    "blocking-stationarity": ("p", "t"),
    "proof-events": ("C", "N", "p"),
    "exact-crosscheck": ("N", "p"),
    "couple-distance": ("p", "t", "n_grid"),
}


@dataclass
class ExperimentConfig:
    """A validated experiment description.

    ``params`` and ``thresholds`` hold every key of their section with
    defaults filled in; ``text`` is the source the config was parsed from.
    """

    tag: str
    reps: int
    master_seed: int
    params: dict
    thresholds: dict
    cap: Optional[float] = None
    parallelism: int = 1
    name: str = ""
    output_root: str = "results"
    text: str = ""

    def config_hash(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def output_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ENV) or self.output_root
        return Path(root) / (self.name or self.tag)


def _convert(kind: str, raw: str):
    if kind == "str":
        if not raw:
            raise ValueError("empty value")
        return raw
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(Fraction(raw))
    items = [x.strip() for x in raw.split(",") if x.strip()]
    if not items:
        raise ValueError("empty list")
    if kind == "ints":
        out = []
        for x in items:
            # a..b expands to the inclusive integer range
            m = re.fullmatch(r"(-?\d+)\s*\.\.\s*(-?\d+)", x)
            out.extend(range(int(m[1]), int(m[2]) + 1) if m else [int(x)])
        return out
    return [float(Fraction(x)) for x in items]


def _check_ranges(tag: str, params: dict, th: dict, reps: int, errors: list[str], where: dict):
    def bad(key, msg):
        loc = f"line {where[key]}: " if key in where else ""
        errors.append(f"{loc}key '{key}': {msg}")

    if reps < 0:
        bad("reps", f"value {reps} out of range (must be >= 0)")
    for p in params.get("p") or []:
        if not 0.0 < p < 1.0:
            bad("p", f"value {p} out of range (0, 1)")
    for N in params.get("N") or []:
        if N < 2:
            bad("N", f"value {N} out of range (must be >= 2)")
    for t in params.get("t") or []:
        if t < 0:
            bad("t", f"value {t} out of range (must be >= 0)")
    if params.get("k") is not None and params["k"] < 1:
        bad("k", f"value {params['k']} out of range (must be >= 1)")
    if params.get("C") is not None and params["C"] <= 0:
        bad("C", f"value {params['C']} out of range (must be > 0)")
    if params.get("D") is not None and params["D"] <= 0:
        bad("D", f"value {params['D']} out of range (must be > 0)")
    if not 0.0 < params["alpha"] < 1.0:
        bad("alpha", f"value {params['alpha']} out of range (0, 1)")
    if params.get("family") not in (None, "I_N", "blocking"):
        bad("family", f"value {params['family']!r} not one of I_N, blocking")
    if params["chain"] not in ("cards", "exclusion"):
        bad("chain", f"value {params['chain']!r} not one of cards, exclusion")
    if tag in ("hitting-tail", "proof-events", "drift", "couple-distance"):
        for p in params.get("p") or []:
            if p <= 0.5:
                bad("p", f"value {p} out of range ({tag} needs p > 1/2)")
    if tag == "hitting-tail":
        if params.get("family") == "I_N" and not params.get("N"):
            bad("N", "missing required field (family I_N)")
        if params.get("family") == "I_N" and params.get("D") is None and not params.get("t"):
            bad("D", "missing required field (family I_N needs D or t)")
        if params.get("family") == "blocking" and not params.get("t"):
            bad("t", "missing required field (family blocking)")
    if tag == "exact-crosscheck" and params["chain"] == "exclusion" and params.get("k") is None:
        bad("k", "missing required field (chain exclusion)")
    if th["ratio_lo"] > th["ratio_hi"]:
        bad("ratio_lo", "exceeds ratio_hi")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate sectioned ``key = value`` text.

    Sections are ``[experiment]``, ``[params]``, ``[thresholds]`` and
    ``[output]``; ``#`` starts a comment.  Lists are comma separated and
    integer lists accept ``a..b`` ranges; floats accept fractions such as
    ``2/3``.  Every problem is collected and raised together as a
    :class:`ConfigError`.
    """
    errors: list[str] = []
    values: dict[str, dict[str, Any]] = {s: {} for s in _SECTIONS}
    where: dict[str, int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[\s*([\w-]+)\s*\]", line)
        if m:
            section = m[1]
            if section not in _SECTIONS:
                errors.append(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected key = value")
            continue
        key, raw = (x.strip() for x in line.split("=", 1))
        if section is None:
            errors.append(f"line {lineno}: key '{key}' outside any section")
            continue
        if section not in _SECTIONS:
            continue
        schema = _SECTIONS[section]
        if key not in schema:
            errors.append(f"line {lineno}: unknown key '{key}' in [{section}]")
            continue
        qual = f"{section}.{key}"
        if qual in where:
            errors.append(f"duplicate key '{key}' in [{section}] at lines {where[qual]} and {lineno}")
            continue
        where[qual] = lineno
        where[key] = lineno
        try:
            values[section][key] = _convert(schema[key][0], raw)
        except (ValueError, ZeroDivisionError) as exc:
            errors.append(f"line {lineno}: key '{key}': cannot parse {raw!r} ({exc})")

    exp = values["experiment"]
    for key in ("tag", "reps", "master_seed"):
        if key not in exp and f"experiment.{key}" not in where:
            errors.append(f"missing required field '{key}' in [experiment]")
    tag = exp.get("tag")
    if tag is not None and tag not in TAGS:
        errors.append(f"line {where['tag']}: key 'tag': unknown experiment {tag!r}")
        tag = None
    filled = {}
    for sec in ("params", "thresholds"):
        filled[sec] = {k: values[sec].get(k, d) for k, (_, d) in _SECTIONS[sec].items()}
    params, th = filled["params"], filled["thresholds"]
    if tag is not None:
        for key in _REQUIRED[tag]:
            if params.get(key) is None and f"params.{key}" not in where:
                errors.append(f"missing required field '{key}' in [params] for {tag}")
    reps = exp.get("reps", 0)
    if tag is not None:
        _check_ranges(tag, params, th, reps, errors, where)
    seed = exp.get("master_seed", 0)
    if not 0 <= seed < 2 ** 64:
        errors.append(f"line {where.get('master_seed', '?')}: key 'master_seed': value out of range [0, 2^64)")
    cap = None
    raw_cap = exp.get("cap", "default")
    if raw_cap != "default":
        try:
            cap = float(raw_cap)
            if cap <= 0:
                raise ValueError
        except ValueError:
            errors.append(f"line {where.get('cap', '?')}: key 'cap': expected 'default' or a positive number")
    par = exp.get("parallelism") or os.cpu_count() or 1
    if par < 1:
        errors.append(f"line {where['parallelism']}: key 'parallelism': value {par} out of range (>= 1)")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        tag=tag, reps=reps, master_seed=seed, params=params, thresholds=th, cap=cap,
        parallelism=par, name=exp.get("name") or "", output_root=values["output"].get("root", "results"),
        text=text,
    )


# ---------------------------------------------------------------- schemas

_COLUMNS: dict[str, list[tuple[str, str]]] = {
    "mixing-scaling": [("N", "int"), ("p", "float"), ("replica", "int"), ("seed", "int"),
                       ("coalesce_time", "float"), ("meet_time", "optfloat"), ("censored", "bool")],
    "hitting-tail": [("family", "str"), ("N", "int"), ("p", "float"), ("replica", "int"),
                     ("seed", "int"), ("value", "float"), ("censored", "bool")],
    "drift": [("p", "float"), ("t", "float"), ("replica", "int"), ("seed", "int"),
              ("x_prime", "int"), ("x", "int"), ("valid", "bool")],
    "blocking-stationarity": [("case", "str"), ("statistic", "str"), ("n", "int"),
                              ("value", "float"), ("level", "float"), ("passed", "bool")],
    "proof-events": [("C", "float"), ("N", "int"), ("p", "float"), ("replica", "int"),
                     ("seed", "int"), ("hit_time", "float"), ("L_t1", "int"), ("L_min", "int"),
                     ("rank_max", "int"), ("a3", "bool"), ("valid", "bool")],
    "exact-crosscheck": [("chain", "str"), ("N", "int"), ("k", "int"), ("p", "float"),
                         ("quantity", "str"), ("label", "str"), ("value", "float"),
                         ("reference", "float"), ("tol", "float")],
    "couple-distance": [("p", "float"), ("t", "float"), ("replica", "int"), ("seed", "int"),
                        ("distance", "int"), ("gaps", "str"), ("valid", "bool")],
}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse_cell(kind: str, raw: str):
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "optfloat":
        return None if raw == "" else float(raw)
    if kind == "bool":
        if raw not in ("0", "1"):
            raise ValueError(f"expected 0 or 1, got {raw!r}")
        return raw == "1"
    return raw


def write_rows(tag: str, rows: list[dict]) -> str:
    """CSV text for ``rows`` under the schema of ``tag``."""
    cols = [c for c, _ in _COLUMNS[tag]]
    buf = io.StringIO()
    buf.write(f"#schema={SCHEMA_VERSION}\n#experiment={tag}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in cols])
    return buf.getvalue()


def read_rows(path: Path | str) -> tuple[str, list[dict]]:
    """Parse a results CSV, raising :class:`SchemaError` with the line
    number of the first malformed line."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != f"#schema={SCHEMA_VERSION}":
        raise SchemaError(f"{path}: line 1: expected '#schema={SCHEMA_VERSION}'")
    m = re.fullmatch(r"#experiment=([\w-]+)", lines[1].strip()) if len(lines) > 1 else None
    if m is None or m[1] not in _COLUMNS:
        raise SchemaError(f"{path}: line 2: expected '#experiment=<tag>'")
    tag = m[1]
    schema = _COLUMNS[tag]
    cols = [c for c, _ in schema]
    rows = []
    reader = csv.reader(lines[2:])
    for offset, cells in enumerate(reader):
        lineno = offset + 3
        if offset == 0:
            if cells != cols:
                raise SchemaError(f"{path}: line {lineno}: header does not match schema for {tag}")
            continue
        if len(cells) != len(schema):
            raise SchemaError(f"{path}: line {lineno}: expected {len(schema)} fields, got {len(cells)}")
        try:
            rows.append({c: _parse_cell(k, v) for (c, k), v in zip(schema, cells)})
        except ValueError as exc:
            raise SchemaError(f"{path}: line {lineno}: {exc}") from None
    return tag, rows


# ---------------------------------------------------------------- replicas


def _cap_for(cfg_cap, N, p):
    return default_cap(N, p) if cfg_cap is None else cfg_cap


def _replica(task: tuple) -> dict:
    """One replica row; ``task = (tag, point, replica, seed, cap, params)``."""
    tag, point, r, seed, cap, params = task
    if tag == "mixing-scaling":
        N, p = point
        rec = card_coalescence_time(N, p, seed, _cap_for(cap, N, p))
        return dict(N=N, p=p, replica=r, seed=seed, coalesce_time=rec.coalesce_time,
                    meet_time=rec.meet_time, censored=rec.censored)
    if tag == "hitting-tail":
        family, N, p, horizon = point
        if family == "I_N":
            start = canonical_states("I_N", N)
        else:
            start = sample_blocking(BlockingParams(p), sampler_rng(seed))
        h = hitting_time(start, p, seed, horizon)
        return dict(family=family, N=N, p=p, replica=r, seed=seed, value=h.value, censored=h.censored)
    if tag == "drift":
        p, t = point
        run = run_beta(p, t, seed, params.get("margin"))
        return dict(p=p, t=t, replica=r, seed=seed, x_prime=run.x_prime, x=run.x, valid=run.valid)
    if tag == "proof-events":
        C, N, p = point
        run = run_sigma(C, N, p, seed, params.get("margin"))
        return dict(C=C, N=N, p=p, replica=r, seed=seed, hit_time=run.hit_time, L_t1=run.L_t1,
                    L_min=run.L_min, rank_max=run.rank_max, a3=run.a3, valid=run.valid)
    if tag == "couple-distance":
        p, t = point
        count = params["gap_count"]
        margin = params.get("margin") or margin_for(t) + 4 * count
        run = run_beta(p, t, seed, margin)
        gaps = ";".join(str(int(g)) for g in left_gaps(run.state, count))
        return dict(p=p, t=t, replica=r, seed=seed, distance=abs(run.x - run.x_prime),
                    gaps=gaps, valid=run.valid)
    raise ParameterError(f"no replica runner for {tag!r}")


def _points(cfg: ExperimentConfig) -> list[tuple]:
    P = cfg.params
    if cfg.tag == "mixing-scaling":
        return [(N, p) for p in P["p"] for N in P["N"]]
    if cfg.tag == "hitting-tail":
        if P["family"] == "I_N":
            out = []
            for p in P["p"]:
                for N in P["N"]:
                    horizon = _cap_for(cfg.cap, N, p)
                    if P.get("t"):
                        horizon = max(horizon, max(P["t"]))
                    out.append(("I_N", N, p, horizon))
            return out
        horizon = cfg.cap if cfg.cap is not None else max(P["t"])
        return [("blocking", 0, p, horizon) for p in P["p"]]
    if cfg.tag in ("drift", "couple-distance"):
        return [(p, P["t"][0]) for p in P["p"]]
    if cfg.tag == "proof-events":
        return [(P["C"], N, p) for p in P["p"] for N in P["N"]]
    return []


def _run_replicas(cfg: ExperimentConfig, seeds: list[int]) -> list[dict]:
    tasks = [(cfg.tag, pt, r, seeds[r], cfg.cap, cfg.params)
             for pt in _points(cfg) for r in range(cfg.reps)]
    if cfg.parallelism > 1 and len(tasks) > 1:
        # map preserves task order, so output bytes do not depend on workers
        with ProcessPoolExecutor(max_workers=cfg.parallelism) as pool:
            return list(pool.map(_replica, tasks, chunksize=max(1, len(tasks) // (8 * cfg.parallelism))))
    return [_replica(t) for t in tasks]


def _stationarity_rows(cfg: ExperimentConfig) -> list[dict]:
    P = cfg.params
    rows = []
    if cfg.reps == 0:
        return rows
    t = P["t"][0]
    for p in P["p"]:
        params = BlockingParams(p)
        oracle = BlockingOracle(params)
        atoms = [a for a, _ in oracle.top_atoms(P["top_k"])]
        for case, sampler in (("psi", blocking_sampler(params)),
                              ("control", point_mass_sampler(canonical_states("I_N", 1)))):
            rep = stationarity_check(sampler, case, t, cfg.reps, p, seed=cfg.master_seed,
                                     alpha=P["alpha"], top_k=P["top_k"], atoms=atoms)
            level = P["alpha"] / len(rep.tests)
            for st in rep.tests:
                rows.append(dict(case=f"{case}@p={p!r}", statistic=st.statistic, n=st.n,
                                 value=st.p_value, level=level, passed=st.passed))
        if P.get("tail_n"):
            n_tail = P.get("tail_reps") or cfg.reps
            batch = sample_blocking_batch(params, n_tail, sampler_rng(derive_seed(cfg.master_seed, 0)))
            for n in P["tail_n"]:
                rows.append(dict(case=f"tail@p={p!r}", statistic=f"n={n}", n=n_tail,
                                 value=psi_tail_right(batch.values, batch.lo, n),
                                 level=oracle.tail_right(n), passed=True))
    return rows


def _crosscheck_rows(cfg: ExperimentConfig) -> list[dict]:
    P = cfg.params
    th = cfg.thresholds
    rows = []
    chain = P["chain"]
    for N in P["N"]:
        for p in P["p"]:
            k = P["k"] if chain == "exclusion" else 0

            def add(quantity, label, value, reference, tol):
                rows.append(dict(chain=chain, N=N, k=k, p=p, quantity=quantity, label=label,
                                 value=value, reference=reference, tol=tol))

            if chain == "exclusion":
                space, gen = build_generator("exclusion", N=N, k=k, p=p)
                pi = stationary_distribution(gen)
                theta = (1 - p) / p
                w = np.array([theta ** _zero_one_pairs(s.bits) for s in space.states])
                w /= w.sum()
                for s, a, b in zip(space.states, pi, w):
                    add("stationary", "".join(map(str, s.bits)), a, b, th["weight_tol"])
                add("spectral_gap", "", spectral_gap(gen, pi), float("nan"), float("nan"))
                continue
            space, gen = build_generator("cards", N=N, p=p)
            pi = stationary_distribution(gen)
            w = card_weights(space, p)
            for s, a, b in zip(space.states, pi, w):
                add("stationary", "".join(map(str, s)), a, b, th["weight_tol"])
            tau = exact_mixing_time(gen)
            _, dgen = build_generator("cards_discrete", N=N, p=p)
            tau_d = exact_mixing_time(dgen)
            add("tau1_ratio", f"{tau_d!r}/{tau!r}", tau_d / tau, N - 1.0, th["ratio_rel_tol"] * (N - 1))
            if cfg.reps > 0:
                i = len(space.states) - 1
                row = transition_matrix(gen, tau)[0][i]
                emp = card_state_law(space.states[i], p, tau, cfg.reps, space.states,
                                     seed=cfg.master_seed)
                add("tv_at_tau1", "".join(map(str, space.states[i])),
                    0.5 * float(np.abs(emp - row).sum()), 0.0, th["tv_tol"])
    return rows


def _zero_one_pairs(bits) -> int:
    # pairs (0 left of 1); each costs a factor theta in the stationary law
    zeros = 0
    n = 0
    for b in bits:
        if b == 0:
            zeros += 1
        else:
            n += zeros
    return n


# ---------------------------------------------------------------- summaries


@dataclass
class SummaryRow:
    experiment: str
    point: str
    quantity: str
    estimate: float
    ci_lo: float
    ci_hi: float
    threshold: str
    verdict: str


def _t_ci(x: np.ndarray) -> tuple[float, float, float]:
    n = len(x)
    m = float(np.mean(x))
    if n < 2:
        return m, float("nan"), float("nan")
    h = float(stats.t.ppf(0.975, n - 1) * np.std(x, ddof=1) / math.sqrt(n))
    return m, m - h, m + h


def _verdict(ok: bool) -> str:
    return "pass" if ok else "fail"


def _group(rows, keys):
    out: dict[tuple, list] = {}
    for r in rows:
        out.setdefault(tuple(r[k] for k in keys), []).append(r)
    return out


def _sum_mixing(rows, cfg):
    th = cfg.thresholds
    out = []
    for (p,), prow in _group(rows, ("p",)).items():
        by_n = _group(prow, ("N",))
        Ns = sorted(n for (n,) in by_n)
        means, ses = [], []
        for N in Ns:
            x = np.array([r["coalesce_time"] for r in by_n[(N,)]])
            cens = sum(r["censored"] for r in by_n[(N,)])
            m, lo, hi = _t_ci(x)
            means.append(m)
            ses.append(float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else float("nan"))
            out.append(SummaryRow("mixing-scaling", f"N={N} p={p}", "mean_coalescence", m, lo, hi,
                                  f"censored={cens}", "info"))
        for a, b in zip(range(len(Ns)), range(1, len(Ns))):
            r = means[b] / means[a]
            se = r * math.hypot(ses[a] / means[a], ses[b] / means[b])
            out.append(SummaryRow("mixing-scaling", f"N={Ns[a]}->{Ns[b]} p={p}", "ratio", r,
                                  r - 1.96 * se, r + 1.96 * se,
                                  f"[{th['ratio_lo']}, {th['ratio_hi']}]",
                                  _verdict(th["ratio_lo"] <= r <= th["ratio_hi"])))
        if len(Ns) >= 2:
            fit = stats.linregress(np.log(Ns), np.log(means))
            out.append(SummaryRow("mixing-scaling", f"p={p}", "loglog_slope", float(fit.slope),
                                  float(fit.slope - 1.96 * fit.stderr), float(fit.slope + 1.96 * fit.stderr),
                                  f"[{th['slope_lo']}, {th['slope_hi']}]",
                                  _verdict(th["slope_lo"] <= fit.slope <= th["slope_hi"])))
    return out


def _survival_fit(vals, cens, grid):
    n = len(vals)
    surv = np.array([np.sum((vals > t) | (cens & (vals >= t))) / n for t in grid])
    ok = surv > 0
    if ok.sum() < 2:
        return surv, float("nan"), float("nan")
    fit = stats.linregress(np.sqrt(grid[ok]), -np.log(surv[ok]))
    return surv, float(fit.slope), float(fit.rvalue ** 2)


def _sum_hitting(rows, cfg):
    P = cfg.params
    th = cfg.thresholds
    out = []
    for (family, p), prow in _group(rows, ("family", "p")).items():
        if family == "I_N" and P.get("D") is not None:
            D = P["D"]
            base = None
            for (N,), nrow in sorted(_group(prow, ("N",)).items()):
                vals = np.array([r["value"] for r in nrow])
                n = len(vals)
                k = int(np.sum(vals > D * N))
                lo, hi = wilson(k, n)
                est = N * k / n
                if base is None:
                    base = est
                    out.append(SummaryRow("hitting-tail", f"N={N} p={p} D={D}", "N*exceedance", est,
                                          N * lo, N * hi, "reference", "info"))
                else:
                    lim = th["growth_factor"] * base
                    out.append(SummaryRow("hitting-tail", f"N={N} p={p} D={D}", "N*exceedance", est,
                                          N * lo, N * hi, f"<= {lim!r}", _verdict(est <= lim)))
        if P.get("t"):
            grid = np.array(sorted(P["t"]), float)
            for (N,), nrow in sorted(_group(prow, ("N",)).items()):
                vals = np.array([r["value"] for r in nrow])
                cens = np.array([r["censored"] for r in nrow])
                _, slope, r2 = _survival_fit(vals, cens, grid)
                label = f"{family} N={N} p={p}" if family == "I_N" else f"{family} p={p}"
                out.append(SummaryRow("hitting-tail", label, "sqrt_t_slope", slope, float("nan"),
                                      float("nan"), "> 0", _verdict(slope > 0)))
                out.append(SummaryRow("hitting-tail", label, "sqrt_t_r2", r2, float("nan"), float("nan"),
                                      f"> {th['r2_min']}", _verdict(r2 > th["r2_min"])))
    return out


def _sum_drift(rows, cfg):
    th = cfg.thresholds
    out = []
    for (p, t), prow in _group(rows, ("p", "t")).items():
        bad = sum(not r["valid"] for r in prow)
        x = np.array([r["x_prime"] for r in prow if r["valid"]], float)
        if len(x) < 2:
            continue
        est = drift_estimate(x, t, bad, {})
        target = -0.5 * (2 * p - 1)
        tol = max(th["abs_tol"], th["se_mult"] * est.se_mean)
        pt = f"p={p} t={t}"
        out.append(SummaryRow("drift", pt, "mean_over_t", est.mean_over_t,
                              est.mean_over_t - 1.96 * est.se_mean, est.mean_over_t + 1.96 * est.se_mean,
                              f"{target:.4g} +- {tol:.4g}", _verdict(abs(est.mean_over_t - target) <= tol)))
        vlim = th["var_factor"] / (2 * p - 1) + th["se_mult"] * est.se_var
        out.append(SummaryRow("drift", pt, "var_over_t", est.var_over_t,
                              est.var_over_t - 1.96 * est.se_var, est.var_over_t + 1.96 * est.se_var,
                              f"<= {vlim:.4g}", _verdict(est.var_over_t <= vlim)))
        out.append(SummaryRow("drift", pt, "invalid_fraction", bad / len(prow), float("nan"), float("nan"),
                              "<= 0.01", _verdict(bad <= 0.01 * len(prow))))
    return out


def _sum_stationarity(rows, cfg):
    th = cfg.thresholds
    out = []
    for (case,), crow in _group(rows, ("case",)).items():
        kind = case.split("@")[0]
        pt = case.split("@")[1]
        if kind == "tail":
            crow = sorted(crow, key=lambda r: int(r["statistic"][2:]))
            for a, b in zip(crow, crow[1:]):
                r = a["value"] / b["value"] if b["value"] > 0 else float("inf")
                n = a["n"]
                se = r * math.sqrt((1 - a["value"]) / max(a["value"] * n, 1e-300)
                                   + (1 - b["value"]) / max(b["value"] * n, 1e-300))
                out.append(SummaryRow("blocking-stationarity", f"{pt} {a['statistic']}->{b['statistic']}",
                                      "tail_ratio", r, r - 1.96 * se, r + 1.96 * se,
                                      f"[{th['tail_ratio_lo']}, {th['tail_ratio_hi']}]",
                                      _verdict(th["tail_ratio_lo"] <= r <= th["tail_ratio_hi"])))
            continue
        pmin = min(r["value"] for r in crow)
        level = crow[0]["level"]
        all_pass = all(r["passed"] for r in crow)
        if kind == "psi":
            out.append(SummaryRow("blocking-stationarity", pt, "min_pvalue", pmin, float("nan"), float("nan"),
                                  f">= {level:.3g} (all {len(crow)} tests)", _verdict(all_pass)))
        else:
            out.append(SummaryRow("blocking-stationarity", pt, "control_min_pvalue", pmin, float("nan"),
                                  float("nan"), f"< {level:.3g} (control must fail)", _verdict(not all_pass)))
    return out


def _sum_events(rows, cfg):
    out = []
    for (C, N, p), prow in _group(rows, ("C", "N", "p")).items():
        runs = [SigmaRun(r["hit_time"], r["L_t1"], r["L_min"], r["rank_max"], r["a3"], r["valid"])
                for r in prow]
        rep = event_report(runs, C, N, p)
        bound = rep.implied_bound - 3 * rep.sigma
        lo, hi = rep.ci["hit"]
        out.append(SummaryRow("proof-events", f"C={C} N={N} p={p}", "P(hit<=(C+1)N)", rep.p_hit, lo, hi,
                              f">= {bound:.4g}", _verdict(rep.chain_holds)))
        for name, val in (("P(A1c)", rep.p_A1c), ("P(A2c)", rep.p_A2c),
                          ("P(A3c|A1,A2)", rep.p_A3c_given), ("P(At1c)", rep.p_At1c)):
            out.append(SummaryRow("proof-events", f"C={C} N={N} p={p}", name, val, float("nan"),
                                  float("nan"), f"n_given={rep.n_given}", "info"))
    return out


def _sum_crosscheck(rows, cfg):
    out = []
    for (chain, N, k, p, q), qrow in _group(rows, ("chain", "N", "k", "p", "quantity")).items():
        pt = f"{chain} N={N} k={k} p={p}" if chain == "exclusion" else f"{chain} N={N} p={p}"
        if q == "spectral_gap":
            out.append(SummaryRow("exact-crosscheck", pt, q, qrow[0]["value"], float("nan"), float("nan"),
                                  "", "info"))
            continue
        err = max(abs(r["value"] - r["reference"]) for r in qrow)
        tol = qrow[0]["tol"]
        est = qrow[0]["value"] if len(qrow) == 1 else err
        name = q if len(qrow) == 1 else f"{q}_max_abs_error"
        out.append(SummaryRow("exact-crosscheck", pt, name, est, float("nan"), float("nan"),
                              f"|x - {qrow[0]['reference']:.6g}| <= {tol:.3g}" if len(qrow) == 1
                              else f"<= {tol:.3g}", _verdict(err <= tol)))
    return out


def _sum_distance(rows, cfg):
    P = cfg.params
    th = cfg.thresholds
    out = []
    for (p, t), prow in _group(rows, ("p", "t")).items():
        ok = [r for r in prow if r["valid"]]
        if not ok:
            continue
        d = np.array([r["distance"] for r in ok])
        grid = np.array(sorted(P["n_grid"]), float)
        surv = np.array([np.mean(d > n) for n in grid])
        pos = surv > 0
        pt = f"p={p} t={t}"
        if pos.sum() >= 2:
            fit = stats.linregress(grid[pos], np.log(surv[pos]))
            slope, r2 = float(fit.slope), float(fit.rvalue ** 2)
        else:
            slope, r2 = float("nan"), float("nan")
        out.append(SummaryRow("couple-distance", pt, "log_tail_slope", slope, float("nan"), float("nan"),
                              "< 0", _verdict(slope < 0)))
        out.append(SummaryRow("couple-distance", pt, "log_tail_r2", r2, float("nan"), float("nan"),
                              f"> {th['r2_min']}", _verdict(r2 > th["r2_min"])))
        gaps = np.array([int(g) for r in ok for g in r["gaps"].split(";") if g])
        pv = geometric_gof(gaps) if len(gaps) else float("nan")
        out.append(SummaryRow("couple-distance", pt, "gap_chi2_pvalue", pv, float("nan"), float("nan"),
                              f">= {P['alpha']}", _verdict(pv >= P["alpha"])))
    return out


_SUMMARIZERS: dict[str, Callable] = {
    "mixing-scaling": _sum_mixing,
    "hitting-tail": _sum_hitting,
    "drift": _sum_drift,
    "blocking-stationarity": _sum_stationarity,
    "proof-events": _sum_events,
    "exact-crosscheck": _sum_crosscheck,
    "couple-distance": _sum_distance,
}


def summarize_rows(cfg: ExperimentConfig, rows: list[dict]) -> list[SummaryRow]:
    """Estimates and verdicts for one experiment's result rows."""
    if not rows:
        return []
    return _SUMMARIZERS[cfg.tag](rows, cfg)


# ---------------------------------------------------------------- running


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    tag: str
    master_seed: int
    seeds: list
    wall_time: float
    invalid: dict
    rows: int
    started: str
    finished: str
    config_text: str
    files: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def load(cls, path: Path | str) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def _invalid_counts(tag: str, rows: list[dict]) -> dict:
    out: dict[str, int] = {}
    if not rows or "valid" not in rows[0]:
        return out
    keys = [c for c, _ in _COLUMNS[tag] if c in ("C", "N", "p", "t")]
    for r in rows:
        label = " ".join(f"{k}={r[k]}" for k in keys)
        out[label] = out.get(label, 0) + (not r["valid"])
    return out


def run_experiment(cfg: ExperimentConfig, out_dir: Path | str | None = None) -> tuple[RunManifest, list[SummaryRow]]:
    """Run ``cfg`` and write config copy, results CSV, summary JSON and,
    last, the manifest.  Returns the manifest and the summary rows."""
    out = Path(out_dir) if out_dir is not None else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    # a stale manifest would mark a half-written directory as complete
    (out / MANIFEST).unlink(missing_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.perf_counter()
    seeds = [derive_seed(cfg.master_seed, r) for r in range(cfg.reps)]
    if cfg.tag == "blocking-stationarity":
        rows = _stationarity_rows(cfg)
    elif cfg.tag == "exact-crosscheck":
        rows = _crosscheck_rows(cfg)
    else:
        try:
            rows = _run_replicas(cfg, seeds)
        except Exception as exc:
            raise type(exc)(f"{cfg.tag}: {exc}") from exc
    (out / CONFIG_COPY).write_text(cfg.text, encoding="utf-8")
    (out / RESULTS).write_text(write_rows(cfg.tag, rows), encoding="utf-8")
    summary = summarize_rows(cfg, rows)
    (out / "summary.json").write_text(
        json.dumps([asdict(s) for s in summary], indent=1, sort_keys=True), encoding="utf-8")
    man = RunManifest(
        config_hash=cfg.config_hash(), code_version=CODE_VERSION, tag=cfg.tag,
        master_seed=cfg.master_seed, seeds=seeds, wall_time=time.perf_counter() - t0,
        invalid=_invalid_counts(cfg.tag, rows), rows=len(rows), started=started,
        finished=time.strftime("%Y-%m-%dT%H:%M:%S%z"), config_text=cfg.text,
        files=[CONFIG_COPY, RESULTS, "summary.json"],
    )
    tmp = out / (MANIFEST + ".tmp")
    tmp.write_text(man.to_json(), encoding="utf-8")
    os.replace(tmp, out / MANIFEST)
    return man, summary


def replay(manifest_path: Path | str, out_dir: Path | str) -> tuple[RunManifest, list[SummaryRow]]:
    """Re-run the experiment recorded in a manifest into ``out_dir``."""
    man = RunManifest.load(manifest_path)
    return run_experiment(parse_config(man.config_text), out_dir)


def summarize(result_dir: Path | str) -> list[SummaryRow]:
    """Summary rows for every complete run under ``result_dir`` (the
    directory itself or its subdirectories, in sorted order)."""
    root = Path(result_dir)
    if not root.exists():
        raise FileNotFoundError(root)
    dirs = [root] if (root / MANIFEST).exists() else []
    dirs += sorted(d.parent for d in root.glob(f"*/{MANIFEST}"))
    out = []
    for d in dirs:
        cfg = parse_config((d / CONFIG_COPY).read_text(encoding="utf-8"))
        tag, rows = read_rows(d / RESULTS)
        if tag != cfg.tag:
            raise SchemaError(f"{d / RESULTS}: experiment {tag!r} does not match config {cfg.tag!r}")
        out.extend(summarize_rows(cfg, rows))
    return out


def format_table(rows: list[SummaryRow]) -> str:
    """Fixed-width table of summary rows."""
    head = ("experiment", "point", "quantity", "estimate", "CI", "threshold", "verdict")
    body = [(r.experiment, r.point, r.quantity, f"{r.estimate:.6g}",
             "" if math.isnan(r.ci_lo) else f"[{r.ci_lo:.4g}, {r.ci_hi:.4g}]",
             r.threshold, r.verdict) for r in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(line, widths)).rstrip() for line in [head, *body]]
    return "\n".join(lines)


def all_pass(rows: list[SummaryRow]) -> bool:
    return all(r.verdict != "fail" for r in rows)
