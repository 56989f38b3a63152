"""Experiment harness: configuration, runs, benchmarks and verification.

A run configuration is one JSON document with the sections ``family``,
``graph``, ``integrator``, ``algorithm``, ``oracle`` and ``output``.  Every
artifact carries the configuration hash (sha256 of the canonical JSON of
everything except ``output``) and the seed.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import initial_state, make_field
from .graph import Graph, is_connected
from .integrator import (
    IntegratorConfig,
    integrate,
    step,
    write_diagnostics_csv,
    write_trajectory_csv,
)
from .mirror import Quadratic
from .oracle import OracleError, solve_reference
from .problem import (
    NetworkProblem,
    SimplexFamilyParams,
    generate_instance,
    instance_from_dict,
    instance_to_dict,
    scalar_regression_instance,
)
from .saddle import SaddlePoint, kkt_residual, saddle_inequality_gaps

log = logging.getLogger(__name__)

OUTPUT_ENV = "MDBD_OUTPUT_DIR"

DEFAULT_CONFIG = {
    "family": {"name": "simplex", "N": 10, "n": 4, "seed": 7, "params": {}},
    "graph": {"kind": "cycle", "weight": 2.0},
    "integrator": {"step": 1e-3, "horizon": 50.0, "record_every": 100, "scheme": "euler",
                   "divergence_bound": 1e9},
    "algorithm": {"name": "mdbd", "projection_mode": "fast"},
    "oracle": {"enabled": True, "tol": 1e-7},
    "output": {"dir": "runs/default", "trajectory": True},
}

_FIELDS = {
    "family": {"name", "N", "n", "seed", "params"},
    "graph": {"kind", "weight", "edges"},
    "integrator": {"step", "horizon", "record_every", "scheme", "divergence_bound"},
    "algorithm": {"name", "projection_mode"},
    "oracle": {"enabled", "tol"},
    "output": {"dir", "trajectory"},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field (and line)."""


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None):
    """Defaults, then the JSON file at ``path``, then ``overrides``; validated."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    for section, value in cfg.items():
        if section not in _FIELDS:
            raise ConfigError(f"unknown section {section!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"section {section!r} must be an object")
        extra = set(value) - _FIELDS[section]
        if extra:
            raise ConfigError(f"unknown field {section}.{sorted(extra)[0]}")
    fam = cfg["family"]
    if fam["name"] not in ("simplex", "scalar2"):
        raise ConfigError(f"family.name: unknown family {fam['name']!r}")
    for key in ("N", "n", "seed"):
        if not isinstance(fam[key], int) or isinstance(fam[key], bool) or fam[key] < (0 if key == "seed" else 1):
            raise ConfigError(f"family.{key}: expected a nonnegative integer, got {fam[key]!r}")
    try:
        SimplexFamilyParams(**fam.get("params", {}))
    except TypeError as exc:
        raise ConfigError(f"family.params: {exc}") from None
    if cfg["graph"]["kind"] not in ("cycle", "edges"):
        raise ConfigError(f"graph.kind: expected 'cycle' or 'edges', got {cfg['graph']['kind']!r}")
    try:
        IntegratorConfig(**cfg["integrator"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"integrator: {exc}") from None
    alg = cfg["algorithm"]
    if alg["name"] not in ("mdbd", "projection"):
        raise ConfigError(f"algorithm.name: expected 'mdbd' or 'projection', got {alg['name']!r}")
    if alg["projection_mode"] not in ("fast", "generic-qp"):
        raise ConfigError(f"algorithm.projection_mode: got {alg['projection_mode']!r}")
    if not cfg["oracle"]["tol"] > 0:
        raise ConfigError("oracle.tol must be positive")


def config_hash(cfg) -> str:
    body = {k: v for k, v in cfg.items() if k != "output"}
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def output_dir(cfg) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg["output"]["dir"])


def _graph_from_config(cfg, N):
    g = cfg["graph"]
    if g["kind"] == "cycle":
        return Graph.cycle(N, g.get("weight", 1.0))
    return Graph.from_edges(N, g.get("edges", []))


def build_instance(cfg) -> NetworkProblem:
    fam = cfg["family"]
    if fam["name"] == "scalar2":
        net = scalar_regression_instance()
    else:
        params = dict(fam.get("params", {}))
        if cfg["graph"]["kind"] == "cycle":
            params.setdefault("edge_weight", cfg["graph"].get("weight", 1.0))
        net, _ = generate_instance(fam["seed"], fam["N"], fam["n"], SimplexFamilyParams(**params))
    if cfg["graph"]["kind"] == "edges":
        net = NetworkProblem(net.agents, _graph_from_config(cfg, net.N), net.metadata)
    return net


def algorithm_problem(net, algorithm):
    """The problem the chosen algorithm actually runs on (quadratic generators for the baseline)."""
    if algorithm == "projection":
        return net.with_generators(Quadratic)
    return net


def _dump(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# run


@dataclass
class RunResult:
    exit_code: int
    summary: dict
    directory: Path


def cmd_run(cfg) -> RunResult:
    chash = config_hash(cfg)
    seed = cfg["family"]["seed"]
    meta = {"config_hash": chash, "seed": seed}
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    timing = {}

    t0 = time.perf_counter()
    net = build_instance(cfg)
    _dump(out / "instance.json", {**instance_to_dict(net), **meta})
    timing["instance_seconds"] = time.perf_counter() - t0

    ref = None
    summary = {"config": {k: v for k, v in cfg.items() if k != "output"}, **meta}
    if cfg["oracle"]["enabled"]:
        t0 = time.perf_counter()
        try:
            ref = solve_reference(net, cfg["oracle"]["tol"])
        except OracleError as exc:
            summary.update(status="ORACLE_FAILED", error=str(exc), best_residual=exc.best_residual)
            _dump(out / "summary.json", summary)
            return RunResult(4, summary, out)
        timing["oracle_seconds"] = time.perf_counter() - t0
        _dump(out / "saddle.json", {**ref.to_dict(), **meta})

    alg = cfg["algorithm"]
    run_net = algorithm_problem(net, alg["name"])
    field_fn = make_field(alg["name"], alg["projection_mode"])
    icfg = IntegratorConfig(**cfg["integrator"])
    run_ref = ref
    if ref is not None and run_net is not net:
        from .saddle import stationary_state

        run_ref = SaddlePoint(ref.layout, ref.z_star, stationary_state(run_net, ref.z_star),
                              ref.optimal_value, ref.provenance)
    t0 = time.perf_counter()
    rec, avg = integrate(run_net, field_fn, initial_state(run_net), icfg, run_ref)
    elapsed = time.perf_counter() - t0
    timing["integration_seconds"] = elapsed
    timing["per_step_seconds"] = elapsed / max(rec.steps_taken, 1)

    if cfg["output"].get("trajectory", True):
        write_trajectory_csv(out / "trajectory.csv", rec, meta)
    write_diagnostics_csv(out / "diagnostics.csv", rec, meta)

    def last(name):
        v = rec.diag(name)
        return float(v[-1]) if v.size else None

    xerr = rec.diag("x_error")
    summary.update(
        status=rec.status,
        final_time=rec.times[-1],
        steps=rec.steps_taken,
        eq_residual=last("eq_residual"),
        ineq_violation=last("ineq_residual"),
        kkt_residual=last("kkt_residual"),
        s_norm=last("s_norm"),
        gap=last("gap"),
        V1=last("V1"),
        x_error=last("x_error"),
        x_error_decreasing=bool(xerr.size > 1 and xerr[-1] < xerr[0]),
        oracle=None if ref is None else ref.provenance,
        final_selection_digest=rec.selection_digests[-1],
    )
    _dump(out / "summary.json", summary)
    _dump(out / "timing.json", {**meta, **timing, "hardware": hardware_info()})
    return RunResult(0 if rec.status == "OK" else 3, summary, out)


def cmd_gen(cfg, with_oracle=False):
    meta = {"config_hash": config_hash(cfg), "seed": cfg["family"]["seed"]}
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    net = build_instance(cfg)
    _dump(out / "instance.json", {**instance_to_dict(net), **meta})
    paths = [out / "instance.json"]
    if with_oracle:
        ref = solve_reference(net, cfg["oracle"]["tol"])
        _dump(out / "saddle.json", {**ref.to_dict(), **meta})
        paths.append(out / "saddle.json")
    return paths


# --------------------------------------------------------------------------
# verify


def cmd_verify(instance_path, saddle_path=None, tol=None, echo=print, samples=100):
    """Re-check an instance (and saddle point); returns ``(ok, [(check, passed, detail)])``."""
    results = []

    def check(name, passed, detail=""):
        results.append((name, bool(passed), detail))
        echo(f"{'PASS' if passed else 'FAIL'} {name}{': ' + detail if detail else ''}")
        return passed

    data = json.loads(Path(instance_path).read_text(encoding="utf-8"))
    graph = Graph.from_dict(data["graph"])
    if not check("connectivity", is_connected(graph)):
        return False, results
    net = instance_from_dict(data)
    cert = net.slater_certificate(net.metadata.get("slater", {}).get("point"))
    if cert is None:
        cert = net.slater_certificate()
    check("slater", cert is not None, "" if cert is None else f"slack {cert.slack:.4g}")
    if saddle_path is not None:
        sp = SaddlePoint.from_dict(json.loads(Path(saddle_path).read_text(encoding="utf-8")))
        z = sp.output
        check("x_in_sets", net.contains(z.x, 1e-9))
        lam_ok = not z.lam.size or z.lam.min() >= 0
        check("lambda_nonnegative", lam_ok, "" if lam_ok else f"min {z.lam.min():.3g}")
        if lam_ok and net.contains(z.x, 1e-9):
            tol = sp.provenance.get("tolerance", 1e-6) if tol is None else tol
            r = kkt_residual(net, sp.z_star)
            check("kkt_residual", r <= tol, f"{r:.3e} (tol {tol:.1e})")
            rng = np.random.default_rng(0)
            up, lo = saddle_inequality_gaps(net, sp, rng, samples)
            check("saddle_inequalities", up <= 1e-8 and lo <= 1e-8, f"upper {up:.2e}, lower {lo:.2e}")
    ok = all(r[1] for r in results)
    return ok, results


# --------------------------------------------------------------------------
# benchmarks


def hardware_info():
    return {
        "machine": platform.machine(),
        "processor": platform.processor(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
        "device": "cpu",
    }


BENCH_ALGORITHMS = (("mdbd", "fast"), ("projection", "fast"), ("projection", "generic-qp"))


def _label(alg, mode):
    return "mdbd" if alg == "mdbd" else f"projection-{mode}"


def per_step_time(net, algorithm, mode, steps=None, repeats=5, warmup=2, h=1e-3):
    """Median wall time of one integration step (warm-up excluded)."""
    run_net = algorithm_problem(net, algorithm)
    field_fn = make_field(algorithm, mode)
    s = initial_state(run_net).data.copy()
    # nonzero state so projections are not trivially inactive
    s = s + np.random.default_rng(0).standard_normal(s.size)
    if steps is None:
        steps = 1 if mode == "generic-qp" else 50
    for _ in range(warmup):
        s = step(run_net, field_fn, s, h)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(steps):
            s = step(run_net, field_fn, s, h)
        times.append((time.perf_counter() - t0) / steps)
    return float(np.median(times))


def time_to_threshold(net, algorithm, mode, ref, threshold, limit, h=1e-3, check_every=100,
                      max_time=1e4):
    """Wall time until ``||x - x*|| <= threshold``; None past ``limit`` seconds."""
    run_net = algorithm_problem(net, algorithm)
    field_fn = make_field(algorithm, mode)
    s = initial_state(run_net).data.copy()
    x_star = ref.x
    n_primal = run_net.N * run_net.n
    t0 = time.perf_counter()
    k = 0
    while k * h < max_time:
        ev = field_fn(run_net, s)
        if k % check_every == 0:
            err = np.linalg.norm(ev.z[:n_primal].reshape(x_star.shape) - x_star)
            if err <= threshold:
                return time.perf_counter() - t0, k
        if time.perf_counter() - t0 > limit:
            return None, k
        s = s + h * ev.ds
        k += 1
    return None, k


def fit_exponent(dims, times):
    """Least-squares slope of ``log time`` against ``log n``."""
    return float(np.polyfit(np.log(dims), np.log(times), 1)[0])


def cmd_bench(dims, cfg, threshold=1e-2, limit=60.0, algorithms=BENCH_ALGORITHMS, echo=print,
              to_threshold=True, repeats=5):
    """Per-step and to-threshold timings per dimension and algorithm.

    Writes ``bench.csv`` and ``bench_meta.json`` into the output directory and
    returns the rows.
    """
    dims = list(dims)
    if dims != sorted(dims):
        raise ValueError("dimensions must be sorted ascending")
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for n in dims:
        c = copy.deepcopy(cfg)
        c["family"]["n"] = n
        net = build_instance(c)
        ref = solve_reference(net, c["oracle"]["tol"]) if to_threshold else None
        for alg, mode in algorithms:
            ps = per_step_time(net, alg, mode, repeats=repeats)
            row = {"n": n, "algorithm": _label(alg, mode), "per_step_seconds": ps,
                   "time_to_threshold": "", "steps_to_threshold": ""}
            if to_threshold:
                tt, k = time_to_threshold(net, alg, mode, ref, threshold, limit)
                row["time_to_threshold"] = f">{limit:g}" if tt is None else f"{tt:.6g}"
                row["steps_to_threshold"] = k
            rows.append(row)
            echo(f"n={n:5d} {row['algorithm']:24s} per-step {ps:.3e}s  to-threshold {row['time_to_threshold'] or '-'}")
    exponents = {}
    for alg, mode in algorithms:
        lab = _label(alg, mode)
        ts = [r["per_step_seconds"] for r in rows if r["algorithm"] == lab]
        if len(ts) >= 2:
            exponents[lab] = fit_exponent(dims, ts)
    import csv

    with open(out / "bench.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={config_hash(cfg)} seed={cfg['family']['seed']} threshold={threshold:g}\n")
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    _dump(out / "bench_meta.json", {"dims": dims, "threshold": threshold, "limit_seconds": limit,
                                    "exponents": exponents, "hardware": hardware_info(),
                                    "config_hash": config_hash(cfg), "seed": cfg["family"]["seed"]})
    return rows, exponents
