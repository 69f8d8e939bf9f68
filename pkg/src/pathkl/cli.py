"""Command-line front end: config parsing, dispatch, reports.

One run per invocation. Configs are strict JSON: unknown keys anywhere are
validation errors, because a silently ignored typo corrupts an experiment.
Reports echo the fully resolved config (defaults materialized) and are
byte-identical for identical config + seed, wall-clock field aside.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
import time

import numpy as np

from .chain import (
    DIVERGENCE_THRESHOLD,
    Partition,
    chain_estimate,
    refinement_sweep,
    step_kl,
)
from .diffusion import (
    DiffusionSpec,
    InitialLaw,
    TimeGrid,
    make_model,
    model_ids,
    sample_paths,
    substream_seed,
)
from .errors import (
    EXIT_OK,
    ArgumentError,
    CapabilityError,
    ConvergenceError,
    InsufficientSamplingError,
    exit_code_for,
)
from .girsanov import girsanov_entropy
from .marginal import OptimizerConfig, dv_estimate, initial_entropy
from .sanov import RateExperiment, empirical_rate
from .variational import basis_from_config, mixed_basis, residual_energy_profile

__all__ = ["main", "run_config", "build_report"]

ESTIMATORS = ("girsanov", "chain", "dv-marginal", "residual-energy", "sanov")

_MODEL_PARAMS = {
    "brownian": {"a"},
    "constant_drift": {"theta", "a"},
    "ou": {"gamma", "a"},
    "double_well": {"a"},
    "linear": {"A", "b0", "a"},
    "sine_diffusion": {"a", "amplitude"},
}

_TOP_KEYS = {"model_mu", "model_P", "initial_mu", "initial_P", "grid",
             "estimator", "estimator_params", "n_paths", "seed"}

_ESTIMATOR_KEYS = {
    "girsanov": {"tol_match"},
    "chain": {"levels", "partition_times", "method", "divergence_threshold"},
    "dv-marginal": {"t", "n_samples", "basis", "max_iter", "gtol",
                    "plateau_rtol"},
    "residual-energy": {"basis", "window", "stride", "t_min_frac", "debias",
                        "include_initial"},
    "sanov": {"observable", "threshold", "n_list", "trials", "with_oracle"},
}


# ---------------------------------------------------------------------------
# Config validation and object construction


def _check_keys(record: dict, allowed: set, where: str) -> None:
    if not isinstance(record, dict):
        raise ArgumentError(f"{where} must be an object")
    unknown = set(record) - allowed
    if unknown:
        raise ArgumentError(
            f"unknown keys in {where}: {sorted(unknown)}; "
            f"allowed: {sorted(allowed)}")


def _need(record: dict, key: str, where: str):
    if key not in record:
        raise ArgumentError(f"{where} is missing required key {key!r}")
    return record[key]


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ArgumentError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ArgumentError("config root must be an object")
    return cfg


def _build_model(record: dict, dim: int, where: str) -> DiffusionSpec:
    _check_keys(record, {"id", "params"}, where)
    model_id = _need(record, "id", where)
    params = record.get("params", {})
    if not isinstance(params, dict):
        raise ArgumentError(f"{where}.params must be an object")
    known = _MODEL_PARAMS.get(model_id)
    if known is None:
        # make_model raises with the catalog listing
        return make_model(model_id, params, dim)
    unknown = set(params) - known
    if unknown:
        raise ArgumentError(
            f"unknown params for model {model_id!r} in {where}: "
            f"{sorted(unknown)}; allowed: {sorted(known)}")
    return make_model(model_id, params, dim)


def _build_initial(record: dict, where: str) -> InitialLaw:
    if not isinstance(record, dict):
        raise ArgumentError(f"{where} must be an object")
    kind = _need(record, "kind", where)
    if kind == "point":
        _check_keys(record, {"kind", "point"}, where)
        return InitialLaw.point_mass(_need(record, "point", where))
    if kind == "gaussian":
        _check_keys(record, {"kind", "mean", "covariance"}, where)
        return InitialLaw.gaussian(_need(record, "mean", where),
                                   _need(record, "covariance", where))
    if kind == "empirical":
        _check_keys(record, {"kind", "samples"}, where)
        return InitialLaw.empirical(_need(record, "samples", where))
    raise ArgumentError(
        f"{where}.kind must be point, gaussian, or empirical, "
        f"not {kind!r}")


def _build_grid(record: dict) -> TimeGrid:
    _check_keys(record, {"horizon", "steps"}, "grid")
    return TimeGrid.uniform(float(_need(record, "horizon", "grid")),
                            int(_need(record, "steps", "grid")))


def resolve_config(cfg: dict, seed_override: int | None = None) -> dict:
    """Validate the raw config and materialize all defaults."""
    _check_keys(cfg, _TOP_KEYS, "config")
    for key in ("model_mu", "model_P", "initial_mu", "initial_P", "grid",
                "estimator"):
        _need(cfg, key, "config")
    estimator = cfg["estimator"]
    if estimator not in ESTIMATORS:
        raise ArgumentError(
            f"unknown estimator {estimator!r}; known: {', '.join(ESTIMATORS)}")
    params = cfg.get("estimator_params", {})
    _check_keys(params, _ESTIMATOR_KEYS[estimator],
                f"estimator_params ({estimator})")

    resolved = {
        "model_mu": {"id": cfg["model_mu"].get("id"),
                     "params": cfg["model_mu"].get("params", {})},
        "model_P": {"id": cfg["model_P"].get("id"),
                    "params": cfg["model_P"].get("params", {})},
        "initial_mu": dict(cfg["initial_mu"]),
        "initial_P": dict(cfg["initial_P"]),
        "grid": {"horizon": float(_need(cfg["grid"], "horizon", "grid")),
                 "steps": int(_need(cfg["grid"], "steps", "grid"))},
        "estimator": estimator,
        "estimator_params": dict(params),
        "n_paths": int(cfg.get("n_paths", 10_000)),
        "seed": int(cfg.get("seed", 0)),
    }
    if seed_override is not None:
        resolved["seed"] = int(seed_override)
    if resolved["n_paths"] < 1:
        raise ArgumentError("n_paths must be positive")

    # chain refinement needs power-of-two step counts so every level's
    # partition lands exactly on grid points
    if estimator == "chain" and params.get("levels") is not None:
        steps = resolved["grid"]["steps"]
        levels = int(params["levels"])
        if levels < 1:
            raise ArgumentError("levels must be at least 1")
        if steps & (steps - 1) != 0:
            raise ArgumentError(
                f"chain refinement needs a dyadic step count "
                f"(power of two), got steps={steps}")
        if steps < 2 ** (levels - 1):
            raise ArgumentError(
                f"steps={steps} cannot host {levels} refinement levels")
    if estimator == "sanov":
        for key in ("observable", "threshold", "n_list"):
            _need(params, key, "estimator_params (sanov)")
    return resolved


def _built_objects(resolved: dict):
    init_mu = _build_initial(resolved["initial_mu"], "initial_mu")
    init_p = _build_initial(resolved["initial_P"], "initial_P")
    if init_mu.dim != init_p.dim:
        raise ArgumentError("initial laws must share a dimension")
    dim = init_mu.dim
    spec_mu = _build_model(resolved["model_mu"], dim, "model_mu")
    spec_p = _build_model(resolved["model_P"], dim, "model_P")
    grid = _build_grid(resolved["grid"])
    return spec_mu, spec_p, init_mu, init_p, grid


# ---------------------------------------------------------------------------
# Serialization


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set)):
        return [_jsonable(v) for v in obj]
    return obj


def _default_marginal_basis(samples_mu, samples_nu):
    pooled = np.concatenate([samples_mu, samples_nu])
    lo = float(pooled.min())
    hi = float(pooled.max())
    pad = 0.35 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    width = hi - lo
    span = (lo + 0.3 * width, hi - 0.3 * width)
    return mixed_basis([lo], [hi], n_bumps=5, bump_scale=width / 3.2,
                       degrees=[0, 1, 2], bump_span=span)


def _default_energy_basis(ensemble):
    states = ensemble.states[:, ensemble.grid.n_steps // 2:]
    lo = float(np.quantile(states, 0.001))
    hi = float(np.quantile(states, 0.999))
    pad = 0.3 * (hi - lo)
    return mixed_basis([lo - pad], [hi + pad], n_bumps=12,
                       bump_scale=1.5 * (hi - lo) / 11, degrees=[])


# ---------------------------------------------------------------------------
# Estimator dispatch


def _run_girsanov(resolved, objs, threads):
    spec_mu, spec_p, init_mu, init_p, grid = objs
    ensemble = sample_paths(spec_mu, init_mu, grid, resolved["n_paths"],
                            resolved["seed"], threads=threads)
    tol = float(resolved["estimator_params"].get("tol_match", 1e-6))
    est = girsanov_entropy(spec_mu, spec_p, init_mu, init_p, ensemble,
                           tol_match=tol)
    rows = [{"estimator": "girsanov", "value": est.value,
             "std_error": est.std_error, "is_infinite": est.is_infinite}]
    return {"estimate": _jsonable(est)}, rows, \
        ["estimator", "value", "std_error", "is_infinite"]


def _run_chain(resolved, objs, threads):
    spec_mu, spec_p, init_mu, init_p, grid = objs
    params = resolved["estimator_params"]
    method = params.get("method", "gauss")
    threshold = float(params.get("divergence_threshold",
                                 DIVERGENCE_THRESHOLD))
    if params.get("levels") is not None:
        sweep = refinement_sweep(
            spec_mu, spec_p, init_mu, init_p, grid,
            int(params["levels"]), resolved["n_paths"], resolved["seed"],
            method=method, threads=threads, divergence_threshold=threshold)
        rows = []
        for level, est in enumerate(sweep.estimates, start=1):
            rows.append({
                "level": level,
                "mesh": est.partition.mesh,
                "value": est.total.value,
                "std_error": est.total.std_error,
                "slope": sweep.slope_per_interval,
            })
        results = {
            "sweep": [{
                "level": r["level"], "mesh": r["mesh"],
                "value": r["value"], "std_error": r["std_error"],
                "intervals": est.partition.n_intervals,
            } for r, est in zip(rows, sweep.estimates)],
            "finest": _jsonable(sweep.estimates[-1].total),
            "diverged": sweep.diverged,
            "slope_per_interval": sweep.slope_per_interval,
            "richardson_gap": sweep.richardson_gap,
            "monotonicity_violations": _jsonable(
                sweep.monotonicity_violations),
        }
        return results, rows, ["level", "mesh", "value", "std_error", "slope"]

    times = params.get("partition_times")
    if times is None:
        partition = Partition.from_times(grid, grid.points)
    else:
        partition = Partition.from_times(grid, times)
    est = chain_estimate(spec_mu, spec_p, init_mu, init_p, partition,
                         resolved["n_paths"], resolved["seed"],
                         method=method, grid=grid, threads=threads)
    rows = [{"t_lo": c.t_lo, "t_hi": c.t_hi, "value": c.value,
             "std_error": c.std_error} for c in est.contributions]
    rows.append({"t_lo": 0.0, "t_hi": grid.horizon,
                 "value": est.total.value,
                 "std_error": est.total.std_error})
    results = {
        "total": _jsonable(est.total),
        "initial_term": est.initial_term,
        "contributions": _jsonable(est.contributions),
        "n_intervals": partition.n_intervals,
    }
    return results, rows, ["t_lo", "t_hi", "value", "std_error"]


def _run_dv_marginal(resolved, objs, threads):
    spec_mu, spec_p, init_mu, init_p, grid = objs
    params = resolved["estimator_params"]
    t = float(params.get("t", grid.horizon))
    n = int(params.get("n_samples", resolved["n_paths"]))
    seed = resolved["seed"]

    ens_mu = sample_paths(spec_mu, init_mu, grid, n, seed, threads=threads)
    ens_p = sample_paths(spec_p, init_p, grid, n,
                         substream_seed(seed, 1), threads=threads)
    idx = int(np.searchsorted(grid.points, t))
    idx = min(idx, grid.points.shape[0] - 1)
    if not math.isclose(float(grid.points[idx]), t, abs_tol=1e-12):
        raise ArgumentError(f"marginal time {t} is not on the grid")
    s_mu = ens_mu.states[:, idx]
    s_p = ens_p.states[:, idx]

    if params.get("basis") is not None:
        basis = basis_from_config(params["basis"])
    else:
        if s_mu.shape[1] != 1:
            raise ArgumentError(
                "default marginal basis is one-dimensional; supply a basis "
                "config for multivariate runs")
        basis = _default_marginal_basis(s_mu, s_p)
    opt = OptimizerConfig(
        gtol=float(params.get("gtol", 1e-8)),
        max_iter=int(params.get("max_iter", 500)),
        plateau_rtol=float(params.get("plateau_rtol", 0.02)))
    est = dv_estimate(s_mu, s_p, basis, opt)
    rows = [{"estimator": "dv-marginal", "t": t, "value": est.value,
             "std_error": est.std_error}]
    return {"estimate": _jsonable(est), "t": t, "n_samples": n,
            "basis": basis.describe()}, rows, \
        ["estimator", "t", "value", "std_error"]


def _run_residual_energy(resolved, objs, threads):
    spec_mu, spec_p, init_mu, init_p, grid = objs
    params = resolved["estimator_params"]
    ensemble = sample_paths(spec_mu, init_mu, grid, resolved["n_paths"],
                            resolved["seed"], threads=threads)
    if params.get("basis") is not None:
        basis = basis_from_config(params["basis"])
    else:
        if spec_mu.dim != 1:
            raise ArgumentError(
                "default energy basis is one-dimensional; supply a basis "
                "config for multivariate runs")
        basis = _default_energy_basis(ensemble)
    profile = residual_energy_profile(
        ensemble, spec_p, basis,
        window=int(params.get("window", 8)),
        stride=int(params.get("stride", 4)),
        t_min_frac=float(params.get("t_min_frac", 0.15)),
        debias=bool(params.get("debias", True)))
    include_initial = bool(params.get("include_initial", True))
    initial = initial_entropy(init_mu, init_p) if include_initial else None
    total = profile.integral + (initial.value if initial else 0.0)
    total_se = math.hypot(profile.integral_std_error,
                          initial.std_error if initial else 0.0)
    rows = [{"t": float(t), "energy": float(v), "std_error": float(s)}
            for t, v, s in zip(profile.times, profile.values,
                               profile.std_errors)]
    results = {
        "integral": profile.integral,
        "integral_std_error": profile.integral_std_error,
        "initial_term": _jsonable(initial) if initial else None,
        "total": total,
        "total_std_error": total_se,
        "profile": rows,
        "basis": basis.describe(),
        "diagnostics": _jsonable(profile.diagnostics),
    }
    return results, rows, ["t", "energy", "std_error"]


def _run_sanov(resolved, objs, threads):
    spec_mu, spec_p, init_mu, init_p, grid = objs
    params = resolved["estimator_params"]
    experiment = RateExperiment(
        observable=str(params["observable"]),
        threshold=float(params["threshold"]),
        n_list=tuple(int(n) for n in params["n_list"]),
        trials=int(params.get("trials", 10_000)),
        seed=resolved["seed"])
    table = empirical_rate(spec_p, init_p, grid, experiment,
                           threads=threads,
                           with_oracle=bool(params.get("with_oracle", True)))
    rows = [{"n": r.n, "count": r.count, "p_hat": r.p_hat, "rate": r.rate,
             "std_error": r.std_error, "oracle": r.oracle,
             "zero_count": r.zero_count} for r in table.rows]
    return {"table": rows, "diagnostics": _jsonable(table.diagnostics)}, \
        rows, ["n", "count", "p_hat", "rate", "std_error", "oracle",
               "zero_count"]


_DISPATCH = {
    "girsanov": _run_girsanov,
    "chain": _run_chain,
    "dv-marginal": _run_dv_marginal,
    "residual-energy": _run_residual_energy,
    "sanov": _run_sanov,
}


def run_config(cfg: dict, *, seed_override: int | None = None,
               threads: int = 1) -> tuple[dict, list, list]:
    """Validate, dispatch, and return (results, csv_rows, csv_header)."""
    resolved = resolve_config(cfg, seed_override)
    objs = _built_objects(resolved)
    results, rows, header = _DISPATCH[resolved["estimator"]](
        resolved, objs, threads)
    return resolved, results, (rows, header)


def build_report(resolved: dict, results: dict, *, command: str,
                 wall_clock_s: float) -> dict:
    from . import __version__
    return {
        "command": command,
        "config": resolved,
        "results": results,
        "version": __version__,
        "wall_clock_s": wall_clock_s,
    }


def _emit(report: dict, rows_header, fmt: str, out: str | None) -> None:
    if fmt == "json":
        text = json.dumps(_jsonable(report), sort_keys=True, indent=2)
        text += "\n"
    else:
        rows, header = rows_header
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in header})
        text = buf.getvalue()
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    t0 = time.perf_counter()
    try:
        resolved, results, rows_header = run_config(
            cfg, seed_override=args.seed, threads=args.threads)
    except (ConvergenceError, InsufficientSamplingError) as exc:
        # partial report: the failure is a result, not a crash
        partial = {
            "command": "run",
            "config": cfg,
            "results": {"status": type(exc).__name__,
                        "message": str(exc),
                        "best_value": getattr(exc, "best_value", None),
                        "diagnostics": _jsonable(
                            getattr(exc, "diagnostics", {}))},
            "wall_clock_s": time.perf_counter() - t0,
        }
        _emit(partial, ([], ["status"]), "json", args.out)
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    report = build_report(resolved, results, command="run",
                          wall_clock_s=time.perf_counter() - t0)
    _emit(report, rows_header, args.format, args.out)
    return EXIT_OK


def _scenario_fingerprint(resolved: dict) -> dict:
    return {
        "model_mu": resolved["model_mu"],
        "model_P": resolved["model_P"],
        "initial_mu": resolved["initial_mu"],
        "initial_P": resolved["initial_P"],
        "horizon": resolved["grid"]["horizon"],
    }


def _headline_value(estimator: str, results: dict) -> tuple[float, float]:
    if estimator == "girsanov":
        est = results["estimate"]
    elif estimator == "chain":
        est = results.get("finest") or results["total"]
    elif estimator == "dv-marginal":
        est = results["estimate"]
    elif estimator == "residual-energy":
        return float(results["total"]), float(results["total_std_error"])
    else:
        raise ArgumentError(
            "sanov runs estimate a decay rate, not a path-space entropy; "
            "they cannot join a compare table")
    return float(est["value"]), float(est["std_error"])


def _cmd_compare(args) -> int:
    if len(args.config) < 2:
        raise ArgumentError("compare needs at least two --config files")
    t0 = time.perf_counter()
    entries = []
    fingerprint = None
    for path in args.config:
        cfg = load_config(path)
        resolved, results, _ = run_config(cfg, seed_override=args.seed,
                                          threads=args.threads)
        fp = _scenario_fingerprint(resolved)
        if fingerprint is None:
            fingerprint = fp
        elif fp != fingerprint:
            raise ArgumentError(
                f"config {path} runs a different scenario; compare needs a "
                f"shared model pair, initial laws, and horizon")
        value, se = _headline_value(resolved["estimator"], results)
        entries.append({"config": path, "estimator": resolved["estimator"],
                        "value": value, "std_error": se,
                        "is_infinite": math.isinf(value)})

    z_scores = []
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            a, b = entries[i], entries[j]
            if a["is_infinite"] or b["is_infinite"]:
                z = None
            else:
                spread = math.hypot(a["std_error"], b["std_error"])
                gap = a["value"] - b["value"]
                z = 0.0 if gap == 0 else (gap / spread if spread > 0
                                          else math.inf)
            z_scores.append({"i": i, "j": j, "z": z})

    report = {
        "command": "compare",
        "scenario": fingerprint,
        "entries": entries,
        "z_scores": z_scores,
        "flags": [e["estimator"] for e in entries if e["is_infinite"]],
        "wall_clock_s": time.perf_counter() - t0,
    }
    rows = [dict(e) for e in entries]
    _emit(report, (rows, ["config", "estimator", "value", "std_error",
                          "is_infinite"]), args.format, args.out)
    return EXIT_OK


def _cmd_list_models(args) -> int:
    for model_id in model_ids():
        params = sorted(_MODEL_PARAMS.get(model_id, set()))
        print(f"{model_id}  params: {', '.join(params) if params else '-'}")
    return EXIT_OK


def _selftest_checks():
    from .diffusion import euler_step_law, make_model
    from .marginal import gaussian_kl
    from .diffusion import GaussianLaw

    def check_gaussian_kl():
        value = gaussian_kl(GaussianLaw(np.zeros(1), 4 * np.eye(1)),
                            GaussianLaw(np.zeros(1), np.eye(1)))
        want = 0.5 * (4 - 1 - math.log(4.0))
        return abs(value - want) < 1e-12, f"value={value:.12f}"

    def check_mismatch_step():
        grid = TimeGrid.uniform(1.0, 4)
        spec_mu = make_model("brownian", {"a": 2.0})
        spec_p = make_model("brownian", {"a": 1.0})
        init = InitialLaw.point_mass([0.0])
        ens = sample_paths(spec_mu, init, grid, 16, 0)
        value, _ = step_kl(spec_mu, spec_p, ens, (0.0, 0.25))
        want = 0.5 * (2 - 1 - math.log(2.0))
        return abs(value - want) < 1e-12, f"value={value:.12f}"

    def check_constant_drift():
        grid = TimeGrid.uniform(1.0, 400)
        spec_mu = make_model("constant_drift", {"theta": 1.0})
        spec_p = make_model("brownian", {})
        init = InitialLaw.point_mass([0.0])
        ens = sample_paths(spec_mu, init, grid, 4000, 7)
        est = girsanov_entropy(spec_mu, spec_p, init, init, ens)
        return abs(est.value - 0.5) < 0.02, f"value={est.value:.4f}"

    def check_chain_identity():
        grid = TimeGrid.uniform(1.0, 16)
        spec_mu = make_model("ou", {"gamma": 1.0})
        spec_p = make_model("brownian", {})
        init = InitialLaw.point_mass([0.0])
        part = Partition.from_times(grid, grid.points)
        est = chain_estimate(spec_mu, spec_p, init, init, part, 500, 3,
                             grid=grid)
        total = est.initial_term
        for term in est.contributions:
            total = total + term.value
        return est.total.value == max(total, 0.0), f"gap={est.total.value - total}"

    def check_determinism():
        cfg = {
            "model_mu": {"id": "constant_drift", "params": {"theta": 1.0}},
            "model_P": {"id": "brownian", "params": {}},
            "initial_mu": {"kind": "point", "point": [0.0]},
            "initial_P": {"kind": "point", "point": [0.0]},
            "grid": {"horizon": 1.0, "steps": 50},
            "estimator": "girsanov",
            "n_paths": 200,
            "seed": 11,
        }
        out = []
        for threads in (1, 4):
            resolved, results, _ = run_config(dict(cfg), threads=threads)
            out.append(json.dumps(_jsonable(results), sort_keys=True))
        return out[0] == out[1], "reports differ" if out[0] != out[1] else ""

    return [
        ("gaussian-kl-closed-form", check_gaussian_kl),
        ("mismatched-diffusion-step", check_mismatch_step),
        ("constant-drift-oracle", check_constant_drift),
        ("chain-sum-identity", check_chain_identity),
        ("thread-determinism", check_determinism),
    ]


def _cmd_self_test(args) -> int:
    failures = 0
    for name, check in _selftest_checks():
        try:
            ok, detail = check()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        status = "PASS" if ok else "FAIL"
        suffix = f"  ({detail})" if detail and not ok else ""
        print(f"{status}  {name}{suffix}")
        failures += 0 if ok else 1
    return EXIT_OK if failures == 0 else 1


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathkl",
        description="Path-space relative entropy estimators for diffusions")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="run one configured estimator")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--format", choices=("json", "csv"), default="json")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.set_defaults(fn=_cmd_run)

    p_cmp = sub.add_parser("compare",
                           help="run several configs on one scenario")
    p_cmp.add_argument("--config", action="append", required=True,
                       help="repeat for each run")
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--format", choices=("json", "csv"), default="json")
    p_cmp.add_argument("--seed", type=int, default=None)
    p_cmp.add_argument("--threads", type=int, default=1)
    p_cmp.set_defaults(fn=_cmd_compare)

    p_list = sub.add_parser("list-models", help="print the model catalog")
    p_list.set_defaults(fn=_cmd_list_models)

    p_self = sub.add_parser("self-test", help="run the fast check battery")
    p_self.set_defaults(fn=_cmd_self_test)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ArgumentError, CapabilityError, ConvergenceError,
            InsufficientSamplingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
