"""Config-driven experiment runner.

Every command reads a JSON config (validated against a strict schema), writes
CSV/JSON artefacts into ``--out`` and exits with 0 (pass), 1 (an invariant
was violated) or 2 (bad config).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import subprocess
import sys
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
from scipy.integrate import solve_ivp

from . import __version__
from .bounds import (
    beta_sum_estimates,
    beta_sum_remainder,
    binomial_sandwich,
    exponential_envelope,
    moment_production_envelope,
    ode_comparison_Y,
    stability_tau_constant,
    stability_tau_envelope,
    stationary_phase_check,
    verify_ode_comparison,
    envelope_rows,
    write_envelope_csv,
)
from .dsmc import (
    MaxwellianSource,
    MehlerSource,
    SimConfig,
    SimState,
    conservation_drift,
    moment_standard_error,
    run,
    simulate,
    standard_error,
)
from .kernel import (
    KernelAssumptionError,
    constants,
    epsilon_p,
    hard_spheres,
    inverse_power_law,
    spec_from_document,
    truncate,
)
from .measure import (
    DiscreteMeasure,
    bracket,
    default_dictionary,
    dictionary_distance,
    exponential_moment,
    from_csv,
    from_document,
    moment_norm,
    to_document,
)
from .mehler import SearchCapExceeded, mehler_report, mehler_truncate, moment_defects

log = logging.getLogger("measboltz")

EXIT_PASS, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2
CONSERVATION_TOL = 1e-9
MOMENT_DEFECT_TOL = 1e-12


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- schemas

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_ANGULAR = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "constant"}, "value": {"type": "number", "minimum": 0}},
            "required": ["kind", "value"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "inverse_power"}, "s": {"type": "number", "exclusiveMinimum": 5}, "c_prime": _POS},
            "required": ["kind", "s"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "table"},
                "t": {"type": "array", "items": _NUM, "minItems": 2},
                "b": {"type": "array", "items": _NUM, "minItems": 2},
                "singular_exponent": {"type": ["number", "null"]},
            },
            "required": ["kind", "t", "b"],
            "additionalProperties": False,
        },
    ]
}
_TRUNC = {"type": ["number", "null"], "exclusiveMinimum": 0}
KERNEL_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "preset": {"enum": ["hard_spheres", "inverse_power"]},
                "N": {"type": "integer", "minimum": 2},
                "s": {"type": "number", "exclusiveMinimum": 5},
                "c_prime": _POS,
                "truncation": _TRUNC,
            },
            "required": ["preset"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "N": {"type": "integer", "minimum": 2},
                "gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 2},
                "angular": _ANGULAR,
                "truncation": _TRUNC,
            },
            "required": ["N", "gamma", "angular"],
            "additionalProperties": False,
        },
    ]
}
MEASURE_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "dimension": {"type": "integer", "minimum": 1},
                "atoms": {"type": "array", "items": {"type": "array", "items": _NUM}, "minItems": 1},
            },
            "required": ["dimension", "atoms"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"path": {"type": "string"}},
            "required": ["path"],
            "additionalProperties": False,
        },
    ]
}
SOURCE_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "atomic"}, "measure": MEASURE_SCHEMA},
            "required": ["kind", "measure"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "mehler"}, "measure": MEASURE_SCHEMA, "n": _POS},
            "required": ["kind", "measure", "n"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "maxwellian"},
                "dimension": {"type": "integer", "minimum": 1},
                "rho": _POS,
                "mean": {"type": "array", "items": _NUM},
                "temperature": _POS,
            },
            "required": ["kind", "dimension", "rho", "temperature"],
            "additionalProperties": False,
        },
    ]
}
_SEED = {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1}
_ORDERS = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}
_RUN_PROPS = {
    "kernel": KERNEL_SCHEMA,
    "source": SOURCE_SCHEMA,
    "particle_count": {"type": "integer", "minimum": 2},
    "t_end": {"type": "number", "minimum": 0},
    "dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "seed": _SEED,
    "record_moments": _ORDERS,
    "record_interval": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "majorant_refresh": {"type": "integer", "minimum": 1},
    "threads": {"type": "integer", "minimum": 1},
    "majorant_a0": {"type": ["number", "null"], "exclusiveMinimum": 0},
}
SIMULATE_SCHEMA = {
    "type": "object",
    "properties": dict(_RUN_PROPS, envelope={"type": "boolean"}, exponential_s0={"type": "number", "exclusiveMinimum": 1}),
    "required": ["kernel", "source", "particle_count", "t_end"],
    "additionalProperties": False,
}
_TIMES = {
    "oneOf": [
        {"type": "array", "items": _POS, "minItems": 1},
        {
            "type": "object",
            "properties": {"start": _POS, "stop": _POS, "count": {"type": "integer", "minimum": 1}},
            "required": ["start", "stop", "count"],
            "additionalProperties": False,
        },
    ]
}
BOUNDS_SCHEMA = {
    "type": "object",
    "properties": {
        "kernel": KERNEL_SCHEMA,
        "measure": MEASURE_SCHEMA,
        "times": _TIMES,
        "moments": {"type": "array", "items": {"type": "number", "minimum": 2}},
        "exponential_s0": {"type": ["number", "null"], "exclusiveMinimum": 1},
        "stability": {
            "type": "object",
            "properties": {"tau": _POS, "d_tau": {"type": "number", "minimum": 0}},
            "required": ["tau", "d_tau"],
            "additionalProperties": False,
        },
        "seed": _SEED,
        "threads": {"type": "integer", "minimum": 1},
    },
    "required": ["kernel", "measure", "times"],
    "additionalProperties": False,
}
MEHLER_SCHEMA = {
    "type": "object",
    "properties": {
        "measure": MEASURE_SCHEMA,
        "n_values": {"type": "array", "items": _POS, "minItems": 1},
        "truncate": {"type": "boolean"},
        "seed": _SEED,
        "threads": {"type": "integer", "minimum": 1},
    },
    "required": ["measure", "n_values"],
    "additionalProperties": False,
}
TOOLBOX_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": _SEED,
        "threads": {"type": "integer", "minimum": 1},
        "kernel": KERNEL_SCHEMA,
        "sandwich_samples": {"type": "integer", "minimum": 1},
        "sandwich_p_max": {"type": "number", "minimum": 1},
        "p_max": {"type": "integer", "minimum": 3},
        "a_values": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 1}},
        "eps3_expected": {"type": ["number", "null"]},
        "lambdas": {"type": "array", "items": _POS, "minItems": 1},
    },
    "additionalProperties": False,
}
STABILITY_SCHEMA = {
    "type": "object",
    "properties": dict(
        _RUN_PROPS,
        tau=_POS,
        perturbation={"type": "number", "minimum": 0},
        perturbed_fraction={"type": "number", "minimum": 0, "maximum": 1},
    ),
    "required": ["kernel", "source", "particle_count", "t_end"],
    "additionalProperties": False,
}
SCHEMAS = {
    "simulate": SIMULATE_SCHEMA,
    "bounds": BOUNDS_SCHEMA,
    "mehler": MEHLER_SCHEMA,
    "toolbox": TOOLBOX_SCHEMA,
    "stability": STABILITY_SCHEMA,
}


# ---------------------------------------------------------------- config resolution


def load_config(path: Path, command: str, seed: Optional[int] = None, threads: Optional[int] = None) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if seed is not None:
        cfg["seed"] = seed
    if threads is not None:
        cfg["threads"] = threads
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config rejected at {'/'.join(map(str, exc.absolute_path)) or '<root>'}: {exc.message}") from exc
    cfg["_base"] = str(Path(path).resolve().parent)
    return cfg


def build_kernel(doc: dict):
    try:
        if "preset" in doc:
            if doc["preset"] == "hard_spheres":
                spec = hard_spheres(doc.get("N", 3))
            else:
                if "s" not in doc:
                    raise ConfigError("inverse_power preset needs 's'")
                spec = inverse_power_law(doc["s"], doc.get("N", 3), doc.get("c_prime", 1.0))
            return truncate(spec, doc["truncation"]) if doc.get("truncation") is not None else spec
        return spec_from_document(doc)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid kernel: {exc}") from exc


def build_measure(doc: dict, base: str) -> DiscreteMeasure:
    try:
        if "path" in doc:
            p = Path(base) / doc["path"]
            text = p.read_text()
            return from_csv(text) if p.suffix.lower() == ".csv" else from_document(json.loads(text))
        return from_document(doc)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid measure: {exc}") from exc


def build_source(doc: dict, base: str):
    kind = doc["kind"]
    if kind == "maxwellian":
        mean = doc.get("mean", [0.0] * doc["dimension"])
        if len(mean) != doc["dimension"]:
            raise ConfigError("maxwellian mean has the wrong dimension")
        return MaxwellianSource(doc["dimension"], doc["rho"], tuple(mean), doc["temperature"])
    mu = build_measure(doc["measure"], base)
    return MehlerSource(mu, doc["n"]) if kind == "mehler" else mu


def sim_config(cfg: dict, kernel) -> SimConfig:
    try:
        return SimConfig(
            kernel=kernel,
            particle_count=cfg["particle_count"],
            t_end=cfg["t_end"],
            seed=cfg.get("seed", 0),
            dt=cfg.get("dt"),
            record_moments=tuple(cfg.get("record_moments", (2.0, 3.0, 4.0))),
            record_interval=cfg.get("record_interval"),
            majorant_refresh=cfg.get("majorant_refresh", 1),
            threads=cfg.get("threads", 1),
            envelope=cfg.get("envelope", False),
            majorant_a0=cfg.get("majorant_a0"),
        )
    except (ValueError, KernelAssumptionError) as exc:
        raise ConfigError(str(exc)) from exc


def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _public(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- simulate


def cmd_simulate(cfg: dict, out: Path) -> int:
    """Run the particle simulation; write moments.csv, state_final.json and run_report.json."""
    kernel = build_kernel(cfg["kernel"])
    config = sim_config(cfg, kernel)
    source = build_source(cfg["source"], cfg["_base"])
    series = run(source, config)
    (out / "moments.csv").write_text(series.to_csv())
    report = {"build": build_id(), "config": _public(cfg), "violations": []}
    if series.analytic_dirac:
        mu = source.measure if isinstance(source, MehlerSource) else source
        support = mu.velocities[mu.weights > 0][0]
        _write_json(out / "state_final.json", to_document(DiscreteMeasure(mu.dimension, support[None, :], [mu.mass])))
        report["stationary"] = "analytic stationary Dirac"
        _write_json(out / "run_report.json", report)
        return EXIT_PASS
    final: SimState = series.final_state
    initial: SimState = series.initial_state
    _write_json(out / "state_final.json", to_document(final.measure()))
    drift = conservation_drift(initial, final)
    report["conservation"] = drift
    report["acceptance"] = {
        "candidates": final.candidates,
        "accepted": final.accepted,
        "ratio": final.accepted / final.candidates if final.candidates else None,
        "steps": final.step_index,
    }
    if drift["mass"] != 0.0 or drift["momentum"] > CONSERVATION_TOL or drift["energy"] > CONSERVATION_TOL:
        report["violations"].append({"check": "conservation", "drift": drift})
    if config.envelope:
        # s = 2 is an equality (energy conservation), so allow the conservation rounding budget
        bad = [r for r in series.rows if r[3] is not None and r[2] > r[3] * (1.0 + CONSERVATION_TOL)]
        report["envelope_violations"] = len(bad)
        report["violations"] += [{"check": "moment_production", "t": r[0], "s": r[1], "moment": r[2], "envelope": r[3]} for r in bad]
    if cfg.get("exponential_s0") is not None:
        report["exponential"] = _exponential_check(series, config, cfg["exponential_s0"])
        if not report["exponential"]["pass"]:
            report["violations"].append({"check": "exponential_moment", "worst": report["exponential"]["worst"]})
    if isinstance(source, MaxwellianSource):
        s0 = moment_standard_error(initial, 4.0)
        m0, m1 = initial.moment(4.0), final.moment(4.0)
        ok = abs(m1 - m0) <= 4.0 * s0
        report["stationary"] = "pass" if ok else "fail"
        report["stationarity"] = {"s": 4.0, "initial": m0, "final": m1, "standard_error": s0}
        if not ok:
            report["violations"].append({"check": "stationarity", **report["stationarity"]})
    _write_json(out / "run_report.json", report)
    return EXIT_VIOLATION if report["violations"] else EXIT_PASS


def _exponential_check(series, config: SimConfig, s0: float) -> dict:
    """Re-run the trajectory and test the exponential moment with ``alpha(t)`` at each record time."""
    # the series only stores polynomial moments, so replay the deterministic run
    state = series.initial_state.copy()
    a2 = constants(config.kernel).A2
    env = exponential_envelope(state.mass, state.moment(2.0), a2, config.kernel.gamma, s0)
    rows = []
    for t in series.times():
        if t > state.time:
            simulate(state, config, float(t))
        a = env.evaluate(float(t))
        vals = np.exp(a * bracket(state.velocities, config.kernel.gamma))
        value = exponential_moment(state.measure(), a, config.kernel.gamma)
        se = standard_error(state, vals)
        bound = env.constants["bound"]
        rows.append({"t": float(t), "alpha": a, "value": value, "limit": bound + 4.0 * se, "ok": value <= bound + 4.0 * se})
    worst = max(rows, key=lambda r: r["value"] - r["limit"])
    return {"s0": s0, "pass": all(r["ok"] for r in rows), "worst": worst, "rows": len(rows)}


# ---------------------------------------------------------------- bounds


def _time_grid(doc) -> np.ndarray:
    if isinstance(doc, list):
        return np.asarray(doc, dtype=float)
    if doc["stop"] < doc["start"]:
        raise ConfigError("times.stop must not precede times.start")
    return np.linspace(doc["start"], doc["stop"], doc["count"])


def cmd_bounds(cfg: dict, out: Path) -> int:
    """Evaluate moment, exponential and stability envelopes on a time grid; write envelopes.csv."""
    kernel = build_kernel(cfg["kernel"])
    mu = build_measure(cfg["measure"], cfg["_base"])
    times = _time_grid(cfg["times"])
    c = constants(kernel)
    mass, e2 = mu.mass, moment_norm(mu, 2.0)
    envs = [(s, moment_production_envelope(mass, e2, c.A2, kernel.gamma, s)) for s in cfg.get("moments", [2.0, 3.0, 4.0])]
    if cfg.get("exponential_s0") is not None:
        s0 = cfg["exponential_s0"]
        envs.append((s0, exponential_envelope(mass, e2, c.A2, kernel.gamma, s0)))
    if "stability" in cfg:
        st = cfg["stability"]
        K = moment_production_envelope(mass, e2, c.A2, kernel.gamma, 2.0 + kernel.gamma).constants["K_s"]
        envs.append((st["tau"], stability_tau_envelope(c.A0, K, e2, st["tau"], st["d_tau"])))
        times_used = times[times >= st["tau"]]
        if times_used.size < times.size:
            log.info("stability envelope rows start at tau=%g", st["tau"])
    rows = envelope_rows(envs, times)
    if "stability" in cfg:
        rows = [r for r in rows if r[1] != "stability_tau" or r[0] >= cfg["stability"]["tau"]]
    write_envelope_csv(out / "envelopes.csv", rows)
    return EXIT_PASS


# ---------------------------------------------------------------- mehler


def cmd_mehler(cfg: dict, out: Path) -> int:
    """Regularise a measure at several indices; write mehler_report.json."""
    mu = build_measure(cfg["measure"], cfg["_base"])
    reports, status = [], EXIT_PASS
    try:
        for n in cfg["n_values"]:
            rep = mehler_report(mu, n)
            scale = max(1.0, moment_norm(mu, 2.0))
            rep["moments_exact"] = all(v <= MOMENT_DEFECT_TOL * scale for v in moment_defects(mu, n).values())
            if not rep["moments_exact"]:
                status = EXIT_VIOLATION
            if cfg.get("truncate"):
                try:
                    tr = mehler_truncate(mu, n)
                    rep["truncation"] = {"K": tr.K, "defect": tr.defect, "target": tr.target, "error_estimate": tr.error_estimate}
                except SearchCapExceeded as exc:
                    rep["truncation"] = {"error": str(exc)}
            reports.append(rep)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    worst = [max(d["value"] for d in r["weak_defects"]) for r in reports]
    order = np.argsort([r["n"] for r in reports])
    ws = [worst[i] for i in order]
    summary = {"n": [reports[i]["n"] for i in order], "max_weak_defect": ws, "decreasing": all(a > b for a, b in zip(ws, ws[1:]))}
    _write_json(out / "mehler_report.json", reports + [{"summary": summary}])
    return status


# ---------------------------------------------------------------- toolbox


def _check(name: str, ok: bool, detail: dict, instance=None) -> dict:
    rec = {"name": name, "pass": bool(ok), "detail": detail}
    if not ok and instance is not None:
        rec["instance"] = instance
    return rec


def toolbox_sweep(params: dict) -> list[dict]:
    """Numerical checks of the elementary inequalities behind the moment estimates."""
    rng = np.random.default_rng(params.get("seed", 0))
    results = []

    # binomial sandwich on random (p, x, y)
    samples = params.get("sandwich_samples", 10000)
    pmax = params.get("sandwich_p_max", 40.0)
    ps = rng.uniform(1.0, pmax, samples)
    xs, ys = rng.uniform(0.0, 3.0, samples), rng.uniform(0.0, 3.0, samples)
    failure = None
    for p, x, y in zip(ps, xs, ys):
        lo, hi = binomial_sandwich(p, x, y)
        mid = (x + y) ** p
        if not (lo <= mid * (1 + 1e-12) and mid <= hi * (1 + 1e-12)):
            failure = {"p": p, "x": x, "y": y, "lower": lo, "value": mid, "upper": hi}
            break
    results.append(_check("binomial_sandwich", failure is None, {"samples": samples}, failure))

    # beta sum against 4 log p
    p_max = params.get("p_max", 100)
    failure, worst = None, 0.0
    for p in range(3, p_max + 1):
        s, bound = beta_sum_estimates(p, 1.0)
        worst = max(worst, s / bound)
        if s > bound:
            failure = {"p": p, "sum": s, "bound": bound}
            break
    results.append(_check("beta_sum_log", failure is None, {"max_ratio": worst}, failure))

    # shapes for a > 1: ratios stay bounded (no growth in the upper half of the p range)
    half = (3 + p_max) // 2
    for a in params.get("a_values", [1.5, 2.0, 3.0]):
        for label, fn in (("beta_sum_power", beta_sum_estimates), ("beta_sum_remainder", beta_sum_remainder)):
            ratios = []
            for p in range(3, p_max + 1):
                s, shape = fn(p, a)
                ratios.append(s / shape)
            low, high = max(ratios[: half - 3]), max(ratios[half - 3 :])
            ok = all(math.isfinite(r) for r in ratios) and high <= low
            results.append(_check(f"{label}_a{a:g}", ok, {"sup_low_p": low, "sup_high_p": high}, {"a": a} if not ok else None))

    # cutoff remainder
    kernel = build_kernel(params.get("kernel", {"preset": "hard_spheres"}))
    c = constants(kernel)
    eps = [epsilon_p(kernel, p) for p in range(3, p_max + 1)]
    bad = [(p, e) for p, e in zip(range(3, p_max + 1), eps) if e > 1.0]
    results.append(_check("eps_p_le_one", not bad, {"max": max(eps)}, bad[:1] or None))
    bad = [(p, a, b) for p, a, b in zip(range(3, p_max + 1), eps, eps[1:]) if b >= a]
    results.append(_check("eps_p_decreasing", not bad, {"last": eps[-1]}, bad[:1] or None))
    bad = [(p, e, 16 * c.A0 / (c.A2 * p)) for p, e in zip(range(3, p_max + 1), eps) if e > 16 * c.A0 / (c.A2 * p)]
    results.append(_check("eps_p_mass_ratio_bound", not bad, {"A0": c.A0, "A2": c.A2}, bad[:1] or None))
    expected = params.get("eps3_expected", 11.0 / 15.0 if "kernel" not in params else None)
    if expected is not None:
        ok = abs(eps[0] - expected) <= 1e-9
        results.append(_check("eps_3_value", ok, {"eps_3": eps[0], "expected": expected}, {"eps_3": eps[0]} if not ok else None))

    # ODE comparison against direct integration of the extremal equation
    failure = None
    for A, B, e, u0 in ((1.0, 1.0, 0.5, 10.0), (2.0, 0.5, 1.0, 1e3), (0.5, 3.0, 0.25, 0.1), (1.0, 1.0, 2.0, 1e4)):
        sol = solve_ivp(lambda t, u: A * u - B * np.abs(u) ** (1 + e), (0.0, 5.0), [u0], rtol=1e-11, atol=1e-13, dense_output=True)
        ts = np.linspace(0.01, 5.0, 200)
        us = sol.sol(ts)[0]
        if not verify_ode_comparison(ts, us, A, B, e):
            k = int(np.argmax(us - np.array([ode_comparison_Y(A, B, e, t) for t in ts])))
            failure = {"A": A, "B": B, "eps": e, "u0": u0, "t": ts[k], "u": us[k]}
            break
    results.append(_check("ode_comparison", failure is None, {"cases": 4}, failure))

    # stationary phase in cases with closed-form asymptotics
    lambdas = params.get("lambdas", [1000.0])
    cases = (
        ("linear_phase", 1.0, lambda x: 1.0, lambda x: -x, 1.0, -1.0),
        ("sqrt_weight", 0.5, lambda x: math.cos(x), lambda x: -x - x * x, 1.0, -1.0),
        ("cubic_weight", 3.0, lambda x: math.exp(-x), lambda x: -2.0 * math.sin(x), 1.0, -2.0),
    )
    for name, alpha, g, S, R, dS0 in cases:
        rows = stationary_phase_check(alpha, g, S, R, lambdas, dS0)
        worst = max(abs(r[3] - 1.0) for r in rows)
        results.append(_check(f"stationary_phase_{name}", worst <= 0.01, {"max_rel_dev": worst}, {"rows": rows} if worst > 0.01 else None))
    return results


def cmd_toolbox(cfg: dict, out: Path) -> int:
    """Sweep the analytical inequalities; write toolbox.json and exit 1 on any failure."""
    results = toolbox_sweep(cfg)
    _write_json(out / "toolbox.json", results)
    failed = [r for r in results if not r["pass"]]
    for r in failed:
        print(f"FAIL {r['name']}: {json.dumps(r.get('instance'), default=float)}", file=sys.stderr)
    return EXIT_VIOLATION if failed else EXIT_PASS


# ---------------------------------------------------------------- stability


def perturb(state: SimState, fraction: float, factor: float, seed: int) -> SimState:
    """Copy of ``state`` with a seeded ``fraction`` of particles scaled by ``1 + factor``."""
    out = state.copy()
    k = int(math.ceil(fraction * state.count)) if factor else 0
    if k:
        idx = np.random.default_rng(np.random.SeedSequence([seed, 2 ** 33])).choice(state.count, size=k, replace=False)
        out.velocities[idx] *= 1.0 + factor
        out.refresh()
    return out


def stability_run(cfg: dict) -> dict:
    kernel = build_kernel(cfg["kernel"])
    config = sim_config(cfg, kernel)
    tau = cfg.get("tau", 1.0)
    if config.t_end < tau:
        raise ConfigError("t_end must be at least tau")
    source = build_source(cfg["source"], cfg["_base"])
    series = run(source, SimConfig(kernel, config.particle_count, tau, config.seed, config.dt, (2.0,), None, config.majorant_refresh, config.threads, majorant_a0=config.majorant_a0))
    if series.analytic_dirac:
        raise ConfigError("Dirac initial data are stationary; nothing to compare")
    F0 = series.initial_state
    F = series.final_state
    G = perturb(F, cfg.get("perturbed_fraction", 0.01), cfg.get("perturbation", 0.01), config.seed)
    c = constants(kernel)
    e2 = F0.moment(2.0)
    K = moment_production_envelope(F0.mass, e2, c.A2, kernel.gamma, 2.0 + kernel.gamma).constants["K_s"]
    d_tau = moment_norm(F.measure() - G.measure(), 2.0)
    c_tau = stability_tau_constant(c.A0, K, e2, tau)
    dictionary = default_dictionary(kernel.dimension)
    times = [t for t in np.linspace(tau, config.t_end, 11)]
    rows = []
    for t in times:
        if t > F.time:
            simulate(F, config, float(t))
            simulate(G, config, float(t))
        dist = dictionary_distance(F.measure(), G.measure(), dictionary)
        bound = stability_tau_envelope(c.A0, K, e2, tau, d_tau).evaluate(float(t)) if d_tau > 0 else 0.0
        ok = dist <= bound * (1 + 1e-12) if d_tau > 0 else dist == 0.0
        rows.append({"t": float(t), "distance": dist, "envelope": bound if math.isfinite(bound) else "inf", "ok": ok})
    return {"tau": tau, "d_tau": d_tau, "c_tau": c_tau, "K": K, "rows": rows, "pass": all(r["ok"] for r in rows)}


def cmd_stability(cfg: dict, out: Path) -> int:
    """Compare a run with a perturbed copy after tau; write stability.csv and stability_report.json."""
    res = stability_run(cfg)
    with open(out / "stability.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "distance", "envelope"))
        for r in res["rows"]:
            w.writerow([repr(r["t"]), repr(r["distance"]), str(r["envelope"]) if r["envelope"] == "inf" else repr(r["envelope"])])
    _write_json(out / "stability_report.json", {"build": build_id(), "config": _public(cfg), **res})
    return EXIT_PASS if res["pass"] else EXIT_VIOLATION


# ---------------------------------------------------------------- entry point

COMMANDS = {
    "simulate": cmd_simulate,
    "bounds": cmd_bounds,
    "mehler": cmd_mehler,
    "toolbox": cmd_toolbox,
    "stability": cmd_stability,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="measboltz", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress lines")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        p = sub.add_parser(name, help=func.__doc__.splitlines()[0] if func.__doc__ else None)
        p.add_argument("--config", required=True, type=Path, help="JSON config file")
        p.add_argument("--out", required=True, type=Path, help="output directory (created if missing)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, help="override the partition/thread count")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.command, args.seed, args.threads)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KernelAssumptionError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
