"""Experiment drivers behind the ``couette`` subcommands.

Every command returns a plain dict (also written to disk under
``config.out``). Each output file carries the resolved configuration:
JSON files under the ``config`` key, CSV files as a leading ``# config=``
comment line.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from pathlib import Path

import numpy as np

from .. import kmc, moments, oracle, stationary
from ..lattice import Params
from .config import ExperimentConfig

log = logging.getLogger(__name__)

PROFILE_COLUMNS = ["k", "p_hole", "p_zero", "p_v", "se_hole", "se_zero", "se_v"]
SWEEP_COLUMNS = ["S", "K", "u", "mu_v", "g_K", "abs_err"]


def _config_line(config: ExperimentConfig) -> str:
    return "config=" + json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))


def _write(config: ExperimentConfig, name: str, text: str) -> Path:
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / name
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {Path(config.out) / name}: {exc}") from exc
    return path


def _write_json(config: ExperimentConfig, name: str, payload: dict) -> Path:
    doc = {"config": config.to_dict(), **payload}
    return _write(config, name, json.dumps(doc, indent=2) + "\n")


def _csv(config: ExperimentConfig, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {_config_line(config)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x))


def warn_preconditions(params: Params) -> list[str]:
    notes = params.precondition_warnings()
    for note in notes:
        log.warning(note)
    return notes


def _closed_form(params: Params):
    """Closed-form stationary profile when the formulas apply, else ``None``."""
    if params.lam > 0 and params.beta > 0:
        return stationary.explicit_profile(params)
    if params.beta > 0 or params.eps > 0:
        return stationary.solve_stationary_system(params)
    return None


# -- simulate ---------------------------------------------------------------

def cmd_simulate(config: ExperimentConfig) -> dict:
    params, r = config.params, config.run
    warn_preconditions(params)
    report = kmc.run_replicas(
        params, r.t_burn, r.t_measure, r.replicas, r.seed,
        n_batches=r.n_batches, split=r.split, workers=r.workers,
    )
    result = report.to_dict()
    result["seed"] = r.seed
    result["replica_seeds"] = "init=[seed, r, 0], dynamics=[seed, r, 1]"
    if report.measured:
        ref = _closed_form(params.replace(rho=report.rho_hat))
        if ref is not None:
            se = report.se[:, 2]
            diff = report.profile[:, 2] - ref.mu_v
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(se > 0, np.abs(diff) / se, np.where(diff == 0, 0.0, np.inf))
            result["stationary_check"] = {
                "rho": report.rho_hat,
                "mu_v": ref.mu_v.tolist(),
                "max_abs": float(np.abs(diff).max()),
                "max_z": float(z.max()),
                "within_3_se": bool(z.max() <= 3.0),
            }
        rows = []
        p, se = report.profile, report.se
        for k in range(p.shape[0]):
            rows.append([k] + [_fmt(v) for v in p[k]] + [_fmt(v) for v in se[k]])
        _write(config, "simulate_profile.csv", _csv(config, PROFILE_COLUMNS, rows))
    _write_json(config, "simulate.json", result)
    return result


# -- ode --------------------------------------------------------------------

def cmd_ode(config: ExperimentConfig) -> dict:
    params, r = config.params, config.run
    warn_preconditions(params)
    initial = moments.product_profile(params, r.split)
    times = [r.t_end * i / r.samples for i in range(1, r.samples)]
    traj = moments.integrate(initial, params, r.t_end, config.resolved_dt(), times)
    final = traj[-1]
    result = {
        "t_end": r.t_end,
        "dt": config.resolved_dt(),
        "residual": moments.residual(final, params),
        "hole_sum_drift": abs(final.p_hole.sum() - initial.p_hole.sum()),
        "final": {"p_hole": final.p_hole.tolist(), "p_v": final.p_v.tolist()},
    }
    ref = _closed_form(params)
    if ref is not None:
        result["max_abs_vs_stationary"] = float(np.abs(final.p_v - ref.mu_v).max())
    rows = [
        [_fmt(p.t), k, _fmt(h), _fmt(z), _fmt(v)]
        for p in traj
        for k, (h, z, v) in enumerate(zip(p.p_hole, p.p_zero, p.p_v))
    ]
    _write(config, "ode_trajectory.csv", _csv(config, ["t", "k", "p_hole", "p_zero", "p_v"], rows))
    _write_json(config, "ode.json", result)
    return result


# -- exact ------------------------------------------------------------------

def cmd_exact(config: ExperimentConfig) -> dict:
    params, r = config.params, config.run
    gen = oracle.build_generator(params)
    init = moments.product_profile(params, r.split)
    pi0 = oracle.product_law(init.p_hole, init.p_v)
    times = [r.t_end * i / r.samples for i in range(r.samples + 1)]
    traj, pi, t_prev = [], pi0, 0.0
    for t in times:
        pi = oracle.evolve(pi, gen, t - t_prev)
        t_prev = t
        traj.append(oracle.marginals(pi, params.S, t))
    result = {"t_end": r.t_end, "n_states": gen.n_states}
    try:
        limit = oracle.marginals(oracle.stationary_mixture(gen, pi0), params.S)
        result["stationary"] = {"p_hole": limit.p_hole.tolist(), "p_v": limit.p_v.tolist()}
    except oracle.ReducibleSectorError as exc:
        result["stationary"] = None
        result["stationary_error"] = str(exc)
    rows = [
        [_fmt(p.t), k, _fmt(h), _fmt(z), _fmt(v)]
        for p in traj
        for k, (h, z, v) in enumerate(zip(p.p_hole, p.p_zero, p.p_v))
    ]
    _write(config, "exact_trajectory.csv", _csv(config, ["t", "k", "p_hole", "p_zero", "p_v"], rows))
    _write_json(config, "exact.json", result)
    return result


# -- stationary -------------------------------------------------------------

def cmd_stationary(config: ExperimentConfig) -> dict:
    params = config.params
    warn_preconditions(params)
    prof = _closed_form(params)
    if prof is None:
        prof = stationary.solve_stationary_system(params)  # raises with the reason
    report = prof.regime_report()
    report["heuristic_thresholds"] = {"K_laminar": stationary.K_LAMINAR, "K_turbulent": stationary.K_TURBULENT}
    text = prof.to_csv(comment=_config_line(config))
    _write(config, "stationary_profile.csv", text)
    _write_json(config, "stationary_regime.json", report)
    return {"regime": report, "mu_v": prof.mu_v.tolist()}


# -- sweep ------------------------------------------------------------------

def sweep_eps(config: ExperimentConfig, S: int, K) -> float:
    rule, lam = config.sweep.eps_rule, config.params.lam
    if rule == "fixed":
        return config.params.eps
    if rule == "K-scaling":
        return stationary.eps_for_K(K, S, lam)
    return 0.5 * lam * K * K * S ** (-config.sweep.exponent)


def cmd_sweep(config: ExperimentConfig) -> dict:
    base, spec = config.params, config.sweep
    warn_preconditions(base)
    Ks = [None] if spec.eps_rule == "fixed" else list(spec.K)
    rows, groups = [], []
    for K_label in Ks:
        sup = []
        for S in spec.S:
            params = base.replace(S=int(S), eps=sweep_eps(config, int(S), K_label))
            mu_v = stationary.explicit_profile(params).mu_v
            K = stationary.reynolds_analog(params)
            errs = []
            for u in spec.u:
                m = stationary.profile_at_fraction(mu_v, params.S, u)
                g = stationary.limit_profile_gK(K, base.rho, u) if K > 0 else base.rho * u
                errs.append(abs(m - g))
                rows.append([int(S), _fmt(K), _fmt(u), _fmt(m), _fmt(g), _fmt(abs(m - g))])
            sup.append(max(errs))
        decreasing = all(b < a for a, b in zip(sup, sup[1:]))
        groups.append({
            "K": K_label,
            "S": [int(s) for s in spec.S],
            "eps": [sweep_eps(config, int(s), K_label) for s in spec.S],
            "sup_err": sup,
            "sup_err_over_rho": [e / base.rho if base.rho > 0 else 0.0 for e in sup],
            "strictly_decreasing": decreasing,
        })
    _write(config, "sweep.csv", _csv(config, SWEEP_COLUMNS, rows))
    summary = {"eps_rule": spec.eps_rule, "groups": groups}
    _write_json(config, "sweep_summary.json", summary)
    return summary


# -- compare ----------------------------------------------------------------

def _method_estimate(name: str, config: ExperimentConfig, params: Params, cache: dict) -> dict:
    r = config.run
    if name == "kmc":
        rep = cache["kmc"]
        return {"p_hole": rep.profile[:, 0], "p_v": rep.profile[:, 2],
                "se_hole": rep.se[:, 0], "se_v": rep.se[:, 2], "stochastic": True}
    if name == "moments":
        init = moments.product_profile(params, r.split)
        final = moments.integrate(init, params, r.t_end, config.resolved_dt())[-1]
        return {"p_hole": final.p_hole, "p_v": final.p_v, "stochastic": False}
    if name == "stationary":
        prof = _closed_form(params)
        if prof is None:
            raise ValueError("no unique stationary profile for beta = eps = 0")
        return {"p_hole": prof.mu_hole, "p_v": prof.mu_v, "stochastic": False}
    if name == "oracle":
        gen = oracle.build_generator(params)
        init = moments.product_profile(params, r.split)
        pi = oracle.stationary_mixture(gen, oracle.product_law(init.p_hole, init.p_v))
        m = oracle.marginals(pi, params.S)
        return {"p_hole": m.p_hole, "p_v": m.p_v, "stochastic": False}
    raise ValueError(f"unknown method {name!r}")


def cmd_compare(config: ExperimentConfig) -> dict:
    params, r, spec = config.params, config.run, config.compare
    warn_preconditions(params)
    methods = list(dict.fromkeys(spec.methods))
    cache: dict = {}
    if "kmc" in methods:
        rep = kmc.run_replicas(params, r.t_burn, r.t_measure, r.replicas, r.seed,
                               n_batches=r.n_batches, split=r.split, workers=r.workers)
        cache["kmc"] = rep
        # deterministic methods are evaluated at the realized density of the runs
        params = params.replace(rho=rep.rho_hat)

    estimates, skipped = {}, {}
    for name in methods:
        try:
            estimates[name] = _method_estimate(name, config, params, cache)
        except (oracle.CapacityError, oracle.ReducibleSectorError, ValueError) as exc:
            skipped[name] = str(exc)

    pairs = []
    for a, b in itertools.combinations(estimates, 2):
        ea, eb = estimates[a], estimates[b]
        stochastic = ea["stochastic"] or eb["stochastic"]
        entry = {"methods": [a, b], "rule": "z-score" if stochastic else "abs"}
        diffs = np.concatenate([np.abs(ea["p_v"] - eb["p_v"]), np.abs(ea["p_hole"] - eb["p_hole"])])
        entry["max_abs"] = float(diffs.max())
        if stochastic:
            se = np.concatenate([
                np.hypot(ea.get("se_v", 0.0), eb.get("se_v", 0.0)) * np.ones(params.n_layers),
                np.hypot(ea.get("se_hole", 0.0), eb.get("se_hole", 0.0)) * np.ones(params.n_layers),
            ])
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(se > 0, diffs / se, np.where(diffs == 0, 0.0, np.inf))
            entry["max_z"] = float(z.max())
            entry["tolerance"] = spec.z_max
            entry["pass"] = bool(z.max() <= spec.z_max)
        else:
            entry["tolerance"] = spec.tol_abs
            entry["pass"] = bool(entry["max_abs"] <= spec.tol_abs)
        pairs.append(entry)

    table = []
    for k in range(params.n_layers):
        row = {"k": k}
        for name, est in estimates.items():
            row[f"{name}_p_v"] = float(est["p_v"][k])
            row[f"{name}_p_hole"] = float(est["p_hole"][k])
            if est["stochastic"]:
                row[f"{name}_se_v"] = float(est["se_v"][k])
        table.append(row)

    result = {
        "methods": list(estimates),
        "skipped": skipped,
        "rho": params.rho,
        "table": table,
        "pairs": pairs,
        "pass": all(p["pass"] for p in pairs),
    }
    _write_json(config, "compare.json", result)
    _write(config, "compare.txt", format_compare(result))
    return result


def format_compare(result: dict) -> str:
    lines = []
    names = result["methods"]
    header = "k".rjust(4) + "".join(f"{n + ' p_v':>22}" for n in names)
    lines.append(header)
    for row in result["table"]:
        line = f"{row['k']:>4}"
        for n in names:
            cell = f"{row[n + '_p_v']:.10f}"
            if n + "_se_v" in row:
                cell += f"±{row[n + '_se_v']:.1e}"
            line += f"{cell:>22}"
        lines.append(line)
    for name, reason in result["skipped"].items():
        lines.append(f"SKIP {name}: {reason}")
    for p in result["pairs"]:
        a, b = p["methods"]
        stat = f"max_z={p['max_z']:.3g}" if p["rule"] == "z-score" else f"max_abs={p['max_abs']:.3e}"
        verdict = "PASS" if p["pass"] else "FAIL"
        lines.append(f"{verdict} {a} vs {b}: {stat} (tolerance {p['tolerance']:g})")
    lines.append("OVERALL " + ("PASS" if result["pass"] else "FAIL"))
    return "\n".join(lines) + "\n"


COMMANDS = {
    "simulate": cmd_simulate,
    "ode": cmd_ode,
    "exact": cmd_exact,
    "stationary": cmd_stationary,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}
