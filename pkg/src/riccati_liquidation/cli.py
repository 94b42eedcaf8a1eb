"""Command-line driver: solve, simulate, sweep, verify and the built-in figure sweeps.

Exit status: 0 success, 1 numeric failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bounds, comparison, trajectory
from ._ode import IntegrationError
from .model import ConfigError, ModelParams, validate
from .riccati import (GridSpec, LadderWarning, PreconditionError, PSDViolation,
                      SolutionFileError, default_ladder, read_solution_csv, solve_limit,
                      solve_penalized, write_csv)

log = logging.getLogger("riccati_liquidation")

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2
SWEEP_VARIABLES = ("k", "lambda_1", "gamma_1", "rho_1", "gamma")


# ---------------------------------------------------------------------------
# configuration

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read config: {exc}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
    if not isinstance(cfg, dict):
        raise ConfigError(["config root must be an object"])
    return cfg


def params_from(cfg: dict) -> ModelParams:
    """Model parameters from either a bare model tree or ``{"model": ..., "experiment": ...}``."""
    model = cfg.get("model", cfg)
    params = ModelParams.from_config(model)
    bad = validate(params)
    if bad:
        raise ConfigError(bad)
    return params


def correlated_sigma(s1: float, s2: float, k: float) -> list:
    return [[s1 * s1, k * s1 * s2], [k * s1 * s2, s2 * s2]]


@dataclass
class ExperimentSpec:
    """One figure-style sweep: a base model plus one mutated field."""

    name: str
    base: dict
    variable: str
    values: list
    x0: list
    y0: list
    t0: float = 0.0
    vols: tuple = (1.0, 1.0)
    ladder: list | None = None
    steps: int = 2000
    delta: float | None = None

    def violations(self) -> list[str]:
        out = []
        if self.variable not in SWEEP_VARIABLES:
            out.append(f"sweep variable {self.variable!r} not one of {SWEEP_VARIABLES}")
        if not self.values:
            out.append("sweep values empty")
        elif not all(math.isfinite(float(v)) for v in self.values):
            out.append("sweep values not finite")
        d = int(self.base.get("d", 0))
        if self.variable == "k" and d != 2:
            out.append("sweep variable k needs d = 2")
        if self.variable == "gamma" and d != 1:
            out.append("sweep variable gamma needs d = 1")
        if len(self.x0) != d or len(self.y0) != d:
            out.append("initial state length does not match d")
        return out

    def apply(self, value: float) -> ModelParams:
        cfg = copy.deepcopy(self.base)
        v = float(value)
        if self.variable == "k":
            cfg["sigma"] = correlated_sigma(self.vols[0], self.vols[1], v)
        elif self.variable == "lambda_1":
            lam = np.asarray(cfg["lambda"], dtype=float).reshape(cfg["d"], cfg["d"])
            lam[0, 0] = v
            cfg["lambda"] = lam.tolist()
        elif self.variable in ("gamma_1", "gamma"):
            cfg["gamma"] = [v] + list(cfg["gamma"])[1:]
        elif self.variable == "rho_1":
            rho = cfg["rho"]
            if isinstance(rho, list) and rho and isinstance(rho[0], dict):
                cfg["rho"] = [dict(p, value=[v] + list(p["value"])[1:]) for p in rho]
            else:
                cfg["rho"] = [v] + list(rho)[1:]
        return params_from(cfg)

    @classmethod
    def from_config(cls, cfg: dict, name: str = "sweep") -> "ExperimentSpec":
        exp = cfg.get("experiment")
        if not isinstance(exp, dict) or "sweep" not in exp:
            raise ConfigError(["sweep needs an 'experiment' section with a 'sweep' entry"])
        model = cfg.get("model")
        if not isinstance(model, dict):
            raise ConfigError(["sweep needs a 'model' section"])
        d = int(model.get("d", 1))
        sweep = exp["sweep"]
        try:
            spec = cls(
                name=str(exp.get("name", name)),
                base=model,
                variable=str(sweep["variable"]),
                values=[float(v) for v in sweep["values"]],
                x0=[float(v) for v in exp.get("x0", [1.0] * d)],
                y0=[float(v) for v in exp.get("y0", [0.0] * d)],
                t0=float(exp.get("t0", 0.0)),
                vols=tuple(float(v) for v in exp.get("vols", (1.0, 1.0))),
                ladder=[float(v) for v in exp["ladder"]] if "ladder" in exp else None,
                steps=int(exp.get("steps", 2000)),
                delta=float(exp["delta"]) if "delta" in exp else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError([f"malformed experiment: {exc!r}"]) from exc
        bad = spec.violations()
        if bad:
            raise ConfigError(bad)
        return spec


def _ones(d):
    return [1.0] * d


def figure_specs() -> dict[str, ExperimentSpec]:
    """Built-in parameter sets of the five figure sweeps.

    Sweep values are artifact choices: k in {-0.5, 0, 0.5}, impact and
    resilience factors in {0.5, 1, 2, 4}; correlation k = 0 where unset.
    """
    def two(lam, gamma=(1.0, 1.0), rho=(1.0, 1.0)):
        return {"d": 2, "lambda": [[lam[0], 0.0], [0.0, lam[1]]], "gamma": list(gamma),
                "rho": list(rho), "sigma": correlated_sigma(1.0, 1.0, 0.0), "T": 1.0}

    grid4 = [0.5, 1.0, 2.0, 4.0]
    return {
        "fig1": ExperimentSpec("fig1", two((10.0, 1.0)), "k", [-0.5, 0.0, 0.5], _ones(2), [0.0, 0.0]),
        "fig2": ExperimentSpec("fig2", two((1.0, 1.0)), "lambda_1", grid4, _ones(2), [0.0, 0.0]),
        "fig3": ExperimentSpec("fig3", {"d": 1, "lambda": [[0.1]], "gamma": [1.0], "rho": [1.0],
                                        "sigma": [[0.0]], "T": 1.0},
                               "gamma", grid4, [1.0], [0.0]),
        "fig4": ExperimentSpec("fig4", two((1.0, 1.0)), "gamma_1", grid4, _ones(2), [0.0, 0.0]),
        "fig5": ExperimentSpec("fig5", two((0.1, 1.0)), "rho_1", grid4, _ones(2), [0.0, 0.0]),
    }


# ---------------------------------------------------------------------------
# runs

def _grid(params: ModelParams, steps: int) -> GridSpec:
    return GridSpec(0.0, params.horizon, base_steps=steps)


def _tag(v: float) -> str:
    return f"{v:g}".replace("-", "m").replace(".", "p")


def run_solve(params: ModelParams, n: float, steps: int, out: Path) -> dict:
    base = bounds.n0(params)
    if not n > base:
        raise PreconditionError(f"n = {n:g} must exceed n0 = {base:g}")
    try:
        start = bounds.t0(params)
    except ValueError:
        start = None
    sol = solve_penalized(params, n, _grid(params, steps))
    out.mkdir(parents=True, exist_ok=True)
    csv = out / f"solution_n{_tag(n)}.csv"
    digest = sol.to_csv(csv)
    summary = {"kind": "solution", "n": n, "n0": base, "T0": start, "alpha": bounds.alpha(params),
               "beta": bounds.beta(params), "diagnostics": sol.diagnostics, "file": csv.name,
               "sha256": digest, "config": params.to_config()}
    write_json(csv.with_suffix(".json"), summary)
    return summary


def _state(cfg: dict, d: int):
    exp = cfg.get("experiment", {}) if isinstance(cfg.get("experiment"), dict) else {}
    try:
        x0 = np.asarray(exp.get("x0", _ones(d)), dtype=float).reshape(d)
        y0 = np.asarray(exp.get("y0", [0.0] * d), dtype=float).reshape(d)
        t0 = float(exp.get("t0", 0.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"malformed initial state: {exc!r}"]) from exc
    return x0, y0, t0


def run_simulate(params: ModelParams, cfg: dict, n: float | None, ladder: list | None, steps: int,
                 delta: float, out: Path) -> dict:
    x0, y0, t_start = _state(cfg, params.d)
    grid = _grid(params, steps)
    out.mkdir(parents=True, exist_ok=True)
    if n is not None:
        base = bounds.n0(params)
        if not n > base:
            raise PreconditionError(f"n = {n:g} must exceed n0 = {base:g}")
        sol = solve_penalized(params, n, grid)
        traj = trajectory.simulate(params, sol, t_start, x0, y0)
        csv = out / f"trajectory_n{_tag(n)}.csv"
        summary = {"kind": "trajectory", "n": n, "cost": trajectory.cost(params, traj, n),
                   "value": trajectory.value_at(sol, t_start, x0, y0)}
    else:
        t_stop = params.horizon - delta
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", LadderWarning)
            lim = solve_limit(params, t_stop, ladder, grid=grid)
        top = solve_penalized(params, lim.n, grid)
        traj = trajectory.simulate(params, lim, t_start, x0, y0)
        csv = out / f"trajectory_limit_delta{_tag(delta)}.csv"
        summary = {"kind": "trajectory", "limit": True, "n_used": lim.n, "delta": delta,
                   "converged": lim.diagnostics["converged"],
                   "ladder_warning": [str(w.message) for w in caught],
                   "constrained_cost": trajectory.tail_estimated_cost(params, traj, top)}
    summary.update(file=csv.name, sha256=traj.to_csv(csv), x0=x0, y0=y0, t0=t_start,
                   initial_rate=traj.xi_path[0], final_position=traj.x_path[-1],
                   sign_changes=trajectory.sign_changes(traj),
                   dynamics_residual=trajectory.dynamics_residual(params, traj),
                   y_identity_residual=trajectory.y_identity_residual(params, traj))
    write_json(csv.with_suffix(".json"), summary)
    return summary


def _sweep_one(job) -> dict:
    spec, value, out = job
    row = {"value": float(value)}
    try:
        params = spec.apply(value)
        ladder = spec.ladder or default_ladder(params)
        n_top = float(ladder[-1])
        delta = spec.delta if spec.delta is not None else 0.05 * params.horizon
        sol = solve_penalized(params, n_top, _grid(params, spec.steps))
        traj = trajectory.simulate(params, sol, spec.t0, spec.x0, spec.y0,
                                   t_end=params.horizon - delta)
        csv = Path(out) / f"{spec.name}_{spec.variable}_{_tag(value)}_n{_tag(n_top)}.csv"
        row.update(status="ok", n=n_top, V=trajectory.value_at(sol, spec.t0, spec.x0, spec.y0),
                   xi0=traj.xi_path[0].tolist(), X_end=traj.x_path[-1].tolist(),
                   short_position=trajectory.sign_changes(traj)["short_position"],
                   file=csv.name, sha256=traj.to_csv(csv))
    except (ConfigError, PreconditionError) as exc:
        row.update(status=f"config error: {exc}")
    except (IntegrationError, PSDViolation, ValueError, np.linalg.LinAlgError) as exc:
        row.update(status=f"numeric failure: {exc}")
    return row


def run_sweep(spec: ExperimentSpec, out: Path, workers: int | None = None) -> dict:
    bad = spec.violations()
    if bad:
        raise ConfigError(bad)
    out.mkdir(parents=True, exist_ok=True)
    values = sorted(set(float(v) for v in spec.values))
    jobs = [(spec, v, str(out)) for v in values]
    workers = workers or min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    d = len(spec.x0)
    header = ([spec.variable, "n", "V"] + [f"xi0_{i + 1}" for i in range(d)]
              + [f"X_end_{i + 1}" for i in range(d)])
    table = [[r["value"], r["n"], r["V"]] + r["xi0"] + r["X_end"] for r in rows if r["status"] == "ok"]
    csv = out / f"{spec.name}_summary.csv"
    digest = write_csv(csv, header, np.asarray(table, dtype=float).reshape(len(table), len(header)))
    summary = {"kind": "sweep", "name": spec.name, "variable": spec.variable, "rows": rows,
               "file": csv.name, "sha256": digest, "failures": sum(r["status"] != "ok" for r in rows),
               "base": spec.base, "x0": spec.x0, "y0": spec.y0, "t0": spec.t0}
    write_json(csv.with_suffix(".json"), summary)
    return summary


def _family(name: str, passed: bool, **detail) -> dict:
    detail = {k: v for k, v in detail.items() if k != "verdict"}
    return {"family": name, **detail, "verdict": "pass" if passed else "fail"}


def run_verify(params: ModelParams, cfg: dict, n: float | None, ladder: list | None, steps: int,
               seed: int, out: Path, n_pairs: int = 30) -> dict:
    """Run every invariant family and write one machine-readable report."""
    x0, y0, t_start = _state(cfg, params.d)
    grid = _grid(params, steps)
    base = bounds.n0(params)
    ladder = ladder or default_ladder(params)
    n = n if n is not None else max(64.0, 2.0 * base)
    if not n > base or not ladder[0] > base:
        raise PreconditionError(f"penalty levels must exceed n0 = {base:g}")
    families = []
    sol = solve_penalized(params, n, grid)
    for rep in (bounds.check_envelope(sol), bounds.check_weighted_F(sol), bounds.check_key_inequality(sol)):
        families.append(_family(rep.name, rep.passed, **rep.summary()))

    rungs = [solve_penalized(params, m, grid) for m in ladder]
    samples = np.linspace(0.0, params.horizon, 50)
    mono = min(
        min(float(np.linalg.eigvalsh(hi.eval_matrix(t) - lo.eval_matrix(t))[0])
            / (1.0 + float(np.linalg.norm(hi.eval_matrix(t)))) for t in samples)
        for lo, hi in zip(rungs, rungs[1:]))
    families.append(_family("ladder_monotonicity", mono >= -1e-7, worst_margin=mono))

    decay = [bounds.e_decay_constant(r) for r in rungs]
    families.append(_family("e_decay", bounds.nonincreasing_with_slack(decay), constants=decay))

    fund = trajectory.check_fundamental_bound(params, sol, t_start)
    families.append(_family("fundamental", fund.passed, **fund.summary()))

    rng = np.random.default_rng(seed)
    worst, inapplicable = math.inf, 0
    for k in range(n_pairs):
        i1, i2 = comparison.random_ordered_pair(int(rng.integers(2**31)), 1 + k % 3)
        rep = comparison.check_comparison(i1, i2, np.linspace(0.0, 1.0, 101))
        inapplicable += rep.verdict == "inapplicable"
        worst = min(worst, rep.worst_margin)
    lo_i, hi_i = comparison.envelope_instances(params, n)
    true_i = comparison.riccati_instance(params, n)
    sandwich = [comparison.check_comparison(lo_i, true_i, sol.grid),
                comparison.check_comparison(true_i, hi_i, sol.grid)]
    families.append(_family("comparison", worst >= -1e-8 and inapplicable == 0
                            and all(r.verdict == "pass" for r in sandwich),
                            worst_margin=worst, pairs=n_pairs, seed=seed,
                            sandwich=[r.summary() for r in sandwich]))

    liq = trajectory.check_liquidation(params, rungs, t_start, x0, y0)
    families.append(_family("liquidation", liq.passed, **liq.summary()))

    traj = trajectory.simulate(params, sol, t_start, x0, y0)
    c, v = trajectory.cost(params, traj, n), trajectory.value_at(sol, t_start, x0, y0)
    rel = abs(c - v) / max(abs(v), 1e-300)
    families.append(_family("value_consistency", rel <= 2e-3, cost=c, value=v, relative_error=rel))

    res = {"y_identity": trajectory.y_identity_residual(params, traj),
           "strategy_identity": trajectory.strategy_identity_residual(params, sol, traj),
           "dynamics": trajectory.dynamics_residual(params, traj)}
    families.append(_family("path_identities", max(res.values()) <= 1e-5, **res))

    # the slack rule is applied past the pre-asymptotic rungs (n >= 4 n0)
    stats = trajectory.ladder_statistics(params, [r for r in rungs if r.n >= 4.0 * base], t_start, x0, y0)
    families.append(_family("boundedness", all(bounds.nonincreasing_with_slack(stats[k])
                                               for k in ("x_over_phi", "y_max", "xi_max")), **stats))

    passed = all(f["verdict"] == "pass" for f in families)
    try:
        start = bounds.t0(params)
    except ValueError:
        start = None
    report = {"kind": "verify", "verdict": "pass" if passed else "fail", "n": n, "ladder": ladder,
              "n0": base, "T0": start, "families": families, "config": params.to_config()}
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "verify.json", report)
    return report


# ---------------------------------------------------------------------------
# argument handling

def _ladder_arg(text: str | None) -> list | None:
    if text is None:
        return None
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError([f"--ladder: {exc}"]) from exc
    if not vals or sorted(vals) != vals or len(set(vals)) != len(vals):
        raise ConfigError(["--ladder must be a strictly increasing comma-separated list"])
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riccati-liquidation",
                                     description="Multi-asset optimal liquidation via matrix Riccati equations.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON model or experiment config")
        p.add_argument("--n", type=float, help="penalty level")
        p.add_argument("--ladder", help="comma-separated increasing penalty levels")
        p.add_argument("--steps", type=int, default=2000, help="base grid steps (default 2000)")
        p.add_argument("--delta", type=float, help="stop limit paths at T - delta (default 0.05 T)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0)

    common(sub.add_parser("solve", help="solve the penalized Riccati equation"))
    common(sub.add_parser("simulate", help="simulate the closed-loop strategy"))
    p = sub.add_parser("sweep", help="run a parameter sweep from an experiment config")
    common(p)
    p.add_argument("--workers", type=int)
    p = sub.add_parser("verify", help="run every invariant family")
    common(p)
    p.add_argument("--solution", help="also validate a stored solution CSV (checksum from its JSON sidecar)")
    p = sub.add_parser("figures", help="run the built-in figure sweeps")
    common(p, config=False)
    p.add_argument("--only", nargs="*", help="subset of fig1..fig5")
    p.add_argument("--workers", type=int)
    return parser


def _check_solution_file(path: str, params: ModelParams, n: float | None) -> dict:
    sidecar = Path(path).with_suffix(".json")
    digest, n_file = None, n
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        digest, n_file = meta.get("sha256"), meta.get("n", n)
    if n_file is None:
        raise ConfigError(["--solution needs --n or a JSON sidecar"])
    sol = read_solution_csv(path, params, float(n_file), sha256=digest)
    return {"file": str(path), "grid_points": len(sol.grid), "n": sol.n}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        if args.steps < 10:
            raise ConfigError(["--steps must be at least 10"])
        ladder = _ladder_arg(args.ladder)
        if args.command == "figures":
            names = args.only or list(figure_specs())
            specs = figure_specs()
            unknown = [n for n in names if n not in specs]
            if unknown:
                raise ConfigError([f"unknown figure {u!r}" for u in unknown])
            failures = 0
            for name in names:
                spec = specs[name]
                spec.steps, spec.ladder = args.steps, ladder
                spec.delta = args.delta
                res = run_sweep(spec, out / name, args.workers)
                failures += res["failures"]
                print(f"{name}: {len(res['rows'])} values -> {out / name}")
            return EXIT_NUMERIC if failures else EXIT_OK

        cfg = load_config(args.config)
        if args.command == "sweep":
            spec = ExperimentSpec.from_config(cfg, Path(args.config).stem)
            spec.steps = args.steps
            spec.ladder = ladder or spec.ladder
            spec.delta = args.delta if args.delta is not None else spec.delta
            res = run_sweep(spec, out, args.workers)
            print(f"sweep {spec.name}: {len(res['rows'])} values, {res['failures']} failures")
            return EXIT_NUMERIC if res["failures"] else EXIT_OK

        params = params_from(cfg)
        if args.command == "solve":
            if args.n is None:
                raise ConfigError(["solve needs --n"])
            res = run_solve(params, args.n, args.steps, out)
            print(f"solved n={args.n:g} (n0={res['n0']:g}) -> {out / res['file']}")
        elif args.command == "simulate":
            delta = args.delta if args.delta is not None else 0.05 * params.horizon
            if not 0.0 < delta < params.horizon:
                raise ConfigError(["--delta must lie in (0, T)"])
            res = run_simulate(params, cfg, args.n, ladder, args.steps, delta, out)
            print(f"simulated -> {out / res['file']}")
        elif args.command == "verify":
            if args.solution:
                info = _check_solution_file(args.solution, params, args.n)
                print(f"solution file ok: {info['file']}")
            res = run_verify(params, cfg, args.n, ladder, args.steps, args.seed, out)
            for fam in res["families"]:
                print(f"{fam['family']:<20} {fam['verdict']}")
            return EXIT_OK if res["verdict"] == "pass" else EXIT_NUMERIC
        return EXIT_OK
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, SolutionFileError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, PSDViolation, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
