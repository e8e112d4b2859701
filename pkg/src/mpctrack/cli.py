"""Batch front-end: analyze | sets | simulate | sweep-gamma | compare.

Every command reads one JSON config, writes CSV/JSON artifacts (and PNG
figures unless --no-figures) into --out, and exits with:

    0  success
    1  monitor/assertion failure under --strict
    2  configuration error
    3  numeric failure (non-terminating recursion, empty sets, solver)
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import plots, polytope
from .config import (
    build_constraints, build_controller_config, build_model, build_scenario,
    load_config, merge_tolerances, model_hash, parse_tol_overrides,
)
from .controller import build_regulation, condense
from .errors import (
    ConfigError, DimensionMismatch, MpcTrackError, NoEquilibrium,
)
from .model import (
    check_output_rank, check_stabilizability, controllability_index,
    reachable_steady_sets, steady_state_basis,
)
from .errors import NotControllable
from .sim import feasible_set_compare, gamma_sweep, grid_2d, run_closed_loop
from .synthesis import TerminalIngredients, make_terminal_ingredients

INGREDIENTS_FILE = "ingredients.json"


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v):
    return f"{float(v):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _need(cfg, key, command):
    if key not in cfg:
        raise ConfigError(f"command {command!r} requires a {key!r} section")
    return cfg[key]


def _load_or_make_ingredients(cfg, model, cons, out_dir, tols):
    """Reuse cached terminal ingredients when the config hash matches."""
    ctl = _need(cfg, "controller", "simulate")
    digest = model_hash(cfg)
    cache = Path(out_dir) / INGREDIENTS_FILE
    if cache.exists():
        with open(cache) as fh:
            data = json.load(fh)
        if data.get("model_hash") == digest:
            return TerminalIngredients.from_json(data["ingredients"]), True
    ing = make_terminal_ingredients(
        model, cons, np.asarray(ctl["Q"], dtype=float),
        np.asarray(ctl["R"], dtype=float),
        max_iter=int(tols["mais_max_iter"]))
    _write_json(cache, {"model_hash": digest, "ingredients": ing.to_json()})
    return ing, False


def cmd_analyze(cfg, out_dir, tols, figures, strict, rng):
    model = build_model(cfg)
    cons = build_constraints(cfg, model)
    report = {
        "n": model.n, "m": model.m, "p": model.p,
        "lambda": cons.lam,
        "stabilizable": check_stabilizability(model),
        "output_rank_ok": check_output_rank(model),
    }
    try:
        report["controllability_index"] = controllability_index(model)
        report["controllable"] = True
    except NotControllable:
        report["controllability_index"] = None
        report["controllable"] = False
    ssmap = steady_state_basis(model)
    report["steady_state_map"] = {
        "M_theta": ssmap.M_theta.tolist(),
        "N_theta": ssmap.N_theta.tolist(),
    }
    sets = reachable_steady_sets(model, cons, ssmap)
    report["theta_set"] = sets.theta_set.to_json()
    if not report["output_rank_ok"]:
        report["y_subspace_note"] = (
            "not every setpoint has an equilibrium; reachable outputs span "
            "the columns of N_theta")
    if model.p <= 3:
        report["Y_sp"] = sets.Y_sp.to_json()
    else:
        report["Y_sp"] = None
        report["Y_sp_note"] = "p > 3: explicit half-spaces suppressed"
    _write_json(Path(out_dir) / "analyze.json", report)
    if model.p == 2:
        try:
            verts = polytope.vertices_2d(sets.Y_sp)
            _write_csv(Path(out_dir) / "y_sp_vertices.csv", ["y_1", "y_2"],
                       [[_fmt(a), _fmt(b)] for a, b in verts])
            if figures:
                plots.save_sets(Path(out_dir) / "reachable_y_sp.png",
                                [("Y_sp", sets.Y_sp)])
        except MpcTrackError:
            pass
    print(f"analyze: wrote {out_dir}/analyze.json")
    return 0


def cmd_sets(cfg, out_dir, tols, figures, strict, rng):
    model = build_model(cfg)
    cons = build_constraints(cfg, model)
    _need(cfg, "controller", "sets")
    ing, cached = _load_or_make_ingredients(cfg, model, cons, out_dir, tols)
    sets = reachable_steady_sets(model, cons)
    report = {
        "cached": cached,
        "K": ing.K.tolist(),
        "P": ing.P.tolist(),
        "mais_iterations": ing.mais_iterations,
        "Omega_a": ing.Omega_a.to_json(),
        "Omega_a_rows": ing.Omega_a.n_rows,
        "Omega_x": ing.Omega_x.to_json() if ing.Omega_x is not None else None,
    }
    _write_json(Path(out_dir) / "sets.json", report)
    if model.n == 2 and ing.Omega_x is not None:
        try:
            verts = polytope.vertices_2d(ing.Omega_x)
            _write_csv(Path(out_dir) / "omega_vertices.csv", ["x_1", "x_2"],
                       [[_fmt(a), _fmt(b)] for a, b in verts])
            if figures:
                plots.save_sets(Path(out_dir) / "sets_omega.png",
                                [("Omega_t (projection)", ing.Omega_x),
                                 ("X_sp", sets.X_sp)])
        except MpcTrackError:
            pass
    print(f"sets: invariant set found after {ing.mais_iterations} recursion steps"
          f" ({ing.Omega_a.n_rows} rows)")
    return 0


def _controller_for(cfg, model, cons, out_dir, tols):
    ctl = _need(cfg, "controller", "simulate")
    ing = None
    if ctl.get("terminal", "equality") == "inequality":
        ing, _ = _load_or_make_ingredients(cfg, model, cons, out_dir, tols)
    return build_controller_config(ctl, ingredients=ing)


def cmd_simulate(cfg, out_dir, tols, figures, strict, rng):
    model = build_model(cfg)
    cons = build_constraints(cfg, model)
    config = _controller_for(cfg, model, cons, out_dir, tols)
    scenario = build_scenario(cfg)
    cq = condense(model, cons, config)
    trace = run_closed_loop(
        model, cq, scenario,
        conv_tol=tols["convergence_tol"],
        conv_hold=int(tols["convergence_hold"]),
        constraint_tol=tols["constraint_tol"],
        lyap_slack=tols["lyapunov_slack"])
    trace.to_csv(Path(out_dir) / "trace.csv")
    trace.summary_json(Path(out_dir) / "summary.json")
    if figures:
        sets = cq.reachable_sets()
        overlays = []
        try:
            overlays.append(("X_sp", sets.X_sp,
                             dict(color="0.4", ls="--", lw=1.2)))
        except MpcTrackError:
            pass
        if config.ingredients is not None and config.ingredients.Omega_x is not None:
            overlays.append(("Omega_t (projection)", config.ingredients.Omega_x,
                             dict(color="tab:green", ls="-.", lw=1.1)))
        y_last = scenario.schedule[-1][1]
        plots.save_state_space(Path(out_dir) / "trace_state_space.png", trace,
                               x_sp=y_last if model.p == model.n == 2 else None,
                               sets=overlays)
        plots.save_time_evolution(Path(out_dir) / "trace_time_evolution.png", trace)
    ok = not trace.summary["failed"] and all(trace.summary["monitors"].values())
    print(f"simulate: {trace.summary['steps']} steps, monitors "
          f"{'pass' if ok else 'FAIL'} (summary.json for detail)")
    if strict and not ok:
        return 1
    return 0


def cmd_sweep_gamma(cfg, out_dir, tols, figures, strict, rng):
    model = build_model(cfg)
    cons = build_constraints(cfg, model)
    sweep = _need(cfg, "sweep", "sweep-gamma")
    config = _controller_for(cfg, model, cons, out_dir, tols)
    rows = gamma_sweep(model, cons, config, np.asarray(sweep["x0"], dtype=float),
                       np.asarray(sweep["y_sp"], dtype=float), sweep["gammas"])
    _write_csv(Path(out_dir) / "gamma_sweep.csv",
               ["gamma", "v_tracking", "v_regulation", "gap", "nu_norm"],
               [[_fmt(r.gamma), _fmt(r.v_tracking), _fmt(r.v_regulation),
                 _fmt(r.gap), _fmt(r.nu_norm)] for r in rows])
    _write_json(Path(out_dir) / "gamma_sweep.json", {
        "nu_norm": rows[0].nu_norm,
        "final_gap": rows[-1].gap,
        "gaps_nonincreasing": bool(all(
            b.gap <= a.gap + 1e-8 * (1.0 + a.gap)
            for a, b in zip(rows, rows[1:]))),
    })
    if figures:
        plots.save_gamma_sweep(Path(out_dir) / "gamma_sweep.png", rows)
    mono = all(b.gap <= a.gap + 1e-8 * (1.0 + a.gap) for a, b in zip(rows, rows[1:]))
    print(f"sweep-gamma: multiplier norm {rows[0].nu_norm:.6g}, final gap "
          f"{rows[-1].gap:.3e}, nonincreasing: {mono}")
    if strict and not mono:
        return 1
    return 0


def cmd_compare(cfg, out_dir, tols, figures, strict, rng):
    model = build_model(cfg)
    cons = build_constraints(cfg, model)
    cmp_cfg = _need(cfg, "compare", "compare")
    base = cfg.get("controller", {})
    items = []
    for var in cmp_cfg["controllers"]:
        merged = {**base, **{k: v for k, v in var.items()
                             if k not in ("name", "regulation_to")}}
        for key in ("N", "Q", "R", "offset"):
            if key not in merged:
                raise ConfigError(
                    f"compare controller {var['name']!r} missing {key!r} "
                    "(set it or provide a top-level controller)")
        ing = None
        if merged.get("terminal", "equality") == "inequality":
            ing, _ = _load_or_make_ingredients(cfg, model, cons, out_dir, tols)
        config = build_controller_config(merged, ingredients=ing)
        if "regulation_to" in var:
            cq = build_regulation(model, cons, config,
                                  np.asarray(var["regulation_to"], dtype=float))
        else:
            cq = condense(model, cons, config)
        items.append((var["name"], cq))

    pts = []
    if "grid" in cmp_cfg:
        if model.n != 2:
            raise ConfigError("grid mode requires n = 2; use samples/points")
        g = cmp_cfg["grid"]
        pts.append(grid_2d(g["lo"], g["hi"], g["shape"]))
    if "samples" in cmp_cfg:
        s = cmp_cfg["samples"]
        lo = np.asarray(s["lo"], dtype=float)
        hi = np.asarray(s["hi"], dtype=float)
        pts.append(rng.uniform(lo, hi, size=(int(s["count"]), model.n)))
    if "points" in cmp_cfg:
        pts.append(np.asarray(cmp_cfg["points"], dtype=float))
    points = np.vstack(pts) if pts else np.zeros((0, model.n))

    labels, points, verdicts, counts = feasible_set_compare(
        model, cons, items, points)
    header = [f"x_{i+1}" for i in range(model.n)] + [f"feas_{l}" for l in labels]
    rows = []
    for i in range(points.shape[0]):
        rows.append([_fmt(v) for v in points[i]]
                    + [str(int(b)) for b in verdicts[i]])
    _write_csv(Path(out_dir) / "compare.csv", header, rows)

    violations = {}
    for inner, outer in cmp_cfg.get("assert_subset", []):
        if inner not in labels or outer not in labels:
            raise ConfigError(f"assert_subset names unknown controller: "
                              f"{inner!r} or {outer!r}")
        ji, jo = labels.index(inner), labels.index(outer)
        bad = int(np.sum(verdicts[:, ji] & ~verdicts[:, jo]))
        violations[f"{inner} subset {outer}"] = bad
    _write_json(Path(out_dir) / "compare_summary.json",
                {"counts": counts, "subset_violations": violations,
                 "n_points": int(points.shape[0])})
    if figures:
        plots.save_compare(Path(out_dir) / "feasible_compare.png",
                           labels, points, verdicts)
    print("compare: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    if strict and any(v > 0 for v in violations.values()):
        return 1
    return 0


COMMANDS = {
    "analyze": cmd_analyze,
    "sets": cmd_sets,
    "simulate": cmd_simulate,
    "sweep-gamma": cmd_sweep_gamma,
    "compare": cmd_compare,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mpctrack",
        description="Setpoint-tracking MPC: analysis, set synthesis, "
                    "simulation, and sweeps on constrained LTI systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--strict", action="store_true",
                       help="exit 1 when a monitor or subset assertion fails")
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (overrides the config's seed field)")
        p.add_argument("--tol-override", action="append", metavar="KEY=VAL",
                       help="override a named tolerance (repeatable)")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        tols = merge_tolerances(cfg, parse_tol_overrides(args.tol_override))
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        rng = np.random.default_rng(seed)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out_dir, tols,
                                      not args.no_figures, args.strict, rng)
    except (ConfigError, NoEquilibrium, DimensionMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MpcTrackError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
