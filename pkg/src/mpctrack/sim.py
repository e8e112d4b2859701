"""Closed-loop simulation with monitors for the controller's guarantees.

Each step solves the condensed problem, applies the first input, and checks:

  (a) constraint satisfaction of the applied pair,
  (b) recursive feasibility (optimal status at every step after an optimal
      start; an infeasible step truncates the trace and marks the run failed),
  (c) the cost decrease V(x+) - V(x) <= -||x - x_a||_Q^2 - ||u0 - u_a||_R^2
      inside constant-setpoint segments, with slack scaled by the cost,
  (d) admissibility of the artificial equilibrium inside lambda*Z,
  (e) convergence of the output to the offset-optimal target y_t.
"""

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import qp
from .controller import (
    CondensedQp, MpctConfig, OffsetCostSpec, build_regulation, condense,
    feasible, regulation_multiplier, solve_mpct,
)
from .errors import ConfigError, RegulationInfeasible
from .model import ConstraintSet, LtiModel, equilibrium_for_setpoint

ALL_MONITORS = ("constraints", "recursive_feasibility", "lyapunov",
                "artificial_admissible", "convergence")

CONV_TOL = 1e-3
CONV_HOLD = 5
CONSTRAINT_TOL = 1e-7
LYAP_SLACK = 1e-6


@dataclass(frozen=True)
class Scenario:
    """Initial state, setpoint schedule, and run length."""

    x0: np.ndarray
    schedule: tuple          # ((step, y_sp), ...), strictly increasing, first at 0
    steps: int
    monitors: tuple = ALL_MONITORS

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        sched = tuple((int(k), np.asarray(y, dtype=float).reshape(-1))
                      for k, y in self.schedule)
        if not sched or sched[0][0] != 0:
            raise ConfigError("schedule must start at step 0")
        ks = [k for k, _ in sched]
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ConfigError("schedule steps must be strictly increasing")
        object.__setattr__(self, "schedule", sched)
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        unknown = set(self.monitors) - set(ALL_MONITORS)
        if unknown:
            raise ConfigError(f"unknown monitors {sorted(unknown)}")

    def setpoint_at(self, k):
        y = self.schedule[0][1]
        for step, ysp in self.schedule:
            if step <= k:
                y = ysp
            else:
                break
        return y


@dataclass
class Trace:
    """Per-step closed-loop record plus a run summary."""

    k: np.ndarray
    x: np.ndarray
    u: np.ndarray
    x_a: np.ndarray
    u_a: np.ndarray
    y_a: np.ndarray
    y: np.ndarray
    y_sp: np.ndarray
    value: np.ndarray
    status: list
    monitor_ok: dict
    summary: dict = field(default_factory=dict)

    def __len__(self):
        return self.k.size

    def to_csv(self, path):
        n, m, p = self.x.shape[1], self.u.shape[1], self.y.shape[1]
        cols = (["k"] + [f"x_{i+1}" for i in range(n)]
                + [f"u_{i+1}" for i in range(m)]
                + [f"xa_{i+1}" for i in range(n)]
                + [f"ya_{i+1}" for i in range(p)]
                + ["cost", "status"]
                + [f"ok_{name}" for name in self.monitor_ok])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for i in range(len(self)):
                row = [int(self.k[i])]
                row += [f"{v:.17g}" for v in self.x[i]]
                row += [f"{v:.17g}" for v in self.u[i]]
                row += [f"{v:.17g}" for v in self.x_a[i]]
                row += [f"{v:.17g}" for v in self.y_a[i]]
                row += [f"{self.value[i]:.17g}", self.status[i]]
                row += [int(self.monitor_ok[name][i]) for name in self.monitor_ok]
                writer.writerow(row)

    def summary_json(self, path=None):
        data = json.dumps(self.summary, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(data + "\n")
        return data


def run_closed_loop(model: LtiModel, cq: CondensedQp, scenario: Scenario,
                    conv_tol=CONV_TOL, conv_hold=CONV_HOLD,
                    constraint_tol=CONSTRAINT_TOL, lyap_slack=LYAP_SLACK) -> Trace:
    """Simulate x+ = Ax + B u0(x, y_sp) and record monitor verdicts.

    Violations are recorded, never raised; an Infeasible solve truncates the
    trace at that step (no input is applied past it) and marks the run
    failed, since the theory says it must not happen.
    """
    if cq.model is not model:
        # allow equal-by-value models too
        same = all(np.array_equal(getattr(cq.model, f), getattr(model, f))
                   for f in ("A", "B", "C", "D"))
        if not same:
            raise ConfigError("condensed problem was built for a different model")
    steps = scenario.steps
    n, m, p = model.n, model.m, model.p
    enabled = set(scenario.monitors)

    # offset-optimality targets per distinct setpoint
    sets = cq.reachable_sets()
    offset = cq.config.offset
    targets = {}
    for _, ysp in scenario.schedule:
        key = tuple(np.round(ysp, 12))
        if key not in targets:
            _, _, y_t = equilibrium_for_setpoint(model, cq.ssmap, sets, ysp, offset)
            targets[key] = y_t

    rec = {name: np.ones(steps, dtype=bool) for name in ALL_MONITORS}
    ks = np.arange(steps)
    xs = np.zeros((steps, n))
    us = np.zeros((steps, m))
    xas = np.zeros((steps, n))
    uas = np.zeros((steps, m))
    yas = np.zeros((steps, p))
    ys = np.zeros((steps, p))
    ysps = np.zeros((steps, p))
    vals = np.full(steps, np.nan)
    statuses = []

    x = scenario.x0.copy()
    first_violation = None
    failed = False
    conv_run = 0
    converged_at = None
    t = steps
    prev = None  # (value, stage_decrease_bound, same setpoint)

    for k in range(steps):
        ysp = scenario.setpoint_at(k)
        y_t = targets[tuple(np.round(ysp, 12))]
        res = solve_mpct(cq, x, None if cq.y_reg is not None else ysp)
        statuses.append(res.status.value)
        xs[k] = x
        ysps[k] = ysp
        if res.status is not qp.Status.OPTIMAL:
            rec["recursive_feasibility"][k] = False
            if first_violation is None:
                first_violation = k
            failed = True
            t = k + 1
            break
        u0 = res.u0
        us[k] = u0
        xas[k] = res.x_a
        uas[k] = res.u_a
        yas[k] = res.y_a
        vals[k] = res.value
        y = model.output(x, u0)
        ys[k] = y

        if "constraints" in enabled:
            z_pair = np.concatenate([x, u0])
            rec["constraints"][k] = cq.cons.Z.contains(z_pair, constraint_tol)
        if "artificial_admissible" in enabled:
            z_a = np.concatenate([res.x_a, res.u_a])
            lamZ = cq.cons.Z.scale(cq.cons.lam)
            rec["artificial_admissible"][k] = lamZ.contains(z_a, constraint_tol)
        if "lyapunov" in enabled and prev is not None:
            v_prev, bound, same_sp = prev
            if same_sp:
                slack = lyap_slack * (1.0 + abs(v_prev))
                rec["lyapunov"][k] = res.value - v_prev <= -bound + slack
        if "convergence" in enabled:
            if np.max(np.abs(y - y_t)) <= conv_tol:
                conv_run += 1
                if conv_run >= conv_hold and converged_at is None:
                    converged_at = k
            else:
                conv_run = 0
                converged_at = None

        stage = float((x - res.x_a) @ cq.config.Q @ (x - res.x_a)
                      + (u0 - res.u_a) @ cq.config.R @ (u0 - res.u_a))
        next_sp = scenario.setpoint_at(k + 1) if k + 1 < steps else ysp
        prev = (res.value, stage, bool(np.array_equal(next_sp, ysp)))
        x = model.step(x, u0)

        for name in ALL_MONITORS:
            if name in enabled and not rec[name][k] and first_violation is None:
                first_violation = k

    trace = Trace(
        k=ks[:t], x=xs[:t], u=us[:t], x_a=xas[:t], u_a=uas[:t],
        y_a=yas[:t], y=ys[:t], y_sp=ysps[:t], value=vals[:t],
        status=statuses,
        monitor_ok={name: rec[name][:t] for name in ALL_MONITORS
                    if name in enabled})
    last_sp = scenario.setpoint_at(t - 1)
    y_t = targets[tuple(np.round(last_sp, 12))]
    monitors_pass = {name: bool(np.all(ok)) for name, ok in trace.monitor_ok.items()}
    if "convergence" in enabled:
        monitors_pass["convergence"] = converged_at is not None
    trace.summary = {
        "steps": int(t),
        "failed": bool(failed),
        "first_violation": first_violation,
        "converged": converged_at is not None,
        "converged_at": converged_at,
        "y_target": y_t.tolist(),
        "y_final": ys[t - 1].tolist() if t and not failed else None,
        "final_offset": (float(np.max(np.abs(ys[t - 1] - y_t)))
                         if t and not failed else None),
        "monitors": monitors_pass,
    }
    return trace


@dataclass
class GammaSweepRow:
    gamma: float
    v_tracking: float
    v_regulation: float
    gap: float
    nu_norm: float


def gamma_sweep(model: LtiModel, cons: ConstraintSet, config: MpctConfig,
                x0, y_sp, gammas):
    """Exact-penalty sweep: tracking value vs regulation value per gamma.

    The regulation problem (same horizon/weights/terminal) pins y_a = y_sp
    and exposes the multiplier nu of those rows.  `nu_norm` is the norm of
    that multiplier dual to the one-norm penalty (its max-abs component):
    the gap drops to zero exactly once gamma exceeds it.
    """
    if config.offset.kind != "one_norm":
        raise ConfigError("gamma sweep is defined for the one-norm offset")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    y_sp = np.asarray(y_sp, dtype=float).reshape(-1)
    reg = build_regulation(model, cons, config, y_sp)
    reg_sol = solve_mpct(reg, x0)
    if reg_sol.status is not qp.Status.OPTIMAL:
        raise RegulationInfeasible(
            f"x0 outside the regulation feasible set ({reg_sol.status})")
    nu_norm = float(np.max(np.abs(regulation_multiplier(reg_sol, reg))))
    rows = []
    for g in gammas:
        cfg = replace(config, offset=OffsetCostSpec.one_norm(float(g)))
        cq = condense(model, cons, cfg)
        sol = solve_mpct(cq, x0, y_sp)
        gap = abs(sol.value - reg_sol.value)
        rows.append(GammaSweepRow(float(g), sol.value, reg_sol.value, gap, nu_norm))
    return rows


def feasible_set_compare(model: LtiModel, cons: ConstraintSet, configs,
                         grid_points):
    """Membership table: for each point, the feasibility verdict per config.

    `configs` maps labels to condensed problems; `grid_points` is an
    (npoints, n) array.  Returns (labels, points, verdicts, counts).
    """
    if isinstance(configs, dict):
        items = list(configs.items())
    else:
        items = list(configs)
    pts = np.atleast_2d(np.asarray(grid_points, dtype=float))
    if pts.size == 0:
        return [lbl for lbl, _ in items], pts, np.zeros((0, len(items)), dtype=bool), {}
    if pts.shape[1] != model.n:
        raise ConfigError(f"grid points must have dimension n = {model.n}")
    verdicts = np.zeros((pts.shape[0], len(items)), dtype=bool)
    for j, (_, cq) in enumerate(items):
        for i, x in enumerate(pts):
            verdicts[i, j] = feasible(cq, x)
    counts = {lbl: int(np.sum(verdicts[:, j])) for j, (lbl, _) in enumerate(items)}
    return [lbl for lbl, _ in items], pts, verdicts, counts


def grid_2d(lo, hi, shape):
    """Row-major rectangular sample grid for n = 2 comparisons."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    ax0 = np.linspace(lo[0], hi[0], int(shape[0]))
    ax1 = np.linspace(lo[1], hi[1], int(shape[1]))
    xx, yy = np.meshgrid(ax0, ax1, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])
