"""Condensation of tracking/regulation MPC into canonical QPs.

State variables are eliminated through x = Abold x(0) + Bbold u, leaving the
input sequence plus the artificial-equilibrium variables (theta, or the pair
(x_a, u_a)) and any epigraph auxiliaries as the decision vector u_e.  The
cost carries the conventional factor of two so that
1/2 u_e' H u_e + f' u_e + r reproduces the controller cost exactly; Lagrange
multipliers are therefore on the same scale as the cost.
"""

from dataclasses import dataclass

import numpy as np

from . import qp
from .errors import ConfigError, DimensionMismatch, NoEquilibrium, SingularH
from .model import (
    ConstraintSet, LtiModel, SteadyStateMap, check_stabilizability,
    controllability_index, steady_state_basis,
)
from .synthesis import TerminalIngredients, _check_weights

TERMINAL_EQUALITY = "equality"
TERMINAL_INEQUALITY = "inequality"


@dataclass(frozen=True)
class OffsetCostSpec:
    """Convex positive-definite penalty on y_a - y_sp.

    kind "quadratic" uses ||v||_T^2 with T positive definite; "one_norm" and
    "inf_norm" use gamma*||v||_1 and gamma*||v||_inf (gamma > 0), condensed
    through exact epigraph reformulations.
    """

    kind: str
    T: np.ndarray = None
    gamma: float = None

    def __post_init__(self):
        if self.kind == "quadratic":
            T = np.atleast_2d(np.asarray(self.T, dtype=float))
            if np.max(np.abs(T - T.T)) > 1e-10 * (1 + np.max(np.abs(T))):
                raise ConfigError("offset weight T must be symmetric")
            if np.min(np.linalg.eigvalsh(T)) <= 0:
                raise ConfigError("offset weight T must be positive definite")
            T.setflags(write=False)
            object.__setattr__(self, "T", T)
        elif self.kind in ("one_norm", "inf_norm"):
            if self.gamma is None or self.gamma <= 0:
                raise ConfigError("norm offset costs need gamma > 0")
            object.__setattr__(self, "gamma", float(self.gamma))
        else:
            raise ConfigError(f"unknown offset cost kind {self.kind!r}")

    @classmethod
    def quadratic(cls, T):
        return cls("quadratic", T=np.asarray(T, dtype=float))

    @classmethod
    def one_norm(cls, gamma):
        return cls("one_norm", gamma=gamma)

    @classmethod
    def inf_norm(cls, gamma):
        return cls("inf_norm", gamma=gamma)

    def n_aux(self, p):
        return {"quadratic": 0, "one_norm": p, "inf_norm": 1}[self.kind]

    def value(self, v):
        v = np.asarray(v, dtype=float).reshape(-1)
        if self.kind == "quadratic":
            return float(v @ self.T @ v)
        if self.kind == "one_norm":
            return self.gamma * float(np.sum(np.abs(v)))
        return self.gamma * float(np.max(np.abs(v), initial=0.0))


@dataclass(frozen=True)
class MpctConfig:
    """Tuning of one tracking controller instance."""

    N: int
    Q: np.ndarray
    R: np.ndarray
    offset: OffsetCostSpec
    terminal: str = TERMINAL_EQUALITY
    ingredients: TerminalIngredients = None
    use_theta: bool = True

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError("prediction horizon N must be >= 1")
        if self.terminal not in (TERMINAL_EQUALITY, TERMINAL_INEQUALITY):
            raise ConfigError(f"unknown terminal kind {self.terminal!r}")
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))


@dataclass(frozen=True)
class DecisionLayout:
    """Column bookkeeping of the condensed decision vector."""

    n_var: int
    N: int
    n: int
    m: int
    p: int
    use_theta: bool
    u: slice
    eq: slice          # theta block, or (x_a, u_a) block
    aux: slice


def build_prediction(model: LtiModel, N: int):
    """Stacked prediction matrices: x_seq = Abold x(0) + Bbold u.

    Abold is [I; A; ...; A^N], Bbold the block-Toeplitz convolution with a
    zero first block row, and B_N its last block row, so that
    x(N) = A^N x(0) + B_N u.
    """
    if N < 1:
        raise ConfigError("N must be >= 1")
    n, m = model.n, model.m
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(model.A @ powers[-1])
    A_bold = np.vstack(powers)
    B_bold = np.zeros(((N + 1) * n, N * m))
    for i in range(1, N + 1):
        for j in range(i):
            B_bold[i * n:(i + 1) * n, j * m:(j + 1) * m] = powers[i - 1 - j] @ model.B
    B_N = B_bold[N * n:(N + 1) * n, :]
    return A_bold, B_bold, B_N


class CondensedQp:
    """Canonical QP data with parameter-affine f(x, y_sp), W(x, y_sp), S(x).

    Feasibility of the tracking problem depends only on x: the setpoint
    enters the inequalities exclusively through epigraph rows whose
    auxiliary variable absorbs any value.
    """

    def __init__(self, model, cons, config, ssmap, layout, kind,
                 H, G, F, W0, W_x, W_sp, S0, S_x,
                 f_0, f_x, f_sp, r_xx, r_T,
                 A_bold, B_bold, B_N, B_e, I_e, F_e,
                 reg_rows=None, y_reg=None):
        self.model = model
        self.cons = cons
        self.config = config
        self.ssmap = ssmap
        self.layout = layout
        self.kind = kind
        self.H = H
        self.G = G
        self.F = F
        self.W0, self.W_x, self.W_sp = W0, W_x, W_sp
        self.S0, self.S_x = S0, S_x
        self.f_0, self.f_x, self.f_sp = f_0, f_x, f_sp
        self.r_xx, self.r_T = r_xx, r_T
        self.A_bold, self.B_bold, self.B_N = A_bold, B_bold, B_N
        self.B_e, self.I_e, self.F_e = B_e, I_e, F_e
        self.reg_rows = reg_rows
        self.y_reg = y_reg
        self._sets = None

    @property
    def n_var(self):
        return self.layout.n_var

    def reachable_sets(self):
        from .model import reachable_steady_sets
        if self._sets is None:
            self._sets = reachable_steady_sets(self.model, self.cons, self.ssmap)
        return self._sets

    def f_at(self, x, y_sp):
        return self.f_0 + self.f_x @ x + self.f_sp @ y_sp

    def W_at(self, x, y_sp):
        return self.W0 + self.W_x @ x + self.W_sp @ y_sp

    def S_at(self, x):
        if self.F.shape[0] == 0:
            return np.zeros(0)
        return self.S0 + self.S_x @ x

    def r_at(self, x, y_sp):
        r = float(x @ self.r_xx @ x)
        if self.r_T is not None:
            r += float(y_sp @ self.r_T @ y_sp)
        return r

    def qp_at(self, x, y_sp):
        x = np.asarray(x, dtype=float).reshape(-1)
        y_sp = np.asarray(y_sp, dtype=float).reshape(-1)
        if x.size != self.model.n:
            raise DimensionMismatch(f"x has dim {x.size}, expected {self.model.n}")
        if y_sp.size != self.model.p:
            raise DimensionMismatch(f"y_sp has dim {y_sp.size}, expected {self.model.p}")
        return qp.QpProblem(self.H, self.f_at(x, y_sp), self.r_at(x, y_sp),
                            self.G, self.W_at(x, y_sp),
                            self.F if self.F.shape[0] else None,
                            self.S_at(x) if self.F.shape[0] else None)


@dataclass
class ControlResult:
    """Unpacked optimizer output for one (x, y_sp) query."""

    status: qp.Status
    u0: np.ndarray = None
    u_seq: np.ndarray = None
    x_a: np.ndarray = None
    u_a: np.ndarray = None
    y_a: np.ndarray = None
    theta: np.ndarray = None
    value: float = float("nan")
    nu: np.ndarray = None
    lam: np.ndarray = None
    aux: np.ndarray = None
    z: np.ndarray = None
    diagnostics: str = ""


def _condense_core(model, cons, config, ssmap=None, regulation_y=None):
    n, m, p, N = model.n, model.m, model.p, config.N
    cons.validate(model)
    _check_weights(model.A, config.Q, config.R)
    if config.Q.shape != (n, n) or config.R.shape != (m, m):
        raise DimensionMismatch("Q must be n x n and R must be m x m")

    if config.terminal == TERMINAL_EQUALITY:
        n_c = controllability_index(model)  # raises NotControllable
        if N < n_c:
            raise ConfigError(
                f"equality terminal needs N >= n_c = {n_c}, got N = {N}")
        ing = None
    else:
        if not check_stabilizability(model):
            raise ConfigError("(A, B) must be stabilizable")
        ing = config.ingredients
        if ing is None:
            raise ConfigError("inequality terminal requires TerminalIngredients")
        if ing.Omega_a.d != n + m:
            raise DimensionMismatch(
                f"Omega_a must live in (x, theta) with dim {n + m}")

    if ssmap is None:
        ssmap = steady_state_basis(model)

    include_offset = regulation_y is None
    offset = config.offset if include_offset else None
    n_aux = offset.n_aux(p) if include_offset else 0
    n_eq_vars = m if config.use_theta else n + m
    v_main = N * m + n_eq_vars
    v = v_main + n_aux
    layout = DecisionLayout(
        n_var=v, N=N, n=n, m=m, p=p, use_theta=config.use_theta,
        u=slice(0, N * m), eq=slice(N * m, v_main), aux=slice(v_main, v))

    A_bold, B_bold, B_N = build_prediction(model, N)
    I_xa = np.vstack([np.eye(n)] * (N + 1))
    I_ua = np.vstack([np.eye(m)] * N)
    if config.use_theta:
        B_e = np.hstack([B_bold, -I_xa @ ssmap.M_theta_x])
        I_e = np.hstack([np.eye(N * m), -I_ua @ ssmap.M_theta_u])
        F_e = np.hstack([np.zeros((p, N * m)), ssmap.N_theta])
    else:
        B_e = np.hstack([B_bold, -I_xa, np.zeros(((N + 1) * n, m))])
        I_e = np.hstack([np.eye(N * m), np.zeros((N * m, n)), -I_ua])
        F_e = np.hstack([np.zeros((p, N * m)), model.C, model.D])

    Qf = ing.P if config.terminal == TERMINAL_INEQUALITY else np.zeros((n, n))
    Q_bold = np.zeros(((N + 1) * n, (N + 1) * n))
    for j in range(N):
        Q_bold[j * n:(j + 1) * n, j * n:(j + 1) * n] = config.Q
    Q_bold[N * n:, N * n:] = Qf
    R_bold = np.kron(np.eye(N), config.R)

    H_main = 2.0 * (B_e.T @ Q_bold @ B_e + I_e.T @ R_bold @ I_e)
    f_x_main = 2.0 * B_e.T @ Q_bold @ A_bold
    f_sp_main = np.zeros((v_main, p))
    r_T = None
    if include_offset and offset.kind == "quadratic":
        H_main = H_main + 2.0 * F_e.T @ offset.T @ F_e
        f_sp_main = -2.0 * F_e.T @ offset.T
        r_T = offset.T

    H = np.zeros((v, v))
    H[:v_main, :v_main] = 0.5 * (H_main + H_main.T)
    f_x = np.zeros((v, n))
    f_x[:v_main] = f_x_main
    f_sp = np.zeros((v, p))
    f_sp[:v_main] = f_sp_main
    f_0 = np.zeros(v)
    if include_offset and offset.kind == "inf_norm":
        f_0[v_main] = offset.gamma
    elif include_offset and offset.kind == "one_norm":
        f_0[v_main:] = offset.gamma
    r_xx = A_bold.T @ Q_bold @ A_bold

    Gz = cons.Z.G
    wz = cons.Z.w
    Gzx, Gzu = Gz[:, :n], Gz[:, n:]
    kz = Gz.shape[0]

    G_rows, W0_rows, Wx_rows, Wsp_rows = [], [], [], []

    def add_rows(block, w0, wx=None, wsp=None):
        k = block.shape[0]
        G_rows.append(block)
        W0_rows.append(w0)
        Wx_rows.append(wx if wx is not None else np.zeros((k, n)))
        Wsp_rows.append(wsp if wsp is not None else np.zeros((k, p)))

    # stage constraints (x(j), u(j)) in Z for j = 0..N-1
    for j in range(N):
        block = np.zeros((kz, v))
        block[:, layout.u] = Gzx @ B_bold[j * n:(j + 1) * n, :]
        block[:, j * m:(j + 1) * m] += Gzu
        add_rows(block, wz.copy(), wx=-Gzx @ A_bold[j * n:(j + 1) * n, :])

    F_rows, S0_rows, Sx_rows = [], [], []

    def add_eq(block, s0, sx=None):
        F_rows.append(block)
        S0_rows.append(s0)
        Sx_rows.append(sx if sx is not None else np.zeros((block.shape[0], n)))

    if config.terminal == TERMINAL_EQUALITY:
        # artificial equilibrium admissibility (x_a, u_a) in lam*Z
        block = np.zeros((kz, v))
        block[:, layout.eq] = Gz @ ssmap.M_theta if config.use_theta else Gz
        add_rows(block, cons.lam * wz)
        # x(N) = x_a  (and the equilibrium rows in the explicit layout)
        blk = np.zeros((n, v))
        blk[:, layout.u] = B_N
        if config.use_theta:
            blk[:, layout.eq] = -ssmap.M_theta_x
        else:
            blk[:, layout.eq.start:layout.eq.start + n] = -np.eye(n)
        add_eq(blk, np.zeros(n), sx=-A_bold[N * n:, :])
        if not config.use_theta:
            blk = np.zeros((n, v))
            blk[:, layout.eq.start:layout.eq.start + n] = np.eye(n) - model.A
            blk[:, layout.eq.start + n:layout.eq.stop] = -model.B
            add_eq(blk, np.zeros(n))
    else:
        # terminal set rows on (x(N), theta)
        G_om = ing.Omega_a.G
        G_om_x, G_om_th = G_om[:, :n], G_om[:, n:]
        block = np.zeros((G_om.shape[0], v))
        block[:, layout.u] = G_om_x @ B_N
        if config.use_theta:
            block[:, layout.eq] = G_om_th
        else:
            block[:, layout.eq] = G_om_th @ ssmap.M_theta.T
        add_rows(block, ing.Omega_a.w.copy(), wx=-G_om_x @ A_bold[N * n:, :])
        if not config.use_theta:
            # pin (x_a, u_a) to the equilibrium subspace
            blk = np.zeros((n, v))
            blk[:, layout.eq.start:layout.eq.start + n] = np.eye(n) - model.A
            blk[:, layout.eq.start + n:layout.eq.stop] = -model.B
            add_eq(blk, np.zeros(n))

    if include_offset and offset.kind in ("one_norm", "inf_norm"):
        aux_cols = np.zeros((p, n_aux))
        if offset.kind == "inf_norm":
            aux_cols[:, 0] = -1.0
        else:
            aux_cols[:, :] = -np.eye(p)
        pos = np.hstack([F_e, aux_cols])
        neg = np.hstack([-F_e, aux_cols])
        add_rows(pos, np.zeros(p), wsp=np.eye(p))
        add_rows(neg, np.zeros(p), wsp=-np.eye(p))
        if offset.kind == "inf_norm":
            row = np.zeros((1, v))
            row[0, v_main] = -1.0
            add_rows(row, np.zeros(1))

    reg_rows = None
    if regulation_y is not None:
        start = sum(b.shape[0] for b in F_rows)
        blk = np.zeros((p, v))
        blk[:, :v_main] = F_e
        add_eq(blk, np.asarray(regulation_y, dtype=float).reshape(-1))
        reg_rows = slice(start, start + p)

    G = np.vstack(G_rows)
    W0 = np.concatenate(W0_rows)
    W_x = np.vstack(Wx_rows)
    W_sp = np.vstack(Wsp_rows)
    if F_rows:
        F = np.vstack(F_rows)
        S0 = np.concatenate(S0_rows)
        S_x = np.vstack(Sx_rows)
    else:
        F = np.zeros((0, v))
        S0 = np.zeros(0)
        S_x = np.zeros((0, n))

    return CondensedQp(model, cons, config, ssmap, layout,
                       "regulation" if regulation_y is not None else "mpct",
                       H, G, F, W0, W_x, W_sp, S0, S_x,
                       f_0, f_x, f_sp, r_xx, r_T,
                       A_bold, B_bold, B_N, B_e, I_e, F_e,
                       reg_rows=reg_rows,
                       y_reg=None if regulation_y is None
                       else np.asarray(regulation_y, dtype=float).reshape(-1))


def condense(model: LtiModel, cons: ConstraintSet, config: MpctConfig,
             ssmap: SteadyStateMap = None) -> CondensedQp:
    """Condense the tracking problem (either terminal variant)."""
    return _condense_core(model, cons, config, ssmap=ssmap)


def build_regulation(model: LtiModel, cons: ConstraintSet, config: MpctConfig,
                     y_sp, ssmap: SteadyStateMap = None) -> CondensedQp:
    """Regulation MPC to a fixed setpoint: the tracking problem plus the
    equality y_a = y_sp (the norm-equals-zero constraint collapses to it).

    The offset cost is dropped; the multipliers of the added rows are the
    nu(x, y_sp) used by the exact-penalty analysis.
    """
    if ssmap is None:
        ssmap = steady_state_basis(model)
    y_sp = np.asarray(y_sp, dtype=float).reshape(-1)
    if y_sp.size != model.p:
        raise DimensionMismatch(f"y_sp has dim {y_sp.size}, expected {model.p}")
    theta_ls, *_ = np.linalg.lstsq(ssmap.N_theta, y_sp, rcond=None)
    resid = np.max(np.abs(ssmap.N_theta @ theta_ls - y_sp), initial=0.0)
    if resid > 1e-8 * (1.0 + np.max(np.abs(y_sp), initial=0.0)):
        raise NoEquilibrium(
            f"y_sp is not in the span of the steady outputs (residual {resid:.2e})")
    return _condense_core(model, cons, config, ssmap=ssmap, regulation_y=y_sp)


def solve_mpct(cq: CondensedQp, x, y_sp=None, max_iter=100) -> ControlResult:
    """Fill in (x, y_sp), solve, and unpack by the decision layout."""
    if y_sp is None:
        if cq.y_reg is None:
            raise ConfigError("y_sp required for tracking problems")
        y_sp = cq.y_reg
    prob = cq.qp_at(x, y_sp)
    sol = qp.solve(prob, max_iter=max_iter)
    if sol.status is not qp.Status.OPTIMAL:
        return ControlResult(status=sol.status, diagnostics=sol.diagnostics)
    lay = cq.layout
    z = sol.z_star
    u_seq = z[lay.u].reshape(lay.N, lay.m)
    if lay.use_theta:
        theta = z[lay.eq]
        x_a, u_a = cq.ssmap.equilibrium(theta)
    else:
        blk = z[lay.eq]
        x_a, u_a = blk[:lay.n], blk[lay.n:]
        theta = None
    y_a = cq.model.output(x_a, u_a)
    return ControlResult(
        status=sol.status, u0=u_seq[0].copy(), u_seq=u_seq,
        x_a=x_a, u_a=u_a, y_a=y_a, theta=theta,
        value=sol.value, nu=sol.nu, lam=sol.lam,
        aux=z[lay.aux].copy(), z=z, diagnostics=sol.diagnostics)


def regulation_multiplier(result: ControlResult, cq: CondensedQp):
    """Multipliers of the y_a = y_sp rows of a regulation problem."""
    if cq.reg_rows is None:
        raise ConfigError("not a regulation problem")
    return result.nu[cq.reg_rows]


def feasible(cq: CondensedQp, x) -> bool:
    """Phase-1 verdict at state x using the setpoint-independent rows only.

    Rows with a nonzero W_sp block are the epigraph rows; the auxiliary
    variable absorbs any setpoint there, so dropping them is exact.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    keep = np.max(np.abs(cq.W_sp), axis=1) == 0.0
    G = cq.G[keep]
    W = cq.W0[keep] + cq.W_x[keep] @ x
    has_eq = cq.F.shape[0] > 0
    ok, _, _ = qp.check_feasible(G, W,
                                 cq.F if has_eq else None,
                                 cq.S_at(x) if has_eq else None)
    return ok


@dataclass
class MpQpTransform:
    """Shifted mp-QP data: z = u_e + L_x x + L_sp y_sp.

    In the z variable the objective 1/2 z'Hz + f_0'z no longer depends on
    the parameters; only the right-hand sides do, which exposes the
    piecewise-affine structure of the control law.
    """

    H: np.ndarray
    f_0: np.ndarray
    G: np.ndarray
    F: np.ndarray
    L_x: np.ndarray
    L_sp: np.ndarray
    W_bar: np.ndarray
    W_x: np.ndarray
    W_sp: np.ndarray
    S_bar: np.ndarray
    S_x: np.ndarray
    S_sp: np.ndarray

    def shift(self, z, x, y_sp):
        """Recover u_e from a z-form solution."""
        return z - self.L_x @ np.asarray(x, dtype=float) \
                 - self.L_sp @ np.asarray(y_sp, dtype=float)

    def qp_at(self, x, y_sp):
        x = np.asarray(x, dtype=float).reshape(-1)
        y_sp = np.asarray(y_sp, dtype=float).reshape(-1)
        W = self.W_bar + self.W_x @ x + self.W_sp @ y_sp
        has_eq = self.F.shape[0] > 0
        S = self.S_bar + self.S_x @ x + self.S_sp @ y_sp if has_eq else None
        return qp.QpProblem(self.H, self.f_0, 0.0, self.G, W,
                            self.F if has_eq else None, S)


def parameter_transform(cq: CondensedQp) -> MpQpTransform:
    """Build the z-form of the condensed problem.

    L_x and L_sp solve H L = f_x / f_sp; a singular H (epigraph auxiliaries)
    is regularized by eps*I for the solve and the result is verified against
    the unregularized H, raising SingularH when no exact shift exists.
    """
    H = cq.H
    v = H.shape[0]
    eps = 1e-9 * max(1.0, float(np.max(np.abs(H), initial=0.0)))
    H_reg = H + eps * np.eye(v)
    L_x = np.linalg.solve(H_reg, cq.f_x)
    L_sp = np.linalg.solve(H_reg, cq.f_sp)
    for L, fmat, name in ((L_x, cq.f_x, "L_x"), (L_sp, cq.f_sp, "L_sp")):
        resid = np.max(np.abs(H @ L - fmat), initial=0.0)
        if resid > 1e-6 * (1.0 + np.max(np.abs(fmat), initial=0.0)):
            raise SingularH(
                f"H not invertible for {name} even after regularization "
                f"(residual {resid:.2e})")
    return MpQpTransform(
        H=H, f_0=cq.f_0, G=cq.G, F=cq.F,
        L_x=L_x, L_sp=L_sp,
        W_bar=cq.W0, W_x=cq.W_x + cq.G @ L_x, W_sp=cq.W_sp + cq.G @ L_sp,
        S_bar=cq.S0, S_x=cq.S_x + cq.F @ L_x,
        S_sp=cq.F @ L_sp if cq.F.shape[0] else np.zeros((0, cq.layout.p)))
