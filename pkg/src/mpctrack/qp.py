"""Dense convex QP/LP solver with Lagrange multipliers.

Canonical problem::

    min_z  1/2 z'Hz + f'z + r
    s.t.   G z <= W
           F z  = S

Stationarity convention (fixed for the whole package)::

    Hz + f + F'nu + G'lam = 0,   lam >= 0 for Gz <= W

so perturbing W_i by delta changes the optimal value by -lam_i*delta and
perturbing S_j changes it by -nu_j*delta.

The algorithm is a primal-dual interior-point method with Mehrotra-style
predictor-corrector steps and dense factorizations.  Singular-but-PSD H
(epigraph formulations) is handled by a proximal term eps*I that enters the
Newton matrices only; residuals and the reported value always use the
original H.  Infeasibility is certified by a Farkas-type combination of the
constraints obtained from the phase-1 dual.
"""

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as sla

from .errors import NonConvex

# Spec-level acceptance tolerances for an Optimal verdict.
STAT_TOL = 1e-6     # * (1 + ||f||_inf)
FEAS_TOL = 1e-8
COMP_TOL = 1e-6
# Internal targets (tighter, give downstream code margin).
_INT_STAT = 1e-9
_INT_FEAS = 1e-10
_INT_COMP = 1e-10
_PROX_EPS = 1e-9
_DIVERGE_Z = 1e13
_DIVERGE_OBJ = -1e16


class Status(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAXITER = "maxiter"


def _as_matrix(M, rows, cols, name):
    if M is None:
        return np.zeros((rows if rows is not None else 0, cols))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != cols:
        raise ValueError(f"{name} has {M.shape[1]} columns, expected {cols}")
    return M


def _as_vector(v, length, name):
    if v is None:
        return np.zeros(length if length is not None else 0)
    v = np.asarray(v, dtype=float).reshape(-1)
    if length is not None and v.size != length:
        raise ValueError(f"{name} has length {v.size}, expected {length}")
    return v


@dataclass
class QpProblem:
    """Canonical QP data; `G`/`W`/`F`/`S` may be omitted."""

    H: np.ndarray
    f: np.ndarray
    r: float = 0.0
    G: np.ndarray = None
    W: np.ndarray = None
    F: np.ndarray = None
    S: np.ndarray = None

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float).reshape(-1)
        v = self.f.size
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        if self.H.shape != (v, v):
            raise ValueError(f"H has shape {self.H.shape}, expected ({v}, {v})")
        asym = np.max(np.abs(self.H - self.H.T)) if v else 0.0
        if asym > 1e-10 * (1.0 + np.max(np.abs(self.H))):
            raise ValueError("H is not symmetric")
        self.G = _as_matrix(self.G, None, v, "G")
        self.W = _as_vector(self.W, self.G.shape[0], "W")
        self.F = _as_matrix(self.F, None, v, "F")
        self.S = _as_vector(self.S, self.F.shape[0], "S")
        self.r = float(self.r)

    @property
    def n_var(self):
        return self.f.size


@dataclass
class FarkasCertificate:
    """Nonnegative combination proving {Gz <= W, Fz = S} empty.

    `y >= 0` and `mu` satisfy G'y + F'mu = 0 with W'y + S'mu < 0, so no z can
    satisfy both constraint blocks.
    """

    y: np.ndarray
    mu: np.ndarray
    gap: float  # W'y + S'mu, strictly negative

    def residual(self, G, F):
        return float(np.max(np.abs(G.T @ self.y + F.T @ self.mu), initial=0.0))


@dataclass
class QpSolution:
    z_star: np.ndarray
    value: float
    nu: np.ndarray
    lam: np.ndarray
    status: Status
    iterations: int = 0
    certificate: FarkasCertificate = None
    diagnostics: str = ""
    extras: dict = field(default_factory=dict)


def _validate_convexity(H):
    """PSD check: Cholesky of H + eps*I, eigenvalue fallback for the verdict."""
    v = H.shape[0]
    if v == 0:
        return
    scale = max(1.0, float(np.max(np.abs(H))))
    try:
        np.linalg.cholesky(H + 1e-8 * scale * np.eye(v))
        return
    except np.linalg.LinAlgError:
        pass
    if float(np.min(np.linalg.eigvalsh(H))) < -1e-8:
        raise NonConvex("H has an eigenvalue below -1e-8")


def _objective(H, f, r, z):
    return float(0.5 * z @ H @ z + f @ z + r)


def _mehrotra_start(H_it, f, G, W, F, S, reg):
    """Mehrotra's starting-point heuristic for (z, nu, lam, s)."""
    v, k, e = f.size, G.shape[0], F.shape[0]
    K = np.block([[H_it + reg * np.eye(v), F.T], [F, -reg * np.eye(e)]]) if e else H_it + reg * np.eye(v)
    rhs = np.concatenate([-f, S]) if e else -f
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    z = sol[:v]
    nu = sol[v:] if e else np.zeros(0)
    s_t = W - G @ z
    rd = H_it @ z + f + (F.T @ nu if e else 0.0)
    lam_t = np.linalg.lstsq(G.T, -rd, rcond=None)[0] if k else np.zeros(0)
    if k == 0:
        return z, nu, np.zeros(0), np.zeros(0)
    ds = max(-1.5 * float(np.min(s_t)), 0.0)
    dl = max(-1.5 * float(np.min(lam_t)), 0.0)
    s_h = s_t + ds + 1e-2
    lam_h = lam_t + dl + 1e-2
    dot = float(s_h @ lam_h)
    s0 = s_h + 0.5 * dot / max(float(np.sum(lam_h)), 1e-12)
    lam0 = lam_h + 0.5 * dot / max(float(np.sum(s_h)), 1e-12)
    return z, nu, lam0, s0


def _max_step(x, dx, cap=1.0):
    neg = dx < 0
    if not np.any(neg):
        return cap
    return min(cap, float(np.min(-x[neg] / dx[neg])))


def _solve_equality_qp(H, f, r, F, S, reg):
    """No inequality rows: solve the KKT system directly."""
    v, e = f.size, F.shape[0]
    H_it = H + reg * max(1.0, float(np.max(np.abs(H), initial=0.0))) * np.eye(v)
    if e:
        K = np.block([[H_it, F.T], [F, np.zeros((e, e))]])
        rhs = np.concatenate([-f, S])
    else:
        K = H_it
        rhs = -f
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    z = sol[:v]
    nu = sol[v:] if e else np.zeros(0)
    scale_f = 1.0 + float(np.max(np.abs(f), initial=0.0))
    stat = np.max(np.abs(H @ z + f + (F.T @ nu if e else 0.0)), initial=0.0)
    feas = np.max(np.abs(F @ z - S), initial=0.0) if e else 0.0
    if stat <= STAT_TOL * scale_f and feas <= FEAS_TOL:
        status = Status.OPTIMAL
    else:
        # H singular along a descent direction within the equality manifold.
        status = Status.UNBOUNDED
    return QpSolution(z, _objective(H, f, r, z), nu, np.zeros(0), status,
                      diagnostics=f"direct KKT, stat={stat:.2e} feas={feas:.2e}")


def _ipm(H, f, r, G, W, F, S, max_iter=100, lp_mode=False):
    """Predictor-corrector interior point on the canonical problem.

    Assumes {Gz <= W, Fz = S} is feasible (caller runs phase 1 first).
    """
    v, k, e = f.size, G.shape[0], F.shape[0]
    if k == 0:
        return _solve_equality_qp(H, f, r, F, S, _PROX_EPS)

    h_scale = max(1.0, float(np.max(np.abs(H), initial=0.0)))
    H_it = H + _PROX_EPS * h_scale * np.eye(v)
    scale_f = 1.0 + float(np.max(np.abs(f), initial=0.0))

    z, nu, lam, s = _mehrotra_start(H_it, f, G, W, F, S, 1e-8 * h_scale)
    lam = np.maximum(lam, 1e-2)
    s = np.maximum(s, 1e-2)

    best = None
    best_merit = np.inf
    delta = 1e-10

    for it in range(max_iter):
        rd = H @ z + f + G.T @ lam + (F.T @ nu if e else 0.0)
        rpF = F @ z - S if e else np.zeros(0)
        slack = G @ z - W
        rpG = slack + s
        mu = float(s @ lam) / k

        stat = float(np.max(np.abs(rd), initial=0.0))
        feas = max(float(np.max(np.abs(rpF), initial=0.0)),
                   float(np.max(slack, initial=0.0)))
        comp = float(np.max(np.abs(lam * slack), initial=0.0))
        merit = stat / scale_f + feas + comp
        if merit < best_merit:
            best_merit = merit
            best = (z.copy(), nu.copy(), lam.copy(), it, stat, feas, comp)

        if stat <= _INT_STAT * scale_f and feas <= _INT_FEAS and comp <= _INT_COMP * scale_f:
            return QpSolution(z, _objective(H, f, r, z), nu, lam, Status.OPTIMAL, it)

        if float(np.max(np.abs(z))) > _DIVERGE_Z or _objective(H, f, r, z) < _DIVERGE_OBJ:
            status = Status.UNBOUNDED if lp_mode else Status.MAXITER
            return QpSolution(z, _objective(H, f, r, z), nu, lam, status, it,
                              diagnostics="iterates diverged")

        # normal-equations form: only a (v+e) factorization regardless of
        # the number of inequality rows; regularization bumps retried on
        # singular factors
        d = np.clip(lam / np.maximum(s, 1e-300), 1e-30, 1e30)
        GtD = G.T * d
        lu = None
        for bump in (delta, 1e-8, 1e-6, 1e-4):
            M = H_it + GtD @ G + bump * np.eye(v)
            if e:
                K = np.block([[M, F.T], [F, -bump * np.eye(e)]])
            else:
                K = M
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                try:
                    lu_try = sla.lu_factor(K)
                except (np.linalg.LinAlgError, ValueError):
                    continue
                probe = sla.lu_solve(lu_try, np.ones(v + e))
            if np.all(np.isfinite(probe)):
                lu = lu_try
                K_mat = K
                break
        if lu is None:
            break

        def newton(rc):
            rhs_z = -rd - G.T @ ((lam * rpG - rc) / s)
            rhs = np.concatenate([rhs_z, -rpF]) if e else rhs_z
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sol = sla.lu_solve(lu, rhs)
                # one step of iterative refinement
                corr = sla.lu_solve(lu, rhs - K_mat @ sol)
            sol = sol + corr
            if not np.all(np.isfinite(sol)):
                return None
            dz = sol[:v]
            dnu = sol[v:] if e else np.zeros(0)
            ds = -rpG - G @ dz
            dlam = (-rc - lam * ds) / s
            return dz, dnu, dlam, ds

        # predictor
        rc_aff = lam * s
        aff = newton(rc_aff)
        if aff is None:
            break
        dz_a, dnu_a, dlam_a, ds_a = aff
        alpha_a = min(_max_step(s, ds_a), _max_step(lam, dlam_a))
        mu_aff = float((s + alpha_a * ds_a) @ (lam + alpha_a * dlam_a)) / k
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        rc = lam * s + dlam_a * ds_a - sigma * mu
        corr = newton(rc)
        if corr is None:
            break
        dz, dnu, dlam, ds = corr
        alpha = 0.995 * min(_max_step(s, ds), _max_step(lam, dlam))
        alpha = min(alpha, 1.0)
        if not np.isfinite(alpha) or alpha <= 1e-14:
            break
        z = z + alpha * dz
        nu = nu + alpha * dnu if e else nu
        lam = np.maximum(lam + alpha * dlam, 1e-300)
        s = np.maximum(s + alpha * ds, 1e-300)

    z, nu, lam, it, stat, feas, comp = best
    if stat <= STAT_TOL * scale_f and feas <= FEAS_TOL and comp <= COMP_TOL * scale_f:
        return QpSolution(z, _objective(H, f, r, z), nu, lam, Status.OPTIMAL, it,
                          diagnostics="spec-level tolerance at best iterate")
    return QpSolution(z, _objective(H, f, r, z), nu, lam, Status.MAXITER, max_iter,
                      diagnostics=f"stalled: stat={stat:.2e} feas={feas:.2e} comp={comp:.2e}")


def _certificate_from_eq(F, S):
    """Fz = S inconsistent: a left-null-space witness with S'mu = -1."""
    z_ls, *_ = np.linalg.lstsq(F, S, rcond=None)
    res = S - F @ z_ls
    mu = -res / float(res @ res)
    return FarkasCertificate(np.zeros(0), mu, float(S @ mu))


def check_feasible(G=None, W=None, F=None, S=None, tol=None):
    """Phase-1 verdict on {Gz <= W, Fz = S}.

    Returns (feasible, z0, certificate): `z0` satisfies the system up to
    `tol` when feasible; `certificate` is a FarkasCertificate otherwise.
    """
    if G is None and F is None:
        return True, np.zeros(0), None
    if G is not None:
        G = np.atleast_2d(np.asarray(G, dtype=float))
        W = np.asarray(W, dtype=float).reshape(-1)
        v = G.shape[1]
    else:
        F = np.atleast_2d(np.asarray(F, dtype=float))
        v = F.shape[1]
    F = _as_matrix(F, None, v, "F")
    S = _as_vector(S, F.shape[0], "S")
    G = _as_matrix(G, None, v, "G")
    W = _as_vector(W, G.shape[0], "W")
    k, e = G.shape[0], F.shape[0]
    w_scale = 1.0 + float(np.max(np.abs(W), initial=0.0)) + float(np.max(np.abs(S), initial=0.0))
    if tol is None:
        tol = 1e-9 * w_scale

    z0 = np.zeros(v)
    if e:
        z0, *_ = np.linalg.lstsq(F, S, rcond=None)
        if float(np.max(np.abs(F @ z0 - S), initial=0.0)) > 1e-9 * w_scale:
            return False, None, _certificate_from_eq(F, S)
    if k == 0:
        return True, z0, None
    if float(np.max(G @ z0 - W)) <= tol:
        return True, z0, None

    # min t  s.t.  Gz - t*1 <= W,  -t <= 1,  Fz = S
    Gp = np.block([[G, -np.ones((k, 1))], [np.zeros((1, v)), -np.ones((1, 1))]])
    Wp = np.concatenate([W, [1.0]])
    Fp = np.hstack([F, np.zeros((e, 1))]) if e else None
    fp = np.zeros(v + 1)
    fp[-1] = 1.0
    sol = _ipm(np.zeros((v + 1, v + 1)), fp, 0.0, Gp, Wp,
               Fp if e else np.zeros((0, v + 1)), S, lp_mode=True)
    t_star = sol.z_star[-1]
    if sol.status is Status.OPTIMAL and t_star <= tol:
        return True, sol.z_star[:v], None
    if sol.status is Status.OPTIMAL and t_star > tol:
        y = sol.lam[:k]
        mu = sol.nu.copy() if e else np.zeros(0)
        total = float(np.sum(y))
        if total > 1e-12:
            y = y / total
            mu = mu / total
        cert = FarkasCertificate(y, mu, float(W @ y + (S @ mu if e else 0.0)))
        return False, None, cert
    # phase-1 itself stalled: report infeasible=False conservatively
    return True, sol.z_star[:v] if sol.z_star.size else z0, None


def _dual_feasible(f, G, F):
    """LP dual feasibility: does {F'nu + G'lam = -f, lam >= 0} have a point?"""
    v, k, e = f.size, G.shape[0], F.shape[0]
    Feq = np.hstack([F.T, G.T]) if e else G.T
    Gin = np.hstack([np.zeros((k, e)), -np.eye(k)]) if e else -np.eye(k)
    feasible, _, _ = check_feasible(Gin if k else None, np.zeros(k) if k else None,
                                    Feq, -f)
    return feasible


def solve(prob: QpProblem, max_iter: int = 100) -> QpSolution:
    """Solve the canonical QP.

    Returns a `QpSolution` whose status is Optimal (KKT residuals within the
    module tolerances), Infeasible (with a Farkas certificate), Unbounded,
    or MaxIter.  Raises `NonConvex` if H has an eigenvalue below -1e-8.

    The interior-point run is attempted directly; primal and dual phase-1
    diagnoses run only when it fails, so feasible problems pay for a single
    solve.
    """
    _validate_convexity(prob.H)
    H = 0.5 * (prob.H + prob.H.T)
    f, r, G, W, F, S = prob.f, prob.r, prob.G, prob.W, prob.F, prob.S
    lp_mode = float(np.max(np.abs(H), initial=0.0)) == 0.0
    sol = _ipm(H, f, r, G, W, F, S, max_iter=max_iter, lp_mode=lp_mode)
    if sol.status is Status.OPTIMAL:
        return sol
    feasible, _, cert = check_feasible(G if G.shape[0] else None,
                                       W if G.shape[0] else None,
                                       F if F.shape[0] else None,
                                       S if F.shape[0] else None)
    if not feasible:
        return QpSolution(np.full(prob.n_var, np.nan), np.nan, np.zeros(F.shape[0]),
                          np.zeros(G.shape[0]), Status.INFEASIBLE, certificate=cert)
    if lp_mode and not _dual_feasible(f, G, F):
        return QpSolution(np.full(prob.n_var, np.nan), -np.inf, np.zeros(F.shape[0]),
                          np.zeros(G.shape[0]), Status.UNBOUNDED)
    return sol


def solve_lp(f, G=None, W=None, F=None, S=None, max_iter: int = 100) -> QpSolution:
    """Solve min f'z s.t. Gz <= W, Fz = S through the regularized QP path."""
    f = np.asarray(f, dtype=float).reshape(-1)
    prob = QpProblem(np.zeros((f.size, f.size)), f, 0.0, G, W, F, S)
    return solve(prob, max_iter=max_iter)
