"""Terminal ingredients: gain K, cost matrix P, and the tracking invariant set.

The invariant set lives in (x, theta) coordinates: the terminal law
u = Kx + L*theta with L = [-K I] M_theta drives the augmented system
xbar+ = Abar xbar, Abar = [[A+BK, BL], [0, I_m]], and the set is the
maximal admissible invariant set of that autonomous system inside
Xbar = {(x, theta) : (x, Kx + L theta) in Z, M_theta theta in lam*Z}.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import polytope
from .errors import NoConvergence, UnstableGain
from .model import ConstraintSet, LtiModel, SteadyStateMap, steady_state_basis, _pbh_stabilizable
from .polytope import HPolytope


@dataclass(frozen=True)
class TerminalIngredients:
    """Gain, terminal cost, and invariant set for the inequality variant."""

    K: np.ndarray                 # m x n, u = Kx stabilizing
    P: np.ndarray                 # n x n positive definite
    Omega_a: HPolytope            # invariant set for tracking, dim n+m in (x, theta)
    Omega_x: HPolytope = None     # projection onto x, only kept for n <= 3
    mais_iterations: int = 0

    def to_json(self):
        data = {
            "K": self.K.tolist(),
            "P": self.P.tolist(),
            "Omega_a": self.Omega_a.to_json(),
            "mais_iterations": self.mais_iterations,
        }
        if self.Omega_x is not None:
            data["Omega_x"] = self.Omega_x.to_json()
        return data

    @classmethod
    def from_json(cls, data):
        if isinstance(data, str):
            data = json.loads(data)
        return cls(
            K=np.asarray(data["K"], dtype=float),
            P=np.asarray(data["P"], dtype=float),
            Omega_a=HPolytope.from_json(data["Omega_a"]),
            Omega_x=HPolytope.from_json(data["Omega_x"]) if "Omega_x" in data else None,
            mais_iterations=int(data.get("mais_iterations", 0)),
        )


def _check_weights(A, Q, R):
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    if np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 1e-12:
        raise ValueError("R must be positive definite")
    eq = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    if eq[0] < -1e-10:
        raise ValueError("Q must be positive semidefinite")
    # (Q^{1/2}, A) observability
    w, V = np.linalg.eigh(0.5 * (Q + Q.T))
    Qh = V @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ V.T
    obs = np.vstack([Qh @ np.linalg.matrix_power(A, j) for j in range(n)])
    sv = np.linalg.svd(obs, compute_uv=False)
    if sv[0] == 0 or np.sum(sv > 1e-9 * sv[0]) < n:
        raise ValueError("(Q^(1/2), A) must be observable")
    return Q, R


def dlqr(A, B, Q, R, tol=1e-12, max_iter=10000):
    """Infinite-horizon LQR via fixed-point iteration on the Riccati map.

    Iterates P <- A'PA - A'PB (R + B'PB)^(-1) B'PA + Q with adaptive
    damping, stopping on relative change <= `tol`.  Returns (K, P) with
    u = Kx stabilizing, K = -(R + B'PB)^(-1) B'PA.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] != A.shape[0]:
        B = B.reshape(A.shape[0], -1)
    Q, R = _check_weights(A, Q, R)
    if not _pbh_stabilizable(A, B):
        raise ValueError("(A, B) must be stabilizable")
    P = Q.copy()
    damping = 1.0
    for it in range(max_iter):
        BtPB = R + B.T @ P @ B
        BtPA = B.T @ P @ A
        step = A.T @ P @ A - BtPA.T @ np.linalg.solve(BtPB, BtPA) + Q
        P_next = (1.0 - damping) * P + damping * step
        P_next = 0.5 * (P_next + P_next.T)
        change = np.max(np.abs(P_next - P)) / max(1.0, np.max(np.abs(P)))
        if not np.isfinite(change):
            damping *= 0.5
            continue
        P = P_next
        if change <= tol:
            break
    else:
        raise NoConvergence(f"Riccati iteration not converged in {max_iter} steps")
    BtPA = B.T @ P @ A
    K = -np.linalg.solve(R + B.T @ P @ B, BtPA)
    resid = np.max(np.abs(
        A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q - P))
    if resid > 1e-9 * max(1.0, np.max(np.abs(P))):
        raise NoConvergence(f"Riccati residual {resid:.2e} above tolerance")
    return K, P


def dlyap_for_gain(A, B, K, Q, R):
    """P solving (A+BK)'P(A+BK) - P = -(Q + K'RK) for a stabilizing K.

    The equality solution satisfies the terminal-cost inequality with
    equality; solved densely through the Kronecker form.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Acl = A + B @ K
    n = Acl.shape[0]
    rho = float(np.max(np.abs(np.linalg.eigvals(Acl))))
    if rho >= 1.0 - 1e-9:
        raise UnstableGain(f"spectral radius of A+BK is {rho:.6g}")
    Qbar = Q + K.T @ R @ K
    # vec(Acl' P Acl - P) = (kron(Acl', Acl') - I) vec(P)
    lhs = np.kron(Acl.T, Acl.T) - np.eye(n * n)
    P = np.linalg.solve(lhs, -Qbar.reshape(-1)).reshape(n, n)
    return 0.5 * (P + P.T)


def tracking_constraint_set(model: LtiModel, cons: ConstraintSet, K,
                            ssmap: SteadyStateMap = None):
    """Abar and Xbar of the terminal-law augmented system in (x, theta)."""
    if ssmap is None:
        ssmap = steady_state_basis(model)
    n, m = model.n, model.m
    K = np.atleast_2d(np.asarray(K, dtype=float))
    L = np.hstack([-K, np.eye(m)]) @ ssmap.M_theta
    Abar = np.block([[model.A + model.B @ K, model.B @ L],
                     [np.zeros((m, n)), np.eye(m)]])
    # (x, Kx + L theta) in Z
    lift = np.block([[np.eye(n), np.zeros((n, m))], [K, L]])
    G1 = cons.Z.G @ lift
    w1 = cons.Z.w
    # M_theta theta in lam*Z
    G2 = np.hstack([np.zeros((cons.Z.n_rows, n)), cons.Z.G @ ssmap.M_theta])
    w2 = cons.lam * cons.Z.w
    Xbar = HPolytope(np.vstack([G1, G2]), np.concatenate([w1, w2]))
    return Abar, Xbar, L


def build_invariant_set_for_tracking(model: LtiModel, cons: ConstraintSet, K,
                                     ssmap: SteadyStateMap = None,
                                     max_iter=200):
    """Invariant set for tracking in (x, theta) coordinates.

    Every admissible equilibrium is a fixed point of the augmented dynamics
    and therefore belongs to the returned set.  Returns (Omega_a, iterations).
    """
    Abar, Xbar, _ = tracking_constraint_set(model, cons, K, ssmap)
    return polytope.mais(Abar, Xbar, max_iter=max_iter)


def make_terminal_ingredients(model: LtiModel, cons: ConstraintSet, Q, R,
                              K=None, P=None, max_iter=200,
                              ssmap: SteadyStateMap = None) -> TerminalIngredients:
    """Bundle K (LQR by default), P (Riccati by default), and the set."""
    if K is None:
        K, P_ric = dlqr(model.A, model.B, Q, R)
        if P is None:
            P = P_ric
    elif P is None:
        P = dlyap_for_gain(model.A, model.B, K, Q, R)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    omega_a, iters = build_invariant_set_for_tracking(
        model, cons, K, ssmap=ssmap, max_iter=max_iter)
    omega_x = None
    if model.n <= 3:
        omega_x = polytope.fm_project(omega_a, range(model.n))
    return TerminalIngredients(K, P, omega_a, omega_x, iters)
