"""Constrained LTI plant and its equilibrium/setpoint geometry.

The equilibrium subspace of x+ = Ax + Bu is the null space of [(A-I) B];
with (A, B) stabilizable it has dimension m and is parameterized by a
minimal coordinate theta through (x_s, u_s) = M_theta @ theta.  The
reachable steady sets are affine images of the polytope
{theta : M_theta theta in lambda*Z}.
"""

from dataclasses import dataclass, field

import numpy as np

from . import polytope, qp
from .errors import (
    ConfigError, DegenerateNullSpace, DimensionMismatch, EmptyReachableSet,
    NotControllable, ProjectionDimTooHigh,
)
from .polytope import HPolytope

RANK_RTOL = 1e-9  # singular values below RANK_RTOL * sigma_max count as zero


@dataclass(frozen=True)
class LtiModel:
    """Discrete-time plant x+ = Ax + Bu, y = Cx + Du."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "C", "D"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        n, m, p = self.A.shape[0], self.B.shape[1], self.C.shape[0]
        if n < 1 or m < 1 or p < 1:
            raise ConfigError("n, m, p must all be at least 1")
        if self.A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {self.A.shape}")
        if self.B.shape != (n, m):
            raise DimensionMismatch(f"B must be {n}x{m}, got {self.B.shape}")
        if self.C.shape != (p, n):
            raise DimensionMismatch(f"C must be {p}x{n}, got {self.C.shape}")
        if self.D.shape != (p, m):
            raise DimensionMismatch(f"D must be {p}x{m}, got {self.D.shape}")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def output(self, x, u):
        return self.C @ np.asarray(x, dtype=float) + self.D @ np.asarray(u, dtype=float)

    def step(self, x, u):
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.asarray(u, dtype=float)


@dataclass(frozen=True)
class ConstraintSet:
    """Joint state-input constraint polytope Z in dimension n+m.

    `lam` shrinks the set used for admissible equilibria; values arbitrarily
    close to 1 lose nothing in practice.  lam = 1 is accepted to reproduce
    boundary pathologies deliberately.
    """

    Z: HPolytope
    lam: float = 0.99

    def __post_init__(self):
        if not (0.0 < self.lam <= 1.0):
            raise ConfigError(f"lambda must be in (0, 1], got {self.lam}")

    def validate(self, model: LtiModel):
        """Shape/interior/boundedness checks; call once at load time."""
        n, m = model.n, model.m
        if self.Z.d != n + m:
            raise ConfigError(
                f"constraint set has dimension {self.Z.d}, expected n+m={n + m}")
        if np.any(self.Z.w <= 0):
            raise ConfigError("origin must lie in the interior of Z (all w > 0)")
        # input projection must be bounded: max +-u_i over Z finite
        for i in range(m):
            for sgn in (1.0, -1.0):
                f = np.zeros(n + m)
                f[n + i] = sgn
                if qp.solve_lp(-f, self.Z.G, self.Z.w).status is qp.Status.UNBOUNDED:
                    raise ConfigError(
                        f"input coordinate u_{i} unbounded over Z")
        return self

    @classmethod
    def from_box(cls, x_bound, u_bound, n, m, lam=0.99):
        """Box shorthand ||x||_inf <= x_bound, ||u||_inf <= u_bound.

        Bounds may be scalars or per-coordinate arrays; None leaves that
        block unconstrained.
        """
        rows, offs = [], []
        if x_bound is not None:
            bx = np.broadcast_to(np.asarray(x_bound, dtype=float), (n,))
            E = np.hstack([np.eye(n), np.zeros((n, m))])
            rows += [E, -E]
            offs += [bx, bx]
        if u_bound is not None:
            bu = np.broadcast_to(np.asarray(u_bound, dtype=float), (m,))
            E = np.hstack([np.zeros((m, n)), np.eye(m)])
            rows += [E, -E]
            offs += [bu, bu]
        if not rows:
            raise ConfigError("at least one of x_bound/u_bound is required")
        return cls(HPolytope(np.vstack(rows), np.concatenate(offs)), lam)


def _rank(M, rtol=RANK_RTOL):
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(sv > rtol * sv[0])) if sv[0] > 0 else 0


def _pbh_stabilizable(A, B, rtol=RANK_RTOL):
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - 1e-9:
            if _rank(np.hstack([lam * np.eye(n) - A, B.astype(complex)]), rtol) < n:
                return False
    return True


def check_stabilizability(model: LtiModel) -> bool:
    """PBH test: rank [lam*I - A, B] = n for every eigenvalue with |lam| >= 1."""
    return _pbh_stabilizable(model.A, model.B)


def check_output_rank(model: LtiModel) -> bool:
    """True iff every output value has an associated equilibrium.

    Tests rank [[A-I, B], [C, D]] == n + p, which requires m >= p.
    """
    n = model.n
    M = np.block([[model.A - np.eye(n), model.B], [model.C, model.D]])
    return _rank(M) == n + model.p


def controllability_index(model: LtiModel) -> int:
    """Smallest n_c with [A^(n_c-1)B, ..., B] of full row rank."""
    n = model.n
    lead = model.B  # A^(j-1) B for the current j
    stack = model.B
    for j in range(1, n + 1):
        if _rank(stack) == n:
            return j
        lead = model.A @ lead
        stack = np.hstack([lead, stack])
    raise NotControllable("no n_c <= n reaches full rank; (A, B) not controllable")


@dataclass(frozen=True)
class SteadyStateMap:
    """Orthonormal basis of the equilibrium subspace and its output map."""

    M_theta: np.ndarray    # (n+m) x m
    N_theta: np.ndarray    # p x m
    M_theta_x: np.ndarray  # n x m
    M_theta_u: np.ndarray  # m x m

    @property
    def m(self):
        return self.M_theta.shape[1]

    def equilibrium(self, theta):
        """Map theta to (x_s, u_s)."""
        z = self.M_theta @ np.asarray(theta, dtype=float)
        n = self.M_theta_x.shape[0]
        return z[:n], z[n:]


def steady_state_basis(model: LtiModel) -> SteadyStateMap:
    """Null-space basis of [(A-I) B], orthonormal from an SVD.

    The basis is unique only up to span; compare spans, not entries.
    """
    n, m = model.n, model.m
    E = np.hstack([model.A - np.eye(n), model.B])
    _, sv, Vt = np.linalg.svd(E)
    tol = RANK_RTOL * (sv[0] if sv.size and sv[0] > 0 else 1.0)
    rank = int(np.sum(sv > tol))
    null = Vt[rank:].T  # (n+m) x (n+m-rank), orthonormal columns
    if null.shape[1] != m:
        raise DegenerateNullSpace(
            f"equilibrium subspace has dimension {null.shape[1]}, expected m={m}")
    M_theta = null
    N_theta = np.hstack([model.C, model.D]) @ M_theta
    return SteadyStateMap(M_theta, N_theta, M_theta[:n], M_theta[n:])


class ReachableSets:
    """Reachable steady states/inputs/outputs inside the shrunk constraints.

    Holds the theta-space polytope {theta : M_theta theta in lam*Z}; the
    explicit half-space images (X_sp, U_sp, Y_sp, Z_sp) are computed on
    first access and only exist for image dimension <= 3.  Membership
    queries work at any dimension through feasibility LPs in theta space.
    """

    def __init__(self, ssmap: SteadyStateMap, theta_set: HPolytope, lam: float):
        self.ssmap = ssmap
        self.theta_set = theta_set
        self.lam = lam
        self._cache = {}

    def _image(self, key, M):
        if key not in self._cache:
            if M.shape[0] > 3:
                raise ProjectionDimTooHigh(
                    f"{key} has dimension {M.shape[0]} > 3; use membership queries")
            self._cache[key] = polytope.remove_redundant(
                polytope.affine_image(self.theta_set, M))
        return self._cache[key]

    @property
    def X_sp(self):
        return self._image("X_sp", self.ssmap.M_theta_x)

    @property
    def U_sp(self):
        return self._image("U_sp", self.ssmap.M_theta_u)

    @property
    def Y_sp(self):
        return self._image("Y_sp", self.ssmap.N_theta)

    @property
    def Z_sp(self):
        return self._image("Z_sp", self.ssmap.M_theta)

    def _member(self, M, target, tol):
        feasible, _, _ = qp.check_feasible(
            self.theta_set.G, self.theta_set.w, M, target, tol=tol)
        return feasible

    def member_x(self, x, tol=1e-8):
        return self._member(self.ssmap.M_theta_x, x, tol)

    def member_y(self, y, tol=1e-8):
        return self._member(self.ssmap.N_theta, y, tol)

    def member_z(self, z, tol=1e-8):
        return self._member(self.ssmap.M_theta, z, tol)


def reachable_steady_sets(model: LtiModel, cons: ConstraintSet,
                          ssmap: SteadyStateMap = None) -> ReachableSets:
    """Theta polytope of admissible equilibria and its affine images."""
    if ssmap is None:
        ssmap = steady_state_basis(model)
    G_theta = cons.Z.G @ ssmap.M_theta
    w_theta = cons.lam * cons.Z.w
    theta_set = polytope.remove_redundant(HPolytope(G_theta, w_theta))
    return ReachableSets(ssmap, theta_set, cons.lam)


def sample_theta(sets: ReachableSets, count, rng, interior=1e-9):
    """Rejection-sample `count` points from the theta polytope.

    Requires a bounded theta set; samples come from its bounding box and
    are accepted when strictly inside by `interior`.
    """
    P = sets.theta_set
    m = P.d
    lo, hi = np.zeros(m), np.zeros(m)
    for i in range(m):
        f = np.zeros(m)
        f[i] = 1.0
        s_max = qp.solve_lp(-f, P.G, P.w)
        s_min = qp.solve_lp(f, P.G, P.w)
        if s_max.status is not qp.Status.OPTIMAL or s_min.status is not qp.Status.OPTIMAL:
            raise EmptyReachableSet("theta set empty or unbounded; cannot sample")
        hi[i], lo[i] = s_max.z_star[i], s_min.z_star[i]
    out = np.zeros((count, m))
    got = 0
    attempts = 0
    while got < count:
        cand = rng.uniform(lo, hi, size=(max(count, 64), m))
        for c in cand:
            if np.all(P.G @ c <= P.w - interior):
                out[got] = c
                got += 1
                if got == count:
                    break
        attempts += 1
        if attempts > 1000:
            raise EmptyReachableSet("rejection sampling failed (thin theta set?)")
    return out


def equilibrium_for_setpoint(model: LtiModel, ssmap: SteadyStateMap,
                             sets: ReachableSets, y_sp, offset_cost):
    """Admissible equilibrium whose output minimizes the offset cost.

    Minimizes V_O(N_theta theta, y_sp) over the theta polytope and returns
    (x_s, u_s, y_t); this is the target the closed loop should settle on,
    and equals y_sp whenever y_sp is itself reachable.
    """
    y_sp = np.asarray(y_sp, dtype=float).reshape(-1)
    if y_sp.size != model.p:
        raise DimensionMismatch(f"y_sp has dim {y_sp.size}, expected p={model.p}")
    P = sets.theta_set
    if polytope.is_empty(P):
        raise EmptyReachableSet("no admissible equilibrium in lambda*Z")
    m, p = ssmap.m, model.p
    N = ssmap.N_theta
    kind = offset_cost.kind
    if kind == "quadratic":
        T = np.asarray(offset_cost.T, dtype=float)
        prob = qp.QpProblem(2.0 * N.T @ T @ N, -2.0 * N.T @ T @ y_sp,
                            float(y_sp @ T @ y_sp), P.G, P.w)
    elif kind == "one_norm":
        # variables (theta, s): min gamma*sum(s) s.t. |N theta - y_sp| <= s
        v = m + p
        f = np.concatenate([np.zeros(m), offset_cost.gamma * np.ones(p)])
        G = np.block([
            [P.G, np.zeros((P.n_rows, p))],
            [N, -np.eye(p)],
            [-N, -np.eye(p)],
        ])
        W = np.concatenate([P.w, y_sp, -y_sp])
        prob = qp.QpProblem(np.zeros((v, v)), f, 0.0, G, W)
    elif kind == "inf_norm":
        # variables (theta, t): min gamma*t s.t. |N theta - y_sp| <= t*1, t >= 0
        v = m + 1
        f = np.concatenate([np.zeros(m), [offset_cost.gamma]])
        ones = np.ones((p, 1))
        G = np.block([
            [P.G, np.zeros((P.n_rows, 1))],
            [N, -ones],
            [-N, -ones],
            [np.zeros((1, m)), -np.ones((1, 1))],
        ])
        W = np.concatenate([P.w, y_sp, -y_sp, [0.0]])
        prob = qp.QpProblem(np.zeros((v, v)), f, 0.0, G, W)
    else:
        raise ConfigError(f"unknown offset cost kind {kind!r}")
    sol = qp.solve(prob)
    if sol.status is not qp.Status.OPTIMAL:
        raise EmptyReachableSet(
            f"offset minimization failed with status {sol.status}")
    theta = sol.z_star[:m]
    x_s, u_s = ssmap.equilibrium(theta)
    y_t = N @ theta
    return x_s, u_s, y_t
