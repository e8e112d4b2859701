"""Half-space polytope algebra and the invariant-set recursion.

All sets are `HPolytope` values {z : Gz <= w}.  Emptiness, redundancy, and
membership-in-projection questions are answered with feasibility LPs solved
by the in-repo solver; explicit projections use Fourier-Motzkin elimination
and are limited to 3 kept dimensions (higher-dimensional membership stays
available through the lifted feasibility LPs).
"""

import json
import warnings

import numpy as np

from . import qp
from .errors import (
    DimensionMismatch, EmptySetError, MaxIterationsExceeded,
    ProjectionDimTooHigh, SolverError,
)

REDUNDANCY_SLACK = 1e-9


class HPolytope:
    """Immutable half-space representation {z in R^d : Gz <= w}."""

    __slots__ = ("G", "w")

    def __init__(self, G, w):
        G = np.atleast_2d(np.asarray(G, dtype=float))
        w = np.asarray(w, dtype=float).reshape(-1)
        if G.shape[0] != w.size:
            raise DimensionMismatch(
                f"G has {G.shape[0]} rows but w has {w.size} entries")
        G.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "w", w)

    def __setattr__(self, name, value):
        raise AttributeError("HPolytope is immutable")

    @property
    def d(self):
        return self.G.shape[1]

    @property
    def n_rows(self):
        return self.G.shape[0]

    @classmethod
    def box(cls, lo, hi):
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        d = lo.size
        return cls(np.vstack([np.eye(d), -np.eye(d)]), np.concatenate([hi, -lo]))

    @classmethod
    def inf_ball(cls, radius, d):
        r = float(radius)
        return cls.box(-r * np.ones(d), r * np.ones(d))

    def contains(self, z, tol=1e-9):
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.size != self.d:
            raise DimensionMismatch(f"point has dim {z.size}, set has dim {self.d}")
        return bool(np.all(self.G @ z <= self.w + tol))

    def scale(self, c):
        """The scaled set c*P = {c*z : z in P}, c > 0."""
        if c <= 0:
            raise ValueError("scale factor must be positive")
        return HPolytope(self.G, float(c) * self.w)

    def to_json(self):
        return {"G": self.G.tolist(), "w": self.w.tolist()}

    @classmethod
    def from_json(cls, data):
        if isinstance(data, str):
            data = json.loads(data)
        return cls(np.asarray(data["G"]), np.asarray(data["w"]))

    def __repr__(self):
        return f"HPolytope(d={self.d}, rows={self.n_rows})"


def contains(P, z, tol=1e-9):
    return P.contains(z, tol)


def is_empty(P, tol=None):
    """Emptiness via a phase-1 LP."""
    feasible, _, _ = qp.check_feasible(P.G, P.w, tol=tol)
    return not feasible


def chebyshev_center(P):
    """Center and radius of the largest Euclidean ball inside P.

    Radius is negative when P is empty; an unbounded center LP raises
    SolverError.
    """
    norms = np.linalg.norm(P.G, axis=1)
    d = P.d
    # max r  s.t.  Gz + norms*r <= w
    f = np.zeros(d + 1)
    f[-1] = -1.0
    G = np.hstack([P.G, norms[:, None]])
    sol = qp.solve_lp(f, G, P.w)
    if sol.status is qp.Status.UNBOUNDED:
        raise SolverError("Chebyshev-center LP unbounded (set not full rank?)")
    if sol.status is not qp.Status.OPTIMAL:
        raise SolverError(f"Chebyshev-center LP failed: {sol.status}")
    return sol.z_star[:d], float(sol.z_star[-1])


def _row_redundant(G_keep, w_keep, g, w_i, slack):
    """Is g'z <= w_i implied by {G_keep z <= w_keep}?

    The tested row itself (with +1 slack) is appended to keep the LP bounded.
    """
    if G_keep.shape[0] == 0:
        return False
    G_lp = np.vstack([G_keep, g[None, :]])
    w_lp = np.concatenate([w_keep, [w_i + 1.0]])
    sol = qp.solve_lp(-g, G_lp, w_lp)
    if sol.status is qp.Status.INFEASIBLE:
        return True  # remaining system empty; every row is implied
    if sol.status is not qp.Status.OPTIMAL:
        raise SolverError(f"redundancy LP failed: {sol.status} {sol.diagnostics}")
    return float(-sol.value) <= w_i + slack


def _drop_trivial(G, w):
    """Strip zero rows with nonnegative offsets and dominated parallel rows."""
    best = {}
    zero_keep = []
    for i in range(G.shape[0]):
        norm = float(np.linalg.norm(G[i]))
        if norm <= 1e-12:
            if w[i] < -1e-12:
                zero_keep.append(i)  # infeasible marker row, keep it honest
            continue
        key = tuple(np.round(G[i] / norm, 12))
        wn = w[i] / norm
        if key not in best or wn < best[key][0]:
            best[key] = (wn, i)
    keep = sorted(zero_keep + [i for _, i in best.values()])
    return G[keep], w[keep]


def remove_redundant(P, slack=REDUNDANCY_SLACK):
    """Minimal representation: drop every row implied by the others."""
    G, w = _drop_trivial(P.G, P.w)
    i = 0
    while i < G.shape[0]:
        rest = np.ones(G.shape[0], dtype=bool)
        rest[i] = False
        if _row_redundant(G[rest], w[rest], G[i], w[i], slack):
            G, w = G[rest], w[rest]
        else:
            i += 1
    return HPolytope(G, w)


def intersect(P1, P2):
    if P1.d != P2.d:
        raise DimensionMismatch(f"dims {P1.d} and {P2.d} differ")
    stacked = HPolytope(np.vstack([P1.G, P2.G]), np.concatenate([P1.w, P2.w]))
    return remove_redundant(stacked)


def _eliminate_one(G, w, j):
    """Fourier-Motzkin elimination of coordinate j."""
    col = G[:, j]
    pos = np.where(col > 1e-12)[0]
    neg = np.where(col < -1e-12)[0]
    zero = np.where(np.abs(col) <= 1e-12)[0]
    rows = [np.delete(G[zero], j, axis=1)]
    offs = [w[zero]]
    for ip in pos:
        gp = G[ip] / col[ip]
        wp = w[ip] / col[ip]
        for im in neg:
            gm = G[im] / (-col[im])
            wm = w[im] / (-col[im])
            rows.append(np.delete(gp + gm, j)[None, :])
            offs.append([wp + wm])
    G_new = np.vstack(rows) if rows else np.zeros((0, G.shape[1] - 1))
    w_new = np.concatenate([np.asarray(o, dtype=float) for o in offs])
    return G_new, w_new


def fm_project(P, keep, slack=REDUNDANCY_SLACK):
    """Project onto the coordinates in `keep` by Fourier-Motzkin elimination.

    Redundancy is removed after every single-variable elimination to keep
    row counts bounded.  Explicit projections are for reporting/plotting, so
    at most 3 coordinates may be kept.
    """
    keep = sorted(set(int(i) for i in keep))
    if len(keep) > 3:
        raise ProjectionDimTooHigh(f"{len(keep)} kept dimensions (max 3)")
    if any(i < 0 or i >= P.d for i in keep):
        raise DimensionMismatch("keep indices out of range")
    drop = [j for j in range(P.d) if j not in keep]
    G, w = P.G.copy(), P.w.copy()
    # track original coordinate identities as columns get deleted
    cols = list(range(P.d))
    for j_orig in drop:
        j = cols.index(j_orig)
        G, w = _eliminate_one(G, w, j)
        cols.pop(j)
        reduced = remove_redundant(HPolytope(G, w), slack)
        G, w = reduced.G.copy(), reduced.w.copy()
    return HPolytope(G, w)


def affine_image(P, M):
    """The image {Mz : z in P} as an explicit HPolytope (image dim <= 3).

    Lift to (y, z) with y = Mz encoded as paired inequalities, then project
    onto y.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    e, d = M.shape
    if d != P.d:
        raise DimensionMismatch(f"map expects dim {d}, set has dim {P.d}")
    if e > 3:
        raise ProjectionDimTooHigh(f"image dimension {e} (max 3)")
    G_lift = np.block([
        [np.zeros((P.n_rows, e)), P.G],
        [np.eye(e), -M],
        [-np.eye(e), M],
    ])
    w_lift = np.concatenate([P.w, np.zeros(2 * e)])
    return fm_project(HPolytope(G_lift, w_lift), range(e))


def mais(Abar, Xbar, max_iter=200, slack=REDUNDANCY_SLACK):
    """Maximal admissible invariant set for x+ = Abar x subject to x in Xbar.

    Runs O_{j+1} = O_j intersect {x : Abar^{j+1} x in Xbar} from O_0 = Xbar
    and stops when every candidate new row is redundant with respect to the
    current iterate (the numerically robust reading of O_{j+1} = O_j).
    Returns (O_inf, iterations) where `iterations` counts recursion steps
    including the final confirming one.

    Raises MaxIterationsExceeded when the recursion is not finitely
    determined within `max_iter` steps at this tolerance.
    """
    Abar = np.atleast_2d(np.asarray(Abar, dtype=float))
    if Abar.shape[0] != Abar.shape[1] or Abar.shape[0] != Xbar.d:
        raise DimensionMismatch("Abar must be square with Xbar's dimension")
    if is_empty(Xbar):
        raise EmptySetError("Xbar is empty")
    rho = float(np.max(np.abs(np.linalg.eigvals(Abar))))
    if rho > 1.0 + 1e-9:
        warnings.warn(f"spectral radius {rho:.6g} > 1; recursion may not terminate",
                      RuntimeWarning, stacklevel=2)

    O = remove_redundant(Xbar, slack)
    Apow = Abar.copy()
    for j in range(1, max_iter + 1):
        cand_G = Xbar.G @ Apow
        new = [i for i in range(cand_G.shape[0])
               if not _row_redundant(O.G, O.w, cand_G[i], Xbar.w[i], slack)]
        if not new:
            return O, j
        O = remove_redundant(
            HPolytope(np.vstack([O.G, cand_G[new]]),
                      np.concatenate([O.w, Xbar.w[new]])), slack)
        Apow = Apow @ Abar
    raise MaxIterationsExceeded(
        f"invariant-set recursion still adding rows after {max_iter} steps")


def is_bounded(P):
    """True iff max +-e_i is finite over P for every coordinate."""
    for i in range(P.d):
        for sgn in (1.0, -1.0):
            f = np.zeros(P.d)
            f[i] = sgn
            if qp.solve_lp(f, P.G, P.w).status is qp.Status.UNBOUNDED:
                return False
    return True


def vertices_2d(P, tol=1e-7):
    """Vertices of a bounded 2-D polytope, sorted counter-clockwise.

    Enumerates pairwise boundary intersections and keeps the ones inside P.
    """
    if P.d != 2:
        raise DimensionMismatch("vertex enumeration only for d = 2")
    if not is_bounded(P):
        raise EmptySetError("vertex enumeration needs a bounded set")
    pts = []
    k = P.n_rows
    for i in range(k):
        for j in range(i + 1, k):
            A = np.vstack([P.G[i], P.G[j]])
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            z = np.linalg.solve(A, np.array([P.w[i], P.w[j]]))
            if P.contains(z, tol):
                pts.append(z)
    if not pts:
        return np.zeros((0, 2))
    pts = np.array(pts)
    # dedupe
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    keep = [0]
    for i in range(1, len(pts)):
        if np.max(np.abs(pts[i] - pts[keep[-1]])) > 1e-8:
            keep.append(i)
    pts = pts[keep]
    center = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0])
    return pts[np.argsort(ang)]
