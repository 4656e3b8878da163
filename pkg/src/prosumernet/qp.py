"""Dense convex quadratic programming with KKT-certified duals.

Embedded solver used everywhere in this package: a Mehrotra
predictor-corrector interior-point method for convex QPs with linear
equalities, inequalities and variable boxes, plus a best-first
branch-and-bound on binary variables for mixed-binary QPs.  Problem
sizes are desk scale (up to a few thousand variables), so all linear
algebra is dense.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import heapq

import numpy as np
import scipy.linalg as sla
from scipy.optimize import nnls

__all__ = [
    "QpProblem",
    "MipProblem",
    "Solution",
    "SolverError",
    "solve_qp",
    "solve_miqp",
]

# Certified tolerances for an "optimal" status (see Solution).
FEAS_TOL = 1e-6
STAT_TOL = 1e-6
COMP_TOL = 1e-6
INTEGRALITY_TOL = 1e-6
MIP_REL_GAP = 1e-8


class SolverError(ValueError):
    """Raised for malformed problems (dimension or convexity violations)."""


def _as_matrix(a, rows, cols, name):
    m = np.zeros((rows, cols)) if a is None else np.atleast_2d(np.asarray(a, dtype=float))
    if a is not None and m.shape != (rows, cols):
        raise SolverError(f"{name} has shape {m.shape}, expected {(rows, cols)}")
    return m


@dataclass
class QpProblem:
    """min 1/2 x'Qx + c'x  s.t.  A_eq x = b_eq,  A_in x <= b_in,  lb <= x <= ub."""

    n_vars: int
    Q: np.ndarray | None = None
    c: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    var_names: list[str] | None = None

    def __post_init__(self):
        n = self.n_vars
        if n < 1:
            raise SolverError("n_vars must be >= 1")
        q = self.Q
        if q is None:
            q = np.zeros((n, n))
        else:
            q = np.asarray(q, dtype=float)
            if q.ndim == 1:
                q = np.diag(q)
        if q.shape != (n, n):
            raise SolverError(f"Q has shape {q.shape}, expected ({n}, {n})")
        self.Q = q
        self.c = np.zeros(n) if self.c is None else np.asarray(self.c, dtype=float).reshape(n)
        me = 0 if self.b_eq is None else np.asarray(self.b_eq, dtype=float).size
        mi = 0 if self.b_in is None else np.asarray(self.b_in, dtype=float).size
        self.A_eq = _as_matrix(self.A_eq, me, n, "A_eq")
        self.b_eq = np.zeros(me) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).reshape(me)
        self.A_in = _as_matrix(self.A_in, mi, n, "A_in")
        self.b_in = np.zeros(mi) if self.b_in is None else np.asarray(self.b_in, dtype=float).reshape(mi)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(n).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(n).copy()
        if np.any(self.lb > self.ub + 1e-12):
            raise SolverError("lb > ub for some variable")

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def n_in(self) -> int:
        return self.A_in.shape[0]

    def validate(self, tol: float = 1e-8) -> None:
        """Check Q symmetric positive semidefinite (to tolerance)."""
        scale = 1.0 + np.abs(self.Q).max()
        if np.abs(self.Q - self.Q.T).max() > tol * scale:
            raise SolverError("Q is not symmetric")
        try:
            sla.cholesky(self.Q + 2 * tol * scale * np.eye(self.n_vars), lower=True)
        except sla.LinAlgError:
            raise SolverError("Q is not positive semidefinite") from None

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Q @ x + self.c @ x)


@dataclass
class MipProblem:
    """A QpProblem with a subset of variables restricted to {0, 1}."""

    qp: QpProblem
    binary_indices: list[int] = field(default_factory=list)
    big_M: float = 1.0

    def __post_init__(self):
        idx = sorted(set(int(i) for i in self.binary_indices))
        if idx and (idx[0] < 0 or idx[-1] >= self.qp.n_vars):
            raise SolverError("binary index out of range")
        if not self.big_M > 0:
            raise SolverError("big_M must be positive")
        self.binary_indices = idx


@dataclass
class Solution:
    """Solver result.

    Dual conventions: ``y_eq`` is the shadow price of ``b_eq`` (objective
    increases by ``y_eq`` per unit of rhs), ``mu_in >= 0`` multiplies
    ``A_in x <= b_in`` rows and ``z_lb, z_ub >= 0`` the variable bounds.
    When status is "optimal" the pair is KKT-certified: stationarity
    ``Qx + c - A_eq'y + A_in'mu + z_ub - z_lb = 0`` within STAT_TOL,
    constraints within FEAS_TOL, complementary slackness within COMP_TOL
    (measured residuals recorded in ``stats``).
    """

    status: str
    x: np.ndarray | None = None
    objective: float = np.nan
    y_eq: np.ndarray | None = None
    mu_in: np.ndarray | None = None
    z_lb: np.ndarray | None = None
    z_ub: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


# ---------------------------------------------------------------------------
# Interior-point core.
#
# Internal standard form:
#   min 1/2 x'Qx + c'x   s.t.   A x = b,
#                               A_in x <= b_in          (general rows)
#                               x_j <= ub_j, j in Ju    (upper box rows)
#                              -x_j <= -lb_j, j in Jl   (lower box rows)
# Box rows are kept implicit so G'WG assembly stays O(n_in * n^2 + n).
# ---------------------------------------------------------------------------


class _Standard:
    def __init__(self, p: QpProblem):
        n = p.n_vars
        fixed = np.isfinite(p.lb) & np.isfinite(p.ub) & (p.ub - p.lb <= 1e-14)
        self.fixed_idx = np.where(fixed)[0]
        extra = np.zeros((self.fixed_idx.size, n))
        extra[np.arange(self.fixed_idx.size), self.fixed_idx] = 1.0
        self.A = np.vstack([p.A_eq, extra]) if self.fixed_idx.size else p.A_eq
        self.b = np.concatenate([p.b_eq, p.lb[self.fixed_idx]]) if self.fixed_idx.size else p.b_eq
        free = ~fixed
        self.Ju = np.where(np.isfinite(p.ub) & free)[0]
        self.Jl = np.where(np.isfinite(p.lb) & free)[0]
        self.Ain = p.A_in
        self.bin = p.b_in
        self.ubv = p.ub[self.Ju]
        self.lbv = p.lb[self.Jl]
        self.n = n
        self.me = self.A.shape[0]
        self.mg = self.Ain.shape[0]
        self.mi = self.mg + self.Ju.size + self.Jl.size

    def g_mul(self, x):
        if self.mg == 0:
            return np.concatenate((x[self.Ju], -x[self.Jl]))
        return np.concatenate([self.Ain @ x, x[self.Ju], -x[self.Jl]])

    def gt_mul(self, v):
        # Ju/Jl hold unique indices, so fancy-indexed += is safe
        out = self.Ain.T @ v[: self.mg] if self.mg else np.zeros(self.n)
        out[self.Ju] += v[self.mg : self.mg + self.Ju.size]
        out[self.Jl] -= v[self.mg + self.Ju.size :]
        return out

    def h_vec(self):
        return np.concatenate([self.bin, self.ubv, -self.lbv])

    def gtwg_into(self, w, out):
        """Add G' diag(w) G into the preallocated (n, n) block ``out``."""
        if self.mg:
            out += self.Ain.T @ (w[: self.mg, None] * self.Ain)
        out[np.diag_indices(self.n)] += self.gtwg_diag(w)

    def gtwg_diag(self, w):
        """Diagonal of G' diag(w) G from the box rows only (mg == 0 path)."""
        d = np.zeros(self.n)
        d[self.Ju] += w[self.mg : self.mg + self.Ju.size]
        d[self.Jl] += w[self.mg + self.Ju.size :]
        return d


def _solve_eq_only(Q, c, A, b, n):
    """Equality-constrained QP via one KKT solve."""
    me = A.shape[0]
    K = np.zeros((n + me, n + me))
    K[:n, :n] = Q + 1e-12 * np.eye(n)
    K[:n, n:] = A.T
    K[n:, :n] = A
    K[n:, n:] = -1e-12 * np.eye(me)
    rhs = np.concatenate([-c, b])
    try:
        sol = sla.lu_solve(sla.lu_factor(K), rhs)
    except (sla.LinAlgError, ValueError):
        return None
    x, y = sol[:n], sol[n:]
    if not np.all(np.isfinite(x)):
        return None
    stat = Q @ x + c + (A.T @ y if me else 0.0)
    feas = A @ x - b if me else np.zeros(0)
    if np.abs(stat).max(initial=0.0) > STAT_TOL * (1 + np.abs(c).max(initial=0.0)):
        return None
    if np.abs(feas).max(initial=0.0) > FEAS_TOL * (1 + np.abs(b).max(initial=0.0)):
        return None
    return x, y


def _ipm(std: _Standard, Q, c, max_iter=100):
    """Mehrotra predictor-corrector.  Returns (status, x, y, z, iters)."""
    n, me, mi = std.n, std.me, std.mi
    A, b = std.A, std.b
    h = std.h_vec()

    x = np.zeros(n)
    # start inside the boxes where both sides are finite
    both = np.intersect1d(std.Ju, std.Jl)
    if both.size:
        lo = std.lbv[np.searchsorted(std.Jl, both)]
        hi = std.ubv[np.searchsorted(std.Ju, both)]
        x[both] = 0.5 * (lo + hi)
    s = np.maximum(h - std.g_mul(x), 1.0)
    z = np.ones(mi)
    y = np.zeros(me)

    norm_b = 1.0 + (np.abs(b).max() if me else 0.0) + (np.abs(h).max() if mi else 0.0)
    norm_c = 1.0 + np.abs(c).max(initial=0.0)
    eps = 1e-9

    # box-only inequalities with a diagonal Q admit a Schur-complement
    # factorization on the (small) equality block instead of a full KKT LU
    qdiag = np.diag(Q).copy()
    fast = std.mg == 0 and not np.any(Q - np.diag(qdiag))
    q_mul = (lambda v: qdiag * v) if fast else (lambda v: Q @ v)

    K = None
    if not fast:
        K = np.zeros((n + me, n + me))
        if me:
            K[:n, n:] = A.T
            K[n:, :n] = A
            K[n:, n:] = -1e-11 * np.eye(me)

    for it in range(1, max_iter + 1):
        qx = q_mul(x)
        rd = qx + c + (A.T @ y if me else 0.0) + std.gt_mul(z)
        rp = (A @ x - b) if me else np.zeros(0)
        rg = std.g_mul(x) + s - h
        mu = (s @ z) / mi
        obj = 0.5 * x @ qx + c @ x
        pres = max(np.abs(rp).max(initial=0.0), np.abs(rg).max(initial=0.0))
        dres = np.abs(rd).max(initial=0.0)
        if pres <= eps * norm_b and dres <= eps * norm_c * (1 + np.abs(obj)) and mu <= eps * (1 + abs(obj)):
            return "optimal", x, y, z, s, it
        if abs(obj) > 1e14 or np.abs(x).max() > 1e13:
            if pres <= 1e-6 * norm_b:
                return "unbounded", x, y, z, s, it
            return "failed", x, y, z, s, it

        s = np.maximum(s, 1e-300)
        w = np.minimum(z / s, 1e16)
        if fast:
            dvec = qdiag + std.gtwg_diag(w) + 1e-11
            if me:
                S = (A / dvec) @ A.T
                S[np.diag_indices(me)] += 1e-11
                try:
                    cf = sla.cho_factor(S, check_finite=False)
                except (sla.LinAlgError, ValueError):
                    return "failed", x, y, z, s, it

            def kkt_solve(r1, r2):
                if not me:
                    return r1 / dvec, np.zeros(0)
                dy = sla.cho_solve(cf, A @ (r1 / dvec) - r2, check_finite=False)
                return (r1 - A.T @ dy) / dvec, dy

        else:
            K[:n, :n] = Q
            K[np.diag_indices(n)] += 1e-11
            std.gtwg_into(w, K[:n, :n])
            try:
                lu = sla.lu_factor(K, check_finite=False)
            except (sla.LinAlgError, ValueError):
                return "failed", x, y, z, s, it

            def kkt_solve(r1, r2):
                rhs = np.concatenate([r1, r2]) if me else r1
                sol = sla.lu_solve(lu, rhs, check_finite=False)
                return sol[:n], (sol[n:] if me else np.zeros(0))

        def solve_dir(rsz):
            r1 = -(rd + std.gt_mul((z * rg - rsz) / s))
            dx, dy = kkt_solve(r1, -rp)
            ds = -rg - std.g_mul(dx)
            dz = (-rsz - z * ds) / s
            return dx, dy, ds, dz

        # predictor
        dx, dy, ds, dz = solve_dir(s * z)
        ap = _max_step(s, ds)
        ad = _max_step(z, dz)
        mu_aff = ((s + ap * ds) @ (z + ad * dz)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        rsz = s * z + ds * dz - sigma * mu
        dx, dy, ds, dz = solve_dir(rsz)
        eta = max(0.995, 1.0 - mu)
        ap = min(1.0, eta * _max_step(s, ds))
        ad = min(1.0, eta * _max_step(z, dz))
        x = x + ap * dx
        s = s + ap * ds
        y = y + ad * dy
        z = z + ad * dz

    return "iteration-limit", x, y, z, s, max_iter


def _max_step(v, dv):
    # ratio test: min over dv<0 of -v/dv; nonnegative dv contributes +inf
    return min(1.0, float((v / np.maximum(-dv, 1e-300)).min(initial=1.0)))


def _phase1(std: _Standard):
    """Elastic feasibility LP: min sum of violations.  Returns min violation."""
    n, me, mg = std.n, std.me, std.mg
    # variables [x; tp (me); tm (me); tg (mi boxes are always satisfiable: only elasticize eq + general rows)]
    nt = n + 2 * me + mg
    c = np.concatenate([np.zeros(n), np.ones(2 * me + mg)])
    A_eq = np.hstack([std.A, np.eye(me), -np.eye(me)]) if me else np.zeros((0, nt - mg))
    if me:
        A_eq = np.hstack([A_eq, np.zeros((me, mg))])
    A_in = None
    b_in = None
    if mg:
        A_in = np.hstack([std.Ain, np.zeros((mg, 2 * me)), -np.eye(mg)])
        b_in = std.bin
    lb = np.concatenate([np.full(n, -np.inf), np.zeros(2 * me + mg)])
    ub = np.full(nt, np.inf)
    # keep the original boxes on x
    lb[std.Jl] = std.lbv
    ub[std.Ju] = std.ubv
    prob = QpProblem(
        n_vars=nt, c=c, A_eq=A_eq if me else None, b_eq=std.b if me else None,
        A_in=A_in, b_in=b_in, lb=lb, ub=ub,
    )
    sub = _Standard(prob)
    status, x, *_ = _ipm(sub, prob.Q, prob.c, max_iter=200)
    if status != "optimal":
        return None
    return float(np.sum(x[n:]) if nt > n else 0.0)


def solve_qp(p: QpProblem, validate: bool = True) -> Solution:
    """Solve a convex QP, returning a KKT-certified primal/dual solution.

    Infeasible and unbounded problems are detected and reported in
    ``status``; deterministic for a fixed input.
    """
    if validate:
        p.validate()
    std = _Standard(p)
    n = p.n_vars

    if std.mi == 0:
        out = _solve_eq_only(p.Q, p.c, std.A, std.b, n)
        if out is None:
            viol = _phase1(std)
            if viol is not None and viol > 1e-7 * (1 + np.abs(std.b).max(initial=0.0)):
                return Solution(status="infeasible")
            return Solution(status="unbounded")
        x, y = out
        return _finish(p, std, x, y, np.zeros(0), np.zeros(0), 1)

    status, x, y, z, s, iters = _ipm(std, p.Q, p.c)
    if status == "optimal":
        return _finish(p, std, x, y, z, s, iters)
    if status == "unbounded":
        return Solution(status="unbounded", stats={"iterations": iters})
    # classify failure via elastic phase-1
    viol = _phase1(std)
    scale = 1 + max(np.abs(std.b).max(initial=0.0), np.abs(std.h_vec()).max(initial=0.0))
    if viol is None:
        return Solution(status="iteration-limit", x=x, stats={"iterations": iters})
    if viol > 1e-7 * scale:
        return Solution(status="infeasible", stats={"iterations": iters, "violation": viol})
    # feasible but the main solve did not converge: one retry with more iterations
    status, x, y, z, s, it2 = _ipm(std, p.Q, p.c, max_iter=300)
    if status == "optimal":
        return _finish(p, std, x, y, z, s, iters + it2)
    if status == "unbounded":
        return Solution(status="unbounded", stats={"iterations": iters + it2})
    return Solution(status="iteration-limit", x=x, stats={"iterations": iters + it2})


def _polish(std: _Standard, Q, c, x, y, z):
    """Refine onto the apparent active set.

    Variables pinned by active box rows are substituted out and the
    remaining equality-KKT system is solved once; bound duals are read
    off the stationarity residual.  Returns None when the refined point
    fails verification (the IPM iterate is kept in that case).
    """
    n, me = std.n, std.me
    h = std.h_vec()
    slack = h - std.g_mul(x)
    act = np.where((slack <= 1e-6 * (1 + np.abs(h))) | (z >= np.maximum(slack, 1e-300)))[0]

    nJu = std.Ju.size
    gen = act[act < std.mg]
    up = act[(act >= std.mg) & (act < std.mg + nJu)] - std.mg
    lo = act[act >= std.mg + nJu] - std.mg - nJu
    pin_val = np.full(n, np.nan)
    pin_val[std.Jl[lo]] = std.lbv[lo]
    pin_val[std.Ju[up]] = std.ubv[up]           # upper bound wins if both flagged
    pinned = ~np.isnan(pin_val)
    free = np.where(~pinned)[0]
    pidx = np.where(pinned)[0]
    vals = pin_val[pidx]

    A_gen = std.Ain[gen] if gen.size else np.zeros((0, n))
    C = np.vstack([std.A[:, free], A_gen[:, free]])
    m = C.shape[0]
    nf = free.size
    rhs1 = -(c[free] + Q[np.ix_(free, pidx)] @ vals)
    rhs2 = np.concatenate([std.b - std.A[:, pidx] @ vals,
                           std.bin[gen] - A_gen[:, pidx] @ vals])
    K = np.zeros((nf + m, nf + m))
    K[:nf, :nf] = Q[np.ix_(free, free)]
    K[np.diag_indices(nf)] += 1e-12
    K[:nf, nf:] = C.T
    K[nf:, :nf] = C
    K[nf:, nf:] = -1e-12 * np.eye(m)
    try:
        sol = sla.lu_solve(sla.lu_factor(K, check_finite=False),
                           np.concatenate([rhs1, rhs2]), check_finite=False)
    except (sla.LinAlgError, ValueError):
        return None
    xp = np.empty(n)
    xp[free] = sol[:nf]
    xp[pidx] = vals
    yp = sol[nf : nf + me]
    mu_gen = sol[nf + me :]
    if not np.all(np.isfinite(xp)):
        return None

    resid = Q @ xp + c + (std.A.T @ yp if me else 0.0)
    if gen.size:
        resid = resid + A_gen.T @ mu_gen
    zp = np.zeros(std.mi)
    zp[gen] = mu_gen
    zp[std.mg + up] = -resid[std.Ju[up]]
    zp[std.mg + nJu + lo] = resid[std.Jl[lo]]
    if zp.min(initial=0.0) < -1e-10:
        # degenerate active set: recover nonnegative duals by least squares,
        # splitting the sign-free equality duals into two columns
        G_act = np.zeros((act.size, n))
        r = np.arange(act.size)
        isg = act < std.mg
        isu = (act >= std.mg) & (act < std.mg + nJu)
        isl = act >= std.mg + nJu
        if isg.any():
            G_act[r[isg]] = std.Ain[act[isg]]
        G_act[r[isu], std.Ju[act[isu] - std.mg]] = 1.0
        G_act[r[isl], std.Jl[act[isl] - std.mg - nJu]] = -1.0
        E = np.hstack([std.A.T, -std.A.T, G_act.T]) if me else G_act.T
        try:
            w, _ = nnls(E, -(Q @ xp + c))
        except Exception:
            return None
        if me:
            yp = w[:me] - w[me : 2 * me]
            mua = w[2 * me :]
        else:
            mua = w
        zp = np.zeros(std.mi)
        zp[act] = mua
    zp = np.maximum(zp, 0.0)

    # verify the polished point before accepting it
    feas = max(
        np.abs(std.A @ xp - std.b).max(initial=0.0) if me else 0.0,
        np.max(std.g_mul(xp) - h, initial=0.0),
    )
    stat = Q @ xp + c + (std.A.T @ yp if me else 0.0) + std.gt_mul(zp)
    obj = 0.5 * xp @ Q @ xp + c @ xp
    ok = 1e-9 * (1 + abs(obj) + np.abs(c).max(initial=0.0))
    if feas > ok or np.abs(stat).max(initial=0.0) > ok:
        return None
    sp = np.maximum(h - std.g_mul(xp), 0.0)
    if (sp * zp).max(initial=0.0) > ok:
        return None
    return xp, yp, zp, sp


def _finish(p: QpProblem, std: _Standard, x, y, z, s, iters) -> Solution:
    n = p.n_vars
    me0 = p.n_eq
    if z.size:
        ref = _polish(std, p.Q, p.c, x, y, z)
        if ref is not None:
            x, y, z, s = ref
    z_lb = np.zeros(n)
    z_ub = np.zeros(n)
    mg = std.mg
    mu_in = z[:mg] if z.size else np.zeros(p.n_in)
    if z.size:
        z_ub[std.Ju] = z[mg : mg + std.Ju.size]
        z_lb[std.Jl] = z[mg + std.Ju.size :]
    # fixed variables carry a signed multiplier from their synthetic equality row
    for t, j in enumerate(std.fixed_idx):
        yf = y[me0 + t]
        z_ub[j] = max(yf, 0.0)
        z_lb[j] = max(-yf, 0.0)
    # reported equality duals use the shadow-price sign: d(obj)/d(b_eq)
    y_eq = -y[:me0]

    stat = p.Q @ x + p.c - (p.A_eq.T @ y_eq if me0 else 0.0)
    if p.n_in:
        stat = stat + p.A_in.T @ mu_in
    stat = stat + z_ub - z_lb
    comp = float((s * z).max(initial=0.0)) if z.size else 0.0
    feas_eq = np.abs(p.A_eq @ x - p.b_eq).max(initial=0.0) if me0 else 0.0
    feas_in = np.max(np.maximum(p.A_in @ x - p.b_in, 0.0), initial=0.0) if p.n_in else 0.0
    feas_box = max(
        np.max(np.maximum(p.lb - x, 0.0), initial=0.0),
        np.max(np.maximum(x - p.ub, 0.0), initial=0.0),
    )
    stats = {
        "iterations": iters,
        "stationarity": float(np.abs(stat).max(initial=0.0)),
        "feasibility": float(max(feas_eq, feas_in, feas_box)),
        "complementarity": comp,
    }
    obj = p.objective(x)
    scale = 1 + abs(obj)
    if stats["stationarity"] > STAT_TOL * scale or stats["feasibility"] > FEAS_TOL * scale or comp > COMP_TOL * scale:
        return Solution(status="iteration-limit", x=x, objective=obj, stats=stats)
    return Solution(
        status="optimal", x=x, objective=obj, y_eq=y_eq, mu_in=mu_in,
        z_lb=z_lb, z_ub=z_ub, stats=stats,
    )


# ---------------------------------------------------------------------------
# Branch and bound on binaries.
# ---------------------------------------------------------------------------


def solve_miqp(p: MipProblem, node_limit: int = 50_000, incumbent_hint: np.ndarray | None = None) -> Solution:
    """Globally solve a mixed-binary convex QP by best-first branch-and-bound.

    Branches on the most fractional binary (ties by lowest index); nodes
    are explored in order of their parent relaxation bound, so the search
    is deterministic.  ``incumbent_hint`` optionally seeds the incumbent
    with a full binary assignment.
    """
    bins = np.asarray(p.binary_indices, dtype=int)
    base = p.qp
    if bins.size == 0:
        return solve_qp(base)

    lb0 = base.lb.copy()
    ub0 = base.ub.copy()
    lb0[bins] = np.maximum(lb0[bins], 0.0)
    ub0[bins] = np.minimum(ub0[bins], 1.0)

    inc_obj = np.inf
    inc_sol: Solution | None = None
    nodes = 0

    base.validate()

    def node_solve(fixings):
        lb = lb0.copy()
        ub = ub0.copy()
        for j, v in fixings:
            lb[j] = ub[j] = float(v)
        sub = replace(base, lb=lb, ub=ub)
        return solve_qp(sub, validate=False)

    if incumbent_hint is not None:
        hint = [(int(j), int(round(v))) for j, v in zip(bins, np.asarray(incumbent_hint, dtype=float))]
        sol = node_solve(tuple(hint))
        nodes += 1
        if sol.optimal:
            inc_obj = sol.objective
            inc_sol = sol

    counter = 0
    heap: list[tuple[float, int, tuple]] = [(-np.inf, counter, ())]
    while heap:
        bound, _, fixings = heapq.heappop(heap)
        gap = MIP_REL_GAP * max(1.0, abs(inc_obj)) if np.isfinite(inc_obj) else 0.0
        if bound >= inc_obj - gap:
            break
        if nodes >= node_limit:
            status = "iteration-limit"
            if inc_sol is not None:
                return replace(inc_sol, status=status, stats={**inc_sol.stats, "nodes": nodes})
            return Solution(status=status, stats={"nodes": nodes})
        sol = node_solve(fixings)
        nodes += 1
        if sol.status == "infeasible":
            continue
        if sol.status == "unbounded":
            return Solution(status="unbounded", stats={"nodes": nodes})
        if not sol.optimal:
            continue
        if sol.objective >= inc_obj - gap:
            continue
        xv = sol.x[bins]
        frac = np.abs(xv - np.round(xv))
        fixed_set = {j for j, _ in fixings}
        frac = np.where([b in fixed_set for b in bins], 0.0, frac)
        if frac.max(initial=0.0) <= INTEGRALITY_TOL:
            inc_obj = sol.objective
            inc_sol = sol
            continue
        j = int(bins[int(np.argmax(frac))])
        for v in (0, 1):
            counter += 1
            heapq.heappush(heap, (sol.objective, counter, fixings + ((j, v),)))

    if inc_sol is None:
        return Solution(status="infeasible", stats={"nodes": nodes})
    out = replace(inc_sol, stats={**inc_sol.stats, "nodes": nodes})
    return out
