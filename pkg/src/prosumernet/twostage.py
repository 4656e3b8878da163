"""Weighted two-stage problem assembly, solving and ex-post evaluation.

The power balance pins the real-time trade once the first stage is
chosen, so the scenario-expanded weighted problem is exactly equivalent
to a first-stage-only QP at weighted-expected prices (plus a constant).
``solve_wsaa`` uses that reduced form by default; the scenario-expanded
form built from ``model.build_constraints`` is kept as the reference
path and cross-checked in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from functools import lru_cache

from . import model
from .model import DecisionVector, ProsumerParams, VariableLayout, balance_q
from .qp import QpProblem, Solution, solve_qp

__all__ = [
    "ProxTerm",
    "StageResult",
    "OutcomePanel",
    "RecourseInfeasibleError",
    "expected_prices",
    "scenario_net_load",
    "solve_wsaa",
    "expost_cost",
    "recourse_q",
    "pooled_network_qp",
]


class RecourseInfeasibleError(RuntimeError):
    """Realized balance cannot be met within the real-time trade bounds."""


@dataclass
class ProxTerm:
    """Per-edge augmented-Lagrangian terms added to the local objective."""

    rho: float
    z_hat: np.ndarray     # (n_neighbors, H) auxiliary trade targets
    lam_bar: np.ndarray   # (n_neighbors, H) (accelerated) duals

    def __post_init__(self):
        self.z_hat = np.atleast_2d(np.asarray(self.z_hat, dtype=float))
        self.lam_bar = np.atleast_2d(np.asarray(self.lam_bar, dtype=float))
        if self.rho <= 0:
            raise ValueError("rho must be positive")


@dataclass
class StageResult:
    decision: DecisionVector
    objective: float          # weighted two-stage objective (constants included)
    solution: Solution        # the underlying QP solution


@dataclass
class OutcomePanel:
    """Stacked scenario data for one prosumer: avoids per-solve python loops."""

    outcomes: list
    c_q: np.ndarray           # (S, H)
    c_nm: np.ndarray          # (S, n_nb, H)
    d: np.ndarray             # (S, H) net load p_l - p_g
    d_dot_cq: np.ndarray      # (S,) row-wise c_q . d

    @classmethod
    def build(cls, params: ProsumerParams, outcomes) -> "OutcomePanel":
        S = len(outcomes)
        H = params.horizon
        c_q = np.array([np.asarray(o.c_q) for o in outcomes])
        nb = params.n_neighbors
        if nb:
            c_nm = np.array([np.asarray(o.c_nm).reshape(nb, H) for o in outcomes])
        else:
            c_nm = np.zeros((S, 0, H))
        d = scenario_net_load(params, outcomes)
        return cls(outcomes=list(outcomes), c_q=c_q, c_nm=c_nm, d=d,
                   d_dot_cq=(c_q * d).sum(axis=1))

    def __len__(self):
        return len(self.outcomes)


def expected_prices(outcomes, weights):
    """Weighted expectations of the real-time and peer price trajectories."""
    w = np.asarray(weights, dtype=float)
    c_q = np.zeros_like(np.asarray(outcomes[0].c_q, dtype=float))
    c_nm = np.zeros_like(np.asarray(outcomes[0].c_nm, dtype=float))
    for wi, out in zip(w, outcomes):
        if wi != 0.0:
            c_q = c_q + wi * np.asarray(out.c_q)
            if c_nm.size:
                c_nm = c_nm + wi * np.asarray(out.c_nm)
    return c_q, c_nm


def scenario_net_load(params: ProsumerParams, outcomes) -> np.ndarray:
    """Net load (p_l - p_g) per scenario, nominal where samples carry none."""
    S = len(outcomes)
    d = np.tile(np.array(params.p_l) - np.array(params.p_g), (S, 1))
    for i, out in enumerate(outcomes):
        if out.p_g is not None:
            d[i] += np.array(params.p_g) - np.asarray(out.p_g)
        if out.p_l is not None:
            d[i] += np.asarray(out.p_l) - np.array(params.p_l)
    return d


@lru_cache(maxsize=256)
def _first_stage_template(params: ProsumerParams):
    """Weight-independent pieces of the reduced problem, cached per params."""
    H, dt = params.horizon, params.dt
    n_nb = params.n_neighbors
    lay = VariableLayout(H, 0, n_nb)
    qdiag = np.zeros(lay.n_vars)
    qdiag[lay.p_b] = 2.0 * params.alpha_b
    qdiag[lay.s] = 2.0 * params.alpha_s
    qdiag[lay.p_nm] = 2.0 * params.alpha_e

    lb = np.full(lay.n_vars, -np.inf)
    ub = np.full(lay.n_vars, np.inf)
    lb[lay.p_b], ub[lay.p_b] = -params.p_b_max, params.p_b_max
    lb[lay.e.start] = ub[lay.e.start] = params.e_init
    lb[lay.e.start + 1 : lay.e.stop] = params.e_min
    ub[lay.e.start + 1 : lay.e.stop] = params.e_max
    lb[lay.p_s], ub[lay.p_s] = -params.p_s_max, params.p_s_max
    lb[lay.s.start] = ub[lay.s.start] = 0.0
    lb[lay.p_mt], ub[lay.p_mt] = params.p_mt_bounds
    lb[lay.p_nm], ub[lay.p_nm] = -params.p_e_max, params.p_e_max

    n_eq = 2 * H + 1
    A = np.zeros((n_eq, lay.n_vars))
    b = np.zeros(n_eq)
    r = 0
    for h in range(H):
        A[r, lay.e.start + h + 1] = 1.0
        A[r, lay.e.start + h] = -1.0
        A[r, lay.p_b.start + h] = -params.eta * dt
        r += 1
    for h in range(H):
        A[r, lay.s.start + h + 1] = 1.0
        A[r, lay.s.start + h] = -1.0
        A[r, lay.p_s.start + h] = -dt
        b[r] = -dt * params.p_s_ref[h]
        r += 1
    A[r, lay.p_s] = dt
    b[r] = params.c_s

    B = np.zeros((H, lay.n_vars))
    for h in range(H):
        B[h, lay.p_mt.start + h] = 1.0
        for m in range(n_nb):
            B[h, lay.nm_row(m).start + h] = 1.0
        B[h, lay.p_b.start + h] = -1.0
        B[h, lay.p_s.start + h] = -1.0
    return lay, qdiag, A, b, lb, ub, B


def _first_stage_problem(params: ProsumerParams, panel: "OutcomePanel", weights, prox: ProxTerm | None,
                         p2p_prices: np.ndarray | None = None):
    """Reduced QP over first-stage variables with the recourse substituted out."""
    if params.beta_b or params.beta_s:
        raise model.InvalidParamsError("linear beta costs are not supported in the optimization path")
    H, dt = params.horizon, params.dt
    n_nb = params.n_neighbors
    lay, qdiag0, A, b, lb, ub, B = _first_stage_template(params)
    w = np.asarray(weights, dtype=float)
    c_q_bar = w @ panel.c_q
    qdiag = qdiag0
    c = np.zeros(lay.n_vars)
    c[lay.p_mt] = (np.array(params.c_p_mt) - c_q_bar) * dt
    c[lay.p_b] = c_q_bar * dt
    c[lay.p_s] = c_q_bar * dt
    if n_nb:
        c_nm_bar = (np.asarray(p2p_prices, dtype=float).reshape(n_nb, H) if p2p_prices is not None
                    else np.einsum("s,smh->mh", w, panel.c_nm))
        c[lay.p_nm] = ((c_nm_bar - c_q_bar) * dt).ravel()
    # constant term sum_i w_i c_q_i' d_i dt from substituting the recourse
    const = float(w @ panel.d_dot_cq) * dt
    if prox is not None:
        qdiag = qdiag0.copy()
        qdiag[lay.p_nm] += prox.rho
        for m in range(n_nb):
            c[lay.nm_row(m)] += prox.lam_bar[m] - prox.rho * prox.z_hat[m]
        const += float(-(prox.lam_bar * prox.z_hat).sum() + 0.5 * prox.rho * (prox.z_hat ** 2).sum())

    # The recourse box q_lo <= d_i - u <= q_hi must hold per scenario, where
    # u = p_mt + sum_m p_nm - p_b - p_s.  When the box provably cannot bind
    # (interval arithmetic over the first-stage boxes) the rows are omitted,
    # keeping the problem box-only; otherwise the binding rows are added.
    d = panel.d
    q_lo, q_hi = params.q_mt_bounds
    u_hi = params.p_mt_bounds[1] + n_nb * params.p_e_max + params.p_b_max + params.p_s_max
    u_lo = params.p_mt_bounds[0] - n_nb * params.p_e_max - params.p_b_max - params.p_s_max
    need_hi = np.isfinite(q_hi) and np.any(d.max(axis=0) - u_lo > q_hi)
    need_lo = np.isfinite(q_lo) and np.any(d.min(axis=0) - u_hi < q_lo)
    A_in = None
    b_in = None
    if need_hi or need_lo:
        rows = []
        rhs = []
        if need_hi:
            # q_i = d_i - u <= q_hi for every scenario: -u <= q_hi - max_i d_i
            rows.append(-B)
            rhs.append(q_hi - d.max(axis=0))
        if need_lo:
            rows.append(B)
            rhs.append(d.min(axis=0) - q_lo)
        A_in = np.vstack(rows)
        b_in = np.concatenate(rhs)

    prob = QpProblem(n_vars=lay.n_vars, Q=np.diag(qdiag), c=c, A_eq=A, b_eq=b,
                     A_in=A_in, b_in=b_in, lb=lb, ub=ub)
    return prob, lay, const, d


def _recourse_rows_needed(params: ProsumerParams, panel: OutcomePanel) -> bool:
    """True when the per-scenario recourse box could bind (interval check)."""
    n_nb = params.n_neighbors
    d = panel.d
    q_lo, q_hi = params.q_mt_bounds
    u_hi = params.p_mt_bounds[1] + n_nb * params.p_e_max + params.p_b_max + params.p_s_max
    u_lo = params.p_mt_bounds[0] - n_nb * params.p_e_max - params.p_b_max - params.p_s_max
    need_hi = np.isfinite(q_hi) and bool(np.any(d.max(axis=0) - u_lo > q_hi))
    need_lo = np.isfinite(q_lo) and bool(np.any(d.min(axis=0) - u_hi < q_lo))
    return need_hi or need_lo


@lru_cache(maxsize=256)
def _block_templates(params: ProsumerParams):
    """Battery and shiftable-load sub-QPs of the separable reduced problem."""
    H, dt = params.horizon, params.dt
    # battery block over [p_b (H); e (H+1)]
    Ab = np.zeros((H, 2 * H + 1))
    for h in range(H):
        Ab[h, H + h + 1] = 1.0
        Ab[h, H + h] = -1.0
        Ab[h, h] = -params.eta * dt
    lb_b = np.concatenate([np.full(H, -params.p_b_max), [params.e_init], np.full(H, params.e_min)])
    ub_b = np.concatenate([np.full(H, params.p_b_max), [params.e_init], np.full(H, params.e_max)])
    qb = np.concatenate([np.full(H, 2.0 * params.alpha_b), np.zeros(H + 1)])
    # shiftable-load block over [p_s (H); s (H+1)]
    As = np.zeros((H + 1, 2 * H + 1))
    bs = np.zeros(H + 1)
    for h in range(H):
        As[h, H + h + 1] = 1.0
        As[h, H + h] = -1.0
        As[h, h] = -dt
        bs[h] = -dt * params.p_s_ref[h]
    As[H, :H] = dt
    bs[H] = params.c_s
    lb_s = np.concatenate([np.full(H, -params.p_s_max), [0.0], np.full(H, -np.inf)])
    ub_s = np.concatenate([np.full(H, params.p_s_max), [0.0], np.full(H, np.inf)])
    qs = np.concatenate([np.zeros(H), np.full(H + 1, 2.0 * params.alpha_s)])
    return (qb, Ab, lb_b, ub_b), (qs, As, bs, lb_s, ub_s)


def _solve_separable(params: ProsumerParams, panel: OutcomePanel, w, prox, p2p_prices):
    """Exact block solution of the reduced problem when no recourse-box rows
    couple the blocks: battery QP + SL QP + per-element trade terms."""
    H, dt = params.horizon, params.dt
    n_nb = params.n_neighbors
    c_q_bar = w @ panel.c_q
    (qb, Ab, lb_b, ub_b), (qs, As, bs, lb_s, ub_s) = _block_templates(params)

    cb = np.concatenate([c_q_bar * dt, np.zeros(H + 1)])
    sol_b = solve_qp(QpProblem(n_vars=2 * H + 1, Q=np.diag(qb), c=cb, A_eq=Ab,
                               b_eq=np.zeros(H), lb=lb_b, ub=ub_b), validate=False)
    if not sol_b.optimal:
        raise RuntimeError(f"battery block failed: {sol_b.status}")
    cs = np.concatenate([c_q_bar * dt, np.zeros(H + 1)])
    sol_s = solve_qp(QpProblem(n_vars=2 * H + 1, Q=np.diag(qs), c=cs, A_eq=As,
                               b_eq=bs, lb=lb_s, ub=ub_s), validate=False)
    if not sol_s.optimal:
        raise RuntimeError(f"shiftable-load block failed: {sol_s.status}")

    # day-ahead trade: linear per hour, pushed to the cheaper side of the box
    c_mt = (np.array(params.c_p_mt) - c_q_bar) * dt
    lo, hi = params.p_mt_bounds
    p_mt = np.where(c_mt > 0, lo, np.where(c_mt < 0, hi, np.clip(0.0, lo, hi)))
    obj = sol_b.objective + sol_s.objective + float(c_mt @ p_mt)

    p_nm = np.zeros((n_nb, H))
    if n_nb:
        c_nm_bar = (np.asarray(p2p_prices, dtype=float).reshape(n_nb, H) if p2p_prices is not None
                    else np.einsum("s,smh->mh", w, panel.c_nm))
        lin = (c_nm_bar - c_q_bar) * dt
        quad = np.full((n_nb, H), 2.0 * params.alpha_e)
        if prox is not None:
            lin = lin + prox.lam_bar - prox.rho * prox.z_hat
            quad = quad + prox.rho
        cap = params.p_e_max
        with np.errstate(divide="ignore", invalid="ignore"):
            interior = np.where(quad > 0, -lin / np.maximum(quad, 1e-300), 0.0)
        bang = np.where(lin > 0, -cap, np.where(lin < 0, cap, 0.0))
        p_nm = np.clip(np.where(quad > 0, interior, bang), -cap, cap)
        obj += float((lin * p_nm).sum() + 0.5 * (quad * p_nm ** 2).sum())

    const = float(w @ panel.d_dot_cq) * dt
    if prox is not None:
        const += float(-(prox.lam_bar * prox.z_hat).sum() + 0.5 * prox.rho * (prox.z_hat ** 2).sum())
    u = p_mt + p_nm.sum(axis=0) - sol_b.x[:H] - sol_s.x[:H]
    q = panel.d - u[None, :]
    z = DecisionVector(p_b=sol_b.x[:H], e=sol_b.x[H:], p_s=sol_s.x[:H], s=sol_s.x[H:],
                       p_mt=p_mt, q_mt=q, p_nm=p_nm)
    return StageResult(decision=z, objective=obj + const, solution=sol_b)


def solve_wsaa(
    params: ProsumerParams,
    outcomes,
    weights,
    prox: ProxTerm | None = None,
    reduced: bool = True,
    p2p_prices: np.ndarray | None = None,
) -> StageResult:
    """Solve the weighted two-stage problem and return the full decision.

    ``reduced=False`` builds the scenario-expanded problem straight from
    ``model.build_constraints`` instead; both paths agree to solver
    tolerance.  ``p2p_prices`` overrides the weighted peer-price
    expectation (used for symmetric per-edge prices in coordination).
    """
    panel = outcomes if isinstance(outcomes, OutcomePanel) else OutcomePanel.build(params, outcomes)
    outcomes = panel.outcomes
    w = np.asarray(weights, dtype=float)
    if w.size != len(outcomes):
        raise ValueError("weights length must match the sample count")
    if abs(w.sum() - 1.0) > 1e-9 or np.any(w < -1e-12):
        raise ValueError("weights must lie on the simplex")
    if reduced and not _recourse_rows_needed(params, panel):
        if params.beta_b or params.beta_s:
            raise model.InvalidParamsError("linear beta costs are not supported in the optimization path")
        return _solve_separable(params, panel, w, prox, p2p_prices)
    if reduced:
        prob, lay, const, d = _first_stage_problem(params, panel, w, prox, p2p_prices)
        sol = solve_qp(prob, validate=False)
        if not sol.optimal:
            raise RuntimeError(f"two-stage solve failed: {sol.status}")
        x = sol.x
        u = x[lay.p_mt] - x[lay.p_b] - x[lay.p_s]
        for m in range(params.n_neighbors):
            u = u + x[lay.nm_row(m)]
        q = d - u[None, :]
        z = DecisionVector(
            p_b=x[lay.p_b], e=x[lay.e], p_s=x[lay.p_s], s=x[lay.s], p_mt=x[lay.p_mt],
            q_mt=q, p_nm=x[lay.p_nm].reshape(params.n_neighbors, params.horizon),
        )
        return StageResult(decision=z, objective=sol.objective + const, solution=sol)

    S = len(outcomes)
    spg = None
    spl = None
    if outcomes[0].p_g is not None:
        spg = np.array([np.asarray(o.p_g) for o in outcomes])
    if outcomes[0].p_l is not None:
        spl = np.array([np.asarray(o.p_l) for o in outcomes])
    sys = model.build_constraints(params, S, scenario_pg=spg, scenario_pl=spl)
    qdiag, c = model.build_wsaa_objective(params, outcomes, w)
    lay = sys.layout
    if p2p_prices is not None:
        c = c.copy()
        pp = np.asarray(p2p_prices, dtype=float).reshape(params.n_neighbors, params.horizon)
        for m in range(params.n_neighbors):
            c[lay.nm_row(m)] = pp[m] * params.dt
    if prox is not None:
        qdiag = qdiag.copy()
        c = c.copy()
        qdiag[lay.p_nm] += prox.rho
        for m in range(params.n_neighbors):
            c[lay.nm_row(m)] += prox.lam_bar[m] - prox.rho * prox.z_hat[m]
    prob = QpProblem(n_vars=sys.layout.n_vars, Q=np.diag(qdiag), c=c,
                     A_eq=sys.A_eq, b_eq=sys.b_eq, lb=sys.lb, ub=sys.ub)
    sol = solve_qp(prob, validate=False)
    if not sol.optimal:
        raise RuntimeError(f"two-stage solve failed: {sol.status}")
    const = 0.0
    if prox is not None:
        const = float(-(prox.lam_bar * prox.z_hat).sum() + 0.5 * prox.rho * (prox.z_hat ** 2).sum())
    return StageResult(decision=DecisionVector.from_flat(sol.x, sys.layout),
                       objective=sol.objective + const, solution=sol)


def recourse_q(params: ProsumerParams, z: DecisionVector, realized, use_qp: bool = False) -> np.ndarray:
    """Re-optimized real-time trade for the realized outcome.

    The balance row pins the answer; ``use_qp=True`` routes through the
    solver instead (same result, used for cross-checking).
    """
    pg = realized.p_g if realized.p_g is not None else None
    pl = realized.p_l if realized.p_l is not None else None
    pinned = balance_q(params, z.p_b, z.p_s, z.p_mt, z.p_nm, pg_row=pg, pl_row=pl)
    q_lo, q_hi = params.q_mt_bounds
    if use_qp:
        H = params.horizon
        prob = QpProblem(
            n_vars=H, c=np.asarray(realized.c_q, dtype=float) * params.dt,
            A_eq=np.eye(H), b_eq=pinned,
            lb=np.full(H, q_lo), ub=np.full(H, q_hi),
        )
        sol = solve_qp(prob)
        if not sol.optimal:
            raise RecourseInfeasibleError("realized grid-bound violated by the committed first stage")
        return sol.x
    if np.any(pinned < q_lo - 1e-9) or np.any(pinned > q_hi + 1e-9):
        raise RecourseInfeasibleError("realized grid-bound violated by the committed first stage")
    return pinned


def expost_cost(params: ProsumerParams, z: DecisionVector, realized, use_qp: bool = False):
    """Realized cost of a committed decision: flexibility plus trading at
    the realized prices, with the real-time response re-optimized."""
    q = recourse_q(params, z, realized, use_qp=use_qp)
    cost = model.cost_flexibility(params, z.p_b, z.s) + model.cost_trading(
        params, z.p_mt, q, z.p_nm, realized
    )
    return cost, q


def pooled_network_qp(params_list, outcomes_list, weights_list, edge_prices=None):
    """Centralized convex program over all prosumers with reciprocity rows.

    Used as the oracle for the distributed solver.  Returns the problem,
    per-prosumer first-stage layouts/offsets, and the additive constant.
    """
    n = len(params_list)
    probs = []
    lays = []
    consts = []
    for p, outs, w in zip(params_list, outcomes_list, weights_list):
        pp = None
        if edge_prices is not None:
            pp = np.array([edge_prices[(min(p.id, nb), max(p.id, nb))] for nb in p.neighbors]).reshape(p.n_neighbors, p.horizon)
        panel = outs if isinstance(outs, OutcomePanel) else OutcomePanel.build(p, outs)
        prob, lay, const, d = _first_stage_problem(p, panel, np.asarray(w, dtype=float), None, pp)
        probs.append(prob)
        lays.append(lay)
        consts.append(const)
    offsets = np.cumsum([0] + [pr.n_vars for pr in probs])
    N = offsets[-1]
    Q = np.zeros((N, N))
    c = np.zeros(N)
    lb = np.full(N, -np.inf)
    ub = np.full(N, np.inf)
    rows_eq = sum(pr.n_eq for pr in probs)
    recip = []
    for a in range(n):
        for m, b in enumerate(params_list[a].neighbors):
            if a < b:
                mb = list(params_list[b].neighbors).index(a)
                recip.append((a, m, b, mb))
    H = params_list[0].horizon
    A = np.zeros((rows_eq + len(recip) * H, N))
    bvec = np.zeros(rows_eq + len(recip) * H)
    r = 0
    for i, pr in enumerate(probs):
        o = offsets[i]
        Q[o : o + pr.n_vars, o : o + pr.n_vars] = pr.Q
        c[o : o + pr.n_vars] = pr.c
        lb[o : o + pr.n_vars] = pr.lb
        ub[o : o + pr.n_vars] = pr.ub
        A[r : r + pr.n_eq, o : o + pr.n_vars] = pr.A_eq
        bvec[r : r + pr.n_eq] = pr.b_eq
        r += pr.n_eq
    # reciprocity rows, labeled at the network level
    for a, m, b, mb in recip:
        sa = lays[a].nm_row(m)
        sb = lays[b].nm_row(mb)
        for h in range(H):
            A[r, offsets[a] + sa.start + h] = 1.0
            A[r, offsets[b] + sb.start + h] = 1.0
            r += 1
    prob = QpProblem(n_vars=N, Q=Q, c=c, A_eq=A, b_eq=bvec, lb=lb, ub=ub)
    return prob, lays, offsets, float(sum(consts))
