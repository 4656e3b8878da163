"""Prosumer physics and economics.

One prosumer owns a battery (BESS), a shiftable load (SL), nominal PV and
must-run load profiles, a day-ahead and a real-time grid connection, and
bilateral trade links to its neighbors.  This module encodes the decision
layout, the linear constraint system (power balance, storage and shift
dynamics, boxes), and the cost pieces, as reusable builders consumed by
the two-stage, bilevel and ADMM layers.

Sign conventions: powers in kW, energies in kWh, prices in cents/kWh,
costs in cents; ``dt`` hours per step converts.  Battery power is a
single signed variable (+ charging), grid and peer trades are + import.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
import json

import numpy as np

__all__ = [
    "ProsumerParams",
    "DecisionVector",
    "ConstraintSystem",
    "VariableLayout",
    "RowLabel",
    "Violation",
    "InvalidParamsError",
    "build_constraints",
    "build_wsaa_objective",
    "cost_flexibility",
    "cost_trading",
    "validate_decision",
    "balance_q",
]

LABELS = (
    "balance",
    "reciprocity-placeholder",
    "bess-dyn",
    "bess-soc",
    "bess-pow",
    "sl-dyn",
    "sl-energy",
    "sl-pow",
    "trade-bound",
    "grid-bound",
)


class InvalidParamsError(ValueError):
    pass


def _arr(v, length, name):
    if np.isscalar(v):
        return np.full(length, float(v))
    a = np.asarray(v, dtype=float)
    if a.shape != (length,):
        raise InvalidParamsError(f"{name} must have length {length}, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class ProsumerParams:
    """Static physical and economic parameters of one prosumer."""

    id: int
    horizon: int
    dt: float = 1.0
    eta: float = 0.9                 # BESS efficiency applied to charging power
    e_min: float = 10.0              # SoC bounds (kWh)
    e_max: float = 200.0
    e_init: float = 50.0
    p_b_max: float = 20.0            # |battery power| bound (kW)
    p_s_max: float = 20.0            # |shiftable-load power| bound (kW)
    c_s: float = 150.0               # total SL energy required over the horizon (kWh)
    p_s_ref: tuple = ()              # preferred SL profile, length H (kW)
    p_e_max: float = 5.0             # per-neighbor trade cap (kW)
    p_mt_bounds: tuple = (-1000.0, 1000.0)   # day-ahead grid trade box (kW)
    q_mt_bounds: tuple = (-1000.0, 1000.0)   # real-time grid trade box (kW)
    alpha_b: float = 0.1             # quadratic battery cost (cents/kW^2)
    alpha_s: float = 0.1             # quadratic shift-state cost (cents/kWh^2)
    alpha_e: float = 0.0             # quadratic trade friction (cents/kW^2); keeps
                                     # the peer-trade equilibrium unique when > 0
    beta_b: float = 0.0              # optional linear costs, 0 by default
    beta_s: float = 0.0
    c_p_mt: tuple = ()               # known day-ahead price, length H (cents/kWh)
    p_g: tuple = ()                  # nominal PV profile, length H (kW)
    p_l: tuple = ()                  # nominal must-run load, length H (kW)
    neighbors: tuple = ()            # ids of trading partners, sorted

    def __post_init__(self):
        H = self.horizon
        object.__setattr__(self, "p_s_ref", tuple(_arr(self.p_s_ref if len(np.atleast_1d(self.p_s_ref)) else 0.0, H, "p_s_ref")))
        object.__setattr__(self, "c_p_mt", tuple(_arr(self.c_p_mt if len(np.atleast_1d(self.c_p_mt)) else 0.0, H, "c_p_mt")))
        object.__setattr__(self, "p_g", tuple(_arr(self.p_g if len(np.atleast_1d(self.p_g)) else 0.0, H, "p_g")))
        object.__setattr__(self, "p_l", tuple(_arr(self.p_l if len(np.atleast_1d(self.p_l)) else 0.0, H, "p_l")))
        object.__setattr__(self, "neighbors", tuple(int(m) for m in self.neighbors))
        object.__setattr__(self, "p_mt_bounds", (float(self.p_mt_bounds[0]), float(self.p_mt_bounds[1])))
        object.__setattr__(self, "q_mt_bounds", (float(self.q_mt_bounds[0]), float(self.q_mt_bounds[1])))
        self.validate()

    def validate(self):
        H = self.horizon
        if H < 1:
            raise InvalidParamsError("horizon must be >= 1")
        if not self.dt > 0:
            raise InvalidParamsError("dt must be positive")
        if not (0 < self.eta <= 1):
            raise InvalidParamsError("eta must be in (0, 1]")
        if not (self.e_min <= self.e_init <= self.e_max):
            raise InvalidParamsError("infeasible bess-soc: e_init outside [e_min, e_max]")
        for nm in ("p_b_max", "p_s_max", "p_e_max"):
            if getattr(self, nm) < 0:
                raise InvalidParamsError(f"{nm} must be >= 0")
        ref = np.array(self.p_s_ref)
        if np.any(np.abs(ref) > self.p_s_max + 1e-9):
            raise InvalidParamsError("infeasible sl-pow: p_s_ref exceeds p_s_max")
        if abs(self.c_s) > H * self.p_s_max * self.dt + 1e-9:
            raise InvalidParamsError("infeasible sl-energy: c_s unreachable under p_s_max")
        for nm in ("p_mt_bounds", "q_mt_bounds"):
            lo, hi = getattr(self, nm)
            if lo > hi:
                raise InvalidParamsError(f"infeasible grid-bound: {nm} lower above upper")

    @property
    def n_neighbors(self) -> int:
        return len(self.neighbors)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("p_s_ref", "c_p_mt", "p_g", "p_l", "neighbors", "p_mt_bounds", "q_mt_bounds"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProsumerParams":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ProsumerParams":
        return cls.from_dict(json.loads(text))


class VariableLayout:
    """Offsets of one prosumer's flattened decision over the horizon.

    Order: p_b (H), e (H+1), p_s (H), s (H+1), p_mt (H),
    q_mt (S rows of H, scenario-major), p_nm (one block of H per neighbor).
    """

    def __init__(self, horizon: int, num_scenarios: int, n_neighbors: int):
        H = horizon
        self.H = H
        self.S = num_scenarios
        self.n_nb = n_neighbors
        o = 0
        self.p_b = slice(o, o + H); o += H
        self.e = slice(o, o + H + 1); o += H + 1
        self.p_s = slice(o, o + H); o += H
        self.s = slice(o, o + H + 1); o += H + 1
        self.p_mt = slice(o, o + H); o += H
        self.q_mt = slice(o, o + num_scenarios * H); o += num_scenarios * H
        self.p_nm = slice(o, o + n_neighbors * H); o += n_neighbors * H
        self.n_vars = o

    def q_row(self, i: int) -> slice:
        base = self.q_mt.start
        return slice(base + i * self.H, base + (i + 1) * self.H)

    def nm_row(self, m: int) -> slice:
        base = self.p_nm.start
        return slice(base + m * self.H, base + (m + 1) * self.H)


@dataclass
class DecisionVector:
    """One prosumer's full decision: first stage plus per-scenario recourse."""

    p_b: np.ndarray
    e: np.ndarray
    p_s: np.ndarray
    s: np.ndarray
    p_mt: np.ndarray
    q_mt: np.ndarray          # (S, H)
    p_nm: np.ndarray          # (n_neighbors, H)

    def __post_init__(self):
        for f in ("p_b", "e", "p_s", "s", "p_mt", "q_mt", "p_nm"):
            setattr(self, f, np.asarray(getattr(self, f), dtype=float))
        self.q_mt = np.atleast_2d(self.q_mt)
        self.p_nm = self.p_nm.reshape(-1, self.p_b.size) if self.p_nm.size else self.p_nm.reshape(0, self.p_b.size)

    @classmethod
    def from_flat(cls, x: np.ndarray, layout: VariableLayout) -> "DecisionVector":
        H, S, n_nb = layout.H, layout.S, layout.n_nb
        return cls(
            p_b=x[layout.p_b], e=x[layout.e], p_s=x[layout.p_s], s=x[layout.s],
            p_mt=x[layout.p_mt], q_mt=x[layout.q_mt].reshape(S, H),
            p_nm=x[layout.p_nm].reshape(n_nb, H),
        )

    def flatten(self, layout: VariableLayout) -> np.ndarray:
        x = np.empty(layout.n_vars)
        x[layout.p_b] = self.p_b
        x[layout.e] = self.e
        x[layout.p_s] = self.p_s
        x[layout.s] = self.s
        x[layout.p_mt] = self.p_mt
        x[layout.q_mt] = self.q_mt.ravel()
        x[layout.p_nm] = self.p_nm.ravel()
        return x


@dataclass(frozen=True)
class RowLabel:
    kind: str
    scenario: int | None = None
    step: int | None = None
    neighbor: int | None = None


@dataclass
class ConstraintSystem:
    """Dense linear system over the flattened decision variables."""

    layout: VariableLayout
    A_eq: np.ndarray
    b_eq: np.ndarray
    labels_eq: list[RowLabel]
    A_in: np.ndarray
    b_in: np.ndarray
    labels_in: list[RowLabel]
    lb: np.ndarray
    ub: np.ndarray
    bound_labels: list[RowLabel]


@dataclass(frozen=True)
class Violation:
    label: str
    scenario: int | None
    step: int | None
    neighbor: int | None
    residual: float


def build_constraints(
    params: ProsumerParams,
    num_scenarios: int,
    scenario_pg: np.ndarray | None = None,
    scenario_pl: np.ndarray | None = None,
) -> ConstraintSystem:
    """Assemble one prosumer's feasible set for S recourse scenarios.

    Per-scenario power balance (with that scenario's real-time trade
    column, and scenario PV/load profiles when given), SoC and shift
    recursions, the SL energy-completion row, and all variable boxes.
    The pairwise reciprocity constraint couples prosumers and is left to
    the network level.
    """
    H, dt, S = params.horizon, params.dt, int(num_scenarios)
    if S < 1:
        raise InvalidParamsError("num_scenarios must be >= 1")
    n_nb = params.n_neighbors
    lay = VariableLayout(H, S, n_nb)
    pg = np.tile(np.array(params.p_g), (S, 1)) if scenario_pg is None else np.asarray(scenario_pg, dtype=float)
    pl = np.tile(np.array(params.p_l), (S, 1)) if scenario_pl is None else np.asarray(scenario_pl, dtype=float)
    if pg.shape != (S, H) or pl.shape != (S, H):
        raise InvalidParamsError("scenario PV/load must have shape (S, H)")

    n_eq = S * H + H + H + 1
    A = np.zeros((n_eq, lay.n_vars))
    b = np.zeros(n_eq)
    labels: list[RowLabel] = []
    r = 0
    # balance: p_mt + q_i + p_g + sum_m p_nm = p_l + p_b + p_s
    for i in range(S):
        for h in range(H):
            A[r, lay.p_mt.start + h] = 1.0
            A[r, lay.q_row(i).start + h] = 1.0
            for m in range(n_nb):
                A[r, lay.nm_row(m).start + h] = 1.0
            A[r, lay.p_b.start + h] = -1.0
            A[r, lay.p_s.start + h] = -1.0
            b[r] = pl[i, h] - pg[i, h]
            labels.append(RowLabel("balance", scenario=i, step=h))
            r += 1
    # SoC recursion e[h+1] = e[h] + eta * p_b[h] * dt
    for h in range(H):
        A[r, lay.e.start + h + 1] = 1.0
        A[r, lay.e.start + h] = -1.0
        A[r, lay.p_b.start + h] = -params.eta * dt
        labels.append(RowLabel("bess-dyn", step=h))
        r += 1
    # shift recursion s[h+1] = s[h] + (p_s[h] - p_s_ref[h]) * dt
    for h in range(H):
        A[r, lay.s.start + h + 1] = 1.0
        A[r, lay.s.start + h] = -1.0
        A[r, lay.p_s.start + h] = -dt
        b[r] = -dt * params.p_s_ref[h]
        labels.append(RowLabel("sl-dyn", step=h))
        r += 1
    # energy completion sum_h p_s[h] dt = c_s
    A[r, lay.p_s] = dt
    b[r] = params.c_s
    labels.append(RowLabel("sl-energy"))
    r += 1

    lb = np.full(lay.n_vars, -np.inf)
    ub = np.full(lay.n_vars, np.inf)
    blabels: list[RowLabel] = [RowLabel("bess-pow")] * lay.n_vars
    lb[lay.p_b] = -params.p_b_max
    ub[lay.p_b] = params.p_b_max
    for h in range(H):
        blabels[lay.p_b.start + h] = RowLabel("bess-pow", step=h)
    lb[lay.e.start] = ub[lay.e.start] = params.e_init
    blabels[lay.e.start] = RowLabel("bess-soc", step=0)
    for h in range(1, H + 1):
        lb[lay.e.start + h] = params.e_min
        ub[lay.e.start + h] = params.e_max
        blabels[lay.e.start + h] = RowLabel("bess-soc", step=h)
    lb[lay.p_s] = -params.p_s_max
    ub[lay.p_s] = params.p_s_max
    for h in range(H):
        blabels[lay.p_s.start + h] = RowLabel("sl-pow", step=h)
    lb[lay.s.start] = ub[lay.s.start] = 0.0
    blabels[lay.s.start] = RowLabel("sl-dyn", step=0)
    for h in range(1, H + 1):
        blabels[lay.s.start + h] = RowLabel("sl-dyn", step=h)
    lb[lay.p_mt] = params.p_mt_bounds[0]
    ub[lay.p_mt] = params.p_mt_bounds[1]
    for h in range(H):
        blabels[lay.p_mt.start + h] = RowLabel("grid-bound", step=h)
    lb[lay.q_mt] = params.q_mt_bounds[0]
    ub[lay.q_mt] = params.q_mt_bounds[1]
    for i in range(S):
        for h in range(H):
            blabels[lay.q_row(i).start + h] = RowLabel("grid-bound", scenario=i, step=h)
    lb[lay.p_nm] = -params.p_e_max
    ub[lay.p_nm] = params.p_e_max
    for m in range(n_nb):
        for h in range(H):
            blabels[lay.nm_row(m).start + h] = RowLabel("trade-bound", step=h, neighbor=params.neighbors[m])

    return ConstraintSystem(
        layout=lay, A_eq=A, b_eq=b, labels_eq=labels,
        A_in=np.zeros((0, lay.n_vars)), b_in=np.zeros(0), labels_in=[],
        lb=lb, ub=ub, bound_labels=blabels,
    )


def cost_flexibility(params: ProsumerParams, p_b, s) -> float:
    """Quadratic battery-use plus shift-discomfort cost, in cents."""
    p_b = np.asarray(p_b, dtype=float)
    s = np.asarray(s, dtype=float)
    if p_b.shape != (params.horizon,) or s.shape != (params.horizon + 1,):
        raise InvalidParamsError("cost_flexibility: dimension mismatch")
    cost = params.alpha_b * float(p_b @ p_b) + params.alpha_s * float(s @ s)
    if params.beta_b:
        cost += params.beta_b * float(np.abs(p_b).sum())
    if params.beta_s:
        cost += params.beta_s * float(np.abs(s).sum())
    return cost


def cost_trading(params: ProsumerParams, p_mt, q_mt_row, p_nm, prices) -> float:
    """Day-ahead + real-time grid cost plus peer-trade payments, in cents.

    ``prices`` carries attributes (or keys) ``c_q`` (H,) and ``c_nm``
    (n_neighbors, H).
    """
    H = params.horizon
    c_q = np.asarray(getattr(prices, "c_q", None) if not isinstance(prices, dict) else prices["c_q"], dtype=float)
    c_nm = getattr(prices, "c_nm", None) if not isinstance(prices, dict) else prices["c_nm"]
    c_nm = np.asarray(c_nm, dtype=float).reshape(params.n_neighbors, H) if params.n_neighbors else np.zeros((0, H))
    p_mt = np.asarray(p_mt, dtype=float)
    q = np.asarray(q_mt_row, dtype=float)
    nm = np.asarray(p_nm, dtype=float).reshape(params.n_neighbors, H) if params.n_neighbors else np.zeros((0, H))
    if p_mt.shape != (H,) or q.shape != (H,) or c_q.shape != (H,):
        raise InvalidParamsError("cost_trading: dimension mismatch")
    cp = np.array(params.c_p_mt)
    return float((cp @ p_mt + c_q @ q + (c_nm * nm).sum()) * params.dt)


def build_wsaa_objective(params: ProsumerParams, outcomes, weights) -> tuple[np.ndarray, np.ndarray]:
    """Weighted two-stage objective over the full layout: (Q diagonal, c).

    The flexibility cost contributes the quadratic diagonal; trading
    costs are linear with each scenario's real-time block weighted by its
    sample weight and peer prices collapsed to the weighted expectation.
    """
    if params.beta_b or params.beta_s:
        raise InvalidParamsError("linear beta costs are not supported in the optimization path")
    w = np.asarray(weights, dtype=float)
    S = w.size
    lay = VariableLayout(params.horizon, S, params.n_neighbors)
    qdiag = np.zeros(lay.n_vars)
    qdiag[lay.p_b] = 2.0 * params.alpha_b
    qdiag[lay.s] = 2.0 * params.alpha_s
    qdiag[lay.p_nm] = 2.0 * params.alpha_e
    c = np.zeros(lay.n_vars)
    c[lay.p_mt] = np.array(params.c_p_mt) * params.dt
    for i, out in enumerate(outcomes):
        c[lay.q_row(i)] = w[i] * np.asarray(out.c_q) * params.dt
    if params.n_neighbors:
        cbar = np.zeros((params.n_neighbors, params.horizon))
        for i, out in enumerate(outcomes):
            cbar += w[i] * np.asarray(out.c_nm).reshape(params.n_neighbors, params.horizon)
        for m in range(params.n_neighbors):
            c[lay.nm_row(m)] = cbar[m] * params.dt
    return qdiag, c


def balance_q(params: ProsumerParams, p_b, p_s, p_mt, p_nm, pg_row=None, pl_row=None) -> np.ndarray:
    """Real-time trade pinned by the balance row, given the first stage."""
    pg = np.array(params.p_g) if pg_row is None else np.asarray(pg_row, dtype=float)
    pl = np.array(params.p_l) if pl_row is None else np.asarray(pl_row, dtype=float)
    tot_nm = np.asarray(p_nm, dtype=float).reshape(-1, params.horizon).sum(axis=0) if np.size(p_nm) else 0.0
    return pl - pg + np.asarray(p_b) + np.asarray(p_s) - np.asarray(p_mt) - tot_nm


def validate_decision(
    params: ProsumerParams,
    z: DecisionVector,
    tolerance: float = 1e-6,
    scenario_pg: np.ndarray | None = None,
    scenario_pl: np.ndarray | None = None,
) -> list[Violation]:
    """All constraint-system rows violated by ``z`` beyond ``tolerance``."""
    S = z.q_mt.shape[0]
    sys = build_constraints(params, S, scenario_pg=scenario_pg, scenario_pl=scenario_pl)
    x = z.flatten(sys.layout)
    out: list[Violation] = []
    resid = sys.A_eq @ x - sys.b_eq
    for r, lbl in enumerate(sys.labels_eq):
        if abs(resid[r]) > tolerance:
            out.append(Violation(lbl.kind, lbl.scenario, lbl.step, lbl.neighbor, float(resid[r])))
    over = x - sys.ub
    under = sys.lb - x
    for j in range(sys.layout.n_vars):
        v = max(over[j], under[j])
        if v > tolerance:
            lbl = sys.bound_labels[j]
            out.append(Violation(lbl.kind, lbl.scenario, lbl.step, lbl.neighbor, float(v)))
    return out
