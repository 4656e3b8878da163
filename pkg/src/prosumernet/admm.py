"""Distributed peer-to-peer coordination by accelerated consensus ADMM.

Each prosumer repeatedly solves its local weighted two-stage problem
augmented with per-edge proximal terms, neighbors exchange trade
proposals, the per-edge auxiliary trades are set by the closed-form
consensus update, duals ascend on the consensus gap, and a restarted
momentum step accelerates the duals.  The in-process simulation runs the
four phases behind barriers, so results cannot depend on message arrival
order within an iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json

import numpy as np

from .model import DecisionVector, ProsumerParams
from .scenarios import Dataset
from .twostage import ProxTerm, expected_prices, solve_wsaa
from .weights import cknn_weights

__all__ = [
    "Topology",
    "Message",
    "AdmmState",
    "Agent",
    "AdmmResult",
    "local_update",
    "aux_update",
    "dual_update",
    "accelerate",
    "residuals",
    "run",
    "residual_trace_csv",
]

RESTART_FACTOR = 0.999


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    """Symmetric trading graph without self-loops."""

    n: int
    edges: frozenset

    @classmethod
    def from_edges(cls, n: int, edges) -> "Topology":
        norm = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise TopologyError("self-loops are not allowed")
            if not (0 <= a < n and 0 <= b < n):
                raise TopologyError(f"edge ({a},{b}) out of range")
            norm.add((min(a, b), max(a, b)))
        return cls(n=n, edges=frozenset(norm))

    @classmethod
    def ring_with_chords(cls, n: int, chord_step: int = 3) -> "Topology":
        edges = [(i, (i + 1) % n) for i in range(n)] if n > 1 else []
        if n > 4:
            edges += [(i, (i + chord_step) % n) for i in range(0, n, 2) if i != (i + chord_step) % n]
        return cls.from_edges(n, edges)

    def neighbors(self, i: int) -> tuple:
        out = [b for a, b in self.edges if a == i] + [a for a, b in self.edges if b == i]
        return tuple(sorted(out))

    def neighbor_lists(self) -> list[tuple]:
        return [self.neighbors(i) for i in range(self.n)]


@dataclass
class Message:
    kind: str                      # covariate-share | trade-proposal
    sender: int
    receiver: int
    iteration: int
    payload: np.ndarray

    def __post_init__(self):
        if self.kind not in ("covariate-share", "trade-proposal"):
            raise ValueError(f"unknown message kind {self.kind!r}")
        self.payload = np.asarray(self.payload, dtype=float)

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind, "sender": self.sender, "receiver": self.receiver,
            "iteration": self.iteration, "payload": [float(v) for v in self.payload],
        })


@dataclass
class AdmmState:
    """Per-prosumer iteration state, keyed by neighbor id."""

    rho: float
    eps: float
    nu: int = 1
    lam: dict = field(default_factory=dict)        # duals, (H,)
    lam_bar: dict = field(default_factory=dict)    # accelerated duals fed to the local solve
    z_hat: dict = field(default_factory=dict)      # auxiliary consensus trades
    accel: dict = field(default_factory=dict)      # momentum scalars, >= 1
    combined: dict = field(default_factory=dict)   # last combined residual per edge
    history: list = field(default_factory=list)    # append-only (nu, primal, dual)

    def init_edges(self, neighbors, H):
        for m in neighbors:
            self.lam[m] = np.zeros(H)
            self.lam_bar[m] = np.zeros(H)
            self.z_hat[m] = np.zeros(H)
            self.accel[m] = 1.0
            self.combined[m] = np.inf


@dataclass
class Agent:
    """One prosumer: parameters, training data, weight policy, context."""

    params: ProsumerParams
    dataset: Dataset
    k: int
    gamma: float
    x_current: np.ndarray
    weights: np.ndarray | None = None
    p2p_prices: np.ndarray | None = None   # (n_neighbors, H) symmetric edge prices
    state: AdmmState | None = None


@dataclass
class AdmmResult:
    decisions: list[DecisionVector]
    converged: bool
    iterations: int
    trace: list[tuple[int, float, float]]
    message_log: list[Message] | None = None


def local_update(
    params: ProsumerParams,
    outcomes,
    weights,
    lam_bar: np.ndarray,
    z_hat: np.ndarray,
    rho: float,
    p2p_prices: np.ndarray | None = None,
) -> DecisionVector:
    """One prosumer's primal step: weighted two-stage cost plus, per edge,
    lam'(p_nm - z_hat) + rho/2 ||p_nm - z_hat||^2, over its local set."""
    prox = ProxTerm(rho=rho, z_hat=z_hat, lam_bar=lam_bar) if params.n_neighbors else None
    res = solve_wsaa(params, outcomes, weights, prox=prox, p2p_prices=p2p_prices)
    return res.decision


def aux_update(z_nm, z_mn, lam_nm, lam_mn, rho):
    """Closed-form consensus update; the pair is antisymmetric by construction."""
    z_nm = np.asarray(z_nm, dtype=float)
    z_mn = np.asarray(z_mn, dtype=float)
    lam_nm = np.asarray(lam_nm, dtype=float)
    lam_mn = np.asarray(lam_mn, dtype=float)
    z_hat = 0.5 * (z_nm - z_mn) + (lam_nm - lam_mn) / (2.0 * rho)
    return z_hat, -z_hat


def dual_update(lam, z_new, z_hat_new, rho):
    return np.asarray(lam, dtype=float) + rho * (np.asarray(z_new, dtype=float) - np.asarray(z_hat_new, dtype=float))


def accelerate(a, lam_new, lam_old, combined, prev_combined):
    """Restarted momentum on the duals.

    When the combined residual dropped below RESTART_FACTOR times its
    previous value, apply the standard momentum update; otherwise restart
    (a back to 1, no extrapolation).
    """
    lam_new = np.asarray(lam_new, dtype=float)
    lam_old = np.asarray(lam_old, dtype=float)
    if combined <= RESTART_FACTOR * prev_combined:
        a_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * a * a))
        lam_bar = lam_new + ((a - 1.0) / a_next) * (lam_new - lam_old)
        return a_next, lam_bar
    return 1.0, lam_new.copy()


def residuals(z_by_edge: dict, z_hat_new: dict, z_hat_old: dict, rho: float):
    """Primal and dual residuals over all directed edges (inf norms)."""
    r = 0.0
    s = 0.0
    for key, z in z_by_edge.items():
        gap = np.abs(z - z_hat_new[key]).max(initial=0.0)
        r = max(r, float(gap))
        s = max(s, float(rho * np.abs(z_hat_new[key] - z_hat_old[key]).max(initial=0.0)))
    # pairwise consistency of the auxiliary trades holds by construction
    for (n, m) in list(z_by_edge):
        mism = np.abs(z_hat_new[(n, m)] + z_hat_new[(m, n)]).max(initial=0.0)
        assert mism <= 1e-12, "auxiliary pair mismatch"
    return r, s


def _setup(topology: Topology, agents: list[Agent], rho: float, eps: float,
           symmetric_p2p_prices: bool, log: list[Message] | None):
    H = agents[0].params.horizon
    for i, ag in enumerate(agents):
        if ag.params.id != i:
            raise TopologyError("agent order must match params.id")
        if tuple(ag.params.neighbors) != topology.neighbors(i):
            raise TopologyError(f"agent {i} neighbor list disagrees with topology")
    # covariate-share round, then local weight fitting
    shared: dict[int, list[np.ndarray]] = {i: [] for i in range(topology.n)}
    for i, ag in enumerate(agents):
        for m in topology.neighbors(i):
            msg = Message(kind="covariate-share", sender=i, receiver=m, iteration=0, payload=ag.x_current)
            if log is not None:
                log.append(msg)
            shared[m].append(msg.payload)
    for i, ag in enumerate(agents):
        if ag.weights is None:
            ag.weights = cknn_weights(ag.x_current, shared[i], ag.dataset, ag.k, ag.gamma).w
        ag.state = AdmmState(rho=rho, eps=eps)
        ag.state.init_edges(topology.neighbors(i), H)
    # per-edge trade prices: symmetric averaging keeps the exchange zero-sum
    if symmetric_p2p_prices:
        expect = []
        for ag in agents:
            _, c_nm = expected_prices(ag.dataset.outcomes(), ag.weights)
            expect.append(np.asarray(c_nm).reshape(ag.params.n_neighbors, H))
        for i, ag in enumerate(agents):
            nbrs = topology.neighbors(i)
            prices = np.empty((len(nbrs), H))
            for j, m in enumerate(nbrs):
                back = topology.neighbors(m).index(i)
                prices[j] = 0.5 * (expect[i][j] + expect[m][back])
            ag.p2p_prices = prices


def run(
    topology: Topology,
    agents: list[Agent],
    rho: float = 0.5,
    eps: float = 1e-4,
    max_iter: int = 500,
    symmetric_p2p_prices: bool = True,
    log_messages: bool = False,
) -> AdmmResult:
    """Iterate primal / broadcast / auxiliary / dual / accelerate until the
    worst primal or dual residual falls below ``eps``.

    Non-convergence at ``max_iter`` returns the last iterate flagged
    not converged.
    """
    log: list[Message] | None = [] if log_messages else None
    _setup(topology, agents, rho, eps, symmetric_p2p_prices, log)
    H = agents[0].params.horizon
    decisions: list[DecisionVector] = [None] * topology.n
    trace: list[tuple[int, float, float]] = []
    converged = False
    nu = 0

    for nu in range(1, max_iter + 1):
        # primal phase (barrier: everyone reads nu-1 state)
        z_dir: dict[tuple[int, int], np.ndarray] = {}
        for i, ag in enumerate(agents):
            nbrs = topology.neighbors(i)
            lam_bar = np.array([ag.state.lam_bar[m] for m in nbrs]).reshape(len(nbrs), H)
            z_hat = np.array([ag.state.z_hat[m] for m in nbrs]).reshape(len(nbrs), H)
            z = local_update(ag.params, ag.dataset.outcomes(), ag.weights, lam_bar, z_hat, rho, ag.p2p_prices)
            decisions[i] = z
            for j, m in enumerate(nbrs):
                z_dir[(i, m)] = z.p_nm[j]
                if log is not None:
                    log.append(Message(kind="trade-proposal", sender=i, receiver=m, iteration=nu, payload=z.p_nm[j]))
        # auxiliary phase (per undirected edge, closed form)
        z_hat_old = {(i, m): agents[i].state.z_hat[m].copy() for (i, m) in z_dir}
        for a, b in sorted(topology.edges):
            zh_ab, zh_ba = aux_update(z_dir[(a, b)], z_dir[(b, a)], agents[a].state.lam[b], agents[b].state.lam[a], rho)
            agents[a].state.z_hat[b] = zh_ab
            agents[b].state.z_hat[a] = zh_ba
        z_hat_new = {(i, m): agents[i].state.z_hat[m] for (i, m) in z_dir}
        # dual phase + acceleration
        for i, ag in enumerate(agents):
            for m in topology.neighbors(i):
                lam_old = ag.state.lam[m]
                lam_new = dual_update(lam_old, z_dir[(i, m)], ag.state.z_hat[m], rho)
                comb = float(
                    np.sum((lam_new - ag.state.lam_bar[m]) ** 2) / rho
                    + rho * np.sum((ag.state.z_hat[m] - z_hat_old[(i, m)]) ** 2)
                )
                a_next, lam_bar = accelerate(ag.state.accel[m], lam_new, lam_old, comb, ag.state.combined[m])
                ag.state.lam[m] = lam_new
                ag.state.lam_bar[m] = lam_bar
                ag.state.accel[m] = a_next
                ag.state.combined[m] = comb
        r, s = residuals(z_dir, z_hat_new, z_hat_old, rho)
        trace.append((nu, r, s))
        for ag in agents:
            ag.state.history.append((nu, r, s))
            ag.state.nu = nu + 1
        if max(r, s) <= eps:
            converged = True
            break

    return AdmmResult(decisions=decisions, converged=converged, iterations=nu,
                      trace=trace, message_log=log)


def social_cost(agents: list[Agent], decisions: list[DecisionVector]) -> float:
    """Community-wide weighted cost of a set of decisions, with trades
    priced at the (symmetric) per-edge prices the agents coordinate on."""
    from .model import cost_flexibility, cost_trading

    total = 0.0
    for ag, z in zip(agents, decisions):
        total += cost_flexibility(ag.params, z.p_b, z.s)
        total += ag.params.alpha_e * float((z.p_nm ** 2).sum())
        outs = ag.dataset.outcomes()
        for wi, out, q in zip(ag.weights, outs, z.q_mt):
            if wi == 0.0:
                continue
            c_nm = ag.p2p_prices if ag.p2p_prices is not None else out.c_nm
            total += wi * cost_trading(ag.params, z.p_mt, q, z.p_nm, {"c_q": out.c_q, "c_nm": c_nm})
    return total


def residual_trace_csv(trace) -> str:
    lines = ["iteration,primal_residual,dual_residual"]
    for nu, r, s in trace:
        lines.append(f"{nu},{repr(float(r))},{repr(float(s))}")
    return "\n".join(lines) + "\n"
