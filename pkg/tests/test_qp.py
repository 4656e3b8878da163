"""Solver checks: hand KKT examples, enumeration oracles, dual certificates."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prosumernet.qp import MipProblem, QpProblem, SolverError, solve_miqp, solve_qp


def test_min_square_above_one():
    # min z^2 s.t. z >= 1: optimum z=1 with inequality dual 2 (KKT by hand)
    p = QpProblem(n_vars=1, Q=[[2.0]], A_in=[[-1.0]], b_in=[-1.0])
    s = solve_qp(p)
    assert s.optimal
    assert abs(s.x[0] - 1.0) < 1e-8
    assert abs(s.mu_in[0] - 2.0) < 1e-6
    assert abs(s.objective - 1.0) < 1e-8


def test_clamped_minimum():
    p = QpProblem(n_vars=1, Q=[[2.0]], c=[-4.0], lb=[0.0], ub=[1.0])
    s = solve_qp(p)
    assert s.optimal and abs(s.x[0] - 1.0) < 1e-8


def test_degenerate_face_lp():
    # min z1+z2 s.t. z1+z2=1, z>=0: any primal optimum accepted, value 1, eq dual 1
    p = QpProblem(n_vars=2, c=[1.0, 1.0], A_eq=[[1.0, 1.0]], b_eq=[1.0], lb=[0.0, 0.0])
    s = solve_qp(p)
    assert s.optimal
    assert abs(s.objective - 1.0) < 1e-8
    assert abs(s.y_eq[0] - 1.0) < 1e-6
    assert np.all(s.x >= -1e-9) and abs(s.x.sum() - 1.0) < 1e-8


def test_infeasible_reported():
    p = QpProblem(n_vars=1, A_eq=[[1.0]], b_eq=[2.0], lb=[0.0], ub=[1.0])
    assert solve_qp(p).status == "infeasible"


def test_unbounded_reported():
    p = QpProblem(n_vars=1, c=[-1.0], lb=[0.0])
    assert solve_qp(p).status == "unbounded"


def test_q_not_psd_rejected():
    with pytest.raises(SolverError):
        solve_qp(QpProblem(n_vars=1, Q=[[-1.0]]))


def _random_qp(rng, n=None, want_feasible=True):
    n = n or int(rng.integers(3, 12))
    me = int(rng.integers(0, max(1, n // 2)))
    mi = int(rng.integers(0, 6))
    L = rng.normal(size=(n, n)) * 0.5
    Q = L @ L.T + np.diag(rng.uniform(0, 1, n))
    c = rng.normal(size=n)
    x0 = rng.normal(size=n)
    A = rng.normal(size=(me, n)) if me else None
    b = A @ x0 if me else None
    Ai = rng.normal(size=(mi, n)) if mi else None
    bi = Ai @ x0 + rng.uniform(0.1, 2, mi) if mi else None
    lb = x0 - rng.uniform(0.5, 3, n)
    ub = x0 + rng.uniform(0.5, 3, n)
    return QpProblem(n_vars=n, Q=Q, c=c, A_eq=A, b_eq=b, A_in=Ai, b_in=bi, lb=lb, ub=ub)


def stationarity_residual(p: QpProblem, s) -> float:
    r = p.Q @ s.x + p.c + s.z_ub - s.z_lb
    if p.n_eq:
        r = r - p.A_eq.T @ s.y_eq
    if p.n_in:
        r = r + p.A_in.T @ s.mu_in
    return float(np.abs(r).max())


def test_random_duals_certify():
    rng = np.random.default_rng(7)
    for _ in range(60):
        p = _random_qp(rng)
        s = solve_qp(p)
        assert s.optimal
        assert stationarity_residual(p, s) <= 1e-6
        assert s.stats["feasibility"] <= 1e-6
        assert s.stats["complementarity"] <= 1e-6


def test_objective_monotone_in_bound_tightening():
    # tightening a variable bound never improves the optimum
    rng = np.random.default_rng(11)
    for _ in range(25):
        p = _random_qp(rng)
        s = solve_qp(p)
        assert s.optimal
        j = int(rng.integers(0, p.n_vars))
        ub = p.ub.copy()
        ub[j] = s.x[j] - rng.uniform(0.05, 0.5)
        if ub[j] < p.lb[j]:
            continue
        tightened = QpProblem(
            n_vars=p.n_vars, Q=p.Q, c=p.c, A_eq=p.A_eq if p.n_eq else None,
            b_eq=p.b_eq if p.n_eq else None, A_in=p.A_in if p.n_in else None,
            b_in=p.b_in if p.n_in else None, lb=p.lb, ub=ub,
        )
        s2 = solve_qp(tightened)
        if s2.optimal:
            assert s2.objective >= s.objective - 1e-7 * (1 + abs(s.objective))


# ---------------------------------------------------------------------------
# MIQP against exhaustive enumeration.
# ---------------------------------------------------------------------------


def _random_miqp(rng, max_bins=8):
    n = int(rng.integers(2, 7))
    nb = int(rng.integers(1, max_bins + 1))
    ntot = n + nb
    Q = np.diag(np.concatenate([rng.uniform(0.1, 1.0, n), np.zeros(nb)]))
    c = rng.normal(size=ntot)
    me = int(rng.integers(0, 2))
    lb = np.concatenate([rng.uniform(-3, -1, n), np.zeros(nb)])
    ub = np.concatenate([rng.uniform(1, 3, n), np.ones(nb)])
    A = rng.normal(size=(me, ntot)) if me else None
    b = A @ ((lb + ub) / 2) if me else None
    mi = int(rng.integers(0, 3))
    Ai = rng.normal(size=(mi, ntot)) if mi else None
    bi = Ai @ ((lb + ub) / 2) + rng.uniform(0.0, 1.0, mi) if mi else None
    qp = QpProblem(n_vars=ntot, Q=Q, c=c, A_eq=A, b_eq=b, A_in=Ai, b_in=bi, lb=lb, ub=ub)
    return MipProblem(qp=qp, binary_indices=list(range(n, ntot)))


def enumerate_miqp(p: MipProblem):
    """Brute-force oracle: try every binary assignment with solve_qp."""
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=len(p.binary_indices)):
        lb = p.qp.lb.copy()
        ub = p.qp.ub.copy()
        for j, v in zip(p.binary_indices, bits):
            lb[j] = ub[j] = v
        sub = QpProblem(
            n_vars=p.qp.n_vars, Q=p.qp.Q, c=p.qp.c,
            A_eq=p.qp.A_eq if p.qp.n_eq else None, b_eq=p.qp.b_eq if p.qp.n_eq else None,
            A_in=p.qp.A_in if p.qp.n_in else None, b_in=p.qp.b_in if p.qp.n_in else None,
            lb=lb, ub=ub,
        )
        s = solve_qp(sub)
        if s.optimal and (best is None or s.objective < best):
            best = s.objective
    return best


def test_miqp_example_enumerated():
    # derived by enumerating b: b=0 forces z=0 (cost 1), b=1 gives z=1 (cost 0.3)
    p = QpProblem(
        n_vars=2, Q=np.diag([2.0, 0.0]), c=[-2.0, 0.3],
        A_in=[[1.0, -1.0]], b_in=[0.0], lb=[0.0, 0.0], ub=[1.0, 1.0],
    )
    s = solve_miqp(MipProblem(qp=p, binary_indices=[1]))
    assert s.optimal
    assert np.allclose(s.x, [1.0, 1.0], atol=1e-7)
    assert abs((s.objective + 1.0) - 0.3) < 1e-7  # +1 restores the (z-1)^2 constant


def test_miqp_no_binaries_reduces_to_qp():
    p = QpProblem(n_vars=1, Q=[[2.0]], c=[-4.0], lb=[0.0], ub=[1.0])
    a = solve_miqp(MipProblem(qp=p))
    b = solve_qp(p)
    assert a.status == b.status == "optimal"
    assert abs(a.objective - b.objective) < 1e-12


def test_miqp_infeasible_binaries():
    # b1 + b2 = 1.5 has no binary solution
    p = QpProblem(n_vars=2, A_eq=[[1.0, 1.0]], b_eq=[1.5], lb=[0.0, 0.0], ub=[1.0, 1.0])
    s = solve_miqp(MipProblem(qp=p, binary_indices=[0, 1]))
    assert s.status == "infeasible"


def test_miqp_matches_enumeration(n_instances=40, seed=3):
    rng = np.random.default_rng(seed)
    checked = 0
    while checked < n_instances:
        p = _random_miqp(rng)
        oracle = enumerate_miqp(p)
        s = solve_miqp(p)
        if oracle is None:
            assert s.status == "infeasible"
        else:
            assert s.optimal
            assert abs(s.objective - oracle) <= 1e-6 * (1 + abs(oracle))
        checked += 1


def test_miqp_deterministic():
    rng = np.random.default_rng(5)
    p = _random_miqp(rng)
    a = solve_miqp(p)
    b = solve_miqp(p)
    assert a.status == b.status
    if a.optimal:
        assert np.array_equal(a.x, b.x)


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=25, deadline=None)
def test_box_qp_solution_within_box(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    p = QpProblem(
        n_vars=n, Q=np.diag(rng.uniform(0.1, 2.0, n)), c=rng.normal(size=n),
        lb=-rng.uniform(0.1, 2.0, n), ub=rng.uniform(0.1, 2.0, n),
    )
    s = solve_qp(p)
    assert s.optimal
    assert np.all(s.x >= p.lb - 1e-8) and np.all(s.x <= p.ub + 1e-8)
    # unconstrained minimizer clipped to the box is the exact solution here
    expect = np.clip(-p.c / np.diag(p.Q), p.lb, p.ub)
    assert np.allclose(s.x, expect, atol=1e-7)
