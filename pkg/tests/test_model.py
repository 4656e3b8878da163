import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prosumernet.model import (
    DecisionVector,
    InvalidParamsError,
    ProsumerParams,
    balance_q,
    build_constraints,
    cost_flexibility,
    cost_trading,
    validate_decision,
)


def table1_params(**over):
    H = over.get("horizon", 24)
    base = dict(
        id=0, horizon=H, dt=1.0, eta=0.9, e_min=10.0, e_max=200.0, e_init=50.0,
        p_b_max=20.0, p_s_max=20.0, c_s=150.0, p_e_max=5.0,
        alpha_b=0.1, alpha_s=0.1,
        c_p_mt=np.full(H, 5.0), p_l=np.full(H, 8.0), p_g=np.zeros(H),
        neighbors=(1, 2),
    )
    base.update(over)
    return ProsumerParams(**base)


def feasible_decision(params, S=1):
    H, dt = params.horizon, params.dt
    p_s = np.full(H, params.c_s / (H * dt))
    s = np.concatenate([[0.0], np.cumsum((p_s - np.array(params.p_s_ref)) * dt)])
    p_b = np.zeros(H)
    e = np.full(H + 1, params.e_init)
    p_mt = np.zeros(H)
    p_nm = np.zeros((params.n_neighbors, H))
    q = balance_q(params, p_b, p_s, p_mt, p_nm)
    return DecisionVector(p_b=p_b, e=e, p_s=p_s, s=s, p_mt=p_mt,
                          q_mt=np.tile(q, (S, 1)), p_nm=p_nm)


def test_row_counts_table1():
    params = table1_params()
    for S in (1, 3):
        sys = build_constraints(params, S)
        kinds = [l.kind for l in sys.labels_eq]
        assert kinds.count("balance") == 24 * S
        assert kinds.count("bess-dyn") == 24
        assert kinds.count("sl-energy") == 1
        assert sys.A_eq.shape[0] == 24 * S + 24 + 24 + 1


def test_scenario_copies_differ_only_in_q_columns():
    params = table1_params()
    S = 3
    sys = build_constraints(params, S)
    lay = sys.layout
    H = lay.H
    for h in range(0, H, 7):
        rows = [sys.A_eq[i * H + h] for i in range(S)]
        for i in range(1, S):
            diff = np.nonzero(rows[i] - rows[0])[0]
            assert np.all((diff >= lay.q_mt.start) & (diff < lay.q_mt.stop))


def test_build_constraints_deterministic():
    params = table1_params()
    a = build_constraints(params, 2)
    b = build_constraints(params, 2)
    assert a.A_eq.tobytes() == b.A_eq.tobytes()
    assert a.b_eq.tobytes() == b.b_eq.tobytes()
    assert a.lb.tobytes() == b.lb.tobytes() and a.ub.tobytes() == b.ub.tobytes()


def test_degenerate_box_only_zero_feasible():
    params = ProsumerParams(
        id=0, horizon=1, dt=1.0, eta=1.0, e_min=0.0, e_max=0.0, e_init=0.0,
        p_b_max=0.0, p_s_max=0.0, c_s=0.0, p_e_max=0.0,
        p_mt_bounds=(0.0, 0.0), q_mt_bounds=(0.0, 0.0),
    )
    z = DecisionVector(p_b=[0.0], e=[0.0, 0.0], p_s=[0.0], s=[0.0, 0.0],
                       p_mt=[0.0], q_mt=[[0.0]], p_nm=np.zeros((0, 1)))
    assert validate_decision(params, z) == []
    z.p_mt = np.array([0.5])
    assert any(v.label in ("grid-bound", "balance") for v in validate_decision(params, z))


def test_soc_recursion_arithmetic():
    params = ProsumerParams(id=0, horizon=2, dt=1.0, eta=0.9, e_min=0.0, e_max=100.0,
                            e_init=10.0, c_s=0.0)
    p_b = np.array([5.0, -5.0])
    e = [10.0]
    for h in range(2):
        e.append(e[-1] + params.eta * p_b[h] * params.dt)
    assert e == [10.0, 14.5, 10.0]
    z = feasible_decision(params)
    z.p_b = p_b
    z.e = np.array(e)
    z.q_mt = np.atleast_2d(balance_q(params, z.p_b, z.p_s, z.p_mt, z.p_nm))
    assert validate_decision(params, z) == []


def test_cost_flexibility_examples():
    p = table1_params(horizon=2, alpha_b=0.1, alpha_s=0.0, c_s=0.0,
                      c_p_mt=np.zeros(2), p_l=np.zeros(2))
    assert cost_flexibility(p, [3.0, -4.0], [0.0, 0.0, 0.0]) == pytest.approx(2.5)
    assert cost_flexibility(p, [0.0, 0.0], [0.0, 0.0, 0.0]) == 0.0
    p24 = table1_params()
    val = cost_flexibility(p24, np.full(24, 20.0), np.zeros(25))
    assert val == pytest.approx(0.1 * 24 * 400)  # 960, Table-I weights


def test_cost_trading_examples():
    p1 = table1_params(horizon=1, c_s=0.0, c_p_mt=[5.0], p_l=[0.0], p_g=[0.0], neighbors=())
    prices = {"c_q": [0.0], "c_nm": np.zeros((0, 1))}
    assert cost_trading(p1, [0.0], [0.0], np.zeros((0, 1)), prices) == 0.0
    assert cost_trading(p1, [1.0], [0.0], np.zeros((0, 1)), prices) == pytest.approx(5.0)
    p2 = table1_params(horizon=1, c_s=0.0, c_p_mt=[3.0], p_l=[0.0], p_g=[0.0], neighbors=(1,))
    prices = {"c_q": [9.0], "c_nm": [[6.0]]}
    assert cost_trading(p2, [2.0], [1.0], [[-1.0]], prices) == pytest.approx(6.0 + 9.0 - 6.0)


def test_validate_decision_flags_soc_and_energy():
    params = table1_params()
    z = feasible_decision(params)
    assert validate_decision(params, z) == []

    bad = feasible_decision(params)
    bad.e[5] = params.e_max + 1.0
    viols = validate_decision(params, bad)
    soc = [v for v in viols if v.label == "bess-soc" and v.step == 5]
    assert len(soc) == 1 and soc[0].residual == pytest.approx(1.0)

    short = feasible_decision(params)
    short.p_s = short.p_s - 2.0 / (params.horizon * params.dt)
    short.q_mt = np.atleast_2d(balance_q(params, short.p_b, short.p_s, short.p_mt, short.p_nm))
    short.s = np.concatenate([[0.0], np.cumsum((short.p_s - np.array(params.p_s_ref)) * params.dt)])
    viols = validate_decision(params, short)
    en = [v for v in viols if v.label == "sl-energy"]
    assert len(en) == 1 and en[0].residual == pytest.approx(-2.0)


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=30, deadline=None)
def test_soc_conservation_identity(seed):
    # any decision accepted by the recursion satisfies e[H]-e[0] = eta*dt*sum(p_b)
    rng = np.random.default_rng(seed)
    H = int(rng.integers(1, 12))
    params = ProsumerParams(id=0, horizon=H, dt=float(rng.uniform(0.25, 2.0)), eta=float(rng.uniform(0.5, 1.0)),
                            e_min=0.0, e_max=1e6, e_init=100.0, p_b_max=50.0, c_s=0.0, p_s_max=5.0)
    p_b = rng.uniform(-50, 50, H)
    e = np.concatenate([[params.e_init], params.e_init + np.cumsum(params.eta * p_b * params.dt)])
    z = DecisionVector(p_b=p_b, e=e, p_s=np.zeros(H), s=np.zeros(H + 1),
                       p_mt=np.zeros(H), q_mt=np.atleast_2d(balance_q(params, p_b, np.zeros(H), np.zeros(H), np.zeros((0, H)))),
                       p_nm=np.zeros((0, H)))
    assert not [v for v in validate_decision(params, z) if v.label == "bess-dyn"]
    assert e[-1] - e[0] == pytest.approx(params.eta * params.dt * p_b.sum(), abs=1e-9)


def test_sl_energy_exactness_for_accepted_decisions():
    params = table1_params()
    z = feasible_decision(params)
    assert abs(z.p_s.sum() * params.dt - params.c_s) <= 1e-9


def test_invalid_params_name_labels():
    with pytest.raises(InvalidParamsError, match="sl-energy"):
        table1_params(c_s=1e5)
    with pytest.raises(InvalidParamsError, match="bess-soc"):
        table1_params(e_init=500.0)
    with pytest.raises(InvalidParamsError, match="sl-pow"):
        table1_params(p_s_ref=np.full(24, 100.0))


def test_params_json_round_trip():
    p = table1_params()
    q = ProsumerParams.from_json(p.to_json())
    assert q == p
