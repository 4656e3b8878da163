import numpy as np
import pytest

from prosumernet.model import ProsumerParams, validate_decision
from prosumernet.scenarios import GeneratorConfig, generate_synthetic
from prosumernet.twostage import (
    ProxTerm,
    RecourseInfeasibleError,
    expected_prices,
    expost_cost,
    recourse_q,
    solve_wsaa,
)


def params_small(H=6, neighbors=(), **over):
    base = dict(
        id=0, horizon=H, dt=1.0, eta=0.9, e_min=5.0, e_max=60.0, e_init=20.0,
        p_b_max=8.0, p_s_max=10.0, c_s=20.0, p_e_max=4.0,
        alpha_b=0.1, alpha_s=0.1,
        p_mt_bounds=(0.0, 30.0), q_mt_bounds=(-200.0, 200.0),
        c_p_mt=np.full(H, 5.2), p_l=np.full(H, 6.0), p_g=np.zeros(H),
        neighbors=neighbors,
    )
    base.update(over)
    return ProsumerParams(**base)


def dataset_small(H=6, S=8, n_neighbors=0, seed=0, **over):
    cfg = GeneratorConfig(S=S, H=H, n_neighbors=n_neighbors, noise_std=0.8,
                          price_sensitivity=(0.3, -0.2, 0.8, 0.0, -0.4), **over)
    return generate_synthetic(seed, cfg)


def uniform(S):
    return np.full(S, 1.0 / S)


def test_reduced_equals_full_path():
    ds = dataset_small(n_neighbors=2)
    params = params_small(neighbors=(1, 2))
    w = uniform(len(ds))
    a = solve_wsaa(params, ds.outcomes(), w, reduced=True)
    b = solve_wsaa(params, ds.outcomes(), w, reduced=False)
    assert a.objective == pytest.approx(b.objective, rel=1e-7, abs=1e-6)
    assert np.allclose(a.decision.p_b, b.decision.p_b, atol=2e-5)
    assert np.allclose(a.decision.p_s, b.decision.p_s, atol=2e-5)
    assert np.allclose(a.decision.q_mt, b.decision.q_mt, atol=2e-4)


def test_reduced_equals_full_with_prox():
    ds = dataset_small(n_neighbors=1)
    params = params_small(neighbors=(1,))
    w = uniform(len(ds))
    rng = np.random.default_rng(0)
    prox = ProxTerm(rho=0.5, z_hat=rng.normal(size=(1, 6)), lam_bar=rng.normal(size=(1, 6)))
    a = solve_wsaa(params, ds.outcomes(), w, prox=prox, reduced=True)
    b = solve_wsaa(params, ds.outcomes(), w, prox=prox, reduced=False)
    assert a.objective == pytest.approx(b.objective, rel=1e-7, abs=1e-6)
    assert np.allclose(a.decision.p_nm, b.decision.p_nm, atol=2e-5)


def test_solution_is_feasible():
    ds = dataset_small()
    params = params_small()
    res = solve_wsaa(params, ds.outcomes(), uniform(len(ds)))
    assert validate_decision(params, res.decision) == []


def test_objective_value_matches_weighted_cost():
    # the reported objective equals the weighted sum of per-scenario costs
    from prosumernet.model import cost_flexibility, cost_trading

    ds = dataset_small(S=5)
    params = params_small()
    w = np.array([0.4, 0.3, 0.2, 0.1, 0.0])
    res = solve_wsaa(params, ds.outcomes(), w)
    z = res.decision
    total = cost_flexibility(params, z.p_b, z.s)
    for wi, out, q in zip(w, ds.outcomes(), z.q_mt):
        if wi:
            total += wi * cost_trading(params, z.p_mt, q, z.p_nm, out)
    assert res.objective == pytest.approx(total, rel=1e-8, abs=1e-6)


def test_indicator_weights_match_single_scenario():
    ds = dataset_small(S=4)
    params = params_small()
    w = np.zeros(4)
    w[2] = 1.0
    a = solve_wsaa(params, ds.outcomes(), w)
    b = solve_wsaa(params, [ds.outcomes()[2]], np.array([1.0]))
    assert a.objective == pytest.approx(b.objective, rel=1e-8, abs=1e-6)
    assert np.allclose(a.decision.p_b, b.decision.p_b, atol=1e-6)


def test_recourse_binding_rows_kept():
    # tight real-time bounds force the binding rows into the reduced QP
    ds = dataset_small()
    params = params_small(q_mt_bounds=(0.0, 4.0))
    res = solve_wsaa(params, ds.outcomes(), uniform(len(ds)))
    assert validate_decision(params, res.decision) == []
    assert np.all(res.decision.q_mt >= -1e-7) and np.all(res.decision.q_mt <= 4.0 + 1e-7)


def test_expected_prices():
    ds = dataset_small(S=3)
    outs = ds.outcomes()
    w = np.array([0.5, 0.5, 0.0])
    c_q, _ = expected_prices(outs, w)
    assert np.allclose(c_q, 0.5 * outs[0].c_q + 0.5 * outs[1].c_q)


def test_expost_pinned_matches_qp():
    ds = dataset_small(S=6)
    params = params_small()
    res = solve_wsaa(params, ds.outcomes(), uniform(6))
    realized = ds.outcomes()[3]
    fast, qf = expost_cost(params, res.decision, realized, use_qp=False)
    slow, qs = expost_cost(params, res.decision, realized, use_qp=True)
    assert fast == pytest.approx(slow, rel=1e-8, abs=1e-7)
    assert np.allclose(qf, qs, atol=1e-6)


def test_expost_infeasible_raises():
    ds = dataset_small()
    params = params_small()
    res = solve_wsaa(params, ds.outcomes(), uniform(len(ds)))
    tight = params_small(q_mt_bounds=(0.0, 0.001))
    with pytest.raises(RecourseInfeasibleError):
        recourse_q(tight, res.decision, ds.outcomes()[0])
