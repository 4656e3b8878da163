"""Seeded end-to-end experiments over a synthetic prosumer community.

One trial: draw a coupled community day-sample set, train the weight
policies per prosumer, prescribe with each method at the test covariate,
and score everyone ex post at the realized outcome.  The cost comparison
runs with peer trading disabled so methods differ only in how they use
context; the peak phase then runs the full coordinated pipeline (trained
consensus weights + ADMM peer trading) against the uncoordinated
baseline (no trades, battery idle, shiftable load at its preference).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
import hashlib
import json

import numpy as np

from . import bilevel, evaluate
from .admm import Agent, Topology, residual_trace_csv, run as admm_run
from .bilevel import CandidateResult, TrainedPolicy
from .evaluate import METHODS, MethodResult, peak_metrics
from .model import ProsumerParams
from .scenarios import Dataset, GeneratorConfig, generate_community, standardize
from .twostage import expost_cost, recourse_q

__all__ = ["ExperimentConfig", "TrialData", "run_experiment", "run_sensitivity", "ExperimentResult"]


@dataclass
class ExperimentConfig:
    n_prosumers: int = 10
    horizon: int = 24
    dt: float = 1.0
    train_samples: int = 50
    val_samples: int = 12
    trials: int = 50
    seed: int = 0
    # market process
    noise_std: float = 0.5
    obs_noise: float = 1.3
    tariff_spread: float = 0.1
    price_sensitivity: tuple = (0.2, 0.1, 0.3, 0.15, 0.25)
    shape_sensitivity: tuple = (0.9, 0.5, 1.5, 0.75, 1.25)
    c_min: float = 3.0
    c_max: float = 9.0
    dayahead_premium: float = 1.0
    # methods
    po_k: int = 1
    gamma_grid: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    # prosumer scale (Table-style physical values)
    bess_eta: float = 0.9
    bess_e_min: float = 10.0
    bess_e_max: float = 80.0
    bess_p_max: float = 20.0
    sl_p_max: float = 20.0
    sl_energy: float = 150.0
    alpha_b: float = 0.1
    alpha_s: float = 0.1
    alpha_e: float = 0.02
    p_e_max: float = 5.0
    pv_amplitude: float = 14.0
    load_amplitude: float = 9.0
    # coordination
    rho: float = 0.5
    eps_consensus: float = 1e-4
    max_admm_iter: int = 500
    peak_trials: int = 3
    chord_step: int = 3

    def generator_config(self, n_samples: int) -> GeneratorConfig:
        return GeneratorConfig(
            S=n_samples, H=self.horizon, d_x=5, n_neighbors=0,
            price_sensitivity=self.price_sensitivity,
            shape_sensitivity=self.shape_sensitivity, noise_std=self.noise_std,
            c_min=self.c_min, c_max=self.c_max, obs_noise=self.obs_noise,
            tariff_spread=self.tariff_spread,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        d = json.loads(text)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        for k in ("price_sensitivity", "shape_sensitivity", "gamma_grid"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def topology_for(cfg: ExperimentConfig) -> Topology:
    return Topology.ring_with_chords(cfg.n_prosumers, cfg.chord_step)


def _pv_shape(H: int) -> np.ndarray:
    h = np.arange(H)
    return np.maximum(0.0, np.sin(np.pi * (h - 6.0) / 12.0)) ** 1.5


def _load_shape(H: int) -> np.ndarray:
    h = np.arange(H)
    s = 0.55 + 0.2 * np.exp(-0.5 * ((h - 8.0) / 2.0) ** 2) + 0.45 * np.exp(-0.5 * ((h - 19.5) / 2.6) ** 2)
    return s / s.max()


def _sl_energy(cfg: ExperimentConfig) -> float:
    # the configured requirement refers to a 24-hour day; shorter smoke
    # horizons scale it down proportionally
    return cfg.sl_energy * cfg.horizon * cfg.dt / 24.0


def _sl_reference(cfg: ExperimentConfig) -> np.ndarray:
    # preferred consumption follows the demand shape and meets the total
    # energy requirement exactly, so the uncoordinated baseline is feasible
    shape = _load_shape(cfg.horizon)
    ref = shape / (shape.sum() * cfg.dt) * _sl_energy(cfg)
    return np.minimum(ref, cfg.sl_p_max)


def prosumer_params(cfg: ExperimentConfig, i: int, neighbors=(), p2p: bool = False) -> ProsumerParams:
    """Deterministic heterogeneous fleet: even ids are PV-rich with lighter
    load, odd ids are load-heavy with little PV."""
    H = cfg.horizon
    rng = np.random.default_rng(10_000 + i)
    pv_rich = i % 2 == 0
    pv_amp = cfg.pv_amplitude * (1.1 + 0.3 * rng.uniform(-1, 1)) if pv_rich else cfg.pv_amplitude * 0.15
    load_amp = cfg.load_amplitude * ((0.8 if pv_rich else 1.35) + 0.2 * rng.uniform(-1, 1))
    base = np.array(GeneratorConfig(S=1, H=H).price_base)
    return ProsumerParams(
        id=i, horizon=H, dt=cfg.dt, eta=cfg.bess_eta,
        e_min=cfg.bess_e_min, e_max=cfg.bess_e_max, e_init=0.5 * (cfg.bess_e_min + cfg.bess_e_max),
        p_b_max=cfg.bess_p_max, p_s_max=cfg.sl_p_max, c_s=_sl_energy(cfg),
        p_s_ref=_sl_reference(cfg),
        p_e_max=cfg.p_e_max if p2p else 0.0,
        p_mt_bounds=(0.0, 60.0), q_mt_bounds=(-1000.0, 1000.0),
        alpha_b=cfg.alpha_b, alpha_s=cfg.alpha_s, alpha_e=cfg.alpha_e,
        c_p_mt=base + cfg.dayahead_premium,
        p_g=pv_amp * _pv_shape(H), p_l=load_amp * _load_shape(H),
        neighbors=neighbors,
    )


@dataclass
class TrialData:
    """One trial's per-prosumer train/validation/test views."""

    train: list[Dataset]
    val: list[Dataset]
    test: list[Dataset]       # single-sample datasets (the realized day)
    topology: Topology


def make_trial_data(cfg: ExperimentConfig, trial: int, n_train=None, n_pros=None, pool=None,
                    test_days: int = 1) -> TrialData:
    """Draw one trial's community and slice train/validation/test views.

    ``pool`` optionally draws a larger training pool than is used, so
    sample-size sweeps can compare points on identical validation and
    test days (common random numbers).
    """
    n_train = n_train or cfg.train_samples
    n_pros = n_pros or cfg.n_prosumers
    pool = max(pool or n_train, n_train)
    topo = Topology.ring_with_chords(n_pros, cfg.chord_step)
    total = pool + cfg.val_samples + test_days
    gen = cfg.generator_config(total)
    seed = cfg.seed * 1_000_003 + 7919 * trial
    dss = generate_community(seed, gen, topo.neighbor_lists())
    train, val, test = [], [], []
    for ds in dss:
        tr = standardize(ds.subset(range(n_train)), range(n_train))
        va = ds.subset(range(pool, pool + cfg.val_samples))
        va.standardization = tr.standardization
        te = ds.subset(range(pool + cfg.val_samples, total))
        te.standardization = tr.standardization
        train.append(tr)
        val.append(va)
        test.append(te)
    return TrialData(train=train, val=val, test=test, topology=topo)


def _policy_from_table(table: list[CandidateResult], gamma_fixed=None) -> TrainedPolicy:
    best = None
    for r in table:
        if gamma_fixed is not None and r.gamma != gamma_fixed:
            continue
        if r.status != "ok":
            continue
        if best is None or r.mean_cost < best.mean_cost:
            best = r
    if best is None:
        raise RuntimeError("no valid candidate in the table")
    return TrainedPolicy(k=best.k, gamma=best.gamma, validation_cost=best.mean_cost, table=table)


def train_policies(cfg: ExperimentConfig, data: TrialData):
    """Full-grid consensus policy per prosumer; the plain-kNN policy is the
    gamma=1 restriction of the same candidate table."""
    topo = data.topology
    cknn_policies, knn_policies = [], []
    for i in range(topo.n):
        params = prosumer_params(cfg, i)
        grid = bilevel.default_grid(len(data.train[i]))
        grid = [(k, g) for k, g in grid if g in cfg.gamma_grid]
        nb_cov = [data.val[m].covariates() for m in topo.neighbors(i)]
        policy = bilevel.train(data.train[i], data.val[i], grid, params, neighbor_val_covariates=nb_cov)
        cknn_policies.append(_policy_from_table(policy.table))
        knn_policies.append(_policy_from_table(policy.table, gamma_fixed=1.0))
    return cknn_policies, knn_policies


def method_decisions(cfg: ExperimentConfig, data: TrialData, cknn_policies, knn_policies):
    """Per-method, per-prosumer decisions at the test covariate (no trading)."""
    topo = data.topology
    out = {m: [] for m in METHODS}
    for i in range(topo.n):
        params = prosumer_params(cfg, i)
        x_test = data.test[i].samples[0].x
        nb_x = [data.test[m].samples[0].x for m in topo.neighbors(i)]
        out["PO"].append(evaluate.solve_po(x_test, data.train[i], params, k=cfg.po_k))
        out["SAA"].append(evaluate.solve_saa(data.train[i], params))
        out["WSAA_KNN"].append(bilevel.prescribe(x_test, [], knn_policies[i], data.train[i], params))
        out["WSAA_CKNN"].append(bilevel.prescribe(x_test, nb_x, cknn_policies[i], data.train[i], params))
    return out


def trial_costs(cfg: ExperimentConfig, data: TrialData, decisions) -> dict[str, float]:
    costs = {}
    for m, zs in decisions.items():
        total = 0.0
        for i, z in enumerate(zs):
            params = prosumer_params(cfg, i)
            realized = data.test[i].samples[0].y
            total += expost_cost(params, z, realized)[0]
        costs[m] = total
    return costs


# ---------------------------------------------------------------------------
# Peak phase: coordinated DCSO vs the uncoordinated baseline.
# ---------------------------------------------------------------------------


def baseline_exchange(cfg: ExperimentConfig, i: int) -> np.ndarray:
    """No trades, idle battery, shiftable load at its preferred profile."""
    p = prosumer_params(cfg, i)
    return np.array(p.p_l) + np.array(p.p_s_ref) - np.array(p.p_g)


def peak_phase(cfg: ExperimentConfig, data: TrialData, cknn_policies):
    """Run the coordinated pipeline with peer trading and compare peaks."""
    topo = data.topology
    agents = []
    for i in range(topo.n):
        params = prosumer_params(cfg, i, neighbors=topo.neighbors(i), p2p=True)
        agents.append(Agent(
            params=params, dataset=data.train[i],
            k=cknn_policies[i].k, gamma=cknn_policies[i].gamma,
            x_current=data.test[i].samples[0].x,
        ))
    res = admm_run(topo, agents, rho=cfg.rho, eps=cfg.eps_consensus, max_iter=cfg.max_admm_iter)
    exchanges = []
    for i, z in enumerate(res.decisions):
        realized = data.test[i].samples[0].y
        q = recourse_q(agents[i].params, z, realized)
        exchanges.append(np.asarray(z.p_mt) + q)
    base = [baseline_exchange(cfg, i) for i in range(topo.n)]
    base_pm = peak_metrics(base)
    dcso_pm = peak_metrics(exchanges, baseline_peak=base_pm.peak)
    return {
        "admm": res,
        "decisions": res.decisions,
        "exchange_profiles": np.array(exchanges),
        "baseline_profiles": np.array(base),
        "baseline_peak": base_pm.peak,
        "dcso_peak": dcso_pm.peak,
        "reduction": dcso_pm.reduction,
        "baseline_totals": base_pm.totals,
        "dcso_totals": dcso_pm.totals,
    }


# ---------------------------------------------------------------------------
# Full experiment.
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    method_results: dict[str, MethodResult]
    peak_runs: list[dict] = field(default_factory=list)
    residual_trace: list = field(default_factory=list)
    profiles: dict = field(default_factory=dict)

    def mean_costs(self) -> dict[str, float]:
        return {m: r.mean_cost for m, r in self.method_results.items()}

    def mean_peak_reduction(self) -> float:
        return float(np.mean([p["reduction"] for p in self.peak_runs])) if self.peak_runs else float("nan")

    def summary_text(self) -> str:
        lines = ["method,mean_expost_cost_cents"]
        for m in METHODS:
            if m in self.method_results:
                lines.append(f"{m},{self.method_results[m].mean_cost:.2f}")
        if self.peak_runs:
            lines.append(f"peak_reduction_percent,{100.0 * self.mean_peak_reduction():.2f}")
        return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, methods=METHODS, progress=None) -> ExperimentResult:
    method_results = {m: MethodResult(method=m) for m in methods}
    peak_runs = []
    residual_trace = []
    profiles = {}
    for t in range(cfg.trials):
        data = make_trial_data(cfg, t)
        cknn_p, knn_p = train_policies(cfg, data)
        decisions = method_decisions(cfg, data, cknn_p, knn_p)
        costs = trial_costs(cfg, data, decisions)
        for m in methods:
            method_results[m].trial_costs.append(costs[m])
        if t < cfg.peak_trials:
            pk = peak_phase(cfg, data, cknn_p)
            peak_runs.append({k: pk[k] for k in ("baseline_peak", "dcso_peak", "reduction")})
            if t == 0:
                residual_trace = pk["admm"].trace
                H = cfg.horizon
                bess = np.sum([z.p_b for z in pk["decisions"]], axis=0)
                sl = np.sum([z.p_s for z in pk["decisions"]], axis=0)
                soc = np.sum([z.e[:H] for z in pk["decisions"]], axis=0)
                profiles = {
                    "hour": np.arange(H),
                    "baseline_import": pk["baseline_totals"],
                    "dcso_import": pk["dcso_totals"],
                    "bess_power": bess,
                    "sl_power": sl,
                    "soc": soc,
                }
        if progress:
            progress(t + 1, cfg.trials)
    return ExperimentResult(config=cfg, method_results=method_results, peak_runs=peak_runs,
                            residual_trace=residual_trace, profiles=profiles)


def run_sensitivity(cfg: ExperimentConfig, sweep: str, values, seeds=(0, 1, 2), trials_per_seed=None):
    """Distribution of the consensus-method total cost per sweep point.

    Sample-size sweeps reuse one community draw per (seed, trial), so
    every point sees the same validation set and test day and differs
    only in how much training data it may use.
    """
    trials_per_seed = trials_per_seed or max(4, cfg.trials // 10)
    values = [int(v) for v in values]
    costs: dict[int, list[float]] = {v: [] for v in values}
    if sweep == "samples":
        pool = max(values)
        test_days = 3
        for s in seeds:
            sub = ExperimentConfig(**{**asdict(cfg), "seed": cfg.seed + 7_654_321 * (s + 1)})
            for t in range(trials_per_seed):
                for v in values:
                    data = make_trial_data(sub, t, n_train=v, pool=pool, test_days=test_days)
                    cknn_p, _ = train_policies(sub, data)
                    topo = data.topology
                    day_totals = np.zeros(test_days)
                    for i in range(topo.n):
                        params = prosumer_params(sub, i)
                        for dday in range(test_days):
                            nb_x = [data.test[m].samples[dday].x for m in topo.neighbors(i)]
                            z = bilevel.prescribe(data.test[i].samples[dday].x, nb_x, cknn_p[i], data.train[i], params)
                            day_totals[dday] += expost_cost(params, z, data.test[i].samples[dday].y)[0]
                    costs[v].append(float(day_totals.mean()))
    else:
        for v in values:
            for s in seeds:
                sub = ExperimentConfig(**{**asdict(cfg),
                                          "seed": cfg.seed + 7_654_321 * (s + 1),
                                          "trials": trials_per_seed,
                                          "peak_trials": 0,
                                          "n_prosumers": int(v)})
                res = run_experiment(sub, methods=("WSAA_CKNN",))
                costs[v].extend(res.method_results["WSAA_CKNN"].trial_costs)
    rows = []
    for v in values:
        arr = np.array(costs[v])
        rows.append({
            "point": int(v),
            "median": float(np.median(arr)),
            "q1": float(np.quantile(arr, 0.25)),
            "q3": float(np.quantile(arr, 0.75)),
            "n": int(arr.size),
        })
    return rows


def sensitivity_csv(sweep: str, rows) -> str:
    lines = [f"{sweep},median_cost,q1,q3,n"]
    for r in rows:
        lines.append(f"{r['point']},{repr(r['median'])},{repr(r['q1'])},{repr(r['q3'])},{r['n']}")
    return "\n".join(lines) + "\n"


def profiles_csv(profiles: dict) -> str:
    keys = ["hour", "baseline_import", "dcso_import", "bess_power", "sl_power", "soc"]
    lines = [",".join(keys)]
    H = len(profiles["hour"])
    for h in range(H):
        lines.append(",".join(repr(float(profiles[k][h])) for k in keys))
    return "\n".join(lines) + "\n"


def peaks_csv(peak_runs) -> str:
    lines = ["trial,baseline_peak,dcso_peak,reduction"]
    for t, p in enumerate(peak_runs):
        lines.append(f"{t},{repr(p['baseline_peak'])},{repr(p['dcso_peak'])},{repr(p['reduction'])}")
    return "\n".join(lines) + "\n"
