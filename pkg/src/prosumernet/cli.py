"""Command-line experiment driver.

Verbs: ``generate`` (emit a synthetic community dataset as CSV files),
``run`` (full seeded pipeline: generate, train, prescribe, coordinate,
evaluate), ``sensitivity`` (sweep sample counts or community sizes) and
``export-lp`` (write a representative two-stage problem as LP text for
external-solver cross-checks).  Configuration is one JSON file of
``ExperimentConfig`` keys; flags override file values.  Exit codes:
0 ok, 2 usage, 1 runtime failure (partial outputs are kept next to a
FAILED marker).
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluate
from .admm import residual_trace_csv
from .experiments import (
    ExperimentConfig,
    make_trial_data,
    peaks_csv,
    profiles_csv,
    prosumer_params,
    run_experiment,
    run_sensitivity,
    sensitivity_csv,
    topology_for,
)
from .lp_format import export_lp
from .model import build_constraints, build_wsaa_objective
from .qp import QpProblem
from .scenarios import generate_community, write_csv


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        try:
            cfg = ExperimentConfig.from_json(Path(args.config).read_text())
        except (KeyError, TypeError) as exc:
            raise UsageError(f"bad config: {exc}") from exc
    else:
        cfg = ExperimentConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        over["trials"] = args.trials
    if getattr(args, "prosumers", None) is not None:
        over["n_prosumers"] = args.prosumers
    if getattr(args, "samples", None) is not None:
        over["train_samples"] = args.samples
    if over:
        d = json.loads(cfg.to_json())
        d.update(over)
        cfg = ExperimentConfig.from_json(json.dumps(d))
    return cfg


class UsageError(ValueError):
    pass


def _manifest(cfg: ExperimentConfig, extra=None) -> str:
    doc = {
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "config": json.loads(cfg.to_json()),
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    doc.update(extra or {})
    return json.dumps(doc, indent=2, sort_keys=True)


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    topo = topology_for(cfg)
    gen = cfg.generator_config(cfg.train_samples)
    dss = generate_community(cfg.seed, gen, topo.neighbor_lists())
    for i, ds in enumerate(dss):
        write_csv(ds, out / f"prosumer{i}_covariates.csv", out / f"prosumer{i}_outcomes.csv")
    (out / "manifest.json").write_text(_manifest(cfg, {"files": 2 * len(dss)}))
    print(f"wrote {2 * len(dss)} CSV files to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    methods = tuple(args.method.split(",")) if args.method else evaluate.METHODS
    for m in methods:
        if m not in evaluate.METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {evaluate.METHODS}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = run_experiment(cfg, methods=methods,
                             progress=(lambda t, n: print(f"trial {t}/{n}", flush=True)) if args.verbose else None)
        (out / "costs.csv").write_text(evaluate.results_csv(res.method_results))
        if res.peak_runs:
            (out / "peaks.csv").write_text(peaks_csv(res.peak_runs))
            (out / "residuals.csv").write_text(residual_trace_csv(res.residual_trace))
            (out / "profiles.csv").write_text(profiles_csv(res.profiles))
        (out / "summary.txt").write_text(res.summary_text())
        (out / "manifest.json").write_text(_manifest(cfg, {"methods": list(methods)}))
    except Exception as exc:
        (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    print(res.summary_text())
    return 0


def cmd_sensitivity(args) -> int:
    cfg = _load_config(args)
    values = [int(v) for v in args.values.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        rows = run_sensitivity(cfg, args.sweep, values,
                               trials_per_seed=args.trials_per_seed)
        (out / "sensitivity.csv").write_text(sensitivity_csv(args.sweep, rows))
        (out / "manifest.json").write_text(_manifest(cfg, {"sweep": args.sweep, "values": values}))
    except Exception as exc:
        (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    for r in rows:
        print(r)
    return 0


def cmd_export_lp(args) -> int:
    cfg = _load_config(args)
    data = make_trial_data(cfg, 0)
    i = args.prosumer
    if not (0 <= i < cfg.n_prosumers):
        raise UsageError(f"prosumer index {i} out of range")
    params = prosumer_params(cfg, i)
    outs = data.train[i].outcomes()
    S = len(outs)
    sys_ = build_constraints(params, S)
    qdiag, c = build_wsaa_objective(params, outs, np.full(S, 1.0 / S))
    prob = QpProblem(n_vars=sys_.layout.n_vars, Q=np.diag(qdiag), c=c,
                     A_eq=sys_.A_eq, b_eq=sys_.b_eq, lb=sys_.lb, ub=sys_.ub)
    text = export_lp(prob, name=f"prosumer{i} uniform-weight two-stage problem")
    Path(args.out).write_text(text)
    print(f"wrote {args.out} ({prob.n_vars} variables, {prob.n_eq} equality rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prosumernet",
                                description="Contextual stochastic optimization experiments for prosumer networks")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, out_default=None):
        sp.add_argument("--config", help="JSON config file (ExperimentConfig keys)")
        sp.add_argument("--seed", type=int, default=None)
        if out_default is not None:
            sp.add_argument("--out", default=out_default)

    g = sub.add_parser("generate", help="write synthetic community CSVs")
    common(g, out_default="dataset")
    g.add_argument("--samples", type=int, default=None)
    g.add_argument("--prosumers", type=int, default=None)
    g.set_defaults(fn=cmd_generate)

    r = sub.add_parser("run", help="full experiment pipeline")
    common(r, out_default="results")
    r.add_argument("--trials", type=int, default=None)
    r.add_argument("--prosumers", type=int, default=None)
    r.add_argument("--samples", type=int, default=None)
    r.add_argument("--method", default=None, help="comma list of methods to run")
    r.add_argument("--verbose", action="store_true")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sensitivity", help="sweep sample counts or community size")
    common(s, out_default="sensitivity")
    s.add_argument("--sweep", choices=("samples", "prosumers"), default="samples")
    s.add_argument("--values", default="20,50,100")
    s.add_argument("--trials-per-seed", type=int, default=None)
    s.set_defaults(fn=cmd_sensitivity)

    e = sub.add_parser("export-lp", help="write one two-stage problem as LP text")
    common(e, out_default="problem.lp")
    e.add_argument("--prosumer", type=int, default=0)
    e.set_defaults(fn=cmd_export_lp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"error: missing or unknown config key {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 1 with the cause named
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
