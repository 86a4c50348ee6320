"""``relu-rank-lab`` command line.

Exit codes: 0 success, 1 a checked property failed, 2 usage or config error,
3 numerical divergence. Tables go to stdout; files are written only where an
``--out`` (or ``--report``) path is given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .constructions import deepen_classification, deepen_square, rank1_interpolator
from .diagnostics import construction_sq_norm, rank_report, thm4_bound, thm5_bound
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment
from .flow import FlowConfig, init_spherical, run_flow
from .gradients import LossKind, loss
from .linalg import frobenius_norm, numerical_rank, singular_values
from .network import Dataset, Params, forward_batch

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
JOBS_ENV = "RELU_RANK_LAB_JOBS"


class UsageError(Exception):
    pass


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"cannot parse vector {text!r}; expected comma-separated numbers") from None


def _matrix(text: str, size: int) -> np.ndarray:
    if text.strip().upper() == "I":
        return np.eye(size)
    rows = [_vector(r) for r in text.split(";")]
    if len({len(r) for r in rows}) != 1:
        raise UsageError("matrix rows have different lengths")
    return np.array(rows)


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{path} is not valid JSON: {e}") from None


def _write_json(path: str, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _dataset(name: str) -> Dataset:
    if name in ("section31", "sweep"):
        return ExperimentConfig(experiment="histogram", dataset=name).load_dataset()
    return Dataset.from_json(_read_json(name))


def _default_jobs() -> int | None:
    raw = os.environ.get(JOBS_ENV)
    if raw is None:
        return None
    try:
        jobs = int(raw)
    except ValueError:
        raise UsageError(f"{JOBS_ENV} must be an integer, got {raw!r}") from None
    if jobs < 1:
        raise UsageError(f"{JOBS_ENV} must be >= 1")
    return jobs


def cmd_simulate(args) -> int:
    flow_doc = _read_json(args.config) if args.config else {}
    cfg = FlowConfig.from_json(flow_doc)
    overrides = {k: v for k, v in {
        "step": args.step_size, "max_steps": args.steps, "integrator": args.integrator,
        "seed": args.seed, "loss_tol": args.loss_tol, "record_every": args.record_every,
    }.items() if v is not None}
    if args.full_budget:
        overrides["full_budget"] = True
    cfg = replace(cfg, **overrides)
    d = _dataset(args.dataset)
    kind = LossKind(args.loss)
    if args.init:
        p0 = Params.from_json(_read_json(args.init))
    else:
        d_out = 1 if d.is_classification else d.y.shape[0]
        p0 = init_spherical((d.d_in,) + (args.width,) * (args.depth - 1) + (d_out,), args.init_radius, cfg.seed)
    res = run_flow(p0, d, kind, cfg)
    if args.out:
        _write_json(args.out, res.to_json())
    print(f"reason={res.reason.value} steps={res.steps_taken} final_loss={res.final_loss:.6g} "
          f"converged={res.converged}")
    if cfg.integrator.value == "rk4" or args.verbose:
        print("balance_drift=" + ",".join(f"{v:.3g}" for v in res.balance_drift)
              + " neuron_balance_drift=" + ",".join(f"{v:.3g}" for v in res.neuron_balance_drift))
    if res.diverged:
        print("error: integration diverged", file=sys.stderr)
        return EXIT_DIVERGED
    try:
        print(rank_report(res.params).table())
    except ValueError as e:
        print(f"(no rank report: {e})")
    return EXIT_OK


def _construct_rank1(args) -> tuple[Params, dict, bool]:
    x1, x2 = _vector(args.x1), _vector(args.x2)
    if x1.size != 2 or x2.size != 2:
        raise UsageError("--x1 and --x2 must be 2-D")
    y = _matrix(args.Y, 2)
    if y.shape[1] != 2:
        raise UsageError("--Y needs two columns, one target per input")
    d = Dataset(np.stack([x1, x2], axis=1), y=y)
    p = rank1_interpolator(d)
    value = loss(p, d)
    s = singular_values(p.layers[0])
    report = {"loss": value, "w_rank": numerical_rank(p.layers[0]), "w_singular_values": [float(v) for v in s],
              "layer_frobenius": [frobenius_norm(w) for w in p.layers]}
    return p, report, bool(value <= 1e-10 and report["w_rank"] == 1)


def _construct_deepen(args, square: bool) -> tuple[Params, dict, bool]:
    src = Params.from_json(_read_json(args.inp))
    data = _dataset(args.data) if args.data else None
    B = args.B if args.B is not None else max(frobenius_norm(w) for w in src.layers)
    k, kp = src.depth, args.kprime
    if kp <= k:
        raise UsageError(f"--kprime must exceed the source depth {k}")
    net = deepen_square(src, kp, B, data) if square else deepen_classification(src, kp, B)
    mode = "square" if square else "margin"
    bound = (thm4_bound if square else thm5_bound)(B, k, kp)
    rep = rank_report(net)
    sq_bound = construction_sq_norm(mode, B, k, kp)
    report = {"B": B, "k": k, "k_prime": kp, "sq_norm": net.sq_norm(), "sq_norm_bound": sq_bound,
              "mean_sigma_over_f": rep.mean_sigma_over_f, "harmonic_f_over_sigma": rep.harmonic_f_over_sigma,
              "bound_avg_lower": bound[0], "bound_harm_upper": bound[1]}
    ok = net.sq_norm() <= sq_bound * (1 + 1e-9)
    if data is not None:
        err = float(np.max(np.abs(forward_batch(net, data.x) - forward_batch(src, data.x))))
        report["max_output_change"] = err
        ok = ok and err <= 1e-9 * max(1.0, float(np.max(np.abs(forward_batch(src, data.x)))))
    return net, report, bool(ok)


def cmd_construct(args) -> int:
    if args.kind == "rank1":
        net, report, ok = _construct_rank1(args)
    else:
        if not args.inp or args.kprime is None:
            raise UsageError(f"construct {args.kind} needs --in and --kprime")
        net, report, ok = _construct_deepen(args, square=args.kind == "deepen-square")
    report["verified"] = ok
    if args.out:
        _write_json(args.out, net.to_json())
    if args.report:
        _write_json(args.report, report)
    for key, value in report.items():
        print(f"{key:>22}: {value}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_experiment(args) -> int:
    if args.config:
        doc = _read_json(args.config)
        doc.setdefault("experiment", args.name)
        if doc["experiment"] != args.name:
            raise UsageError(f"config is for experiment {doc['experiment']!r}, not {args.name!r}")
        cfg = ExperimentConfig.from_json(doc)
    else:
        cfg = ExperimentConfig.preset(args.name)
    if args.paper_scale:
        cfg = cfg.paper_scale()
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    if jobs is not None:
        changes["jobs"] = jobs
    if args.out:
        changes["out_dir"] = args.out
    cfg = replace(cfg, **changes)
    outcome = run_experiment(cfg)
    s = outcome.summary
    for key in sorted(s):
        if key != "rows":
            print(f"{key:>22}: {s[key]}")
    if "rows" in s:
        for row in s["rows"]:
            print("  " + " ".join(f"{k}={row[k]}" for k in ("source", "depth", "l2", "mean_sigma_over_f",
                                                             "bound_avg_lower", "diverged")))
    if not outcome.passed:
        print(f"FAIL: trials {outcome.failing}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relu-rank-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="integrate gradient flow from a random or given init")
    sim.add_argument("--config", help="FlowConfig JSON file")
    sim.add_argument("--dataset", default="section31", help="'section31', 'sweep' or a dataset JSON file")
    sim.add_argument("--init", help="initial Params JSON (default: spherical init)")
    sim.add_argument("--loss", default="square", choices=[k.value for k in LossKind])
    sim.add_argument("--seed", type=int)
    sim.add_argument("--steps", type=int)
    sim.add_argument("--step-size", type=float)
    sim.add_argument("--integrator", choices=["euler", "rk4"])
    sim.add_argument("--loss-tol", type=float)
    sim.add_argument("--record-every", type=int)
    sim.add_argument("--full-budget", action="store_true", help="never stop early on the tolerances")
    sim.add_argument("--init-radius", type=float, default=1e-4)
    sim.add_argument("--width", type=int, default=2)
    sim.add_argument("--depth", type=int, default=2)
    sim.add_argument("--out", help="write the FlowResult JSON here")
    sim.add_argument("--verbose", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    con = sub.add_parser("construct", help="build and verify an explicit network")
    con.add_argument("kind", choices=["rank1", "deepen-square", "deepen-exp"])
    con.add_argument("--x1", default="1,0")
    con.add_argument("--x2", default="0,1")
    con.add_argument("--Y", default="I", help="'I' or rows like '1,0;0,1' (columns are targets)")
    con.add_argument("--in", dest="inp", help="source Params JSON")
    con.add_argument("--kprime", type=int)
    con.add_argument("--B", type=float, help="layer norm bound (default: largest source layer norm)")
    con.add_argument("--data", help="dataset to check output preservation on")
    con.add_argument("--out", help="write the built Params JSON here")
    con.add_argument("--report", help="write the verification report JSON here")
    con.set_defaults(func=cmd_construct)

    exp = sub.add_parser("experiment", help="run a Monte Carlo experiment")
    exp.add_argument("name", choices=EXPERIMENTS)
    exp.add_argument("--config", help="ExperimentConfig JSON file")
    exp.add_argument("--paper-scale", action="store_true")
    exp.add_argument("--seed", type=int, help="master seed")
    exp.add_argument("--trials", type=int)
    exp.add_argument("--jobs", type=int, help=f"worker processes (default: ${JOBS_ENV} or the config)")
    exp.add_argument("--out", help="output directory")
    exp.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
