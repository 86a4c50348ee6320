"""Monte Carlo harnesses over many gradient-flow runs.

Every experiment is driven by one ``ExperimentConfig`` (JSON, versioned).
Trial ``i`` draws its randomness from its own generator seeded by
``SeedSequence(master_seed, spawn_key=(i,))``, so results do not depend on how
trials are scheduled across worker processes. Records are reduced in trial
order and written with sorted keys; wall-clock times go to a separate file so
``trials.jsonl`` is byte-for-byte reproducible.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .constructions import deepen_square, solve_output_layer
from .diagnostics import rank_report, thm4_bound
from .flow import FlowConfig, FlowResult, init_spherical, random_sphere, run_flow
from .geometry import (
    RegionLabel,
    check_dataset,
    check_event_E,
    classify,
    in_interior,
    region_labels,
    thm2_init_bound,
    thm3_intervals,
)
from .gradients import LossKind, loss
from .linalg import frobenius_norm, numerical_rank, stable_rank
from .network import Dataset, Params

SCHEMA_VERSION = 1
EXPERIMENTS = ("histogram", "thm2", "thm3", "depth-sweep")


def dataset_section31() -> Dataset:
    """Two unit inputs ``(+-1, 0.99)/norm`` at an angle just above pi/2, identity targets."""
    x = np.array([[1.0, -1.0], [0.99, 0.99]])
    x = x / np.linalg.norm(x, axis=0)
    return Dataset(x, y=np.eye(2))


def dataset_sweep() -> Dataset:
    """Three unit inputs with scalar targets >= 1, the default depth-sweep data."""
    x = np.array([[1.0, 0.6, -0.8], [0.0, 0.8, 0.6]])
    return Dataset(x, y=np.array([[1.0, 2.0, 1.5]]))


def trial_seed(master_seed: int, trial_id: int) -> int:
    seq = np.random.SeedSequence(master_seed, spawn_key=(trial_id,))
    return int(seq.generate_state(1, np.uint64)[0])


def binomial_se(freq: float, n: int) -> float:
    return math.sqrt(freq * (1.0 - freq) / n) if n > 0 else 0.0


def _flow_defaults(experiment: str) -> dict:
    # full budget, convergence judged at the end
    base = dict(step=1e-3, max_steps=300_000, loss_tol=1e-4, full_budget=True, record_every=10_000)
    if experiment == "thm3":
        base["loss_tol"] = 1e-6
    if experiment == "depth-sweep":
        base.update(step=1e-2, max_steps=50_000)
    return base


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    dataset: Any = "section31"
    trials: int = 64
    master_seed: int = 0
    jobs: int = 1
    init_radius: float = 1e-4
    width: int = 2
    flow: FlowConfig = field(default_factory=FlowConfig)
    delta: float = 0.05
    rank_tol: float = 1e-8
    histogram_bins: int = 20
    thm3_mode: str = "spherical"
    event_slack: float = 1e-3
    depths: tuple[int, ...] = (3, 5, 8)
    l2_values: tuple[float, ...] = (1e-4, 0.0)
    sweep_width: int = 4
    sweep_init_radius: float = 1.5
    out_dir: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        if self.trials < 0 or self.jobs < 1 or self.width < 1:
            raise ValueError("trials must be >= 0, jobs and width >= 1")
        if self.init_radius < 0 or self.sweep_init_radius <= 0:
            raise ValueError("init radii must be non-negative")
        if self.thm3_mode not in ("spherical", "stratified"):
            raise ValueError("thm3_mode must be 'spherical' or 'stratified'")
        if any(k < 3 for k in self.depths):
            raise ValueError("sweep depths must be >= 3")
        object.__setattr__(self, "depths", tuple(int(k) for k in self.depths))
        object.__setattr__(self, "l2_values", tuple(float(v) for v in self.l2_values))
        if isinstance(self.flow, dict):
            object.__setattr__(self, "flow", FlowConfig.from_json(self.flow))
        self.load_dataset()

    @classmethod
    def preset(cls, experiment: str, **overrides) -> "ExperimentConfig":
        """Desk-scale defaults for ``experiment``."""
        flow = FlowConfig(**_flow_defaults(experiment))
        extra: dict = {}
        if experiment == "thm3":
            extra = {"trials": 100, "thm3_mode": "stratified"}
        if experiment == "depth-sweep":
            extra = {"dataset": "sweep", "trials": 2}
        return cls(experiment=experiment, flow=flow, **{**extra, **overrides})

    def paper_scale(self) -> "ExperimentConfig":
        """288 trials of 3e6 gradient steps of size 1e-4."""
        return replace(self, trials=288, flow=replace(self.flow, step=1e-4, max_steps=3_000_000, record_every=100_000))

    def load_dataset(self) -> Dataset:
        if self.dataset == "section31":
            return dataset_section31()
        if self.dataset == "sweep":
            return dataset_sweep()
        if isinstance(self.dataset, dict):
            return Dataset.from_json(self.dataset)
        if isinstance(self.dataset, str):
            path = Path(self.dataset)
            if not path.is_file():
                raise ValueError(f"dataset file not found: {self.dataset}")
            return Dataset.from_json(json.loads(path.read_text()))
        raise ValueError("dataset must be 'section31', 'sweep', a file path or an inline document")

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["flow"] = self.flow.to_json()
        doc["depths"] = list(self.depths)
        doc["l2_values"] = list(self.l2_values)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        if "experiment" not in doc:
            raise ValueError("config needs an 'experiment' field")
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        base = _flow_defaults(doc["experiment"])
        doc["flow"] = FlowConfig.from_json({**base, **doc.get("flow", {})})
        for key in ("depths", "l2_values"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ValueError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ValueError(f"config is not valid JSON: {e}") from None
        return cls.from_json(doc)


@dataclass
class TrialRecord:
    trial_id: int
    seed: int
    init: dict
    converged: bool
    final_loss: float
    steps: int
    reason: str
    rank_report: Optional[dict]
    w1_numerical_rank: int
    regions_initial: Optional[list[str]] = None
    regions_final: Optional[list[str]] = None
    event_E: Optional[bool] = None
    event_report: Optional[dict] = None
    extra: dict = field(default_factory=dict)
    final_params: Optional[dict] = None
    wall_time: float = 0.0

    def to_json(self) -> dict:
        """Everything except wall time, which would break reproducibility."""
        doc = asdict(self)
        del doc["wall_time"]
        return doc


@dataclass
class ExperimentOutcome:
    records: list[TrialRecord]
    summary: dict
    passed: bool
    failing: list[int] = field(default_factory=list)


def _regions(p: Params, d: Dataset) -> Optional[list[str]]:
    if p.depth == 2 and p.layers[0].shape == (2, 2) and d.n == 2 and d.d_in == 2:
        return [r.value for r in region_labels(p.layers[0], d.x[:, 0], d.x[:, 1])]
    return None


def _init_summary(p: Params, d: Dataset) -> dict:
    doc = {"layer_frobenius": [frobenius_norm(w) for w in p.layers]}
    if p.depth == 2:
        doc["row_norms"] = [float(v) for v in np.linalg.norm(p.layers[0], axis=1)]
        doc["col_norms"] = [float(v) for v in np.linalg.norm(p.layers[1], axis=0)]
    return doc


def _safe_report(p: Params) -> Optional[dict]:
    try:
        return rank_report(p).to_json()
    except ValueError:
        return None


def _record(cfg: ExperimentConfig, d: Dataset, trial_id: int, seed: int, p0: Params, res: FlowResult,
            kind: LossKind = LossKind.SQUARE, **extra) -> TrialRecord:
    data_loss = loss(res.params, d, kind)
    return TrialRecord(
        trial_id=trial_id,
        seed=seed,
        init=_init_summary(p0, d),
        converged=bool(not res.diverged and data_loss < cfg.flow.loss_tol),
        final_loss=float(data_loss),
        steps=res.steps_taken,
        reason=res.reason.value,
        rank_report=_safe_report(res.params),
        w1_numerical_rank=numerical_rank(res.params.layers[0], cfg.rank_tol),
        regions_initial=_regions(p0, d),
        regions_final=_regions(res.params, d),
        final_params=res.params.to_json(),
        **extra,
    )


def _sector_sample(rng: np.random.Generator, label: RegionLabel, x1, x2, radius: float) -> np.ndarray:
    while True:
        w = random_sphere(rng, 2, radius)
        if classify(w, x1, x2) is label and in_interior(w, label, x1, x2):
            return w


def _thm3_init(cfg: ExperimentConfig, d: Dataset, rng: np.random.Generator) -> Params:
    x1, x2 = d.x[:, 0], d.x[:, 1]
    if cfg.thm3_mode == "stratified":
        w = np.stack([_sector_sample(rng, RegionLabel.S1, x1, x2, cfg.init_radius),
                      _sector_sample(rng, RegionLabel.S2, x1, x2, cfg.init_radius)])
    else:
        w = np.stack([random_sphere(rng, 2, cfg.init_radius) for _ in range(2)])
    return Params([w, np.zeros((d.y.shape[0], 2))])


def _sweep_source(d: Dataset, width: int) -> Params:
    """Fixed depth-2 interpolator with non-negative outputs, the base of the construction rows."""
    rng = np.random.default_rng(0)
    while True:
        w = rng.standard_normal((width, d.d_in))
        try:
            return Params([w, solve_output_layer(w, d)])
        except ValueError:
            continue


def _sweep_points(cfg: ExperimentConfig) -> list[tuple[int, float, int]]:
    return [(k, l2, r) for k in cfg.depths for l2 in cfg.l2_values for r in range(cfg.trials)]


def _run_trial(cfg: ExperimentConfig, trial_id: int) -> TrialRecord:
    d = cfg.load_dataset()
    seed = trial_seed(cfg.master_seed, trial_id)
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    if cfg.experiment in ("histogram", "thm2"):
        p0 = init_spherical((d.d_in, cfg.width, d.y.shape[0]), cfg.init_radius, rng)
        res = run_flow(p0, d, LossKind.SQUARE, cfg.flow)
        rec = _record(cfg, d, trial_id, seed, p0, res)
        if cfg.experiment == "histogram":
            # nonzero output-layer init: the interval event is recorded, never asserted
            intervals = thm3_intervals(d.x[:, 0], d.x[:, 1])
            rec.event_E, rec.event_report = check_event_E(replace(res, converged=rec.converged), intervals,
                                                          cfg.event_slack)
    elif cfg.experiment == "thm3":
        p0 = _thm3_init(cfg, d, rng)
        res = run_flow(p0, d, LossKind.SQUARE, cfg.flow)
        intervals = thm3_intervals(d.x[:, 0], d.x[:, 1])
        rec = _record(cfg, d, trial_id, seed, p0, res)
        # event E uses the experiment's convergence verdict
        ok, report = check_event_E(replace(res, converged=rec.converged), intervals, cfg.event_slack)
        rec.event_E, rec.event_report = ok, report
    else:
        depth, l2, rep = _sweep_points(cfg)[trial_id]
        widths = (d.d_in,) + (cfg.sweep_width,) * (depth - 1) + (d.y.shape[0],)
        p0 = init_spherical(widths, cfg.sweep_init_radius, rng)
        res = run_flow(p0, d, LossKind.SQUARE, replace(cfg.flow, l2=l2))
        src = _sweep_source(d, cfg.sweep_width)
        B = max(frobenius_norm(w) for w in src.layers)
        rec = _record(cfg, d, trial_id, seed, p0, res,
                      extra={"depth": depth, "l2": l2, "repeat": rep, "bound": list(thm4_bound(B, 2, depth)),
                             "diverged": res.diverged})
    rec.wall_time = time.perf_counter() - start
    return rec


def _worker(args) -> TrialRecord:
    doc, trial_id = args
    return _run_trial(ExperimentConfig.from_json(doc), trial_id)


def run_trials(cfg: ExperimentConfig, jobs: int | None = None) -> list[TrialRecord]:
    """All trials of ``cfg`` in trial-id order, optionally across worker processes."""
    n = len(_sweep_points(cfg)) if cfg.experiment == "depth-sweep" else cfg.trials
    jobs = jobs or cfg.jobs
    if jobs <= 1 or n <= 1:
        return [_run_trial(cfg, i) for i in range(n)]
    doc = cfg.to_json()
    chunk = max(1, n // (4 * jobs))
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
        return list(pool.map(_worker, [(doc, i) for i in range(n)], chunksize=chunk))


def _histogram_rows(records: list[TrialRecord], bins: int) -> list[dict]:
    edges = np.linspace(1.0, 2.0, bins + 1)
    rows = []
    conv = [r for r in records if r.converged and r.rank_report]
    n_layers = len(conv[0].rank_report["layers"]) if conv else 2
    for layer in range(n_layers):
        vals = np.array([r.rank_report["layers"][layer]["stable_rank"] for r in conv])
        counts, _ = np.histogram(np.clip(vals, 1.0, 2.0), bins=edges)
        rows += [{"layer": layer + 1, "bin_lo": float(edges[b]), "bin_hi": float(edges[b + 1]),
                  "count": int(counts[b])} for b in range(bins)]
    return rows


def _check_negative_result_setup(cfg: ExperimentConfig, d: Dataset) -> float:
    ang = check_dataset(d)
    if cfg.width != 2:
        raise ValueError("the two-example experiments use width 2")
    return ang


def run_histogram_experiment(cfg: ExperimentConfig) -> ExperimentOutcome:
    d = cfg.load_dataset()
    _check_negative_result_setup(cfg, d)
    records = run_trials(cfg)
    bound = thm3_intervals(d.x[:, 0], d.x[:, 1]).prob_lower_bound
    conv = [r for r in records if r.converged]
    n = len(records)
    freq = len(conv) / n if n else 0.0
    se = binomial_se(freq, n)
    srs = [stable_rank(Params.from_json(r.final_params).layers[0]) for r in conv]
    failing = sorted({r.trial_id for r, s in zip(conv, srs) if r.w1_numerical_rank != 2 or not s > 1.0 + cfg.delta})
    fraction_ok = n == 0 or freq >= bound - 3.0 * se
    summary = {
        "experiment": "histogram",
        "trials": n,
        "converged": len(conv),
        "converged_fraction": freq,
        "sigma_hat": se,
        "prob_lower_bound": bound,
        "fraction_threshold": bound - 3.0 * se,
        "fraction_ok": fraction_ok,
        "delta": cfg.delta,
        "min_stable_rank_w1": min(srs) if srs else None,
        "event_E_measured": sum(bool(r.event_E) for r in records),
        "rank_ok": not failing,
        "failing_trials": failing,
    }
    summary["pass"] = bool(fraction_ok and not failing)
    outcome = ExperimentOutcome(records, summary, summary["pass"], failing)
    _write_outputs(cfg, outcome, histogram=_histogram_rows(records, cfg.histogram_bins))
    return outcome


def thm2_precheck(p0: Params, d: Dataset) -> bool:
    """Does ``p0`` meet the small-initialization condition of the rank-2 guarantee?"""
    if p0.depth != 2 or p0.layers[0].shape != (2, 2):
        return False
    bound = thm2_init_bound(d.x[:, 0], d.x[:, 1])
    rows = np.linalg.norm(p0.layers[0], axis=1)
    cols = np.linalg.norm(p0.layers[1], axis=0)
    return bool(np.all(rows < bound) and np.all(cols < 0.5))


def run_thm2_check(cfg: ExperimentConfig) -> ExperimentOutcome:
    """Every converged trial must end with a rank-2 first layer."""
    d = cfg.load_dataset()
    _check_negative_result_setup(cfg, d)
    if not cfg.init_radius < min(thm2_init_bound(d.x[:, 0], d.x[:, 1]), 0.5):
        raise ValueError("init radius violates the small-initialization condition")
    records = run_trials(cfg)
    conv = [r for r in records if r.converged]
    failing = [r.trial_id for r in conv if r.w1_numerical_rank != 2]
    summary = {
        "experiment": "thm2",
        "trials": len(records),
        "converged": len(conv),
        "init_bound": thm2_init_bound(d.x[:, 0], d.x[:, 1]),
        "rank_deficient_converged": failing,
        "failing_trials": failing,
        "pass": not failing,
    }
    outcome = ExperimentOutcome(records, summary, not failing, failing)
    _write_outputs(cfg, outcome, failures=[r for r in records if r.trial_id in failing])
    return outcome


def run_thm3_experiment(cfg: ExperimentConfig) -> ExperimentOutcome:
    """Frequency of the interval event; stratified mode expects it every time."""
    d = cfg.load_dataset()
    _check_negative_result_setup(cfg, d)
    intervals = thm3_intervals(d.x[:, 0], d.x[:, 1], init_norms=[cfg.init_radius])
    records = run_trials(cfg)
    n = len(records)
    hits = sum(bool(r.event_E) for r in records)
    freq = hits / n if n else 0.0
    se = binomial_se(freq, n)
    if cfg.thm3_mode == "stratified":
        failing = [r.trial_id for r in records if not r.event_E]
        passed = not failing
        threshold = 1.0
    else:
        failing = []
        threshold = intervals.prob_lower_bound - 3.0 * se
        passed = n == 0 or freq >= threshold
    summary = {
        "experiment": "thm3",
        "mode": cfg.thm3_mode,
        "trials": n,
        "converged": sum(r.converged for r in records),
        "event_E": hits,
        "frequency": freq,
        "sigma_hat": se,
        "threshold": threshold,
        "intervals": intervals.to_json(),
        "event_slack": cfg.event_slack,
        "failing_trials": failing,
        "pass": bool(passed),
    }
    outcome = ExperimentOutcome(records, summary, bool(passed), failing)
    _write_outputs(cfg, outcome)
    return outcome


SWEEP_FIELDS = ["source", "depth", "l2", "repeat", "converged", "diverged", "final_loss", "norm",
                "mean_sigma_over_f", "harmonic_f_over_sigma", "bound_avg_lower", "bound_harm_upper"]


def run_depth_sweep(cfg: ExperimentConfig) -> ExperimentOutcome:
    """Measurement only: weight-decay-trained nets beside the deepened construction at each depth."""
    d = cfg.load_dataset()
    if d.is_classification or d.y.shape[0] != 1:
        raise ValueError("depth sweep needs scalar regression targets")
    if not np.any((np.linalg.norm(d.x, axis=0) <= 1.0) & (d.y[0] >= 1.0)):
        raise ValueError("depth sweep needs some input with norm <= 1 and target >= 1")
    records = run_trials(cfg)
    src = _sweep_source(d, cfg.sweep_width)
    B = max(frobenius_norm(w) for w in src.layers)
    rows = []
    for k in cfg.depths:
        net = deepen_square(src, k, B, d)
        rep = rank_report(net)
        lo, hi = thm4_bound(B, 2, k)
        rows.append({"source": "construction", "depth": k, "l2": None, "repeat": None, "converged": True,
                     "diverged": False, "final_loss": loss(net, d), "norm": net.norm(),
                     "mean_sigma_over_f": rep.mean_sigma_over_f, "harmonic_f_over_sigma": rep.harmonic_f_over_sigma,
                     "bound_avg_lower": lo, "bound_harm_upper": hi})
    for r in records:
        rep = r.rank_report or {}
        lo, hi = r.extra["bound"]
        rows.append({"source": "trained", "depth": r.extra["depth"], "l2": r.extra["l2"], "repeat": r.extra["repeat"],
                     "converged": r.converged, "diverged": r.extra["diverged"], "final_loss": r.final_loss,
                     "norm": Params.from_json(r.final_params).norm(),
                     "mean_sigma_over_f": rep.get("mean_sigma_over_f"),
                     "harmonic_f_over_sigma": rep.get("harmonic_f_over_sigma"),
                     "bound_avg_lower": lo, "bound_harm_upper": hi})
    summary = {
        "experiment": "depth-sweep",
        "measurement_only": True,
        "source_B": B,
        "diverged": [r.trial_id for r in records if r.extra["diverged"]],
        "rows": rows,
        "pass": True,
    }
    outcome = ExperimentOutcome(records, summary, True)
    _write_outputs(cfg, outcome, sweep=rows)
    return outcome


RUNNERS = {
    "histogram": run_histogram_experiment,
    "thm2": run_thm2_check,
    "thm3": run_thm3_experiment,
    "depth-sweep": run_depth_sweep,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentOutcome:
    return RUNNERS[cfg.experiment](cfg)


def dumps_records(records: list[TrialRecord]) -> str:
    return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in records)


def _write_csv(path: Path, fields: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _write_outputs(cfg: ExperimentConfig, outcome: ExperimentOutcome, histogram=None, sweep=None, failures=()) -> None:
    if cfg.out_dir is None:
        return
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trials.jsonl").write_text(dumps_records(outcome.records))
    (out / "timings.jsonl").write_text(
        "".join(json.dumps({"trial_id": r.trial_id, "wall_time": r.wall_time}) + "\n" for r in outcome.records))
    (out / "summary.json").write_text(json.dumps(outcome.summary, indent=1, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(cfg.to_json(), indent=1, sort_keys=True) + "\n")
    if histogram is not None:
        _write_csv(out / "histogram.csv", ["layer", "bin_lo", "bin_hi", "count"], histogram)
    if sweep is not None:
        _write_csv(out / "depth_sweep.csv", SWEEP_FIELDS, sweep)
    if failures:
        fdir = out / "failures"
        fdir.mkdir(exist_ok=True)
        for r in failures:
            (fdir / f"trial_{r.trial_id}.json").write_text(json.dumps(r.to_json(), indent=1, sort_keys=True))
