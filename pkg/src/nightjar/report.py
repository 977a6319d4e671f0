"""Metric aggregation and the run / compare / sweep drivers behind the CLI."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, PolicySpec
from .engine import STEP_CSV_HEADER, OverloadError, StepOutcome, run, step_csv_row
from .workload import Request

log = logging.getLogger(__name__)

REQUEST_CSV_HEADER = ["id", "arrival_time", "prompt_len", "output_budget", "generated",
                      "admit_time", "first_token_time", "finish_time"]
COMPARISON_CSV_HEADER = ["policy", "throughput_tps", "mean_e2e_s", "p50_e2e_s", "p95_e2e_s",
                         "throughput_delta_pct", "mean_e2e_delta_pct", "status"]
SWEEP_CSV_HEADER = ["qps", "policy", "seed", "throughput_tps", "mean_e2e_s"]


@dataclass
class SummaryMetrics:
    throughput: float
    mean_e2e_latency: float
    p50_latency: float
    p95_latency: float
    cumulative_pseudo_regret: float
    steps: int
    completed_requests: int
    gamma_histogram: list[int]
    status: str = "ok"

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(outcomes: Sequence[StepOutcome], completed: Sequence[Request], warmup_steps: int,
              gamma_max: int, status: str = "ok") -> SummaryMetrics:
    """Aggregate post-warmup metrics.

    Throughput is credited tokens over busy time (sum of step latencies), so
    idle gaps between arrivals do not dilute it. Latency statistics cover
    requests arriving at or after the first post-warmup step.
    """
    post = outcomes[warmup_steps:]
    boundary = post[0].sim_time if post else float("inf")
    if warmup_steps == 0:
        boundary = float("-inf")
    tokens = sum(o.accepted_total + o.bonus_total for o in post)
    busy = sum(o.step_latency for o in post)
    regret = sum(o.oracle_expected_goodput - o.chosen_expected_goodput for o in post)
    hist = [0] * (gamma_max + 1)
    for o in post:
        hist[o.gamma] += 1
    lat = np.array([r.finish_time - r.arrival_time for r in completed if r.arrival_time >= boundary])
    if lat.size:
        mean, p50, p95 = float(lat.mean()), float(np.percentile(lat, 50)), float(np.percentile(lat, 95))
    else:
        mean = p50 = p95 = float("nan")
    return SummaryMetrics(
        throughput=tokens / busy if busy > 0 else 0.0,
        mean_e2e_latency=mean,
        p50_latency=p50,
        p95_latency=p95,
        cumulative_pseudo_regret=regret,
        steps=len(post),
        completed_requests=len(completed),
        gamma_histogram=hist,
        status=status,
    )


@dataclass
class ReplicaResult:
    policy: str
    seed: int
    metrics: SummaryMetrics
    outcomes: list[StepOutcome] = field(repr=False)
    completed: list[Request] = field(repr=False)


def run_replica(cfg: ExperimentConfig, spec: PolicySpec, seed: int, base: Path | None = None,
                rate: float | None = None) -> ReplicaResult:
    params = cfg.cost_params()
    table = cfg.prefill_table(base)
    workload = cfg.build_workload(seed, base, rate)
    policy = cfg.build_policy(spec, seed, base)
    status = "ok"
    try:
        res = run(cfg.sim_config(seed), policy, workload, params, table)
        outcomes, completed = res.outcomes, res.completed
    except OverloadError as exc:
        log.warning("%s seed %d: %s", spec.name, seed, exc)
        outcomes, completed, status = exc.outcomes, exc.completed, "overload"
    metrics = summarize(outcomes, completed, cfg.sim.warmup_steps, cfg.sim.gamma_max, status)
    return ReplicaResult(spec.name, seed, metrics, outcomes, completed)


# -- file emission ---------------------------------------------------------

def provenance(cfg: ExperimentConfig, **extra) -> dict:
    return {"config": cfg.model_dump(mode="json"), **extra}


def _comment(prov: dict) -> str:
    return "# " + json.dumps(prov, sort_keys=True, separators=(",", ":")) + "\n"


def write_steps_csv(path: Path, outcomes: Sequence[StepOutcome], prov: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_comment(prov))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_CSV_HEADER)
        w.writerows(step_csv_row(o) for o in outcomes)


def write_requests_csv(path: Path, requests: Sequence[Request], prov: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_comment(prov))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUEST_CSV_HEADER)
        for r in requests:
            w.writerow([r.id, r.arrival_time, r.prompt_len, r.output_budget, r.generated,
                        r.admit_time, r.first_token_time, r.finish_time])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_csv_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


# -- drivers ---------------------------------------------------------------

def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else float("nan")


def cmd_run(cfg: ExperimentConfig, out: Path, seeds: Sequence[int], base: Path | None = None) -> dict:
    specs = cfg.all_policies()
    if len(specs) != 1:
        raise ValueError("run needs exactly one policy (use compare for several)")
    spec = specs[0]
    out.mkdir(parents=True, exist_ok=True)
    replicas = []
    for seed in seeds:
        rr = run_replica(cfg, spec, seed, base)
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        prov = provenance(cfg, seed=seed, policy=spec.name)
        write_steps_csv(seed_dir / "steps.csv", rr.outcomes, prov)
        write_requests_csv(seed_dir / "requests.csv", rr.completed, prov)
        replicas.append({"seed": seed, **rr.metrics.to_dict()})
    summary = {
        "provenance": provenance(cfg, seeds=list(seeds), policy=spec.name),
        "policy": spec.name,
        "replicas": replicas,
        "mean": {
            "throughput": _mean([r["throughput"] for r in replicas]),
            "mean_e2e_latency": _mean([r["mean_e2e_latency"] for r in replicas]),
        },
        "status": "overload" if any(r["status"] != "ok" for r in replicas) else "ok",
    }
    write_json(out / "summary.json", summary)
    return summary


def compare_rows(cfg: ExperimentConfig, seeds: Sequence[int], base: Path | None = None,
                 rate: float | None = None) -> tuple[list[dict], list[ReplicaResult]]:
    specs = cfg.all_policies()
    if len(specs) < 2:
        raise ValueError("compare needs at least two policies")
    results: list[ReplicaResult] = []
    rows = []
    for spec in specs:
        reps = [run_replica(cfg, spec, s, base, rate) for s in seeds]
        results.extend(reps)
        rows.append({
            "policy": spec.name,
            "throughput_tps": _mean([r.metrics.throughput for r in reps]),
            "mean_e2e_s": _mean([r.metrics.mean_e2e_latency for r in reps]),
            "p50_e2e_s": _mean([r.metrics.p50_latency for r in reps]),
            "p95_e2e_s": _mean([r.metrics.p95_latency for r in reps]),
            "status": "overload" if any(r.metrics.status != "ok" for r in reps) else "ok",
        })
    ref = next((r for r in rows if r["policy"] == "no_spec"), rows[0])
    for r in rows:
        r["throughput_delta_pct"] = 100.0 * (r["throughput_tps"] / ref["throughput_tps"] - 1.0)
        r["mean_e2e_delta_pct"] = 100.0 * (r["mean_e2e_s"] / ref["mean_e2e_s"] - 1.0)
    return rows, results


def _write_table(path: Path, header: list[str], rows: list[dict], prov: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_comment(prov))
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def cmd_compare(cfg: ExperimentConfig, out: Path, seeds: Sequence[int], base: Path | None = None) -> list[dict]:
    rows, _ = compare_rows(cfg, seeds, base)
    out.mkdir(parents=True, exist_ok=True)
    _write_table(out / "comparison.csv", COMPARISON_CSV_HEADER, rows, provenance(cfg, seeds=list(seeds)))
    return rows


def cmd_sweep(cfg: ExperimentConfig, out: Path, seeds: Sequence[int], qps: Sequence[float],
              base: Path | None = None) -> tuple[list[dict], list[dict]]:
    if not qps:
        raise ValueError("sweep axis is empty")
    if cfg.workload.kind != "poisson":
        raise ValueError("sweep varies the Poisson rate; workload.kind must be 'poisson'")
    out.mkdir(parents=True, exist_ok=True)
    tidy, per_rate = [], []
    for q in qps:
        rows, results = compare_rows(cfg, seeds, base, rate=q)
        per_rate.extend({"qps": q, **r} for r in rows)
        tidy.extend(
            {"qps": q, "policy": r.policy, "seed": r.seed, "throughput_tps": r.metrics.throughput,
             "mean_e2e_s": r.metrics.mean_e2e_latency}
            for r in results
        )
    prov = provenance(cfg, seeds=list(seeds), qps=list(qps))
    _write_table(out / "sweep.csv", SWEEP_CSV_HEADER, tidy, prov)
    _write_table(out / "comparison.csv", ["qps"] + COMPARISON_CSV_HEADER, per_rate, prov)
    return tidy, per_rate


def format_table(rows: list[dict], columns: list[str]) -> str:
    def fmt(v):
        return f"{v:.2f}" if isinstance(v, float) else str(v)

    cells = [[fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
