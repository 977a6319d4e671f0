"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the terminal summary (see
conftest.py) so they show up without ``-s``.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from nightjar.baselines import DsdLike
from nightjar.cli import main
from nightjar.config import load_config
from nightjar.cost_model import PRESETS, PrefillCostTable, expected_tokens, oracle_gamma, prefill_cost, sample_accepted
from nightjar.engine import run_fixed_batch
from nightjar.policy import ArmStats, BinType, NightjarPolicy, SelectionContext, decision_latency_probe
from nightjar.report import compare_rows

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TABLE = PrefillCostTable.default()
RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _converged_fraction(trace, target):
    tail = slice(int(0.9 * len(trace.gammas)), None)
    picks = trace.gammas[tail][~trace.explored[tail]]
    return float(np.mean(picks == target)) if picks.size else 0.0


# 1 ---------------------------------------------------------------------------

def test_c01_mean_update_exactness():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        rewards = rng.uniform(0, 5000, size=int(rng.integers(1, 10_001)))
        arm = ArmStats()
        for r in rewards.tolist():
            arm.update(r)
        exact = math.fsum(rewards) / len(rewards)
        worst = max(worst, abs(arm.mean_goodput - exact) / abs(exact))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-9 and elapsed < 5, f"max rel err {worst:.2e}, {elapsed:.2f}s")


# 2 ---------------------------------------------------------------------------

def _counter_oracle(plays):
    """Block/bin/round counters as written, with real-valued sqrt."""
    j, H, b, tau = 1, 1, 1, 1
    trace, bin_lengths, current = [], [], 0
    for _ in range(plays):
        tau += 1
        current += 1
        if tau > math.sqrt(H):
            bin_lengths.append((H, current))
            current = 0
            b, tau = b + 1, 1
            if b > math.sqrt(H):
                j, H, b = j + 1, 2 ** j, 1
        trace.append((j, H, b, tau))
    return trace, bin_lengths


def test_c02_hierarchy_schedule_oracle():
    plays = 100_000
    batches = (1, 3, 8, 17, 64)
    t0 = time.perf_counter()
    ref, bin_lengths = _counter_oracle(plays)
    shape_ok = all(n == math.isqrt(H) for H, n in bin_lengths)
    p = NightjarPolicy(5, 64, TABLE, seed=0)
    mismatches = 0
    for i in range(plays):
        for b in batches:
            g = p.select(SelectionContext(b))
            p.observe(b, g, 1.0)
            h = p.per_batch[b]
            state = (h.block_index, h.block_size, h.bin_index, h.round_counter)
            if state != ref[i] or h.block_size != 2 ** (h.block_index - 1):
                mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and shape_ok and elapsed < 10
    report(2, ok, f"{mismatches} mismatches over {plays} plays x {len(batches)} B, "
                  f"bin lengths floor(sqrt H): {shape_ok}, {elapsed:.2f}s")


# 3 ---------------------------------------------------------------------------

def test_c03_exploitation_objective():
    flat = PrefillCostTable.from_rows([(128, 32, 20.0)])
    p = NightjarPolicy(3, 8, flat, seed=0)
    for g, m in enumerate([1000.0, 1500.0, 1800.0, 1700.0]):
        p.per_batch[4].arms[g] = ArmStats(m, 1)
    checks = [
        (p.exploitation_score(4, 2, 1, 0), 1 / 1500),
        (p.exploitation_score(4, 0, 2, 5), 1 / 1800 + 0.02 / 2),
        (p.exploitation_score(4, 0, 0, 5), 1 / 1000),
        (p.exploitation_score(4, 3, 2, 5), 1 / 1800),
    ]
    err = max(abs(a - b) for a, b in checks)
    p.per_batch[4].bin_type = BinType.EXPLOITATION
    p.last_gamma = 2
    pick = p.select(SelectionContext(4))
    q = NightjarPolicy(3, 8, flat, seed=0)
    for g, m in enumerate([900.0, 1800.0, 1800.0, 1800.0]):
        q.per_batch[4].arms[g] = ArmStats(m, 1)
    q.per_batch[4].bin_type = BinType.EXPLOITATION
    q.last_gamma = 3
    tie = q.select(SelectionContext(4))
    report(3, err <= 1e-12 and pick == 2 and tie == 1, f"max abs err {err:.1e}, argmin {pick}, tie -> {tie}")


# 4 ---------------------------------------------------------------------------

def test_c04_prefill_table_fidelity():
    grid = [(128, 32, 17.87), (128, 64, 28.53), (256, 32, 20.65), (256, 64, 22.33), (512, 32, 24.30),
            (512, 64, 102.03)]
    exact = all(prefill_cost(TABLE, L, B) == ms / 1000 for L, B, ms in grid)
    off = [((200, 40), 22.33), ((1, 1), 17.87), ((129, 33), 22.33), ((9999, 9999), 102.03), ((300, 8), 24.30)]
    bucketed = all(prefill_cost(TABLE, L, B) == ms / 1000 for (L, B), ms in off)
    report(4, exact and bucketed, f"grid bit-exact {exact}, off-grid bucketing {bucketed}")


# 5 ---------------------------------------------------------------------------

def test_c05_acceptance_model_consistency():
    rng = np.random.default_rng(5)
    n = 1_000_000
    t0 = time.perf_counter()
    worst = 0.0
    for alpha in (0.2, 0.5, 0.8, 0.95):
        for gamma in range(1, 6):
            credited = sample_accepted(rng, alpha, gamma, size=n) + 1
            z = abs(credited.mean() - expected_tokens(alpha, gamma)) / (credited.std() / math.sqrt(n))
            worst = max(worst, z)
    elapsed = time.perf_counter() - t0
    report(5, worst < 3 and elapsed < 60, f"max |z| {worst:.2f} over 20 cells, {elapsed:.1f}s")


# 6, 7 ------------------------------------------------------------------------

def _convergence(preset, batch, criterion):
    params = PRESETS[preset]
    target = oracle_gamma(params, batch, 5)
    t0 = time.perf_counter()
    fracs = []
    for seed in range(5):
        pol = NightjarPolicy(5, batch, TABLE, seed=seed)
        fracs.append(_converged_fraction(run_fixed_batch(pol, params, TABLE, batch, 50_000, 5, seed=100 + seed),
                                         target))
    elapsed = time.perf_counter() - t0
    ok = min(fracs) >= 0.95 and elapsed < 120
    report(criterion, ok, f"{preset} B={batch} gamma*={target}, tail exploit share "
                          f"{[round(f, 4) for f in fracs]}, {elapsed:.1f}s")
    return target


@pytest.mark.slow
def test_c06_convergence_memory_bound():
    assert _convergence("7b-4090-like", 1, 6) > 0


@pytest.mark.slow
def test_c07_convergence_compute_bound():
    assert _convergence("compute-bound", 8, 7) == 0


# 8 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c08_regret_sublinearity():
    steps = 50_000
    w = steps // 10
    ratios = []
    for preset, batch in (("7b-4090-like", 1),):
        for seed in range(5):
            pol = NightjarPolicy(5, batch, TABLE, seed=seed)
            reg = run_fixed_batch(pol, PRESETS[preset], TABLE, batch, steps, 5, seed=100 + seed).regret
            early = reg[w - 1] / w
            late = (reg[-1] - reg[-w - 1]) / w
            ratios.append(float(late / early))
    report(8, max(ratios) < 0.10, f"late/early regret rate per seed {[round(r, 3) for r in ratios]} (need < 0.10)")


# 9 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c09_crossover_reproduction():
    cfg = load_config(CONFIGS / "sweep.json")
    qps = cfg.sweep.qps
    seeds = list(range(5))
    table = {}
    for q in qps:
        rows, _ = compare_rows(cfg, seeds, CONFIGS, rate=q)
        table[q] = {r["policy"]: r["throughput_tps"] for r in rows}
    lo, hi = table[qps[0]], table[qps[-1]]
    crossover = lo["fixed_gamma_3"] > lo["no_spec"] and hi["fixed_gamma_3"] < hi["no_spec"]
    shares = {q: t["nightjar"] / max(t["fixed_gamma_3"], t["no_spec"]) for q, t in table.items()}
    ok = crossover and min(shares.values()) >= 0.97
    ends = (f"fg3/nospec at qps {qps[0]}: {lo['fixed_gamma_3']:.0f}/{lo['no_spec']:.0f}, "
            f"at qps {qps[-1]}: {hi['fixed_gamma_3']:.0f}/{hi['no_spec']:.0f}")
    report(9, ok, f"crossover {crossover} ({ends}), nightjar / best static per qps "
                  f"{ {q: round(s, 3) for q, s in shares.items()} }")


# 10 --------------------------------------------------------------------------

@pytest.mark.slow
def test_c10_deadlock_escape():
    params, batch = PRESETS["7b-4090-like"], 1
    target = oracle_gamma(params, batch, 5)
    dsd = run_fixed_batch(DsdLike(params, 5, initial_alpha=0.0), params, TABLE, batch, 50_000, 5, seed=7)
    locked = bool(np.all(dsd.gammas == 0))
    nj = run_fixed_batch(NightjarPolicy(5, batch, TABLE, seed=7), params, TABLE, batch, 50_000, 5, seed=7)
    escaped = bool(np.any(nj.gammas > 0))
    frac = _converged_fraction(nj, target)
    report(10, locked and escaped and frac >= 0.95 and target > 0,
           f"dsd locked at 0: {locked}; nightjar speculates: {escaped}, tail share on gamma*={target}: {frac:.4f}")


# 11 --------------------------------------------------------------------------

def test_c11_policy_overhead():
    p = NightjarPolicy(5, 64, TABLE, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(2000):
        b = int(rng.integers(1, 65))
        g = p.select(SelectionContext(b))
        p.observe(b, g, float(rng.uniform(100, 3000)))
    median = decision_latency_probe(p, SelectionContext(32, 40), 10_000)
    report(11, 0 < median < 1e-5, f"median select {median * 1e6:.2f} us")


# 12 --------------------------------------------------------------------------

def test_c12_cli_determinism(tmp_path):
    config = CONFIGS / "run_nightjar.json"
    codes = [main(["run", "--config", str(config), "--out", str(tmp_path / d), "--seed", "11"]) for d in "ab"]
    same = all((tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
               for rel in ("summary.json", "seed_11/steps.csv"))
    json.loads((tmp_path / "a" / "summary.json").read_text())
    report(12, codes == [0, 0] and same, f"exit codes {codes}, byte-identical summary.json and steps.csv: {same}")
