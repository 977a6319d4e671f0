"""Discrete-event simulator of continuous-batching speculative decoding."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .cost_model import (
    CostModelParams,
    PrefillCostTable,
    expected_goodput,
    expected_tokens,
    forward_latency,
    prefill_cost,
    sample_accepted,
    step_latency,
)
from .policy import SelectionContext
from .workload import Request


class OverloadError(RuntimeError):
    """The waiting queue outgrew ``SimConfig.max_queue``."""

    def __init__(self, message: str, outcomes=None, completed=None) -> None:
        super().__init__(message)
        self.outcomes = outcomes or []
        self.completed = completed or []


@dataclass(frozen=True)
class SimConfig:
    batch_max: int = 64
    gamma_max: int = 5
    token_budget: int | None = None
    seed: int = 0
    warmup_steps: int = 0
    horizon_s: float | None = None
    max_queue: int = 100_000

    def __post_init__(self) -> None:
        if self.batch_max < 1:
            raise ValueError("batch_max must be >= 1")
        if self.gamma_max < 1:
            raise ValueError("gamma_max must be >= 1")
        if self.token_budget is not None and self.token_budget < self.gamma_max + 1:
            raise ValueError("token_budget must admit at least one sequence at gamma_max")
        if self.horizon_s is not None and self.horizon_s <= 0:
            raise ValueError("horizon_s must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")

    @property
    def batch_cap(self) -> int:
        if self.token_budget is None:
            return self.batch_max
        return min(self.batch_max, self.token_budget // (self.gamma_max + 1))


@dataclass(slots=True)
class StepOutcome:
    step_index: int
    sim_time: float
    batch_size: int
    gamma: int
    switched: bool
    accepted_total: int
    bonus_total: int
    step_latency: float
    reward: float
    oracle_expected_goodput: float
    chosen_expected_goodput: float
    skip_len: int = 0
    acceptance_trials: int = 0
    # Step latency without switch and admission prefill.
    decode_latency: float = 0.0

    @property
    def credited(self) -> int:
        return self.accepted_total + self.bonus_total

    @property
    def decode_goodput(self) -> float:
        """Goodput the policy learns from: one-off prefill costs excluded."""
        return self.credited / self.decode_latency


STEP_CSV_HEADER = ["t", "sim_time", "B", "gamma", "switched", "accepted", "bonus", "latency_s", "reward_tps"]


def step_csv_row(o: StepOutcome) -> list:
    return [o.step_index, o.sim_time, o.batch_size, o.gamma, int(o.switched), o.accepted_total,
            o.bonus_total, o.step_latency, o.reward]


def form_batch(waiting: deque[Request], running: list[Request], config: SimConfig) -> list[Request]:
    """Top up ``running`` from the FIFO ``waiting`` queue (mutates both) and return it.

    ``waiting`` must already be ordered by (arrival_time, id).
    """
    cap = config.batch_cap
    while waiting and len(running) < cap:
        running.append(waiting.popleft())
    return running


class _GoodputCache:
    """Expected goodput per (B, gamma) for the shared-alpha case."""

    def __init__(self, params: CostModelParams, gamma_max: int) -> None:
        self.params = params
        self.gamma_max = gamma_max
        self._cache: dict[int, list[float]] = {}

    def row(self, batch: int) -> list[float]:
        r = self._cache.get(batch)
        if r is None:
            r = [expected_goodput(self.params, batch, g) for g in range(self.gamma_max + 1)]
            self._cache[batch] = r
        return r


def _expected_row(params: CostModelParams, batch: Sequence[Request], gamma_max: int,
                  cache: _GoodputCache) -> list[float]:
    if all(r.alpha is None for r in batch):
        return cache.row(len(batch))
    alphas = [params.alpha if r.alpha is None else r.alpha for r in batch]
    b = len(batch)
    return [
        sum(expected_tokens(a, g) for a in alphas) / step_latency(params, b, g)
        for g in range(gamma_max + 1)
    ]


def execute_step(
    batch: Sequence[Request],
    gamma: int,
    prev_gamma: int,
    params: CostModelParams,
    table: PrefillCostTable,
    rng: np.random.Generator,
    *,
    step_index: int = 0,
    sim_time: float = 0.0,
    admitted: Sequence[Request] = (),
    expected_row: Sequence[float] | None = None,
) -> StepOutcome:
    """Run one decoding step for ``batch`` at speculative length ``gamma``.

    Credits tokens to the requests and updates their draft-KV lag; does not
    touch timestamps (the caller owns the clock).
    """
    if not batch:
        raise ValueError("cannot execute an empty batch")
    b = len(batch)
    switched = prev_gamma == 0 and gamma > 0
    skip = 0
    switch_prefill = None
    if switched:
        skip = max(r.skip_len for r in batch)
        switch_prefill = prefill_cost(table, skip, b)
    decode = step_latency(params, b, gamma)
    latency = step_latency(params, b, gamma, switch_prefill)
    for r in admitted:
        latency += forward_latency(params, 1, r.prompt_len, "target")
        if gamma > 0:
            latency += forward_latency(params, 1, r.prompt_len, "draft")

    accepted_total = 0
    trials = 0
    if gamma == 0:
        for r in batch:
            r.generated += 1
            r.skip_len += 1
    else:
        if any(r.alpha is not None for r in batch):
            alphas = np.array([params.alpha if r.alpha is None else r.alpha for r in batch])
        else:
            alphas = np.full(b, params.alpha)
        runs = sample_accepted(rng, alphas, gamma)
        for r, acc in zip(batch, runs.tolist()):
            credit = min(acc + 1, r.remaining)
            accepted_total += credit - 1
            # Estimator feed: accepted drafts plus one trial per early rejection.
            trials += acc + (1 if acc < gamma else 0)
            r.generated += credit
            r.skip_len = 0
    if expected_row is None:
        expected_row = [
            sum(expected_tokens(params.alpha if r.alpha is None else r.alpha, g) for r in batch)
            / step_latency(params, b, g)
            for g in range(max(gamma, 1) + 1)
        ]
    credited = accepted_total + b
    return StepOutcome(
        step_index=step_index,
        sim_time=sim_time,
        batch_size=b,
        gamma=gamma,
        switched=switched,
        accepted_total=accepted_total,
        bonus_total=b,
        step_latency=latency,
        reward=credited / latency,
        oracle_expected_goodput=max(expected_row),
        chosen_expected_goodput=expected_row[gamma],
        skip_len=skip,
        acceptance_trials=trials,
        decode_latency=decode,
    )


@dataclass
class SimResult:
    outcomes: list[StepOutcome]
    completed: list[Request]
    explored: list[bool | None] = field(default_factory=list)


def run(
    config: SimConfig,
    policy,
    workload: Iterable[Request],
    params: CostModelParams,
    table: PrefillCostTable,
    rng: np.random.Generator | None = None,
) -> SimResult:
    """Simulate serving ``workload`` with ``policy`` choosing gamma every step.

    Requests are copied; the caller's workload is left untouched so the same
    stream can be replayed against several policies.
    """
    pending = sorted((r.fresh_copy() for r in workload), key=lambda r: (r.arrival_time, r.id))
    if not pending:
        raise ValueError("workload is empty")
    if config.horizon_s is not None:
        pending = [r for r in pending if r.arrival_time <= config.horizon_s]
    if rng is None:
        rng = np.random.default_rng(config.seed)
    cache = _GoodputCache(params, config.gamma_max)

    arrivals = deque(pending)
    waiting: deque[Request] = deque()
    running: list[Request] = []
    completed: list[Request] = []
    outcomes: list[StepOutcome] = []
    explored: list[bool | None] = []
    now = 0.0
    prev_gamma = 0
    step = 0

    while arrivals or waiting or running:
        while arrivals and arrivals[0].arrival_time <= now:
            waiting.append(arrivals.popleft())
        if len(waiting) > config.max_queue:
            raise OverloadError(
                f"waiting queue reached {len(waiting)} requests at t={now:.3f}s",
                outcomes, completed,
            )
        before = len(running)
        batch = form_batch(waiting, running, config)
        if not batch:
            now = max(now, arrivals[0].arrival_time)
            continue
        admitted = batch[before:]
        for r in admitted:
            r.admit_time = now
        skip = max(r.skip_len for r in batch) if prev_gamma == 0 else 0
        gamma = policy.select(SelectionContext(len(batch), skip))
        if not 0 <= gamma <= config.gamma_max:
            raise ValueError(f"policy returned gamma={gamma} outside 0..{config.gamma_max}")
        explored.append(getattr(policy, "last_explored", None))
        outcome = execute_step(
            batch, gamma, prev_gamma, params, table, rng,
            step_index=step, sim_time=now, admitted=admitted,
            expected_row=_expected_row(params, batch, config.gamma_max, cache),
        )
        acceptance = (outcome.accepted_total, outcome.acceptance_trials) if gamma > 0 else None
        policy.observe(outcome.batch_size, gamma, outcome.decode_goodput, acceptance)
        outcomes.append(outcome)
        now += outcome.step_latency
        prev_gamma = gamma
        step += 1
        still = []
        for r in running:
            if r.first_token_time is None:
                r.first_token_time = now
            if r.generated >= r.output_budget:
                r.finish_time = now
                completed.append(r)
            else:
                still.append(r)
        running[:] = still
    return SimResult(outcomes, completed, explored)


def pseudo_regret(outcomes: Iterable[StepOutcome]) -> list[float]:
    """Cumulative gap between the best and the chosen arm's expected goodput."""
    total = 0.0
    out = []
    for o in outcomes:
        total += o.oracle_expected_goodput - o.chosen_expected_goodput
        out.append(total)
    return out


def realized_regret(outcomes: Iterable[StepOutcome]) -> list[float]:
    """Like ``pseudo_regret`` but charging the realized reward of the chosen arm."""
    total = 0.0
    out = []
    for o in outcomes:
        total += o.oracle_expected_goodput - o.reward
        out.append(total)
    return out


@dataclass
class FixedBatchTrace:
    gammas: np.ndarray
    rewards: np.ndarray
    decode_rewards: np.ndarray
    explored: np.ndarray
    regret: np.ndarray
    oracle_gamma: int


def run_fixed_batch(
    policy,
    params: CostModelParams,
    table: PrefillCostTable,
    batch: int,
    steps: int,
    gamma_max: int,
    seed=None,
) -> FixedBatchTrace:
    """Drive ``policy`` against a batch of ``batch`` never-ending sequences.

    Keeps the switching-cost bookkeeping of the full simulator (every sequence
    shares the same draft-KV lag) but drops arrivals and prefill, so bandit
    convergence can be studied at one batch size.
    """
    rng = np.random.default_rng(seed)
    row = [expected_goodput(params, batch, g) for g in range(gamma_max + 1)]
    best = max(row)
    oracle = row.index(best)
    gammas = np.empty(steps, dtype=np.int64)
    rewards = np.empty(steps)
    decode_rewards = np.empty(steps)
    explored = np.zeros(steps, dtype=bool)
    regret = np.empty(steps)
    prev_gamma, lag, total = 0, 0, 0.0
    alpha = params.alpha
    for t in range(steps):
        gamma = policy.select(SelectionContext(batch, lag if prev_gamma == 0 else 0))
        explored[t] = bool(getattr(policy, "last_explored", False))
        if gamma == 0:
            tokens = batch
            acceptance = None
            latency = step_latency(params, batch, 0)
            lag += 1
        else:
            switch = prefill_cost(table, lag, batch) if prev_gamma == 0 else None
            runs = sample_accepted(rng, alpha, gamma, size=batch)
            acc = int(runs.sum())
            tokens = acc + batch
            acceptance = (acc, acc + int((runs < gamma).sum()))
            latency = step_latency(params, batch, gamma, switch)
            lag = 0
        decode = tokens / step_latency(params, batch, gamma)
        policy.observe(batch, gamma, decode, acceptance)
        total += best - row[gamma]
        gammas[t], rewards[t], decode_rewards[t], regret[t] = gamma, tokens / latency, decode, total
        prev_gamma = gamma
    return FixedBatchTrace(gammas, rewards, decode_rewards, explored, regret, oracle)


def credited_tokens(outcomes: Iterable[StepOutcome]) -> int:
    return sum(o.credited for o in outcomes)


__all__ = [
    "FixedBatchTrace",
    "OverloadError",
    "SimConfig",
    "SimResult",
    "StepOutcome",
    "STEP_CSV_HEADER",
    "execute_step",
    "form_batch",
    "pseudo_regret",
    "realized_regret",
    "run",
    "run_fixed_batch",
    "step_csv_row",
]
