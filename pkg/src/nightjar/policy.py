"""Nightjar: per-batch-size block/bin/round bandit for speculative length."""

from __future__ import annotations

import enum
import math
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .cost_model import PrefillCostTable, prefill_cost


class BinType(str, enum.Enum):
    EXPLORATION = "exploration"
    EXPLOITATION = "exploitation"


class UnvisitedArmError(ValueError):
    """Raised when the exploitation objective is asked about an arm with no data."""


@dataclass(frozen=True)
class SelectionContext:
    batch_size: int
    # Largest per-request draft-KV lag in the batch; 0 while speculation is on.
    skip_len: int = 0


@dataclass
class ArmStats:
    mean_goodput: float = 0.0
    visit_count: int = 0

    def update(self, reward: float) -> None:
        self.visit_count += 1
        self.mean_goodput += (reward - self.mean_goodput) / self.visit_count


@dataclass
class BatchHierarchy:
    arms: list[ArmStats]
    block_index: int = 1
    block_size: int = 1
    bin_index: int = 1
    round_counter: int = 1
    bin_type: BinType | None = None

    def advance(self) -> None:
        """Close the bin and/or block once the round/bin counters pass sqrt(H).

        ``x > sqrt(H)`` is evaluated as ``x*x > H``, exact for integers.
        """
        if self.round_counter * self.round_counter > self.block_size:
            self.bin_index += 1
            self.round_counter = 1
            self.bin_type = None
            if self.bin_index * self.bin_index > self.block_size:
                self.block_index += 1
                self.block_size = 2 ** (self.block_index - 1)
                self.bin_index = 1

    def to_dict(self) -> dict:
        return {
            "block_index": self.block_index,
            "block_size": self.block_size,
            "bin_index": self.bin_index,
            "round_counter": self.round_counter,
            "bin_type": None if self.bin_type is None else self.bin_type.value,
            "arms": [{"mean_goodput": a.mean_goodput, "visit_count": a.visit_count} for a in self.arms],
        }


class NightjarPolicy:
    """Adaptive speculative-length selection, one bandit hierarchy per batch size.

    ``arm_caps`` optionally limits the largest gamma offered at big batches:
    a mapping ``{min_batch: max_gamma}``; the entry with the largest
    ``min_batch <= B`` applies.
    """

    name = "nightjar"

    def __init__(
        self,
        gamma_max: int,
        batch_max: int,
        table: PrefillCostTable,
        seed: int | np.random.Generator | None = None,
        arm_caps: dict[int, int] | None = None,
    ) -> None:
        if gamma_max < 1:
            raise ValueError(f"gamma_max must be >= 1, got {gamma_max}")
        if batch_max < 1:
            raise ValueError(f"batch_max must be >= 1, got {batch_max}")
        self.gamma_max = gamma_max
        self.batch_max = batch_max
        self.table = table
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.per_batch: dict[int, BatchHierarchy] = {
            b: BatchHierarchy(arms=[ArmStats() for _ in range(gamma_max + 1)])
            for b in range(1, batch_max + 1)
        }
        self.last_gamma = 0
        self.last_explored: bool | None = None
        self._caps = sorted((arm_caps or {}).items())
        for _, cap in self._caps:
            if not 0 <= cap <= gamma_max:
                raise ValueError(f"arm cap {cap} outside 0..{gamma_max}")

    def _hierarchy(self, batch: int) -> BatchHierarchy:
        try:
            return self.per_batch[batch]
        except KeyError:
            raise ValueError(f"batch size {batch} outside 1..{self.batch_max}") from None

    def arm_limit(self, batch: int) -> int:
        limit = self.gamma_max
        for min_batch, cap in self._caps:
            if batch >= min_batch:
                limit = cap
        return limit

    def exploitation_score(self, batch: int, gamma_prev: int, gamma: int, skip_len: int) -> float:
        arm = self._hierarchy(batch).arms[gamma]
        if arm.visit_count == 0:
            raise UnvisitedArmError(f"arm gamma={gamma} at B={batch} has no observations")
        score = 1.0 / arm.mean_goodput if arm.mean_goodput > 0 else math.inf
        if gamma_prev == 0 and gamma > 0:
            score += prefill_cost(self.table, skip_len, batch) / gamma
        return score

    def select(self, ctx: SelectionContext) -> int:
        h = self._hierarchy(ctx.batch_size)
        limit = self.arm_limit(ctx.batch_size)
        if h.bin_type is None:
            explore = self.rng.random() < 1.0 / math.sqrt(h.bin_index)
            h.bin_type = BinType.EXPLORATION if explore else BinType.EXPLOITATION
        if h.bin_type is BinType.EXPLORATION:
            self.last_explored = True
            return int(self.rng.integers(0, limit + 1))
        self.last_explored = False
        return self._exploit(h, ctx, limit)

    def _exploit(self, h: BatchHierarchy, ctx: SelectionContext, limit: int) -> int:
        switch_cost = 0.0
        if self.last_gamma == 0 and ctx.skip_len > 0:
            switch_cost = prefill_cost(self.table, ctx.skip_len, ctx.batch_size)
        best, best_score = 0, math.inf
        found = False
        for gamma in range(limit + 1):
            arm = h.arms[gamma]
            if arm.visit_count == 0:
                continue
            score = 1.0 / arm.mean_goodput if arm.mean_goodput > 0 else math.inf
            if gamma > 0 and self.last_gamma == 0:
                score += switch_cost / gamma
            if not found or score < best_score:
                best, best_score, found = gamma, score, True
        return best

    def observe(self, batch: int, gamma: int, reward: float, acceptance=None) -> None:
        if reward < 0:
            raise ValueError(f"reward must be >= 0, got {reward}")
        if not 0 <= gamma <= self.gamma_max:
            raise ValueError(f"gamma {gamma} outside 0..{self.gamma_max}")
        h = self._hierarchy(batch)
        h.arms[gamma].update(reward)
        self.last_gamma = gamma
        h.round_counter += 1
        h.advance()

    def snapshot(self) -> dict:
        return {
            "policy": self.name,
            "gamma_max": self.gamma_max,
            "batch_max": self.batch_max,
            "last_gamma": self.last_gamma,
            "per_batch": {str(b): h.to_dict() for b, h in self.per_batch.items()},
        }


def decision_latency_probe(
    policy, ctx: SelectionContext, iterations: int, choices: list[int] | None = None
) -> float:
    """Median wall-clock seconds of one ``policy.select`` call."""
    if iterations < 1000:
        raise ValueError("iterations must be >= 1000")
    durations = []
    clock = time.perf_counter_ns
    for _ in range(iterations):
        t0 = clock()
        g = policy.select(ctx)
        durations.append(clock() - t0)
        if choices is not None:
            choices.append(g)
    return statistics.median(durations) * 1e-9


__all__ = [
    "ArmStats",
    "BatchHierarchy",
    "BinType",
    "NightjarPolicy",
    "SelectionContext",
    "UnvisitedArmError",
    "decision_latency_probe",
]
