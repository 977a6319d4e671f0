"""Roofline latency, prefix-acceptance and draft-KV switching-cost models.

Everything here is a pure function of its arguments (plus rng consumption for
the samplers), so the simulator, the oracle policy and the tests can share it.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

Model = Literal["draft", "target"]


@dataclass(frozen=True)
class CostModelParams:
    """Roofline parameters for one draft/target pair (all times in seconds)."""

    target_mem_time: float
    target_compute_per_token: float
    draft_mem_time: float
    draft_compute_per_token: float
    fixed_overhead: float
    alpha: float

    def __post_init__(self) -> None:
        times = (
            self.target_mem_time,
            self.target_compute_per_token,
            self.draft_mem_time,
            self.draft_compute_per_token,
            self.fixed_overhead,
        )
        if any(t < 0 or not math.isfinite(t) for t in times):
            raise ValueError("cost model times must be finite and >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.draft_mem_time > self.target_mem_time:
            raise ValueError("draft_mem_time exceeds target_mem_time")
        if self.draft_compute_per_token > self.target_compute_per_token:
            raise ValueError("draft_compute_per_token exceeds target_compute_per_token")

    def with_alpha(self, alpha: float) -> CostModelParams:
        d = asdict(self)
        d["alpha"] = alpha
        return CostModelParams(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# Tuned only so the memory-bound/compute-bound flip shows up at desk scale.
PRESETS: dict[str, CostModelParams] = {
    "7b-4090-like": CostModelParams(
        target_mem_time=0.014,
        target_compute_per_token=0.000125,
        draft_mem_time=0.0015,
        draft_compute_per_token=0.00001,
        fixed_overhead=0.001,
        alpha=0.7,
    ),
    "13b-a100-like": CostModelParams(
        target_mem_time=0.018,
        target_compute_per_token=0.00014,
        draft_mem_time=0.0008,
        draft_compute_per_token=0.000006,
        fixed_overhead=0.001,
        alpha=0.6,
    ),
    # Verification is expensive even at small batches: speculation never pays.
    "compute-bound": CostModelParams(
        target_mem_time=0.003,
        target_compute_per_token=0.0008,
        draft_mem_time=0.002,
        draft_compute_per_token=0.0001,
        fixed_overhead=0.001,
        alpha=0.6,
    ),
}


def get_preset(name: str) -> CostModelParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown cost preset {name!r}; known: {sorted(PRESETS)}") from None


def forward_latency(params: CostModelParams, batch: int, tokens: int, model: Model) -> float:
    """Latency of one forward pass over ``batch`` sequences of ``tokens`` each."""
    if batch < 1 or tokens < 1:
        raise ValueError("batch and tokens must be >= 1")
    if model == "target":
        mem, per_tok = params.target_mem_time, params.target_compute_per_token
    elif model == "draft":
        mem, per_tok = params.draft_mem_time, params.draft_compute_per_token
    else:
        raise ValueError(f"unknown model {model!r}")
    return params.fixed_overhead + max(mem, per_tok * batch * tokens)


def step_latency(
    params: CostModelParams,
    batch: int,
    gamma: int,
    switch_prefill: float | None = None,
) -> float:
    """One decoding step: ``gamma`` sequential draft passes plus one verify pass."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if gamma == 0:
        if switch_prefill is not None:
            raise ValueError("switch_prefill given for gamma = 0; no switch can occur")
        return forward_latency(params, batch, 1, "target")
    total = gamma * forward_latency(params, batch, 1, "draft")
    total += forward_latency(params, batch, gamma + 1, "target")
    if switch_prefill is not None:
        total += switch_prefill
    return total


def expected_tokens(alpha: float, gamma: int) -> float:
    """Mean tokens per sequence per step (accepted prefix + one bonus token)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return float(gamma + 1)
    return (1.0 - alpha ** (gamma + 1)) / (1.0 - alpha)


def sample_accepted(rng: np.random.Generator, alpha, gamma: int, size=None):
    """Length of the leading run of successes in ``gamma`` Bernoulli(alpha) trials.

    ``alpha`` may be an array (one acceptance rate per sequence). Drawn as a
    geometric count clipped at ``gamma``, which has the same law as the
    truncated prefix run.
    """
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    a = np.asarray(alpha, dtype=float)
    if np.any((a < 0) | (a > 1)):
        raise ValueError("alpha must lie in [0, 1]")
    if size is None and a.ndim == 0:
        a_f = float(a)
        if a_f == 1.0:
            return gamma
        if a_f == 0.0:
            return 0
        return min(int(rng.geometric(1.0 - a_f)) - 1, gamma)
    shape = a.shape if size is None else size
    a = np.broadcast_to(a, shape)
    # geometric() needs p > 0; alpha == 1 is handled by the clip below.
    p = np.where(a >= 1.0, 1.0, 1.0 - a)
    runs = rng.geometric(p, size=shape) - 1
    runs = np.where(a >= 1.0, gamma, runs)
    return np.minimum(runs, gamma)


def expected_goodput(params: CostModelParams, batch: int, gamma: int) -> float:
    """Noise-free goodput (tokens/s) of ``gamma`` at ``batch``, switch cost excluded."""
    return batch * expected_tokens(params.alpha, gamma) / step_latency(params, batch, gamma)


def oracle_gamma(params: CostModelParams, batch: int, gamma_max: int) -> int:
    """Brute-force argmax of expected goodput; ties go to the smaller gamma."""
    best, best_g = 0, -math.inf
    for g in range(gamma_max + 1):
        v = expected_goodput(params, batch, g)
        if v > best_g:
            best, best_g = g, v
    return best


class PrefillCostTable:
    """Draft-KV reconstruction latency indexed by (skip length, batch size).

    Lookups round both keys up to the next bucket and clamp at the largest one.
    Latencies are stored in milliseconds, as profiled.
    """

    def __init__(
        self,
        length_buckets: Sequence[int],
        batch_buckets: Sequence[int],
        grid_ms: Sequence[Sequence[float]],
    ) -> None:
        self.length_buckets = [int(x) for x in length_buckets]
        self.batch_buckets = [int(x) for x in batch_buckets]
        if not self.length_buckets or not self.batch_buckets:
            raise ValueError("prefill cost table is empty")
        for name, b in (("length", self.length_buckets), ("batch", self.batch_buckets)):
            if any(x2 <= x1 for x1, x2 in zip(b, b[1:])):
                raise ValueError(f"{name} buckets must be strictly increasing")
        if len(grid_ms) != len(self.length_buckets) or any(
            len(row) != len(self.batch_buckets) for row in grid_ms
        ):
            raise ValueError("prefill cost grid is not fully populated")
        self.grid_ms = [[float(v) for v in row] for row in grid_ms]
        if any(v <= 0 or not math.isfinite(v) for row in self.grid_ms for v in row):
            raise ValueError("prefill costs must be positive")

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[int, int, float]]) -> PrefillCostTable:
        cells: dict[tuple[int, int], float] = {}
        for length, batch, cost in rows:
            key = (int(length), int(batch))
            if key in cells:
                raise ValueError(f"duplicate prefill cost entry for {key}")
            cells[key] = float(cost)
        lengths = sorted({k[0] for k in cells})
        batches = sorted({k[1] for k in cells})
        missing = [(l, b) for l in lengths for b in batches if (l, b) not in cells]
        if missing:
            raise ValueError(f"prefill cost grid is not fully populated; missing {missing}")
        return cls(lengths, batches, [[cells[(l, b)] for b in batches] for l in lengths])

    @classmethod
    def from_csv(cls, path: str | Path) -> PrefillCostTable:
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["input_len", "batch_size", "cost_ms"]:
                raise ValueError(
                    f"{path}: expected header input_len,batch_size,cost_ms, got {reader.fieldnames}"
                )
            for lineno, row in enumerate(reader, start=2):
                try:
                    rows.append((int(row["input_len"]), int(row["batch_size"]), float(row["cost_ms"])))
                except (TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{lineno}: malformed row {row}") from exc
        return cls.from_rows(rows)

    @classmethod
    def default(cls) -> PrefillCostTable:
        """The profiled 7B / RTX 4090 switching costs bundled with the package."""
        ref = resources.files("nightjar") / "data" / "prefill_cost_7b_4090.csv"
        with resources.as_file(ref) as p:
            return cls.from_csv(p)

    def lookup_ms(self, skip_len: int, batch: int) -> float:
        i = min(bisect.bisect_left(self.length_buckets, skip_len), len(self.length_buckets) - 1)
        j = min(bisect.bisect_left(self.batch_buckets, batch), len(self.batch_buckets) - 1)
        return self.grid_ms[i][j]

    def rows(self) -> list[tuple[int, int, float]]:
        return [
            (l, b, self.grid_ms[i][j])
            for i, l in enumerate(self.length_buckets)
            for j, b in enumerate(self.batch_buckets)
        ]


def prefill_cost(table: PrefillCostTable, skip_len: int, batch: int) -> float:
    """Switching cost in seconds for the batch's largest draft-KV lag."""
    if skip_len < 0:
        raise ValueError("skip length must be >= 0")
    if skip_len == 0:
        return 0.0
    return table.lookup_ms(skip_len, batch) / 1000.0
