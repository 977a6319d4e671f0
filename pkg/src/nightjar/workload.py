"""Request streams: Poisson arrivals, piecewise-rate traces and CSV replay."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class TraceOrderWarning(UserWarning):
    """A replayed trace was not sorted by arrival time."""


@dataclass(slots=True)
class Request:
    id: int
    arrival_time: float
    prompt_len: int
    output_budget: int
    generated: int = 0
    # Target tokens produced since this request's draft KV was last in sync.
    skip_len: int = 0
    alpha: float | None = None
    admit_time: float | None = None
    first_token_time: float | None = None
    finish_time: float | None = None

    @property
    def remaining(self) -> int:
        return self.output_budget - self.generated

    def fresh_copy(self) -> Request:
        return Request(self.id, self.arrival_time, self.prompt_len, self.output_budget, alpha=self.alpha)


@dataclass(frozen=True)
class LengthDistribution:
    kind: str
    value: int = 0
    low: int = 1
    high: int = 1
    mu: float = 0.0
    sigma: float = 0.0
    clamp: int = 4096

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "uniform", "lognormal"):
            raise ValueError(f"unknown length distribution {self.kind!r}")
        if self.clamp < 1:
            raise ValueError("clamp must be >= 1")
        if self.kind == "fixed" and not 1 <= self.value <= self.clamp:
            raise ValueError("fixed length must lie in 1..clamp")
        if self.kind == "uniform" and not 1 <= self.low <= self.high <= self.clamp:
            raise ValueError("uniform bounds must satisfy 1 <= low <= high <= clamp")
        if self.kind == "lognormal" and self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @classmethod
    def fixed(cls, value: int) -> LengthDistribution:
        return cls("fixed", value=value, clamp=max(value, 1))

    @classmethod
    def uniform(cls, low: int, high: int) -> LengthDistribution:
        return cls("uniform", low=low, high=high, clamp=high)

    @classmethod
    def lognormal(cls, median: float, sigma: float, clamp: int) -> LengthDistribution:
        return cls("lognormal", mu=math.log(median), sigma=sigma, clamp=clamp)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "fixed":
            return np.full(n, self.value, dtype=np.int64)
        if self.kind == "uniform":
            return rng.integers(self.low, self.high + 1, size=n)
        raw = np.rint(rng.lognormal(self.mu, self.sigma, size=n))
        return np.clip(raw, 1, self.clamp).astype(np.int64)


# Rough shapes only; no claim of matching the real datasets.
LENGTH_PRESETS: dict[str, tuple[LengthDistribution, LengthDistribution]] = {
    "sharegpt-like": (
        LengthDistribution.lognormal(180, 1.0, 2048),
        LengthDistribution.lognormal(220, 0.8, 1024),
    ),
    "alpaca-like": (
        LengthDistribution.lognormal(24, 0.6, 512),
        LengthDistribution.lognormal(140, 0.8, 1024),
    ),
    "specbench-like": (
        LengthDistribution.lognormal(110, 0.9, 1536),
        LengthDistribution.lognormal(300, 0.6, 1024),
    ),
}


def _make_requests(arrivals: np.ndarray, in_dist: LengthDistribution, out_dist: LengthDistribution,
                   rng: np.random.Generator) -> list[Request]:
    n = len(arrivals)
    prompts = in_dist.sample(rng, n)
    outputs = out_dist.sample(rng, n)
    return [
        Request(i, float(t), int(p), int(o))
        for i, (t, p, o) in enumerate(zip(arrivals, prompts, outputs))
    ]


def poisson_workload(rate: float, count: int, in_dist: LengthDistribution,
                     out_dist: LengthDistribution, seed) -> list[Request]:
    if rate <= 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    arrivals = np.cumsum(rng.exponential(1.0 / rate, size=count))
    return _make_requests(arrivals, in_dist, out_dist, rng)


@dataclass(frozen=True)
class RateTrace:
    segments: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        segs = tuple((float(s), float(r)) for s, r in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs or segs[0][0] != 0.0:
            raise ValueError("rate trace must start at time 0")
        if any(b[0] <= a[0] for a, b in zip(segs, segs[1:])):
            raise ValueError("rate trace start times must be strictly increasing")
        if any(r < 0 for _, r in segs):
            raise ValueError("rates must be >= 0")


def rate_trace_workload(trace: RateTrace, duration: float, in_dist: LengthDistribution,
                        out_dist: LengthDistribution, seed) -> list[Request]:
    """Piecewise-homogeneous Poisson arrivals following ``trace`` up to ``duration``."""
    if duration <= 0:
        raise ValueError("duration must be > 0")
    rng = np.random.default_rng(seed)
    ends = [s for s, _ in trace.segments[1:]] + [math.inf]
    arrivals: list[float] = []
    for (start, rate), end in zip(trace.segments, ends):
        end = min(end, duration)
        if start >= duration:
            break
        if rate == 0:
            continue
        t = start
        while True:
            t += rng.exponential(1.0 / rate)
            if t >= end:
                break
            arrivals.append(t)
    return _make_requests(np.asarray(arrivals, dtype=float), in_dist, out_dist, rng)


def load_trace_csv(path: str | Path) -> list[Request]:
    """Rows ``arrival_time_s,input_len,output_len`` become requests in arrival order."""
    rows: list[tuple[float, int, int]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["arrival_time_s", "input_len", "output_len"]:
            raise ValueError(f"{path}:1: expected header arrival_time_s,input_len,output_len")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                t, p, o = float(row[0]), int(row[1]), int(row[2])
                if len(row) != 3:
                    raise ValueError("expected 3 fields")
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if p < 1 or o < 1:
                raise ValueError(f"{path}:{lineno}: lengths must be >= 1")
            if t < 0 or not math.isfinite(t):
                raise ValueError(f"{path}:{lineno}: arrival time must be finite and >= 0")
            rows.append((t, p, o))
    if any(b[0] < a[0] for a, b in zip(rows, rows[1:])):
        warnings.warn(f"{path}: rows not sorted by arrival time; sorting", TraceOrderWarning, stacklevel=2)
        rows.sort(key=lambda r: r[0])
    return [Request(i, t, p, o) for i, (t, p, o) in enumerate(rows)]


def assign_alphas(requests: Sequence[Request], a: float, b: float, seed) -> None:
    """Draw one Beta(a, b) acceptance rate per request, in id order."""
    rng = np.random.default_rng(seed)
    draws = rng.beta(a, b, size=len(requests))
    for r, alpha in zip(requests, draws):
        r.alpha = float(alpha)
