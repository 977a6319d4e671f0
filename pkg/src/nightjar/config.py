"""Experiment configuration: one JSON document, validated before anything runs."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .baselines import DsdLike, EpsilonGreedy, FixedGamma, LinUCB, NoSpec, Oracle, UCB1
from .cost_model import PRESETS, CostModelParams, PrefillCostTable
from .engine import SimConfig
from .policy import NightjarPolicy
from .workload import (
    LENGTH_PRESETS,
    LengthDistribution,
    RateTrace,
    Request,
    assign_alphas,
    load_trace_csv,
    poisson_workload,
    rate_trace_workload,
)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field path."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


PolicyKindName = Literal["nightjar", "fixed_gamma", "no_spec", "oracle", "epsilon_greedy", "ucb1",
                         "linucb", "dsd_like"]


class PolicySpec(_Model):
    kind: PolicyKindName
    label: Optional[str] = None
    gamma: Optional[int] = None
    epsilon: float = Field(0.1, gt=0, le=1)
    decay: float = Field(0.0, ge=0)
    c: float = Field(1.0, gt=0)
    alpha_ucb: float = Field(1.0, gt=0)
    regularization: float = Field(1.0, gt=0)
    initial_alpha: float = Field(0.5, ge=0, le=1)
    ema_decay: float = Field(0.05, gt=0, le=1)
    arm_caps: Optional[dict[int, int]] = None

    @model_validator(mode="after")
    def _check_gamma(self):
        if self.kind == "fixed_gamma" and (self.gamma is None or self.gamma < 1):
            raise ValueError("fixed_gamma needs gamma >= 1")
        return self

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "fixed_gamma":
            return f"fixed_gamma_{self.gamma}"
        return self.kind


class CostParamsSpec(_Model):
    target_mem_time: float = Field(ge=0)
    target_compute_per_token: float = Field(ge=0)
    draft_mem_time: float = Field(ge=0)
    draft_compute_per_token: float = Field(ge=0)
    fixed_overhead: float = Field(ge=0)
    alpha: float = Field(ge=0, le=1)


class CostSpec(_Model):
    preset: Optional[str] = None
    params: Optional[CostParamsSpec] = None
    alpha: Optional[float] = Field(None, ge=0, le=1)
    prefill_table: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.preset is None) == (self.params is None):
            raise ValueError("give exactly one of preset or params")
        if self.preset is not None and self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; known: {sorted(PRESETS)}")
        return self


class LengthSpec(_Model):
    kind: Literal["fixed", "uniform", "lognormal"]
    value: int = Field(1, ge=1)
    low: int = Field(1, ge=1)
    high: int = Field(1, ge=1)
    median: float = Field(1.0, gt=0)
    sigma: float = Field(0.0, ge=0)
    clamp: int = Field(4096, ge=1)

    def build(self) -> LengthDistribution:
        if self.kind == "fixed":
            return LengthDistribution.fixed(self.value)
        if self.kind == "uniform":
            return LengthDistribution.uniform(self.low, self.high)
        return LengthDistribution.lognormal(self.median, self.sigma, self.clamp)


class WorkloadSpec(_Model):
    kind: Literal["poisson", "rate_trace", "csv"] = "poisson"
    rate: Optional[float] = Field(None, gt=0)
    count: Optional[int] = Field(None, ge=1)
    segments: Optional[list[tuple[float, float]]] = None
    duration: Optional[float] = Field(None, gt=0)
    path: Optional[str] = None
    lengths: Optional[str] = "sharegpt-like"
    input: Optional[LengthSpec] = None
    output: Optional[LengthSpec] = None
    alpha_beta: Optional[tuple[float, float]] = None

    @model_validator(mode="after")
    def _fields_for_kind(self):
        need = {"poisson": ("rate", "count"), "rate_trace": ("segments", "duration"), "csv": ("path",)}
        missing = [f for f in need[self.kind] if getattr(self, f) is None]
        if missing:
            raise ValueError(f"{self.kind} workload needs {', '.join(missing)}")
        if self.lengths is not None and self.lengths not in LENGTH_PRESETS:
            raise ValueError(f"unknown length preset {self.lengths!r}; known: {sorted(LENGTH_PRESETS)}")
        if self.kind != "csv" and self.lengths is None and (self.input is None or self.output is None):
            raise ValueError("give a lengths preset or both input and output distributions")
        if self.alpha_beta is not None and min(self.alpha_beta) <= 0:
            raise ValueError("alpha_beta parameters must be positive")
        return self

    def distributions(self) -> tuple[LengthDistribution, LengthDistribution]:
        in_d, out_d = LENGTH_PRESETS[self.lengths] if self.lengths else (None, None)
        if self.input is not None:
            in_d = self.input.build()
        if self.output is not None:
            out_d = self.output.build()
        return in_d, out_d


class SimSpec(_Model):
    batch_max: int = Field(64, ge=1)
    gamma_max: int = Field(5, ge=1)
    token_budget: Optional[int] = Field(None, ge=1)
    warmup_steps: int = Field(0, ge=0)
    horizon_s: Optional[float] = Field(None, gt=0)
    max_queue: int = Field(100_000, ge=1)


class SweepSpec(_Model):
    qps: list[float] = Field(min_length=1)


class ExperimentConfig(_Model):
    schema_version: Literal[1]
    policy: Optional[PolicySpec] = None
    policies: Optional[list[PolicySpec]] = None
    cost: CostSpec
    workload: WorkloadSpec
    sim: SimSpec = SimSpec()
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    sweep: Optional[SweepSpec] = None

    @model_validator(mode="after")
    def _policies(self):
        for spec in self.all_policies():
            if spec.kind == "fixed_gamma" and spec.gamma > self.sim.gamma_max:
                raise ValueError(f"fixed_gamma {spec.gamma} exceeds sim.gamma_max {self.sim.gamma_max}")
        names = [p.name for p in self.all_policies()]
        if len(set(names)) != len(names):
            raise ValueError(f"policy names must be unique, got {names}")
        return self

    def all_policies(self) -> list[PolicySpec]:
        out = list(self.policies or [])
        if self.policy is not None:
            out.insert(0, self.policy)
        return out

    # -- builders -------------------------------------------------------

    def cost_params(self) -> CostModelParams:
        params = PRESETS[self.cost.preset] if self.cost.preset else CostModelParams(**self.cost.params.model_dump())
        if self.cost.alpha is not None:
            params = params.with_alpha(self.cost.alpha)
        return params

    def prefill_table(self, base: Path | None = None) -> PrefillCostTable:
        if self.cost.prefill_table is None:
            return PrefillCostTable.default()
        return PrefillCostTable.from_csv(_resolve(self.cost.prefill_table, base))

    def sim_config(self, seed: int) -> SimConfig:
        return SimConfig(seed=seed, **self.sim.model_dump())

    def build_workload(self, seed: int, base: Path | None = None, rate: float | None = None) -> list[Request]:
        w = self.workload
        seq = np.random.SeedSequence([seed, 1])
        if w.kind == "csv":
            requests = load_trace_csv(_resolve(w.path, base))
        else:
            in_d, out_d = w.distributions()
            if w.kind == "poisson":
                requests = poisson_workload(rate or w.rate, w.count, in_d, out_d, seq)
            else:
                requests = rate_trace_workload(RateTrace(tuple(w.segments)), w.duration, in_d, out_d, seq)
        if w.alpha_beta is not None:
            assign_alphas(requests, *w.alpha_beta, seed=np.random.SeedSequence([seed, 2]))
        return requests

    def build_policy(self, spec: PolicySpec, seed: int, base: Path | None = None):
        gm, bm = self.sim.gamma_max, self.sim.batch_max
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
        if spec.kind == "nightjar":
            return NightjarPolicy(gm, bm, self.prefill_table(base), seed=rng, arm_caps=spec.arm_caps)
        if spec.kind == "fixed_gamma":
            return FixedGamma(spec.gamma, gm)
        if spec.kind == "no_spec":
            return NoSpec()
        if spec.kind == "oracle":
            return Oracle(self.cost_params(), gm)
        if spec.kind == "epsilon_greedy":
            return EpsilonGreedy(gm, bm, spec.epsilon, spec.decay, seed=rng)
        if spec.kind == "ucb1":
            return UCB1(gm, bm, spec.c)
        if spec.kind == "linucb":
            return LinUCB(gm, bm, spec.alpha_ucb, spec.regularization)
        return DsdLike(self.cost_params(), gm, spec.initial_alpha, spec.ema_decay)


def _resolve(path: str, base: Path | None) -> Path:
    p = Path(path)
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(data)
