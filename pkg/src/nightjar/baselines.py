"""Baseline speculative-length policies sharing Nightjar's select/observe surface.

Every policy exposes ``select(ctx) -> gamma`` and
``observe(batch, gamma, reward, acceptance=None)``. ``acceptance`` is an
optional ``(accepted_tokens, acceptance_trials)`` pair from the step; only
the DSD-like policy reads it.
"""

from __future__ import annotations

import math

import numpy as np

from .cost_model import CostModelParams, expected_goodput, expected_tokens, step_latency
from .policy import ArmStats, SelectionContext


class MissingCostModelError(ValueError):
    pass


def _check_reward(reward: float) -> None:
    if reward < 0:
        raise ValueError(f"reward must be >= 0, got {reward}")


class FixedGamma:
    def __init__(self, gamma: int, gamma_max: int | None = None) -> None:
        if gamma < 1 or (gamma_max is not None and gamma > gamma_max):
            raise ValueError(f"fixed gamma must lie in 1..gamma_max, got {gamma}")
        self.gamma = gamma
        self.name = f"fixed_gamma_{gamma}"

    def select(self, ctx: SelectionContext) -> int:
        return self.gamma

    def observe(self, batch: int, gamma: int, reward: float, acceptance=None) -> None:
        _check_reward(reward)


class NoSpec:
    name = "no_spec"

    def select(self, ctx: SelectionContext) -> int:
        return 0

    def observe(self, batch: int, gamma: int, reward: float, acceptance=None) -> None:
        _check_reward(reward)


class Oracle:
    """Picks the arm with the best noise-free goodput under the true cost model."""

    name = "oracle"

    def __init__(self, params: CostModelParams | None, gamma_max: int) -> None:
        if params is None:
            raise MissingCostModelError("oracle policy needs a cost model")
        self.params = params
        self.gamma_max = gamma_max
        self._cache: dict[int, int] = {}

    def select(self, ctx: SelectionContext) -> int:
        b = ctx.batch_size
        if b not in self._cache:
            goodputs = [expected_goodput(self.params, b, g) for g in range(self.gamma_max + 1)]
            self._cache[b] = int(np.argmax(goodputs))
        return self._cache[b]

    def observe(self, batch: int, gamma: int, reward: float, acceptance=None) -> None:
        _check_reward(reward)


class _PerBatchTable:
    def __init__(self, gamma_max: int, batch_max: int) -> None:
        self.gamma_max = gamma_max
        self.batch_max = batch_max
        self.arms = {b: [ArmStats() for _ in range(gamma_max + 1)] for b in range(1, batch_max + 1)}
        self.plays = {b: 0 for b in range(1, batch_max + 1)}

    def observe(self, batch: int, gamma: int, reward: float, acceptance=None) -> None:
        _check_reward(reward)
        self.arms[batch][gamma].update(reward)
        self.plays[batch] += 1


class EpsilonGreedy(_PerBatchTable):
    """Per-batch-size epsilon-greedy; epsilon shrinks as eps / (1 + decay * plays)."""

    name = "epsilon_greedy"

    def __init__(self, gamma_max: int, batch_max: int, epsilon: float = 0.1, decay: float = 0.0,
                 seed=None) -> None:
        if not 0 < epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if decay < 0:
            raise ValueError("decay must be >= 0")
        super().__init__(gamma_max, batch_max)
        self.epsilon = epsilon
        self.decay = decay
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def select(self, ctx: SelectionContext) -> int:
        b = ctx.batch_size
        eps = self.epsilon / (1.0 + self.decay * self.plays[b])
        arms = self.arms[b]
        if self.rng.random() < eps or all(a.visit_count == 0 for a in arms):
            return int(self.rng.integers(0, self.gamma_max + 1))
        best = max(range(self.gamma_max + 1),
                   key=lambda g: (arms[g].visit_count > 0, arms[g].mean_goodput, -g))
        return best


class UCB1(_PerBatchTable):
    """Per-batch-size UCB1.

    Rewards are goodputs in tokens/s, so the confidence radius is multiplied by
    the running mean of all rewards seen; ``c`` is then dimensionless.
    """

    name = "ucb1"

    def __init__(self, gamma_max: int, batch_max: int, c: float = 1.0) -> None:
        if c <= 0:
            raise ValueError("c must be positive")
        super().__init__(gamma_max, batch_max)
        self.c = c
        self._reward_scale = ArmStats()

    def observe(self, batch: int, gamma: int, reward: float, acceptance=None) -> None:
        super().observe(batch, gamma, reward)
        self._reward_scale.update(reward)

    def select(self, ctx: SelectionContext) -> int:
        b = ctx.batch_size
        arms = self.arms[b]
        for g, a in enumerate(arms):
            if a.visit_count == 0:
                return g
        log_t = math.log(self.plays[b])
        scale = self.c * self._reward_scale.mean_goodput
        ucb = [a.mean_goodput + scale * math.sqrt(log_t / a.visit_count) for a in arms]
        return int(np.argmax(ucb))


class LinUCB:
    """Disjoint LinUCB over the context ``[1, B / B_max]``."""

    name = "linucb"

    def __init__(self, gamma_max: int, batch_max: int, alpha_ucb: float = 1.0,
                 regularization: float = 1.0) -> None:
        if alpha_ucb <= 0 or regularization <= 0:
            raise ValueError("alpha_ucb and regularization must be positive")
        self.gamma_max = gamma_max
        self.batch_max = batch_max
        self.alpha_ucb = alpha_ucb
        self.regularization = regularization
        self.design = [regularization * np.eye(2) for _ in range(gamma_max + 1)]
        self.response = [np.zeros(2) for _ in range(gamma_max + 1)]
        self._reward_scale = ArmStats()

    def context(self, batch: int) -> np.ndarray:
        return np.array([1.0, batch / self.batch_max])

    def select(self, ctx: SelectionContext) -> int:
        x = self.context(ctx.batch_size)
        scale = self.alpha_ucb * self._reward_scale.mean_goodput
        best, best_v = 0, -math.inf
        for g in range(self.gamma_max + 1):
            a_inv = np.linalg.inv(self.design[g])
            theta = a_inv @ self.response[g]
            v = float(theta @ x) + scale * math.sqrt(float(x @ a_inv @ x))
            if v > best_v:
                best, best_v = g, v
        return best

    def observe(self, batch: int, gamma: int, reward: float, acceptance=None) -> None:
        _check_reward(reward)
        x = self.context(batch)
        self.design[gamma] += np.outer(x, x)
        self.response[gamma] += reward * x
        self._reward_scale.update(reward)


def dsd_predicted_goodput(alpha: float, batch: int, gamma: int, params: CostModelParams) -> float:
    """Goodput predicted from an estimated acceptance rate and the latency model."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return batch * expected_tokens(alpha, gamma) / step_latency(params, batch, gamma)


class DsdLike:
    """Model-based goodput maximizer fed by a running acceptance-rate estimate.

    The estimate is the censored-geometric ratio accepted / (accepted + rejections)
    with numerator and denominator each tracked as an EMA. It only moves on
    steps that speculate, which is what can lock it at gamma = 0.
    """

    name = "dsd_like"

    def __init__(self, params: CostModelParams | None, gamma_max: int,
                 initial_alpha: float = 0.5, decay: float = 0.05) -> None:
        if params is None:
            raise MissingCostModelError("dsd_like policy needs a cost model")
        if not 0.0 <= initial_alpha <= 1.0:
            raise ValueError("initial_alpha must lie in [0, 1]")
        if not 0.0 < decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        self.params = params
        self.gamma_max = gamma_max
        self.decay = decay
        self._accepted = initial_alpha
        self._trials = 1.0

    @property
    def running_alpha(self) -> float:
        return self._accepted / self._trials

    def select(self, ctx: SelectionContext) -> int:
        alpha = self.running_alpha
        best, best_v = 0, -math.inf
        for g in range(self.gamma_max + 1):
            v = dsd_predicted_goodput(alpha, ctx.batch_size, g, self.params)
            if v > best_v:
                best, best_v = g, v
        return best

    def observe(self, batch: int, gamma: int, reward: float, acceptance=None) -> None:
        _check_reward(reward)
        if gamma == 0 or acceptance is None:
            return
        accepted, trials = acceptance
        if trials <= 0:
            return
        d = self.decay
        self._accepted = (1 - d) * self._accepted + d * accepted
        self._trials = (1 - d) * self._trials + d * trials
