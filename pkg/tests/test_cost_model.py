import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nightjar.cost_model import (
    PRESETS,
    CostModelParams,
    PrefillCostTable,
    expected_goodput,
    expected_tokens,
    forward_latency,
    oracle_gamma,
    prefill_cost,
    sample_accepted,
    step_latency,
)

TABLE1 = [(128, 32, 17.87), (128, 64, 28.53), (256, 32, 20.65), (256, 64, 22.33), (512, 32, 24.30),
          (512, 64, 102.03)]

ROOF = CostModelParams(target_mem_time=0.005, target_compute_per_token=0.00001, draft_mem_time=0.001,
                       draft_compute_per_token=0.000001, fixed_overhead=0.0002, alpha=0.7)


def test_forward_latency_memory_bound():
    assert forward_latency(ROOF, 1, 1, "target") == pytest.approx(0.005 + 0.0002)


def test_forward_latency_compute_bound():
    assert forward_latency(ROOF, 1000, 1, "target") == pytest.approx(0.010 + 0.0002)


def test_forward_latency_crossover_at_500_tokens():
    assert forward_latency(ROOF, 500, 1, "target") == pytest.approx(0.005 + 0.0002)
    assert forward_latency(ROOF, 100, 5, "target") == pytest.approx(0.005 + 0.0002)
    assert forward_latency(ROOF, 501, 1, "target") > forward_latency(ROOF, 500, 1, "target")


@given(st.integers(1, 256), st.integers(1, 256), st.integers(1, 8), st.sampled_from(["draft", "target"]))
def test_forward_latency_monotone(b1, b2, k, model):
    lo, hi = sorted((b1, b2))
    assert forward_latency(ROOF, lo, k, model) <= forward_latency(ROOF, hi, k, model)
    assert forward_latency(ROOF, lo, k, model) <= forward_latency(ROOF, lo, k + 1, model)


def test_forward_latency_rejects_bad_args():
    with pytest.raises(ValueError):
        forward_latency(ROOF, 0, 1, "target")
    with pytest.raises(ValueError):
        forward_latency(ROOF, 1, 1, "tiny")


def test_step_latency_composition():
    assert step_latency(ROOF, 8, 0) == forward_latency(ROOF, 8, 1, "target")
    expect = 3 * forward_latency(ROOF, 8, 1, "draft") + forward_latency(ROOF, 8, 4, "target")
    assert step_latency(ROOF, 8, 3) == pytest.approx(expect)
    assert step_latency(ROOF, 8, 2, 0.02) == pytest.approx(step_latency(ROOF, 8, 2) + 0.02)


def test_step_latency_rejects_switch_into_autoregressive():
    with pytest.raises(ValueError):
        step_latency(ROOF, 8, 0, 0.02)


@pytest.mark.parametrize(
    "kwargs",
    [dict(alpha=1.5), dict(target_mem_time=-1.0), dict(draft_mem_time=1.0)],
)
def test_params_validation(kwargs):
    base = ROOF.to_dict()
    base.update(kwargs)
    with pytest.raises(ValueError):
        CostModelParams(**base)


def test_expected_tokens_closed_form():
    assert expected_tokens(0.0, 4) == 1.0
    assert expected_tokens(1.0, 3) == 4.0
    # 1 + 0.8 + 0.64 + 0.512
    assert expected_tokens(0.8, 3) == pytest.approx(2.952, abs=1e-12)


@given(st.floats(0.0, 0.999), st.integers(0, 10))
def test_expected_tokens_matches_series(alpha, gamma):
    assert expected_tokens(alpha, gamma) == pytest.approx(sum(alpha**i for i in range(gamma + 1)))


def test_sample_accepted_degenerate():
    rng = np.random.default_rng(0)
    assert sample_accepted(rng, 0.0, 3) == 0
    assert sample_accepted(rng, 1.0, 3) == 3
    assert np.all(sample_accepted(rng, 1.0, 4, size=50) == 4)
    assert np.all(sample_accepted(rng, 0.0, 4, size=50) == 0)
    with pytest.raises(ValueError):
        sample_accepted(rng, 0.5, 0)


def test_sample_accepted_matches_bernoulli_prefix_law():
    # Brute-force oracle: explicit Bernoulli trials, leading run of successes.
    rng = np.random.default_rng(1)
    trials = rng.random((200_000, 3)) < 0.8
    brute = np.where(trials.all(axis=1), 3, np.argmin(trials, axis=1))
    fast = sample_accepted(np.random.default_rng(2), 0.8, 3, size=200_000)
    for k in range(4):
        p_b, p_f = (brute == k).mean(), (fast == k).mean()
        sigma = math.sqrt(p_b * (1 - p_b) / 200_000) * math.sqrt(2)
        assert abs(p_b - p_f) < 4 * sigma


def test_sample_accepted_per_sequence_alpha():
    rng = np.random.default_rng(3)
    out = sample_accepted(rng, np.array([0.0, 1.0, 0.0, 1.0]), 5)
    assert out.tolist() == [0, 5, 0, 5]


def test_expected_goodput_autoregressive():
    assert expected_goodput(ROOF, 4, 0) == pytest.approx(4 / forward_latency(ROOF, 4, 1, "target"))


def _brute_goodputs(p, batch, gamma_max):
    # Independent re-derivation of the latency model.
    def fwd(mem, per_tok, k):
        return p.fixed_overhead + max(mem, per_tok * batch * k)

    out = []
    for g in range(gamma_max + 1):
        tokens = sum(p.alpha**i for i in range(g + 1))
        lat = fwd(p.target_mem_time, p.target_compute_per_token, g + 1)
        lat += g * fwd(p.draft_mem_time, p.draft_compute_per_token, 1) if g else 0.0
        out.append(batch * tokens / lat)
    return out


def test_memory_bound_interior_maximizer():
    p = CostModelParams(target_mem_time=0.030, target_compute_per_token=0.00002, draft_mem_time=0.002,
                        draft_compute_per_token=0.000001, fixed_overhead=0.0, alpha=0.8)
    brute = _brute_goodputs(p, 4, 5)
    best = int(np.argmax(brute))
    # Frozen from the brute-force evaluation above.
    assert best == 5
    assert oracle_gamma(p, 4, 5) == best
    for g in range(6):
        assert expected_goodput(p, 4, g) == pytest.approx(brute[g])


def test_compute_bound_maximizer_is_zero():
    p = CostModelParams(target_mem_time=0.004, target_compute_per_token=0.0005, draft_mem_time=0.002,
                        draft_compute_per_token=0.0001, fixed_overhead=0.001, alpha=0.6)
    brute = _brute_goodputs(p, 64, 5)
    assert int(np.argmax(brute)) == 0
    assert oracle_gamma(p, 64, 5) == 0


@pytest.mark.parametrize("name", ["7b-4090-like", "13b-a100-like"])
def test_presets_flip_regime(name):
    p = PRESETS[name]
    assert oracle_gamma(p, 1, 5) > 0
    # FixedGamma(3) beats autoregressive at B=1 and loses at B=64.
    assert expected_goodput(p, 1, 3) > expected_goodput(p, 1, 0)
    assert expected_goodput(p, 64, 3) < expected_goodput(p, 64, 0)


def test_crossover_existence_for_positive_slope():
    p = PRESETS["7b-4090-like"]
    flip = next(b for b in range(1, 4096) if oracle_gamma(p, b, 5) == 0)
    assert all(oracle_gamma(p, b, 5) == 0 for b in range(flip, flip + 200))


def test_compute_bound_preset_never_speculates():
    p = PRESETS["compute-bound"]
    assert all(oracle_gamma(p, b, 5) == 0 for b in range(1, 65))


# -- prefill table -----------------------------------------------------------

def test_default_table_matches_profile_bit_exactly():
    table = PrefillCostTable.default()
    for length, batch, ms in TABLE1:
        assert prefill_cost(table, length, batch) == ms / 1000.0
    assert sorted(table.rows()) == sorted(TABLE1)


@pytest.mark.parametrize(
    "length,batch,ms",
    [(200, 40, 22.33), (1, 1, 17.87), (129, 32, 20.65), (10_000, 10_000, 102.03), (300, 16, 24.30)],
)
def test_prefill_cost_ceiling_with_clamp(length, batch, ms):
    assert prefill_cost(PrefillCostTable.default(), length, batch) == ms / 1000.0


def test_prefill_cost_zero_lag_is_free():
    assert prefill_cost(PrefillCostTable.default(), 0, 64) == 0.0
    with pytest.raises(ValueError):
        prefill_cost(PrefillCostTable.default(), -1, 64)


def test_table_construction_errors(tmp_path):
    with pytest.raises(ValueError):
        PrefillCostTable([], [], [])
    with pytest.raises(ValueError):
        PrefillCostTable.from_rows([(128, 32, 1.0), (256, 64, 2.0)])
    with pytest.raises(ValueError):
        PrefillCostTable([256, 128], [32], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        PrefillCostTable([128], [32], [[0.0]])
    bad = tmp_path / "bad.csv"
    bad.write_text("len,b,cost\n1,2,3\n")
    with pytest.raises(ValueError):
        PrefillCostTable.from_csv(bad)
    bad.write_text("input_len,batch_size,cost_ms\n128,x,3\n")
    with pytest.raises(ValueError, match=":2:"):
        PrefillCostTable.from_csv(bad)


def test_table_csv_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("input_len,batch_size,cost_ms\n" + "".join(f"{l},{b},{c}\n" for l, b, c in TABLE1))
    assert PrefillCostTable.from_csv(path).rows() == PrefillCostTable.default().rows()
