import numpy as np
import pytest
from fractions import Fraction
from scipy.stats import kstest

from app.distributions import BetaLaw, BetaParams, MixtureSpec
from app.errors import RunError
from app.stats import limiting_value_gof
from app import urn
from app.urn import (
    MAX_TOTAL, RunConfig, UrnState, advance, coherent_ensemble, ensemble,
    expected_posterior_mean_after_step, limiting_values, posterior_mean, run, run_batch,
    sample_initial_populations, step_probability_blue,
)
from utils.streams import derive_stream


def test_step_probability_examples():
    assert step_probability_blue(UrnState(blue=3, red=3)) == 0.5
    assert step_probability_blue(UrnState(blue=0, red=0)) == 0.5
    assert step_probability_blue(UrnState(blue=1, red=0)) == pytest.approx(2 / 3)


def test_step_probability_with_bias():
    state = RunConfig(initial_blue=0, initial_red=0, epsilon=0.2).initial_state()
    assert step_probability_blue(state) == pytest.approx(1.2 / 2.2)


def test_advance_examples():
    state = UrnState(blue=3, red=3)
    assert advance(state, lambda: 0.3) == UrnState(blue=4, red=3, step=1)
    assert advance(state, lambda: 0.7) == UrnState(blue=3, red=4, step=1)
    # u < P(blue) picks blue, so u == P(blue) goes red
    assert advance(state, lambda: 0.5).red == 4


def test_conservation():
    rng = np.random.default_rng(5)
    state = UrnState(blue=2, red=7)
    for k in range(1, 200):
        state = advance(state, rng.random)
        assert state.blue + state.red == 9 + k
        assert state.step == k


def test_empty_urn_fraction_is_half():
    assert UrnState(blue=0, red=0).fraction == 0.5


def test_negative_bias_must_keep_blue_weight_positive():
    with pytest.raises(ValueError):
        UrnState(blue=0, red=0, bias=-1.0)


def test_run_is_deterministic():
    cfg = RunConfig(initial_blue=3, initial_red=3, steps=500, seed=42)
    a, b = run(cfg), run(cfg)
    assert np.array_equal(a.fractions, b.fractions)
    assert a.final == b.final


def test_run_matches_repeated_advance():
    cfg = RunConfig(initial_blue=1, initial_red=2, steps=300, seed=9, run_index=4, epsilon=0.3)
    rng = derive_stream(cfg.seed, cfg.run_index, "urn")
    state = cfg.initial_state()
    fractions = []
    for _ in range(cfg.steps):
        state = advance(state, lambda: float(rng.random()))
        fractions.append(state.blue / state.total)
    traj = run(cfg)
    assert traj.final.blue == state.blue
    assert traj.final.red == state.red
    assert np.array_equal(traj.fractions, np.array(fractions))


def test_record_stride_keeps_final_step():
    traj = run(RunConfig(steps=10, record_stride=3, seed=1))
    assert traj.steps.tolist() == [1, 4, 7, 10]
    assert len(traj.fractions) == 4
    assert traj.limiting_value == traj.final.fraction


def test_single_step_trajectory_rows():
    traj = run(RunConfig(initial_blue=3, initial_red=3, steps=1, seed=2))
    rows = traj.rows()
    assert len(rows) == 2
    assert rows[0] == (0, 0.5)
    assert rows[1][1] in (4 / 7, 3 / 7)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(steps=0)
    with pytest.raises(ValueError):
        RunConfig(initial_blue=10, steps=MAX_TOTAL)
    with pytest.raises(ValueError):
        RunConfig(seed=-1)


def test_martingale_exact():
    for state in [UrnState(blue=0, red=0), UrnState(blue=3, red=3), UrnState(blue=7, red=2),
                  UrnState(blue=1, red=0, bias=0.5)]:
        assert expected_posterior_mean_after_step(state) == posterior_mean(state)
    assert posterior_mean(UrnState(blue=3, red=3)) == Fraction(1, 2)


def test_run_batch_empty_is_error():
    with pytest.raises(ValueError):
        run_batch([])


@pytest.mark.parametrize("workers,block_size", [(1, 1), (1, 3), (2, 1), (2, 1000)])
def test_run_batch_matches_serial(workers, block_size):
    configs = ensemble(RunConfig(initial_blue=3, initial_red=3, steps=200, record_stride=7, seed=11), 4)
    serial = [run(c) for c in configs]
    batch = run_batch(configs, workers=workers, block_size=block_size)
    for a, b in zip(serial, batch):
        assert a.run_index == b.run_index
        assert np.array_equal(a.fractions, b.fractions)
        assert a.final == b.final


def test_run_batch_mixed_lengths_keep_order():
    configs = [RunConfig(steps=50, seed=3, run_index=0), RunConfig(steps=80, seed=3, run_index=1),
               RunConfig(steps=50, seed=3, run_index=2)]
    batch = run_batch(configs, block_size=2)
    assert [t.final.step for t in batch] == [50, 80, 50]
    assert np.array_equal(batch[0].fractions, run(configs[0]).fractions)


def test_duplicated_configs_give_identical_trajectories():
    cfg = RunConfig(steps=100, seed=8, run_index=3)
    a, b = run_batch([cfg, cfg])
    assert np.array_equal(a.fractions, b.fractions)


def test_limiting_values_match_trajectories():
    configs = ensemble(RunConfig(steps=120, seed=4), 6)
    values = limiting_values(configs, block_size=4)
    expected = [t.limiting_value for t in run_batch(configs)]
    assert values.tolist() == expected


def test_limiting_values_independent_of_workers():
    configs = ensemble(RunConfig(steps=100, seed=21), 12)
    assert np.array_equal(limiting_values(configs, workers=1, block_size=5),
                          limiting_values(configs, workers=2, block_size=2))


def test_run_error_carries_run_index():
    err = RunError(7, ZeroDivisionError("boom"))
    assert err.run_index == 7
    assert "7" in str(err)


def test_run_batch_names_the_failing_run(monkeypatch):
    simulate = urn._simulate_block

    def failing(block):
        if 5 in block.run_indices:
            raise FloatingPointError("overflow")
        return simulate(block)

    monkeypatch.setattr(urn, "_simulate_block", failing)
    with pytest.raises(RunError) as info:
        run_batch(ensemble(RunConfig(steps=20, seed=3), 8), block_size=4)
    assert info.value.run_index == 5
    assert isinstance(info.value.cause, FloatingPointError)


def test_coherent_inputs_are_deterministic_per_run():
    spec = MixtureSpec(lambda_min=1.0, lambda_max=3.0)
    assert sample_initial_populations(spec, 5, 2) == sample_initial_populations(spec, 5, 2)
    configs = coherent_ensemble(RunConfig(steps=10, seed=5), spec, 3)
    assert [c.run_index for c in configs] == [0, 1, 2]
    assert (configs[2].initial_blue, configs[2].initial_red) == sample_initial_populations(spec, 5, 2)


def test_vacuum_coherent_inputs_are_empty():
    assert sample_initial_populations(MixtureSpec(), 1, 0) == (0, 0)


def test_early_fluctuation_late_settling():
    trajectories = run_batch(ensemble(RunConfig(initial_blue=3, initial_red=3, steps=10_000, seed=1), 4))
    limits = set()
    for traj in trajectories:
        steps = np.diff(traj.fractions)
        assert np.var(steps[:1000]) > np.var(steps[-1000:])
        limits.add(round(traj.limiting_value, 6))
    assert len(limits) == 4


def test_empty_urn_ensemble_is_uniform():
    values = limiting_values(ensemble(RunConfig(steps=2000, seed=17), 20_000))
    assert kstest(values, "uniform").pvalue >= 0.01


def test_seeded_urn_ensemble_matches_beta_4_4():
    values = limiting_values(ensemble(RunConfig(initial_blue=3, initial_red=3, steps=2000, seed=23), 20_000))
    n = len(values)
    assert limiting_value_gof(values, BetaLaw(BetaParams(4, 4))).passed
    assert abs(values.mean() - 0.5) <= 3 * np.sqrt(1 / 36 / n)
    # excess kurtosis of Beta(4, 4) is -6/11
    var_sd = np.sqrt((3 - 6 / 11 - 1) / n) / 36
    assert abs(values.var(ddof=1) - 1 / 36) <= 3 * var_sd


@pytest.mark.slow
def test_acceptance_size_uniform_ensemble():
    values = limiting_values(ensemble(RunConfig(steps=10_000, seed=2), 100_000))
    assert kstest(values, "uniform").pvalue >= 0.01
    assert limiting_value_gof(values, BetaLaw(BetaParams(1, 1))).passed


@pytest.mark.slow
def test_acceptance_size_seeded_ensemble():
    values = limiting_values(ensemble(RunConfig(initial_blue=3, initial_red=3, steps=10_000, seed=3), 100_000))
    n = len(values)
    assert limiting_value_gof(values, BetaLaw(BetaParams(4, 4))).passed
    assert abs(values.mean() - 0.5) <= 3 * np.sqrt(1 / 36 / n)
    assert abs(values.var(ddof=1) - 1 / 36) <= 3 * np.sqrt((3 - 6 / 11 - 1) / n) / 36
