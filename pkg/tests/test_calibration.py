import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from housing_abm.behavior import ParameterVector
from housing_abm.calibration import (
    SEARCH_SPACE, CalibrationProblem, CalibrationResult, DegenerateSplit, NoSurvivingTrial, Trial,
    apply_global_constraint, optimize, peak_predicate, random_search, read_trials, tpe_minimize,
    train_test_split,
)
from housing_abm.engine import run

TARGET = {"h": 0.3, "beta": -4.0, "alpha": 0.7}


def surrogate(x):
    # separable bowl in normalised coordinates
    return sum(((x[k] - TARGET[k]) / (hi - lo)) ** 2 for k, (lo, hi) in SEARCH_SPACE.items())


def test_search_space():
    assert SEARCH_SPACE == {"h": (-1.0, 1.0), "beta": (-10.0, 10.0), "alpha": (0.0, 1.0)}


def test_one_trial():
    xs, ys = tpe_minimize(surrogate, SEARCH_SPACE, 1, seed=0)
    assert len(xs) == 1 and ys[0] == surrogate(xs[0])


def test_tpe_recovers_surrogate_minimum():
    xs, ys = tpe_minimize(surrogate, SEARCH_SPACE, 300, seed=0)
    best = xs[int(np.argmin(ys))]
    for k, (lo, hi) in SEARCH_SPACE.items():
        assert abs(best[k] - TARGET[k]) / (hi - lo) < 0.15


def test_tpe_beats_random_start():
    xs, ys = tpe_minimize(surrogate, SEARCH_SPACE, 120, seed=2)
    assert min(ys[20:]) < min(ys[:20])


def test_tpe_deterministic():
    assert tpe_minimize(surrogate, SEARCH_SPACE, 40, seed=5) == tpe_minimize(surrogate, SEARCH_SPACE, 40, seed=5)


def test_tpe_stays_in_bounds():
    xs, _ = tpe_minimize(lambda x: -x["alpha"], SEARCH_SPACE, 60, seed=1)
    for x in xs:
        for k, (lo, hi) in SEARCH_SPACE.items():
            assert lo <= x[k] <= hi


@pytest.mark.parametrize("n,ratio,sizes", [(48, 0.75, (36, 12)), (42, 30 / 42, (30, 12)), (2, 0.5, (1, 1))])
def test_split_examples(n, ratio, sizes):
    a, b = train_test_split(np.arange(n), ratio)
    assert (a.size, b.size) == sizes
    assert np.array_equal(np.concatenate([a, b]), np.arange(n))


def test_split_degenerate():
    with pytest.raises(DegenerateSplit):
        train_test_split(np.arange(1), 0.5)
    with pytest.raises(DegenerateSplit):
        train_test_split(np.arange(10), 1.0)


def test_peak_examples():
    assert peak_predicate([1, 3, 2])
    assert not peak_predicate([1, 2, 3])
    assert not peak_predicate([3, 2, 1])
    assert not peak_predicate([1, 2])
    assert peak_predicate([1, 1, 5, 1, 1])


def trial(i, loss, series):
    return Trial(i, ParameterVector(), loss, (loss,), tuple(series))


def test_constraint_can_pick_higher_loss():
    trials = [trial(0, 1.0, [1, 2, 3]), trial(1, 2.0, [1, 3, 1]), trial(2, 3.0, [1, 4, 1])]
    assert apply_global_constraint(trials, "none").index == 0
    assert apply_global_constraint(trials, "peak").index == 1


def test_no_survivor_warns():
    trials = [trial(0, 2.0, [1, 2, 3]), trial(1, 1.0, [3, 2, 1])]
    with pytest.warns(NoSurvivingTrial):
        assert apply_global_constraint(trials, "peak").index == 1


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.lists(st.integers(0, 9), min_size=3, max_size=7)),
                min_size=1, max_size=15))
def test_constraint_properties(items):
    trials = [trial(i, loss, s) for i, (loss, s) in enumerate(items)]
    survivors = [t for t in trials if peak_predicate(t.series)]
    if survivors:
        pick = apply_global_constraint(trials, "peak")
        assert peak_predicate(pick.series)
        assert pick.loss == min(t.loss for t in survivors)
        assert pick.loss >= min(t.loss for t in trials)


def test_trials_roundtrip(tmp_path):
    res = CalibrationResult([trial(0, 1.5, [1.0, 2.0]), trial(1, 0.5, [3.0])])
    p = res.write_jsonl(tmp_path / "t.jsonl", {"seed": 1})
    back = read_trials(p)
    assert back == res.trials
    assert res.best.index == 1


def test_problem_loss_is_mean_of_repeats(tiny_scenario):
    actual = run(tiny_scenario, ParameterVector(), seed=99).region_median
    prob = CalibrationProblem(tiny_scenario, actual, 6, repeats=2, seed=1)
    t = prob.trial(0, ParameterVector(h=0.0, beta=-1.0, alpha=0.5))
    assert len(t.losses) == 2
    assert t.loss == pytest.approx(np.mean(t.losses))
    assert len(t.series) == 6
    # common random numbers: same vector, same losses
    assert prob.trial(1, t.params).losses == t.losses


def test_problem_validation(tiny_scenario):
    with pytest.raises(DegenerateSplit):
        CalibrationProblem(tiny_scenario, np.ones(4), 6)
    with pytest.raises(ValueError):
        CalibrationProblem(tiny_scenario, np.ones(8), 6, repeats=0)


def test_optimize_and_random_search(tiny_scenario):
    actual = run(tiny_scenario, ParameterVector(), seed=99).region_median
    prob = CalibrationProblem(tiny_scenario, actual, 6, repeats=1, seed=1)
    seen = []
    res = optimize(prob, 4, seed=0, callback=seen.append)
    assert [t.index for t in res.trials] == [0, 1, 2, 3] and seen == res.trials
    rs = random_search(prob, 2, seed=0)
    assert len(rs) == 2 and all(np.isfinite(t.loss) for t in rs)
