import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _models import random_model
from seegame.game_core import (
    ConvergenceError,
    GameModel,
    StrategyProfile,
    ViabilitySet,
    evaluate_policies,
    induced_kernel,
    simulate_trajectory,
    toy3,
    validate_model,
)


def test_toy3_structure(toy):
    model, V = toy
    assert model.n_states == 3
    assert V.members == {1, 2}
    assert list(model.n_leader) == [1, 2, 2]
    assert list(model.n_follower) == [1, 2, 2]
    assert model.transitions(1, 1, 0) == {0: 1.0}
    assert model.transitions(1, 0, 1) == {2: 1.0}
    assert model.transitions(2, 0, 1) == {2: 1.0}
    assert model.transitions(2, 1, 1) == {2: 1.0}
    assert model.payoff_x[2, 1, 0] == 2.0
    assert model.payoff_e[2, 1, 1] == pytest.approx(0.5)
    assert model.payoff_x[0, 0, 0] == 0.0 and model.payoff_e[0, 0, 0] == 0.0
    assert validate_model(model).ok


def test_toy3_values_match_hand_computation(toy):
    model, _ = toy
    # L everywhere with no effort: stay put forever
    stay = StrategyProfile((0, 0, 0), ((0,), (0, 0), (0, 0)))
    v = evaluate_policies(model, stay, method="direct")
    np.testing.assert_allclose(v.w_x, [0, 10, 10], atol=1e-12)
    np.testing.assert_allclose(v.w_e, [0, 10, 20], atol=1e-12)
    # H at the top drops the state to 1, where L holds it
    drop = StrategyProfile((0, 0, 1), ((0,), (0, 0), (0, 0)))
    v = evaluate_policies(model, drop, method="direct")
    np.testing.assert_allclose(v.w_x, [0, 10, 11], atol=1e-12)
    np.testing.assert_allclose(v.w_e, [0, 10, 10], atol=1e-12)


def test_iterate_and_direct_agree_and_satisfy_recursion(toy):
    model, _ = toy
    prof = StrategyProfile((0, 1, 0), ((0,), (1, 0), (0, 1)))
    it = evaluate_policies(model, prof, tol=1e-12)
    di = evaluate_policies(model, prof, method="direct")
    assert it.allclose(di, atol=1e-10)
    P = induced_kernel(model, prof)
    s = np.arange(3)
    x = np.array(prof.leader)
    e = np.array([prof.follower[i][x[i]] for i in s])
    np.testing.assert_allclose(di.w_x, model.payoff_x[s, x, e] + 0.9 * P @ di.w_x, atol=1e-12)


def test_evaluate_rejects_bad_arguments(toy):
    model, _ = toy
    prof = StrategyProfile.constant(model, 0, 0)
    with pytest.raises(ValueError):
        evaluate_policies(model, prof, tol=0)
    with pytest.raises(ValueError):
        evaluate_policies(model, prof, method="magic")
    with pytest.raises(ConvergenceError):
        evaluate_policies(model, prof, tol=1e-14, max_sweeps=2)


def test_model_validation_errors():
    with pytest.raises(ValueError, match="discount"):
        toy3(1.0)
    with pytest.raises(ValueError, match="nonempty"):
        GameModel.from_functions([0], [[]], [[0]], lambda s, x, e: {0: 1.0}, lambda *a: 0, lambda *a: 0, 0.5)
    model, _ = toy3()
    bad = model.next_prob.copy()
    bad[1, 0, 0, 0] = 0.7
    broken = GameModel(
        model.states, model.leader_actions, model.follower_actions, model.next_state, bad,
        model.payoff_x, model.payoff_e, 0.9, model.payoff_bound,
    )
    report = validate_model(broken)
    assert not report.checks["kernel_normalized"]
    assert (1, 0, 0) in report.failures["kernel_normalized"]
    assert "FAIL" in report.summary()


def test_profile_validation(toy):
    model, _ = toy
    with pytest.raises(ValueError):
        StrategyProfile((0, 2, 0), ((0,), (0, 0), (0, 0))).validate(model)
    with pytest.raises(ValueError):
        StrategyProfile((0, 0, 0), ((0,), (0,), (0, 0))).validate(model)
    with pytest.raises(ValueError):
        StrategyProfile((0, 0), ((0,), (0, 0))).validate(model)


def test_profile_space_size(toy):
    model, _ = toy
    # state 0: 1 * 1**1, states 1 and 2: 2 * 2**2 each
    assert model.profile_space_size() == 64


def test_viability_set_requires_members_and_safe_actions():
    with pytest.raises(ValueError):
        ViabilitySet(frozenset())
    with pytest.raises(ValueError, match="safe action"):
        ViabilitySet(frozenset({1, 2}), {1: 0})


def test_fingerprint_stable_and_sensitive(toy):
    model, _ = toy
    assert model.fingerprint() == toy3(0.9)[0].fingerprint()
    assert model.fingerprint() != toy3(0.8)[0].fingerprint()


def test_simulation_reproducible_with_seed():
    rng = np.random.default_rng(3)
    model = random_model(rng, max_states=4, max_support=3)
    prof = StrategyProfile.constant(model, 0, 0)
    a = simulate_trajectory(model, prof, 0, 40, seed=11)
    b = simulate_trajectory(model, prof, 0, 40, seed=11)
    assert a == b
    with pytest.raises(ValueError):
        simulate_trajectory(model, prof, 0, 0)


def test_deterministic_path_ignores_seed(toy):
    model, _ = toy
    prof = StrategyProfile((0, 1, 1), ((0,), (0, 0), (0, 0)))
    path = simulate_trajectory(model, prof, 2, 4, seed=1)
    assert [st.state for st in path] == [2, 1, 0, 0]
    assert path == simulate_trajectory(model, prof, 2, 4, seed=99)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_random_models_evaluation_routes_agree(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, max_support=3)
    lead = [int(rng.integers(model.n_leader[s])) for s in range(model.n_states)]
    fol = [[int(rng.integers(model.n_follower[s])) for _ in range(model.n_leader[s])] for s in range(model.n_states)]
    prof = StrategyProfile.from_arrays(lead, fol)
    P = induced_kernel(model, prof)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    it = evaluate_policies(model, prof, tol=1e-11)
    di = evaluate_policies(model, prof, method="direct")
    assert it.allclose(di, atol=1e-9)
