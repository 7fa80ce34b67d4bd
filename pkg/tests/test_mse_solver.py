import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _models import random_model, zero_model
from seegame.game_core import ConvergenceError, GameModel, StrategyProfile, evaluate_policies, toy3
from seegame.mse_solver import (
    BudgetExceededError,
    certified_singleton,
    enumerate_stationary_mpe,
    follower_best_response,
    one_shot_deviation_check,
    solve_mse,
)


def test_toy3_collapse_profile_is_an_equilibrium_at_small_discount():
    model, _ = toy3(0.1)
    eq = enumerate_stationary_mpe(model)
    # myopic play: H everywhere, no effort, so the state slides into collapse
    assert eq.profiles() == [StrategyProfile((0, 1, 1), ((0,), (0, 0), (0, 0)))]


def test_toy3_has_no_pure_equilibrium_at_high_discount(toy):
    model, _ = toy
    assert len(enumerate_stationary_mpe(model)) == 0
    with pytest.raises(ConvergenceError):
        solve_mse(model, max_sweeps=3000)


def test_one_shot_gain_of_a_known_deviation(toy):
    model, _ = toy
    stay = StrategyProfile((0, 0, 0), ((0,), (0, 0), (0, 0)))
    rep = one_shot_deviation_check(model, stay)
    # at state 2 with L, effort 0: H then L-hold at 1 is worth 2 + 0.9 * 10 = 11 > 10
    assert rep.leader_gain[2] == pytest.approx(1.0, abs=1e-9)
    assert not rep.certified()


def test_follower_best_response_tie_goes_to_lowest_index():
    model, _ = zero_model()
    assert follower_best_response(model, np.zeros(2), 0, 1) == 0
    assert follower_best_response(model, np.array([0.0, 1.0]), 0, 1) == 1
    with pytest.raises(ValueError):
        follower_best_response(model, np.array([np.nan, 0.0]), 0, 0)
    with pytest.raises(ValueError):
        follower_best_response(model, np.zeros(2), 0, 5)


def test_zero_payoff_model_every_profile_is_an_equilibrium():
    model, _ = zero_model()
    eq = enumerate_stationary_mpe(model)
    assert len(eq) == model.profile_space_size()


def test_budget_is_enforced(toy):
    model, _ = toy
    with pytest.raises(BudgetExceededError):
        enumerate_stationary_mpe(model, budget=10)


def test_certified_singleton_rejects_non_equilibria(toy):
    model, _ = toy
    with pytest.raises(ValueError, match="not an equilibrium"):
        certified_singleton(model, StrategyProfile((0, 0, 0), ((0,), (0, 0), (0, 0))))


def test_solve_mse_on_myopic_toy3():
    model, _ = toy3(0.1)
    prof, values = solve_mse(model)
    assert prof in enumerate_stationary_mpe(model)
    assert values.allclose(evaluate_policies(model, prof, method="direct"), atol=1e-12)


def test_single_state_game_matches_stage_argmax():
    # one state, the follower's effort does not move anything: stage best replies
    model = GameModel.from_functions(
        states=[0],
        leader_actions=[[0, 1]],
        follower_actions=[[0, 1, 2]],
        transition=lambda s, x, e: {0: 1.0},
        payoff_x=lambda s, x, e: [[1, 0, 0], [0, 0, 3]][x][e],
        payoff_e=lambda s, x, e: [[2, 1, 0], [0, 0, 1]][x][e],
        discount=0.5,
    )
    eq = enumerate_stationary_mpe(model)
    assert eq.profiles() == [StrategyProfile((1,), ((0, 2),))]
    prof, values = solve_mse(model)
    assert prof == eq.profiles()[0]
    assert values.w_x[0] == pytest.approx(6.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_factorized_enumeration_matches_brute_force(seed):
    model = random_model(np.random.default_rng(seed), max_states=3, max_leader=2, max_follower=3)
    fast = enumerate_stationary_mpe(model)
    slow = enumerate_stationary_mpe(model, method="brute")
    assert fast.profiles() == slow.profiles()
    for m in fast:
        assert one_shot_deviation_check(model, m.profile).max_gain <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_solver_output_is_enumerated(seed):
    model = random_model(np.random.default_rng(seed))
    try:
        prof, _ = solve_mse(model, max_sweeps=2000)
    except ConvergenceError:
        return
    assert prof in enumerate_stationary_mpe(model)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_repair_phase_output_is_enumerated(seed):
    model = random_model(np.random.default_rng(seed))
    try:
        prof, _ = solve_mse(model, max_sweeps=1, repair_steps=500)
    except ConvergenceError:
        return
    assert prof in enumerate_stationary_mpe(model)


def test_without_sweeps_or_repair_the_solver_gives_up():
    model, _ = toy3(0.1)
    with pytest.raises(ConvergenceError):
        solve_mse(model, max_sweeps=1, repair_steps=0)


def test_warm_start_from_the_fixed_point_returns_it():
    model, _ = toy3(0.1)
    prof, vals = solve_mse(model)
    again, _ = solve_mse(model, max_sweeps=3, repair_steps=0, init=vals)
    assert again == prof
