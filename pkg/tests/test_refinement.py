import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _models import indifferent_follower, random_model, steer
from seegame.game_core import GameModel, StrategyProfile, ValuePair, ViabilitySet, toy3
from seegame.mse_solver import DeviationReport, Equilibrium, EquilibriumSet, enumerate_stationary_mpe
from seegame.refinement import (
    NoSEEError,
    OutsideOption,
    PenaltySpec,
    PenaltyThresholdError,
    check_safe_action,
    check_viability,
    exit_mass,
    filter_viable,
    find_penalty_threshold,
    ir_filter,
    penalize,
    renegotiation_eliminations,
    renegotiation_proof_set,
    run_pipeline,
    select_see,
)

COLLAPSE = StrategyProfile((0, 1, 1), ((0,), (0, 0), (0, 0)))


def _fake_set(values: dict) -> EquilibriumSet:
    """Equilibrium set with prescribed value tables (deviation data irrelevant here)."""
    rep = DeviationReport(np.zeros(1), np.zeros((1, 1)), 0.0)
    members = tuple(
        Equilibrium(p, ValuePair(np.array(wx, float), np.array(we, float)), rep) for p, (wx, we) in sorted(values.items())
    )
    return EquilibriumSet(members, "test", exhaustive=True)


def test_exit_mass_and_viability_on_toy3(toy):
    model, V = toy
    mass = exit_mass(model, V)
    assert mass[1, 1, 0] == 1.0
    assert mass[1, 1, 1] == 0.0 and mass[2, 1, 0] == 0.0
    assert not check_viability(model, COLLAPSE, V)
    assert check_viability(model, StrategyProfile((0, 0, 1), ((0,), (0, 0), (0, 0))), V)
    assert check_safe_action(model, V, COLLAPSE)


def test_penalize_charges_exit_probability_only(toy):
    model, V = toy
    game = penalize(model, PenaltySpec(5.0, V))
    assert game.payoff_x[1, 1, 0] == pytest.approx(2.0 - 5.0)
    assert game.payoff_x[1, 1, 1] == pytest.approx(2.0)
    np.testing.assert_array_equal(game.payoff_e, model.payoff_e)
    assert penalize(model, PenaltySpec(0.0, V)) is model
    with pytest.raises(ValueError):
        PenaltySpec(-1.0, V)


def test_threshold_on_myopic_toy3():
    model, V = toy3(0.1)
    res = find_penalty_threshold(model, V)
    # collapse pays 2 now versus holding at 1 (worth 1 now, 0.1 later);
    # the penalty must exceed the one-period gain from H at state 1
    assert 0 < res.threshold < np.inf
    assert res.threshold <= res.analytic_bound
    assert res.safe_action_certified
    for m in (res.threshold, 2 * res.threshold):
        game = penalize(model, PenaltySpec(m, V))
        eq = enumerate_stationary_mpe(game)
        assert len(eq) > 0
        assert all(check_viability(game, p, V) for p in eq.profiles())
    below = penalize(model, PenaltySpec(0.5 * res.threshold, V))
    assert not all(check_viability(below, p, V) for p in enumerate_stationary_mpe(below).profiles())


def test_threshold_needs_safe_action(toy):
    model, V = toy
    with pytest.raises(ValueError):
        find_penalty_threshold(model, ViabilitySet(V.members))


def test_threshold_search_gives_up_at_the_cap():
    # every action at state 1 leads to collapse, so no penalty can keep play inside V
    trap = GameModel.from_functions(
        states=[0, 1],
        leader_actions=[[0], [0]],
        follower_actions=[[0], [0]],
        transition=lambda s, x, e: {0: 1.0},
        payoff_x=lambda s, x, e: 1.0,
        payoff_e=lambda s, x, e: 0.0,
        discount=0.5,
        initial_state=1,
    )
    with pytest.raises(PenaltyThresholdError):
        find_penalty_threshold(trap, ViabilitySet(frozenset({1}), {1: 0}), m_cap=64.0)


def test_filter_viable_removes_collapse_at_zero_penalty():
    model, V = toy3(0.1)
    eq = enumerate_stationary_mpe(model)
    assert COLLAPSE in eq
    assert COLLAPSE not in filter_viable(eq, model, V)


def test_filter_viable_with_everything_viable_is_identity(toy):
    model, _ = toy3(0.5)
    eq = enumerate_stationary_mpe(model)
    assert filter_viable(eq, model, ViabilitySet.everything(model)).profiles() == eq.profiles()


def test_rp_eliminates_dominated_profile_and_names_dominator():
    model, V = indifferent_follower(0.5)
    eq = enumerate_stationary_mpe(model)
    assert len(eq) == 4
    gone = renegotiation_eliminations(eq, V)
    rp = renegotiation_proof_set(eq, V)
    assert rp.profiles() == [steer(1, 1)]
    stay = gone[steer(0, 1)]
    assert stay.dominator == steer(1, 1)
    assert stay.state == 0
    # steering to 1 is worth delta / (1 - delta) = 1 at state 0 versus 0 when staying
    assert stay.margin == pytest.approx(1.0)


def test_rp_quantifier_readings_differ():
    a, b = steer(0, 0), steer(1, 1)
    # b is better at state 0, worse at state 1
    eq = _fake_set({a: ([0, 2], [0, 0]), b: ([1, 1], [0, 0])})
    V = ViabilitySet(frozenset({0, 1}))
    assert renegotiation_proof_set(eq, V, quantifier="some-state").profiles() == []
    assert renegotiation_proof_set(eq, V, quantifier="all-states").profiles() == [a, b]
    with pytest.raises(ValueError):
        renegotiation_proof_set(eq, V, quantifier="most-states")


def test_rp_is_idempotent_and_empty_in_empty_out():
    model, V = indifferent_follower(0.5)
    rp = renegotiation_proof_set(enumerate_stationary_mpe(model), V)
    assert renegotiation_proof_set(rp, V).profiles() == rp.profiles()
    empty = rp.subset(lambda m: False)
    assert len(renegotiation_proof_set(empty, V)) == 0


def test_select_see_tie_breaks():
    a, b, c = steer(0, 0), steer(0, 1), steer(1, 0)
    eq = _fake_set({a: ([1, 0], [0, 0]), b: ([1, 0], [2, 0]), c: ([1, 0], [2, 0])})
    # equal exploiter value: higher exploitee value, then the smaller index vector
    assert select_see(eq, 0) == b
    with pytest.raises(NoSEEError):
        select_see(eq.subset(lambda m: False), 0)


def test_ir_filter():
    a, b = steer(0, 0), steer(1, 1)
    eq = _fake_set({a: ([0, 0], [1, 1]), b: ([0, 0], [0, 3])})
    V = ViabilitySet(frozenset({0, 1}))
    assert ir_filter(eq, OutsideOption({0: 0.5, 1: 0.5}), V).profiles() == [a]


def test_pipeline_on_myopic_toy3():
    model, V = toy3(0.1)
    raw = run_pipeline(model, V)
    assert len(raw.mpe) == 1 and len(raw.viable) == 0 and raw.selected is None
    assert any("no SEE" in n for n in raw.notes)
    rep = run_pipeline(model, V, find_threshold=True)
    assert rep.threshold is not None and rep.penalty == rep.threshold.threshold
    assert rep.selected is not None
    assert check_viability(model, rep.selected, V)


def test_pipeline_with_outside_option_and_all_viable():
    model, V = indifferent_follower(0.5)
    rep = run_pipeline(model, V, outside=OutsideOption({0: 0.0, 1: 0.0}))
    assert rep.ir is not None and len(rep.ir) == 4
    assert rep.selected == steer(1, 1)
    assert rep.stage_sizes() == {"mpe": 4, "viable": 4, "ir": 4, "renegotiation_proof": 1, "selected": 1}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from(["some-state", "all-states"]))
def test_pipeline_nesting_on_random_models(seed, quantifier):
    rng = np.random.default_rng(seed)
    model = random_model(rng, max_states=3)
    members = [s for s in range(model.n_states) if rng.random() < 0.7] or [0]
    V = ViabilitySet(frozenset(members))
    rep = run_pipeline(model, V, quantifier=quantifier)
    mpe, viable, rp = (set(s.profiles()) for s in (rep.mpe, rep.viable, rep.renegotiation_proof))
    assert rp <= viable <= mpe
    if rep.selected is not None:
        s = rep.selection_state
        best = max(m.values.w_x[s] for m in rep.renegotiation_proof)
        assert rep.renegotiation_proof.get(rep.selected).values.w_x[s] >= best - 1e-9
