"""Small model builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from seegame.game_core import GameModel, StrategyProfile, ViabilitySet


def random_model(
    rng: np.random.Generator,
    max_states: int = 4,
    max_leader: int = 3,
    max_follower: int = 3,
    max_support: int = 2,
    discount: float | None = None,
) -> GameModel:
    """Random game with finite-support kernels and integer-grid payoffs.

    Payoffs are multiples of 1/4 so that exact ties, and hence multiple
    equilibria, occur with positive probability.
    """
    n = int(rng.integers(1, max_states + 1))
    nx = rng.integers(1, max_leader + 1, size=n)
    ne = rng.integers(1, max_follower + 1, size=n)
    delta = float(rng.uniform(0.1, 0.95)) if discount is None else discount
    ux = rng.integers(-4, 5, size=(n, int(nx.max()), int(ne.max()))) / 4.0
    ue = rng.integers(-4, 5, size=(n, int(nx.max()), int(ne.max()))) / 4.0
    rows = {}
    for s in range(n):
        for x in range(nx[s]):
            for e in range(ne[s]):
                k = int(rng.integers(1, min(max_support, n) + 1))
                support = rng.choice(n, size=k, replace=False)
                mass = rng.dirichlet(np.ones(k)) if k > 1 else np.ones(1)
                rows[s, x, e] = {int(t): float(p) for t, p in zip(support, mass)}
    return GameModel.from_functions(
        states=list(range(n)),
        leader_actions=[list(range(k)) for k in nx],
        follower_actions=[list(range(k)) for k in ne],
        transition=lambda s, x, e: rows[s, x, e],
        payoff_x=lambda s, x, e: ux[s, x, e],
        payoff_e=lambda s, x, e: ue[s, x, e],
        discount=delta,
    )


def zero_model(discount: float = 0.5) -> tuple[GameModel, ViabilitySet]:
    """Two states, two actions each, zero payoffs, effort picks the next state."""
    model = GameModel.from_functions(
        states=[0, 1],
        leader_actions=[[0, 1], [0, 1]],
        follower_actions=[[0, 1], [0, 1]],
        transition=lambda s, x, e: {e: 1.0},
        payoff_x=lambda s, x, e: 0.0,
        payoff_e=lambda s, x, e: 0.0,
        discount=discount,
    )
    return model, ViabilitySet(frozenset({0, 1}))


def indifferent_follower(discount: float = 0.5) -> tuple[GameModel, ViabilitySet]:
    """Exploiter earns the state label; the indifferent exploitee picks the next state.

    Every follower table is an equilibrium.  Steering to state 1 forever
    Pareto-dominates the rest, so it is the only renegotiation-proof profile.
    """
    model = GameModel.from_functions(
        states=[0, 1],
        leader_actions=[[0], [0]],
        follower_actions=[[0, 1], [0, 1]],
        transition=lambda s, x, e: {e: 1.0},
        payoff_x=lambda s, x, e: float(s),
        payoff_e=lambda s, x, e: 0.0,
        discount=discount,
        initial_state=0,
    )
    return model, ViabilitySet(frozenset({0, 1}))


def steer(target_0: int, target_1: int) -> StrategyProfile:
    """Profile of :func:`indifferent_follower` moving state ``s`` to ``target_s``."""
    return StrategyProfile((0, 0), ((target_0,), (target_1,)))
