"""Independent certification of the SEE, RP, viable MPE and MPE inclusion chain.

Everything here is recomputed from the model primitives with code that does
not share the solver's certification path: equilibria are re-enumerated by
brute force over the whole pure profile space, deviation gains come from
plain loops, and the stationary Nash check solves each player's Markov
decision problem against the other's fixed policy.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .game_core import KERNEL_TOL, GameModel, StrategyProfile, ViabilitySet
from .mse_solver import CERT_TOL, enumerate_stationary_mpe
from .refinement import PARETO_TOL, QUANTIFIERS, PenaltySpec, RefinementReport, penalize, run_pipeline

HIERARCHY_BUDGET = 2 * 10**5

SCOPE = (
    "Scope: pure stationary Markov profiles only. Subgame perfection is "
    "certified by one-shot deviation tests; the Nash property is certified "
    "against stationary Markov deviations at the selection state. "
    "History-dependent strategies are not enumerated."
)


class HierarchyError(AssertionError):
    """A containment or certification verdict failed."""

    def __init__(self, verdict: str, detail: str, counterexample: StrategyProfile | None = None):
        super().__init__(f"{verdict}: {detail}")
        self.verdict = verdict
        self.detail = detail
        self.counterexample = counterexample


@dataclass
class HierarchyReport:
    """Recomputed sets, per-profile certificates and containment verdicts."""

    scope: str
    fingerprint: str
    selection_state: int
    mpe: tuple[StrategyProfile, ...]
    viable: tuple[StrategyProfile, ...]
    renegotiation_proof: tuple[StrategyProfile, ...]
    selected: StrategyProfile | None
    one_shot_gain: dict[StrategyProfile, float]
    nash_gain: dict[StrategyProfile, tuple[float, float]]
    dominators: dict[StrategyProfile, tuple[StrategyProfile, int, float]]
    verdicts: dict[str, bool]
    counterexamples: dict[str, StrategyProfile | None] = field(default_factory=dict)
    details: dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def counts(self) -> dict[str, int]:
        return {
            "mpe": len(self.mpe),
            "viable": len(self.viable),
            "renegotiation_proof": len(self.renegotiation_proof),
            "see": int(self.selected is not None),
        }

    def to_text(self) -> str:
        """Structured plain-text rendering with fixed 12-significant-digit numbers."""
        lines = [f"# {self.scope}", f"fingerprint: {self.fingerprint}", f"selection_state: {self.selection_state}"]
        lines += [f"count.{k}: {v}" for k, v in self.counts().items()]
        lines.append(f"selected: {_fmt_profile(self.selected)}")
        for name in sorted(self.verdicts):
            lines.append(f"verdict.{name}: {'pass' if self.verdicts[name] else 'FAIL'}")
            if not self.verdicts[name]:
                lines.append(f"counterexample.{name}: {_fmt_profile(self.counterexamples.get(name))}")
                lines.append(f"detail.{name}: {self.details.get(name, '')}")
        for p in self.mpe:
            lead, fol = self.nash_gain[p]
            tags = [t for t, members in (("viable", self.viable), ("rp", self.renegotiation_proof)) if p in members]
            lines.append(
                f"profile {_fmt_profile(p)}: one_shot_gain={self.one_shot_gain[p]:.12g} "
                f"nash_gain_leader={lead:.12g} nash_gain_follower={fol:.12g} sets={','.join(['mpe'] + tags)}"
            )
        for p, (dom, s, margin) in sorted(self.dominators.items(), key=lambda kv: kv[0].key()):
            lines.append(f"eliminated {_fmt_profile(p)} by {_fmt_profile(dom)} at state {s} margin {margin:.12g}")
        return "\n".join(lines) + "\n"


def _fmt_profile(p: StrategyProfile | None) -> str:
    if p is None:
        return "none"
    return "L" + "".join(map(str, p.leader)) + "/F" + "|".join("".join(map(str, f)) for f in p.follower)


# --- independent recomputation ---------------------------------------------


def _exact_values(model: GameModel, choices: tuple[tuple[int, int], ...]) -> tuple[np.ndarray, np.ndarray]:
    n = model.n_states
    P = np.zeros((n, n))
    rx = np.zeros(n)
    re = np.zeros(n)
    for s, (x, e) in enumerate(choices):
        for t, p in model.transitions(s, x, e).items():
            P[s, t] += p
        rx[s] = model.payoff_x[s, x, e]
        re[s] = model.payoff_e[s, x, e]
    A = np.eye(n) - model.discount * P
    return np.linalg.solve(A, rx), np.linalg.solve(A, re)


def _q(model: GameModel, w: np.ndarray, payoff: np.ndarray, s: int, x: int, e: int) -> float:
    cont = sum(p * w[t] for t, p in model.transitions(s, x, e).items())
    return float(payoff[s, x, e] + model.discount * cont)


def _one_shot_gain(model: GameModel, profile: StrategyProfile, w_x: np.ndarray, w_e: np.ndarray) -> float:
    worst = -np.inf
    for s in range(model.n_states):
        ne = int(model.n_follower[s])
        lead_q = []
        for x in range(int(model.n_leader[s])):
            qe = [_q(model, w_e, model.payoff_e, s, x, e) for e in range(ne)]
            worst = max(worst, max(qe) - qe[profile.follower[s][x]])
            lead_q.append(_q(model, w_x, model.payoff_x, s, x, profile.follower[s][x]))
        worst = max(worst, max(lead_q) - w_x[s])
    return float(worst)


def _all_profiles(model: GameModel):
    per_state = []
    for s in range(model.n_states):
        nx, ne = int(model.n_leader[s]), int(model.n_follower[s])
        follower_tables = list(itertools.product(range(ne), repeat=nx))
        per_state.append([(x, f) for x in range(nx) for f in follower_tables])
    for combo in itertools.product(*per_state):
        yield StrategyProfile(tuple(c[0] for c in combo), tuple(tuple(c[1]) for c in combo))


def brute_force_mpe(model: GameModel, tol: float = CERT_TOL, budget: int = HIERARCHY_BUDGET) -> dict[StrategyProfile, float]:
    """Every pure stationary profile whose one-shot gain is at most ``tol``.

    Returns a map from profile to its largest one-shot gain.

    Raises:
        ValueError: the profile space exceeds ``budget``.
    """
    size = model.profile_space_size()
    if size > budget:
        raise ValueError(f"profile space {size} exceeds the brute-force budget {budget}")
    cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
    found = {}
    for prof in _all_profiles(model):
        key = tuple(prof.on_path(s) for s in range(model.n_states))
        if key not in cache:
            cache[key] = _exact_values(model, key)
        gain = _one_shot_gain(model, prof, *cache[key])
        if gain <= tol:
            found[prof] = gain
    return found


def _mdp_optimum(model: GameModel, reward: np.ndarray, succ: list[list[dict[int, float]]], start: int, tol: float = 1e-12) -> float:
    """Optimal discounted value at ``start`` of a finite MDP by policy iteration."""
    n = model.n_states
    policy = [0] * n
    while True:
        P = np.zeros((n, n))
        r = np.array([reward[s][policy[s]] for s in range(n)])
        for s in range(n):
            for t, p in succ[s][policy[s]].items():
                P[s, t] += p
        v = np.linalg.solve(np.eye(n) - model.discount * P, r)
        changed = False
        for s in range(n):
            q = [reward[s][a] + model.discount * sum(p * v[t] for t, p in succ[s][a].items()) for a in range(len(succ[s]))]
            best = int(np.argmax(q))
            if q[best] > q[policy[s]] + tol * (1 + abs(q[policy[s]])):
                policy[s] = best
                changed = True
        if not changed:
            return float(v[start])


def stationary_nash_gains(model: GameModel, profile: StrategyProfile, start: int) -> tuple[float, float]:
    """Best improvement at ``start`` from a stationary Markov deviation by each player."""
    n = model.n_states
    key = tuple(profile.on_path(s) for s in range(n))
    w_x, w_e = _exact_values(model, key)
    lead_r = [[float(model.payoff_x[s, x, profile.follower[s][x]]) for x in range(int(model.n_leader[s]))] for s in range(n)]
    lead_t = [[model.transitions(s, x, profile.follower[s][x]) for x in range(int(model.n_leader[s]))] for s in range(n)]
    fol_r = [[float(model.payoff_e[s, profile.leader[s], e]) for e in range(int(model.n_follower[s]))] for s in range(n)]
    fol_t = [[model.transitions(s, profile.leader[s], e) for e in range(int(model.n_follower[s]))] for s in range(n)]
    best_x = _mdp_optimum(model, lead_r, lead_t, start)
    best_e = _mdp_optimum(model, fol_r, fol_t, start)
    return best_x - float(w_x[start]), best_e - float(w_e[start])


def _stays_viable(model: GameModel, profile: StrategyProfile, viability: ViabilitySet) -> bool:
    for s in viability.members:
        for t, p in model.transitions(s, *profile.on_path(s)).items():
            if p > KERNEL_TOL and t not in viability.members:
                return False
    return True


def _pareto_dominator(
    target: tuple[np.ndarray, np.ndarray],
    other: tuple[np.ndarray, np.ndarray],
    states: list[int],
    tol: float,
    quantifier: str,
) -> tuple[int, float] | None:
    """Strongest ``(state, margin)`` at which ``other`` Pareto-dominates ``target``."""
    hits = []
    for s in states:
        dx = other[0][s] - target[0][s]
        de = other[1][s] - target[1][s]
        weakly = dx >= -tol and de >= -tol
        strictly = dx > tol or de > tol
        if weakly and strictly:
            hits.append((s, float(max(dx, de))))
        elif quantifier == "all-states" and not weakly:
            return None
    if not hits:
        return None
    return max(hits, key=lambda h: h[1])


def verify_hierarchy(
    model: GameModel,
    viability: ViabilitySet,
    selection_state: int | None = None,
    penalty: float | None = None,
    quantifier: str = "some-state",
    tol: float = CERT_TOL,
    pareto_tol: float = PARETO_TOL,
    budget: int = HIERARCHY_BUDGET,
    strict: bool = True,
    pipeline: RefinementReport | None = None,
) -> HierarchyReport:
    """Recompute every set in the chain and certify the containments.

    ``penalty`` applies the catastrophe penalty before enumeration, exactly
    as the refinement pipeline would.  ``pipeline`` lets a caller check an
    existing report instead of a fresh run; its sets are compared against
    the recomputation, never trusted.

    Raises:
        HierarchyError: a verdict fails and ``strict`` is set; the error
            carries the offending profile.
        ValueError: the model exceeds the brute-force budget.
    """
    if quantifier not in QUANTIFIERS:
        raise ValueError(f"quantifier must be one of {QUANTIFIERS}")
    game = model if not penalty else penalize(model, PenaltySpec(penalty, viability))
    s_sel = game.initial_state if selection_state is None else int(selection_state)

    oracle = brute_force_mpe(game, tol, budget)
    mpe = tuple(sorted(oracle, key=StrategyProfile.key))
    values = {p: _exact_values(game, tuple(p.on_path(s) for s in range(game.n_states))) for p in mpe}

    if pipeline is None:
        pipeline = run_pipeline(model, viability, penalty=penalty, selection_state=s_sel, quantifier=quantifier, tol=tol, pareto_tol=pareto_tol, budget=budget)
    solver_set = enumerate_stationary_mpe(game, tol=tol, budget=budget)

    verdicts: dict[str, bool] = {}
    counter: dict[str, StrategyProfile | None] = {}
    details: dict[str, str] = {}

    def record(name: str, ok: bool, bad: StrategyProfile | None = None, detail: str = "") -> None:
        verdicts[name] = bool(ok)
        if not ok:
            counter[name] = bad
            details[name] = detail

    def first_difference(a, b) -> StrategyProfile | None:
        diff = sorted(set(a) ^ set(b), key=StrategyProfile.key)
        return diff[0] if diff else None

    bad = first_difference(mpe, solver_set.profiles())
    record("solver_matches_oracle", bad is None, bad, "solver enumeration differs from brute-force recomputation")
    bad = first_difference(mpe, pipeline.mpe.profiles())
    record("pipeline_mpe_matches_oracle", bad is None, bad, "pipeline MPE stage differs from brute-force recomputation")

    gains = {p: oracle[p] for p in mpe}
    worst = max(gains, key=gains.get) if gains else None
    record("mpe_one_shot", all(g <= tol for g in gains.values()), worst, "one-shot deviation gain above tolerance")

    nash = {p: stationary_nash_gains(game, p, s_sel) for p in mpe}
    offender = next((p for p in mpe if max(nash[p]) > tol), None)
    record("mpe_nash_at_selection", offender is None, offender, "a stationary deviation improves a player's value at the selection state")

    viable = tuple(p for p in mpe if _stays_viable(game, p, viability))
    bad = first_difference(viable, pipeline.viable.profiles())
    record("viable_matches_oracle", bad is None, bad, "viable stage differs from recomputed viability")
    stray = next((p for p in pipeline.viable.profiles() if p not in oracle), None)
    record("viable_in_mpe", stray is None, stray, "viable profile is not an equilibrium")

    states = sorted(viability.members)
    pool = viable if pipeline.ir is None else tuple(p for p in viable if p in pipeline.ir)
    dominators: dict[StrategyProfile, tuple[StrategyProfile, int, float]] = {}
    for p in pool:
        for q in pool:
            if q == p:
                continue
            hit = _pareto_dominator(values[p], values[q], states, pareto_tol, quantifier)
            if hit is not None and (p not in dominators or hit[1] > dominators[p][2]):
                dominators[p] = (q, hit[0], hit[1])
    rp = tuple(p for p in pool if p not in dominators)
    bad = first_difference(rp, pipeline.renegotiation_proof.profiles())
    record("rp_matches_oracle", bad is None, bad, "renegotiation-proof stage differs from recomputed Pareto comparisons")
    stray = next((p for p in pipeline.renegotiation_proof.profiles() if p not in viable), None)
    record("rp_in_viable", stray is None, stray, "renegotiation-proof profile is not viable")

    selected = pipeline.selected
    if selected is None:
        record("selected_in_rp", len(rp) == 0, None, "pipeline selected nothing although the RP set is nonempty")
    else:
        record("selected_in_rp", selected in rp, selected, "selected profile is outside the RP set")
        if selected in values:
            top = max(values[p][0][s_sel] for p in rp)
            record(
                "selection_maximal",
                values[selected][0][s_sel] >= top - pareto_tol,
                selected,
                "another RP profile gives the leader more at the selection state",
            )

    report = HierarchyReport(
        scope=SCOPE,
        fingerprint=game.fingerprint(),
        selection_state=s_sel,
        mpe=mpe,
        viable=viable,
        renegotiation_proof=rp,
        selected=selected,
        one_shot_gain=gains,
        nash_gain=nash,
        dominators=dominators,
        verdicts=verdicts,
        counterexamples=counter,
        details=details,
    )
    if strict and not report.passed:
        name = next(k for k, ok in verdicts.items() if not ok)
        raise HierarchyError(name, details[name], counter.get(name))
    return report
