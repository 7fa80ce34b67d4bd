"""SEE refinement pipeline.

Stages: catastrophe penalty and threshold search, viability filter, optional
participation (IR) filter, renegotiation-proofness, exploiter-optimal
selection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .game_core import KERNEL_TOL, GameModel, StrategyProfile, ViabilitySet, induced_kernel
from .mse_solver import (
    CERT_TOL,
    DEFAULT_BUDGET,
    Equilibrium,
    EquilibriumSet,
    enumerate_stationary_mpe,
)

log = logging.getLogger(__name__)

PARETO_TOL = 1e-9
QUANTIFIERS = ("some-state", "all-states")


class NoSEEError(LookupError):
    """No profile survives to selection at this grid and tolerance."""


class PenaltyThresholdError(RuntimeError):
    """No penalty up to the cap makes every equilibrium viable."""


@dataclass(frozen=True)
class PenaltySpec:
    penalty: float
    viability: ViabilitySet

    def __post_init__(self):
        if not np.isfinite(self.penalty) or self.penalty < 0:
            raise ValueError("penalty must be finite and nonnegative")


@dataclass(frozen=True)
class OutsideOption:
    """Exploitee's outside value per state."""

    values: Mapping[int, float]

    def at(self, s: int) -> float:
        return float(self.values[s])


@dataclass(frozen=True)
class Elimination:
    eliminated: StrategyProfile
    dominator: StrategyProfile
    state: int
    margin: float


def exit_mass(model: GameModel, viability: ViabilitySet) -> np.ndarray:
    """``Q(S \\ V | s, x, e)`` for every padded entry."""
    outside = ~viability.mask(model.n_states)
    return (model.next_prob * outside[model.next_state]).sum(axis=-1)


def check_viability(model: GameModel, profile: StrategyProfile, viability: ViabilitySet, tol: float = KERNEL_TOL) -> bool:
    """True iff the induced chain keeps all mass inside ``V`` from every state of ``V``."""
    P = induced_kernel(model, profile)
    inside = viability.mask(model.n_states)
    stay = P[inside][:, inside].sum(axis=1)
    return bool(np.all(stay >= 1.0 - tol))


def _follower_table(follower) -> Sequence[Sequence[int]]:
    return follower.follower if isinstance(follower, StrategyProfile) else follower


def check_safe_action(model: GameModel, viability: ViabilitySet, follower, tol: float = KERNEL_TOL) -> bool:
    """True iff the certified safe action keeps ``V`` under the given follower responses.

    ``follower`` is a :class:`StrategyProfile` or a table ``follower[s][x]``.
    """
    if viability.safe_action is None:
        raise ValueError("viability set carries no safe-action certificate")
    table = _follower_table(follower)
    mass = exit_mass(model, viability)
    for s in sorted(viability.members):
        x = viability.safe_action[s]
        if mass[s, x, table[s][x]] > tol:
            return False
    return True


def penalize(model: GameModel, spec: PenaltySpec) -> GameModel:
    """Charge the exploiter ``penalty`` times the exit probability at every entry."""
    if spec.penalty == 0:
        return model
    ux = model.payoff_x - spec.penalty * exit_mass(model, spec.viability)
    ux = np.where(model.valid, ux, 0.0)
    return model.replace_payoffs(payoff_x=ux, payoff_bound=model.payoff_bound + spec.penalty)


@dataclass
class ThresholdResult:
    """Outcome of the penalty search.

    ``trials`` lists ``(M, number of equilibria, all viable)`` in search order.
    ``empty_at_threshold`` flags that the penalized game has no pure
    equilibrium at the returned penalty, so viability holds vacuously there.
    """

    threshold: float
    analytic_bound: float | None
    trials: list[tuple[float, int, bool]]
    empty_at_threshold: bool
    safe_action_certified: bool


def find_penalty_threshold(
    model: GameModel,
    viability: ViabilitySet,
    m_cap: float = 1e6,
    tol: float = 1e-6,
    budget: int = DEFAULT_BUDGET,
    cert_tol: float = CERT_TOL,
) -> ThresholdResult:
    """Smallest penalty whose penalized game has only viable equilibria.

    Doubling from the payoff bound brackets the threshold, then bisection
    narrows it to ``tol``.  The bracket end that passed is returned.
    """
    if viability.safe_action is None:
        raise ValueError("threshold search needs a safe-action certificate")
    if m_cap <= 0:
        raise ValueError("m_cap must be positive")
    trials: list[tuple[float, int, bool]] = []
    cache: dict[float, EquilibriumSet] = {}

    def passes(m: float) -> bool:
        game = penalize(model, PenaltySpec(m, viability))
        eq = enumerate_stationary_mpe(game, tol=cert_tol, budget=budget)
        ok = all(check_viability(game, p, viability) for p in eq.profiles())
        cache[m] = eq
        trials.append((m, len(eq), ok))
        return ok

    mass = exit_mass(model, viability)[model.valid & viability.mask(model.n_states)[:, None, None]]
    nonzero = mass[mass > KERNEL_TOL]
    bound = None
    if nonzero.size:
        bound = 2 * model.payoff_bound / ((1 - model.discount) * float(nonzero.min()))

    if passes(0.0):
        hi = 0.0
    else:
        lo, hi = 0.0, max(model.payoff_bound, tol)
        while not passes(hi):
            lo = hi
            if hi >= m_cap:
                raise PenaltyThresholdError(
                    f"no penalty up to {m_cap:g} makes every equilibrium viable; check the safe action"
                )
            hi = min(2 * hi, m_cap)
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if passes(mid):
                hi = mid
            else:
                lo = mid
    eq = cache[hi]
    game = penalize(model, PenaltySpec(hi, viability))
    safe = all(check_safe_action(game, viability, p) for p in eq.profiles())
    return ThresholdResult(hi, bound, trials, len(eq) == 0, safe)


def filter_viable(eq_set: EquilibriumSet, model: GameModel, viability: ViabilitySet) -> EquilibriumSet:
    return eq_set.subset(lambda m: check_viability(model, m.profile, viability))


def _dominance(a: Equilibrium, b: Equilibrium, states: list[int], tol: float, quantifier: str) -> tuple[int, float] | None:
    """If ``b`` Pareto-improves on ``a``, return ``(state, margin)``."""
    dx = b.values.w_x[states] - a.values.w_x[states]
    de = b.values.w_e[states] - a.values.w_e[states]
    weak = (dx >= -tol) & (de >= -tol)
    margin = np.maximum(dx, de)
    strict = weak & (margin > tol)
    if quantifier == "some-state":
        if not strict.any():
            return None
    elif quantifier == "all-states":
        if not (weak.all() and strict.any()):
            return None
    else:
        raise ValueError(f"unknown quantifier {quantifier!r}")
    i = int(np.argmax(np.where(strict, margin, -np.inf)))
    return states[i], float(margin[i])


def renegotiation_eliminations(
    eq_set: EquilibriumSet, viability: ViabilitySet, tol: float = PARETO_TOL, quantifier: str = "some-state"
) -> dict[StrategyProfile, Elimination]:
    """Eliminated profile -> strongest dominance found against the whole input set."""
    states = sorted(viability.members)
    out: dict[StrategyProfile, Elimination] = {}
    for a in eq_set:
        best = None
        for b in eq_set:
            if b.profile == a.profile:
                continue
            hit = _dominance(a, b, states, tol, quantifier)
            if hit is not None and (best is None or hit[1] > best.margin):
                best = Elimination(a.profile, b.profile, hit[0], hit[1])
        if best is not None:
            out[a.profile] = best
    return out


def renegotiation_proof_set(
    eq_set: EquilibriumSet, viability: ViabilitySet, tol: float = PARETO_TOL, quantifier: str = "some-state"
) -> EquilibriumSet:
    """Drop every profile Pareto-dominated at a state of ``V`` by another member.

    Dominators range over the input set itself, not the shrinking survivor
    set, so the operation is idempotent.
    """
    gone = renegotiation_eliminations(eq_set, viability, tol, quantifier)
    return eq_set.subset(lambda m: m.profile not in gone)


def select_see(eq_set: EquilibriumSet, selection_state: int, tol: float = PARETO_TOL) -> StrategyProfile:
    """Exploiter-best member at ``selection_state``.

    Near-ties in the exploiter value go to the higher exploitee value, then
    to the smallest action-index vector.
    """
    if len(eq_set) == 0:
        raise NoSEEError("no SEE found at this grid/tolerance")
    s = selection_state
    top = max(m.values.w_x[s] for m in eq_set)
    tied = [m for m in eq_set if m.values.w_x[s] >= top - tol]
    top_e = max(m.values.w_e[s] for m in tied)
    tied = [m for m in tied if m.values.w_e[s] >= top_e - tol]
    return min(tied, key=lambda m: m.profile.key()).profile


def ir_filter(eq_set: EquilibriumSet, outside: OutsideOption, viability: ViabilitySet, tol: float = PARETO_TOL) -> EquilibriumSet:
    states = sorted(viability.members)
    return eq_set.subset(lambda m: all(m.values.w_e[s] >= outside.at(s) - tol for s in states))


@dataclass
class RefinementReport:
    """Every stage of one pipeline run; subsets are nested."""

    mpe: EquilibriumSet
    viable: EquilibriumSet
    renegotiation_proof: EquilibriumSet
    selected: StrategyProfile | None
    selection_state: int
    eliminations: list[Elimination]
    quantifier: str
    penalty: float | None = None
    threshold: ThresholdResult | None = None
    ir: EquilibriumSet | None = None
    other_quantifier_rp: list[StrategyProfile] | None = None
    route_disagreement: list[StrategyProfile] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def input_size(self) -> int:
        return len(self.mpe)

    def stage_sizes(self) -> dict[str, int]:
        sizes = {"mpe": len(self.mpe), "viable": len(self.viable)}
        if self.ir is not None:
            sizes["ir"] = len(self.ir)
        sizes["renegotiation_proof"] = len(self.renegotiation_proof)
        sizes["selected"] = int(self.selected is not None)
        return sizes


def check_nesting(report: RefinementReport) -> None:
    """Raise ``AssertionError`` unless selected in RP, RP in viable, viable in MPE."""
    mpe = set(report.mpe.profiles())
    viable = set(report.viable.profiles())
    rp = set(report.renegotiation_proof.profiles())
    assert viable <= mpe, "viable set escapes the MPE set"
    if report.ir is not None:
        ir = set(report.ir.profiles())
        assert ir <= viable and rp <= ir, "IR stage breaks nesting"
    assert rp <= viable, "renegotiation-proof set escapes the viable set"
    if report.selected is not None:
        assert report.selected in rp, "selected profile is not renegotiation-proof"


def run_pipeline(
    model: GameModel,
    viability: ViabilitySet,
    penalty: float | None = None,
    find_threshold: bool = False,
    selection_state: int | None = None,
    outside: OutsideOption | None = None,
    quantifier: str = "some-state",
    tol: float = CERT_TOL,
    pareto_tol: float = PARETO_TOL,
    budget: int = DEFAULT_BUDGET,
    candidates: EquilibriumSet | None = None,
    m_cap: float = 1e6,
) -> RefinementReport:
    """Enumerate, optionally penalize, then filter, refine and select.

    ``candidates`` replaces enumeration (for models beyond the budget); it
    must have been computed on the game actually refined, i.e. the penalized
    model when a penalty applies.
    """
    if quantifier not in QUANTIFIERS:
        raise ValueError(f"quantifier must be one of {QUANTIFIERS}")
    s_sel = model.initial_state if selection_state is None else int(selection_state)
    notes: list[str] = []
    threshold = None
    if find_threshold:
        threshold = find_penalty_threshold(model, viability, m_cap=m_cap, budget=budget, cert_tol=tol)
        penalty = threshold.threshold if penalty is None else max(penalty, threshold.threshold)
        if threshold.empty_at_threshold:
            notes.append("penalized game has no pure stationary equilibrium at the threshold")
    game = model if penalty is None else penalize(model, PenaltySpec(penalty, viability))
    if candidates is not None:
        if candidates.fingerprint != game.fingerprint():
            raise ValueError("candidate set was computed on a different model")
        mpe = candidates
    else:
        mpe = enumerate_stationary_mpe(game, tol=tol, budget=budget)
    if len(mpe) == 0:
        notes.append("no pure stationary equilibrium exists")
    viable = filter_viable(mpe, game, viability)

    disagreement: list[StrategyProfile] = []
    if penalty is not None and penalty > 0 and candidates is None:
        raw = filter_viable(enumerate_stationary_mpe(model, tol=tol, budget=budget), model, viability)
        disagreement = sorted(set(raw.profiles()) ^ set(viable.profiles()), key=StrategyProfile.key)
        if disagreement:
            notes.append(f"penalized and raw viable sets differ in {len(disagreement)} profiles")

    pool = viable
    ir = None
    if outside is not None:
        ir = ir_filter(viable, outside, viability, pareto_tol)
        pool = ir
    gone = renegotiation_eliminations(pool, viability, pareto_tol, quantifier)
    rp = pool.subset(lambda m: m.profile not in gone)
    other = QUANTIFIERS[1 - QUANTIFIERS.index(quantifier)]
    rp_other = renegotiation_proof_set(pool, viability, pareto_tol, other)
    other_rp = None
    if set(rp_other.profiles()) != set(rp.profiles()):
        other_rp = rp_other.profiles()
        notes.append(f"the {other} reading keeps a different renegotiation-proof set")

    selected = None
    if len(rp):
        selected = select_see(rp, s_sel, pareto_tol)
    else:
        notes.append("no SEE found at this grid/tolerance")
    report = RefinementReport(
        mpe=mpe,
        viable=viable,
        renegotiation_proof=rp,
        selected=selected,
        selection_state=s_sel,
        eliminations=sorted(gone.values(), key=lambda el: el.eliminated.key()),
        quantifier=quantifier,
        penalty=penalty,
        threshold=threshold,
        ir=ir,
        other_quantifier_rp=other_rp,
        route_disagreement=disagreement,
        notes=notes,
    )
    check_nesting(report)
    for note in notes:
        log.info(note)
    return report
