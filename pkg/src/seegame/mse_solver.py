"""Markov-Stackelberg equilibria: nested best-response iteration and exhaustive search."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .game_core import (
    VALUE_TOL,
    ConvergenceError,
    GameModel,
    StrategyProfile,
    ValuePair,
    evaluate_policies,
)

CERT_TOL = 1e-8
DEFAULT_BUDGET = 10**8
_TIE_TOL = 1e-12


class BudgetExceededError(ValueError):
    """The pure profile space is larger than the enumeration budget."""


@dataclass(frozen=True, eq=False)
class DeviationReport:
    """One-shot deviation gains.

    ``leader_gain[s]`` is the best one-period gain from deviating at ``s``;
    ``follower_gain[s, x]`` the same for the follower after leader action
    ``x`` (NaN on padding).
    """

    leader_gain: np.ndarray
    follower_gain: np.ndarray
    max_gain: float

    def certified(self, tol: float = CERT_TOL) -> bool:
        return _within(self.max_gain, tol)


def _within(gain: float, tol: float) -> bool:
    return gain <= tol


@dataclass(frozen=True, eq=False)
class Equilibrium:
    profile: StrategyProfile
    values: ValuePair
    report: DeviationReport


@dataclass(frozen=True, eq=False)
class EquilibriumSet:
    """Certified stationary equilibria sorted by action-index vector."""

    members: tuple[Equilibrium, ...]
    fingerprint: str
    exhaustive: bool
    tol: float = CERT_TOL

    def __post_init__(self):
        seen = set()
        for m in self.members:
            if m.profile in seen:
                raise ValueError("duplicate profile in equilibrium set")
            seen.add(m.profile)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, profile: StrategyProfile) -> bool:
        return any(m.profile == profile for m in self.members)

    def profiles(self) -> list[StrategyProfile]:
        return [m.profile for m in self.members]

    def subset(self, keep) -> EquilibriumSet:
        return EquilibriumSet(tuple(m for m in self.members if keep(m)), self.fingerprint, self.exhaustive, self.tol)

    def get(self, profile: StrategyProfile) -> Equilibrium:
        for m in self.members:
            if m.profile == profile:
                return m
        raise KeyError(profile)


def _masked(model: GameModel, q: np.ndarray) -> np.ndarray:
    return np.where(model.valid, q, -np.inf)


def _argmax_low(q: np.ndarray) -> np.ndarray:
    """Argmax along the last axis, lowest index among near-ties."""
    best = q.max(axis=-1, keepdims=True)
    near = q >= best - _TIE_TOL * (1.0 + np.abs(best))
    return near.argmax(axis=-1)


def follower_values(model: GameModel, w_e: np.ndarray) -> np.ndarray:
    """Follower action values ``u^E + delta E[w_e]`` with padding at -inf."""
    return _masked(model, model.payoff_e + model.discount * model.expected(w_e))


def follower_best_response(model: GameModel, w_e: np.ndarray, s: int, x: int) -> int:
    """Effort index maximizing the follower's continuation objective at ``(s, x)``."""
    w_e = np.asarray(w_e, dtype=float)
    if not np.all(np.isfinite(w_e)):
        raise ValueError("continuation values must be finite")
    if not 0 <= x < model.n_leader[s]:
        raise ValueError(f"leader action {x} invalid at state {s}")
    ne = model.n_follower[s]
    q = model.payoff_e[s, x, :ne] + model.discount * (
        model.next_prob[s, x, :ne] * w_e[model.next_state[s, x, :ne]]
    ).sum(axis=-1)
    return int(_argmax_low(q))


def _greedy(model: GameModel, w_x: np.ndarray, w_e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Follower table ``(n, NX)`` then leader choice ``(n,)`` given continuation values."""
    eff = _argmax_low(follower_values(model, w_e))
    qx = model.payoff_x + model.discount * model.expected(w_x)
    qx = np.take_along_axis(qx, eff[..., None], axis=-1)[..., 0]
    nx = model.padded_shape[1]
    qx = np.where(np.arange(nx)[None, :] < model.n_leader[:, None], qx, -np.inf)
    return eff, _argmax_low(qx)


def _profile_from(model: GameModel, eff: np.ndarray, lead: np.ndarray) -> StrategyProfile:
    return StrategyProfile.from_arrays(
        lead, [eff[s, : model.n_leader[s]] for s in range(model.n_states)]
    )


def _gains(model: GameModel, profile: StrategyProfile, values: ValuePair) -> DeviationReport:
    n = model.n_states
    s_idx = np.arange(n)
    fol = profile.follower_array(model)
    valid_x = fol >= 0
    fol_c = np.where(valid_x, fol, 0)
    delta = model.discount
    qe = follower_values(model, values.w_e)
    chosen_e = np.take_along_axis(qe, fol_c[..., None], axis=-1)[..., 0]
    with np.errstate(invalid="ignore"):
        follower_gain = np.where(valid_x, qe.max(axis=-1) - chosen_e, np.nan)
    qx = model.payoff_x + delta * model.expected(values.w_x)
    qx = np.take_along_axis(qx, fol_c[..., None], axis=-1)[..., 0]
    qx = np.where(valid_x, qx, -np.inf)
    leader_gain = qx.max(axis=1) - values.w_x[s_idx]
    max_gain = float(max(np.nanmax(follower_gain), leader_gain.max()))
    return DeviationReport(leader_gain, follower_gain, max_gain)


def one_shot_deviation_check(
    model: GameModel,
    profile: StrategyProfile,
    tol: float = CERT_TOL,
    values: ValuePair | None = None,
    value_tol: float = 1e-12,
) -> DeviationReport:
    """Largest profitable single-period deviation for each decision point.

    Values come from :func:`evaluate_policies` unless supplied.  ``tol`` is
    kept for signature symmetry; compare with :meth:`DeviationReport.certified`.
    """
    profile.validate(model)
    if values is None:
        values = evaluate_policies(model, profile, tol=value_tol)
    return _gains(model, profile, values)


def solve_mse(
    model: GameModel,
    tol: float = VALUE_TOL,
    max_sweeps: int = 20_000,
    cert_tol: float = CERT_TOL,
    patience: int = 50,
    min_step: float = 1e-3,
    repair_steps: int = 5_000,
    init: ValuePair | None = None,
) -> tuple[StrategyProfile, ValuePair]:
    """Nested best-response value iteration with adaptive relaxation.

    Each sweep computes the follower's best response to the current exploitee
    values, the leader's best response anticipating it, and a Bellman update
    of both value maps under that profile.  The update is taken in full while
    the residual keeps falling; after ``patience`` sweeps without progress
    the step is halved (down to ``min_step``), which breaks the best-response
    cycles the undamped recursion can fall into.  Whenever the greedy
    profile is stable the profile is evaluated exactly; it is returned only
    if it is greedy against its own values and passes the one-shot deviation
    check.  If the sweeps run out, up to ``repair_steps`` single-switch
    improvements are tried from the last greedy profile.  ``init`` seeds the
    value maps (zeros by default).

    Raises:
        ConvergenceError: no fixed point within ``max_sweeps`` and the repair
            phase cycles or runs out of steps.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = model.n_states
    s_idx = np.arange(n)
    delta = model.discount
    w_x = np.zeros(n) if init is None else np.array(init.w_x, dtype=float)
    w_e = np.zeros(n) if init is None else np.array(init.w_e, dtype=float)
    prev = None
    stable = 0
    step = 1.0
    best = math.inf
    stall = 0
    residual = math.inf
    tried: set = set()
    for _ in range(max_sweeps):
        eff, lead = _greedy(model, w_x, w_e)
        key = (lead.tobytes(), eff.tobytes())
        stable = stable + 1 if key == prev else 0
        prev = key
        if (residual <= tol or stable >= (1 if step == 1.0 else patience // 2)) and key not in tried:
            tried.add(key)
            profile = _profile_from(model, eff, lead)
            values = evaluate_policies(model, profile, method="direct")
            eff2, lead2 = _greedy(model, values.w_x, values.w_e)
            if np.array_equal(eff, eff2) and np.array_equal(lead, lead2):
                if _gains(model, profile, values).certified(cert_tol):
                    return profile, values
        e_path = eff[s_idx, lead]
        nxt = model.next_state[s_idx, lead, e_path]
        prob = model.next_prob[s_idx, lead, e_path]
        new_x = model.payoff_x[s_idx, lead, e_path] + delta * (prob * w_x[nxt]).sum(-1)
        new_e = model.payoff_e[s_idx, lead, e_path] + delta * (prob * w_e[nxt]).sum(-1)
        residual = float(max(np.abs(new_x - w_x).max(), np.abs(new_e - w_e).max()))
        if residual < 0.999 * best:
            best, stall = residual, 0
        else:
            stall += 1
            if stall > patience and step > min_step:
                step, stall, best = max(0.5 * step, min_step), 0, residual
        w_x = w_x + step * (new_x - w_x)
        w_e = w_e + step * (new_e - w_e)
    if repair_steps > 0:
        eff, lead = _greedy(model, w_x, w_e)
        found = _repair(model, eff, lead, cert_tol, repair_steps)
        if found is not None:
            return found
    raise ConvergenceError("best-response iteration did not reach a fixed point", residual)


def _repair(
    model: GameModel, eff: np.ndarray, lead: np.ndarray, cert_tol: float, max_steps: int
) -> tuple[StrategyProfile, ValuePair] | None:
    """Single-switch improvement from ``(eff, lead)``.

    Off-path follower choices do not move values, so all of them are reset
    to best responses at once.  Among on-path decision points only the one
    with the largest one-shot gain is switched before re-evaluating.  Gives
    up on a revisited profile or after ``max_steps`` switches.
    """
    n = model.n_states
    s_idx = np.arange(n)
    eff, lead = eff.copy(), lead.copy()
    seen: set = set()
    for _ in range(max_steps):
        key = (lead.tobytes(), eff.tobytes())
        if key in seen:
            return None
        seen.add(key)
        profile = _profile_from(model, eff, lead)
        values = evaluate_policies(model, profile, method="direct")
        report = _gains(model, profile, values)
        if report.certified(cert_tol):
            return profile, values
        qe = follower_values(model, values.w_e)
        best_e = _argmax_low(qe)
        off = np.ones(eff.shape, dtype=bool)
        off[s_idx, lead] = False
        fix = off & (np.nan_to_num(report.follower_gain, nan=0.0) > cert_tol)
        if fix.any():
            eff = np.where(fix, best_e, eff)
            continue
        on_f = np.nan_to_num(report.follower_gain[s_idx, lead], nan=0.0)
        s_f, s_l = int(on_f.argmax()), int(report.leader_gain.argmax())
        if on_f[s_f] >= report.leader_gain[s_l]:
            eff[s_f, lead[s_f]] = best_e[s_f, lead[s_f]]
        else:
            qx = model.payoff_x + model.discount * model.expected(values.w_x)
            qx = np.take_along_axis(qx, eff[..., None], axis=-1)[..., 0]
            row = np.where(np.arange(qx.shape[1]) < model.n_leader[s_l], qx[s_l], -np.inf)
            lead[s_l] = int(_argmax_low(row))
    return None


def _product_arrays(sizes: list[int]) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(k) for k in sizes], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _batched_values(model: GameModel, lead: np.ndarray, eff: np.ndarray) -> np.ndarray:
    """Exact values for a batch of on-path choices; returns ``(B, n, 2)``."""
    n = model.n_states
    B = lead.shape[0]
    s_idx = np.arange(n)[None, :]
    nxt = model.next_state[s_idx, lead, eff]
    prob = model.next_prob[s_idx, lead, eff]
    P = np.zeros((B, n, n))
    b = np.repeat(np.arange(B), n * nxt.shape[-1])
    r = np.tile(np.repeat(np.arange(n), nxt.shape[-1]), B)
    np.add.at(P, (b, r, nxt.ravel()), prob.ravel())
    A = np.eye(n)[None] - model.discount * P
    rhs = np.stack([model.payoff_x[s_idx, lead, eff], model.payoff_e[s_idx, lead, eff]], axis=-1)
    return np.linalg.solve(A, rhs)


def _enumerate_factorized(model: GameModel, tol: float, chunk: int = 4096) -> list[Equilibrium]:
    """Exact enumeration factorized over off-path follower responses.

    Values depend only on the on-path choices.  Given them, the off-path
    follower responses enter the certificate separately per ``(s, x)``, so
    every valid completion is the product of per-entry admissible sets.
    """
    n = model.n_states
    nx = [int(k) for k in model.n_leader]
    ne = [int(k) for k in model.n_follower]
    leads = _product_arrays(nx)
    effs = _product_arrays(ne)
    combos = [(li, ei) for li in range(len(leads)) for ei in range(len(effs))]
    found: list[Equilibrium] = []
    delta = model.discount
    for start in range(0, len(combos), chunk):
        block = combos[start : start + chunk]
        lead = leads[[c[0] for c in block]]
        eff = effs[[c[1] for c in block]]
        W = _batched_values(model, lead, eff)
        for b in range(len(block)):
            w_x, w_e = W[b, :, 0], W[b, :, 1]
            qe = follower_values(model, w_e)
            best_e = qe.max(axis=-1)
            qx = model.payoff_x + delta * model.expected(w_x)
            choices: list[list[list[int]]] = []
            ok = True
            for s in range(n):
                row = []
                for x in range(nx[s]):
                    if x == lead[b, s]:
                        e = int(eff[b, s])
                        if not _within(best_e[s, x] - qe[s, x, e], tol):
                            ok = False
                            break
                        row.append([e])
                        continue
                    adm = [
                        e
                        for e in range(ne[s])
                        if _within(best_e[s, x] - qe[s, x, e], tol) and _within(qx[s, x, e] - w_x[s], tol)
                    ]
                    if not adm:
                        ok = False
                        break
                    row.append(adm)
                if not ok:
                    break
                choices.append(row)
            if not ok:
                continue
            values = ValuePair(w_x, w_e)
            flat = [opts for row in choices for opts in row]
            for pick in itertools.product(*flat):
                it = iter(pick)
                follower = [[next(it) for _ in range(nx[s])] for s in range(n)]
                profile = StrategyProfile.from_arrays(lead[b], follower)
                found.append(Equilibrium(profile, values, _gains(model, profile, values)))
    return found


def _enumerate_brute(model: GameModel, tol: float) -> list[Equilibrium]:
    n = model.n_states
    nx = [int(k) for k in model.n_leader]
    ne = [int(k) for k in model.n_follower]
    leader_space = itertools.product(*[range(k) for k in nx])
    follower_rows = [list(itertools.product(range(ne[s]), repeat=nx[s])) for s in range(n)]
    found = []
    for lead in leader_space:
        for follower in itertools.product(*follower_rows):
            profile = StrategyProfile(tuple(lead), tuple(follower))
            values = evaluate_policies(model, profile, method="direct")
            report = _gains(model, profile, values)
            if report.certified(tol):
                found.append(Equilibrium(profile, values, report))
    return found


def enumerate_stationary_mpe(
    model: GameModel, tol: float = CERT_TOL, budget: int = DEFAULT_BUDGET, method: str = "factorized"
) -> EquilibriumSet:
    """All pure stationary profiles immune to one-shot deviations.

    ``method="brute"`` tests every profile one by one; ``"factorized"``
    produces the same set by enumerating on-path choices only.

    Raises:
        BudgetExceededError: the profile space exceeds ``budget``.
    """
    size = model.profile_space_size()
    if size > budget:
        raise BudgetExceededError(f"profile space has {size} profiles, budget is {budget}")
    if method == "factorized":
        found = _enumerate_factorized(model, tol)
    elif method == "brute":
        found = _enumerate_brute(model, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    found.sort(key=lambda m: m.profile.key())
    return EquilibriumSet(tuple(found), model.fingerprint(), exhaustive=True, tol=tol)


def certified_singleton(model: GameModel, profile: StrategyProfile, values: ValuePair | None = None, tol: float = CERT_TOL) -> EquilibriumSet:
    """Wrap one certified profile (for example a :func:`solve_mse` output) as a non-exhaustive set."""
    if values is None:
        values = evaluate_policies(model, profile, method="direct")
    report = _gains(model, profile, values)
    if not report.certified(tol):
        raise ValueError(f"profile is not an equilibrium: max deviation gain {report.max_gain:.3e}")
    return EquilibriumSet((Equilibrium(profile, values, report),), model.fingerprint(), exhaustive=False, tol=tol)
