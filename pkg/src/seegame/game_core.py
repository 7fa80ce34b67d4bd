"""Game primitives on finite grids.

A :class:`GameModel` stores every per-state table padded to the largest
action and effort counts, so sweeps vectorize over states.  Entries past
``n_leader[s]`` / ``n_follower[s]`` are padding: they carry zero payoff and a
self-loop, and every argmax masks them out.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

VALUE_TOL = 1e-10
KERNEL_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """Raised when an iterative scheme exhausts its sweep budget."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GameModel:
    """Exploiter/exploitee game on a finite state grid.

    Attributes:
        states: real label of each state, shape ``(n,)``.
        leader_actions: per-state labels of the feasible extraction levels.
        follower_actions: per-state labels of the feasible efforts.
        next_state: support of the kernel, shape ``(n, NX, NE, K)``.
        next_prob: masses on ``next_state``, same shape.
        payoff_x: exploiter stage payoff, shape ``(n, NX, NE)``.
        payoff_e: exploitee stage payoff, shape ``(n, NX, NE)``.
        discount: common discount factor in (0, 1).
        payoff_bound: bound on absolute stage payoffs.
        initial_state: designated start / selection state.
        leader_names: optional display names for leader actions.
    """

    states: np.ndarray
    leader_actions: tuple[np.ndarray, ...]
    follower_actions: tuple[np.ndarray, ...]
    next_state: np.ndarray
    next_prob: np.ndarray
    payoff_x: np.ndarray
    payoff_e: np.ndarray
    discount: float
    payoff_bound: float
    initial_state: int = 0
    leader_names: tuple[tuple[str, ...], ...] | None = None
    n_leader: np.ndarray = field(init=False, repr=False)
    n_follower: np.ndarray = field(init=False, repr=False)
    valid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.states)
        nx = np.array([len(a) for a in self.leader_actions], dtype=int)
        ne = np.array([len(a) for a in self.follower_actions], dtype=int)
        if len(nx) != n or len(ne) != n:
            raise ValueError("action sets must be given for every state")
        if np.any(nx == 0) or np.any(ne == 0):
            raise ValueError("action sets must be nonempty for every state")
        shape = (n, int(nx.max()), int(ne.max()))
        for name in ("payoff_x", "payoff_e"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.next_state.shape != self.next_prob.shape or self.next_state.shape[:3] != shape:
            raise ValueError("kernel arrays do not match the padded action shape")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if not 0 <= self.initial_state < n:
            raise ValueError(f"initial_state {self.initial_state} out of range")
        valid = (np.arange(shape[1])[None, :, None] < nx[:, None, None]) & (
            np.arange(shape[2])[None, None, :] < ne[:, None, None]
        )
        set_ = object.__setattr__
        set_(self, "states", _frozen(np.asarray(self.states, dtype=float)))
        set_(self, "leader_actions", tuple(_frozen(np.asarray(a, dtype=float)) for a in self.leader_actions))
        set_(self, "follower_actions", tuple(_frozen(np.asarray(a, dtype=float)) for a in self.follower_actions))
        set_(self, "next_state", _frozen(self.next_state.astype(np.int64)))
        set_(self, "next_prob", _frozen(self.next_prob.astype(float)))
        set_(self, "payoff_x", _frozen(self.payoff_x.astype(float)))
        set_(self, "payoff_e", _frozen(self.payoff_e.astype(float)))
        set_(self, "discount", float(self.discount))
        set_(self, "payoff_bound", float(self.payoff_bound))
        set_(self, "n_leader", _frozen(nx))
        set_(self, "n_follower", _frozen(ne))
        set_(self, "valid", _frozen(valid))

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def padded_shape(self) -> tuple[int, int, int]:
        return self.payoff_x.shape

    def transitions(self, s: int, x: int, e: int) -> dict[int, float]:
        """Next-state distribution at ``(s, x, e)`` as ``{state: mass}``."""
        out: dict[int, float] = {}
        for t, p in zip(self.next_state[s, x, e], self.next_prob[s, x, e]):
            if p > 0.0:
                out[int(t)] = out.get(int(t), 0.0) + float(p)
        return out

    def expected(self, w: np.ndarray) -> np.ndarray:
        """``E[w(s') | s, x, e]`` for every padded entry."""
        return (self.next_prob * np.asarray(w)[self.next_state]).sum(axis=-1)

    def replace_payoffs(
        self, payoff_x: np.ndarray | None = None, payoff_e: np.ndarray | None = None, payoff_bound: float | None = None
    ) -> GameModel:
        return GameModel(
            states=self.states,
            leader_actions=self.leader_actions,
            follower_actions=self.follower_actions,
            next_state=self.next_state,
            next_prob=self.next_prob,
            payoff_x=self.payoff_x if payoff_x is None else payoff_x,
            payoff_e=self.payoff_e if payoff_e is None else payoff_e,
            discount=self.discount,
            payoff_bound=self.payoff_bound if payoff_bound is None else payoff_bound,
            initial_state=self.initial_state,
            leader_names=self.leader_names,
        )

    def with_discount(self, discount: float) -> GameModel:
        return GameModel(
            states=self.states,
            leader_actions=self.leader_actions,
            follower_actions=self.follower_actions,
            next_state=self.next_state,
            next_prob=self.next_prob,
            payoff_x=self.payoff_x,
            payoff_e=self.payoff_e,
            discount=discount,
            payoff_bound=self.payoff_bound,
            initial_state=self.initial_state,
            leader_names=self.leader_names,
        )

    def fingerprint(self) -> str:
        """Stable SHA-256 over the model tables."""
        h = hashlib.sha256()
        for a in (self.states, *self.leader_actions, *self.follower_actions):
            h.update(np.round(a, 12).tobytes())
        h.update(self.next_state.tobytes())
        for a in (self.next_prob, self.payoff_x, self.payoff_e):
            h.update(np.round(a, 12).tobytes())
        h.update(repr((round(self.discount, 12), self.initial_state)).encode())
        return h.hexdigest()

    def profile_space_size(self) -> int:
        """Number of pure stationary profiles ``prod |X(s)| * prod_{s,x} |E(s)|``."""
        total = 1
        for nx, ne in zip(self.n_leader, self.n_follower):
            total *= int(nx) * int(ne) ** int(nx)
        return total

    @classmethod
    def from_functions(
        cls,
        states: Sequence[float],
        leader_actions: Sequence[Sequence[float]],
        follower_actions: Sequence[Sequence[float]],
        transition: Callable[[int, int, int], Mapping[int, float]],
        payoff_x: Callable[[int, int, int], float],
        payoff_e: Callable[[int, int, int], float],
        discount: float,
        payoff_bound: float | None = None,
        initial_state: int = 0,
        leader_names: Sequence[Sequence[str]] | None = None,
    ) -> GameModel:
        """Tabulate a model from index-level callables.

        ``transition(s, x, e)`` returns ``{next_state_index: mass}``; the
        other callables return stage payoffs.  All arguments are indices.
        """
        n = len(states)
        nx = [len(a) for a in leader_actions]
        ne = [len(a) for a in follower_actions]
        if not nx or not ne or min(nx) == 0 or min(ne) == 0:
            raise ValueError("action sets must be nonempty for every state")
        shape = (n, max(nx), max(ne))
        rows = {}
        width = 1
        for s in range(n):
            for x in range(nx[s]):
                for e in range(ne[s]):
                    row = {int(k): float(v) for k, v in dict(transition(s, x, e)).items() if v != 0.0}
                    rows[s, x, e] = row
                    width = max(width, len(row))
        nxt = np.zeros(shape + (width,), dtype=np.int64)
        prob = np.zeros(shape + (width,))
        ux = np.zeros(shape)
        ue = np.zeros(shape)
        nxt[...] = np.arange(n)[:, None, None, None]
        prob[..., 0] = 1.0
        for (s, x, e), row in rows.items():
            prob[s, x, e, 0] = 0.0
            for j, (t, p) in enumerate(sorted(row.items())):
                nxt[s, x, e, j] = t
                prob[s, x, e, j] = p
            ux[s, x, e] = payoff_x(s, x, e)
            ue[s, x, e] = payoff_e(s, x, e)
        if payoff_bound is None:
            payoff_bound = float(max(np.abs(ux).max(), np.abs(ue).max()))
        return cls(
            states=np.asarray(states, dtype=float),
            leader_actions=tuple(np.asarray(a, dtype=float) for a in leader_actions),
            follower_actions=tuple(np.asarray(a, dtype=float) for a in follower_actions),
            next_state=nxt,
            next_prob=prob,
            payoff_x=ux,
            payoff_e=ue,
            discount=discount,
            payoff_bound=payoff_bound,
            initial_state=initial_state,
            leader_names=None if leader_names is None else tuple(tuple(r) for r in leader_names),
        )


@dataclass(frozen=True, order=True)
class StrategyProfile:
    """Pure stationary profile: leader map and total follower response map.

    ``follower[s][x]`` is the effort index played after leader action ``x``
    at state ``s``; it covers off-path actions too.
    """

    leader: tuple[int, ...]
    follower: tuple[tuple[int, ...], ...]

    @classmethod
    def from_arrays(cls, leader: Iterable[int], follower: Iterable[Iterable[int]]) -> StrategyProfile:
        return cls(tuple(int(a) for a in leader), tuple(tuple(int(e) for e in row) for row in follower))

    @classmethod
    def constant(cls, model: GameModel, leader: int | Sequence[int], effort: int | Sequence[int]) -> StrategyProfile:
        """Profile playing the same indices everywhere, clipped to each state's sets."""
        n = model.n_states
        lead = [leader] * n if isinstance(leader, (int, np.integer)) else list(leader)
        eff = [effort] * n if isinstance(effort, (int, np.integer)) else list(effort)
        return cls.from_arrays(
            [min(int(lead[s]), model.n_leader[s] - 1) for s in range(n)],
            [[min(int(eff[s]), model.n_follower[s] - 1)] * int(model.n_leader[s]) for s in range(n)],
        )

    def key(self) -> tuple[int, ...]:
        """Action-index vector: leader indices then the flattened follower table."""
        return self.leader + tuple(e for row in self.follower for e in row)

    def on_path(self, s: int) -> tuple[int, int]:
        x = self.leader[s]
        return x, self.follower[s][x]

    def follower_array(self, model: GameModel) -> np.ndarray:
        """Follower table padded to ``(n, NX)`` with -1 past each state's action count."""
        out = np.full(model.padded_shape[:2], -1, dtype=np.int64)
        for s, row in enumerate(self.follower):
            out[s, : len(row)] = row
        return out

    def validate(self, model: GameModel) -> None:
        if len(self.leader) != model.n_states or len(self.follower) != model.n_states:
            raise ValueError("profile does not cover every state")
        for s in range(model.n_states):
            if not 0 <= self.leader[s] < model.n_leader[s]:
                raise ValueError(f"leader index {self.leader[s]} invalid at state {s}")
            if len(self.follower[s]) != model.n_leader[s]:
                raise ValueError(f"follower response at state {s} must cover all {model.n_leader[s]} leader actions")
            for x, e in enumerate(self.follower[s]):
                if not 0 <= e < model.n_follower[s]:
                    raise ValueError(f"effort index {e} invalid at state {s}, action {x}")


@dataclass(frozen=True, eq=False)
class ValuePair:
    """Discounted values of both players per state."""

    w_x: np.ndarray
    w_e: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_x", _frozen(np.asarray(self.w_x, dtype=float)))
        object.__setattr__(self, "w_e", _frozen(np.asarray(self.w_e, dtype=float)))

    def allclose(self, other: ValuePair, atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.w_x, other.w_x, atol=atol, rtol=0) and np.allclose(self.w_e, other.w_e, atol=atol, rtol=0))


@dataclass(frozen=True)
class ViabilitySet:
    """Viability set ``V`` with an optional safe-action certificate."""

    members: frozenset[int]
    safe_action: Mapping[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(int(s) for s in self.members))
        if not self.members:
            raise ValueError("viability set must be nonempty")
        if self.safe_action is not None:
            safe = {int(k): int(v) for k, v in self.safe_action.items()}
            missing = self.members - set(safe)
            if missing:
                raise ValueError(f"safe action missing for states {sorted(missing)}")
            object.__setattr__(self, "safe_action", safe)

    def __hash__(self):
        return hash(self.members)

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[sorted(self.members)] = True
        return m

    @classmethod
    def everything(cls, model: GameModel) -> ViabilitySet:
        return cls(frozenset(range(model.n_states)))


@dataclass
class ValidationReport:
    """Outcome of :func:`validate_model`; ``failures`` maps check name to offending triples."""

    checks: dict[str, bool]
    failures: dict[str, list[tuple[int, int, int]]]
    warnings: dict[str, list[tuple[int, int, int]]]

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def summary(self) -> str:
        lines = []
        for name, passed in self.checks.items():
            status = "pass" if passed else "FAIL"
            extra = ""
            bad = self.failures.get(name) or self.warnings.get(name)
            if bad:
                extra = f" at (s,x,e) {bad[:5]}" + (" ..." if len(bad) > 5 else "")
            lines.append(f"{name}: {status}{extra}")
        return "\n".join(lines)


def validate_model(model: GameModel, require_monotone: bool = False, tol: float = KERNEL_TOL) -> ValidationReport:
    """Check every model invariant and report the offending ``(s, x, e)`` triples.

    Monotonicity of the exploiter payoff in the action index is reported as a
    warning unless ``require_monotone`` is set.
    """
    valid = model.valid
    idx = np.argwhere(valid)
    triples = [tuple(int(v) for v in t) for t in idx]

    def offending(mask: np.ndarray) -> list[tuple[int, int, int]]:
        return [t for t, bad in zip(triples, mask[valid]) if bad]

    checks: dict[str, bool] = {}
    failures: dict[str, list] = {}
    warns: dict[str, list] = {}

    sums = model.next_prob.sum(axis=-1)
    bad = offending(np.abs(sums - 1.0) > tol)
    checks["kernel_normalized"], failures["kernel_normalized"] = not bad, bad
    bad = offending((model.next_prob < 0).any(axis=-1))
    checks["kernel_nonnegative"], failures["kernel_nonnegative"] = not bad, bad
    n = model.n_states
    bad = offending(((model.next_state < 0) | (model.next_state >= n)).any(axis=-1))
    checks["kernel_support_in_range"], failures["kernel_support_in_range"] = not bad, bad
    bound = model.payoff_bound * (1 + 1e-12)
    bad = offending((np.abs(model.payoff_x) > bound) | (np.abs(model.payoff_e) > bound))
    checks["payoffs_bounded"], failures["payoffs_bounded"] = not bad, bad
    checks["actions_nonempty"] = bool(np.all(model.n_leader > 0) and np.all(model.n_follower > 0))
    failures["actions_nonempty"] = []

    # exploiter payoff weakly increasing along the leader-action order
    step = np.diff(model.payoff_x, axis=1) < -tol
    step &= valid[:, 1:, :] & valid[:, :-1, :]
    mono = [(int(s), int(x) + 1, int(e)) for s, x, e in np.argwhere(step)]
    checks["payoff_x_monotone"] = not mono or not require_monotone
    if mono:
        (failures if require_monotone else warns)["payoff_x_monotone"] = mono
        if not require_monotone:
            warnings.warn(f"exploiter payoff decreases in extraction at {len(mono)} entries", stacklevel=2)
    return ValidationReport(checks, {k: v for k, v in failures.items() if v}, warns)


def _policy_tables(model: GameModel, profile: StrategyProfile) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    s = np.arange(model.n_states)
    x = np.array(profile.leader)
    e = np.array([profile.follower[i][x[i]] for i in s])
    return model.next_state[s, x, e], model.next_prob[s, x, e], model.payoff_x[s, x, e], model.payoff_e[s, x, e]


def induced_kernel(model: GameModel, profile: StrategyProfile) -> np.ndarray:
    """Dense ``(n, n)`` transition matrix of the chain induced by ``profile``."""
    profile.validate(model)
    nxt, prob, _, _ = _policy_tables(model, profile)
    n = model.n_states
    P = np.zeros((n, n))
    np.add.at(P, (np.repeat(np.arange(n), nxt.shape[1]), nxt.ravel()), prob.ravel())
    return P


def evaluate_policies(
    model: GameModel,
    profile: StrategyProfile,
    tol: float = VALUE_TOL,
    method: str = "iterate",
    max_sweeps: int | None = None,
) -> ValuePair:
    """Discounted values of a fixed profile.

    ``method="iterate"`` runs synchronous sweeps until successive iterates
    differ by at most ``tol`` in sup norm (so the recursion residual is at most
    ``discount * tol``); ``"direct"`` solves the linear system.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    profile.validate(model)
    nxt, prob, ux, ue = _policy_tables(model, profile)
    delta = model.discount
    if method == "direct":
        P = induced_kernel(model, profile)
        A = np.eye(model.n_states) - delta * P
        w = np.linalg.solve(A, np.stack([ux, ue], axis=1))
        return ValuePair(w[:, 0], w[:, 1])
    if method != "iterate":
        raise ValueError(f"unknown method {method!r}")
    r = np.stack([ux, ue], axis=1)
    w = np.zeros_like(r)
    if max_sweeps is None:
        scale = max(model.payoff_bound / (1 - delta), tol)
        max_sweeps = int(math.ceil(math.log(tol / scale) / math.log(delta))) + 10
    gap = math.inf
    for _ in range(max(max_sweeps, 1)):
        w_new = r + delta * (prob[:, :, None] * w[nxt]).sum(axis=1)
        gap = float(np.abs(w_new - w).max())
        w = w_new
        if gap <= tol:
            return ValuePair(w[:, 0], w[:, 1])
    raise ConvergenceError("policy evaluation did not converge", gap)


@dataclass(frozen=True)
class Step:
    state: int
    leader_action: int
    effort: int
    payoff_x: float
    payoff_e: float


def simulate_trajectory(
    model: GameModel, profile: StrategyProfile, start: int, horizon: int, seed: int = 0
) -> list[Step]:
    """Sample a path of length ``horizon`` under ``profile``.

    Rows with a single support point never touch the generator, so
    deterministic models give the same path for every seed.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    profile.validate(model)
    rng = np.random.default_rng(seed)
    path = []
    s = int(start)
    for _ in range(horizon):
        x, e = profile.on_path(s)
        path.append(Step(s, x, e, float(model.payoff_x[s, x, e]), float(model.payoff_e[s, x, e])))
        support = model.next_prob[s, x, e] > 0
        nxt = model.next_state[s, x, e][support]
        if len(nxt) == 1:
            s = int(nxt[0])
        else:
            p = model.next_prob[s, x, e][support]
            s = int(rng.choice(nxt, p=p / p.sum()))
    return path


def toy3(discount: float = 0.9) -> tuple[GameModel, ViabilitySet]:
    """Three-state desk fixture with an absorbing collapse state 0.

    Leader actions L (index 0) and H (index 1) at states 1 and 2, efforts 0
    and 1.  ``V = {1, 2}`` with L as the safe action.
    """

    def trans(s, x, e):
        if s == 0:
            return {0: 1.0}
        if x == 0:
            return {s if e == 0 else min(s + 1, 2): 1.0}
        return {s - 1 if e == 0 else s: 1.0}

    def ux(s, x, e):
        return 0.0 if s == 0 else (2.0 if x == 1 else 1.0)

    def ue(s, x, e):
        return 0.0 if s == 0 else s - (1.0 if x == 1 else 0.0) - 0.5 * e

    model = GameModel.from_functions(
        states=[0, 1, 2],
        leader_actions=[[0.0], [0.0, 1.0], [0.0, 1.0]],
        follower_actions=[[0.0], [0.0, 1.0], [0.0, 1.0]],
        transition=trans,
        payoff_x=ux,
        payoff_e=ue,
        discount=discount,
        payoff_bound=2.0,
        initial_state=2,
        leader_names=[["null"], ["L", "H"], ["L", "H"]],
    )
    return model, ViabilitySet(frozenset({1, 2}), safe_action={1: 0, 2: 0})
