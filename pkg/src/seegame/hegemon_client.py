"""Hegemon-client extraction game on a state grid.

The hegemon (exploiter) picks extraction ``x``, the client (exploitee) then
picks effort ``e``, and political capacity moves to ``f(s, e) - h(x)``.
Primitives are parametric:

    pi(x)  = alpha * x**(0.5 + rho)        k(s, e) = kappa0 + kappa1 * e - kappa2 * s
    b(s)   = beta * s                      phi(e)  = gamma * e**2 / 2
    d(x)   = eta * x                       h(x)    = lam * x
    f(s,e) = s + r * s + a * e - c * s**2

Value functions exist only on the grid; their slopes are central differences
interpolated linearly between grid points, their curvature is the
difference of those slopes, and their level between grid points is the
matching antiderivative.  Derivatives of primitives are analytic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import brentq

from .game_core import ConvergenceError, GameModel, StrategyProfile, ValuePair, ViabilitySet
from .mse_solver import certified_singleton, solve_mse
from .refinement import RefinementReport, run_pipeline

SHAPE_TOL = 1e-12
# warm-start solves on coarse grids get a small budget; only the final grid gets the full one
COARSE_SWEEPS = 2_000
COARSE_REPAIRS = 200


class ShapeError(ValueError):
    """A primitive violates a required sign or convexity property."""


class NotInteriorError(ValueError):
    """The point sits on a grid or feasibility boundary; no interior FOC applies."""


@dataclass(frozen=True)
class HCParams:
    alpha: float = 1.0
    rho: float = 0.25
    kappa0: float = 0.0
    kappa1: float = 0.0
    kappa2: float = 0.0
    beta: float = 1.0
    gamma: float = 1.0
    eta: float = 0.5
    a: float = 1.0
    r: float = 0.0
    c: float = 0.1
    lam: float = 1.0
    phi_kind: str = "quadratic"
    s_min: float = 1.0
    discount: float = 0.9
    s_grid: tuple[float, float, int] = (0.0, 4.0, 81)
    x_grid: tuple[float, float, int] = (0.0, 2.0, 21)
    e_grid: tuple[float, float, int] = (0.0, 2.0, 21)
    s0: float | None = None
    transition: str = "nearest"
    penalty: float | None = None

    # primitives ---------------------------------------------------------
    def pi(self, x):
        return self.alpha * np.power(x, 0.5 + self.rho)

    def pi_x(self, x):
        return self.alpha * (0.5 + self.rho) * np.power(x, self.rho - 0.5)

    def k(self, s, e):
        return self.kappa0 + self.kappa1 * np.asarray(e) - self.kappa2 * np.asarray(s)

    def k_e(self, s, e):
        return self.kappa1

    def b(self, s):
        return self.beta * np.asarray(s)

    def phi(self, e):
        e = np.asarray(e)
        return 0.5 * self.gamma * e**2 if self.phi_kind == "quadratic" else self.gamma * e

    def phi_e(self, e):
        e = np.asarray(e)
        return self.gamma * e if self.phi_kind == "quadratic" else self.gamma + 0.0 * e

    def phi_ee(self, e):
        return self.gamma if self.phi_kind == "quadratic" else 0.0

    def d(self, x):
        return self.eta * np.asarray(x)

    def f(self, s, e):
        s = np.asarray(s)
        return s + self.r * s + self.a * np.asarray(e) - self.c * s**2

    def f_s(self, s, e):
        return 1.0 + self.r - 2.0 * self.c * np.asarray(s) + 0.0 * np.asarray(e)

    def f_e(self, s, e):
        return self.a + 0.0 * np.asarray(s) + 0.0 * np.asarray(e)

    def f_ee(self, s, e):
        return 0.0

    def h(self, x):
        return self.lam * np.asarray(x)

    def h_x(self, x):
        return self.lam + 0.0 * np.asarray(x)

    def h_inv(self, y):
        y = np.asarray(y, dtype=float)
        if self.lam == 0:
            return np.full_like(y, np.inf)
        return y / self.lam

    # grids --------------------------------------------------------------
    def grid(self, which: str) -> np.ndarray:
        lo, hi, n = getattr(self, f"{which}_grid")
        return np.linspace(lo, hi, int(n))

    def step(self, which: str) -> float:
        lo, hi, n = getattr(self, f"{which}_grid")
        return (hi - lo) / (int(n) - 1)

    def unconstrained(self) -> HCParams:
        """Same primitives with the viability floor lowered to the grid floor."""
        return replace(self, s_min=self.s_grid[0])

    def refined(self, factor: int = 2, which: tuple[str, ...] = ("s", "x", "e")) -> HCParams:
        """Grids named in ``which`` with every step divided by ``factor`` (nested point sets)."""

        def ref(g):
            return (g[0], g[1], (int(g[2]) - 1) * factor + 1)

        return replace(self, **{f"{w}_grid": ref(getattr(self, f"{w}_grid")) for w in which})


def shape_violations(params: HCParams) -> dict[str, list[float]]:
    """Grid points where a qualitative shape property fails (empty dict if none)."""
    S, X, E = params.grid("s"), params.grid("x"), params.grid("e")
    bad: dict[str, list[float]] = {}

    def record(name, points):
        points = [float(p) for p in np.atleast_1d(points)]
        if points:
            bad[name] = points

    record("pi strictly increasing", X[1:][np.diff(params.pi(X)) <= 0])
    phi = params.phi(E)
    record("phi convex", E[1:-1][phi[2:] - 2 * phi[1:-1] + phi[:-2] < -SHAPE_TOL])
    if abs(float(params.phi_e(0.0))) > SHAPE_TOL:
        record("phi'(0) = 0", [0.0])
    record("b weakly increasing", S[1:][np.diff(params.b(S)) < -SHAPE_TOL])
    record("d weakly increasing", X[1:][np.diff(params.d(X)) < -SHAPE_TOL])
    ss, ee = np.meshgrid(S, E, indexing="ij")
    fv = params.f(ss, ee)
    record("f increasing in s", S[1:][(np.diff(fv, axis=0) <= 0).any(axis=1)])
    record("f increasing in e", E[1:][(np.diff(fv, axis=1) <= 0).any(axis=0)])
    record("h weakly increasing", X[1:][np.diff(params.h(X)) < -SHAPE_TOL])
    record("k nonnegative", E[(params.k(ss, ee) < 0).any(axis=0)])
    if not 0 < params.discount < 1:
        record("discount in (0, 1)", [params.discount])
    if not params.s_grid[0] <= params.s_min <= params.s_grid[1]:
        record("s_min inside the state grid", [params.s_min])
    return bad


def check_shapes(params: HCParams) -> None:
    bad = shape_violations(params)
    if bad:
        detail = "; ".join(f"{k} fails at {v[:4]}" for k, v in bad.items())
        raise ShapeError(detail)


def _round_half_up(y: np.ndarray, grid: np.ndarray) -> np.ndarray:
    lo, step = grid[0], grid[1] - grid[0]
    pos = (np.clip(y, grid[0], grid[-1]) - lo) / step
    return np.clip(np.floor(pos + 0.5 + 1e-9), 0, len(grid) - 1).astype(np.int64)


def _interp_weights(y: np.ndarray, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo, step = grid[0], grid[1] - grid[0]
    pos = (np.clip(y, grid[0], grid[-1]) - lo) / step
    i = np.clip(np.floor(pos + 1e-12), 0, len(grid) - 2).astype(np.int64)
    w = np.clip(pos - i, 0.0, 1.0)
    idx = np.stack([i, i + 1], axis=-1)
    prob = np.stack([1.0 - w, w], axis=-1)
    return idx, prob


def feasible_actions(params: HCParams, s: float) -> np.ndarray:
    """Extraction grid points with ``h(x) <= f(s, e_max) - s_min`` (at least the smallest)."""
    X = params.grid("x")
    e_max = params.grid("e")[-1]
    ok = params.h(X) <= params.f(s, e_max) - params.s_min + 1e-12
    ok[0] = True
    return X[ok]


def build_hc_model(params: HCParams) -> tuple[GameModel, ViabilitySet]:
    """Grid game for ``params`` and ``V = {s >= s_min}``.

    States below ``s_min`` are absorbing collapse states with a single null
    action pair and zero stage payoffs for both players.  Payoffs and the
    transition use realized extraction, capped at the stock available above
    the grid floor.  The kernel maps to the nearest grid state
    (``transition="nearest"``) or splits mass linearly between the two
    neighbours (``"linear"``).
    """
    check_shapes(params)
    S, X, E = params.grid("s"), params.grid("x"), params.grid("e")
    n, NX, NE = len(S), len(X), len(E)
    inside = S >= params.s_min - 1e-12
    leader = []
    follower = []
    for i, s in enumerate(S):
        if inside[i]:
            leader.append(feasible_actions(params, s))
            follower.append(E)
        else:
            leader.append(X[:1])
            follower.append(E[:1])
    ss, xx, ee = np.meshgrid(S, X, E, indexing="ij")
    # extraction cannot exceed what regeneration leaves above the grid floor
    xx = np.minimum(xx, params.h_inv(np.maximum(params.f(ss, ee) - S[0], 0.0)))
    nxt_label = params.f(ss, ee) - params.h(xx)
    if params.transition == "nearest":
        idx = _round_half_up(nxt_label, S)[..., None]
        prob = np.ones_like(idx, dtype=float)
    elif params.transition == "linear":
        idx, prob = _interp_weights(nxt_label, S)
    else:
        raise ValueError(f"unknown transition rule {params.transition!r}")
    collapse = ~inside
    idx[collapse] = np.arange(n)[collapse][:, None, None, None]
    prob[collapse] = 0.0
    prob[collapse, ..., 0] = 1.0
    ux = params.pi(xx) - params.k(ss, ee)
    ue = params.b(ss) - params.phi(ee) - params.d(xx)
    ux[collapse] = 0.0
    ue[collapse] = 0.0
    nx = np.array([len(a) for a in leader])
    ne = np.array([len(a) for a in follower])
    pad = (np.arange(NX)[None, :, None] >= nx[:, None, None]) | (np.arange(NE)[None, None, :] >= ne[:, None, None])
    ux = np.where(pad, 0.0, ux)
    ue = np.where(pad, 0.0, ue)
    idx = np.where(pad[..., None], np.arange(n)[:, None, None, None], idx)
    prob = np.where(pad[..., None], np.eye(idx.shape[-1])[0], prob)
    bound = float(max(np.abs(ux).max(), np.abs(ue).max()))
    s0 = S[-1] if params.s0 is None else params.s0
    model = GameModel(
        states=S,
        leader_actions=tuple(leader),
        follower_actions=tuple(follower),
        next_state=idx,
        next_prob=prob,
        payoff_x=ux,
        payoff_e=ue,
        discount=params.discount,
        payoff_bound=bound,
        initial_state=int(np.argmin(np.abs(S - s0))),
    )
    members = frozenset(int(i) for i in np.flatnonzero(inside))
    return model, ViabilitySet(members, safe_action={i: 0 for i in members})


class ValueFunction:
    """Grid values with a smooth level consistent with the interpolated slope.

    Slopes are central differences at the grid points, interpolated
    linearly in between.  The level is the antiderivative of that slope,
    shifted to fit the grid values in least squares, so level, slope and
    curvature describe one C1 function.
    """

    def __init__(self, grid: np.ndarray, values: np.ndarray, domain: np.ndarray | None = None):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if domain is not None:
            grid, values = grid[domain], values[domain]
        if len(grid) < 3:
            raise ValueError("need at least three grid points for slopes")
        self.grid = grid
        self.values = values
        self.slopes = np.gradient(values, grid, edge_order=2)
        cum = np.concatenate([[0.0], np.cumsum(np.diff(grid) * 0.5 * (self.slopes[1:] + self.slopes[:-1]))])
        self._level = cum + float(np.mean(values - cum))

    @classmethod
    def fit(cls, grid: np.ndarray, values: np.ndarray, degree: int = 2, domain: np.ndarray | None = None) -> ValueFunction:
        """Least-squares polynomial projection of ``values`` before differencing.

        Equilibrium values on a grid carry jumps from the discrete policies;
        a low-degree fit removes them so that slopes reflect the trend.
        """
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        mask = np.ones(len(grid), dtype=bool) if domain is None else np.asarray(domain, dtype=bool)
        poly = Polynomial.fit(grid[mask], values[mask], degree)
        return cls(grid, poly(grid), mask)

    def _segment(self, s):
        s = np.clip(np.asarray(s, dtype=float), self.grid[0], self.grid[-1])
        i = np.clip(np.searchsorted(self.grid, s, side="right") - 1, 0, len(self.grid) - 2)
        return s, i, self.grid[i + 1] - self.grid[i]

    def __call__(self, s):
        s, i, h = self._segment(s)
        t = s - self.grid[i]
        m0, m1 = self.slopes[i], self.slopes[i + 1]
        return self._level[i] + m0 * t + 0.5 * (m1 - m0) * t**2 / h

    def slope(self, s):
        return np.interp(s, self.grid, self.slopes)

    def curvature(self, s):
        _, i, h = self._segment(s)
        return (self.slopes[i + 1] - self.slopes[i]) / h


def _as_vf(params: HCParams, w) -> ValueFunction:
    return w if isinstance(w, ValueFunction) else ValueFunction(params.grid("s"), w)


def _next_state(params: HCParams, s, x, e):
    lo, hi = params.s_grid[0], params.s_grid[1]
    return np.clip(params.f(s, e) - params.h(x), lo, hi)


def _check_unclipped(params: HCParams, s: float, x: float, e: float) -> None:
    lo, hi = params.s_grid[0], params.s_grid[1]
    nxt = float(params.f(s, e) - params.h(x))
    if not lo < nxt < hi:
        raise NotInteriorError(f"next state {nxt} is clamped to the grid at s={s}, x={x}")


def follower_foc_residual(params: HCParams, w_c, s: float, x: float, e: float, check_interior: bool = True) -> float:
    """``-phi'(e) + delta * W'(s') * f_e(s, e)`` with ``s' = f(s, e) - h(x)``.

    Raises:
        NotInteriorError: ``e`` lies on the effort-grid boundary or the next
            state is clamped to the state grid.
    """
    E = params.grid("e")
    if check_interior:
        if not E[0] < e < E[-1]:
            raise NotInteriorError(f"effort {e} is on the grid boundary")
        _check_unclipped(params, s, x, e)
    vf = _as_vf(params, w_c)
    sp = _next_state(params, s, x, e)
    return float(-params.phi_e(e) + params.discount * vf.slope(sp) * params.f_e(s, e))


def follower_response(params: HCParams, w_c, s: float, x: float) -> float:
    """Continuous effort solving the follower FOC, or a corner of the effort range."""
    E = params.grid("e")
    vf = _as_vf(params, w_c)

    def foc(e):
        return follower_foc_residual(params, vf, s, x, e, check_interior=False)

    lo, hi = foc(E[0]), foc(E[-1])
    if lo <= 0:
        return float(E[0])
    if hi >= 0:
        return float(E[-1])
    return float(brentq(foc, E[0], E[-1], xtol=1e-14, rtol=1e-14))


def follower_grid_optimum(params: HCParams, w_c, s: float, x: float) -> float:
    """Effort-grid argmax of the follower objective with interpolated continuation."""
    E = params.grid("e")
    vf = _as_vf(params, w_c)
    obj = params.b(s) - params.phi(E) - params.d(x) + params.discount * vf(_next_state(params, s, x, E))
    return float(E[int(np.argmax(obj))])


@dataclass(frozen=True)
class Sensitivity:
    """Effort response to extraction: implicit-function and finite-difference values."""

    ift: float
    finite_difference: float
    effort: float
    second_order: float
    degenerate: bool


def effort_sensitivity(params: HCParams, w_c, s: float, x: float, dx: float | None = None, degenerate_tol: float = 1e-8) -> Sensitivity:
    """``de*/dx`` at ``(s, x)`` by the implicit function theorem and by re-solving.

    Raises:
        NotInteriorError: the follower optimum sits on the effort boundary.
    """
    vf = _as_vf(params, w_c)
    E = params.grid("e")
    e = follower_response(params, vf, s, x)
    if not E[0] < e < E[-1]:
        raise NotInteriorError(f"follower optimum {e} is a corner at s={s}, x={x}")
    delta = params.discount
    sp = _next_state(params, s, x, e)
    fe = params.f_e(s, e)
    w1, w2 = vf.slope(sp), vf.curvature(sp)
    foc_e = -params.phi_ee(e) + delta * (w2 * fe**2 + w1 * params.f_ee(s, e))
    foc_x = -delta * w2 * fe * params.h_x(x)
    degenerate = bool(abs(foc_e) < degenerate_tol)
    ift = math.nan if degenerate else float(-foc_x / foc_e)
    if dx is None:
        dx = 1e-3 * params.step("x")
    lo = follower_response(params, vf, s, x - dx)
    hi = follower_response(params, vf, s, x + dx)
    fd = (hi - lo) / (2 * dx)
    return Sensitivity(ift, float(fd), e, float(foc_e), degenerate)


@dataclass(frozen=True)
class LeaderFOC:
    residual: float
    k_corrected: float
    slackness: float
    complementary_slackness: float
    effort: float
    effort_sensitivity: float


def leader_foc_residual(params: HCParams, v_h, w_c, s: float, x: float, mu: float = 0.0, check_interior: bool = True) -> LeaderFOC:
    """Leader first-order condition with the viability multiplier ``mu``.

    ``residual`` is ``pi'(x) - (delta V'(s') + mu) (h'(x) - f_e de*/dx)``;
    ``k_corrected`` also subtracts ``k_e de*/dx``.  The complementary
    slackness product is ``mu * (f(s, e*) - h(x) - s_min)``.

    Raises:
        NotInteriorError: ``x`` is at an end of the feasible extraction range
            or the next state is clamped to the state grid.
    """
    if mu < 0:
        raise ValueError("multiplier must be nonnegative")
    feas = feasible_actions(params, s)
    if check_interior and not (feas[0] < x < feas[-1] or (len(feas) > 1 and x == feas[-1] and mu > 0)):
        raise NotInteriorError(f"extraction {x} is on the feasible boundary at s={s}")
    vf_h, vf_c = _as_vf(params, v_h), _as_vf(params, w_c)
    sens = effort_sensitivity(params, vf_c, s, x)
    de = 0.0 if sens.degenerate else sens.ift
    e = sens.effort
    if check_interior:
        _check_unclipped(params, s, x, e)
    net = params.h_x(x) - params.f_e(s, e) * de
    sp = _next_state(params, s, x, e)
    res = float(params.pi_x(x) - (params.discount * vf_h.slope(sp) + mu) * net)
    slack = float(params.f(s, e) - params.h(x) - params.s_min)
    return LeaderFOC(res, res - params.k_e(s, e) * de, slack, mu * slack, e, de)


def leader_objective(params: HCParams, v_h, w_c, s: float, xs: np.ndarray) -> np.ndarray:
    """Leader objective on extraction points with the continuous follower response."""
    vf_h, vf_c = _as_vf(params, v_h), _as_vf(params, w_c)
    es = np.array([follower_response(params, vf_c, s, x) for x in xs])
    return params.pi(xs) - params.k(s, es) + params.discount * vf_h(_next_state(params, s, xs, es))


def leader_grid_optimum(params: HCParams, v_h, w_c, s: float) -> float:
    xs = feasible_actions(params, s)
    return float(xs[int(np.argmax(leader_objective(params, v_h, w_c, s, xs)))])


@dataclass(frozen=True)
class FOCStudy:
    """Summarized FOC residuals at grid optima, one entry per refinement level."""

    x_steps: list[float]
    follower: list[float]
    leader: list[float]
    states: list[float]

    def ratios(self) -> tuple[list[float], list[float]]:
        def r(v):
            return [b / a if a > 0 else math.nan for a, b in zip(v, v[1:])]

        return r(self.follower), r(self.leader)


def _check_bracket(params: HCParams, w_c: ValueFunction, s: float, x: float, h: float) -> None:
    """``x -+ h`` must be feasible and keep effort and next state interior."""
    E = params.grid("e")
    feas = feasible_actions(params, s)
    if not (feas[0] < x - h and x + h < feas[-1]):
        raise NotInteriorError(f"extraction {x} is within {h} of the feasible boundary at s={s}")
    for z in (x - h, x + h):
        e = follower_response(params, w_c, s, z)
        if not E[0] < e < E[-1]:
            raise NotInteriorError(f"effort is a corner next to x={x} at s={s}")
        _check_unclipped(params, s, z, e)


def foc_refinement_study(
    params: HCParams, v_h, w_c, states, levels: int = 3, aggregate: str = "max"
) -> FOCStudy:
    """FOC residuals at grid optima as the action grids are halved ``levels - 1`` times.

    Value functions stay fixed, so only the action discretization changes.
    A state is dropped when, at any level, the points one coarse step
    either side of the leader optimum leave the feasible range, or give a
    corner effort or a next state clamped to the grid, or when the follower
    optimum is a corner.  The kept residuals are summarized per level by
    ``aggregate``: ``"max"`` for the largest, ``"rms"`` for the root mean
    square, which averages out where each optimum happens to fall between
    grid points.  The
    leader residual is the k-corrected one, the exact derivative of the
    objective that the grid search maximizes.
    """
    vf_h, vf_c = _as_vf(params, v_h), _as_vf(params, w_c)
    grids = [params.refined(2**k, which=("x", "e")) for k in range(levels)]
    rows = []
    kept = []
    for s in states:
        row = []
        for p in grids:
            x = leader_grid_optimum(p, vf_h, vf_c, s)
            e = follower_grid_optimum(p, vf_c, s, x)
            try:
                _check_bracket(p, vf_c, s, x, params.step("x"))
                fol = follower_foc_residual(p, vf_c, s, x, e)
                lead = leader_foc_residual(p, vf_h, vf_c, s, x).k_corrected
            except NotInteriorError:
                break
            row.append((abs(fol), abs(lead)))
        else:
            rows.append(row)
            kept.append(float(s))
    if not rows:
        raise NotInteriorError("no state in the window has an interior optimum at every level")
    arr = np.array(rows)
    if aggregate == "max":
        summary = arr.max(axis=0)
    elif aggregate == "rms":
        summary = np.sqrt((arr**2).mean(axis=0))
    else:
        raise ValueError(f"unknown aggregate {aggregate!r}")
    return FOCStudy([p.step("x") for p in grids], summary[:, 0].tolist(), summary[:, 1].tolist(), kept)


@dataclass(frozen=True)
class SteadyState:
    state: int
    label: float
    converged: bool
    cycle: tuple[int, ...] = ()


def find_steady_state(model: GameModel, profile: StrategyProfile, start: int, max_steps: int | None = None) -> SteadyState:
    """Iterate the induced deterministic map until it repeats.

    A fixed point is reported as converged; a longer cycle is reported with
    its members and ``converged=False``.
    """
    seen: dict[int, int] = {}
    path = []
    s = int(start)
    for _ in range(max_steps or model.n_states + 1):
        if s in seen:
            cycle = tuple(path[seen[s]:])
            if len(cycle) == 1:
                return SteadyState(s, float(model.states[s]), True, cycle)
            return SteadyState(s, float(model.states[s]), False, cycle)
        seen[s] = len(path)
        path.append(s)
        x, e = profile.on_path(s)
        support = model.next_prob[s, x, e] > 0
        nxt = model.next_state[s, x, e][support]
        if len(set(nxt.tolist())) != 1:
            raise ValueError("steady-state iteration needs a deterministic model")
        s = int(nxt[0])
    raise RuntimeError("steady-state iteration exceeded the state count")


@dataclass
class HCSolution:
    params: HCParams
    model: GameModel
    viability: ViabilitySet
    report: RefinementReport
    profile: StrategyProfile
    values: ValuePair
    penalty: float


def default_penalty(params: HCParams, model: GameModel) -> float:
    if params.penalty is not None:
        return float(params.penalty)
    p_min = 1.0
    if params.transition == "linear":
        p_min = 0.5
    return 2 * model.payoff_bound / ((1 - model.discount) * p_min)


def _coarse_sizes(n: int, start: int = 41) -> list[int]:
    sizes = []
    k = start
    while k < n:
        sizes.append(k)
        k = 2 * (k - 1) + 1
    return sizes + [n]


def _penalized(params: HCParams) -> tuple[GameModel, ViabilitySet, GameModel, float]:
    from .refinement import PenaltySpec, penalize

    model, V = build_hc_model(params)
    m = default_penalty(params, model) if params.s_min > params.s_grid[0] else 0.0
    return model, V, penalize(model, PenaltySpec(m, V)), m


def solve_hc(params: HCParams, tol: float = 1e-10, max_sweeps: int = 20_000, continuation: bool = True) -> HCSolution:
    """Build the grid game, solve the penalized game, and run the refinement stages on it.

    With ``continuation`` the state grid is first solved at 41, 81, 161, ...
    points and each solution, interpolated onto the next grid, seeds the
    next solve.  Coarse solves that fail are skipped.  Only the final
    grid's equilibrium is used.
    """
    lo, hi, n = params.s_grid
    sizes = _coarse_sizes(int(n)) if continuation else [int(n)]
    prev = None
    for size in sizes:
        model, V, game, m = _penalized(replace(params, s_grid=(lo, hi, size)))
        init = None
        if prev is not None:
            init = ValuePair(np.interp(model.states, prev[0], prev[1].w_x), np.interp(model.states, prev[0], prev[1].w_e))
        final = size == sizes[-1]
        try:
            if final:
                profile, values = solve_mse(game, tol=tol, max_sweeps=max_sweeps, init=init)
            else:
                profile, values = solve_mse(game, tol=tol, max_sweeps=COARSE_SWEEPS, repair_steps=COARSE_REPAIRS, init=init)
        except ConvergenceError:
            if final:
                raise
            prev = None
            continue
        prev = (model.states, values)
    cands = certified_singleton(game, profile, values)
    report = run_pipeline(model, V, penalty=m, candidates=cands)
    return HCSolution(params, model, V, report, profile, values, m)


@dataclass
class RegimeReport:
    regime: str
    s_star: float
    x_star: float
    e_star: float
    mu: float
    follower_residual: float
    leader_residual: float
    cs_residual: float
    s_unconstrained: float
    grid_state: float
    grid_extraction: float
    golden_rule: tuple[float, float] | None = None
    leader_residual_k_corrected: float = math.nan
    notes: list[str] = field(default_factory=list)


def _interior_value(fn, *args):
    try:
        return fn(*args)
    except NotInteriorError:
        return None


def classify_regime(params: HCParams, solution: HCSolution | None = None, tol: float = 1e-8) -> RegimeReport:
    """Interior/boundary classification of the selected equilibrium.

    The unconstrained benchmark solves the same game with the floor at the
    grid bottom.  Its steady state above ``s_min`` means the viability
    constraint is slack (``mu = 0``); otherwise the state is pinned at
    ``s_min`` and ``mu`` is recovered from the leader FOC.
    """
    if params.transition != "nearest":
        raise ValueError("regime classification iterates a deterministic map; use transition='nearest'")
    if solution is None:
        solution = solve_hc(params)
    notes: list[str] = []
    free = solve_hc(params.unconstrained())
    ss_free = find_steady_state(free.model, free.profile, free.model.initial_state)
    if not ss_free.converged:
        notes.append(f"unconstrained play cycles over states {ss_free.cycle}")
    s_free = float(np.mean(free.model.states[list(ss_free.cycle)]))

    model, prof = solution.model, solution.profile
    if solution.report.selected is None:
        raise RuntimeError("the constrained game has no selected equilibrium")
    ss = find_steady_state(model, prof, model.initial_state)
    grid_x, grid_e = prof.on_path(ss.state)
    grid_state = float(model.states[ss.state])
    grid_extraction = float(model.leader_actions[ss.state][grid_x])
    S = params.grid("s")
    inside = S >= params.s_min - 1e-12
    v_h = ValueFunction(S, solution.values.w_x, inside)
    w_c = ValueFunction(S, solution.values.w_e, inside)

    if s_free > params.s_min + 1e-12:
        s_star, x_star = grid_state, grid_extraction
        e_star = follower_response(params, w_c, s_star, x_star)
        f_res = _interior_value(follower_foc_residual, params, w_c, s_star, x_star, e_star)
        lead = _interior_value(leader_foc_residual, params, v_h, w_c, s_star, x_star, 0.0)
        ds = 1e-4 * params.step("s")
        de_ds = (follower_response(params, w_c, s_star + ds, x_star) - follower_response(params, w_c, s_star - ds, x_star)) / (2 * ds)
        regen = float(params.f_s(s_star, e_star) + params.f_e(s_star, e_star) * de_ds)
        if f_res is None or lead is None:
            notes.append("steady-state choice is a corner; FOC residual not defined")
        return RegimeReport(
            regime="interior",
            s_star=s_star,
            x_star=x_star,
            e_star=e_star,
            mu=0.0,
            follower_residual=math.nan if f_res is None else f_res,
            leader_residual=math.nan if lead is None else lead.residual,
            cs_residual=0.0,
            s_unconstrained=s_free,
            grid_state=grid_state,
            grid_extraction=grid_extraction,
            golden_rule=(regen, 1.0 / params.discount),
            leader_residual_k_corrected=math.nan if lead is None else lead.k_corrected,
            notes=notes,
        )

    s_star = params.s_min

    def gap(x):
        e = follower_response(params, w_c, s_star, x)
        return float(params.h(x) - (params.f(s_star, e) - s_star))

    X = params.grid("x")
    if gap(X[0]) >= 0:
        x_star = float(X[0])
        notes.append("boundary extraction is at the bottom of the grid")
    elif gap(X[-1]) <= 0:
        x_star = float(X[-1])
        notes.append("boundary extraction is at the top of the grid")
    else:
        x_star = float(brentq(gap, X[0], X[-1], xtol=1e-14))
        if abs(gap(x_star)) > tol:
            notes.append(f"boundary balance has no root; effort jumps at x={x_star:.6g}")
    e_star = follower_response(params, w_c, s_star, x_star)
    sens = _interior_value(effort_sensitivity, params, w_c, s_star, x_star)
    de = 0.0 if sens is None or sens.degenerate else sens.ift
    net = params.h_x(x_star) - params.f_e(s_star, e_star) * de
    sp = _next_state(params, s_star, x_star, e_star)
    mu = float(params.pi_x(x_star) / net - params.discount * v_h.slope(sp))
    if mu < 0:
        notes.append(f"recovered multiplier is negative ({mu:.3e})")
    lead = leader_foc_residual(params, v_h, w_c, s_star, x_star, max(mu, 0.0), check_interior=False)
    f_res = _interior_value(follower_foc_residual, params, w_c, s_star, x_star, e_star)
    return RegimeReport(
        regime="boundary",
        s_star=s_star,
        x_star=x_star,
        e_star=e_star,
        mu=max(mu, 0.0),
        follower_residual=math.nan if f_res is None else f_res,
        leader_residual=lead.residual,
        cs_residual=abs(lead.complementary_slackness),
        s_unconstrained=s_free,
        grid_state=grid_state,
        grid_extraction=grid_extraction,
        leader_residual_k_corrected=lead.k_corrected,
        notes=notes,
    )
