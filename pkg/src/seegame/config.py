"""YAML model/run configuration and deterministic result serialization.

A config file has a ``model`` section and an optional ``run`` section::

    model:
      type: table            # table | toy3 | hc
      discount: 0.9
      initial_state: 2
      states: [0, 1, 2]
      leader_actions: [[0], [0, 1], [0, 1]]
      follower_actions: [[0], [0, 1], [0, 1]]
      transitions:           # [state, leader, effort, {next: mass}]
        - [1, 0, 0, {1: 1.0}]
      payoffs:               # [state, leader, effort, u_x, u_e]
        - [1, 0, 0, 1.0, 1.0]
      viability: [1, 2]
      safe_action: {1: 0, 2: 0}   # optional; needed by the threshold search
    run:
      tol: 1.0e-8
      budget: 2000000
      penalty: null
      find_threshold: false
      selection_state: null
      rp_quantifier: some-state
      seed: 0
      horizon: 50
      start: null

Instead of tables, ``transition_formula`` / ``payoff_x_formula`` /
``payoff_e_formula`` give numpy expressions in the labels ``s``, ``x``, ``e``
and the indices ``i``, ``j``, ``k``.  A transition formula yields a state
label, rounded to the nearest state.  Unlisted (state, leader, effort)
triples default to a self-loop with zero payoffs.

``type: toy3`` takes only ``discount``; ``type: hc`` takes a ``params``
mapping of hegemon-client coefficients.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .game_core import GameModel, ViabilitySet, toy3
from .mse_solver import CERT_TOL, DEFAULT_BUDGET
from .refinement import QUANTIFIERS

SIG_DIGITS = 12
OUTPUT_ENV = "SEEGAME_OUTPUT_DIR"


class ConfigError(ValueError):
    """Config problem tied to a key path and, when known, a source line."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = "".join(p for p in (f" line {line}" if line else "", f" key '{key}'" if key else ""))
        super().__init__(f"config error{where}: {message}")
        self.key = key
        self.line = line
        self.reason = message


# --- loading with line tracking ----------------------------------------------


def _node_lines(node: yaml.Node, path: str, out: dict[str, int]) -> None:
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{path}.{k.value}" if path else str(k.value)
            _node_lines(v, key, out)
            out[key] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _node_lines(v, f"{path}[{i}]", out)


@dataclass
class _Doc:
    data: dict
    lines: dict[str, int]

    def line(self, key: str) -> int | None:
        while key:
            if key in self.lines:
                return self.lines[key]
            key = key.rsplit(".", 1)[0] if "." in key else ""
        return None

    def error(self, key: str, message: str) -> ConfigError:
        return ConfigError(message, key, self.line(key))


def _parse(text: str) -> _Doc:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(str(exc.problem or exc), None, mark.line + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", None, 1)
    lines: dict[str, int] = {}
    _node_lines(node, "", lines)
    return _Doc(data, lines)


def _require(doc: _Doc, section: dict, path: str, key: str):
    if key not in section:
        raise doc.error(path, f"missing required key '{key}' in section '{path}'") from None
    return section[key]


def _number(doc: _Doc, value, key: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise doc.error(key, f"expected a number, got {value!r}")
    if not math.isfinite(value) or (positive and value <= 0):
        raise doc.error(key, f"expected a {'positive ' if positive else ''}finite number, got {value!r}")
    return float(value)


_SAFE_NAMES = {name: getattr(np, name) for name in ("abs", "exp", "log", "sqrt", "minimum", "maximum", "clip", "where", "floor", "ceil")}


def _formula(doc: _Doc, expr: str, key: str):
    if not isinstance(expr, str):
        raise doc.error(key, "formula must be a string")
    try:
        code = compile(expr, f"<{key}>", "eval")
    except SyntaxError as exc:
        raise doc.error(key, f"bad formula: {exc.msg}") from None

    def fn(**env):
        try:
            return float(eval(code, {"__builtins__": {}}, {**_SAFE_NAMES, **env}))  # noqa: S307
        except Exception as exc:
            raise doc.error(key, f"formula failed: {exc}") from None

    return fn


def _table_model(doc: _Doc, m: dict) -> tuple[GameModel, ViabilitySet]:
    states = _require(doc, m, "model", "states")
    if not isinstance(states, list) or not states:
        raise doc.error("model.states", "expected a nonempty list")
    states = [_number(doc, v, "model.states") for v in states]
    n = len(states)
    acts = {}
    for key in ("leader_actions", "follower_actions"):
        rows = _require(doc, m, "model", key)
        if not isinstance(rows, list) or len(rows) != n or not all(isinstance(r, list) and r for r in rows):
            raise doc.error(f"model.{key}", f"expected {n} nonempty lists, one per state")
        acts[key] = [[_number(doc, v, f"model.{key}") for v in r] for r in rows]
    LA, FA = acts["leader_actions"], acts["follower_actions"]

    def in_range(s, x, e, key):
        if not (isinstance(s, int) and isinstance(x, int) and isinstance(e, int)):
            raise doc.error(key, "state, leader and effort must be integer indices")
        if not (0 <= s < n and 0 <= x < len(LA[s]) and 0 <= e < len(FA[s])):
            raise doc.error(key, f"index ({s}, {x}, {e}) out of range")

    trans: dict[tuple[int, int, int], dict[int, float]] = {}
    pay: dict[tuple[int, int, int], tuple[float, float]] = {}
    for i, row in enumerate(m.get("transitions") or []):
        key = f"model.transitions[{i}]"
        if not (isinstance(row, list) and len(row) == 4 and isinstance(row[3], dict)):
            raise doc.error(key, "expected [state, leader, effort, {next: mass}]")
        in_range(*row[:3], key)
        dist = {}
        for t, p in row[3].items():
            if not isinstance(t, int) or not 0 <= t < n:
                raise doc.error(key, f"next state {t!r} out of range")
            dist[t] = _number(doc, p, key)
        if any(p < 0 for p in dist.values()) or abs(sum(dist.values()) - 1.0) > 1e-12:
            raise doc.error(key, "masses must be nonnegative and sum to 1")
        trans[tuple(row[:3])] = dist
    for i, row in enumerate(m.get("payoffs") or []):
        key = f"model.payoffs[{i}]"
        if not (isinstance(row, list) and len(row) == 5):
            raise doc.error(key, "expected [state, leader, effort, u_x, u_e]")
        in_range(*row[:3], key)
        pay[tuple(row[:3])] = (_number(doc, row[3], key), _number(doc, row[4], key))

    f_next = _formula(doc, m["transition_formula"], "model.transition_formula") if "transition_formula" in m else None
    f_ux = _formula(doc, m["payoff_x_formula"], "model.payoff_x_formula") if "payoff_x_formula" in m else None
    f_ue = _formula(doc, m["payoff_e_formula"], "model.payoff_e_formula") if "payoff_e_formula" in m else None
    S = np.array(states)

    def env(s, x, e):
        return {"s": states[s], "x": LA[s][x], "e": FA[s][e], "i": s, "j": x, "k": e}

    def transition(s, x, e):
        if (s, x, e) in trans:
            return trans[s, x, e]
        if f_next is not None:
            y = f_next(**env(s, x, e))
            return {int(np.argmin(np.abs(S - y) - 1e-12 * (S >= y))): 1.0}
        return {s: 1.0}

    def ux(s, x, e):
        if (s, x, e) in pay:
            return pay[s, x, e][0]
        return f_ux(**env(s, x, e)) if f_ux else 0.0

    def ue(s, x, e):
        if (s, x, e) in pay:
            return pay[s, x, e][1]
        return f_ue(**env(s, x, e)) if f_ue else 0.0

    discount = _number(doc, _require(doc, m, "model", "discount"), "model.discount")
    init = m.get("initial_state", 0)
    if not isinstance(init, int) or not 0 <= init < n:
        raise doc.error("model.initial_state", f"expected a state index in [0, {n})")
    try:
        model = GameModel.from_functions(states, LA, FA, transition, ux, ue, discount, initial_state=init)
    except ValueError as exc:
        raise doc.error("model", str(exc)) from None
    members = m.get("viability", list(range(n)))
    if not isinstance(members, list) or not all(isinstance(v, int) and 0 <= v < n for v in members):
        raise doc.error("model.viability", "expected a list of state indices")
    safe = m.get("safe_action")
    if safe is not None and not (isinstance(safe, dict) and all(isinstance(k, int) and isinstance(v, int) for k, v in safe.items())):
        raise doc.error("model.safe_action", "expected a mapping from state index to leader index")
    try:
        return model, ViabilitySet(frozenset(members), safe)
    except (TypeError, ValueError) as exc:
        raise doc.error("model.viability", str(exc)) from None


def _hc_params(doc: _Doc, m: dict):
    from .hegemon_client import HCParams

    raw = m.get("params") or {}
    if not isinstance(raw, dict):
        raise doc.error("model.params", "expected a mapping")
    names = {f.name: f for f in fields(HCParams)}
    kw: dict[str, Any] = {}
    for k, v in raw.items():
        key = f"model.params.{k}"
        if k not in names:
            raise doc.error(key, "unknown hegemon-client parameter")
        if k.endswith("_grid"):
            if not (isinstance(v, list) and len(v) == 3 and isinstance(v[2], int) and v[2] >= 2):
                raise doc.error(key, "expected [low, high, count] with count >= 2")
            kw[k] = (_number(doc, v[0], key), _number(doc, v[1], key), int(v[2]))
        elif k in ("transition", "phi_kind"):
            kw[k] = str(v)
        elif v is None and k in ("s0", "penalty"):
            kw[k] = None
        else:
            kw[k] = _number(doc, v, key)
    if "discount" in m:
        kw["discount"] = _number(doc, m["discount"], "model.discount")
    if "discount" not in kw:
        raise doc.error("model", "missing required key 'discount' in section 'model'")
    try:
        return HCParams(**kw)
    except (TypeError, ValueError) as exc:
        raise doc.error("model.params", str(exc)) from None


@dataclass
class RunConfig:
    """Everything that determines one CLI run."""

    source: str
    model_type: str
    model: GameModel | None
    viability: ViabilitySet | None
    hc_params: Any = None
    tol: float = CERT_TOL
    budget: int = DEFAULT_BUDGET
    penalty: float | None = None
    find_threshold: bool = False
    selection_state: int | None = None
    rp_quantifier: str = "some-state"
    seed: int = 0
    horizon: int = 50
    start: int | None = None
    output_dir: str = "seegame-out"
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.tol > 0:
            raise ConfigError("tolerance must be positive", "run.tol")
        if self.budget < 1:
            raise ConfigError("budget must be positive", "run.budget")
        if self.rp_quantifier not in QUANTIFIERS:
            raise ConfigError(f"must be one of {QUANTIFIERS}", "run.rp_quantifier")
        if self.penalty is not None and self.penalty < 0:
            raise ConfigError("penalty must be nonnegative", "run.penalty")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1", "run.horizon")
        if self.model is not None:
            n = self.model.n_states
            for key, v in (("run.selection_state", self.selection_state), ("run.start", self.start)):
                if v is not None and not 0 <= v < n:
                    raise ConfigError(f"state index {v} out of range", key)


_RUN_KEYS = {
    "tol": float,
    "budget": int,
    "penalty": float,
    "find_threshold": bool,
    "selection_state": int,
    "rp_quantifier": str,
    "seed": int,
    "horizon": int,
    "start": int,
}


def load_config(path: str | os.PathLike) -> RunConfig:
    """Parse a config file into a validated ``RunConfig``.

    Raises:
        ConfigError: unreadable file, bad YAML, or a missing/invalid key;
            the message cites the key and line.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    doc = _parse(text)
    m = _require(doc, doc.data, "", "model")
    if not isinstance(m, dict):
        raise doc.error("model", "expected a mapping")
    kind = m.get("type", "table")
    hc = None
    if kind == "table":
        model, V = _table_model(doc, m)
    elif kind == "toy3":
        model, V = toy3(_number(doc, _require(doc, m, "model", "discount"), "model.discount"))
    elif kind == "hc":
        hc = _hc_params(doc, m)
        model, V = None, None
    else:
        raise doc.error("model.type", f"unknown model type {kind!r}")

    run = doc.data.get("run") or {}
    if not isinstance(run, dict):
        raise doc.error("run", "expected a mapping")
    kw: dict[str, Any] = {}
    for k, v in run.items():
        key = f"run.{k}"
        if k not in _RUN_KEYS:
            raise doc.error(key, "unknown run option")
        if v is None:
            kw[k] = None
            continue
        typ = _RUN_KEYS[k]
        if typ is bool:
            if not isinstance(v, bool):
                raise doc.error(key, "expected true or false")
            kw[k] = v
        elif typ is int:
            if isinstance(v, bool) or not isinstance(v, int):
                raise doc.error(key, f"expected an integer, got {v!r}")
            kw[k] = v
        elif typ is float:
            kw[k] = _number(doc, v, key)
        else:
            kw[k] = str(v)
    for k in ("tol", "budget", "find_threshold", "rp_quantifier", "seed", "horizon"):
        if kw.get(k, 0) is None:
            kw.pop(k)
    cfg = RunConfig(source=source, model_type=kind, model=model, viability=V, hc_params=hc, **kw)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise doc.error(exc.key, exc.reason) from None
    return cfg


# --- deterministic output ----------------------------------------------------


def fmt(v: float) -> str:
    """Fixed 12-significant-digit rendering with a canonical zero."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    out = f"{v:.{SIG_DIGITS}g}"
    return "0" if out in ("-0", "0") else out


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj))
    return obj


def to_yaml(obj) -> str:
    return yaml.safe_dump(_plain(obj), sort_keys=False, default_flow_style=None, width=120)


def to_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
