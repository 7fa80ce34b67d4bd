"""Command-line entry point: ``seegame <subcommand> CONFIG [options]``.

Every subcommand writes its artifacts atomically into the output directory
(``--output-dir``, else ``$SEEGAME_OUTPUT_DIR``, else ``./seegame-out``).
Failures print one JSON error record on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import OUTPUT_ENV, ConfigError, RunConfig, fmt, load_config, to_csv, to_yaml, write_atomic
from .game_core import ConvergenceError, GameModel, StrategyProfile, ViabilitySet, simulate_trajectory
from .mse_solver import BudgetExceededError, enumerate_stationary_mpe, one_shot_deviation_check, solve_mse
from .refinement import QUANTIFIERS, PenaltySpec, PenaltyThresholdError, RefinementReport, penalize, run_pipeline

log = logging.getLogger("seegame")

EXIT_CODES = {ConfigError: 2, BudgetExceededError: 3, ConvergenceError: 4, PenaltyThresholdError: 5}


def profile_label(p: StrategyProfile | None) -> str:
    if p is None:
        return "none"
    return "L" + "".join(map(str, p.leader)) + "/F" + "|".join("".join(map(str, f)) for f in p.follower)


def _profile_dict(p: StrategyProfile) -> dict:
    return {"id": profile_label(p), "leader": list(p.leader), "follower": [list(r) for r in p.follower]}


def _header(cfg: RunConfig, model: GameModel | None, command: str) -> dict:
    out = {"command": command, "config": Path(cfg.source).name, "seed": cfg.seed, "tol": cfg.tol}
    if model is not None:
        out["fingerprint"] = model.fingerprint()
    return out


def _model(cfg: RunConfig) -> tuple[GameModel, ViabilitySet]:
    if cfg.model is not None:
        return cfg.model, cfg.viability
    from .hegemon_client import build_hc_model

    return build_hc_model(cfg.hc_params)


def _game(cfg: RunConfig, model: GameModel, V: ViabilitySet) -> GameModel:
    return model if not cfg.penalty else penalize(model, PenaltySpec(cfg.penalty, V))


def _value_rows(cfg, model, members) -> list[list]:
    rows = []
    for profile, values in members:
        pid = profile_label(profile)
        for s in range(model.n_states):
            x, e = profile.on_path(s)
            rows.append([pid, s, float(model.states[s]), x, e, float(values.w_x[s]), float(values.w_e[s]), cfg.seed])
    return rows


VALUE_HEADER = ["profile", "state", "label", "leader", "effort", "w_x", "w_e", "seed"]


# --- subcommands ---------------------------------------------------------------


def cmd_solve(cfg: RunConfig, out: Path) -> None:
    model, V = _model(cfg)
    game = _game(cfg, model, V)
    profile, values = solve_mse(game, cert_tol=cfg.tol)
    rep = one_shot_deviation_check(game, profile, tol=cfg.tol, values=values)
    doc = _header(cfg, game, "solve")
    doc.update(penalty=cfg.penalty, profile=_profile_dict(profile), max_gain=rep.max_gain, certified=rep.certified(cfg.tol))
    write_atomic(out / "solve.yaml", to_yaml(doc))
    write_atomic(out / "values.csv", to_csv(VALUE_HEADER, _value_rows(cfg, game, [(profile, values)])))


def cmd_enumerate(cfg: RunConfig, out: Path) -> None:
    model, V = _model(cfg)
    game = _game(cfg, model, V)
    eq = enumerate_stationary_mpe(game, tol=cfg.tol, budget=cfg.budget)
    doc = _header(cfg, game, "enumerate")
    doc.update(
        penalty=cfg.penalty,
        count=len(eq),
        exhaustive=eq.exhaustive,
        equilibria=[{**_profile_dict(m.profile), "max_gain": m.report.max_gain} for m in eq],
    )
    write_atomic(out / "equilibria.yaml", to_yaml(doc))
    write_atomic(out / "values.csv", to_csv(VALUE_HEADER, _value_rows(cfg, game, [(m.profile, m.values) for m in eq])))


def _pipeline(cfg: RunConfig, model: GameModel, V: ViabilitySet) -> RefinementReport:
    return run_pipeline(
        model,
        V,
        penalty=cfg.penalty,
        find_threshold=cfg.find_threshold,
        selection_state=cfg.selection_state,
        quantifier=cfg.rp_quantifier,
        tol=cfg.tol,
        budget=cfg.budget,
    )


def _report_doc(cfg: RunConfig, model: GameModel, rep: RefinementReport) -> dict:
    doc = _header(cfg, model, "refine")
    doc["penalty"] = rep.penalty
    doc["quantifier"] = rep.quantifier
    doc["selection_state"] = rep.selection_state
    if rep.threshold is not None:
        th = rep.threshold
        doc["threshold"] = {
            "value": th.threshold,
            "analytic_bound": th.analytic_bound,
            "empty_at_threshold": th.empty_at_threshold,
            "safe_action_certified": th.safe_action_certified,
            "trials": [{"penalty": m, "equilibria": k, "all_viable": ok} for m, k, ok in th.trials],
        }
    doc["stage_sizes"] = rep.stage_sizes()
    doc["stages"] = {
        "mpe": [profile_label(p) for p in rep.mpe.profiles()],
        "viable": [profile_label(p) for p in rep.viable.profiles()],
        "renegotiation_proof": [profile_label(p) for p in rep.renegotiation_proof.profiles()],
    }
    if rep.ir is not None:
        doc["stages"]["individually_rational"] = [profile_label(p) for p in rep.ir.profiles()]
    doc["selected"] = None if rep.selected is None else _profile_dict(rep.selected)
    if rep.other_quantifier_rp is not None:
        doc["other_quantifier_rp"] = [profile_label(p) for p in rep.other_quantifier_rp]
    doc["notes"] = list(rep.notes)
    return doc


def cmd_refine(cfg: RunConfig, out: Path) -> None:
    model, V = _model(cfg)
    rep = _pipeline(cfg, model, V)
    write_atomic(out / "refinement.yaml", to_yaml(_report_doc(cfg, model, rep)))
    rows = [[profile_label(el.eliminated), profile_label(el.dominator), el.state, el.margin, cfg.seed] for el in rep.eliminations]
    write_atomic(out / "eliminations.csv", to_csv(["eliminated", "dominator", "state", "margin", "seed"], rows))
    write_atomic(out / "values.csv", to_csv(VALUE_HEADER, _value_rows(cfg, model, [(m.profile, m.values) for m in rep.mpe])))


def cmd_hc(cfg: RunConfig, out: Path) -> None:
    from .hegemon_client import classify_regime, solve_hc

    if cfg.hc_params is None:
        raise ConfigError("the hc subcommand needs a model of type 'hc'", "model.type")
    params = cfg.hc_params if cfg.penalty is None else replace(cfg.hc_params, penalty=cfg.penalty)
    sol = solve_hc(params)
    reg = classify_regime(params, sol)
    doc = _header(cfg, sol.model, "hc")
    doc["penalty"] = sol.penalty
    doc["selected"] = profile_label(sol.report.selected)
    doc["regime"] = {k: v for k, v in vars(reg).items() if k != "notes"}
    doc["regime"]["notes"] = list(reg.notes)
    write_atomic(out / "regime.yaml", to_yaml(doc))
    rows = []
    for s in range(sol.model.n_states):
        x, e = sol.profile.on_path(s)
        rows.append([
            float(sol.model.states[s]),
            float(sol.model.leader_actions[s][x]),
            float(sol.model.follower_actions[s][e]),
            float(sol.values.w_x[s]),
            float(sol.values.w_e[s]),
            cfg.seed,
        ])
    write_atomic(out / "policy.csv", to_csv(["s", "x_star", "e_star", "V_H", "W_C", "seed"], rows))


def cmd_hierarchy(cfg: RunConfig, out: Path) -> None:
    from .hierarchy import HierarchyError, verify_hierarchy

    model, V = _model(cfg)
    rep = verify_hierarchy(
        model,
        V,
        selection_state=cfg.selection_state,
        penalty=cfg.penalty,
        quantifier=cfg.rp_quantifier,
        tol=cfg.tol,
        budget=min(cfg.budget, 10**7),
        strict=False,
    )
    write_atomic(out / "hierarchy.txt", f"# seed: {cfg.seed}\n" + rep.to_text())
    if not rep.passed:
        name = next(k for k, ok in rep.verdicts.items() if not ok)
        raise HierarchyError(name, rep.details[name], rep.counterexamples.get(name))


def cmd_simulate(cfg: RunConfig, out: Path) -> None:
    model, V = _model(cfg)
    rep = _pipeline(cfg, model, V)
    source = "see"
    profile = rep.selected
    game = _game(cfg, model, V) if rep.penalty is None else penalize(model, PenaltySpec(rep.penalty, V))
    if profile is None:
        profile, _ = solve_mse(game, cert_tol=cfg.tol)
        source = "solve_mse"
    start = model.initial_state if cfg.start is None else cfg.start
    path = simulate_trajectory(model, profile, start, cfg.horizon, seed=cfg.seed)
    rows = [[t, st.state, float(model.states[st.state]), st.leader_action, st.effort, st.payoff_x, st.payoff_e, cfg.seed] for t, st in enumerate(path)]
    write_atomic(out / "trajectory.csv", to_csv(["t", "state", "label", "leader", "effort", "u_x", "u_e", "seed"], rows))
    doc = _header(cfg, model, "simulate")
    doc.update(profile_source=source, profile=_profile_dict(profile), start=start, horizon=cfg.horizon)
    write_atomic(out / "simulate.yaml", to_yaml(doc))


COMMANDS = {
    "solve": (cmd_solve, "nested best-response iteration, then certification"),
    "enumerate": (cmd_enumerate, "all pure stationary equilibria by exhaustive search"),
    "refine": (cmd_refine, "viability, renegotiation-proofness and selection"),
    "hc": (cmd_hc, "hegemon-client game: solve, refine, classify the regime"),
    "hierarchy": (cmd_hierarchy, "independent certification of the inclusion chain"),
    "simulate": (cmd_simulate, "sample a path under the selected (or solved) profile"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seegame", description="Sustainable exploitation equilibria on finite grids.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("config", help="YAML model/run config")
        p.add_argument("--output-dir", help=f"artifact directory (default ${OUTPUT_ENV} or ./seegame-out)")
        p.add_argument("--seed", type=int, help="RNG seed recorded in every artifact")
        p.add_argument("--tol", type=float, help="certification tolerance")
        p.add_argument("--budget", type=int, help="largest profile space to enumerate")
        p.add_argument("--penalty", type=float, help="catastrophe penalty M")
        p.add_argument("--find-threshold", action="store_true", default=None, help="search for the smallest sufficient penalty")
        p.add_argument("--selection-state", type=int, help="state at which the exploiter-best profile is chosen")
        p.add_argument("--rp-quantifier", choices=QUANTIFIERS, help="reading of the Pareto test over viable states")
        if name == "simulate":
            p.add_argument("--horizon", type=int, help="path length")
            p.add_argument("--start", type=int, help="start state index")
    return parser


def _apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    for key in ("seed", "tol", "budget", "penalty", "find_threshold", "selection_state", "rp_quantifier", "horizon", "start"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    cfg.output_dir = args.output_dir or os.environ.get(OUTPUT_ENV) or "seegame-out"
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(exc.reason, exc.key.replace("run.", "--").replace("_", "-") if exc.key else None) from None
    return cfg


def _error_record(exc: BaseException) -> dict:
    rec = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("key", "line", "verdict"):
        v = getattr(exc, attr, None)
        if v is not None:
            rec[attr] = v
    residual = getattr(exc, "residual", None)
    if residual is not None:
        rec["residual"] = fmt(residual) if isinstance(residual, float) and math.isfinite(residual) else str(residual)
    cex = getattr(exc, "counterexample", None)
    if cex is not None:
        rec["counterexample"] = profile_label(cex)
    return rec


def run(argv: list[str] | None = None) -> int:
    """Parse ``argv``, dispatch, and return the process exit code."""
    from .hierarchy import HierarchyError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_flags(load_config(args.config), args)
        out = Path(cfg.output_dir)
        COMMANDS[args.command][0](cfg, out)
    except (ConfigError, BudgetExceededError, ConvergenceError, PenaltyThresholdError, HierarchyError, ValueError) as exc:
        print(json.dumps(_error_record(exc), sort_keys=True), file=sys.stderr)
        if isinstance(exc, HierarchyError):
            return 6
        return next((code for cls, code in EXIT_CODES.items() if isinstance(exc, cls)), 1)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
