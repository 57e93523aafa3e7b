"""
Scenario Input/Output Module

Reads JSON scenario configs into validated communities, dispatches the solver and
simulation pipelines by command name, and writes one CSV per result table plus a
JSON summary.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import django
import numpy as np
import pandas as pd
import scipy
from django.conf import settings

from .bio_model import (
    AgentRevenue,
    Community,
    GrowthModel,
    ValidatedCommunity,
    community_violations,
    validate_community,
)
from .exceptions import (
    ConfigParseError,
    ConfigValidationError,
    DegenerateChatter,
    FisheryError,
    KinkAtCriticalIntensity,
    NotLinearIdenticalCommunity,
)
from .forms import AgentForm, CommunityForm, GrowthForm, RevenueForm, ScenarioSectionForm, SolverForm
from .hjb_solver import (
    SolverOptions,
    closed_form_linear,
    critical_tax,
    critical_tax_interval,
    solve_value,
    value_audit,
)
from .strategies import (
    ARRIVAL_TOL,
    DEFAULT_DT,
    FeedbackStrategy,
    build_pulse,
    default_horizon,
    payoff,
    pulse_payoff_closed_form,
    pulse_trajectory,
    static_sweep,
    strategy_trajectory,
    verification_process,
)
from .tax_engine import critical_tax_monotonicity, run_taxation

logger = logging.getLogger(__name__)

RESULT_SCHEMA = "fishtax-result/1"
COMMANDS = ("solve", "simulate", "pulse", "tax-sim", "critical-tax", "validate")
FLOAT_FORMAT = "%.17g"
PULSE_PERIODS = 20


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    model: GrowthModel
    community: Community
    solver: Dict[str, Any] = field(default_factory=dict)
    scenario: Dict[str, Any] = field(default_factory=dict)
    source: str = "<dict>"

    def validated(self) -> ValidatedCommunity:
        return validate_community(self.community, self.model)

    def solver_options(self) -> SolverOptions:
        return SolverOptions.from_settings(
            n_nodes=self.solver.get("n_nodes"),
            x_min=self.solver.get("x_min"),
            residual_tol=self.solver.get("residual_tol"),
        )

    def setting(self, name: str, default=None):
        value = self.scenario.get(name)
        return default if value is None else value


@dataclass(frozen=True, eq=False)
class ResultBundle:
    command: str
    tables: Dict[str, pd.DataFrame]
    summary: Dict[str, Any]
    metadata: Dict[str, Any]


def _form_or_raise(form, prefix: str):
    """Raise the first field error of a bound form as a ConfigParseError with its path"""
    if form.is_valid():
        return form.cleaned_data
    name, messages = next(iter(form.errors.items()))
    if name == "__all__":
        path = prefix or "$"
    else:
        path = f"{prefix}.{name}" if prefix else name
    raise ConfigParseError(path, f"{path}: {' '.join(messages)}")


def _section(data: Dict, key: str) -> Dict:
    value = data.get(key, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigParseError(key, f"{key}: expected an object")
    return value


def _revenue_nodes(solver: Dict) -> int:
    return solver.get("revenue_nodes") or getattr(settings, "FISHTAX_REVENUE_NODES", 4097)


def _parse_agents(data: Dict, revenue_nodes: int) -> List[AgentRevenue]:
    raw = data.get("agents")
    if not isinstance(raw, list) or not raw:
        raise ConfigParseError("agents", "agents: expected a non-empty list")
    agents = []
    for i, entry in enumerate(raw):
        path = f"agents[{i}]"
        if not isinstance(entry, dict):
            raise ConfigParseError(path, f"{path}: expected an object")
        agent = _form_or_raise(AgentForm(data=entry), path)
        revenue = entry.get("revenue")
        if not isinstance(revenue, dict):
            raise ConfigParseError(f"{path}.revenue", f"{path}.revenue: expected an object")
        revenue_form = RevenueForm(data=revenue)
        _form_or_raise(revenue_form, f"{path}.revenue")
        built = AgentRevenue.from_tag(
            revenue_form.cleaned_data["tag"], agent["alpha_max"], n_nodes=revenue_nodes, **revenue_form.params()
        )
        agents.extend([built] * agent["count"])
    return agents


def parse_config_dict(data: Dict, source: str = "<dict>") -> ScenarioConfig:
    """
    Build a ScenarioConfig from already-decoded JSON

    Raises:
        ConfigParseError: A field is missing or malformed; carries the field path
        ConfigValidationError: The community violates the standing assumptions;
            lists every violation
    """
    if not isinstance(data, dict):
        raise ConfigParseError("$", "Config root must be an object")
    growth = _form_or_raise(GrowthForm(data=_section(data, "growth")), "growth")
    beta = _form_or_raise(CommunityForm(data={"beta": data.get("beta")}), "")["beta"]
    solver_data = _form_or_raise(SolverForm(data=_section(data, "solver")), "solver")
    scenario = _form_or_raise(ScenarioSectionForm(data=_section(data, "scenario")), "scenario")
    solver = {k: v for k, v in solver_data.items() if v is not None}
    scenario = {k: v for k, v in scenario.items() if v is not None}

    model = GrowthModel(r=growth["r"], family=growth["family"])
    community = Community(tuple(_parse_agents(data, _revenue_nodes(solver))), beta)
    issues = community_violations(community, model)
    if issues:
        raise ConfigValidationError([str(issue) for issue in issues])
    logger.debug("Parsed %s: %d agents, beta = %g", source, community.n, beta)
    return ScenarioConfig(model, community, solver, scenario, source)


def parse_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigParseError(str(path), f"Config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigParseError("$", f"{path}: invalid JSON ({e})")
    return parse_config_dict(data, str(path))


def config_to_dict(cfg: ScenarioConfig) -> Dict[str, Any]:
    """Inverse of parse_config_dict; one entry per agent"""
    solver = dict(cfg.solver)
    if cfg.community.agents:
        solver.setdefault("revenue_nodes", cfg.community.agents[0].samples.n_nodes)
    return {
        "growth": {"r": cfg.model.r, "family": cfg.model.family},
        "beta": cfg.community.beta,
        "agents": [
            {"alpha_max": a.alpha_max, "revenue": {"tag": a.tag, **a.param_dict()}}
            for a in cfg.community.agents
        ],
        "solver": solver,
        "scenario": dict(cfg.scenario),
    }


def dump_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2), encoding="utf-8")


def _with_last(values: np.ndarray, size: int) -> np.ndarray:
    """Per-step values stretched to one per time node (last step repeated)"""
    if values.size == 0:
        return np.full(size, np.nan)
    return np.append(values, values[-1])[:size]


def _trajectory_frame(traj, tax: Optional[np.ndarray] = None, **labels) -> pd.DataFrame:
    frame = pd.DataFrame({
        "t": traj.times,
        "X": traj.states,
        "q": _with_last(traj.controls, traj.times.size),
    })
    if tax is not None:
        frame["tax"] = tax
    for name, value in reversed(list(labels.items())):
        frame.insert(0, name, value)
    return frame


def _starts(cfg: ScenarioConfig, vc: ValidatedCommunity) -> List[float]:
    return list(cfg.setting("x0", [vc.x_hat]))


def _critical_summary(vt) -> Dict[str, Any]:
    try:
        return {"critical_tax": critical_tax(vt)}
    except KinkAtCriticalIntensity as e:
        return {"critical_tax": None, "critical_tax_interval": [e.lower, e.upper]}


def _run_validate(cfg: ScenarioConfig, vc: ValidatedCommunity):
    summary = {
        "valid": True,
        "n_agents": vc.community.n,
        "x_hat": vc.x_hat,
        "critical_intensity": vc.critical_intensity,
        "max_growth": vc.model.max_rate,
        "sum_least_maximizers": float(sum(vc.delta_stars)),
    }
    return {}, summary


def _run_solve(cfg: ScenarioConfig, vc: ValidatedCommunity):
    vt = solve_value(vc, cfg.solver_options())
    table = pd.DataFrame({"x": vt.x, "v": vt.v, "v_prime": vt.p, "residual": vt.residual})
    summary = {"x_hat": vt.x_hat, "v_hat": vt.v_hat, **_critical_summary(vt), "kink": vt.kink}
    summary["audit"] = value_audit(vt).as_dict()
    try:
        exact = closed_form_linear(vc, cfg.solver_options())
    except NotLinearIdenticalCommunity:
        pass
    else:
        summary["closed_form_gap"] = float(np.abs(vt.v - exact.v).max())
    return {"value_function": table}, summary


def _run_simulate(cfg: ScenarioConfig, vc: ValidatedCommunity):
    vt = solve_value(vc, cfg.solver_options())
    m = vc.model
    dt = cfg.setting("dt", DEFAULT_DT)
    horizon = cfg.setting("horizon", default_horizon(vc))
    arrival_tol = cfg.setting("arrival_tol", getattr(settings, "FISHTAX_ARRIVAL_TOL", ARRIVAL_TOL))
    strategy = FeedbackStrategy(vt)
    frames, sweeps, runs = [], [], []
    for x0 in _starts(cfg, vc):
        traj = strategy_trajectory(m, vc, strategy, x0, horizon, dt, arrival_tol)
        realized = traj.discounted_revenue(vc.beta)
        check = verification_process(traj, vt, vc.beta)
        frames.append(_trajectory_frame(traj, vt.slope(traj.states), x0=x0))
        sweep = static_sweep(m, vc, x0, cfg.setting("static_intensities"), horizon, dt)
        sweeps.extend({"x0": x0, "q": q, "payoff": est.value, "truncation_bound": est.truncation_bound}
                      for q, est in sweep)
        value = float(vt.value(x0))
        runs.append({
            "x0": x0,
            "payoff": realized,
            "value": value,
            "relative_gap": abs(realized - value) / value,
            "verification_drift": check.drift,
            "best_static_payoff": max(est.value for _, est in sweep),
        })
    summary = {"x_hat": vt.x_hat, "v_hat": vt.v_hat, "horizon": horizon, "dt": dt, "runs": runs}
    tables = {
        "trajectories": pd.concat(frames, ignore_index=True),
        "static_sweep": pd.DataFrame(sweeps),
        "payoffs": pd.DataFrame(runs),
    }
    return tables, summary


def _run_pulse(cfg: ScenarioConfig, vc: ValidatedCommunity):
    m, F, hull = vc.model, vc.revenue, vc.revenue_hull
    epsilons = cfg.setting("pulse_epsilons") or [cfg.setting("epsilon", 0.01)]
    dt = cfg.setting("dt", DEFAULT_DT)
    relaxed_value = float(hull(vc.critical_intensity)) / vc.beta
    rows, first = [], None
    for eps in epsilons:
        try:
            s = build_pulse(m, F, hull, vc.x_hat, eps)
        except DegenerateChatter:
            logger.info("Revenue touches its hull at b(x_hat); static harvesting replaces pulses")
            summary = {"x_hat": vc.x_hat, "degenerate": True, "static_intensity": vc.critical_intensity,
                       "relaxed_value": relaxed_value}
            return {}, summary
        exact = pulse_payoff_closed_form(s, F, vc.beta)
        window = pulse_payoff_closed_form(s, F, vc.beta, periods=PULSE_PERIODS)
        simulated = payoff(m, vc, s, vc.x_hat, horizon=window.horizon, dt=dt)
        rows.append({
            "epsilon": eps, "g": s.g, "tau1": s.tau1, "tau2": s.tau2, "tau3": s.tau3, "period": s.period,
            "low_share": (s.tau1 + s.tau3) / s.period, "kappa": s.kappa,
            "payoff": exact.value, "payoff_window": window.value, "simulated_window": simulated.value,
        })
        first = first or s
    traj = pulse_trajectory(m, first, horizon=3 * first.period, dt=dt)
    summary = {
        "x_hat": vc.x_hat,
        "degenerate": False,
        "p1": first.p1,
        "p2": first.p2,
        "kappa": first.kappa,
        "relaxed_value": relaxed_value,
        "payoffs": {str(r["epsilon"]): r["payoff"] for r in rows},
    }
    return {"pulse": pd.DataFrame(rows), "pulse_trajectory": _trajectory_frame(traj)}, summary


def _run_tax_sim(cfg: ScenarioConfig, vc: ValidatedCommunity):
    vt = solve_value(vc, cfg.solver_options())
    eps = cfg.setting("epsilon", 0.05)
    delta = cfg.setting("delta", 0.02)
    frames, switches, runs = [], [], []
    agent_columns = [f"alpha_{i + 1}" for i in range(vc.community.n)]
    for x0 in _starts(cfg, vc):
        run = run_taxation(vt, vc, x0, eps, delta, cfg.setting("horizon"), cfg.setting("dt"))
        traj = run.trajectory
        frames.append(_trajectory_frame(traj, _with_last(run.tax_per_step(), traj.times.size), x0=x0))
        table = pd.DataFrame({
            "x0": x0, "t": run.switch_times, "x": run.switch_states, "tax": run.taxes, "psi": run.psi_at_switch,
        })
        for k, name in enumerate(agent_columns):
            table[name] = run.actions[:, k]
        switches.append(table)
        runs.append({"x0": x0, **run.summary()})
    summary = {"x_hat": vt.x_hat, "epsilon": eps, "delta": delta, **_critical_summary(vt), "runs": runs}
    tables = {
        "tax_trajectories": pd.concat(frames, ignore_index=True),
        "switches": pd.concat(switches, ignore_index=True),
    }
    return tables, summary


def _run_critical_tax(cfg: ScenarioConfig, vc: ValidatedCommunity):
    sizes = cfg.setting("community_nesting", list(range(1, vc.community.n + 1)))
    if max(sizes) > vc.community.n:
        raise ConfigParseError("scenario.community_nesting", "scenario.community_nesting: more agents than configured")
    report = critical_tax_monotonicity([vc.community.prefix(n) for n in sizes], vc.model)
    interval = critical_tax_interval(vc)
    table = pd.DataFrame([
        {"n_agents": e.n_agents, "lower": e.lower, "upper": e.upper, "kink": e.kink, "critical_tax": e.value}
        for e in report.entries
    ])
    summary = {
        "x_hat": vc.x_hat,
        "critical_taxes": report.values,
        "monotone": report.monotone,
        "kink_orders": [{"index": k, "ordered": ok} for k, ok in report.kink_orders],
        "interval": [interval.lower, interval.upper],
    }
    return {"critical_tax": table}, summary


_PIPELINES = {
    "validate": _run_validate,
    "solve": _run_solve,
    "simulate": _run_simulate,
    "pulse": _run_pulse,
    "tax-sim": _run_tax_sim,
    "critical-tax": _run_critical_tax,
}


def run_command(cmd: str, cfg: ScenarioConfig) -> ResultBundle:
    """
    Dispatch a command to its pipeline

    Raises:
        FisheryError: Unknown command, or any module error with the config source prefixed
    """
    if cmd not in _PIPELINES:
        raise FisheryError(f"Unknown command '{cmd}'; expected one of {', '.join(COMMANDS)}")
    started = time.perf_counter()
    logger.info("Running %s on %s", cmd, cfg.source)
    try:
        vc = cfg.validated()
        tables, summary = _PIPELINES[cmd](cfg, vc)
    except FisheryError as e:
        logger.error("%s failed for %s: %s", cmd, cfg.source, e)
        raise
    metadata = {
        "config": config_to_dict(cfg),
        "source": cfg.source,
        "versions": {
            "django": django.get_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
        "elapsed_seconds": time.perf_counter() - started,
    }
    return ResultBundle(cmd, tables, summary, metadata)


def jsonable(value):
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_bundle(bundle: ResultBundle, out_dir) -> List[Path]:
    """One CSV per table plus summary.json; returns the written paths"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, frame in bundle.tables.items():
        path = out / f"{name}.csv"
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)
    document = {
        "schema": RESULT_SCHEMA,
        "command": bundle.command,
        "summary": jsonable(bundle.summary),
        "metadata": jsonable(bundle.metadata),
    }
    path = out / "summary.json"
    path.write_text(json.dumps(document, indent=2), encoding="utf-8")
    written.append(path)
    logger.info("Wrote %d files to %s", len(written), out)
    return written
