"""Command-line entry point wiring the pipeline: train observers, build
explicit tables, train the velocity predictor, run closed-loop simulations,
sweep horizons, and emit reports with figures.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 infeasible
configuration or operating point.
"""
from __future__ import annotations

import functools
import json
import sys
from dataclasses import fields as dataclass_fields, replace
from pathlib import Path

import click
import numpy as np

from . import harness, mpc, observer, report as report_mod, velocity as velocity_mod
from .harness import (
    CycleParseError,
    RuleConfig,
    SimConfig,
    bundled_cycle,
    load_cycle,
)
from .mpc import ControllerConfig, InfeasibleBoundsError, LinearizationError, SolverConfig
from .observer import GridBudgetError, RegressorSpec
from .powertrain import InfeasiblePowerError, default_plant, plant_from_config
from .velocity import CascadeConfig, MgspConfig

EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3

_INFEASIBLE = (InfeasiblePowerError, InfeasibleBoundsError, LinearizationError,
               GridBudgetError)


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _INFEASIBLE as exc:
            click.echo(f"infeasible: {exc}", err=True)
            sys.exit(EXIT_INFEASIBLE)
        except (CycleParseError, ValueError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)
    return wrapper


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _plant(config: dict):
    return plant_from_config(config) if config else default_plant()


def _controller_config(config: dict, horizon: int | None) -> ControllerConfig:
    section = dict(config.get("controller", {}))
    solver_section = section.pop("solver", None)
    known = {f.name for f in dataclass_fields(ControllerConfig)} - {"solver"}
    unknown = set(section) - known
    if unknown:
        raise ValueError(f"unknown controller config keys: {sorted(unknown)}")
    cfg = ControllerConfig(**section)
    if solver_section:
        cfg = replace(cfg, solver=SolverConfig(**solver_section))
    if horizon is not None:
        cfg = replace(cfg, horizon=int(horizon))
    return cfg


def _sim_config(config: dict, strategy: str, horizon: int, seed: int) -> SimConfig:
    section = dict(config.get("sim", {}))
    section.update({"controller": strategy, "horizon": horizon, "seed": seed})
    return SimConfig(**section)


def _resolve_cycle(spec: str):
    if spec in ("urban", "mixed"):
        return bundled_cycle(spec)
    return load_cycle(spec)


def _axes_from_config(config: dict, plant):
    grid = config.get("observer_grid")
    if not grid:
        return observer.default_axes(plant.battery, plant.fuel_cell)
    return tuple(
        observer.AxisDef(a["name"], float(a["min"]), float(a["max"]), int(a["count"]))
        for a in grid
    )


@click.group()
@click.version_option()
def main():
    """Energy-management toolkit for a fuel-cell/battery 4WD vehicle."""


# ---------------------------------------------------------------------------


@main.command()
@click.option("--cycle", "cycle_spec", required=True,
              help="Bundled cycle name (urban, mixed) or a t_s,v_mps CSV path.")
@click.option("--strategy", type=click.Choice(["tmpc", "lrmpc", "rule_based"]), default="rule_based")
@click.option("--horizon", type=int, default=20, show_default=True)
@click.option("--table", "table_path", type=click.Path(exists=True), default=None,
              help="Explicit table container (required for lrmpc).")
@click.option("--velocity-model", "velocity_path", type=click.Path(exists=True), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--rule-mode", type=click.Choice(["charge_sustain", "max_fc"]), default="charge_sustain")
@click.option("--rule-noise", type=float, default=0.0,
              help="Stack setpoint exploration amplitude (W) for training-data runs.")
@click.option("--no-figures", is_flag=True, default=False)
@click.option("-v", "--verbose", count=True)
@_handle_errors
def simulate(cycle_spec, strategy, horizon, table_path, velocity_path, config_path,
             out_dir, seed, rule_mode, rule_noise, no_figures, verbose):
    """Run one closed-loop simulation and emit the step log plus a summary."""
    config = _load_config(config_path)
    plant = _plant(config)
    cycle = _resolve_cycle(cycle_spec)
    table = observer.read_table(table_path) if table_path else None
    vmodel = velocity_mod.read_velocity_model(velocity_path) if velocity_path else None
    if strategy == "lrmpc" and table is None:
        raise click.UsageError("--table is required for the lrmpc strategy")
    rule = RuleConfig(mode=rule_mode, noise_amp_w=rule_noise, seed=seed)
    cfg = _controller_config(config, horizon)
    controller = harness.build_controller(strategy, plant, cfg, table=table, rule=rule)
    sim_cfg = _sim_config(config, strategy, horizon, seed)
    result = harness.run_simulation(cycle, sim_cfg, plant, controller,
                                    velocity_model=vmodel)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = harness.emit_results(result.records, None, out, prefix=strategy)
    summary = {
        "version": harness.REPORT_VERSION,
        "cycle": cycle.name,
        "strategy": strategy,
        "horizon": horizon,
        "seed": seed,
        "h2_equiv_g": result.h2_equiv_g,
        "h2_fc_g": result.h2_fc_g,
        "final_soc": result.final_soc,
        "wall_time_s": result.wall_time,
        "soc_clamp_events": result.clamp_count,
        "mode_transitions": sum(1 for e in result.events if e["event"] == "mode"),
    }
    summary_path = out / f"{strategy}_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if not no_figures:
        report_mod.plot_run(result.records, out / f"{strategy}_overview.png",
                            title=f"{strategy} on {cycle.name}")
    if verbose:
        click.echo(f"steps: {len(result.records)}, wall: {result.wall_time:.2f}s")
    click.echo(f"h2_equiv_g={result.h2_equiv_g:.6g} final_soc={result.final_soc:.6g} "
               f"-> {paths['steps']}")


@main.command()
@click.option("--cycle", "cycle_spec", default="mixed", show_default=True)
@click.option("--horizons", default="5,10,15,20,25,30", show_default=True)
@click.option("--strategies", default="tmpc,lrmpc", show_default=True)
@click.option("--table", "table_path", type=click.Path(exists=True), default=None)
@click.option("--velocity-model", "velocity_path", type=click.Path(exists=True), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--no-figures", is_flag=True, default=False)
@click.option("-v", "--verbose", count=True)
@_handle_errors
def sweep(cycle_spec, horizons, strategies, table_path, velocity_path, config_path,
          out_dir, seed, no_figures, verbose):
    """Horizon sweep across strategies; emits the comparison CSV and JSON."""
    config = _load_config(config_path)
    plant = _plant(config)
    cycle = _resolve_cycle(cycle_spec)
    horizon_list = [int(h) for h in horizons.split(",") if h.strip()]
    kind_list = [s.strip() for s in strategies.split(",") if s.strip()]
    table = observer.read_table(table_path) if table_path else None
    if "lrmpc" in kind_list and table is None:
        raise click.UsageError("--table is required when sweeping lrmpc")
    vmodel = velocity_mod.read_velocity_model(velocity_path) if velocity_path else None
    cfg = _controller_config(config, None)
    sim_cfg = _sim_config(config, kind_list[0], horizon_list[0], seed)
    report, runs = harness.sweep_strategies(cycle, horizon_list, kind_list, plant,
                                            sim_cfg, controller_config=cfg,
                                            table=table, velocity_model=vmodel)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_sweep_csv(report, out / "sweep.csv")
    harness.write_report_json(report, out / "sweep_report.json")
    for name, run in runs.items():
        harness.write_step_log(run.records, out / f"{name.replace('@', '_h')}_steps.csv")
    if not no_figures:
        report_mod.plot_sweep(report, out / "sweep.png")
    if verbose:
        for e in report.entries:
            click.echo(f"{e.strategy}: h2={e.h2_equiv_g:.4g} g, "
                       f"optimality={e.optimality_pct:.3g}%, wall={e.total_sim_time_s:.2f}s")
    click.echo(f"wrote {out / 'sweep.csv'}")


# ---------------------------------------------------------------------------


@main.command("train-observer")
@click.option("--logs", "log_paths", multiple=True, required=True,
              type=click.Path(exists=True), help="Step-log CSVs from simulate.")
@click.option("--kind", type=click.Choice(sorted(observer.REGRESSOR_KINDS)),
              default="random_forest", show_default=True)
@click.option("--trees", type=int, default=None, help="Tree count (random forest).")
@click.option("--min-leaf", type=int, default=None)
@click.option("--rounds", type=int, default=None, help="Boosting rounds.")
@click.option("--learning-rate", type=float, default=None)
@click.option("--max-depth", type=int, default=None)
@click.option("--holdout", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("-v", "--verbose", count=True)
@_handle_errors
def train_observer(log_paths, kind, trees, min_leaf, rounds, learning_rate,
                   max_depth, holdout, seed, out_path, verbose):
    """Train a SOC-change regressor from simulation logs."""
    records = []
    for p in log_paths:
        records.extend(harness.read_step_log(p))
    if len(records) < 2:
        raise ValueError("logs contain fewer than two steps")
    dt = records[1].t - records[0].t
    samples = observer.generate_training_set(records, dt)
    hp = {}
    if trees is not None:
        hp["n_trees"] = trees
    if min_leaf is not None:
        hp["min_leaf"] = min_leaf
    if rounds is not None:
        hp["n_rounds"] = rounds
    if learning_rate is not None:
        hp["learning_rate"] = learning_rate
    if max_depth is not None:
        hp["max_depth"] = max_depth
    spec = RegressorSpec(kind=kind, hyperparameters=hp, seed=seed)
    x, y = observer.samples_to_arrays(samples)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(x.shape[0])
    n_hold = max(1, int(holdout * x.shape[0]))
    hold, train = perm[:n_hold], perm[n_hold:]
    trained = observer.train_regressor(spec, [samples[i] for i in train], dt=dt)
    hold_rmse = float(np.sqrt(np.mean((trained.predict(x[hold]) - y[hold]) ** 2)))
    observer.write_regressor(trained, out_path, holdout_rmse=hold_rmse)
    if verbose:
        click.echo(f"train rmse: {trained.training_rmse:.4g}")
    click.echo(f"holdout_rmse={hold_rmse:.6g} samples={x.shape[0]} -> {out_path}")


@main.command("build-table")
@click.option("--regressor", "regressor_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Optional config with an observer_grid axis list.")
@click.option("--max-points", type=int, default=8_000_000, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--csv-export", "csv_path", type=click.Path(), default=None)
@click.option("-v", "--verbose", count=True)
@_handle_errors
def build_table(regressor_path, config_path, max_points, out_path, csv_path, verbose):
    """Traverse the 5-D input grid and emit the explicit SOC-change table."""
    config = _load_config(config_path)
    plant = _plant(config)
    trained = observer.read_regressor(regressor_path)
    axes = _axes_from_config(config, plant)
    table = observer.build_explicit_table(trained, axes, max_points=max_points)
    observer.write_table(table, out_path)
    if csv_path:
        observer.export_table_csv(table, csv_path)
    if verbose:
        click.echo(f"grid: {' x '.join(str(a.count) for a in axes)}")
    click.echo(f"points={table.values.size} -> {out_path}")


@main.command("train-velocity")
@click.option("--cycle", "cycle_spec", required=True)
@click.option("--trees", type=int, default=100, show_default=True)
@click.option("--max-layers", type=int, default=20, show_default=True)
@click.option("--window", type=int, default=3, show_default=True)
@click.option("--feature-dim", type=int, default=10, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("-v", "--verbose", count=True)
@_handle_errors
def train_velocity(cycle_spec, trees, max_layers, window, feature_dim, seed,
                   out_path, verbose):
    """Train the deep-forest velocity predictor on a 1 Hz cycle."""
    cycle = _resolve_cycle(cycle_spec)
    _, v_1hz = cycle.resample(1.0)
    cfg = CascadeConfig(
        mgsp=MgspConfig(feature_dim=feature_dim, window=window),
        trees_per_forest=trees, max_layers=max_layers, seed=seed,
    )
    model = velocity_mod.train_cascade(v_1hz, cfg)
    velocity_mod.write_velocity_model(model, out_path, extra={"cycle": cycle.name})
    if verbose:
        click.echo(f"cv history: {['%.4g' % c for c in model.cv_history]}")
    click.echo(f"final_depth={model.final_depth} -> {out_path}")


@main.command("predict-velocity")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--v0", type=float, required=True, help="Current velocity, m/s.")
@click.option("--a0", type=float, default=0.0, show_default=True)
@click.option("--steps", type=int, default=3, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--no-figures", is_flag=True, default=False)
@_handle_errors
def predict_velocity(model_path, v0, a0, steps, out_dir, no_figures):
    """Recursive velocity prediction at the 1 s stride."""
    model = velocity_mod.read_velocity_model(model_path)
    pred = velocity_mod.predict_horizon(model, v0, a0, steps)
    click.echo(" ".join(f"{p:.4f}" for p in pred))
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "prediction.csv", "w") as fh:
            fh.write("seconds_ahead,v_mps\n")
            for i, p in enumerate(pred, start=1):
                fh.write(f"{i},{p:.9g}\n")
        if not no_figures:
            report_mod.plot_velocity_prediction(np.arange(1, steps + 1), pred,
                                                out / "prediction.png", v0=v0)


if __name__ == "__main__":
    main()
