"""Closed-loop simulation: cycle ingestion and synthesis, EV/HEV mode logic,
controller-in-the-loop stepping at a fixed rate, hydrogen accounting, and
strategy comparison reports.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import mpc, velocity as velocity_mod
from .powertrain import (
    InfeasiblePowerError,
    Plant,
    battery_current,
    composite_motor_efficiency,
    demand_power,
    fc_hydrogen_rate,
    soc_step,
    tractive_force,
)

REPORT_VERSION = 1


class CycleParseError(ValueError):
    """Malformed driving-cycle file."""


# ---------------------------------------------------------------------------
# driving cycles


@dataclass(frozen=True)
class DrivingCycle:
    t: np.ndarray                        # s, strictly increasing from 0
    v: np.ndarray                        # m/s, nonnegative
    name: str = "cycle"

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise CycleParseError(f"{self.name}: need matching 1-D arrays with >= 2 samples")
        if t[0] != 0.0:
            raise CycleParseError(f"{self.name}: time must start at 0")
        if np.any(np.diff(t) <= 0):
            raise CycleParseError(f"{self.name}: time must be strictly increasing")
        if np.any(v < 0):
            raise CycleParseError(f"{self.name}: negative velocity")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    def resample(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """Linear interpolation onto the fixed simulation grid."""
        n = int(math.floor(self.duration / dt + 1e-9)) + 1
        grid = np.arange(n) * dt
        return grid, np.interp(grid, self.t, self.v)


def load_cycle(path, name: str | None = None) -> DrivingCycle:
    """Read a `t_s,v_mps` CSV; parse errors carry the offending row number."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CycleParseError(f"{path}: empty file")
    if [c.strip() for c in rows[0]] != ["t_s", "v_mps"]:
        raise CycleParseError(f"{path}: row 1: expected header t_s,v_mps")
    t, v = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise CycleParseError(f"{path}: row {i}: expected two columns")
        try:
            ti, vi = float(row[0]), float(row[1])
        except ValueError as exc:
            raise CycleParseError(f"{path}: row {i}: {exc}") from exc
        if vi < 0:
            raise CycleParseError(f"{path}: row {i}: negative velocity {vi:g}")
        if t and ti <= t[-1]:
            raise CycleParseError(f"{path}: row {i}: time not increasing")
        t.append(ti)
        v.append(vi)
    if len(t) < 2:
        raise CycleParseError(f"{path}: need at least two samples")
    return DrivingCycle(np.array(t), np.array(v), name=name or str(path))


def save_cycle(cycle: DrivingCycle, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "v_mps"])
        for t, v in zip(cycle.t, cycle.v):
            writer.writerow([f"{t:.9g}", f"{v:.9g}"])


def _accel_cap(v: float, params, wheel_power_cap: float, force_cap: float) -> float:
    resist = tractive_force(v, 0.0, params)
    by_power = (wheel_power_cap / max(v, 0.5) - resist) / (params.rotating_mass_factor * params.mass)
    by_force = (force_cap - resist) / (params.rotating_mass_factor * params.mass)
    return max(min(by_power, by_force), 0.15)


def generate_cycle(profile: str, duration: float = 1800.0, seed: int = 0,
                   params=None) -> DrivingCycle:
    """Seeded stochastic stop-go profile at 1 s resolution.

    Accelerations stay inside +/-3 m/s^2 and under a wheel power/torque
    envelope so the plant maps and the battery discharge limit are never
    exceeded in pure-electric operation.
    """
    if profile not in ("urban", "mixed"):
        raise ValueError("profile must be 'urban' or 'mixed'")
    from .powertrain import default_vehicle_params
    params = params or default_vehicle_params()
    rng = np.random.default_rng(seed)
    n = int(duration) + 1
    v = np.zeros(n)
    k = 1
    wheel_power_cap = 27000.0
    force_cap = 5200.0
    while k < n:
        suburban = profile == "mixed" and (k % 900) >= 450
        v_top = rng.uniform(8.0, 22.0) if suburban else rng.uniform(3.0, 13.0)
        a_up = rng.uniform(0.4, 1.6)
        a_dn = rng.uniform(0.6, 2.2)
        cruise_s = int(rng.uniform(6.0, 30.0 if suburban else 18.0))
        idle_s = int(rng.uniform(2.0, 8.0 if suburban else 18.0))
        cur = v[k - 1]
        while k < n and cur < v_top:                     # accelerate
            a = min(a_up, 3.0)
            look_ahead = min(cur + a, v_top)             # cap power at end-of-second speed
            a = min(a, _accel_cap(look_ahead, params, wheel_power_cap, force_cap))
            cur = min(cur + a, v_top)
            v[k] = cur
            k += 1
        for _ in range(cruise_s):                        # cruise with jitter
            if k >= n:
                break
            cur = max(cur + rng.uniform(-0.2, 0.2), 0.0)
            v[k] = cur
            k += 1
        while k < n and cur > 0.0:                       # brake to rest
            cur = max(cur - min(a_dn, 3.0), 0.0)
            v[k] = cur
            k += 1
        for _ in range(idle_s):
            if k >= n:
                break
            v[k] = 0.0
            k += 1
    return DrivingCycle(np.arange(n, dtype=float), v, name=f"{profile}-{seed}")


_BUNDLED_SEEDS = {"urban": 11, "mixed": 23}


def bundled_cycle(name: str, duration: float = 1800.0) -> DrivingCycle:
    """The two bundled synthetic cycles (fixed generator seeds)."""
    if name not in _BUNDLED_SEEDS:
        raise ValueError(f"unknown bundled cycle {name!r}; options: {sorted(_BUNDLED_SEEDS)}")
    cycle = generate_cycle("mixed" if name == "mixed" else "urban",
                           duration=duration, seed=_BUNDLED_SEEDS[name])
    return DrivingCycle(cycle.t, cycle.v, name=name)


# ---------------------------------------------------------------------------
# simulation configuration and records


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    initial_soc: float = 0.6
    soc_floor: float = 0.1
    soc_ceiling: float = 0.9
    soc_hev_on: float = 0.55             # HEV engages at or below
    soc_hev_off: float = 0.60            # HEV releases at or above
    controller: str = "tmpc"             # tmpc | lrmpc | rule_based
    horizon: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (0.0 < self.soc_hev_on < self.soc_hev_off < 1.0):
            raise ValueError("mode thresholds must satisfy 0 < on < off < 1")


@dataclass(frozen=True)
class StepRecord:
    t: float
    v: float
    p_load: float
    p_fc: float
    p_batt: float
    soc: float
    u_batt: float
    r_batt: float
    i_batt: float
    h2_fc_cum: float
    h2_equiv_cum: float
    mode: str
    solve_time: float


STEP_COLUMNS = ("t", "v", "p_load", "p_fc", "p_batt", "soc", "u_batt", "r_batt",
                "i_batt", "h2_fc_cum", "h2_equiv_cum", "mode", "solve_time")


@dataclass
class RunResult:
    records: list
    events: list
    clamp_count: int
    wall_time: float
    name: str = "run"

    @property
    def h2_equiv_g(self) -> float:
        return self.records[-1].h2_equiv_cum if self.records else 0.0

    @property
    def h2_fc_g(self) -> float:
        return self.records[-1].h2_fc_cum if self.records else 0.0

    @property
    def final_soc(self) -> float:
        return self.records[-1].soc if self.records else float("nan")

    def solve_times(self, mode: str = "hev") -> np.ndarray:
        return np.array([r.solve_time for r in self.records
                         if r.mode == mode and r.solve_time > 0.0])


# ---------------------------------------------------------------------------
# rule-based controller (baseline and training-data source)


@dataclass(frozen=True)
class RuleConfig:
    mode: str = "charge_sustain"         # or "max_fc"
    soc_target: float = 0.6
    gain_w: float = 40000.0
    noise_amp_w: float = 0.0             # seeded exploration for training runs
    seed: int = 0


class RuleBasedController:
    """Proportional charge-sustaining rule (or a flat maximum-stack rule)."""

    name = "rule_based"

    def __init__(self, plant: Plant, rule: RuleConfig | None = None):
        self.plant = plant
        self.rule = rule or RuleConfig()
        self._rng = np.random.default_rng(self.rule.seed)

    def reset(self) -> None:
        self._rng = np.random.default_rng(self.rule.seed)

    def plan(self, soc: float, z, p_load_pre) -> tuple[float, float]:
        t0 = time.perf_counter()
        fc_max = self.plant.fuel_cell.p_max
        p_load = float(np.asarray(p_load_pre)[0])
        if self.rule.mode == "max_fc":
            p_fc = fc_max
        else:
            p_fc = p_load + self.rule.gain_w * (self.rule.soc_target - soc)
            if self.rule.noise_amp_w > 0.0:
                p_fc += self._rng.uniform(-self.rule.noise_amp_w, self.rule.noise_amp_w)
        return min(max(p_fc, 0.0), fc_max), time.perf_counter() - t0


# ---------------------------------------------------------------------------
# demand prediction bridge (1 s predictor onto the controller grid)


class _DemandPredictor:
    """Caches 1 s velocity predictions and serves dt-grid demand sequences."""

    def __init__(self, plant: Plant, model, dt: float, horizon: int):
        self.plant = plant
        self.model = model
        self.dt = dt
        self.horizon = horizon
        self.seconds_ahead = int(math.ceil((horizon + 1) * dt)) + 1
        self._marks_t = None
        self._marks_v = None

    def refresh(self, t: float, v_now: float, history_1hz) -> None:
        if self.model is None:
            marks = np.full(self.seconds_ahead, v_now)
        else:
            hist = np.asarray(history_1hz, dtype=float)
            a_now = hist[-1] - hist[-2] if hist.size >= 2 else 0.0
            marks = velocity_mod.predict_horizon(self.model, v_now, a_now,
                                                 self.seconds_ahead, history=hist)
        self._marks_t = t + np.arange(self.seconds_ahead + 1, dtype=float)
        self._marks_v = np.concatenate([[v_now], marks])

    def stale(self, t: float) -> bool:
        if self._marks_t is None:
            return True
        return t + (self.horizon - 1) * self.dt > self._marks_t[-1] or t < self._marks_t[0] \
            or t - self._marks_t[0] >= 1.0

    def demand_sequence(self, t: float, v_now: float, a_now: float, eff: float) -> np.ndarray:
        """Demand power for steps k+1 .. k+horizon-1 on the controller grid.

        The cached curve is offset-corrected to the current measurement so a
        stale prediction cannot fabricate an acceleration spike.
        """
        if self.horizon <= 1:
            return np.empty(0)
        times = t + self.dt * np.arange(1, self.horizon)
        offset = v_now - float(np.interp(t, self._marks_t, self._marks_v))
        v_pred = np.maximum(np.interp(times, self._marks_t, self._marks_v) + offset, 0.0)
        return velocity_mod.to_demand_power(v_pred, self.plant.params, eff,
                                            dt=self.dt, v_prev=v_now)


# ---------------------------------------------------------------------------
# the closed loop


def run_simulation(cycle: DrivingCycle, config: SimConfig, plant: Plant,
                   controller, velocity_model=None, name: str | None = None) -> RunResult:
    """Advance the plant at the fixed step with the controller in the loop.

    Pure-electric mode routes all demand to the battery; hybrid mode asks the
    controller for the stack setpoint, and the battery balances the bus
    exactly. Negative demand always regenerates into the battery up to its
    charge limit, the rest is friction braking.
    """
    t0 = time.perf_counter()
    dt = config.dt
    grid_t, grid_v = cycle.resample(dt)
    accel = np.diff(grid_v, prepend=grid_v[0]) / dt
    battery, fuel_cell = plant.battery, plant.fuel_cell

    is_mpc = hasattr(controller, "step")
    if hasattr(controller, "reset"):
        controller.reset()
    horizon = getattr(getattr(controller, "config", None), "horizon", config.horizon)
    predictor = _DemandPredictor(plant, velocity_model, dt, horizon)
    steps_per_second = int(round(1.0 / dt))

    soc = config.initial_soc
    mode = "ev" if soc > config.soc_hev_on else "hev"
    z = mpc.Zpoint(u_batt=float(battery.ocv_curve(soc)),
                   r_batt=float(battery.r_discharge_curve(soc)),
                   p_fc=0.0)
    h2_fc = 0.0
    h2_equiv = 0.0
    s_over_lhv = None
    if is_mpc:
        s_over_lhv = controller.config.s_factor / fuel_cell.lhv_j_per_g
    else:
        s_over_lhv = 2.0 / fuel_cell.lhv_j_per_g

    records: list[StepRecord] = []
    events: list[dict] = []
    clamp_count = 0

    for k in range(grid_t.size):
        t = float(grid_t[k])
        v = float(grid_v[k])
        a = float(accel[k])

        force = tractive_force(v, a, plant.params)
        eff = composite_motor_efficiency(plant.motor_front, plant.motor_rear,
                                         force, v, plant.params)
        p_load = demand_power(v, a, plant.params, eff)

        if mode == "ev" and soc <= config.soc_hev_on:
            mode = "hev"
            events.append({"step": k, "t": t, "event": "mode", "to": "hev"})
        elif mode == "hev" and soc >= config.soc_hev_off:
            mode = "ev"
            events.append({"step": k, "t": t, "event": "mode", "to": "ev"})

        solve_time = 0.0
        if p_load <= 0.0:
            p_fc = 0.0
            p_batt = max(p_load, battery.p_charge_min)
        elif mode == "ev":
            p_fc = 0.0
            p_batt = p_load
            if p_batt > battery.p_discharge_max:
                raise InfeasiblePowerError(
                    f"EV-mode demand exceeds the battery discharge limit: "
                    f"step={k} t={t:g} v={v:g} p_load={p_load:g} soc={soc:g}")
        else:
            if is_mpc:
                hist_lo = max(0, k - steps_per_second * 6)
                history = grid_v[hist_lo:k + 1:steps_per_second]
                if predictor.stale(t):
                    predictor.refresh(t, v, history if history.size else np.array([v]))
                future = predictor.demand_sequence(t, v, a, eff)
                p_load_pre = np.concatenate([[p_load], future])
                solution = controller.step(soc, z, p_load_pre)
                v0 = max(p_load, controller.config.p_load_floor)
                p_fc_plan = v0 * (1.0 - solution.first_control)
                solve_time = solution.stats.wall_time
            else:
                p_fc_plan, solve_time = controller.plan(soc, z, [p_load])
            p_fc = min(max(p_fc_plan, fuel_cell.p_min), fuel_cell.p_max)
            p_batt = p_load - p_fc
            if p_batt > battery.p_discharge_max or p_batt < battery.p_charge_min:
                p_batt = min(max(p_batt, battery.p_charge_min), battery.p_discharge_max)
                p_fc = min(max(p_load - p_batt, fuel_cell.p_min), fuel_cell.p_max)
                p_batt = p_load - p_fc

        i_batt = battery_current(battery, soc, p_batt)
        r_used = battery.resistance(soc, p_batt)
        u_term = float(battery.ocv_curve(soc)) - r_used * i_batt

        rate_fc = fc_hydrogen_rate(fuel_cell, p_fc)
        h2_fc += rate_fc * dt
        h2_equiv += (rate_fc + p_batt * s_over_lhv) * dt

        records.append(StepRecord(
            t=t, v=v, p_load=p_load, p_fc=p_fc, p_batt=p_batt, soc=soc,
            u_batt=u_term, r_batt=r_used, i_batt=i_batt,
            h2_fc_cum=h2_fc, h2_equiv_cum=h2_equiv, mode=mode,
            solve_time=solve_time,
        ))

        soc, clamped = soc_step(battery, soc, i_batt, dt,
                                floor=config.soc_floor, ceiling=config.soc_ceiling)
        if clamped:
            clamp_count += 1
            events.append({"step": k, "t": t, "event": "soc_clamp", "soc": soc})
        z = mpc.Zpoint(u_batt=u_term, r_batt=r_used, p_fc=p_fc)

    return RunResult(records=records, events=events, clamp_count=clamp_count,
                     wall_time=time.perf_counter() - t0,
                     name=name or f"{cycle.name}-{getattr(controller, 'name', 'run')}")


# ---------------------------------------------------------------------------
# strategy comparison


@dataclass(frozen=True)
class StrategySpec:
    name: str
    kind: str                            # tmpc | lrmpc | rule_based
    horizon: int = 20
    rule: RuleConfig | None = None


@dataclass
class ComparisonEntry:
    strategy: str
    horizon: int
    h2_equiv_g: float
    h2_fc_g: float
    final_soc: float
    total_sim_time_s: float
    mean_step_solve_s: float
    max_step_solve_s: float
    optimality_pct: float = 0.0


@dataclass
class ComparisonReport:
    cycle: str
    seed: int
    entries: list

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "cycle": self.cycle,
            "seed": self.seed,
            "entries": [vars(e) for e in self.entries],
        }


def build_controller(kind: str, plant: Plant, controller_config=None, table=None,
                     rule: RuleConfig | None = None):
    if kind == "tmpc":
        return mpc.TmpcController(plant, controller_config)
    if kind == "lrmpc":
        if table is None:
            raise ValueError("the table-based controller needs an explicit table")
        return mpc.LrmpcController(plant, table, controller_config)
    if kind == "rule_based":
        return RuleBasedController(plant, rule)
    raise ValueError(f"unknown controller kind {kind!r}")


def compare_strategies(cycle: DrivingCycle, specs, plant: Plant, sim_config: SimConfig,
                       controller_config=None, table=None,
                       velocity_model=None) -> tuple[ComparisonReport, dict]:
    """Run every strategy under the identical cycle and seed and rank the
    equivalent hydrogen totals against the worst performer."""
    specs = list(specs)
    if len(specs) < 2:
        raise ValueError("need at least two strategies to compare")
    base_cfg = controller_config or mpc.ControllerConfig()
    entries = []
    runs = {}
    for spec in specs:
        cfg = replace(base_cfg, horizon=spec.horizon)
        controller = build_controller(spec.kind, plant, cfg, table=table, rule=spec.rule)
        run = run_simulation(cycle, replace(sim_config, controller=spec.kind,
                                            horizon=spec.horizon),
                             plant, controller, velocity_model=velocity_model,
                             name=spec.name)
        solve = run.solve_times()
        entries.append(ComparisonEntry(
            strategy=spec.name,
            horizon=spec.horizon,
            h2_equiv_g=run.h2_equiv_g,
            h2_fc_g=run.h2_fc_g,
            final_soc=run.final_soc,
            total_sim_time_s=run.wall_time,
            mean_step_solve_s=float(solve.mean()) if solve.size else 0.0,
            max_step_solve_s=float(solve.max()) if solve.size else 0.0,
        ))
        runs[spec.name] = run
    worst = max(e.h2_equiv_g for e in entries)
    for e in entries:
        e.optimality_pct = 0.0 if worst == 0 else 100.0 * (worst - e.h2_equiv_g) / worst
    return ComparisonReport(cycle=cycle.name, seed=sim_config.seed, entries=entries), runs


def sweep_strategies(cycle: DrivingCycle, horizons, kinds, plant: Plant,
                     sim_config: SimConfig, controller_config=None, table=None,
                     velocity_model=None) -> tuple[ComparisonReport, dict]:
    """One comparison row per (strategy, horizon), shared cycle and seed."""
    specs = [StrategySpec(name=f"{kind}@{h}", kind=kind, horizon=int(h))
             for kind in kinds for h in horizons]
    return compare_strategies(cycle, specs, plant, sim_config,
                              controller_config=controller_config, table=table,
                              velocity_model=velocity_model)


# ---------------------------------------------------------------------------
# result emission


def write_step_log(records, path) -> None:
    """Step log CSV, numeric columns at 9 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STEP_COLUMNS)
        for r in records:
            row = []
            for col in STEP_COLUMNS:
                val = getattr(r, col)
                row.append(val if isinstance(val, str) else f"{val:.9g}")
            writer.writerow(row)


def read_step_log(path) -> list[StepRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != STEP_COLUMNS:
        raise ValueError(f"{path}: expected header {','.join(STEP_COLUMNS)}")
    records = []
    for row in rows[1:]:
        kwargs = {}
        for col, raw in zip(STEP_COLUMNS, row):
            kwargs[col] = raw if col == "mode" else float(raw)
        records.append(StepRecord(**kwargs))
    return records


def write_report_json(report: ComparisonReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_sweep_csv(report: ComparisonReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "horizon", "h2_equiv_g", "optimality_pct",
                         "total_wall_s", "mean_step_solve_s", "max_step_solve_s"])
        for e in report.entries:
            writer.writerow([e.strategy, e.horizon, f"{e.h2_equiv_g:.9g}",
                             f"{e.optimality_pct:.9g}", f"{e.total_sim_time_s:.9g}",
                             f"{e.mean_step_solve_s:.9g}", f"{e.max_step_solve_s:.9g}"])


def emit_results(records, report: ComparisonReport | None, out_dir, prefix: str = "run") -> dict:
    """Write the step log CSV and, when a report is given, the report JSON."""
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    log_path = out / f"{prefix}_steps.csv"
    write_step_log(records, log_path)
    paths["steps"] = log_path
    if report is not None:
        report_path = out / f"{prefix}_report.json"
        write_report_json(report, report_path)
        paths["report"] = report_path
    return paths
