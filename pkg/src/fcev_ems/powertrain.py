"""Plant model: longitudinal dynamics, fuel-cell stack, battery pack and axle motors.

All model objects are immutable after construction; the step functions are
pure, so models can be shared read-only across threads.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_GRAVITY = 9.81


class RangeError(ValueError):
    """Query outside a lookup's defined domain."""


class InfeasiblePowerError(ValueError):
    """Requested battery power exceeds what the pack can deliver."""


# ---------------------------------------------------------------------------
# lookup curves


@dataclass(frozen=True)
class Curve1D:
    """Piecewise-linear lookup over strictly increasing abscissae."""

    x: np.ndarray
    y: np.ndarray
    name: str = "curve"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise ValueError(f"{self.name}: need matching 1-D arrays with >= 2 points")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise ValueError(f"{self.name}: non-finite curve data")
        if np.any(np.diff(x) <= 0):
            raise ValueError(f"{self.name}: abscissae must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        lo, hi = self.domain
        eps = 1e-9 * max(1.0, abs(lo), abs(hi))
        if np.any(q < lo - eps) or np.any(q > hi + eps):
            raise RangeError(f"{self.name}: query outside [{lo:g}, {hi:g}]")
        out = np.interp(np.clip(q, lo, hi), self.x, self.y)
        return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class VehicleParams:
    """Static vehicle constants."""

    mass: float = 1860.0                 # kg
    gravity: float = DEFAULT_GRAVITY     # m/s^2
    rolling_coeff: float = 0.015
    drag_coeff: float = 0.3
    frontal_area: float = 2.0            # m^2
    air_density: float = 1.18            # kg/m^3
    rotating_mass_factor: float = 1.05   # delta
    tire_radius: float = 0.35            # m
    front_split: float = 0.6
    rear_split: float = 0.4
    dcac_efficiency: float = 0.95
    dcdc_efficiency: float = 0.8775

    def __post_init__(self):
        positive = (
            self.mass, self.gravity, self.rolling_coeff, self.drag_coeff,
            self.frontal_area, self.air_density, self.rotating_mass_factor,
            self.tire_radius, self.front_split, self.rear_split,
            self.dcac_efficiency, self.dcdc_efficiency,
        )
        if any(v <= 0 for v in positive):
            raise ValueError("vehicle parameters must be strictly positive")
        if abs(self.front_split + self.rear_split - 1.0) > 1e-12:
            raise ValueError("front_split + rear_split must equal 1")
        if self.dcac_efficiency > 1.0 or self.dcdc_efficiency > 1.0:
            raise ValueError("efficiencies must lie in (0, 1]")


@dataclass(frozen=True)
class FuelCellModel:
    """Static stack model: net power to efficiency and hydrogen mass flow."""

    p_min: float
    p_max: float
    efficiency_curve: Curve1D             # eta_fc(P_fc), dimensionless
    h2_rate_curve: Curve1D                # mdot_H2(P_fc), g/s
    c_h2: float                           # linear hydrogen rate coefficient, g/J
    lhv_h2: float = 1.2e8                 # J/kg

    def __post_init__(self):
        if not (0 <= self.p_min < self.p_max):
            raise ValueError("fuel cell power bounds must satisfy 0 <= p_min < p_max")
        for curve in (self.efficiency_curve, self.h2_rate_curve):
            lo, hi = curve.domain
            if lo > self.p_min + 1e-9 or hi < self.p_max - 1e-9:
                raise ValueError(f"{curve.name} does not cover [{self.p_min}, {self.p_max}]")
        eff = self.efficiency_curve.y
        if np.any(eff <= 0) or np.any(eff >= 1):
            raise ValueError("stack efficiency must lie in (0, 1)")
        rate = self.h2_rate_curve.y
        if np.any(rate < 0) or np.any(np.diff(rate) < -1e-12):
            raise ValueError("hydrogen rate must be nonnegative and nondecreasing")
        if self.c_h2 <= 0 or self.lhv_h2 <= 0:
            raise ValueError("c_h2 and lhv_h2 must be positive")

    @property
    def lhv_j_per_g(self) -> float:
        return self.lhv_h2 / 1000.0


@dataclass(frozen=True)
class BatteryModel:
    """Internal-resistance equivalent circuit with SOC-dependent parameters."""

    capacity_ah: float
    ocv_curve: Curve1D                    # U_OCV(SOC), V
    r_discharge_curve: Curve1D            # ohm
    r_charge_curve: Curve1D               # ohm
    p_charge_min: float                   # W, negative
    p_discharge_max: float                # W, positive

    def __post_init__(self):
        if self.capacity_ah <= 0:
            raise ValueError("battery capacity must be positive")
        if self.p_charge_min >= 0 or self.p_discharge_max <= 0:
            raise ValueError("charge limit must be negative, discharge limit positive")
        ocv = self.ocv_curve.y
        if np.any(ocv <= 0) or np.any(np.diff(ocv) < 0):
            raise ValueError("open-circuit voltage must be positive and nondecreasing in SOC")
        for curve in (self.r_discharge_curve, self.r_charge_curve):
            if np.any(curve.y <= 0):
                raise ValueError(f"{curve.name}: resistance must be positive")
        # Charge resistance sits in a lower band than discharge resistance.
        soc_grid = np.linspace(*self.ocv_curve.domain, 33)
        if np.any(self.r_charge_curve(soc_grid) >= self.r_discharge_curve(soc_grid)):
            raise ValueError("charge resistance must lie below discharge resistance")
        # The quadratic in Eq-of-circuit current must stay solvable at the
        # discharge limit for every reachable SOC.
        disc = self.ocv_curve(soc_grid) ** 2 - 4.0 * self.r_discharge_curve(soc_grid) * self.p_discharge_max
        if np.any(disc < 0):
            raise ValueError("discharge limit infeasible for the given OCV/resistance curves")

    @property
    def capacity_coulomb(self) -> float:
        """Capacity in ampere-seconds (3600 * Ah)."""
        return 3600.0 * self.capacity_ah

    def resistance(self, soc: float, p_batt: float) -> float:
        """Internal resistance for the charge/discharge branch selected by sign."""
        curve = self.r_discharge_curve if p_batt >= 0 else self.r_charge_curve
        return float(curve(soc))


@dataclass(frozen=True)
class BatteryState:
    soc: float
    terminal_voltage: float
    current: float                        # A, positive = discharge


@dataclass(frozen=True)
class MotorMap:
    """Efficiency grid over (torque, speed) for one axle motor.

    The grid is defined over nonnegative torque; queries are symmetric in
    torque sign. ``gear_ratio`` converts wheel torque/speed to the motor
    shaft (the stated speed/torque ranges are unreachable at the wheel
    without a reduction).
    """

    axle: str
    torque_nm: np.ndarray
    speed_rpm: np.ndarray
    efficiency: np.ndarray                # shape (len(torque), len(speed))
    gear_ratio: float = 9.0

    def __post_init__(self):
        if self.axle not in ("front", "rear"):
            raise ValueError("axle must be 'front' or 'rear'")
        t = np.asarray(self.torque_nm, dtype=float)
        s = np.asarray(self.speed_rpm, dtype=float)
        e = np.asarray(self.efficiency, dtype=float)
        if t.ndim != 1 or s.ndim != 1 or e.shape != (t.size, s.size):
            raise ValueError("efficiency grid shape must be (n_torque, n_speed)")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(s) <= 0):
            raise ValueError("torque and speed axes must be strictly increasing")
        if t[0] < 0:
            raise ValueError("torque axis must be nonnegative (maps are torque-symmetric)")
        if np.any(e <= 0) or np.any(e >= 1):
            raise ValueError("motor efficiency must lie in (0, 1)")
        if self.gear_ratio <= 0:
            raise ValueError("gear ratio must be positive")
        object.__setattr__(self, "torque_nm", t)
        object.__setattr__(self, "speed_rpm", s)
        object.__setattr__(self, "efficiency", e)


def motor_efficiency(motor: MotorMap, torque: float, speed: float) -> float:
    """Bilinear efficiency lookup, symmetric in torque sign."""
    t = abs(float(torque))
    s = float(speed)
    t_ax, s_ax = motor.torque_nm, motor.speed_rpm
    eps_t = 1e-9 * max(1.0, t_ax[-1])
    eps_s = 1e-9 * max(1.0, s_ax[-1])
    if t < t_ax[0] - eps_t or t > t_ax[-1] + eps_t:
        raise RangeError(f"{motor.axle} motor: torque {torque:g} outside [{-t_ax[-1]:g}, {t_ax[-1]:g}]")
    if s < s_ax[0] - eps_s or s > s_ax[-1] + eps_s:
        raise RangeError(f"{motor.axle} motor: speed {speed:g} outside [{s_ax[0]:g}, {s_ax[-1]:g}]")
    t = min(max(t, t_ax[0]), t_ax[-1])
    s = min(max(s, s_ax[0]), s_ax[-1])
    i = min(int(np.searchsorted(t_ax, t, side="right")) - 1, t_ax.size - 2)
    j = min(int(np.searchsorted(s_ax, s, side="right")) - 1, s_ax.size - 2)
    i = max(i, 0)
    j = max(j, 0)
    ft = (t - t_ax[i]) / (t_ax[i + 1] - t_ax[i])
    fs = (s - s_ax[j]) / (s_ax[j + 1] - s_ax[j])
    e = motor.efficiency
    top = e[i, j] * (1 - ft) + e[i + 1, j] * ft
    bot = e[i, j + 1] * (1 - ft) + e[i + 1, j + 1] * ft
    return float(top * (1 - fs) + bot * fs)


# ---------------------------------------------------------------------------
# operations


def tractive_force(v: float, accel: float, params: VehicleParams) -> float:
    """Road-load plus inertial force at the wheels, N."""
    if v < 0:
        raise ValueError("velocity must be nonnegative")
    p = params
    rolling = p.mass * p.gravity * p.rolling_coeff
    drag = 0.5 * p.air_density * p.drag_coeff * p.frontal_area * v * v
    inertia = p.rotating_mass_factor * p.mass * accel
    return rolling + drag + inertia


def demand_power(v: float, accel: float, params: VehicleParams, motor_eff: float) -> float:
    """Electrical demand on the DC bus, W.

    Traction power divides by the DC/AC and motor efficiencies; braking
    power multiplies by them instead (only the recoverable fraction reaches
    the bus).
    """
    if not (0.0 < motor_eff <= 1.0):
        raise ValueError("motor efficiency must lie in (0, 1]")
    p_traction = tractive_force(v, accel, params) * v
    eta = params.dcac_efficiency * motor_eff
    if p_traction >= 0:
        return p_traction / eta
    return p_traction * eta


def split_axle_power(p_traction: float, params: VehicleParams) -> tuple[float, float]:
    """Fixed front/rear power distribution; the parts sum to the input exactly."""
    front = params.front_split * p_traction
    return front, p_traction - front


def fc_hydrogen_rate(model: FuelCellModel, p_fc: float) -> float:
    """Hydrogen mass flow of the stack at net power ``p_fc``, g/s."""
    eps = 1e-9 * max(1.0, model.p_max)
    if p_fc < model.p_min - eps or p_fc > model.p_max + eps:
        raise RangeError(f"fuel cell power {p_fc:g} outside [{model.p_min:g}, {model.p_max:g}]")
    return float(model.h2_rate_curve(min(max(p_fc, model.p_min), model.p_max)))


def battery_current(model: BatteryModel, soc: float, p_batt: float) -> float:
    """Pack current from the internal-resistance circuit, positive = discharge."""
    u_ocv = float(model.ocv_curve(soc))
    r = model.resistance(soc, p_batt)
    disc = u_ocv * u_ocv - 4.0 * r * p_batt
    if disc < 0:
        raise InfeasiblePowerError(
            f"battery power {p_batt:g} W infeasible at soc={soc:.4f} "
            f"(U_OCV={u_ocv:.2f} V, R={r:.4f} ohm)"
        )
    return (u_ocv - math.sqrt(disc)) / (2.0 * r)


def battery_state(model: BatteryModel, soc: float, p_batt: float) -> BatteryState:
    """Current and terminal voltage for a power request at the given SOC."""
    i = battery_current(model, soc, p_batt)
    u_ocv = float(model.ocv_curve(soc))
    r = model.resistance(soc, p_batt)
    return BatteryState(soc=soc, terminal_voltage=u_ocv - r * i, current=i)


def soc_step(
    model: BatteryModel,
    soc: float,
    current: float,
    dt: float,
    floor: float = 0.1,
    ceiling: float = 0.9,
) -> tuple[float, bool]:
    """Coulomb-counting SOC update; returns (new_soc, clamped)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    raw = soc - current * dt / model.capacity_coulomb
    clamped = raw < floor or raw > ceiling
    return min(max(raw, floor), ceiling), clamped


def soc_rate(model: BatteryModel, soc: float, p_batt: float) -> float:
    """Exact SOC time derivative at a power request, 1/s (negative discharging)."""
    return -battery_current(model, soc, p_batt) / model.capacity_coulomb


# ---------------------------------------------------------------------------
# composite helpers used by the harness and the velocity-to-power conversion


def wheel_speed_rpm(v: float, params: VehicleParams) -> float:
    return v / params.tire_radius * 60.0 / (2.0 * math.pi)


def axle_efficiency(motor: MotorMap, force_share: float, v: float, params: VehicleParams) -> float:
    """Motor efficiency at the operating point implied by an axle force share."""
    torque = force_share * params.tire_radius / motor.gear_ratio
    speed = wheel_speed_rpm(v, params) * motor.gear_ratio
    return motor_efficiency(motor, torque, speed)


def composite_motor_efficiency(
    front: MotorMap,
    rear: MotorMap,
    force: float,
    v: float,
    params: VehicleParams,
) -> float:
    """Effective single motor efficiency of the split front/rear drive."""
    f_front, f_rear = split_axle_power(force, params)
    eta_f = axle_efficiency(front, f_front, v, params)
    eta_r = axle_efficiency(rear, f_rear, v, params)
    if force * v >= 0:
        return 1.0 / (params.front_split / eta_f + params.rear_split / eta_r)
    return params.front_split * eta_f + params.rear_split * eta_r


@dataclass(frozen=True)
class Plant:
    """Bundle of the four component models forming the simulated vehicle."""

    params: VehicleParams
    battery: BatteryModel
    fuel_cell: FuelCellModel
    motor_front: MotorMap
    motor_rear: MotorMap

    def demand(self, v: float, accel: float) -> float:
        """DC-bus demand power for a kinematic state, W (map-based efficiency)."""
        force = tractive_force(v, accel, self.params)
        eta = composite_motor_efficiency(self.motor_front, self.motor_rear, force, v, self.params)
        return demand_power(v, accel, self.params, eta)


# ---------------------------------------------------------------------------
# synthetic default maps (replaceable through the CSV/JSON interfaces)


def default_vehicle_params() -> VehicleParams:
    return VehicleParams()


def default_fuel_cell(p_max: float = 61560.0, n_points: int = 124) -> FuelCellModel:
    """Concave quadratic efficiency peaking at 0.55 near 25% rated power."""
    p = np.linspace(0.0, p_max, n_points)
    p_peak = 0.25 * p_max
    coeff = 0.15 / (p_max - p_peak) ** 2
    eta = 0.55 - coeff * (p - p_peak) ** 2
    lhv = 1.2e8
    rate = np.where(p > 0, p / (lhv * eta) * 1000.0, 0.0)  # g/s
    eta_mid = float(np.interp(0.5 * p_max, p, eta))
    return FuelCellModel(
        p_min=0.0,
        p_max=p_max,
        efficiency_curve=Curve1D(p, eta, name="fc_efficiency"),
        h2_rate_curve=Curve1D(p, rate, name="fc_h2_rate"),
        c_h2=1000.0 / (lhv * eta_mid),
        lhv_h2=lhv,
    )


def default_battery(capacity_ah: float = 40.0) -> BatteryModel:
    """Affine OCV 320->400 V over SOC 0.1->0.9; resistances inside the
    0.44-0.49 (charge) and 0.49-0.54 (discharge) ohm bands, decreasing in SOC."""
    soc = np.linspace(0.0, 1.0, 21)
    ocv = 320.0 + (soc - 0.1) * 100.0
    r_dis = 0.54 - (soc - 0.1) * (0.05 / 0.8)
    r_chg = 0.49 - (soc - 0.1) * (0.05 / 0.8)
    return BatteryModel(
        capacity_ah=capacity_ah,
        ocv_curve=Curve1D(soc, ocv, name="ocv"),
        r_discharge_curve=Curve1D(soc, r_dis, name="r_discharge"),
        r_charge_curve=Curve1D(soc, r_chg, name="r_charge"),
        p_charge_min=-35000.0,
        p_discharge_max=42000.0,
    )


def _paraboloid_map(axle: str, t_max: float, s_max: float, gear_ratio: float) -> MotorMap:
    torque = np.linspace(0.0, t_max, 12)
    speed = np.linspace(0.0, s_max, 15)
    tn = torque / t_max
    sn = speed / s_max
    eta = 0.95 - 0.3 * ((tn[:, None] - 0.45) ** 2 + (sn[None, :] - 0.5) ** 2)
    return MotorMap(axle=axle, torque_nm=torque, speed_rpm=speed, efficiency=eta, gear_ratio=gear_ratio)


def default_motor_maps() -> tuple[MotorMap, MotorMap]:
    front = _paraboloid_map("front", 137.0, 14000.0, gear_ratio=9.0)
    rear = _paraboloid_map("rear", 195.0, 10000.0, gear_ratio=7.5)
    return front, rear


def default_plant() -> Plant:
    front, rear = default_motor_maps()
    return Plant(
        params=default_vehicle_params(),
        battery=default_battery(),
        fuel_cell=default_fuel_cell(),
        motor_front=front,
        motor_rear=rear,
    )


# ---------------------------------------------------------------------------
# map-file and config ingestion


def load_curve_csv(path, name: str = "curve") -> Curve1D:
    """Read a 1-D curve from an `x,y` CSV with a header row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) != 2:
        raise ValueError(f"{path}: expected a two-column CSV with header")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=float)
    return Curve1D(data[:, 0], data[:, 1], name=name)


def save_curve_csv(curve: Curve1D, path, header=("x", "y")) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for xv, yv in zip(curve.x, curve.y):
            writer.writerow([f"{xv:.17g}", f"{yv:.17g}"])


def load_motor_map_csv(path, axle: str, gear_ratio: float = 9.0) -> MotorMap:
    """Read a rectangular `torque_nm,speed_rpm,eff` grid."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["torque_nm", "speed_rpm", "eff"]:
        raise ValueError(f"{path}: expected header torque_nm,speed_rpm,eff")
    trip = np.array([[float(a), float(b), float(c)] for a, b, c in rows[1:]], dtype=float)
    torque = np.unique(trip[:, 0])
    speed = np.unique(trip[:, 1])
    if trip.shape[0] != torque.size * speed.size:
        raise ValueError(f"{path}: grid is not rectangular")
    eff = np.full((torque.size, speed.size), np.nan)
    ti = np.searchsorted(torque, trip[:, 0])
    si = np.searchsorted(speed, trip[:, 1])
    eff[ti, si] = trip[:, 2]
    if np.any(np.isnan(eff)):
        raise ValueError(f"{path}: grid has missing nodes")
    return MotorMap(axle=axle, torque_nm=torque, speed_rpm=speed, efficiency=eff, gear_ratio=gear_ratio)


def save_motor_map_csv(motor: MotorMap, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["torque_nm", "speed_rpm", "eff"])
        for i, t in enumerate(motor.torque_nm):
            for j, s in enumerate(motor.speed_rpm):
                writer.writerow([f"{t:.17g}", f"{s:.17g}", f"{motor.efficiency[i, j]:.17g}"])


def _curve_from_json(obj, name: str) -> Curve1D:
    return Curve1D(np.asarray(obj["x"], dtype=float), np.asarray(obj["y"], dtype=float), name=name)


def plant_from_config(config: dict) -> Plant:
    """Build a plant from a JSON-style config keyed by model field names.

    Missing sections fall back to the synthetic defaults, so a config may
    override any subset of the vehicle.
    """
    default = default_plant()
    params = default.params
    if "vehicle" in config:
        fields = {k: float(v) for k, v in config["vehicle"].items()}
        params = VehicleParams(**{**params.__dict__, **fields})

    battery = default.battery
    if "battery" in config:
        b = config["battery"]
        battery = BatteryModel(
            capacity_ah=float(b.get("capacity_ah", battery.capacity_ah)),
            ocv_curve=_curve_from_json(b["ocv_curve"], "ocv") if "ocv_curve" in b else battery.ocv_curve,
            r_discharge_curve=_curve_from_json(b["r_discharge_curve"], "r_discharge")
            if "r_discharge_curve" in b else battery.r_discharge_curve,
            r_charge_curve=_curve_from_json(b["r_charge_curve"], "r_charge")
            if "r_charge_curve" in b else battery.r_charge_curve,
            p_charge_min=float(b.get("p_charge_min", battery.p_charge_min)),
            p_discharge_max=float(b.get("p_discharge_max", battery.p_discharge_max)),
        )

    fuel_cell = default.fuel_cell
    if "fuel_cell" in config:
        f = config["fuel_cell"]
        fuel_cell = FuelCellModel(
            p_min=float(f.get("p_min", fuel_cell.p_min)),
            p_max=float(f.get("p_max", fuel_cell.p_max)),
            efficiency_curve=_curve_from_json(f["efficiency_curve"], "fc_efficiency")
            if "efficiency_curve" in f else fuel_cell.efficiency_curve,
            h2_rate_curve=_curve_from_json(f["h2_rate_curve"], "fc_h2_rate")
            if "h2_rate_curve" in f else fuel_cell.h2_rate_curve,
            c_h2=float(f.get("c_h2", fuel_cell.c_h2)),
            lhv_h2=float(f.get("lhv_h2", fuel_cell.lhv_h2)),
        )

    front, rear = default.motor_front, default.motor_rear
    if "motors" in config:
        m = config["motors"]
        if "front_csv" in m:
            front = load_motor_map_csv(m["front_csv"], "front", float(m.get("front_gear_ratio", front.gear_ratio)))
        if "rear_csv" in m:
            rear = load_motor_map_csv(m["rear_csv"], "rear", float(m.get("rear_gear_ratio", rear.gear_ratio)))

    return Plant(params=params, battery=battery, fuel_cell=fuel_cell,
                 motor_front=front, motor_rear=rear)


def load_plant_config(path) -> Plant:
    with open(path) as fh:
        return plant_from_config(json.load(fh))
