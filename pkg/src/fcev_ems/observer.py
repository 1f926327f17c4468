"""Offline SOC-observer pipeline: training sets from simulation logs, pluggable
tree-ensemble regressors, dense explicit lookup tables over the five feature
axes, and per-step degree-7 polynomial reductions for online rollout.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import pickle
import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.tree import DecisionTreeRegressor

FEATURE_ORDER = ("p_batt", "p_load", "u_batt", "r_batt", "p_fc")

TABLE_MAGIC = b"XTBL"
TABLE_VERSION = 1
REGRESSOR_MAGIC = b"XREG"
REGRESSOR_VERSION = 1


class EmptyLogError(ValueError):
    """Simulation log too short to yield any training sample."""


class GridBudgetError(ValueError):
    """Requested explicit-table grid exceeds the configured point budget."""


class PolynomialDomainError(ValueError):
    """Polynomial evaluated outside its fitted battery-power domain."""


class FitError(ValueError):
    """Rank-deficient or otherwise unusable polynomial fit input."""


# ---------------------------------------------------------------------------
# training samples


@dataclass(frozen=True)
class ObserverSample:
    """One supervised example: component state -> per-step SOC change."""

    p_batt: float
    p_load: float
    u_batt: float
    r_batt: float
    p_fc: float
    delta_soc: float


def generate_training_set(cycle_logs, dt: float) -> list[ObserverSample]:
    """Build samples from consecutive step pairs of a simulation log.

    Features are taken at step k, the target is SOC(k+1) - SOC(k). The log
    entries only need the attributes p_batt, p_load, u_batt, r_batt, p_fc
    and soc.
    """
    records = list(cycle_logs)
    if len(records) < 2:
        raise EmptyLogError("need at least two log steps to form a sample")
    samples = []
    for prev, nxt in zip(records[:-1], records[1:]):
        samples.append(ObserverSample(
            p_batt=float(prev.p_batt),
            p_load=float(prev.p_load),
            u_batt=float(prev.u_batt),
            r_batt=float(prev.r_batt),
            p_fc=float(prev.p_fc),
            delta_soc=float(nxt.soc) - float(prev.soc),
        ))
    return samples


def samples_to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.array([[s.p_batt, s.p_load, s.u_batt, s.r_batt, s.p_fc] for s in samples], dtype=float)
    y = np.array([s.delta_soc for s in samples], dtype=float)
    return x, y


def training_digest(x: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(x, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(y, dtype="<f8").tobytes())
    return h.hexdigest()


def write_training_csv(samples, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(FEATURE_ORDER) + ["delta_soc"])
        for s in samples:
            writer.writerow([f"{getattr(s, name):.17g}" for name in FEATURE_ORDER]
                            + [f"{s.delta_soc:.17g}"])


def read_training_csv(path) -> list[ObserverSample]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    expected = list(FEATURE_ORDER) + ["delta_soc"]
    if not rows or [c.strip() for c in rows[0]] != expected:
        raise ValueError(f"{path}: expected header {','.join(expected)}")
    return [ObserverSample(*map(float, row)) for row in rows[1:]]


# ---------------------------------------------------------------------------
# regressors


@dataclass(frozen=True)
class RegressorSpec:
    kind: str                              # random_forest | gradient_boosted_trees | plugin name
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        hp = self.hyperparameters
        for key in ("n_trees", "n_rounds", "max_depth", "min_leaf"):
            if key in hp and hp[key] is not None and int(hp[key]) <= 0:
                raise ValueError(f"{key} must be positive")
        lr = hp.get("learning_rate")
        if lr is not None and not (0.0 < lr <= 1.0):
            raise ValueError("learning_rate must lie in (0, 1]")


class RandomForestDeltaSoc:
    """Bagged CART ensemble; per-tree seeds derive from the master seed, so a
    parallel fit over trees reproduces the sequential result."""

    def __init__(self, n_trees=100, min_leaf=2, max_depth=None, seed=0):
        self.n_trees = int(n_trees)
        self.min_leaf = int(min_leaf)
        self.max_depth = max_depth if max_depth is None else int(max_depth)
        self.seed = int(seed)
        self.trees_ = []

    def fit(self, x, y):
        rng = np.random.default_rng(self.seed)
        tree_seeds = rng.integers(0, 2**31 - 1, size=self.n_trees)
        n = x.shape[0]
        self.trees_ = []
        for ts in tree_seeds:
            boot = np.random.default_rng(int(ts)).integers(0, n, size=n)
            tree = DecisionTreeRegressor(
                max_depth=self.max_depth,
                min_samples_leaf=self.min_leaf,
                random_state=int(ts) % (2**31 - 1),
            )
            tree.fit(x[boot], y[boot])
            self.trees_.append(tree)
        return self

    def predict(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        for tree in self.trees_:
            out += tree.predict(x)
        return out / len(self.trees_)


class GradientBoostedDeltaSoc:
    """Stagewise least-squares boosting with shrinkage on CART base learners."""

    def __init__(self, n_rounds=300, learning_rate=0.1, max_depth=3, min_leaf=5, seed=0):
        self.n_rounds = int(n_rounds)
        self.learning_rate = float(learning_rate)
        self.max_depth = int(max_depth)
        self.min_leaf = int(min_leaf)
        self.seed = int(seed)
        self.base_ = 0.0
        self.trees_ = []

    def fit(self, x, y):
        rng = np.random.default_rng(self.seed)
        tree_seeds = rng.integers(0, 2**31 - 1, size=self.n_rounds)
        self.base_ = float(np.mean(y))
        pred = np.full(y.shape, self.base_)
        self.trees_ = []
        for ts in tree_seeds:
            tree = DecisionTreeRegressor(
                max_depth=self.max_depth,
                min_samples_leaf=self.min_leaf,
                random_state=int(ts) % (2**31 - 1),
            )
            tree.fit(x, y - pred)
            pred += self.learning_rate * tree.predict(x)
            self.trees_.append(tree)
        return self

    def predict(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.full(x.shape[0], self.base_)
        for tree in self.trees_:
            out += self.learning_rate * tree.predict(x)
        return out


def _make_random_forest(spec: RegressorSpec):
    hp = spec.hyperparameters
    return RandomForestDeltaSoc(
        n_trees=hp.get("n_trees", 100),
        min_leaf=hp.get("min_leaf", 2),
        max_depth=hp.get("max_depth"),
        seed=spec.seed,
    )


def _make_gradient_boosted(spec: RegressorSpec):
    hp = spec.hyperparameters
    return GradientBoostedDeltaSoc(
        n_rounds=hp.get("n_rounds", 300),
        learning_rate=hp.get("learning_rate", 0.1),
        max_depth=hp.get("max_depth", 3),
        min_leaf=hp.get("min_leaf", 5),
        seed=spec.seed,
    )


REGRESSOR_KINDS = {
    "random_forest": _make_random_forest,
    "gradient_boosted_trees": _make_gradient_boosted,
}


def register_regressor(kind: str, factory) -> None:
    """Plugin hook: factory(spec) must return an object with fit/predict."""
    REGRESSOR_KINDS[kind] = factory


@dataclass
class TrainedRegressor:
    model: object
    spec: RegressorSpec
    training_rmse: float
    training_digest: str
    dt: float                              # step length the targets were logged at, s

    def predict(self, x) -> np.ndarray:
        return np.asarray(self.model.predict(x), dtype=float)


def train_regressor(spec: RegressorSpec, samples, dt: float = 0.05) -> TrainedRegressor:
    """Fit the requested regressor kind; deterministic for a fixed seed."""
    if spec.kind not in REGRESSOR_KINDS:
        raise ValueError(f"unknown regressor kind {spec.kind!r}; "
                         f"known: {sorted(REGRESSOR_KINDS)}")
    x, y = samples_to_arrays(samples)
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise ValueError("non-finite feature or target values")
    min_needed = int(spec.hyperparameters.get("min_leaf", 2))
    if x.shape[0] < min_needed:
        raise ValueError(f"need at least {min_needed} samples, got {x.shape[0]}")
    model = REGRESSOR_KINDS[spec.kind](spec)
    model.fit(x, y)
    rmse = float(np.sqrt(np.mean((np.asarray(model.predict(x)) - y) ** 2)))
    return TrainedRegressor(model=model, spec=spec, training_rmse=rmse,
                            training_digest=training_digest(x, y), dt=dt)


# ---------------------------------------------------------------------------
# explicit tables


@dataclass(frozen=True)
class AxisDef:
    """Uniformly spaced axis of an explicit table."""

    name: str
    minimum: float
    maximum: float
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"axis {self.name}: need at least 2 points")
        if not self.minimum < self.maximum:
            raise ValueError(f"axis {self.name}: min must be below max")
        object.__setattr__(self, "_values", np.linspace(self.minimum, self.maximum, self.count))

    @property
    def spacing(self) -> float:
        return (self.maximum - self.minimum) / (self.count - 1)

    @property
    def values(self) -> np.ndarray:
        return self._values

    def snap(self, value: float) -> int:
        """Nearest grid index; values outside the axis range are an error."""
        tol = 1e-9 * max(1.0, abs(self.minimum), abs(self.maximum))
        if value < self.minimum - tol or value > self.maximum + tol:
            raise ValueError(f"axis {self.name}: value {value:g} outside "
                             f"[{self.minimum:g}, {self.maximum:g}]")
        idx = int(round((value - self.minimum) / self.spacing))
        return min(max(idx, 0), self.count - 1)


def default_axes(battery=None, fuel_cell=None) -> tuple[AxisDef, ...]:
    """Desk-scale 9x15x7x7x9 grid derived from component limits."""
    p_charge = battery.p_charge_min if battery is not None else -35000.0
    p_dis = battery.p_discharge_max if battery is not None else 45000.0
    fc_max = fuel_cell.p_max if fuel_cell is not None else 61560.0
    return (
        AxisDef("p_batt", p_charge, p_dis, 9),
        AxisDef("p_load", -40000.0, 70000.0, 15),
        AxisDef("u_batt", 300.0, 420.0, 7),
        AxisDef("r_batt", 0.43, 0.55, 7),
        AxisDef("p_fc", 0.0, fc_max, 9),
    )


@dataclass(frozen=True)
class ExplicitTable:
    """Dense grid of predicted per-step SOC changes over the five feature axes."""

    axes: tuple
    values: np.ndarray                     # shape = per-axis counts, row-major
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.axes) != len(FEATURE_ORDER):
            raise ValueError(f"expected {len(FEATURE_ORDER)} axes")
        names = tuple(a.name for a in self.axes)
        if names != FEATURE_ORDER:
            raise ValueError(f"axes must be ordered {FEATURE_ORDER}, got {names}")
        shape = tuple(a.count for a in self.axes)
        if self.values.shape != shape:
            raise ValueError(f"value grid shape {self.values.shape} != axis counts {shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("table contains non-finite values")

    @property
    def dt(self) -> float:
        return float(self.provenance.get("dt", 0.05))

    def value_at(self, indices) -> float:
        return float(self.values[tuple(indices)])

    def grid_point(self, indices) -> np.ndarray:
        return np.array([a.values[i] for a, i in zip(self.axes, indices)])


@dataclass(frozen=True)
class TableSlice:
    """Stage-1 result: (p_load, p_batt) -> delta SOC at snapped (U, R, P_fc)."""

    p_load_axis: AxisDef
    p_batt_axis: AxisDef
    values: np.ndarray                     # shape (n_p_load, n_p_batt)
    snapped: dict


@dataclass(frozen=True)
class TableCurve:
    """Stage-2 result: p_batt -> delta SOC at a snapped demand power."""

    p_batt_values: np.ndarray
    delta_soc: np.ndarray
    snapped_p_load: float


def validate_grid_size(axes, max_points: int) -> int:
    total = 1
    for a in axes:
        total *= a.count
    if total > max_points:
        raise GridBudgetError(
            f"grid of {total} points exceeds the configured budget of {max_points}")
    return total


def build_explicit_table(
    regressor,
    axes,
    max_points: int = 8_000_000,
    chunk: int = 200_000,
    provenance: dict | None = None,
) -> ExplicitTable:
    """Traverse the 5-D grid in row-major order and record the regressor output.

    Chunked evaluation keeps memory bounded; chunk boundaries do not affect
    the result, so a parallel fill over row blocks stays equivalent to this
    sequential one.
    """
    axes = tuple(axes)
    total = validate_grid_size(axes, max_points)
    axis_values = [a.values for a in axes]
    shape = tuple(a.count for a in axes)
    flat = np.empty(total, dtype=float)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        multi = np.unravel_index(idx, shape)
        block = np.column_stack([axis_values[d][multi[d]] for d in range(len(axes))])
        flat[idx] = np.asarray(regressor.predict(block), dtype=float)
    prov = dict(provenance or {})
    if isinstance(regressor, TrainedRegressor):
        prov.setdefault("regressor_kind", regressor.spec.kind)
        prov.setdefault("hyperparameters", regressor.spec.hyperparameters)
        prov.setdefault("seed", regressor.spec.seed)
        prov.setdefault("training_digest", regressor.training_digest)
        prov.setdefault("dt", regressor.dt)
    return ExplicitTable(axes=axes, values=flat.reshape(shape), provenance=prov)


def filter_stage1(table: ExplicitTable, u_batt: float, r_batt: float, p_fc: float) -> TableSlice:
    """Snap (U_batt, R_batt, P_fc) to their nearest grid coordinates and return
    the remaining (p_load, p_batt) -> delta SOC slice."""
    iu = table.axes[2].snap(u_batt)
    ir = table.axes[3].snap(r_batt)
    ip = table.axes[4].snap(p_fc)
    block = table.values[:, :, iu, ir, ip]      # (p_batt, p_load)
    return TableSlice(
        p_load_axis=table.axes[1],
        p_batt_axis=table.axes[0],
        values=np.ascontiguousarray(block.T),   # (p_load, p_batt)
        snapped={
            "u_batt": float(table.axes[2].values[iu]),
            "r_batt": float(table.axes[3].values[ir]),
            "p_fc": float(table.axes[4].values[ip]),
        },
    )


def filter_stage2(table_slice: TableSlice, p_load: float) -> TableCurve:
    """Snap the demand power to its nearest grid coordinate and return the
    p_batt-indexed row."""
    il = table_slice.p_load_axis.snap(p_load)
    return TableCurve(
        p_batt_values=table_slice.p_batt_axis.values,
        delta_soc=table_slice.values[il].copy(),
        snapped_p_load=float(table_slice.p_load_axis.values[il]),
    )


# ---------------------------------------------------------------------------
# degree-7 polynomial reduction

POLY_DEGREE = 7


@dataclass(frozen=True)
class SocPolynomial:
    """Degree-7 SOC-rate polynomial in battery power.

    Coefficients are reported in original units (rate per watt^j); evaluation
    uses the internally rescaled representation to keep the degree-7 system
    well conditioned.
    """

    coefficients: np.ndarray               # a_0..a_7, original units
    domain: tuple[float, float]
    fit_rmse: float
    scaled_coefficients: np.ndarray = None  # coefficients on the [-1, 1] abscissa

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=float)
        if coeffs.shape != (POLY_DEGREE + 1,):
            raise ValueError("exactly 8 coefficients required")
        object.__setattr__(self, "coefficients", coeffs)
        if self.scaled_coefficients is None:
            scaled = _rescale_coefficients(coeffs, self.domain)
            object.__setattr__(self, "scaled_coefficients", scaled)

    def __call__(self, p_batt):
        p = np.asarray(p_batt, dtype=float)
        lo, hi = self.domain
        tol = 1e-9 * max(1.0, abs(lo), abs(hi))
        if np.any(p < lo - tol) or np.any(p > hi + tol):
            raise PolynomialDomainError(
                f"battery power outside polynomial domain [{lo:g}, {hi:g}]")
        t = _to_unit(p, self.domain)
        out = _horner(self.scaled_coefficients, t)
        return float(out) if out.ndim == 0 else out


def _to_unit(p, domain):
    lo, hi = domain
    return (2.0 * np.asarray(p, dtype=float) - (lo + hi)) / (hi - lo)


def _horner(coeffs, t):
    out = np.full_like(np.asarray(t, dtype=float), coeffs[-1])
    for c in coeffs[-2::-1]:
        out = out * t + c
    return out


def _rescale_coefficients(coeffs_original, domain):
    from numpy.polynomial import polynomial as P
    lo, hi = domain
    # substitute x = ((hi-lo)t + (lo+hi)) / 2 into sum a_j x^j
    shift = np.array([(lo + hi) / 2.0, (hi - lo) / 2.0])
    out = np.zeros(1)
    for a in coeffs_original[::-1]:
        out = P.polyadd(P.polymul(out, shift), [a])
    res = np.zeros(POLY_DEGREE + 1)
    res[: out.size] = out
    return res


def fit_soc_polynomial(p_batt_values, rates) -> SocPolynomial:
    """Least-squares degree-7 fit of a rate curve over battery power.

    The abscissa is rescaled to [-1, 1] before solving; the returned
    coefficients are mapped back to original units.
    """
    x = np.asarray(p_batt_values, dtype=float)
    y = np.asarray(rates, dtype=float)
    if x.size < POLY_DEGREE + 1:
        raise FitError(f"need at least {POLY_DEGREE + 1} curve points, got {x.size}")
    if np.unique(x).size < POLY_DEGREE + 1:
        raise FitError("duplicate abscissae make the fit rank deficient")
    domain = (float(x.min()), float(x.max()))
    t = _to_unit(x, domain)
    design = np.vander(t, POLY_DEGREE + 1, increasing=True)
    scaled, *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = design @ scaled - y
    rmse = float(np.sqrt(np.mean(residual**2)))
    original = _descale_coefficients(scaled, domain)
    return SocPolynomial(coefficients=original, domain=domain, fit_rmse=rmse,
                         scaled_coefficients=scaled)


def _descale_coefficients(scaled, domain):
    from numpy.polynomial import polynomial as P
    lo, hi = domain
    # substitute t = (2x - (lo+hi)) / (hi-lo) into sum c_j t^j
    lin = np.array([-(lo + hi) / (hi - lo), 2.0 / (hi - lo)])
    out = np.zeros(1)
    for c in scaled[::-1]:
        out = P.polyadd(P.polymul(out, lin), [c])
    res = np.zeros(POLY_DEGREE + 1)
    res[: out.size] = out
    return res


def scaled_design_pinv(p_batt_values) -> tuple[np.ndarray, tuple[float, float]]:
    """Precomputed pseudo-inverse of the rescaled degree-7 design matrix.

    Every stage-2 curve of one table shares its abscissa, so the online
    per-step fits reduce to one small matrix product.
    """
    x = np.asarray(p_batt_values, dtype=float)
    domain = (float(x.min()), float(x.max()))
    design = np.vander(_to_unit(x, domain), POLY_DEGREE + 1, increasing=True)
    return np.linalg.pinv(design), domain


# ---------------------------------------------------------------------------
# frozen-linearization baseline (accuracy yardstick for trained observers)


def frozen_eq20_baseline(records, dt: float, battery, segment_s: float = 300.0) -> np.ndarray:
    """Per-step SOC-change predictions from the closed-form rate expression
    with (U_OCV, R) frozen at the start of each fixed-length time window.

    Aligned with generate_training_set ordering (one prediction per
    consecutive step pair).
    """
    records = list(records)
    if len(records) < 2:
        raise EmptyLogError("need at least two log steps")
    seg_len = max(1, int(round(segment_s / dt)))
    cap_c = battery.capacity_coulomb
    preds = np.empty(len(records) - 1)
    u_frozen_d = r_frozen_d = u_frozen_c = r_frozen_c = None
    for k, rec in enumerate(records[:-1]):
        if k % seg_len == 0:
            soc0 = float(rec.soc)
            u_frozen = float(battery.ocv_curve(soc0))
            r_frozen_d = float(battery.r_discharge_curve(soc0))
            r_frozen_c = float(battery.r_charge_curve(soc0))
            u_frozen_d = u_frozen_c = u_frozen
        p = float(rec.p_batt)
        u = u_frozen_d if p >= 0 else u_frozen_c
        r = r_frozen_d if p >= 0 else r_frozen_c
        disc = max(u * u - 4.0 * r * p, 0.0)
        rate = -(u - np.sqrt(disc)) / (2.0 * r * cap_c)
        preds[k] = rate * dt
    return preds


# ---------------------------------------------------------------------------
# file formats


def _write_container(path, magic: bytes, header: dict, payload: bytes) -> None:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def _read_container(path, magic: bytes) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        if fh.read(4) != magic:
            raise ValueError(f"{path}: bad magic, not a {magic.decode()} container")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode("utf-8"))
        return header, fh.read()


def write_table(table: ExplicitTable, path) -> None:
    header = {
        "version": TABLE_VERSION,
        "endianness": "little",
        "dtype": "<f8",
        "axes": [
            {"name": a.name, "min": a.minimum, "max": a.maximum, "count": a.count}
            for a in table.axes
        ],
        "provenance": table.provenance,
    }
    _write_container(path, TABLE_MAGIC, header, np.ascontiguousarray(table.values, dtype="<f8").tobytes())


def read_table(path) -> ExplicitTable:
    header, payload = _read_container(path, TABLE_MAGIC)
    if header["version"] != TABLE_VERSION:
        raise ValueError(f"unsupported table version {header['version']}")
    axes = tuple(AxisDef(a["name"], a["min"], a["max"], a["count"]) for a in header["axes"])
    shape = tuple(a.count for a in axes)
    values = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(float)
    return ExplicitTable(axes=axes, values=values, provenance=header.get("provenance", {}))


def export_table_csv(table: ExplicitTable, path) -> None:
    """Lossless CSV export: one row per grid point, axis coordinates first."""
    shape = tuple(a.count for a in table.axes)
    axis_values = [a.values for a in table.axes]
    flat = table.values.reshape(-1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(FEATURE_ORDER) + ["delta_soc"])
        for i in range(flat.size):
            multi = np.unravel_index(i, shape)
            row = [f"{axis_values[d][multi[d]]:.17g}" for d in range(len(shape))]
            writer.writerow(row + [f"{flat[i]:.17g}"])


def read_table_csv(path, axes, provenance=None) -> ExplicitTable:
    """Rebuild a table from its CSV export (row-major order assumed)."""
    axes = tuple(axes)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    expected = list(FEATURE_ORDER) + ["delta_soc"]
    if not rows or [c.strip() for c in rows[0]] != expected:
        raise ValueError(f"{path}: expected header {','.join(expected)}")
    values = np.array([float(r[-1]) for r in rows[1:]], dtype=float)
    shape = tuple(a.count for a in axes)
    return ExplicitTable(axes=axes, values=values.reshape(shape), provenance=dict(provenance or {}))


def write_regressor(trained: TrainedRegressor, path, holdout_rmse: float | None = None) -> None:
    header = {
        "version": REGRESSOR_VERSION,
        "kind": trained.spec.kind,
        "hyperparameters": trained.spec.hyperparameters,
        "seed": trained.spec.seed,
        "dt": trained.dt,
        "training_digest": trained.training_digest,
        "training_rmse": trained.training_rmse,
        "holdout_rmse": holdout_rmse,
    }
    _write_container(path, REGRESSOR_MAGIC, header, pickle.dumps(trained.model, protocol=4))


def read_regressor(path) -> TrainedRegressor:
    header, payload = _read_container(path, REGRESSOR_MAGIC)
    if header["version"] != REGRESSOR_VERSION:
        raise ValueError(f"unsupported regressor version {header['version']}")
    model = pickle.loads(payload)
    spec = RegressorSpec(kind=header["kind"], hyperparameters=header["hyperparameters"],
                         seed=header["seed"])
    return TrainedRegressor(model=model, spec=spec,
                            training_rmse=header["training_rmse"],
                            training_digest=header["training_digest"],
                            dt=header["dt"])
