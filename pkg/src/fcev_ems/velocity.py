"""One-step velocity prediction with a deep-forest regressor and conversion of
predicted velocity into the demand-power reference for the controllers.

The predictor runs at its native 1 s stride; the harness interpolates onto
the controller grid. Features are a lagged window of recent velocities and
accelerations (the minimal extension that gives the scanning stage a
sequence to slide over).
"""
from __future__ import annotations

import hashlib
import json
import pickle
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.ensemble import ExtraTreesRegressor, RandomForestRegressor

from .powertrain import demand_power

MODEL_MAGIC = b"VMDL"
MODEL_VERSION = 1


@dataclass(frozen=True)
class MgspConfig:
    """Multi-grained scanning: slide an n-wide window over the m-dim feature
    vector and push every sub-vector through two forests."""

    feature_dim: int = 10                # m; half velocities, half accelerations
    window: int = 3                      # n
    trees_per_forest: int = 50
    output_dim: int = 1                  # p, outputs per window per forest

    def __post_init__(self):
        if not (1 <= self.window <= self.feature_dim):
            raise ValueError("window must satisfy 1 <= n <= m")
        if self.feature_dim % 2 != 0:
            raise ValueError("feature_dim must be even (velocity/acceleration halves)")
        if self.trees_per_forest <= 0 or self.output_dim <= 0:
            raise ValueError("tree and output counts must be positive")

    @property
    def n_windows(self) -> int:
        return self.feature_dim - self.window + 1

    @property
    def output_length(self) -> int:
        return 2 * self.output_dim * self.n_windows


@dataclass(frozen=True)
class CascadeConfig:
    mgsp: MgspConfig = field(default_factory=MgspConfig)
    trees_per_forest: int = 100
    max_layers: int = 20
    cv_folds: int = 3
    improvement_eps: float = 0.01        # relative CV improvement to keep growing
    seed: int = 0

    def __post_init__(self):
        if self.max_layers < 1 or self.trees_per_forest < 1 or self.cv_folds < 2:
            raise ValueError("layer, tree and fold counts out of range")


@dataclass(frozen=True)
class VelocitySample:
    v_k: float
    a_k: float
    v_next: float
    a_next: float

    def __post_init__(self):
        vals = (self.v_k, self.a_k, self.v_next, self.a_next)
        if not all(np.isfinite(vals)):
            raise ValueError("non-finite velocity sample")
        if self.v_k < 0 or self.v_next < 0:
            raise ValueError("velocities must be nonnegative")


class VelocityPrediction(NamedTuple):
    v_next: float
    a_next: float
    clamped: bool


# ---------------------------------------------------------------------------
# feature construction


def _history_to_features(v_hist: np.ndarray) -> np.ndarray:
    """(K, m/2+1) velocity histories -> (K, m) [velocities | accelerations]."""
    return np.hstack([v_hist[:, 1:], np.diff(v_hist, axis=1)])


def _synthetic_history(v_k: float, a_k: float, depth: int) -> np.ndarray:
    """Backwards constant-acceleration extrapolation when no history exists."""
    steps = np.arange(depth, -1, -1, dtype=float)
    return np.maximum(np.asarray(v_k, dtype=float) - steps * a_k, 0.0)


def training_matrices(v_series: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Lagged feature matrix and (v_next, a_next) targets from a 1 Hz series."""
    v = np.asarray(v_series, dtype=float)
    half = m // 2
    if v.size < half + 3:
        raise ValueError(f"series too short for {half} lags")
    hist = sliding_window_view(v, half + 1)      # rows end at index half..N-1
    x = _history_to_features(hist[:-1])          # rows ending at k = half..N-2
    v_k = v[half:-1]
    v_next = v[half + 1:]
    y = np.column_stack([v_next, v_next - v_k])
    return x, y


# ---------------------------------------------------------------------------
# multi-grained scanning


def mgs_transform(config: MgspConfig, raw, forests) -> np.ndarray:
    """Slide the window over one raw vector and concatenate the forests'
    per-window outputs; the result has length 2*p*(m-n+1)."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (config.feature_dim,):
        raise ValueError(f"raw vector must have length {config.feature_dim}, got {raw.shape}")
    windows = sliding_window_view(raw, config.window)
    parts = []
    for forest in forests:
        out = np.asarray(forest.predict(windows), dtype=float)
        parts.append(out.reshape(-1))
    result = np.concatenate(parts)
    if result.size != config.output_length:
        raise ValueError(f"forest outputs imply length {result.size}, "
                         f"config demands {config.output_length}")
    return result


class MgspForests:
    """The trained completely-random/random forest pair of the scanning stage."""

    def __init__(self, config: MgspConfig, seed: int):
        self.config = config
        self.forests = [
            ExtraTreesRegressor(n_estimators=config.trees_per_forest, max_features=1,
                                random_state=seed % (2**31 - 1)),
            RandomForestRegressor(n_estimators=config.trees_per_forest,
                                  random_state=(seed + 1) % (2**31 - 1)),
        ]

    def fit(self, x: np.ndarray, y_scalar: np.ndarray):
        w = self.config.n_windows
        windows = sliding_window_view(x, self.config.window, axis=1).reshape(-1, self.config.window)
        targets = np.repeat(y_scalar, w)
        for forest in self.forests:
            forest.fit(windows, targets)
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        k = x.shape[0]
        w = self.config.n_windows
        windows = sliding_window_view(x, self.config.window, axis=1).reshape(-1, self.config.window)
        cols = [np.asarray(f.predict(windows)).reshape(k, w) for f in self.forests]
        return np.hstack(cols)


# ---------------------------------------------------------------------------
# cascade forest


def _layer_forests(trees: int, seed: int):
    mk = 2**31 - 1
    return [
        ExtraTreesRegressor(n_estimators=trees, max_features=1, random_state=seed % mk),
        ExtraTreesRegressor(n_estimators=trees, max_features=1, random_state=(seed + 1) % mk),
        RandomForestRegressor(n_estimators=trees, random_state=(seed + 2) % mk),
        RandomForestRegressor(n_estimators=trees, random_state=(seed + 3) % mk),
    ]


class CascadeLayer:
    """Two completely-random forests plus two random forests.

    Out-of-fold predictions supply the augmented features during training;
    full-data refits serve inference.
    """

    def __init__(self, trees: int, cv_folds: int, seed: int):
        self.trees = trees
        self.cv_folds = cv_folds
        self.seed = seed
        self.forests = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
        n = x.shape[0]
        folds = np.array_split(np.arange(n), self.cv_folds)
        oof = np.zeros((n, 4 * y.shape[1]))
        for fi, val_idx in enumerate(folds):
            train_idx = np.setdiff1d(np.arange(n), val_idx)
            for mi, forest in enumerate(_layer_forests(self.trees, self.seed + 16 * fi)):
                forest.fit(x[train_idx], y[train_idx])
                oof[val_idx, mi * y.shape[1]:(mi + 1) * y.shape[1]] = forest.predict(x[val_idx])
        self.forests = _layer_forests(self.trees, self.seed)
        for forest in self.forests:
            forest.fit(x, y)
        mean_v = oof[:, 0::y.shape[1]].mean(axis=1)
        cv_rmse = float(np.sqrt(np.mean((mean_v - y[:, 0]) ** 2)))
        return oof, cv_rmse

    def augment(self, x: np.ndarray) -> np.ndarray:
        return np.hstack([np.atleast_2d(f.predict(x)) for f in self.forests])

    def predict(self, x: np.ndarray) -> np.ndarray:
        outs = np.stack([f.predict(x) for f in self.forests])
        return outs.mean(axis=0)


@dataclass
class CascadeForestModel:
    """Trained multi-grained cascade forest for one-step velocity prediction."""

    config: CascadeConfig
    mgsp: MgspForests
    layers: list
    cv_history: list
    seed: int

    @property
    def final_depth(self) -> int:
        return len(self.layers)

    def predict_batch(self, x_raw: np.ndarray) -> np.ndarray:
        base = self.mgsp.transform(x_raw)
        aug = None
        out = None
        for layer in self.layers:
            x_layer = base if aug is None else np.hstack([base, aug])
            aug = layer.augment(x_layer)
            out = layer.predict(x_layer)
        return out


def train_cascade(v_series, config: CascadeConfig | None = None) -> CascadeForestModel:
    """Grow cascade layers while k-fold CV error keeps improving.

    Growth stops at the first layer whose relative improvement falls below
    the configured epsilon (the probe layer is dropped) or at the layer cap.
    """
    cfg = config or CascadeConfig()
    x, y = training_matrices(np.asarray(v_series, dtype=float), cfg.mgsp.feature_dim)
    if x.shape[0] < cfg.cv_folds:
        raise ValueError("need at least one sample per CV fold")
    mgsp = MgspForests(cfg.mgsp, seed=cfg.seed).fit(x, y[:, 0])
    base = mgsp.transform(x)
    layers = []
    cv_history = []
    aug = None
    for depth in range(cfg.max_layers):
        layer = CascadeLayer(cfg.trees_per_forest, cfg.cv_folds, seed=cfg.seed + 1000 * (depth + 1))
        x_layer = base if aug is None else np.hstack([base, aug])
        oof, cv_rmse = layer.fit(x_layer, y)
        if layers and cv_rmse > cv_history[-1] * (1.0 - cfg.improvement_eps):
            break
        layers.append(layer)
        cv_history.append(cv_rmse)
        aug = oof
    return CascadeForestModel(config=cfg, mgsp=mgsp, layers=layers,
                              cv_history=cv_history, seed=cfg.seed)


# ---------------------------------------------------------------------------
# prediction


def predict_one_step(model: CascadeForestModel, v_k: float, a_k: float,
                     history=None) -> VelocityPrediction:
    """Predict (velocity, acceleration) one second ahead.

    ``history`` is the recent 1 Hz velocity record ending at the current
    step; without one, a constant-acceleration backfill stands in.
    """
    half = model.config.mgsp.feature_dim // 2
    if history is None:
        hist = _synthetic_history(v_k, a_k, half)
    else:
        hist = np.asarray(history, dtype=float)
        if hist.size < half + 1:
            pad = _synthetic_history(hist[0], a_k, half + 1 - hist.size)
            hist = np.concatenate([pad[:-1], hist])
        hist = hist[-(half + 1):]
    x = _history_to_features(hist[None, :])
    out = model.predict_batch(x)[0]
    v_next = float(out[0])
    clamped = v_next < 0
    return VelocityPrediction(max(v_next, 0.0), float(out[1]), clamped)


def predict_horizon(model: CascadeForestModel, v_k: float, a_k: float,
                    steps: int, history=None) -> np.ndarray:
    """Recursive multi-second prediction at the model's native 1 s stride."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    half = model.config.mgsp.feature_dim // 2
    if history is None:
        hist = _synthetic_history(v_k, a_k, half)
    else:
        hist = np.asarray(history, dtype=float)[-(half + 1):]
        if hist.size < half + 1:
            pad = _synthetic_history(hist[0], a_k, half + 1 - hist.size)
            hist = np.concatenate([pad[:-1], hist])
    out = np.empty(steps)
    for i in range(steps):
        pred = model.predict_batch(_history_to_features(hist[None, :]))[0]
        v_next = max(float(pred[0]), 0.0)
        out[i] = v_next
        hist = np.concatenate([hist[1:], [v_next]])
    return out


def _rolling_multistep(model: CascadeForestModel, v_series: np.ndarray,
                       steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Batched recursive predictions along a series; returns (pred, actual)
    pairs for the final horizon step."""
    v = np.asarray(v_series, dtype=float)
    half = model.config.mgsp.feature_dim // 2
    hist = sliding_window_view(v, half + 1).copy()   # rows end at half..N-1
    last_start = v.size - 1 - steps - half
    if last_start < 0:
        raise ValueError("series too short for this horizon")
    hist = hist[: last_start + 1]
    for _ in range(steps):
        pred = model.predict_batch(_history_to_features(hist))
        v_next = np.maximum(pred[:, 0], 0.0)
        hist = np.hstack([hist[:, 1:], v_next[:, None]])
    predicted = hist[:, -1]
    actual = v[half + steps: half + steps + predicted.size]
    return predicted, actual


def horizon_rmse(model: CascadeForestModel, v_series, steps: int) -> tuple[float, float]:
    """(MAE, RMSE) of the recursive h-step prediction over a held-out series."""
    predicted, actual = _rolling_multistep(model, v_series, steps)
    return metrics(predicted, actual)


def persistence_metrics(v_series, steps: int) -> tuple[float, float]:
    """Error of repeating the last observed velocity over the same horizon."""
    v = np.asarray(v_series, dtype=float)
    if v.size <= steps:
        raise ValueError("series too short")
    return metrics(v[:-steps], v[steps:])


# ---------------------------------------------------------------------------
# demand-power conversion and metrics


def to_demand_power(v_seq, params, motor_eff, dt: float = 1.0, v_prev=None) -> np.ndarray:
    """Predicted velocities to DC-bus demand powers, element-wise.

    Acceleration comes from finite differences of the sequence (anchored at
    ``v_prev`` when given). ``motor_eff`` may be a scalar or a callable
    ``(v, accel) -> efficiency``.
    """
    v = np.asarray(v_seq, dtype=float)
    if np.any(v < 0):
        raise ValueError("velocities must be nonnegative")
    anchor = v[0] if v_prev is None else float(v_prev)
    accel = np.diff(v, prepend=anchor) / dt
    out = np.empty(v.shape)
    for i in range(v.size):
        eff = motor_eff(v[i], accel[i]) if callable(motor_eff) else motor_eff
        out[i] = demand_power(float(v[i]), float(accel[i]), params, eff)
    return out


def metrics(predicted, actual) -> tuple[float, float]:
    """(MAE, RMSE) between two equal-length sequences."""
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape or p.size == 0:
        raise ValueError("sequences must be nonempty and of equal length")
    err = p - a
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err * err)))


# ---------------------------------------------------------------------------
# persistence


def write_velocity_model(model: CascadeForestModel, path, extra: dict | None = None) -> None:
    header = {
        "version": MODEL_VERSION,
        "seed": model.seed,
        "final_depth": model.final_depth,
        "cv_history": model.cv_history,
        "mgsp": {
            "feature_dim": model.config.mgsp.feature_dim,
            "window": model.config.mgsp.window,
            "trees_per_forest": model.config.mgsp.trees_per_forest,
            "output_dim": model.config.mgsp.output_dim,
        },
        "trees_per_forest": model.config.trees_per_forest,
        "max_layers": model.config.max_layers,
        "cv_folds": model.config.cv_folds,
    }
    if extra:
        header.update(extra)
    payload = pickle.dumps(model, protocol=4)
    header["payload_sha256"] = hashlib.sha256(payload).hexdigest()
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_velocity_model(path) -> CascadeForestModel:
    with open(path, "rb") as fh:
        if fh.read(4) != MODEL_MAGIC:
            raise ValueError(f"{path}: not a velocity model container")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode("utf-8"))
        if header["version"] != MODEL_VERSION:
            raise ValueError(f"unsupported model version {header['version']}")
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ValueError(f"{path}: payload digest mismatch")
    return pickle.loads(payload)
