"""Receding-horizon energy-management controllers.

Two controllers share the cost, constraints and solver and differ only in
the SOC observer driving the rollout:

* the traditional controller propagates the linearized circuit equations
  (stacked single-step transfer form, coefficients evaluated along the
  candidate trajectory), and
* the table-based controller reduces an explicit lookup table to per-step
  degree-7 battery-power polynomials and accumulates those.

The control variable is the battery share of demand power, u = P_batt/P_load;
conversions to watts happen at the plant boundary.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .observer import (
    ExplicitTable,
    PolynomialDomainError,
    SocPolynomial,
    filter_stage1,
    filter_stage2,
    scaled_design_pinv,
    _descale_coefficients,
    _to_unit,
)


class LinearizationError(ValueError):
    """Operating point outside the feasible region of the circuit equations."""


class InfeasibleBoundsError(ValueError):
    """The constraint set of a horizon problem is empty."""


# ---------------------------------------------------------------------------
# operating point and observation constants


@dataclass(frozen=True)
class Zpoint:
    """Measured component state at the current step (frozen over the horizon)."""

    u_batt: float
    r_batt: float
    p_fc: float


@dataclass(frozen=True)
class FuelCoeffs:
    """Constants of the equivalent-hydrogen observation."""

    c_h2_g_per_j: float                  # fuel-cell hydrogen rate coefficient
    s_factor: float                      # battery equivalence factor
    lhv_j_per_g: float                   # hydrogen lower heating value

    @property
    def battery_coeff(self) -> float:
        return self.s_factor / self.lhv_j_per_g


def fuel_coeffs(fuel_cell, s_factor: float = 2.0) -> FuelCoeffs:
    return FuelCoeffs(c_h2_g_per_j=fuel_cell.c_h2, s_factor=s_factor,
                      lhv_j_per_g=fuel_cell.lhv_j_per_g)


def equivalent_h2_rate(p_fc, p_batt, coeffs: FuelCoeffs):
    """Equivalent hydrogen flow: stack flow plus battery power weighted by the
    equivalence factor, g/s."""
    return coeffs.c_h2_g_per_j * np.asarray(p_fc) + coeffs.battery_coeff * np.asarray(p_batt)


# ---------------------------------------------------------------------------
# linearization (state-transfer and observation scalars)


@dataclass(frozen=True)
class Linearization:
    """Scalars of the linearized prediction model at one operating point."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float
    g: float


def linearize(battery, coeffs: FuelCoeffs, soc: float, p_batt: float,
              p_load: float, z: Zpoint) -> Linearization:
    """State-transfer and observation scalars at an operating point.

    The battery capacity enters in coulombs so the state scalar is the exact
    partial derivative of the SOC rate equation.
    """
    if p_load <= 0:
        raise LinearizationError("linearization needs a positive demand power")
    u_ocv = float(battery.ocv_curve(soc))
    r = z.r_batt
    disc = u_ocv * u_ocv - 4.0 * r * p_batt
    if disc <= 0:
        raise LinearizationError(
            f"discriminant nonpositive at p_batt={p_batt:g} W (U={u_ocv:.1f} V, R={r:.3f} ohm)")
    cap_c = battery.capacity_coulomb
    inv_sqrt = 1.0 / np.sqrt(disc)
    spread = -coeffs.c_h2_g_per_j + coeffs.battery_coeff
    return Linearization(
        a=0.0,
        b=-(p_load / cap_c) * inv_sqrt,
        c=-(p_batt / (p_load * cap_c)) * inv_sqrt,
        d=0.0,
        e=spread * p_load,
        f=coeffs.c_h2_g_per_j + spread * p_batt / p_load,
        g=(coeffs.c_h2_g_per_j - coeffs.battery_coeff) * p_batt,
    )


@dataclass(frozen=True)
class LinearizedModel:
    """Per-step linearization scalars over a horizon plus their stacked forms."""

    b: np.ndarray
    c: np.ndarray
    e: np.ndarray
    f: np.ndarray
    g: np.ndarray
    dt: float
    a: np.ndarray = None
    d: np.ndarray = None

    def __post_init__(self):
        n = self.b.shape[0]
        if self.a is None:
            object.__setattr__(self, "a", np.zeros(n))
        if self.d is None:
            object.__setattr__(self, "d", np.zeros(n))

    @property
    def n(self) -> int:
        return self.b.shape[0]

    @property
    def a_stacked(self) -> np.ndarray:
        return np.ones(self.n)

    @property
    def b_stacked(self) -> np.ndarray:
        """Lower-triangular accumulation of the per-step input scalars, times dt."""
        return np.tril(np.broadcast_to(self.b, (self.n, self.n))) * self.dt

    @property
    def c_stacked(self) -> np.ndarray:
        return np.tril(np.broadcast_to(self.c, (self.n, self.n))) * self.dt


def build_horizon_model(battery, coeffs: FuelCoeffs, soc: float, p_batt: float,
                        p_load_seq, z: Zpoint, dt: float) -> LinearizedModel:
    """Linearization frozen at the current state, demand power varying per step."""
    v = np.asarray(p_load_seq, dtype=float)
    u_ocv = float(battery.ocv_curve(soc))
    disc = u_ocv * u_ocv - 4.0 * z.r_batt * p_batt
    if disc <= 0:
        raise LinearizationError("discriminant nonpositive at the linearization point")
    inv_sqrt = 1.0 / np.sqrt(disc)
    cap_c = battery.capacity_coulomb
    spread = -coeffs.c_h2_g_per_j + coeffs.battery_coeff
    return LinearizedModel(
        b=-(v / cap_c) * inv_sqrt,
        c=np.full(v.shape, -(p_batt / cap_c) * inv_sqrt) / v,
        e=spread * v,
        f=coeffs.c_h2_g_per_j + spread * p_batt / v,
        g=np.full(v.shape, (coeffs.c_h2_g_per_j - coeffs.battery_coeff) * p_batt),
        dt=dt,
    )


# ---------------------------------------------------------------------------
# horizon problem


@dataclass(frozen=True)
class HorizonProblem:
    """One receding-horizon instance."""

    soc_0: float
    p_load_seq: np.ndarray               # disturbance per step, W, length n
    z: Zpoint
    n: int
    dt: float
    k_weights: np.ndarray                # per-step weights, length n
    q1: float
    q2: float
    x_ref: float
    y_ref: float
    u_min: np.ndarray
    u_max: np.ndarray
    p_batt_bounds: tuple[float, float]
    p_fc_bounds: tuple[float, float]
    dp_fc_bounds: tuple[float, float] | None
    m_coeff: np.ndarray                  # constraint pair: m*u + n_const >= 0
    n_const: np.ndarray
    coeffs: FuelCoeffs
    p_fc_anchor: float = 0.0
    state_cost: str = "linear"           # or "squared"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("horizon must be at least 1 step")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        v = np.asarray(self.p_load_seq, dtype=float)
        if v.shape != (self.n,) or not np.all(np.isfinite(v)):
            raise ValueError("p_load_seq must be a finite length-n sequence")
        if np.any(v <= 0):
            raise ValueError("demand power must be positive over the horizon "
                             "(regeneration steps bypass the controller)")
        for lo, hi, name in ((self.p_batt_bounds[0], self.p_batt_bounds[1], "p_batt"),
                             (self.p_fc_bounds[0], self.p_fc_bounds[1], "p_fc")):
            if lo > hi:
                raise ValueError(f"{name} bounds out of order")
        if self.dp_fc_bounds is not None and self.dp_fc_bounds[0] > self.dp_fc_bounds[1]:
            raise ValueError("dp_fc bounds out of order")
        if self.state_cost not in ("linear", "squared"):
            raise ValueError("state_cost must be 'linear' or 'squared'")
        for arr_name in ("p_load_seq", "k_weights", "u_min", "u_max", "m_coeff", "n_const"):
            object.__setattr__(self, arr_name,
                               np.broadcast_to(np.asarray(getattr(self, arr_name), dtype=float),
                                               (self.n,)).copy())


def effective_box(problem: HorizonProblem, extra: tuple | None = None,
                  relax_heuristic: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Per-step bounds on u implied by all per-step constraints.

    The physical caps (battery/fuel-cell boxes, the m*u+n pair, the first-step
    fuel-cell rate limit) are hard; the task box [u_min, u_max] is a search
    heuristic and is relaxed if it empties the intersection.
    """
    v = problem.p_load_seq
    pb_lo, pb_hi = problem.p_batt_bounds
    fc_lo, fc_hi = problem.p_fc_bounds
    lo = np.maximum(pb_lo / v, 1.0 - fc_hi / v)
    hi = np.minimum(pb_hi / v, 1.0 - fc_lo / v)
    with np.errstate(divide="ignore"):
        ratio = -problem.n_const / problem.m_coeff
    pos = problem.m_coeff > 0
    neg = problem.m_coeff < 0
    lo[pos] = np.maximum(lo[pos], ratio[pos])
    hi[neg] = np.minimum(hi[neg], ratio[neg])
    zero_bad = (problem.m_coeff == 0) & (problem.n_const < 0)
    if np.any(zero_bad):
        raise InfeasibleBoundsError("constant constraint m*u + n >= 0 violated")
    if problem.dp_fc_bounds is not None:
        # Reachable fuel-cell cone from the anchor: implied by the per-step
        # ramp bounds, so folding it into the boxes is a valid tightening.
        # Where the cone conflicts with serving the demand, demand wins and
        # the ramp preference stays with the soft penalty.
        dlo, dhi = problem.dp_fc_bounds
        steps = np.arange(1, problem.n + 1, dtype=float)
        cone_lo = np.maximum(lo, 1.0 - (problem.p_fc_anchor + steps * dhi) / v)
        cone_hi = np.minimum(hi, 1.0 - (problem.p_fc_anchor + steps * dlo) / v)
        ok = cone_lo <= cone_hi
        lo = np.where(ok, cone_lo, lo)
        hi = np.where(ok, cone_hi, hi)
    if extra is not None:
        lo = np.maximum(lo, extra[0])
        hi = np.minimum(hi, extra[1])
    if np.any(lo > hi + 1e-12):
        raise InfeasibleBoundsError("hard constraint box is empty")
    tight_lo = np.maximum(lo, problem.u_min)
    tight_hi = np.minimum(hi, problem.u_max)
    if np.any(tight_lo > tight_hi + 1e-12):
        if not relax_heuristic:
            raise InfeasibleBoundsError("constraint box is empty")
        return lo, hi
    return tight_lo, tight_hi


# ---------------------------------------------------------------------------
# observers and rollouts


@dataclass(frozen=True)
class TrajectoryLinearObserver:
    """Linearized circuit observer with coefficients evaluated along the
    candidate trajectory; the stacked transfer form carries the accumulation."""

    u_ocv: float
    r_batt: float
    cap_coulomb: float

    def rates(self, p_batt):
        pb = np.asarray(p_batt, dtype=float)
        disc = self.u_ocv * self.u_ocv - 4.0 * self.r_batt * pb
        disc = np.maximum(disc, 1e-12 * self.u_ocv * self.u_ocv)
        return -2.0 * pb / (self.cap_coulomb * np.sqrt(disc))


@dataclass(frozen=True)
class HorizonPolynomials:
    """Per-step degree-7 SOC-rate polynomials in the rescaled basis."""

    scaled_coeffs: np.ndarray            # (8, n)
    domain: tuple[float, float]
    fit_rmse: np.ndarray                 # (n,)

    @property
    def n(self) -> int:
        return self.scaled_coeffs.shape[1]

    def rates(self, p_batt):
        t = _to_unit(np.asarray(p_batt, dtype=float), self.domain)
        t2 = t * t
        t3 = t2 * t
        t4 = t2 * t2
        c = self.scaled_coeffs
        low = c[0] + c[1] * t + c[2] * t2 + c[3] * t3
        high = c[4] + c[5] * t + c[6] * t2 + c[7] * t3
        return low + t4 * high

    def to_polynomials(self) -> list[SocPolynomial]:
        polys = []
        for j in range(self.n):
            scaled = self.scaled_coeffs[:, j]
            polys.append(SocPolynomial(
                coefficients=_descale_coefficients(scaled, self.domain),
                domain=self.domain,
                fit_rmse=float(self.fit_rmse[j]),
                scaled_coefficients=scaled,
            ))
        return polys

    @classmethod
    def from_polynomials(cls, polynomials) -> "HorizonPolynomials":
        polys = list(polynomials)
        domain = polys[0].domain
        if any(p.domain != domain for p in polys):
            raise ValueError("per-step polynomials must share one domain")
        coeffs = np.column_stack([p.scaled_coefficients for p in polys])
        return cls(scaled_coeffs=coeffs, domain=domain,
                   fit_rmse=np.array([p.fit_rmse for p in polys]))


_TRIL_CACHE: dict[int, np.ndarray] = {}


def _lower_tri(n: int) -> np.ndarray:
    mat = _TRIL_CACHE.get(n)
    if mat is None:
        mat = np.tril(np.ones((n, n))).T.copy()
        _TRIL_CACHE[n] = mat
    return mat


def _soc_batch(observer, problem: HorizonProblem, u_batch: np.ndarray) -> np.ndarray:
    """Predicted SOC trajectories for a batch of candidate control sequences.

    Each observer propagates in its prescribed form: the linearized paths
    assemble the stacked lower-triangular transfer matrices, the polynomial
    path accumulates the single-step recursion.
    """
    v = problem.p_load_seq
    pb = u_batch * v
    if isinstance(observer, LinearizedModel):
        stacked = np.tril(observer.b * np.ones((problem.n, 1))) * problem.dt
        rates_u = u_batch @ stacked.T
        rates_v = (np.tril(observer.c * np.ones((problem.n, 1))) * problem.dt) @ v
        return problem.soc_0 + rates_u + rates_v
    if isinstance(observer, TrajectoryLinearObserver):
        rates = observer.rates(pb)
        transfer = np.tril(rates[..., None, :] * np.ones((problem.n, 1))) * problem.dt
        return problem.soc_0 + transfer.sum(axis=-1)
    if isinstance(observer, HorizonPolynomials):
        rates = observer.rates(pb)
        return problem.soc_0 + problem.dt * np.cumsum(rates, axis=-1)
    return observer.predict_soc(problem, u_batch)


def _y_batch(problem: HorizonProblem, u_batch: np.ndarray) -> np.ndarray:
    """Per-step equivalent hydrogen flow, g/s (bilinear in u and demand)."""
    v = problem.p_load_seq
    pb = u_batch * v
    return equivalent_h2_rate(v - pb, pb, problem.coeffs)


def objective_batch(problem: HorizonProblem, soc, y) -> np.ndarray:
    dy = y - problem.y_ref
    dx = soc - problem.x_ref
    if problem.state_cost == "squared":
        state = dx * dx
    else:
        state = dx
    terms = problem.k_weights * (problem.q1 * dy * dy + problem.q2 * state)
    return np.sum(terms, axis=-1)


def objective(problem: HorizonProblem, soc_traj, y_traj) -> float:
    """Weighted tracking cost of one predicted trajectory pair."""
    soc = np.asarray(soc_traj, dtype=float)
    y = np.asarray(y_traj, dtype=float)
    if soc.shape != (problem.n,) or y.shape != (problem.n,):
        raise ValueError("trajectories must have length n")
    return float(objective_batch(problem, soc, y))


def tmpc_rollout(model: LinearizedModel, problem: HorizonProblem, u_seq,
                 form: str = "recursive") -> tuple[np.ndarray, np.ndarray]:
    """Propagate the linearized model over the horizon.

    The recursive single-step accumulation and the stacked matrix form agree
    to floating-point accuracy; both are exposed for cross-checking.
    """
    u = np.asarray(u_seq, dtype=float)
    if u.shape != (problem.n,):
        raise ValueError("u_seq must have length n")
    v = problem.p_load_seq
    if form == "stacked":
        soc = model.a_stacked * problem.soc_0 + model.b_stacked @ u + model.c_stacked @ v
    else:
        soc = problem.soc_0 + model.dt * np.cumsum(model.b * u + model.c * v)
    y = model.e * u + model.f * v + model.g
    return soc, y


def lrmpc_rollout(polynomials, problem: HorizonProblem, u_seq) -> np.ndarray:
    """Accumulate per-step polynomial SOC rates onto the initial state."""
    u = np.asarray(u_seq, dtype=float)
    if u.shape != (problem.n,):
        raise ValueError("u_seq must have length n")
    if isinstance(polynomials, HorizonPolynomials):
        polynomials = polynomials.to_polynomials()
    polys = list(polynomials)
    if len(polys) != problem.n:
        raise ValueError("need one polynomial per step")
    soc = np.empty(problem.n)
    acc = problem.soc_0
    for i, (poly, ui, vi) in enumerate(zip(polys, u, problem.p_load_seq)):
        try:
            rate = poly(ui * vi)
        except PolynomialDomainError as exc:
            raise PolynomialDomainError(f"step {i + 1}: {exc}") from exc
        acc = acc + problem.dt * rate
        soc[i] = acc
    return soc


# ---------------------------------------------------------------------------
# solver


@dataclass(frozen=True)
class SolverConfig:
    pg_tol: float = 1e-6
    max_iter: int = 200
    fd_step: float = 1e-6
    presearch_levels: int = 21
    penalty_init: float = 1e-3
    history: int = 8


@dataclass
class SolverStats:
    iterations: int
    converged: bool
    wall_time: float
    n_eval: int = 0


@dataclass
class ControlSolution:
    """Solver output for one horizon problem (split-ratio convention)."""

    u_seq: np.ndarray
    soc_traj: np.ndarray
    y_traj: np.ndarray
    objective: float
    stats: SolverStats

    @property
    def first_control(self) -> float:
        return float(self.u_seq[0])


def _rate_violation(problem: HorizonProblem, u_batch: np.ndarray) -> np.ndarray:
    """Sum of squared fuel-cell ramp violations per candidate."""
    if problem.dp_fc_bounds is None:
        return np.zeros(u_batch.shape[:-1])
    dlo, dhi = problem.dp_fc_bounds
    p_fc = problem.p_load_seq * (1.0 - u_batch)
    dp = np.empty_like(p_fc)
    dp[..., 0] = p_fc[..., 0] - problem.p_fc_anchor
    dp[..., 1:] = p_fc[..., 1:] - p_fc[..., :-1]
    over = np.maximum(dp - dhi, 0.0)
    under = np.maximum(dlo - dp, 0.0)
    over *= over
    under *= under
    over += under
    return np.sum(over, axis=-1)


def _max_rate_violation(problem: HorizonProblem, u: np.ndarray) -> float:
    if problem.dp_fc_bounds is None:
        return 0.0
    dlo, dhi = problem.dp_fc_bounds
    p_fc = problem.p_load_seq * (1.0 - u)
    dp = np.diff(np.concatenate([[problem.p_fc_anchor], p_fc]))
    return float(np.max(np.maximum(dp - dhi, np.maximum(dlo - dp, 0.0)), initial=0.0))


def _rate_feasible_restore(problem: HorizonProblem, lo: np.ndarray, hi: np.ndarray,
                           u: np.ndarray):
    """Nearest-by-forward-clipping point of the ramp-coupled feasible chain.

    Backward reachability intervals guarantee the forward pass never paints
    itself into a corner; returns None when no rate-feasible chain exists
    inside the boxes (the caller then keeps the soft-penalty solution).
    """
    if problem.dp_fc_bounds is None:
        return u
    dlo, dhi = problem.dp_fc_bounds
    v = problem.p_load_seq
    n = problem.n
    p_lo = v * (1.0 - hi)
    p_hi = v * (1.0 - lo)
    b_lo = p_lo.copy()
    b_hi = p_hi.copy()
    for i in range(n - 2, -1, -1):
        b_lo[i] = max(b_lo[i], b_lo[i + 1] - dhi)
        b_hi[i] = min(b_hi[i], b_hi[i + 1] - dlo)
        if b_lo[i] > b_hi[i]:
            return None
    if problem.p_fc_anchor + dhi < b_lo[0] or problem.p_fc_anchor + dlo > b_hi[0]:
        return None
    p = v * (1.0 - u)
    prev = problem.p_fc_anchor
    for i in range(n):
        step_lo = max(b_lo[i], prev + dlo)
        step_hi = min(b_hi[i], prev + dhi)
        p[i] = min(max(p[i], step_lo), step_hi)
        prev = p[i]
    return np.clip(1.0 - p / v, lo, hi)


def solve(problem: HorizonProblem, observer, warm_start=None,
          config: SolverConfig | None = None,
          u_domain: tuple | None = None) -> ControlSolution:
    """Projected quasi-Newton descent over the per-step control box.

    Gradients come from batched central finite differences; the bound-
    constrained subproblem runs under L-BFGS-B, and fuel-cell ramp coupling
    between steps is enforced by an escalating quadratic penalty. The
    returned objective never exceeds the warm-start objective.
    """
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    lo, hi = effective_box(problem, extra=u_domain)
    n = problem.n
    n_eval = 0

    def batch_objective(u_batch):
        soc = _soc_batch(observer, problem, u_batch)
        y = _y_batch(problem, u_batch)
        return objective_batch(problem, soc, y)

    if warm_start is None:
        warm = 0.5 * (lo + hi)
    else:
        warm = np.clip(np.asarray(warm_start, dtype=float), lo, hi)

    start = warm
    f_warm = float(batch_objective(warm[None, :])[0])
    n_eval += 1
    if cfg.presearch_levels > 1 and np.any(hi > lo):
        levels = cfg.presearch_levels
        grid = lo[None, :] + (hi - lo)[None, :] * np.linspace(0.0, 1.0, levels)[:, None]
        cand = np.repeat(warm[None, :], levels * n, axis=0)
        rows = np.arange(levels * n)
        cand[rows, rows // levels] = grid[rows % levels, rows // levels]
        f_cand = batch_objective(cand).reshape(n, levels)
        n_eval += levels * n
        composed = grid[np.argmin(f_cand, axis=1), np.arange(n)]
        restored = _rate_feasible_restore(problem, lo, hi, composed.copy())
        if restored is not None:
            composed = restored
        f_comp = float(batch_objective(composed[None, :])[0])
        n_eval += 1
        if f_comp < f_warm:
            start = composed

    h = cfg.fd_step * np.maximum(1.0, np.abs(warm))
    eye = np.eye(n)
    total_iters = 0
    opt_success = True

    def run_descent(u0, mu):
        nonlocal total_iters, n_eval, opt_success

        def fun(u):
            nonlocal n_eval
            batch = np.concatenate([u[None, :], u[None, :] + h * eye, u[None, :] - h * eye])
            f_all = batch_objective(batch)
            if mu > 0.0:
                f_all = f_all + mu * _rate_violation(problem, batch)
            n_eval += batch.shape[0]
            grad = (f_all[1:n + 1] - f_all[n + 1:]) / (2.0 * h)
            return float(f_all[0]), grad

        res = minimize(fun, u0, jac=True, method="L-BFGS-B",
                       bounds=list(zip(lo, hi)),
                       options={"maxiter": cfg.max_iter, "gtol": cfg.pg_tol,
                                "ftol": 1e-12, "maxcor": cfg.history, "maxls": 8})
        total_iters += int(res.nit)
        opt_success = opt_success and (res.status in (0, 1) or res.success)
        return np.clip(res.x, lo, hi)

    rate_tol = 1e-6
    if problem.dp_fc_bounds is not None:
        rate_tol = 1e-6 * max(1.0, abs(problem.dp_fc_bounds[0]), abs(problem.dp_fc_bounds[1]))
    u = run_descent(start, cfg.penalty_init)
    if _max_rate_violation(problem, u) > rate_tol:
        proj = _rate_feasible_restore(problem, lo, hi, u.copy())
        if proj is not None:
            f_pair = batch_objective(np.stack([u, proj]))
            n_eval += 2
            # A second, stiffly penalized descent only pays when the
            # restoration cost the objective something noticeable.
            if f_pair[1] > f_pair[0] + 1e-6 * max(1.0, abs(f_pair[0])):
                stiff = max(100.0 * cfg.penalty_init, 1.0 / rate_tol)
                refined = _rate_feasible_restore(problem, lo, hi, run_descent(proj, stiff))
                if refined is not None:
                    f_ref = float(batch_objective(refined[None, :])[0])
                    n_eval += 1
                    proj = refined if f_ref < f_pair[1] else proj
            u = proj

    f_final = float(batch_objective(u[None, :])[0])
    if f_final > f_warm and _max_rate_violation(problem, warm) <= rate_tol:
        u, f_final = warm, f_warm
    soc = _soc_batch(observer, problem, u[None, :])[0]
    y = _y_batch(problem, u[None, :])[0]
    converged = opt_success and _max_rate_violation(problem, u) <= rate_tol
    stats = SolverStats(iterations=total_iters, converged=bool(converged),
                        wall_time=time.perf_counter() - t0, n_eval=n_eval)
    return ControlSolution(u_seq=u, soc_traj=soc, y_traj=y,
                           objective=f_final, stats=stats)


# ---------------------------------------------------------------------------
# controller configuration and the shared problem builder


@dataclass(frozen=True)
class ControllerConfig:
    horizon: int = 20
    dt: float = 0.05
    q1: float = 1.0
    q2: float = 15.0                     # calibrated on the bundled cycles
    x_ref: float = 0.6
    y_ref: float = 0.0
    k1: float = 0.3                      # half-width of the warm-start box
    u0_offset_w: float = 25000.0         # fuel-cell baseline in the warm start
    s_factor: float = 2.0
    p_load_floor: float = 1000.0         # split-ratio convention needs v > 0
    dp_fc_bound: float = 2000.0          # per-step fuel-cell ramp, W
    state_cost: str = "linear"
    tmpc_coefficients: str = "trajectory"  # or "frozen"
    k_weights: tuple | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)


def warm_start_ratio(p_load: float, config: ControllerConfig) -> float:
    """Battery share centering the search box: the stack covers a fixed
    baseline power, the battery covers the rest."""
    return 1.0 - config.u0_offset_w / p_load


def make_problem(soc: float, z: Zpoint, p_load_seq, config: ControllerConfig,
                 battery, fuel_cell) -> HorizonProblem:
    """Shared horizon-problem builder (both controllers use the same bound
    policy so closed-loop comparisons isolate the observer difference)."""
    v = np.maximum(np.asarray(p_load_seq, dtype=float), config.p_load_floor)
    n = v.shape[0]
    u0 = warm_start_ratio(float(v[0]), config)
    k = np.ones(n) if config.k_weights is None else np.asarray(config.k_weights, dtype=float)
    return HorizonProblem(
        soc_0=soc,
        p_load_seq=v,
        z=z,
        n=n,
        dt=config.dt,
        k_weights=k,
        q1=config.q1,
        q2=config.q2,
        x_ref=config.x_ref,
        y_ref=config.y_ref,
        u_min=np.full(n, u0 - config.k1),
        u_max=np.full(n, u0 + config.k1),
        p_batt_bounds=(battery.p_charge_min, battery.p_discharge_max),
        p_fc_bounds=(fuel_cell.p_min, fuel_cell.p_max),
        dp_fc_bounds=(-config.dp_fc_bound, config.dp_fc_bound),
        m_coeff=v,
        n_const=fuel_cell.p_max - v,
        coeffs=fuel_coeffs(fuel_cell, config.s_factor),
        p_fc_anchor=z.p_fc,
        state_cost=config.state_cost,
    )


# ---------------------------------------------------------------------------
# online control step of the table-based strategy


def fit_horizon_polynomials(table: ExplicitTable, z: Zpoint, p_load_seq,
                            pinv_domain=None) -> HorizonPolynomials:
    """Two-stage table filtering followed by per-step degree-7 fits.

    Every stage-2 curve shares the battery-power abscissa, so all fits reduce
    to one precomputed pseudo-inverse product.
    """
    if pinv_domain is None:
        pinv_domain = scaled_design_pinv(table.axes[0].values)
    pinv, domain = pinv_domain
    stage1 = filter_stage1(table, z.u_batt, z.r_batt, z.p_fc)
    rows = np.empty((len(p_load_seq), table.axes[0].count))
    for i, v in enumerate(p_load_seq):
        rows[i] = filter_stage2(stage1, float(v)).delta_soc
    rates = rows.T / table.dt            # per-step deltas to rates, 1/s
    coeffs = pinv @ rates                # (8, n)
    design = np.vander(_to_unit(table.axes[0].values, domain), coeffs.shape[0], increasing=True)
    resid = design @ coeffs - rates
    rmse = np.sqrt(np.mean(resid * resid, axis=0))
    return HorizonPolynomials(scaled_coeffs=coeffs, domain=domain, fit_rmse=rmse)


def alg1_step(soc: float, z: Zpoint, table: ExplicitTable, p_load_pre,
              config: ControllerConfig, battery, fuel_cell,
              warm_start=None, pinv_domain=None) -> ControlSolution:
    """One online control step of the table-based strategy.

    Warm-starts from the fixed fuel-cell-baseline split, bounds the search to
    that split plus/minus k1, filters the table at the frozen component state,
    fits per-step polynomials and solves; only the first control is applied.
    """
    p_load_pre = np.asarray(p_load_pre, dtype=float)
    if p_load_pre[0] <= 0:
        raise ValueError("controller requires positive current demand (regen bypasses it)")
    problem = make_problem(soc, z, p_load_pre, config, battery, fuel_cell)
    polys = fit_horizon_polynomials(table, z, problem.p_load_seq, pinv_domain)
    if warm_start is None:
        warm_start = np.full(problem.n, warm_start_ratio(float(problem.p_load_seq[0]), config))
    domain_box = (np.full(problem.n, polys.domain[0]) / problem.p_load_seq,
                  np.full(problem.n, polys.domain[1]) / problem.p_load_seq)
    return solve(problem, polys, warm_start=warm_start, config=config.solver,
                 u_domain=domain_box)


# ---------------------------------------------------------------------------
# closed-loop controllers


class TmpcController:
    """Receding-horizon controller with the linearized circuit observer."""

    name = "tmpc"

    def __init__(self, plant, config: ControllerConfig | None = None):
        self.plant = plant
        self.config = config or ControllerConfig()
        self._prev_u = None

    def reset(self) -> None:
        self._prev_u = None

    def step(self, soc: float, z: Zpoint, p_load_seq) -> ControlSolution:
        cfg = self.config
        problem = make_problem(soc, z, p_load_seq, cfg, self.plant.battery, self.plant.fuel_cell)
        if cfg.tmpc_coefficients == "frozen":
            p_batt_now = float(problem.p_load_seq[0]) - z.p_fc
            observer = build_horizon_model(self.plant.battery, problem.coeffs, soc,
                                           p_batt_now, problem.p_load_seq, z, cfg.dt)
        else:
            observer = TrajectoryLinearObserver(
                u_ocv=float(self.plant.battery.ocv_curve(soc)),
                r_batt=z.r_batt,
                cap_coulomb=self.plant.battery.capacity_coulomb,
            )
        warm = self._shifted_warm_start(problem)
        solution = solve(problem, observer, warm_start=warm, config=cfg.solver)
        self._prev_u = solution.u_seq
        return solution

    def _shifted_warm_start(self, problem: HorizonProblem):
        if self._prev_u is None or self._prev_u.shape[0] != problem.n:
            return np.full(problem.n, warm_start_ratio(float(problem.p_load_seq[0]), self.config))
        return np.concatenate([self._prev_u[1:], self._prev_u[-1:]])


class LrmpcController:
    """Receding-horizon controller with the explicit-table polynomial observer."""

    name = "lrmpc"

    def __init__(self, plant, table: ExplicitTable, config: ControllerConfig | None = None):
        self.plant = plant
        self.table = table
        self.config = config or ControllerConfig()
        self._pinv_domain = scaled_design_pinv(table.axes[0].values)
        self._prev_u = None
        self._slice_cache = None

    def reset(self) -> None:
        self._prev_u = None
        self._slice_cache = None

    def step(self, soc: float, z: Zpoint, p_load_seq) -> ControlSolution:
        cfg = self.config
        warm = None
        if self._prev_u is not None and self._prev_u.shape[0] == cfg.horizon:
            warm = np.concatenate([self._prev_u[1:], self._prev_u[-1:]])
        solution = alg1_step(soc, z, self.table, p_load_seq, cfg,
                             self.plant.battery, self.plant.fuel_cell,
                             warm_start=warm, pinv_domain=self._pinv_domain)
        self._prev_u = solution.u_seq
        return solution
