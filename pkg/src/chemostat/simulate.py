"""Time integration of the full site-network system and of the averaged ODE.

Two schemes integrate the full system d/dt W = F(W) + (1/eps) K W:

* ``exp_imex`` — exponential Euler: W <- E_h W + h * Phi_h F(W), where
  E_h = exp((h/eps) A_i) and Phi_h = phi1((h/eps) A_i) row by row.  The stiff
  linear part is handled exactly by matrix exponentials (pure migration is
  integrated without error, and the slow-manifold offset is reproduced
  correctly at every step size), so the only error is reaction sampling.
* ``implicit`` — backward Euler with a damped Newton solve using the exact
  reaction Jacobian plus (1/eps) K.

Both use step doubling for error control on a dyadic step-size ladder
(dt_max / 2^k), which keeps the per-step-size matrix exponentials cacheable,
and share one positivity policy: a candidate step with an entry below
-10*abs_tol, or with total negative mass above abs_tol, is rejected; smaller
undershoots are clamped to zero and logged.  Species rows that start
identically zero stay identically zero, bitwise: the exponential scheme maps
zero rows to zero rows exactly, and the implicit scheme solves only over the
initially nonzero rows.

The averaged ODE is nonstiff and integrated by adaptive RK4 with the same
controller and policy.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .aggregated import AggregatedModel, aggregated_vector_field
from .domain import MigrationOperator, SpatialDomain, patch_domain
from .errors import (
    NoTransient,
    NonFiniteState,
    NonPositiveEpsilon,
    NumericalError,
    StepSizeUnderflow,
    ValidationError,
)
from .model import CompetitionModel, full_jacobian, reaction

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "Event",
    "DecayFit",
    "SurvivorReport",
    "integrate_full",
    "integrate_aggregated",
    "pure_migration_trajectory",
    "fast_decay_fit",
    "classify_survivors",
    "write_trajectory_csv",
]

SCHEME_EXP_IMEX = "exp_imex"
SCHEME_IMPLICIT = "implicit"


@dataclass(frozen=True)
class IntegratorConfig:
    """Step-size ladder, tolerances, horizon and recording cadence."""

    t_end: float
    scheme: str = SCHEME_EXP_IMEX
    dt_init: float = 1e-2
    dt_min: float = 1e-12
    dt_max: float = 0.5
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    record_every: float | None = None  # default: t_end / 500

    def __post_init__(self):
        if self.scheme not in (SCHEME_EXP_IMEX, SCHEME_IMPLICIT):
            raise ValidationError(f"unknown scheme {self.scheme!r}")
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValidationError("need 0 < dt_min <= dt_init <= dt_max")
        if not (0 < self.rel_tol < 1 and 0 < self.abs_tol < 1):
            raise ValidationError("tolerances must lie in (0, 1)")
        if not self.t_end > 0:
            raise ValidationError("t_end must be positive")
        if self.record_every is None:
            object.__setattr__(self, "record_every", self.t_end / 500.0)
        if not self.record_every > 0:
            raise ValidationError("record_every must be positive")


@dataclass(frozen=True)
class Event:
    """One integrator incident: a positivity clamp or a step rejection."""

    kind: str  # "clamp", "reject_error", "reject_positivity", "reject_nonfinite"
    time: float
    value: float  # clamped mass, error estimate, or most negative entry


@dataclass(frozen=True)
class Trajectory:
    """Recorded time series with its slow/fast diagnostics.

    slow[k] is the weighted site-average of states[k] (computed from the
    recorded state, so the two are consistent by construction) and
    fast_norm[k] the sup-norm of the remaining fluctuation.
    """

    times: np.ndarray  # (T,), strictly increasing
    states: np.ndarray  # (T, C, P)
    slow: np.ndarray  # (T, C)
    fast_norm: np.ndarray  # (T,)
    events: tuple[Event, ...] = ()

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class DecayFit:
    """Fitted exponential decay of the fast-component norm."""

    rate: float  # decay rate in t (positive means decaying)
    epsilon_rate: float  # eps * rate, comparable to the spectral gap
    plateau: float  # median fast norm over the final decade of time
    window: tuple[float, float]  # fitted time window
    point_count: int


@dataclass(frozen=True)
class SurvivorReport:
    """Species classified by their final sup-norm density."""

    survivors: tuple[int, ...]
    extinct: tuple[int, ...]
    undecided: tuple[int, ...]

    @property
    def decided(self) -> bool:
        return not self.undecided


class _Recorder:
    def __init__(self, weights: np.ndarray, record_every: float):
        self.w = weights
        self.every = record_every
        self.times: list[float] = []
        self.states: list[np.ndarray] = []
        self.next_record = 0.0

    def record(self, t: float, state: np.ndarray, force: bool = False):
        if not force and t < self.next_record - 1e-12 * max(1.0, t):
            return
        self.times.append(t)
        self.states.append(state.copy())
        while self.next_record <= t + 1e-12 * max(1.0, t):
            self.next_record += self.every

    def build(self, events: list[Event]) -> Trajectory:
        states = np.asarray(self.states)
        slow = states @ self.w
        fast = states - slow[:, :, None]
        return Trajectory(
            times=np.asarray(self.times),
            states=states,
            slow=slow,
            fast_norm=np.abs(fast).max(axis=(1, 2)),
            events=tuple(events),
        )


def _drive(
    stepper: Callable[[np.ndarray, float], np.ndarray],
    initial: np.ndarray,
    cfg: IntegratorConfig,
    weights: np.ndarray,
) -> Trajectory:
    """Adaptive step-doubling loop shared by all schemes.

    ``stepper(w, h)`` returns the candidate state after one step of size h;
    it may raise NumericalError to signal an unusable step (treated as a
    rejection).  The fine (two half steps) solution is the accepted one.
    """
    w = np.array(initial, dtype=float)
    if np.any(w < 0):
        raise ValidationError("initial state must be nonnegative")
    events: list[Event] = []
    rec = _Recorder(weights, cfg.record_every)
    rec.record(0.0, w, force=True)

    t = 0.0
    k = max(0, int(np.ceil(np.log2(cfg.dt_max / cfg.dt_init))))

    def reject(kind: str, value: float, h: float):
        nonlocal k
        events.append(Event(kind=kind, time=t, value=value))
        if h / 2 < cfg.dt_min:
            raise StepSizeUnderflow(
                f"step size fell below dt_min={cfg.dt_min} at t={t} ({kind})"
            )
        k += 1

    while t < cfg.t_end - 1e-12 * cfg.t_end:
        h = min(cfg.dt_max / 2**k, cfg.t_end - t)
        try:
            coarse = stepper(w, h)
            mid = stepper(w, h / 2)
            fine = stepper(mid, h / 2)
        except NumericalError:
            reject("reject_error", np.nan, h)
            continue

        if not (np.all(np.isfinite(coarse)) and np.all(np.isfinite(fine))):
            if h / 2 < cfg.dt_min:
                raise NonFiniteState(f"non-finite state at t={t} with minimal step")
            reject("reject_nonfinite", np.nan, h)
            continue

        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(w), np.abs(fine))
        err = float(np.max(np.abs(fine - coarse) / scale))
        if err > 1.0:
            reject("reject_error", err, h)
            continue

        most_negative = float(fine.min())
        if most_negative < 0:
            neg_mass = float(-fine[fine < 0].sum())
            if most_negative < -10 * cfg.abs_tol or neg_mass > cfg.abs_tol:
                reject("reject_positivity", most_negative, h)
                continue
            fine = np.where(fine < 0, 0.0, fine)
            events.append(Event(kind="clamp", time=t + h, value=neg_mass))

        t += h
        w = fine
        rec.record(t, w)
        if err < 0.25 and k > 0:
            k -= 1

    if rec.times[-1] != t:
        rec.record(t, w, force=True)
    return rec.build(events)


# -- full system -----------------------------------------------------------


class _Propagators:
    """Cached exp((h/eps) A_i) and phi1((h/eps) A_i) per step size."""

    def __init__(self, op: MigrationOperator, epsilon: float):
        self.op = op
        self.epsilon = epsilon
        self._cache: dict[float, tuple[list[np.ndarray], list[np.ndarray]]] = {}

    def get(self, h: float) -> tuple[list[np.ndarray], list[np.ndarray]]:
        hit = self._cache.get(h)
        if hit is not None:
            return hit
        P = self.op.domain.site_count
        exps, phis = [], []
        for a in self.op.matrices:
            c = (h / self.epsilon) * a
            big = np.zeros((2 * P, 2 * P))
            big[:P, :P] = c
            big[:P, P:] = np.eye(P)
            eb = scipy.linalg.expm(big)
            exps.append(eb[:P, :P])
            phis.append(eb[:P, P:])
        self._cache[h] = (exps, phis)
        return exps, phis


def integrate_full(
    model: CompetitionModel,
    epsilon: float,
    initial: np.ndarray,
    cfg: IntegratorConfig,
) -> Trajectory:
    """Integrate the full stiff system from a nonnegative initial state."""
    if not epsilon > 0:
        raise NonPositiveEpsilon(f"epsilon must be > 0, got {epsilon!r}")
    w0 = model.check_state(initial)
    if cfg.scheme == SCHEME_EXP_IMEX:
        stepper = _exp_imex_stepper(model, epsilon)
    else:
        stepper = _implicit_stepper(model, epsilon, w0, cfg)
    return _drive(stepper, w0, cfg, model.domain.weights)


def _exp_imex_stepper(model: CompetitionModel, epsilon: float):
    props = _Propagators(model.migration, epsilon)

    def step(w: np.ndarray, h: float) -> np.ndarray:
        exps, phis = props.get(h)
        F = reaction(model, w)
        out = np.empty_like(w)
        for i in range(w.shape[0]):
            out[i] = exps[i] @ w[i] + h * (phis[i] @ F[i])
        return out

    return step


def _implicit_stepper(
    model: CompetitionModel, epsilon: float, initial: np.ndarray, cfg: IntegratorConfig
):
    """Backward Euler over the rows that are not identically zero at start.

    Modified Newton: the Jacobian is factorised at the step's start state
    and refreshed only if convergence stalls.
    """
    C, P = initial.shape
    active_rows = [0] + [i for i in range(1, C) if np.any(initial[i] != 0.0)]
    ix = np.concatenate([np.arange(r * P, (r + 1) * P) for r in active_rows])
    newton_tol = 0.05
    max_newton = 25

    def field(w: np.ndarray) -> np.ndarray:
        return reaction(model, w) + _apply_k(model, w) / epsilon

    def factor(w: np.ndarray, h: float):
        J = np.eye(ix.size) - h * full_jacobian(model, epsilon, w)[np.ix_(ix, ix)]
        try:
            return scipy.linalg.lu_factor(J)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"singular backward-Euler system: {exc}") from exc

    def step(w: np.ndarray, h: float) -> np.ndarray:
        wk = w.copy()
        target = w.reshape(-1)[ix]
        lu = factor(wk, h)
        previous = np.inf
        for it in range(max_newton):
            g = wk.reshape(-1)[ix] - target - h * field(wk).reshape(-1)[ix]
            delta = scipy.linalg.lu_solve(lu, -g)
            if not np.all(np.isfinite(delta)):
                raise NumericalError("Newton produced non-finite update")
            flat = wk.reshape(-1)
            flat[ix] += delta
            wk = flat.reshape(C, P)
            scale = cfg.abs_tol + cfg.rel_tol * np.abs(flat[ix])
            size = float(np.max(np.abs(delta) / scale))
            if size < newton_tol:
                return wk
            if size > 0.5 * previous:  # stalled: refresh the factorisation
                lu = factor(wk, h)
                previous = np.inf
            else:
                previous = size
        raise NumericalError("backward-Euler Newton did not converge")

    return step


def _apply_k(model: CompetitionModel, w: np.ndarray) -> np.ndarray:
    out = np.empty_like(w)
    for i, a in enumerate(model.migration.matrices):
        out[i] = a @ w[i]
    return out


# -- averaged system --------------------------------------------------------


def integrate_aggregated(
    agg: AggregatedModel, initial_slow: np.ndarray, cfg: IntegratorConfig
) -> Trajectory:
    """Adaptive RK4 for the averaged ODE; trajectory uses a 1-site layout."""
    x0 = np.asarray(initial_slow, dtype=float)
    if x0.shape != (agg.species_count + 1,):
        raise ValidationError(f"initial slow vector must have length {agg.species_count + 1}")

    def rhs(w: np.ndarray) -> np.ndarray:
        return aggregated_vector_field(agg, w[:, 0])[:, None]

    def step(w: np.ndarray, h: float) -> np.ndarray:
        k1 = rhs(w)
        k2 = rhs(w + (h / 2) * k1)
        k3 = rhs(w + (h / 2) * k2)
        k4 = rhs(w + h * k3)
        return w + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

    dom = patch_domain(1)
    return _drive(step, x0[:, None], cfg, dom.weights)


# -- pure migration (reaction switched off) ---------------------------------


def pure_migration_trajectory(
    op: MigrationOperator,
    epsilon: float,
    initial: np.ndarray,
    t_end: float,
    record_every: float,
) -> Trajectory:
    """Exact evolution under migration alone: W(t) = exp((t/eps) K) W(0).

    Useful as the error-free reference for the fast-decay fitter; there is
    no step-size error because the exponential map is applied directly on
    the recording grid.
    """
    if not epsilon > 0:
        raise NonPositiveEpsilon(f"epsilon must be > 0, got {epsilon!r}")
    w = np.array(initial, dtype=float)
    if w.shape != (op.component_count, op.domain.site_count):
        raise ValidationError("initial state does not match the operator")
    steps = int(np.ceil(t_end / record_every))
    exps = [scipy.linalg.expm((record_every / epsilon) * a) for a in op.matrices]
    rec = _Recorder(op.domain.weights, record_every)
    rec.record(0.0, w, force=True)
    for n in range(1, steps + 1):
        for i, e in enumerate(exps):
            w[i] = e @ w[i]
        rec.record(n * record_every, w, force=True)
    return rec.build([])


# -- diagnostics -------------------------------------------------------------


def fast_decay_fit(traj: Trajectory, epsilon: float) -> DecayFit:
    """Fit the exponential collapse of the fast-component norm.

    The plateau is the median of fast_norm over the final decade of time;
    the rate is the least-squares slope of log(fast_norm - plateau) over the
    initial window where fast_norm > 10 * plateau.  eps * rate is directly
    comparable to the migration operator's spectral gap.

    Raises:
        NoTransient: fast_norm never exceeds 10x its plateau (or the window
            is too short to fit).
    """
    t = traj.times
    fn = traj.fast_norm
    late = t >= t[-1] / 10.0
    plateau = float(np.median(fn[late]))
    threshold = 10.0 * plateau
    above = fn > max(threshold, 0.0)
    if not np.any(above):
        raise NoTransient("fast-component norm never exceeds 10x its plateau")
    start = int(np.argmax(above))
    end = start
    while end < fn.size and fn[end] > threshold and fn[end] > 0:
        end += 1
    if end - start < 3:
        raise NoTransient("transient window has fewer than 3 samples")
    tt = t[start:end]
    yy = np.log(fn[start:end] - plateau)
    slope = float(np.polyfit(tt, yy, 1)[0])
    return DecayFit(
        rate=-slope,
        epsilon_rate=-slope * epsilon,
        plateau=plateau,
        window=(float(tt[0]), float(tt[-1])),
        point_count=end - start,
    )


def classify_survivors(
    final_state: np.ndarray,
    extinct_tol: float = 1e-6,
    survivor_tol: float = 1e-3,
) -> SurvivorReport:
    """Classify species rows of a final state by their sup-norm density."""
    state = np.asarray(final_state, dtype=float)
    survivors, extinct, undecided = [], [], []
    for i in range(1, state.shape[0]):
        peak = float(np.abs(state[i]).max())
        if peak < extinct_tol:
            extinct.append(i)
        elif peak > survivor_tol:
            survivors.append(i)
        else:
            undecided.append(i)
    return SurvivorReport(
        survivors=tuple(survivors), extinct=tuple(extinct), undecided=tuple(undecided)
    )


# -- CSV export ---------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory_csv(traj: Trajectory, path: str, comment: str | None = None) -> None:
    """Write `t, R_1..R_P, U_1_1..U_N_P, X_0..X_N, fast_norm`, atomically.

    Floats use shortest round-trip formatting so identical runs are
    byte-identical.
    """
    T, C, P = traj.states.shape
    N = C - 1
    cols = ["t"]
    cols += [f"R_{x + 1}" for x in range(P)]
    cols += [f"U_{i}_{x + 1}" for i in range(1, N + 1) for x in range(P)]
    cols += [f"X_{i}" for i in range(C)]
    cols += ["fast_norm"]
    lines = []
    if comment:
        lines.append("# " + comment)
    lines.append(",".join(cols))
    for kk in range(T):
        row = [_fmt(traj.times[kk])]
        row += [_fmt(v) for v in traj.states[kk].reshape(-1)]
        row += [_fmt(v) for v in traj.slow[kk]]
        row.append(_fmt(traj.fast_norm[kk]))
        lines.append(",".join(row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
