"""Steady states of the full system and quantitative law checks.

Each rest point of the averaged model continues to a steady state of the
full site network for fast enough migration.  ``continue_steady`` performs
that continuation by damped Newton from the spatially constant lift of the
averaged rest point, pinning species absent from the seed to exactly zero
(absent seeds continue to absent species).  On Newton failure it retries
along a step-size homotopy in epsilon, halving from 1 down to the target
with warm starts.

``epsilon_sweep`` measures how fast the continued steady state approaches
its averaged seed as epsilon shrinks (the expected log-log slope is 1), and
``cep_table`` classifies simulated survivors across an epsilon grid.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .aggregated import AggregatedEquilibrium
from .domain import spectral_gap
from .errors import (
    NewtonDiverged,
    NonPositiveEpsilon,
    ValidationError,
    WrongBasin,
)
from .model import CompetitionModel, full_jacobian, reaction
from .simulate import (
    IntegratorConfig,
    SurvivorReport,
    classify_survivors,
    integrate_full,
)

__all__ = [
    "SteadyState",
    "SweepResult",
    "CepTable",
    "continue_steady",
    "stability_of",
    "epsilon_sweep",
    "cep_table",
    "write_sweep_csv",
    "write_cep_csv",
    "write_stability_csv",
]

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class SteadyState:
    """A stationary solution of the full system at one epsilon.

    The fast component of ``state`` is the manifold offset at this rest
    point (stationary solutions lie on the slow manifold).
    """

    state: np.ndarray  # (N+1, P)
    epsilon: float
    residual: float  # sup-norm of the vector field at state
    seeded_from: int  # surviving index of the averaged seed
    eigenvalues: np.ndarray | None = None  # filled in by stability_of
    stable: bool | None = None
    marginal: bool = False  # some eigenvalue real part is suspiciously small


@dataclass(frozen=True)
class SweepResult:
    """Errors of continued steady states across a decreasing epsilon grid."""

    epsilons: np.ndarray
    errors: np.ndarray  # ||R - r*||_inf + ||U_i - u_i*||_inf per epsilon
    slow_errors: np.ndarray  # ||site-average of state - seed point||_inf
    slope: float  # log-log fit of errors vs epsilon (nan when degenerate)
    slope_residual: float
    slow_slope: float
    degenerate: bool  # all errors at rounding level; no slope to fit
    seeded_from: int


@dataclass(frozen=True)
class CepTable:
    """Simulated survivor sets per epsilon."""

    epsilons: np.ndarray
    reports: tuple[SurvivorReport, ...]
    labels: tuple[str, ...]  # "3", "1+2", "0" (washout) or "undecided"

    def label_for(self, eps: float) -> str:
        i = int(np.argmin(np.abs(self.epsilons - eps)))
        return self.labels[i]


def _constant_lift(point: np.ndarray, site_count: int) -> np.ndarray:
    return np.repeat(point[:, None], site_count, axis=1)


def _newton(
    model: CompetitionModel,
    epsilon: float,
    w0: np.ndarray,
    active_rows: list[int],
    max_iter: int = 60,
) -> tuple[np.ndarray, float]:
    """Damped Newton on the stationarity equations over the active rows."""
    C, P = w0.shape
    ix = np.concatenate([np.arange(r * P, (r + 1) * P) for r in active_rows])
    w = w0.copy()

    def residual(state: np.ndarray) -> np.ndarray:
        f = reaction(model, state) + _migrate(model, state) / epsilon
        return f.reshape(-1)[ix]

    g = residual(w)
    for _ in range(max_iter):
        norm = float(np.abs(g).max())
        if norm <= RESIDUAL_TOL * 0.1:
            break
        J = full_jacobian(model, epsilon, w)[np.ix_(ix, ix)]
        try:
            delta = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError as exc:
            raise NewtonDiverged(f"singular Jacobian in continuation: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise NewtonDiverged("non-finite Newton update")
        # damped line search on the residual norm
        lam = 1.0
        for _ in range(8):
            trial = w.copy()
            flat = trial.reshape(-1)
            flat[ix] += lam * delta
            g_trial = residual(trial)
            if float(np.abs(g_trial).max()) < norm or lam <= 1 / 128:
                w, g = trial, g_trial
                break
            lam /= 2
        else:
            raise NewtonDiverged("line search failed to reduce the residual")
    final = float(np.abs(g).max())
    if final > RESIDUAL_TOL:
        raise NewtonDiverged(f"residual {final:.3e} above {RESIDUAL_TOL} after {max_iter} iterations")
    return w, final


def _migrate(model: CompetitionModel, w: np.ndarray) -> np.ndarray:
    out = np.empty_like(w)
    for i, a in enumerate(model.migration.matrices):
        out[i] = a @ w[i]
    return out


def continue_steady(
    model: CompetitionModel,
    epsilon: float,
    seed: AggregatedEquilibrium,
) -> SteadyState:
    """Continue an averaged rest point to a steady state of the full system.

    Species absent from the seed are pinned to exactly zero; the Newton
    iteration runs over the resource row and the surviving species only.
    On failure, retries along an epsilon-homotopy from 1 with warm starts.

    Raises:
        NewtonDiverged: continuation failed even with the homotopy ladder
            (the message carries the ladder trace).
        WrongBasin: converged, but the site-averaged state is farther than
            half the seed's norm from the seed.
    """
    if not epsilon > 0:
        raise NonPositiveEpsilon(f"epsilon must be > 0, got {epsilon!r}")
    C = model.species_count + 1
    P = model.domain.site_count
    if seed.point.shape != (C,):
        raise ValidationError("seed does not match the model's species count")
    active = [0] + [i for i in range(1, C) if seed.point[i] > 0]
    lift = _constant_lift(seed.point, P)

    try:
        w, res = _newton(model, epsilon, lift, active)
    except NewtonDiverged as direct_exc:
        trace = [f"direct at eps={epsilon:g}: {direct_exc}"]
        w = lift
        eps_ladder = [max(1.0, epsilon)]
        while eps_ladder[-1] / 2 > epsilon:
            eps_ladder.append(eps_ladder[-1] / 2)
        eps_ladder.append(epsilon)
        try:
            for e in eps_ladder:
                w, res = _newton(model, e, w, active)
        except NewtonDiverged as exc:
            trace.append(f"homotopy stalled at eps={e:g}: {exc}")
            raise NewtonDiverged("; ".join(trace)) from exc

    slow = w @ model.domain.weights
    drift = float(np.linalg.norm(slow - seed.point))
    if drift > 0.5 * float(np.linalg.norm(seed.point)):
        raise WrongBasin(
            f"converged state's site average is {drift:.3e} from the seed"
        )
    return SteadyState(
        state=w, epsilon=epsilon, residual=res, seeded_from=seed.surviving_index
    )


def stability_of(model: CompetitionModel, steady: SteadyState) -> SteadyState:
    """Dense eigensolve of the full Jacobian at the steady state."""
    if steady.residual > RESIDUAL_TOL:
        raise ValidationError("steady state residual above tolerance; refusing spectrum")
    J = full_jacobian(model, steady.epsilon, steady.state)
    eigs = scipy.linalg.eigvals(J)
    gap = spectral_gap(model.migration).mu
    marginal_band = 1e-7 * gap / steady.epsilon
    return replace(
        steady,
        eigenvalues=eigs,
        stable=bool(np.all(eigs.real < 0)),
        marginal=bool(np.any(np.abs(eigs.real) < marginal_band)),
    )


def epsilon_sweep(
    model: CompetitionModel,
    seed: AggregatedEquilibrium,
    epsilons: np.ndarray,
) -> SweepResult:
    """Continue one seed across a decreasing epsilon grid and fit the error law.

    The error at each epsilon is ||R - r*||_inf plus ||U_i - u_i*||_inf over
    the seed's surviving species; the slow error compares the site-averaged
    state to the seed point.  Both are fitted log-log against epsilon
    (expected slope 1); a sweep whose errors sit at rounding level is
    reported as degenerate instead of fitted.
    """
    eps = np.sort(np.asarray(epsilons, dtype=float))[::-1]
    if np.any(eps <= 0):
        raise NonPositiveEpsilon("epsilon grid must be positive")
    C = model.species_count + 1
    P = model.domain.site_count
    errors, slow_errors = [], []
    w = _constant_lift(seed.point, P)
    active = [0] + [i for i in range(1, C) if seed.point[i] > 0]
    for e in eps:
        try:
            w, _ = _newton(model, e, w, active)
        except NewtonDiverged:
            st = continue_steady(model, e, seed)  # homotopy fallback
            w = st.state
        err = float(np.abs(w[0] - seed.point[0]).max())
        for i in active[1:]:
            err += float(np.abs(w[i] - seed.point[i]).max())
        errors.append(err)
        slow = w @ model.domain.weights
        slow_errors.append(float(np.abs(slow - seed.point).max()))

    errors = np.asarray(errors)
    slow_errors = np.asarray(slow_errors)
    degenerate = bool(np.all(errors < 1e-12))
    if degenerate:
        slope = slope_res = slow_slope = float("nan")
    else:
        slope, slope_res = _loglog_slope(eps, errors)
        slow_slope, _ = _loglog_slope(eps, slow_errors)
    return SweepResult(
        epsilons=eps,
        errors=errors,
        slow_errors=slow_errors,
        slope=slope,
        slope_residual=slope_res,
        slow_slope=slow_slope,
        degenerate=degenerate,
        seeded_from=seed.surviving_index,
    )


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    lx, ly = np.log(x), np.log(np.maximum(y, 1e-300))
    coeffs, res, *_ = np.polyfit(lx, ly, 1, full=True)
    rms = float(np.sqrt(res[0] / x.size)) if res.size else 0.0
    return float(coeffs[0]), rms


def cep_table(
    model: CompetitionModel,
    epsilons: np.ndarray,
    initial: np.ndarray,
    t_end: float,
    cfg: IntegratorConfig | None = None,
) -> CepTable:
    """Simulated survivor set per epsilon, classified at t_end.

    Entries whose densities end between the extinction and survival
    thresholds are labelled "undecided" (rerun with a longer horizon).
    """
    eps = np.asarray(epsilons, dtype=float)
    reports, labels = [], []
    for e in eps:
        c = cfg or IntegratorConfig(
            t_end=t_end, rel_tol=1e-6, abs_tol=1e-10, dt_max=min(0.5, t_end / 10)
        )
        if c.t_end != t_end:
            c = replace(c, t_end=t_end)
        traj = integrate_full(model, e, initial, c)
        rep = classify_survivors(traj.final_state)
        reports.append(rep)
        if rep.undecided:
            labels.append("undecided")
        elif rep.survivors:
            labels.append("+".join(str(i) for i in rep.survivors))
        else:
            labels.append("0")
    return CepTable(epsilons=eps, reports=tuple(reports), labels=tuple(labels))


# -- CSV exports --------------------------------------------------------------


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_sweep_csv(result: SweepResult, path: str, comment: str | None = None) -> None:
    """Write `epsilon, error, winner, slope` rows (winner blank for sweeps)."""
    lines = []
    if comment:
        lines.append("# " + comment)
    lines.append("epsilon,error,winner,slope")
    for e, err in zip(result.epsilons, result.errors):
        lines.append(f"{_fmt(e)},{_fmt(err)},,{_fmt(result.slope)}")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_cep_csv(table: CepTable, path: str, comment: str | None = None) -> None:
    """Winner table in the shared sweep schema (error column blank)."""
    lines = []
    if comment:
        lines.append("# " + comment)
    lines.append("epsilon,error,winner,slope")
    for e, label in zip(table.epsilons, table.labels):
        lines.append(f"{_fmt(e)},,{label},")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_stability_csv(
    states: list[SteadyState], path: str, comment: str | None = None
) -> None:
    """Write `seed, max_re_eig, stable` for a census of continued states."""
    lines = []
    if comment:
        lines.append("# " + comment)
    lines.append("seed,max_re_eig,stable")
    for st in states:
        if st.eigenvalues is None:
            raise ValidationError("stability_of must run before exporting the census")
        lines.append(f"{st.seeded_from},{_fmt(st.eigenvalues.real.max())},{int(bool(st.stable))}")
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
