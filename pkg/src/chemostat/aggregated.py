"""The averaged (aggregated) competition model and its analysis.

Averaging every field over the sites turns the network into a classical
well-stirred chemostat: d/dt r = I~ - m0~ r - sum f~_i(r) u_i and
d/dt u_i = (f~_i(r) - m~_i) u_i, where tilde denotes the weighted site
average.  Because the consumption family is closed under averaging, each
f~_i is again a line or a Monod curve, every species gets a break-even
resource level r_i* (the root of f~_i(r) = m~_i, +inf if unattainable),
and the long-run outcome is decided by the smallest break-even value.

This module builds the averaged model, finds its equilibria and their
stability, predicts the exclusion winner, and splits each r_i* into the
mean local strength E(R_i*), a nonlinearity (Jensen) term and a
consumption-heterogeneity term, including the covariance identity that the
split reduces to for linear uptake.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import (
    CepAssumptionUnmet,
    LocalBreakEvenInfinite,
    NotLinear,
    TiedRStar,
    ValidationError,
)
from .model import AveragedCurve, CompetitionModel, LinearConsumption

__all__ = [
    "AggregatedModel",
    "AggregatedEquilibrium",
    "CepPrediction",
    "StrengthDecomposition",
    "CovarianceReport",
    "ReversalReport",
    "aggregate",
    "break_even",
    "aggregated_vector_field",
    "aggregated_jacobian",
    "equilibria",
    "predict_cep",
    "decompose_strength",
    "covariance_check",
    "covariance_comparison",
    "concentrate_uptake",
    "concentration_reversal",
    "TOL_HYP",
]

#: Relative band inside which break-even values count as tied and
#: eigenvalue real parts count as non-hyperbolic.
TOL_HYP = 1e-9

#: Names of the structural cases under which the averaged model is known to
#: exclude: equal mortalities site-wise, all averaged curves proportional to
#: one common curve, or all averaged curves in the Monod family.
CASE_EQUAL_MORTALITIES = "equal_mortalities"
CASE_PROPORTIONAL_UPTAKE = "proportional_uptake"
CASE_MONOD_FAMILY = "monod_family"


@dataclass(frozen=True)
class AggregatedModel:
    """Averaged coefficients, curves and break-even values."""

    input_mean: float  # I~ > 0
    resource_loss_mean: float  # m0~ > 0
    mortality_means: np.ndarray  # (N,), m~_i
    curves: tuple[AveragedCurve, ...]  # f~_i, i = 1..N
    break_evens: np.ndarray  # (N+1,): [0] = I~/m0~, [i] = r_i* (+inf allowed)
    cep_cases: tuple[str, ...]  # which structural cases hold (possibly empty)
    species_names: tuple[str, ...] = ()

    @property
    def species_count(self) -> int:
        return len(self.curves)

    @property
    def cep_valid(self) -> bool:
        return bool(self.cep_cases)


@dataclass(frozen=True)
class AggregatedEquilibrium:
    """A nonnegative rest point of the averaged system.

    ``surviving_index`` is 0 for the washout state and i >= 1 when species i
    is the single resident.
    """

    point: np.ndarray  # (N+1,): (r, u_1..u_N)
    surviving_index: int
    stable: bool
    hyperbolic: bool
    eigenvalues: np.ndarray  # (N+1,) complex


@dataclass(frozen=True)
class CepPrediction:
    """Predicted long-run outcome for a given initial condition."""

    contenders: tuple[int, ...]  # 0 plus species present initially with r_i* < r_0*
    r_hat: float  # min break-even over the contenders
    winner: int  # argmin (0 = washout)
    limit_point: np.ndarray  # (N+1,)
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class StrengthDecomposition:
    """r_i* = E(R_i*) + nonlinearity + heterogeneity, with closure residual."""

    species: int
    local_mean: float  # E(R_i*), mean of the per-site break-evens
    nonlinearity: float  # Jensen term of the averaged curve
    heterogeneity: float  # consumption-heterogeneity term
    break_even: float  # r_i*
    residual: float  # r_i* - (local_mean + nonlinearity + heterogeneity)


@dataclass(frozen=True)
class CovarianceReport:
    """Linear-uptake identity r_i* = E(R_i*) + cov(C_i/E(C_i), R_i*)."""

    species: int
    local_mean: float
    covariance: float
    break_even: float
    residual: float


@dataclass(frozen=True)
class ReversalReport:
    """Outcome of concentrating uptake to reverse an everywhere-dominance.

    Species 1 dominates species 2 locally when R_1*(x) < R_2*(x) at every
    site; the construction concentrates species 1's uptake where R_1* is
    largest and species 2's where R_2* is smallest, which can only reverse
    the averaged ranking when min R_2* < max R_1*.
    """

    break_even_1: float
    break_even_2: float
    reversal_achieved: bool  # r_2* < r_1*
    pointwise_dominance: bool  # R_1* < R_2* at every site
    operative_condition: bool  # min R_2* < max R_1*
    printed_condition: bool  # max R_2* < min R_1* (mutually exclusive with dominance)
    slopes_1: np.ndarray
    slopes_2: np.ndarray


def break_even(curve: AveragedCurve, mortality_mean: float) -> float:
    """Root of curve(r) = mortality_mean by bracketing, +inf if unattainable.

    The root is refined to full double precision (relative tolerance well
    below 1e-12); the closed-form inverse on the curve is kept independent
    and used elsewhere, so the two routes cross-check each other.
    """
    if not mortality_mean > 0:
        raise ValidationError("mortality mean must be positive")
    if not mortality_mean < curve.saturation:
        return np.inf
    hi = curve.k if curve.kind == "monod" else 1.0
    while curve(hi) < mortality_mean:
        hi *= 2.0
    root = scipy.optimize.brentq(
        lambda r: float(curve(r)) - mortality_mean,
        0.0,
        hi,
        xtol=1e-15,
        rtol=4 * np.finfo(float).eps,
    )
    return float(root)


def _detect_cases(model: CompetitionModel, curves: tuple[AveragedCurve, ...]) -> tuple[str, ...]:
    cases = []
    if all(
        np.allclose(m, model.resource_loss, rtol=1e-12, atol=0.0)
        for m in model.mortalities
    ):
        cases.append(CASE_EQUAL_MORTALITIES)
    kinds = {c.kind for c in curves}
    if kinds == {"linear"}:
        cases.append(CASE_PROPORTIONAL_UPTAKE)
        # a line is also the k -> common limit of nothing else; not Monod
    elif kinds == {"monod"}:
        ks = {c.k for c in curves}
        if len(ks) == 1:
            cases.append(CASE_PROPORTIONAL_UPTAKE)
        cases.append(CASE_MONOD_FAMILY)
    return tuple(cases)


def aggregate(model: CompetitionModel) -> AggregatedModel:
    """Average all fields over the sites and precompute break-even values."""
    w = model.domain.weights
    input_mean = float(model.input_rate @ w)
    loss_mean = float(model.resource_loss @ w)
    mort_means = np.array([float(m @ w) for m in model.mortalities])
    curves = tuple(f.averaged(w) for f in model.consumptions)

    r_star = np.empty(model.species_count + 1)
    r_star[0] = input_mean / loss_mean
    for i, (curve, m) in enumerate(zip(curves, mort_means), start=1):
        r_star[i] = break_even(curve, m)

    return AggregatedModel(
        input_mean=input_mean,
        resource_loss_mean=loss_mean,
        mortality_means=mort_means,
        curves=curves,
        break_evens=r_star,
        cep_cases=_detect_cases(model, curves),
        species_names=model.species_names,
    )


def aggregated_vector_field(agg: AggregatedModel, x: np.ndarray) -> np.ndarray:
    """Right-hand side of the averaged system at x = (r, u_1..u_N)."""
    x = np.asarray(x, dtype=float)
    r = x[0]
    out = np.empty_like(x)
    out[0] = agg.input_mean - agg.resource_loss_mean * r
    for i, (curve, m) in enumerate(zip(agg.curves, agg.mortality_means), start=1):
        fi = float(curve(r))
        out[0] -= fi * x[i]
        out[i] = (fi - m) * x[i]
    return out


def aggregated_jacobian(agg: AggregatedModel, x: np.ndarray) -> np.ndarray:
    """Jacobian of the averaged right-hand side."""
    x = np.asarray(x, dtype=float)
    N = agg.species_count
    r = x[0]
    J = np.zeros((N + 1, N + 1))
    J[0, 0] = -agg.resource_loss_mean
    for i, (curve, m) in enumerate(zip(agg.curves, agg.mortality_means), start=1):
        fi = float(curve(r))
        dfi = float(curve.derivative(r))
        J[0, 0] -= dfi * x[i]
        J[0, i] = -fi
        J[i, 0] = dfi * x[i]
        J[i, i] = fi - m
    return J


def _classify(agg: AggregatedModel, point: np.ndarray, index: int) -> AggregatedEquilibrium:
    eigs = scipy.linalg.eigvals(aggregated_jacobian(agg, point))
    scale = max(1.0, float(np.abs(eigs).max()))
    stable = bool(np.all(eigs.real < 0))
    hyperbolic = bool(np.all(np.abs(eigs.real) > TOL_HYP * scale))
    return AggregatedEquilibrium(
        point=point,
        surviving_index=index,
        stable=stable,
        hyperbolic=hyperbolic,
        eigenvalues=eigs,
    )


def equilibria(agg: AggregatedModel) -> list[AggregatedEquilibrium]:
    """All nonnegative rest points: washout plus one per survivable species.

    Species i is survivable when r_i* < r_0*; its rest point has resource
    level r_i* and density u_i* = (m0~/m~_i)(r_0* - r_i*).  Exactly one rest
    point is stable when the relevant break-even values are distinct.
    """
    N = agg.species_count
    r0 = agg.break_evens[0]
    out = []

    washout = np.zeros(N + 1)
    washout[0] = r0
    out.append(_classify(agg, washout, 0))

    for i in range(1, N + 1):
        ri = agg.break_evens[i]
        if ri < r0:
            point = np.zeros(N + 1)
            point[0] = ri
            point[i] = (agg.resource_loss_mean / agg.mortality_means[i - 1]) * (r0 - ri)
            out.append(_classify(agg, point, i))
    return out


def predict_cep(agg: AggregatedModel, initial_slow: np.ndarray) -> CepPrediction:
    """Winner and limit point for the averaged dynamics from a given start.

    Contenders are index 0 plus every species that is present initially and
    survivable; the winner minimises the break-even value over contenders.

    Raises:
        CepAssumptionUnmet: no structural exclusion case holds.
        TiedRStar: the minimum is not unique within the tie tolerance.
    """
    if not agg.cep_valid:
        raise CepAssumptionUnmet(
            "no structural case holds for the averaged model "
            "(need equal mortalities, proportional uptake, or all-Monod curves)"
        )
    x0 = np.asarray(initial_slow, dtype=float)
    N = agg.species_count
    if x0.shape != (N + 1,):
        raise ValidationError(f"initial slow vector must have length {N + 1}")
    if np.any(x0 < 0):
        raise ValidationError("initial slow vector must be nonnegative")

    r0 = agg.break_evens[0]
    contenders = [0] + [
        j for j in range(1, N + 1) if x0[j] > 0 and agg.break_evens[j] < r0
    ]
    values = agg.break_evens[contenders]
    r_hat = float(values.min())
    near = [j for j, v in zip(contenders, values) if v - r_hat <= TOL_HYP * max(1.0, r_hat)]
    if len(near) > 1:
        raise TiedRStar(
            f"break-even minimum is tied between indices {near}; no unique winner"
        )
    winner = near[0]

    warnings = []
    losers = [(j, float(v)) for j, v in zip(contenders, values) if j != winner]
    for a in range(len(losers)):
        for b in range(a + 1, len(losers)):
            ja, va = losers[a]
            jb, vb = losers[b]
            if abs(va - vb) <= TOL_HYP * max(1.0, va, vb):
                warnings.append(
                    f"break-even tie between non-winning indices {ja} and {jb}; "
                    f"their rest points are not hyperbolic"
                )

    limit = np.zeros(N + 1)
    limit[0] = r_hat
    if winner >= 1:
        limit[winner] = (
            agg.resource_loss_mean / agg.mortality_means[winner - 1]
        ) * (r0 - r_hat)
    return CepPrediction(
        contenders=tuple(contenders),
        r_hat=r_hat,
        winner=winner,
        limit_point=limit,
        warnings=tuple(warnings),
    )


def decompose_strength(
    model: CompetitionModel, agg: AggregatedModel
) -> tuple[StrengthDecomposition, ...]:
    """Split each break-even value into mean local strength + two corrections.

    With R_i*(x) the per-site break-even (f_i(x, R) = m_i(x)), the split is
    r_i* = E(R_i*) + J_i + H_i with J_i = f~^-1(E(m_i)) - E(f~^-1(m_i)) and
    H_i = E(f~^-1(m_i)) - E(R_i*).  J_i is the Jensen penalty of curve
    nonlinearity (<= 0 for concave curves), H_i the effect of site-dependent
    uptake; both vanish for linear uptake with constant slopes.

    Raises:
        LocalBreakEvenInfinite: some R_i*(x) is infinite (reports the site).
    """
    w = model.domain.weights
    out = []
    for i, (f, m) in enumerate(zip(model.consumptions, model.mortalities), start=1):
        local = f.local_inverse(m)
        if np.any(np.isinf(local)):
            site = int(np.flatnonzero(np.isinf(local))[0])
            raise LocalBreakEvenInfinite(i, site)
        curve = agg.curves[i - 1]
        mean_m = agg.mortality_means[i - 1]
        inv_of_mean = float(curve.inverse(np.asarray(mean_m)))
        inv_sites = curve.inverse(m)
        if np.any(np.isinf(inv_sites)):
            site = int(np.flatnonzero(np.isinf(inv_sites))[0])
            raise LocalBreakEvenInfinite(i, site, averaged=True)
        mean_of_inv = float(inv_sites @ w)
        local_mean = float(local @ w)
        nonlinearity = inv_of_mean - mean_of_inv
        heterogeneity = mean_of_inv - local_mean
        r_star = float(agg.break_evens[i])
        out.append(
            StrengthDecomposition(
                species=i,
                local_mean=local_mean,
                nonlinearity=nonlinearity,
                heterogeneity=heterogeneity,
                break_even=r_star,
                residual=r_star - (local_mean + nonlinearity + heterogeneity),
            )
        )
    return tuple(out)


def _weighted_cov(f: np.ndarray, g: np.ndarray, w: np.ndarray) -> float:
    return float((f * g) @ w - (f @ w) * (g @ w))


def covariance_check(
    model: CompetitionModel, agg: AggregatedModel
) -> tuple[CovarianceReport, ...]:
    """Linear-uptake identity r_i* = E(R_i*) + cov(C_i/E(C_i), R_i*).

    Raises:
        NotLinear: some consumption function is not linear.
    """
    w = model.domain.weights
    out = []
    for i, (f, m) in enumerate(zip(model.consumptions, model.mortalities), start=1):
        if not isinstance(f, LinearConsumption):
            raise NotLinear(f"species {i} does not have linear consumption")
        slopes = f.slopes
        local = m / slopes
        mean_slope = float(slopes @ w)
        cov = _weighted_cov(slopes / mean_slope, local, w)
        local_mean = float(local @ w)
        r_star = float(agg.break_evens[i])
        out.append(
            CovarianceReport(
                species=i,
                local_mean=local_mean,
                covariance=cov,
                break_even=r_star,
                residual=r_star - (local_mean + cov),
            )
        )
    return tuple(out)


def covariance_comparison(rep_1: CovarianceReport, rep_2: CovarianceReport) -> dict:
    """Evaluate: cov_2 - cov_1 < E(R_1*) - E(R_2*)  iff  r_2* < r_1*.

    Returns both sides and both truth values; the equivalence is an identity
    for linear uptake and is asserted in tests, not here.
    """
    lhs = rep_2.covariance - rep_1.covariance
    rhs = rep_1.local_mean - rep_2.local_mean
    return {
        "cov_difference": lhs,
        "mean_difference": rhs,
        "covariance_side": lhs < rhs,
        "break_even_side": rep_2.break_even < rep_1.break_even,
    }


def concentrate_uptake(
    local_break_evens: np.ndarray, site: int, ratio: float
) -> tuple[np.ndarray, np.ndarray]:
    """Linear species with given per-site break-evens, uptake massed at one site.

    Returns (slopes, mortality) with slopes 1 at ``site`` and 1/ratio
    elsewhere and mortality = slopes * local_break_evens; the averaged
    break-even of the species tends to local_break_evens[site] as the
    concentration ratio grows.
    """
    targets = np.asarray(local_break_evens, dtype=float)
    if not ratio > 1:
        raise ValidationError("concentration ratio must exceed 1")
    if np.any(targets <= 0) or np.any(np.isinf(targets)):
        raise ValidationError("local break-evens must be finite and positive")
    slopes = np.full(targets.shape, 1.0 / ratio)
    slopes[site] = 1.0
    return slopes, slopes * targets


def concentration_reversal(
    local_1: np.ndarray,
    local_2: np.ndarray,
    ratio: float,
    weights: np.ndarray | None = None,
) -> ReversalReport:
    """Try to make the locally dominated species win in average.

    Concentrates species 1's uptake at its worst site (argmax of R_1*) and
    species 2's at its best (argmin of R_2*), then reports the resulting
    averaged break-evens and which structural inequalities hold.
    """
    R1 = np.asarray(local_1, dtype=float)
    R2 = np.asarray(local_2, dtype=float)
    if R1.shape != R2.shape:
        raise ValidationError("local break-even vectors must have equal length")
    w = np.full(R1.shape, 1.0 / R1.size) if weights is None else np.asarray(weights, float)

    c1, m1 = concentrate_uptake(R1, int(np.argmax(R1)), ratio)
    c2, m2 = concentrate_uptake(R2, int(np.argmin(R2)), ratio)
    r1 = float((c1 * R1) @ w / (c1 @ w))
    r2 = float((c2 * R2) @ w / (c2 @ w))
    return ReversalReport(
        break_even_1=r1,
        break_even_2=r2,
        reversal_achieved=r2 < r1,
        pointwise_dominance=bool(np.all(R1 < R2)),
        operative_condition=bool(R2.min() < R1.max()),
        printed_condition=bool(R2.max() < R1.min()),
        slopes_1=c1,
        slopes_2=c2,
    )
