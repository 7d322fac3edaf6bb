"""Biological parameters and the site-local reaction map.

Consumption functions form a closed family — linear, Monod with a common
half-saturation per species, and scalar multiples of a shared base — chosen so
that every site-averaged uptake curve has an exact closed form (a line or a
Monod curve again).  That closure is what makes the averaged model's
exclusion prediction decidable, so arbitrary callables are rejected at load
time rather than accepted and silently mishandled.

States are (N+1) x P arrays: row 0 is the resource, rows 1..N the species
densities, all in yield-rescaled units (densities divided by their growth
yields), so the reaction map never sees the yields.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import MigrationOperator, SpatialDomain, apply_migration
from .errors import DimensionMismatch, NonPositiveEpsilon, ValidationError

__all__ = [
    "ConsumptionFunction",
    "LinearConsumption",
    "MonodConsumption",
    "ScaledConsumption",
    "AveragedCurve",
    "CompetitionModel",
    "reaction",
    "reaction_jacobian",
    "full_vector_field",
    "full_jacobian",
]


@dataclass(frozen=True)
class AveragedCurve:
    """Site-average of a consumption function; a line or a Monod curve.

    kind "linear": r -> c * r.  kind "monod": r -> c * r / (k + r).
    Strictly increasing with value 0 at r = 0 in both cases.
    """

    kind: str
    c: float
    k: float = float("nan")

    def __call__(self, r):
        if self.kind == "linear":
            return self.c * np.asarray(r, dtype=float)
        r = np.asarray(r, dtype=float)
        return self.c * r / (self.k + r)

    def derivative(self, r):
        if self.kind == "linear":
            return self.c * np.ones_like(np.asarray(r, dtype=float))
        r = np.asarray(r, dtype=float)
        return self.c * self.k / (self.k + r) ** 2

    @property
    def saturation(self) -> float:
        """Supremum of the curve over r >= 0."""
        return np.inf if self.kind == "linear" else self.c

    def inverse(self, m):
        """Closed-form inverse; +inf where the curve saturates at or below m."""
        m = np.asarray(m, dtype=float)
        if self.kind == "linear":
            return m / self.c
        out = np.full(m.shape, np.inf)
        ok = m < self.c
        out[ok] = self.k * m[ok] / (self.c - m[ok])
        return out if out.ndim else float(out)

    def scaled(self, factor: float) -> "AveragedCurve":
        return AveragedCurve(kind=self.kind, c=factor * self.c, k=self.k)


class ConsumptionFunction:
    """Uptake rate f(x, R): increasing in R, zero at R = 0, per-site fields."""

    site_count: int

    def rate(self, resource):
        """f(x, R(x)) for a per-site resource profile (or scalar r broadcast)."""
        raise NotImplementedError

    def rate_derivative(self, resource):
        """d/dR f(x, R(x))."""
        raise NotImplementedError

    def local_inverse(self, targets: np.ndarray) -> np.ndarray:
        """Per-site solution of f(x, R) = target(x); +inf where unattainable."""
        raise NotImplementedError

    def averaged(self, weights: np.ndarray) -> AveragedCurve:
        """Weighted site-average as a curve in r."""
        raise NotImplementedError


def _positive_vector(v, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValidationError(f"{what} must be a 1-D per-site vector")
    if not np.all(v > 0):
        raise ValidationError(f"{what} must be strictly positive at every site")
    v.flags.writeable = False
    return v


@dataclass(frozen=True, eq=False)
class LinearConsumption(ConsumptionFunction):
    """f(x, R) = C(x) * R."""

    slopes: np.ndarray  # C, per site, positive

    def __post_init__(self):
        object.__setattr__(self, "slopes", _positive_vector(self.slopes, "linear slopes C"))

    @property
    def site_count(self) -> int:
        return self.slopes.size

    def rate(self, resource):
        return self.slopes * resource

    def rate_derivative(self, resource):
        return self.slopes * np.ones_like(np.asarray(resource, dtype=float))

    def local_inverse(self, targets):
        return np.asarray(targets, dtype=float) / self.slopes

    def averaged(self, weights):
        return AveragedCurve(kind="linear", c=float(self.slopes @ weights))

    def __eq__(self, other):
        return isinstance(other, LinearConsumption) and np.array_equal(self.slopes, other.slopes)


@dataclass(frozen=True, eq=False)
class MonodConsumption(ConsumptionFunction):
    """f(x, R) = C(x) * R / (k + R) with one half-saturation k per species."""

    capacities: np.ndarray  # C, per site, positive
    half_saturation: float  # k > 0

    def __post_init__(self):
        object.__setattr__(
            self, "capacities", _positive_vector(self.capacities, "Monod capacities C")
        )
        if not self.half_saturation > 0:
            raise ValidationError("Monod half-saturation k must be > 0")

    @property
    def site_count(self) -> int:
        return self.capacities.size

    def rate(self, resource):
        r = np.asarray(resource, dtype=float)
        return self.capacities * r / (self.half_saturation + r)

    def rate_derivative(self, resource):
        r = np.asarray(resource, dtype=float)
        return self.capacities * self.half_saturation / (self.half_saturation + r) ** 2

    def local_inverse(self, targets):
        m = np.asarray(targets, dtype=float)
        out = np.full(self.capacities.shape, np.inf)
        ok = m < self.capacities
        out[ok] = self.half_saturation * m[ok] / (self.capacities[ok] - m[ok])
        return out

    def averaged(self, weights):
        return AveragedCurve(
            kind="monod", c=float(self.capacities @ weights), k=self.half_saturation
        )

    def __eq__(self, other):
        return (
            isinstance(other, MonodConsumption)
            and self.half_saturation == other.half_saturation
            and np.array_equal(self.capacities, other.capacities)
        )


@dataclass(frozen=True, eq=False)
class ScaledConsumption(ConsumptionFunction):
    """f_i = c * base for a shared base function (one family, scaled per species)."""

    factor: float
    base: ConsumptionFunction

    def __post_init__(self):
        if not self.factor > 0:
            raise ValidationError("scaling factor c must be > 0")
        if isinstance(self.base, ScaledConsumption):
            raise ValidationError("scaled consumption must wrap a plain base function")

    @property
    def site_count(self) -> int:
        return self.base.site_count

    def rate(self, resource):
        return self.factor * self.base.rate(resource)

    def rate_derivative(self, resource):
        return self.factor * self.base.rate_derivative(resource)

    def local_inverse(self, targets):
        return self.base.local_inverse(np.asarray(targets, dtype=float) / self.factor)

    def averaged(self, weights):
        return self.base.averaged(weights).scaled(self.factor)

    def __eq__(self, other):
        return (
            isinstance(other, ScaledConsumption)
            and self.factor == other.factor
            and self.base == other.base
        )


@dataclass(frozen=True)
class CompetitionModel:
    """All parameters of the N-species / single-resource site network.

    Immutable; reaction evaluation is reentrant.  Yields are carried for
    converting species densities at the boundary of the system (load/report);
    internally everything is in rescaled units.
    """

    domain: SpatialDomain
    migration: MigrationOperator
    input_rate: np.ndarray  # I(x) >= 0, not identically 0
    resource_loss: np.ndarray  # m_0(x) > 0
    mortalities: tuple[np.ndarray, ...]  # m_i(x) > 0, i = 1..N
    consumptions: tuple[ConsumptionFunction, ...]
    yields_: tuple[float, ...] = ()
    species_names: tuple[str, ...] = ()

    def __post_init__(self):
        P = self.domain.site_count
        I = np.asarray(self.input_rate, dtype=float)
        if I.shape != (P,):
            raise DimensionMismatch(f"input_rate shape {I.shape} != ({P},)")
        if np.any(I < 0) or not np.any(I > 0):
            raise ValidationError(
                "input must satisfy I(x) >= 0 with at least one strictly positive site"
            )
        I.flags.writeable = False
        object.__setattr__(self, "input_rate", I)
        object.__setattr__(
            self, "resource_loss", _positive_vector(self.resource_loss, "resource loss m_0")
        )
        ms = []
        for i, m in enumerate(self.mortalities, start=1):
            m = _positive_vector(m, f"mortality m_{i}")
            if m.shape != (P,):
                raise DimensionMismatch(f"mortality m_{i} shape {m.shape} != ({P},)")
            ms.append(m)
        object.__setattr__(self, "mortalities", tuple(ms))
        N = len(ms)
        if len(self.consumptions) != N:
            raise DimensionMismatch("one consumption function per species required")
        for i, f in enumerate(self.consumptions, start=1):
            if f.site_count != P:
                raise DimensionMismatch(f"consumption f_{i} defined on {f.site_count} sites != {P}")
        if not self.yields_:
            object.__setattr__(self, "yields_", (1.0,) * N)
        if len(self.yields_) != N:
            raise DimensionMismatch("one yield per species required")
        if any(not y > 0 for y in self.yields_):
            raise ValidationError("yields must be strictly positive")
        if not self.species_names:
            object.__setattr__(
                self, "species_names", tuple(f"species_{i}" for i in range(1, N + 1))
            )
        if self.migration.component_count != N + 1:
            raise DimensionMismatch(
                f"migration has {self.migration.component_count} matrices, expected {N + 1}"
            )

    @property
    def species_count(self) -> int:
        return len(self.mortalities)

    def check_state(self, state: np.ndarray) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        expected = (self.species_count + 1, self.domain.site_count)
        if state.shape != expected:
            raise DimensionMismatch(f"state shape {state.shape} != {expected}")
        return state


def reaction(model: CompetitionModel, state: np.ndarray) -> np.ndarray:
    """Site-local demography: resource balance and per-species net growth.

    Row 0: I - m_0 R - sum_i U_i f_i(x, R); row i: (f_i(x, R) - m_i) U_i.
    If a species row is identically zero the corresponding output row is
    exactly zero (the zero plane is invariant).
    """
    state = model.check_state(state)
    R = state[0]
    out = np.empty_like(state)
    out[0] = model.input_rate - model.resource_loss * R
    for i, (f, m) in enumerate(zip(model.consumptions, model.mortalities), start=1):
        rate = f.rate(R)
        out[0] -= state[i] * rate
        out[i] = (rate - m) * state[i]
    return out


def reaction_jacobian(model: CompetitionModel, state: np.ndarray) -> np.ndarray:
    """Dense Jacobian of the reaction map, flattened row-major over (row, site).

    The reaction is local in x, so every (row_a, row_b) block is a diagonal
    P x P matrix; entry order matches state.reshape(-1).
    """
    state = model.check_state(state)
    N, P = model.species_count, model.domain.site_count
    n = (N + 1) * P
    J = np.zeros((n, n))
    R = state[0]

    d00 = -model.resource_loss.copy()
    for i, f in enumerate(model.consumptions, start=1):
        d00 -= state[i] * f.rate_derivative(R)
    J[0:P, 0:P] = np.diag(d00)

    for i, (f, m) in enumerate(zip(model.consumptions, model.mortalities), start=1):
        rate = f.rate(R)
        drate = f.rate_derivative(R)
        sl = slice(i * P, (i + 1) * P)
        J[0:P, sl] = np.diag(-rate)  # d(resource eq)/dU_i
        J[sl, 0:P] = np.diag(drate * state[i])  # d(species eq)/dR
        J[sl, sl] = np.diag(rate - m)  # d(species eq)/dU_i
    return J


def full_vector_field(
    model: CompetitionModel, epsilon: float, state: np.ndarray
) -> np.ndarray:
    """reaction + (1/epsilon) * migration, the complete right-hand side."""
    if not epsilon > 0:
        raise NonPositiveEpsilon(f"epsilon must be > 0, got {epsilon!r}")
    state = model.check_state(state)
    return reaction(model, state) + apply_migration(model.migration, state) / epsilon


def full_jacobian(model: CompetitionModel, epsilon: float, state: np.ndarray) -> np.ndarray:
    """Jacobian of the complete right-hand side (same flattening as above)."""
    if not epsilon > 0:
        raise NonPositiveEpsilon(f"epsilon must be > 0, got {epsilon!r}")
    J = reaction_jacobian(model, state)
    P = model.domain.site_count
    for i, a in enumerate(model.migration.matrices):
        sl = slice(i * P, (i + 1) * P)
        J[sl, sl] += a / epsilon
    return J


def migration_for(
    domain: SpatialDomain, matrices: Sequence[np.ndarray]
) -> MigrationOperator:
    """Wrap pre-built matrices for a domain (convenience for tests/tools)."""
    return MigrationOperator(matrices=tuple(np.asarray(m, float) for m in matrices), domain=domain)
