"""Exception hierarchy.

Two broad families matter to callers (and to the CLI exit codes):
``ValidationError`` for bad inputs or unmet model assumptions (exit 2) and
``NumericalError`` for failures of the numerics themselves (exit 3).
"""


class ChemostatError(Exception):
    """Base class for all package errors."""


class ValidationError(ChemostatError):
    """Invalid input data or an unmet structural assumption."""


class NumericalError(ChemostatError):
    """A numerical procedure failed (divergence, underflow, non-finite data)."""


# -- validation family ----------------------------------------------------

class DimensionMismatch(ValidationError):
    """Array shapes do not match the domain/model they are used with."""


class NonSymmetric(ValidationError):
    """Edge-weight matrix of a patch network is not symmetric."""


class DisconnectedGraph(ValidationError):
    """Patch network is not connected, so migration is not irreducible."""


class NonPositiveDiffusivity(ValidationError):
    """A diffusivity must be strictly positive."""


class NonPositiveEpsilon(ValidationError):
    """The time-scale parameter epsilon must be strictly positive."""


class CepAssumptionUnmet(ValidationError):
    """No structural case guaranteeing exclusion holds for the averaged model."""


class TiedRStar(ValidationError):
    """The minimal break-even value is not unique, so no single winner exists."""


class NotLinear(ValidationError):
    """Operation requires all consumption functions to be linear."""


class LocalBreakEvenInfinite(ValidationError):
    """A break-even needed by the strength decomposition is infinite.

    Either the species cannot reach its mortality rate at some site, or
    (with site-dependent uptake) the site-averaged curve saturates below
    some site's mortality, which makes the decomposition's nonlinearity
    and heterogeneity terms individually infinite.

    Attributes:
        species: 1-based species index.
        site: 0-based site index where the inversion failed.
    """

    def __init__(self, species: int, site: int, averaged: bool = False):
        self.species = species
        self.site = site
        which = "site-averaged uptake curve" if averaged else "local uptake"
        super().__init__(
            f"species {species}: {which} saturates below the mortality at "
            f"site {site}; the break-even there is infinite"
        )


class ScenarioError(ValidationError):
    """Scenario file failed validation; message carries a field-level path."""


# -- numerical family -----------------------------------------------------

class StepSizeUnderflow(NumericalError):
    """Adaptive integrator needed a step below dt_min."""


class NonFiniteState(NumericalError):
    """Integration produced NaN or infinity."""


class NewtonDiverged(NumericalError):
    """Newton continuation failed to converge (homotopy trace in message)."""


class WrongBasin(NumericalError):
    """Newton converged, but far from the seed equilibrium."""


class NoTransient(NumericalError):
    """Fast-component norm never rose above 10x its plateau; nothing to fit."""
