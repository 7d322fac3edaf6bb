"""Spatial domains, migration operators, and the slow/fast state split.

A domain is a finite set of P sites carrying averaging weights (uniform by
default).  Movement of the resource and of each species is a P x P matrix with
nonnegative off-diagonal entries whose columns *and* rows sum to zero: columns
for mass conservation, rows so that spatially constant profiles are at rest.
Both the patch-network and the 1-D interval constructions below produce such
matrices, the interval case via a zero-flux finite-volume discretisation.

The slow part of a state is its vector of weighted site-averages (one number
per component); the fast part is the remaining zero-average fluctuation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    DisconnectedGraph,
    NonPositiveDiffusivity,
    NonSymmetric,
    ValidationError,
)

__all__ = [
    "SpatialDomain",
    "MigrationOperator",
    "SlowFastSplit",
    "SpectralGap",
    "patch_domain",
    "interval_domain",
    "build_patch_operator",
    "build_interval_operator",
    "spectral_gap",
    "project_slow",
    "project_fast",
    "apply_migration",
]

#: Diffusivity specification for one component on an interval: a constant,
#: a per-interior-face array (length cells - 1), or a function of position.
FaceSpec = Union[float, Sequence[float], Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class SpatialDomain:
    """P sites plus the averaging measure used for the slow projection."""

    site_count: int
    weights: np.ndarray  # (P,), strictly positive, sums to 1
    kind: str = "patch"  # "patch" or "interval"
    length: float | None = None  # interval only

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.site_count,):
            raise DimensionMismatch(
                f"weights shape {w.shape} != ({self.site_count},)"
            )
        if np.any(w <= 0):
            raise ValidationError("averaging weights must be positive")
        total = float(w.sum())
        if abs(total - 1.0) > 1e-12:
            w = w / total
        object.__setattr__(self, "weights", w)
        self.weights.flags.writeable = False

    def __eq__(self, other):
        return (
            isinstance(other, SpatialDomain)
            and self.site_count == other.site_count
            and self.kind == other.kind
            and self.length == other.length
            and np.array_equal(self.weights, other.weights)
        )


def patch_domain(site_count: int) -> SpatialDomain:
    """Uniformly weighted patch network of ``site_count`` sites."""
    if site_count < 1:
        raise ValidationError("site_count must be >= 1")
    w = np.full(site_count, 1.0 / site_count)
    return SpatialDomain(site_count=site_count, weights=w, kind="patch")


def interval_domain(length: float, cells: int) -> SpatialDomain:
    """Uniform-grid interval of given length split into ``cells`` volumes."""
    if length <= 0:
        raise ValidationError("length must be positive")
    if cells < 1:
        raise ValidationError("cells must be >= 1")
    w = np.full(cells, 1.0 / cells)
    return SpatialDomain(site_count=cells, weights=w, kind="interval", length=float(length))


@dataclass(frozen=True)
class MigrationOperator:
    """Per-component migration matrices; index 0 moves the resource.

    Invariants (checked at construction): off-diagonal entries nonnegative,
    every column and every row sums to zero (tolerance 1e-12 relative), and
    the support graph is connected, which makes each matrix irreducible.
    Immutable and safe to share between threads.
    """

    matrices: tuple[np.ndarray, ...]
    domain: SpatialDomain

    def __post_init__(self):
        P = self.domain.site_count
        mats = []
        for i, a in enumerate(self.matrices):
            a = np.asarray(a, dtype=float)
            if a.shape != (P, P):
                raise DimensionMismatch(f"matrix {i} has shape {a.shape}, expected ({P}, {P})")
            scale = max(1.0, float(np.abs(a).max()))
            off = a - np.diag(np.diag(a))
            if np.any(off < -1e-12 * scale):
                raise ValidationError(f"matrix {i}: off-diagonal entries must be nonnegative")
            if np.max(np.abs(a.sum(axis=0))) > 1e-12 * scale:
                raise ValidationError(f"matrix {i}: column sums must be zero")
            if np.max(np.abs(a.sum(axis=1))) > 1e-12 * scale:
                raise ValidationError(f"matrix {i}: row sums must be zero")
            if P > 1 and not _connected(off > 0):
                raise DisconnectedGraph(f"matrix {i}: support graph is not connected")
            a.flags.writeable = False
            mats.append(a)
        object.__setattr__(self, "matrices", tuple(mats))

    @property
    def component_count(self) -> int:
        return len(self.matrices)


@dataclass(frozen=True)
class SpectralGap:
    """Per-component decay rates of the migration semigroup on zero-mean states."""

    gaps: np.ndarray  # gap_i = -max Re of the nonzero spectrum of matrix i
    mu: float  # min over components

    def __iter__(self):
        yield self.gaps
        yield self.mu


@dataclass(frozen=True)
class SlowFastSplit:
    """State = broadcast(slow) + fast, with fast having zero weighted mean per row."""

    slow: np.ndarray  # (n_components,)
    fast: np.ndarray  # (n_components, P)

    @classmethod
    def of(cls, state: np.ndarray, dom: SpatialDomain) -> "SlowFastSplit":
        return cls(slow=project_slow(state, dom), fast=project_fast(state, dom))

    def reconstruct(self) -> np.ndarray:
        return self.slow[:, None] + self.fast


def _connected(adj: np.ndarray) -> bool:
    """Breadth-first connectivity of an undirected support pattern."""
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    sym = adj | adj.T
    while stack:
        j = stack.pop()
        for k in np.flatnonzero(sym[j]):
            if not seen[k]:
                seen[k] = True
                stack.append(int(k))
    return bool(seen.all())


def build_patch_operator(
    edge_weights: np.ndarray,
    diffusivities: Sequence[float],
) -> MigrationOperator:
    """Graph-Laplacian migration on a patch network.

    Args:
        edge_weights: symmetric nonnegative P x P matrix with zero diagonal;
            entry (j, k) weights the exchange between patches j and k.
        diffusivities: one positive rate per transported component
            (resource first); component i gets the matrix
            a_i * (W - diag(row sums of W)).

    Raises:
        NonSymmetric, DisconnectedGraph, NonPositiveDiffusivity.
    """
    W = np.asarray(edge_weights, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionMismatch(f"edge_weights must be square, got {W.shape}")
    P = W.shape[0]
    if not np.array_equal(W, W.T):
        raise NonSymmetric("edge_weights must be symmetric")
    if np.any(W < 0):
        raise ValidationError("edge_weights must be nonnegative")
    if np.any(np.diag(W) != 0):
        raise ValidationError("edge_weights must have zero diagonal")
    if P > 1 and not _connected(W > 0):
        raise DisconnectedGraph("edge graph is not connected")

    lap = W - np.diag(W.sum(axis=1))
    mats = []
    for a in diffusivities:
        if not a > 0:
            raise NonPositiveDiffusivity(f"diffusivity {a!r} must be > 0")
        mats.append(float(a) * lap)
    return MigrationOperator(matrices=tuple(mats), domain=patch_domain(P))


def _face_values(spec: FaceSpec, length: float, cells: int) -> np.ndarray:
    """Diffusivity sampled at the cells-1 interior faces of a uniform grid."""
    h = length / cells
    faces = h * np.arange(1, cells)
    if callable(spec):
        vals = np.asarray(spec(faces), dtype=float) * np.ones(cells - 1)
    elif np.ndim(spec) == 0:
        vals = np.full(cells - 1, float(spec))
    else:
        vals = np.asarray(spec, dtype=float)
        if vals.shape != (cells - 1,):
            raise DimensionMismatch(
                f"face diffusivities must have length cells-1={cells - 1}, got {vals.shape}"
            )
    if vals.size and not np.all(vals > 0):
        raise NonPositiveDiffusivity("diffusivity must be positive on every face")
    return vals


def build_interval_operator(
    length: float,
    cells: int,
    diffusivity: FaceSpec | Sequence[FaceSpec],
    component_count: int | None = None,
) -> MigrationOperator:
    """Zero-flux finite-volume discretisation of d/dx(a(x) d/dx) on (0, length).

    ``diffusivity`` is a single face specification applied to every component,
    or a sequence with one specification per component.  A single spec needs
    ``component_count``; constants are in the kernel of the result by
    construction.
    """
    if cells < 2:
        raise ValidationError("cells must be >= 2")
    if length <= 0:
        raise ValidationError("length must be positive")

    if isinstance(diffusivity, Sequence) and not np.isscalar(diffusivity):
        specs = list(diffusivity)
    elif component_count is not None:
        specs = [diffusivity] * component_count
    else:
        specs = [diffusivity]

    h = length / cells
    mats = []
    for spec in specs:
        a = _face_values(spec, length, cells)
        m = np.zeros((cells, cells))
        for f in range(cells - 1):  # face between cells f and f+1
            c = a[f] / h**2
            m[f, f] -= c
            m[f, f + 1] += c
            m[f + 1, f + 1] -= c
            m[f + 1, f] += c
        mats.append(m)
    return MigrationOperator(matrices=tuple(mats), domain=interval_domain(length, cells))


def spectral_gap(op: MigrationOperator) -> SpectralGap:
    """Decay rate of each component's semigroup on zero-mean states.

    gap_i = -max{Re(lam) : lam in spectrum(A_i) \\ {0}}, by dense eigensolve;
    mu = min over components.  A 1-site operator has an empty nonzero spectrum
    and gap +inf.
    """
    gaps = []
    for a in op.matrices:
        lams = scipy.linalg.eigvals(a)
        scale = max(1.0, float(np.abs(lams).max(initial=0.0)))
        nonzero = lams[np.abs(lams) > 1e-10 * scale]
        if nonzero.size == 0:
            gaps.append(np.inf)
        else:
            gaps.append(-float(nonzero.real.max()))
    gaps = np.asarray(gaps)
    return SpectralGap(gaps=gaps, mu=float(gaps.min()))


def _check_state(state: np.ndarray, dom: SpatialDomain) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    if state.ndim != 2 or state.shape[1] != dom.site_count:
        raise DimensionMismatch(
            f"state shape {state.shape} incompatible with {dom.site_count} sites"
        )
    return state


def project_slow(state: np.ndarray, dom: SpatialDomain) -> np.ndarray:
    """Weighted site-average of each row of the state."""
    return _check_state(state, dom) @ dom.weights


def project_fast(state: np.ndarray, dom: SpatialDomain) -> np.ndarray:
    """Zero-weighted-mean fluctuation: state minus its broadcast slow part."""
    state = _check_state(state, dom)
    return state - (state @ dom.weights)[:, None]


def apply_migration(op: MigrationOperator, state: np.ndarray) -> np.ndarray:
    """Row i of the result is A_i applied to row i of the state."""
    state = _check_state(state, op.domain)
    if state.shape[0] != op.component_count:
        raise DimensionMismatch(
            f"state has {state.shape[0]} rows, operator has {op.component_count} matrices"
        )
    out = np.empty_like(state)
    for i, a in enumerate(op.matrices):
        out[i] = a @ state[i]
    return out
