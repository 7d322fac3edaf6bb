"""Shared builders and seeded random-instance generators for the tests."""

from __future__ import annotations

import numpy as np

from chemostat.aggregated import aggregate
from chemostat.domain import build_interval_operator, build_patch_operator
from chemostat.model import (
    CompetitionModel,
    LinearConsumption,
    MonodConsumption,
    ScaledConsumption,
)

TWO_PATCH_EDGES = np.array([[0.0, 1.0], [1.0, 0.0]])


def two_patch_operator(components: int, diffusivities=None):
    diff = diffusivities if diffusivities is not None else [1.0] * components
    return build_patch_operator(TWO_PATCH_EDGES, diff)


def random_edges(rng: np.random.Generator, P: int) -> np.ndarray:
    """Connected symmetric edge weights: a random spanning path plus extras."""
    W = np.zeros((P, P))
    order = rng.permutation(P)
    for a, b in zip(order[:-1], order[1:]):
        W[a, b] = W[b, a] = rng.uniform(0.5, 2.0)
    for _ in range(rng.integers(0, P)):
        a, b = rng.integers(0, P, size=2)
        if a != b:
            w = rng.uniform(0.1, 1.0)
            W[a, b] += w
            W[b, a] = W[a, b]
    return W


def random_operator(rng: np.random.Generator, components: int, P: int):
    if rng.random() < 0.5:
        return build_patch_operator(
            random_edges(rng, P), rng.uniform(0.3, 3.0, size=components)
        )
    faces = rng.uniform(0.3, 3.0, size=(components, P - 1))
    return build_interval_operator(
        float(rng.uniform(0.5, 2.0)), P, [faces[i] for i in range(components)]
    )


def _consumption(rng: np.random.Generator, kind: str, P: int, base=None):
    if kind == "linear":
        return LinearConsumption(slopes=rng.uniform(0.3, 3.0, size=P))
    if kind == "monod":
        return MonodConsumption(
            capacities=rng.uniform(0.8, 3.0, size=P),
            half_saturation=float(rng.uniform(0.2, 2.0)),
        )
    return ScaledConsumption(factor=float(rng.uniform(0.3, 3.0)), base=base)


def random_model(
    rng: np.random.Generator,
    kinds: str = "any",
    N: int | None = None,
    P: int | None = None,
    r0_target: float | None = None,
) -> CompetitionModel:
    """Random valid model; every species has finite local break-evens.

    kinds: "linear", "monod", "mixed" (independent draws), "scaled"
    (one shared base), "equal" (mixed kinds, mortalities equal to the
    resource loss site-wise), or "any".
    """
    N = int(N if N is not None else rng.integers(1, 5))
    P = int(P if P is not None else rng.integers(2, 5))
    if kinds == "any":
        kinds = rng.choice(["linear", "monod", "mixed", "scaled", "equal"])

    m0 = rng.uniform(0.5, 1.5, size=P)
    r0 = float(r0_target if r0_target is not None else rng.uniform(1.5, 4.0))
    I = m0 * r0 * rng.uniform(0.8, 1.2, size=P)

    base = _consumption(rng, rng.choice(["linear", "monod"]), P)
    consumptions, mortalities = [], []
    for _ in range(N):
        if kinds == "scaled":
            f = _consumption(rng, "scaled", P, base=base)
        elif kinds in ("mixed", "equal"):
            f = _consumption(rng, rng.choice(["linear", "monod"]), P)
        else:
            f = _consumption(rng, kinds, P)
        consumptions.append(f)
        if kinds == "equal":
            mortalities.append(m0.copy())
        else:
            # mortality from per-site break-even targets keeps all local
            # break-evens finite
            targets = rng.uniform(0.2, 2.5, size=P)
            mortalities.append(np.asarray(f.rate(targets)))
    op = random_operator(rng, N + 1, P)
    return CompetitionModel(
        domain=op.domain,
        migration=op,
        input_rate=I,
        resource_loss=m0,
        mortalities=tuple(mortalities),
        consumptions=tuple(consumptions),
    )


def random_cep_instance(
    rng: np.random.Generator,
    min_gap: float = 0.05,
    min_margin: float = 0.02,
    max_tries: int = 2000,
):
    """Random model satisfying a structural exclusion case, with break-even
    values separated enough that a T = 1e4 horizon decides the outcome.

    Rejection rules: all finite break-even values (washout included) are
    pairwise separated by >= min_gap relative, and every non-winning species
    has mortality excess m~_j - f~_j(r_hat) >= min_margin.
    """
    for _ in range(max_tries):
        kind = rng.choice(["linear", "monod", "scaled", "equal"])
        model = random_model(rng, kinds=kind)
        agg = aggregate(model)
        if not agg.cep_valid:
            continue
        r = agg.break_evens
        finite = r[np.isfinite(r)]
        if finite.size > 1:
            s = np.sort(finite)
            if np.min(np.diff(s) / np.maximum(1.0, s[:-1])) < min_gap:
                continue
        r_hat = float(np.min(finite))
        winner = int(np.argmin(np.where(np.isfinite(r), r, np.inf)))
        ok = True
        for j in range(1, agg.species_count + 1):
            if j == winner:
                continue
            excess = agg.mortality_means[j - 1] - float(agg.curves[j - 1](r_hat))
            if excess < min_margin:
                ok = False
                break
        if ok:
            return model, agg, winner, r_hat
    raise RuntimeError("rejection sampling failed to find an instance")


def random_decomposable_model(
    rng: np.random.Generator, kinds: str, max_tries: int = 200
) -> CompetitionModel:
    """Random model on which the strength decomposition is well defined:
    every site mortality lies below the saturation of the species'
    site-averaged uptake curve (automatic for linear uptake)."""
    for _ in range(max_tries):
        model = random_model(rng, kinds=kinds)
        agg = aggregate(model)
        ok = all(
            np.all(m < 0.95 * curve.saturation)
            for m, curve in zip(model.mortalities, agg.curves)
        )
        if ok:
            return model
    raise RuntimeError("could not sample a decomposable model")


def random_homogeneous_model(rng: np.random.Generator) -> CompetitionModel:
    """All fields constant across sites (the averaged model is exact)."""
    N = int(rng.integers(1, 4))
    P = int(rng.integers(2, 5))
    m0 = float(rng.uniform(0.5, 1.5))
    r0 = float(rng.uniform(1.5, 4.0))
    consumptions, mortalities = [], []
    for _ in range(N):
        if rng.random() < 0.5:
            f = LinearConsumption(slopes=np.full(P, float(rng.uniform(0.3, 3.0))))
        else:
            f = MonodConsumption(
                capacities=np.full(P, float(rng.uniform(0.8, 3.0))),
                half_saturation=float(rng.uniform(0.2, 2.0)),
            )
        consumptions.append(f)
        target = float(rng.uniform(0.2, 2.5))
        mortalities.append(np.full(P, float(f.rate(np.full(P, target))[0])))
    op = two_patch_operator(N + 1) if P == 2 else build_patch_operator(
        random_edges(rng, P), [1.0] * (N + 1)
    )
    return CompetitionModel(
        domain=op.domain,
        migration=op,
        input_rate=np.full(P, m0 * r0),
        resource_loss=np.full(P, m0),
        mortalities=tuple(mortalities),
        consumptions=tuple(consumptions),
    )
