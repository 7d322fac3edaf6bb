"""Scenario files: a versioned JSON schema describing one experiment setup.

A scenario holds the domain (patch network or 1-D interval), per-component
diffusivities, the resource input and loss fields, and the species list
(mortality vector, consumption specification, optional yield).  Validation
is strict and reports the offending field by path; anything outside the
closed consumption family is rejected here rather than accepted loosely.

Species densities in a scenario (initial conditions) are in natural units
and are divided by the species' yield at load time; reports convert back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .domain import build_interval_operator, build_patch_operator
from .errors import ScenarioError, ValidationError
from .model import (
    CompetitionModel,
    ConsumptionFunction,
    LinearConsumption,
    MonodConsumption,
    ScaledConsumption,
)

__all__ = [
    "Scenario",
    "load_scenario",
    "bundled_scenario_path",
    "bundled_scenario_names",
    "initial_state",
    "epsilon_grid",
]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Scenario:
    """A validated scenario: the model plus experiment defaults."""

    name: str
    model: CompetitionModel
    epsilon: float | None = None
    t_end: float | None = None
    sweep: dict | None = None  # {"base","factor","count"}
    initial_spec: dict | None = None
    integrator: dict | None = None  # IntegratorConfig overrides


def bundled_scenario_names() -> list[str]:
    root = resources.files("chemostat").joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_scenario_path(name: str) -> Path:
    """Filesystem path of a bundled scenario ("sec52" or "sec52.json")."""
    if not name.endswith(".json"):
        name = name + ".json"
    path = resources.files("chemostat").joinpath("scenarios", name)
    if not path.is_file():
        raise ScenarioError(
            f"no bundled scenario {name!r}; available: {', '.join(bundled_scenario_names())}"
        )
    return Path(str(path))


def _need(doc: dict, key: str, where: str):
    if key not in doc:
        raise ScenarioError(f"{where}{key}: missing required field")
    return doc[key]


def _vector(raw, length: int, where: str) -> np.ndarray:
    try:
        v = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: not a numeric vector ({exc})") from exc
    if v.shape != (length,):
        raise ScenarioError(f"{where}: expected {length} per-site values, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ScenarioError(f"{where}: values must be finite")
    return v


def _positive_vector(raw, length: int, where: str, constraint: str) -> np.ndarray:
    v = _vector(raw, length, where)
    bad = np.flatnonzero(~(v > 0))
    if bad.size:
        raise ScenarioError(f"{where}[{bad[0]}]: violates {constraint}")
    return v


def _consumption(raw, P: int, where: str) -> ConsumptionFunction:
    if not isinstance(raw, dict):
        raise ScenarioError(f"{where}: must be an object with a 'kind'")
    kind = _need(raw, "kind", where + ".")
    if kind == "linear":
        C = _positive_vector(_need(raw, "C", where + "."), P, f"{where}.C", "C(x) > 0")
        return LinearConsumption(slopes=C)
    if kind == "monod":
        C = _positive_vector(_need(raw, "C", where + "."), P, f"{where}.C", "C(x) > 0")
        k = _need(raw, "k", where + ".")
        if not (np.isscalar(k) and k > 0):
            raise ScenarioError(f"{where}.k: half-saturation must be a positive scalar")
        return MonodConsumption(capacities=C, half_saturation=float(k))
    if kind == "scaled":
        c = _need(raw, "c", where + ".")
        if not (np.isscalar(c) and c > 0):
            raise ScenarioError(f"{where}.c: scale factor must be a positive scalar")
        base = _consumption(_need(raw, "base", where + "."), P, f"{where}.base")
        return ScaledConsumption(factor=float(c), base=base)
    raise ScenarioError(
        f"{where}.kind: unknown consumption kind {kind!r}; uptake must be one of "
        f"'linear', 'monod', 'scaled' (increasing, zero at R=0)"
    )


def _build_migration(doc: dict, n_components: int):
    dom_doc = _need(doc, "domain", "")
    kind = _need(dom_doc, "kind", "domain.")
    diff = doc.get("diffusivity", 1.0)
    if np.isscalar(diff):
        diff = [float(diff)] * n_components
    if len(diff) != n_components:
        raise ScenarioError(
            f"diffusivity: expected {n_components} per-component entries "
            f"(resource first), got {len(diff)}"
        )
    try:
        if kind == "patch":
            edges = np.asarray(_need(dom_doc, "edge_weights", "domain."), dtype=float)
            return build_patch_operator(edges, diff)
        if kind == "interval":
            length = float(_need(dom_doc, "length", "domain."))
            cells = int(_need(dom_doc, "cells", "domain."))
            return build_interval_operator(length, cells, diff)
    except ValidationError as exc:
        raise ScenarioError(f"domain: {exc}") from exc
    raise ScenarioError(f"domain.kind: must be 'patch' or 'interval', got {kind!r}")


def _site_count(doc: dict) -> int:
    dom_doc = _need(doc, "domain", "")
    kind = dom_doc.get("kind")
    if kind == "patch":
        edges = _need(dom_doc, "edge_weights", "domain.")
        return len(edges)
    if kind == "interval":
        return int(_need(dom_doc, "cells", "domain."))
    raise ScenarioError(f"domain.kind: must be 'patch' or 'interval', got {kind!r}")


def load_scenario(source) -> Scenario:
    """Load and validate a scenario from a path, bundled name, or dict."""
    if isinstance(source, dict):
        doc = source
        name_hint = doc.get("name", "inline")
    else:
        path = Path(source)
        if not path.exists():
            path = bundled_scenario_path(str(source))
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
        name_hint = doc.get("name", path.stem)

    version = doc.get("schema", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"schema: unsupported version {version!r}")

    P = _site_count(doc)
    species = _need(doc, "species", "")
    if not isinstance(species, list) or not species:
        raise ScenarioError("species: must be a non-empty list")
    N = len(species)

    migration = _build_migration(doc, N + 1)

    I = _vector(_need(doc, "input", ""), P, "input")
    if np.any(I < 0) or not np.any(I > 0):
        raise ScenarioError(
            "input: violates I(x) >= 0 with I not identically 0"
        )
    m0 = _positive_vector(_need(doc, "resource_loss", ""), P, "resource_loss", "m_0(x) > 0")

    mortalities, consumptions, yields, names = [], [], [], []
    for j, sp in enumerate(species):
        where = f"species[{j}]"
        if not isinstance(sp, dict):
            raise ScenarioError(f"{where}: must be an object")
        mortalities.append(
            _positive_vector(
                _need(sp, "mortality", where + "."), P, f"{where}.mortality", "m_i(x) > 0"
            )
        )
        consumptions.append(_consumption(_need(sp, "consumption", where + "."), P, f"{where}.consumption"))
        y = sp.get("yield", 1.0)
        if not (np.isscalar(y) and y > 0):
            raise ScenarioError(f"{where}.yield: violates lambda_i > 0")
        yields.append(float(y))
        names.append(str(sp.get("name", f"species_{j + 1}")))

    try:
        model = CompetitionModel(
            domain=migration.domain,
            migration=migration,
            input_rate=I,
            resource_loss=m0,
            mortalities=tuple(mortalities),
            consumptions=tuple(consumptions),
            yields_=tuple(yields),
            species_names=tuple(names),
        )
    except ValidationError as exc:
        raise ScenarioError(str(exc)) from exc

    sweep = doc.get("sweep")
    if sweep is not None:
        for key in ("base", "factor", "count"):
            if key not in sweep:
                raise ScenarioError(f"sweep.{key}: missing")

    return Scenario(
        name=str(doc.get("name", name_hint)),
        model=model,
        epsilon=float(doc["epsilon"]) if "epsilon" in doc else None,
        t_end=float(doc["t_end"]) if "t_end" in doc else None,
        sweep=sweep,
        initial_spec=doc.get("initial"),
        integrator=doc.get("integrator"),
    )


def initial_state(
    scenario: Scenario, spec: dict | None = None
) -> tuple[np.ndarray, str]:
    """Build the initial state array from a specification.

    Specs: {"constant": [c_0..c_N]} (one value per row), {"uniform":
    [lo, hi], "seed": n} (every entry drawn independently), or {"values":
    [[..P..] x (N+1)]}.  Species rows are divided by their yields.  Returns
    the state and a short provenance string (records the seed).
    """
    model = scenario.model
    C = model.species_count + 1
    P = model.domain.site_count
    spec = spec if spec is not None else scenario.initial_spec
    if spec is None:
        spec = {"constant": [1.0] * C}

    if "constant" in spec:
        row_vals = _vector(spec["constant"], C, "initial.constant")
        state = np.repeat(np.asarray(row_vals, float)[:, None], P, axis=1)
        meta = f"initial=constant{list(map(float, row_vals))}"
    elif "uniform" in spec:
        lo, hi = spec["uniform"]
        seed = int(spec.get("seed", 0))
        rng = np.random.default_rng(seed)
        state = rng.uniform(float(lo), float(hi), size=(C, P))
        meta = f"initial=uniform[{lo},{hi}] seed={seed}"
    elif "values" in spec:
        state = np.asarray(spec["values"], dtype=float)
        if state.shape != (C, P):
            raise ScenarioError(f"initial.values: expected shape ({C}, {P}), got {state.shape}")
        meta = "initial=values"
    else:
        raise ScenarioError("initial: expected 'constant', 'uniform', or 'values'")

    if np.any(state < 0):
        raise ScenarioError("initial: state must be nonnegative")
    for i, y in enumerate(model.yields_, start=1):
        if y != 1.0:
            state[i] = state[i] / y
    return state, meta


def epsilon_grid(spec) -> np.ndarray:
    """Grid from {"base","factor","count"} or a "base,factor,count" string."""
    if isinstance(spec, str):
        try:
            base, factor, count = spec.split(",")
            spec = {"base": float(base), "factor": float(factor), "count": int(count)}
        except ValueError as exc:
            raise ScenarioError(f"grid: expected 'base,factor,count', got {spec!r}") from exc
    base = float(spec["base"])
    factor = float(spec["factor"])
    count = int(spec["count"])
    if not (base > 0 and 0 < factor < 1 and count >= 1):
        raise ScenarioError("grid: need base > 0, 0 < factor < 1, count >= 1")
    return base * factor ** np.arange(count)
