"""Chain specification files and sample CSVs.

A chain spec is a JSON document with a ``dimension`` and either

* ``"layers"`` plus ``"order": "applies_first"``: the explicit layer list in
  the order the layers act on base samples (the reverse of the written
  composition order used by :class:`~zlpflow.chain.FlowChain`), or
* ``"preset"``: a family name with its parameters (see
  :class:`~zlpflow.presets.FamilyPreset`).

The JSON schema ships with the package as ``schema/chain_spec.schema.json``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import warnings
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .chain import FlowChain, LinearProjectLayer, RotationLayer, ZoomLayer
from .linear_project import LPParams, LPVariant
from .presets import FamilyPreset, build_preset
from .sphere import Rotation, as_points, rotation_to
from .zoom import ZoomParams

APPLIES_FIRST = "applies_first"
SAMPLE_TOL = 1e-9


class SpecError(ValueError):
    """A chain spec or data file is malformed."""


@lru_cache(maxsize=1)
def chain_schema() -> dict:
    text = resources.files("zlpflow").joinpath("schema/chain_spec.schema.json").read_text()
    return json.loads(text)


def validate_spec(doc: Any) -> None:
    """Raise :class:`SpecError` with the schema message if ``doc`` is invalid."""
    if isinstance(doc, dict) and "layers" in doc and "preset" in doc:
        raise SpecError("schema violation at <root>: explicit layers and a preset block are mutually exclusive")
    if isinstance(doc, dict) and "preset" not in doc and "layers" not in doc:
        raise SpecError("schema violation at <root>: need either 'layers' (with \"order\": \"applies_first\") or 'preset'")
    validator = jsonschema.Draft202012Validator(chain_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise SpecError(f"schema violation at {where}: {err.message}")


# spec -> chain ----------------------------------------------------------------


def _layer_from_dict(d: dict, dim: int, applies_first: bool, validate: bool):
    kind = d["kind"]
    if kind == "zoom":
        return ZoomLayer(ZoomParams(float(d["kappa"]), dim))
    if kind == "rotation":
        if "matrix" in d:
            return RotationLayer(Rotation(np.asarray(d["matrix"], dtype=float)))
        mu = np.asarray(d["mu"], dtype=float)
        if mu.shape != (dim,):
            raise SpecError(f"rotation mu must have {dim} entries")
        return RotationLayer(rotation_to(mu))
    variant = d["variant"]
    if variant == LPVariant.FULL.value:
        a = np.asarray(d["matrix"], dtype=float)
        if a.shape != (dim, dim):
            raise SpecError(f"linear_project matrix must be {dim}x{dim}")
        if np.all(np.triu(a, 1) == 0) and np.all(np.diag(a) > 0):
            return LinearProjectLayer(LPParams.lower(a))
        if not applies_first:
            raise SpecError("a full linear_project matrix that is not the first layer must be lower triangular with positive diagonal")
        return LinearProjectLayer(LPParams.from_matrix(a))
    if variant == LPVariant.DIAGONAL_S.value:
        s = np.asarray(d["scales"], dtype=float)
        if s.shape != (dim,):
            raise SpecError(f"scales must have {dim} entries")
        return LinearProjectLayer(LPParams.diagonal(s))
    sig = np.asarray(d["sigmas"], dtype=float)
    if sig.shape != (dim - 1,):
        raise SpecError(f"sigmas must have {dim - 1} entries")
    return LinearProjectLayer(LPParams.constrained(sig, float(d["kappa"]), check=validate))


def chain_from_spec(doc: dict, validate: bool = True) -> tuple[FlowChain, str | None]:
    """Build the chain described by a spec document.

    Returns the chain and the family name (``None`` for explicit layers).
    ``validate=False`` skips the constrained-scaling interval check so that
    out-of-range parameters can still be loaded and reported.
    """
    validate_spec(doc)
    dim = int(doc["dimension"])
    try:
        if "preset" in doc:
            p = dict(doc["preset"])
            family = p.pop("family")
            return build_preset(FamilyPreset(family, dim, p), validate=validate), family
        specs = doc["layers"]
        # listed in application order; FlowChain wants written order
        layers = [_layer_from_dict(d, dim, i == 0, validate) for i, d in enumerate(specs)]
        return FlowChain(dim, layers[::-1]), None
    except SpecError:
        raise
    except (ValueError, np.linalg.LinAlgError) as err:
        raise SpecError(str(err)) from err


def load_spec(path, validate: bool = True) -> tuple[FlowChain, str | None]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise SpecError(f"{path}: not valid JSON ({err})") from err
    return chain_from_spec(doc, validate)


# chain -> spec ----------------------------------------------------------------


def _tolist(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _tolist(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_tolist(x) for x in v]
    return v


def _layer_to_dict(layer) -> dict:
    if isinstance(layer, ZoomLayer):
        return {"kind": "zoom", "kappa": float(layer.params.kappa)}
    if isinstance(layer, RotationLayer):
        return {"kind": "rotation", "matrix": layer.rotation.matrix.tolist()}
    p = layer.params
    if p.variant is LPVariant.FULL:
        return {"kind": "linear_project", "variant": "full", "matrix": p.matrix.tolist()}
    if p.variant is LPVariant.DIAGONAL_S:
        return {"kind": "linear_project", "variant": "diagonal_s", "scales": np.diag(p.matrix).tolist()}
    return {"kind": "linear_project", "variant": "constrained_sc", "sigmas": np.diag(p.matrix)[:-1].tolist(), "kappa": float(p.kappa)}


def chain_to_spec(chain: FlowChain) -> dict:
    """Explicit-layer spec document for a chain."""
    return {
        "dimension": chain.dim,
        "order": APPLIES_FIRST,
        "layers": [_layer_to_dict(layer) for layer in reversed(chain.layers)],
    }


def preset_to_spec(preset: FamilyPreset) -> dict:
    params = _tolist(dict(preset.params))
    return {"dimension": preset.dim, "preset": {"family": preset.name, **params}}


def write_spec(path, doc: dict) -> None:
    validate_spec(doc)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# sample files -----------------------------------------------------------------


def format_rows(points, logp=None) -> str:
    """CSV text with header ``x1,...,xD[,logp]`` and 17 significant digits."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dim = points.shape[1]
    cols = [f"x{i + 1}" for i in range(dim)]
    data = points
    if logp is not None:
        cols.append("logp")
        data = np.column_stack([points, np.asarray(logp, dtype=float)])
    buf = _io.StringIO()
    buf.write(",".join(cols) + "\n")
    np.savetxt(buf, data, delimiter=",", fmt="%.17g")
    return buf.getvalue()


def write_samples(path, points, logp=None) -> None:
    Path(path).write_text(format_rows(points, logp))


def read_samples(path, dim: int | None = None) -> tuple[np.ndarray, np.ndarray | None]:
    """Points (renormalized) and the optional logp column of a sample CSV.

    Every row must lie within 1e-9 of the unit sphere.
    """
    text = Path(path).read_text()
    reader = csv.reader(_io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SpecError(f"{path}: empty file") from None
    has_logp = header[-1] == "logp"
    coords = header[:-1] if has_logp else header
    if not coords or coords != [f"x{i + 1}" for i in range(len(coords))]:
        raise SpecError(f"{path}: header must be x1,...,xD[,logp], got {','.join(header)}")
    if len(coords) < 2:
        raise SpecError(f"{path}: points need at least 2 coordinates")
    if dim is not None and len(coords) != dim:
        raise SpecError(f"{path}: data has dimension {len(coords)}, expected {dim}")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # empty body is reported below
            data = np.loadtxt(_io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
    except ValueError as err:
        raise SpecError(f"{path}: {err}") from err
    if data.shape[0] == 0:
        raise SpecError(f"{path}: no data rows")
    if data.shape[1] != len(header):
        raise SpecError(f"{path}: rows have {data.shape[1]} columns, header has {len(header)}")
    try:
        points = as_points(data[:, : len(coords)], tol=SAMPLE_TOL)
    except ValueError as err:
        raise SpecError(f"{path}: {err}") from err
    return points, (data[:, -1] if has_logp else None)


__all__ = [
    "APPLIES_FIRST",
    "SpecError",
    "chain_from_spec",
    "chain_schema",
    "chain_to_spec",
    "format_rows",
    "load_spec",
    "preset_to_spec",
    "read_samples",
    "validate_spec",
    "write_samples",
    "write_spec",
]
