"""Scenario files: a JSON document describing one bounds/validation run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import compactify
from .grid import GridFunction, GridMeasure, grid_from_axes, read_csv_columns
from .models import BrownianSheet, Volterra, apply_R, model_from_dict
from .simulation import band_is_open

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


_number = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

_function_families = {
    "tent": {"peak": _number, "height": _number, "left": _number, "right": _number},
    "linear": {"slope": _number, "intercept": _number},
    "quad": {"scale": _number},
    "saturating": {"scale": _number},
    "table": {"path": {"type": "string"}},
    "covariance": {"atoms": {"type": "array", "items": {"type": "array", "items": _number, "minItems": 2, "maxItems": 3}}},
    "zero": {},
}
_boundary_families = {
    "constant": {"value": _number},
    "affine": {"intercept": _number, "slope": _number},
    "table": {"path": {"type": "string"}},
}


_REQUIRED = {"table": ["path"], "constant": ["value"], "covariance": ["atoms"], "product": ["f1", "f2"]}


def _family_schema(families):
    variants = []
    for name, props in families.items():
        variants.append(
            {
                "type": "object",
                "properties": {"family": {"const": name}, **props},
                "required": ["family"] + _REQUIRED.get(name, []),
                "additionalProperties": False,
            }
        )
    return {"oneOf": variants}


_factor = _family_schema(_function_families)
_drift = _family_schema({**_function_families, "product": {"f1": _factor, "f2": _factor}})
_boundary = _family_schema(_boundary_families)

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "model", "drift", "boundary", "c_values"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "domain": {"enum": ["compact", "halfline"]},
        "model": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["wiener", "wiener_ab", "wiener_ab0", "bridge", "sheet", "volterra"]},
                "a": _number,
                "b": _pos,
                "T": _pos,
                "kernel_csv": {"type": "string"},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "analysis": {"type": "integer", "minimum": 2},
                "mc": {"type": "integer", "minimum": 2},
                "horizon": _pos,
            },
        },
        "drift": _drift,
        "boundary": _boundary,
        "lower_boundary": _boundary,
        "c_values": {"type": "array", "items": _pos, "minItems": 1},
        "projection": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"method": {"enum": ["auto", "qp", "majorant"]}, "max_iter": {"type": "integer", "minimum": 1}},
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "replicates": {"type": "integer", "minimum": 1000},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "monitoring": {"enum": ["auto", "nodes", "continuous"]},
                "allowance": {"type": "number", "minimum": 0},
                "reference": {"enum": ["conservative", "mc"]},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "g1": _pos,
                "g3": _pos,
                "orthogonality": _pos,
                "slackness": _pos,
                "condition_limit": _pos,
            },
        },
    },
}

DEFAULT_GRID = {"analysis": 65, "mc": 2001, "mc_sheet": 201, "horizon": 1000.0}
DEFAULT_MC = {"replicates": 100_000, "seed": 0, "monitoring": "auto", "allowance": 0.002, "reference": "conservative"}


def _field_path(err):
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "<root>"


def validate(doc):
    """Schema plus semantic checks; raises ScenarioError naming the field."""
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(doc), key=lambda e: (len(list(e.absolute_path)), list(map(str, e.absolute_path))))
    if errors:
        e = errors[0]
        if e.context:
            # report from the branch whose family matched
            branches = {}
            for c in e.context:
                branches.setdefault(c.relative_schema_path[0], []).append(c)
            matched = [
                errs
                for errs in branches.values()
                if not any(c.validator == "const" and list(c.absolute_path)[-1:] == ["family"] for c in errs)
            ]
            if not matched:
                raise ScenarioError(_field_path(e) + ".family", "unknown family")
            inner = matched[0]
            inner = [c for c in inner if c.validator != "additionalProperties"] or inner
            return _raise(max(inner, key=lambda c: len(list(c.absolute_path))))
        return _raise(e)
    c = doc["c_values"]
    if any(b <= a for a, b in zip(c, c[1:])):
        raise ScenarioError("c_values", "must be strictly increasing")
    kind = doc["model"]["kind"]
    m = doc["model"]
    if kind in ("wiener_ab", "wiener_ab0") and ("a" not in m or "b" not in m):
        raise ScenarioError("model", f"{kind} needs a and b")
    if kind == "wiener_ab" and not 0 < m["a"] < m["b"]:
        raise ScenarioError("model.a", "wiener_ab needs 0 < a < b")
    if kind == "wiener_ab0" and not m["a"] < 0 < m["b"]:
        raise ScenarioError("model.a", "wiener_ab0 needs a < 0 < b")
    if kind == "volterra" and "kernel_csv" not in m:
        raise ScenarioError("model.kernel_csv", "volterra models need a kernel table")
    if doc.get("domain") == "halfline" and kind != "wiener":
        raise ScenarioError("domain", "the half-line transform applies to the wiener model")
    if (doc["drift"]["family"] == "product") != (kind == "sheet"):
        raise ScenarioError("drift.family", "product drifts go with the sheet model and only there")
    return doc


def _raise(err):
    raise ScenarioError(_field_path(err), err.message)


# -- function families -----------------------------------------------------

def _tent(t, peak=0.5, height=1.0, left=None, right=None):
    left = t.min() if left is None else left
    right = t.max() if right is None else right
    up = height * (t - left) / (peak - left) if peak > left else np.zeros_like(t)
    down = height * (right - t) / (right - peak) if right > peak else np.zeros_like(t)
    return np.clip(np.minimum(up, down), 0.0, None) * ((t >= left) & (t <= right))


def eval_family(spec, t, base_dir=None, kind="function"):
    """Values of a 1-D family at nodes ``t``."""
    fam = spec["family"]
    t = np.asarray(t, dtype=float)
    if fam == "tent":
        return _tent(t, spec.get("peak", 0.5), spec.get("height", 1.0), spec.get("left"), spec.get("right"))
    if fam == "linear":
        return spec.get("intercept", 0.0) + spec.get("slope", 1.0) * t
    if fam == "quad":
        return spec.get("scale", 1.0) * (t - t * t)
    if fam == "saturating":
        return spec.get("scale", 1.0) * t / (1.0 + t)
    if fam == "zero":
        return np.zeros_like(t)
    if fam == "constant":
        return np.full_like(t, float(spec["value"]))
    if fam == "affine":
        return spec.get("intercept", 0.0) + spec.get("slope", 0.0) * t
    if fam == "table":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            coords, vals = read_csv_columns(path)
        except (OSError, ValueError, IndexError) as exc:
            raise ScenarioError(f"{kind}.path", f"cannot read table: {exc}") from None
        if coords.shape[1] != 1:
            raise ScenarioError(f"{kind}.path", "tables for 1-D models have two columns")
        x = coords[:, 0]
        if t.min() < x.min() - 1e-12 or t.max() > x.max() + 1e-12:
            raise ScenarioError(f"{kind}.path", "table does not cover the domain")
        return np.interp(t, x, vals)
    raise ScenarioError(f"{kind}.family", f"family {fam!r} is not available here")


@dataclass
class Scenario:
    doc: dict
    base_dir: Path
    model: object = field(init=False)

    def __post_init__(self):
        validate(self.doc)
        for key in ("drift", "boundary", "lower_boundary"):
            spec = self.doc.get(key)
            if spec is None:
                continue
            parts = [(f"{key}.{k}", spec[k]) for k in ("f1", "f2") if k in spec] or [(key, spec)]
            for name, sub in parts:
                if sub["family"] == "table":
                    path = Path(sub["path"])
                    if not path.is_absolute():
                        path = Path(self.base_dir) / path
                    if not path.is_file():
                        raise ScenarioError(f"{name}.path", f"{path} not found")
        if self.halfline:
            self.model = compactify.TransformSpec().target_model
        else:
            try:
                self.model = model_from_dict(self.doc["model"], self.base_dir)
            except (OSError, ValueError) as exc:
                raise ScenarioError("model", str(exc)) from exc

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ScenarioError("<file>", f"{path} not found") from None
        except json.JSONDecodeError as exc:
            raise ScenarioError("<file>", f"invalid JSON: {exc}") from None
        return cls(doc, path.parent)

    # -- settings -------------------------------------------------------
    @property
    def halfline(self):
        return self.doc.get("domain", "compact") == "halfline"

    @property
    def c_values(self):
        return np.array(self.doc["c_values"], dtype=float)

    def grid_size(self, which):
        g = self.doc.get("grid", {})
        if which == "mc" and "mc" not in g and isinstance(self.model, BrownianSheet):
            return DEFAULT_GRID["mc_sheet"]
        return int(g.get(which, DEFAULT_GRID[which]))

    @property
    def mc(self):
        return {**DEFAULT_MC, **self.doc.get("mc", {})}

    @property
    def tolerances(self):
        return dict(self.doc.get("tolerances", {}))

    @property
    def projection_method(self):
        return self.doc.get("projection", {}).get("method", "auto")

    @property
    def max_iter(self):
        return self.doc.get("projection", {}).get("max_iter")

    # -- grids and functions ---------------------------------------------
    def grid(self, which="analysis"):
        if isinstance(self.model, Volterra):
            return self.model.grid(self.model.nodes.size)
        # half-line runs live on the uniform bridge grid
        return self.model.grid(self.grid_size(which))

    def _halfline_transform(self, grid):
        s = compactify.to_halfline(grid.nodes[:-1])
        fspec, uspec = self.doc["drift"], self.doc["boundary"]
        f = lambda x: eval_family(fspec, x, self.base_dir, "drift")  # noqa: E731
        u = lambda x: eval_family(uspec, x, self.base_dir, "boundary")  # noqa: E731
        tr = compactify.halfline_to_bridge(f, u, s=s)
        um = None
        if "lower_boundary" in self.doc:
            lspec = self.doc["lower_boundary"]
            lm = compactify.halfline_to_bridge(f, lambda x: eval_family(lspec, x, self.base_dir, "lower_boundary"), s=s)
            um = lm.u_bar
        return tr, um

    def drift(self, grid):
        spec = self.doc["drift"]
        if self.halfline:
            tr, _ = self._halfline_transform(grid)
            return GridFunction(grid, tr.f_bar.values)
        if spec["family"] == "covariance":
            return apply_R(self.model, self.covariance_measure(grid))
        if spec["family"] == "product":
            f1, f2 = self.product_factors(grid)
            return GridFunction(grid, np.outer(f1.values, f2.values))
        vals = eval_family(spec, grid.nodes, self.base_dir, "drift")
        if np.any(vals[grid.zero_mask] > 0):
            raise ScenarioError("drift", "drift is positive where the process vanishes")
        return GridFunction(grid, vals)

    def covariance_measure(self, grid):
        atoms = np.zeros(grid.shape)
        for entry in self.doc["drift"]["atoms"]:
            *pt, mass = entry
            if grid.ndim == 1:
                atoms[grid.index_of(pt[0])] += mass
            else:
                atoms[grid.index_of(pt[0], 0), grid.index_of(pt[1], 1)] += mass
        if np.any(atoms[grid.zero_mask] != 0):
            raise ScenarioError("drift.atoms", "atoms on the zero set of the process")
        return GridMeasure(grid, atoms)

    def product_factors(self, grid):
        spec = self.doc["drift"]
        out = []
        for name, axis in (("f1", grid.axes[0]), ("f2", grid.axes[1])):
            g1 = grid_from_axes((axis,), _AxisModel(axis))
            out.append(GridFunction(g1, eval_family(spec[name], axis, self.base_dir, f"drift.{name}")))
        return out

    def _boundary_values(self, key, grid):
        spec = self.doc[key]
        if grid.ndim == 1:
            return eval_family(spec, grid.nodes, self.base_dir, key)
        if spec["family"] == "table":
            raise ScenarioError(f"{key}.family", "table boundaries are 1-D only")
        # boundaries on the sheet depend on t1 + t2 through the affine slope
        t1, t2 = np.meshgrid(*grid.axes, indexing="ij")
        return eval_family(spec, t1 + t2, self.base_dir, key)

    def boundary(self, grid):
        if self.halfline:
            tr, _ = self._halfline_transform(grid)
            if tr.u_bar is None:
                raise ScenarioError("boundary", "boundary tends to -inf; both probabilities vanish")
            return GridFunction(grid, tr.u_bar.values)
        return GridFunction(grid, self._boundary_values("boundary", grid))

    def lower_boundary(self, grid):
        if "lower_boundary" not in self.doc:
            return None
        if self.halfline:
            _, um = self._halfline_transform(grid)
            if um is None:
                raise ScenarioError("lower_boundary", "lower boundary tends to -inf")
            lo = GridFunction(grid, um.values)
        else:
            lo = GridFunction(grid, self._boundary_values("lower_boundary", grid))
        if not band_is_open(self.boundary(grid), lo):
            raise ScenarioError("lower_boundary", "must lie strictly below boundary at every node")
        return lo


class _AxisModel:
    """Zero set of one sheet axis (the origin)."""

    ndim = 1
    name = "sheet-axis"

    def __init__(self, axis):
        self.axis = axis

    def check_domain(self, axes):
        pass

    def zero_mask(self, axes):
        return np.asarray(axes[0]) == 0.0
