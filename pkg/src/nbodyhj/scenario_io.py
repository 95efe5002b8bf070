"""Scenario files in, deterministic result files out."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .core import MassSystem
from .errors import ParseError, ValidationError
from .hj import SliceGrid
from .minimize import MinimizeOptions
from .reference import KINDS, ScenarioSpec, make_scenario
from .spectral import SpectralOptions

SCHEMA_VERSION = 1

_NUM = {"type": "number"}
_MATRIX = {
    "oneOf": [
        {"type": "array", "items": _NUM},
        {"type": "array", "items": {"type": "array", "items": _NUM}},
    ]
}
_SOLVER_KEYS = {f.name for f in fields(MinimizeOptions)} - {"threads"}
_SPECTRAL_KEYS = {f.name for f in fields(SpectralOptions)}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "masses", "kind"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "masses": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2},
        "dim": {"type": "integer", "minimum": 1},
        "kind": {"enum": list(KINDS)},
        "a": _MATRIX,
        "x0": _MATRIX,
        "b_m": _MATRIX,
        "cluster_tol": {"type": "number", "minimum": 0},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": ["number", "integer", "boolean", "null"]} for k in sorted(_SOLVER_KEYS)},
        },
        "spectral": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": ["number", "integer", "string"]} for k in sorted(_SPECTRAL_KEYS)},
        },
    },
}

_RANGE = {
    "oneOf": [
        {"type": "array", "items": _NUM, "minItems": 1},
        {
            "type": "object",
            "required": ["start", "stop", "num"],
            "additionalProperties": False,
            "properties": {"start": _NUM, "stop": _NUM, "num": {"type": "integer", "minimum": 0}},
        },
    ]
}

SLICE_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "e1", "e2", "s1", "s2"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "center": _MATRIX,
        "e1": _MATRIX,
        "e2": _MATRIX,
        "s1": _RANGE,
        "s2": _RANGE,
    },
}


@dataclass
class Scenario:
    spec: ScenarioSpec
    minimize: MinimizeOptions
    spectral: SpectralOptions
    name: str = ""
    raw: dict = field(default_factory=dict)

    @property
    def content_hash(self) -> str:
        return content_hash(self.raw)


def _check(schema, data, where=""):
    errors = sorted(Draft202012Validator(schema).iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ParseError(err.message, where + path)


def _matrix(raw, n, d, key):
    arr = np.asarray(raw, dtype=float)
    if arr.size != n * d or (arr.ndim == 2 and arr.shape != (n, d)):
        raise ParseError(f"expected {n}x{d} values, got shape {arr.shape}", key)
    return arr.reshape(n, d)


def _read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read file ({exc.strerror})", str(path)) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg} at line {exc.lineno})", str(path)) from exc


def parse_scenario(data: dict) -> Scenario:
    _check(SCENARIO_SCHEMA, data)
    masses = data["masses"]
    n = len(masses)
    d = int(data.get("dim", 2))
    ms = MassSystem(masses, d)
    a = _matrix(data["a"], n, d, "a") if "a" in data else None
    x0 = _matrix(data["x0"], n, d, "x0") if "x0" in data else None
    b = _matrix(data["b_m"], n, d, "b_m") if "b_m" in data else None
    solver = {k: v for k, v in data.get("solver", {}).items() if v is not None}
    spectral = dict(data.get("spectral", {}))
    try:
        mopts = MinimizeOptions(**solver)
        sopts = SpectralOptions(**spectral)
    except TypeError as exc:
        raise ParseError(str(exc), "solver") from exc
    spec = make_scenario(data["kind"], ms, a=a, x0=x0, b=b, cluster_tol=float(data.get("cluster_tol", 0.0)))
    if x0 is None and spec.kind != "hyperbolic":
        # default point: the reference path at t = 1
        spec = spec.with_x(spec.a + spec.c)
    return Scenario(spec, mopts, sopts, data.get("name", ""), data)


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file (``schema_version`` 1)."""
    return parse_scenario(_read_json(path))


def _range(raw):
    if isinstance(raw, dict):
        return np.linspace(raw["start"], raw["stop"], raw["num"])
    return np.asarray(raw, dtype=float)


def parse_slice(data: dict, spec: ScenarioSpec) -> SliceGrid:
    _check(SLICE_SCHEMA, data, "slice/")
    ms = spec.ms
    center = _matrix(data["center"], ms.n, ms.d, "center") if "center" in data else np.array(spec.x0)
    return SliceGrid(center, _matrix(data["e1"], ms.n, ms.d, "e1"), _matrix(data["e2"], ms.n, ms.d, "e2"),
                     _range(data["s1"]), _range(data["s2"]))


def load_slice(path, spec: ScenarioSpec) -> SliceGrid:
    return parse_slice(_read_json(path), spec)


# ---------------------------------------------------------------- output

def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    out = "%.17g" % x
    # keep floats recognizable as floats after a reload
    return out if any(c in out for c in ".en") else out + ".0"


def to_plain(obj):
    """Recursively convert numpy and dataclass values into JSON-ready Python objects."""
    if hasattr(obj, "__dataclass_fields__"):
        return to_plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, MassSystem):
        return {"masses": obj.masses.tolist(), "dim": obj.d}
    return str(obj)


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON: sorted keys, floats as ``%.17g``, non-finite floats as ``null``."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {dumps(obj[k], indent, _level + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    return json.dumps(obj, ensure_ascii=False)


def content_hash(data: dict) -> str:
    """Git blob hash of the canonical serialization of ``data``."""
    body = dumps(to_plain(data)).encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def options_dict(opts) -> dict:
    d = asdict(opts)
    d.pop("threads", None)  # results must not depend on it
    return d


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["%.17g" % v if isinstance(v, (float, np.floating)) else v for v in row])


def save_result(path, bundle: dict, scenario: Scenario | None = None, sidecars: dict | None = None) -> Path:
    """Write ``bundle`` as deterministic JSON plus optional CSV sidecars next to it.

    ``sidecars`` maps file names to ``(header, rows)``; their names are
    listed in the JSON under ``sidecars``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = dict(to_plain(bundle))
    if scenario is not None:
        doc["scenario_hash"] = scenario.content_hash
        doc["scenario"] = to_plain(scenario.raw)
        doc["solver_options"] = to_plain(options_dict(scenario.minimize))
        doc["spectral_options"] = to_plain(asdict(scenario.spectral))
        doc["metadata"] = to_plain(scenario.spec.metadata())
    if sidecars:
        doc["sidecars"] = sorted(sidecars)
        for name, (header, rows) in sidecars.items():
            write_csv(path.parent / name, header, rows)
    path.write_text(dumps(doc) + "\n")
    return path


def load_result(path) -> dict:
    return json.loads(Path(path).read_text())


def bundled_scenarios() -> dict:
    """Name -> path of the scenario files shipped with the package."""
    base = Path(__file__).with_name("scenarios")
    return {p.stem: p for p in sorted(base.glob("*.json"))}


def bundled_slices() -> dict:
    base = Path(__file__).with_name("scenarios") / "slices"
    return {p.stem: p for p in sorted(base.glob("*.json"))}


def _resolve(name_or_path, shipped, what) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    if str(name_or_path) in shipped:
        return shipped[str(name_or_path)]
    raise ParseError(f"no {what} file or bundled {what} named {name_or_path!r}", what)


def resolve_scenario_path(name_or_path) -> Path:
    return _resolve(name_or_path, bundled_scenarios(), "scenario")


def resolve_slice_path(name_or_path) -> Path:
    return _resolve(name_or_path, bundled_slices(), "slice")


__all__ = [
    "SCHEMA_VERSION", "Scenario", "ValidationError", "load_scenario", "parse_scenario", "load_slice",
    "parse_slice", "save_result", "load_result", "dumps", "content_hash", "bundled_scenarios",
    "resolve_scenario_path", "resolve_slice_path", "bundled_slices", "write_csv",
]
