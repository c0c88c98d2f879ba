"""Scenario files: YAML in, validated :class:`RunConfig` out.

Every key is optional; omitted keys take the case-study defaults. Unknown
keys and wrongly typed values are rejected with the offending key path and
line number. ``limit_state.eps_lim`` is given in percent strain, as damage
tables quote it.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List

import yaml

from .building import BuildingGeometry
from .distributions import VARIABLE_ORDER, RandomModel, RandomVariable
from .errors import ConfigError, SettleSenseError
from .ground import TunnelGeometry
from .optimize import ObservationRegion, OptParams
from .scenario import Scenario
from .soi import SoiParams
from .subset import SubsetSimParams
from .updating import Measurement, UpdateParams

NUM = "number"
INT = "integer"
STR = "string"
BOOL = "boolean"
PAIR = "pair"
TRIPLE = "point"
LIST_NUM = "list of numbers"

_RV = {"kind": (STR, None), "mean": (NUM, None), "std": (NUM, None), "support": (PAIR, None)}

DEFAULT_RANDOM_MODEL = {
    "V_L": {"kind": "lognormal", "mean": 0.4, "std": 0.16},
    "K": {"kind": "lognormal", "mean": 0.3, "std": 0.06},
    "E_over_G": {"kind": "scaled_beta", "mean": 2.5, "std": 0.045, "support": [2.0, 3.0]},
    **{name: {"kind": "lognormal", "mean": 1.0, "std": 0.05} for name in VARIABLE_ORDER[3:]},
}

# default building: a short wall parallel to the transverse axis, just behind
# the initial face, between the trough's inflection line and its edge
SCHEMA: Dict[str, Any] = {
    "seed": (INT, 0),
    "tunnel": {
        "d": (NUM, 12.0), "z0": (NUM, 23.0), "y_s": (NUM, 0.0), "y_f": (NUM, math.inf), "delta": (NUM, 0.3),
    },
    "building": {
        "l_build": (NUM, 8.0), "d_orig": (NUM, 12.0), "theta_r": (NUM, 0.0), "H": (NUM, 9.0),
        "n_profile": (INT, 201), "anchor": (PAIR, [0.0, 3.5]),
    },
    "random_model": {name: _RV for name in VARIABLE_ORDER},
    "error_model": {"sigma_m": (NUM, 1.0), "sigma_f": (NUM, 2.0)},
    "limit_state": {"eps_lim": (NUM, 0.05), "zone_strain": (STR, "mean")},
    "region": {"x_range": (PAIR, [10.0, 30.0]), "y_range": (PAIR, [10.0, 30.0]), "n_grid": (PAIR, [101, 101])},
    "subset": {
        "n_per_level": (INT, 10_000), "p0": (NUM, 0.1), "proposal_halfwidth": (NUM, 1.0), "max_levels": (INT, 20),
    },
    "update": {
        "cov_thr": (NUM, 0.05), "n_ss_initial": (INT, 10_000), "delta_n_ss": (INT, 10_000),
        "max_outer_iterations": (INT, 5), "reciprocal_sim_n": (INT, 1_000_000), "n_evidence": (INT, 1_000_000),
        "min_hits": (INT, 100), "scale_rule": (STR, "sample_max"),
    },
    "soi": {"z_lob": (NUM, 5.0), "z_upb": (NUM, 15.0), "n_dis": (INT, 20)},
    "optimizer": {
        "ei_thr": (NUM, 1e-5), "max_iter": (INT, 100), "initial_grid": (PAIR, [9, 9]), "trend": (STR, "ordinary"),
        "faces": (LIST_NUM, None),
    },
    "settlement_grid": {
        "x_range": (PAIR, [-30.0, 30.0]), "y_range": (PAIR, [-30.0, 60.0]), "n_grid": (PAIR, [61, 91]),
        "v_l": (NUM, 0.5), "k": (NUM, 0.5),
    },
    "measurements": ("measurements", [
        {"location": [10.0, 10.0, 0.0], "value": 10.0},
        {"location": [15.0, 15.0, 0.0], "value": 10.0},
        {"location": [20.0, 20.0, 0.0], "value": 10.0},
        {"location": [25.0, 25.0, 0.0], "value": 10.0},
    ]),
    "soi_locations": ("locations", [[10.0, 10.0, 0.0], [15.0, 15.0, 0.0], [20.0, 20.0, 0.0], [25.0, 25.0, 0.0]]),
}


# -- YAML with line numbers --------------------------------------------------


def _construct(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k_node, v_node in node.value:
            key = k_node.value
            if key in out:
                raise ConfigError("duplicate key", ".".join(path + (key,)), k_node.start_mark.line + 1)
            out[key] = _construct(v_node, path + (key,), lines)
            lines[path + (key,)] = k_node.start_mark.line + 1
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, path + (str(i),), lines) for i, v in enumerate(node.value)]
    return _scalar(node)


def _scalar(node):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


def parse_yaml(text: str):
    """Parse YAML text into plain objects plus a ``{key path: line}`` map."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {exc}", line=mark.line + 1 if mark else None) from None
    lines: Dict[tuple, int] = {}
    if node is None:
        return {}, lines
    data = _construct(node, (), lines)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=1)
    return data, lines


# -- validation ----------------------------------------------------------------


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_value(kind, value, key, line):
    if kind == NUM:
        if not _is_num(value):
            raise ConfigError(f"expected a number, got {value!r}", key, line)
        return float(value)
    if kind == INT:
        if not (isinstance(value, int) and not isinstance(value, bool)):
            raise ConfigError(f"expected an integer, got {value!r}", key, line)
        return int(value)
    if kind == STR:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key, line)
        return value
    if kind == BOOL:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key, line)
        return value
    if kind in (PAIR, TRIPLE):
        n = 2 if kind == PAIR else 3
        ok = isinstance(value, list) and len(value) in ((2, 3) if kind == TRIPLE else (2,)) and all(
            _is_num(v) for v in value)
        if not ok:
            raise ConfigError(f"expected a list of {n} numbers, got {value!r}", key, line)
        return [float(v) if isinstance(v, float) else v for v in value]
    if kind == LIST_NUM:
        if value is None:
            return None
        if not (isinstance(value, list) and value and all(_is_num(v) for v in value)):
            raise ConfigError(f"expected a non-empty list of numbers, got {value!r}", key, line)
        return [float(v) for v in value]
    raise AssertionError(kind)


def _validate(schema, data, path, lines):
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", ".".join(path), lines.get(path))
    out = {}
    for key in data:
        if key not in schema:
            raise ConfigError("unknown key", ".".join(path + (key,)), lines.get(path + (key,)))
    for key, spec in schema.items():
        p = path + (key,)
        name, line = ".".join(p), lines.get(p)
        present = key in data
        if isinstance(spec, dict):
            if path == () and key == "random_model":
                out[key] = _validate_rvs(data.get(key, {}), p, lines)
            else:
                out[key] = _validate(spec, data.get(key, {}) if present else {}, p, lines)
            continue
        kind, default = spec
        if kind == "measurements":
            out[key] = _validate_measurements(data[key], p, lines) if present else copy.deepcopy(default)
        elif kind == "locations":
            out[key] = [_check_value(TRIPLE, v, f"{name}[{i}]", lines.get(p + (str(i),)))
                        for i, v in enumerate(_list(data[key], name, line))] if present else copy.deepcopy(default)
        elif present and not (data[key] is None and kind == LIST_NUM):
            out[key] = _check_value(kind, data[key], name, line)
        else:
            out[key] = copy.deepcopy(default)
    return out


def _list(value, name, line):
    if not isinstance(value, list):
        raise ConfigError("expected a list", name, line)
    return value


def _validate_rvs(data, path, lines):
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", ".".join(path), lines.get(path))
    out = {}
    for name in data:
        if name not in DEFAULT_RANDOM_MODEL:
            raise ConfigError("unknown random variable", ".".join(path + (name,)), lines.get(path + (name,)))
    for name, default in DEFAULT_RANDOM_MODEL.items():
        spec = dict(default)
        given = data.get(name) or {}
        p = path + (name,)
        if not isinstance(given, dict):
            raise ConfigError("expected a mapping", ".".join(p), lines.get(p))
        for k, v in given.items():
            if k not in _RV:
                raise ConfigError("unknown key", ".".join(p + (k,)), lines.get(p + (k,)))
            spec[k] = _check_value(_RV[k][0], v, ".".join(p + (k,)), lines.get(p + (k,)))
        if not spec["std"] > 0:
            raise ConfigError("std must be positive", ".".join(p + ("std",)), lines.get(p + ("std",), lines.get(p)))
        out[name] = spec
    return out


def _validate_measurements(value, path, lines):
    out = []
    for i, m in enumerate(_list(value, ".".join(path), lines.get(path))):
        p = path + (str(i),)
        if not isinstance(m, dict):
            raise ConfigError("expected a mapping with location and value", ".".join(p), lines.get(p))
        for k in m:
            if k not in ("location", "value"):
                raise ConfigError("unknown key", ".".join(p + (k,)), lines.get(p + (k,)))
        if "location" not in m or "value" not in m:
            raise ConfigError("measurement needs location and value", ".".join(p), lines.get(p))
        out.append({
            "location": _check_value(TRIPLE, m["location"], ".".join(p + ("location",)), lines.get(p + ("location",))),
            "value": _check_value(NUM, m["value"], ".".join(p + ("value",)), lines.get(p + ("value",))),
        })
    return out


# -- materialisation -----------------------------------------------------------


@dataclass
class RunConfig:
    """Validated settings for one run, plus the plain-data form they came from."""

    effective: dict
    scenario: Scenario
    seed: int
    subset: SubsetSimParams
    update: UpdateParams
    soi: SoiParams
    optimizer: OptParams
    region: ObservationRegion
    measurements: List[Measurement] = field(default_factory=list)
    soi_locations: List[tuple] = field(default_factory=list)
    faces: List[float] = field(default_factory=list)

    def digest(self) -> str:
        return config_digest(self.effective)


def config_digest(effective: dict) -> str:
    text = json.dumps(effective, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _guard(section, lines, fn):
    """Re-raise construction errors as config errors pointing at ``section``."""
    try:
        return fn()
    except ConfigError:
        raise
    except SettleSenseError as exc:
        raise ConfigError(str(exc), section, lines.get(tuple(section.split(".")))) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), section, lines.get(tuple(section.split(".")))) from None


def build(data: dict, lines=None, seed_override=None) -> RunConfig:
    lines = lines or {}
    eff = _validate(SCHEMA, data, (), lines)
    if seed_override is not None:
        eff["seed"] = int(seed_override)
    t, b = eff["tunnel"], eff["building"]
    tunnel = _guard("tunnel", lines, lambda: TunnelGeometry(**t))
    building = _guard("building", lines, lambda: BuildingGeometry(
        l_build=b["l_build"], d_orig=b["d_orig"], theta_r=b["theta_r"], H=b["H"], n_profile=b["n_profile"],
        anchor=tuple(b["anchor"])))

    def rv(name):
        s = eff["random_model"][name]
        return _guard(f"random_model.{name}", lines, lambda: RandomVariable(
            s["kind"], s["mean"], s["std"], tuple(s["support"]) if s.get("support") else None, name=name))

    model = RandomModel(tuple(rv(n) for n in VARIABLE_ORDER))
    em, ls = eff["error_model"], eff["limit_state"]
    scenario = _guard("limit_state", lines, lambda: Scenario(
        tunnel, building, model, em["sigma_m"], em["sigma_f"], ls["eps_lim"] / 100.0, ls["zone_strain"]))
    sp, up = eff["subset"], eff["update"]
    subset = _guard("subset", lines, lambda: SubsetSimParams(seed=eff["seed"], **sp))
    update = _guard("update", lines, lambda: UpdateParams(
        p0=sp["p0"], proposal_halfwidth=sp["proposal_halfwidth"], max_levels=sp["max_levels"], **up))
    soi = _guard("soi", lines, lambda: SoiParams(**eff["soi"]))
    op = eff["optimizer"]
    optimizer = _guard("optimizer", lines, lambda: OptParams(
        ei_thr=op["ei_thr"], max_iter=op["max_iter"], initial_grid=tuple(int(v) for v in op["initial_grid"]),
        trend=op["trend"]))
    rg = eff["region"]
    region = _guard("region", lines, lambda: ObservationRegion(
        tuple(rg["x_range"]), tuple(rg["y_range"]), tuple(int(v) for v in rg["n_grid"])))
    meas = [
        _guard("measurements", lines, lambda m=m: Measurement(tuple(m["location"]), m["value"], em["sigma_m"], em["sigma_f"]))
        for m in eff["measurements"]
    ]
    faces = op["faces"] if op["faces"] is not None else [t["y_s"]]
    return RunConfig(eff, scenario, eff["seed"], subset, update, soi, optimizer, region, meas,
                     [tuple(l) + ((0.0,) if len(l) == 2 else ()) for l in eff["soi_locations"]], faces)


def load_scenario(path, seed_override=None) -> RunConfig:
    """Read and validate a scenario file (an empty file gives all defaults)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}") from None
    except UnicodeDecodeError:
        raise ConfigError("scenario file is not valid UTF-8") from None
    data, lines = parse_yaml(text)
    return build(data, lines, seed_override)


def default_config(seed=0) -> RunConfig:
    return build({}, {}, seed)


def dump_effective(effective: dict) -> str:
    """YAML echo of the effective configuration (``inf`` written as ``.inf``)."""
    return yaml.safe_dump(effective, sort_keys=False, default_flow_style=None)
