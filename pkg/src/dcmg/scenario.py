"""Scenario files: TOML with sections [graph] [converters] [network] [controller] [attack] [sim].

A file must carry ``schema = "dcmg-scenario/1"`` at top level.  All values are SI.
See README.md for the full key list; omitted optional keys take the defaults
in ``DEFAULTS`` and are echoed back by :func:`resolved_config`.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .controller import AttackModel
from .graph import CommGraph
from .plant import ConverterBank, NetworkModel
from .sim import ControllerConfig, Scenario

SCHEMA = "dcmg-scenario/1"

DEFAULTS = {
    "converters": {"v_in": 80.0, "capacitance": 2.2e-3, "inductance": 2.64e-3, "switching_frequency": 60e3},
    "network": {"line_resistance": 0.1, "load_resistance": 20.0},
    "controller": {"kind": "resilient", "gamma": 2, "alpha": 1.5, "upsilon": 1.0, "rho": 1.0,
                   "xi0": [1.0, 70.0], "xi_hat0": 1.0, "static_gain": 4.0},
    "attack": {"enabled": True},
    "sim": {"t_end": 30.0, "dt": 1e-3, "record_stride": 10},
}


class ScenarioParseError(ValueError):
    """Malformed scenario file (syntax, schema line, missing or mistyped keys)."""


def bundled_names():
    root = resources.files("dcmg") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def locate(name_or_path) -> Path:
    """A filesystem path, or the name of a bundled scenario."""
    p = Path(name_or_path)
    if p.exists():
        return p
    stem = p.name[:-5] if p.name.endswith(".toml") else p.name
    if stem in bundled_names():
        return Path(str(resources.files("dcmg") / "scenarios" / f"{stem}.toml"))
    raise ScenarioParseError(f"scenario file not found: {name_or_path}")


def _require(section, key, where):
    if key not in section:
        raise ScenarioParseError(f"[{where}] missing required key {key!r}")
    return section[key]


def _numbers(value, where, key):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioParseError(f"[{where}] {key} must be numeric, got {value!r}") from None
    return arr


def _pervector(value, n, where, key):
    arr = _numbers(value, where, key)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ScenarioParseError(f"[{where}] {key} needs {n} entries, got {arr.size}")
    return arr


def load_config(path) -> dict:
    path = locate(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioParseError(f"{path}: {exc}") from None
    if raw.get("schema") != SCHEMA:
        raise ScenarioParseError(f"{path}: expected schema = {SCHEMA!r}, got {raw.get('schema')!r}")
    for section in ("graph", "converters"):
        if section not in raw:
            raise ScenarioParseError(f"{path}: missing section [{section}]")
    raw.setdefault("name", path.stem)
    return raw


def resolved_config(raw: dict) -> dict:
    """Copy of ``raw`` with every default filled in."""
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for section, defaults in DEFAULTS.items():
        sec = out.setdefault(section, {})
        for key, value in defaults.items():
            sec.setdefault(key, value)
    n = int(out["graph"].get("nodes", 0))
    net = out["network"]
    if "lines" not in net:
        net["buses"] = n + 1
        net["lines"] = [[i + 1, n + 1, net["line_resistance"]] for i in range(n)]
        net["loads"] = [[n + 1, net["load_resistance"]]]
    sim = out["sim"]
    sim.setdefault("v_n0", out["converters"].get("v_ref"))
    return out


def build_scenario(raw: dict) -> Scenario:
    cfg = resolved_config(raw)
    g, conv, net, c, att, sim = (cfg[k] for k in ("graph", "converters", "network", "controller", "attack", "sim"))
    try:
        n = int(_require(g, "nodes", "graph"))
        edges = [(int(a), int(b), float(w)) for a, b, w in g.get("edges", [])]
    except (TypeError, ValueError):
        raise ScenarioParseError("[graph] nodes must be an integer and edges a list of [from, to, weight]") from None
    graph = CommGraph.from_edges(n, edges, _pervector(_require(g, "pinning", "graph"), n, "graph", "pinning"))

    bank = ConverterBank(
        rated_current=_pervector(_require(conv, "rated_current", "converters"), n, "converters", "rated_current"),
        virtual_impedance=_pervector(_require(conv, "virtual_impedance", "converters"), n, "converters", "virtual_impedance"),
        v_ref=float(_require(conv, "v_ref", "converters")),
        v_in=float(conv["v_in"]),
        lc_params={"C": float(conv["capacitance"]), "L": float(conv["inductance"]),
                   "f_s": float(conv["switching_frequency"])},
    )
    try:
        lines = [(int(a), int(b), float(r)) for a, b, r in net["lines"]]
        loads = [(int(b), float(r)) for b, r in net["loads"]]
        buses = int(net.get("buses", n + 1))
    except (TypeError, ValueError) as exc:
        raise ScenarioParseError(f"[network] malformed lines/loads: {exc}") from None
    network = NetworkModel(n, buses, lines, loads)

    gamma = int(c["gamma"])
    xi0 = _numbers(c["xi0"], "controller", "xi0")
    # parsed for baseline files too so that `compare` can switch them to the adaptive law
    if xi0.ndim == 1:
        xi0 = np.tile(xi0, (n, 1))
    if xi0.shape != (n, gamma):
        raise ScenarioParseError(f"[controller] xi0 needs gamma={gamma} chain entries per node")
    control = ControllerConfig(
        kind=str(c["kind"]), gamma=gamma,
        alpha=_pervector(c["alpha"], n, "controller", "alpha"),
        upsilon=_pervector(c["upsilon"], n, "controller", "upsilon"),
        rho=_pervector(c["rho"], n, "controller", "rho"),
        xi0=xi0, xi_hat0=_pervector(c["xi_hat0"], n, "controller", "xi_hat0"),
        static_gain=float(c["static_gain"]),
    )

    att_gamma = int(att.get("gamma", gamma))
    if att["enabled"] and "coefficients" in att:
        coeffs = att["coefficients"]
        if len(coeffs) != n:
            raise ScenarioParseError(f"[attack] coefficients needs one list per node ({n})")
        width = max(len(row) for row in coeffs)
        padded = np.zeros((n, width))
        for i, row in enumerate(coeffs):
            padded[i, : len(row)] = _numbers(row, "attack", "coefficients")
        attack = AttackModel(_pervector(att.get("onset", 0.0), n, "attack", "onset"), padded, att_gamma)
    else:
        attack = AttackModel.none(n, att_gamma)

    return Scenario(
        graph=graph, bank=bank, net=network, control=control, attack=attack,
        t_end=float(sim["t_end"]), dt=float(sim["dt"]), record_stride=int(sim["record_stride"]),
        v_n0=_pervector(sim["v_n0"], n, "sim", "v_n0"), name=str(cfg["name"]),
    )


def load_scenario(path) -> Scenario:
    return build_scenario(load_config(path))
