"""Scenario configuration: the built-in four-area case and TOML I/O.

Config schema (TOML)::

    [network]
    nodes = 4
    edges = [[1, 2, 25.6], [2, 3], ...]   # [from, to, susceptance?]

    [generators]                            # one entry per node
    M = [...]; D = [...]; T_do_prime = [...]; X_d = [...]
    X_d_prime = [...]; B_ii = [...]; P_G = [...]; E_ex = [...]

    [equilibrium]
    delta_deg = [...]; v_nom = 1.0; f_nom_hz = 50.0

    [[controllers]]                         # one table per edge, in edge order
    tau_delta = 1.0; k1_delta = 0.4; k2_delta = 0.7; tau_v = 1.0; k1_v = 0.4

    [initial]
    delta_deg = [...]; ddelta = [...]; vdev = [...]   # xcd, xcv optional

    [sim]
    dt = 0.001; horizon = 40.0; mode = "closed_loop"; decimate = 1
    raw_equilibrium = false
"""

from __future__ import annotations

import logging
import math

import numpy as np
import tomli
import tomli_w

from .control import AngleControllerParams, VoltageControllerParams
from .generator import EquilibriumSpec, GeneratorParams, ParameterError, derive_line_susceptances
from .simulation import Scenario, SimConfig
from .topology import DisconnectedGraphError, Network, random_connected_graph

__all__ = [
    "ConfigError",
    "builtin_four_area",
    "four_area_config",
    "parse_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "serialize_scenario",
    "load_scenario",
    "random_scenario",
]

log = logging.getLogger(__name__)

GENERATOR_KEYS = {
    "M": "inertia",
    "D": "damping",
    "T_do_prime": "t_do_prime",
    "X_d": "x_d",
    "X_d_prime": "x_d_prime",
    "B_ii": "self_susceptance",
    "P_G": "mech_power",
    "E_ex": "excitation",
}
CONTROLLER_KEYS = ("tau_delta", "k1_delta", "k2_delta", "tau_v", "k1_v")


class ConfigError(ValueError):
    """Schema or constraint violation in a scenario config."""


def four_area_config() -> dict:
    """Config dict of the four-area equivalent network, susceptances left to derivation."""
    return {
        "name": "four_area",
        "network": {"nodes": 4, "edges": [[1, 2], [2, 3], [3, 4], [4, 1]]},
        "generators": {
            "M": [5.22, 3.98, 4.49, 4.22],
            "D": [1.6, 1.22, 1.38, 1.42],
            "T_do_prime": [5.54, 7.41, 6.11, 6.22],
            "X_d": [1.84, 1.62, 1.8, 1.94],
            "X_d_prime": [0.25, 0.17, 0.36, 0.44],
            "B_ii": [-49.61, -61.66, -52.17, -40.18],
            "P_G": [8.076, 12.04, -14.38, -5.735],
            "E_ex": [7.824, 9.13, 8.437, 6.864],
        },
        "equilibrium": {"delta_deg": [30.0, 28.0, 5.0, 10.0], "v_nom": 1.0, "f_nom_hz": 50.0},
        "controllers": [
            {"tau_delta": 1.0, "k1_delta": 0.4, "k2_delta": 0.7, "tau_v": 1.0, "k1_v": 0.4},
            {"tau_delta": 1.0, "k1_delta": 0.5, "k2_delta": 0.8, "tau_v": 1.0, "k1_v": 0.5},
            {"tau_delta": 1.0, "k1_delta": 0.3, "k2_delta": 0.6, "tau_v": 1.0, "k1_v": 0.3},
            {"tau_delta": 1.0, "k1_delta": 0.4, "k2_delta": 0.8, "tau_v": 1.0, "k1_v": 0.4},
        ],
        "initial": {
            "delta_deg": [10.0, -8.0, -3.0, -10.0],
            "ddelta": [0.0, 0.0, 0.0, 0.0],
            "vdev": [0.04, -0.04, -0.05, 0.05],
        },
        "sim": {"dt": 1e-3, "horizon": 40.0, "mode": "closed_loop", "decimate": 1, "raw_equilibrium": False},
    }


def builtin_four_area(**sim_overrides) -> Scenario:
    cfg = four_area_config()
    cfg["sim"].update(sim_overrides)
    return scenario_from_dict(cfg)


def _section(cfg, key, kind=dict):
    if key not in cfg:
        raise ConfigError(f"missing section [{key}]")
    val = cfg[key]
    if not isinstance(val, kind):
        raise ConfigError(f"section {key} must be a {'table' if kind is dict else 'list of tables'}")
    return val


def _floats(table, key, size, where):
    if key not in table:
        raise ConfigError(f"missing key {where}.{key}")
    val = table[key]
    if not isinstance(val, list) or len(val) != size:
        raise ConfigError(f"{where}.{key} must be a list of {size} numbers")
    try:
        return np.array([float(v) for v in val])
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key} must contain only numbers") from None


def scenario_from_dict(cfg: dict) -> Scenario:
    """Validate a config mapping and build a :class:`Scenario`.

    Missing line susceptances are derived from the operating point by
    least squares; the residual is logged.
    """
    net_cfg = _section(cfg, "network")
    try:
        n = int(net_cfg["nodes"])
        raw_edges = net_cfg["edges"]
    except KeyError as exc:
        raise ConfigError(f"missing key network.{exc.args[0]}") from None
    edges, given = [], []
    for k, e in enumerate(raw_edges, start=1):
        if not isinstance(e, list) or len(e) not in (2, 3):
            raise ConfigError(f"network.edges[{k}] must be [from, to] or [from, to, susceptance]")
        edges.append((int(e[0]), int(e[1])))
        given.append(float(e[2]) if len(e) == 3 else None)
    try:
        network = Network(n, edges)
    except DisconnectedGraphError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(f"network: {exc}") from None
    m = network.edge_count

    gen_cfg = _section(cfg, "generators")
    try:
        gens = GeneratorParams(
            **{field: _floats(gen_cfg, key, n, "generators") for key, field in GENERATOR_KEYS.items()}
        )
    except ParameterError as exc:
        raise ConfigError(f"generators: {exc}") from None

    eq_cfg = _section(cfg, "equilibrium")
    f_nom = float(eq_cfg.get("f_nom_hz", 50.0))
    try:
        eq = EquilibriumSpec(
            angle=np.radians(_floats(eq_cfg, "delta_deg", n, "equilibrium")),
            v_nom=float(eq_cfg.get("v_nom", 1.0)),
            omega_nom=2 * math.pi * f_nom,
        )
        eq.check_branch(network)
    except ParameterError as exc:
        raise ConfigError(f"equilibrium: {exc}") from None

    ctrl_cfg = _section(cfg, "controllers", list)
    if len(ctrl_cfg) != m:
        raise ConfigError(f"controllers must list one table per edge ({m}), got {len(ctrl_cfg)}")
    cols = {key: [] for key in CONTROLLER_KEYS}
    for l, table in enumerate(ctrl_cfg, start=1):
        for key in CONTROLLER_KEYS:
            if key not in table:
                raise ConfigError(f"missing key {key} for controller on edge {l}")
            cols[key].append(float(table[key]))
    try:
        actrl = AngleControllerParams(cols["tau_delta"], cols["k1_delta"], cols["k2_delta"])
        vctrl = VoltageControllerParams(cols["tau_v"], cols["k1_v"])
    except ParameterError as exc:
        raise ConfigError(f"controllers: {exc}") from None

    sim_cfg = dict(cfg.get("sim", {}))
    raw = bool(sim_cfg.pop("raw_equilibrium", False))
    try:
        sim = SimConfig(**sim_cfg)
    except TypeError as exc:
        raise ConfigError(f"sim: {exc}") from None
    except ParameterError as exc:
        raise ConfigError(f"sim: {exc}") from None

    if any(b is None for b in given):
        fit = derive_line_susceptances(gens, eq, network)
        log.info("derived line susceptances %s (max residual %.3g)", np.round(fit.susceptance, 4), fit.max_residual)
        lines = np.array([b if b is not None else fit.susceptance[l] for l, b in enumerate(given)])
    else:
        lines = np.array(given)

    init_cfg = cfg.get("initial", {})
    init = {}
    for key, attr, size, scale in (
        ("delta_deg", "init_angle_dev", n, math.pi / 180),
        ("ddelta", "init_freq_dev", n, 1.0),
        ("vdev", "init_volt_dev", n, 1.0),
        ("xcd", "init_x_angle", m, 1.0),
        ("xcv", "init_x_volt", m, 1.0),
    ):
        if key in init_cfg:
            vals = _floats(init_cfg, key, size, "initial")
            init[attr] = np.radians(vals) if key == "delta_deg" else vals * scale
    try:
        return Scenario(
            network=network,
            lines=lines,
            generators=gens,
            equilibrium=eq,
            angle_ctrl=actrl,
            volt_ctrl=vctrl,
            sim=sim,
            raw_equilibrium=raw,
            name=str(cfg.get("name", "scenario")),
            **init,
        )
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


def parse_scenario(text: str) -> Scenario:
    try:
        cfg = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return scenario_from_dict(cfg)


def load_scenario(path) -> Scenario:
    with open(path, "rb") as fh:
        try:
            cfg = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
    return scenario_from_dict(cfg)


def _lst(a):
    return [float(v) for v in a]


def _deg(rad) -> float:
    # shortest decimal degree value that maps back to the same radian float
    rad = float(rad)
    d = math.degrees(rad)
    for digits in range(18):
        cand = round(d, digits)
        if np.radians(cand) == rad:
            return cand
    cand = d
    for _ in range(4):
        if np.radians(cand) == rad:
            return cand
        cand = float(np.nextafter(cand, np.inf if np.radians(cand) < rad else -np.inf))
    return d


def _deg_lst(a):
    return [_deg(v) for v in a]


def scenario_to_dict(s: Scenario) -> dict:
    g = s.generators
    return {
        "name": s.name,
        "network": {
            "nodes": s.node_count,
            "edges": [[a, b, float(B)] for (a, b), B in zip(s.network.edges, s.lines)],
        },
        "generators": {key: _lst(getattr(g, field)) for key, field in GENERATOR_KEYS.items()},
        "equilibrium": {
            "delta_deg": _deg_lst(s.equilibrium.angle),
            "v_nom": float(s.equilibrium.v_nom),
            "f_nom_hz": float(s.equilibrium.omega_nom / (2 * math.pi)),
        },
        "controllers": [
            {
                "tau_delta": float(s.angle_ctrl.tau[l]),
                "k1_delta": float(s.angle_ctrl.k1[l]),
                "k2_delta": float(s.angle_ctrl.k2[l]),
                "tau_v": float(s.volt_ctrl.tau[l]),
                "k1_v": float(s.volt_ctrl.k1[l]),
            }
            for l in range(s.edge_count)
        ],
        "initial": {
            "delta_deg": _deg_lst(s.init_angle_dev),
            "ddelta": _lst(s.init_freq_dev),
            "vdev": _lst(s.init_volt_dev),
            "xcd": _lst(s.init_x_angle),
            "xcv": _lst(s.init_x_volt),
        },
        "sim": {
            "dt": float(s.sim.dt),
            "horizon": float(s.sim.horizon),
            "mode": s.sim.mode,
            "decimate": int(s.sim.decimate),
            "max_steps": int(s.sim.max_steps),
            "raw_equilibrium": bool(s.raw_equilibrium),
        },
    }


def serialize_scenario(s: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(s))


def random_scenario(seed: int, max_nodes: int = 8, horizon: float = 200.0, dt: float = 1e-3) -> Scenario:
    """Random connected grid with parameters drawn inside every model invariant.

    Equilibrium angle differences stay within +-60 deg and the angle
    controller gain ``k2`` lies in ``(k1, 3 k1]``. Mechanical power and
    excitation are computed from the operating point so it is exact.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_nodes + 1))
    net = random_connected_graph(n, seed)
    m = net.edge_count
    # bounded angles keep every edge difference within 60 degrees
    angle = np.radians(rng.uniform(-30.0, 30.0, n))
    x_d_prime = rng.uniform(0.15, 0.45, n)
    gens = GeneratorParams(
        inertia=rng.uniform(2.0, 8.0, n),
        damping=rng.uniform(0.8, 2.0, n),
        t_do_prime=rng.uniform(4.0, 8.0, n),
        x_d=x_d_prime + rng.uniform(1.0, 2.0, n),
        x_d_prime=x_d_prime,
        self_susceptance=rng.uniform(-60.0, -30.0, n),
        mech_power=np.zeros(n),
        excitation=np.ones(n),
    )
    eq = EquilibriumSpec(angle=angle, v_nom=1.0, omega_nom=2 * math.pi * 50.0)
    lines = rng.uniform(10.0, 35.0, m)
    from .generator import consistent_equilibrium_inputs

    gens = consistent_equilibrium_inputs(lines, eq, gens, net)
    k1 = rng.uniform(0.2, 0.6, m)
    k2 = k1 * rng.uniform(1.05, 3.0, m)
    return Scenario(
        network=net,
        lines=lines,
        generators=gens,
        equilibrium=eq,
        angle_ctrl=AngleControllerParams(tau=rng.uniform(0.5, 2.0, m), k1=k1, k2=k2),
        volt_ctrl=VoltageControllerParams(tau=rng.uniform(0.5, 2.0, m), k1=rng.uniform(0.2, 0.6, m)),
        init_angle_dev=np.radians(rng.uniform(-10.0, 10.0, n)),
        init_freq_dev=rng.uniform(-0.1, 0.1, n),
        init_volt_dev=rng.uniform(-0.05, 0.05, n),
        sim=SimConfig(dt=dt, horizon=horizon, mode="decoupled"),
        name=f"random_{seed}",
    )
