"""One-axis synchronous generator model and lossless power-flow terms.

All per-node functions broadcast over leading axes, so a whole trace
(samples x nodes) can be evaluated in one call. Angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .statespace import StateSpace
from .topology import Network

__all__ = [
    "ParameterError",
    "VoltageCollapseError",
    "GeneratorParams",
    "EquilibriumSpec",
    "DecoupledCoefficients",
    "SusceptanceFit",
    "decoupled_coefficients",
    "real_power_flow",
    "reactive_generation",
    "reactive_power_flow",
    "full_plant_derivatives",
    "decoupled_angle_plant",
    "decoupled_voltage_plant",
    "equilibrium_residual",
    "derive_line_susceptances",
    "consistent_equilibrium_inputs",
]


class ParameterError(ValueError):
    pass


class VoltageCollapseError(ArithmeticError):
    """A bus voltage magnitude reached the singular region |V| <= threshold."""

    def __init__(self, node, value, threshold=0.0, step=None):
        self.node = node
        self.value = value
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(
            f"voltage collapse on node {node}{where}: |V| = {value:.6g} <= {threshold:g}"
        )


def _vec(x):
    a = np.array(x, dtype=float)
    return np.atleast_1d(a)


@dataclass(frozen=True, eq=False)
class GeneratorParams:
    """Per-node machine data, one array entry per node (p.u., seconds)."""

    inertia: np.ndarray
    damping: np.ndarray
    t_do_prime: np.ndarray
    x_d: np.ndarray
    x_d_prime: np.ndarray
    self_susceptance: np.ndarray
    mech_power: np.ndarray
    excitation: np.ndarray

    def __post_init__(self):
        names = [f for f in self.__dataclass_fields__]
        arrays = {name: _vec(getattr(self, name)) for name in names}
        n = arrays["inertia"].shape[0]
        for name, arr in arrays.items():
            if arr.shape != (n,):
                raise ParameterError(f"{name} has shape {arr.shape}, expected ({n},)")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        for name in ("inertia", "damping", "t_do_prime"):
            bad = np.flatnonzero(~(arrays[name] > 0))
            if bad.size:
                raise ParameterError(f"{name} must be positive on node {bad[0] + 1}")
        bad = np.flatnonzero(~(self.x_d - self.x_d_prime > 0))
        if bad.size:
            raise ParameterError(f"x_d must exceed x_d_prime on node {bad[0] + 1}")
        bad = np.flatnonzero(~(self.self_susceptance < 0))
        if bad.size:
            raise ParameterError(f"self_susceptance must be negative on node {bad[0] + 1}")

    @property
    def node_count(self) -> int:
        return self.inertia.shape[0]

    @property
    def reactance_gap(self) -> np.ndarray:
        return self.x_d - self.x_d_prime

    def replace(self, **changes) -> "GeneratorParams":
        kw = {name: getattr(self, name) for name in self.__dataclass_fields__}
        kw.update(changes)
        return GeneratorParams(**kw)


@dataclass(frozen=True, eq=False)
class EquilibriumSpec:
    """Operating point: bus angles (rad), nominal voltage and frequency (rad/s)."""

    angle: np.ndarray
    v_nom: float = 1.0
    omega_nom: float = 2 * math.pi * 50.0

    def __post_init__(self):
        a = _vec(self.angle)
        a.flags.writeable = False
        object.__setattr__(self, "angle", a)
        if not self.v_nom > 0:
            raise ParameterError(f"v_nom must be positive, got {self.v_nom}")

    def check_branch(self, network: Network):
        for k, (i, j) in enumerate(network.edges, start=1):
            gap = abs(self.angle[i - 1] - self.angle[j - 1])
            if not gap < math.pi / 2:
                raise ParameterError(
                    f"equilibrium angle difference on edge {k} is {math.degrees(gap):.3f} deg; "
                    "must stay below 90 deg"
                )


@dataclass(frozen=True)
class DecoupledCoefficients:
    alpha: np.ndarray
    gamma: np.ndarray


def decoupled_coefficients(params: GeneratorParams) -> DecoupledCoefficients:
    gap = params.reactance_gap
    return DecoupledCoefficients(
        alpha=1.0 / gap - params.self_susceptance,
        gamma=params.t_do_prime / gap,
    )


def _check_sizes(network, angles, volts, lines):
    n = network.node_count
    if np.shape(angles)[-1] != n or np.shape(volts)[-1] != n:
        raise ValueError(
            f"expected {n} node values, got angles {np.shape(angles)} and volts {np.shape(volts)}"
        )
    if np.shape(lines) != (network.edge_count,):
        raise ValueError(f"expected {network.edge_count} line susceptances, got {np.shape(lines)}")


def real_power_flow(angles, volts, network: Network, lines) -> np.ndarray:
    """Real power leaving each bus over the lines, sum_j B_ij |V_i||V_j| sin(d_i - d_j)."""
    angles = np.asarray(angles, dtype=float)
    volts = np.asarray(volts, dtype=float)
    lines = np.asarray(lines, dtype=float)
    _check_sizes(network, angles, volts, lines)
    t, h = network.tails, network.heads
    flow = lines * volts[..., t] * volts[..., h] * np.sin(angles[..., t] - angles[..., h])
    return flow @ network.incidence.T


def reactive_generation(volt, params: GeneratorParams) -> np.ndarray:
    """Exciter reactive power |V| (E_ex - |V|) / (X_d - X'_d)."""
    gap = params.reactance_gap
    if np.any(gap <= 0):
        raise ParameterError("x_d must exceed x_d_prime")
    volt = np.asarray(volt, dtype=float)
    return volt * (params.excitation - volt) / gap


def reactive_power_flow(angles, volts, network: Network, lines, self_susceptance) -> np.ndarray:
    """Reactive power leaving each bus, -sum_j B_ij |V_i||V_j| cos(d_i - d_j), self term included."""
    angles = np.asarray(angles, dtype=float)
    volts = np.asarray(volts, dtype=float)
    lines = np.asarray(lines, dtype=float)
    _check_sizes(network, angles, volts, lines)
    t, h = network.tails, network.heads
    flow = lines * volts[..., t] * volts[..., h] * np.cos(angles[..., t] - angles[..., h])
    adjacency = np.abs(network.incidence)
    return -np.asarray(self_susceptance) * volts**2 - flow @ adjacency.T


def full_plant_derivatives(
    angle_dev,
    freq_dev,
    volt_dev,
    p_storage,
    q_storage,
    params: GeneratorParams,
    network: Network,
    lines,
    equilibrium: EquilibriumSpec,
):
    """Right-hand side of the nonlinear swing and flux-decay equations.

    Returns ``(angle acceleration, d|V|/dt)`` per node.
    """
    volts = equilibrium.v_nom + np.asarray(volt_dev, dtype=float)
    low = np.flatnonzero(volts <= 0)
    if low.size:
        raise VoltageCollapseError(int(low[0]) + 1, float(volts[low[0]]))
    angles = equilibrium.angle + np.asarray(angle_dev, dtype=float)
    pe = real_power_flow(angles, volts, network, lines)
    qe = reactive_power_flow(angles, volts, network, lines, params.self_susceptance)
    qg = reactive_generation(volts, params)
    accel = (params.mech_power - pe + p_storage - params.damping * freq_dev) / params.inertia
    vdot = (qg - qe + q_storage) * params.reactance_gap / (params.t_do_prime * volts)
    return accel, vdot


def decoupled_angle_plant(params: GeneratorParams, node: int = 0) -> StateSpace:
    """Linear angle plant of one node; state (frequency deviation, angle deviation)."""
    M = params.inertia[node]
    D = params.damping[node]
    return StateSpace(
        A=[[-D / M, 0.0], [1.0, 0.0]],
        B=[[1.0 / M], [0.0]],
        C=[[0.0, 1.0]],
    )


def decoupled_voltage_plant(params: GeneratorParams, node: int = 0) -> StateSpace:
    """First-order voltage plant of one node; state is the voltage deviation."""
    c = decoupled_coefficients(params)
    a, g = c.alpha[node], c.gamma[node]
    return StateSpace(A=[[-a / g]], B=[[1.0 / g]], C=[[1.0]])


def equilibrium_residual(params: GeneratorParams, network: Network, lines, equilibrium: EquilibriumSpec):
    """Mismatch ``(dP, dQ)`` per node at the nominal operating point; zero iff consistent."""
    volts = np.full(network.node_count, equilibrium.v_nom)
    pe = real_power_flow(equilibrium.angle, volts, network, lines)
    qe = reactive_power_flow(equilibrium.angle, volts, network, lines, params.self_susceptance)
    return params.mech_power - pe, reactive_generation(volts, params) - qe


@dataclass(frozen=True)
class SusceptanceFit:
    susceptance: np.ndarray
    max_residual: float
    residual: np.ndarray


def derive_line_susceptances(
    params: GeneratorParams,
    equilibrium: EquilibriumSpec,
    network: Network,
    *,
    use_reactive: bool = True,
    tol: float = 5e-3,
) -> SusceptanceFit:
    """Least-squares line susceptances that make the operating point an equilibrium.

    The unknowns enter the real- and reactive-power balance equations
    linearly, so stacking both balances gives an ordinary least-squares
    problem. Raises :class:`ParameterError` if the fit leaves a residual
    above ``tol``.
    """
    n, m = network.node_count, network.edge_count
    v2 = equilibrium.v_nom**2
    Q = network.incidence
    adj = np.abs(Q)
    t, h = network.tails, network.heads
    diff = equilibrium.angle[t] - equilibrium.angle[h]
    A_p = Q * (v2 * np.sin(diff))
    b_p = params.mech_power
    rows, rhs = [A_p], [b_p]
    if use_reactive:
        qg = reactive_generation(np.full(n, equilibrium.v_nom), params)
        rows.append(-adj * (v2 * np.cos(diff)))
        rhs.append(qg + params.self_susceptance * v2)
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    B, *_ = np.linalg.lstsq(A, b, rcond=None)
    residual = A @ B - b
    worst = float(np.max(np.abs(residual))) if residual.size else 0.0
    if worst > tol:
        raise ParameterError(
            f"no susceptances reproduce the operating point: max residual {worst:.3g} > {tol:g}"
        )
    return SusceptanceFit(susceptance=B, max_residual=worst, residual=residual)


def consistent_equilibrium_inputs(lines, equilibrium: EquilibriumSpec, params: GeneratorParams, network: Network):
    """Recompute mechanical power and excitation so the operating point is exact.

    Returns a new :class:`GeneratorParams`.
    """
    volts = np.full(network.node_count, equilibrium.v_nom)
    pe = real_power_flow(equilibrium.angle, volts, network, lines)
    qe = reactive_power_flow(equilibrium.angle, volts, network, lines, params.self_susceptance)
    excitation = equilibrium.v_nom + params.reactance_gap * qe / equilibrium.v_nom
    return params.replace(mech_power=pe, excitation=excitation)
