"""Edge controllers for the two loops and the battery dispatch laws.

The angle controller is output strictly negative imaginary, the
voltage controller output strictly passive. Dispatch converts the
designed node inputs into battery real/reactive power so that the
nonlinear generator behaves exactly like the decoupled linear plants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .generator import EquilibriumSpec, ParameterError, VoltageCollapseError
from .statespace import StateSpace
from .topology import Network

__all__ = [
    "AngleControllerParams",
    "VoltageControllerParams",
    "angle_controller",
    "voltage_controller",
    "angle_controller_statespace",
    "voltage_controller_statespace",
    "battery_real_dispatch",
    "battery_reactive_dispatch",
]


def _edge_arrays(obj, names):
    arrays = [np.atleast_1d(np.array(getattr(obj, n), dtype=float)) for n in names]
    size = arrays[0].shape
    for name, arr in zip(names, arrays):
        if arr.shape != size or arr.ndim != 1:
            raise ParameterError(f"{name} has shape {arr.shape}, expected {size}")
        arr.flags.writeable = False
        object.__setattr__(obj, name, arr)
    return arrays


@dataclass(frozen=True, eq=False)
class AngleControllerParams:
    """Per-edge time constant and the two gains, requiring k2 > k1 > 0."""

    tau: np.ndarray
    k1: np.ndarray
    k2: np.ndarray

    def __post_init__(self):
        tau, k1, k2 = _edge_arrays(self, ("tau", "k1", "k2"))
        for l in range(tau.size):
            if not tau[l] > 0:
                raise ParameterError(f"tau_delta must be positive on edge {l + 1}")
            if not k1[l] > 0:
                raise ParameterError(f"k1_delta must be positive on edge {l + 1}")
            if not k2[l] > k1[l]:
                raise ParameterError(f"K2 must exceed K1 on edge {l + 1}")

    @property
    def edge_count(self):
        return self.tau.size


@dataclass(frozen=True, eq=False)
class VoltageControllerParams:
    tau: np.ndarray
    k1: np.ndarray

    def __post_init__(self):
        tau, k1 = _edge_arrays(self, ("tau", "k1"))
        for l in range(tau.size):
            if not tau[l] > 0:
                raise ParameterError(f"tau_v must be positive on edge {l + 1}")
            if not k1[l] > 0:
                raise ParameterError(f"k1_v must be positive on edge {l + 1}")

    @property
    def edge_count(self):
        return self.tau.size


def angle_controller(x, u, params: AngleControllerParams):
    """Return ``(xdot, y)`` for the angle-loop edge controllers."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    xdot = (-x + params.k1 * u) / params.tau
    return xdot, x - params.k2 * u


def voltage_controller(x, u, params: VoltageControllerParams):
    """Return ``(xdot, y)`` for the voltage-loop edge controllers (no feedthrough)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return (-x + params.k1 * u) / params.tau, x.copy()


def angle_controller_statespace(params: AngleControllerParams, edge: int = 0) -> StateSpace:
    tau, k1, k2 = params.tau[edge], params.k1[edge], params.k2[edge]
    return StateSpace(A=[[-1 / tau]], B=[[k1 / tau]], C=[[1.0]], D=[[-k2]])


def voltage_controller_statespace(params: VoltageControllerParams, edge: int = 0) -> StateSpace:
    tau, k1 = params.tau[edge], params.k1[edge]
    return StateSpace(A=[[-1 / tau]], B=[[k1 / tau]], C=[[1.0]])


def _split_incidence(network):
    Q = network.incidence
    return Q, (Q > 0).astype(float), (Q < 0).astype(float)


def battery_real_dispatch(u_angle, angles, volts, network: Network, lines, equilibrium: EquilibriumSpec):
    """Battery real power that turns the swing equation into ``M dd + D d = u``.

    ``angles`` and ``volts`` are absolute bus angles (rad) and magnitudes.
    """
    angles = np.asarray(angles, dtype=float)
    volts = np.asarray(volts, dtype=float)
    t, h = network.tails, network.heads
    bar = equilibrium.angle[t] - equilibrium.angle[h]
    now = angles[..., t] - angles[..., h]
    mismatch = lines * (equilibrium.v_nom**2 * np.sin(bar) - volts[..., t] * volts[..., h] * np.sin(now))
    Q = network.incidence
    return np.asarray(u_angle, dtype=float) - mismatch @ Q.T


def battery_reactive_dispatch(u_volt, angles, volts, network: Network, lines, equilibrium: EquilibriumSpec):
    """Battery reactive power that turns the flux-decay equation into ``g dV = -a V + u``."""
    angles = np.asarray(angles, dtype=float)
    volts = np.asarray(volts, dtype=float)
    low = np.flatnonzero(np.atleast_1d(volts).reshape(-1, volts.shape[-1]).min(axis=0) <= 0)
    if low.size:
        raise VoltageCollapseError(int(low[0]) + 1, float(np.min(volts[..., low[0]])))
    t, h = network.tails, network.heads
    cos_bar = np.cos(equilibrium.angle[t] - equilibrium.angle[h])
    cos_now = np.cos(angles[..., t] - angles[..., h])
    vn = equilibrium.v_nom
    # the neighbour voltage differs for the two ends of each line
    at_tail = lines * (vn * cos_bar - volts[..., h] * cos_now)
    at_head = lines * (vn * cos_bar - volts[..., t] * cos_now)
    _, Qt, Qh = _split_incidence(network)
    return volts * (np.asarray(u_volt, dtype=float) + at_tail @ Qt.T + at_head @ Qh.T)
