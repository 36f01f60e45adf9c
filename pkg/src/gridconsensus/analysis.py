"""Storage functions, Lyapunov candidates and dissipation checks on traces.

Time derivatives are taken by central differences on the uniform sample
grid; the two endpoint samples are never counted as violations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import AngleControllerParams, VoltageControllerParams
from .generator import GeneratorParams, decoupled_coefficients
from .simulation import Scenario, Trace, rk4_step
from .statespace import StateSpace

__all__ = [
    "KINDS",
    "StorageValues",
    "LyapunovSample",
    "DissipationReport",
    "SubsystemTrajectory",
    "SignCheck",
    "storage_values",
    "lyapunov_negative",
    "lyapunov_positive",
    "lyapunov_positive_completed_square",
    "lyapunov_series",
    "central_difference",
    "check_dissipation",
    "check_lyapunov_decrease",
    "subsystem_trajectory",
    "analytic_kind",
    "steady_state_sign_check",
    "consensus_metric",
    "consensus_series",
]

KINDS = ("passive", "osp", "ni", "osni")


@dataclass(frozen=True)
class StorageValues:
    angle_node: np.ndarray
    angle_edge: np.ndarray
    volt_node: np.ndarray
    volt_edge: np.ndarray


def storage_values(
    freq_dev,
    volt_dev,
    x_angle,
    x_volt,
    generators: GeneratorParams,
    angle_ctrl: AngleControllerParams,
    volt_ctrl: VoltageControllerParams,
) -> StorageValues:
    """Per-subsystem storage for both loops; broadcasts over leading sample axes."""
    gamma = decoupled_coefficients(generators).gamma
    freq_dev = np.asarray(freq_dev, dtype=float)
    volt_dev = np.asarray(volt_dev, dtype=float)
    x_angle = np.asarray(x_angle, dtype=float)
    x_volt = np.asarray(x_volt, dtype=float)
    return StorageValues(
        angle_node=0.5 * generators.inertia * freq_dev**2,
        angle_edge=x_angle**2 / (2.0 * angle_ctrl.k1),
        volt_node=0.5 * gamma * volt_dev**2,
        volt_edge=volt_ctrl.tau * x_volt**2 / (2.0 * volt_ctrl.k1),
    )


def lyapunov_negative(volt_dev, x_volt, generators: GeneratorParams, volt_ctrl: VoltageControllerParams):
    """Sum of voltage-loop node and edge storages."""
    gamma = decoupled_coefficients(generators).gamma
    volt_dev = np.asarray(volt_dev, dtype=float)
    x_volt = np.asarray(x_volt, dtype=float)
    return np.sum(0.5 * gamma * volt_dev**2, axis=-1) + np.sum(
        volt_ctrl.tau * x_volt**2 / (2.0 * volt_ctrl.k1), axis=-1
    )


@dataclass(frozen=True)
class LyapunovSample:
    w_minus: np.ndarray
    w_plus: np.ndarray
    node_storage: np.ndarray
    edge_storage: np.ndarray
    cross: np.ndarray
    feedthrough: np.ndarray


def _feedthrough_integral(y_hat, angle_ctrl, feedthrough, resolution):
    # integral of the controller feedthrough g(u) from 0 to each y_hat
    if feedthrough is None:
        return -0.5 * angle_ctrl.k2 * y_hat**2
    k = (np.arange(resolution) + 0.5) / resolution
    xi = y_hat[..., None] * k
    return y_hat * np.mean(feedthrough(xi), axis=-1)


def _positive_terms(freq_dev, x_angle, y_hat, generators, angle_ctrl, feedthrough=None, resolution=2000):
    freq_dev = np.asarray(freq_dev, dtype=float)
    x_angle = np.asarray(x_angle, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    node = np.sum(0.5 * generators.inertia * freq_dev**2, axis=-1)
    edge = np.sum(x_angle**2 / (2.0 * angle_ctrl.k1), axis=-1)
    cross = -np.sum(y_hat * x_angle, axis=-1)
    ft = -np.sum(_feedthrough_integral(y_hat, angle_ctrl, feedthrough, resolution), axis=-1)
    return node, edge, cross, ft


def lyapunov_positive(
    freq_dev,
    x_angle,
    y_hat,
    generators: GeneratorParams,
    angle_ctrl: AngleControllerParams,
    feedthrough=None,
    resolution: int = 2000,
):
    """Angle-loop Lyapunov candidate.

    ``y_hat`` is the networked plant output, i.e. the angle-deviation
    difference across each edge. The controller feedthrough is taken as
    ``-k2 u`` and integrated in closed form; pass a vectorized
    ``feedthrough(u)`` to integrate a different one with the midpoint rule.
    """
    return sum(_positive_terms(freq_dev, x_angle, y_hat, generators, angle_ctrl, feedthrough, resolution))


def lyapunov_positive_completed_square(freq_dev, x_angle, y_hat, generators, angle_ctrl):
    """The same candidate written as a sum of squares (linear controllers only)."""
    freq_dev = np.asarray(freq_dev, dtype=float)
    x_angle = np.asarray(x_angle, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    k1, k2 = angle_ctrl.k1, angle_ctrl.k2
    return (
        np.sum(0.5 * generators.inertia * freq_dev**2, axis=-1)
        + np.sum((x_angle - k1 * y_hat) ** 2 / (2.0 * k1), axis=-1)
        + np.sum(0.5 * (k2 - k1) * y_hat**2, axis=-1)
    )


def lyapunov_series(trace: Trace, scenario: Scenario) -> LyapunovSample:
    g = scenario.generators
    node, edge, cross, ft = _positive_terms(trace.freq_dev, trace.x_angle, trace.e_angle, g, scenario.angle_ctrl)
    return LyapunovSample(
        w_minus=lyapunov_negative(trace.volt_dev, trace.x_volt, g, scenario.volt_ctrl),
        w_plus=node + edge + cross + ft,
        node_storage=node,
        edge_storage=edge,
        cross=cross,
        feedthrough=ft,
    )


def central_difference(values, dt):
    """Second-order derivative estimate along axis 0 (one-sided at the ends)."""
    values = np.asarray(values, dtype=float)
    return np.gradient(values, dt, axis=0, edge_order=2)


@dataclass(frozen=True)
class DissipationReport:
    kind: str
    epsilon_used: float
    max_violation: float
    violation_count: int
    samples_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.violation_count == 0


@dataclass(frozen=True)
class SubsystemTrajectory:
    """Signals around one subsystem: storage S, input u, output y and state output h(x)."""

    times: np.ndarray
    storage: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    state_outputs: np.ndarray
    label: str = ""


def _channels(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def check_dissipation(traj: SubsystemTrajectory, kind: str, epsilon: float = 0.0, c_tol: float = 10.0) -> DissipationReport:
    """Count interior samples where the dissipation inequality of ``kind`` fails.

    ``passive``: dS/dt <= u.y
    ``osp``:     dS/dt <= u.y - eps |h|^2
    ``ni``:      dS/dt <= u.dh/dt
    ``osni``:    dS/dt <= u.dh/dt - eps |dh/dt|^2

    The NI forms use the rate of the state part ``h(x)`` of the output,
    so a static feedthrough term does not enter. A sample counts as a
    violation when the slack exceeds ``c_tol * dt**2``.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    t = np.asarray(traj.times, dtype=float)
    if t.size < 3:
        raise ValueError("need at least 3 samples to difference a trajectory")
    dt = float(t[1] - t[0])
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12):
        raise ValueError("trajectory must be uniformly sampled")
    s_dot = central_difference(traj.storage, dt)
    u = _channels(traj.inputs)
    if kind in ("passive", "osp"):
        y = _channels(traj.outputs)
        bound = np.sum(u * y, axis=1)
        if kind == "osp":
            bound = bound - epsilon * np.sum(_channels(traj.state_outputs) ** 2, axis=1)
    else:
        h_dot = central_difference(_channels(traj.state_outputs), dt)
        bound = np.sum(u * h_dot, axis=1)
        if kind == "osni":
            bound = bound - epsilon * np.sum(h_dot**2, axis=1)
    slack = (s_dot - bound)[1:-1]
    tol = c_tol * dt**2
    return DissipationReport(
        kind=kind,
        epsilon_used=float(epsilon),
        max_violation=float(np.max(slack)),
        violation_count=int(np.count_nonzero(slack > tol)),
        samples_checked=int(slack.size),
        tolerance=tol,
    )


def subsystem_trajectory(trace: Trace, scenario: Scenario, loop: str, role: str, index: int) -> SubsystemTrajectory:
    """Pull the signals of one node plant or edge controller out of a trace.

    ``loop`` is ``"angle"`` or ``"voltage"``, ``role`` is ``"node"`` or
    ``"edge"``; ``index`` is 0-based.
    """
    g = scenario.generators
    i = index
    if (loop, role) == ("angle", "node"):
        S = 0.5 * g.inertia[i] * trace.freq_dev[:, i] ** 2
        u, y, h = trace.u_angle[:, i], trace.angle_dev[:, i], trace.angle_dev[:, i]
    elif (loop, role) == ("angle", "edge"):
        S = trace.x_angle[:, i] ** 2 / (2.0 * scenario.angle_ctrl.k1[i])
        u, y, h = trace.e_angle[:, i], trace.y_angle_ctrl[:, i], trace.x_angle[:, i]
    elif (loop, role) == ("voltage", "node"):
        gamma = decoupled_coefficients(g).gamma[i]
        S = 0.5 * gamma * trace.volt_dev[:, i] ** 2
        u, y, h = trace.u_volt[:, i], trace.volt_dev[:, i], trace.volt_dev[:, i]
    elif (loop, role) == ("voltage", "edge"):
        vc = scenario.volt_ctrl
        S = vc.tau[i] * trace.x_volt[:, i] ** 2 / (2.0 * vc.k1[i])
        u, y, h = trace.e_volt[:, i], trace.y_volt_ctrl[:, i], trace.x_volt[:, i]
    else:
        raise ValueError(f"unknown subsystem {loop}/{role}")
    return SubsystemTrajectory(trace.times, S, u, y, h, label=f"{loop}-{role}-{i + 1}")


def analytic_kind(scenario: Scenario, loop: str, role: str, index: int):
    """Dissipation kind each subsystem is designed to satisfy, with half the admissible epsilon."""
    if (loop, role) == ("angle", "node"):
        return "ni", 0.0
    if (loop, role) == ("angle", "edge"):
        return "osni", scenario.angle_ctrl.tau[index] / (2.0 * scenario.angle_ctrl.k1[index])
    if (loop, role) == ("voltage", "node"):
        return "osp", decoupled_coefficients(scenario.generators).alpha[index] / 2.0
    if (loop, role) == ("voltage", "edge"):
        return "osp", 1.0 / (2.0 * scenario.volt_ctrl.k1[index])
    raise ValueError(f"unknown subsystem {loop}/{role}")


def check_lyapunov_decrease(values, dt, c_tol: float = 10.0):
    """Largest central-difference rate of a Lyapunov series and the number of
    interior samples where it exceeds ``c_tol * dt**2``."""
    rate = central_difference(values, dt)[1:-1]
    tol = c_tol * dt**2
    return float(np.max(rate)), int(np.count_nonzero(rate > tol))


@dataclass(frozen=True)
class SignCheck:
    verdict: str  # "pass", "fail" or "vacuous"
    product: float
    output: float
    margin: float
    settled: bool


def steady_state_sign_check(
    system: StateSpace,
    u_bar: float,
    role: str,
    *,
    gamma_c: float = None,
    settle_time: float = 60.0,
    dt: float = 1e-2,
    window: float = 1.0,
    tol: float = 1e-9,
) -> SignCheck:
    """Drive ``system`` with a constant input and test the steady-state sign condition.

    ``role="plant"`` requires ``u y >= 0``; ``role="controller"`` requires
    ``u y <= -gamma_c u**2`` (``gamma_c`` defaults to any positive margin).
    If the output has not settled after ``settle_time`` the condition is
    vacuous.
    """
    if role not in ("plant", "controller"):
        raise ValueError(f"role must be 'plant' or 'controller', got {role!r}")
    u = np.atleast_1d(float(u_bar))
    f = lambda x: system.A @ x + system.B @ u  # noqa: E731
    steps = int(round(settle_time / dt))
    lag = max(1, int(round(window / dt)))
    x = np.zeros(system.nstates)
    history = []
    for k in range(steps + 1):
        if k >= steps - lag:
            history.append(float(system.output(x, u)[0]))
        if k < steps:
            x = rk4_step(f, x, dt)
    y_end, y_prev = history[-1], history[0]
    settled = abs(y_end - y_prev) <= tol * (1.0 + abs(y_end))
    product = float(u[0] * y_end)
    if not settled:
        return SignCheck("vacuous", product, y_end, float("nan"), False)
    margin = -product / float(u[0] ** 2) if u[0] != 0 else float("nan")
    if role == "plant":
        ok = product >= -tol
    elif gamma_c is None:
        ok = margin > 0
    else:
        ok = product <= -gamma_c * u[0] ** 2 + tol
    return SignCheck("pass" if ok else "fail", product, y_end, margin, True)


def consensus_metric(outputs) -> float:
    """Largest pairwise distance between node outputs (rows)."""
    y = np.asarray(outputs, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] < 2:
        raise ValueError("consensus needs at least two nodes")
    diff = y[:, None, :] - y[None, :, :]
    return float(np.max(np.linalg.norm(diff, axis=-1)))


def consensus_series(node_outputs) -> np.ndarray:
    """Per-sample consensus metric of scalar node outputs (samples x nodes)."""
    y = np.asarray(node_outputs, dtype=float)
    return np.max(y, axis=-1) - np.min(y, axis=-1)
