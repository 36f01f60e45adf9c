"""Fixed-step integration of the closed loop and of the decoupled loops.

Stacked state ordering (stable, used for serialization)::

    [freq_dev (N), angle_dev (N), volt_dev (N), x_angle (L), x_volt (L)]
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .control import (
    AngleControllerParams,
    VoltageControllerParams,
    angle_controller,
    battery_reactive_dispatch,
    battery_real_dispatch,
    voltage_controller,
)
from .generator import (
    EquilibriumSpec,
    GeneratorParams,
    ParameterError,
    VoltageCollapseError,
    consistent_equilibrium_inputs,
    decoupled_coefficients,
    equilibrium_residual,
    full_plant_derivatives,
)
from .topology import Network, edge_inputs, node_inputs

__all__ = [
    "MODES",
    "NonFiniteStateError",
    "SimConfig",
    "Scenario",
    "Trace",
    "rk4_step",
    "rk4_propagator",
    "closed_loop_field",
    "fused_closed_loop_field",
    "decoupled_matrix",
    "run_closed_loop",
    "run_decoupled",
    "run",
    "compare_traces",
]

log = logging.getLogger(__name__)

MODES = ("closed_loop", "decoupled", "open_loop")
COLLAPSE_THRESHOLD = 0.1


class NonFiniteStateError(ArithmeticError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite value in the state at step {step}")


def rk4_step(f, x, dt, t=None):
    """One classical Runge-Kutta step.

    ``f(x)`` for autonomous fields; when ``t`` is given ``f(t, x)`` is
    called instead.
    """
    if t is None:
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
    else:
        k1 = f(t, x)
        k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = f(t + dt, x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(k1)) or not np.all(np.isfinite(out)):
        raise NonFiniteStateError(None)
    return out


def rk4_propagator(A, dt):
    """Matrix ``P`` with ``rk4_step(lambda x: A @ x, x, dt) == P @ x`` (up to rounding)."""
    A = np.asarray(A, dtype=float)
    hA = dt * A
    n = A.shape[0]
    P = np.eye(n)
    term = np.eye(n)
    for k in range(1, 5):
        term = term @ hA / k
        P = P + term
    return P


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    horizon: float = 40.0
    mode: str = "closed_loop"
    decimate: int = 1
    max_steps: int = 5_000_000

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if not self.horizon >= self.dt:
            raise ParameterError(f"horizon must be at least dt, got {self.horizon}")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if int(self.decimate) < 1:
            raise ParameterError(f"decimate must be >= 1, got {self.decimate}")
        if self.steps > self.max_steps:
            raise ParameterError(
                f"horizon/dt = {self.steps} steps exceeds the budget of {self.max_steps}"
            )

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


def _vec(x, n):
    a = np.zeros(n) if x is None else np.array(x, dtype=float)
    a = np.atleast_1d(a)
    if a.shape != (n,):
        raise ParameterError(f"expected {n} values, got shape {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything needed for one simulation run.

    Initial deviations are stored in SI units (radians, rad/s, p.u.).
    Unless ``raw_equilibrium`` is set, mechanical power and excitation
    are re-derived from the operating point before integration so the
    operating point is an exact equilibrium.
    """

    network: Network
    lines: np.ndarray
    generators: GeneratorParams
    equilibrium: EquilibriumSpec
    angle_ctrl: AngleControllerParams
    volt_ctrl: VoltageControllerParams
    init_angle_dev: np.ndarray = None
    init_freq_dev: np.ndarray = None
    init_volt_dev: np.ndarray = None
    init_x_angle: np.ndarray = None
    init_x_volt: np.ndarray = None
    sim: SimConfig = field(default_factory=SimConfig)
    raw_equilibrium: bool = False
    residual_bound: float = 5e-3
    name: str = "scenario"

    def __post_init__(self):
        n, m = self.network.node_count, self.network.edge_count
        object.__setattr__(self, "lines", _vec(self.lines, m))
        for attr, size in (
            ("init_angle_dev", n),
            ("init_freq_dev", n),
            ("init_volt_dev", n),
            ("init_x_angle", m),
            ("init_x_volt", m),
        ):
            object.__setattr__(self, attr, _vec(getattr(self, attr), size))
        if self.generators.node_count != n:
            raise ParameterError(f"generator tables have {self.generators.node_count} nodes, network has {n}")
        if self.equilibrium.angle.shape != (n,):
            raise ParameterError(f"equilibrium angles need {n} entries")
        if self.angle_ctrl.edge_count != m or self.volt_ctrl.edge_count != m:
            raise ParameterError(f"controller tables must have one entry per edge ({m})")
        bad = np.flatnonzero(~(self.lines > 0))
        if bad.size:
            raise ParameterError(f"line susceptance must be positive on edge {bad[0] + 1}")
        self.equilibrium.check_branch(self.network)
        c = decoupled_coefficients(self.generators)
        if np.any(c.alpha <= 0) or np.any(c.gamma <= 0):
            raise ParameterError("decoupled voltage coefficients must be positive")
        if np.any(self.equilibrium.v_nom + self.init_volt_dev <= 0):
            raise ParameterError("initial voltage magnitude must stay positive")
        if not self.raw_equilibrium:
            dp, dq = equilibrium_residual(self.generators, self.network, self.lines, self.equilibrium)
            worst = float(max(np.max(np.abs(dp)), np.max(np.abs(dq))))
            if worst > self.residual_bound:
                raise ParameterError(
                    f"operating point is not an equilibrium: residual {worst:.3g} exceeds "
                    f"{self.residual_bound:g} (set raw_equilibrium to waive)"
                )

    @property
    def node_count(self):
        return self.network.node_count

    @property
    def edge_count(self):
        return self.network.edge_count

    def replace(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def plant_params(self) -> GeneratorParams:
        """Generator data actually integrated (re-derived unless raw)."""
        if self.raw_equilibrium:
            return self.generators
        return consistent_equilibrium_inputs(self.lines, self.equilibrium, self.generators, self.network)

    def initial_state(self) -> np.ndarray:
        return np.concatenate(
            [self.init_freq_dev, self.init_angle_dev, self.init_volt_dev, self.init_x_angle, self.init_x_volt]
        )


class _Layout:
    def __init__(self, n, m):
        self.n, self.m = n, m
        self.freq = slice(0, n)
        self.angle = slice(n, 2 * n)
        self.volt = slice(2 * n, 3 * n)
        self.xa = slice(3 * n, 3 * n + m)
        self.xv = slice(3 * n + m, 3 * n + 2 * m)
        self.size = 3 * n + 2 * m


@dataclass(eq=False)
class Trace:
    """Uniformly sampled record of one run plus the signals around every subsystem."""

    times: np.ndarray
    states: np.ndarray
    network: Network
    mode: str
    equilibrium: EquilibriumSpec
    p_storage: np.ndarray = None
    q_storage: np.ndarray = None
    u_angle: np.ndarray = None
    u_volt: np.ndarray = None
    e_angle: np.ndarray = None
    e_volt: np.ndarray = None
    y_angle_ctrl: np.ndarray = None
    y_volt_ctrl: np.ndarray = None
    wall_time: float = 0.0

    def __post_init__(self):
        self._layout = _Layout(self.network.node_count, self.network.edge_count)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def freq_dev(self):
        return self.states[:, self._layout.freq]

    @property
    def angle_dev(self):
        return self.states[:, self._layout.angle]

    @property
    def volt_dev(self):
        return self.states[:, self._layout.volt]

    @property
    def x_angle(self):
        return self.states[:, self._layout.xa]

    @property
    def x_volt(self):
        return self.states[:, self._layout.xv]

    @property
    def angles(self):
        return self.equilibrium.angle + self.angle_dev

    @property
    def volts(self):
        return self.equilibrium.v_nom + self.volt_dev

    @property
    def frequency_hz(self):
        return (self.equilibrium.omega_nom + self.freq_dev) / (2 * math.pi)

    def final(self) -> np.ndarray:
        return self.states[-1]


def _controller_signals(states, scenario, lay, mode):
    """Edge inputs/outputs and aggregated node inputs for the stacked state."""
    Q = scenario.network.incidence
    e_a = states[..., lay.angle] @ Q
    e_v = states[..., lay.volt] @ Q
    if mode == "open_loop":
        ya = np.zeros_like(e_a)
        yv = np.zeros_like(e_v)
    else:
        _, ya = angle_controller(states[..., lay.xa], e_a, scenario.angle_ctrl)
        _, yv = voltage_controller(states[..., lay.xv], e_v, scenario.volt_ctrl)
    return e_a, e_v, ya, yv, ya @ Q.T, -(yv @ Q.T)


def closed_loop_field(scenario: Scenario, params: GeneratorParams = None, controllers_on: bool = True):
    """Vector field of the nonlinear plant under battery dispatch.

    With ``controllers_on=False`` the dispatch still cancels the line
    coupling but the edge controllers' outputs are held at zero.
    """
    params = scenario.plant_params() if params is None else params
    net, lines, eq = scenario.network, scenario.lines, scenario.equilibrium
    lay = _Layout(net.node_count, net.edge_count)
    Q = net.incidence
    actrl, vctrl = scenario.angle_ctrl, scenario.volt_ctrl

    def f(x):
        freq, adev, vdev = x[lay.freq], x[lay.angle], x[lay.volt]
        ua_edge = edge_inputs(adev, Q)
        uv_edge = edge_inputs(vdev, Q)
        xa_dot, ya = angle_controller(x[lay.xa], ua_edge, actrl)
        xv_dot, yv = voltage_controller(x[lay.xv], uv_edge, vctrl)
        if not controllers_on:
            ya = np.zeros_like(ya)
            yv = np.zeros_like(yv)
        u_a = node_inputs(ya, Q, "positive")
        u_v = node_inputs(yv, Q, "negative")
        angles = eq.angle + adev
        volts = eq.v_nom + vdev
        p_st = battery_real_dispatch(u_a, angles, volts, net, lines, eq)
        q_st = battery_reactive_dispatch(u_v, angles, volts, net, lines, eq)
        accel, vdot = full_plant_derivatives(adev, freq, vdev, p_st, q_st, params, net, lines, eq)
        return np.concatenate([accel, freq, vdot, xa_dot, xv_dot])

    return f


def fused_closed_loop_field(scenario: Scenario, params: GeneratorParams = None, controllers_on: bool = True):
    """Same vector field as :func:`closed_loop_field`, fused into one pass.

    Line sines/cosines are computed once per evaluation and every
    constant is hoisted; this is the field the integrator uses.
    """
    params = scenario.plant_params() if params is None else params
    net, B, eq = scenario.network, scenario.lines, scenario.equilibrium
    lay = _Layout(net.node_count, net.edge_count)
    Q = net.incidence.astype(float)
    Qt = (Q > 0).astype(float)
    Qh = (Q < 0).astype(float)
    adj = Qt + Qh
    t, h = net.tails, net.heads
    vn = eq.v_nom
    bar = eq.angle[t] - eq.angle[h]
    p_ref = B * vn**2 * np.sin(bar)
    q_ref = B * vn * np.cos(bar)
    ang0 = eq.angle
    ak1, ak2, a_itau = scenario.angle_ctrl.k1, scenario.angle_ctrl.k2, 1.0 / scenario.angle_ctrl.tau
    vk1, v_itau = scenario.volt_ctrl.k1, 1.0 / scenario.volt_ctrl.tau
    on = 1.0 if controllers_on else 0.0
    pg, D, invM = params.mech_power, params.damping, 1.0 / params.inertia
    bii, E, gap = params.self_susceptance, params.excitation, params.reactance_gap
    vgain = gap / params.t_do_prime
    inv_gap = 1.0 / gap
    out = np.empty(lay.size)

    def f(x):
        freq, adev, vdev = x[lay.freq], x[lay.angle], x[lay.volt]
        xa, xv = x[lay.xa], x[lay.xv]
        ea = adev @ Q
        ev = vdev @ Q
        ua = (on * (xa - ak2 * ea)) @ Q.T
        uv = -(on * xv) @ Q.T
        ang = ang0 + adev
        d = ang[t] - ang[h]
        sn, cs = np.sin(d), np.cos(d)
        V = vn + vdev
        Vt, Vh = V[t], V[h]
        flow_p = B * Vt * Vh * sn
        flow_q = B * Vt * Vh * cs
        p_st = ua - (p_ref - flow_p) @ Q.T
        q_st = V * (uv + (q_ref - B * Vh * cs) @ Qt.T + (q_ref - B * Vt * cs) @ Qh.T)
        pe = flow_p @ Q.T
        qe = -bii * V * V - flow_q @ adj.T
        qg = V * (E - V) * inv_gap
        out[lay.freq] = (pg - pe + p_st - D * freq) * invM
        out[lay.angle] = freq
        out[lay.volt] = (qg - qe + q_st) * vgain / V
        out[lay.xa] = (ak1 * ea - xa) * a_itau
        out[lay.xv] = (vk1 * ev - xv) * v_itau
        return out.copy()

    return f


def decoupled_matrix(scenario: Scenario) -> np.ndarray:
    """Closed-loop matrix of the two linear networked loops in stacked ordering."""
    net = scenario.network
    n, m = net.node_count, net.edge_count
    lay = _Layout(n, m)
    Q = net.incidence.astype(float)
    g = scenario.generators
    c = decoupled_coefficients(g)
    ac, vc = scenario.angle_ctrl, scenario.volt_ctrl
    A = np.zeros((lay.size, lay.size))
    # angle loop, positive interconnection: u = Q (x_c - K2 Q^T angle)
    Minv = np.diag(1.0 / g.inertia)
    A[lay.freq, lay.freq] = -np.diag(g.damping / g.inertia)
    A[lay.freq, lay.angle] = -Minv @ Q @ np.diag(ac.k2) @ Q.T
    A[lay.freq, lay.xa] = Minv @ Q
    A[lay.angle, lay.freq] = np.eye(n)
    A[lay.xa, lay.angle] = np.diag(ac.k1 / ac.tau) @ Q.T
    A[lay.xa, lay.xa] = -np.diag(1.0 / ac.tau)
    # voltage loop, negative interconnection: u = -Q x_v
    A[lay.volt, lay.volt] = -np.diag(c.alpha / c.gamma)
    A[lay.volt, lay.xv] = -np.diag(1.0 / c.gamma) @ Q
    A[lay.xv, lay.volt] = np.diag(vc.k1 / vc.tau) @ Q.T
    A[lay.xv, lay.xv] = -np.diag(1.0 / vc.tau)
    return A


def _check_state(x, lay, v_nom, step):
    if not np.all(np.isfinite(x)):
        raise NonFiniteStateError(step)
    v = v_nom + x[lay.volt]
    low = np.flatnonzero(v < COLLAPSE_THRESHOLD)
    if low.size:
        raise VoltageCollapseError(int(low[0]) + 1, float(v[low[0]]), COLLAPSE_THRESHOLD, step)


def _integrate(step_fn, x0, cfg: SimConfig, lay, v_nom, check_each_step=True):
    n_steps = cfg.steps
    dec = int(cfg.decimate)
    n_samples = n_steps // dec + 1
    out = np.empty((n_samples, x0.size))
    out[0] = x0
    x = x0
    k = 0
    for step in range(1, n_steps + 1):
        try:
            x = step_fn(x)
        except NonFiniteStateError:
            raise NonFiniteStateError(step) from None
        except VoltageCollapseError as exc:
            raise VoltageCollapseError(exc.node, exc.value, COLLAPSE_THRESHOLD, step) from None
        if check_each_step:
            _check_state(x, lay, v_nom, step)
        if step % dec == 0:
            k += 1
            out[k] = x
    times = np.arange(n_samples) * (dec * cfg.dt)
    return times, out


def _finish_trace(times, states, scenario, mode, wall):
    lay = _Layout(scenario.node_count, scenario.edge_count)
    net, eq = scenario.network, scenario.equilibrium
    e_a, e_v, ya, yv, u_a, u_v = _controller_signals(states, scenario, lay, mode)
    angles = eq.angle + states[:, lay.angle]
    volts = eq.v_nom + states[:, lay.volt]
    p_st = battery_real_dispatch(u_a, angles, volts, net, scenario.lines, eq)
    q_st = battery_reactive_dispatch(u_v, angles, volts, net, scenario.lines, eq)
    return Trace(
        times=times,
        states=states,
        network=net,
        mode=mode,
        equilibrium=eq,
        p_storage=p_st,
        q_storage=q_st,
        u_angle=u_a,
        u_volt=u_v,
        e_angle=e_a,
        e_volt=e_v,
        y_angle_ctrl=ya,
        y_volt_ctrl=yv,
        wall_time=wall,
    )


def run_closed_loop(scenario: Scenario, controllers_on: bool = True) -> Trace:
    """Integrate the nonlinear generators with battery dispatch and edge controllers."""
    import time

    cfg = scenario.sim
    lay = _Layout(scenario.node_count, scenario.edge_count)
    f = fused_closed_loop_field(scenario, controllers_on=controllers_on)
    dt = cfg.dt
    start = time.perf_counter()
    times, states = _integrate(lambda x: rk4_step(f, x, dt), scenario.initial_state(), cfg, lay, scenario.equilibrium.v_nom)
    wall = time.perf_counter() - start
    mode = "closed_loop" if controllers_on else "open_loop"
    return _finish_trace(times, states, scenario, mode, wall)


def run_decoupled(scenario: Scenario) -> Trace:
    """Integrate the two linear networked loops.

    RK4 on a linear field is a fixed matrix per step, so the step is
    applied as one precomputed propagator.
    """
    import time

    cfg = scenario.sim
    lay = _Layout(scenario.node_count, scenario.edge_count)
    P = rk4_propagator(decoupled_matrix(scenario), cfg.dt)
    start = time.perf_counter()
    v_nom = scenario.equilibrium.v_nom
    times, states = _integrate(lambda x: P @ x, scenario.initial_state(), cfg, lay, v_nom, check_each_step=False)
    # guards run on the recorded samples only
    bad = ~np.all(np.isfinite(states), axis=1) | np.any(v_nom + states[:, lay.volt] < COLLAPSE_THRESHOLD, axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        _check_state(states[k], lay, v_nom, k * int(cfg.decimate))
    wall = time.perf_counter() - start
    return _finish_trace(times, states, scenario, "decoupled", wall)


def run(scenario: Scenario) -> Trace:
    """Dispatch on ``scenario.sim.mode``."""
    mode = scenario.sim.mode
    if mode == "decoupled":
        return run_decoupled(scenario)
    return run_closed_loop(scenario, controllers_on=(mode == "closed_loop"))


def compare_traces(a: Trace, b: Trace) -> float:
    """Largest absolute state difference over all samples and components."""
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        raise ValueError("traces are sampled on different time grids")
    if a.states.shape != b.states.shape:
        raise ValueError(f"state shapes differ: {a.states.shape} vs {b.states.shape}")
    return float(np.max(np.abs(a.states - b.states)))
