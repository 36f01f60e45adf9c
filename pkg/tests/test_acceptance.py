"""Acceptance gate: one recorded pass/fail line per criterion."""

import math

import numpy as np

from drive import drive, smooth_input
from gridconsensus.analysis import (
    SubsystemTrajectory,
    analytic_kind,
    check_dissipation,
    check_lyapunov_decrease,
    lyapunov_series,
    steady_state_sign_check,
)
from gridconsensus.control import angle_controller_statespace, voltage_controller_statespace
from gridconsensus.generator import (
    decoupled_angle_plant,
    decoupled_coefficients,
    decoupled_voltage_plant,
    derive_line_susceptances,
)
from gridconsensus.report import consensus_sweep
from gridconsensus.simulation import SimConfig, compare_traces, rk4_step, run_closed_loop
from gridconsensus.scenario import four_area_config, scenario_from_dict


def test_c1_four_area_reproduction(four_area, closed_trace, acceptance_line):
    net = four_area.network
    freq_err = np.max(np.abs(closed_trace.frequency_hz[-1] - 50.0))
    d = closed_trace.angle_dev[-1]
    angle_err = np.max(np.abs(np.degrees(d[net.tails] - d[net.heads])))
    volt_err = np.max(np.abs(closed_trace.volts[-1] - 1.0))
    wall = closed_trace.wall_time
    ok = (
        closed_trace.times[-1] == 40.0
        and closed_trace.dt == 1e-3
        and freq_err <= 1e-3
        and angle_err <= 0.05
        and volt_err <= 1e-3
        and wall <= 10.0
    )
    acceptance_line(
        1,
        "four-area reproduction",
        ok,
        f"|df|={freq_err:.2e} Hz, |d angle|={angle_err:.2e} deg, |dV|={volt_err:.2e} p.u., runtime {wall:.2f} s",
    )
    assert ok


def test_c2_susceptance_recovery(acceptance_line):
    cfg = four_area_config()
    s = scenario_from_dict(cfg)
    fit = derive_line_susceptances(s.generators, s.equilibrium, s.network)
    expected = np.array([25.6, 33.1, 16.6, 21.0])
    dev = np.max(np.abs(fit.susceptance - expected))
    ok = dev <= 0.05 and fit.max_residual <= 5e-3
    acceptance_line(2, "susceptance recovery", ok, f"B={np.round(fit.susceptance, 4).tolist()}, residual {fit.max_residual:.2e}")
    assert ok


def test_c3_exact_decoupling(closed_trace, decoupled_trace, acceptance_line):
    gap = compare_traces(closed_trace, decoupled_trace)
    ok = gap <= 1e-8
    acceptance_line(3, "exact decoupling", ok, f"max |x_closed - x_decoupled| = {gap:.2e}")
    assert ok


def test_c4_equilibrium_invariance(four_area, acceptance_line):
    s = four_area.replace(
        init_angle_dev=np.zeros(4),
        init_freq_dev=np.zeros(4),
        init_volt_dev=np.zeros(4),
        init_x_angle=np.zeros(4),
        init_x_volt=np.zeros(4),
        sim=SimConfig(dt=1e-3, horizon=40.0),
    )
    tr = run_closed_loop(s)
    drift = float(np.max(np.abs(tr.states)))
    ok = tr.times[-1] == 40.0 and drift <= 1e-10
    acceptance_line(4, "equilibrium invariance", ok, f"max drift {drift:.2e} over 40 s")
    assert ok


def test_c5_lyapunov_monotone(four_area, closed_trace, acceptance_line):
    lyap = lyapunov_series(closed_trace, four_area)
    dt = closed_trace.dt
    rm, bad_m = check_lyapunov_decrease(lyap.w_minus, dt, c_tol=10.0)
    rp, bad_p = check_lyapunov_decrease(lyap.w_plus, dt, c_tol=10.0)
    w_min = min(lyap.w_minus.min(), lyap.w_plus.min())
    ok = bad_m == 0 and bad_p == 0 and w_min >= 0
    acceptance_line(
        5,
        "Lyapunov monotonicity",
        ok,
        f"max dW-/dt={rm:.2e}, max dW+/dt={rp:.2e}, bound {10 * dt**2:.0e}, min W={w_min:.2e}",
    )
    assert ok


def _random_trajectories(scenario, loop, role, count=20, dt=1e-3, T=10.0):
    """Drive the four-area subsystems with smooth random inputs and random initial states."""
    g, ac, vc = scenario.generators, scenario.angle_ctrl, scenario.volt_ctrl
    coeffs = decoupled_coefficients(g)
    out = []
    for k in range(count):
        rng = np.random.default_rng(1000 + k)
        u = smooth_input(k)
        if role == "node":
            i = k % scenario.node_count
        else:
            i = k % scenario.edge_count
        if (loop, role) == ("angle", "node"):
            t, X, U = drive(decoupled_angle_plant(g, i), u, dt, T, x0=rng.normal(0, 0.1, 2))
            S = 0.5 * g.inertia[i] * X[:, 0] ** 2
            traj = SubsystemTrajectory(t, S, U, X[:, 1], X[:, 1])
        elif (loop, role) == ("angle", "edge"):
            t, X, U = drive(angle_controller_statespace(ac, i), u, dt, T, x0=rng.normal(0, 0.1, 1))
            traj = SubsystemTrajectory(t, X[:, 0] ** 2 / (2 * ac.k1[i]), U, X[:, 0] - ac.k2[i] * U, X[:, 0])
        elif (loop, role) == ("voltage", "node"):
            t, X, U = drive(decoupled_voltage_plant(g, i), u, dt, T, x0=rng.normal(0, 0.05, 1))
            traj = SubsystemTrajectory(t, 0.5 * coeffs.gamma[i] * X[:, 0] ** 2, U, X[:, 0], X[:, 0])
        else:
            t, X, U = drive(voltage_controller_statespace(vc, i), u, dt, T, x0=rng.normal(0, 0.1, 1))
            traj = SubsystemTrajectory(t, vc.tau[i] * X[:, 0] ** 2 / (2 * vc.k1[i]), U, X[:, 0], X[:, 0])
        out.append((i, traj))
    return out


def test_c6_dissipation_suite(four_area, acceptance_line):
    details, ok = [], True
    for loop, role in (("angle", "node"), ("angle", "edge"), ("voltage", "node"), ("voltage", "edge")):
        violations, runs = 0, 0
        for i, traj in _random_trajectories(four_area, loop, role):
            kind, eps = analytic_kind(four_area, loop, role, i)
            violations += check_dissipation(traj, kind, eps).violation_count
            runs += 1
        ok &= runs == 20 and violations == 0
        details.append(f"{loop}-{role} {kind}: {violations} violations/{runs} runs")
    # falsification: voltage edge controllers claimed OSP with eps = 2/K1
    vc = four_area.volt_ctrl
    caught = sum(
        check_dissipation(traj, "osp", 2.0 / vc.k1[i]).violation_count > 0
        for i, traj in _random_trajectories(four_area, "voltage", "edge")
    )
    ok &= caught == 20
    details.append(f"falsification eps=2/K1 flagged {caught}/20")
    acceptance_line(6, "dissipation suite", ok, "; ".join(details))
    assert ok


def test_c7_random_graph_consensus(acceptance_line):
    results = consensus_sweep(range(50), horizon=200.0, dt=1e-3)
    worst_angle = max(r["consensus_angle"] for r in results)
    worst_volt = max(r["max_volt_dev"] for r in results)
    sizes = [r["nodes"] for r in results]
    ok = len(results) == 50 and all(r["ok"] for r in results) and max(sizes) <= 8
    ok &= worst_angle <= 1e-3 and worst_volt <= 1e-3
    acceptance_line(
        7,
        "random-graph consensus",
        ok,
        f"50 graphs, N in [{min(sizes)}, {max(sizes)}], worst angle metric {worst_angle:.2e}, worst |V dev| {worst_volt:.2e}",
    )
    assert ok


def test_c8_steady_state_signs(four_area, acceptance_line):
    ac, g = four_area.angle_ctrl, four_area.generators
    ok, parts = True, []
    for l in range(four_area.edge_count):
        margin = ac.k2[l] - ac.k1[l]
        r = steady_state_sign_check(angle_controller_statespace(ac, l), 1.0, "controller", gamma_c=margin)
        match = math.isclose(r.product, ac.k1[l] - ac.k2[l], abs_tol=1e-8)
        ok &= r.verdict == "pass" and match
        parts.append(f"line {l + 1}: uy={r.product:+.4f} ({r.verdict})")
    nodes = [steady_state_sign_check(decoupled_angle_plant(g, i), 1.0, "plant").verdict for i in range(4)]
    ok &= all(v == "vacuous" for v in nodes)
    parts.append(f"integrator nodes: {','.join(nodes)}")
    acceptance_line(8, "steady-state sign checks", ok, "; ".join(parts))
    assert ok


def test_c9_rk4_order(acceptance_line):
    def err(dt):
        x = np.array([1.0])
        for _ in range(int(round(1.0 / dt))):
            x = rk4_step(lambda v: -v, x, dt)
        return abs(x[0] - math.exp(-1.0))

    ratio = err(0.1) / err(0.05)
    ok = 13.0 <= ratio <= 19.0
    acceptance_line(9, "RK4 order", ok, f"error ratio {ratio:.2f}")
    assert ok
