import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridconsensus.control import battery_reactive_dispatch, battery_real_dispatch
from gridconsensus.generator import (
    EquilibriumSpec,
    GeneratorParams,
    ParameterError,
    VoltageCollapseError,
    consistent_equilibrium_inputs,
    decoupled_angle_plant,
    decoupled_coefficients,
    decoupled_voltage_plant,
    derive_line_susceptances,
    equilibrium_residual,
    full_plant_derivatives,
    reactive_generation,
    reactive_power_flow,
    real_power_flow,
)
from gridconsensus.topology import Network

TABLE_PG = np.array([8.076, 12.04, -14.38, -5.735])
TABLE_EX = np.array([7.824, 9.13, 8.437, 6.864])


def one_node(**kw):
    base = dict(
        inertia=1.0, damping=1.0, t_do_prime=1.0, x_d=2.0, x_d_prime=1.0,
        self_susceptance=-1.0, mech_power=0.0, excitation=1.0,
    )
    base.update(kw)
    return GeneratorParams(**base)


TWO = Network(2, [(1, 2)])


def test_params_validation():
    with pytest.raises(ParameterError, match="x_d must exceed"):
        one_node(x_d=1.0)
    with pytest.raises(ParameterError, match="self_susceptance"):
        one_node(self_susceptance=0.5)
    with pytest.raises(ParameterError, match="inertia"):
        one_node(inertia=0.0)


def test_real_power_flow_examples(four_area):
    assert np.all(real_power_flow([0.3, 0.3], [1, 1], TWO, [1.0]) == 0)
    pe = real_power_flow([math.pi / 6, 0.0], [1, 1], TWO, [1.0])
    assert pe == pytest.approx([0.5, -0.5])
    s = four_area
    pe = real_power_flow(s.equilibrium.angle, np.ones(4), s.network, s.lines)
    assert np.max(np.abs(pe - TABLE_PG)) <= 5e-3


def test_reactive_generation_examples(four_area):
    g = four_area.generators
    assert reactive_generation(g.excitation, g) == pytest.approx(np.zeros(4), abs=1e-15)
    qg = reactive_generation(np.ones(4), g)
    assert qg[0] == pytest.approx(6.824 / 1.59)
    assert qg[0] == pytest.approx(4.2918, abs=1e-4)
    assert qg[3] == pytest.approx(3.9093, abs=1e-4)


def test_reactive_power_flow_examples(four_area):
    iso = Network(1, [])
    assert reactive_power_flow([0.0], [1.0], iso, np.zeros(0), [-49.61]) == pytest.approx([49.61])
    qe = reactive_power_flow([0.2, 0.2], [1, 1], TWO, [1.0], [0.0, 0.0])
    assert qe[0] == pytest.approx(-1.0)
    s = four_area
    qe = reactive_power_flow(s.equilibrium.angle, np.ones(4), s.network, s.lines, s.generators.self_susceptance)
    assert np.max(np.abs(qe - reactive_generation(np.ones(4), s.generators))) <= 5e-3


def test_power_flow_dimension_mismatch():
    with pytest.raises(ValueError):
        real_power_flow([0.0, 0.0, 0.0], [1, 1], TWO, [1.0])
    with pytest.raises(ValueError):
        real_power_flow([0.0, 0.0], [1, 1], TWO, [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_real_power_sums_to_zero(seed):
    rng = np.random.default_rng(seed)
    ring = Network(4, [(1, 2), (2, 3), (3, 4), (4, 1), (1, 3)])
    pe = real_power_flow(rng.uniform(-3, 3, 4), rng.uniform(0.5, 1.5, 4), ring, rng.uniform(1, 40, 5))
    assert abs(pe.sum()) <= 1e-12 * max(1.0, np.abs(pe).max())


def hand_derivatives(adev, fdev, vdev, pst, qst, g, net, B, eq):
    """Node-by-node evaluation of the five model formulas, written out longhand."""
    n = net.node_count
    Bm = np.zeros((n, n))
    for (a, b), bl in zip(net.edges, B):
        Bm[a - 1, b - 1] = Bm[b - 1, a - 1] = bl
    for i in range(n):
        Bm[i, i] = g.self_susceptance[i]
    d = [eq.angle[i] + adev[i] for i in range(n)]
    V = [eq.v_nom + vdev[i] for i in range(n)]
    acc, vd = [], []
    for i in range(n):
        pe = sum(Bm[i, j] * V[i] * V[j] * math.sin(d[i] - d[j]) for j in range(n))
        qe = -sum(Bm[i, j] * V[i] * V[j] * math.cos(d[i] - d[j]) for j in range(n))
        gap = g.x_d[i] - g.x_d_prime[i]
        qg = V[i] * (g.excitation[i] - V[i]) / gap
        acc.append((g.mech_power[i] - pe + pst[i] - g.damping[i] * fdev[i]) / g.inertia[i])
        vd.append((qg - qe + qst[i]) / (g.t_do_prime[i] / gap * V[i]))
    return np.array(acc), np.array(vd)


def test_full_plant_matches_hand_evaluation(four_area):
    s = four_area
    adev = np.radians([10.0, -8.0, -3.0, -10.0])
    vdev = np.array([0.04, -0.04, -0.05, 0.05])
    fdev = np.zeros(4)
    z = np.zeros(4)
    got = full_plant_derivatives(adev, fdev, vdev, z, z, s.generators, s.network, s.lines, s.equilibrium)
    want = hand_derivatives(adev, fdev, vdev, z, z, s.generators, s.network, s.lines, s.equilibrium)
    assert np.allclose(got[0], want[0], rtol=1e-13, atol=1e-12)
    assert np.allclose(got[1], want[1], rtol=1e-13, atol=1e-12)


def test_full_plant_zero_at_consistent_equilibrium(four_area):
    s = four_area
    g = s.plant_params()
    z = np.zeros(4)
    acc, vd = full_plant_derivatives(z, z, z, z, z, g, s.network, s.lines, s.equilibrium)
    assert np.max(np.abs(acc)) <= 1e-13
    assert np.max(np.abs(vd)) <= 1e-13


def test_pure_damping_single_node():
    g = one_node(inertia=2.0, damping=0.5, excitation=1.5)
    eq = EquilibriumSpec(angle=[0.0])
    acc, _ = full_plant_derivatives([0.0], [1.0], [0.0], [0.0], [0.0], g, Network(1, []), np.zeros(0), eq)
    assert acc[0] == pytest.approx(-0.5 / 2.0)


def test_voltage_collapse_guard():
    g = one_node()
    eq = EquilibriumSpec(angle=[0.0])
    with pytest.raises(VoltageCollapseError, match="node 1"):
        full_plant_derivatives([0.0], [0.0], [-1.0], [0.0], [0.0], g, Network(1, []), np.zeros(0), eq)


def test_decoupled_angle_plant():
    A, B, C, _ = decoupled_angle_plant(one_node())
    # damping must stay positive, so the double integrator is approached as D -> 0
    ss = decoupled_angle_plant(GeneratorParams(1.0, 1e-12, 1.0, 2.0, 1.0, -1.0, 0.0, 1.0))
    assert np.allclose(ss.A, [[0, 0], [1, 0]], atol=1e-11)
    g = GeneratorParams([5.22], [1.6], [5.54], [1.84], [0.25], [-49.61], [0.0], [1.0])
    assert decoupled_angle_plant(g).A[0, 0] == pytest.approx(-0.30651, abs=1e-5)
    # C (jI - A)^-1 B = 1 / (j (j + 1)) for M = D = 1
    H = decoupled_angle_plant(one_node()).frequency_response(1j)[0, 0]
    assert abs(H) == pytest.approx(1 / math.sqrt(2))
    assert H == pytest.approx(1 / (1j * (1j + 1)))
    assert np.array_equal(C, [[0.0, 1.0]]) and np.array_equal(B, [[1.0], [0.0]])
    assert A[0, 0] == -1.0


def test_decoupled_voltage_plant():
    ss = decoupled_voltage_plant(GeneratorParams(1.0, 1.0, 1.0, 2.0, 1.0, -1e-300, 0.0, 1.0))
    assert ss.A[0, 0] == pytest.approx(-1.0) and ss.B[0, 0] == pytest.approx(1.0)
    g = GeneratorParams([5.22, 3.98], [1.6, 1.22], [5.54, 7.41], [1.84, 1.62], [0.25, 0.17],
                        [-49.61, -61.66], [0.0, 0.0], [1.0, 1.0])
    c = decoupled_coefficients(g)
    assert c.gamma[0] == pytest.approx(5.54 / 1.59)
    assert c.alpha[0] == pytest.approx(50.2389, abs=1e-4)
    ss = decoupled_voltage_plant(g, 0)
    assert ss.A[0, 0] == pytest.approx(-14.41875, abs=1e-4)
    assert ss.B[0, 0] == pytest.approx(0.28700, abs=1e-5)
    assert c.gamma[1] == pytest.approx(5.1103, abs=1e-4)
    assert c.alpha[1] == pytest.approx(62.3497, abs=1e-4)


def test_equilibrium_residual_single_node_by_construction():
    # Q_G(1) = (E - 1)/1 must equal -B_ii = 2
    g = one_node(self_susceptance=-2.0, excitation=3.0)
    dp, dq = equilibrium_residual(g, Network(1, []), np.zeros(0), EquilibriumSpec(angle=[0.4]))
    assert dp[0] == 0.0 and dq[0] == pytest.approx(0.0, abs=1e-15)


def test_equilibrium_residual_table(four_area):
    dp, dq = equilibrium_residual(four_area.generators, four_area.network, four_area.lines, four_area.equilibrium)
    assert max(np.abs(dp).max(), np.abs(dq).max()) <= 5e-3


def test_equilibrium_residual_perturbation_sign(four_area):
    s = four_area
    g = s.plant_params()
    h = math.radians(1.0)
    shifted = EquilibriumSpec(angle=s.equilibrium.angle + np.array([h, 0, 0, 0]), v_nom=1.0)
    dp, _ = equilibrium_residual(g, s.network, s.lines, shifted)
    # finite-difference slope of the real power leaving bus 1
    eps = 1e-6
    base = real_power_flow(s.equilibrium.angle, np.ones(4), s.network, s.lines)[0]
    up = real_power_flow(s.equilibrium.angle + [eps, 0, 0, 0], np.ones(4), s.network, s.lines)[0]
    slope = (up - base) / eps
    assert slope > 0
    assert dp[0] < 0
    assert dp[0] == pytest.approx(-slope * h, rel=0.02)


def lstsq_oracle(g, angles, edges, n):
    """Build the 2n balance equations one scalar at a time and solve the normal equations."""
    rows, rhs = [], []
    for i in range(n):
        row = []
        for a, b in edges:
            if i == a - 1:
                row.append(math.sin(angles[a - 1] - angles[b - 1]))
            elif i == b - 1:
                row.append(math.sin(angles[b - 1] - angles[a - 1]))
            else:
                row.append(0.0)
        rows.append(row)
        rhs.append(g.mech_power[i])
    for i in range(n):
        row = []
        for a, b in edges:
            row.append(-math.cos(angles[a - 1] - angles[b - 1]) if i in (a - 1, b - 1) else 0.0)
        rows.append(row)
        qg = (g.excitation[i] - 1.0) / (g.x_d[i] - g.x_d_prime[i])
        rhs.append(qg + g.self_susceptance[i])
    A, b = np.array(rows), np.array(rhs)
    return np.linalg.solve(A.T @ A, A.T @ b)


def test_derive_susceptances_two_node():
    g = GeneratorParams([1, 1], [1, 1], [1, 1], [2, 2], [1, 1], [-1, -1], [0.5, -0.5], [1, 1])
    eq = EquilibriumSpec(angle=[math.pi / 6, 0.0])
    fit = derive_line_susceptances(g, eq, TWO, use_reactive=False)
    assert fit.susceptance[0] == pytest.approx(1.0)


def test_derive_susceptances_four_area(four_area):
    s = four_area
    fit = derive_line_susceptances(s.generators, s.equilibrium, s.network)
    oracle = lstsq_oracle(s.generators, s.equilibrium.angle, s.network.edges, 4)
    assert np.allclose(fit.susceptance, oracle, atol=1e-9)
    assert np.allclose(fit.susceptance, [25.6, 33.1, 16.6, 21.0], atol=0.05)
    dp, dq = equilibrium_residual(s.generators, s.network, fit.susceptance, s.equilibrium)
    assert max(np.abs(dp).max(), np.abs(dq).max()) <= 5e-3
    assert fit.max_residual <= 5e-3


def test_derive_susceptances_scaling(four_area):
    s = four_area
    g = s.generators
    # doubling P_G, Q_G(V_nom) and B_ii keeps the angles and doubles every line
    qg = reactive_generation(np.ones(4), g)
    g2 = g.replace(mech_power=2 * g.mech_power, self_susceptance=2 * g.self_susceptance,
                   excitation=1.0 + 2 * qg * g.reactance_gap)
    a = derive_line_susceptances(g, s.equilibrium, s.network).susceptance
    b = derive_line_susceptances(g2, s.equilibrium, s.network, tol=1e-2).susceptance
    assert np.allclose(b, 2 * a, rtol=1e-12)


def test_derive_susceptances_inconsistent():
    g = GeneratorParams([1, 1], [1, 1], [1, 1], [2, 2], [1, 1], [-1, -1], [0.5, 0.5], [1, 1])
    with pytest.raises(ParameterError, match="residual"):
        derive_line_susceptances(g, EquilibriumSpec(angle=[math.pi / 6, 0.0]), TWO, use_reactive=False)


def test_consistent_inputs(four_area):
    s = four_area
    g = consistent_equilibrium_inputs(s.lines, s.equilibrium, s.generators, s.network)
    dp, dq = equilibrium_residual(g, s.network, s.lines, s.equilibrium)
    assert np.max(np.abs(dp)) <= 1e-13 and np.max(np.abs(dq)) <= 1e-12
    assert np.max(np.abs(g.mech_power - TABLE_PG)) <= 5e-3
    assert abs(g.excitation[0] - 7.824) <= 5e-3
    again = consistent_equilibrium_inputs(s.lines, s.equilibrium, g, s.network)
    assert np.allclose(again.mech_power, g.mech_power, atol=1e-14)
    assert np.allclose(again.excitation, g.excitation, atol=1e-14)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dispatch_decouples_exactly(four_area, seed):
    s = four_area
    rng = np.random.default_rng(seed)
    g = s.plant_params()
    c = decoupled_coefficients(g)
    adev = rng.uniform(-0.5, 0.5, 4)
    fdev = rng.uniform(-1, 1, 4)
    vdev = rng.uniform(-0.3, 0.3, 4)
    ua, uv = rng.uniform(-2, 2, 4), rng.uniform(-2, 2, 4)
    angles, volts = s.equilibrium.angle + adev, 1.0 + vdev
    pst = battery_real_dispatch(ua, angles, volts, s.network, s.lines, s.equilibrium)
    qst = battery_reactive_dispatch(uv, angles, volts, s.network, s.lines, s.equilibrium)
    acc, vd = full_plant_derivatives(adev, fdev, vdev, pst, qst, g, s.network, s.lines, s.equilibrium)
    assert np.allclose(acc, (-g.damping * fdev + ua) / g.inertia, rtol=0, atol=1e-12)
    assert np.allclose(vd, (-c.alpha * vdev + uv) / c.gamma, rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(0.1, 10), st.floats(0.1, 5), st.floats(0.5, 10), st.floats(0.01, 3), st.floats(0.1, 0.5),
    st.floats(-80, -0.01),
)
def test_alpha_gamma_positive(M, D, T, gap, xp, bii):
    g = GeneratorParams(M, D, T, xp + gap, xp, bii, 0.0, 1.0)
    c = decoupled_coefficients(g)
    assert c.alpha[0] > 0 and c.gamma[0] > 0
