"""Run reports, the full verification suite and trace serialization."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .analysis import (
    analytic_kind,
    check_dissipation,
    check_lyapunov_decrease,
    consensus_metric,
    consensus_series,
    lyapunov_positive_completed_square,
    lyapunov_series,
    steady_state_sign_check,
    subsystem_trajectory,
)
from .control import angle_controller_statespace, voltage_controller_statespace
from .generator import decoupled_angle_plant, decoupled_voltage_plant, equilibrium_residual
from .simulation import Scenario, Trace, compare_traces, run, run_decoupled
from .scenario import random_scenario

__all__ = [
    "CheckResult",
    "RunReport",
    "FREQ_TOL_HZ",
    "ANGLE_TOL_DEG",
    "VOLT_TOL",
    "DECOUPLING_TOL",
    "trace_columns",
    "write_trace",
    "build_report",
    "verify",
    "sweep_seed",
    "consensus_sweep",
]

FREQ_TOL_HZ = 1e-3
ANGLE_TOL_DEG = 0.05
VOLT_TOL = 1e-3
DECOUPLING_TOL = 1e-8
CONSENSUS_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    kind: str
    epsilon: float
    max_violation: float
    verdict: str  # pass / fail / vacuous

    @property
    def ok(self):
        return self.verdict in ("pass", "vacuous")


@dataclass
class RunReport:
    scenario: str
    mode: str
    final_consensus_angle: float
    final_consensus_voltage: float
    final_freq_error_hz: float
    final_angle_diff_error_deg: float
    final_voltage_error: float
    max_w_minus_rate: float
    max_w_plus_rate: float
    min_w_minus: float
    min_w_plus: float
    equilibrium_residual_p: float
    equilibrium_residual_q: float
    wall_time: float
    checks: list = field(default_factory=list)

    @property
    def ok(self):
        return all(c.ok for c in self.checks)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, default=float)

    def summary(self) -> str:
        lines = [f"scenario {self.scenario} ({self.mode}), wall time {self.wall_time:.2f} s"]
        for c in self.checks:
            lines.append(f"  [{c.verdict:>7}] {c.name:<40} kind={c.kind:<10} eps={c.epsilon:.4g} max={c.max_violation:.3g}")
        lines.append("overall: " + ("PASS" if self.ok else "FAIL"))
        return "\n".join(lines)


def trace_columns(trace: Trace, scenario: Scenario) -> dict:
    """Plot-ready columns in the documented CSV order."""
    n, m = scenario.node_count, scenario.edge_count
    lyap = lyapunov_series(trace, scenario)
    cols = {"t": trace.times}
    for prefix, arr, count in (
        ("delta", trace.angles, n),
        ("omega_hz", trace.frequency_hz, n),
        ("vmag", trace.volts, n),
        ("xcd", trace.x_angle, m),
        ("xcv", trace.x_volt, m),
        ("pst", trace.p_storage, n),
        ("qst", trace.q_storage, n),
    ):
        for k in range(count):
            cols[f"{prefix}_{k + 1}"] = arr[:, k]
    cols["w_minus"] = lyap.w_minus
    cols["w_plus"] = lyap.w_plus
    cols["consensus_delta"] = consensus_series(trace.angle_dev)
    cols["consensus_v"] = consensus_series(trace.volt_dev)
    return cols


def write_trace(path, trace: Trace, scenario: Scenario, fmt: str = "csv"):
    cols = trace_columns(trace, scenario)
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump({k: [float(f"{v:.12g}") for v in col] for k, col in cols.items()}, fh)
        return
    if fmt != "csv":
        raise ValueError(f"unknown trace format {fmt!r}")
    names = list(cols)
    data = np.column_stack([cols[k] for k in names])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in data:
            w.writerow([f"{v:.12g}" for v in row])


def _final_errors(trace, scenario):
    net, eq = scenario.network, scenario.equilibrium
    freq_err = float(np.max(np.abs(trace.freq_dev[-1]))) / (2 * math.pi)
    d = trace.angle_dev[-1]
    angle_err = float(np.max(np.abs(np.degrees(d[net.tails] - d[net.heads])))) if net.edge_count else 0.0
    volt_err = float(np.max(np.abs(trace.volt_dev[-1])))
    return freq_err, angle_err, volt_err


def build_report(trace: Trace, scenario: Scenario) -> RunReport:
    """Metrics of one trace plus its trajectory-based checks."""
    lyap = lyapunov_series(trace, scenario)
    dt = trace.dt
    wm_rate, wm_bad = check_lyapunov_decrease(lyap.w_minus, dt)
    wp_rate, wp_bad = check_lyapunov_decrease(lyap.w_plus, dt)
    dp, dq = equilibrium_residual(scenario.generators, scenario.network, scenario.lines, scenario.equilibrium)
    freq_err, angle_err, volt_err = _final_errors(trace, scenario)
    checks = [
        CheckResult("lyapunov W- non-increasing", "rate", 0.0, wm_rate, "pass" if wm_bad == 0 else "fail"),
        CheckResult("lyapunov W+ non-increasing", "rate", 0.0, wp_rate, "pass" if wp_bad == 0 else "fail"),
        CheckResult(
            "lyapunov W-, W+ non-negative",
            "sign",
            0.0,
            float(-min(lyap.w_minus.min(), lyap.w_plus.min())),
            "pass" if min(lyap.w_minus.min(), lyap.w_plus.min()) >= 0 else "fail",
        ),
    ]
    square = lyapunov_positive_completed_square(
        trace.freq_dev, trace.x_angle, trace.e_angle, scenario.generators, scenario.angle_ctrl
    )
    gap = float(np.max(np.abs(square - lyap.w_plus)))
    checks.append(CheckResult("W+ completed-square identity", "identity", 0.0, gap, "pass" if gap <= 1e-12 * max(1.0, float(np.max(np.abs(square)))) else "fail"))
    if trace.mode != "open_loop":
        for loop, role, count in (
            ("angle", "node", scenario.node_count),
            ("angle", "edge", scenario.edge_count),
            ("voltage", "node", scenario.node_count),
            ("voltage", "edge", scenario.edge_count),
        ):
            for i in range(count):
                kind, eps = analytic_kind(scenario, loop, role, i)
                r = check_dissipation(subsystem_trajectory(trace, scenario, loop, role, i), kind, eps)
                checks.append(
                    CheckResult(f"dissipation {loop} {role} {i + 1}", kind, eps, r.max_violation, "pass" if r.passed else "fail")
                )
    return RunReport(
        scenario=scenario.name,
        mode=trace.mode,
        final_consensus_angle=consensus_metric(trace.angle_dev[-1]),
        final_consensus_voltage=consensus_metric(trace.volt_dev[-1]),
        final_freq_error_hz=freq_err,
        final_angle_diff_error_deg=angle_err,
        final_voltage_error=volt_err,
        max_w_minus_rate=wm_rate,
        max_w_plus_rate=wp_rate,
        min_w_minus=float(lyap.w_minus.min()),
        min_w_plus=float(lyap.w_plus.min()),
        equilibrium_residual_p=float(np.max(np.abs(dp))),
        equilibrium_residual_q=float(np.max(np.abs(dq))),
        wall_time=trace.wall_time,
        checks=checks,
    )


def _sign_checks(scenario):
    out = []
    ac, vc, g = scenario.angle_ctrl, scenario.volt_ctrl, scenario.generators
    for l in range(scenario.edge_count):
        margin = float(ac.k2[l] - ac.k1[l])
        r = steady_state_sign_check(angle_controller_statespace(ac, l), 1.0, "controller", gamma_c=margin)
        out.append(CheckResult(f"steady-state sign angle edge {l + 1}", "controller", margin, r.product, r.verdict))
        r = steady_state_sign_check(voltage_controller_statespace(vc, l), 1.0, "plant")
        out.append(CheckResult(f"steady-state sign voltage edge {l + 1}", "passive", 0.0, r.product, r.verdict))
    for i in range(scenario.node_count):
        r = steady_state_sign_check(decoupled_angle_plant(g, i), 1.0, "plant")
        out.append(CheckResult(f"steady-state sign angle node {i + 1}", "plant", 0.0, r.product, r.verdict))
        r = steady_state_sign_check(decoupled_voltage_plant(g, i), 1.0, "plant")
        out.append(CheckResult(f"steady-state sign voltage node {i + 1}", "plant", 0.0, r.product, r.verdict))
    return out


def verify(scenario: Scenario) -> RunReport:
    """Simulate, then run every trajectory, steady-state and decoupling check."""
    start = time.perf_counter()
    trace = run(scenario)
    report = build_report(trace, scenario)
    if trace.mode == "closed_loop":
        for name, val, tol in (
            ("final frequency error [Hz]", report.final_freq_error_hz, FREQ_TOL_HZ),
            ("final angle-difference error [deg]", report.final_angle_diff_error_deg, ANGLE_TOL_DEG),
            ("final voltage error [p.u.]", report.final_voltage_error, VOLT_TOL),
        ):
            report.checks.append(CheckResult(name, "bound", tol, val, "pass" if val <= tol else "fail"))
    report.checks.extend(_sign_checks(scenario))
    if not scenario.raw_equilibrium and trace.mode == "closed_loop":
        gap = compare_traces(trace, run_decoupled(scenario))
        report.checks.append(
            CheckResult("closed loop vs decoupled loops", "max |dx|", DECOUPLING_TOL, gap, "pass" if gap <= DECOUPLING_TOL else "fail")
        )
    report.wall_time = time.perf_counter() - start
    return report


def sweep_seed(seed: int, horizon: float = 200.0, dt: float = 1e-3, max_nodes: int = 8) -> dict:
    """Run the decoupled loops of one random grid and report the final consensus metrics."""
    s = random_scenario(seed, max_nodes=max_nodes, horizon=horizon, dt=dt)
    tr = run_decoupled(s)
    angle = consensus_metric(tr.angle_dev[-1])
    volt = float(np.max(np.abs(tr.volt_dev[-1])))
    return {
        "seed": seed,
        "nodes": s.node_count,
        "edges": s.edge_count,
        "consensus_angle": angle,
        "max_volt_dev": volt,
        "ok": bool(angle <= CONSENSUS_TOL and volt <= CONSENSUS_TOL),
    }


def consensus_sweep(seeds, horizon: float = 200.0, dt: float = 1e-3, jobs: int = 1) -> list:
    seeds = list(seeds)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(sweep_seed, seeds, [horizon] * len(seeds), [dt] * len(seeds)))
    return [sweep_seed(s, horizon, dt) for s in seeds]
