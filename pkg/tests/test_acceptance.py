"""End-to-end acceptance checks, one pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are
printed at the end of the module.  Known shortfalls are marked ``xfail``
(strict), so they still print FAIL with the measured numbers.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from flexcable import analysis, io, nmpc, planner, pod, scenarios
from flexcable.control import PidController, PidGains, fixed_point_reference, sweep_reference
from flexcable.errors import NumericalBlowup
from flexcable.fdm import Disturbance, FdmConfig, FdmState, Simulator, cable_energy, simulate
from flexcable.params import CableParams, QuadParams
from flexcable.rom import RomModel

pytestmark = pytest.mark.slow

DATA = Path(__file__).parent / "data"
RESULTS: dict[int, list[str]] = {}


def report(n: int, ok: bool, detail: str):
    RESULTS.setdefault(n, []).append(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    tr = request.config.pluginmanager.get_plugin("terminalreporter")
    if tr is None:
        return
    tr.write_line("")
    tr.write_line("acceptance summary")
    for n in sorted(RESULTS):
        for line in RESULTS[n]:
            tr.write_line(line)


@pytest.fixture(scope="module")
def cfg():
    return scenarios.load_config("sim")


def test_01_steady_sag(cable, quad):
    t0 = time.perf_counter()
    ctrl = PidController(cable, quad, PidGains(), fixed_point_reference([0.0, 0.0, 0.0]))
    rec = simulate(FdmState.straight(100, cable.length), cable, quad, 60.0, ctrl, FdmConfig(100, 5e-4))
    wall = time.perf_counter() - t0
    tail = rec.positions[-1, -1, 2] - rec.positions[-1, 0, 2]
    expected = float(pod.steady_profile(cable.length, cable, quad.gravity))
    ok = abs(expected - (-1.0623868)) < 1e-6 and abs(tail - expected) < 2e-3 and wall < 300
    report(1, ok, f"tail z {tail:.6f} vs {expected:.7f} (|d| {abs(tail - expected) * 1e3:.3f} mm), wall {wall:.0f} s")
    assert ok


def test_02_stability_boundary(cable, quad, sweep_record):
    ten = sweep_record.times <= 10.0 + 1e-9
    stable = bool(np.all(np.isfinite(sweep_record.positions[ten])) and sweep_record.times[-1] >= 10.0)
    try:
        simulate(FdmState.straight(100, cable.length, direction=(-1.0, 0.0, 0.0)), cable, quad, 10.0,
                 PidController(cable, quad, PidGains(), sweep_reference), FdmConfig(100, 5e-3))
        raised, at = False, None
    except NumericalBlowup as exc:
        raised, at = True, exc.time
    report(2, stable and raised, f"0.5 ms stable over {sweep_record.times[-1]:.0f} s; 5 ms blow-up raised={raised} at t={at}")
    assert stable and raised


def test_03_mode_energy(bank):
    share = float(pod.energy_ratios(bank.sigma)[:3].sum())
    report(3, share >= 0.999, f"top-3 energy share {share:.6f} of {len(bank.sigma)} singular values")
    assert share >= 0.999


def test_04_orthonormality(bank, full_bank, sweep_tensor, bank_dir):
    banks = {"K=3": bank, "K=11": full_bank, "K=5": pod.modes_from_tensor(sweep_tensor, 5), "file": io.read_bank(bank_dir / "bank.csv")}
    worst = {}
    for k, b in banks.items():
        phi = b.modes[:, : b.K]
        worst[k] = float(np.max(np.abs(phi.T @ phi - np.eye(b.K))))
    ok = max(worst.values()) < 1e-9
    report(4, ok, "max |PhiT Phi - I| " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


@pytest.fixture(scope="module")
def validation(cfg, full_bank):
    return scenarios.rom_validation(cfg, full_bank, [1, 2, 3, 5])


def test_05a_fidelity_ordering(validation):
    em = validation.E_m
    ks = [1, 2, 3, 5]
    ok = all(em[b] <= em[a] * 1.05 for a, b in zip(ks, ks[1:]))
    report(5, ok, "E_m ordering " + ", ".join(f"K={k} {em[k]:.3f}" for k in ks))
    assert ok


@pytest.mark.xfail(strict=True, reason="gap ratio 0.28 with the default sweep bank; see decisions ledger")
def test_05b_fidelity_gap(validation):
    em = validation.E_m
    ratio = (em[3] - em[5]) / (em[1] - em[3])
    report(5, ratio < 0.2, f"(E_m3 - E_m5)/(E_m1 - E_m3) = {ratio:.3f} (needs < 0.2)")
    assert ratio < 0.2


def _slope(t, y):
    return float(np.polyfit(t, y, 1)[0])


def test_06_short_horizon_agreement(cfg, full_bank):
    res = scenarios.rom_validation(cfg, full_bank, [3], duration=60.0)
    t = res.times
    e1 = analysis.e1_series(res.fdm.positions, res.rom_positions[3])
    early, late = t <= 6.0, t >= 6.0
    s0, s1 = _slope(t[early], e1[early]), _slope(t[late], e1[late])
    ratio = abs(s1) / abs(s0)
    path = DATA / "e1_baseline.csv"
    if not path.exists():
        DATA.mkdir(exist_ok=True)
        io.write_matrix_csv(path, ["t", "E1"], np.column_stack([t, e1]))
        frozen = "baseline written"
    else:
        base = np.loadtxt(path, delimiter=",", skiprows=1)
        same = base.shape[0] == len(t) and np.allclose(base[:, 1], e1, rtol=0.1, atol=0.01 * np.max(np.abs(base[:, 1])))
        frozen = "baseline within 10%" if same else "baseline MISMATCH"
    ok = ratio < 0.1 and frozen != "baseline MISMATCH"
    report(6, ok, f"E1 slope 0-6 s {s0:.4f}, 6-60 s {s1:.5f}, ratio {ratio:.3f}; {frozen}")
    assert ok


@pytest.fixture(scope="module")
def regulation(cfg, bank):
    """NMPC and the better of two tuned PID gain sets (local tuner result, profile gains)."""
    tuned = json.loads((DATA / "tuned_gains.json").read_text())
    base = scenarios.gains_from(cfg)
    out = {}
    rec, X, x_score, _ = scenarios.regulation_rollout(cfg, bank, "nmpc")
    out["nmpc"] = scenarios.regulation_metrics(cfg, bank, rec, X, x_score)
    for name, g in tuned.items():
        rec, X, x_score, _ = scenarios.regulation_rollout(cfg, bank, "pid", base.with_position(np.r_[g["kp_pos"], g["kd_pos"]]))
        out[f"pid_{name}"] = scenarios.regulation_metrics(cfg, bank, rec, X, x_score)
    out["pid"] = min((v for k, v in out.items() if k.startswith("pid_")), key=lambda m: m["f_e"])
    return out


def test_07a_controller_comparison(regulation):
    n, p = regulation["nmpc"], regulation["pid"]
    ordered = n["f_e"] < p["f_e"]
    settled = n["a1_ratio_6s"] < 0.1
    pids = ", ".join(f"{k[4:]} {v['f_e']:.1f}" for k, v in regulation.items() if k.startswith("pid_"))
    report(7, ordered and settled, f"f_e NMPC {n['f_e']:.1f} < best tuned PID {p['f_e']:.1f} ({pids}): {ordered}; a1 ratio at 4 s {n['a1_ratio_4s']:.3f}, at 6 s {n['a1_ratio_6s']:.3f}")
    assert ordered and settled


@pytest.mark.xfail(strict=True, reason="tuned-PID f_e scale depends on the sweep bank; see decisions ledger")
def test_07b_pid_fe_scale(regulation):
    fe = regulation["pid"]["f_e"]
    ok = abs(fe / 3697.53 - 1.0) <= 0.25
    report(7, ok, f"tuned PID f_e {fe:.1f} vs 3697.53 ({100 * (fe / 3697.53 - 1):+.0f}%, needs within 25%)")
    assert ok


def test_08_tracking(cfg, bank):
    reference = scenarios.tracking_reference(cfg, bank)
    period = float(cfg["tracking"]["period"])
    Q = nmpc.regulation_weights(bank.K)
    es = {}
    for kind in ("pid", "nmpc"):
        rec, X, X_ref, _ = scenarios.tracking_rollout(cfg, bank, kind, reference=reference)
        sel = rec.times >= rec.times[-1] - 3 * period - 1e-9
        es[kind] = float(np.mean(analysis.metric_es(X[sel], X_ref[sel], Q)))
    ok = es["nmpc"] < es["pid"]
    report(8, ok, f"E_s over last 3 periods: NMPC {es['nmpc']:.3f}, PID {es['pid']:.3f}")
    assert ok


def test_09_window_crossing(cfg, bank):
    plan = scenarios.make_plan(cfg, bank)
    rec, rep, _ = scenarios.track_plan(cfg, bank, plan)
    ok = plan.report.feasible and plan.iterations <= 300 and rep.feasible and rep.margin > 0
    report(9, ok, f"plan feasible={plan.report.feasible} after {plan.iterations} iterations (margin {plan.report.margin:.3f}); FDM margin {rep.margin:.3f} over {len(rep.crossings)} crossings")
    assert ok


def test_10_identification(cfg):
    rec = scenarios.synthetic_recording(cfg)
    truth = cfg["identify"]["truth"]
    cable = scenarios.cable_from(cfg)
    res = analysis.identify_params(rec, cable, (truth["drag_coeff"] * 1.3, truth["young_modulus"] * 0.7), scenarios.release_experiment(cfg), 120)
    ec = res.drag_coeff / truth["drag_coeff"] - 1.0
    ee = res.young_modulus / truth["young_modulus"] - 1.0
    ok = abs(ec) < 0.05 and abs(ee) < 0.10
    report(10, ok, f"c_d error {100 * ec:+.2f}%, E error {100 * ee:+.2f}% from (x1.3, x0.7)")
    assert ok


def test_11_property_suites(bank, cable, quad, tmp_path):
    # energy: drag-free, gravity-free, head pinned
    c, q = CableParams(drag_coeff=0.0), QuadParams(gravity=0.0)
    st = FdmState.straight(50, 1.0, direction=(1, 0, 0))
    s = np.linspace(0, 1, 51)
    st.positions[:, 0] *= 1.0 + 0.02 * np.sin(np.pi * s)
    st.velocities[:, 2] = 0.3 * s
    st.velocities[0] = 0.0
    e0 = cable_energy(st, c)
    sim = Simulator(st, c, q, FdmConfig(50, 1e-4), head=lambda t: np.zeros((np.size(t), 3)))
    drift = 0.0
    for _ in range(100):
        sim.advance(100)
        drift = max(drift, abs(cable_energy(sim.state, c) - e0) / e0)
    energy_ok = drift < 0.01

    # project then reconstruct
    rng = np.random.default_rng(0)
    ident = 0.0
    for _ in range(20):
        x = rng.uniform(-2, 2, 6 * (bank.K + 1))
        state = pod.RomState.from_vector(x, bank.K)
        full_p, full_v = np.zeros((101, 3)), np.zeros((101, 3))
        full_p[::10], full_v[::10] = pod.reconstruct(state, bank), pod.reconstruct_velocity(state, bank)
        ident = max(ident, float(np.max(np.abs(pod.project(full_p, full_v, bank).to_vector() - x))))
    ident_ok = ident < 1e-9

    # OCP box feasibility and monotone descent
    model = RomModel.build(bank, cable)
    x_eq = nmpc.steady_reference(bank, cable, [0, 0, 0], refine=True)
    cfg = nmpc.OcpConfig.simulation(max_iter=60)
    ocp_ok = True
    for k in range(5):
        x0 = x_eq.copy()
        x0[3 * bank.K : 3 * bank.K + 3] += rng.uniform(-3, 3, 3)
        sol = nmpc.solve_ocp(x0, np.tile(x_eq, (cfg.H, 1)), cfg, model)
        ocp_ok &= bool(np.all(sol.controls >= cfg.u_lo) and np.all(sol.controls <= cfg.u_hi))
        ocp_ok &= bool(np.all(np.diff(sol.trace) <= 1e-9 * abs(sol.trace[0])))

    # PSO determinism per seed
    f = lambda x: float(np.sum((x - 0.3) ** 2))
    a = planner.pso_minimize(f, 4, -1, 1, swarm=15, iterations=30, seed=4)
    b = planner.pso_minimize(f, 4, -1, 1, swarm=15, iterations=30, seed=4)
    pso_ok = np.array_equal(a.x, b.x) and a.trace == b.trace

    # bitwise run replay
    def run(path):
        rec = simulate(FdmState.straight(20, 1.0, direction=(-1, 0, 0)), cable, quad, 0.5, disturbance=Disturbance(seed=7), config=FdmConfig(20, 5e-4))
        io.write_run(path, rec)
        return path.read_bytes()

    replay_ok = run(tmp_path / "a.csv") == run(tmp_path / "b.csv")
    ok = energy_ok and ident_ok and ocp_ok and pso_ok and replay_ok
    report(11, ok, f"energy drift {drift:.1e}, identity {ident:.1e}, OCP box+descent {ocp_ok}, PSO replay {pso_ok}, run replay {replay_ok}")
    assert ok


def test_12_solver_throughput(bank):
    cfg = scenarios.load_config("experiment", overrides=["regulation.start=horizontal", "regulation.target=[0.5,0.5,1.5]"])
    _, _, _, ctrl = scenarios.regulation_rollout(cfg, bank, "nmpc", duration=3.0)
    ms = np.array([row.solve_ms for row in ctrl.telemetry])
    med = float(np.median(ms))
    report(12, med < 10.0, f"3-step OCP median solve {med:.2f} ms over {len(ms)} ticks (max {ms.max():.1f} ms)")
    assert med < 10.0
