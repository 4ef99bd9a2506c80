"""Acceptance criteria 1-10, one PASS/FAIL line per criterion.

Criteria made of several parts are split into separate tests; the line for
a criterion reads FAIL if any part fails.  Parts that the model cannot meet
as stated are kept at their stated tolerance and marked as strict xfail.
"""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from iongate.crystal import TrapParams, build_modes, compute_modes, solve_equilibrium
from iongate.effective import compute_j_eff, polaron_transform_check
from iongate.experiments.config import build_config
from iongate.experiments.pipelines import (run_channel_error, run_convergence, run_fig2a, run_fig2b, run_fig4a,
                                           run_fig4b)
from iongate.fidelity import IdealChannel, entanglement_fidelity, haar_channel_fidelity, relation_check
from iongate.hamiltonian import TWO_PI, interaction_hamiltonian, sideband_couplings
from iongate.noise import ou_from_T2
from iongate.operators import SpaceLayout, hermiticity_error, product_state
from iongate.propagate import SpectralPropagator, reduced_spin_density, run_noise_ensemble, step_edges

TITLES = {
    1: "normal modes", 2: "equilibrium positions", 3: "gate-time prediction", 4: "thermal robustness",
    5: "undriven swap damping", 6: "OU noise calibration", 7: "noise-protected gate",
    8: "channel-fidelity relation", 9: "polaron identities", 10: "property suite",
}
_PARTS: dict[int, list[tuple[bool, str]]] = {}


def record(k: int, ok: bool, detail: str):
    """Add one part of criterion k and refresh its summary line."""
    _PARTS.setdefault(k, []).append((bool(ok), detail))
    parts = _PARTS[k]
    status = "PASS" if all(p[0] for p in parts) else "FAIL"
    line = f"criterion {k:2d} [{TITLES[k]}]: {status} | " + "; ".join(d for _, d in parts)
    ACCEPTANCE_LINES[k] = line
    print(line)


# ----------------------------------------------------------------------- 1-3

def test_criterion_1_normal_modes(lab):
    t0 = time.perf_counter()
    m = build_modes(2, lab.omega_x, lab.omega_z)
    dt = time.perf_counter() - t0
    ratio = m.frequencies[1] / lab.omega_x
    ok = abs(ratio - 0.9682) <= 1e-4 and m.frequencies[0] == lab.omega_x and dt < 1
    record(1, ok, f"omega_zz/omega_x = {ratio:.6f}, COM exact = {m.frequencies[0] == lab.omega_x}, {dt:.3f} s")
    assert ok


def test_criterion_2_equilibrium(lab):
    z2 = solve_equilibrium(TrapParams(2, lab.omega_x, lab.omega_z)).positions
    z3 = solve_equilibrium(TrapParams(3, lab.omega_x, lab.omega_z)).positions
    r3 = (5 / 4) ** (1 / 3)
    e2 = np.max(np.abs(np.abs(z2) - 0.62996))
    e3 = np.max(np.abs(z3 - np.array([-r3, 0.0, r3])))
    ok = e2 <= 1e-6 and e3 <= 1e-6
    record(2, ok, f"N=2 +-{z2[1]:.7f} (dev {e2:.1e}), N=3 dev {e3:.1e}")
    assert ok


def _gate_time(lab, modes2, delta_L):
    t0 = time.perf_counter()
    eff = compute_j_eff(sideband_couplings(lab.with_(delta_L=delta_L), modes2))
    return eff.t_gate, time.perf_counter() - t0


@pytest.mark.xfail(strict=True, reason="red-detuned coupling at -800 kHz gives J~/2pi = 42.5 Hz, "
                                       "t_gate = 1.47 ms; see decisions ledger")
def test_criterion_3_gate_time_stated_detuning(lab, modes2):
    t_gate, dt = _gate_time(lab, modes2, -TWO_PI * 800e3)
    ok = 0.66e-3 <= t_gate <= 0.80e-3 and dt < 1
    record(3, ok, f"delta_L = -800 kHz: t_gate = {t_gate * 1e3:.4f} ms (window 0.66-0.80 ms), {dt:.3f} s")
    assert ok


def test_criterion_3_gate_time_blue_detuning(lab, modes2):
    t_gate, dt = _gate_time(lab, modes2, +TWO_PI * 800e3)
    ok = 0.66e-3 <= t_gate <= 0.80e-3 and dt < 1
    record(3, ok, f"delta_L = +800 kHz: t_gate = {t_gate * 1e3:.4f} ms, {dt:.3f} s")
    assert ok


# ------------------------------------------------------------------------- 4

@pytest.fixture(scope="module")
def bell_scan():
    cfg = build_config({"thermal": {"nbar": [0.0, 1.0]}, "numerics": {"n_max": 10}},
                       experiment="fig2b_thermal")
    t0 = time.perf_counter()
    res = run_fig2b(cfg)
    table = {(r[0], round(r[1])): r[2] for r in res.rows}
    return table, time.perf_counter() - t0


DRIVES = [0, 2_000_000, 3_800_000, 5_200_000]


def test_criterion_4_error_threshold(bell_scan):
    table, dt = bell_scan
    eps = table[(0.0, 5_200_000)]
    ok = eps < 1e-2
    record(4, ok, f"eps(nbar=0, 5.2 MHz) = {eps:.2e} < 1e-2 ({dt:.1f} s)")
    assert ok


def _monotone(table, nbar):
    eps = [table[(nbar, d)] for d in DRIVES]
    return all(b <= a for a, b in zip(eps, eps[1:])), eps


def test_criterion_4_monotone_nbar1(bell_scan):
    ok, eps = _monotone(bell_scan[0], 1.0)
    record(4, ok, "nbar=1 eps vs Omega_d: " + ", ".join(f"{e:.2e}" for e in eps))
    assert ok


@pytest.mark.xfail(strict=True, reason="at nbar=0 the undriven Bell error (no phonon mixing) lies below "
                                       "the weakly driven ones; see decisions ledger")
def test_criterion_4_monotone_nbar0(bell_scan):
    ok, eps = _monotone(bell_scan[0], 0.0)
    record(4, ok, "nbar=0 eps vs Omega_d: " + ", ".join(f"{e:.2e}" for e in eps))
    assert ok


# ------------------------------------------------------------------------- 5

def test_criterion_5_swap_damping():
    cfg = build_config({"thermal": {"nbar": [0.0, 1.0, 2.0]}}, experiment="fig2a_swap")
    t0 = time.perf_counter()
    res = run_fig2a(cfg)
    dt = time.perf_counter() - t0
    period = res.summary["nbar=0"]["P01_peak_time_over_swap"]
    amps = [res.summary[f"nbar={nb}"]["P01_at_swap_time"] for nb in (0, 1, 2)]
    ok = abs(period - 1) <= 0.02 and amps[0] > amps[1] > amps[2] and dt <= 600
    record(5, ok, f"peak/swap time = {period:.4f}, P01(t_swap) = "
                  + " > ".join(f"{a:.4f}" for a in amps) + f" ({dt:.1f} s)")
    assert ok


# ------------------------------------------------------------------------- 6

def test_criterion_6_coherence_fit():
    cfg = build_config({"ou": {"T2": [5e-3], "tau_ratio": 0.1, "coherence_traj": 5000}},
                       experiment="fig4a_coherence")
    t0 = time.perf_counter()
    res = run_fig4a(cfg)
    dt = time.perf_counter() - t0
    s = res.summary["T2=0.005"]
    ok = s["relative_error"] <= 0.05 and s["num_traj"] == 5000 and dt < 60
    record(6, ok, f"fitted T2 = {s['T2_fit'] * 1e3:.3f} ms ({100 * s['relative_error']:.1f}% off), {dt:.1f} s")
    assert ok


# ------------------------------------------------------------------------- 7

@pytest.mark.parametrize("num_traj, threshold", [(200, 1e-2), (20, 3e-2)])
def test_criterion_7_noise_protected_gate(num_traj, threshold):
    cfg = build_config({"ou": {"T2": [5e-3], "num_traj": num_traj}}, experiment="fig4b_noise")
    t0 = time.perf_counter()
    res = run_fig4b(cfg)
    dt = time.perf_counter() - t0
    s = res.summary["T2=0.005"]
    bound = threshold + 3 * s["stderr"]
    ok = s["bell_error"] < bound
    record(7, ok, f"{num_traj} traj: eps(phi-) = {s['bell_error']:.2e} +- {s['stderr']:.1e} < {bound:.2e} "
                  f"at t_f = {res.summary['t_f'] * 1e3:.4f} ms ({dt:.1f} s)")
    assert ok


# ------------------------------------------------------------------------- 8

def test_criterion_8_ideal_channel():
    F_e, F_err = entanglement_fidelity(IdealChannel())
    H, H_err = haar_channel_fidelity(IdealChannel(), 100, seed=7)
    diff, sig = relation_check(F_e, F_err, H, H_err)
    # both estimates are exact here, so the discrepancy is pure rounding
    ok = diff < max(3 * sig, 1e-12)
    record(8, ok, f"ideal: |diff| = {diff:.1e}")
    assert ok


def test_criterion_8_simulated_channels():
    cfg = build_config({"ou": {"T2": [5e-3, "inf"], "num_traj": 100}, "haar": {"num_states": 100}},
                       experiment="channel_error")
    res = run_channel_error(cfg)
    oks = []
    for key, name in (("T2=inf", "noiseless"), ("T2=0.005", "T2 = 5 ms")):
        s = res.summary[key]
        ok = s["discrepancy"] < 3 * s["stderr"]
        oks.append(ok)
        record(8, ok, f"{name}: |diff| = {s['discrepancy']:.2e} < 3 x {s['stderr']:.2e} (F_e = {s['F_e']:.5f})")
    assert all(oks)


# ------------------------------------------------------------------------- 9

def test_criterion_9_polaron(lab, modes2):
    c = sideband_couplings(lab, modes2)
    ratio = np.max(np.abs(c.F) / (2 * np.abs(c.delta)[None, :]))
    c = sideband_couplings(lab.with_(Omega_L=lab.Omega_L * 0.05 / ratio), modes2)
    rep = polaron_transform_check(c, SpaceLayout(2, 2, 8))
    ok = rep.residual_a < 1e-8 and rep.residual_sigma_y < 1e-8
    record(9, ok, f"|F/2delta| = 0.05, n_max = 8: residuals {rep.residual_a:.1e} (a), "
                  f"{rep.residual_sigma_y:.1e} (sigma_y)")
    assert ok


# ------------------------------------------------------------------------ 10

def test_criterion_10_property_suite(lab, modes2, couplings, small_prop):
    rng = np.random.default_rng(2024)
    checks = {}

    # unitarity: one noise realization shared by orthonormal columns
    X0 = np.linalg.qr(rng.standard_normal((small_prop.dim, 4)) + 1j * rng.standard_normal((small_prop.dim, 4)))[0]
    edges = step_edges(2e-4, 2.5e-7)
    F = np.repeat(rng.normal(0, 1e3, (len(edges) - 1, 1)), 4, axis=1)
    X = small_prop.evolve_noisy(X0, edges, F)
    checks["unitarity"] = np.max(np.abs(X.conj().T @ X - np.eye(4))) < 1e-9

    # hermiticity of the full Hamiltonian
    lay = SpaceLayout(2, 2, 4)
    herm = max(hermiticity_error(interaction_hamiltonian(lab, couplings, lay, t, F_noise=2e3).matrix)
               / np.abs(interaction_hamiltonian(lab, couplings, lay, t).matrix).max()
               for t in rng.uniform(0, 1e-3, 5))
    checks["hermiticity"] = herm < 1e-12

    # mode orthogonality for N = 2..8
    orth = 0.0
    for n in range(2, 9):
        trap = TrapParams(n, lab.omega_x, lab.omega_z)
        M = compute_modes(trap, solve_equilibrium(trap)).amplitudes
        orth = max(orth, np.max(np.abs(M @ M.T - np.eye(n))))
    checks["mode orthogonality"] = orth < 1e-12

    # decoherence-free subspace under global dephasing
    free = lab.with_(Omega_L=0.0, Omega_d=0.0)
    lay2 = SpaceLayout(2, 2, 2)
    prop0 = SpectralPropagator(free, sideband_couplings(free, modes2), lay2)
    dfs = np.array([0, 1, 1, 0]) / np.sqrt(2)
    psi = product_state(lay2, dfs).amplitudes[:, None]
    ou = ou_from_T2(0.5e-3, seed=9)
    finals = run_noise_ensemble(prop0, psi, 2e-3, 1e-5, ou, range(8))
    loss = max(1 - np.real(dfs @ reduced_spin_density(lay2, Xf, np.ones(1)) @ dfs) for Xf in finals)
    checks["DFS invariance"] = loss < 1e-10

    # laser-phase gauge invariance of the final Bell fidelity
    base = {"thermal": {"nbar": [0.0]}, "drive": {"Omega_d_list": [5.2e6]}, "numerics": {"n_max": 5}}
    e0 = run_fig2b(build_config(base, experiment="fig2b_thermal")).rows[0][2]
    e1 = run_fig2b(build_config({**base, "lab": {"phi_L": 1.1}}, experiment="fig2b_thermal")).rows[0][2]
    checks["gauge invariance"] = abs(e0 - e1) < 1e-6

    # dt halving of the noisy gate fidelity
    conv = run_convergence(build_config({"ou": {"T2": [5e-3]}}, experiment="custom"))
    drift = dict((r[0], r[1]) for r in conv.rows)["drift_dt"]
    checks["dt-halving drift"] = drift < 1e-6

    # seed determinism
    a = run_noise_ensemble(small_prop, X0, 5e-5, 2.5e-7, ou_from_T2(5e-3, seed=3), range(5))
    b = run_noise_ensemble(small_prop, X0, 5e-5, 2.5e-7, ou_from_T2(5e-3, seed=3), range(5), threads=2, chunk=4)
    checks["seed determinism"] = all(np.array_equal(x, y) for x, y in zip(a, b))

    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    record(10, ok, f"{len(checks) - len(failed)}/{len(checks)} properties hold"
                   + (f", failing: {', '.join(failed)}" if failed else f" (dt drift {drift:.1e})"))
    assert ok, failed
