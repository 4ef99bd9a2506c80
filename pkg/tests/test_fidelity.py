import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from iongate.effective import bell_target, ideal_gate, ideal_gate_action
from iongate.fidelity import (FidelityConsistencyError, GateChannel, IdealChannel, IdentityChannel,
                              PauliMixtureChannel, bell_fidelity, channel_from_entanglement,
                              entanglement_fidelity, haar_channel_fidelity, haar_states, parabolic_peak,
                              relation_check, state_fidelity)
from iongate.hamiltonian import sideband_couplings
from iongate.noise import ou_from_T2
from iongate.operators import SpaceLayout
from iongate.propagate import SpectralPropagator, ThermalSpec

PAULI = {"I": np.eye(2), "X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, 1j], [-1j, 0]]),
         "Z": np.diag([-1, 1])}


def test_ideal_channel_is_perfect():
    F_e, err = entanglement_fidelity(IdealChannel())
    assert F_e == pytest.approx(1.0, abs=1e-14) and err == 0
    mean, err = haar_channel_fidelity(IdealChannel(), 50)
    assert mean == pytest.approx(1.0, abs=1e-14) and err < 1e-14


def test_identity_channel():
    # |Tr(U)/4|^2 = cos^2(pi/4)
    F_e, _ = entanglement_fidelity(IdentityChannel())
    assert F_e == pytest.approx(0.5, abs=1e-14)
    assert channel_from_entanglement(F_e) == pytest.approx(0.6)
    mean, err = haar_channel_fidelity(IdentityChannel(), 400, seed=3)
    assert abs(mean - 0.6) < 3 * err


def test_full_depolarization():
    F_e, _ = entanglement_fidelity(PauliMixtureChannel())
    assert F_e == pytest.approx(1 / 16, abs=1e-14)


@settings(max_examples=8, deadline=None, derandomize=True)
@given(st.lists(st.floats(0.0, 1.0), min_size=16, max_size=16).filter(lambda w: sum(w) > 0.1))
def test_pauli_mixture_obeys_channel_relation(w):
    labels = [a + b for a in "IXYZ" for b in "IXYZ"]
    weights = {lab: x / sum(w) for lab, x in zip(labels, w)}
    ch = PauliMixtureChannel(weights)
    F_e, F_err = entanglement_fidelity(ch)
    # closed form: sum_P w_P |Tr(U^dag P)/4|^2
    U = ideal_gate()
    exact = sum(p * abs(np.trace(U.conj().T @ np.kron(PAULI[k[0]], PAULI[k[1]])) / 4) ** 2
                for k, p in weights.items())
    assert F_e == pytest.approx(exact, abs=1e-12)
    mean, err = haar_channel_fidelity(ch, 200, seed=1)
    diff, sigma = relation_check(F_e, F_err, mean, err)
    assert diff < 4 * sigma


def test_haar_states_normalized_and_seeded():
    a = haar_states(30, seed=2)
    np.testing.assert_allclose(np.linalg.norm(a, axis=0), 1.0)
    np.testing.assert_array_equal(a, haar_states(30, seed=2))
    with pytest.raises(ValueError):
        haar_channel_fidelity(IdealChannel(), 5)


def test_relation_error_propagation():
    diff, sigma = relation_check(0.9, 0.01, 0.92, 0.0)
    assert diff == pytest.approx(0.0, abs=1e-15)
    assert sigma == pytest.approx(0.008)


def test_carrier_only_limit_matches_unitary_overlap(lab, modes2):
    p = lab.with_(Omega_L=0.0)
    lay = SpaceLayout(2, 2, 1)
    prop = SpectralPropagator(p, sideband_couplings(p, modes2), lay)
    t_f = 0.37e-6
    ch = GateChannel(prop, t_f, ThermalSpec(0.0, 1))
    F_e, _ = entanglement_fidelity(ch)
    sx = np.kron(PAULI["X"], np.eye(2)) + np.kron(np.eye(2), PAULI["X"])
    half = scipy.linalg.expm(-0.5j * p.Omega_d * sx * t_f / 2)
    ZZ = np.kron(PAULI["Z"], PAULI["Z"])
    U_sim = ZZ @ half @ ZZ @ half
    assert F_e == pytest.approx(abs(np.trace(ideal_gate().conj().T @ U_sim) / 4) ** 2, abs=1e-12)


def test_noise_does_not_raise_fidelity(small_prop, eff):
    t_f = eff.t_gate
    clean, _ = entanglement_fidelity(GateChannel(small_prop, t_f, ThermalSpec(0.0, 3)))
    noisy, err = entanglement_fidelity(GateChannel(small_prop, t_f, ThermalSpec(0.0, 3),
                                                   ou=ou_from_T2(0.5e-3, seed=4), num_traj=8, dt=5e-7))
    assert noisy <= clean + 3 * err
    assert 0 <= noisy <= 1


def test_dephased_bell_state_has_half_fidelity():
    rho = np.diag([0.5, 0, 0, 0.5])
    assert state_fidelity(rho, bell_target("phi+")) == pytest.approx(0.5)
    assert state_fidelity(rho, bell_target("psi+")) == 0


def test_gate_maps_excited_pair_to_target():
    psi = ideal_gate_action("11").amplitudes
    assert state_fidelity(np.outer(psi, psi.conj()), bell_target("11")) == pytest.approx(1.0)


def test_peak_interpolation():
    t = np.linspace(0.6e-3, 0.8e-3, 11)
    f = 1 - 1e6 * (t - 0.7026e-3) ** 2
    r = bell_fidelity(t, f)
    assert r.t_f_at_max == pytest.approx(0.7026e-3, rel=1e-9)
    assert r.bell_fidelity == pytest.approx(1.0) and not r.extras["at_window_edge"]
    assert r.error == pytest.approx(0.0, abs=1e-12)
    r = bell_fidelity(t, f, evaluate=lambda x: 1 - 1e6 * (x - 0.7026e-3) ** 2)
    assert r.extras["refined_eval"] >= r.extras["grid_max"]


def test_monotone_scan_flags_window_edge():
    t = np.linspace(0, 1, 5)
    r = bell_fidelity(t, t * 0.5)
    assert r.extras["at_window_edge"] and r.t_f_at_max == 1.0
    assert parabolic_peak(t, -t)[2] == 0


def test_unphysical_fidelity_raises():
    with pytest.raises(FidelityConsistencyError):
        bell_fidelity(np.arange(3.0), np.array([0.2, 1.3, 0.1]))


def test_drive_phase_moves_reference():
    U = ideal_gate(0.4)
    F_e, _ = entanglement_fidelity(IdealChannel(phi_d=0.4), reference=U)
    assert F_e == pytest.approx(1.0)
    F_e, _ = entanglement_fidelity(IdealChannel(phi_d=0.4))
    assert F_e < 1 - 1e-3
