"""Spin-phonon Hamiltonian terms for a driven red-sideband gate.

All frequencies are angular (rad/s) and the Hamiltonians are in units of
hbar = 1.  Two frames are used:

* the interaction picture, in which the red sideband carries the phases
  exp(-i delta_n t) and the resonant carrier is static;
* the detuning frame, obtained by undoing the phonon rotation, in which

      H = sum_n delta_n a_n^dag a_n + carrier + sum_in (F_in s_i^+ a_n + h.c.)

  is time independent.  The two differ by the phonon-only unitary
  exp(i t sum_n delta_n a_n^dag a_n), so every spin observable agrees.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .crystal import NormalModes
from .operators import OperatorMatrix, SpaceLayout, boson, embed, ladder_matrix, pauli, single_qubit_matrix, zero

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class LabParams:
    """Physical drive and trap parameters, angular frequencies in rad/s.

    ``delta_L`` is signed: delta_n = delta_L + (omega_n - omega_x).
    ``omega0`` and ``B0`` are bookkeeping only in the rotating frame.
    """

    omega0: float
    omega_x: float
    omega_z: float
    eta: float
    delta_L: float
    Omega_L: float
    Omega_d: float
    phi_L: float = 0.0
    phi_d: float = 0.0
    B0: float = 0.0

    @classmethod
    def from_hz(cls, **kw) -> "LabParams":
        """Build from ordinary frequencies in Hz (angles stay in rad, B0 in T)."""
        freq_keys = {"omega0", "omega_x", "omega_z", "delta_L", "Omega_L", "Omega_d"}
        out = {k: (TWO_PI * float(v) if k in freq_keys else float(v)) for k, v in kw.items()}
        return cls(**out)

    @classmethod
    def default(cls, **overrides) -> "LabParams":
        """Reference setup: 1.8 GHz qubit, 4 MHz / 1 MHz trap, 5.2 MHz drive.

        The detuning sign defaults to positive: the laser sits 800 kHz from the
        COM sideband, and the zig-zag sideband is 127 kHz closer.
        """
        base = cls(
            omega0=TWO_PI * 1.8e9,
            omega_x=TWO_PI * 4e6,
            omega_z=TWO_PI * 1e6,
            eta=0.2,
            delta_L=TWO_PI * 800e3,
            Omega_L=TWO_PI * 500e3,
            Omega_d=TWO_PI * 5.2e6,
            B0=4e-3,
        )
        return replace(base, **overrides)

    def with_(self, **changes) -> "LabParams":
        return replace(self, **changes)

    def to_hz_dict(self) -> dict:
        freq_keys = ("omega0", "omega_x", "omega_z", "delta_L", "Omega_L", "Omega_d")
        d = {k: getattr(self, k) / TWO_PI for k in freq_keys}
        d.update(eta=self.eta, phi_L=self.phi_L, phi_d=self.phi_d, B0=self.B0)
        return d


@dataclass(frozen=True)
class SidebandCouplings:
    """F_in (rad/s), per-mode detunings and Lamb-Dicke factors."""

    F: np.ndarray
    delta: np.ndarray
    eta_n: np.ndarray

    @property
    def num_ions(self) -> int:
        return self.F.shape[0]

    @property
    def num_modes(self) -> int:
        return self.F.shape[1]

    def coupling_ratio(self) -> float:
        """max |F_in| / min |delta_n|, the perturbative small parameter."""
        d = np.min(np.abs(self.delta))
        return float(np.max(np.abs(self.F)) / d) if d > 0 else np.inf


def sideband_couplings(params: LabParams, modes: NormalModes) -> SidebandCouplings:
    """F_in = (i/2) Omega_L e^{i phi_L} eta_n M_in with eta_n = eta sqrt(omega_x/omega_n)."""
    if not np.isclose(modes.omega_x, params.omega_x, rtol=1e-12):
        raise ValueError("normal modes were computed for a different trap")
    w = np.asarray(modes.frequencies)
    eta_n = params.eta * np.sqrt(params.omega_x / w)
    F = 0.5j * params.Omega_L * np.exp(1j * params.phi_L) * modes.amplitudes * eta_n[None, :]
    delta = params.delta_L + (w - params.omega_x)
    return SidebandCouplings(F, delta, eta_n)


def check_layout(layout: SpaceLayout, c: SidebandCouplings):
    if layout.num_qubits != c.num_ions or layout.num_modes != c.num_modes:
        raise ValueError(
            f"layout ({layout.num_qubits} qubits, {layout.num_modes} modes) does not match "
            f"couplings ({c.num_ions} ions, {c.num_modes} modes)")


def _sideband_parts(c: SidebandCouplings, layout: SpaceLayout) -> list[sp.csr_matrix]:
    """Per-mode operators K_n = sum_i F_in s_i^+ a_n (without the h.c.)."""
    check_layout(layout, c)
    sp_plus = single_qubit_matrix("+")
    a = ladder_matrix(layout.n_max, "annihilate")
    parts = []
    for n in range(c.num_modes):
        k = sp.csr_matrix((layout.dim, layout.dim), dtype=complex)
        for i in range(c.num_ions):
            if c.F[i, n] != 0:
                k = k + c.F[i, n] * embed(layout, {i: sp_plus}, {n: a})
        parts.append(k.tocsr())
    return parts


def build_red_sideband(c: SidebandCouplings, layout: SpaceLayout, t: float) -> OperatorMatrix:
    """sum_in F_in s_i^+ a_n e^{-i delta_n t} + h.c. (interaction picture)."""
    if t < 0:
        raise ValueError("time must be non-negative")
    h = sp.csr_matrix((layout.dim, layout.dim), dtype=complex)
    for n, k in enumerate(_sideband_parts(c, layout)):
        kt = k * np.exp(-1j * c.delta[n] * t)
        h = h + kt + kt.conj().T
    return OperatorMatrix(layout, h, hermitian=True)


def build_carrier(params: LabParams, layout: SpaceLayout, t: float = 0.0,
                  include_counter_rotating: bool = False) -> OperatorMatrix:
    """(Omega_d/2) sum_i (e^{i phi_d} s_i^+ + h.c.) for a resonant drive.

    With ``include_counter_rotating`` the term oscillating at twice the
    qubit frequency, (Omega_d/2) e^{-i phi_d} e^{2 i omega0 t} s_i^+ + h.c.,
    is added as well.
    """
    h = sp.csr_matrix((layout.dim, layout.dim), dtype=complex)
    if params.Omega_d == 0:
        return OperatorMatrix(layout, h, hermitian=True)
    coef = 0.5 * params.Omega_d * np.exp(1j * params.phi_d)
    if include_counter_rotating:
        coef_cr = 0.5 * params.Omega_d * np.exp(-1j * params.phi_d) * np.exp(2j * params.omega0 * t)
    for i in range(layout.num_qubits):
        up = pauli(layout, i, "+").matrix
        k = coef * up
        if include_counter_rotating:
            k = k + coef_cr * up
        h = h + k + k.conj().T
    return OperatorMatrix(layout, h, hermitian=True)


def build_noise_term(layout: SpaceLayout, F_value: float) -> OperatorMatrix:
    """Global dephasing (F/2) sum_i s_i^z."""
    if F_value == 0:
        return zero(layout)
    h = sum((pauli(layout, i, "z").matrix for i in range(layout.num_qubits)),
            sp.csr_matrix((layout.dim, layout.dim), dtype=complex))
    return OperatorMatrix(layout, 0.5 * float(F_value) * h, hermitian=True)


def phonon_frame_generator(c: SidebandCouplings, layout: SpaceLayout) -> OperatorMatrix:
    """K = sum_n delta_n a_n^dag a_n, the generator linking the two frames."""
    check_layout(layout, c)
    h = sp.csr_matrix((layout.dim, layout.dim), dtype=complex)
    for n in range(layout.num_modes):
        h = h + c.delta[n] * boson(layout, n, "number").matrix
    return OperatorMatrix(layout, h, hermitian=True)


def detuning_frame_hamiltonian(params: LabParams, c: SidebandCouplings,
                               layout: SpaceLayout) -> OperatorMatrix:
    """Time-independent Hamiltonian K + carrier + sum_n (K_n + K_n^dag)."""
    h = phonon_frame_generator(c, layout).matrix + build_carrier(params, layout).matrix
    for k in _sideband_parts(c, layout):
        h = h + k + k.conj().T
    return OperatorMatrix(layout, h, hermitian=True)


def interaction_hamiltonian(params: LabParams, c: SidebandCouplings, layout: SpaceLayout,
                            t: float, F_noise: float = 0.0,
                            include_counter_rotating: bool = False) -> OperatorMatrix:
    """Full H(t) in the interaction picture: carrier + red sideband + noise."""
    h = build_carrier(params, layout, t, include_counter_rotating) + build_red_sideband(c, layout, t)
    if F_noise != 0:
        h = h + build_noise_term(layout, F_noise)
    return h
