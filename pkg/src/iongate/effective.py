"""Effective spin models, ideal gate targets and the polaron transformation.

These closed-form objects serve as references for the full spin-phonon
simulation: the XY couplings J_ij, the residual terms B_inm, the gate time,
the Bell targets of the XX phase gate, a numerical check of the polaron
(Lang-Firsov) operator identities, and a Trotterized spin-dependent force
demonstrator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .hamiltonian import SidebandCouplings, check_layout
from .operators import (OperatorMatrix, SpaceLayout, StateVector, embed, ladder_matrix,
                        matrix_function, single_qubit_matrix)


class ResonanceError(ValueError):
    """A mode detuning vanishes, so the perturbative couplings diverge."""


@dataclass(frozen=True)
class EffectiveCouplings:
    """Second-order couplings mediated by virtual phonons.

    Attributes
    ----------
    J : ndarray (N, N)
        J_ij = -sum_n F_in F_jn^* / delta_n, the XY flip-flop couplings.
    J_tilde : ndarray (N, N)
        J / 4, the XX couplings of the strongly driven model.
    B : ndarray (N, N, N)
        ``B[i, n, m] = -(1/2) F_in F_im^* (1/delta_n + 1/delta_m)``.
    t_gate : float
        pi / (8 J_tilde[pair]) for the selected pair (inf if it vanishes).
    """

    J: np.ndarray
    J_tilde: np.ndarray
    B: np.ndarray
    delta: np.ndarray
    pair: tuple[int, int] | None
    t_gate: float

    @property
    def J12(self) -> float:
        i, j = self.pair
        return float(self.J[i, j])

    def swap_time(self) -> float:
        """pi / (2 |J_12|), the full SWAP time of the undriven XY model."""
        return np.pi / (2 * abs(self.J12))


def compute_j_eff(c: SidebandCouplings, pair: tuple[int, int] | None = (0, 1)) -> EffectiveCouplings:
    """Effective couplings from the sideband couplings.

    Raises ResonanceError if any detuning is zero.
    """
    delta = np.asarray(c.delta, dtype=float)
    if np.any(delta == 0):
        raise ResonanceError(f"mode detuning vanishes for modes {np.flatnonzero(delta == 0).tolist()}")
    F = np.asarray(c.F)
    Jc = -np.einsum("in,jn,n->ij", F, F.conj(), 1.0 / delta)
    if np.max(np.abs(Jc.imag), initial=0.0) > 1e-9 * max(np.max(np.abs(Jc)), 1e-300):
        raise ValueError("effective coupling has a non-negligible imaginary part")
    J = Jc.real
    J = 0.5 * (J + J.T)
    inv = 1.0 / delta
    B = -0.5 * np.einsum("in,im->inm", F, F.conj()) * (inv[None, :, None] + inv[None, None, :])
    J_tilde = J / 4.0
    if pair is None or c.num_ions < 2:
        pair, t_gate = None, np.inf
    else:
        i, j = pair
        t_gate = np.pi / (8 * abs(J_tilde[i, j])) if J_tilde[i, j] != 0 else np.inf
    return EffectiveCouplings(J, J_tilde, B, delta, pair, float(t_gate))


def residual_hamiltonian(eff: EffectiveCouplings, layout: SpaceLayout, t: float = 0.0) -> OperatorMatrix:
    """sum_inm B_inm a_m^dag a_n s_i^z e^{-i(delta_n - delta_m) t}."""
    N, M = eff.B.shape[0], eff.B.shape[1]
    if layout.num_qubits != N or layout.num_modes != M:
        raise ValueError("layout does not match couplings")
    a = ladder_matrix(layout.n_max, "annihilate")
    ad = ladder_matrix(layout.n_max, "create")
    sz = single_qubit_matrix("z")
    h = sp.csr_matrix((layout.dim, layout.dim), dtype=complex)
    for n in range(M):
        for m in range(M):
            ph = np.exp(-1j * (eff.delta[n] - eff.delta[m]) * t)
            if n == m:
                mode_ops = {n: ad @ a}
            else:
                mode_ops = {m: ad, n: a}
            for i in range(N):
                if eff.B[i, n, m] != 0:
                    h = h + eff.B[i, n, m] * ph * embed(layout, {i: sz}, mode_ops)
    return OperatorMatrix(layout, h, hermitian=True)


def xy_swap_probabilities(eff: EffectiveCouplings, t) -> tuple[np.ndarray, np.ndarray]:
    """(P10, P01) of the XY model for the initial state |10>."""
    theta = eff.J12 * np.asarray(t, dtype=float)
    return np.cos(theta) ** 2, np.sin(theta) ** 2


# ---------------------------------------------------------------- ideal gate

_LABELS = ("00", "01", "10", "11")
BELL_NAMES = {"00": "phi+", "01": "psi+", "10": "psi-", "11": "phi-"}
_BY_NAME = {v: k for k, v in BELL_NAMES.items()}


def drive_axis(phi_d: float = 0.0) -> np.ndarray:
    """Single-qubit sigma^d = e^{i phi_d} s^+ + e^{-i phi_d} s^-."""
    up = single_qubit_matrix("+")
    m = np.exp(1j * phi_d) * up
    return m + m.conj().T


def ideal_gate(phi_d: float = 0.0) -> np.ndarray:
    """U_eff = exp(-i pi/4 sigma^d sigma^d) = (1 - i sigma^d sigma^d)/sqrt(2)."""
    s = drive_axis(phi_d)
    ss = np.kron(s, s)
    return (np.eye(4) - 1j * ss) / np.sqrt(2)


def _label_index(label: str) -> int:
    if label not in _LABELS:
        raise ValueError(f"two-qubit label must be one of {_LABELS}, got {label!r}")
    return _LABELS.index(label)


def ideal_gate_action(label: str, phi_d: float = 0.0) -> StateVector:
    """U_eff |label> as a spin-only state."""
    psi = ideal_gate(phi_d)[:, _label_index(label)]
    return StateVector(SpaceLayout(2, 0, 0), psi)


def bell_target(name_or_label: str, phi_d: float = 0.0) -> np.ndarray:
    """Bell target vector, by name (psi-, phi-, psi+, phi+) or input label."""
    key = name_or_label.lower().replace("⁻", "-").replace("⁺", "+")
    label = _BY_NAME.get(key, key)
    return ideal_gate_action(label, phi_d).amplitudes


# ------------------------------------------------------- polaron transform

@dataclass
class PolaronReport:
    """Residuals of the displacement and spin-rotation identities.

    ``residual_a`` and ``residual_sigma_y`` are the largest entries of the
    difference restricted to the truncation interior (every mode occupation
    at most n_max - 2).  The remaining fields are diagnostics.
    """

    residual_a: float
    residual_sigma_y: float
    residual_a_unpadded: float
    residual_sigma_y_unpadded: float
    residual_sigma_y_half_angle: float
    interior_size: int
    padding: int
    extras: dict = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return max(self.residual_a, self.residual_sigma_y)


def _polaron_parts(c: SidebandCouplings, layout: SpaceLayout):
    """S on the full space, a_n on the full space and Theta_i on the phonon factor."""
    a = ladder_matrix(layout.n_max, "annihilate")
    ad = ladder_matrix(layout.n_max, "create")
    sx = single_qubit_matrix("x")
    dim = layout.dim
    S = sp.csr_matrix((dim, dim), dtype=complex)
    for i in range(c.num_ions):
        for n in range(c.num_modes):
            S = S + (np.conj(c.F[i, n]) / (2 * c.delta[n])) * embed(layout, {i: sx}, {n: ad})
    S = S - S.conj().T
    a_ops = [embed(layout, mode_ops={n: a}) for n in range(c.num_modes)]
    phonons = SpaceLayout(0, layout.num_modes, layout.n_max)
    theta = []
    for i in range(c.num_ions):
        th = sp.csr_matrix((phonons.dim, phonons.dim), dtype=complex)
        for m in range(c.num_modes):
            th = th + (c.F[i, m] / (2 * c.delta[m])) * embed(phonons, mode_ops={m: a})
        theta.append((th - th.conj().T).toarray())
    return S, a_ops, theta


def _spin_factor(num_qubits: int, i: int, axis: str) -> np.ndarray:
    spin = SpaceLayout(num_qubits, 0, 0)
    return embed(spin, {i: single_qubit_matrix(axis)}).toarray()


def _identity_residuals(c, layout, keep, angle_scales=(2.0,)):
    S, a_ops, theta = _polaron_parts(c, layout)
    U = matrix_function(S.toarray(), "exp")
    Ud = U.conj().T
    nq = layout.num_qubits
    eye_ph = np.eye(layout.phonon_dim)
    sx_ops = [np.kron(_spin_factor(nq, j, "x"), eye_ph) for j in range(nq)]
    res_a = 0.0
    for n, an in enumerate(a_ops):
        lhs = U @ an.toarray() @ Ud
        rhs = an.toarray() - sum((np.conj(c.F[j, n]) / (2 * c.delta[n])) * sx_ops[j] for j in range(nq))
        res_a = max(res_a, float(np.max(np.abs((lhs - rhs)[np.ix_(keep, keep)]))))
    res_y = []
    lhs_y = [U @ np.kron(_spin_factor(nq, i, "y"), eye_ph) @ Ud for i in range(nq)]
    for scale in angle_scales:
        r = 0.0
        for i in range(nq):
            th = scale * theta[i]
            ch = matrix_function(th, "cosh")
            sh = matrix_function(th, "sinh")
            rhs = np.kron(_spin_factor(nq, i, "y"), ch) - 1j * np.kron(_spin_factor(nq, i, "z"), sh)
            r = max(r, float(np.max(np.abs((lhs_y[i] - rhs)[np.ix_(keep, keep)]))))
        res_y.append(r)
    return res_a, res_y


def _interior_indices(small: SpaceLayout, big: SpaceLayout, margin: int = 2) -> np.ndarray:
    """Indices in ``big`` of basis states of ``small`` with occupations <= n_max - margin."""
    occ = small.occupation_table()
    ok = np.all(occ <= small.n_max - margin, axis=1)
    out = []
    for s in range(small.spin_dim):
        spins = tuple(int(b) for b in np.binary_repr(s, width=small.num_qubits))
        for row in occ[ok]:
            out.append(big.index(spins, tuple(int(x) for x in row)))
    return np.array(sorted(out), dtype=int)


def polaron_transform_check(c: SidebandCouplings, layout: SpaceLayout, padding: int = 10,
                            max_dim: int = 4096) -> PolaronReport:
    """Numerically verify the polaron identities on the truncation interior.

    With U = e^S and S = sum_in (F_in^*/2 delta_n) s_i^x a_n^dag - h.c.,

        U a_n U^dag   = a_n - sum_j (F_jn^* / 2 delta_n) s_j^x
        U s_i^y U^dag = cosh(2 Theta_i) s_i^y - i sinh(2 Theta_i) s_i^z

    where Theta_i = sum_m F_im a_m / 2 delta_m - h.c.  Both sides are built
    in a Fock space enlarged by ``padding`` levels so that e^S is not
    distorted by the cutoff, then compared on the interior of ``layout``.
    The residuals without padding and with the rotation angle Theta_i
    (instead of 2 Theta_i) are reported as diagnostics.
    """
    check_layout(layout, c)
    if layout.n_max > 8:
        raise ValueError("polaron check is limited to n_max <= 8 (dense matrix functions)")
    big = SpaceLayout(layout.num_qubits, layout.num_modes, layout.n_max + padding)
    if big.dim > max_dim:
        raise ValueError(f"padded dimension {big.dim} exceeds max_dim={max_dim}")
    keep_big = _interior_indices(layout, big)
    keep_small = _interior_indices(layout, layout)
    res_a, (res_y, half_y) = _identity_residuals(c, big, keep_big, (2.0, 1.0))
    raw_a, (raw_y,) = _identity_residuals(c, layout, keep_small)
    return PolaronReport(res_a, res_y, raw_a, raw_y, half_y, len(keep_small), padding)


# ------------------------------------------------------------ force demo

@dataclass
class ForceDemoResult:
    """Phase-space trajectories <a>(t) of a single driven mode.

    ``branches`` maps the initial spin eigenvalue (+1, -1) to the complex
    array of <a> on the time grid.  For a single force axis the spin stays
    in its eigenstate, the trajectory is a coherent-state loop and
    ``area_phase`` holds the accumulated geometric phase per branch.
    """

    force: str
    times: np.ndarray
    branches: dict
    area_phase: dict
    quantum_phase: dict
    analytic_phase: float
    closure: dict


def _force_hamiltonian(axis: str, F: complex, delta: float, t: float, a, ad) -> np.ndarray:
    fa = F * np.exp(-1j * delta * t) * a
    if axis == "x":
        return np.kron(single_qubit_matrix("x"), 0.5 * (fa + fa.conj().T))
    if axis == "y":
        return np.kron(single_qubit_matrix("y"), 0.5j * (fa - fa.conj().T))
    raise ValueError(axis)


def trotter_force_demo(force: str = "x", steps: int = 2000, F: complex = 2 * np.pi * 50e3,
                       delta: float = 2 * np.pi * 800e3, periods: float = 1.0,
                       fock_dim: int = 12) -> ForceDemoResult:
    """Trotterized spin-dependent force on one ion and one mode.

    ``force`` selects the sigma^x part, the sigma^y part, or ``both``
    (their sum, which is the red sideband F s^+ a e^{-i delta t} + h.c.).
    Each step applies the exact exponential of the midpoint Hamiltonian.
    The initial phonon state is the vacuum and the spin starts in the
    +1 / -1 eigenstate of sigma^x (sigma^y for ``force='y'``).

    For a single axis the a^dag coefficient of the branch Hamiltonian is
    g_s(t) = s F^* e^{i delta t}/2 (times -i for y), the coherent amplitude
    follows alpha' = -i g and the accumulated phase is -int Re(g^* alpha)
    dt, which over one period is 2 pi |F|^2 / (4 delta |delta|).
    """
    if force not in ("x", "y", "both"):
        raise ValueError("force must be 'x', 'y' or 'both'")
    if delta == 0:
        raise ResonanceError("force detuning must be non-zero")
    T = periods * 2 * np.pi / abs(delta)
    dt = T / steps
    times = np.linspace(0.0, T, steps + 1)
    a = ladder_matrix(fock_dim - 1, "annihilate").toarray()
    ad = a.conj().T
    spin_axis = "y" if force == "y" else "x"
    vals, vecs = np.linalg.eigh(single_qubit_matrix(spin_axis))
    a_full = np.kron(np.eye(2), a)
    vac = np.zeros(fock_dim, dtype=complex)
    vac[0] = 1.0
    branches, area, qphase, closure = {}, {}, {}, {}
    axes = ("x", "y") if force == "both" else (force,)
    for s in (+1, -1):
        spin = vecs[:, int(np.argmin(np.abs(vals - s)))]
        psi0 = np.kron(spin, vac)
        psi = psi0.copy()
        traj = np.empty(steps + 1, dtype=complex)
        traj[0] = 0.0
        for k in range(steps):
            tm = (k + 0.5) * dt
            H = sum(_force_hamiltonian(ax, F, delta, tm, a, ad) for ax in axes)
            psi = scipy.linalg.expm(-1j * dt * H) @ psi
            traj[k + 1] = np.vdot(psi, a_full @ psi)
        branches[s] = traj
        closure[s] = float(abs(traj[-1] - traj[0]))
        if force != "both":
            dalpha = np.diff(traj)
            # D(b) D(a) = e^{i Im(b a^*)} D(a + b)
            area[s] = float(np.sum(np.imag(dalpha * np.conj(traj[:-1]))))
            qphase[s] = float(np.angle(np.vdot(psi0, psi)))
    analytic = 2 * np.pi * periods * abs(F) ** 2 / (4 * delta * abs(delta))
    return ForceDemoResult(force, times, branches, area, qphase, float(analytic), closure)
