"""Bell-state, entanglement and average channel fidelities.

A *channel runner* is any object with a method

    outputs(spin_inputs, noise_ids=None) -> list of (weight, group, X)

where ``spin_inputs`` is a (4, K) array of two-qubit input vectors and each
X is a (dim, K) array of pure output states (spin (x) phonon, any phonon
dimension).  The channel is the weighted mixture over the list; ``group``
labels statistically independent pieces (noise trajectories) so that
standard errors can be formed.  With ``noise_ids`` given (one per input
column), column k must be evolved under noise realization ``noise_ids[k]``
only; the weights then refer to the deterministic mixture alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .effective import ideal_gate
from .noise import OUParams, make_rng
from .operators import single_qubit_matrix
from .propagate import (PulseSchedule, SpectralPropagator, ThermalSpec, _initial_columns,
                        evolve_columns_noisy, run_noise_ensemble, thermal_branches)

D = 4


class FidelityConsistencyError(RuntimeError):
    """A fidelity left the physical range [0, 1]."""


@dataclass
class FidelityReport:
    bell_fidelity: float = np.nan
    t_f_at_max: float = np.nan
    entanglement_fidelity: float = np.nan
    entanglement_stderr: float = 0.0
    haar_estimate: float = np.nan
    haar_stderr: float = np.nan
    extras: dict = field(default_factory=dict)

    @property
    def error(self) -> float:
        return 1.0 - self.bell_fidelity

    @property
    def channel_fidelity(self) -> float:
        return channel_from_entanglement(self.entanglement_fidelity)


def channel_from_entanglement(F_e: float, d: int = D) -> float:
    return (d * F_e + 1.0) / (d + 1.0)


def _check_range(value: float, what: str, slack: float = 1e-9):
    if not (-slack <= value <= 1 + slack):
        raise FidelityConsistencyError(f"{what} = {value!r} outside [0, 1]")


# ------------------------------------------------------------ Bell state

def state_fidelity(rho: np.ndarray, target: np.ndarray) -> float:
    target = np.asarray(target, dtype=complex)
    return float(np.real(target.conj() @ rho @ target))


def parabolic_peak(x: np.ndarray, y: np.ndarray) -> tuple[float, float, int]:
    """Vertex of the parabola through the grid maximum and its neighbours.

    Returns (x_peak, y_peak, index_of_grid_max).  At the grid edge the grid
    point itself is returned.
    """
    k = int(np.argmax(y))
    if k == 0 or k == len(y) - 1:
        return float(x[k]), float(y[k]), k
    x0, x1, x2 = x[k - 1:k + 2]
    y0, y1, y2 = y[k - 1:k + 2]
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / denom
    if a >= 0:
        return float(x1), float(y1), k
    xv = -b / (2 * a)
    yv = a * xv**2 + b * xv + (y1 - a * x1**2 - b * x1)
    return float(xv), float(yv), k


def bell_fidelity(times: np.ndarray, fidelities: np.ndarray,
                  evaluate: Callable[[float], float] | None = None) -> FidelityReport:
    """Maximum of a fidelity scan with parabolic refinement.

    If ``evaluate`` is given the fidelity is recomputed at the refined time
    and the better of the grid maximum and that value is reported.
    """
    times = np.asarray(times, dtype=float)
    fidelities = np.asarray(fidelities, dtype=float)
    t_peak, f_peak, k = parabolic_peak(times, fidelities)
    extras = {"grid_max": float(fidelities[k]), "grid_t": float(times[k]), "parabola": f_peak}
    if evaluate is not None and t_peak != times[k]:
        f_eval = float(evaluate(t_peak))
        extras["refined_eval"] = f_eval
        if f_eval >= fidelities[k]:
            f_peak = f_eval
        else:
            t_peak, f_peak = float(times[k]), float(fidelities[k])
    elif evaluate is not None:
        f_peak = float(fidelities[k])
    f_peak = min(f_peak, 1.0) if f_peak <= 1 + 1e-9 else f_peak
    _check_range(f_peak, "Bell fidelity")
    extras["at_window_edge"] = k in (0, len(times) - 1)
    return FidelityReport(bell_fidelity=f_peak, t_f_at_max=t_peak, extras=extras)


# ---------------------------------------------------------------- runners

class IdealChannel:
    """U_eff (optionally followed by another spin unitary); no phonons."""

    def __init__(self, unitary: np.ndarray | None = None, phi_d: float = 0.0):
        self.U = ideal_gate(phi_d) if unitary is None else np.asarray(unitary, dtype=complex)

    def outputs(self, spin_inputs, noise_ids=None):
        return [(1.0, 0, self.U @ spin_inputs)]


class IdentityChannel(IdealChannel):
    def __init__(self):
        super().__init__(np.eye(4))


class PauliMixtureChannel:
    """Mixture of two-qubit Pauli strings; uniform weights give full depolarization."""

    def __init__(self, weights: dict[str, float] | None = None):
        if weights is None:
            weights = {a + b: 1 / 16 for a in "IXYZ" for b in "IXYZ"}
        self.weights = weights

    def outputs(self, spin_inputs, noise_ids=None):
        out = []
        for lab, w in self.weights.items():
            P = np.kron(single_qubit_matrix(lab[0].lower()), single_qubit_matrix(lab[1].lower()))
            out.append((w, 0, P @ spin_inputs))
        return out


class GateChannel:
    """The simulated gate: thermal phonons, optional OU noise, echo schedule."""

    def __init__(self, prop: SpectralPropagator, t_f: float, thermal: ThermalSpec,
                 schedule: PulseSchedule | None = None, ou: OUParams | None = None,
                 num_traj: int = 0, dt: float = 2.5e-7, threads: int = 1, chunk: int = 32):
        self.prop = prop
        self.t_f = t_f
        self.schedule = schedule if schedule is not None else PulseSchedule.echo(t_f, closing=True)
        self.branches = thermal_branches(thermal, prop.layout.num_modes)
        self.ou = ou if (ou is not None and ou.c > 0 and num_traj > 0) else None
        self.num_traj = num_traj if self.ou is not None else 0
        self.dt = dt
        self.threads = threads
        self.chunk = chunk

    def _columns(self, spin_inputs: np.ndarray) -> np.ndarray:
        """Initial columns ordered input-major, branch-minor."""
        layout = self.prop.layout
        blocks = [_initial_columns(layout, spin_inputs[:, k], self.branches)
                  for k in range(spin_inputs.shape[1])]
        return np.concatenate(blocks, axis=1)

    def _split(self, X: np.ndarray, K: int):
        """Regroup input-major columns into one (dim, K) array per branch."""
        B = len(self.branches.weights)
        return [X[:, b::B][:, :K] for b in range(B)]

    def outputs(self, spin_inputs, noise_ids=None):
        spin_inputs = np.asarray(spin_inputs, dtype=complex)
        K = spin_inputs.shape[1]
        X0 = self._columns(spin_inputs)
        w = self.branches.weights
        if self.ou is None:
            X = self.prop.evolve_schedule(X0, self.t_f, self.schedule)
            return [(w[b], 0, Xb) for b, Xb in enumerate(self._split(X, K))]
        if noise_ids is None:
            finals = run_noise_ensemble(self.prop, X0, self.t_f, self.dt, self.ou, range(self.num_traj),
                                        self.schedule, self.threads, self.chunk)
            out = []
            for tid, X in enumerate(finals):
                for b, Xb in enumerate(self._split(X, K)):
                    out.append((w[b] / self.num_traj, tid, Xb))
            return out
        # one noise realization per input column, shared by its branches
        B = len(w)
        col_traj = np.repeat(np.asarray(noise_ids, dtype=int), B)
        X = evolve_columns_noisy(self.prop, X0, col_traj, self.t_f, self.dt, self.ou, self.schedule,
                                 self.threads, self.chunk)
        return [(w[b], 0, Xb) for b, Xb in enumerate(self._split(X, K))]


# ---------------------------------------------------------- F_e and Haar

def _overlap_fe(X: np.ndarray, reference: np.ndarray) -> float:
    """(1/d^2) sum_k |sum_a <a, k| (U^dag (x) 1) x_a>|^2 for outputs x_a = X[:, a]."""
    M = X.T.reshape(D, D, -1)  # (input a, spin s, phonon k)
    R = np.einsum("ts,ask->atk", reference.conj().T, M)  # apply U^dag to the spin
    diag = np.einsum("aak->k", R)
    return float(np.sum(np.abs(diag) ** 2) / D**2)


def entanglement_fidelity(channel, reference: np.ndarray | None = None) -> tuple[float, float]:
    """F_e of the channel relative to ``reference`` (default U_eff).

    Built from the evolution of the four computational basis inputs; the
    cross terms follow by linearity.  Returns (F_e, stderr over noise
    trajectories).
    """
    U = ideal_gate() if reference is None else reference
    outs = channel.outputs(np.eye(D, dtype=complex))
    per_group: dict[int, float] = {}
    wsum: dict[int, float] = {}
    for w, g, X in outs:
        per_group[g] = per_group.get(g, 0.0) + w * _overlap_fe(X, U)
        wsum[g] = wsum.get(g, 0.0) + w
    total = sum(per_group.values())
    _check_range(total, "entanglement fidelity")
    groups = sorted(per_group)
    if len(groups) > 1:
        vals = np.array([per_group[g] / wsum[g] for g in groups])
        err = float(vals.std(ddof=1) / np.sqrt(len(vals)))
    else:
        err = 0.0
    return min(max(total, 0.0), 1.0), err


def haar_states(num_states: int, seed: int = 0) -> np.ndarray:
    """(4, num_states) Haar-random pure states from normalized complex normals."""
    rng = make_rng(seed, (0x4A,))
    z = rng.standard_normal((D, num_states)) + 1j * rng.standard_normal((D, num_states))
    return z / np.linalg.norm(z, axis=0, keepdims=True)


def haar_channel_fidelity(channel, num_states: int = 100, seed: int = 0,
                          reference: np.ndarray | None = None,
                          noise_offset: int = 1_000_000) -> tuple[float, float]:
    """Mean <psi| U^dag E(psi) U |psi> over Haar-random inputs, with stderr.

    Each input state is run under its own noise realization (ids starting at
    ``noise_offset`` so they do not reuse the trajectories of F_e).
    """
    if num_states < 10:
        raise ValueError("need at least 10 Haar states")
    U = ideal_gate() if reference is None else reference
    psi = haar_states(num_states, seed)
    targets = U @ psi
    outs = channel.outputs(psi, noise_ids=noise_offset + np.arange(num_states))
    vals = np.zeros(num_states)
    for w, _, X in outs:
        M = spin_blocks_generic(X)
        proj = np.einsum("sk,ksp->kp", targets.conj(), M)
        vals += w * np.sum(np.abs(proj) ** 2, axis=1)
    mean = float(vals.mean())
    err = float(vals.std(ddof=1) / np.sqrt(num_states))
    _check_range(mean, "Haar channel fidelity")
    return mean, err


def spin_blocks_generic(X: np.ndarray) -> np.ndarray:
    """(K, 4, phonon_dim) view of output columns of any phonon dimension."""
    return X.T.reshape(X.shape[1], D, -1)


def relation_check(F_e: float, F_e_err: float, haar: float, haar_err: float) -> tuple[float, float]:
    """Discrepancy |F_haar - (4F_e+1)/5| and its combined standard error."""
    pred = channel_from_entanglement(F_e)
    err = float(np.hypot(haar_err, D / (D + 1) * F_e_err))
    return abs(haar - pred), err
