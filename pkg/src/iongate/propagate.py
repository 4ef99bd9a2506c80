"""Time evolution of the spin-phonon system.

The production integrator works in the detuning frame, where the noiseless
Hamiltonian H0 is time independent (see :mod:`iongate.hamiltonian`):

* noiseless evolution is exact, U(t) = V exp(-i E t) V^dag from one
  Hermitian eigendecomposition;
* the global dephasing term F(t) D with D = (1/2) sum_i s_i^z is handled in
  the interaction picture of H0.  With F constant over a step h, the
  first-order Magnus generator is F A with
  A_kl = D_kl (e^{i w_kl h} - 1) / (i w_kl) in the eigenbasis of H0.
  Diagonalizing A = W diag(lam) W^dag, one step in the coordinates
  y = W^dag V^dag psi reads y <- Q (exp(-i lam F) * y) with
  Q = W^dag diag(e^{-i E h}) W, which is exactly unitary and shares Q
  between all noise trajectories so they can be stepped as one batch.

A classical RK4 integrator in the interaction picture is kept as an
independent reference (:func:`evolve_rk4`).

Columns of every state matrix are independent states (branches, inputs or
noise trajectories).
"""
from __future__ import annotations

import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .hamiltonian import (LabParams, SidebandCouplings, _sideband_parts, build_carrier,
                          check_layout, detuning_frame_hamiltonian)
from .noise import OUParams, make_rng
from .operators import SpaceLayout, StateVector, embed, single_qubit_matrix, total_spin_z


class StepSizeError(ValueError):
    """Requested time step is too coarse for the integrator."""


# ------------------------------------------------------------------ pulses

@dataclass(frozen=True)
class Pulse:
    time: float
    label: str


_SINGLE = re.compile(r"^([XYZ])(\d+)$")


def pulse_matrix(label: str, num_qubits: int) -> np.ndarray:
    """Spin-space matrix of a pulse label.

    Accepted labels: ``X0``/``Y1``/``Z0`` (pi pulse about one axis, written
    as the Pauli matrix since the global phase is irrelevant), a full Pauli
    string such as ``ZZ`` or ``XI``, or ``echo`` for Z on every qubit.
    """
    spin = SpaceLayout(num_qubits, 0, 0)
    lab = label.strip().upper()
    if lab == "ECHO":
        lab = "Z" * num_qubits
    m = _SINGLE.match(lab)
    if m:
        q = int(m.group(2))
        if q >= num_qubits:
            raise ValueError(f"pulse {label!r} addresses a missing qubit")
        return embed(spin, {q: single_qubit_matrix(m.group(1))}).toarray()
    if len(lab) == num_qubits and set(lab) <= set("IXYZ"):
        ops = {q: single_qubit_matrix(ch) for q, ch in enumerate(lab) if ch != "I"}
        return embed(spin, ops).toarray()
    raise ValueError(f"unrecognized pulse label {label!r}")


@dataclass(frozen=True)
class PulseSchedule:
    pulses: tuple[Pulse, ...] = ()

    def __post_init__(self):
        times = [p.time for p in self.pulses]
        if any(t < 0 for t in times):
            raise ValueError("pulse times must be non-negative")
        if times != sorted(times):
            raise ValueError("pulses must be sorted in time")

    @classmethod
    def echo(cls, t_final: float, closing: bool = False) -> "PulseSchedule":
        """ZZ refocusing pulse at t_final/2, optionally a second one at t_final.

        The closing pulse undoes the net ZZ so that the overall operation
        approximates U_eff itself rather than ZZ U_eff.
        """
        pulses = [Pulse(0.5 * t_final, "ZZ")]
        if closing:
            pulses.append(Pulse(t_final, "ZZ"))
        return cls(tuple(pulses))

    def validate(self, t_final: float):
        for p in self.pulses:
            if p.time > t_final * (1 + 1e-12):
                raise ValueError(f"pulse at {p.time} lies beyond t_final={t_final}")

    def segments(self, t_final: float) -> list[tuple[float, list[str]]]:
        """Split [0, t_final] into (duration, pulses applied after it)."""
        self.validate(t_final)
        out, t0 = [(0.0, [])], 0.0
        for p in self.pulses:
            t = min(p.time, t_final)
            if t > t0:
                out.append((t - t0, []))
                t0 = t
            out[-1][1].append(p.label)
        if t_final > t0:
            out.append((t_final - t0, []))
        return out


# ----------------------------------------------------------------- thermal

@dataclass(frozen=True)
class ThermalSpec:
    nbar: float
    n_max: int
    tol: float = 1e-6

    def mode_weights(self) -> np.ndarray:
        """p_n = nbar^n / (1 + nbar)^(n+1) for n = 0..n_max (not renormalized)."""
        n = np.arange(self.n_max + 1)
        if self.nbar == 0:
            return (n == 0).astype(float)
        q = self.nbar / (1 + self.nbar)
        return q**n / (1 + self.nbar)


@dataclass
class ThermalBranches:
    occupations: list[tuple[int, ...]]
    weights: np.ndarray
    retained_mass: float
    cutoff_defect: float
    warning: str | None = None


def thermal_branches(spec: ThermalSpec, num_modes: int) -> ThermalBranches:
    """Fock-basis branches of a product thermal state, largest weight first.

    Branches are added until the retained joint probability reaches
    1 - tol or the Fock space is exhausted.  The returned weights are
    renormalized to sum to one; ``retained_mass`` is the untruncated
    probability they represent.
    """
    p = spec.mode_weights()
    defect = 1.0 - float(p.sum())
    combos = list(product(range(spec.n_max + 1), repeat=num_modes))
    w = np.array([np.prod([p[k] for k in occ]) for occ in combos])
    order = sorted(range(len(combos)), key=lambda j: (-w[j], combos[j]))
    kept, mass = [], 0.0
    for j in order:
        if w[j] <= 0:
            break
        kept.append(j)
        mass += w[j]
        if mass >= 1.0 - spec.tol:
            break
    weights = w[kept] / mass
    warn = None
    if mass < 0.999:
        warn = f"retained thermal mass {mass:.6f} < 0.999 (nbar={spec.nbar}, n_max={spec.n_max})"
        warnings.warn(warn, RuntimeWarning, stacklevel=2)
    return ThermalBranches([combos[j] for j in kept], weights, float(mass), defect, warn)


# ------------------------------------------------------------------ noise

@dataclass(frozen=True)
class NoisePath:
    """Piecewise-constant field: F = values[k] on [edges[k], edges[k+1])."""

    edges: np.ndarray
    values: np.ndarray

    def at(self, t: np.ndarray) -> np.ndarray:
        k = np.searchsorted(self.edges, t, side="right") - 1
        return self.values[np.clip(k, 0, len(self.values) - 1)]


def ou_noise_path(params: OUParams, edges: np.ndarray, stream) -> NoisePath:
    """OU field sampled exactly at ``edges`` and held over each interval."""
    rng = make_rng(params.seed, stream)
    edges = np.asarray(edges, dtype=float)
    h = np.diff(edges)
    decay = np.exp(-h / params.tau)
    amp = np.sqrt(0.5 * params.c * params.tau * -np.expm1(-2 * h / params.tau))
    draws = rng.standard_normal(len(h) + 1)
    vals = np.empty(len(h))
    F = params.stationary_std * draws[0]
    for k in range(len(h)):
        vals[k] = F
        F = F * decay[k] + amp[k] * draws[k + 1]
    return NoisePath(edges, vals)


def step_edges(t_final: float, dt: float, schedule: PulseSchedule | None = None) -> np.ndarray:
    """Step boundaries of spacing <= dt that include every pulse time."""
    cuts = [0.0]
    segs = (schedule or PulseSchedule()).segments(t_final)
    for dur, _ in segs:
        n = max(1, int(np.ceil(dur / dt - 1e-9))) if dur > 0 else 0
        if n:
            base = cuts[-1]
            cuts.extend(base + dur * np.arange(1, n + 1) / n)
    return np.array(cuts)


# -------------------------------------------------------------- propagator

@dataclass
class _StepCache:
    h: float
    W: np.ndarray
    lam: np.ndarray
    Q: np.ndarray


class SpectralPropagator:
    """Exact noiseless and Magnus-stepped noisy evolution in the detuning frame."""

    def __init__(self, params: LabParams, couplings: SidebandCouplings, layout: SpaceLayout):
        check_layout(layout, couplings)
        self.params = params
        self.couplings = couplings
        self.layout = layout
        H = detuning_frame_hamiltonian(params, couplings, layout).toarray()
        self.E, self.V = np.linalg.eigh(H)
        self.Vh = self.V.conj().T
        self.D = 0.5 * total_spin_z(layout)
        self._Dt = None
        self._step_cache: dict[float, _StepCache] = {}
        self._pulse_cache: dict = {}
        self.phonon_K = np.tile(self._phonon_energies(), layout.spin_dim)

    def _phonon_energies(self) -> np.ndarray:
        occ = self.layout.occupation_table()
        return occ @ np.asarray(self.couplings.delta)

    @property
    def dim(self) -> int:
        return self.layout.dim

    # -- noiseless
    def evolve_free(self, X: np.ndarray, t: float) -> np.ndarray:
        """exp(-i H0 t) X."""
        Y = self.Vh @ X
        ph = np.exp(-1j * self.E * t)
        return self.V @ (ph.reshape(-1, *([1] * (Y.ndim - 1))) * Y)

    def spin_pulse(self, label: str) -> np.ndarray:
        """Diagonal (as a vector) or dense full-space matrix of a pulse."""
        key = ("full", label)
        if key not in self._pulse_cache:
            P = pulse_matrix(label, self.layout.num_qubits)
            if np.allclose(P, np.diag(np.diag(P))):
                self._pulse_cache[key] = np.repeat(np.diag(P), self.layout.phonon_dim)
            else:
                self._pulse_cache[key] = np.kron(P, np.eye(self.layout.phonon_dim))
        return self._pulse_cache[key]

    def apply_pulse(self, label: str, X: np.ndarray) -> np.ndarray:
        P = self.spin_pulse(label)
        if P.ndim == 1:
            return P.reshape(-1, *([1] * (X.ndim - 1))) * X
        return P @ X

    def evolve_schedule(self, X: np.ndarray, t_final: float,
                        schedule: PulseSchedule | None = None) -> np.ndarray:
        """Noiseless evolution with instantaneous pulses, exact in time."""
        for dur, labels in (schedule or PulseSchedule()).segments(t_final):
            if dur > 0:
                X = self.evolve_free(X, dur)
            for lab in labels:
                X = self.apply_pulse(lab, X)
        return X

    def echo_scan(self, X0: np.ndarray, t_grid: Sequence[float], closing: bool = False,
                  reduce: Callable[[np.ndarray], np.ndarray] | None = None) -> list:
        """Final states (or ``reduce`` of them) of the echo sequence for each t_f."""
        Y0 = self.Vh @ X0
        out = []
        zz = self.spin_pulse("ZZ") if self.layout.num_qubits == 2 else self.spin_pulse("echo")
        for tf in t_grid:
            ph = np.exp(-0.5j * self.E * tf)[:, None]
            X = self.V @ (ph * Y0)
            X = zz[:, None] * X if zz.ndim == 1 else zz @ X
            X = self.V @ (ph * (self.Vh @ X))
            if closing:
                X = zz[:, None] * X if zz.ndim == 1 else zz @ X
            out.append(reduce(X) if reduce else X)
        return out

    # -- noisy
    def _dressed_noise(self) -> np.ndarray:
        if self._Dt is None:
            self._Dt = self.Vh @ (self.D[:, None] * self.V)
        return self._Dt

    def step_data(self, h: float) -> _StepCache:
        key = float(h)
        cache = self._step_cache.get(key)
        if cache is None:
            w = self.E[:, None] - self.E[None, :]
            wh = w * h
            with np.errstate(invalid="ignore", divide="ignore"):
                kern = np.where(np.abs(wh) > 1e-8, np.expm1(1j * wh) / (1j * w),
                                h * (1 + 0.5j * wh))
            A = self._dressed_noise() * kern
            A = 0.5 * (A + A.conj().T)
            lam, W = np.linalg.eigh(A)
            Q = W.conj().T @ (np.exp(-1j * self.E * h)[:, None] * W)
            cache = _StepCache(key, W, lam, Q)
            if len(self._step_cache) > 8:
                self._step_cache.pop(next(iter(self._step_cache)))
            self._step_cache[key] = cache
        return cache

    def evolve_noisy(self, X0: np.ndarray, edges: np.ndarray, F: np.ndarray,
                     schedule: PulseSchedule | None = None) -> np.ndarray:
        """Evolve columns of X0 over the step grid ``edges``.

        ``F`` has shape (num_steps, num_columns): the field held on each step
        for each column.  Pulses are applied at their (exactly matching)
        step boundaries.
        """
        edges = np.asarray(edges, dtype=float)
        F = np.asarray(F, dtype=float)
        n_steps = len(edges) - 1
        if F.shape[0] != n_steps or F.shape[1] != X0.shape[1]:
            raise ValueError("noise array must be (num_steps, num_columns)")
        h_all = np.diff(edges)
        limit = np.max(np.abs(F)) * 0.5 * self.layout.num_qubits * np.max(h_all) if n_steps else 0.0
        if limit > 0.5:
            raise StepSizeError(f"noise step too coarse: max|F| N/2 dt = {limit:.3f} > 0.5")
        pulses_at: dict[int, list[str]] = {}
        for p in (schedule or PulseSchedule()).pulses:
            k = int(np.argmin(np.abs(edges - p.time)))
            if abs(edges[k] - p.time) > 1e-9 * max(edges[-1], 1e-30):
                raise ValueError(f"pulse at t={p.time} does not coincide with a step boundary")
            pulses_at.setdefault(k, []).append(p.label)
        X = X0.astype(complex)
        for lab in pulses_at.get(0, []):
            X = self.apply_pulse(lab, X)
        k = 0
        while k < n_steps:
            # run of equal step sizes with no pulse inside
            h = h_all[k]
            j = k
            while j + 1 < n_steps and abs(h_all[j + 1] - h) <= 1e-12 * h and (j + 1) not in pulses_at:
                j += 1
            cache = self.step_data(round(h, 18))
            Y = cache.W.conj().T @ (self.Vh @ X)
            for s in range(k, j + 1):
                Y = cache.Q @ (np.exp(-1j * cache.lam[:, None] * F[s][None, :]) * Y)
            X = self.V @ (cache.W @ Y)
            k = j + 1
            for lab in pulses_at.get(k, []):
                X = self.apply_pulse(lab, X)
        return X

    def to_interaction_frame(self, X: np.ndarray, t: float) -> np.ndarray:
        """Map detuning-frame states to the interaction picture at time t."""
        ph = np.exp(1j * self.phonon_K * t)
        return ph.reshape(-1, *([1] * (X.ndim - 1))) * X


# ------------------------------------------------------------ observables

def spin_blocks(layout: SpaceLayout, X: np.ndarray) -> np.ndarray:
    """Reshape columns into (num_cols, spin_dim, phonon_dim)."""
    return X.T.reshape(X.shape[1], layout.spin_dim, layout.phonon_dim)


def reduced_spin_density(layout: SpaceLayout, X: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_c w_c Tr_ph |x_c><x_c| for the columns x_c of X."""
    M = spin_blocks(layout, X)
    return np.einsum("c,csp,ctp->st", weights, M, M.conj())


def spin_populations(layout: SpaceLayout, X: np.ndarray, weights: np.ndarray) -> np.ndarray:
    M = spin_blocks(layout, X)
    return np.einsum("c,csp->s", weights, np.abs(M) ** 2)


# ---------------------------------------------------------------- results

@dataclass
class SimResult:
    """Observables on a time grid.

    ``populations[k]`` holds P_s for the spin basis states in index order
    (P00, P01, P10, P11 for two qubits) with phonons traced out;
    ``rho[k]`` the reduced spin density matrix.
    """

    times: np.ndarray
    populations: np.ndarray
    rho: np.ndarray
    metadata: dict = field(default_factory=dict)
    fidelities: dict = field(default_factory=dict)

    def __post_init__(self):
        sums = self.populations.sum(axis=1)
        if np.any(np.abs(sums - 1) > 1e-8):
            raise ValueError(f"populations do not sum to one (max defect {np.max(np.abs(sums - 1)):.2e})")

    def fidelity_with(self, target: np.ndarray) -> np.ndarray:
        target = np.asarray(target, dtype=complex)
        return np.real(np.einsum("s,kst,t->k", target.conj(), self.rho, target))


def _initial_columns(layout: SpaceLayout, spin_state: np.ndarray, branches: ThermalBranches) -> np.ndarray:
    cols = []
    for occ in branches.occupations:
        phon = np.zeros(layout.phonon_dim, dtype=complex)
        phon[layout.index((0,) * layout.num_qubits, occ)] = 1.0
        cols.append(np.kron(spin_state, phon))
    return np.array(cols).T


def spin_vector(layout: SpaceLayout, spin) -> np.ndarray:
    """Accept a basis label like '10' or an explicit spin vector."""
    if isinstance(spin, str):
        v = np.zeros(layout.spin_dim, dtype=complex)
        v[int(spin, 2)] = 1.0
        return v
    v = np.asarray(spin, dtype=complex)
    if v.shape != (layout.spin_dim,):
        raise ValueError("spin state has the wrong dimension")
    return v / np.linalg.norm(v)


# --------------------------------------------------------------- drivers

@dataclass
class TrajectoryResult:
    times: np.ndarray
    states: np.ndarray  # (len(times), dim) in the detuning frame
    norm_error: float
    metadata: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def evolve_trajectory(initial: StateVector, prop: SpectralPropagator, t_final: float, dt: float,
                      schedule: PulseSchedule | None = None, ou: OUParams | None = None,
                      stream=0, record: Sequence[float] | None = None) -> TrajectoryResult:
    """Single trajectory; optional OU noise; records states at ``record`` times.

    Recording times act as extra step boundaries.  Without noise the
    evolution between boundaries is exact.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    psi0 = np.asarray(initial.amplitudes, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1) > 1e-9:
        raise ValueError("initial state is not normalized")
    record = sorted(set([0.0, t_final] + list(record or [])))
    sched = schedule or PulseSchedule()
    edges = step_edges(t_final, dt, sched)
    edges = np.unique(np.concatenate([edges, record]))
    noise = ou_noise_path(ou, edges, stream) if ou is not None and ou.c > 0 else None
    states = [psi0]
    X = psi0[:, None]
    pulse_list = list(sched.pulses)
    for a, b in zip(record[:-1], record[1:]):
        seg = edges[(edges >= a - 1e-18) & (edges <= b + 1e-18)]
        local = PulseSchedule(tuple(Pulse(p.time - a, p.label) for p in pulse_list
                                    if a < p.time <= b or (a == 0 and p.time == 0)))
        if noise is None:
            X = prop.evolve_schedule(X, b - a, local)
        else:
            F = noise.at(0.5 * (seg[:-1] + seg[1:]))[:, None]
            X = prop.evolve_noisy(X, seg - a, F, local)
        states.append(X[:, 0].copy())
    states = np.array(states)
    norm_err = float(np.max(np.abs(np.linalg.norm(states, axis=1) - 1)))
    if norm_err > 1e-9:
        raise RuntimeError(f"norm drift {norm_err:.2e} exceeds 1e-9")
    return TrajectoryResult(np.array(record), states, norm_err,
                            {"dt": dt, "num_steps": len(edges) - 1, "noise": noise is not None})


def _chunks(n: int, size: int) -> list[tuple[int, int]]:
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def evolve_columns_noisy(prop: SpectralPropagator, X0: np.ndarray, col_traj: Sequence[int], t_final: float,
                         dt: float, ou: OUParams, schedule: PulseSchedule | None = None,
                         threads: int = 1, chunk: int = 32) -> np.ndarray:
    """Evolve column k of X0 under OU realization ``col_traj[k]``.

    Columns are processed in fixed groups of ``chunk`` whose composition does
    not depend on ``threads``, so the output is bit-identical for any thread
    count.  Each realization is generated from its own (seed, id) stream.
    """
    sched = schedule or PulseSchedule()
    edges = step_edges(t_final, dt, sched)
    mids = 0.5 * (edges[:-1] + edges[1:])
    col_traj = [int(t) for t in col_traj]
    paths: dict[int, np.ndarray] = {}

    def field(tid):
        if tid not in paths:
            paths[tid] = ou_noise_path(ou, edges, (tid,)).at(mids)
        return paths[tid]

    for tid in col_traj:
        field(tid)

    def work(span):
        F = np.array([paths[col_traj[k]] for k in range(*span)]).T
        return prop.evolve_noisy(X0[:, span[0]:span[1]], edges, F, sched)

    spans = _chunks(X0.shape[1], chunk)
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, spans))
    else:
        parts = [work(sp_) for sp_ in spans]
    return np.concatenate(parts, axis=1)


def run_noise_ensemble(prop: SpectralPropagator, X0: np.ndarray, t_final: float, dt: float,
                       ou: OUParams, traj_ids: Sequence[int], schedule: PulseSchedule | None = None,
                       threads: int = 1, chunk: int = 32,
                       reducer: Callable[[int, np.ndarray], object] | None = None) -> list:
    """Evolve all columns of X0 under each noise trajectory in ``traj_ids``.

    Returns, in trajectory order, ``reducer(traj_id, X_final)`` or the raw
    final states.
    """
    ids = list(traj_ids)
    ncol = X0.shape[1]
    Xb = np.tile(X0, (1, len(ids)))
    Xf = evolve_columns_noisy(prop, Xb, np.repeat(ids, ncol), t_final, dt, ou, schedule, threads, chunk)
    out = []
    for j, tid in enumerate(ids):
        Xj = Xf[:, j * ncol:(j + 1) * ncol]
        out.append(reducer(tid, Xj) if reducer else Xj)
    return out


def evolve_thermal(spin_state, thermal: ThermalSpec, prop: SpectralPropagator, times: Sequence[float],
                   schedule_fn: Callable[[float], PulseSchedule] | None = None,
                   ou: OUParams | None = None, num_traj: int = 0, dt: float = 1e-7,
                   threads: int = 1) -> SimResult:
    """Thermal-phonon average of observables at each final time.

    ``schedule_fn(t)`` gives the pulse schedule used for final time t
    (e.g. an echo at t/2); without it the evolution is free and a single
    pass records every time.  With OU noise, ``num_traj`` trajectories are
    averaged (outer loop) over the deterministic Fock-branch mixture.
    """
    layout = prop.layout
    branches = thermal_branches(thermal, layout.num_modes)
    X0 = _initial_columns(layout, spin_vector(layout, spin_state), branches)
    w = branches.weights
    times = np.asarray(times, dtype=float)
    rhos = []
    for t in times:
        sched = schedule_fn(t) if schedule_fn else None
        if ou is None or ou.c == 0 or num_traj == 0:
            X = prop.evolve_schedule(X0, t, sched)
            rhos.append(reduced_spin_density(layout, X, w))
        else:
            parts = run_noise_ensemble(prop, X0, t, dt, ou, range(num_traj), sched, threads,
                                       reducer=lambda tid, X: reduced_spin_density(layout, X, w))
            rhos.append(np.mean(parts, axis=0))
    rho = np.array(rhos)
    pops = np.real(np.einsum("kss->ks", rho))
    meta = {"nbar": thermal.nbar, "n_max": layout.n_max, "num_branches": len(w),
            "retained_mass": branches.retained_mass, "thermal_warning": branches.warning,
            "num_traj": num_traj if ou is not None else 0, "dt": dt,
            "seed": ou.seed if ou is not None else None}
    return SimResult(times, pops, rho, meta)


# --------------------------------------------------------------- RK4 ref

def evolve_rk4(psi0: np.ndarray, params: LabParams, couplings: SidebandCouplings, layout: SpaceLayout,
               t_final: float, dt: float, schedule: PulseSchedule | None = None,
               noise: NoisePath | None = None, include_counter_rotating: bool = False,
               max_norm_dt: float = 0.5) -> np.ndarray:
    """Classical RK4 in the interaction picture, used as a reference.

    H(t) = carrier + sum_n (K_n e^{-i delta_n t} + h.c.) + F(t) D, with F
    frozen on each step at its midpoint value.  Refuses when an upper
    bound on ||H|| dt exceeds ``max_norm_dt``.
    """
    check_layout(layout, couplings)
    C = build_carrier(params, layout).matrix
    Ks = _sideband_parts(couplings, layout)
    D = sp.diags(0.5 * total_spin_z(layout)).tocsr()
    sched = schedule or PulseSchedule()
    edges = step_edges(t_final, dt, sched)
    h_max = float(np.max(np.diff(edges))) if len(edges) > 1 else 0.0
    fmax = float(np.max(np.abs(noise.values))) if noise is not None else 0.0
    bound = (0.5 * params.Omega_d * layout.num_qubits * (2 if include_counter_rotating else 1)
             + 2 * np.sum(np.abs(couplings.F)) * np.sqrt(layout.n_max) + 0.5 * fmax * layout.num_qubits)
    if bound * h_max > max_norm_dt:
        raise StepSizeError(f"||H|| dt ~ {bound * h_max:.3f} exceeds {max_norm_dt}")
    Cr = None
    if include_counter_rotating:
        up = sum((embed(layout, {i: single_qubit_matrix("+")}) for i in range(layout.num_qubits)),
                 sp.csr_matrix((layout.dim, layout.dim), dtype=complex))
        Cr = 0.5 * params.Omega_d * np.exp(-1j * params.phi_d) * up

    def Hpsi(t, F, psi):
        out = C @ psi
        for n, K in enumerate(Ks):
            ph = np.exp(-1j * couplings.delta[n] * t)
            out += ph * (K @ psi) + np.conj(ph) * (K.conj().T @ psi)
        if Cr is not None:
            ph = np.exp(2j * params.omega0 * t)
            out += ph * (Cr @ psi) + np.conj(ph) * (Cr.conj().T @ psi)
        if F != 0:
            out += F * (D @ psi)
        return -1j * out

    pulses_at: dict[int, list[str]] = {}
    for p in sched.pulses:
        pulses_at.setdefault(int(np.argmin(np.abs(edges - p.time))), []).append(p.label)
    pm = {lab: np.kron(pulse_matrix(lab, layout.num_qubits), np.eye(layout.phonon_dim))
          for labs in pulses_at.values() for lab in labs}
    psi = np.asarray(psi0, dtype=complex).copy()
    for lab in pulses_at.get(0, []):
        psi = pm[lab] @ psi
    for k in range(len(edges) - 1):
        t, h = edges[k], edges[k + 1] - edges[k]
        F = float(noise.at(t + 0.5 * h)) if noise is not None else 0.0
        k1 = Hpsi(t, F, psi)
        k2 = Hpsi(t + 0.5 * h, F, psi + 0.5 * h * k1)
        k3 = Hpsi(t + 0.5 * h, F, psi + 0.5 * h * k2)
        k4 = Hpsi(t + h, F, psi + h * k3)
        psi = psi + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        for lab in pulses_at.get(k + 1, []):
            psi = pm[lab] @ psi
    return psi


# ------------------------------------------------------------ convergence

@dataclass
class ConvergenceReport:
    base: float
    dt_half: float
    n_max_plus: float
    drift_dt: float
    drift_n_max: float
    settings: dict


def subdivide(edges: np.ndarray, k: int) -> np.ndarray:
    """Split every step of ``edges`` into ``k`` equal substeps."""
    edges = np.asarray(edges, dtype=float)
    if k == 1:
        return edges
    frac = np.arange(k) / k
    inner = edges[:-1, None] + np.diff(edges)[:, None] * frac[None, :]
    return np.append(inner.ravel(), edges[-1])


def convergence_probe(observable: Callable[[int, int, NoisePath | None], float], dt: float, n_max: int,
                      noise: NoisePath | None = None, n_max_step: int = 4) -> ConvergenceReport:
    """Re-run an observable with halved steps and with n_max + 4; report drifts.

    ``observable(substeps, n_max, noise)`` must integrate on its base step
    grid (spacing ``dt``) split into ``substeps`` equal pieces, see
    :func:`subdivide`.  The same piecewise-constant noise path is used in
    every run, so the halved-step run sees the identical realization.
    """
    base = observable(1, n_max, noise)
    half = observable(2, n_max, noise)
    bigger = observable(1, n_max + n_max_step, noise)
    return ConvergenceReport(base, half, bigger, abs(half - base), abs(bigger - base),
                             {"dt": dt, "n_max": n_max, "n_max_step": n_max_step})
