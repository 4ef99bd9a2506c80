"""Equilibrium geometry and transverse normal modes of a linear ion chain.

Positions are dimensionless, in units of l_z = (e^2 / m omega_z^2)^(1/3)
(Gaussian units), so they depend only on the number of ions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SolverError(RuntimeError):
    """Equilibrium iteration failed to converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class ConsistencyError(RuntimeError):
    """Internal numerical consistency check failed."""


@dataclass(frozen=True)
class TrapParams:
    """Transverse and axial trap frequencies in rad/s."""

    num_ions: int
    omega_x: float
    omega_z: float

    def __post_init__(self):
        if int(self.num_ions) != self.num_ions or self.num_ions < 1:
            raise ValueError("num_ions must be a positive integer")
        if not (self.omega_x > self.omega_z > 0):
            raise ValueError("need omega_x > omega_z > 0 for a linear chain")

    @property
    def xi(self) -> float:
        """Anisotropy (omega_z / omega_x)**2."""
        return (self.omega_z / self.omega_x) ** 2


@dataclass(frozen=True)
class IonCrystal:
    positions: np.ndarray
    residual: float

    @property
    def num_ions(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class NormalModes:
    """Transverse normal modes.

    Attributes
    ----------
    frequencies : ndarray, shape (N,)
        Mode frequencies in rad/s, sorted descending (COM first).
    amplitudes : ndarray, shape (N, N)
        ``amplitudes[i, n]`` is M_in, the displacement of ion i in mode n.
    coupling_matrix : ndarray, shape (N, N)
        Dimensionless Coulomb matrix V_ij.
    eigenvalues : ndarray, shape (N,)
        V_n, so that omega_n = omega_x * sqrt(1 + xi * V_n).
    """

    frequencies: np.ndarray
    amplitudes: np.ndarray
    coupling_matrix: np.ndarray
    eigenvalues: np.ndarray
    omega_x: float

    @property
    def num_modes(self) -> int:
        return len(self.frequencies)


def equilibrium_residual(z: np.ndarray) -> np.ndarray:
    """Force balance z_i - sum_j (z_i - z_j)/|z_i - z_j|^3 for each ion."""
    z = np.asarray(z, dtype=float)
    d = z[:, None] - z[None, :]
    np.fill_diagonal(d, np.inf)
    return z - np.sum(np.sign(d) / d**2, axis=1)


def _jacobian(z: np.ndarray) -> np.ndarray:
    d = z[:, None] - z[None, :]
    np.fill_diagonal(d, np.inf)
    # dr_i/dz_j = -2/|z_ij|^3, dr_i/dz_i = 1 + 2 sum_j 1/|z_ij|^3
    inv3 = 2.0 / np.abs(d) ** 3
    jac = -inv3
    np.fill_diagonal(jac, 1.0 + np.sum(inv3, axis=1))
    return jac


def _potential(z: np.ndarray) -> float:
    d = np.abs(z[:, None] - z[None, :])
    iu = np.triu_indices(len(z), 1)
    return 0.5 * float(np.sum(z**2)) + float(np.sum(1.0 / d[iu]))


def solve_equilibrium(trap: TrapParams, tol: float = 1e-12, max_iter: int = 200) -> IonCrystal:
    """Equilibrium positions of the chain in units of l_z.

    Damped Newton iteration from a uniform-spacing start; if the Jacobian
    becomes ill-conditioned, falls back to gradient descent on the potential
    before resuming Newton.
    """
    n = trap.num_ions
    if n == 1:
        return IonCrystal(np.zeros(1), 0.0)
    # uniform ansatz with roughly the right span
    z = np.linspace(-1.0, 1.0, n) * 0.9 * n ** (1 / 3) * (1 if n > 2 else 0.7)
    res = equilibrium_residual(z)
    rnorm = float(np.max(np.abs(res)))
    for _ in range(max_iter):
        if rnorm < tol:
            break
        jac = _jacobian(z)
        if np.linalg.cond(jac) > 1e12:
            z = _gradient_descent(z, steps=200)
        else:
            step = np.linalg.solve(jac, -res)
            lam = 1.0
            while lam > 1e-6:
                trial = np.sort(z + lam * step)
                if np.all(np.diff(trial) > 0):
                    tres = equilibrium_residual(trial)
                    if np.max(np.abs(tres)) < rnorm:
                        break
                lam *= 0.5
            else:
                z = _gradient_descent(z, steps=200)
                res = equilibrium_residual(z)
                rnorm = float(np.max(np.abs(res)))
                continue
            z = trial
        res = equilibrium_residual(z)
        rnorm = float(np.max(np.abs(res)))
    if rnorm >= 1e-10:
        raise SolverError("equilibrium solver did not converge", rnorm)
    # symmetrize away rounding so the antisymmetry invariant holds exactly
    z = 0.5 * (z - z[::-1])
    return IonCrystal(z, float(np.max(np.abs(equilibrium_residual(z)))))


def _gradient_descent(z: np.ndarray, steps: int, lr: float = 0.05) -> np.ndarray:
    for _ in range(steps):
        g = equilibrium_residual(z)
        trial = z - lr * g
        while not np.all(np.diff(np.sort(trial)) > 0) or _potential(trial) > _potential(z):
            lr *= 0.5
            trial = z - lr * g
            if lr < 1e-12:
                return z
        z = np.sort(trial)
    return z


def coulomb_matrix(positions: np.ndarray) -> np.ndarray:
    """V_ij = |z_ij|^-3 off the diagonal, V_ii = -sum_l |z_il|^-3."""
    z = np.asarray(positions, dtype=float)
    d = np.abs(z[:, None] - z[None, :])
    np.fill_diagonal(d, np.inf)
    v = 1.0 / d**3
    np.fill_diagonal(v, -np.sum(v, axis=1))
    return v


def compute_modes(trap: TrapParams, crystal: IonCrystal) -> NormalModes:
    """Transverse modes from the Coulomb matrix of a solved crystal."""
    if crystal.num_ions != trap.num_ions:
        raise ValueError("crystal and trap disagree on the number of ions")
    v = coulomb_matrix(crystal.positions)
    if np.max(np.abs(v - v.T)) > 1e-12:
        raise ConsistencyError("Coulomb matrix is not symmetric")
    vals, vecs = np.linalg.eigh(v)
    # eigh sorts ascending in V_n; frequencies grow with V_n so reverse
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    n = trap.num_ions
    # the COM vector (1,...,1)/sqrt(N) is an exact eigenvector with V_n = 0
    com = np.ones(n) / np.sqrt(n)
    k = int(np.argmax(np.abs(com @ vecs)))
    if abs(vals[k]) < 1e-9:
        vals[k] = 0.0
        vecs[:, k] = com
    for m in range(n):
        pivot = vecs[0, m]
        if pivot < 0 or (pivot == 0 and vecs[np.flatnonzero(vecs[:, m])[0], m] < 0):
            vecs[:, m] *= -1
    arg = 1.0 + trap.xi * vals
    if np.any(arg <= 0):
        raise ConsistencyError("transverse mode frequency became imaginary (zig-zag regime)")
    freqs = trap.omega_x * np.sqrt(arg)
    return NormalModes(freqs, vecs, v, vals, trap.omega_x)


def build_modes(num_ions: int, omega_x: float, omega_z: float) -> NormalModes:
    trap = TrapParams(num_ions, omega_x, omega_z)
    return compute_modes(trap, solve_equilibrium(trap))
