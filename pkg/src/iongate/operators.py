"""Operators on the composite space of N qubits and N truncated phonon modes.

Index ordering is fixed: the full space is the Kronecker product

    qubit_0 (x) qubit_1 (x) ... (x) mode_0 (x) mode_1 (x) ...

with qubit 0 the most significant factor.  Each qubit uses the basis
(|0>, |1>) and each mode the Fock states |0>, ..., |n_max>.  So the
two-qubit label "10" means qubit 0 in |1> and qubit 1 in |0>, and the
flat index of |s; n> is ``(s_int * (n_max+1)**num_modes) + n_int`` with
both integers written big-endian in factor order.

Operators are stored sparse (CSR), states dense.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp


@dataclass(frozen=True)
class SpaceLayout:
    num_qubits: int
    num_modes: int
    n_max: int

    def __post_init__(self):
        if self.num_qubits < 0 or self.num_modes < 0 or self.n_max < 0:
            raise ValueError("layout sizes must be non-negative")

    @property
    def spin_dim(self) -> int:
        return 2**self.num_qubits

    @property
    def fock_dim(self) -> int:
        return self.n_max + 1

    @property
    def phonon_dim(self) -> int:
        return self.fock_dim**self.num_modes

    @property
    def dim(self) -> int:
        return self.spin_dim * self.phonon_dim

    def index(self, spins: Sequence[int], occupations: Sequence[int] = ()) -> int:
        """Flat index of the product basis state |spins; occupations>."""
        if len(spins) != self.num_qubits:
            raise ValueError(f"expected {self.num_qubits} spin labels, got {len(spins)}")
        occupations = tuple(occupations) or (0,) * self.num_modes
        if len(occupations) != self.num_modes:
            raise ValueError(f"expected {self.num_modes} occupations, got {len(occupations)}")
        s = 0
        for bit in spins:
            if bit not in (0, 1):
                raise ValueError("spin labels must be 0 or 1")
            s = 2 * s + bit
        n = 0
        for occ in occupations:
            if not 0 <= occ <= self.n_max:
                raise ValueError(f"occupation {occ} outside 0..{self.n_max}")
            n = self.fock_dim * n + occ
        return s * self.phonon_dim + n

    def unravel(self, index: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Inverse of :meth:`index`."""
        if not 0 <= index < self.dim:
            raise IndexError(index)
        s, n = divmod(index, self.phonon_dim)
        spins = tuple(int(b) for b in np.binary_repr(s, width=self.num_qubits)) if self.num_qubits else ()
        occ = []
        for _ in range(self.num_modes):
            n, r = divmod(n, self.fock_dim)
            occ.append(r)
        return spins, tuple(reversed(occ))

    def occupation_table(self) -> np.ndarray:
        """Array (phonon_dim, num_modes) of mode occupations for each phonon index."""
        if self.num_modes == 0:
            return np.zeros((1, 0), dtype=int)
        grids = np.indices((self.fock_dim,) * self.num_modes).reshape(self.num_modes, -1)
        return grids.T.copy()


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    layout: SpaceLayout
    matrix: sp.csr_matrix
    hermitian: bool = False

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=complex)
        if m.shape != (self.layout.dim, self.layout.dim):
            raise ValueError(f"matrix shape {m.shape} does not match layout dim {self.layout.dim}")
        m.sum_duplicates()
        m.sort_indices()
        object.__setattr__(self, "matrix", m)
        if self.hermitian:
            err = hermiticity_error(m)
            if err >= 1e-12:
                raise ValueError(f"operator flagged Hermitian but ||A - A^dag||_max = {err:.3e}")

    def _wrap(self, m, hermitian=False):
        return OperatorMatrix(self.layout, m, hermitian)

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self._check(other)
        return self._wrap(self.matrix + other.matrix, self.hermitian and other.hermitian)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self._check(other)
        return self._wrap(self.matrix - other.matrix, self.hermitian and other.hermitian)

    def __neg__(self):
        return self._wrap(-self.matrix, self.hermitian)

    def __mul__(self, scalar) -> "OperatorMatrix":
        scalar = complex(scalar)
        return self._wrap(self.matrix * scalar, self.hermitian and scalar.imag == 0)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            self._check(other)
            return self._wrap(self.matrix @ other.matrix)
        if isinstance(other, StateVector):
            return StateVector(self.layout, self.matrix @ other.amplitudes)
        return self.matrix @ other

    def _check(self, other: "OperatorMatrix"):
        if other.layout != self.layout:
            raise ValueError("operators live on different layouts")

    def dag(self) -> "OperatorMatrix":
        return self._wrap(self.matrix.conj().T.tocsr(), self.hermitian)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def norm_max(self) -> float:
        return float(np.abs(self.matrix.data).max()) if self.matrix.nnz else 0.0


@dataclass(frozen=True, eq=False)
class StateVector:
    layout: SpaceLayout
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.layout.dim,):
            raise ValueError(f"state shape {amps.shape} does not match layout dim {self.layout.dim}")
        object.__setattr__(self, "amplitudes", amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def spin_populations(self) -> np.ndarray:
        """Populations of the 2**N spin basis states with the phonons traced out."""
        psi = self.amplitudes.reshape(self.layout.spin_dim, self.layout.phonon_dim)
        return (np.abs(psi) ** 2).sum(axis=1)


def hermiticity_error(m) -> float:
    diff = (m - m.conj().T)
    if sp.issparse(diff):
        return float(np.abs(diff.data).max()) if diff.nnz else 0.0
    return float(np.abs(diff).max()) if diff.size else 0.0


_SIGMA = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    # sigma_y = -i(sigma_+ - sigma_-) so that [sigma_z, sigma_+] = 2 sigma_+
    "y": np.array([[0, 1j], [-1j, 0]], dtype=complex),
    # sigma_z = |1><1| - |0><0| in the (|0>, |1>) basis
    "z": np.array([[-1, 0], [0, 1]], dtype=complex),
    "+": np.array([[0, 0], [1, 0]], dtype=complex),  # |1><0|
    "-": np.array([[0, 1], [0, 0]], dtype=complex),  # |0><1|
    "i": np.eye(2, dtype=complex),
}


def single_qubit_matrix(axis: str) -> np.ndarray:
    try:
        return _SIGMA[axis.lower()].copy()
    except KeyError:
        raise ValueError(f"unknown Pauli axis {axis!r}") from None


def ladder_matrix(n_max: int, kind: str) -> sp.csr_matrix:
    """Truncated single-mode ladder matrices with <n-1|a|n> = sqrt(n)."""
    a = sp.diags(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1, shape=(n_max + 1, n_max + 1), format="csr")
    if kind in ("annihilate", "a"):
        return a.astype(complex)
    if kind in ("create", "adag"):
        return a.T.tocsr().astype(complex)
    if kind in ("number", "n"):
        return sp.diags(np.arange(n_max + 1, dtype=float), 0, format="csr").astype(complex)
    raise ValueError(f"unknown boson operator kind {kind!r}")


def embed(layout: SpaceLayout, qubit_ops: dict[int, np.ndarray] | None = None,
          mode_ops: dict[int, sp.spmatrix] | None = None) -> sp.csr_matrix:
    """Kronecker embedding of local factors, identity elsewhere."""
    qubit_ops = qubit_ops or {}
    mode_ops = mode_ops or {}
    factors = []
    for q in range(layout.num_qubits):
        factors.append(sp.csr_matrix(qubit_ops.get(q, _SIGMA["i"])))
    for n in range(layout.num_modes):
        factors.append(sp.csr_matrix(mode_ops[n]) if n in mode_ops else sp.identity(layout.fock_dim, dtype=complex, format="csr"))
    if not factors:
        return sp.identity(1, dtype=complex, format="csr")
    return reduce(lambda x, y: sp.kron(x, y, format="csr"), factors)


def identity(layout: SpaceLayout) -> OperatorMatrix:
    return OperatorMatrix(layout, sp.identity(layout.dim, dtype=complex, format="csr"), hermitian=True)


def zero(layout: SpaceLayout) -> OperatorMatrix:
    return OperatorMatrix(layout, sp.csr_matrix((layout.dim, layout.dim), dtype=complex), hermitian=True)


def pauli(layout: SpaceLayout, qubit_index: int, axis: str) -> OperatorMatrix:
    """sigma_i^axis embedded in the full space; axis in {x, y, z, +, -}."""
    if not 0 <= qubit_index < layout.num_qubits:
        raise IndexError(f"qubit index {qubit_index} out of range for {layout.num_qubits} qubits")
    m = single_qubit_matrix(axis)
    return OperatorMatrix(layout, embed(layout, {qubit_index: m}), hermitian=axis.lower() in "xyz")


def boson(layout: SpaceLayout, mode_index: int, kind: str) -> OperatorMatrix:
    """a_n, a_n^dag or a_n^dag a_n embedded in the full space."""
    if not 0 <= mode_index < layout.num_modes:
        raise IndexError(f"mode index {mode_index} out of range for {layout.num_modes} modes")
    m = ladder_matrix(layout.n_max, kind)
    return OperatorMatrix(layout, embed(layout, mode_ops={mode_index: m}), hermitian=kind in ("number", "n"))


def pauli_string(layout: SpaceLayout, label: str) -> OperatorMatrix:
    """Tensor product of single-qubit Paulis, e.g. "ZZ" or "XI"."""
    if len(label) != layout.num_qubits:
        raise ValueError(f"Pauli string {label!r} needs {layout.num_qubits} characters")
    ops = {q: single_qubit_matrix(c) for q, c in enumerate(label.lower()) if c != "i"}
    return OperatorMatrix(layout, embed(layout, ops), hermitian=True)


def total_spin_z(layout: SpaceLayout) -> np.ndarray:
    """Diagonal of sum_i sigma_i^z as a dense real vector."""
    diag = np.zeros(layout.spin_dim)
    for s in range(layout.spin_dim):
        bits = np.binary_repr(s, width=layout.num_qubits) if layout.num_qubits else ""
        diag[s] = sum(1 if b == "1" else -1 for b in bits)
    return np.repeat(diag, layout.phonon_dim)


def basis_state(layout: SpaceLayout, spins: Sequence[int], occupations: Sequence[int] = ()) -> StateVector:
    psi = np.zeros(layout.dim, dtype=complex)
    psi[layout.index(spins, occupations)] = 1.0
    return StateVector(layout, psi)


def product_state(layout: SpaceLayout, spin_state: np.ndarray, occupations: Sequence[int] = ()) -> StateVector:
    """|spin_state> (x) |occupations> for an arbitrary spin vector of length 2**N."""
    spin_state = np.asarray(spin_state, dtype=complex)
    if spin_state.shape != (layout.spin_dim,):
        raise ValueError("spin state has wrong dimension")
    phonon = np.zeros(layout.phonon_dim, dtype=complex)
    phonon[layout.index((0,) * layout.num_qubits, occupations)] = 1.0
    return StateVector(layout, np.kron(spin_state, phonon))


_OVERFLOW_LIMIT = 700.0


def matrix_function(A: OperatorMatrix | np.ndarray, f: str = "exp"):
    """exp, cosh or sinh of an operator.

    Anti-Hermitian arguments are handled through a Hermitian eigendecomposition
    (exact unitary output); everything else goes through scipy's
    scaling-and-squaring Pade exponential.  cosh and sinh are assembled from
    e^A and e^-A.  Raises OverflowError when the Hermitian part of A is large
    enough to overflow double precision.
    """
    if f not in ("exp", "cosh", "sinh"):
        raise ValueError(f"unsupported matrix function {f!r}")
    wrapped = isinstance(A, OperatorMatrix)
    dense = A.toarray() if wrapped else np.asarray(A, dtype=complex)
    if not np.all(np.isfinite(dense)):
        raise ValueError("matrix function argument has non-finite entries")
    herm_part = 0.5 * (dense + dense.conj().T)
    # the induced 1-norm bounds the spectral norm of a Hermitian matrix
    if herm_part.size and np.abs(herm_part).sum(axis=0).max() > _OVERFLOW_LIMIT:
        if np.linalg.norm(herm_part, 2) > _OVERFLOW_LIMIT:
            raise OverflowError("matrix exponential would overflow: Hermitian part too large")
    scale = np.abs(dense).max() if dense.size else 0.0
    if dense.size and np.abs(herm_part).max() <= 1e-14 * max(scale, 1.0):
        w, v = np.linalg.eigh(1j * dense)
        ep = (v * np.exp(-1j * w)) @ v.conj().T
        em = ep.conj().T if f != "exp" else None
    else:
        ep = scipy.linalg.expm(dense)
        em = scipy.linalg.expm(-dense) if f != "exp" else None
    if f == "exp":
        out = ep
    elif f == "cosh":
        out = 0.5 * (ep + em)
    else:
        out = 0.5 * (ep - em)
    if not np.all(np.isfinite(out)):
        raise OverflowError("matrix function produced non-finite entries")
    if wrapped:
        return OperatorMatrix(A.layout, sp.csr_matrix(out))
    return out
