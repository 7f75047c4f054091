"""Truncated Fock bases and sparse ladder operators.

Basis states are occupation vectors ``(n_1, ..., n_M)`` optionally tensored
with ``Q`` two-level systems. Ordering is lexicographic on the full label
``(s_1, ..., s_Q, n_1, ..., n_M)`` so the qubit bits are the most significant
digits. Operators are returned as canonical ``scipy.sparse.csr_matrix``
objects (sorted indices, no duplicates, no stored zeros).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from math import comb

import numpy as np
import scipy.sparse as sp

__all__ = [
    "CapacityError",
    "TruncationScheme",
    "OccupationBasis",
    "enumerate_basis",
    "basis_dimension",
    "ladder_operator",
    "qubit_operator",
    "prune",
]

DEFAULT_MAX_DIMENSION = 2_000_000


class CapacityError(MemoryError):
    """Requested basis is larger than the configured ceiling."""


class TruncationScheme(str, Enum):
    CAPPED = "capped-total"
    PER_MODE = "per-mode"


def basis_dimension(num_modes, num_qubits, n_max, scheme=TruncationScheme.CAPPED):
    """Number of states without building the basis."""
    scheme = TruncationScheme(scheme)
    if scheme is TruncationScheme.CAPPED:
        bosons = comb(n_max + num_modes, num_modes)
    else:
        bosons = (n_max + 1) ** num_modes
    return bosons * 2**num_qubits


def _capped_occupations(num_modes, n_max):
    # Lexicographic compositions with total <= n_max, built one mode at a time.
    rows = np.zeros((1, 0), dtype=np.int64)
    remaining = np.array([n_max], dtype=np.int64)
    for _ in range(num_modes):
        counts = remaining + 1
        parent = np.repeat(np.arange(len(rows)), counts)
        start = np.repeat(np.cumsum(counts) - counts, counts)
        value = np.arange(parent.size) - start
        rows = np.column_stack([rows[parent], value])
        remaining = remaining[parent] - value
    return rows


def _per_mode_occupations(num_modes, n_max):
    grids = np.indices((n_max + 1,) * num_modes).reshape(num_modes, -1).T
    return np.ascontiguousarray(grids, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class OccupationBasis:
    """Enumerated Fock basis with a bidirectional state/index map.

    Attributes
    ----------
    num_modes, num_qubits, n_max : int
    scheme : TruncationScheme
    occupations : ndarray, shape (dim, num_modes)
        Boson numbers of every basis state.
    qubits : ndarray, shape (dim, num_qubits)
        Two-level excitations (0 = ground, 1 = excited).
    """

    num_modes: int
    num_qubits: int
    n_max: int
    scheme: TruncationScheme
    occupations: np.ndarray = field(repr=False)
    qubits: np.ndarray = field(repr=False)
    _keys: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return len(self.occupations)

    def __len__(self):
        return self.dim

    @property
    def _radix(self):
        return self.n_max + 2

    def _encode(self, occupations, qubits):
        key = np.zeros(len(occupations), dtype=np.int64)
        for col in range(self.num_qubits):
            key = key * 2 + qubits[:, col]
        for col in range(self.num_modes):
            key = key * self._radix + occupations[:, col]
        return key

    def lookup(self, occupations, qubits=None):
        """Vectorised index lookup; returns -1 for states outside the basis."""
        occupations = np.atleast_2d(np.asarray(occupations, dtype=np.int64))
        if qubits is None:
            qubits = np.zeros((len(occupations), self.num_qubits), dtype=np.int64)
        qubits = np.atleast_2d(np.asarray(qubits, dtype=np.int64)).reshape(len(occupations), self.num_qubits)
        valid = np.all(occupations >= 0, axis=1) & np.all(occupations <= self.n_max, axis=1)
        if self.scheme is TruncationScheme.CAPPED:
            valid &= occupations.sum(axis=1) <= self.n_max
        valid &= np.all((qubits == 0) | (qubits == 1), axis=1)
        out = np.full(len(occupations), -1, dtype=np.int64)
        if valid.any():
            keys = self._encode(np.clip(occupations[valid], 0, None), qubits[valid])
            pos = np.searchsorted(self._keys, keys)
            pos = np.minimum(pos, len(self._keys) - 1)
            hit = self._keys[pos] == keys
            idx = np.where(hit, pos, -1)
            out[valid] = idx
        return out

    def index(self, occupation, qubit_state=()):
        """Ordinal of a single state; raises ``KeyError`` if not in the basis."""
        qubit_state = tuple(qubit_state) or (0,) * self.num_qubits
        idx = int(self.lookup([occupation], [qubit_state])[0])
        if idx < 0:
            raise KeyError((tuple(occupation), tuple(qubit_state)))
        return idx

    def state(self, idx):
        """``(occupation tuple, qubit tuple)`` of ordinal ``idx``."""
        return tuple(int(v) for v in self.occupations[idx]), tuple(int(v) for v in self.qubits[idx])

    def vacuum_index(self):
        return self.index((0,) * self.num_modes)

    def basis_vector(self, occupation, qubit_state=()):
        vec = np.zeros(self.dim, dtype=complex)
        vec[self.index(occupation, qubit_state)] = 1.0
        return vec

    def identity(self):
        return sp.identity(self.dim, dtype=complex, format="csr")


def enumerate_basis(num_modes, num_qubits=0, n_max=1, scheme=TruncationScheme.CAPPED,
                    max_dimension=DEFAULT_MAX_DIMENSION):
    """Enumerate all admissible states in deterministic order.

    Parameters
    ----------
    num_modes : int
        Number of bosonic modes, at least 1.
    num_qubits : int
        Number of two-level systems tensored onto the bosons.
    n_max : int
        Cap on total boson number (capped scheme) or on each mode (per-mode).
    scheme : TruncationScheme or str
    max_dimension : int
        Ceiling on the basis size; larger requests raise ``CapacityError``.
    """
    scheme = TruncationScheme(scheme)
    if num_modes < 1:
        raise ValueError("num_modes must be >= 1")
    if num_qubits < 0:
        raise ValueError("num_qubits must be >= 0")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    dim = basis_dimension(num_modes, num_qubits, n_max, scheme)
    if dim > max_dimension:
        raise CapacityError(
            f"basis of {dim} states exceeds the ceiling of {max_dimension} "
            f"(modes={num_modes}, qubits={num_qubits}, n_max={n_max}, scheme={scheme.value})"
        )

    if scheme is TruncationScheme.CAPPED:
        bosons = _capped_occupations(num_modes, n_max)
    else:
        bosons = _per_mode_occupations(num_modes, n_max)
    n_bos = len(bosons)
    qubit_block = _per_mode_occupations(num_qubits, 1) if num_qubits else np.zeros((1, 0), dtype=np.int64)
    occupations = np.tile(bosons, (len(qubit_block), 1))
    qubits = np.repeat(qubit_block, n_bos, axis=0)

    basis = OccupationBasis(num_modes, num_qubits, n_max, scheme,
                            np.ascontiguousarray(occupations), np.ascontiguousarray(qubits),
                            np.empty(0, dtype=np.int64))
    keys = basis._encode(occupations, qubits)
    if np.any(np.diff(keys) <= 0):  # pragma: no cover - enumeration bug guard
        raise AssertionError("basis enumeration is not lexicographic")
    object.__setattr__(basis, "_keys", keys)
    basis.occupations.setflags(write=False)
    basis.qubits.setflags(write=False)
    basis._keys.setflags(write=False)
    return basis


def prune(op, tol=1e-15):
    """Return ``op`` as canonical CSR with entries of magnitude <= tol removed."""
    op = sp.csr_matrix(op, dtype=complex)
    op.sum_duplicates()
    if tol > 0:
        op.data[np.abs(op.data) <= tol] = 0
    op.eliminate_zeros()
    op.sort_indices()
    return op


def _transition(basis, rows_from, target_occ, target_qub, values):
    target = basis.lookup(target_occ, target_qub)
    keep = target >= 0
    return sp.csr_matrix(
        (values[keep].astype(complex), (target[keep], rows_from[keep])),
        shape=(basis.dim, basis.dim),
    )


def ladder_operator(basis, mode, kind="annihilate"):
    """Sparse bosonic operator for ``mode``.

    ``kind`` is one of ``"annihilate"``, ``"create"`` or ``"number"``.
    Transitions that would leave the truncated basis are dropped.
    """
    if not 0 <= mode < basis.num_modes:
        raise IndexError(f"mode {mode} out of range for {basis.num_modes} modes")
    n = basis.occupations[:, mode]
    if kind == "number":
        return prune(sp.diags(n.astype(complex), format="csr"))
    if kind not in ("annihilate", "create"):
        raise ValueError(f"unknown ladder operator kind {kind!r}")
    src = np.nonzero(n > 0)[0]
    target = basis.occupations[src].copy()
    target[:, mode] -= 1
    lower = _transition(basis, src, target, basis.qubits[src], np.sqrt(n[src]))
    lower = prune(lower)
    return lower if kind == "annihilate" else prune(lower.T)


def qubit_operator(basis, qubit, kind="lower"):
    """Sparse two-level operator: ``"lower"`` (sigma_-), ``"raise"`` or ``"occupation"``."""
    if not 0 <= qubit < basis.num_qubits:
        raise IndexError(f"qubit {qubit} out of range for {basis.num_qubits} qubits")
    s = basis.qubits[:, qubit]
    if kind == "occupation":
        return prune(sp.diags(s.astype(complex), format="csr"))
    if kind not in ("lower", "raise"):
        raise ValueError(f"unknown qubit operator kind {kind!r}")
    src = np.nonzero(s == 1)[0]
    target = basis.qubits[src].copy()
    target[:, qubit] = 0
    lower = prune(_transition(basis, src, basis.occupations[src], target, np.ones(len(src))))
    return lower if kind == "lower" else prune(lower.T)
