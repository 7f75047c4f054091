"""Physical description of a driven-dissipative cavity array.

Energies are in meV, measured in the rotating frame of the pump. Time is in
ps, so a rate ``r`` given in meV corresponds to ``r / HBAR`` per ps.

The on-site nonlinearity is ``U a^dag a^dag a a`` per mode, i.e. the
two-photon state is shifted by ``2U`` (not ``U``). Drives enter as
``F a + F* a^dag`` so the Hamiltonian stays Hermitian for complex ``F``;
for real ``F`` this is ``F (a + a^dag)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .hilbert import OccupationBasis, enumerate_basis, ladder_operator, prune, qubit_operator

__all__ = [
    "HBAR",
    "HamiltonianKind",
    "Qubit",
    "SystemSpec",
    "LindbladChannel",
    "chain_couplings",
    "ring_couplings",
    "build_basis",
    "build_hamiltonian",
    "build_kh_hamiltonian",
    "build_jch_hamiltonian",
    "build_channels",
    "build_effective_hamiltonian",
]

#: Reduced Planck constant in meV ps.
HBAR = 0.6582119569


class HamiltonianKind(str, Enum):
    KH = "KH"
    JCH = "JCH"


@dataclass(frozen=True)
class Qubit:
    """Two-level system attached to one cavity mode."""

    mode: int
    energy: float
    coupling: float
    loss: float = 0.0
    dephasing: float = 0.0

    def __post_init__(self):
        if self.loss < 0 or self.dephasing < 0:
            raise ValueError("qubit rates must be non-negative")


def chain_couplings(num_modes, hopping):
    """Nearest-neighbour edges of an open chain."""
    return tuple((j, j + 1, float(hopping)) for j in range(num_modes - 1))


def ring_couplings(num_modes, hopping):
    """Nearest-neighbour edges of a closed ring."""
    edges = list(chain_couplings(num_modes, hopping))
    if num_modes > 2:
        edges.append((0, num_modes - 1, float(hopping)))
    return tuple(edges)


@dataclass(frozen=True)
class SystemSpec:
    """Full physical description of the array.

    Parameters
    ----------
    energies : sequence of float
        Mode energies relative to the pump, one per cavity.
    nonlinearity : float
        Kerr energy ``U`` common to all modes.
    couplings : sequence of (j, k, J)
        Undirected hopping edges; each contributes ``J (a_j^dag a_k + h.c.)``.
    drives : sequence of complex
        Drive amplitude on each mode (0 for undriven modes).
    loss, dephasing : float
        Photon loss rate ``gamma`` and pure dephasing rate ``Gamma``.
    qubits : sequence of Qubit
        Only allowed for ``kind="JCH"``.
    """

    energies: tuple
    nonlinearity: float = 0.0
    couplings: tuple = ()
    drives: tuple = ()
    loss: float = 0.0
    dephasing: float = 0.0
    qubits: tuple = ()
    kind: HamiltonianKind = HamiltonianKind.KH

    def __post_init__(self):
        object.__setattr__(self, "energies", tuple(float(e) for e in self.energies))
        object.__setattr__(self, "kind", HamiltonianKind(self.kind))
        m = len(self.energies)
        if m < 1:
            raise ValueError("at least one mode is required")
        drives = tuple(complex(f) for f in self.drives) or (0j,) * m
        if len(drives) != m:
            raise ValueError(f"expected {m} drive amplitudes, got {len(drives)}")
        object.__setattr__(self, "drives", drives)

        edges = {}
        for j, k, hop in self.couplings:
            j, k = int(j), int(k)
            if j == k:
                raise ValueError(f"self-coupling on mode {j}")
            if not (0 <= j < m and 0 <= k < m):
                raise ValueError(f"coupling ({j}, {k}) references a missing mode")
            key = (min(j, k), max(j, k))
            if key in edges and edges[key] != float(hop):
                raise ValueError(f"conflicting couplings for edge {key}")
            edges[key] = float(hop)
        object.__setattr__(self, "couplings", tuple((j, k, v) for (j, k), v in sorted(edges.items())))
        object.__setattr__(self, "qubits", tuple(self.qubits))

        if not self.loss > 0:
            raise ValueError("photon loss rate must be > 0")
        if self.dephasing < 0:
            raise ValueError("photon dephasing rate must be >= 0")
        if self.kind is HamiltonianKind.KH and self.qubits:
            raise ValueError("KH systems cannot carry qubits")
        if self.kind is HamiltonianKind.JCH and self.nonlinearity != 0:
            raise ValueError("JCH systems require nonlinearity = 0")
        for q in self.qubits:
            if not 0 <= q.mode < m:
                raise ValueError(f"qubit attached to nonexistent mode {q.mode}")

    @property
    def num_modes(self):
        return len(self.energies)

    @property
    def num_qubits(self):
        return len(self.qubits)

    def coupling_matrix(self):
        mat = np.zeros((self.num_modes, self.num_modes))
        for j, k, hop in self.couplings:
            mat[j, k] = mat[k, j] = hop
        return mat

    def energy_scale(self):
        """Largest energy magnitude, used to pick integration steps."""
        values = [self.loss, self.dephasing, abs(self.nonlinearity)]
        values += [abs(e) for e in self.energies]
        values += [abs(f) for f in self.drives]
        values += [abs(h) for _, _, h in self.couplings]
        for q in self.qubits:
            values += [abs(q.energy), abs(q.coupling), q.loss, q.dephasing]
        return max(values)

    def scaled(self, factor):
        """Copy with every energy-dimensioned parameter multiplied by ``factor``."""
        return replace(
            self,
            energies=tuple(factor * e for e in self.energies),
            nonlinearity=factor * self.nonlinearity,
            couplings=tuple((j, k, factor * h) for j, k, h in self.couplings),
            drives=tuple(factor * f for f in self.drives),
            loss=factor * self.loss,
            dephasing=factor * self.dephasing,
            qubits=tuple(
                replace(q, energy=factor * q.energy, coupling=factor * q.coupling,
                        loss=factor * q.loss, dephasing=factor * q.dephasing)
                for q in self.qubits
            ),
        )


@dataclass(frozen=True, eq=False)
class LindbladChannel:
    """One dissipator ``rate * (L rho L^dag - {L^dag L, rho}/2)``; rate in meV."""

    operator: sp.csr_matrix = field(repr=False)
    rate: float
    kind: str
    label: str = ""

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("channel rate must be >= 0")


def build_basis(spec, n_max, scheme="capped-total", **kwargs):
    """Basis matching the mode and qubit counts of ``spec``."""
    return enumerate_basis(spec.num_modes, spec.num_qubits, n_max, scheme, **kwargs)


def _check_dims(spec, basis):
    if basis.num_modes != spec.num_modes or basis.num_qubits != spec.num_qubits:
        raise ValueError(
            f"basis has {basis.num_modes} modes / {basis.num_qubits} qubits, "
            f"spec has {spec.num_modes} / {spec.num_qubits}"
        )


def _cavity_terms(spec, basis):
    ann = [ladder_operator(basis, j, "annihilate") for j in range(spec.num_modes)]
    n = basis.occupations.astype(float)
    diag = n @ np.asarray(spec.energies)
    diag = diag + spec.nonlinearity * np.sum(n * (n - 1), axis=1)
    ham = sp.diags(diag.astype(complex), format="csr")
    for j, f in enumerate(spec.drives):
        if f != 0:
            ham = ham + f * ann[j] + np.conj(f) * ann[j].getH()
    for j, k, hop in spec.couplings:
        hopping = ann[j].getH() @ ann[k]
        ham = ham + hop * (hopping + hopping.getH())
    return ham


def build_kh_hamiltonian(spec, basis):
    """Kerr-Hubbard Hamiltonian in meV."""
    if spec.kind is not HamiltonianKind.KH:
        raise ValueError("spec is not a KH system")
    _check_dims(spec, basis)
    return prune(_cavity_terms(spec, basis))


def build_jch_hamiltonian(spec, basis):
    """Jaynes-Cummings-Hubbard Hamiltonian in meV."""
    if spec.kind is not HamiltonianKind.JCH:
        raise ValueError("spec is not a JCH system")
    _check_dims(spec, basis)
    ham = _cavity_terms(spec, basis)
    for s, q in enumerate(spec.qubits):
        lower = qubit_operator(basis, s, "lower")
        ann = ladder_operator(basis, q.mode, "annihilate")
        exchange = lower.getH() @ ann
        ham = ham + q.energy * qubit_operator(basis, s, "occupation")
        ham = ham + q.coupling * (exchange + exchange.getH())
    return prune(ham)


def build_hamiltonian(spec, basis):
    if spec.kind is HamiltonianKind.JCH:
        return build_jch_hamiltonian(spec, basis)
    return build_kh_hamiltonian(spec, basis)


def build_channels(spec, basis):
    """Loss and dephasing channels; zero-rate channels are omitted."""
    _check_dims(spec, basis)
    channels = []
    for j in range(spec.num_modes):
        if spec.loss > 0:
            channels.append(LindbladChannel(ladder_operator(basis, j, "annihilate"), spec.loss, "loss", f"a{j}"))
        if spec.dephasing > 0:
            channels.append(LindbladChannel(ladder_operator(basis, j, "number"), spec.dephasing, "dephasing", f"n{j}"))
    for s, q in enumerate(spec.qubits):
        if q.loss > 0:
            channels.append(LindbladChannel(qubit_operator(basis, s, "lower"), q.loss, "loss", f"sigma{s}"))
        if q.dephasing > 0:
            channels.append(LindbladChannel(qubit_operator(basis, s, "occupation"), q.dephasing, "dephasing", f"sz{s}"))
    return channels


def build_effective_hamiltonian(hamiltonian, channels):
    """``H - (i/2) sum_c rate_c L_c^dag L_c`` (meV)."""
    heff = sp.csr_matrix(hamiltonian, dtype=complex)
    for ch in channels:
        if ch.operator.shape != heff.shape:
            raise ValueError("channel operator does not match the Hamiltonian dimension")
        heff = heff - 0.5j * ch.rate * (ch.operator.getH() @ ch.operator)
    return prune(heff)
