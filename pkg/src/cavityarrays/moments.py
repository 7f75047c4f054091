"""First and second ladder moments of selected modes.

A :class:`MomentTable` is the common currency between the solvers and the
entanglement witnesses. Moments are packed into a flat complex vector (see
:class:`MomentLayout`) so that Monte Carlo runs can accumulate them with
plain sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = ["MomentLayout", "MomentTable", "MissingMomentError"]


class MissingMomentError(KeyError):
    """A witness asked for a mode that the table does not carry."""


@dataclass(frozen=True)
class MomentLayout:
    """Packing order of a moment vector.

    ``[<a_n>] + [<a_n^dag a_m>, n<=m] + [<a_n a_m>, n<=m] + [<n_j>] + [<n_j^2>]``
    where ``n, m`` run over the selected modes and ``j`` over all modes.
    """

    modes: tuple
    num_modes: int

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))

    @property
    def k(self):
        return len(self.modes)

    @property
    def pairs(self):
        return [(a, b) for a in range(self.k) for b in range(a, self.k)]

    @property
    def size(self):
        k = self.k
        return k + k * (k + 1) + 2 * self.num_modes

    def slices(self):
        k, npair, m = self.k, len(self.pairs), self.num_modes
        edges = np.cumsum([0, k, npair, npair, m, m])
        names = ["mean", "normal", "anomalous", "occupations", "occupation_sq"]
        return {name: slice(edges[i], edges[i + 1]) for i, name in enumerate(names)}

    def pack(self, mean, normal, anomalous, occupations, occupation_sq):
        rows, cols = np.triu_indices(self.k)
        return np.concatenate([
            np.asarray(mean, dtype=complex),
            np.asarray(normal)[rows, cols],
            np.asarray(anomalous)[rows, cols],
            np.asarray(occupations, dtype=complex),
            np.asarray(occupation_sq, dtype=complex),
        ])

    def unpack(self, vector):
        s = self.slices()
        rows, cols = np.triu_indices(self.k)
        normal = np.zeros((self.k, self.k), dtype=complex)
        normal[rows, cols] = vector[s["normal"]]
        normal[cols, rows] = np.conj(vector[s["normal"]])
        normal[np.diag_indices(self.k)] = normal.diagonal().real
        anomalous = np.zeros((self.k, self.k), dtype=complex)
        anomalous[rows, cols] = vector[s["anomalous"]]
        anomalous[cols, rows] = vector[s["anomalous"]]
        return dict(
            mean=np.array(vector[s["mean"]]),
            normal=normal,
            anomalous=anomalous,
            occupations=np.real(vector[s["occupations"]]),
            occupation_sq=np.real(vector[s["occupation_sq"]]),
        )


@dataclass(frozen=True, eq=False)
class MomentTable:
    """Ladder moments of the selected ``modes``.

    Attributes
    ----------
    modes : tuple of int
        Mode labels; row/column ``i`` of the matrices refers to ``modes[i]``.
    mean : ndarray (k,)
        ``<a_n>``.
    normal : ndarray (k, k)
        ``<a_n^dag a_m>`` (Hermitian).
    anomalous : ndarray (k, k)
        ``<a_n a_m>`` (symmetric).
    occupations, occupation_sq : ndarray (M,)
        ``<n_j>`` and ``<n_j^2>`` for every mode of the system.
    replicas : ndarray (N_R, size) or None
        Per-trajectory moment vectors when the table comes from Monte Carlo.
    """

    modes: tuple
    mean: np.ndarray
    normal: np.ndarray
    anomalous: np.ndarray
    occupations: np.ndarray
    occupation_sq: np.ndarray
    replicas: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))

    @property
    def layout(self):
        return MomentLayout(self.modes, len(self.occupations))

    @classmethod
    def from_vector(cls, layout, vector, replicas=None):
        return cls(layout.modes, replicas=replicas, **layout.unpack(np.asarray(vector)))

    def to_vector(self):
        return self.layout.pack(self.mean, self.normal, self.anomalous, self.occupations, self.occupation_sq)

    @classmethod
    def from_replicas(cls, layout, replicas):
        replicas = np.asarray(replicas)
        return cls.from_vector(layout, replicas.mean(axis=0), replicas=replicas)

    @property
    def num_replicas(self):
        return 0 if self.replicas is None else len(self.replicas)

    def position(self, mode):
        try:
            return self.modes.index(int(mode))
        except ValueError:
            raise MissingMomentError(f"mode {mode} is not in the moment table {self.modes}") from None

    def select(self, modes):
        """Sub-table restricted to ``modes`` (in the given order)."""
        idx = [self.position(m) for m in modes]

        def restrict(t):
            return MomentTable(tuple(modes), t.mean[idx], t.normal[np.ix_(idx, idx)],
                               t.anomalous[np.ix_(idx, idx)], t.occupations, t.occupation_sq)

        out = restrict(self)
        if self.replicas is not None:
            reps = [restrict(MomentTable.from_vector(self.layout, r)).to_vector() for r in self.replicas]
            out = replace(out, replicas=np.array(reps))
        return out

    def rotated(self, phases):
        """Moments after the local transformation ``a_n -> a_n exp(-i phi_n)``."""
        ph = np.exp(-1j * np.asarray(phases, dtype=float))
        if ph.shape != (len(self.modes),):
            raise ValueError("need one phase per selected mode")
        return MomentTable(
            self.modes,
            self.mean * ph,
            self.normal * np.outer(np.conj(ph), ph),
            self.anomalous * np.outer(ph, ph),
            self.occupations,
            self.occupation_sq,
        )

    def standard_errors(self):
        """Standard error of every packed moment (real and imaginary parts separately).

        Returns ``None`` for deterministic tables. With a single replica the
        error is infinite.
        """
        if self.replicas is None:
            return None
        n = len(self.replicas)
        if n < 2:
            inf = np.full(self.layout.size, np.inf)
            return inf + 1j * inf
        re = np.std(self.replicas.real, axis=0, ddof=1) / np.sqrt(n)
        im = np.std(self.replicas.imag, axis=0, ddof=1) / np.sqrt(n)
        return re + 1j * im

    def occupation_errors(self):
        se = self.standard_errors()
        if se is None:
            return np.zeros_like(self.occupations)
        return se.real[self.layout.slices()["occupations"]]

    def replica_tables(self, blocks=None):
        """Yield tables built from jackknife leave-one-block-out subsets."""
        if self.replicas is None:
            raise ValueError("table has no replicas")
        n = len(self.replicas)
        blocks = n if blocks is None else min(blocks, n)
        groups = np.array_split(np.arange(n), blocks)
        total = self.replicas.sum(axis=0)
        for g in groups:
            rest = (total - self.replicas[g].sum(axis=0)) / (n - len(g))
            yield MomentTable.from_vector(self.layout, rest)
