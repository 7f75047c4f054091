"""Wavefunction Monte Carlo (quantum trajectory) engine.

Each step either applies one quantum jump, chosen with probability
``rate * dt / HBAR * <L^dag L>``, or advances the state with the
non-Hermitian Hamiltonian. The state is renormalised after every step and
every jump. One uniform variate per step decides between the two and picks
the channel.

Trajectories run in batches: the batch is a ``(dim, B)`` array advanced with
one matrix product per step. Every trajectory owns its own counter-based
random stream, so results do not depend on batch layout or execution order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .hilbert import ladder_operator
from .model import HBAR, build_basis, build_channels, build_effective_hamiltonian, build_hamiltonian
from .moments import MomentLayout, MomentTable

__all__ = [
    "NormCollapseError",
    "JumpProbabilityError",
    "TrajectoryConfig",
    "TrajectoryOperators",
    "MomentAccumulator",
    "prepare",
    "step",
    "jump_probabilities",
    "apply_jump",
    "run_trajectory",
    "run_ensemble",
    "trajectory_rng",
]

logger = logging.getLogger(__name__)

#: Above this dimension the RK4 step is applied with sparse products.
DENSE_PROPAGATOR_LIMIT = 2000


class NormCollapseError(RuntimeError):
    """State norm fell below 1e-12; the step is far too large."""


class JumpProbabilityError(RuntimeError):
    """Total jump probability in one step reached ``p_max``."""


@dataclass(frozen=True)
class TrajectoryConfig:
    """Time grid and sampling for WFMC runs (times in ps).

    ``None`` entries are resolved against a :class:`SystemSpec` by
    :meth:`resolve`: ``dt = dt_factor * HBAR / energy_scale`` (further capped
    so the worst-case jump probability stays below ``p_max``),
    ``burn_in = 15 HBAR/gamma`` and ``average_window = 50 HBAR/gamma``.
    """

    dt: float | None = None
    burn_in: float | None = None
    average_window: float | None = None
    num_trajectories: int = 100
    seed: int = 0
    p_max: float = 0.05
    sample_every: int = 1
    batch_size: int = 64
    dt_factor: float = 0.02

    def __post_init__(self):
        if not 0 < self.p_max <= 0.1:
            raise ValueError("p_max must lie in (0, 0.1]")
        if self.num_trajectories < 1:
            raise ValueError("num_trajectories must be >= 1")
        if self.sample_every < 1 or self.batch_size < 1:
            raise ValueError("sample_every and batch_size must be >= 1")

    def resolve(self, spec, n_max=None):
        dt = self.dt
        if dt is None:
            dt = self.dt_factor * HBAR / spec.energy_scale()
            if n_max is not None:
                # Worst case: every photon sits in one mode at the cap.
                worst = spec.loss * n_max + spec.dephasing * n_max**2
                worst += sum(q.loss + q.dephasing for q in spec.qubits)
                dt = min(dt, self.p_max * HBAR / worst)
        burn_in = 15 * HBAR / spec.loss if self.burn_in is None else self.burn_in
        window = 50 * HBAR / spec.loss if self.average_window is None else self.average_window
        return replace(self, dt=float(dt), burn_in=float(burn_in), average_window=float(window))

    def scaled_time(self, factor):
        """Copy with every explicit time divided by ``factor``."""
        div = lambda t: None if t is None else t / factor
        return replace(self, dt=div(self.dt), burn_in=div(self.burn_in), average_window=div(self.average_window))


def trajectory_rng(seed, index):
    """Independent Philox stream for trajectory ``index`` of master ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(int(index),))))


# --- single-trajectory primitives -------------------------------------------------


def _rk4_polynomial(x, psi):
    # psi + x psi + x^2 psi/2 + x^3 psi/6 + x^4 psi/24 (Horner form)
    out = psi + (x @ psi) / 4.0
    out = psi + (x @ out) / 3.0
    out = psi + (x @ out) / 2.0
    return psi + x @ out


def step(psi, heff, dt, normalize=True):
    """One RK4 step of ``i HBAR dpsi/dt = H_eff psi``, then renormalise.

    Raises
    ------
    NormCollapseError
        If the norm after the step is below 1e-12 or not finite.
    """
    out = _rk4_polynomial((-1j * dt / HBAR) * heff, np.asarray(psi, dtype=complex))
    norm = np.linalg.norm(out)
    if not 1e-12 <= norm < np.inf:
        raise NormCollapseError(f"norm {norm:.3e} after step; reduce dt")
    return out / norm if normalize else out


def jump_probabilities(psi, channels, dt, p_max=0.1):
    """``rate * dt / HBAR * <psi|L^dag L|psi>`` for every channel.

    Raises
    ------
    JumpProbabilityError
        If the probabilities sum to ``p_max`` or more.
    """
    probs = np.array([
        ch.rate * dt / HBAR * np.vdot(ch.operator @ psi, ch.operator @ psi).real for ch in channels
    ])
    total = probs.sum()
    if total >= p_max:
        raise JumpProbabilityError(f"total jump probability {total:.4f} >= p_max={p_max}; reduce dt")
    return probs


def apply_jump(psi, channel):
    """Normalised ``L psi``."""
    out = channel.operator @ psi
    norm = np.linalg.norm(out)
    if not norm > 0:
        raise RuntimeError(f"jump {channel.label!r} produced a zero vector (zero-probability jump selected)")
    return out / norm


# --- batched engine ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrajectoryOperators:
    """Everything a trajectory needs, built once per system."""

    basis: object = field(repr=False)
    hamiltonian: sp.csr_matrix = field(repr=False)
    channels: list = field(repr=False)
    heff: sp.csr_matrix = field(repr=False)
    modes: tuple = ()

    @property
    def dim(self):
        return self.basis.dim

    @property
    def layout(self):
        return MomentLayout(self.modes, self.basis.num_modes)


def prepare(spec, n_max, modes=None, scheme="capped-total"):
    """Build basis, Hamiltonian, channels and ``H_eff`` for ``spec``."""
    basis = build_basis(spec, n_max, scheme)
    ham = build_hamiltonian(spec, basis)
    channels = build_channels(spec, basis)
    modes = tuple(range(spec.num_modes)) if modes is None else tuple(modes)
    return TrajectoryOperators(basis, ham, channels, build_effective_hamiltonian(ham, channels), modes)


class _Engine:
    """Batched propagation, jumps and moment sampling for one system."""

    def __init__(self, ops, dt, p_max, dense_limit=DENSE_PROPAGATOR_LIMIT):
        self.ops = ops
        self.dt = dt
        self.p_max = p_max
        x = (-1j * dt / HBAR) * ops.heff
        if ops.dim <= dense_limit:
            self._dense = _rk4_polynomial(x.toarray(), np.eye(ops.dim, dtype=complex))
            self._x = None
        else:
            self._dense = None
            self._x = sp.csr_matrix(x)
        self.coeff = np.array([ch.rate * dt / HBAR for ch in ops.channels])
        self.jump_ops = [sp.csr_matrix(ch.operator) for ch in ops.channels]
        weights = []
        self._general = []
        for c, op in enumerate(self.jump_ops):
            ldl = (op.getH() @ op).tocsr()
            off = ldl - sp.diags(ldl.diagonal())
            if off.count_nonzero():
                weights.append(np.zeros(ops.dim))
                self._general.append((c, ldl))
            else:
                weights.append(ldl.diagonal().real)
        self.weights = np.array(weights).T if weights else np.zeros((ops.dim, 0))
        self.ann = [ladder_operator(ops.basis, m, "annihilate") for m in ops.modes]
        self.cre = [a.getH().tocsr() for a in self.ann]
        occ = ops.basis.occupations.astype(float)
        self.occ = occ
        self.occ_sq = occ**2
        self.layout = ops.layout

    def probabilities(self, psi, pop):
        expect = self.weights.T @ pop
        for c, ldl in self._general:
            expect[c] = np.real(np.sum(np.conj(psi) * (ldl @ psi), axis=0))
        return self.coeff[:, None] * expect

    def advance(self, psi):
        if self._dense is not None:
            return self._dense @ psi
        return _rk4_polynomial(self._x, psi)

    def step(self, psi, uniforms):
        pop = np.abs(psi) ** 2
        probs = self.probabilities(psi, pop)
        total = probs.sum(axis=0)
        if np.any(total >= self.p_max):
            raise JumpProbabilityError(
                f"total jump probability {total.max():.4f} >= p_max={self.p_max}; reduce dt")
        jumped = uniforms < total
        new = self.advance(psi)
        for b in np.nonzero(jumped)[0]:
            c = int(np.searchsorted(np.cumsum(probs[:, b]), uniforms[b], side="right"))
            c = min(c, len(self.jump_ops) - 1)
            new[:, b] = self.jump_ops[c] @ psi[:, b]
        norms = np.linalg.norm(new, axis=0)
        if not np.all((norms >= 1e-12) & (norms < np.inf)):
            raise NormCollapseError(f"norm {norms.min():.3e} after step; reduce dt")
        return new / norms, jumped

    def moments(self, psi):
        pop = np.abs(psi) ** 2
        ann_psi = [a @ psi for a in self.ann]
        cre_psi = [c @ psi for c in self.cre]
        conj_psi = np.conj(psi)
        k = len(self.ann)
        rows = []
        for i in range(k):
            rows.append(np.sum(conj_psi * ann_psi[i], axis=0))
        for i in range(k):
            for j in range(i, k):
                rows.append(np.sum(np.conj(ann_psi[i]) * ann_psi[j], axis=0))
        for i in range(k):
            for j in range(i, k):
                rows.append(np.sum(np.conj(cre_psi[i]) * ann_psi[j], axis=0))
        rows.extend(self.occ.T @ pop)
        rows.extend(self.occ_sq.T @ pop)
        return np.array(rows, dtype=complex)


@dataclass(eq=False)
class MomentAccumulator:
    """Time-averaged moments of a set of trajectories.

    ``sums[i]`` is the time-averaged moment vector of trajectory
    ``trajectory_ids[i]``. Merging concatenates; all derived quantities sort
    by trajectory id, so merge order never matters.
    """

    layout: MomentLayout
    trajectory_ids: np.ndarray
    means: np.ndarray
    samples: np.ndarray
    jumps: np.ndarray

    @classmethod
    def empty(cls, layout):
        return cls(layout, np.zeros(0, dtype=np.int64), np.zeros((0, layout.size), dtype=complex),
                   np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    def merge(self, other):
        if other.layout != self.layout:
            raise ValueError("cannot merge accumulators with different layouts")
        ids = np.concatenate([self.trajectory_ids, other.trajectory_ids])
        if len(np.unique(ids)) != len(ids):
            raise ValueError("trajectory ids overlap")
        return MomentAccumulator(
            self.layout, ids,
            np.concatenate([self.means, other.means]),
            np.concatenate([self.samples, other.samples]),
            np.concatenate([self.jumps, other.jumps]),
        )

    def __add__(self, other):
        return self.merge(other)

    @property
    def count(self):
        return len(self.trajectory_ids)

    def table(self):
        """Ensemble :class:`MomentTable` with one replica per trajectory."""
        if self.count == 0:
            raise ValueError("no trajectories accumulated")
        order = np.argsort(self.trajectory_ids, kind="stable")
        return MomentTable.from_replicas(self.layout, self.means[order])


def _run_batch(engine, config, ids):
    cfg = config
    batch = len(ids)
    rngs = [trajectory_rng(cfg.seed, i) for i in ids]
    chunk = 4096
    buffers = np.empty((batch, chunk))
    pos = chunk

    psi = np.zeros((engine.ops.dim, batch), dtype=complex)
    psi[engine.ops.basis.vacuum_index(), :] = 1.0

    burn_steps = int(round(cfg.burn_in / cfg.dt))
    window_steps = int(round(cfg.average_window / cfg.dt))
    sums = np.zeros((engine.layout.size, batch), dtype=complex)
    samples = 0
    jumps = np.zeros(batch, dtype=np.int64)
    for n in range(burn_steps + window_steps):
        if pos == chunk:
            for b, rng in enumerate(rngs):
                buffers[b] = rng.random(chunk)
            pos = 0
        psi, jumped = engine.step(psi, buffers[:, pos])
        jumps += jumped
        pos += 1
        if n >= burn_steps and (n - burn_steps) % cfg.sample_every == 0:
            sums += engine.moments(psi)
            samples += 1
    if samples == 0:
        sums += engine.moments(psi)
        samples = 1
    return MomentAccumulator(engine.layout, np.asarray(ids, dtype=np.int64), (sums / samples).T.copy(),
                             np.full(batch, samples, dtype=np.int64), jumps)


def _engine_for(ops, config):
    return _Engine(ops, config.dt, config.p_max)


def run_trajectory(ops, config, index=0):
    """Evolve one trajectory from the vacuum and time-average its moments.

    ``config`` must be resolved (all times set). The trajectory's random
    stream is fixed by ``(config.seed, index)``.
    """
    if config.dt is None or config.burn_in is None or config.average_window is None:
        raise ValueError("resolve the TrajectoryConfig first")
    return _run_batch(_engine_for(ops, config), config, [index])


def run_ensemble(ops, config, *, progress=None):
    """Average ``config.num_trajectories`` trajectories into a :class:`MomentTable`.

    The returned table carries one replica per trajectory, from which
    standard errors are computed.
    """
    if config.dt is None or config.burn_in is None or config.average_window is None:
        raise ValueError("resolve the TrajectoryConfig first")
    engine = _engine_for(ops, config)
    acc = MomentAccumulator.empty(engine.layout)
    ids = np.arange(config.num_trajectories)
    for start in range(0, len(ids), config.batch_size):
        chunk = ids[start:start + config.batch_size]
        acc = acc.merge(_run_batch(engine, config, chunk))
        if progress is not None:
            progress(acc.count, config.num_trajectories)
    return acc.table()
