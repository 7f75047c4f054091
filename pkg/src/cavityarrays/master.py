"""Density-matrix solver for the Lindblad master equation.

Vectorisation is column stacking, ``vec(A rho B) = (B^T kron A) vec(rho)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .hilbert import ladder_operator
from .model import HBAR, build_effective_hamiltonian
from .moments import MomentLayout, MomentTable

__all__ = [
    "SingularSystemError",
    "StepSizeError",
    "DensityMatrix",
    "lindblad_rhs",
    "liouvillian",
    "evolve",
    "steady_state",
    "expectation",
    "density_moments",
    "default_timestep",
    "memory_estimate",
]

logger = logging.getLogger(__name__)

#: Largest number of unknowns (d**2) solved by sparse LU.
DIRECT_SOLVE_LIMIT = 2500

#: Krylov subspace size of the iterative steady-state solver.
GMRES_RESTART = 60


class SingularSystemError(ValueError):
    """The Liouvillian has no unique steady state (e.g. no dissipation)."""


class StepSizeError(RuntimeError):
    """The integrator lost accuracy; the time step is too large."""


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Dense density matrix with solver metadata."""

    matrix: np.ndarray = field(repr=False)
    info: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def trace(self):
        return complex(np.trace(self.matrix))

    def hermiticity_error(self):
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))[0])


def _as_array(rho):
    return rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)


def _dissipation_rate(channels):
    rates = [ch.rate for ch in channels if ch.kind == "loss"]
    return max(rates) if rates else 0.0


def lindblad_rhs(rho, hamiltonian, channels):
    """``d rho / dt`` in ps^-1 for Hamiltonian and rates in meV."""
    rho = _as_array(rho)
    heff = build_effective_hamiltonian(hamiltonian, channels)
    return _rhs(rho, heff, [(ch.rate / HBAR, ch.operator) for ch in channels])


def _rhs(rho, heff, jumps):
    h_rho = heff @ rho
    rho_h = (heff @ rho.conj().T).conj().T
    out = (-1j / HBAR) * (h_rho - rho_h)
    for rate, op in jumps:
        left = op @ rho
        out += rate * (op @ left.conj().T).conj().T
    return out


def liouvillian(hamiltonian, channels):
    """Sparse Liouvillian superoperator (ps^-1) acting on ``vec(rho)``."""
    heff = build_effective_hamiltonian(hamiltonian, channels)
    d = heff.shape[0]
    eye = sp.identity(d, dtype=complex, format="csr")
    sup = (-1j / HBAR) * (sp.kron(eye, heff, format="csr") - sp.kron(heff.conj(), eye, format="csr"))
    for ch in channels:
        op = sp.csr_matrix(ch.operator)
        sup = sup + (ch.rate / HBAR) * sp.kron(op.conj(), op, format="csr")
    return sp.csr_matrix(sup)


#: Largest eigenvector condition number accepted by the diagonal preconditioner.
EIGEN_CONDITION_LIMIT = 1e6


def _sylvester_inverse(heff, shift):
    """Inverse of the no-jump part ``X -> (-i/HBAR)(H X - X H^dag)``.

    With ``A = H - i shift/2 = V diag(lam) V^-1`` the equation
    ``A X - X A^dag = R`` is solved by ``X = V Y V^dag`` with
    ``Y_jk = (V^-1 R V^-dag)_jk / (lam_j - conj(lam_k))``: four dense
    products per application. If ``V`` is ill-conditioned, a complex Schur
    factorisation and triangular Sylvester solves are used instead.
    """
    d = heff.shape[0]
    shifted = heff.toarray() - 0.5j * shift * np.eye(d)
    lam, vecs = np.linalg.eig(shifted)
    if np.linalg.cond(vecs) < EIGEN_CONDITION_LIMIT:
        vinv = np.linalg.inv(vecs)
        vinv_h = vinv.conj().T
        vecs_h = vecs.conj().T
        denom = lam[:, None] - lam.conj()[None, :]

        def apply_diagonal(vec):
            rhs = vinv @ ((1j * HBAR) * vec.reshape(d, d)) @ vinv_h
            return (vecs @ (rhs / denom) @ vecs_h).ravel()

        return apply_diagonal

    tri, unitary = sla.schur(shifted, output="complex")
    (trsyl,) = sla.get_lapack_funcs(("trsyl",), (tri,))
    unitary_h = unitary.conj().T

    def apply(vec):
        rhs = unitary_h @ ((1j * HBAR) * vec.reshape(d, d)) @ unitary
        sol, scale, info = trsyl(tri, tri, rhs, trana="N", tranb="C", isgn=-1)
        if info < 0:  # pragma: no cover - LAPACK argument error
            raise SingularSystemError(f"trsyl failed with info={info}")
        return (unitary @ (sol / scale) @ unitary_h).ravel()

    return apply


def _steady_state_direct(hamiltonian, channels):
    d = hamiltonian.shape[0]
    lv = liouvillian(hamiltonian, channels).tolil()
    lv.rows[0] = list(np.arange(d) * (d + 1))
    lv.data[0] = [1.0 + 0j] * d
    rhs = np.zeros(d * d, dtype=complex)
    rhs[0] = 1.0
    try:
        vec = spla.splu(sp.csc_matrix(lv), permc_spec="COLAMD").solve(rhs)
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    return vec.reshape((d, d), order="F"), {}


def memory_estimate(dim, restart=GMRES_RESTART):
    """Predicted peak memory (bytes) of :func:`steady_state` for a ``dim``-state basis."""
    if dim * dim <= DIRECT_SOLVE_LIMIT:
        return 16 * dim**4
    return 16 * dim * dim * (restart + 12)


def _steady_state_iterative(hamiltonian, channels, gamma, rtol, restart):
    # Solve L(rho) + tr(rho) sigma = sigma, right-preconditioned by the
    # inverse no-jump superoperator. tr(L(rho)) = 0 forces tr(rho) = 1.
    heff = build_effective_hamiltonian(hamiltonian, channels)
    d = heff.shape[0]
    jumps = [(ch.rate / HBAR, sp.csr_matrix(ch.operator)) for ch in channels]
    precond = _sylvester_inverse(heff, 1e-2 * gamma)
    sigma = np.zeros((d, d), dtype=complex)
    sigma[0, 0] = gamma / HBAR
    calls = [0]

    def matvec(y):
        calls[0] += 1
        rho = precond(y).reshape(d, d)
        return (_rhs(rho, heff, jumps) + np.trace(rho) * sigma).ravel()

    op = spla.LinearOperator((d * d, d * d), matvec=matvec, dtype=complex)
    y, status = spla.gmres(op, sigma.ravel(), rtol=rtol, atol=0, restart=restart, maxiter=50)
    if status != 0:
        raise SingularSystemError(f"preconditioned GMRES did not converge (status {status})")
    return precond(y).reshape(d, d), {"matvecs": calls[0]}


def steady_state(hamiltonian, channels, *, residual_tol=1e-10, direct_limit=DIRECT_SOLVE_LIMIT, rtol=1e-12,
                 restart=GMRES_RESTART):
    """Solve ``d rho/dt = 0`` with ``tr(rho) = 1``.

    Up to ``direct_limit`` unknowns (``d**2``) one diagonal equation of the
    Liouvillian is replaced by the trace row and the system is factorised
    with sparse LU. Larger systems use GMRES preconditioned by the inverse of
    the no-jump superoperator.

    Raises
    ------
    SingularSystemError
        If no loss channel is present, or the solve fails.
    """
    gamma = _dissipation_rate(channels)
    if gamma <= 0:
        raise SingularSystemError("a loss channel with rate > 0 is required for a unique steady state")
    d = hamiltonian.shape[0]
    if d * d <= direct_limit:
        method = "splu"
        rho, extra = _steady_state_direct(hamiltonian, channels)
    else:
        method = "gmres+sylvester"
        rho, extra = _steady_state_iterative(hamiltonian, channels, gamma, rtol, restart)

    if not np.all(np.isfinite(rho)):
        raise SingularSystemError("steady-state solve produced non-finite values")
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    residual = float(np.max(np.abs(lindblad_rhs(rho, hamiltonian, channels))))
    bound = residual_tol * gamma / HBAR
    info = dict(method=method, residual=residual, residual_bound=bound, **extra)
    if residual > bound:
        logger.warning("steady-state residual %.3e exceeds %.3e", residual, bound)
    return DensityMatrix(rho, info)


def default_timestep(spec, factor=0.02):
    """``factor * HBAR / energy_scale`` (ps)."""
    return factor * HBAR / spec.energy_scale()


def evolve(rho0, hamiltonian, channels, t_final, dt, *, trace_tol=1e-8, symmetrize_every=100):
    """Fourth-order Runge-Kutta integration of the master equation.

    The trace is renormalised after every step and the matrix is re-Hermitised
    every ``symmetrize_every`` steps.

    Raises
    ------
    StepSizeError
        If the trace drifts by more than ``trace_tol`` in a single step.
    """
    rho = np.array(_as_array(rho0), dtype=complex)
    heff = build_effective_hamiltonian(hamiltonian, channels)
    jumps = [(ch.rate / HBAR, sp.csr_matrix(ch.operator)) for ch in channels]
    steps = int(np.ceil(t_final / dt - 1e-9)) if t_final > 0 else 0
    h = t_final / steps if steps else 0.0
    for step in range(1, steps + 1):
        k1 = _rhs(rho, heff, jumps)
        k2 = _rhs(rho + 0.5 * h * k1, heff, jumps)
        k3 = _rhs(rho + 0.5 * h * k2, heff, jumps)
        k4 = _rhs(rho + h * k3, heff, jumps)
        rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        tr = np.trace(rho)
        if not np.isfinite(tr) or abs(tr - 1.0) > trace_tol:
            raise StepSizeError(f"trace drift {abs(tr - 1.0):.3e} at step {step}; reduce dt")
        rho /= tr
        if step % symmetrize_every == 0:
            rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho, dict(method="rk4", dt=h, steps=steps, t_final=t_final))


def expectation(rho, op):
    """``tr(rho op)``."""
    rho = _as_array(rho)
    if sp.issparse(op):
        return complex(sp.csr_matrix(op).multiply(rho.T).sum())
    return complex(np.sum(rho.T * np.asarray(op)))


def density_moments(rho, basis, modes=None):
    """:class:`MomentTable` of ``modes`` (default: all) from a density matrix."""
    rho = _as_array(rho)
    modes = tuple(range(basis.num_modes)) if modes is None else tuple(modes)
    layout = MomentLayout(modes, basis.num_modes)
    ann = [ladder_operator(basis, m, "annihilate") for m in modes]
    k = len(modes)
    mean = np.array([expectation(rho, a) for a in ann])
    normal = np.zeros((k, k), dtype=complex)
    anomalous = np.zeros((k, k), dtype=complex)
    for i in range(k):
        for j in range(i, k):
            normal[i, j] = expectation(rho, ann[i].getH() @ ann[j])
            anomalous[i, j] = expectation(rho, ann[i] @ ann[j])
    diag = np.real(np.diag(rho))
    occ = basis.occupations.astype(float)
    occupations = occ.T @ diag
    occupation_sq = (occ**2).T @ diag
    return MomentTable.from_vector(layout, layout.pack(mean, normal, anomalous, occupations, occupation_sq))
