"""Continuous-variable entanglement witnesses from ladder moments.

Quadratures are normalised as ``p = (a + a^dag)/2`` and
``q = (a - a^dag)/(2i)``, so the vacuum variance is 1/4 and every separability
bound below equals 1. Other conventions rescale the bound.

Bipartite witness::

    S_nm = V(p_n - p_m) + V(q_n + q_m) >= 1

Quadripartite witnesses on slots 0..3::

    I_a = V(p_1 - p_2) + V(q_1 + q_2 + g_A q_3 + g_B q_0)
    I_b = V(p_2 - p_3) + V(g_C q_1 + q_2 + q_3 + g_B q_0)
    I_c = V(p_3 - p_0) + V(g_C q_1 + g_D q_2 + q_3 + q_0)

Entanglement of all four parties is certified when ``max(I_a, I_b, I_c) < 1``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .moments import MissingMomentError, MomentTable

__all__ = [
    "MomentTable",
    "MissingMomentError",
    "UnphysicalMomentsError",
    "SymmetryError",
    "QuadratureCovariances",
    "WitnessResult",
    "quadrature_covariances",
    "bipartite_S",
    "bipartite_S_optimized",
    "quadripartite_I",
    "quadripartite_I_expanded",
    "optimize_g_symmetric",
    "optimize_g_chain",
    "optimize_g_numeric",
    "quadripartite_optimized",
    "jackknife_error",
]

logger = logging.getLogger(__name__)

ROUNDOFF = 1e-12


class UnphysicalMomentsError(ValueError):
    """Moments violate a positivity constraint by more than round-off."""


class SymmetryError(ValueError):
    """Moment table is not ring-symmetric within tolerance."""


@dataclass(frozen=True)
class QuadratureCovariances:
    """``q[n, m] = V_nm`` (``q[n, n] = V_n``) and ``p[n, m] = V'_nm``, in table order."""

    q: np.ndarray
    p: np.ndarray
    mean_q: np.ndarray
    mean_p: np.ndarray


@dataclass(frozen=True)
class WitnessResult:
    """Optimised witness value and the parameters that reach it."""

    value: float
    phases: np.ndarray
    g: np.ndarray | None = None
    components: dict | None = None
    info: dict = field(default_factory=dict)

    @property
    def entangled(self):
        return self.value < 1.0


# --- covariances -------------------------------------------------------------------


def quadrature_covariances(moments, phases=None):
    """Quadrature covariance matrices after the rotation ``a_n -> a_n e^{-i phi_n}``."""
    table = moments if phases is None else moments.rotated(phases)
    normal, anomalous, mean = table.normal, table.anomalous, table.mean
    eye = np.eye(len(mean))
    second_p = 0.5 * np.real(anomalous + normal) + 0.25 * eye
    second_q = 0.5 * np.real(normal - anomalous) + 0.25 * eye
    mean_p, mean_q = mean.real, mean.imag
    cov_p = second_p - np.outer(mean_p, mean_p)
    cov_q = second_q - np.outer(mean_q, mean_q)
    # <p_n p_m> uses the symmetrised normal part; enforce exact symmetry.
    cov_p = 0.5 * (cov_p + cov_p.T)
    cov_q = 0.5 * (cov_q + cov_q.T)
    return QuadratureCovariances(cov_q, cov_p, mean_q, mean_p)


def _ladder_variance(table, beta):
    """Variance of ``sum_n (beta_n a_n + conj(beta_n) a_n^dag)`` over table modes."""
    beta = np.asarray(beta, dtype=complex)
    mean = 2.0 * np.real(beta @ table.mean)
    second = (2.0 * np.real(beta @ table.anomalous @ beta)
              + 2.0 * np.real(np.conj(beta) @ table.normal @ beta)
              + np.sum(np.abs(beta) ** 2))
    return second - mean**2


def _beta(k, p=None, q=None):
    beta = np.zeros(k, dtype=complex)
    for idx, c in (p or {}).items():
        beta[idx] += 0.5 * c
    for idx, c in (q or {}).items():
        beta[idx] += -0.5j * c
    return beta


# --- bipartite ---------------------------------------------------------------------


def bipartite_S(moments, n, m, phases=None):
    """``V(p_n - p_m) + V(q_n + q_m)`` for mode labels ``n`` and ``m``."""
    if n == m:
        raise ValueError("bipartite witness needs two distinct modes")
    i, j = moments.position(n), moments.position(m)
    cov = quadrature_covariances(moments, phases)
    return float(cov.p[i, i] + cov.p[j, j] - 2 * cov.p[i, j] + cov.q[i, i] + cov.q[j, j] + 2 * cov.q[i, j])


def _number_variance(table, i):
    value = float(table.normal[i, i].real - abs(table.mean[i]) ** 2)
    if value < -ROUNDOFF:
        raise UnphysicalMomentsError(f"<n> - |<a>|^2 = {value:.3e} < 0 for mode {table.modes[i]}")
    return max(value, 0.0)


def bipartite_S_optimized(moments, n, m, *, cross_check=True):
    """Minimum of ``S_nm`` over local phase references.

    Closed form: ``1 + dN_n + dN_m - 2 |<a_n a_m> - <a_n><a_m>|`` with
    ``dN = <a^dag a> - |<a>|^2``. With ``cross_check`` the value is compared
    with a numeric minimisation over the phase sum; the result is stored in
    ``info["numeric"]``.
    """
    if n == m:
        raise ValueError("bipartite witness needs two distinct modes")
    i, j = moments.position(n), moments.position(m)
    corr = moments.anomalous[i, j] - moments.mean[i] * moments.mean[j]
    value = 1.0 + _number_variance(moments, i) + _number_variance(moments, j) - 2.0 * abs(corr)
    phases = np.zeros(len(moments.modes))
    phases[i] = float(np.angle(corr))
    info = {}
    if cross_check:
        def s_of(total):
            ph = np.zeros(len(moments.modes))
            ph[i] = total
            return bipartite_S(moments, n, m, ph)

        grid = np.linspace(0, 2 * np.pi, 73)
        start = grid[np.argmin([s_of(t) for t in grid])]
        res = optimize.minimize_scalar(s_of, bounds=(start - 0.1, start + 0.1), method="bounded",
                                       options={"xatol": 1e-10})
        info["numeric"] = float(res.fun)
        if res.fun < value - 1e-9:
            logger.warning("numeric phase search beat the closed form: %.12f < %.12f", res.fun, value)
    return WitnessResult(float(value), phases, info=info)


# --- quadripartite -----------------------------------------------------------------


def _slot_positions(moments, slots):
    slots = tuple(int(s) for s in slots)
    if len(slots) != 4 or len(set(slots)) != 4:
        raise ValueError(f"slot map must assign 4 distinct modes, got {slots}")
    return [moments.position(s) for s in slots]


def _split_g(g):
    g = np.broadcast_to(np.asarray(g, dtype=float), (4,))
    return g[0], g[1], g[2], g[3]


def _direct(table, pos, g):
    k = len(table.modes)
    s0, s1, s2, s3 = pos
    ga, gb, gc, gd = _split_g(g)
    var = lambda p, q: _ladder_variance(table, _beta(k, p, q))
    i_a = var({s1: 1, s2: -1}, None) + var(None, {s1: 1, s2: 1, s3: ga, s0: gb})
    i_b = var({s2: 1, s3: -1}, None) + var(None, {s1: gc, s2: 1, s3: 1, s0: gb})
    i_c = var({s3: 1, s0: -1}, None) + var(None, {s1: gc, s2: gd, s3: 1, s0: 1})
    return {"I_a": float(i_a), "I_b": float(i_b), "I_c": float(i_c)}


def _expanded(cov, pos, g):
    idx = np.asarray(pos)
    V = cov.q[np.ix_(idx, idx)]
    W = cov.p[np.ix_(idx, idx)]
    ga, gb, gc, gd = _split_g(g)
    i_a = (W[1, 1] + W[2, 2] - 2 * W[1, 2] + V[1, 1] + V[2, 2] + 2 * V[1, 2]
           + 2 * ga * (V[1, 3] + V[2, 3]) + 2 * gb * (V[0, 1] + V[0, 2])
           + ga**2 * V[3, 3] + 2 * ga * gb * V[0, 3] + gb**2 * V[0, 0])
    i_b = (W[2, 2] + W[3, 3] - 2 * W[2, 3] + V[2, 2] + V[3, 3] + 2 * V[2, 3]
           + 2 * gb * (V[0, 2] + V[0, 3]) + 2 * gc * (V[1, 2] + V[1, 3])
           + gb**2 * V[0, 0] + 2 * gb * gc * V[0, 1] + gc**2 * V[1, 1])
    i_c = (W[3, 3] + W[0, 0] - 2 * W[0, 3] + V[3, 3] + V[0, 0] + 2 * V[0, 3]
           + 2 * gc * (V[1, 3] + V[0, 1]) + 2 * gd * (V[2, 3] + V[0, 2])
           + gc**2 * V[1, 1] + 2 * gc * gd * V[1, 2] + gd**2 * V[2, 2])
    return {"I_a": float(i_a), "I_b": float(i_b), "I_c": float(i_c)}


def quadripartite_I_expanded(moments, slots, g, phases=None):
    """``I_a, I_b, I_c`` from the quadrature covariances ``V_nm`` and ``V'_nm``."""
    pos = _slot_positions(moments, slots)
    return _expanded(quadrature_covariances(moments, phases), pos, g)


def quadripartite_I(moments, slots, g, phases=None, *, check=True):
    """``{"I_a", "I_b", "I_c"}`` for mode labels ``slots = (s0, s1, s2, s3)``.

    ``g`` is ``(g_A, g_B, g_C, g_D)`` or a scalar used for all four. The
    value is computed from ladder moments directly; with ``check`` it is
    compared against the covariance expansion and a mismatch above 1e-10
    raises ``ArithmeticError``.
    """
    pos = _slot_positions(moments, slots)
    table = moments if phases is None else moments.rotated(phases)
    direct = _direct(table, pos, g)
    if check:
        expanded = _expanded(quadrature_covariances(table), pos, g)
        for key in direct:
            if abs(direct[key] - expanded[key]) > 1e-10 * max(1.0, abs(direct[key])):
                raise ArithmeticError(f"{key}: direct {direct[key]!r} != expanded {expanded[key]!r}")
    return direct


def _slot_cov(moments, slots, phases=None):
    pos = _slot_positions(moments, slots)
    cov = quadrature_covariances(moments, phases)
    return cov.q[np.ix_(pos, pos)]


def optimize_g_symmetric(moments, slots, phases=None, *, tol=1e-6, validate=True):
    """Common weight for a ring-symmetric table, slots in ring order.

    Stationary point of ``I_a = I_b = I_c`` with all weights equal::

        g = -(V_01 + V_02) / (V_0 + V_01)

    Raises
    ------
    SymmetryError
        If ``validate`` and nearest-neighbour, diagonal or on-site covariances
        differ by more than ``tol``.
    """
    V = _slot_cov(moments, slots, phases)
    adjacent = np.array([V[0, 1], V[1, 2], V[2, 3], V[0, 3]])
    diagonal = np.array([V[0, 2], V[1, 3]])
    onsite = np.diag(V)
    if validate:
        spread = max(np.ptp(adjacent), np.ptp(diagonal), np.ptp(onsite))
        if spread > tol:
            raise SymmetryError(f"covariances differ by {spread:.3e} > {tol:.1e}; use the chain formulas")
    v_adj, v_diag, v_self = adjacent.mean(), diagonal.mean(), onsite.mean()
    return float(-(v_adj + v_diag) / (v_self + v_adj))


def optimize_g_chain(moments, slots, phases=None):
    """``(g_A, g_B)`` minimising ``I_a`` and ``(g_C, g_D)`` minimising ``I_c``.

    Returns ``(g, flags)``. ``flags["singular"]`` is set when a denominator
    vanishes, in which case ``g`` comes from :func:`optimize_g_numeric`;
    ``flags["ib_not_smallest"]`` is set when ``I_b`` exceeds ``I_a`` or ``I_c``
    at the returned weights.
    """
    V = _slot_cov(moments, slots, phases)
    den_ab = V[0, 3] ** 2 - V[0, 0] * V[3, 3]
    den_cd = V[1, 2] ** 2 - V[1, 1] * V[2, 2]
    flags = {"singular": False, "ib_not_smallest": False}
    if abs(den_ab) <= ROUNDOFF or abs(den_cd) <= ROUNDOFF:
        flags["singular"] = True
        g = optimize_g_numeric(moments, slots, phases)[0]
    else:
        g = np.array([
            (V[0, 0] * (V[1, 3] + V[2, 3]) - V[0, 3] * (V[0, 1] + V[0, 2])) / den_ab,
            (V[3, 3] * (V[0, 1] + V[0, 2]) - V[0, 3] * (V[1, 3] + V[2, 3])) / den_ab,
            (V[2, 2] * (V[0, 1] + V[1, 3]) - V[1, 2] * (V[0, 2] + V[2, 3])) / den_cd,
            (V[1, 1] * (V[0, 2] + V[2, 3]) - V[1, 2] * (V[0, 1] + V[1, 3])) / den_cd,
        ])
    comps = quadripartite_I(moments, slots, g, phases, check=False)
    if comps["I_b"] > comps["I_a"] or comps["I_b"] > comps["I_c"]:
        flags["ib_not_smallest"] = True
    return g, flags


def optimize_g_numeric(moments, slots, phases=None, start=None, *, common=False):
    """Numeric ``min_g max(I_a, I_b, I_c)``.

    Each ``I`` is a convex quadratic in ``g``, so the epigraph problem
    ``min t s.t. I_k(g) <= t`` is convex and SLSQP converges to the global
    minimum. With ``common`` a single weight is shared by all four slots.
    Returns ``(g, value)``.
    """
    table = moments if phases is None else moments.rotated(phases)

    def comps(g):
        return np.array(list(quadripartite_I(table, slots, g, check=False).values()))

    if common:
        res = optimize.minimize_scalar(lambda x: comps(x).max(), bracket=(-1.0, 1.0), tol=1e-12)
        g = np.full(4, float(res.x))
        return g, float(comps(g).max())

    x0 = np.zeros(4) if start is None else np.asarray(start, dtype=float)
    t0 = comps(x0).max()
    cons = {"type": "ineq", "fun": lambda z: z[4] - comps(z[:4])}
    res = optimize.minimize(lambda z: z[4], np.append(x0, t0), method="SLSQP", constraints=[cons],
                            options={"ftol": 1e-14, "maxiter": 500})
    g = res.x[:4]
    value = comps(g).max()
    if value > t0:
        g, value = x0, t0
    return np.asarray(g, dtype=float), float(value)


def _closed_form_g(table, slots, topology):
    if topology == "ring":
        return np.full(4, optimize_g_symmetric(table, slots, validate=False))
    if topology == "chain":
        g, _ = optimize_g_chain(table, slots)
        return g
    return optimize_g_numeric(table, slots)[0]


def _reference_phase(table, tol=1e-9):
    """Phase that shifts by ``-theta`` (mod pi) when every mode is rotated by ``theta``.

    Built from the summed anomalous moments, or from the summed means if
    those vanish; the witnesses are unchanged by a common shift of pi.
    """
    scale = 1.0 + float(np.sum(table.occupations))
    total = complex(np.sum(table.anomalous))
    if abs(total) > tol * scale:
        return 0.5 * np.angle(total)
    total = complex(np.sum(table.mean))
    if abs(total) > tol * np.sqrt(scale):
        return float(np.angle(total))
    return 0.0


def quadripartite_optimized(moments, slots, topology="ring", *, restarts=16, grid=6, xatol=1e-8,
                            max_evaluations=4000, phases=None):
    """``min over phases and g of max(I_a, I_b, I_c)``.

    Phase references are searched with Nelder-Mead from the ``restarts`` best
    points of a ``grid**4`` coarse grid; at each phase point the weights come
    from the closed form for ``topology`` (``"ring"``, ``"chain"`` or ``None``
    for purely numeric). At the optimum the weights are polished by the
    convex numeric min-max. Pass ``phases`` to skip the phase search.

    ``info`` carries the closed-form value, the numeric value, the
    chain-formula flags and whether every Nelder-Mead run converged.
    """
    pos = _slot_positions(moments, slots)
    sub = replace(moments, replicas=None).select(slots)
    base = np.zeros(len(moments.modes))
    slot_ids = tuple(sub.modes)

    def objective(ph):
        table = sub.rotated(ph)
        g = _closed_form_g(table, slot_ids, topology)
        return max(quadripartite_I(table, slot_ids, g, check=False).values())

    converged = True
    if phases is None:
        # Search offsets from a reference that follows a global rotation of
        # the table, so the result does not depend on the phase convention.
        ref = _reference_phase(sub)

        def offset_objective(delta):
            return objective(ref + delta)

        axis = np.linspace(0, 2 * np.pi, grid, endpoint=False)
        points = np.array(list(itertools.product(axis, repeat=4)))
        scores = np.array([offset_objective(p) for p in points])
        starts = points[np.argsort(scores, kind="stable")[:restarts]]
        best_x, best_f = None, np.inf
        for x0 in starts:
            res = optimize.minimize(offset_objective, x0, method="Nelder-Mead",
                                    options={"xatol": xatol, "fatol": 1e-12, "maxfev": max_evaluations})
            converged &= bool(res.success)
            if res.fun < best_f:
                best_x, best_f = res.x, res.fun
        slot_phases = np.mod(ref + best_x, 2 * np.pi)
    else:
        slot_phases = np.asarray(phases, dtype=float)

    table = sub.rotated(slot_phases)
    g_closed = _closed_form_g(table, slot_ids, topology)
    closed_value = max(quadripartite_I(table, slot_ids, g_closed).values())
    g_num, num_value = optimize_g_numeric(table, slot_ids, start=g_closed)
    if num_value <= closed_value:
        g_best = g_num
    else:
        g_best = g_closed
    comps = quadripartite_I(table, slot_ids, g_best)
    info = dict(closed_form_value=float(closed_value), numeric_value=float(min(num_value, closed_value)),
                closed_form_g=np.asarray(g_closed), converged=converged, topology=topology)
    if topology == "chain":
        info["chain_flags"] = optimize_g_chain(table, slot_ids)[1]
    full_phases = base.copy()
    full_phases[pos] = slot_phases
    return WitnessResult(float(max(comps.values())), full_phases, np.asarray(g_best), comps, info)


# --- statistics --------------------------------------------------------------------


def jackknife_error(moments, statistic, blocks=16):
    """Delete-one-block jackknife standard error of ``statistic(table)``.

    Needs a table with per-trajectory replicas; returns 0 for deterministic
    tables and ``inf`` with fewer than two replicas.
    """
    if moments.replicas is None:
        return 0.0
    if moments.num_replicas < 2:
        return float("inf")
    values = np.array([statistic(t) for t in moments.replica_tables(blocks)])
    n = len(values)
    return float(np.sqrt((n - 1) / n * np.sum((values - values.mean()) ** 2)))
