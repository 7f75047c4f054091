import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from cavityarrays.moments import MomentLayout, MomentTable
from cavityarrays.witness import (
    SymmetryError,
    UnphysicalMomentsError,
    bipartite_S,
    bipartite_S_optimized,
    jackknife_error,
    optimize_g_chain,
    optimize_g_numeric,
    optimize_g_symmetric,
    quadrature_covariances,
    quadripartite_I,
    quadripartite_I_expanded,
    quadripartite_optimized,
)

SLOTS = (0, 1, 2, 3)


def symmetric_table(v_self=0.25, v_adj=0.125, v_diag=0.125, w_self=0.25):
    """Gaussian table with ring-symmetric q covariances and uncorrelated p."""
    v = np.full((4, 4), v_adj)
    v[0, 2] = v[2, 0] = v[1, 3] = v[3, 1] = v_diag
    np.fill_diagonal(v, v_self)
    sigma = np.zeros((8, 8))
    sigma[1::2, 1::2] = v
    sigma[0::2, 0::2] = w_self * np.eye(4)
    return oracles.gaussian_table(sigma, np.zeros(4))


# --- covariances ---------------------------------------------------------------


def test_vacuum_covariances():
    cov = quadrature_covariances(oracles.vacuum_table())
    assert np.allclose(cov.q, 0.25 * np.eye(4), atol=1e-15)
    assert np.allclose(cov.p, 0.25 * np.eye(4), atol=1e-15)


def test_coherent_covariances_match_vacuum():
    cov = quadrature_covariances(oracles.coherent_table([1 + 2j, -0.5, 0.3j, 2]))
    assert np.allclose(cov.q, 0.25 * np.eye(4), atol=1e-13)
    assert np.allclose(cov.p, 0.25 * np.eye(4), atol=1e-13)


def test_pi_rotation_flips_means_only(rng):
    table = oracles.random_physical_table(rng)
    plain = quadrature_covariances(table)
    flipped = quadrature_covariances(table, np.array([np.pi, 0, 0, 0]))
    assert flipped.mean_q[0] == pytest.approx(-plain.mean_q[0])
    assert flipped.mean_p[0] == pytest.approx(-plain.mean_p[0])
    assert np.diag(flipped.q) == pytest.approx(np.diag(plain.q))
    assert np.diag(flipped.p) == pytest.approx(np.diag(plain.p))


def test_heisenberg_floor_on_physical_tables(rng):
    for _ in range(20):
        cov = quadrature_covariances(oracles.random_physical_table(rng))
        assert np.all(np.diag(cov.q) * np.diag(cov.p) >= 1 / 16 - 1e-9)


def test_missing_mode_raises():
    with pytest.raises(KeyError):
        bipartite_S(oracles.vacuum_table(2), 0, 5)


# --- bipartite -----------------------------------------------------------------


def test_bipartite_vacuum_and_coherent():
    assert bipartite_S(oracles.vacuum_table(2), 0, 1) == pytest.approx(1.0, abs=1e-14)
    assert bipartite_S(oracles.coherent_table([0.7, 1 - 1j]), 0, 1) == pytest.approx(1.0, abs=1e-12)
    res = bipartite_S_optimized(oracles.vacuum_table(2), 0, 1)
    assert res.value == pytest.approx(1.0, abs=1e-14) and not res.entangled
    with pytest.raises(ValueError):
        bipartite_S(oracles.vacuum_table(2), 1, 1)


@pytest.mark.parametrize("r", [0.1, 0.5, 1.2])
def test_two_mode_squeezed(r):
    table = oracles.two_mode_squeezed_table(r)
    assert bipartite_S(table, 0, 1) == pytest.approx(np.exp(-2 * r), rel=1e-12)
    res = bipartite_S_optimized(table, 0, 1)
    assert res.value == pytest.approx(np.exp(-2 * r), rel=1e-12)
    assert res.entangled


def test_closed_form_agrees_with_phase_search(rng):
    for _ in range(10):
        table = oracles.random_physical_table(rng, k=3)
        res = bipartite_S_optimized(table, 0, 2)
        assert abs(res.value - res.info["numeric"]) < 1e-9
        assert bipartite_S(table, 0, 2, res.phases) == pytest.approx(res.value, abs=1e-12)


@pytest.mark.slow
def test_closed_form_matches_360_by_360_grid(rng):
    step = 2 * np.pi / 360
    for _ in range(2):
        table = oracles.random_physical_table(rng, k=2)
        res = bipartite_S_optimized(table, 0, 1, cross_check=False)
        grid = min(bipartite_S(table, 0, 1, np.array([a * step, b * step]))
                   for a in range(360) for b in range(360))
        corr = abs(table.anomalous[0, 1] - table.mean[0] * table.mean[1])
        assert res.value - 1e-9 <= grid <= res.value + 2 * corr * (1 - np.cos(step / 2)) + 1e-12


def test_radicand_clamp_and_error():
    layout = MomentLayout((0, 1), 2)
    vec = layout.pack(np.array([1.0, 0.0]), np.diag([1.0 - 1e-14, 0.0]).astype(complex), np.zeros((2, 2)),
                      np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    assert bipartite_S_optimized(MomentTable.from_vector(layout, vec), 0, 1).value == pytest.approx(1.0)
    bad = layout.pack(np.array([1.0, 0.0]), np.diag([0.9, 0.0]).astype(complex), np.zeros((2, 2)),
                      np.array([0.9, 0.0]), np.array([0.9, 0.0]))
    with pytest.raises(UnphysicalMomentsError):
        bipartite_S_optimized(MomentTable.from_vector(layout, bad), 0, 1)


# --- quadripartite -------------------------------------------------------------


def test_quadripartite_vacuum():
    comps = quadripartite_I(oracles.vacuum_table(), SLOTS, 0.0)
    assert comps == pytest.approx({"I_a": 1.0, "I_b": 1.0, "I_c": 1.0}, abs=1e-14)
    res = quadripartite_optimized(oracles.vacuum_table(), SLOTS, "ring", restarts=2, grid=2)
    assert res.value == pytest.approx(1.0, abs=1e-9) and not res.entangled


def test_slot_map_must_be_bijection():
    with pytest.raises(ValueError):
        quadripartite_I(oracles.vacuum_table(), (0, 1, 1, 2), 0.0)
    with pytest.raises(ValueError):
        quadripartite_I(oracles.vacuum_table(), (0, 1, 2), 0.0)


def test_expanded_equals_direct(rng):
    for _ in range(25):
        table = oracles.random_physical_table(rng)
        g = rng.normal(size=4)
        phases = rng.uniform(0, 2 * np.pi, 4)
        slots = tuple(rng.permutation(4))
        direct = quadripartite_I(table, slots, g, phases, check=False)
        expanded = quadripartite_I_expanded(table, slots, g, phases)
        for key in direct:
            assert abs(direct[key] - expanded[key]) <= 1e-10


def test_coherent_products_never_violate(rng):
    for _ in range(10):
        alphas = rng.normal(size=4) + 1j * rng.normal(size=4)
        table = oracles.coherent_table(alphas)
        g = optimize_g_symmetric(table, SLOTS, validate=False)
        assert min(quadripartite_I(table, SLOTS, g).values()) >= 1 - 1e-12
        assert min(quadripartite_I(table, SLOTS, rng.normal(size=4)).values()) >= 1 - 1e-12


def test_symmetric_g_examples():
    assert optimize_g_symmetric(oracles.vacuum_table(), SLOTS) == 0.0
    assert optimize_g_symmetric(symmetric_table(), SLOTS) == pytest.approx(-2 / 3, abs=1e-15)
    with pytest.raises(SymmetryError):
        optimize_g_symmetric(symmetric_table(v_adj=0.125) .rotated(np.array([0, 0.3, 0, 0])), SLOTS)


@pytest.mark.parametrize("v_adj,v_diag", [(0.125, 0.125), (-0.05, 0.02), (0.08, -0.03)])
def test_symmetric_g_is_stationary_and_optimal(v_adj, v_diag):
    table = symmetric_table(v_adj=v_adj, v_diag=v_diag)
    g = optimize_g_symmetric(table, SLOTS)
    worst = lambda x: max(quadripartite_I(table, SLOTS, x).values())
    assert abs(worst(g + 1e-6) - worst(g - 1e-6)) / 2e-6 < 1e-6
    g_num, value = optimize_g_numeric(table, SLOTS, common=True)
    assert g_num[0] == pytest.approx(g, abs=1e-6)
    assert worst(g) == pytest.approx(value, abs=1e-12)


def test_chain_g_zero_for_uncorrelated_tables(rng):
    g, flags = optimize_g_chain(oracles.vacuum_table(), SLOTS)
    assert np.all(g == 0) and not flags["singular"]
    sigma = np.zeros((8, 8))
    for n in range(4):
        sigma[2 * n:2 * n + 2, 2 * n:2 * n + 2] = oracles.random_single_mode_covariance(rng)
    g, _ = optimize_g_chain(oracles.gaussian_table(sigma, np.zeros(4)), SLOTS)
    assert np.allclose(g, 0, atol=1e-14)


def test_chain_g_minimises_outer_components(rng):
    for _ in range(10):
        table = oracles.random_physical_table(rng)
        g, flags = optimize_g_chain(table, SLOTS)
        base = quadripartite_I(table, SLOTS, g)
        for k in range(4):
            for h in (-1e-4, 1e-4):
                shifted = g.copy()
                shifted[k] += h
                other = quadripartite_I(table, SLOTS, shifted)
                key = "I_a" if k < 2 else "I_c"
                assert other[key] >= base[key] - 1e-12


def test_chain_singular_denominator_falls_back():
    # V_0 V_3 = V_03^2: modes 0 and 3 perfectly correlated in q
    table = symmetric_table(v_self=0.25, v_adj=0.25, v_diag=0.0, w_self=1.0)
    g, flags = optimize_g_chain(table, SLOTS)
    assert flags["singular"] and np.all(np.isfinite(g))


def test_global_phase_invariance(rng):
    table = oracles.random_physical_table(rng)
    base = quadripartite_optimized(table, SLOTS, "chain", restarts=4, grid=4)
    shifted = quadripartite_optimized(table.rotated(np.full(4, 0.7)), SLOTS, "chain", restarts=4, grid=4)
    assert abs(base.value - shifted.value) < 1e-6
    s0 = bipartite_S_optimized(table, 1, 3).value
    s1 = bipartite_S_optimized(table.rotated(np.full(4, 1.3)), 1, 3).value
    assert abs(s0 - s1) < 1e-9


def test_optimized_result_consistency(rng):
    table = oracles.random_physical_table(rng, scale=0.4)
    res = quadripartite_optimized(table, SLOTS, "chain", restarts=4, grid=4)
    assert res.value == pytest.approx(max(res.components.values()))
    assert res.value == pytest.approx(max(quadripartite_I(table, SLOTS, res.g, res.phases).values()), abs=1e-12)
    assert res.value <= res.info["closed_form_value"] + 1e-12
    assert "chain_flags" in res.info


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_separable_gaussian_states_never_violate(seed):
    rng = np.random.default_rng(seed)
    table = oracles.random_separable_table(rng)
    assert bipartite_S_optimized(table, 0, 1).value >= 1 - 1e-9
    assert bipartite_S_optimized(table, 2, 3).value >= 1 - 1e-9
    g, value = optimize_g_numeric(table, SLOTS, phases=rng.uniform(0, 2 * np.pi, 4))
    assert value >= 1 - 1e-9


@pytest.mark.slow
def test_separable_phase_optimised_never_violates(rng):
    for _ in range(3):
        table = oracles.random_separable_table(rng)
        assert quadripartite_optimized(table, SLOTS, None, restarts=4, grid=4).value >= 1 - 1e-9


def test_jackknife():
    assert jackknife_error(oracles.vacuum_table(), lambda t: 1.0) == 0.0
    rng = np.random.default_rng(0)
    layout = MomentLayout((0,), 1)
    reps = np.array([layout.pack(np.array([x]), np.array([[abs(x) ** 2 + 0.1]]), np.array([[x * x]]),
                                 np.array([abs(x) ** 2 + 0.1]), np.array([1.0]))
                     for x in rng.normal(size=64)])
    table = MomentTable.from_replicas(layout, reps)
    se = jackknife_error(table, lambda t: float(t.mean[0].real), blocks=64)
    assert se == pytest.approx(np.std(reps[:, 0].real, ddof=1) / 8, rel=1e-10)
