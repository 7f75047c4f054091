import numpy as np
import pytest

import oracles
from cavityarrays.master import density_moments, steady_state
from cavityarrays.model import HBAR, LindbladChannel, SystemSpec, build_basis, build_channels, build_hamiltonian
from cavityarrays.model import build_effective_hamiltonian, chain_couplings
from cavityarrays.wfmc import (
    JumpProbabilityError,
    MomentAccumulator,
    NormCollapseError,
    TrajectoryConfig,
    apply_jump,
    jump_probabilities,
    prepare,
    run_ensemble,
    run_trajectory,
    step,
    trajectory_rng,
)

LINEAR = SystemSpec((-0.06,), loss=0.044, drives=(0.1,))


def single_mode(n_max=4, loss=0.044, dephasing=0.0):
    spec = SystemSpec((0.0,), loss=loss, dephasing=dephasing)
    basis = build_basis(spec, n_max)
    return basis, build_channels(spec, basis)


def test_step_without_hamiltonian_is_identity(rng):
    basis, _ = single_mode()
    psi = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    psi /= np.linalg.norm(psi)
    heff = 0 * basis.identity()
    assert np.array_equal(step(psi, heff, 0.1), psi)


def test_step_loss_norm_decay():
    basis, chans = single_mode()
    heff = build_effective_hamiltonian(0 * basis.identity(), chans)
    psi = basis.basis_vector((1,))
    dt, t = 0.05, 0.0
    norm = 1.0
    for _ in range(200):
        out = step(psi, heff, dt, normalize=False)
        norm *= np.linalg.norm(out)
        psi = out / np.linalg.norm(out)
        t += dt
    assert norm == pytest.approx(np.exp(-0.044 * t / (2 * HBAR)), rel=1e-12)


def test_vacuum_stationary_without_drive():
    spec = SystemSpec((0.1, -0.2), 0.05, chain_couplings(2, 0.3), loss=0.044)
    ops = prepare(spec, 3)
    psi = ops.basis.basis_vector((0, 0))
    assert np.allclose(step(psi, ops.heff, 0.1), psi, atol=0)


def test_step_norm_collapse():
    basis, chans = single_mode()
    heff = build_effective_hamiltonian(0 * basis.identity(), chans)
    with pytest.raises(NormCollapseError):
        step(np.zeros(basis.dim, dtype=complex), heff, 0.1)
    with pytest.raises(NormCollapseError):
        step(np.full(basis.dim, np.nan + 0j), heff, 0.1)


def test_jump_probabilities():
    basis, chans = single_mode(loss=0.044, dephasing=0.01)
    dt = 0.01
    assert np.all(jump_probabilities(basis.basis_vector((0,)), chans, dt) == 0)
    p1 = jump_probabilities(basis.basis_vector((1,)), chans, dt)
    assert p1 == pytest.approx([0.044 * dt / HBAR, 0.01 * dt / HBAR], rel=1e-14)
    # |2>: <n^2> = 4 against <n> = 2, so dephasing/loss = 2 Gamma / gamma
    p2 = jump_probabilities(basis.basis_vector((2,)), chans, dt)
    assert p2 == pytest.approx([2 * 0.044 * dt / HBAR, 4 * 0.01 * dt / HBAR], rel=1e-14)
    assert p2[1] / p2[0] == pytest.approx(2 * 0.01 / 0.044, rel=1e-14)
    with pytest.raises(JumpProbabilityError):
        jump_probabilities(basis.basis_vector((4,)), chans, 1.0, p_max=0.1)


def test_jumps():
    basis, chans = single_mode(dephasing=0.01)
    loss, deph = chans
    assert np.allclose(apply_jump(basis.basis_vector((2,)), loss), basis.basis_vector((1,)))
    psi = (basis.basis_vector((1,)) + basis.basis_vector((2,))) / np.sqrt(2)
    expected = (basis.basis_vector((1,)) + 2 * basis.basis_vector((2,))) / np.sqrt(5)
    assert np.allclose(apply_jump(psi, deph), expected)
    for n in range(5):
        fock = basis.basis_vector((n,))
        if n:
            assert np.allclose(apply_jump(fock, deph), fock)
    with pytest.raises(RuntimeError):
        apply_jump(basis.basis_vector((0,)), loss)


def test_dephasing_jump_preserves_fock_populations(rng):
    spec = SystemSpec((0.0, 0.0), loss=0.05, dephasing=0.02, couplings=chain_couplings(2, 0.1))
    basis = build_basis(spec, 4)
    deph = [c for c in build_channels(spec, basis) if c.kind == "dephasing"]
    n_ops = [c.operator for c in deph]
    for _ in range(5):
        idx = rng.integers(1, basis.dim)
        fock = np.zeros(basis.dim, dtype=complex)
        fock[idx] = 1
        for c in deph:
            if np.linalg.norm(c.operator @ fock) == 0:
                continue
            out = apply_jump(fock, c)
            for n in n_ops:
                assert np.vdot(out, n @ out).real == pytest.approx(np.vdot(fock, n @ fock).real)


def test_rng_streams_are_independent_and_reproducible():
    a = trajectory_rng(7, 0).random(5)
    assert np.array_equal(a, trajectory_rng(7, 0).random(5))
    assert not np.array_equal(a, trajectory_rng(7, 1).random(5))
    assert not np.array_equal(a, trajectory_rng(8, 0).random(5))


def test_config_resolution():
    cfg = TrajectoryConfig().resolve(LINEAR, n_max=10)
    assert cfg.burn_in == pytest.approx(15 * HBAR / 0.044)
    assert cfg.average_window == pytest.approx(50 * HBAR / 0.044)
    assert cfg.dt == pytest.approx(min(0.02 * HBAR / 0.1, 0.05 * HBAR / (0.044 * 10)))
    with pytest.raises(ValueError):
        TrajectoryConfig(p_max=0.2)
    with pytest.raises(ValueError):
        TrajectoryConfig(num_trajectories=0)
    scaled = TrajectoryConfig(dt=1.0, burn_in=10.0).scaled_time(4.0)
    assert (scaled.dt, scaled.burn_in, scaled.average_window) == (0.25, 2.5, None)


def test_zero_drive_gives_exact_vacuum_moments():
    spec = SystemSpec((0.1, -0.1), 0.02, chain_couplings(2, 0.3), loss=0.05)
    ops = prepare(spec, 3)
    cfg = TrajectoryConfig(num_trajectories=3, burn_in=10.0, average_window=20.0).resolve(spec, 3)
    acc = run_trajectory(ops, cfg)
    table = acc.table()
    assert np.all(table.mean == 0) and np.all(table.normal == 0) and np.all(table.anomalous == 0)
    assert np.all(table.occupations == 0)
    assert run_ensemble(ops, cfg).occupations.tolist() == [0.0, 0.0]


def run_linear(num, seed=0, **kw):
    ops = prepare(LINEAR, 12)
    cfg = TrajectoryConfig(num_trajectories=num, seed=seed, batch_size=256, **kw).resolve(LINEAR, 12)
    return run_ensemble(ops, cfg)


def test_linear_mode_occupation_within_three_standard_errors():
    table = run_linear(128)
    expected = oracles.single_mode_occupation(-0.06, 0.1, 0.044)
    se = table.occupation_errors()[0]
    assert abs(table.occupations[0] - expected) < 3 * se


def test_standard_error_scaling():
    se = [run_linear(n, seed=11).occupation_errors()[0] for n in (128, 256)]
    assert se[1] / se[0] == pytest.approx(1 / np.sqrt(2), rel=0.2)


def test_determinism_and_single_trajectory():
    ops = prepare(LINEAR, 8)
    cfg = TrajectoryConfig(num_trajectories=5, seed=3, burn_in=50.0, average_window=100.0, batch_size=2)
    cfg = cfg.resolve(LINEAR, 8)
    a, b = run_ensemble(ops, cfg), run_ensemble(ops, cfg)
    assert np.array_equal(a.replicas, b.replicas)
    one = run_ensemble(ops, TrajectoryConfig(**{**cfg.__dict__, "num_trajectories": 1}))
    single = run_trajectory(ops, cfg, index=0).table()
    assert np.array_equal(one.to_vector(), single.to_vector())
    # batch layout does not change any trajectory
    other = run_ensemble(ops, TrajectoryConfig(**{**cfg.__dict__, "batch_size": 5}))
    assert np.max(np.abs(other.replicas - a.replicas)) < 1e-12


def test_merge_order_invariance():
    ops = prepare(LINEAR, 8)
    cfg = TrajectoryConfig(num_trajectories=6, seed=5, burn_in=20.0, average_window=50.0).resolve(LINEAR, 8)
    parts = [run_trajectory(ops, cfg, index=i) for i in range(6)]
    forward = MomentAccumulator.empty(ops.layout)
    for p in parts:
        forward = forward + p
    backward = MomentAccumulator.empty(ops.layout)
    for p in reversed(parts):
        backward = backward + p
    assert np.max(np.abs(forward.table().to_vector() - backward.table().to_vector())) <= 1e-12
    assert forward.count == 6
    with pytest.raises(ValueError):
        forward.merge(parts[0])


def test_jumps_are_counted():
    ops = prepare(LINEAR, 10)
    cfg = TrajectoryConfig(num_trajectories=2, burn_in=50.0, average_window=500.0).resolve(LINEAR, 10)
    acc = run_trajectory(ops, cfg)
    # about gamma <n> T / hbar photons leave during the run
    expected = 0.044 * 2.45 * 550.0 / HBAR
    assert 0.5 * expected < acc.jumps[0] < 1.5 * expected


def test_probability_ceiling_enforced_at_runtime():
    ops = prepare(LINEAR, 12)
    cfg = TrajectoryConfig(num_trajectories=1, dt=2.0, burn_in=100.0, average_window=10.0, p_max=0.05)
    with pytest.raises(JumpProbabilityError):
        run_trajectory(ops, cfg)


EQUIVALENCE_SPECS = {
    "two-mode": SystemSpec((0.02, -0.05), 0.03, ((0, 1, 0.06),), (0.04, 0.02j), 0.05, 0.01),
    "three-mode": SystemSpec((-0.03, 0.08, -0.03), 0.012, chain_couplings(3, 0.5), (0, 0.3, 0), 0.044),
}


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(EQUIVALENCE_SPECS))
def test_ensemble_matches_master_equation(name):
    spec = EQUIVALENCE_SPECS[name]
    n_max = 5
    basis = build_basis(spec, n_max)
    exact = density_moments(steady_state(build_hamiltonian(spec, basis), build_channels(spec, basis)), basis)
    ops = prepare(spec, n_max)
    cfg = TrajectoryConfig(num_trajectories=64, seed=2, sample_every=4).resolve(spec, n_max)
    table = run_ensemble(ops, cfg)
    se = table.standard_errors()
    diff = table.to_vector() - exact.to_vector()
    z_re = np.abs(diff.real) / np.maximum(se.real, 1e-15)
    z_im = np.abs(diff.imag) / np.maximum(se.imag, 1e-15)
    nontrivial = (se.real > 0)
    assert np.all(z_re[nontrivial] < 4), z_re
    assert np.all(z_im[se.imag > 0] < 4), z_im
