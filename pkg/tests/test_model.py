import numpy as np
import pytest
import scipy.sparse as sp

from cavityarrays.hilbert import enumerate_basis, ladder_operator, qubit_operator
from cavityarrays.model import (
    HamiltonianKind,
    Qubit,
    SystemSpec,
    build_basis,
    build_channels,
    build_effective_hamiltonian,
    build_hamiltonian,
    build_jch_hamiltonian,
    build_kh_hamiltonian,
    chain_couplings,
    ring_couplings,
)


def fig2_spec(qubit_dephasing=0.0, drive=0.1):
    gamma = 0.053
    qubits = tuple(Qubit(m, 0.22, 0.141, gamma / 100, qubit_dephasing) for m in (0, 2))
    return SystemSpec((0.06, -0.12, 0.06), 0.0, chain_couplings(3, 0.29), (0, drive, 0), gamma,
                      qubits=qubits, kind="JCH")


def dense(op):
    return op.toarray()


def test_undriven_linear_mode_is_diagonal():
    spec = SystemSpec((1.0,), loss=0.1)
    h = dense(build_kh_hamiltonian(spec, build_basis(spec, 4)))
    assert np.allclose(h, np.diag([0, 1, 2, 3, 4]), atol=1e-15)


def test_hopping_splits_one_excitation_block():
    spec = SystemSpec((0.0, 0.0), couplings=((0, 1, 0.3),), loss=0.1)
    basis = build_basis(spec, 2)
    h = dense(build_hamiltonian(spec, basis))
    one = [basis.index((1, 0)), basis.index((0, 1))]
    assert np.allclose(np.linalg.eigvalsh(h[np.ix_(one, one)]), [-0.3, 0.3])


def test_kerr_shift_is_twice_u():
    spec = SystemSpec((0.0,), nonlinearity=0.012, loss=0.044)
    h = dense(build_hamiltonian(spec, build_basis(spec, 3)))
    assert h[2, 2].real - 2 * h[1, 1].real == pytest.approx(0.024, abs=1e-15)


def test_complex_drive_keeps_hermiticity():
    spec = SystemSpec((0.1, -0.2), 0.01, ((0, 1, 0.2),), (0.3 * np.exp(0.7j), 0), 0.05)
    h = build_hamiltonian(spec, build_basis(spec, 4))
    assert abs(h - h.getH()).max() < 1e-12 * abs(h).max()
    a = ladder_operator(build_basis(spec, 4), 0)
    # drive enters as F a + F* a^dag
    assert np.vdot(build_basis(spec, 4).basis_vector((0, 0)), h @ build_basis(spec, 4).basis_vector((1, 0))) \
        == pytest.approx(0.3 * np.exp(0.7j))


def test_jc_doublet():
    spec = SystemSpec((0.0,), drives=(0,), loss=0.01, qubits=(Qubit(0, 0.0, 0.141),), kind="JCH")
    basis = build_basis(spec, 2)
    h = dense(build_jch_hamiltonian(spec, basis))
    one = [basis.index((1,), (0,)), basis.index((0,), (1,))]
    assert np.allclose(np.linalg.eigvalsh(h[np.ix_(one, one)]), [-0.141, 0.141])


def test_fig2_spec_builds():
    spec = fig2_spec(0.001)
    basis = build_basis(spec, 4)
    h = build_hamiltonian(spec, basis)
    assert abs(h - h.getH()).max() < 1e-12
    assert len(build_channels(spec, basis)) == 7


def test_zero_coupling_spectrum_is_direct_sum():
    spec = SystemSpec((0.05,), loss=0.01, qubits=(Qubit(0, 0.3, 0.0),), kind="JCH")
    basis = build_basis(spec, 3)
    ev = np.sort(np.linalg.eigvalsh(dense(build_hamiltonian(spec, basis))))
    expected = np.sort([0.05 * n + 0.3 * s for s in (0, 1) for n in range(4)])
    assert np.allclose(ev, expected)


@pytest.mark.parametrize("kwargs,count", [
    (dict(energies=(0, 0, 0), couplings=chain_couplings(3, 0.5), loss=0.044), 3),
    (dict(energies=(0,) * 8, couplings=ring_couplings(8, 0.16), loss=0.044, dephasing=0.01), 16),
])
def test_channel_counts(kwargs, count):
    spec = SystemSpec(**kwargs)
    assert len(build_channels(spec, build_basis(spec, 2))) == count


def test_zero_rate_qubit_channels_omitted():
    spec = fig2_spec(0.0)
    chans = build_channels(spec, build_basis(spec, 2))
    assert [c.kind for c in chans].count("dephasing") == 0
    assert len(chans) == 5


def test_effective_hamiltonian_imaginary_parts():
    for loss, deph, expect in [(0.044, 0.0, lambda n: -n * 0.044 / 2), (1e-9, 0.02, lambda n: -n**2 * 0.02 / 2)]:
        spec = SystemSpec((0.0,), loss=loss, dephasing=deph)
        basis = build_basis(spec, 5)
        chans = [c for c in build_channels(spec, basis) if c.rate >= 1e-3]
        heff = dense(build_effective_hamiltonian(build_hamiltonian(spec, basis), chans))
        n = np.arange(6)
        assert np.allclose(heff.diagonal().imag, expect(n), atol=1e-15)


def test_anti_hermitian_part_negative_semidefinite():
    spec = fig2_spec(0.01, drive=0.2)
    basis = build_basis(spec, 3)
    heff = dense(build_effective_hamiltonian(build_hamiltonian(spec, basis), build_channels(spec, basis)))
    anti = (heff - heff.conj().T) / 2j
    assert np.linalg.eigvalsh(anti).max() <= 1e-14


def test_effective_hamiltonian_matches_definition(rng):
    spec = random_spec(rng)
    basis = build_basis(spec, 3)
    h = build_hamiltonian(spec, basis)
    chans = build_channels(spec, basis)
    ref = dense(h).astype(complex)
    for c in chans:
        ref -= 0.5j * c.rate * dense(c.operator).conj().T @ dense(c.operator)
    assert np.allclose(dense(build_effective_hamiltonian(h, chans)), ref, atol=1e-14)


def random_spec(rng, kind="KH"):
    m = int(rng.integers(2, 4))
    edges = tuple((j, k, float(rng.normal())) for j in range(m) for k in range(j + 1, m) if rng.random() < 0.7)
    drives = tuple(complex(rng.normal(), rng.normal()) for _ in range(m))
    if kind == "JCH":
        qubits = (Qubit(0, float(rng.normal()), float(rng.normal()), 0.01, 0.002),)
        return SystemSpec(tuple(rng.normal(size=m)), 0.0, edges, drives, 0.05, 0.01, qubits, "JCH")
    return SystemSpec(tuple(rng.normal(size=m)), float(rng.normal()), edges, drives, 0.05, 0.01)


@pytest.mark.parametrize("kind", ["KH", "JCH"])
def test_random_hamiltonians_hermitian(rng, kind):
    for _ in range(10):
        spec = random_spec(rng, kind)
        h = build_hamiltonian(spec, build_basis(spec, 3))
        assert abs(h - h.getH()).max() < 1e-12 * abs(h).max()


def test_rescaling_covariance(rng):
    spec = random_spec(rng, "JCH")
    basis = build_basis(spec, 3)
    lam = 3.7
    scaled = spec.scaled(lam)
    assert abs(build_hamiltonian(scaled, basis) - lam * build_hamiltonian(spec, basis)).max() < 1e-13
    for c0, c1 in zip(build_channels(spec, basis), build_channels(scaled, basis)):
        assert c1.rate == pytest.approx(lam * c0.rate)
        assert abs(c1.operator - c0.operator).max() == 0


@pytest.mark.parametrize("kwargs,match", [
    (dict(energies=(0,), loss=0.0), "loss"),
    (dict(energies=(0,), loss=0.1, dephasing=-1), "dephasing"),
    (dict(energies=(0,), loss=0.1, qubits=(Qubit(0, 0, 0.1),)), "KH"),
    (dict(energies=(0,), nonlinearity=0.1, loss=0.1, kind="JCH"), "nonlinearity"),
    (dict(energies=(0,), loss=0.1, qubits=(Qubit(3, 0, 0.1),), kind="JCH"), "nonexistent"),
    (dict(energies=(0, 0), couplings=((0, 0, 1.0),), loss=0.1), "self-coupling"),
    (dict(energies=(0, 0), drives=(1,), loss=0.1), "drive"),
])
def test_spec_validation(kwargs, match):
    with pytest.raises(ValueError, match=match):
        SystemSpec(**kwargs)


def test_coupling_matrix_symmetric_zero_diagonal():
    spec = SystemSpec((0,) * 8, couplings=ring_couplings(8, 0.16), loss=0.044)
    j = spec.coupling_matrix()
    assert np.array_equal(j, j.T) and np.all(j.diagonal() == 0)
    assert np.count_nonzero(j) == 16


def test_dimension_mismatch():
    spec = SystemSpec((0.0, 0.0), loss=0.1)
    with pytest.raises(ValueError):
        build_hamiltonian(spec, enumerate_basis(3, 0, 2))
    with pytest.raises(ValueError):
        build_jch_hamiltonian(spec, build_basis(spec, 2))
