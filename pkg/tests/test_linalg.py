import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from nvflow.linalg import (
    SIGMA_X,
    SIGMA_Z,
    check_density,
    eigh,
    evolve_diagonal,
    ket_to_dm,
    kron,
    partial_trace,
)
from nvflow.model import SystemConfig, build_hamiltonian, evolution_phases, prepare_experiment1


def random_density(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def loop_partial_trace(rho, dims, keep):
    """Index-by-index reference implementation."""
    n = len(dims)
    traced = [i for i in range(n) if i not in keep]
    dk = int(np.prod([dims[k] for k in keep]))
    out = np.zeros((dk, dk), dtype=complex)
    strides = [int(np.prod(dims[i + 1 :])) for i in range(n)]
    kstrides = [int(np.prod([dims[k] for k in keep[j + 1 :]])) for j in range(len(keep))]
    for kr in itertools.product(*[range(dims[k]) for k in keep]):
        for kc in itertools.product(*[range(dims[k]) for k in keep]):
            for tr in itertools.product(*[range(dims[i]) for i in traced]):
                r = [0] * n
                c = [0] * n
                for j, k in enumerate(keep):
                    r[k], c[k] = kr[j], kc[j]
                for j, i in enumerate(traced):
                    r[i] = c[i] = tr[j]
                ri = sum(a * s for a, s in zip(r, strides))
                ci = sum(a * s for a, s in zip(c, strides))
                ko = sum(a * s for a, s in zip(kr, kstrides))
                kc_ = sum(a * s for a, s in zip(kc, kstrides))
                out[ko, kc_] += rho[ri, ci]
    return out


def test_kron_examples():
    assert np.array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))
    assert np.array_equal(kron(np.diag([1, -1]), np.eye(2)), np.diag([1, 1, -1, -1]))
    p0 = np.diag([1, 0])
    p1 = np.diag([0, 1])
    expected = np.zeros((4, 4))
    expected[1, 1] = 1
    assert np.array_equal(kron(p0, p1), expected)


def test_partial_trace_bell_marginal():
    bell = np.array([1, 0, 0, 1]) / np.sqrt(2)
    assert np.allclose(partial_trace(ket_to_dm(bell), [2, 2], [0]), np.eye(2) / 2, atol=1e-15)


def test_partial_trace_product_state():
    rng = np.random.default_rng(3)
    a, b = random_density(rng, 2), random_density(rng, 4)
    assert np.allclose(partial_trace(np.kron(a, b), [2, 4], [0]), a, atol=1e-14)
    assert np.allclose(partial_trace(np.kron(a, b), [2, 4], [1]), b, atol=1e-14)


@pytest.mark.parametrize("keep", [[0], [1], [2], [0, 2], [2, 0], [1, 2]])
def test_partial_trace_matches_loop_oracle(keep):
    rho = random_density(np.random.default_rng(11), 8)
    assert np.allclose(partial_trace(rho, [2, 2, 2], keep), loop_partial_trace(rho, [2, 2, 2], keep), atol=1e-14)


def test_partial_trace_batched_matches_single():
    rng = np.random.default_rng(5)
    stack = np.array([random_density(rng, 8) for _ in range(4)])
    batched = partial_trace(stack, [2, 2, 2], [0, 2])
    for rho, red in zip(stack, batched):
        assert np.allclose(partial_trace(rho, [2, 2, 2], [0, 2]), red)


def test_partial_trace_dimension_mismatch():
    with pytest.raises(ValueError):
        partial_trace(np.eye(8) / 8, [2, 2], [0])
    with pytest.raises(ValueError):
        partial_trace(np.eye(4) / 4, [2, 2], [])


def test_partial_trace_experiment1_matches_analytic_coherence():
    cfg = SystemConfig(phi1=0.9, phi2=2.2)
    t = 100.0
    psi = evolve_diagonal(prepare_experiment1(cfg), evolution_phases(cfg, [t])[0])
    rho_e = partial_trace(ket_to_dm(psi), [2, 2, 2], [0])

    def c(phi, a):
        x = np.pi * a * 1e-3 * t
        return np.cos(phi / 2) ** 2 * np.exp(1j * x) + np.sin(phi / 2) ** 2 * np.exp(-1j * x)

    assert np.isclose(rho_e[1, 0], 0.5 * c(cfg.phi1, cfg.a_n_par) * c(cfg.phi2, cfg.a_c_par), atol=1e-12)
    assert np.allclose(np.diag(rho_e), [0.5, 0.5], atol=1e-12)


def test_eigh_examples():
    w, _ = eigh(SIGMA_Z)
    assert np.allclose(w, [-1, 1])
    w, _ = eigh(np.eye(2) / 2 + 0.3 * SIGMA_X)
    assert np.allclose(w, [0.2, 0.8])


def test_eigh_reconstruction_random_8x8():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    m = a + a.conj().T
    w, v = eigh(m)
    assert np.all(np.diff(w) >= 0)
    assert np.allclose(v.conj().T @ v, np.eye(8), atol=1e-12)
    assert np.linalg.norm(v @ np.diag(w) @ v.conj().T - m) <= 1e-10


def test_eigh_rejects_non_hermitian():
    with pytest.raises(ValueError):
        eigh(np.array([[0, 1], [0, 0]]))


def test_evolve_diagonal_trivial_cases():
    psi = prepare_experiment1(SystemConfig(phi1=0.4, phi2=1.3))
    assert np.allclose(evolve_diagonal(psi, np.zeros(8)), psi)
    moved = evolve_diagonal(psi, np.full(8, np.pi))
    assert np.allclose(ket_to_dm(moved), ket_to_dm(psi))
    with pytest.raises(ValueError):
        evolve_diagonal(psi, np.zeros(4))


def test_evolve_diagonal_matches_matrix_exponential():
    cfg = SystemConfig(phi1=0.7, phi2=2.0)
    psi0 = prepare_experiment1(cfg)
    h = build_hamiltonian(cfg)
    for t in (0.0, 13.7, 100.0, 555.5):
        direct = evolve_diagonal(psi0, evolution_phases(cfg, [t])[0])
        assert np.allclose(direct, expm(-1j * h * t) @ psi0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([[2, 2], [2, 2, 2], [2, 4], [4, 2, 2]]))
def test_partial_trace_preserves_trace_and_hermiticity(seed, dims):
    rng = np.random.default_rng(seed)
    rho = random_density(rng, int(np.prod(dims)))
    keep = sorted(rng.choice(len(dims), size=rng.integers(1, len(dims) + 1), replace=False).tolist())
    red = partial_trace(rho, dims, keep)
    assert abs(np.trace(red) - 1) < 1e-12
    assert np.allclose(red, red.conj().T, atol=1e-12)
    w, _ = eigh(rho)
    assert abs(w.sum() - 1) < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kron_trace_multiplies(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    b = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert abs(np.trace(kron(a, b)) - np.trace(a) * np.trace(b)) < 1e-12 * max(1, abs(np.trace(a) * np.trace(b)))


def test_evolution_preserves_norm_on_grid():
    cfg = SystemConfig(phi1=1.1, phi2=0.3)
    kets = evolve_diagonal(prepare_experiment1(cfg), evolution_phases(cfg, np.arange(0, 600, 0.1)))
    assert np.max(np.abs(np.linalg.norm(kets, axis=1) - 1)) < 1e-12


def test_check_density_rejects_bad_states():
    with pytest.raises(ValueError):
        check_density(np.diag([1.2, -0.2]))
    with pytest.raises(ValueError):
        check_density(np.eye(2))
    check_density(np.eye(2) / 2)
