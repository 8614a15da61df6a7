import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvflow.linalg import ket_to_dm
from nvflow.qfi import bloch_vector, qfi_two_qubit
from nvflow.tomography import (
    TWO_QUBIT_LABELS,
    MeasurementModel,
    PhotonCounts,
    bloch_from_counts,
    bright_population,
    linear_inversion,
    mle_project,
    read_counts_csv,
    simulate_counts,
    single_qubit_tomography,
    state_from_bloch,
    two_qubit_counts,
    two_qubit_tomography,
    write_counts_csv,
)

MODEL = MeasurementModel()
PLUS = state_from_bloch([1, 0, 0])
BELL = ket_to_dm(np.array([1, 0, 0, 1]) / math.sqrt(2))


def test_pulse_mapping():
    assert bright_population(PLUS, "x") == pytest.approx(0.0)
    assert bright_population(state_from_bloch([-1, 0, 0]), "x") == pytest.approx(1.0)
    assert bright_population(state_from_bloch([0, 1, 0]), "y") == pytest.approx(1.0)
    assert bright_population(state_from_bloch([0, 0, 1]), "z") == pytest.approx(1.0)


@pytest.mark.parametrize(
    "b", [(0, 0, 1), (0.6, 0, 0), (0.3, -0.4, 0.5), (0, 0, 0), (-0.8, 0.6, 0)]
)
def test_noiseless_roundtrip(b):
    counts = simulate_counts(state_from_bloch(b), MODEL, noiseless=True)
    assert np.allclose(bloch_from_counts(counts), b, atol=1e-10)


def test_maximally_mixed_gives_midpoint_counts():
    c = simulate_counts(np.eye(2) / 2, MODEL, noiseless=True)
    mid = 0.5 * (c.l_0 + c.l_1)
    assert c.l_x == pytest.approx(mid) and c.l_y == pytest.approx(mid) and c.l_z == pytest.approx(mid)


def test_reconstruction_formula_examples():
    assert np.allclose(bloch_from_counts(PhotonCounts(100, 100, 100, 120, 80)), [0, 0, 0])
    assert np.allclose(bloch_from_counts(PhotonCounts(80, 120, 120, 120, 80)), [1, 1, 1])
    with pytest.raises(ValueError):
        bloch_from_counts(PhotonCounts(1, 1, 1, 5, 5))
    with pytest.raises(ValueError):
        PhotonCounts(-1, 1, 1, 2, 1)


def poisson_sigma(s, model):
    # propagate Poisson variances through (2L - L0 - L1) / (L0 - L1)
    d = model.shots * (model.bright_rate - model.dark_rate)
    mean = lambda p: model.shots * (model.dark_rate + (model.bright_rate - model.dark_rate) * p)
    l0, l1 = mean(1.0), mean(0.0)
    lx = mean((1 - s) / 2)
    ds_dlx = 2 / d
    ds_dl0 = (-1 / d) - (2 * lx - l0 - l1) / d**2
    ds_dl1 = (-1 / d) + (2 * lx - l0 - l1) / d**2
    return math.sqrt(ds_dlx**2 * lx + ds_dl0**2 * l0 + ds_dl1**2 * l1)


def test_plus_state_within_three_sigma():
    sigma = poisson_sigma(1.0, MODEL)
    raw = bloch_from_counts(simulate_counts(PLUS, MODEL))
    assert abs(raw[0] - 1) < 3 * sigma
    assert abs(raw[1]) < 3 * poisson_sigma(0.0, MODEL)


def test_error_propagation_matches_monte_carlo():
    rng = np.random.default_rng(3)
    draws = np.array([bloch_from_counts(simulate_counts(PLUS, MODEL, rng=rng))[0] for _ in range(400)])
    assert np.std(draws) == pytest.approx(poisson_sigma(1.0, MODEL), rel=0.15)


def test_error_scales_as_inverse_root_shots():
    def spread(shots):
        m = MeasurementModel(shots=shots)
        rng = np.random.default_rng(11)
        return np.std([bloch_from_counts(simulate_counts(PLUS, m, rng=rng))[2] for _ in range(100)])

    assert spread(100_000) / spread(200_000) == pytest.approx(math.sqrt(2), rel=0.15)


def test_same_seed_same_counts():
    a = simulate_counts(PLUS, MeasurementModel(rng_seed=5))
    b = simulate_counts(PLUS, MeasurementModel(rng_seed=5))
    c = simulate_counts(PLUS, MeasurementModel(rng_seed=6))
    assert a == b and a != c


def test_single_qubit_tomography_stays_physical():
    rng = np.random.default_rng(0)
    for _ in range(50):
        b = single_qubit_tomography(PLUS, MeasurementModel(shots=2000), rng=rng)
        assert np.linalg.norm(b) <= 1 + 1e-12


def test_invalid_model():
    with pytest.raises(ValueError):
        MeasurementModel(shots=0)
    with pytest.raises(ValueError):
        MeasurementModel(bright_rate=0.1, dark_rate=0.2)


# ----------------------------------------------------------------- projection


def test_mle_project_examples():
    m = np.diag([0.7, 0.4, -0.1, 0.0]).astype(complex)
    out = mle_project(m)
    assert np.allclose(np.diag(out).real, [0.65, 0.35, 0, 0])
    assert np.allclose(mle_project(BELL), BELL)
    with pytest.raises(ValueError):
        mle_project(np.array([[0.5, 1.0], [0.0, 0.5]]))
    with pytest.raises(ValueError):
        mle_project(np.diag([0.5, 0.1]))


def test_mle_project_cascading_negatives():
    out = mle_project(np.diag([1.1, 0.01, 0.01, -0.12]).astype(complex))
    assert np.allclose(np.diag(out).real, [1.0, 0.0, 0.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=32, max_size=32))
def test_mle_project_returns_density_matrix(xs):
    a = np.array(xs[:16]).reshape(4, 4) + 1j * np.array(xs[16:]).reshape(4, 4)
    h = a + a.conj().T
    m = h - np.trace(h).real / 4 * np.eye(4) + np.eye(4) / 4
    out = mle_project(m)
    lam = np.linalg.eigvalsh(out)
    assert lam.min() >= -1e-12
    assert np.trace(out).real == pytest.approx(1.0)
    assert np.allclose(mle_project(out), out, atol=1e-10)


# ------------------------------------------------------------------ two-qubit


def test_bell_noiseless_reconstruction():
    est = two_qubit_tomography(BELL, MODEL, noiseless=True)
    assert np.real(np.trace(BELL @ est)) == pytest.approx(1.0, abs=1e-10)
    assert qfi_two_qubit(est)[0] == pytest.approx(4.0, abs=1e-9)


def test_linear_inversion_of_mixed_state():
    counts = two_qubit_counts(np.eye(4) / 4, MODEL, noiseless=True)
    assert set(counts) == set(TWO_QUBIT_LABELS) | {"L0", "L1"}
    assert np.allclose(linear_inversion(counts), np.eye(4) / 4)


def test_noisy_mixed_state_has_small_qfi():
    for seed in range(20):
        est = two_qubit_tomography(np.eye(4) / 4, MeasurementModel(rng_seed=seed))
        assert qfi_two_qubit(est)[0] < 0.1


def test_noisy_bell_never_exceeds_heisenberg_bound():
    for seed in range(20):
        q, witness = qfi_two_qubit(two_qubit_tomography(BELL, MeasurementModel(rng_seed=seed)))
        assert q <= 4 + 1e-9 and witness


def test_two_qubit_counts_reject_wrong_shape():
    with pytest.raises(ValueError):
        two_qubit_counts(PLUS, MODEL)
    with pytest.raises(ValueError):
        simulate_counts(BELL, MODEL)


def test_counts_csv_roundtrip(tmp_path):
    counts = two_qubit_counts(BELL, MODEL)
    path = tmp_path / "counts.csv"
    write_counts_csv(path, counts, MODEL.shots, 0)
    assert read_counts_csv(path) == counts
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_counts_csv(bad)


def test_bloch_vector_of_reconstruction():
    b = np.array([0.3, -0.2, 0.4])
    assert np.allclose(bloch_vector(state_from_bloch(b)), b)
