"""Quantum Fisher information of dephased qubit and two-qubit states."""

from __future__ import annotations

import math

import numpy as np

from nvflow.linalg import IDENTITY_2, SIGMA_X, SIGMA_Y, SIGMA_Z, eigh
from nvflow.model import BathConfig, SystemConfig, bath_envelope

PAIR_CUTOFF = 1e-12

SZ_HALF = SIGMA_Z / 2
COLLECTIVE_SZ = (np.kron(SIGMA_Z, IDENTITY_2) + np.kron(IDENTITY_2, SIGMA_Z)) / 2

WITNESS_THRESHOLD = 2.0


def qfi_general(rho: np.ndarray, generator: np.ndarray) -> np.ndarray | float:
    """Spectral-decomposition QFI of ``rho`` for the unitary family exp(-i theta G).

    Q = 2 sum_{i,j} (l_i - l_j)^2 / (l_i + l_j) |<i|G|j>|^2, skipping pairs with
    l_i + l_j below ``PAIR_CUTOFF``. ``rho`` may be a stack of matrices.
    """
    rho = np.asarray(rho, dtype=complex)
    generator = np.asarray(generator, dtype=complex)
    if generator.shape != rho.shape[-2:]:
        raise ValueError(f"generator shape {generator.shape} does not match state {rho.shape[-2:]}")
    lam, vec = eigh(rho)
    g = np.conj(np.swapaxes(vec, -1, -2)) @ generator @ vec
    num = (lam[..., :, None] - lam[..., None, :]) ** 2
    den = lam[..., :, None] + lam[..., None, :]
    keep = den > PAIR_CUTOFF
    weight = np.where(keep, num / np.where(keep, den, 1.0), 0.0)
    q = 2.0 * np.sum(weight * np.abs(g) ** 2, axis=(-2, -1))
    q = np.maximum(q, 0.0)
    return float(q) if q.ndim == 0 else q


def bloch_vector(rho: np.ndarray) -> np.ndarray:
    """(s_x, s_y, s_z) = Tr(rho sigma); accepts a stack of 2x2 matrices."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape[-2:] != (2, 2):
        raise ValueError(f"bloch_vector needs a single-qubit state, got shape {rho.shape}")
    s = np.stack(
        [np.einsum("...ij,ji->...", rho, p) for p in (SIGMA_X, SIGMA_Y, SIGMA_Z)], axis=-1
    )
    return s.real


def qfi_bloch(b) -> np.ndarray | float:
    """QFI for generator sigma_z/2 from the Bloch vector: r^2 - s_z^2."""
    b = np.asarray(b, dtype=float)
    if b.shape[-1] != 3:
        raise ValueError("Bloch vector must have three components")
    r2 = np.sum(b**2, axis=-1)
    if np.any(r2 > 1 + 1e-9):
        raise ValueError(f"Bloch vector outside the unit ball (r^2 = {np.max(r2):.12g})")
    q = b[..., 0] ** 2 + b[..., 1] ** 2
    return float(q) if q.ndim == 0 else q


def qfi_channel_analytic(t, phi: float, varphi: float, a: float):
    """Single nuclear-channel QFI: 1 - sin^2(phi) sin^2(pi a t 1e-3 + varphi/2)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    q = 1.0 - math.sin(phi) ** 2 * np.sin(math.pi * a * 1e-3 * t + varphi / 2) ** 2
    return float(q) if q.ndim == 0 else q


def qfi_factorized(t, cfg: SystemConfig, bath: BathConfig):
    """Q_n(t) * Q_c(t) * Q_R(t)."""
    q_n = qfi_channel_analytic(t, cfg.phi1, cfg.varphi1, cfg.a_n_par)
    q_c = qfi_channel_analytic(t, cfg.phi2, cfg.varphi2, cfg.a_c_par)
    return q_n * q_c * bath_envelope(t, bath)


def qfi_two_qubit(rho: np.ndarray):
    """QFI under (S_z^e + S_z^c) and the entanglement witness Q > 2.

    Returns ``(q, witness)``; both are arrays when ``rho`` is a stack.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape[-2:] != (4, 4):
        raise ValueError(f"qfi_two_qubit needs a 4x4 state, got shape {rho.shape}")
    q = qfi_general(rho, COLLECTIVE_SZ)
    witness = np.asarray(q) > WITNESS_THRESHOLD
    return q, bool(witness) if witness.ndim == 0 else witness
