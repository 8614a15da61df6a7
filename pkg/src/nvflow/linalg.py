"""Dense complex linear algebra for small Hilbert spaces (dim <= 16).

Every routine accepts an optional leading batch axis so that a whole time grid
can be processed in one call.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

MAX_DIM = 16
HERMITIAN_ATOL = 1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)


def is_hermitian(m: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    m = np.asarray(m)
    return bool(np.allclose(m, np.conj(np.swapaxes(m, -1, -2)), rtol=0.0, atol=atol))


def check_density(rho: np.ndarray, atol: float = 1e-10) -> np.ndarray:
    """Raise ValueError unless ``rho`` (or every matrix in a stack) is a valid state."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim < 2 or rho.shape[-1] != rho.shape[-2]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    if rho.shape[-1] > MAX_DIM:
        raise ValueError(f"dimension {rho.shape[-1]} exceeds the supported maximum {MAX_DIM}")
    if not is_hermitian(rho, atol=atol):
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho, axis1=-2, axis2=-1)
    if np.any(np.abs(tr - 1.0) > atol):
        raise ValueError("density matrix does not have unit trace")
    if np.any(np.linalg.eigvalsh(rho) < -atol):
        raise ValueError("density matrix has negative eigenvalues")
    return rho


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(np.asarray(a), np.asarray(b))


def kron_all(*ops: np.ndarray) -> np.ndarray:
    out = np.asarray(ops[0])
    for op in ops[1:]:
        out = np.kron(out, op)
    return out


def ket_to_dm(psi: np.ndarray) -> np.ndarray:
    """|psi><psi| for a single ket or a stack of kets (last axis = amplitudes)."""
    psi = np.asarray(psi, dtype=complex)
    return psi[..., :, None] * np.conj(psi[..., None, :])


def partial_trace(rho: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Reduced density matrix over the subsystems listed in ``keep``.

    ``rho`` may carry leading batch axes. Kept subsystems appear in the output
    in the order given by ``keep``.
    """
    rho = np.asarray(rho)
    dims = [int(d) for d in dims]
    keep = [int(k) for k in keep]
    n = len(dims)
    total = int(np.prod(dims))
    if rho.shape[-2:] != (total, total):
        raise ValueError(f"dims {dims} imply a {total}x{total} matrix, got {rho.shape[-2:]}")
    if not keep:
        raise ValueError("keep must name at least one subsystem")
    if len(set(keep)) != len(keep) or any(k < 0 or k >= n for k in keep):
        raise ValueError(f"invalid subsystem indices {keep} for {n} subsystems")

    batch = rho.shape[:-2]
    t = rho.reshape(batch + tuple(dims) + tuple(dims))
    letters = "abcdefghijklmnopqrstuvwxyz"
    nb = len(batch)
    b = "ABCDEFGH"[:nb]
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for i in range(n):
        if i not in keep:
            col[i] = row[i]
    out = b + "".join(row[k] for k in keep) + "".join(col[k] for k in keep)
    reduced = np.einsum(f"{b}{''.join(row)}{''.join(col)}->{out}", t)
    d_keep = int(np.prod([dims[k] for k in keep]))
    return reduced.reshape(batch + (d_keep, d_keep))


def eigh(m: np.ndarray, atol: float = HERMITIAN_ATOL) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal eigenvectors (columns) of a Hermitian matrix."""
    m = np.asarray(m, dtype=complex)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not is_hermitian(m, atol=atol):
        raise ValueError("matrix is not Hermitian")
    return np.linalg.eigh(m)


def evolve_diagonal(state: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """Multiply amplitude k by exp(-i * phases[k]).

    ``phases`` may be (dim,) or (n_times, dim); the latter returns one ket per row.
    """
    state = np.asarray(state, dtype=complex)
    phases = np.asarray(phases, dtype=float)
    if phases.shape[-1] != state.shape[-1]:
        raise ValueError(f"phases length {phases.shape[-1]} != state dim {state.shape[-1]}")
    return state * np.exp(-1j * phases)
