"""Photon-count tomography of single- and two-qubit states with shot noise.

Readout model: a state is rotated so that the wanted observable is mapped onto
sigma_z, and the bright-state population p0 = <0|rho'|0> sets the mean count
``shots * (dark_rate + (bright_rate - dark_rate) * p0)``; counts are Poisson.

Pulse-axis to observable mapping used by :func:`simulate_counts`:

* ``z``: no pulse, p0 = (1 + <sigma_z>) / 2
* ``y``: pi/2 pulse about +x, p0 = (1 + <sigma_y>) / 2
* ``x``: pi/2 pulse about +y, p0 = (1 - <sigma_x>) / 2

which is exactly what the (-s_x, +s_y, +s_z) sign pattern of the Bloch
reconstruction formulas undoes.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from nvflow.linalg import IDENTITY_2, SIGMA_X, SIGMA_Y, SIGMA_Z, check_density, eigh

DEFAULT_SHOTS = 400_000
# 450 kcps over a 300 ns readout window, 30 % fluorescence contrast
DEFAULT_BRIGHT_RATE = 0.135
DEFAULT_DARK_RATE = 0.0945


@dataclass(frozen=True)
class MeasurementModel:
    shots: int = DEFAULT_SHOTS
    bright_rate: float = DEFAULT_BRIGHT_RATE
    dark_rate: float = DEFAULT_DARK_RATE
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.shots < 1:
            raise ValueError(f"shots must be >= 1, got {self.shots}")
        if not self.bright_rate > self.dark_rate >= 0:
            raise ValueError(
                f"need bright_rate > dark_rate >= 0, got {self.bright_rate}, {self.dark_rate}"
            )

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


@dataclass(frozen=True)
class PhotonCounts:
    l_x: float
    l_y: float
    l_z: float
    l_0: float
    l_1: float

    def __post_init__(self) -> None:
        if min(self.l_x, self.l_y, self.l_z, self.l_0, self.l_1) < 0:
            raise ValueError("photon counts must be nonnegative")


def _rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    return expm(-0.5j * angle * axis)


READOUT_PULSES = {
    "x": _rotation(SIGMA_Y, math.pi / 2),
    "y": _rotation(SIGMA_X, math.pi / 2),
    "z": IDENTITY_2,
}


def bright_population(rho: np.ndarray, basis: str) -> float:
    u = READOUT_PULSES[basis]
    rotated = u @ rho @ u.conj().T
    return float(np.clip(rotated[0, 0].real, 0.0, 1.0))


def _mean_counts(p0, model: MeasurementModel):
    return model.shots * (model.dark_rate + (model.bright_rate - model.dark_rate) * p0)


def _draw(mean, rng: np.random.Generator | None):
    if rng is None:
        return float(mean)
    return float(rng.poisson(mean))


def simulate_counts(
    rho: np.ndarray,
    model: MeasurementModel,
    rng: np.random.Generator | None = None,
    noiseless: bool = False,
) -> PhotonCounts:
    """Photon counts for the three readout bases plus bright/dark references.

    ``noiseless`` returns the exact mean counts (infinite-shot limit). A caller
    may pass its own ``rng`` to chain several records off one seed.
    """
    rho = check_density(rho)
    if rho.shape != (2, 2):
        raise ValueError("simulate_counts needs a single-qubit state")
    if not noiseless and rng is None:
        rng = model.rng()
    if noiseless:
        rng = None
    p = {b: bright_population(rho, b) for b in ("x", "y", "z")}
    return PhotonCounts(
        l_x=_draw(_mean_counts(p["x"], model), rng),
        l_y=_draw(_mean_counts(p["y"], model), rng),
        l_z=_draw(_mean_counts(p["z"], model), rng),
        l_0=_draw(_mean_counts(1.0, model), rng),
        l_1=_draw(_mean_counts(0.0, model), rng),
    )


def _contrast(l_0: float, l_1: float) -> float:
    contrast = l_0 - l_1
    if contrast == 0:
        raise ValueError("bright and dark references coincide; contrast is zero")
    return contrast


def bloch_from_counts(c: PhotonCounts) -> np.ndarray:
    contrast = _contrast(c.l_0, c.l_1)
    ref = c.l_0 + c.l_1
    return np.array(
        [
            -(2 * c.l_x - ref) / contrast,
            (2 * c.l_y - ref) / contrast,
            (2 * c.l_z - ref) / contrast,
        ]
    )


def state_from_bloch(b) -> np.ndarray:
    sx, sy, sz = (float(v) for v in b)
    return 0.5 * (IDENTITY_2 + sx * SIGMA_X + sy * SIGMA_Y + sz * SIGMA_Z)


def physical_bloch(b) -> np.ndarray:
    """Shrink a reconstructed Bloch vector onto the unit ball if shot noise pushed it out.

    For one qubit this is the same result as :func:`mle_project`.
    """
    b = np.asarray(b, dtype=float)
    r = float(np.linalg.norm(b))
    return b / r if r > 1.0 else b


def mle_project(m: np.ndarray, atol: float = 1e-8) -> np.ndarray:
    """Nearest physical state by eigenvalue truncation.

    Negative eigenvalues are zeroed and their total is taken evenly from the
    remaining positive ones, repeating until none is negative.
    """
    m = np.asarray(m, dtype=complex)
    lam, vec = eigh(m, atol=atol)
    if abs(lam.sum() - 1.0) > atol:
        raise ValueError(f"mle_project expects unit trace, got {lam.sum():.12g}")
    if lam.min() >= 0:
        return 0.5 * (m + m.conj().T)

    lam = lam[::-1].copy()
    vec = vec[:, ::-1]
    active = np.ones(lam.size, dtype=bool)
    while True:
        neg = active & (lam < 0)
        if not neg.any():
            break
        deficit = lam[neg].sum()
        lam[neg] = 0.0
        active &= ~neg
        active &= lam > 0
        lam[active] += deficit / active.sum()
    rho = (vec * lam) @ vec.conj().T
    return 0.5 * (rho + rho.conj().T)


PAULIS = {"I": IDENTITY_2, "X": SIGMA_X, "Y": SIGMA_Y, "Z": SIGMA_Z}
TWO_QUBIT_LABELS = [a + b for a, b in itertools.product("IXYZ", repeat=2) if a + b != "II"]


def _pauli(label: str) -> np.ndarray:
    return np.kron(PAULIS[label[0]], PAULIS[label[1]])


def two_qubit_counts(
    rho: np.ndarray,
    model: MeasurementModel,
    rng: np.random.Generator | None = None,
    noiseless: bool = False,
) -> dict[str, float]:
    """One count record per nontrivial Pauli observable plus the two references.

    Each observable is read out like a single-qubit z measurement after the basis
    change that maps its +1 eigenspace onto the bright state.
    """
    rho = check_density(rho)
    if rho.shape != (4, 4):
        raise ValueError("two_qubit_counts needs a 4x4 state")
    if noiseless:
        rng = None
    elif rng is None:
        rng = model.rng()
    out = {}
    for label in TWO_QUBIT_LABELS:
        expectation = float(np.trace(rho @ _pauli(label)).real)
        p0 = min(max(0.5 * (1 + expectation), 0.0), 1.0)
        out[label] = _draw(_mean_counts(p0, model), rng)
    out["L0"] = _draw(_mean_counts(1.0, model), rng)
    out["L1"] = _draw(_mean_counts(0.0, model), rng)
    return out


def linear_inversion(counts: dict[str, float]) -> np.ndarray:
    contrast = _contrast(counts["L0"], counts["L1"])
    ref = counts["L0"] + counts["L1"]
    rho = np.eye(4, dtype=complex) / 4
    for label in TWO_QUBIT_LABELS:
        s = (2 * counts[label] - ref) / contrast
        rho = rho + s * _pauli(label) / 4
    return rho


def two_qubit_tomography(
    rho: np.ndarray,
    model: MeasurementModel,
    rng: np.random.Generator | None = None,
    noiseless: bool = False,
) -> np.ndarray:
    """Pauli-basis tomography: simulated counts, linear inversion, MLE projection."""
    counts = two_qubit_counts(rho, model, rng=rng, noiseless=noiseless)
    return mle_project(linear_inversion(counts))


def single_qubit_tomography(
    rho: np.ndarray,
    model: MeasurementModel,
    rng: np.random.Generator | None = None,
    noiseless: bool = False,
) -> np.ndarray:
    """Reconstructed Bloch vector, shrunk onto the unit ball when needed."""
    return physical_bloch(bloch_from_counts(simulate_counts(rho, model, rng, noiseless)))


COUNT_FIELDS = ["basis", "counts", "shots", "seed"]


def write_counts_csv(path: str | Path, counts: dict[str, float], shots: int, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COUNT_FIELDS)
        for basis, value in counts.items():
            w.writerow([basis, repr(float(value)), shots, seed])


def read_counts_csv(path: str | Path) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COUNT_FIELDS:
            raise ValueError(f"{path}: expected header {','.join(COUNT_FIELDS)}")
        return {row["basis"]: float(row["counts"]) for row in reader}


def photon_counts_as_dict(c: PhotonCounts) -> dict[str, float]:
    return {"x": c.l_x, "y": c.l_y, "z": c.l_z, "L0": c.l_0, "L1": c.l_1}


def photon_counts_from_dict(d: dict[str, float]) -> PhotonCounts:
    return PhotonCounts(d["x"], d["y"], d["z"], d["L0"], d["L1"])
