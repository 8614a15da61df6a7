"""Three-qubit NV model: electron + 14N + 13C with a fitted spin-bath envelope.

Units: times in ns, couplings in MHz (ordinary frequency), angles in rad.
Qubit ordering of the 8-dim space is electron (x) nitrogen (x) carbon. The electron
basis is {|0>, |1> = m_s=-1}; nuclear bases are {up, down}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from nvflow.linalg import evolve_diagonal, ket_to_dm, partial_trace

MHZ_TO_RAD_PER_NS = 2 * math.pi * 1e-3

# spin projections on the encoded subspaces
ELECTRON_SZ = np.array([0.0, -1.0])
NUCLEAR_IZ = np.array([0.5, -0.5])

DIMS = (2, 2, 2)
ELECTRON, NITROGEN, CARBON = 0, 1, 2


@dataclass(frozen=True)
class SystemConfig:
    a_n_par: float = -2.16
    a_c_par: float = 12.8
    phi1: float = 0.0
    varphi1: float = 0.0
    phi2: float = 0.0
    varphi2: float = 0.0

    def __post_init__(self) -> None:
        for name in ("phi1", "phi2"):
            v = getattr(self, name)
            if not 0.0 <= v <= math.pi + 1e-12:
                raise ValueError(f"{name} must lie in [0, pi], got {v}")
        for name in ("varphi1", "varphi2"):
            v = getattr(self, name)
            if not 0.0 <= v < 2 * math.pi:
                raise ValueError(f"{name} must lie in [0, 2pi), got {v}")


@dataclass(frozen=True)
class BathConfig:
    t2_star: float = 1026.0
    alpha: float = 0.89
    phi0: float = 0.37 * math.pi
    a_c0: float = 0.4
    varphi0: float = 0.21 * math.pi
    enabled: bool = True

    def __post_init__(self) -> None:
        if not self.t2_star > 0:
            raise ValueError(f"t2_star must be positive, got {self.t2_star}")
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not 0.0 <= self.phi0 <= math.pi + 1e-12:
            raise ValueError(f"phi0 must lie in [0, pi], got {self.phi0}")


NO_BATH = BathConfig(enabled=False)


@dataclass(frozen=True)
class TimeGrid:
    t_start: float = 0.0
    t_end: float = 600.0
    dt: float = 2.0

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_end > self.t_start:
            raise ValueError(f"t_end ({self.t_end}) must exceed t_start ({self.t_start})")

    @property
    def times(self) -> np.ndarray:
        n = int(round((self.t_end - self.t_start) / self.dt))
        return self.t_start + self.dt * np.arange(n + 1)


def _level_products(cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-basis-state s_e*i_n and s_e*i_c, in electron-nitrogen-carbon order."""
    se = ELECTRON_SZ[:, None, None]
    i_n = NUCLEAR_IZ[None, :, None]
    i_c = NUCLEAR_IZ[None, None, :]
    sn = np.broadcast_to(se * i_n, (2, 2, 2)).ravel()
    sc = np.broadcast_to(se * i_c, (2, 2, 2)).ravel()
    return sn, sc


def build_hamiltonian(cfg: SystemConfig) -> np.ndarray:
    """Diagonal hyperfine Hamiltonian in rad/ns. The bath is not part of it."""
    sn, sc = _level_products(cfg)
    energies = MHZ_TO_RAD_PER_NS * (cfg.a_n_par * sn + cfg.a_c_par * sc)
    return np.diag(energies).astype(complex)


def evolution_phases(cfg: SystemConfig, times: np.ndarray) -> np.ndarray:
    """Accumulated phase of every basis state, shape (n_times, 8).

    The channel offsets varphi1/varphi2 enter as a static phase imprint with the
    same spin-product weights as the hyperfine term.
    """
    sn, sc = _level_products(cfg)
    energies = MHZ_TO_RAD_PER_NS * (cfg.a_n_par * sn + cfg.a_c_par * sc)
    offset = cfg.varphi1 * sn + cfg.varphi2 * sc
    times = np.atleast_1d(np.asarray(times, dtype=float))
    return times[:, None] * energies[None, :] + offset[None, :]


def nuclear_state(phi: float) -> np.ndarray:
    return np.array([math.cos(phi / 2), math.sin(phi / 2)], dtype=complex)


PLUS = np.array([1, 1], dtype=complex) / math.sqrt(2)
UP = np.array([1, 0], dtype=complex)
DOWN = np.array([0, 1], dtype=complex)


def prepare_experiment1(cfg: SystemConfig) -> np.ndarray:
    """|+>_e (x) |psi(phi1)>_n (x) |psi(phi2)>_c."""
    return np.kron(np.kron(PLUS, nuclear_state(cfg.phi1)), nuclear_state(cfg.phi2))


def prepare_experiment2(cfg: SystemConfig) -> np.ndarray:
    """(|0>_e|down>_c + |1>_e|up>_c)/sqrt(2) with |psi(phi1)>_n in between."""
    psi_n = nuclear_state(cfg.phi1)
    e0 = np.array([1, 0], dtype=complex)
    e1 = np.array([0, 1], dtype=complex)
    state = np.kron(np.kron(e0, psi_n), DOWN) + np.kron(np.kron(e1, psi_n), UP)
    return state / math.sqrt(2)


def bath_envelope(t, bath: BathConfig):
    """Fitted spin-bath QFI envelope Q_R(t); 1 when the bath is disabled."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("bath envelope is defined for t >= 0 only")
    if not bath.enabled:
        out = np.ones_like(t_arr)
    else:
        decay = np.exp(-((t_arr / bath.t2_star) ** bath.alpha))
        arg = math.pi * bath.a_c0 * 1e-3 * t_arr + bath.varphi0 / 2
        out = decay * (1.0 - math.sin(bath.phi0) ** 2 * np.sin(arg) ** 2)
    return float(out) if np.ndim(t) == 0 else out


# carbon basis reordered to {down, up} in the reduced e-c state so the Bell pair
# |0 down> + |1 up> sits on the +1/-1 eigenvalues of the collective generator
_CARBON_RELABEL = np.array([1, 0])


def reduced_system_trace(
    cfg: SystemConfig,
    bath: BathConfig,
    grid: TimeGrid | np.ndarray,
    experiment: int = 1,
) -> np.ndarray:
    """Reduced open-system states on a time grid, shape (n_times, d, d).

    Experiment 1 returns the electron (d=2); experiment 2 returns electron+carbon
    (d=4, carbon basis ordered {down, up}). Matrix elements whose electron
    indices differ are scaled by sqrt(Q_R(t)).
    """
    times = grid.times if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    if experiment == 1:
        psi0 = prepare_experiment1(cfg)
        keep = [ELECTRON]
    elif experiment == 2:
        psi0 = prepare_experiment2(cfg)
        keep = [ELECTRON, CARBON]
    else:
        raise ValueError(f"experiment must be 1 or 2, got {experiment}")

    kets = evolve_diagonal(psi0, evolution_phases(cfg, times))
    rho = partial_trace(ket_to_dm(kets), DIMS, keep)
    if experiment == 2:
        order = np.array([2 * e + c for e in (0, 1) for c in _CARBON_RELABEL])
        rho = rho[:, order][:, :, order]

    d = rho.shape[-1]
    e_index = np.arange(d) // (d // 2)
    off = e_index[:, None] != e_index[None, :]
    scale = np.sqrt(bath_envelope(times, bath))
    return np.where(off[None], rho * scale[:, None, None], rho)
