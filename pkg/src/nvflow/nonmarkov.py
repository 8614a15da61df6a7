"""QFI flows, per-channel subflows, the inward-subflow measure and dephasing rates.

Channel QFI traces follow the naming used throughout the package:

* ``q_r``  - bath only, Q(t; 0, 0)
* ``q_nr`` - nitrogen channel open plus bath, Q(t; phi1, 0)
* ``q_cr`` - carbon channel open plus bath, Q(t; 0, phi2)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nvflow.linalg import SIGMA_Z, check_density
from nvflow.model import BathConfig, SystemConfig, TimeGrid, reduced_system_trace
from nvflow.qfi import bloch_vector, qfi_bloch

ZERO_GUARD = 1e-9
FLOW_RTOL = 1e-3
REFERENCE_DT = 0.1


@dataclass(frozen=True)
class QfiTrace:
    times: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if times.size >= 2:
            steps = np.diff(times)
            if np.any(steps <= 0):
                raise ValueError("times must be strictly increasing")
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
                raise ValueError("times must be uniformly spaced")
        if not np.all(np.isfinite(values)):
            raise ValueError("QFI values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def default_flow_tolerance(dt: float) -> float:
    """Relative flow-sum tolerance; second-order in dt, anchored at 1e-3 for 0.1 ns."""
    return FLOW_RTOL * max(1.0, (dt / REFERENCE_DT) ** 2)


@dataclass(frozen=True)
class FlowSet:
    times: np.ndarray
    total: np.ndarray
    sub_n: np.ndarray
    sub_c: np.ndarray
    sub_r: np.ndarray
    tolerance: float = FLOW_RTOL

    @property
    def sub_sum(self) -> np.ndarray:
        return self.sub_n + self.sub_c + self.sub_r

    def residual(self) -> float:
        """max |total - sum of subflows|, relative to max |total|."""
        scale = max(float(np.max(np.abs(self.total))), 1e-12)
        return float(np.max(np.abs(self.total - self.sub_sum))) / scale

    def is_consistent(self) -> bool:
        return self.residual() <= self.tolerance


@dataclass(frozen=True)
class RateSet:
    times: np.ndarray
    gamma_n: np.ndarray
    gamma_c: np.ndarray
    gamma_r: np.ndarray
    masked: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.gamma_n + self.gamma_c + self.gamma_r


def differentiate(trace: QfiTrace) -> np.ndarray:
    """Central differences inside, first-order one-sided differences at the ends."""
    if trace.values.size < 3:
        raise ValueError("at least three samples are needed to differentiate")
    return np.gradient(trace.values, trace.dt)


def smooth(values, window: int = 5) -> np.ndarray:
    """Adjacent-average smoothing; near the ends the window is clipped to the data."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"smoothing window must be a positive odd count, got {window}")
    values = np.asarray(values, dtype=float)
    if window == 1 or values.size == 0:
        return values.copy()
    half = window // 2
    n = values.size
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(n)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def _aligned(*traces: QfiTrace) -> None:
    first = traces[0].times
    for tr in traces[1:]:
        if tr.times.shape != first.shape or not np.allclose(tr.times, first, rtol=0, atol=1e-9):
            raise ValueError("QFI traces are not on the same time grid")


def subflows(q_r: QfiTrace, q_nr: QfiTrace, q_cr: QfiTrace, tolerance: float | None = None) -> FlowSet:
    """Split the QFI flow of the two-channel configuration into n, c and bath parts.

    Everything is in product-rule form, so the exact dephasing nodes of an
    open channel (Q_nR or Q_cR = 0) give finite subflows.
    """
    _aligned(q_r, q_nr, q_cr)
    if np.any(q_r.values <= 0):
        raise ValueError("bath-only QFI must stay positive to split the flow")
    qr, qn, qc = q_r.values, q_nr.values, q_cr.values
    dr, dn, dc = differentiate(q_r), differentiate(q_nr), differentiate(q_cr)

    sub_n = (dn - qn * dr / qr) * qc / qr
    sub_c = (dc - qc * dr / qr) * qn / qr
    sub_r = qc * qn * dr / qr**2
    full = QfiTrace(q_r.times, qn * qc / qr, "reconstructed")
    total = differentiate(full)
    tol = default_flow_tolerance(q_r.dt) if tolerance is None else tolerance
    return FlowSet(q_r.times, total, sub_n, sub_c, sub_r, tol)


def _cumulative_positive(times: np.ndarray, flow: np.ndarray) -> np.ndarray:
    pos = np.maximum(flow, 0.0)
    steps = 0.5 * (pos[1:] + pos[:-1]) * np.diff(times)
    return np.concatenate([[0.0], np.cumsum(steps)])


def measure_series(flows: FlowSet) -> np.ndarray:
    """N(t) on the flow grid: trapezoid integral of the inward part of each subflow."""
    return sum(_cumulative_positive(flows.times, s) for s in (flows.sub_n, flows.sub_c, flows.sub_r))


def total_flow_measure_series(times: np.ndarray, total: np.ndarray) -> np.ndarray:
    """Integral of max(I, 0) for a single (total) flow."""
    return _cumulative_positive(np.asarray(times, float), np.asarray(total, float))


def measure_n(flows: FlowSet, t: float) -> float:
    times = flows.times
    if not times[0] - 1e-9 <= t <= times[-1] + 1e-9:
        raise ValueError(f"t = {t} ns is outside the flow grid [{times[0]}, {times[-1]}]")
    return float(np.interp(t, times, measure_series(flows)))


def channel_qfi_traces(
    cfg: SystemConfig, bath: BathConfig, grid: TimeGrid | np.ndarray
) -> tuple[QfiTrace, QfiTrace, QfiTrace]:
    """Noiseless (Q_R, Q_nR, Q_cR) from the trace-out simulator."""
    times = grid.times if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)

    def run(phi1: float, phi2: float, label: str) -> QfiTrace:
        c = SystemConfig(cfg.a_n_par, cfg.a_c_par, phi1, cfg.varphi1, phi2, cfg.varphi2)
        rho = reduced_system_trace(c, bath, times, experiment=1)
        return QfiTrace(times, qfi_bloch(bloch_vector(rho)), label)

    return run(0.0, 0.0, "q_r"), run(cfg.phi1, 0.0, "q_nr"), run(0.0, cfg.phi2, "q_cr")


def long_time_measure(
    cfg: SystemConfig,
    bath: BathConfig,
    horizon: float | None = None,
    dt: float = REFERENCE_DT,
) -> float:
    """N(t -> infinity), evaluated at a horizon where the bath has killed the QFI.

    The default horizon is 8 T2*; a horizon with Q_R(horizon) >= 1e-3 is rejected.
    """
    if not bath.enabled:
        raise ValueError("the long-time measure needs a decaying bath; revivals never stop without it")
    if horizon is None:
        horizon = 8.0 * bath.t2_star
    grid = TimeGrid(0.0, horizon, dt)
    q_r, q_nr, q_cr = channel_qfi_traces(cfg, bath, grid)
    if q_r.values[-1] >= 1e-3:
        raise ValueError(
            f"horizon {horizon} ns is too short: Q_R = {q_r.values[-1]:.3g} (needs < 1e-3)"
        )
    flows = subflows(q_r, q_nr, q_cr)
    return float(measure_series(flows)[-1])


def extract_rates(q_n: QfiTrace, q_c: QfiTrace, q_r: QfiTrace) -> RateSet:
    """Dephasing rates gamma_i(t) = -1/2 d/dt ln Q_i(t) for each single-channel QFI.

    Samples within ``ZERO_GUARD`` of a QFI zero are set to NaN and flagged in
    ``RateSet.masked``; they are never interpolated.
    """
    _aligned(q_n, q_c, q_r)
    gammas = []
    masked = np.zeros(q_n.values.size, dtype=bool)
    for tr in (q_n, q_c, q_r):
        if np.all(np.abs(tr.values) < ZERO_GUARD):
            raise ValueError(f"trace {tr.label or '?'} is identically zero")
        dq = differentiate(tr)
        bad = tr.values < ZERO_GUARD
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(bad, np.nan, -0.5 * dq / tr.values)
        masked |= bad
        gammas.append(g)
    return RateSet(q_n.times, gammas[0], gammas[1], gammas[2], masked)


def single_channel_traces(
    cfg: SystemConfig, bath: BathConfig, grid: TimeGrid | np.ndarray
) -> tuple[QfiTrace, QfiTrace, QfiTrace]:
    """(Q_n, Q_c, Q_R) separately, each with only its own channel acting."""
    q_r, q_nr, q_cr = channel_qfi_traces(cfg, bath, grid)
    return (
        QfiTrace(q_r.times, q_nr.values / q_r.values, "q_n"),
        QfiTrace(q_r.times, q_cr.values / q_r.values, "q_c"),
        q_r,
    )


RK4_STABILITY = 0.5


def _dephasing_operator(dim: int) -> np.ndarray:
    return np.kron(SIGMA_Z, np.eye(dim // 2))


def lindblad_propagate(rates: RateSet, rho0: np.ndarray) -> np.ndarray:
    """RK4 integration of pure electron dephasing on the rate grid.

    d rho/dt = sum_j (gamma_j / 2) (Z rho Z - rho), Z = sigma_z on the electron.
    With this normalisation an electron coherence decays as exp(-int gamma) and
    the QFI as exp(-2 int gamma), consistent with gamma = -1/2 d ln Q / dt.
    H = 0 (frame co-rotating with the coherence phase). Rates at half steps are
    linearly interpolated.
    """
    rho0 = check_density(rho0)
    gamma = rates.total
    if not np.all(np.isfinite(gamma)):
        raise ValueError("rates contain masked or non-finite samples")
    times = rates.times
    dt = float(times[1] - times[0])
    if dt * float(np.max(np.abs(gamma))) > RK4_STABILITY:
        raise ValueError(
            f"step dt={dt} ns exceeds the RK4 stability bound dt*max|gamma| <= {RK4_STABILITY}"
        )
    z = _dephasing_operator(rho0.shape[0])

    def rhs(rho: np.ndarray, g: float) -> np.ndarray:
        return 0.5 * g * (z @ rho @ z - rho)

    out = np.empty((times.size,) + rho0.shape, dtype=complex)
    rho = rho0.copy()
    out[0] = rho
    for k in range(times.size - 1):
        g0, g1 = gamma[k], gamma[k + 1]
        gm = 0.5 * (g0 + g1)
        k1 = rhs(rho, g0)
        k2 = rhs(rho + 0.5 * dt * k1, gm)
        k3 = rhs(rho + 0.5 * dt * k2, gm)
        k4 = rhs(rho + dt * k3, g1)
        rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = rho
    return out


def corotating_frame(states: np.ndarray) -> np.ndarray:
    """Remove the phase of the electron coherence from each single-qubit state."""
    states = np.asarray(states, dtype=complex)
    phase = np.exp(-1j * np.angle(states[..., 1, 0]))
    out = states.copy()
    out[..., 1, 0] = states[..., 1, 0] * phase
    out[..., 0, 1] = states[..., 0, 1] * np.conj(phase)
    return out

