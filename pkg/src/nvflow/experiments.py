"""Configuration-driven experiment runs, parameter sweeps and figure datasets."""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from nvflow import __version__
from nvflow.model import BathConfig, SystemConfig, TimeGrid, reduced_system_trace
from nvflow.nonmarkov import (
    QfiTrace,
    differentiate,
    extract_rates,
    long_time_measure,
    measure_series,
    smooth,
    subflows,
    total_flow_measure_series,
)
from nvflow.qfi import bloch_vector, qfi_bloch, qfi_two_qubit
from nvflow.tomography import (
    MeasurementModel,
    single_qubit_tomography,
    state_from_bloch,
    two_qubit_tomography,
)

OUTPUT_KINDS = ("qfi", "flows", "measure", "rates", "states")
FIGURES = ("3a", "3b", "3c", "3d", "3e", "3f", "3g", "3h", "3i", "3j", "3k", "4a", "4b", "4c")
EMULATION_GRID = TimeGrid(0.0, 600.0, 2.0)
SWEEP_DT = 0.1
GRID_NOTE = "0-600 ns at 2 ns spacing is an assumed sampling grid for noisy emulation"


class ConfigError(ValueError):
    """Invalid configuration value; the message carries file and line."""


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: int = 1
    cfg: SystemConfig = field(default_factory=SystemConfig)
    bath: BathConfig = field(default_factory=BathConfig)
    grid: TimeGrid = EMULATION_GRID
    noise: MeasurementModel | None = None
    smoothing: int = 1
    outputs: tuple[str, ...] = ("qfi",)

    def __post_init__(self) -> None:
        if self.experiment not in (1, 2):
            raise ValueError(f"experiment must be 1 or 2, got {self.experiment}")
        if self.smoothing < 1 or self.smoothing % 2 == 0:
            raise ValueError(f"smoothing window must be odd, got {self.smoothing}")
        unknown = set(self.outputs) - set(OUTPUT_KINDS)
        if unknown:
            raise ValueError(f"unknown outputs {sorted(unknown)}; choose from {OUTPUT_KINDS}")
        if self.experiment == 2 and "rates" in self.outputs:
            raise ValueError("rates output is only defined for experiment 1")
        needs_flow = {"flows", "measure", "rates"} & set(self.outputs)
        if needs_flow and self.grid.times.size < 3:
            raise ValueError("flows need a grid with at least three points")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str = "phi2"
    values: tuple[float, ...] = tuple(np.linspace(0.0, math.pi / 2, 15))
    base: ExperimentSpec = field(default_factory=ExperimentSpec)
    horizon: float | None = None
    dt: float = SWEEP_DT

    def __post_init__(self) -> None:
        if self.parameter not in ("phi1", "phi2"):
            raise ValueError(f"sweep parameter must be phi1 or phi2, got {self.parameter}")
        for v in self.values:
            if not 0.0 <= v <= math.pi + 1e-12:
                raise ValueError(f"sweep value {v} outside [0, pi]")


@dataclass
class Dataset:
    columns: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.columns)


# --------------------------------------------------------------------- config

_PI_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\s*\*?\s*pi(?:\s*/\s*(\d+\.?\d*))?$")


def parse_number(text: str) -> float:
    """Float literal, optionally in units of pi: ``0.5pi``, ``pi/2``, ``0.37*pi``."""
    if isinstance(text, (int, float)):
        return float(text)
    text = text.strip()
    m = _PI_RE.match(text)
    if m:
        coef = float(m.group(1)) if m.group(1) else 1.0
        div = float(m.group(2)) if m.group(2) else 1.0
        return coef * math.pi / div
    return float(text)


def _flag(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "on", "yes"):
        return True
    if t in ("0", "false", "off", "no"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _angle(lo: float, hi: float, closed_hi: bool = True):
    def check(v: float) -> None:
        ok = lo <= v <= hi + 1e-12 if closed_hi else lo <= v < hi
        if not ok:
            raise ValueError(f"must lie in [{lo:g}, {hi:g}{']' if closed_hi else ')'}, got {v:g}")

    return check


def _positive(v: float) -> None:
    if not v > 0:
        raise ValueError(f"must be positive, got {v:g}")


def _odd(v: int) -> None:
    if v < 1 or v % 2 == 0:
        raise ValueError(f"must be a positive odd count, got {v}")


def _outputs(text) -> tuple[str, ...]:
    items = text if isinstance(text, (list, tuple)) else str(text).split(",")
    out = tuple(i.strip() for i in items if str(i).strip())
    bad = [o for o in out if o not in OUTPUT_KINDS]
    if bad:
        raise ValueError(f"unknown output(s) {bad}; choose from {', '.join(OUTPUT_KINDS)}")
    return out


def _values(text) -> tuple[float, ...]:
    items = text if isinstance(text, (list, tuple)) else str(text).split(",")
    return tuple(parse_number(str(i)) for i in items if str(i).strip())


def _int(text) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text}")
    return int(v)


def _one_of(*choices):
    def check(v) -> None:
        if v not in choices:
            raise ValueError(f"must be one of {', '.join(map(str, choices))}, got {v}")

    return check


def _at_least(lo: float):
    def check(v) -> None:
        if v < lo:
            raise ValueError(f"must be >= {lo:g}, got {v:g}")

    return check


def _exponent(v: float) -> None:
    if not 0 < v <= 2:
        raise ValueError(f"must lie in (0, 2], got {v:g}")


def _angles(vs) -> None:
    for v in vs:
        _angle(0, math.pi)(v)


TWO_PI = 2 * math.pi
# key -> (converter, validator)
CONFIG_KEYS: dict[str, tuple[Callable, Callable | None]] = {
    "experiment": (_int, _one_of(1, 2)),
    "a_n_par": (parse_number, None),
    "a_c_par": (parse_number, None),
    "phi1": (parse_number, _angle(0, math.pi)),
    "phi2": (parse_number, _angle(0, math.pi)),
    "varphi1": (parse_number, _angle(0, TWO_PI, closed_hi=False)),
    "varphi2": (parse_number, _angle(0, TWO_PI, closed_hi=False)),
    "bath": (_flag, None),
    "t2_star": (parse_number, _positive),
    "alpha": (parse_number, _exponent),
    "phi0": (parse_number, _angle(0, math.pi)),
    "a_c0": (parse_number, None),
    "varphi0": (parse_number, None),
    "t_start": (parse_number, None),
    "t_end": (parse_number, None),
    "dt": (parse_number, _positive),
    "noise": (_flag, None),
    "shots": (_int, _at_least(1)),
    "bright_rate": (parse_number, _positive),
    "dark_rate": (parse_number, _at_least(0)),
    "smoothing": (_int, _odd),
    "outputs": (_outputs, None),
    "sweep_parameter": (str, _one_of("phi1", "phi2")),
    "sweep_values": (_values, _angles),
    "horizon": (parse_number, _positive),
    "sweep_dt": (parse_number, _positive),
}


@dataclass
class RunConfig:
    """Parsed configuration: the experiment spec, sweep settings and raw values."""

    spec: ExperimentSpec
    sweep: SweepSpec
    values: dict = field(default_factory=dict)


def _convert(key: str, raw, where: str) -> object:
    if key not in CONFIG_KEYS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    conv, check = CONFIG_KEYS[key]
    try:
        value = conv(raw)
        if check is not None:
            check(value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {key}: {exc}") from None
    return value


def read_key_values(path: str | Path) -> dict[str, tuple[str, int]]:
    """``key = value`` lines with ``#`` comments; returns key -> (raw value, line number)."""
    out: dict[str, tuple[str, int]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} (first on line {out[key][1]})")
            out[key] = (raw, lineno)
    return out


def build_config(values: dict, where: Callable[[str], str] = lambda k: k) -> RunConfig:
    """Assemble a RunConfig from already-converted values; ``where`` locates a key."""
    d = {**asdict(SystemConfig()), **asdict(BathConfig())}

    def pick(*keys):
        return {k: values[k] for k in keys if k in values}

    try:
        cfg = SystemConfig(**{**{k: d[k] for k in ("a_n_par", "a_c_par", "phi1", "varphi1", "phi2", "varphi2")},
                              **pick("a_n_par", "a_c_par", "phi1", "varphi1", "phi2", "varphi2")})
        bath_kw = pick("t2_star", "alpha", "phi0", "a_c0", "varphi0")
        if "bath" in values:
            bath_kw["enabled"] = values["bath"]
        bath = BathConfig(**bath_kw)
    except ValueError as exc:
        raise ConfigError(f"{where('phi1')}: {exc}") from None
    try:
        grid = TimeGrid(
            values.get("t_start", EMULATION_GRID.t_start),
            values.get("t_end", EMULATION_GRID.t_end),
            values.get("dt", EMULATION_GRID.dt),
        )
    except ValueError as exc:
        raise ConfigError(f"{where('t_end')}: {exc}") from None
    noise = None
    if values.get("noise", False):
        try:
            noise = MeasurementModel(**pick("shots", "bright_rate", "dark_rate"))
        except ValueError as exc:
            raise ConfigError(f"{where('bright_rate')}: {exc}") from None
    smoothing = values.get("smoothing", 5 if noise is not None else 1)
    try:
        spec = ExperimentSpec(
            experiment=values.get("experiment", 1),
            cfg=cfg,
            bath=bath,
            grid=grid,
            noise=noise,
            smoothing=smoothing,
            outputs=values.get("outputs", ("qfi",)),
        )
    except ValueError as exc:
        raise ConfigError(f"{where('outputs')}: {exc}") from None
    sweep_kw = {}
    if "sweep_parameter" in values:
        sweep_kw["parameter"] = values["sweep_parameter"]
    if "sweep_values" in values:
        sweep_kw["values"] = tuple(values["sweep_values"])
    if "horizon" in values:
        sweep_kw["horizon"] = values["horizon"]
    if "sweep_dt" in values:
        sweep_kw["dt"] = values["sweep_dt"]
    sweep = SweepSpec(base=spec, **sweep_kw)
    return RunConfig(spec, sweep, dict(values))


def load_config(path: str | Path | None) -> RunConfig:
    """Read a key-value config file or a JSON manifest written by a previous run."""
    if path is None:
        return build_config({})
    path = Path(path)
    if path.suffix == ".json":
        manifest = json.loads(path.read_text())
        raw = manifest.get("config", manifest)
        values = {k: _convert(k, v, f"{path}:config.{k}") for k, v in raw.items()}
        return build_config(values, where=lambda k: f"{path}:config.{k}")
    kv = read_key_values(path)
    values = {k: _convert(k, raw, f"{path}:{line}") for k, (raw, line) in kv.items()}

    def where(key: str) -> str:
        if key in kv:
            return f"{path}:{kv[key][1]}"
        return str(path)

    return build_config(values, where)


def config_values(spec: ExperimentSpec, sweep: SweepSpec | None = None) -> dict:
    """Flat, JSON-serialisable view of a spec; the inverse of :func:`build_config`."""
    values = {"experiment": spec.experiment}
    values.update(asdict(spec.cfg))
    b = asdict(spec.bath)
    values["bath"] = b.pop("enabled")
    values.update(b)
    values.update({"t_start": spec.grid.t_start, "t_end": spec.grid.t_end, "dt": spec.grid.dt})
    values["noise"] = spec.noise is not None
    if spec.noise is not None:
        values.update({"shots": spec.noise.shots, "bright_rate": spec.noise.bright_rate,
                       "dark_rate": spec.noise.dark_rate})
    values["smoothing"] = spec.smoothing
    values["outputs"] = list(spec.outputs)
    if sweep is not None:
        values.update({"sweep_parameter": sweep.parameter, "sweep_values": list(sweep.values),
                       "sweep_dt": sweep.dt})
        if sweep.horizon is not None:
            values["horizon"] = sweep.horizon
    return values


# ------------------------------------------------------------------ pipeline


def _with_angles(cfg: SystemConfig, phi1: float, phi2: float) -> SystemConfig:
    return replace(cfg, phi1=phi1, phi2=phi2)


def measured_states(
    experiment: int,
    cfg: SystemConfig,
    bath: BathConfig,
    times: np.ndarray,
    noise: MeasurementModel | None,
    seed: np.random.SeedSequence | None,
) -> tuple[np.ndarray, np.ndarray]:
    """(QFI trace, states) either exactly or through simulated tomography."""
    rho = reduced_system_trace(cfg, bath, times, experiment)
    if noise is None:
        if experiment == 1:
            return qfi_bloch(bloch_vector(rho)), rho
        return qfi_two_qubit(rho)[0], rho
    rng = np.random.default_rng(seed)
    if experiment == 1:
        est = np.array([state_from_bloch(single_qubit_tomography(r, noise, rng)) for r in rho])
        return qfi_bloch(bloch_vector(est)), est
    est = np.array([two_qubit_tomography(r, noise, rng) for r in rho])
    return qfi_two_qubit(est)[0], est


def _seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def _state_columns(states: np.ndarray) -> dict[str, np.ndarray]:
    d = states.shape[-1]
    cols = {}
    for i in range(d):
        for j in range(d):
            cols[f"rho_{i}{j}_re"] = states[:, i, j].real
            cols[f"rho_{i}{j}_im"] = states[:, i, j].imag
    return cols


def run(spec: ExperimentSpec, seed: int = 0) -> Dataset:
    """Simulate one configuration and emit every requested series."""
    times = spec.grid.times
    outs = set(spec.outputs)
    seeds = _seeds(seed, 4)
    cols: dict[str, np.ndarray] = {"t_ns": times}
    meta: dict = {"experiment": spec.experiment, "seed": seed}

    q, states = measured_states(spec.experiment, spec.cfg, spec.bath, times, spec.noise, seeds[0])
    q_s = smooth(q, spec.smoothing)
    if "qfi" in outs:
        cols["qfi"] = q
        if spec.smoothing > 1:
            cols["qfi_smoothed"] = q_s
        if spec.experiment == 2:
            cols["witness"] = (q > 2.0).astype(float)
    if "states" in outs:
        cols.update(_state_columns(states))

    if spec.experiment == 2:
        if outs & {"flows", "measure"}:
            flow = differentiate(QfiTrace(times, q_s))
            if "flows" in outs:
                cols["flow_total"] = flow
            if "measure" in outs:
                cols["n_total"] = total_flow_measure_series(times, flow)
        return Dataset(cols, meta)

    if outs & {"flows", "measure", "rates"}:
        c = spec.cfg
        aux = {}
        for name, (p1, p2), s in zip(("q_r", "q_nr", "q_cr"), ((0, 0), (c.phi1, 0), (0, c.phi2)), seeds[1:]):
            vals, _ = measured_states(1, _with_angles(c, p1, p2), spec.bath, times, spec.noise, s)
            aux[name] = QfiTrace(times, smooth(vals, spec.smoothing), name)
        flows = subflows(aux["q_r"], aux["q_nr"], aux["q_cr"])
        meta["flow_residual"] = flows.residual()
        meta["flow_tolerance"] = flows.tolerance
        direct = differentiate(QfiTrace(times, q_s))
        if "flows" in outs:
            cols.update({"flow_total": direct, "sub_n": flows.sub_n, "sub_c": flows.sub_c,
                         "sub_r": flows.sub_r, "sub_sum": flows.sub_sum})
        if "measure" in outs:
            cols["n_subflows"] = measure_series(flows)
            cols["n_total"] = total_flow_measure_series(times, direct)
        if "rates" in outs:
            qr = aux["q_r"].values
            if np.any(qr <= 0):
                raise ValueError("bath-only QFI reached zero; rates cannot be separated")
            rates = extract_rates(
                QfiTrace(times, aux["q_nr"].values / qr, "q_n"),
                QfiTrace(times, aux["q_cr"].values / qr, "q_c"),
                aux["q_r"],
            )
            cols.update({"gamma_n": rates.gamma_n, "gamma_c": rates.gamma_c, "gamma_r": rates.gamma_r})
        if spec.noise is None:
            meta["flow_checked"] = True
            if not flows.is_consistent():
                raise RuntimeError(
                    f"flow decomposition residual {flows.residual():.3g} exceeds {flows.tolerance:.3g}"
                )
    return Dataset(cols, meta)


def sweep(s: SweepSpec) -> Dataset:
    """Long-time measure for each value of the swept angle."""
    values = np.asarray(s.values, dtype=float)
    out = []
    for v in values:
        cfg = replace(s.base.cfg, **{s.parameter: float(v)})
        out.append(long_time_measure(cfg, s.base.bath, horizon=s.horizon, dt=s.dt))
    return Dataset({f"{s.parameter}_rad": values, "measure_long_time": np.array(out)},
                   {"parameter": s.parameter})


# ------------------------------------------------------------------ checking


def validate_dataset(ds: Dataset, experiment: int = 1) -> None:
    """Module-level invariants every emitted dataset must satisfy."""
    qmax = 4.0 if experiment == 2 else 1.0
    for name, col in ds.columns.items():
        if name.startswith("qfi"):
            if np.any(col < -1e-9) or np.any(col > qmax + 1e-9):
                raise RuntimeError(f"{name} leaves [0, {qmax}]")
        if name.startswith("n_") and np.any(np.diff(col) < -1e-12):
            raise RuntimeError(f"{name} is not nondecreasing")
        if name.startswith("measure") and np.any(col < 0):
            raise RuntimeError(f"{name} is negative")


# ---------------------------------------------------------------------- I/O


def format_csv(ds: Dataset) -> str:
    names = ds.names
    arrays = [np.asarray(ds.columns[n], dtype=float) for n in names]
    lines = [",".join(names)]
    for row in zip(*arrays):
        lines.append(",".join(f"{v:.9g}" for v in row))
    return "\n".join(lines) + "\n"


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset(ds: Dataset, out_dir: str | Path, name: str, manifest: dict) -> tuple[Path, Path]:
    """Write ``<name>.csv`` and ``<name>.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    text = format_csv(ds)
    csv_path = out_dir / f"{name}.csv"
    atomic_write(csv_path, text)
    manifest = {
        **manifest,
        "version": __version__,
        "columns": ds.names,
        "meta": _jsonable(ds.meta),
        "csv": csv_path.name,
        "sha256": hashlib.sha256(text.encode()).hexdigest(),
    }
    json_path = out_dir / f"{name}.json"
    atomic_write(json_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# ----------------------------------------------------------------- figures

HALF_PI, QUARTER_PI = math.pi / 2, math.pi / 4
_FLOW_FIGS = {"3d": (0.0, 0.0), "3e": (QUARTER_PI, 0.0), "3f": (HALF_PI, 0.0),
              "3g": (0.0, QUARTER_PI), "3h": (0.0, HALF_PI)}


def figure_dataset(figure: str, base: ExperimentSpec | None = None, seed: int = 0,
                   noise: bool = False) -> Dataset:
    """Dataset behind one panel of the QFI-flow figures (3a-3k, 4a-4c)."""
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; valid identifiers: {', '.join(FIGURES)}")
    base = base or ExperimentSpec()
    if noise and base.noise is None:
        base = replace(base, noise=MeasurementModel(), smoothing=5)
    if not noise:
        base = replace(base, noise=None)
    times = base.grid.times
    seeds = _seeds(seed, 4)

    def q(phi1: float, phi2: float, s, experiment: int = 1) -> np.ndarray:
        cfg = _with_angles(base.cfg, phi1, phi2)
        return measured_states(experiment, cfg, base.bath, times, base.noise, s)[0]

    def one(phi1: float, phi2: float, outputs, experiment: int = 1) -> Dataset:
        spec = replace(base, experiment=experiment, cfg=_with_angles(base.cfg, phi1, phi2),
                       outputs=outputs)
        return run(spec, seed)

    cols: dict[str, np.ndarray] = {"t_ns": times}
    if figure == "3a":
        for tag, p in (("0", 0.0), ("pi4", QUARTER_PI), ("pi2", HALF_PI)):
            cols[f"qfi_phi1_{tag}"] = q(p, 0.0, seeds[0])
    elif figure == "3b":
        for tag, p in (("0", 0.0), ("pi4", QUARTER_PI), ("pi2", HALF_PI)):
            cols[f"qfi_phi2_{tag}"] = q(0.0, p, seeds[0])
    elif figure == "3c":
        cols["qfi"] = q(HALF_PI, HALF_PI, seeds[0])
        q_r, q_nr, q_cr = (q(a, b, s) for (a, b), s in zip(((0, 0), (HALF_PI, 0), (0, HALF_PI)), seeds[1:]))
        cols["factorized_from_single_channels"] = q_nr * q_cr / q_r
    elif figure in _FLOW_FIGS:
        ds = one(*_FLOW_FIGS[figure], ("qfi", "flows"))
        cols.update({k: ds.columns[k] for k in ("qfi", "flow_total")})
    elif figure == "3i":
        ds = one(HALF_PI, HALF_PI, ("flows",))
        cols.update({k: v for k, v in ds.columns.items() if k != "t_ns"})
    elif figure == "3j":
        ds = one(HALF_PI, HALF_PI, ("measure",))
        cols.update({k: ds.columns[k] for k in ("n_subflows", "n_total")})
    elif figure == "3k":
        s = SweepSpec(parameter="phi2", base=replace(base, noise=None, cfg=_with_angles(base.cfg, 0.0, 0.0)))
        return sweep(s)
    elif figure == "4a":
        cols["qfi_phi1_0"] = q(0.0, 0.0, seeds[0], experiment=2)
        cols["qfi_phi1_pi2"] = q(HALF_PI, 0.0, seeds[1], experiment=2)
    elif figure in ("4b", "4c"):
        ds = one(0.0 if figure == "4b" else HALF_PI, 0.0, ("qfi", "flows"), experiment=2)
        cols.update({k: ds.columns[k] for k in ("qfi", "flow_total")})
    return Dataset(cols, {"figure": figure, "seed": seed, "noise": noise})


def reproduce(figure: str, out_dir: str | Path, seed: int = 0, noise: bool = False,
              base: ExperimentSpec | None = None) -> tuple[Path, Path]:
    """Write ``fig<id>.csv`` and its manifest."""
    base = base or ExperimentSpec()
    ds = figure_dataset(figure, base, seed, noise)
    validate_dataset(ds, experiment=2 if figure.startswith("4") else 1)
    manifest = {
        "command": "reproduce",
        "figure": figure,
        "seed": seed,
        "noise": noise,
        "config": config_values(base),
        "grid_note": GRID_NOTE,
    }
    return write_dataset(ds, out_dir, f"fig{figure}", manifest)
