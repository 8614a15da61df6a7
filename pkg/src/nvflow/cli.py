"""Command line entry point: ``nvflow <subcommand> [--config PATH] [--seed N] [--out DIR] [--noise]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from nvflow.experiments import (
    FIGURES,
    GRID_NOTE,
    ConfigError,
    Dataset,
    config_values,
    load_config,
    reproduce,
    run,
    sweep,
    validate_dataset,
    write_dataset,
)
from nvflow.model import reduced_system_trace
from nvflow.nonmarkov import long_time_measure
from nvflow.qfi import bloch_vector, qfi_bloch, qfi_two_qubit
from nvflow.tomography import (
    MeasurementModel,
    bloch_from_counts,
    linear_inversion,
    mle_project,
    photon_counts_as_dict,
    photon_counts_from_dict,
    physical_bloch,
    read_counts_csv,
    simulate_counts,
    state_from_bloch,
    two_qubit_counts,
    write_counts_csv,
)

SUBCOMMAND_OUTPUTS = {
    "flows": ("qfi", "flows"),
    "measure": ("qfi", "flows", "measure"),
}


def _manifest(path: str | None) -> dict:
    if path and Path(path).suffix == ".json":
        return json.loads(Path(path).read_text())
    return {}


def _resolve(args: argparse.Namespace):
    """Config, seed and noise flag with explicit flags taking precedence over a manifest."""
    rc = load_config(args.config)
    manifest = _manifest(args.config)
    seed = args.seed if args.seed is not None else int(manifest.get("seed", 0))
    spec = rc.spec
    if args.noise and spec.noise is None:
        spec = replace(spec, noise=MeasurementModel(), smoothing=max(spec.smoothing, 5))
    return rc, spec, seed, manifest


def _write(ds: Dataset, args, name: str, spec, seed: int, extra: dict | None = None) -> None:
    validate_dataset(ds, spec.experiment)
    manifest = {"command": args.command, "seed": seed, "noise": spec.noise is not None,
                "config": config_values(spec), "grid_note": GRID_NOTE, **(extra or {})}
    csv_path, _ = write_dataset(ds, args.out, name, manifest)
    print(csv_path)


def cmd_run(args: argparse.Namespace) -> int:
    rc, spec, seed, _ = _resolve(args)
    if args.command in SUBCOMMAND_OUTPUTS:
        spec = replace(spec, outputs=SUBCOMMAND_OUTPUTS[args.command])
    ds = run(spec, seed)
    _write(ds, args, args.command, spec, seed)
    if args.command == "measure":
        for key in ("n_subflows", "n_total"):
            if key in ds.columns:
                print(f"{key} = {ds.columns[key][-1]:.9g}")
        if args.long_time:
            print(f"long_time_measure = {long_time_measure(spec.cfg, spec.bath):.9g}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    rc, spec, seed, _ = _resolve(args)
    if args.noise:
        raise ConfigError("sweep evaluates the noiseless long-time measure; drop --noise")
    s = replace(rc.sweep, base=spec)
    ds = sweep(s)
    validate_dataset(ds)
    manifest = {"command": "sweep", "seed": seed, "noise": False,
                "config": config_values(spec, s), "grid_note": GRID_NOTE}
    print(write_dataset(ds, args.out, "sweep", manifest)[0])
    return 0


def cmd_tomo(args: argparse.Namespace) -> int:
    rc, spec, seed, _ = _resolve(args)
    model = replace(spec.noise or MeasurementModel(), rng_seed=seed)
    if args.counts:
        counts = read_counts_csv(args.counts)
    else:
        rho = reduced_system_trace(spec.cfg, spec.bath, np.array([args.time]), spec.experiment)[0]
        if spec.experiment == 1:
            counts = photon_counts_as_dict(simulate_counts(rho, model))
        else:
            counts = two_qubit_counts(rho, model)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_counts_csv(out / "tomo_counts.csv", counts, model.shots, seed)
        print(out / "tomo_counts.csv")

    if len(counts) == 5:
        est = state_from_bloch(physical_bloch(bloch_from_counts(photon_counts_from_dict(counts))))
        q = qfi_bloch(bloch_vector(est))
    else:
        est = mle_project(linear_inversion(counts))
        q = qfi_two_qubit(est)[0]
    cols = {"t_ns": np.array([args.time]), "qfi": np.array([q])}
    d = est.shape[0]
    for i in range(d):
        for j in range(d):
            cols[f"rho_{i}{j}_re"] = np.array([est[i, j].real])
            cols[f"rho_{i}{j}_im"] = np.array([est[i, j].imag])
    spec = replace(spec, experiment=1 if d == 2 else 2)
    _write(Dataset(cols), args, "tomo", spec, seed, {"counts": args.counts or "tomo_counts.csv"})
    return 0


def cmd_reproduce(args: argparse.Namespace) -> int:
    rc, spec, seed, manifest = _resolve(args)
    figure = args.figure or manifest.get("figure")
    if figure is None:
        raise ConfigError(f"a figure identifier is required; valid identifiers: {', '.join(FIGURES)}")
    noise = bool(args.noise or manifest.get("noise", False) or rc.spec.noise is not None)
    csv_path, _ = reproduce(figure, args.out, seed=seed, noise=noise, base=rc.spec)
    print(csv_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key = value config file or a JSON manifest")
        p.add_argument("--seed", type=int, default=None, help="RNG seed for shot noise (default 0)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--noise", action="store_true", help="emulate shot noise via tomography")

    for name, help_ in (("simulate", "QFI time series"), ("flows", "QFI flow and subflows"),
                        ("measure", "non-Markovianity measure N(t)")):
        p = sub.add_parser(name, help=help_)
        common(p)
        if name == "measure":
            p.add_argument("--long-time", action="store_true", help="also print the long-time measure")
        p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="long-time measure over phi1 or phi2")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tomo", help="simulate or import a tomography count record")
    common(p)
    p.add_argument("--time", type=float, default=0.0, help="evolution time in ns")
    p.add_argument("--counts", help="reconstruct from an existing counts CSV")
    p.set_defaults(func=cmd_tomo)

    p = sub.add_parser("reproduce", help="write the dataset behind a figure panel")
    p.add_argument("figure", nargs="?", help=f"one of {', '.join(FIGURES)}")
    common(p)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, RuntimeError, OSError) as exc:
        print(f"nvflow: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
