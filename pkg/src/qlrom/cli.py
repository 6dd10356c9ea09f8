# cli.py
"""Command-line pipeline: generate | fit | simulate | evaluate | report.

Every run is driven by JSON config files so it can be reproduced exactly;
command-line flags that duplicate config fields are rejected unless
--override is given (the flag then wins and the effective value is echoed
into the run artifacts).  Exit codes: 0 success, 2 validation error,
3 numerical failure, 4 I/O error.  The QLROM_OUTPUT_ROOT environment
variable, when set, is prepended to relative output directories.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import fom
from .opinf import RankDeficiencyError
from .pipeline import (
    PipelineConfig,
    RunReport,
    dataset_meta_path,
    evaluate_rom,
    fit_rom,
    generate_from_spec,
)
from .rom import RomModel, Trajectory, trajectory_error
from .snapshots import (
    FLOAT_FORMAT,
    LayoutError,
    SnapshotFormatError,
    TimeGrid,
    load_dataset,
    save_dataset,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

OUTPUT_ROOT_ENV = "QLROM_OUTPUT_ROOT"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _resolve_output(path_str: str) -> Path:
    path = Path(path_str)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})", EXIT_VALIDATION) from exc


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _parse_grid(text: str) -> dict:
    # "t0:t1:num"
    parts = text.split(":")
    if len(parts) != 3:
        raise CliError(f"grid must be 't0:t1:num', got {text!r}", EXIT_VALIDATION)
    return {"t0": float(parts[0]), "t1": float(parts[1]), "num": int(parts[2])}


def _apply_override(config_value, flag_value, name: str, override: bool):
    """Reproducibility guard: a flag may only displace a config value
    when --override is given."""
    if flag_value is None:
        return config_value
    if config_value is not None and config_value != flag_value and not override:
        raise CliError(
            f"--{name} conflicts with the config value ({config_value!r}); "
            "pass --override to let the flag win", EXIT_VALIDATION,
        )
    return flag_value


def _load_dataset_checked(path):
    try:
        return load_dataset(path)
    except (SnapshotFormatError, LayoutError) as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc


def cmd_generate(args) -> int:
    spec = _load_json(args.config) if args.config else {}
    spec["which"] = _apply_override(spec.get("which"), args.which, "which", args.override)
    if spec.get("which") is None:
        raise CliError("model kind missing: give --which or a config with 'which'",
                       EXIT_VALIDATION)
    if args.grid:
        spec["grid"] = _apply_override(spec.get("grid"), _parse_grid(args.grid),
                                       "grid", args.override)
    if args.integrator:
        spec["integrator"] = _apply_override(spec.get("integrator"), args.integrator,
                                             "integrator", args.override)
    try:
        ds, meta = generate_from_spec(spec)
    except (ValueError, TypeError) as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    except fom.IntegrationFailure as exc:
        raise CliError(str(exc), EXIT_NUMERICAL) from exc
    outdir = _resolve_output(args.output)
    stem = args.stem or spec["which"]
    csv_path = outdir / f"{stem}.csv"
    save_dataset(ds, csv_path, layout_path=outdir / f"{stem}.layout.json")
    _write_json(dataset_meta_path(csv_path), meta)
    print(f"wrote {csv_path} ({ds.n} states x {ds.n_times} instants, "
          f"blocks {dict((b.name, b.size) for b in ds.blocks)})")
    return EXIT_OK


def cmd_fit(args) -> int:
    config = _build_pipeline_config(args)
    outdir = _resolve_output(args.output)
    if "generate" in config.dataset:
        # one-shot run: generate the training data next to the model
        try:
            ds, meta = generate_from_spec(config.dataset["generate"])
        except (ValueError, TypeError) as exc:
            raise CliError(str(exc), EXIT_VALIDATION) from exc
        except fom.IntegrationFailure as exc:
            raise CliError(str(exc), EXIT_NUMERICAL) from exc
        data_path = outdir / "training_data.csv"
        save_dataset(ds, data_path, layout_path=outdir / "training_data.layout.json")
        _write_json(dataset_meta_path(data_path), meta)
    else:
        ds = _load_dataset_checked(config.dataset["path"])
    try:
        model, fragment = fit_rom(ds, config)
    except RankDeficiencyError as exc:
        raise CliError(str(exc), EXIT_NUMERICAL) from exc
    except (ValueError, LayoutError) as exc:
        raise CliError(f"fit failed: {exc}", EXIT_VALIDATION) from exc
    model.save(outdir)
    _write_json(outdir / "fit_report.json", _round_trip_safe(fragment))
    ranks = ", ".join(f"{k}={v}" for k, v in fragment["ranks"].items())
    print(f"fitted r={model.r} ({ranks}), backend {fragment['backend']}, "
          f"residual {fragment['residual']:.3e}, "
          f"max Re(eig) {fragment['max_real_eig']:.3e}")
    return EXIT_OK


def _round_trip_safe(d: dict) -> dict:
    return json.loads(json.dumps(d, default=float))


def _build_pipeline_config(args) -> PipelineConfig:
    raw = _load_json(args.config) if args.config else {}
    if args.dataset:
        if "generate" in raw.get("dataset", {}) and not args.override:
            raise CliError(
                "--dataset conflicts with the config's generate source; "
                "pass --override to let the flag win", EXIT_VALIDATION)
        existing = raw.get("dataset", {}).get("path")
        raw["dataset"] = {"path": _apply_override(existing, args.dataset,
                                                  "dataset", args.override)}
    raw.setdefault("dataset", {})
    if args.seed is not None:
        raw["seed"] = _apply_override(raw.get("seed"), args.seed, "seed", args.override)
    if getattr(args, "scaling", None):
        raw["scaling"] = _apply_override(raw.get("scaling"), args.scaling,
                                         "scaling", args.override)
    try:
        return PipelineConfig.from_dict(raw)
    except (ValueError, TypeError, KeyError) as exc:
        raise CliError(f"invalid pipeline config: {exc}", EXIT_VALIDATION) from exc


def _load_model_checked(path) -> RomModel:
    try:
        return RomModel.load(path)
    except OSError as exc:
        raise CliError(f"cannot read model from {path}: {exc}", EXIT_IO) from exc
    except (ValueError, KeyError) as exc:
        raise CliError(f"invalid model directory {path}: {exc}", EXIT_VALIDATION) from exc


def _integrator_options(args) -> dict:
    options = {}
    if args.method == "rk4-fixed" and args.dt_max is not None:
        options["dt_max"] = args.dt_max
    return options


def cmd_simulate(args) -> int:
    model = _load_model_checked(args.model)
    ds = _load_dataset_checked(args.dataset)
    grid = _grid_or_dataset(args, ds)
    try:
        reduced, full = model.simulate(ds.initial_state, grid, method=args.method,
                                       **_integrator_options(args))
    except ValueError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    outdir = _resolve_output(args.output)
    save_dataset(full.to_dataset(), outdir / "rom_trajectory.csv")
    save_dataset(reduced.to_dataset(), outdir / "rom_reduced.csv")
    if full.diverged:
        print("ROM simulation diverged; trajectory flagged", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {outdir / 'rom_trajectory.csv'}")
    return EXIT_OK


def _grid_or_dataset(args, ds) -> TimeGrid:
    if args.grid:
        spec = _parse_grid(args.grid)
        return TimeGrid.linspace(spec["t0"], spec["t1"], spec["num"])
    return ds.grid


def cmd_evaluate(args) -> int:
    model = _load_model_checked(args.model)
    ds = _load_dataset_checked(args.dataset)
    fom_time = None
    meta_file = dataset_meta_path(args.dataset)
    if meta_file.exists():
        fom_time = _load_json(meta_file).get("fom_time_s")
    fit_fragment = None
    fit_report = Path(args.model) / "fit_report.json"
    if fit_report.exists():
        fit_fragment = _load_json(fit_report)
    report, reduced, full = evaluate_rom(model, ds, method=args.method,
                                         fom_time=fom_time, fit_fragment=fit_fragment,
                                         **_integrator_options(args))
    outdir = _resolve_output(args.output)
    report.save(outdir / "run_report.json")
    save_dataset(full.to_dataset(), outdir / "rom_trajectory.csv")
    save_dataset(reduced.to_dataset(), outdir / "rom_reduced.csv")
    save_dataset(ds, outdir / "fom_trajectory.csv")
    _write_error_csv(outdir / "error_per_time.csv", ds, full)
    if args.plot_data:
        _write_tidy_csv(outdir / "plot_data.csv", ds, full)
    if full.diverged:
        print("ROM simulation diverged; see run_report.json", file=sys.stderr)
        return EXIT_NUMERICAL
    err = report.errors.get("overall")
    ratio = report.timings.get("rom_to_fom_ratio")
    line = f"overall error {err:.4%}" if err is not None else "no error computed"
    if ratio is not None:
        line += f", ROM/FOM time ratio {ratio:.4f}"
    print(line)
    return EXIT_OK


def _write_error_csv(path, ds, full) -> None:
    truth = Trajectory(ds.grid, ds.states, blocks=ds.blocks)
    if full.diverged:
        diff = np.where(np.isfinite(full.values), ds.states - full.values, np.nan)
        per_time = np.sqrt(np.nansum(diff * diff, axis=0))
    else:
        per_time = trajectory_error(truth, full).per_time
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,error_norm\n")
        for t, e in zip(ds.grid.instants, per_time):
            fh.write((FLOAT_FORMAT + "," + FLOAT_FORMAT + "\n") % (t, e))


def _write_tidy_csv(path, ds, full) -> None:
    # Long-format (t, z, value, series) table for external surface plots.
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,z,value,series\n")
        for values, tag in ((ds.states, "fom"), (full.values, "rom")):
            for b in ds.blocks:
                for row in range(b.start, b.stop):
                    z = row - b.start
                    series = f"{tag}:{b.name}"
                    for col, t in enumerate(ds.grid.instants):
                        fh.write((FLOAT_FORMAT + ",%d," + FLOAT_FORMAT + ",%s\n")
                                 % (t, z, values[row, col], series))


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    report_path = run_dir / "run_report.json"
    if not report_path.exists():
        raise CliError(f"no run_report.json in {run_dir}", EXIT_IO)
    report = RunReport.load(report_path)
    print(json.dumps(report.to_dict(), indent=2))
    if args.check:
        model_dir = Path(args.model) if args.model else None
        problems = verify_report(run_dir, report, model_dir=model_dir)
        if problems:
            for p in problems:
                print(f"MISMATCH: {p}", file=sys.stderr)
            return EXIT_NUMERICAL
        print("report verified against artifacts")
    return EXIT_OK


def verify_report(run_dir: Path, report: RunReport,
                  model_dir: Path | None = None, tol: float = 1e-12) -> list[str]:
    """Recompute every recomputable report number from the persisted
    artifacts; returns a list of mismatch descriptions (empty when clean)."""
    problems = []
    full = load_dataset(run_dir / "rom_trajectory.csv")
    truth = load_dataset(run_dir / "fom_trajectory.csv")
    err = trajectory_error(Trajectory(truth.grid, truth.states, blocks=truth.blocks),
                           Trajectory(full.grid, full.states, blocks=full.blocks))
    if report.errors:
        if abs(err.overall - report.errors["overall"]) > tol:
            problems.append(f"overall error {report.errors['overall']} != {err.overall}")
        for name, value in report.errors["per_block"].items():
            if abs(err.per_block[name] - value) > tol:
                problems.append(f"{name} block error {value} != {err.per_block[name]}")
    if model_dir is None:
        model_dir = run_dir
    basis_csv = Path(model_dir) / "basis.csv"
    if basis_csv.exists():
        model = RomModel.load(model_dir)
        if model.basis.block_ranks != report.ranks:
            problems.append(f"ranks {report.ranks} != {model.basis.block_ranks}")
        for name, energy in model.basis.energy_captured().items():
            if abs(energy - report.energy_captured[name]) > tol:
                problems.append(f"energy[{name}] {report.energy_captured[name]} != {energy}")
        eig = float(np.max(np.real(np.linalg.eigvals(model.ops.A))))
        if abs(eig - report.max_real_eig) > tol:
            problems.append(f"max_real_eig {report.max_real_eig} != {eig}")
        recomputed = _recompute_residual(model, truth, report.config_echo)
        if recomputed is not None and abs(recomputed - report.residual) > tol:
            problems.append(f"residual {report.residual} != {recomputed}")
    return problems


def _recompute_residual(model, dataset, config_echo):
    # Mirror the fit stages (scale -> derivatives -> project -> assemble)
    # on the persisted training data.
    from qlrom.opinf import assemble_problem, residual
    from qlrom.pod import project
    from qlrom.snapshots import estimate_derivatives

    scaled = model.scaling.transform(dataset) if model.scaling else dataset
    if scaled.derivatives is None:
        scheme = (config_echo or {}).get("derivative_scheme", "auto")
        scaled = estimate_derivatives(scaled, scheme)
    problem = assemble_problem(project(scaled, model.basis))
    return residual(problem, model.ops)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qlrom",
        description="Learn and evaluate quadratic reduced-order models "
                    "from time-domain snapshot data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="run a synthetic full-order model")
    p.add_argument("--config", help="generation config JSON")
    p.add_argument("--which", choices=["burgers", "reactor"])
    p.add_argument("--grid", help="t0:t1:num output instants")
    p.add_argument("--integrator", choices=["rk45-adaptive", "implicit-trbdf"])
    p.add_argument("--stem", help="output file stem (default: model kind)")
    p.add_argument("--override", action="store_true",
                   help="let flags displace conflicting config values")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="learn a reduced model from a dataset")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--dataset", help="snapshot CSV path")
    p.add_argument("--scaling", choices=["none", "min-max", "mean-std"])
    p.add_argument("--seed", type=int)
    p.add_argument("--override", action="store_true")
    p.add_argument("-o", "--output", required=True, help="model directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="integrate a fitted model")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--dataset", required=True,
                   help="dataset providing the initial condition")
    p.add_argument("--grid", help="t0:t1:num (default: the dataset grid)")
    p.add_argument("--method", default="rk45-adaptive",
                   choices=["rk4-fixed", "rk45-adaptive"])
    p.add_argument("--dt-max", type=float,
                   help="substep cap for rk4-fixed (default: grid spacing)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="compare a fitted model against data")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", default="rk45-adaptive",
                   choices=["rk4-fixed", "rk45-adaptive"])
    p.add_argument("--dt-max", type=float,
                   help="substep cap for rk4-fixed (default: grid spacing)")
    p.add_argument("--plot-data", action="store_true",
                   help="also emit tidy (t, z, value, series) plot data")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="print (and optionally verify) a run report")
    p.add_argument("--run", required=True, help="evaluate output directory")
    p.add_argument("--model", help="model directory (for --check)")
    p.add_argument("--check", action="store_true",
                   help="recompute the report from the artifacts")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
