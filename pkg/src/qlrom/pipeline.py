# pipeline.py
"""End-to-end orchestration: dataset -> scaling -> basis -> regression -> ROM.

`fit_rom` runs the learning pipeline on a snapshot dataset and returns a
ready-to-simulate RomModel; `evaluate_rom` replays a model against a
reference dataset and packages the error and timing numbers into a run
report whose every entry can be recomputed from the persisted artifacts.
`RomEstimator` exposes the same pipeline with a scikit-learn estimator
surface (fit / predict / get_params).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import fom
from .opinf import SolverConfig, assemble_problem, solve
from .pod import compute_basis, project
from .rom import RomModel, Trajectory, trajectory_error
from .snapshots import BlockScaler, SnapshotDataset, TimeGrid, estimate_derivatives

__all__ = [
    "PipelineConfig",
    "RunReport",
    "RomEstimator",
    "fit_rom",
    "evaluate_rom",
    "generate_from_spec",
    "dataset_meta_path",
]

_SOLVER_KEYS = set(SolverConfig().to_dict())


def _grid_from_spec(spec: dict) -> TimeGrid:
    return TimeGrid.linspace(float(spec["t0"]), float(spec["t1"]), int(spec["num"]))


@dataclass(frozen=True)
class PipelineConfig:
    """Declarative description of a full pipeline run.

    dataset: either {"path": <csv>} or {"generate": {"which", "config",
    "grid": {"t0","t1","num"}, "integrator", "rtol", "atol"}}.
    basis: {"energy": theta} or {"ranks": ...}, plus optional "blockwise"
    (default True) and "center" (default False).
    solver: SolverConfig fields.  All randomness derives from `seed`.
    """

    dataset: dict
    scaling: str = "min-max"
    basis: dict = field(default_factory=lambda: {"energy": 0.999})
    solver: dict = field(default_factory=dict)
    derivative_scheme: str = "auto"
    evaluation: dict = field(default_factory=dict)
    output_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if ("path" in self.dataset) == ("generate" in self.dataset):
            raise ValueError("dataset must have exactly one of 'path' or 'generate'")
        if ("energy" in self.basis) == ("ranks" in self.basis):
            raise ValueError("basis must have exactly one of 'energy' or 'ranks'")
        if "energy" in self.basis and not 0.0 < float(self.basis["energy"]) <= 1.0:
            raise ValueError("basis energy threshold must be in (0, 1]")
        unknown = set(self.solver) - _SOLVER_KEYS
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        self.solver_config()  # validate eagerly

    def solver_config(self) -> SolverConfig:
        options = dict(self.solver)
        options.setdefault("seed", self.seed)
        return SolverConfig(**options)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "scaling": self.scaling,
            "basis": self.basis,
            "solver": self.solver,
            "derivative_scheme": self.derivative_scheme,
            "evaluation": self.evaluation,
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return cls(
            dataset=d["dataset"],
            scaling=d.get("scaling", "min-max"),
            basis=d.get("basis", {"energy": 0.999}),
            solver=d.get("solver", {}),
            derivative_scheme=d.get("derivative_scheme", "auto"),
            evaluation=d.get("evaluation", {}),
            output_dir=d.get("output_dir"),
            seed=d.get("seed", 0),
        )

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def dataset_meta_path(dataset_path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.stem + ".meta.json")


def generate_from_spec(spec: dict) -> tuple[SnapshotDataset, dict]:
    """Run a FOM generation described by a config dict; returns the dataset
    and a metadata echo (including the generation wall time)."""
    which = spec["which"]
    if which == "burgers":
        cfg = fom.BurgersConfig(**spec.get("config", {}))
        default_grid = fom.DEFAULT_BURGERS_GRID
        default_integrator = "rk45-adaptive"
    elif which == "reactor":
        cfg = fom.ReactorSurrogateConfig(**spec.get("config", {}))
        default_grid = fom.DEFAULT_REACTOR_GRID
        default_integrator = "implicit-trbdf"
    else:
        raise ValueError(f"unknown model {which!r}; options: burgers, reactor")
    grid_spec = spec.get("grid")
    if grid_spec is None:
        t0, t1, num = default_grid
        grid_spec = {"t0": t0, "t1": t1, "num": num}
    grid = _grid_from_spec(grid_spec)
    integrator = spec.get("integrator", default_integrator)
    rtol = float(spec.get("rtol", 1e-6))
    atol = float(spec.get("atol", 1e-8))
    start = time.perf_counter()
    ds = fom.generate_dataset(which, cfg, grid, integrator, rtol=rtol, atol=atol)
    wall = time.perf_counter() - start
    meta = {
        "which": which,
        "config": cfg.to_dict(),
        "grid": grid_spec,
        "integrator": integrator,
        "rtol": rtol,
        "atol": atol,
        "fom_time_s": wall,
    }
    return ds, meta


def fit_rom(dataset: SnapshotDataset, config: PipelineConfig) -> tuple[RomModel, dict]:
    """Fit a reduced model: scale, differentiate if needed, build the basis,
    project, assemble the regression, and solve.

    Returns the model plus a fit-report fragment (ranks, captured energy,
    residual, linear-spectrum summary, wall time).
    """
    start = time.perf_counter()
    scaler = BlockScaler(config.scaling).fit(dataset)
    scaled = scaler.transform(dataset)
    if scaled.derivatives is None:
        scaled = estimate_derivatives(scaled, config.derivative_scheme)
    basis_opts = dict(config.basis)
    basis = compute_basis(
        scaled,
        rank=basis_opts.get("ranks"),
        energy=basis_opts.get("energy"),
        blockwise=bool(basis_opts.get("blockwise", True)),
        center=bool(basis_opts.get("center", False)),
    )
    reduced = project(scaled, basis)
    problem = assemble_problem(reduced)
    solution = solve(problem, config.solver_config())
    max_real_eig = float(np.max(np.real(np.linalg.eigvals(solution.operators.A))))
    fit_time = time.perf_counter() - start
    metadata = {
        "backend": solution.backend,
        "solver_config": config.solver_config().to_dict(),
        "pipeline_config": config.to_dict(),
        "residual": solution.residual,
        "details": _json_safe(solution.details),
    }
    model = RomModel(solution.operators, basis, scaler, metadata)
    fragment = {
        "ranks": basis.block_ranks,
        "energy_captured": basis.energy_captured(),
        "residual": solution.residual,
        "max_real_eig": max_real_eig,
        "backend": solution.backend,
        "fit_time_s": fit_time,
    }
    return model, fragment


def _json_safe(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


@dataclass
class RunReport:
    """Everything a pipeline run reports; recomputable from its artifacts
    (timings aside)."""

    ranks: dict
    energy_captured: dict
    residual: float
    errors: dict
    max_real_eig: float
    timings: dict
    diverged: bool
    config_echo: dict

    def to_dict(self) -> dict:
        return {
            "ranks": self.ranks,
            "energy_captured": self.energy_captured,
            "residual": self.residual,
            "errors": self.errors,
            "max_real_eig": self.max_real_eig,
            "timings": self.timings,
            "diverged": self.diverged,
            "config_echo": self.config_echo,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_json_safe(self.to_dict()), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RunReport":
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(
            ranks=d["ranks"], energy_captured=d["energy_captured"],
            residual=d["residual"], errors=d["errors"],
            max_real_eig=d["max_real_eig"], timings=d["timings"],
            diverged=d["diverged"], config_echo=d["config_echo"],
        )


def evaluate_rom(model: RomModel, dataset: SnapshotDataset,
                 grid: TimeGrid | None = None, method: str = "rk45-adaptive",
                 fom_time: float | None = None, fit_fragment: dict | None = None,
                 **integrator_options) -> tuple[RunReport, Trajectory, Trajectory]:
    """Simulate a model from the dataset's initial condition and compare.

    Returns the run report plus the (reduced, full) trajectories.  The
    trajectory error is computed when the simulation grid matches the
    dataset grid (the default).
    """
    grid = grid or dataset.grid
    start = time.perf_counter()
    reduced, full = model.simulate(dataset.initial_state, grid, method=method,
                                   **integrator_options)
    rom_time = time.perf_counter() - start

    errors: dict = {}
    if grid == dataset.grid and not full.diverged:
        truth = Trajectory(dataset.grid, dataset.states, blocks=dataset.blocks)
        err = trajectory_error(truth, full)
        errors = {"overall": err.overall, "per_block": err.per_block,
                  "per_time_csv_path": "error_per_time.csv"}

    fragment = dict(fit_fragment or {})
    meta = model.metadata or {}
    timings = {
        "fom_time_s": fom_time,
        "fit_time_s": fragment.get("fit_time_s"),
        "rom_time_s": rom_time,
        "rom_to_fom_ratio": (rom_time / fom_time) if fom_time else None,
    }
    report = RunReport(
        ranks=fragment.get("ranks", model.basis.block_ranks),
        energy_captured=fragment.get("energy_captured", model.basis.energy_captured()),
        residual=fragment.get("residual", meta.get("residual", np.nan)),
        errors=errors,
        max_real_eig=fragment.get(
            "max_real_eig",
            float(np.max(np.real(np.linalg.eigvals(model.ops.A)))),
        ),
        timings=timings,
        diverged=full.diverged,
        config_echo=meta.get("pipeline_config", {}),
    )
    return report, reduced, full


class RomEstimator(BaseEstimator):
    """Scikit-learn-style front end for the learning pipeline.

    fit() consumes a SnapshotDataset (derivatives estimated if absent) and
    learns a RomModel; predict() simulates from a full-order initial state
    and returns the full-coordinate trajectory values.

    Parameters mirror the pipeline config: scaling mode, basis rule
    (energy threshold or fixed ranks, blockwise, centering), and the
    regression backend with its options.
    """

    def __init__(self, scaling: str = "min-max", energy: float | None = 0.999,
                 ranks=None, blockwise: bool = True, center: bool = False,
                 backend: str = "tikhonov", alpha: float | None = None,
                 alpha_a: float = 0.0, alpha_h: float = 1e-4, alpha_c: float = 0.0,
                 tsvd_rank=None, max_epochs: int = 2000, patience: int = 500,
                 lr_min: float = 1e-5, lr_max: float = 0.5,
                 derivative_scheme: str = "auto", seed: int = 0):
        self.scaling = scaling
        self.energy = energy
        self.ranks = ranks
        self.blockwise = blockwise
        self.center = center
        self.backend = backend
        self.alpha = alpha
        self.alpha_a = alpha_a
        self.alpha_h = alpha_h
        self.alpha_c = alpha_c
        self.tsvd_rank = tsvd_rank
        self.max_epochs = max_epochs
        self.patience = patience
        self.lr_min = lr_min
        self.lr_max = lr_max
        self.derivative_scheme = derivative_scheme
        self.seed = seed

    def _config(self) -> PipelineConfig:
        basis = {"ranks": self.ranks} if self.ranks is not None else {"energy": self.energy}
        basis["blockwise"] = self.blockwise
        basis["center"] = self.center
        solver = {
            "backend": self.backend, "alpha": self.alpha,
            "alpha_a": self.alpha_a, "alpha_h": self.alpha_h,
            "alpha_c": self.alpha_c, "tsvd_rank": self.tsvd_rank,
            "max_epochs": self.max_epochs, "patience": self.patience,
            "lr_min": self.lr_min, "lr_max": self.lr_max,
        }
        return PipelineConfig(
            dataset={"path": "<in-memory>"},
            scaling=self.scaling, basis=basis, solver=solver,
            derivative_scheme=self.derivative_scheme, seed=self.seed,
        )

    def fit(self, dataset: SnapshotDataset, y=None) -> "RomEstimator":
        self.model_, self.fit_report_ = fit_rom(dataset, self._config())
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("RomEstimator is not fitted; call fit() first")

    def predict(self, x0_full: np.ndarray, grid: TimeGrid,
                method: str = "rk45-adaptive") -> np.ndarray:
        self._check_fitted()
        _, full = self.model_.simulate(x0_full, grid, method=method)
        return full.values

    def simulate(self, x0_full: np.ndarray, grid: TimeGrid,
                 method: str = "rk45-adaptive") -> tuple[Trajectory, Trajectory]:
        self._check_fitted()
        return self.model_.simulate(x0_full, grid, method=method)
