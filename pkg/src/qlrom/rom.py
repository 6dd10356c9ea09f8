# rom.py
"""Forward simulation of quadratic models and lifting back to physical space.

Learned reduced models are integrated with explicit Runge-Kutta methods;
reduced trajectories are lifted through the POD basis and un-scaled to give
full-coordinate predictions comparable against the original data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

from .operators import QuadraticOperators
from .pod import PodBasis, load_basis, save_basis
from .snapshots import Block, BlockScaler, SnapshotDataset, TimeGrid, block_layout

__all__ = [
    "DIVERGENCE_LIMIT",
    "Trajectory",
    "TrajectoryError",
    "RomModel",
    "rhs",
    "integrate",
    "simulate_rom",
    "trajectory_error",
]

# States beyond this magnitude count as numerical blow-up of the model.
DIVERGENCE_LIMIT = 1e12

_METHODS = ("rk4-fixed", "rk45-adaptive")


@dataclass(frozen=True)
class Trajectory:
    """Simulated states on a time grid (one column per instant)."""

    grid: TimeGrid
    values: np.ndarray
    blocks: tuple[Block, ...] | None = None
    diverged: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.grid):
            raise ValueError(
                f"values shape {values.shape} inconsistent with grid length {len(self.grid)}"
            )
        if not self.diverged and not np.all(np.isfinite(values)):
            raise ValueError("non-finite trajectory values without a divergence flag")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.blocks is not None:
            object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def d(self) -> int:
        return self.values.shape[0]

    def to_dataset(self) -> SnapshotDataset:
        blocks = self.blocks or block_layout([("x", self.d)])
        return SnapshotDataset(self.values, self.grid, blocks)


def rhs(ops: QuadraticOperators, x: np.ndarray) -> np.ndarray:
    """Evaluate A x + H (x (x) x) + C without materializing the d^2 vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (ops.d,):
        raise ValueError(f"state has shape {x.shape}, operators expect ({ops.d},)")
    T = ops.H.reshape(ops.d, ops.d, ops.d)
    return ops.A @ x + (T @ x) @ x + ops.C


def rk4_step(ops: QuadraticOperators, x: np.ndarray, h: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step of size h."""
    k1 = rhs(ops, x)
    k2 = rhs(ops, x + 0.5 * h * k1)
    k3 = rhs(ops, x + 0.5 * h * k2)
    k4 = rhs(ops, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_loop_numpy(A, T, C, t, dt_max, x0, limit):
    values = np.full((x0.size, t.size), np.nan)
    values[:, 0] = x0

    def f(x):
        return A @ x + (T @ x) @ x + C

    x = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(t.size - 1):
            dt = t[i + 1] - t[i]
            substeps = max(1, int(np.ceil(dt / dt_max - 1e-12)))
            h = dt / substeps
            for _ in range(substeps):
                k1 = f(x)
                k2 = f(x + 0.5 * h * k1)
                k3 = f(x + 0.5 * h * k2)
                k4 = f(x + h * k3)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > limit:
                return values, True
            values[:, i + 1] = x
    return values, False


if njit is not None:
    @njit(cache=True)
    def _rk4_loop_jit(A, T, C, t, dt_max, x0, limit):  # pragma: no cover
        d = x0.shape[0]
        n = t.shape[0]
        values = np.full((d, n), np.nan)
        x = x0.copy()
        k1 = np.empty(d)
        k2 = np.empty(d)
        k3 = np.empty(d)
        k4 = np.empty(d)
        stage = np.empty(d)
        values[:, 0] = x
        for i in range(n - 1):
            dt = t[i + 1] - t[i]
            substeps = max(1, int(np.ceil(dt / dt_max - 1e-12)))
            h = dt / substeps
            for _ in range(substeps):
                for st in range(4):
                    if st == 0:
                        for a in range(d):
                            stage[a] = x[a]
                    elif st == 1:
                        for a in range(d):
                            stage[a] = x[a] + 0.5 * h * k1[a]
                    elif st == 2:
                        for a in range(d):
                            stage[a] = x[a] + 0.5 * h * k2[a]
                    else:
                        for a in range(d):
                            stage[a] = x[a] + h * k3[a]
                    for a in range(d):
                        acc = C[a]
                        for j in range(d):
                            acc += A[a, j] * stage[j]
                        for j in range(d):
                            zj = stage[j]
                            for q in range(d):
                                acc += T[a, j, q] * zj * stage[q]
                        if st == 0:
                            k1[a] = acc
                        elif st == 1:
                            k2[a] = acc
                        elif st == 2:
                            k3[a] = acc
                        else:
                            k4[a] = acc
                for a in range(d):
                    x[a] = x[a] + (h / 6.0) * (k1[a] + 2.0 * k2[a]
                                               + 2.0 * k3[a] + k4[a])
            bad = False
            for a in range(d):
                if not np.isfinite(x[a]) or abs(x[a]) > limit:
                    bad = True
            if bad:
                return values, True
            values[:, i + 1] = x
        return values, False


def _integrate_rk4(ops, x0, grid, dt_max):
    t = grid.instants
    if dt_max is None:
        dt_max = float(grid.spacings.min())
    if dt_max <= 0:
        raise ValueError("dt_max must be positive")
    A = np.ascontiguousarray(ops.A)
    T = np.ascontiguousarray(ops.H).reshape(ops.d, ops.d, ops.d)
    C = np.ascontiguousarray(ops.C)
    loop = _rk4_loop_jit if njit is not None else _rk4_loop_numpy
    return loop(A, T, C, np.asarray(t), float(dt_max),
                np.ascontiguousarray(x0), DIVERGENCE_LIMIT)


def _integrate_rk45(ops, x0, grid, rtol, atol):
    def fun(t, x):
        return rhs(ops, x)

    def blown_up(t, x):
        return DIVERGENCE_LIMIT - np.max(np.abs(x))

    blown_up.terminal = True
    t = grid.instants
    sol = solve_ivp(fun, (t[0], t[-1]), x0, method="RK45", t_eval=t,
                    rtol=rtol, atol=atol, events=blown_up)
    values = np.full((x0.size, t.size), np.nan)
    m = sol.y.shape[1]
    values[:, :m] = sol.y
    diverged = bool(sol.status == 1) or not sol.success or m < t.size
    return values, diverged


def integrate(ops: QuadraticOperators, x0: np.ndarray, grid: TimeGrid,
              method: str = "rk4-fixed", dt_max: float | None = None,
              rtol: float = 1e-8, atol: float = 1e-10) -> Trajectory:
    """Integrate dx/dt = A x + H (x (x) x) + C over a time grid.

    Parameters
    ----------
    ops : QuadraticOperators
    x0 : (d,) ndarray
        Initial state at the first grid instant.
    grid : TimeGrid
        Output instants.  ``rk4-fixed`` steps exactly on the grid, inserting
        equal substeps so no step exceeds `dt_max` (default: the smallest
        grid spacing).  ``rk45-adaptive`` uses embedded error control and
        evaluates the solution at the grid instants.
    method : {"rk4-fixed", "rk45-adaptive"}
    rtol, atol : float
        Adaptive tolerances (rk45-adaptive only).

    Returns
    -------
    Trajectory
        Blow-up beyond |x| > 1e12 stops the integration; the trajectory is
        flagged diverged and unreached instants are NaN.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (ops.d,):
        raise ValueError(f"x0 has shape {x0.shape}, operators expect ({ops.d},)")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 has non-finite entries")
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}; options: {_METHODS}")
    if method == "rk4-fixed":
        values, diverged = _integrate_rk4(ops, x0, grid, dt_max)
    else:
        values, diverged = _integrate_rk45(ops, x0, grid, rtol, atol)
    return Trajectory(grid, values, diverged=diverged)


@dataclass
class RomModel:
    """A learned reduced model with everything needed to predict in
    physical coordinates: reduced operators, POD basis, and the scaling
    applied to the training data."""

    ops: QuadraticOperators
    basis: PodBasis
    scaling: BlockScaler | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ops.d != self.basis.r:
            raise ValueError(
                f"operators have dimension {self.ops.d} but the basis rank is {self.basis.r}"
            )
        if self.scaling is not None and self.scaling.n != self.basis.n:
            raise ValueError(
                f"scaler covers {self.scaling.n} rows, basis has {self.basis.n}"
            )

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def r(self) -> int:
        return self.basis.r

    def reduce_state(self, x_full: np.ndarray) -> np.ndarray:
        """Scale and project a full-coordinate state."""
        x = np.asarray(x_full, dtype=float).ravel()
        if x.shape != (self.n,):
            raise ValueError(f"state has shape {x.shape}, model expects ({self.n},)")
        if self.scaling is not None:
            x = self.scaling.scale_states(x)
        if self.basis.mean is not None:
            x = x - self.basis.mean
        return self.basis.V.T @ x

    def lift_values(self, reduced_values: np.ndarray) -> np.ndarray:
        """Lift reduced trajectory columns and undo the scaling."""
        full = self.basis.V @ reduced_values
        if self.basis.mean is not None:
            full = full + self.basis.mean[:, None]
        if self.scaling is not None:
            full = self.scaling.unscale_states(full)
        return full

    def simulate(self, x0_full: np.ndarray, grid: TimeGrid,
                 method: str = "rk4-fixed", **kwargs) -> tuple[Trajectory, Trajectory]:
        return simulate_rom(self, x0_full, grid, method=method, **kwargs)

    predict = simulate

    def save(self, directory) -> None:
        from .opinf import save_operators  # deferred: opinf imports this module

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        scaling = self.scaling.to_dict() if self.scaling is not None else None
        save_basis(self.basis, directory / "basis.csv", scaling=scaling)
        save_operators(self.ops, directory / "operators", metadata=self.metadata)

    @classmethod
    def load(cls, directory) -> "RomModel":
        from .opinf import load_operators

        directory = Path(directory)
        basis, scaling = load_basis(directory / "basis.csv")
        ops, metadata = load_operators(directory / "operators")
        scaler = BlockScaler.from_dict(scaling) if scaling is not None else None
        return cls(ops, basis, scaler, metadata)


def simulate_rom(model: RomModel, x0_full: np.ndarray, grid: TimeGrid,
                 method: str = "rk4-fixed", **kwargs) -> tuple[Trajectory, Trajectory]:
    """Simulate a reduced model from a full-coordinate initial condition.

    The initial state is scaled and projected, the reduced model is
    integrated on the grid, and the result is lifted and un-scaled.

    Returns
    -------
    (reduced, full) : pair of Trajectory
    """
    x0_hat = model.reduce_state(x0_full)
    reduced = integrate(model.ops, x0_hat, grid, method=method, **kwargs)
    reduced = Trajectory(reduced.grid, reduced.values,
                         blocks=model.basis.reduced_blocks(), diverged=reduced.diverged)
    full_values = model.lift_values(reduced.values)
    full = Trajectory(grid, full_values, blocks=model.basis.source_blocks,
                      diverged=reduced.diverged)
    return reduced, full


@dataclass(frozen=True)
class TrajectoryError:
    """Relative Frobenius deviation between two trajectories."""

    overall: float
    per_block: dict[str, float]
    per_time: np.ndarray

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "per_block": dict(self.per_block),
            "per_time": self.per_time.tolist(),
        }


def trajectory_error(truth: Trajectory, approx: Trajectory) -> TrajectoryError:
    """Compare trajectories on identical grids.

    Returns the overall relative Frobenius error, the same measure per
    block (using the truth's block layout), and the 2-norm of the error
    at each time instant.
    """
    if truth.grid != approx.grid:
        raise ValueError("trajectories are on different time grids")
    if truth.values.shape != approx.values.shape:
        raise ValueError(
            f"shape mismatch: {truth.values.shape} vs {approx.values.shape}"
        )
    diff = truth.values - approx.values
    denom = np.linalg.norm(truth.values)
    overall = float(np.linalg.norm(diff) / denom) if denom > 0 else (
        0.0 if np.linalg.norm(diff) == 0 else np.inf
    )
    per_block = {}
    for b in truth.blocks or ():
        t_norm = np.linalg.norm(truth.values[b.start : b.stop])
        d_norm = np.linalg.norm(diff[b.start : b.stop])
        per_block[b.name] = float(d_norm / t_norm) if t_norm > 0 else (
            0.0 if d_norm == 0 else np.inf
        )
    per_time = np.linalg.norm(diff, axis=0)
    return TrajectoryError(overall, per_block, per_time)
