# fom.py
"""Synthetic full-order models for generating snapshot datasets.

Two benchmark generators are provided:

* a viscous Burgers' finite-volume semi-discretization, whose right-hand
  side is exactly quadratic and therefore available as an operator triple
  (the ground truth for intrusive-vs-learned comparisons), and
* a simplified two-field reactor surrogate (conversion X and temperature T)
  reproducing start-up phenomenology: upwind advection of both fields,
  axial temperature diffusion, wall cooling, and a smooth ignition source
  that is exothermic and depletes with conversion.

The reactor coefficients are invented surrogate aggregates, not a physical
property model; defaults are tuned so that a cold start ignites
mid-domain, outlet conversion exceeds 0.8, and the run reaches a steady
state within the default horizon.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .operators import QuadraticOperators
from .rom import rhs as ops_rhs
from .snapshots import SnapshotDataset, TimeGrid, block_layout

__all__ = [
    "BurgersConfig",
    "ReactorSurrogateConfig",
    "IntegrationFailure",
    "burgers_rhs_operators",
    "burgers_initial_state",
    "reactor_rhs",
    "reactor_initial_state",
    "generate_dataset",
    "DEFAULT_REACTOR_GRID",
    "DEFAULT_BURGERS_GRID",
]

_INTEGRATORS = ("rk45-adaptive", "implicit-trbdf")
_PROFILES = ("sine", "step", "gauss")


class IntegrationFailure(RuntimeError):
    """Time integration of a full-order model did not reach the final time."""

    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last accepted time {last_time:g})")
        self.last_time = last_time


@dataclass(frozen=True)
class BurgersConfig:
    """Viscous Burgers' benchmark on [0, L] with Dirichlet boundary data."""

    n: int = 100
    length: float = 1.0
    viscosity: float = 0.05
    bc_left: float = 0.0
    bc_right: float = 0.0
    profile: str = "sine"
    amplitude: float = 1.0

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("need at least 3 cells")
        if self.viscosity <= 0:
            raise ValueError("viscosity must be positive")
        if self.profile not in _PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; options: {_PROFILES}")

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def cell_centers(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.h

    def to_dict(self) -> dict:
        return asdict(self)


def burgers_rhs_operators(cfg: BurgersConfig) -> QuadraticOperators:
    """Exact quadratic operators of the semi-discretized Burgers' equation.

    Diffusion contributes the classical three-point stencil to A, the
    conservative convection flux -(x_{i+1}^2 - x_{i-1}^2) / (4h) fills the
    squared-entry columns of H, and the Dirichlet boundary data folds into
    the constant term C.
    """
    n, h, nu = cfg.n, cfg.h, cfg.viscosity
    A = np.zeros((n, n))
    idx = np.arange(n)
    A[idx, idx] = -2.0 * nu / h**2
    A[idx[:-1], idx[:-1] + 1] = nu / h**2
    A[idx[1:], idx[1:] - 1] = nu / h**2

    H = np.zeros((n, n * n))
    for i in range(n):
        if i + 1 < n:
            H[i, (i + 1) * n + (i + 1)] = -1.0 / (4.0 * h)
        if i - 1 >= 0:
            H[i, (i - 1) * n + (i - 1)] = 1.0 / (4.0 * h)

    C = np.zeros(n)
    gl, gr = cfg.bc_left, cfg.bc_right
    C[0] = nu * gl / h**2 + gl**2 / (4.0 * h)
    C[-1] = nu * gr / h**2 - gr**2 / (4.0 * h)
    return QuadraticOperators(A, H, C)


def burgers_initial_state(cfg: BurgersConfig) -> np.ndarray:
    z = cfg.cell_centers
    L, a = cfg.length, cfg.amplitude
    if cfg.profile == "sine":
        return a * np.sin(np.pi * z / L)
    if cfg.profile == "step":
        return np.where(z < 0.5 * L, a, 0.0)
    return a * np.exp(-(((z - 0.5 * L) / (0.1 * L)) ** 2))


@dataclass(frozen=True)
class ReactorSurrogateConfig:
    """Simplified start-up surrogate of a cooled tubular reactor.

    State: conversion block X (dimensionless) and temperature block T
    (kelvin), n_cells finite volumes each.  The ignition source
    s = (1 - X) * logistic(steepness * (T - t_ref)) feeds the conversion
    balance with weight source_to_conversion and the (exothermic)
    temperature balance with weight source_to_temperature.  Temperature
    advects much slower than conversion (effective heat-capacity ratio),
    diffuses axially, and relaxes to the coolant at cooling_rate.
    All coefficients are surrogate aggregates, not physical properties.
    """

    n_cells: int = 200
    length: float = 1.0
    velocity: float = 1.0
    thermal_velocity: float = 0.10
    diffusion: float = 2e-4
    cooling_rate: float = 0.18
    t_cool: float = 550.0
    t_ref: float = 610.0
    steepness: float = 0.02
    source_to_conversion: float = 4.0
    source_to_temperature: float = 80.0

    def __post_init__(self):
        if self.n_cells < 3:
            raise ValueError("need at least 3 cells per field")
        if self.velocity <= 0 or self.thermal_velocity <= 0:
            raise ValueError("advection velocities must be positive")
        if self.diffusion < 0:
            raise ValueError("diffusion must be >= 0")
        if self.cooling_rate <= 0:
            raise ValueError("cooling_rate must be positive")
        for name in ("steepness", "source_to_conversion", "source_to_temperature"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def h(self) -> float:
        return self.length / self.n_cells

    @property
    def n_states(self) -> int:
        return 2 * self.n_cells

    def to_dict(self) -> dict:
        return asdict(self)


def _logistic(z: np.ndarray) -> np.ndarray:
    # Clipped for overflow safety far outside the active window.
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def reactor_rhs(cfg: ReactorSurrogateConfig, state: np.ndarray) -> np.ndarray:
    """Finite-volume right-hand side for the packed state [X-block; T-block].

    First-order upwind advection for both fields with inflow X = 0 and
    T = t_cool, central diffusion for T only (zero-gradient outflow),
    cooling sink, and the ignition source in both balances.
    """
    state = np.asarray(state, dtype=float)
    n = cfg.n_cells
    if state.shape != (2 * n,):
        raise ValueError(f"state has shape {state.shape}, expected ({2 * n},)")
    if not np.all(np.isfinite(state)):
        raise ValueError("state has non-finite entries")
    X, T = state[:n], state[n:]
    h = cfg.h

    upwind_x = np.empty(n)
    upwind_x[0] = X[0] - 0.0
    upwind_x[1:] = X[1:] - X[:-1]
    upwind_t = np.empty(n)
    upwind_t[0] = T[0] - cfg.t_cool
    upwind_t[1:] = T[1:] - T[:-1]

    diff_t = np.empty(n)
    diff_t[0] = cfg.t_cool - 2.0 * T[0] + T[1]
    diff_t[1:-1] = T[:-2] - 2.0 * T[1:-1] + T[2:]
    diff_t[-1] = T[-2] - T[-1]

    source = (1.0 - X) * _logistic(cfg.steepness * (T - cfg.t_ref))

    dX = -cfg.velocity * upwind_x / h + cfg.source_to_conversion * source
    dT = (
        -cfg.thermal_velocity * upwind_t / h
        + cfg.diffusion * diff_t / h**2
        + cfg.cooling_rate * (cfg.t_cool - T)
        + cfg.source_to_temperature * source
    )
    return np.concatenate([dX, dT])


def _reactor_jacobian(cfg: ReactorSurrogateConfig, state: np.ndarray) -> np.ndarray:
    # Dense Jacobian; speeds up the implicit integrator considerably.
    n = cfg.n_cells
    X, T = state[:n], state[n:]
    h = cfg.h
    Jac = np.zeros((2 * n, 2 * n))
    i = np.arange(n)

    sig = _logistic(cfg.steepness * (T - cfg.t_ref))
    dsig = cfg.steepness * sig * (1.0 - sig)
    ds_dX = -sig
    ds_dT = (1.0 - X) * dsig

    # conversion rows
    Jac[i, i] = -cfg.velocity / h + cfg.source_to_conversion * ds_dX
    Jac[i[1:], i[1:] - 1] += cfg.velocity / h
    Jac[i, n + i] = cfg.source_to_conversion * ds_dT

    # temperature rows
    lam = cfg.diffusion / h**2
    Jac[n + i, n + i] = (
        -cfg.thermal_velocity / h - 2.0 * lam - cfg.cooling_rate
        + cfg.source_to_temperature * ds_dT
    )
    Jac[n + i[-1], n + i[-1]] += lam  # zero-gradient outflow ghost
    Jac[n + i[1:], n + i[1:] - 1] += cfg.thermal_velocity / h + lam
    Jac[n + i[:-1], n + i[:-1] + 1] += lam
    Jac[n + i, i] = cfg.source_to_temperature * ds_dX
    return Jac


def reactor_initial_state(cfg: ReactorSurrogateConfig) -> np.ndarray:
    """Cold quiescent start-up: zero conversion, coolant temperature."""
    return np.concatenate([np.zeros(cfg.n_cells), np.full(cfg.n_cells, cfg.t_cool)])


DEFAULT_BURGERS_GRID = (0.0, 2.0, 201)
DEFAULT_REACTOR_GRID = (0.0, 60.0, 301)


def generate_dataset(which: str, cfg, grid: TimeGrid,
                     integrator: str = "rk45-adaptive",
                     x0: np.ndarray | None = None,
                     rtol: float = 1e-6, atol: float = 1e-8) -> SnapshotDataset:
    """Integrate a full-order model and package states plus exact derivatives.

    Parameters
    ----------
    which : {"burgers", "reactor"}
    cfg : BurgersConfig or ReactorSurrogateConfig
    grid : TimeGrid
        Output sampling instants (the integrator steps adaptively and
        evaluates the dense solution here).
    integrator : {"rk45-adaptive", "implicit-trbdf"}
        The implicit option is an adaptive L-stable solver for the stiff
        reactor problem (realized with the Radau IIA method).
    x0 : optional initial state; defaults to the model's canonical start.

    Returns
    -------
    SnapshotDataset
        With the derivatives field holding exact right-hand-side
        evaluations at every stored instant.
    """
    if integrator not in _INTEGRATORS:
        raise ValueError(f"unknown integrator {integrator!r}; options: {_INTEGRATORS}")
    if which == "burgers":
        if not isinstance(cfg, BurgersConfig):
            raise TypeError("burgers generation needs a BurgersConfig")
        ops = burgers_rhs_operators(cfg)
        fun = lambda t, x: ops_rhs(ops, x)
        jac = lambda t, x: _dense_burgers_jacobian(ops, x)
        x0 = burgers_initial_state(cfg) if x0 is None else np.asarray(x0, dtype=float)
        blocks = block_layout([("u", cfg.n)])
    elif which == "reactor":
        if not isinstance(cfg, ReactorSurrogateConfig):
            raise TypeError("reactor generation needs a ReactorSurrogateConfig")
        fun = lambda t, x: reactor_rhs(cfg, x)
        jac = lambda t, x: _reactor_jacobian(cfg, x)
        x0 = reactor_initial_state(cfg) if x0 is None else np.asarray(x0, dtype=float)
        blocks = block_layout([("X", cfg.n_cells), ("T", cfg.n_cells)])
    else:
        raise ValueError(f"unknown model {which!r}; options: burgers, reactor")

    t = grid.instants
    method = "RK45" if integrator == "rk45-adaptive" else "Radau"
    kwargs = {"rtol": rtol, "atol": atol}
    if method == "Radau":
        kwargs["jac"] = jac
    sol = solve_ivp(fun, (t[0], t[-1]), x0, method=method, t_eval=t, **kwargs)
    if not sol.success or sol.y.shape[1] != t.size:
        last = sol.t[-1] if sol.t.size else t[0]
        raise IntegrationFailure(f"{which} integration failed: {sol.message}", last)
    states = sol.y
    derivatives = np.column_stack([fun(ti, states[:, i]) for i, ti in enumerate(t)])
    return SnapshotDataset(states, grid, blocks, derivatives)


def _dense_burgers_jacobian(ops: QuadraticOperators, x: np.ndarray) -> np.ndarray:
    T = ops.H.reshape(ops.d, ops.d, ops.d)
    return ops.A + 2.0 * np.einsum("ajk,k->aj", T, x)
