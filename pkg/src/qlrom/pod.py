# pod.py
"""POD bases from snapshot data: SVD, energy-based rank selection, projection.

A basis is built either globally (one SVD of the full snapshot matrix) or
blockwise (an independent SVD per variable block, assembled block-diagonally
so that e.g. conversion and temperature get separate mode counts).  The
intrusive Galerkin projection of known full-order operators is provided as
a reference construction for testing learned models against.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .operators import QuadraticOperators, symmetrize_quadratic
from .snapshots import FLOAT_FORMAT, Block, SnapshotDataset, block_layout

__all__ = [
    "BasisPart",
    "PodBasis",
    "PodProjector",
    "compute_basis",
    "cumulative_energy",
    "projection_error",
    "project",
    "lift",
    "galerkin_rom",
    "save_basis",
    "load_basis",
]


def cumulative_energy(singular_values: np.ndarray) -> np.ndarray:
    """Cumulative fraction of the squared-singular-value sum, per rank.

    Entry r-1 is the energy captured by the leading r modes; the last entry
    is 1 by construction.
    """
    s = np.asarray(singular_values, dtype=float)
    energy = s * s
    total = energy.sum()
    if total == 0.0:
        raise ValueError("all singular values are zero (zero snapshot matrix)")
    return np.cumsum(energy) / total


def _rank_for_energy(singular_values: np.ndarray, theta: float) -> int:
    """Minimal r with cumulative energy >= theta."""
    cum = cumulative_energy(singular_values)
    idx = int(np.searchsorted(cum, theta))
    return min(idx + 1, cum.size)


def _fix_signs(V: np.ndarray) -> np.ndarray:
    # Make the largest-magnitude entry of each column positive; removes the
    # SVD sign ambiguity so downstream operators are bit-reproducible.
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


class BasisPart:
    """Orthonormal basis for one contiguous row range of the state."""

    def __init__(self, name: str, start: int, stop: int,
                 V: np.ndarray, singular_values: np.ndarray):
        V = np.array(V, dtype=float)
        s = np.array(singular_values, dtype=float)
        if V.ndim != 2 or V.shape[0] != stop - start:
            raise ValueError(f"part {name!r}: V shape {V.shape} does not span rows "
                             f"[{start}, {stop})")
        if np.any(s < 0) or np.any(np.diff(s) > 0):
            raise ValueError(f"part {name!r}: singular values must be "
                             "non-negative and non-increasing")
        V.setflags(write=False)
        s.setflags(write=False)
        self.name = name
        self.start = int(start)
        self.stop = int(stop)
        self.V = V
        self.singular_values = s

    @property
    def rank(self) -> int:
        return self.V.shape[1]

    def __repr__(self) -> str:
        return f"BasisPart({self.name!r}, rows [{self.start}, {self.stop}), r={self.rank})"


class PodBasis:
    """Orthonormal projection basis, possibly block-diagonal across variables.

    Attributes
    ----------
    V : (n, r) ndarray
        Assembled basis with orthonormal columns.  For a blockwise basis the
        entries outside each part's row range are exactly zero.
    parts : tuple of BasisPart
        One part for a global basis, one per block for a blockwise basis.
    source_blocks : tuple of Block
        Block layout of the full-order data the basis was computed from.
    mean : (n,) ndarray or None
        Centering offset; reconstruction is mean + V @ reduced when set.
    """

    def __init__(self, parts: Sequence[BasisPart], source_blocks: Sequence[Block],
                 mean: np.ndarray | None = None):
        parts = tuple(parts)
        if not parts:
            raise ValueError("basis needs at least one part")
        pos = 0
        for p in parts:
            if p.start != pos:
                raise ValueError(f"basis parts not contiguous at {p.name!r}")
            pos = p.stop
        n = pos
        r = sum(p.rank for p in parts)
        V = np.zeros((n, r))
        col = 0
        for p in parts:
            V[p.start : p.stop, col : col + p.rank] = p.V
            col += p.rank
        V.setflags(write=False)
        self.parts = parts
        self.V = V
        self.source_blocks = tuple(source_blocks)
        if self.source_blocks and self.source_blocks[-1].stop != n:
            raise ValueError("source blocks do not cover the basis rows")
        if mean is not None:
            mean = np.array(mean, dtype=float).ravel()
            if mean.shape != (n,):
                raise ValueError(f"mean has shape {mean.shape}, expected ({n},)")
            mean.setflags(write=False)
        self.mean = mean

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def r(self) -> int:
        return self.V.shape[1]

    @property
    def blockwise(self) -> bool:
        return len(self.parts) > 1

    @property
    def block_ranks(self) -> dict[str, int]:
        return {p.name: p.rank for p in self.parts}

    def energy_report(self) -> dict[str, np.ndarray]:
        """Cumulative energy fractions per candidate rank, for each part."""
        return {p.name: cumulative_energy(p.singular_values) for p in self.parts}

    def energy_captured(self) -> dict[str, float]:
        """Energy fraction captured by each part at its chosen rank."""
        return {
            p.name: float(cumulative_energy(p.singular_values)[p.rank - 1])
            for p in self.parts
        }

    def reduced_blocks(self) -> tuple[Block, ...]:
        """Block layout of the reduced coordinates (one block per part)."""
        return block_layout([(p.name, p.rank) for p in self.parts])

    def __repr__(self) -> str:
        ranks = ", ".join(f"{p.name}={p.rank}" for p in self.parts)
        return f"PodBasis(n={self.n}, r={self.r}, {ranks})"


def _resolve_rank(name: str, s: np.ndarray, n_rows: int, n_cols: int,
                  rank, energy) -> int:
    max_rank = min(n_rows, n_cols)
    if energy is not None:
        r = _rank_for_energy(s, energy)
    else:
        if isinstance(rank, Mapping):
            if name not in rank:
                raise ValueError(f"no rank given for block {name!r}")
            r = int(rank[name])
        else:
            r = int(rank)
        if r > max_rank:
            raise ValueError(
                f"requested rank {r} for {name!r} exceeds min(n, k+1) = {max_rank}"
            )
    if r < 1:
        raise ValueError(f"rank must be >= 1, got {r}")
    return r


def compute_basis(ds: SnapshotDataset, rank=None, energy: float | None = None,
                  blockwise: bool = False, center: bool = False) -> PodBasis:
    """Compute a POD basis from snapshot data by thin SVD.

    Exactly one of `rank` and `energy` must be given.

    Parameters
    ----------
    ds : SnapshotDataset
    rank : int, mapping, or sequence, optional
        Fixed rank; for a blockwise basis either one integer for every
        block, a {block name: rank} mapping, or a sequence in block order.
    energy : float in (0, 1], optional
        Keep the minimal rank whose cumulative squared-singular-value
        fraction reaches this threshold (applied per block when blockwise).
    blockwise : bool
        Independent SVD per block, assembled block-diagonally.
    center : bool
        Subtract the row mean before the SVD; reconstruction then adds the
        mean back (mean + V @ reduced).

    Returns
    -------
    PodBasis
    """
    if (rank is None) == (energy is None):
        raise ValueError("give exactly one of rank= or energy=")
    if energy is not None and not 0.0 < energy <= 1.0:
        raise ValueError(f"energy threshold must be in (0, 1], got {energy}")
    if rank is not None and isinstance(rank, Sequence) and not isinstance(rank, Mapping):
        names = [b.name for b in ds.blocks]
        if len(rank) != len(names):
            raise ValueError(f"{len(rank)} ranks given for {len(names)} blocks")
        rank = dict(zip(names, (int(r) for r in rank)))

    mean = np.mean(ds.states, axis=1) if center else None
    X = ds.states - mean[:, None] if center else ds.states

    if blockwise:
        groups = [(b.name, b.start, b.stop) for b in ds.blocks]
    else:
        name = "+".join(b.name for b in ds.blocks)
        groups = [(name, 0, ds.n)]

    parts = []
    for name, start, stop in groups:
        data = X[start:stop]
        U, s, _ = np.linalg.svd(data, full_matrices=False)
        r = _resolve_rank(name, s, stop - start, ds.n_times, rank, energy)
        parts.append(BasisPart(name, start, stop, _fix_signs(U[:, :r]), s))
    return PodBasis(parts, ds.blocks, mean=mean)


def projection_error(ds: SnapshotDataset, basis: PodBasis) -> float:
    """Relative Frobenius reconstruction error of the snapshots in the basis."""
    if basis.n != ds.n:
        raise ValueError(f"basis has {basis.n} rows, data has {ds.n}")
    X = ds.states
    if basis.mean is not None:
        centered = X - basis.mean[:, None]
        recon = basis.mean[:, None] + basis.V @ (basis.V.T @ centered)
    else:
        recon = basis.V @ (basis.V.T @ X)
    denom = np.linalg.norm(X)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(X - recon) / denom)


def project(ds: SnapshotDataset, basis: PodBasis) -> SnapshotDataset:
    """Map a full-order dataset to reduced coordinates (states and derivatives)."""
    if basis.n != ds.n:
        raise ValueError(f"basis has {basis.n} rows, data has {ds.n}")
    X = ds.states
    if basis.mean is not None:
        X = X - basis.mean[:, None]
    states = basis.V.T @ X
    deriv = basis.V.T @ ds.derivatives if ds.derivatives is not None else None
    return SnapshotDataset(states, ds.grid, basis.reduced_blocks(), deriv)


def lift(ds_reduced: SnapshotDataset, basis: PodBasis) -> SnapshotDataset:
    """Map a reduced dataset back to full coordinates."""
    if ds_reduced.n != basis.r:
        raise ValueError(f"reduced data has {ds_reduced.n} rows, basis rank is {basis.r}")
    states = basis.V @ ds_reduced.states
    if basis.mean is not None:
        states = states + basis.mean[:, None]
    deriv = None
    if ds_reduced.derivatives is not None:
        deriv = basis.V @ ds_reduced.derivatives
    return SnapshotDataset(states, ds_reduced.grid, basis.source_blocks, deriv)


def galerkin_rom(ops: QuadraticOperators, basis: PodBasis) -> QuadraticOperators:
    """Intrusive Galerkin projection of known full-order operators.

    Returns (V^T A V,  V^T H (V (x) V),  V^T C) with the quadratic term
    re-symmetrized.  Serves as the reference reduced model for comparing
    non-intrusively learned operators against.
    """
    if ops.d != basis.n:
        raise ValueError(f"operators have dimension {ops.d}, basis has {basis.n} rows")
    if basis.mean is not None:
        raise ValueError("Galerkin projection requires an uncentered basis")
    V = basis.V
    n, r = V.shape
    A_hat = V.T @ ops.A @ V
    T = ops.H.reshape(n, n, n)
    H_hat = np.einsum("pa,pqs,qi,sj->aij", V, T, V, V, optimize=True).reshape(r, r * r)
    C_hat = V.T @ ops.C
    return QuadraticOperators(A_hat, symmetrize_quadratic(H_hat), C_hat)


class PodProjector(TransformerMixin, BaseEstimator):
    """Estimator wrapper around `compute_basis`: fit learns the basis,
    transform projects datasets, inverse_transform lifts them back.

    Parameters
    ----------
    rank : int, mapping, or sequence, optional
    energy : float in (0, 1], optional
    blockwise : bool
    center : bool

    Attributes (after fit)
    ----------------------
    basis_ : PodBasis
    """

    def __init__(self, rank=None, energy: float | None = None,
                 blockwise: bool = False, center: bool = False):
        self.rank = rank
        self.energy = energy
        self.blockwise = blockwise
        self.center = center

    def fit(self, dataset: SnapshotDataset, y=None) -> "PodProjector":
        self.basis_ = compute_basis(dataset, rank=self.rank, energy=self.energy,
                                    blockwise=self.blockwise, center=self.center)
        return self

    def _check_fitted(self):
        if not hasattr(self, "basis_"):
            raise NotFittedError("PodProjector is not fitted; call fit() first")

    def transform(self, dataset: SnapshotDataset) -> SnapshotDataset:
        self._check_fitted()
        return project(dataset, self.basis_)

    def inverse_transform(self, dataset: SnapshotDataset) -> SnapshotDataset:
        self._check_fitted()
        return lift(dataset, self.basis_)

    def projection_error(self, dataset: SnapshotDataset) -> float:
        self._check_fitted()
        return projection_error(dataset, self.basis_)


# Persistence -------------------------------------------------------------------

def save_basis(basis: PodBasis, csv_path, scaling: dict | None = None) -> None:
    """Write the basis matrix as CSV plus a JSON sidecar with the spectrum,
    block ranks, and (optionally) the scaling that produced the data."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", encoding="utf-8") as fh:
        for row in basis.V:
            fh.write(",".join(FLOAT_FORMAT % v for v in row) + "\n")
    if basis.blockwise:
        singular_values = {p.name: p.singular_values.tolist() for p in basis.parts}
    else:
        singular_values = basis.parts[0].singular_values.tolist()
    sidecar = {
        "singular_values": singular_values,
        "block_ranks": basis.block_ranks,
        "parts": [
            {"name": p.name, "start": p.start, "stop": p.stop, "rank": p.rank}
            for p in basis.parts
        ],
        "source_blocks": [
            {"name": b.name, "rows": b.size} for b in basis.source_blocks
        ],
        "mean": basis.mean.tolist() if basis.mean is not None else None,
        "scaling": scaling,
    }
    with open(csv_path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_basis(csv_path) -> tuple[PodBasis, dict | None]:
    """Load a basis written by `save_basis`; returns (basis, scaling dict or None)."""
    csv_path = Path(csv_path)
    V = np.loadtxt(csv_path, delimiter=",", ndmin=2)
    with open(csv_path.with_suffix(".json"), "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    sv = sidecar["singular_values"]
    parts = []
    col = 0
    for p in sidecar["parts"]:
        spectrum = np.asarray(sv[p["name"]] if isinstance(sv, dict) else sv, dtype=float)
        local = V[p["start"] : p["stop"], col : col + p["rank"]]
        parts.append(BasisPart(p["name"], p["start"], p["stop"], local, spectrum))
        col += p["rank"]
    source = block_layout([(b["name"], b["rows"]) for b in sidecar["source_blocks"]])
    mean = sidecar.get("mean")
    basis = PodBasis(parts, source, mean=None if mean is None else np.asarray(mean))
    return basis, sidecar.get("scaling")
