# snapshots.py
"""Snapshot trajectory data: ingestion, blockwise scaling, time differentiation.

The central object is the snapshot matrix: state vectors sampled at the
instants of a time grid, one column per instant.  Rows are partitioned into
named contiguous blocks, one per physical variable (e.g. a conversion block
and a temperature block), so that scaling and basis computation can treat
mixed-magnitude variables independently.

All types are immutable after construction and every operation returns new
values; datasets can be shared freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

__all__ = [
    "Block",
    "TimeGrid",
    "SnapshotDataset",
    "BlockScaler",
    "SnapshotFormatError",
    "LayoutError",
    "block_layout",
    "estimate_derivatives",
    "load_dataset",
    "save_dataset",
    "load_layout",
    "save_layout",
]

# Float-to-text precision guaranteeing exact float64 round trips.
FLOAT_FORMAT = "%.17g"

_SCALING_MODES = ("none", "min-max", "mean-std")
_DERIVATIVE_SCHEMES = ("auto", "central-2", "forward-1", "backward-1")


class SnapshotFormatError(ValueError):
    """Malformed snapshot CSV; carries the 1-based row/column position."""

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        if row is not None:
            message = f"{message} (row {row}" + (f", col {col})" if col is not None else ")")
        super().__init__(message)
        self.row = row
        self.col = col


class LayoutError(ValueError):
    """Block layout does not describe the data."""


class Block(NamedTuple):
    """A named contiguous row range [start, stop) of the state vector."""

    name: str
    start: int
    stop: int

    @property
    def size(self) -> int:
        return self.stop - self.start


def block_layout(sizes: Sequence[tuple[str, int]]) -> tuple[Block, ...]:
    """Build a contiguous block partition from (name, n_rows) pairs."""
    blocks = []
    start = 0
    for name, size in sizes:
        size = int(size)
        if size <= 0:
            raise LayoutError(f"block {name!r} has non-positive size {size}")
        blocks.append(Block(str(name), start, start + size))
        start += size
    if not blocks:
        raise LayoutError("layout has no blocks")
    names = [b.name for b in blocks]
    if len(set(names)) != len(names):
        raise LayoutError(f"duplicate block names in layout: {names}")
    return tuple(blocks)


def _validate_blocks(blocks: Sequence[Block], n: int) -> tuple[Block, ...]:
    blocks = tuple(Block(str(b[0]), int(b[1]), int(b[2])) for b in blocks)
    if not blocks:
        raise LayoutError("layout has no blocks")
    pos = 0
    for b in blocks:
        if b.start != pos:
            raise LayoutError(
                f"block {b.name!r} starts at row {b.start}, expected {pos} "
                "(blocks must be contiguous and ordered)"
            )
        if b.stop <= b.start:
            raise LayoutError(f"block {b.name!r} is empty")
        pos = b.stop
    if pos != n:
        raise LayoutError(f"blocks cover {pos} rows but the data has {n}")
    names = [b.name for b in blocks]
    if len(set(names)) != len(names):
        raise LayoutError(f"duplicate block names: {names}")
    return blocks


class TimeGrid:
    """Strictly increasing time instants t_0 < t_1 < ... < t_k."""

    def __init__(self, instants: Sequence[float]):
        t = np.array(instants, dtype=float).ravel()
        if t.size < 2:
            raise ValueError("time grid needs at least 2 instants")
        if not np.all(np.isfinite(t)):
            raise ValueError("time grid has non-finite entries")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid not strictly increasing")
        t.setflags(write=False)
        self.instants = t

    @classmethod
    def linspace(cls, t0: float, t1: float, num: int) -> "TimeGrid":
        return cls(np.linspace(t0, t1, num))

    def __len__(self) -> int:
        return self.instants.size

    def __getitem__(self, i):
        return self.instants[i]

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.instants)

    def __eq__(self, other) -> bool:
        return isinstance(other, TimeGrid) and np.array_equal(self.instants, other.instants)

    def __repr__(self) -> str:
        t = self.instants
        return f"TimeGrid({t[0]:g}..{t[-1]:g}, {t.size} instants)"


@dataclass(frozen=True)
class SnapshotDataset:
    """State trajectory matrix with its time grid and block layout.

    Attributes
    ----------
    states : (n, k+1) ndarray
        Column i is the state at ``grid[i]``.
    grid : TimeGrid
        The k+1 sampling instants.
    blocks : tuple of Block
        Contiguous named row ranges covering all n rows.
    derivatives : (n, k+1) ndarray or None
        Time derivatives at the same instants (exact right-hand-side
        evaluations when available, finite differences otherwise).
    """

    states: np.ndarray
    grid: TimeGrid
    blocks: tuple[Block, ...]
    derivatives: np.ndarray | None = None

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim != 2:
            raise ValueError(f"states must be 2-D, got shape {states.shape}")
        n, k1 = states.shape
        if k1 != len(self.grid):
            raise ValueError(
                f"states have {k1} columns but the grid has {len(self.grid)} instants"
            )
        blocks = _validate_blocks(self.blocks, n)
        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "blocks", blocks)
        if self.derivatives is not None:
            deriv = np.array(self.derivatives, dtype=float)
            if deriv.shape != states.shape:
                raise ValueError(
                    f"derivatives shape {deriv.shape} != states shape {states.shape}"
                )
            deriv.setflags(write=False)
            object.__setattr__(self, "derivatives", deriv)

    @property
    def n(self) -> int:
        """State dimension (number of rows)."""
        return self.states.shape[0]

    @property
    def n_times(self) -> int:
        return self.states.shape[1]

    @property
    def block_names(self) -> tuple[str, ...]:
        return tuple(b.name for b in self.blocks)

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(f"no block named {name!r}; have {self.block_names}")

    def block_states(self, name: str) -> np.ndarray:
        b = self.block(name)
        return self.states[b.start : b.stop]

    @property
    def initial_state(self) -> np.ndarray:
        return self.states[:, 0]

    def with_derivatives(self, derivatives: np.ndarray) -> "SnapshotDataset":
        return SnapshotDataset(self.states, self.grid, self.blocks, derivatives)


# Derivative estimation -------------------------------------------------------

def _three_point_weights(a, b, c, te):
    """Derivative weights at `te` of the quadratic through (a, b, c)."""
    wa = (2 * te - b - c) / ((a - b) * (a - c))
    wb = (2 * te - a - c) / ((b - a) * (b - c))
    wc = (2 * te - a - b) / ((c - a) * (c - b))
    return wa, wb, wc


def _central_2(states: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.empty_like(states)
    a, b, c = t[:-2], t[1:-1], t[2:]
    wa, wb, wc = _three_point_weights(a, b, c, b)
    out[:, 1:-1] = states[:, :-2] * wa + states[:, 1:-1] * wb + states[:, 2:] * wc
    # 2nd-order one-sided stencils at both endpoints.
    wa, wb, wc = _three_point_weights(t[0], t[1], t[2], t[0])
    out[:, 0] = states[:, 0] * wa + states[:, 1] * wb + states[:, 2] * wc
    wa, wb, wc = _three_point_weights(t[-3], t[-2], t[-1], t[-1])
    out[:, -1] = states[:, -3] * wa + states[:, -2] * wb + states[:, -1] * wc
    return out


def _one_sided_1(states: np.ndarray, t: np.ndarray, forward: bool) -> np.ndarray:
    out = np.empty_like(states)
    slopes = np.diff(states, axis=1) / np.diff(t)
    if forward:
        out[:, :-1] = slopes
        out[:, -1] = slopes[:, -1]
    else:
        out[:, 1:] = slopes
        out[:, 0] = slopes[:, 0]
    return out


def estimate_derivatives(
    ds: SnapshotDataset, scheme: str = "auto", overwrite: bool = False
) -> SnapshotDataset:
    """Populate the derivatives field by finite differences on the time grid.

    Schemes
    -------
    ``central-2``
        2nd-order central differences on interior points and 2nd-order
        one-sided stencils at both endpoints (non-uniform grids handled via
        local quadratic interpolation).  Requires at least 3 instants.
    ``forward-1`` / ``backward-1``
        First-order one-sided differences.
    ``auto``
        ``central-2`` when the grid allows it, ``forward-1`` otherwise.

    Existing derivative data (e.g. exact right-hand-side evaluations) is
    never replaced unless ``overwrite=True``.
    """
    if scheme not in _DERIVATIVE_SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; options: {_DERIVATIVE_SCHEMES}")
    if ds.derivatives is not None and not overwrite:
        raise ValueError(
            "dataset already has derivatives; pass overwrite=True to replace them"
        )
    t = ds.grid.instants
    if scheme == "auto":
        scheme = "central-2" if t.size >= 3 else "forward-1"
    if scheme == "central-2":
        if t.size < 3:
            raise ValueError("central-2 scheme needs a grid of length >= 3")
        deriv = _central_2(ds.states, t)
    elif scheme == "forward-1":
        deriv = _one_sided_1(ds.states, t, forward=True)
    else:
        deriv = _one_sided_1(ds.states, t, forward=False)
    return ds.with_derivatives(deriv)


# Blockwise scaling ------------------------------------------------------------

class BlockScaler(TransformerMixin, BaseEstimator):
    """Affine per-block scaling of snapshot data to O(1) magnitudes.

    Each block b is mapped x -> (x - shift_b) / scale_b.  Derivatives are
    divided by scale_b but not shifted (the time derivative of an affine
    map drops the shift).

    Parameters
    ----------
    mode : {"min-max", "mean-std", "none"}
        min-max: shift = block minimum, scale = block range.
        mean-std: shift = block mean, scale = block standard deviation.
        none: identity transform.
        Degenerate constant blocks fall back to scale 1.

    Attributes (after fit)
    ----------------------
    blocks_ : tuple of Block
    shifts_, scales_ : (n_blocks,) ndarray
    """

    def __init__(self, mode: str = "min-max"):
        self.mode = mode

    def fit(self, dataset: SnapshotDataset, y=None) -> "BlockScaler":
        if self.mode not in _SCALING_MODES:
            raise ValueError(f"unknown mode {self.mode!r}; options: {_SCALING_MODES}")
        shifts, scales = [], []
        for b in dataset.blocks:
            data = dataset.states[b.start : b.stop]
            if self.mode == "none":
                shift, scale = 0.0, 1.0
            elif self.mode == "min-max":
                lo, hi = float(data.min()), float(data.max())
                shift, scale = lo, hi - lo
            else:
                shift, scale = float(data.mean()), float(data.std())
            if scale == 0.0:
                scale = 1.0
            shifts.append(shift)
            scales.append(scale)
        self.blocks_ = dataset.blocks
        self.shifts_ = np.asarray(shifts, dtype=float)
        self.scales_ = np.asarray(scales, dtype=float)
        return self

    def _check_fitted(self):
        if not hasattr(self, "blocks_"):
            raise NotFittedError("BlockScaler is not fitted; call fit() first")

    def _check_blocks(self, blocks: Sequence[Block]):
        self._check_fitted()
        if tuple(blocks) != self.blocks_:
            raise LayoutError(
                f"scaler was fitted on blocks {self.blocks_} "
                f"but the data has {tuple(blocks)}"
            )

    @property
    def n(self) -> int:
        self._check_fitted()
        return self.blocks_[-1].stop

    def _affine(self, X: np.ndarray, forward: bool, shift: bool) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.n:
            raise ValueError(f"data has {X.shape[0]} rows, scaler expects {self.n}")
        out = np.array(X)
        for b, shift_b, scale_b in zip(self.blocks_, self.shifts_, self.scales_):
            sl = slice(b.start, b.stop)
            if forward:
                if shift:
                    out[sl] = (X[sl] - shift_b) / scale_b
                else:
                    out[sl] = X[sl] / scale_b
            else:
                if shift:
                    out[sl] = X[sl] * scale_b + shift_b
                else:
                    out[sl] = X[sl] * scale_b
        return out

    def scale_states(self, X: np.ndarray) -> np.ndarray:
        """Apply the fitted transform to a state vector or matrix (n rows)."""
        return self._affine(X, forward=True, shift=True)

    def unscale_states(self, X: np.ndarray) -> np.ndarray:
        return self._affine(X, forward=False, shift=True)

    def scale_derivatives(self, dX: np.ndarray) -> np.ndarray:
        """Scale derivative data: divide by block scales, no shift."""
        return self._affine(dX, forward=True, shift=False)

    def unscale_derivatives(self, dX: np.ndarray) -> np.ndarray:
        return self._affine(dX, forward=False, shift=False)

    def transform(self, dataset: SnapshotDataset) -> SnapshotDataset:
        self._check_blocks(dataset.blocks)
        states = self.scale_states(dataset.states)
        deriv = None
        if dataset.derivatives is not None:
            deriv = self.scale_derivatives(dataset.derivatives)
        return SnapshotDataset(states, dataset.grid, dataset.blocks, deriv)

    def inverse_transform(self, dataset: SnapshotDataset) -> SnapshotDataset:
        self._check_blocks(dataset.blocks)
        states = self.unscale_states(dataset.states)
        deriv = None
        if dataset.derivatives is not None:
            deriv = self.unscale_derivatives(dataset.derivatives)
        return SnapshotDataset(states, dataset.grid, dataset.blocks, deriv)

    def to_dict(self) -> dict:
        self._check_fitted()
        return {
            "mode": self.mode,
            "blocks": [{"name": b.name, "rows": b.size} for b in self.blocks_],
            "shifts": self.shifts_.tolist(),
            "scales": self.scales_.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlockScaler":
        scaler = cls(mode=d["mode"])
        scaler.blocks_ = block_layout([(b["name"], b["rows"]) for b in d["blocks"]])
        scaler.shifts_ = np.asarray(d["shifts"], dtype=float)
        scaler.scales_ = np.asarray(d["scales"], dtype=float)
        if np.any(scaler.scales_ <= 0):
            raise ValueError("scales must be positive")
        return scaler


# CSV / JSON persistence -------------------------------------------------------

def _header_labels(blocks: Sequence[Block]) -> list[str]:
    labels = ["t"]
    for b in blocks:
        labels.extend(f"{b.name}:{i}" for i in range(1, b.size + 1))
    return labels


def _parse_header(line: str, path) -> tuple[Block, ...]:
    labels = [s.strip() for s in line.split(",")]
    if not labels or labels[0] != "t":
        raise SnapshotFormatError(
            f"{path}: header must start with 't'", row=1, col=1
        )
    sizes: list[tuple[str, int]] = []
    for col, label in enumerate(labels[1:], start=2):
        if ":" not in label:
            raise SnapshotFormatError(
                f"{path}: state column label {label!r} is not '<block>:<row>'",
                row=1, col=col,
            )
        name, _, idx = label.rpartition(":")
        try:
            idx = int(idx)
        except ValueError:
            raise SnapshotFormatError(
                f"{path}: non-integer row index in label {label!r}", row=1, col=col
            ) from None
        if sizes and sizes[-1][0] == name:
            if idx != sizes[-1][1] + 1:
                raise SnapshotFormatError(
                    f"{path}: row indices of block {name!r} not consecutive",
                    row=1, col=col,
                )
            sizes[-1] = (name, idx)
        else:
            if idx != 1:
                raise SnapshotFormatError(
                    f"{path}: block {name!r} must start at row index 1", row=1, col=col
                )
            sizes.append((name, 1))
    if not sizes:
        raise SnapshotFormatError(f"{path}: no state columns", row=1)
    return block_layout(sizes)


def _read_matrix_csv(path: Path) -> tuple[np.ndarray, np.ndarray, tuple[Block, ...]]:
    """Read a snapshot CSV; returns (times, values with shape (n, k+1), blocks)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SnapshotFormatError(f"{path}: empty file", row=1)
    blocks = _parse_header(lines[0], path)
    n = blocks[-1].stop
    times, rows = [], []
    for rix, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != n + 1:
            raise SnapshotFormatError(
                f"{path}: expected {n + 1} columns, found {len(cells)}", row=rix
            )
        try:
            values = [float(c) for c in cells]
        except ValueError:
            for cix, c in enumerate(cells, start=1):
                try:
                    float(c)
                except ValueError:
                    raise SnapshotFormatError(
                        f"{path}: cannot parse {c.strip()!r} as a number",
                        row=rix, col=cix,
                    ) from None
            raise
        times.append(values[0])
        rows.append(values[1:])
    if len(rows) < 2:
        raise SnapshotFormatError(f"{path}: need at least 2 data rows", row=len(lines))
    return np.asarray(times), np.asarray(rows).T, blocks


def _write_matrix_csv(path: Path, times: np.ndarray, values: np.ndarray,
                      blocks: Sequence[Block]) -> None:
    header = ",".join(_header_labels(blocks))
    table = np.column_stack([times, values.T])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in table:
            fh.write(",".join(FLOAT_FORMAT % v for v in row) + "\n")


def _deriv_path(path: Path) -> Path:
    return path.with_name(path.stem + ".deriv.csv")


def load_layout(path) -> tuple[tuple[Block, ...], bool]:
    """Read a layout descriptor JSON; returns (blocks, want_derivatives)."""
    with open(path, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    if "blocks" not in spec:
        raise LayoutError(f"{path}: layout JSON must have a 'blocks' list")
    blocks = block_layout([(b["name"], b["rows"]) for b in spec["blocks"]])
    return blocks, bool(spec.get("derivatives", True))


def save_layout(blocks: Sequence[Block], path, derivatives: bool = True) -> None:
    spec = {
        "blocks": [{"name": b.name, "rows": b.size} for b in blocks],
        "derivatives": derivatives,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec, fh, indent=2)
        fh.write("\n")


def load_dataset(path, layout=None) -> SnapshotDataset:
    """Load a snapshot dataset from CSV.

    Parameters
    ----------
    path : str or Path
        Snapshot CSV with header ``t,<block>:<row>,...``.  A sibling file
        ``<stem>.deriv.csv`` is loaded as the derivatives field when the
        layout asks for derivatives and the file exists.
    layout : optional
        Block descriptor: a path to a layout JSON, a sequence of
        (name, rows) pairs, or None to infer the layout from the header.
    """
    path = Path(path)
    want_deriv = True
    expected = None
    if layout is not None:
        if isinstance(layout, (str, Path)):
            expected, want_deriv = load_layout(layout)
        else:
            expected = block_layout([(name, rows) for name, rows in layout])
    times, states, blocks = _read_matrix_csv(path)
    if expected is not None and blocks != expected:
        raise LayoutError(
            f"{path}: header blocks {blocks} do not match the declared layout {expected}"
        )
    try:
        grid = TimeGrid(times)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
    deriv = None
    dpath = _deriv_path(path)
    if want_deriv and dpath.exists():
        dtimes, deriv, dblocks = _read_matrix_csv(dpath)
        if dblocks != blocks:
            raise LayoutError(f"{dpath}: derivative blocks differ from {path}")
        if not np.array_equal(dtimes, times):
            raise ValueError(f"{dpath}: derivative time grid differs from {path}")
    return SnapshotDataset(states, grid, blocks, deriv)


def save_dataset(ds: SnapshotDataset, path, layout_path=None) -> None:
    """Write a dataset to CSV (plus ``<stem>.deriv.csv`` when derivatives exist).

    Numbers are written with 17 significant digits, so a load/save round
    trip is bit-exact.
    """
    path = Path(path)
    _write_matrix_csv(path, ds.grid.instants, ds.states, ds.blocks)
    if ds.derivatives is not None:
        _write_matrix_csv(_deriv_path(path), ds.grid.instants, ds.derivatives, ds.blocks)
    if layout_path is not None:
        save_layout(ds.blocks, layout_path, derivatives=ds.derivatives is not None)
