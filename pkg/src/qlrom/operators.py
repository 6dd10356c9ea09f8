# operators.py
"""Quadratic-linear operator triples and Kronecker-product utilities.

A quadratic-linear system is  dx/dt = A x + H (x (x) x) + C  with
A in R^{d x d}, H in R^{d x d^2}, and C in R^d.  The Kronecker square
x (x) x contains every pairwise product x_i * x_j, so the cross-term
columns (i,j) and (j,i) of H are redundant; all operators stored here
keep those column pairs identical ("symmetrized").
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "QuadraticOperators",
    "kron_square",
    "kron_columns",
    "symmetrize_quadratic",
]


def kron_square(x: np.ndarray) -> np.ndarray:
    """Kronecker square of a vector: all pairwise products, shape (d**2,)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected a vector, got shape {x.shape}")
    return np.outer(x, x).ravel()


def kron_columns(X: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker squares of a (d, k) matrix, shape (d**2, k)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {X.shape}")
    d, k = X.shape
    return np.einsum("ik,jk->ijk", X, X).reshape(d * d, k)


def symmetrize_quadratic(H: np.ndarray) -> np.ndarray:
    """Average the redundant cross-term columns of a quadratic operator.

    Columns (i, j) and (j, i) of the output are equal, and the action on
    Kronecker squares is unchanged: H'(x (x) x) = H(x (x) x) for all x.

    Parameters
    ----------
    H : (d, d**2) ndarray
        Quadratic operator acting on the Kronecker square of the state.

    Returns
    -------
    (d, d**2) ndarray
        Symmetrized copy of H.
    """
    H = np.asarray(H, dtype=float)
    d = H.shape[0]
    if H.ndim != 2 or H.shape[1] != d * d:
        raise ValueError(f"expected shape (d, d**2), got {H.shape}")
    T = H.reshape(d, d, d)
    return (0.5 * (T + T.transpose(0, 2, 1))).reshape(d, d * d)


def _is_symmetrized(H: np.ndarray) -> bool:
    d = H.shape[0]
    T = H.reshape(d, d, d)
    return np.array_equal(T, T.transpose(0, 2, 1))


class QuadraticOperators:
    """The operator triple (A, H, C) of a quadratic-linear system.

    Parameters
    ----------
    A : (d, d) ndarray
        Linear operator.
    H : (d, d**2) ndarray
        Quadratic operator acting on x (x) x.  Must be symmetrized; use
        `symmetrize_quadratic` first if it is not.
    C : (d,) ndarray
        Constant term.
    """

    def __init__(self, A: np.ndarray, H: np.ndarray, C: np.ndarray):
        A = np.array(A, dtype=float)
        H = np.array(H, dtype=float)
        C = np.array(C, dtype=float).ravel()
        d = C.shape[0]
        if A.shape != (d, d):
            raise ValueError(f"A has shape {A.shape}, expected {(d, d)}")
        if H.shape != (d, d * d):
            raise ValueError(f"H has shape {H.shape}, expected {(d, d * d)}")
        for name, arr in (("A", A), ("H", H), ("C", C)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"operator {name} has non-finite entries")
        if not _is_symmetrized(H):
            raise ValueError(
                "quadratic operator is not symmetrized; "
                "apply symmetrize_quadratic() first"
            )
        for arr in (A, H, C):
            arr.setflags(write=False)
        self.A = A
        self.H = H
        self.C = C

    @property
    def d(self) -> int:
        """State dimension."""
        return self.C.shape[0]

    def packed(self) -> np.ndarray:
        """Stack the operators as [A | H | C], shape (d, d + d**2 + 1)."""
        return np.hstack([self.A, self.H, self.C[:, None]])

    @classmethod
    def from_packed(cls, O: np.ndarray, symmetrize: bool = True) -> "QuadraticOperators":
        """Split a stacked [A | H | C] solution matrix into an operator triple."""
        O = np.asarray(O, dtype=float)
        d = O.shape[0]
        if O.shape != (d, d + d * d + 1):
            raise ValueError(f"packed shape {O.shape} invalid for d={d}")
        A = O[:, :d]
        H = O[:, d : d + d * d]
        C = O[:, -1]
        if symmetrize:
            H = symmetrize_quadratic(H)
        return cls(A, H, C)

    @classmethod
    def zero(cls, d: int) -> "QuadraticOperators":
        return cls(np.zeros((d, d)), np.zeros((d, d * d)), np.zeros(d))

    def __repr__(self) -> str:
        return f"QuadraticOperators(d={self.d})"
