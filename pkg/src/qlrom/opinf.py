# opinf.py
"""Learn reduced quadratic operators from projected snapshot data.

The regression stacks the reduced states, their Kronecker squares, and a
row of ones into a data matrix D of shape (r + r^2 + 1) x (k+1); the
operators [A H C] minimize || target - [A H C] D ||_F^2, where the target
holds the reduced time derivatives.  Three backends are provided:

* ``tsvd``      -- minimum-norm solution through a truncated-SVD
                   pseudo-inverse of D.
* ``tikhonov``  -- ridge-penalized normal equations with separate weights
                   for the linear, quadratic, and constant blocks.
* ``stable-gradient`` -- gradient descent over a parameterization whose
                   realized linear operator (J - R) Q is Hurwitz by
                   construction (J skew-symmetric, R and Q positive
                   definite), trained on a one-step Runge-Kutta rollout
                   loss instead of the derivative residual.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .operators import QuadraticOperators, kron_columns, symmetrize_quadratic
from .snapshots import FLOAT_FORMAT, SnapshotDataset, TimeGrid

__all__ = [
    "RegressionProblem",
    "SolverConfig",
    "OpInfSolution",
    "StableParameterization",
    "RankDeficiencyError",
    "assemble_problem",
    "solve",
    "solve_tsvd",
    "solve_tikhonov",
    "solve_stable",
    "residual",
    "rollout_loss_and_grad",
    "save_operators",
    "load_operators",
]

_BACKENDS = ("tsvd", "tikhonov", "stable-gradient")

# Relative singular-value cutoff defining the numerical rank of D.
_RANK_RTOL = 1e-12


class RankDeficiencyError(ValueError):
    """Requested truncation rank exceeds the numerical rank of the data."""

    def __init__(self, requested: int, achievable: int):
        super().__init__(
            f"requested truncation rank {requested} but the data matrix has "
            f"numerical rank {achievable}"
        )
        self.requested = requested
        self.achievable = achievable


class RegressionProblem:
    """Data matrix, derivative target, and time grid(s) of the regression.

    Attributes
    ----------
    D : (r + r^2 + 1, k+1) ndarray
        Stacked reduced states, Kronecker squares, and a ones row.
    target : (r, k+1) ndarray
        Reduced time derivatives.
    grids : tuple of TimeGrid, or None
        One grid per trajectory segment; their lengths sum to k+1.  The
        rollout backend steps between consecutive columns within a segment.
        None for hand-built problems without time information (the
        stable-gradient backend then refuses to run).
    """

    def __init__(self, D: np.ndarray, target: np.ndarray,
                 grids: TimeGrid | Sequence[TimeGrid] | None = None):
        D = np.array(D, dtype=float)
        target = np.array(target, dtype=float)
        if D.ndim != 2 or target.ndim != 2:
            raise ValueError("D and target must be matrices")
        r = target.shape[0]
        if D.shape[0] != r + r * r + 1:
            raise ValueError(
                f"D has {D.shape[0]} rows; expected r + r^2 + 1 = {r + r * r + 1} "
                f"for target dimension r = {r}"
            )
        if D.shape[1] != target.shape[1]:
            raise ValueError("D and target have different column counts")
        if not np.array_equal(D[-1], np.ones(D.shape[1])):
            raise ValueError("last row of D must be all ones")
        if grids is not None:
            if isinstance(grids, TimeGrid):
                grids = (grids,)
            grids = tuple(grids)
            if sum(len(g) for g in grids) != D.shape[1]:
                raise ValueError(
                    f"grids cover {sum(len(g) for g in grids)} instants, "
                    f"D has {D.shape[1]} columns"
                )
        D.setflags(write=False)
        target.setflags(write=False)
        self.D = D
        self.target = target
        self.grids = grids

    @property
    def r(self) -> int:
        return self.target.shape[0]

    @property
    def n_columns(self) -> int:
        return self.D.shape[1]

    @property
    def grid(self) -> TimeGrid:
        if self.grids is None or len(self.grids) != 1:
            raise ValueError("problem does not have a single trajectory grid")
        return self.grids[0]

    @property
    def states(self) -> np.ndarray:
        """The reduced-state block of D."""
        return self.D[: self.r]

    def step_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Column indices (i, i+1) within each segment and their spacings."""
        if self.grids is None:
            raise ValueError("problem has no time grids; rollout is unavailable")
        idx0, dts = [], []
        offset = 0
        for g in self.grids:
            k1 = len(g)
            idx0.append(np.arange(offset, offset + k1 - 1))
            dts.append(g.spacings)
            offset += k1
        i0 = np.concatenate(idx0)
        return i0, i0 + 1, np.concatenate(dts)


def assemble_problem(
    reduced: SnapshotDataset | Sequence[SnapshotDataset],
) -> RegressionProblem:
    """Build the regression problem from reduced snapshot data.

    Accepts a single dataset or several (independent trajectories of the
    same reduced dimension); every dataset must carry derivatives.
    """
    datasets = [reduced] if isinstance(reduced, SnapshotDataset) else list(reduced)
    if not datasets:
        raise ValueError("no datasets given")
    r = datasets[0].n
    blocks_D, blocks_t, grids = [], [], []
    for ds in datasets:
        if ds.derivatives is None:
            raise ValueError("dataset has no derivatives; estimate or load them first")
        if ds.n != r:
            raise ValueError("datasets have inconsistent reduced dimensions")
        X = ds.states
        blocks_D.append(np.vstack([X, kron_columns(X), np.ones((1, X.shape[1]))]))
        blocks_t.append(ds.derivatives)
        grids.append(ds.grid)
    return RegressionProblem(np.hstack(blocks_D), np.hstack(blocks_t), tuple(grids))


@dataclass(frozen=True)
class SolverConfig:
    """Backend selection and solver options.

    alpha, when set, overrides all three per-block regularization weights;
    otherwise the block weights apply (quadratic-only penalty by default).
    The gradient options only affect the stable-gradient backend.
    """

    backend: str = "tikhonov"
    tsvd_rank: int | float | None = None
    alpha: float | None = None
    alpha_a: float = 0.0
    alpha_h: float = 1e-4
    alpha_c: float = 0.0
    max_epochs: int = 2000
    patience: int = 500
    lr_min: float = 1e-5
    lr_max: float = 0.5
    cycle_epochs: int = 100
    seed: int = 0
    eps: float = 1e-8

    def __post_init__(self):
        if self.backend not in _BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; options: {_BACKENDS}")
        for name, a in self.alphas().items():
            if a < 0:
                raise ValueError(f"{name} must be >= 0, got {a}")
        if self.tsvd_rank is not None:
            if isinstance(self.tsvd_rank, float) and not self.tsvd_rank.is_integer():
                if not 0.0 < self.tsvd_rank < 1.0:
                    raise ValueError("fractional tsvd_rank must be in (0, 1)")
            elif int(self.tsvd_rank) < 1:
                raise ValueError("tsvd_rank must be a positive integer")
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError("need 0 < lr_min <= lr_max")
        if self.max_epochs < 1 or self.patience < 1 or self.cycle_epochs < 1:
            raise ValueError("epoch counts must be >= 1")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    def alphas(self) -> dict[str, float]:
        if self.alpha is not None:
            return {"alpha_a": self.alpha, "alpha_h": self.alpha, "alpha_c": self.alpha}
        return {"alpha_a": self.alpha_a, "alpha_h": self.alpha_h, "alpha_c": self.alpha_c}

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "tsvd_rank": self.tsvd_rank,
            "alpha": self.alpha,
            "alpha_a": self.alpha_a,
            "alpha_h": self.alpha_h,
            "alpha_c": self.alpha_c,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "lr_min": self.lr_min,
            "lr_max": self.lr_max,
            "cycle_epochs": self.cycle_epochs,
            "seed": self.seed,
            "eps": self.eps,
        }


@dataclass
class OpInfSolution:
    """Result of a solver run: the operators plus backend diagnostics."""

    operators: QuadraticOperators
    backend: str
    residual: float
    details: dict = field(default_factory=dict)
    parameterization: "StableParameterization | None" = None


def residual(problem: RegressionProblem, ops: QuadraticOperators) -> float:
    """Relative Frobenius residual of the regression for given operators."""
    if ops.d != problem.r:
        raise ValueError(f"operators have dimension {ops.d}, problem has r={problem.r}")
    mismatch = np.linalg.norm(problem.target - ops.packed() @ problem.D)
    denom = np.linalg.norm(problem.target)
    if denom == 0.0:
        return 0.0 if mismatch == 0.0 else np.inf
    return float(mismatch / denom)


def _energy_rank(s: np.ndarray, tol: float) -> int:
    energy = np.cumsum(s * s) / np.sum(s * s)
    return int(np.searchsorted(energy, tol) + 1)


def solve_tsvd(problem: RegressionProblem,
               config: SolverConfig | None = None) -> OpInfSolution:
    """Minimum-norm least squares through a truncated-SVD pseudo-inverse.

    The truncation order is `config.tsvd_rank`: a positive integer keeps
    that many leading singular values of D, a fraction in (0, 1) keeps the
    minimal count reaching that cumulative-energy level, and None keeps
    every singular value above the numerical-rank cutoff.
    """
    config = config or SolverConfig(backend="tsvd")
    U, s, Vt = np.linalg.svd(problem.D, full_matrices=False)
    num_rank = int(np.count_nonzero(s > _RANK_RTOL * s[0]))
    requested = config.tsvd_rank
    if requested is None:
        rank = num_rank
    elif isinstance(requested, float) and 0.0 < requested < 1.0:
        rank = min(_energy_rank(s, requested), num_rank)
    else:
        rank = int(requested)
        if rank > num_rank:
            raise RankDeficiencyError(rank, num_rank)
    pinv = (Vt[:rank].T / s[:rank]) @ U[:, :rank].T
    O = problem.target @ pinv
    ops = QuadraticOperators.from_packed(O)
    res = residual(problem, ops)
    details = {"tsvd_rank": rank, "numerical_rank": num_rank,
               "max_singular_value": float(s[0]), "min_kept_singular_value": float(s[rank - 1])}
    return OpInfSolution(ops, "tsvd", res, details)


def _regularizer_diagonal(r: int, config: SolverConfig) -> np.ndarray:
    a = config.alphas()
    gamma2 = np.empty(r + r * r + 1)
    gamma2[:r] = a["alpha_a"]
    gamma2[r : r + r * r] = a["alpha_h"]
    gamma2[-1] = a["alpha_c"]
    return gamma2


def solve_tikhonov(problem: RegressionProblem,
                   config: SolverConfig | None = None) -> OpInfSolution:
    """Ridge-regularized least squares via the normal equations.

    Minimizes ||target - O D||_F^2 + ||O Gamma||_F^2 with
    Gamma^2 = diag(alpha_a I_r, alpha_h I_{r^2}, alpha_c), solved through a
    symmetric positive-definite factorization of D D^T + Gamma^2.  If that
    matrix is singular (possible when weights are zero), the solver falls
    through to full-rank truncated SVD and records it in the details.
    """
    config = config or SolverConfig(backend="tikhonov")
    gamma2 = _regularizer_diagonal(problem.r, config)
    M = problem.D @ problem.D.T
    M[np.diag_indices_from(M)] += gamma2
    try:
        O = cho_solve(cho_factor(M), problem.D @ problem.target.T).T
    except LinAlgError:
        fallback = solve_tsvd(problem, SolverConfig(backend="tsvd"))
        details = dict(fallback.details)
        details["fallback"] = "tsvd"
        details["alphas"] = config.alphas()
        return OpInfSolution(fallback.operators, "tikhonov", fallback.residual, details)
    ops = QuadraticOperators.from_packed(O)
    return OpInfSolution(ops, "tikhonov", residual(problem, ops),
                         {"alphas": config.alphas()})


# Stability-constrained gradient backend ----------------------------------------

class StableParameterization:
    """Unconstrained parameters realizing a quadratic model whose linear
    part (J - R) Q is Hurwitz by construction.

    J = (W - W^T)/2 is skew-symmetric; R = tril(L_R) tril(L_R)^T + eps I and
    Q = tril(L_Q) tril(L_Q)^T + eps I are symmetric positive definite, so
    x^T Q x is a Lyapunov function of the realized linear dynamics.  The
    quadratic operator is parameterized freely (symmetrized on
    realization); only the linear part carries a stability certificate.
    """

    def __init__(self, W: np.ndarray, L_R: np.ndarray, L_Q: np.ndarray,
                 H_free: np.ndarray, C: np.ndarray, eps: float = 1e-8):
        d = W.shape[0]
        self.W = np.array(W, dtype=float)
        self.L_R = np.array(L_R, dtype=float)
        self.L_Q = np.array(L_Q, dtype=float)
        self.H_free = np.array(H_free, dtype=float)
        self.C = np.array(C, dtype=float).ravel()
        self.eps = float(eps)
        if self.L_R.shape != (d, d) or self.L_Q.shape != (d, d):
            raise ValueError("factor shapes inconsistent with W")
        if self.H_free.shape != (d, d * d) or self.C.shape != (d,):
            raise ValueError("H_free / C shapes inconsistent with W")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    # Realized pieces -----------------------------------------------------

    @property
    def J(self) -> np.ndarray:
        return 0.5 * (self.W - self.W.T)

    @property
    def R_factor(self) -> np.ndarray:
        return np.tril(self.L_R)

    @property
    def Q_factor(self) -> np.ndarray:
        return np.tril(self.L_Q)

    @property
    def R(self) -> np.ndarray:
        L = self.R_factor
        return L @ L.T + self.eps * np.eye(self.d)

    @property
    def Q(self) -> np.ndarray:
        L = self.Q_factor
        return L @ L.T + self.eps * np.eye(self.d)

    def realize(self) -> QuadraticOperators:
        """Assemble the guaranteed-stable operator triple."""
        A = (self.J - self.R) @ self.Q
        H = symmetrize_quadratic(self.H_free)
        return QuadraticOperators(A, H, self.C)

    # Flat-vector view (for the optimizer and finite-difference checks) ----

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.W.ravel(), self.L_R.ravel(), self.L_Q.ravel(),
            self.H_free.ravel(), self.C,
        ])

    @classmethod
    def from_vector(cls, vec: np.ndarray, d: int,
                    eps: float = 1e-8) -> "StableParameterization":
        vec = np.asarray(vec, dtype=float)
        sizes = [d * d, d * d, d * d, d * d * d, d]
        if vec.shape != (sum(sizes),):
            raise ValueError(f"vector length {vec.size} invalid for d={d}")
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(parts[0].reshape(d, d), parts[1].reshape(d, d),
                   parts[2].reshape(d, d), parts[3].reshape(d, d * d),
                   parts[4], eps=eps)

    # Initializers ---------------------------------------------------------

    @classmethod
    def identity(cls, d: int, eps: float = 1e-8) -> "StableParameterization":
        """A = -I start: J = 0, R = Q = I."""
        L = np.eye(d) * np.sqrt(max(1.0 - eps, eps))
        return cls(np.zeros((d, d)), L, L, np.zeros((d, d * d)), np.zeros(d), eps=eps)

    @classmethod
    def random(cls, d: int, rng: np.random.Generator, scale: float = 0.05,
               eps: float = 1e-8) -> "StableParameterization":
        base = cls.identity(d, eps=eps)
        return cls(
            base.W + scale * rng.standard_normal((d, d)),
            base.L_R + scale * rng.standard_normal((d, d)),
            base.L_Q + scale * rng.standard_normal((d, d)),
            scale * rng.standard_normal((d, d * d)),
            scale * rng.standard_normal(d),
            eps=eps,
        )

    @classmethod
    def from_operators(cls, ops: QuadraticOperators,
                       eps: float = 1e-8) -> "StableParameterization":
        """Warm start near given operators (Q = I, J = skew part of A,
        R = negative symmetric part of A with its spectrum floored)."""
        d = ops.d
        W = 0.5 * (ops.A - ops.A.T)  # realized J = (W - W^T)/2 = skew(A)
        sym = 0.5 * (ops.A + ops.A.T)
        eigvals, eigvecs = np.linalg.eigh(-sym)
        floored = np.maximum(eigvals, 10.0 * eps)
        R_target = (eigvecs * floored) @ eigvecs.T
        ridge = 10.0 * eps
        while True:
            try:
                L_R = np.linalg.cholesky(R_target - eps * np.eye(d))
                break
            except np.linalg.LinAlgError:
                # Reconstruction roundoff can push the floor below eps.
                R_target = R_target + ridge * np.eye(d)
                ridge *= 10.0
        L_Q = np.eye(d) * np.sqrt(max(1.0 - eps, eps))
        return cls(W, L_R, L_Q, np.array(ops.H), np.array(ops.C), eps=eps)


def rollout_loss_and_grad(params: StableParameterization,
                          problem: RegressionProblem,
                          alpha_h: float) -> tuple[float, np.ndarray]:
    """One-step rollout loss and its analytic gradient.

    The loss is  sum_i || x_{i+1} - RK4step(f, x_i, dt_i) ||^2
    + alpha_h * ||H||_F^2  over every consecutive snapshot pair, where f is
    the realized quadratic model and H its realized quadratic operator.
    The gradient is with respect to the flat parameter vector
    (`StableParameterization.to_vector` ordering), computed by reverse-mode
    differentiation of the Runge-Kutta step and the parameterization.
    """
    d = params.d
    X = problem.states
    i0, i1, dt = problem.step_pairs()
    X0, X1 = X[:, i0], X[:, i1]
    dt_row = dt[None, :]

    J = params.J
    Lr = params.R_factor
    Lq = params.Q_factor
    eps_eye = params.eps * np.eye(d)
    R = Lr @ Lr.T + eps_eye
    Q = Lq @ Lq.T + eps_eye
    M = J - R
    A = M @ Q
    Hs = symmetrize_quadratic(params.H_free)
    T = Hs.reshape(d, d, d)
    C = params.C

    def f(Z):
        return A @ Z + np.einsum("ajk,jm,km->am", T, Z, Z) + C[:, None]

    k1 = f(X0)
    Y2 = X0 + 0.5 * dt_row * k1
    k2 = f(Y2)
    Y3 = X0 + 0.5 * dt_row * k2
    k3 = f(Y3)
    Y4 = X0 + dt_row * k3
    k4 = f(Y4)
    pred = X0 + (dt_row / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    res = pred - X1
    loss = float(np.sum(res * res) + alpha_h * np.sum(Hs * Hs))

    # Reverse pass: accumulate operator gradients from each stage.
    GA = np.zeros((d, d))
    GT = np.zeros((d, d, d))
    GC = np.zeros(d)

    def backprop_stage(u, Z):
        # f(Z) with upstream u: returns dL/dZ; accumulates dL/d(A, T, C).
        nonlocal GA, GT, GC
        GA += u @ Z.T
        GT += np.einsum("am,jm,km->ajk", u, Z, Z)
        GC += u.sum(axis=1)
        # T is symmetric in its last two axes, so the two quadratic
        # product-rule terms coincide.
        return A.T @ u + 2.0 * np.einsum("am,ajk,km->jm", u, T, Z)

    dpred = 2.0 * res
    dk1 = dpred * (dt_row / 6.0)
    dk2 = dpred * (dt_row / 3.0)
    dk3 = dpred * (dt_row / 3.0)
    dk4 = dpred * (dt_row / 6.0)

    dY4 = backprop_stage(dk4, Y4)
    dk3 = dk3 + dt_row * dY4
    dY3 = backprop_stage(dk3, Y3)
    dk2 = dk2 + 0.5 * dt_row * dY3
    dY2 = backprop_stage(dk2, Y2)
    dk1 = dk1 + 0.5 * dt_row * dY2
    backprop_stage(dk1, X0)

    # Through the realization.
    GH = GT.reshape(d, d * d) + 2.0 * alpha_h * Hs
    G_Hfree = symmetrize_quadratic(GH)
    G_M = GA @ Q.T
    G_Q = M.T @ GA
    G_W = 0.5 * (G_M - G_M.T)
    G_R = -G_M
    G_Lr = np.tril((G_R + G_R.T) @ Lr)
    G_Lq = np.tril((G_Q + G_Q.T) @ Lq)

    grad = np.concatenate([
        G_W.ravel(), G_Lr.ravel(), G_Lq.ravel(), G_Hfree.ravel(), GC,
    ])
    return loss, grad


def _cyclic_lr(epoch: int, config: SolverConfig) -> float:
    # Triangular schedule with the amplitude halved every full cycle.
    cycle, pos = divmod(epoch, config.cycle_epochs)
    frac = pos / config.cycle_epochs
    tri = 1.0 - abs(2.0 * frac - 1.0)
    amplitude = (config.lr_max - config.lr_min) * 0.5**cycle
    return config.lr_min + amplitude * tri


def solve_stable(problem: RegressionProblem, config: SolverConfig | None = None,
                 init: QuadraticOperators | None = None) -> OpInfSolution:
    """Gradient-descent fit with a built-in linear-stability guarantee.

    Minimizes the one-step Runge-Kutta rollout loss over the stable
    parameterization (see `rollout_loss_and_grad`), starting from `init`
    when given, otherwise from a Tikhonov warm start (random fallback).
    Descent steps use a cyclic triangular learning rate between the
    configured bounds, normalized by the number of snapshot pairs; the
    run stops early after `patience` epochs without a relative loss
    improvement above 1e-6.  The returned linear operator is Hurwitz by
    construction, regardless of how the optimization ends.
    """
    config = config or SolverConfig(backend="stable-gradient")
    alpha_h = config.alphas()["alpha_h"]
    rng = np.random.default_rng(config.seed)
    details: dict = {}

    if init is not None:
        params = StableParameterization.from_operators(init, eps=config.eps)
        details["init"] = "given"
    else:
        try:
            warm = solve_tikhonov(problem, config)
            params = StableParameterization.from_operators(warm.operators,
                                                           eps=config.eps)
            details["init"] = "tikhonov"
        except (LinAlgError, ValueError):
            params = StableParameterization.random(problem.r, rng, eps=config.eps)
            details["init"] = "random"

    n_pairs = max(1, problem.step_pairs()[0].size)
    vec = params.to_vector()
    best_vec = vec.copy()
    best_loss = np.inf
    stall = 0
    damping = 1.0
    diverged = False
    epochs_run = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.max_epochs):
            loss, grad = rollout_loss_and_grad(
                StableParameterization.from_vector(vec, problem.r, eps=config.eps),
                problem, alpha_h)
            epochs_run = epoch + 1
            if not np.isfinite(loss):
                # Overshoot: back off to the best iterate with a smaller step.
                if not np.isfinite(best_loss) or damping < 1e-12:
                    diverged = True
                    break
                vec = best_vec.copy()
                damping *= 0.5
                continue
            if loss < best_loss:
                improvement = (best_loss - loss) / best_loss if np.isfinite(best_loss) else np.inf
                best_loss = loss
                best_vec = vec.copy()
                stall = 0 if improvement > 1e-6 else stall + 1
            else:
                stall += 1
            if stall >= config.patience:
                break
            lr = damping * _cyclic_lr(epoch, config) / n_pairs
            vec = vec - lr * grad

    params = StableParameterization.from_vector(best_vec, problem.r, eps=config.eps)
    ops = params.realize()
    details.update({
        "rollout_loss": best_loss,
        "epochs": epochs_run,
        "diverged": diverged,
        "max_real_eig": float(np.max(np.real(np.linalg.eigvals(ops.A)))),
        "alphas": config.alphas(),
    })
    return OpInfSolution(ops, "stable-gradient", residual(problem, ops),
                         details, parameterization=params)


def solve(problem: RegressionProblem, config: SolverConfig,
          init: QuadraticOperators | None = None) -> OpInfSolution:
    """Dispatch to the backend named in the config."""
    if config.backend == "tsvd":
        return solve_tsvd(problem, config)
    if config.backend == "tikhonov":
        return solve_tikhonov(problem, config)
    return solve_stable(problem, config, init=init)


# Persistence -------------------------------------------------------------------

def save_operators(ops: QuadraticOperators, directory,
                   metadata: dict | None = None) -> None:
    """Write the operator triple as CSV payloads plus a JSON header."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {"d": ops.d, "format": "dense", "symmetrized": True}
    header.update(metadata or {})
    with open(directory / "operators.json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)
        fh.write("\n")
    np.savetxt(directory / "A.csv", ops.A, fmt=FLOAT_FORMAT, delimiter=",")
    np.savetxt(directory / "H.csv", ops.H, fmt=FLOAT_FORMAT, delimiter=",")
    np.savetxt(directory / "C.csv", ops.C[:, None], fmt=FLOAT_FORMAT, delimiter=",")


def load_operators(directory) -> tuple[QuadraticOperators, dict]:
    directory = Path(directory)
    with open(directory / "operators.json", "r", encoding="utf-8") as fh:
        header = json.load(fh)
    d = header["d"]
    A = np.loadtxt(directory / "A.csv", delimiter=",", ndmin=2)
    H = np.loadtxt(directory / "H.csv", delimiter=",", ndmin=2)
    C = np.loadtxt(directory / "C.csv", delimiter=",").ravel()
    if A.shape != (d, d) or H.shape != (d, d * d) or C.shape != (d,):
        raise ValueError(f"{directory}: operator payload shapes inconsistent with d={d}")
    metadata = {k: v for k, v in header.items()
                if k not in ("d", "format", "symmetrized")}
    return QuadraticOperators(A, H, C), metadata
