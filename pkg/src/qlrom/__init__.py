# __init__.py
"""qlrom: learning quadratic-linear reduced-order models from snapshot data.

Pipeline: snapshot ingestion and scaling (`snapshots`), POD compression
(`pod`), operator regression (`opinf`), ROM simulation (`rom`), synthetic
benchmark models (`fom`), and end-to-end orchestration (`pipeline`, `cli`).
"""

from .fom import (
    BurgersConfig,
    IntegrationFailure,
    ReactorSurrogateConfig,
    burgers_rhs_operators,
    generate_dataset,
    reactor_rhs,
)
from .operators import (
    QuadraticOperators,
    kron_columns,
    kron_square,
    symmetrize_quadratic,
)
from .opinf import (
    OpInfSolution,
    RankDeficiencyError,
    RegressionProblem,
    SolverConfig,
    StableParameterization,
    assemble_problem,
    residual,
    rollout_loss_and_grad,
    solve,
    solve_stable,
    solve_tikhonov,
    solve_tsvd,
)
from .pipeline import PipelineConfig, RomEstimator, RunReport, evaluate_rom, fit_rom
from .pod import (
    PodBasis,
    PodProjector,
    compute_basis,
    cumulative_energy,
    galerkin_rom,
    lift,
    project,
    projection_error,
)
from .rom import (
    RomModel,
    Trajectory,
    integrate,
    rhs,
    simulate_rom,
    trajectory_error,
)
from .snapshots import (
    Block,
    BlockScaler,
    LayoutError,
    SnapshotDataset,
    SnapshotFormatError,
    TimeGrid,
    block_layout,
    estimate_derivatives,
    load_dataset,
    save_dataset,
)

__version__ = "0.1.0"
