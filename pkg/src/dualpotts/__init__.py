"""Partition-function estimation for the 2D ferromagnetic q-state Potts model.

The primal model lives on a torus grid; estimation happens in the dual
factor graph, where a spanning-tree split of the bonds turns sampling into
independent draws on the co-tree followed by a linear completion.  The
package provides importance / uniform / annealed samplers, exact brute-force
and 1D-chain oracles for verification, weight diagnostics, and a CLI
(``dualpotts``) for experiments.
"""

from ._kernels import backend_name
from .diagnostics import (
    WeightAccumulator,
    empirical_chi2,
    ess,
    relative_error,
)
from .dualgraph import (
    DualConfiguration,
    DualPartition,
    build_partition,
    complete_configuration,
    dual_edge_factor,
    dual_field_factor,
    duality_scale,
    load_partition,
    log_dual_edge_factor,
    log_dual_field_factor,
    log_gamma_product,
    save_partition,
    site_constraint_residuals,
)
from .estimators import (
    AnnealSchedule,
    EstimateResult,
    SamplerSpec,
    draw_xA,
    draw_y,
    estimate,
    estimate_annealed,
    estimate_importance,
    estimate_uniform,
    log_Z_qd,
)
from .model import (
    PottsModel,
    PrimalConfiguration,
    build_torus_model,
    hamiltonian,
    load_model,
    log_weight,
    model_hash,
    save_model,
)
from .oracles import (
    Chain1D,
    brute_force_log_Z,
    brute_force_log_Zd,
    chain_brute_force_log_Z,
    chain_log_Z,
    exact_chi_squared,
)

__version__ = "0.1.0"

__all__ = [
    "AnnealSchedule",
    "Chain1D",
    "DualConfiguration",
    "DualPartition",
    "EstimateResult",
    "PottsModel",
    "PrimalConfiguration",
    "SamplerSpec",
    "WeightAccumulator",
    "backend_name",
    "brute_force_log_Z",
    "brute_force_log_Zd",
    "build_partition",
    "build_torus_model",
    "chain_brute_force_log_Z",
    "chain_log_Z",
    "complete_configuration",
    "draw_xA",
    "draw_y",
    "dual_edge_factor",
    "dual_field_factor",
    "duality_scale",
    "empirical_chi2",
    "ess",
    "estimate",
    "estimate_annealed",
    "estimate_importance",
    "estimate_uniform",
    "exact_chi_squared",
    "hamiltonian",
    "load_model",
    "load_partition",
    "log_dual_edge_factor",
    "log_dual_field_factor",
    "log_gamma_product",
    "log_weight",
    "log_Z_qd",
    "model_hash",
    "relative_error",
    "save_model",
    "save_partition",
    "site_constraint_residuals",
]
