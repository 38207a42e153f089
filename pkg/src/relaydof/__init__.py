"""Degrees-of-freedom simulation for amplify-and-forward relay networks.

Two achievability schemes are covered: relay-side interference
cancellation with symbol extension and alignment in K-L-K two-hop
networks, and opportunistic SVD-based channel pairing in K-user K-hop
networks.
"""

from .channels import (GatingWindow, NetworkTopology, PowerBudget, draw_channels,
                       gate_slot, nullspace_basis, svd_canonical)
from .errors import (ConfigError, DegenerateSingularValues, DesiredGainDegenerate,
                     NoNontrivialSolution, RankDeficient, SingularEffectiveChannel)
from .klk import ExtensionPlan, choose_extension_plan, simulate_klk_transmission
from .metrics import (RateReport, af_df_crossover, cutset_dof_upper, dof_formula_af,
                      dof_formula_df, estimate_dof_slope)
from .pairing import (distribution_symmetry_check, invert_pairing_stage,
                      median_delta_tot, pairing_stage, simulate_khop)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateSingularValues", "DesiredGainDegenerate",
    "ExtensionPlan", "GatingWindow", "NetworkTopology", "NoNontrivialSolution",
    "PowerBudget", "RankDeficient", "RateReport", "SingularEffectiveChannel",
    "af_df_crossover", "choose_extension_plan", "cutset_dof_upper",
    "distribution_symmetry_check", "dof_formula_af", "dof_formula_df",
    "draw_channels", "estimate_dof_slope", "gate_slot", "invert_pairing_stage",
    "median_delta_tot", "nullspace_basis", "pairing_stage", "simulate_khop",
    "simulate_klk_transmission", "svd_canonical",
]
