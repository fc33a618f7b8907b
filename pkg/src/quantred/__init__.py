"""quantred: numerics for quantization versus symplectic reduction.

Compact Kähler models (products of projective spaces), Hamiltonian torus
actions, moment-map gradient flow and stratification, quantum Hilbert
spaces up- and downstairs, descent maps with and without the half-form
twist, stratified density integrals, and asymptotic unitarity defects.
"""

__version__ = "0.1.0"

from .models import (
    Model,
    PointM,
    ChartFrame,
    make_model,
    frame_at,
    liouville_volume,
    check_prequantum,
    divergence_liouville,
)
from .actions import (
    WeightAction,
    IsotropyDescriptor,
    FlowPotentialReport,
    make_action,
    moment_map,
    fundamental_fields,
    imaginary_flow,
    isotropy,
    orbit_volume,
    jacobian_tau,
    flow_potential,
    norm_transport,
)
from .strata import (
    StratumLabel,
    ExtraPiece,
    FlowResult,
    kirwan_flow,
    is_semistable,
    enumerate_strata,
    decompose_preimage,
    sample_stratum,
)
from .sections import (
    SectionPoly,
    GramMatrix,
    basis_sections,
    invariant_basis,
    pointwise_norm,
    gram_upstairs,
)
from .reduction import (
    ReducedSection,
    ReducedGram,
    descend,
    pointwise_descended_norm,
    reduced_gram,
    map_matrix,
)
from .asymptotics import (
    DensityCurve,
    TailCertificate,
    density_I,
    density_J,
    truncated_density,
    tail_certificate,
    residual_II,
    unitarity_defect,
    norm_split_consistency,
)

__all__ = [
    "Model", "PointM", "ChartFrame", "make_model", "frame_at",
    "liouville_volume", "check_prequantum", "divergence_liouville",
    "WeightAction", "IsotropyDescriptor", "FlowPotentialReport",
    "make_action", "moment_map", "fundamental_fields", "imaginary_flow",
    "isotropy", "orbit_volume", "jacobian_tau", "flow_potential",
    "norm_transport",
    "StratumLabel", "ExtraPiece", "FlowResult", "kirwan_flow",
    "is_semistable", "enumerate_strata", "decompose_preimage",
    "sample_stratum",
    "SectionPoly", "GramMatrix", "basis_sections", "invariant_basis",
    "pointwise_norm", "gram_upstairs",
    "ReducedSection", "ReducedGram", "descend", "pointwise_descended_norm",
    "reduced_gram", "map_matrix",
    "DensityCurve", "TailCertificate", "density_I", "density_J",
    "truncated_density", "tail_certificate", "residual_II",
    "unitarity_defect", "norm_split_consistency",
]
