"""Gaussian-informed continuum toolkit.

Turns per-frame Gaussian point sets and multi-view masks into simulatable
continuum particles, simulates them under five constitutive models with an
explicit MLS-MPM integrator, and estimates physical parameters by minimizing
a combined 3D-surface and 2D-mask loss.
"""

from .errors import (
    DivergedError,
    DivergedProbeError,
    GicError,
    IdentificationFailedError,
    InvalidInputError,
    InvalidStateError,
    InvertedElementError,
    ParseError,
    SingularParameterError,
)
from .geometry import (
    DensityField,
    FillConfig,
    GaussianPointSet,
    GicParticleSet,
    coarse_to_fine_fill,
    extract_continuum,
    extract_surface,
    extract_with_surface_mask,
    filter_internal,
    make_gaussian_informed,
    mean_filter,
    sample_bbox_particles,
    upsample_trilinear,
)
from .identify import (
    AdamParams,
    IdentConfig,
    IdentResult,
    Observation,
    estimate_velocity,
    fd_gradient,
    identify,
    rollout_loss,
    rollout_loss_components,
)
from .materials import (
    MaterialSpec,
    lame_from_young_poisson,
    neo_hookean_stress,
    newtonian_stress,
    return_map_drucker_prager,
    return_map_viscoplastic,
    return_map_von_mises,
    stvk_stress,
)
from .mesh import TriangleMesh, export_mesh
from .metrics import chamfer_distance, emd, mask_l1
from .solver import SimConfig, SimState, Trajectory, simulate, step
from .splat import Camera, RenderOutput, Splat2D, project_gaussian, render, render_depth_only

__version__ = "0.1.0"
