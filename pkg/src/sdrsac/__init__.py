"""Point-cloud registration by randomized semidefinite-relaxation matching.

The pipeline samples small subsets of both clouds, matches them through a
tightened semidefinite relaxation of cardinality-constrained graph matching,
rounds the relaxation to correspondences, estimates a rigid motion, refines
it with (trimmed) ICP, and keeps the transform with the largest consensus
set.  A probabilistic stopping rule bounds the number of samples.
"""

from .cloud_io import (
    CloudFormatError,
    load_cloud,
    read_correspondences,
    read_ply,
    read_transform,
    read_xyz,
    save_cloud,
    write_correspondences,
    write_ply,
    write_transform,
    write_xyz,
)
from .geometry import (
    ConsensusResult,
    CorrespondenceSet,
    DegenerateGeometryError,
    PointCloud,
    RigidTransform,
    apply_transform,
    consensus_score,
    estimate_rigid,
    nearest_neighbor,
)
from .icp import IcpConfig, IcpResult, refine_icp
from .matching import (
    AffinityMatrix,
    FractionalMatch,
    assignment_candidates,
    brute_force_match,
    build_affinity,
    project_assignment,
    select_top_m,
)
from .report import (
    RunReport,
    emit_json,
    emit_text,
    parse_json,
    report_from_result,
    rotation_error_deg,
    translation_error,
)
from .sampler import (
    RegistrationResult,
    SdrMatchResult,
    SdrsacConfig,
    csdrsac,
    ransac_baseline,
    sdr_matching,
    sdrsac,
    stopping_iterations,
)
from .sdp import (
    KktReport,
    SdpProblem,
    SdpSolution,
    SolveRecorder,
    assemble_problem,
    constraint_violations,
    dump_problem,
    psd_project,
    recording,
    solve_sdp,
    verify_kkt,
)
from .synthetic import (
    SyntheticInstance,
    SyntheticSpec,
    downsample_uniform,
    surface_blob,
    synth_generate,
    uniform_rotation,
)

__version__ = "0.1.0"

__all__ = [
    "AffinityMatrix",
    "CloudFormatError",
    "ConsensusResult",
    "CorrespondenceSet",
    "DegenerateGeometryError",
    "FractionalMatch",
    "IcpConfig",
    "IcpResult",
    "KktReport",
    "PointCloud",
    "RegistrationResult",
    "RigidTransform",
    "RunReport",
    "SdpProblem",
    "SdpSolution",
    "SdrMatchResult",
    "SdrsacConfig",
    "SolveRecorder",
    "SyntheticInstance",
    "SyntheticSpec",
    "apply_transform",
    "assemble_problem",
    "assignment_candidates",
    "brute_force_match",
    "build_affinity",
    "consensus_score",
    "constraint_violations",
    "csdrsac",
    "downsample_uniform",
    "dump_problem",
    "emit_json",
    "emit_text",
    "estimate_rigid",
    "load_cloud",
    "nearest_neighbor",
    "parse_json",
    "project_assignment",
    "psd_project",
    "ransac_baseline",
    "read_correspondences",
    "read_ply",
    "read_transform",
    "read_xyz",
    "recording",
    "refine_icp",
    "report_from_result",
    "rotation_error_deg",
    "save_cloud",
    "sdr_matching",
    "sdrsac",
    "select_top_m",
    "solve_sdp",
    "stopping_iterations",
    "surface_blob",
    "synth_generate",
    "translation_error",
    "uniform_rotation",
    "verify_kkt",
    "write_correspondences",
    "write_ply",
    "write_transform",
    "write_xyz",
    "__version__",
]
