"""splatkit: pair graphs, global pointmap alignment and KNN-triggered densification."""

from . import io
from .alignment import (
    AlignmentConfig,
    AlignmentResult,
    AlignmentState,
    EdgeObservation,
    GlobalAligner,
    alignment_energy,
    extract_poses,
    fuse_global_cloud,
    init_alignment,
    optimize_global,
    optimize_global_detailed,
)
from .core_types import (
    ConfidenceMap,
    GaussianPrimitive,
    GaussianSet,
    PairGraph,
    PointMap,
    RigidPose,
    SimilarityTransform,
    Trajectory,
)
from .densification import DensifyConfig, DensifyReport, KNNDensifier, SpatialIndex, classify_large, densify_step
from .exceptions import SplatkitError
from .pipeline import compare_schemes, run_pipeline, run_sweep
from .synthetic import SceneSpec, gen_edge_observations, gen_gaussian_set, gen_scene, render_views
from .trajectory_eval import TrajectoryMetrics, ate, evaluate, rpe, umeyama_align
from .view_grouping import PairGraphBuilder, PairingScheme, build_pair_graph, image_to_feature, pair_graph_stats

__version__ = "0.1.0"
