"""Lane-level planning toolkit.

Lane scenes are pairs of left/right edge point lists with binary traffic
attributes. The package covers the full pipeline: a toy transformer that
predicts lane scenes from synthetic features, attribute feature fusion, a
target-guided planning head, matching-based losses with verified gradients,
a deterministic interpreter and model-predictive controller, and a closed-loop
synthetic driving harness with benchmark-style metrics.
"""

from .controller import ControlCommand, MpcConfig, VehicleState, bicycle_step, track
from .double_edge import (
    DoubleEdge,
    Edge,
    EdgePoint,
    SceneAnnotation,
    TargetPoint,
    Violation,
    deserialize,
    lane_polygon,
    serialize,
    validate,
)
from .fusion import FusionParams, blend, expand_lane_attrs, fuse, fuse_naive, fuse_occupancy, int2dir
from .interpreter import Trajectory, assemble_trajectory, binarize, generate_path, stop_decision
from .losses import (
    Assignment,
    LossReport,
    LossWeights,
    align,
    align_exhaustive,
    edge_bev_loss,
    focal_loss,
    grad_check,
    lane_cost,
    plan_loss,
    point_cost,
    smooth_l1,
    total_loss,
)
from .perception import (
    FULL_CONFIG,
    SMALL_CONFIG,
    FeatureBundle,
    NetConfig,
    PerceptionNet,
    PerceptionOutput,
    QuerySet,
    init_weights,
    load_weights,
    save_weights,
    synthetic_features,
)
from .scenarios import SCENARIO_KINDS, AgentSpec, ScenarioSpec, WorldLane, gen_scenario, load_scenario, save_scenario
from .simulation import (
    EpisodeResult,
    RunConfig,
    SceneConfig,
    WorldState,
    annotate,
    init_world,
    run_episode,
    step,
)
from .target_planner import PlanOutput, TargetPlanner
from .tensor_ops import ShapeError, matmul, reshape, sinusoidal_pe, softmax, transpose

__version__ = "0.1.0"
