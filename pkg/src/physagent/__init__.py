"""Desk-scale closed-loop manipulation agent.

Plan -> generate rollout -> decode to commands -> execute -> evaluate, over
a deterministic planar bimanual simulator, with the keypoint-feature
gradient-boosting adapter and a statistics harness for iterative-recovery
experiments.
"""

from . import adapter, evaluation, gbdt, kinematics, loop, reasoner, remote, world
from .adapter import (
    AdapterDataset,
    AdapterModel,
    FeatureVector,
    OracleDecoder,
    collect_dataset,
    extract_features,
    fit_adapter,
    predict_commands,
)
from .evaluation import (
    AnovaResult,
    SurvivalCurve,
    one_way_anova,
    summary_stats,
    survival_curve,
)
from .kinematics import (
    CameraModel,
    JointState,
    KeypointFrame,
    KinematicChain,
    RobotModel,
    default_camera,
    default_robot,
    forward_kinematics,
    project,
    step,
)
from .loop import (
    DeskSimulator,
    EpisodeConfig,
    EpisodeResult,
    SuiteConfig,
    execute_rollout,
    run_episode,
    run_suite,
)
from .reasoner import OracleConfig, OracleReasoner, Plan, Subtask, Verdict, VerdictKind
from .world import (
    FailureConfig,
    FailureMode,
    Observation,
    Rollout,
    RolloutRequest,
    SceneObject,
    SceneState,
    SyntheticGenerator,
    inverse_kinematics,
    observe,
)

__version__ = "0.1.0"
