"""Desk-scale toolkit for agentic panoramic-radiograph interpretation.

The package covers the full loop: symmetry-aware imaging tools (zoom and
contralateral mirror comparison), a multi-turn episode engine with a strict
action grammar, rubric and gated-curiosity rewards, group-relative advantage
math, a trajectory-construction pipeline for supervised traces, a synthetic
symmetric-radiograph generator with scripted reference policies, and an
evaluation harness with local and remote judges.
"""

from .builder import (
    BuilderError,
    DefaultAnswerability,
    JudgeUnavailable,
    KTooLarge,
    Proposal,
    SchemaViolation,
    TrainingRecord,
    build_training_record,
    categorize_findings,
    decide_tool,
    export_records,
    import_records,
    kmeans_proposals,
    synthesize_trajectory,
    validate_record,
)
from .config import RunConfig, load_config
from .evaluation import (
    BenchmarkItem,
    EvalReport,
    JudgeFailure,
    LocalRuleJudge,
    RemoteJudge,
    RemoteJudgeConfig,
    dynamics_report,
    evaluate,
    read_benchmark,
    stability_stats,
    write_benchmark,
)
from .findings import Finding, findings_from_text, render_report
from .grpo import ClipRange, GroupRollout, GroupTooSmall, clipped_term, group_advantages, grpo_objective
from .imagefiles import read_image, write_image
from .imaging import (
    Bounds,
    DualView,
    ImagingError,
    RasterImage,
    Region,
    RegionOutOfBounds,
    crop,
    mirror_in,
    mirror_pixels,
    mirror_region,
    pad_region,
    zoom_in,
)
from .rewards import (
    ExplorationTracker,
    GateParams,
    RewardBreakdown,
    RewardWeights,
    diag_reward,
    hybrid_reward,
    rubric_score,
    sft_nll,
)
from .synthetic import (
    AnnotatedCase,
    CATEGORY_OFFSETS,
    DynamicsLog,
    Plant,
    SyntheticSpec,
    ToyConfig,
    generate_case,
    make_benchmark,
    run_toy_grpo,
    scripted_policy,
    tooth_cells,
)
from .teeth import InvalidCode, contralateral, convert_tooth_notation, is_valid_fdi
from .trajectory import (
    EpisodeFinished,
    Finalize,
    MirrorIn,
    NoActionFound,
    PolicyFailure,
    Trajectory,
    ZoomIn,
    new_episode,
    parse_action,
    replay_policy,
    run_episode,
    serialize_action,
    serialize_trajectory_line,
    split_response,
    step,
    trajectory_stats,
)

__version__ = "0.1.0"
