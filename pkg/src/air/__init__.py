"""Attention-in-reasoning toolkit.

Decomposes visual-reasoning questions into atomic operation sequences with
per-step regions of interest, scores attention maps against that process,
builds correct/incorrect attention supervision targets, and ships a
desk-scale progressive reasoning-attention model for controlled experiments.
"""

from .attention import (
    AttentionMap,
    FixationRecord,
    FixationSequence,
    build_fixation_map,
    center_prior,
    proposals_to_map,
    read_airm,
    resample_map,
    temporal_bins,
    write_airm,
)
from .metrics import (
    aire_box,
    aire_step,
    auc_judd,
    cc,
    edr,
    nss,
    pearson,
    score_question,
    semantic_alignment,
    spearman,
    split_half_consistency,
    standardize,
)
from .program_ir import (
    AliasTable,
    AtomicOp,
    OperationTriplet,
    RawProgramEntry,
    ReasoningProgram,
    Step,
    parse_program,
    validate_program,
)
from .scene_graph import (
    BoundingBox,
    CoOccurrenceTable,
    SceneGraph,
    SceneObject,
    StepROIs,
    build_cooccurrence,
    resolve_rois,
    screen_question,
)
from .supervision import (
    LossConfig,
    NegativeAttentionMap,
    ProposalSet,
    StepAttentionTarget,
    airc_total_loss,
    airm_total_loss,
    gt_attention,
    iou,
    kl_attention_loss,
    mine_hard_negatives,
    neg_ce_loss,
    negative_map,
)

__version__ = "0.1.0"
