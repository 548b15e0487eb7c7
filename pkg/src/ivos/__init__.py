"""Training-free interactive video object segmentation engine.

The round loop: simulate (or receive) point/box prompts on one frame, track
them across the restricted propagation range, decode per-frame masks with a
multi-pass prompt-driven segmenter backed by a cross-round space-time
memory, blend against the previous round near the anchors, score, and pick
the next worst frame.
"""

from .core import (FeatureMap, LabelMask, PromptSet, QueryBox, QueryPoint,
                   RunConfig, default_config, merge_object_scores, seeded_rng)
from .engine import (Backends, SessionState, StepTimer, WallTimer,
                     blend_frame_mask, compute_tracking_range, run_round,
                     run_simulated_session)

__version__ = "0.1.0"

__all__ = [
    "FeatureMap", "LabelMask", "PromptSet", "QueryBox", "QueryPoint",
    "RunConfig", "default_config", "merge_object_scores", "seeded_rng",
    "Backends", "SessionState", "StepTimer", "WallTimer",
    "blend_frame_mask", "compute_tracking_range", "run_round",
    "run_simulated_session", "__version__",
]
