"""Low-resolution-first VQA with on-demand high-resolution crop retrieval.

Crop geometry, visual-token accounting, the tool-call protocol, the composite
reward, GRPO for the first-turn crop decision, the data-curation pipeline, a
synthetic environment and evaluation diagnostics.
"""
from .geometry import (CROP_IDS, CROP_RECTS, CropCandidate, CropSet, InvalidInputError,
                       MappingConfig, Rect, candidate_crops, crop_set_area, make_rect,
                       map_bbox_to_crops, rect_iou)
from .tokens import ImageDims, TokenAccount, TokenModel, low_res_dims, rtr_aggregate, rtr_sample, visual_tokens
from .reward import RewardBreakdown, RewardConfig, anls_score, tool_cost, trajectory_reward
from .protocol import (CropRequest, DirectAnswer, ParseOutcome, Sample, Transcript, Turn,
                       build_transcript, emit_tool_call, parse_first_turn, render_system_prompt)
from .grpo import (GrpoConfig, Policy, clipped_term, group_advantages, grpo_loss, kl_categorical,
                   sft_init_policy, train_grpo)
from .sim_env import EnvConfig, Episode, SimEnv, env_answer, gen_episode, optimal_policy_value
from .metrics import CdpReport, EvalRecord, call_confusion, eval_report, judge_agreement, region_match

__version__ = "0.1.0"
