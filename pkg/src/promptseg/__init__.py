"""Prompt-injected pre-training for kernel-based instance segmentation.

Pipeline: aligned text/vision features produce pseudo instance masks;
the masks become pooled region prompts that are matched and added to
the learnable kernels of a mask-prediction head; Hungarian-matched
composite losses supervise a small training loop; evaluation covers
class-agnostic detection AP and kernel activation atlases.
"""

__version__ = "0.1.0"

from . import backends
from .encoders import (Scene, TextBank, load_scene, load_text_bank,
                       save_scene, save_text_bank, synth_scene, synth_text_bank)
from .evaluation import (ActivationAtlas, Detection, activation_atlas,
                         average_precision, box_iou, diversity_report,
                         mean_average_precision)
from .geometry import BBox
from .head import (KernelBank, StageOutput, StageParams, forward,
                   group_features, init_kernel_bank, predict_masks,
                   update_stage)
from .losses import (Assignment, LossWeights, aux_loss, build_cost_matrix,
                     ce_mask_loss, dice_loss, focal_loss, hungarian, total_loss)
from .numerics import (GradTape, Tensor, avg_pool_region, grad, matmul,
                       normalize, read_ten, resize_bilinear, sigmoid, softmax,
                       write_ten)
from .prompts import (MatchResult, PromptSet, extract_prompts, inject,
                      inject_support, match, match_prompts, similarity_matrix)
from .proposals import (MaskProposal, ProposalSet, binarize_and_split,
                        score_map, tight_bbox)
from .train import (TrainConfig, compare_convergence, optimizer_step, pretrain)
