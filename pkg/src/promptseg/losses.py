"""Hungarian assignment and the composite pre-training loss.

Per stage, predictions are matched one-to-one to pseudo-mask targets by
minimum total cost; matched kernels receive focal classification, dice,
and cross-entropy mask terms, unmatched kernels are supervised toward
the no-object class, and the final stage adds an auxiliary kernel
classification term through the text embeddings. The assignment is
held constant during backpropagation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import backends
from .encoders import TextBank
from .errors import ContractError, DimensionError
from .head import StageOutput, StageVars
from .numerics import GradTape, Tensor
from .numerics.tape import Var
from .numerics.tensor import _sigmoid_raw, _softmax_raw, _softplus_raw
from .proposals import ProposalSet

DICE_EPS = 1e-3
PROB_CLAMP = 1e-7
FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 2.0
    lambda_dice: float = 4.0
    lambda_ce: float = 1.0
    lambda_aux: float = 2.0

    def __post_init__(self):
        for name in ("lambda_cls", "lambda_dice", "lambda_ce", "lambda_aux"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.lambda_cls, self.lambda_dice, self.lambda_ce, self.lambda_aux)


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]  # (kernel index, target index)
    total_cost: float
    unmatched_kernels: tuple[int, ...]

    @property
    def num_pairs(self) -> int:
        return len(self.pairs)


EMPTY_ASSIGNMENT = Assignment((), 0.0, ())


def focal_loss(prob: float, is_target: bool, gamma: float = FOCAL_GAMMA,
               alpha: float = FOCAL_ALPHA) -> float:
    """-alpha * (1 - p_t)^gamma * log(p_t), p_t = prob when the class is
    the target and 1 - prob otherwise. The probability is clamped away
    from 0 and 1 before use."""
    p_t = prob if is_target else 1.0 - prob
    p_t = min(max(p_t, PROB_CLAMP), 1.0 - PROB_CLAMP)
    return float(-alpha * (1.0 - p_t) ** gamma * np.log(p_t))


def dice_loss(pred: Tensor, gt: np.ndarray) -> float:
    """1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps), eps = 1e-3."""
    p = pred.data
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise DimensionError(f"dice shapes disagree: {p.shape} vs {g.shape}")
    inter = float((p * g).sum())
    denom = float(p.sum() + g.sum())
    return 1.0 - (2.0 * inter + DICE_EPS) / (denom + DICE_EPS)


def ce_mask_loss(pred_logits: Tensor, gt: np.ndarray) -> float:
    """Mean per-pixel binary cross-entropy in the logits-stable form
    softplus(l) - l*g."""
    l = pred_logits.data
    g = np.asarray(gt, dtype=np.float64)
    if l.shape != g.shape:
        raise DimensionError(f"ce shapes disagree: {l.shape} vs {g.shape}")
    return float((_softplus_raw(l) - l * g).mean())


def build_cost_matrix(stage: StageOutput, targets: ProposalSet,
                      weights: LossWeights) -> Tensor:
    """Pairing cost between every kernel and every target, reusing the
    training criterion: weighted focal + dice + cross-entropy."""
    num_targets = len(targets)
    if num_targets < 1:
        raise ContractError("cost matrix needs at least one target")
    n = stage.mask_logits.shape[0]
    logits = stage.mask_logits.data.reshape(n, -1)
    gt = targets.masks_flat()
    dice_c, ce_c = backends.mask_pair_costs(logits, gt, DICE_EPS)
    probs = _softmax_raw(stage.class_logits.data, 1)
    class_ids = targets.class_ids()
    p_sel = np.clip(probs[:, class_ids], PROB_CLAMP, 1.0 - PROB_CLAMP)
    cls_c = -FOCAL_ALPHA * (1.0 - p_sel) ** FOCAL_GAMMA * np.log(p_sel)
    cost = (weights.lambda_cls * cls_c + weights.lambda_dice * dice_c
            + weights.lambda_ce * ce_c)
    return Tensor(cost, copy=False)


def hungarian(cost: Tensor) -> Assignment:
    """Exact minimum-cost one-to-one assignment of min(N, L) pairs.

    Rectangular inputs behave like zero-cost dummy padding: every row
    (or column, whichever is scarcer) is matched and the dummies
    contribute nothing.
    """
    c = cost.data
    if c.ndim != 2:
        raise DimensionError(f"cost matrix must be 2-D, got {c.shape}")
    if c.size == 0:
        return EMPTY_ASSIGNMENT
    if not np.isfinite(c).all():
        raise ContractError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(c)
    order = np.argsort(rows)
    pairs = tuple((int(rows[i]), int(cols[i])) for i in order)
    total = float(sum(c[r, col] for r, col in pairs))
    matched = {r for r, _ in pairs}
    unmatched = tuple(i for i in range(c.shape[0]) if i not in matched)
    return Assignment(pairs, total, unmatched)


def aux_loss(kernels: Tensor, text_embeddings: Tensor, proj: Tensor,
             assign: Assignment, target_classes: np.ndarray) -> float:
    """Focal loss on the matched class probability of Q = proj(K) @ X^T,
    averaged over matched pairs."""
    if assign.num_pairs == 0:
        warnings.warn("aux_loss called with an empty assignment; returning 0",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    q = kernels.data @ proj.data @ text_embeddings.data
    probs = _softmax_raw(q, 1)
    target_classes = np.asarray(target_classes, dtype=np.int64)
    terms = [focal_loss(float(probs[n, target_classes[j]]), True)
             for n, j in assign.pairs]
    return float(np.mean(terms))


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    cls: float
    dice: float
    ce: float
    aux: float
    matched_pairs: int
    weights: tuple[float, float, float, float]
    assignments: tuple[Assignment, ...] = field(default=())


def _stage_class_targets(num_kernels: int, num_classes: int,
                         assign: Assignment,
                         target_ids: np.ndarray) -> np.ndarray:
    targets = np.full(num_kernels, num_classes, dtype=np.int64)  # no-object
    for n, j in assign.pairs:
        targets[n] = target_ids[j]
    return targets


def total_loss(stages: Sequence[StageOutput], targets: ProposalSet,
               text: TextBank | Tensor, weights: LossWeights,
               aux_proj: Tensor,
               assignments: Optional[Sequence[Assignment]] = None) -> LossBreakdown:
    """Composite loss averaged across stages, with the auxiliary term on
    the final stage only. Pass `assignments` to reuse frozen matches
    (the convention for gradient checks)."""
    if len(stages) < 1:
        raise ContractError("need at least one stage output")
    xt = text.embeddings if isinstance(text, TextBank) else text
    num_targets = len(targets)
    target_ids = targets.class_ids()
    gt = targets.masks_flat()
    if assignments is None:
        assignments = [
            hungarian(build_cost_matrix(st, targets, weights)) if num_targets else
            Assignment((), 0.0, tuple(range(st.mask_logits.shape[0])))
            for st in stages]
    stage_totals, cls_terms, dice_terms, ce_terms = [], [], [], []
    aux_term = 0.0
    for idx, (st, assign) in enumerate(zip(stages, assignments)):
        n = st.mask_logits.shape[0]
        num_classes = st.class_logits.shape[1] - 1
        probs = _softmax_raw(st.class_logits.data, 1)
        cls_targets = _stage_class_targets(n, num_classes, assign, target_ids)
        l_cls = float(np.mean([
            focal_loss(float(probs[i, cls_targets[i]]), True) for i in range(n)]))
        if assign.num_pairs:
            logits = st.mask_logits.data.reshape(n, -1)
            d_terms, c_terms = [], []
            for kn, tj in assign.pairs:
                row = Tensor(logits[kn], copy=False)
                d_terms.append(dice_loss(Tensor(_sigmoid_raw(logits[kn]), copy=False),
                                         gt[tj]))
                c_terms.append(ce_mask_loss(row, gt[tj]))
            l_dice = float(np.mean(d_terms))
            l_ce = float(np.mean(c_terms))
        else:
            l_dice = 0.0
            l_ce = 0.0
        stage_total = (weights.lambda_cls * l_cls + weights.lambda_dice * l_dice
                       + weights.lambda_ce * l_ce)
        if idx == len(stages) - 1:
            if assign.num_pairs:
                aux_term = aux_loss(st.kernels, xt, aux_proj, assign, target_ids)
            stage_total += weights.lambda_aux * aux_term
        stage_totals.append(stage_total)
        cls_terms.append(l_cls)
        dice_terms.append(l_dice)
        ce_terms.append(l_ce)
    return LossBreakdown(
        total=float(np.mean(stage_totals)),
        cls=float(np.mean(cls_terms)),
        dice=float(np.mean(dice_terms)),
        ce=float(np.mean(ce_terms)),
        aux=float(aux_term),
        matched_pairs=assignments[-1].num_pairs,
        weights=weights.as_tuple(),
        assignments=tuple(assignments),
    )


# ---------------------------------------------------------------------------
# differentiable construction for training
# ---------------------------------------------------------------------------

def _tape_focal_mean(tape: GradTape, probs: Var, onehot: np.ndarray) -> Var:
    """Mean focal term over the rows selected by a one-hot matrix."""
    p_sel = tape.sum(tape.mul(probs, tape.const(onehot)), axis=1)
    p = tape.clip(p_sel, PROB_CLAMP, 1.0 - PROB_CLAMP)
    weight = tape.power(tape.sub(1.0, p), FOCAL_GAMMA)
    per_row = tape.mul(tape.mul(weight, tape.log(p)), -FOCAL_ALPHA)
    return tape.mean(per_row)


def total_loss_on_tape(tape: GradTape, stage_vars: Sequence[StageVars],
                       targets: ProposalSet, text_embeddings: np.ndarray,
                       aux_proj: Var, weights: LossWeights,
                       assignments: Optional[Sequence[Assignment]] = None,
                       ) -> tuple[Var, LossBreakdown]:
    """Build the composite loss on an existing tape.

    Assignments are computed from current values (or reused when given,
    the frozen-match convention for gradient checks) and enter the
    graph as constants; returns the scalar loss Var plus the same
    breakdown the eager path reports.
    """
    if len(stage_vars) < 1:
        raise ContractError("need at least one stage")
    num_targets = len(targets)
    target_ids = targets.class_ids()
    gt = targets.masks_flat()
    stage_totals = []
    cls_vals, dice_vals, ce_vals = [], [], []
    aux_val = 0.0
    frozen = assignments
    assignments = []
    for idx, sv in enumerate(stage_vars):
        n, n_px = sv.mask_logits.shape
        num_classes = sv.class_logits.shape[1] - 1
        if frozen is not None:
            assign = frozen[idx]
        elif num_targets:
            dice_c, ce_c = backends.mask_pair_costs(sv.mask_logits.array, gt, DICE_EPS)
            probs_now = _softmax_raw(sv.class_logits.array, 1)
            p_sel = np.clip(probs_now[:, target_ids], PROB_CLAMP, 1.0 - PROB_CLAMP)
            cls_c = -FOCAL_ALPHA * (1.0 - p_sel) ** FOCAL_GAMMA * np.log(p_sel)
            assign = hungarian(Tensor(
                weights.lambda_cls * cls_c + weights.lambda_dice * dice_c
                + weights.lambda_ce * ce_c, copy=False))
        else:
            assign = Assignment((), 0.0, tuple(range(n)))
        assignments.append(assign)

        cls_targets = _stage_class_targets(n, num_classes, assign, target_ids)
        onehot = np.zeros((n, num_classes + 1))
        onehot[np.arange(n), cls_targets] = 1.0
        probs = tape.softmax(sv.class_logits, axis=1)
        l_cls = _tape_focal_mean(tape, probs, onehot)

        terms = [tape.mul(l_cls, weights.lambda_cls)]
        if assign.num_pairs:
            rows = np.array([p[0] for p in assign.pairs])
            cols = np.array([p[1] for p in assign.pairs])
            selector = np.zeros((len(rows), n))
            selector[np.arange(len(rows)), rows] = 1.0
            matched_logits = tape.matmul(tape.const(selector), sv.mask_logits)
            gt_sel = tape.const(gt[cols])
            pred = tape.sigmoid(matched_logits)
            inter = tape.sum(tape.mul(pred, gt_sel), axis=1)
            denom = tape.add(tape.add(tape.sum(pred, axis=1),
                                      tape.const(gt[cols].sum(axis=1))), DICE_EPS)
            ratio = tape.mul(tape.add(tape.mul(inter, 2.0), DICE_EPS),
                             tape.power(denom, -1.0))
            l_dice = tape.mean(tape.sub(1.0, ratio))
            bce = tape.sub(tape.softplus(matched_logits),
                           tape.mul(matched_logits, gt_sel))
            l_ce = tape.mean(bce)
            terms.append(tape.mul(l_dice, weights.lambda_dice))
            terms.append(tape.mul(l_ce, weights.lambda_ce))
            dice_vals.append(float(l_dice.array))
            ce_vals.append(float(l_ce.array))
        else:
            dice_vals.append(0.0)
            ce_vals.append(0.0)
        if idx == len(stage_vars) - 1 and assign.num_pairs:
            q = tape.matmul(tape.matmul(sv.kernels, aux_proj),
                            tape.const(text_embeddings))
            q_probs = tape.softmax(q, axis=1)
            rows = np.array([p[0] for p in assign.pairs])
            # focal over matched rows only: gather rows, then gather classes
            sel_rows = np.zeros((len(rows), n))
            sel_rows[np.arange(len(rows)), rows] = 1.0
            q_sel = tape.matmul(tape.const(sel_rows), q_probs)
            pair_onehot = np.zeros((len(rows), text_embeddings.shape[1]))
            pair_onehot[np.arange(len(rows)),
                        target_ids[[p[1] for p in assign.pairs]]] = 1.0
            l_aux = _tape_focal_mean(tape, q_sel, pair_onehot)
            terms.append(tape.mul(l_aux, weights.lambda_aux))
            aux_val = float(l_aux.array)
        stage_total = terms[0]
        for t in terms[1:]:
            stage_total = tape.add(stage_total, t)
        stage_totals.append(stage_total)
        cls_vals.append(float(l_cls.array))
    total = stage_totals[0]
    for t in stage_totals[1:]:
        total = tape.add(total, t)
    total = tape.mul(total, 1.0 / len(stage_totals))
    breakdown = LossBreakdown(
        total=float(total.array),
        cls=float(np.mean(cls_vals)),
        dice=float(np.mean(dice_vals)),
        ce=float(np.mean(ce_vals)),
        aux=aux_val,
        matched_pairs=assignments[-1].num_pairs,
        weights=weights.as_tuple(),
        assignments=tuple(assignments),
    )
    return total, breakdown
