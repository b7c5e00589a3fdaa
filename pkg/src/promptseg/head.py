"""Kernel-based mask prediction head with iterative kernel updates.

Masks are 1x1 dynamic convolutions of kernels with the backbone map.
Each update stage groups mask-weighted features, blends them into the
kernels through a sigmoid gate, and re-predicts masks and class logits:

    x  = group_features(mask_logits, F)
    g  = sigmoid(psi1(phi1(k) + phi2(x)))
    k' = g * psi3(x) + (1 - g) * psi4(k)

This is a deliberately simplified update (tagged ``simplified-v1`` in
run reports): no kernel-to-kernel attention, one gate instead of two.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .numerics import GradTape, Tensor, quantize32
from .numerics.tape import Var
from .numerics.tensor import _matmul_raw, _sigmoid_raw, _softmax_raw

HEAD_VARIANT = "simplified-v1"
GROUP_EPS = 1e-6
KERNEL_INIT_SIGMA = 0.01


@dataclass(frozen=True)
class StageParams:
    """One update stage: two gate projections, a gate layer, two update
    layers, and the per-stage classifier."""

    phi1: Tensor        # (D', D')
    phi2: Tensor        # (D', D')
    psi1_w: Tensor      # (D', D')
    psi1_b: Tensor      # (D',)
    psi3_w: Tensor
    psi3_b: Tensor
    psi4_w: Tensor
    psi4_b: Tensor
    cls_w: Tensor       # (D', C+1)
    cls_b: Tensor       # (C+1,)


@dataclass(frozen=True)
class KernelBank:
    """Learnable kernels plus all per-stage head parameters."""

    kernels: Tensor               # (N, D')
    stages: tuple[StageParams, ...]
    aux_proj: Tensor              # (D', D) bridge into the text space

    def __post_init__(self):
        if self.kernels.shape[0] < 1:
            raise ContractError("need at least one kernel")
        if len(self.stages) < 1:
            raise ContractError("need at least one update stage")

    @property
    def num_kernels(self) -> int:
        return self.kernels.shape[0]

    @property
    def width(self) -> int:
        return self.kernels.shape[1]

    @property
    def num_stages(self) -> int:
        return len(self.stages)


@dataclass(frozen=True)
class StageOutput:
    kernels: Tensor       # (N, D')
    mask_logits: Tensor   # (N, H, W)
    class_logits: Tensor  # (N, C+1)


def init_kernel_bank(num_kernels: int, width: int, text_dim: int,
                     num_classes: int, num_stages: int, seed: int) -> KernelBank:
    """Seeded Gaussian init. Kernels use sigma 0.01; the update layers
    start near identity so early masks pass injected structure through."""
    if num_stages < 1:
        raise ContractError("need at least one stage")
    rng = np.random.default_rng(seed)

    def draw(shape, sigma):
        return Tensor(quantize32(rng.normal(0.0, sigma, size=shape)), copy=False)

    def near_identity(n, sigma=0.01):
        return Tensor(quantize32(np.eye(n) + rng.normal(0.0, sigma, size=(n, n))),
                      copy=False)

    kernels = draw((num_kernels, width), KERNEL_INIT_SIGMA)
    stages = []
    for _ in range(num_stages):
        stages.append(StageParams(
            phi1=draw((width, width), 0.01),
            phi2=draw((width, width), 0.01),
            psi1_w=draw((width, width), 0.01),
            psi1_b=Tensor(np.zeros(width), copy=False),
            psi3_w=near_identity(width),
            psi3_b=Tensor(np.zeros(width), copy=False),
            psi4_w=near_identity(width),
            psi4_b=Tensor(np.zeros(width), copy=False),
            cls_w=draw((width, num_classes + 1), 0.01),
            cls_b=Tensor(np.zeros(num_classes + 1), copy=False),
        ))
    aux_proj = draw((width, text_dim), 1.0 / np.sqrt(width))
    return KernelBank(kernels, tuple(stages), aux_proj)


# ---------------------------------------------------------------------------
# eager operations
# ---------------------------------------------------------------------------

def predict_masks(kernels: Tensor, fpn_features: Tensor) -> Tensor:
    """Mask logits (N, H, W): logits[n, p] = <kernel_n, F[:, p]>."""
    k = kernels.data
    f = fpn_features.data
    if f.ndim != 3 or k.ndim != 2:
        raise DimensionError(f"need (N,D') kernels and (D',H,W) features, "
                             f"got {k.shape} and {f.shape}")
    d, h, w = f.shape
    if k.shape[1] != d:
        raise DimensionError(f"kernel width {k.shape[1]} != feature channels {d}")
    logits = _matmul_raw(k, f.reshape(d, h * w))
    return Tensor(logits.reshape(k.shape[0], h, w), copy=False)


def group_features(mask_logits: Tensor, fpn_features: Tensor) -> Tensor:
    """Sigmoid-mask-weighted mean feature per kernel, shape (N, D')."""
    ml = mask_logits.data
    f = fpn_features.data
    if ml.shape[1:] != f.shape[1:]:
        raise DimensionError(f"spatial shapes disagree: {ml.shape} vs {f.shape}")
    n = ml.shape[0]
    d = f.shape[0]
    w = _sigmoid_raw(ml.reshape(n, -1))
    num = w @ f.reshape(d, -1).T
    den = w.sum(axis=1, keepdims=True) + GROUP_EPS
    return Tensor(num / den, copy=False)


def update_stage(kernels: Tensor, mask_logits: Tensor, fpn_features: Tensor,
                 params: StageParams) -> StageOutput:
    """One kernel-update iteration producing refreshed kernels, masks,
    and class logits."""
    k = kernels.data
    x = group_features(mask_logits, fpn_features).data
    gate_in = _matmul_raw(k, params.phi1.data) + _matmul_raw(x, params.phi2.data)
    g = _sigmoid_raw(_matmul_raw(gate_in, params.psi1_w.data) + params.psi1_b.data)
    upd = _matmul_raw(x, params.psi3_w.data) + params.psi3_b.data
    keep = _matmul_raw(k, params.psi4_w.data) + params.psi4_b.data
    k_new = g * upd + (1.0 - g) * keep
    new_logits = predict_masks(Tensor(k_new, copy=False), fpn_features)
    cls = _matmul_raw(k_new, params.cls_w.data) + params.cls_b.data
    return StageOutput(Tensor(k_new, copy=False), new_logits, Tensor(cls, copy=False))


def forward(bank: KernelBank, fpn_features: Tensor,
            injected_prompts: Optional[Tensor] = None,
            num_stages: Optional[int] = None) -> list[StageOutput]:
    """Run injection (when prompts are given), the initial prediction,
    and every update stage; returns all stage outputs for per-stage
    supervision."""
    s = bank.num_stages if num_stages is None else int(num_stages)
    if not 1 <= s <= bank.num_stages:
        raise ContractError(f"num_stages must be in [1, {bank.num_stages}], got {s}")
    k = bank.kernels
    if injected_prompts is not None:
        if injected_prompts.shape != k.shape:
            raise DimensionError(
                f"injected prompts {injected_prompts.shape} != kernels {k.shape}")
        k = Tensor(k.data + injected_prompts.data, copy=False)
    logits = predict_masks(k, fpn_features)
    outputs = []
    for i in range(s):
        out = update_stage(k, logits, fpn_features, bank.stages[i])
        outputs.append(out)
        k, logits = out.kernels, out.mask_logits
    return outputs


def class_probabilities(stage: StageOutput) -> Tensor:
    """Softmax over C+1 classes (no-object last)."""
    return Tensor(_softmax_raw(stage.class_logits.data, 1), copy=False)


# ---------------------------------------------------------------------------
# tape-level forward for training
# ---------------------------------------------------------------------------

PARAM_FIELDS = ("phi1", "phi2", "psi1_w", "psi1_b", "psi3_w", "psi3_b",
                "psi4_w", "psi4_b", "cls_w", "cls_b")


def bank_to_arrays(bank: KernelBank) -> dict[str, np.ndarray]:
    out = {"kernels": bank.kernels.data.copy(),
           "aux_proj": bank.aux_proj.data.copy()}
    for i, st in enumerate(bank.stages):
        for field in PARAM_FIELDS:
            out[f"stage{i}.{field}"] = getattr(st, field).data.copy()
    return out


def arrays_to_bank(arrays: dict[str, np.ndarray], num_stages: int) -> KernelBank:
    stages = []
    for i in range(num_stages):
        stages.append(StageParams(**{
            field: Tensor(arrays[f"stage{i}.{field}"])
            for field in PARAM_FIELDS}))
    return KernelBank(Tensor(arrays["kernels"]), tuple(stages),
                      Tensor(arrays["aux_proj"]))


@dataclass(frozen=True)
class StageVars:
    kernels: Var
    mask_logits: Var  # (N, H*W), flat for loss work
    class_logits: Var


def forward_on_tape(tape: GradTape, params: dict[str, Var], f_flat: Var,
                    f_flat_t: Var, num_stages: int,
                    injected_prompts: Optional[np.ndarray] = None) -> list[StageVars]:
    """Differentiable forward pass over flat (D', H*W) features.

    `params` maps the names from `bank_to_arrays` to tape parameters;
    injected prompts enter as constants, so gradients reach the base
    kernels only.
    """
    k = params["kernels"]
    if injected_prompts is not None:
        k = tape.add(k, tape.const(injected_prompts))
    logits = tape.matmul(k, f_flat)
    outputs = []
    for i in range(num_stages):
        w = tape.sigmoid(logits)
        num = tape.matmul(w, f_flat_t)
        den = tape.add(tape.sum(w, axis=1, keepdims=True), GROUP_EPS)
        x = tape.mul(num, tape.power(den, -1.0))
        p = lambda field: params[f"stage{i}.{field}"]
        gate_in = tape.add(tape.matmul(k, p("phi1")), tape.matmul(x, p("phi2")))
        g = tape.sigmoid(tape.add(tape.matmul(gate_in, p("psi1_w")), p("psi1_b")))
        upd = tape.add(tape.matmul(x, p("psi3_w")), p("psi3_b"))
        keep = tape.add(tape.matmul(k, p("psi4_w")), p("psi4_b"))
        k = tape.add(tape.mul(g, upd), tape.mul(tape.sub(1.0, g), keep))
        logits = tape.matmul(k, f_flat)
        cls = tape.add(tape.matmul(k, p("cls_w")), p("cls_b"))
        outputs.append(StageVars(k, logits, cls))
    return outputs


def stage_outputs_from_vars(stage_vars: Sequence[StageVars],
                            height: int, width: int) -> list[StageOutput]:
    outs = []
    for sv in stage_vars:
        n = sv.mask_logits.shape[0]
        outs.append(StageOutput(
            sv.kernels.value,
            Tensor(sv.mask_logits.array.reshape(n, height, width)),
            sv.class_logits.value))
    return outs
