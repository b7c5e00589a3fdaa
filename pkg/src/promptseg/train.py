"""Pre-training loop over synthetic or fixture scenes.

One scene per step in a seeded cyclic order; pseudo masks and prompts
are precomputed per scene since they do not depend on the model. Each
step matches prompts against the current kernels, runs the stage
forward on a tape, applies the composite loss, and takes one decoupled
weight-decay adaptive-moment step. Runs are bit-deterministic in
(config, scenes, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .encoders import Scene, TextBank
from .errors import ConfigError, ContractError
from .head import (KernelBank, arrays_to_bank, bank_to_arrays,
                   forward_on_tape, init_kernel_bank)
from .losses import LossBreakdown, LossWeights, total_loss_on_tape
from .numerics import GradTape, Tensor
from .prompts import MATCH_STRATEGIES, PromptSet, extract_prompts, match, similarity_matrix
from .proposals import ProposalSet, binarize_and_split, score_map

STRATEGIES = MATCH_STRATEGIES + ("none",)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    learning_rate: float = 1e-4
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    num_stages: int = 3
    num_kernels: int = 8  # 100 at full scale
    strategy: str = "cosine"
    loss_weights: LossWeights = field(default_factory=LossWeights)
    norm_mode: str = "l2"
    tau: float = 0.5
    min_area: int = 16

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        for name in ("learning_rate", "beta1", "beta2", "eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.num_stages < 1 or self.num_kernels < 1:
            raise ConfigError("num_stages and num_kernels must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   state: AdamState, cfg: TrainConfig) -> dict[str, np.ndarray]:
    """One decoupled-weight-decay adaptive-moment update, in place on
    the state and returning fresh parameter arrays."""
    if set(params) != set(grads):
        raise ContractError("parameter and gradient names disagree")
    state.t += 1
    t = state.t
    out = {}
    for name in params:
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise ContractError(
                f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        out[name] = p - cfg.learning_rate * (
            m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p)
    return out


@dataclass(frozen=True)
class LogRow:
    step: int
    total: float
    cls: float
    dice: float
    ce: float
    aux: float
    matched_pairs: int

    @classmethod
    def from_breakdown(cls, step: int, b: LossBreakdown) -> "LogRow":
        return cls(step, b.total, b.cls, b.dice, b.ce, b.aux, b.matched_pairs)


TRAIN_LOG_HEADER = ("step", "total", "cls", "dice", "ce", "aux", "matched_pairs")


def write_train_log(rows: Sequence[LogRow], path) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAIN_LOG_HEADER)
        for r in rows:
            writer.writerow([r.step, repr(r.total), repr(r.cls), repr(r.dice),
                             repr(r.ce), repr(r.aux), r.matched_pairs])


@dataclass(frozen=True)
class ScenePrep:
    """Per-scene state that does not depend on the model."""

    scene: Scene
    proposals: ProposalSet
    prompts: PromptSet
    f_flat: np.ndarray    # (D', H*W)
    f_flat_t: np.ndarray  # (H*W, D')


def prepare_scene(scene: Scene, bank: TextBank, cfg: TrainConfig) -> ScenePrep:
    scores = score_map(scene.pixel_features, bank.embeddings, cfg.norm_mode)
    props = binarize_and_split(scores, cfg.tau, cfg.min_area,
                               scene_id=scene.scene_id, mode=cfg.norm_mode)
    prompts = extract_prompts(scene.fpn_features, props)
    f = scene.fpn_features.data
    f_flat = f.reshape(f.shape[0], -1)
    return ScenePrep(scene, props, prompts,
                     np.ascontiguousarray(f_flat),
                     np.ascontiguousarray(f_flat.T))


@dataclass(frozen=True)
class PretrainResult:
    bank: KernelBank
    initial_bank: KernelBank
    log: tuple[LogRow, ...]
    config: TrainConfig


def _select_prompts(kernels: np.ndarray, prep: ScenePrep, strategy: str,
                    seed) -> Optional[np.ndarray]:
    if strategy == "none" or len(prep.prompts) == 0:
        return None
    sims = similarity_matrix(Tensor(kernels, copy=False), prep.prompts.vectors)
    chosen = match(sims, strategy, seed=seed, num_kernels=kernels.shape[0])
    return prep.prompts.vectors.data[chosen]


def pretrain(scenes: Sequence[Scene], bank: TextBank, cfg: TrainConfig,
             preps: Optional[Sequence[ScenePrep]] = None) -> PretrainResult:
    """Run the full loop and return the trained bank plus the loss log."""
    cfg.validate()
    if len(scenes) < 1:
        raise ConfigError("need at least one scene")
    for sc in scenes:
        if sc.feature_dim != bank.feature_dim:
            raise ConfigError(
                f"scene feature width {sc.feature_dim} != bank width {bank.feature_dim}")
    widths = {sc.fpn_dim for sc in scenes}
    if len(widths) != 1:
        raise ConfigError(f"scenes disagree on backbone width: {sorted(widths)}")
    if preps is None:
        preps = [prepare_scene(sc, bank, cfg) for sc in scenes]

    init_bank = init_kernel_bank(cfg.num_kernels, widths.pop(), bank.feature_dim,
                                 bank.num_classes, cfg.num_stages, cfg.seed)
    params = bank_to_arrays(init_bank)
    state = AdamState.fresh(params)
    order = np.random.default_rng(cfg.seed).permutation(len(scenes))
    xt = bank.embeddings.data
    rows: list[LogRow] = []
    for step in range(cfg.steps):
        prep = preps[order[step % len(order)]]
        injected = _select_prompts(params["kernels"], prep, cfg.strategy,
                                   seed=(cfg.seed, step))
        tape = GradTape()
        pvars = {name: tape.param(name, Tensor(arr, copy=False))
                 for name, arr in params.items()}
        f_flat = tape.const(prep.f_flat)
        f_flat_t = tape.const(prep.f_flat_t)
        stage_vars = forward_on_tape(tape, pvars, f_flat, f_flat_t,
                                     cfg.num_stages, injected)
        loss, breakdown = total_loss_on_tape(tape, stage_vars, prep.proposals,
                                             xt, pvars["aux_proj"], cfg.loss_weights)
        rows.append(LogRow.from_breakdown(step, breakdown))
        grads = {name: g.data for name, g in tape.grad(loss).items()}
        params = optimizer_step(params, grads, state, cfg)
    return PretrainResult(arrays_to_bank(params, cfg.num_stages), init_bank,
                          tuple(rows), cfg)


@dataclass(frozen=True)
class CompareReport:
    curves: dict[str, tuple[LogRow, ...]]
    threshold: float
    steps_to_threshold: dict[str, Optional[int]]
    final_loss: dict[str, float]


def compare_convergence(scenes: Sequence[Scene], bank: TextBank, cfg: TrainConfig,
                        strategies: Sequence[str]) -> CompareReport:
    """Run one pre-training per strategy with shared seeds and report
    per-step curves plus steps-to-threshold.

    The threshold is self-relative: the final logged loss of the
    no-injection run when present, otherwise the worst final loss.
    """
    if len(strategies) < 2:
        raise ConfigError("compare needs at least two strategies")
    if len(set(strategies)) != len(strategies):
        raise ConfigError("duplicate strategies in compare")
    base_preps = None
    curves: dict[str, tuple[LogRow, ...]] = {}
    for strat in strategies:
        run_cfg = replace(cfg, strategy=strat)
        run_cfg.validate()
        if base_preps is None:
            base_preps = [prepare_scene(sc, bank, run_cfg) for sc in scenes]
        curves[strat] = pretrain(scenes, bank, run_cfg, preps=base_preps).log
    final = {s: curves[s][-1].total for s in strategies}
    threshold = final["none"] if "none" in curves else max(final.values())
    steps_to = {}
    for s in strategies:
        hit = next((r.step for r in curves[s] if r.total <= threshold), None)
        steps_to[s] = hit
    return CompareReport(curves, threshold, steps_to, final)


COMPARE_HEADER = ("strategy", "step", "total", "cls", "dice", "ce", "aux",
                  "matched_pairs")


def write_compare_curves(report: CompareReport, path) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPARE_HEADER)
        for strat in report.curves:
            for r in report.curves[strat]:
                writer.writerow([strat, r.step, repr(r.total), repr(r.cls),
                                 repr(r.dice), repr(r.ce), repr(r.aux),
                                 r.matched_pairs])


def write_compare_summary(report: CompareReport, path) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("strategy", "final_loss", "steps_to_threshold", "threshold"))
        for strat in report.curves:
            hit = report.steps_to_threshold[strat]
            writer.writerow([strat, repr(report.final_loss[strat]),
                             "" if hit is None else hit, repr(report.threshold)])
